//! Binary checkpoints: an architecture header followed by the flat
//! parameter array, all little endian.
//!
//! Layout: magic `SYMFNET1`, u32 dimension, u32 input map (0 identity,
//! 1 radial), u32 hidden-layer count, u32 per width, u64 parameter count,
//! then the parameters as f64.

use std::io::{Read, Write};

use super::{InputMap, NetError, TransformNet};

const MAGIC: &[u8; 8] = b"SYMFNET1";

pub fn write_checkpoint(net: &TransformNet, w: &mut impl Write) -> Result<(), NetError> {
    let mut buf = Vec::with_capacity(32 + 8 * net.num_params());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(net.dim() as u32).to_le_bytes());
    let tag: u32 = match net.input_map() {
        InputMap::Identity => 0,
        InputMap::RadialTime => 1,
    };
    buf.extend_from_slice(&tag.to_le_bytes());
    buf.extend_from_slice(&(net.widths().len() as u32).to_le_bytes());
    for &w in net.widths() {
        buf.extend_from_slice(&(w as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(net.num_params() as u64).to_le_bytes());
    for p in net.params() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8], NetError> {
        if self.pos + k > self.data.len() {
            return Err(NetError::Checkpoint("truncated file".into()));
        }
        let s = &self.data[self.pos..self.pos + k];
        self.pos += k;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, NetError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<TransformNet, NetError> {
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    let mut c = Cursor { data: &data, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(NetError::Checkpoint("bad magic".into()));
    }
    let n = c.u32()? as usize;
    let input = match c.u32()? {
        0 => InputMap::Identity,
        1 => InputMap::RadialTime,
        t => return Err(NetError::Checkpoint(format!("unknown input map {t}"))),
    };
    let layers = c.u32()? as usize;
    if layers > 64 {
        return Err(NetError::Checkpoint(format!("{layers} hidden layers")));
    }
    let widths = (0..layers)
        .map(|_| c.u32().map(|w| w as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let count = c.u64()? as usize;
    let raw = c.take(count.checked_mul(8).ok_or_else(|| NetError::Checkpoint("size".into()))?)?;
    let params = raw
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if c.pos != data.len() {
        return Err(NetError::Checkpoint("trailing bytes".into()));
    }
    TransformNet::from_params(n, &widths, input, params)
}
