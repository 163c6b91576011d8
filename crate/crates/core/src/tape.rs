//! Reverse-mode adjoint tape over scalar elementary operations.
//!
//! A [`Tape`] records every operation performed on [`Var`] handles in
//! execution order, so each record only references earlier records. The
//! backward sweep seeds one output with adjoint 1 and visits the records in
//! reverse exactly once.

use std::cell::{Cell, RefCell};
use std::ops::{Add, Div, Mul, Neg, Sub};

use thiserror::Error;

use crate::real::{self, Real};

/// Index used for constants that never enter the tape.
const CONST: u32 = u32::MAX;

/// Default record cap; a single per-point loss evaluation uses a few thousand.
pub const DEFAULT_TAPE_CAP: usize = 1 << 26;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TapeError {
    #[error("tape overflow: more than {cap} records (mis-sized batch?)")]
    Overflow { cap: usize },
}

#[derive(Debug, Clone, Copy)]
struct Record {
    a: u32,
    b: u32,
    da: f64,
    db: f64,
}

#[derive(Debug)]
pub struct Tape {
    records: RefCell<Vec<Record>>,
    cap: usize,
    overflowed: Cell<bool>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::with_cap(DEFAULT_TAPE_CAP)
    }

    pub fn with_cap(cap: usize) -> Self {
        Tape {
            records: RefCell::new(Vec::with_capacity(cap.min(4096))),
            cap,
            overflowed: Cell::new(false),
        }
    }

    pub fn len(&self) -> usize {
        self.records.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn overflowed(&self) -> bool {
        self.overflowed.get()
    }

    /// Register an independent input.
    pub fn var(&self, x: f64) -> Var<'_> {
        let idx = self.push(Record {
            a: CONST,
            b: CONST,
            da: 0.0,
            db: 0.0,
        });
        Var {
            tape: Some(self),
            idx,
            val: x,
        }
    }

    pub fn vars(&self, xs: &[f64]) -> Vec<Var<'_>> {
        xs.iter().map(|&x| self.var(x)).collect()
    }

    fn push(&self, r: Record) -> u32 {
        let mut recs = self.records.borrow_mut();
        if recs.len() >= self.cap {
            self.overflowed.set(true);
            // Keep indices valid; the caller checks `overflowed` afterwards.
            return CONST;
        }
        recs.push(r);
        (recs.len() - 1) as u32
    }

    /// Adjoints of every record with respect to `out`.
    pub fn backward(&self, out: Var<'_>) -> Result<Adjoints, TapeError> {
        if self.overflowed() {
            return Err(TapeError::Overflow { cap: self.cap });
        }
        let recs = self.records.borrow();
        let mut adj = vec![0.0; recs.len()];
        if out.idx != CONST {
            adj[out.idx as usize] = 1.0;
            for i in (0..=out.idx as usize).rev() {
                let g = adj[i];
                if g == 0.0 {
                    continue;
                }
                let r = recs[i];
                if r.a != CONST {
                    adj[r.a as usize] += r.da * g;
                }
                if r.b != CONST {
                    adj[r.b as usize] += r.db * g;
                }
            }
        }
        Ok(Adjoints(adj))
    }
}

/// Result of a backward sweep, indexed by the input handles.
#[derive(Debug, Clone)]
pub struct Adjoints(Vec<f64>);

impl Adjoints {
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        if v.idx == CONST {
            0.0
        } else {
            self.0[v.idx as usize]
        }
    }

    pub fn wrt_all(&self, vs: &[Var<'_>]) -> Vec<f64> {
        vs.iter().map(|&v| self.wrt(v)).collect()
    }
}

/// A taped scalar. Copyable handle: (tape, record index, primal value).
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    idx: u32,
    val: f64,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.idx == CONST {
            write!(f, "Var(const {})", self.val)
        } else {
            write!(f, "Var(#{} = {})", self.idx, self.val)
        }
    }
}

impl<'t> Var<'t> {
    pub fn constant(x: f64) -> Self {
        Var {
            tape: None,
            idx: CONST,
            val: x,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.idx == CONST
    }

    fn unary(self, val: f64, d: f64) -> Self {
        match self.tape {
            Some(t) if self.idx != CONST => Var {
                tape: Some(t),
                idx: t.push(Record {
                    a: self.idx,
                    b: CONST,
                    da: d,
                    db: 0.0,
                }),
                val,
            },
            _ => Var::constant(val),
        }
    }

    fn binary(self, other: Self, val: f64, da: f64, db: f64) -> Self {
        let tape = self.tape.or(other.tape);
        match tape {
            Some(t) if self.idx != CONST || other.idx != CONST => Var {
                tape: Some(t),
                idx: t.push(Record {
                    a: self.idx,
                    b: other.idx,
                    da,
                    db,
                }),
                val,
            },
            _ => Var::constant(val),
        }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        if o.idx == CONST && o.val == 0.0 {
            return self;
        }
        if self.idx == CONST && self.val == 0.0 {
            return o;
        }
        self.binary(o, self.val + o.val, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        if o.idx == CONST && o.val == 0.0 {
            return self;
        }
        self.binary(o, self.val - o.val, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        if (o.idx == CONST && o.val == 0.0) || (self.idx == CONST && self.val == 0.0) {
            return Var::constant(0.0);
        }
        self.binary(o, self.val * o.val, o.val, self.val)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.val;
        let v = self.val * inv;
        self.binary(o, v, inv, -v * inv)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(-self.val, -1.0)
    }
}

impl<'t> Real for Var<'t> {
    fn cst(x: f64) -> Self {
        Var::constant(x)
    }
    fn value(self) -> f64 {
        self.val
    }
    fn exp(self) -> Self {
        let e = self.val.exp();
        self.unary(e, e)
    }
    fn ln(self) -> Self {
        self.unary(self.val.ln(), 1.0 / self.val)
    }
    fn sqrt(self) -> Self {
        let s = self.val.sqrt();
        self.unary(s, 0.5 / s)
    }
    fn sigmoid(self) -> Self {
        let [s, ds, _] = real::sigmoid_derivs(self.val);
        self.unary(s, ds)
    }
    fn silu(self) -> Self {
        let d = real::silu_derivs(self.val);
        self.unary(d[0], d[1])
    }
    fn is_exact_zero(self) -> bool {
        self.idx == CONST && self.val == 0.0
    }
    fn scale(self, c: f64) -> Self {
        if c == 0.0 {
            return Var::constant(0.0);
        }
        self.unary(self.val * c, c)
    }
}

/// Gradient of a scalar function of `params`, by one forward recording and
/// one backward sweep on a fresh tape.
pub fn grad_scalar<F>(loss_fn: F, params: &[f64]) -> Result<(f64, Vec<f64>), TapeError>
where
    F: for<'t> FnOnce(&[Var<'t>]) -> Var<'t>,
{
    grad_scalar_capped(loss_fn, params, DEFAULT_TAPE_CAP)
}

pub fn grad_scalar_capped<F>(
    loss_fn: F,
    params: &[f64],
    cap: usize,
) -> Result<(f64, Vec<f64>), TapeError>
where
    F: for<'t> FnOnce(&[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::with_cap(cap);
    let xs = tape.vars(params);
    let out = loss_fn(&xs);
    let adj = tape.backward(out)?;
    Ok((out.value(), adj.wrt_all(&xs)))
}
