//! Command implementations behind the `symforge` binary.
//!
//! Each command returns a process exit code: 0 when everything passed, 1
//! when a symmetry (or check) failed, 2 on errors. `discover` writes its
//! artifacts even when training aborts; the report then says they are
//! partial.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{parse_config, ConfigError, ExperimentConfig};
use crate::gradcheck::{check_networks, check_system, hamiltonicity_lemma};
use crate::network::{write_checkpoint, NetError, TransformNet};
use crate::systems::{SystemDef, SystemId};
use crate::trainer::{
    gp_time_deviation, run_experiment_with, with_threads, ExperimentResult, TrainError, TrainRecord,
};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

/// Oracle threshold for `verify`.
pub const ORACLE_TOL: f64 = 1e-9;

pub const LOSSES_FILE: &str = "losses.csv";
pub const TRANSFORM_FILE: &str = "transform.csv";
pub const REPORT_FILE: &str = "report.txt";
pub const CHECKPOINT_FILE: &str = "net.ckpt";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed losses table: {0}")]
    Table(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Net(#[from] NetError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Shortest fixed format that round-trips every f64: 17 significant digits.
pub fn format_real(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn parse_real(s: &str) -> Result<f64, CliError> {
    s.trim()
        .parse()
        .map_err(|_| CliError::Table(format!("not a number: {s:?}")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossRow {
    /// Epoch counted across stages; a stage's initial row repeats the
    /// previous stage's last epoch.
    pub epoch: usize,
    pub stage: usize,
    /// One entry per table tag, empty where the stage does not train it.
    pub losses: Vec<Option<f64>>,
    pub total: f64,
    pub min_abs_det: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossTable {
    pub tags: Vec<String>,
    pub rows: Vec<LossRow>,
}

/// Streams training records as losses.csv rows.
pub struct LossWriter<W: Write> {
    out: csv::Writer<W>,
    tags: Vec<String>,
    stage_cols: Vec<Vec<usize>>,
    offsets: Vec<usize>,
    pending: usize,
    flush_every: usize,
}

impl<W: Write> LossWriter<W> {
    pub fn new(w: W, cfg: &ExperimentConfig) -> Result<Self, CliError> {
        let tags = cfg.all_tags();
        let stage_cols = cfg
            .stages
            .iter()
            .map(|s| {
                s.tags
                    .iter()
                    .map(|t| tags.iter().position(|x| x == t).expect("collected"))
                    .collect()
            })
            .collect();
        let offsets = cfg
            .stages
            .iter()
            .scan(0, |acc, s| {
                let o = *acc;
                *acc += s.epochs;
                Some(o)
            })
            .collect();
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        let mut header = vec!["epoch".to_string(), "stage".to_string()];
        header.extend(tags.iter().cloned());
        header.push("total".into());
        header.push("min_abs_detW".into());
        out.write_record(&header)?;
        Ok(LossWriter {
            out,
            tags,
            stage_cols,
            offsets,
            pending: 0,
            flush_every: cfg.flush_every,
        })
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn global_epoch(&self, rec: &TrainRecord) -> usize {
        self.offsets[rec.stage] + rec.epoch
    }

    pub fn write(&mut self, rec: &TrainRecord) -> Result<(), CliError> {
        let mut cells = vec![String::new(); self.tags.len()];
        for (&c, &l) in self.stage_cols[rec.stage].iter().zip(&rec.losses) {
            cells[c] = format_real(l);
        }
        let mut row = vec![self.global_epoch(rec).to_string(), rec.stage.to_string()];
        row.extend(cells);
        row.push(format_real(rec.total));
        row.push(format_real(rec.min_abs_det));
        self.out.write_record(&row)?;
        self.pending += 1;
        if self.pending >= self.flush_every {
            self.flush()?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), CliError> {
        self.pending = 0;
        self.out.flush().map_err(|e| CliError::Csv(e.into()))
    }
}

pub fn read_losses(r: impl Read) -> Result<LossTable, CliError> {
    let mut rd = csv::ReaderBuilder::new().from_reader(r);
    let header = rd.headers()?.clone();
    let n = header.len();
    if n < 4 || &header[0] != "epoch" || &header[1] != "stage" || &header[n - 2] != "total" || &header[n - 1] != "min_abs_detW" {
        return Err(CliError::Table(format!("unexpected header {header:?}")));
    }
    let tags: Vec<String> = header.iter().skip(2).take(n - 4).map(String::from).collect();
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let int = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| CliError::Table(format!("not an integer: {s:?}")))
        };
        let losses = (2..n - 2)
            .map(|i| match &rec[i] {
                "" => Ok(None),
                s => parse_real(s).map(Some),
            })
            .collect::<Result<_, _>>()?;
        rows.push(LossRow {
            epoch: int(&rec[0])?,
            stage: int(&rec[1])?,
            losses,
            total: parse_real(&rec[n - 2])?,
            min_abs_det: parse_real(&rec[n - 1])?,
        });
    }
    Ok(LossTable { tags, rows })
}

/// transform.csv: header z1..zn, zp1..zpn, one row per sampled point.
pub fn write_transform(w: impl Write, table: &[(Vec<f64>, Vec<f64>)]) -> Result<(), CliError> {
    let n = table.first().map_or(0, |(z, _)| z.len());
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    let header: Vec<String> = (1..=n)
        .map(|i| format!("z{i}"))
        .chain((1..=n).map(|i| format!("zp{i}")))
        .collect();
    out.write_record(&header)?;
    for (z, zp) in table {
        out.write_record(z.iter().chain(zp).map(|&x| format_real(x)))?;
    }
    out.flush().map_err(|e| CliError::Csv(e.into()))
}

/// Buffered file whose `flush` also syncs data to disk.
pub struct SyncFile(BufWriter<File>);

impl SyncFile {
    pub fn create(path: &Path) -> Result<Self, CliError> {
        Ok(SyncFile(BufWriter::new(File::create(path).map_err(io_err(path))?)))
    }
}

impl Write for SyncFile {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.write(buf)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.0.flush()?;
        self.0.get_ref().sync_data()
    }
}

fn save_checkpoint(net: &TransformNet, path: &Path) -> Result<(), CliError> {
    // write-then-rename so an interrupted run never leaves a torn file
    let tmp = path.with_extension("tmp");
    let mut f = BufWriter::new(File::create(&tmp).map_err(io_err(&tmp))?);
    write_checkpoint(net, &mut f)?;
    f.flush().map_err(io_err(&tmp))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

#[derive(Debug)]
pub struct DiscoverOutcome {
    pub result: ExperimentResult,
    pub out_dir: PathBuf,
    /// GP time-map deviation (and constant) for system F.
    pub gp: Option<(f64, f64)>,
}

impl DiscoverOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.result.failure.is_some() {
            EXIT_ERROR
        } else if self.result.passed() {
            EXIT_PASS
        } else {
            EXIT_FAIL
        }
    }
}

/// Train per `cfg` and write all artifacts into `out_dir`.
pub fn run_discover(cfg: &ExperimentConfig, out_dir: &Path) -> Result<DiscoverOutcome, CliError> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let losses_path = out_dir.join(LOSSES_FILE);
    let mut writer = LossWriter::new(SyncFile::create(&losses_path)?, cfg)?;
    let ckpt = out_dir.join(CHECKPOINT_FILE);
    let every = cfg.checkpoint_every;
    let res = {
        let writer = &mut writer;
        let ckpt = &ckpt;
        let mut sink = move |rec: &TrainRecord, net: &TransformNet| -> Result<(), TrainError> {
            writer.write(rec).map_err(|e| TrainError::Sink(e.to_string()))?;
            let g = writer.global_epoch(rec);
            if every > 0 && rec.epoch > 0 && g % every == 0 {
                save_checkpoint(net, ckpt).map_err(|e| TrainError::Sink(e.to_string()))?;
            }
            Ok(())
        };
        run_experiment_with(&cfg.system, &cfg.stages, &cfg.options, &mut sink)
    };
    writer.flush()?;
    let result = match res {
        Ok(r) => r,
        Err(e) => {
            let text = format!(
                "system: {}\nseed: {}\nstatus: ERROR (artifacts are partial): {e}\n",
                cfg.system.id, cfg.options.seed
            );
            let p = out_dir.join(REPORT_FILE);
            std::fs::write(&p, text).map_err(io_err(&p))?;
            return Err(e.into());
        }
    };
    let tpath = out_dir.join(TRANSFORM_FILE);
    write_transform(BufWriter::new(File::create(&tpath).map_err(io_err(&tpath))?), &result.table)?;
    save_checkpoint(&result.net, &ckpt)?;
    let gp = if cfg.system.id == SystemId::F {
        Some(gp_time_deviation(&result.net, cfg.system.params.two_m, (1.2, 5.8), &[0.0, 1.5, 3.0])?)
    } else {
        None
    };
    let outcome = DiscoverOutcome {
        result,
        out_dir: out_dir.to_path_buf(),
        gp,
    };
    let p = out_dir.join(REPORT_FILE);
    std::fs::write(&p, render_report(cfg, &outcome)).map_err(io_err(&p))?;
    Ok(outcome)
}

pub fn render_report(cfg: &ExperimentConfig, o: &DiscoverOutcome) -> String {
    let r = &o.result;
    let mut s = String::new();
    let _ = writeln!(s, "system: {}", r.system);
    let _ = writeln!(s, "seed: {}", r.seed);
    let status = match (&r.failure, r.passed()) {
        (Some(e), _) => format!("ERROR (artifacts are partial): {e}"),
        (None, true) => "PASS".into(),
        (None, false) => "FAIL".into(),
    };
    let _ = writeln!(s, "status: {status}");
    let _ = writeln!(s, "epsilon: {:e}", cfg.options.epsilon);
    for v in &r.verdicts {
        let _ = writeln!(s, "{}: {}  (final loss {:.6e})", v.tag, if v.pass { "PASS" } else { "FAIL" }, v.loss);
    }
    for (k, st) in r.stages.iter().enumerate() {
        if let Some(last) = st.final_record() {
            let losses: Vec<String> = st
                .tags
                .iter()
                .zip(&last.losses)
                .map(|(t, l)| format!("{t}={l:.6e}"))
                .collect();
            let _ = writeln!(
                s,
                "stage {k}: {} records, final {} total={:.6e} min|detW|={:.3e}",
                st.records.len(),
                losses.join(" "),
                last.total,
                last.min_abs_det
            );
        }
    }
    if let Some((dev, c)) = o.gp {
        let _ = writeln!(s, "gp time-map deviation: {dev:.4e} (gauge constant {c:.4e})");
    }
    let _ = writeln!(s, "runtime: {:.1} s", r.seconds);
    let _ = writeln!(s, "config:\n{}", cfg.source);
    s
}

/// `discover --config <path> [--seed N] [--out DIR]`.
pub fn discover(config: &Path, seed: Option<u64>, out: Option<&Path>) -> i32 {
    let mut cfg = match parse_config(config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_ERROR;
        }
    };
    if let Some(s) = seed {
        cfg.options.seed = s;
        cfg.source.seed = s;
    }
    let out_dir = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}-seed{}", cfg.system.id, cfg.options.seed)));
    match run_discover(&cfg, &out_dir) {
        Ok(o) => {
            for v in &o.result.verdicts {
                println!("{}: {} ({:.3e})", v.tag, if v.pass { "PASS" } else { "FAIL" }, v.loss);
            }
            if let Some(e) = &o.result.failure {
                eprintln!("error: {e} (partial artifacts in {})", o.out_dir.display());
            }
            o.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e} (partial artifacts in {})", out_dir.display());
            EXIT_ERROR
        }
    }
}

/// `verify --system X`: ground-truth oracle plus analytic-derivative checks.
pub fn verify(id: SystemId, seed: u64) -> i32 {
    let run = || -> Result<bool, TrainError> {
        let sys = SystemDef::new(id);
        let rep = sys.verify_ground_truth(1000, seed)?;
        let mut ok = true;
        for p in &rep.losses.parts {
            let pass = p.loss < ORACLE_TOL;
            ok &= pass;
            println!("{id} {}: {:.3e} {}", p.tag, p.loss, if pass { "PASS" } else { "FAIL" });
        }
        let pass = rep.max_value_error < ORACLE_TOL;
        ok &= pass;
        println!("{id} target value: max error {:.3e} {}", rep.max_value_error, if pass { "PASS" } else { "FAIL" });
        let d = check_system(&sys, 50, seed)?;
        ok &= d.passed();
        println!(
            "{id} derivatives: field {:.2e}, W {:.2e}, dW {:.2e} {}",
            d.field_err,
            d.w_err.unwrap_or(f64::NAN),
            d.dw_err.unwrap_or(f64::NAN),
            if d.passed() { "PASS" } else { "FAIL" }
        );
        Ok(ok)
    };
    finish(with_threads(None, run).and_then(|r| r))
}

/// `check-grads [--seed N]`: 20 random small networks plus the
/// Hamiltonicity property.
pub fn check_grads(seed: u64) -> i32 {
    let run = || -> Result<bool, TrainError> {
        let rep = check_networks(20, seed)?;
        for (k, c) in rep.nets.iter().enumerate() {
            println!(
                "net {k:>2} {} {:?}: grad {:.2e}  W {:.2e}  dW {:.2e}  batch {:.1e} {}",
                c.system,
                c.widths,
                c.grad_err,
                c.w_err,
                c.dw_err,
                c.batch_err,
                if c.passed() { "PASS" } else { "FAIL" }
            );
        }
        let lemma = hamiltonicity_lemma(100, seed);
        println!(
            "hamiltonicity: gradient fields ≤ {:.2e}, non-gradient ≥ {:.2e} {}",
            lemma.max_hamiltonian,
            lemma.min_non_gradient,
            if lemma.passed() { "PASS" } else { "FAIL" }
        );
        Ok(rep.passed() && lemma.passed())
    };
    finish(with_threads(None, run).and_then(|r| r))
}

fn finish(r: Result<bool, TrainError>) -> i32 {
    match r {
        Ok(true) => EXIT_PASS,
        Ok(false) => EXIT_FAIL,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}
