//! Staged training: sample a fixed batch per stage, evaluate the symmetry
//! losses through network → push → residuals, and step Adam.
//!
//! One epoch is one full-batch gradient step. The network is run once over
//! the whole batch with the batched jet path; everything downstream of the
//! network output jets is evaluated per point, first in plain `f64` to get
//! the batch means, then on a small per-point tape weighted by the loss
//! chain-rule coefficients to get the adjoints of the output jets.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::jet::{tri_len, Jet2};
use crate::network::{
    first_nonfinite, residual_jets, AdamState, BatchForward, InputMap, JetOrder, NetError,
    TransformNet,
};
use crate::real::Real;
use crate::symmetry::{
    LossAccumulator, LossReport, SymmetryError, SymmetrySpec, TermCoeffs, SINGULAR_PENALTY,
};
use crate::systems::{add_noise, OracleError, SystemDef, SystemError, SystemId};
use crate::tape::{Tape, TapeError, Var};
use crate::tensor_calc::{push, FieldSample, JacobianBundle, TensorError};

/// Pass threshold on every final symmetry loss.
pub const DEFAULT_EPSILON: f64 = 1e-3;
pub const DEFAULT_BATCH: usize = 2000;
/// Rows in the dumped (z, z′) table.
pub const TABLE_ROWS: usize = 1000;
/// Annealed learning rates used for the harder systems.
pub const ANNEAL_LRS: [f64; 3] = [5e-3, 1e-3, 2e-4];
pub const THREADS_ENV: &str = "SYMFORGE_THREADS";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("stage {stage}: non-finite loss at epoch {epoch}")]
    NonFiniteLoss { stage: usize, epoch: usize },
    #[error("stage {stage}: {singular} of {points} points singular at epoch {epoch}")]
    TooManySingular {
        stage: usize,
        epoch: usize,
        singular: usize,
        points: usize,
    },
    #[error("stage {stage}: too many rejected steps before epoch {epoch}")]
    Stalled { stage: usize, epoch: usize },
    #[error("invalid stage {stage}: {msg}")]
    Config { stage: usize, msg: String },
    #[error("network does not fit system {system}: {msg}")]
    Mismatch { system: SystemId, msg: String },
    #[error("stage {stage}, epoch {epoch}: {source}")]
    Step {
        stage: usize,
        epoch: usize,
        #[source]
        source: NetError,
    },
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Symmetry(#[from] SymmetryError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error("thread pool: {0}")]
    Threads(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("record sink: {0}")]
    Sink(String),
}

/// Receives every record as it is produced, with the network it describes.
pub type RecordSink<'a> = dyn FnMut(&TrainRecord, &TransformNet) -> Result<(), TrainError> + Send + 'a;

/// Where additive data noise enters the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseFrame {
    /// Perturb the obfuscated field before it is transformed.
    Original,
    /// Perturb the transformed field, i.e. the data measured in the frame
    /// where the symmetry is checked.
    Transformed,
}

impl NoiseFrame {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "original" => Some(NoiseFrame::Original),
            "transformed" => Some(NoiseFrame::Transformed),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NoiseFrame::Original => "original",
            NoiseFrame::Transformed => "transformed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    pub tags: Vec<String>,
    pub epochs: usize,
    /// Learning rates; with several, the epochs are split evenly between
    /// them in order.
    pub lr: Vec<f64>,
    pub batch: usize,
    pub seed: u64,
    pub sigma: f64,
}

impl StageConfig {
    pub fn new(tags: &[&str], epochs: usize, lr: &[f64]) -> Self {
        StageConfig {
            tags: tags.iter().map(|t| t.to_string()).collect(),
            epochs,
            lr: lr.to_vec(),
            batch: DEFAULT_BATCH,
            seed: 0,
            sigma: 0.0,
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let seg = if self.epochs == 0 {
            0
        } else {
            (epoch * self.lr.len() / self.epochs).min(self.lr.len() - 1)
        };
        self.lr[seg]
    }

    fn validate(&self, stage: usize) -> Result<(), TrainError> {
        let bad = |msg: &str| {
            Err(TrainError::Config {
                stage,
                msg: msg.to_string(),
            })
        };
        if self.tags.is_empty() {
            return bad("no symmetry tags");
        }
        if self.lr.is_empty() || self.lr.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return bad("learning rates must be positive");
        }
        if self.batch == 0 {
            return bad("batch size must be positive");
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return bad("noise σ must be ≥ 0");
        }
        Ok(())
    }
}

/// The staging used to rediscover each system: one stage per target
/// symmetry, each adding the next tag. A, B, D train 2000 epochs at 1e-3;
/// C, E, F anneal over three 1000-epoch segments.
pub fn default_stages(sys: &SystemDef) -> Vec<StageConfig> {
    let tags = sys.target_tags();
    let anneal = matches!(sys.id, SystemId::C | SystemId::E | SystemId::F);
    (1..=tags.len())
        .map(|k| {
            if anneal {
                StageConfig::new(&tags[..k], 3000, &ANNEAL_LRS)
            } else {
                StageConfig::new(&tags[..k], 2000, &[1e-3])
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub stage: usize,
    /// Epoch within the stage; 0 is the evaluation before any step.
    pub epoch: usize,
    pub losses: Vec<f64>,
    pub total: f64,
    pub min_abs_det: f64,
    pub singular: usize,
    /// Seconds since the experiment started (not part of the CSV).
    pub elapsed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub tags: Vec<String>,
    pub records: Vec<TrainRecord>,
}

impl StageOutcome {
    pub fn final_record(&self) -> Option<&TrainRecord> {
        self.records.last()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryVerdict {
    pub tag: String,
    pub loss: f64,
    pub pass: bool,
}

#[derive(Debug)]
pub struct ExperimentResult {
    pub system: SystemId,
    pub seed: u64,
    pub stages: Vec<StageOutcome>,
    pub net: TransformNet,
    pub verdicts: Vec<SymmetryVerdict>,
    /// (z, z′) pairs from the final network.
    pub table: Vec<(Vec<f64>, Vec<f64>)>,
    /// Set when a stage aborted; records up to the failure are kept.
    pub failure: Option<TrainError>,
    pub seconds: f64,
}

impl ExperimentResult {
    pub fn passed(&self) -> bool {
        self.failure.is_none() && !self.verdicts.is_empty() && self.verdicts.iter().all(|v| v.pass)
    }

    pub fn records(&self) -> impl Iterator<Item = &TrainRecord> {
        self.stages.iter().flat_map(|s| s.records.iter())
    }

    pub fn final_loss(&self, tag: &str) -> Option<f64> {
        self.verdicts.iter().find(|v| v.tag == tag).map(|v| v.loss)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOptions {
    pub widths: Vec<usize>,
    pub seed: u64,
    pub epsilon: f64,
    pub noise_frame: NoiseFrame,
    pub penalty: f64,
    /// Worker threads; `None` reads SYMFORGE_THREADS, else rayon's default.
    pub threads: Option<usize>,
    /// Print a progress line to stderr every this many epochs.
    pub log_every: Option<usize>,
    pub guard: Option<StepGuard>,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions {
            widths: crate::network::DEFAULT_WIDTHS.to_vec(),
            seed: 0,
            epsilon: DEFAULT_EPSILON,
            noise_frame: NoiseFrame::Transformed,
            penalty: SINGULAR_PENALTY,
            threads: None,
            log_every: None,
            guard: Some(StepGuard::default()),
        }
    }
}

/// Thread cap from SYMFORGE_THREADS, if set to a positive integer.
pub fn env_threads() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Run `f` inside a pool of the requested size (or the environment cap).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, TrainError> {
    match threads.or_else(env_threads) {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| TrainError::Threads(e.to_string()))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

/// A stage batch ready for repeated evaluation.
#[derive(Debug, Clone)]
pub struct PreparedBatch {
    points: Vec<Vec<f64>>,
    inner: Vec<Vec<f64>>,
    fields: Vec<FieldSample<f64>>,
    /// Noise added after the push (transformed frame only).
    post_noise: Option<Vec<Vec<f64>>>,
}

impl PreparedBatch {
    pub fn new(
        sys: &SystemDef,
        count: usize,
        seed: u64,
        sigma: f64,
        frame: NoiseFrame,
        derivatives: bool,
    ) -> Result<Self, TrainError> {
        let batch = sys.sample_batch(count, seed, sigma)?;
        let input = sys.input_map();
        let inner = batch
            .points
            .iter()
            .map(|z| input.reduce(z))
            .collect::<Result<Vec<_>, _>>()?;
        let mut fields: Vec<FieldSample<f64>> = if derivatives {
            batch.fields
        } else {
            batch.fields.into_iter().map(FieldSample::without_deriv).collect()
        };
        let mut post_noise = None;
        if let Some(noise) = batch.noise {
            match frame {
                NoiseFrame::Original => {
                    for (f, e) in fields.iter_mut().zip(&noise) {
                        *f = add_noise(f, e);
                    }
                }
                NoiseFrame::Transformed => post_noise = Some(noise),
            }
        }
        Ok(PreparedBatch {
            points: batch.points,
            inner,
            fields,
            post_noise,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }
}

/// Specs, batch and pipeline settings for one stage.
#[derive(Debug, Clone)]
pub struct Objective {
    specs: Vec<SymmetrySpec>,
    batch: PreparedBatch,
    input: InputMap,
    order: JetOrder,
    penalty: f64,
}

/// Loss and gradient of one evaluation.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: LossReport,
    pub min_abs_det: f64,
    pub grad: Option<Vec<f64>>,
}

enum PointOutcome<S> {
    Regular { terms: Vec<(S, S)>, det: f64 },
    Singular,
}

fn is_singular(e: &TensorError) -> bool {
    matches!(
        e,
        TensorError::SingularJacobian { .. } | TensorError::SingularMatrix { .. }
    )
}

impl Objective {
    pub fn new(
        sys: &SystemDef,
        tags: &[String],
        batch: PreparedBatch,
        penalty: f64,
    ) -> Result<Self, TrainError> {
        let phase = sys.phase_layout();
        let specs = tags
            .iter()
            .map(|t| SymmetrySpec::parse(t, sys.kind(), sys.dim(), &phase))
            .collect::<Result<Vec<_>, _>>()?;
        let order = if specs.iter().any(|s| s.needs_derivatives()) {
            JetOrder::Second
        } else {
            JetOrder::First
        };
        Ok(Objective {
            specs,
            batch,
            input: sys.input_map(),
            order,
            penalty,
        })
    }

    /// Build specs and a fresh batch for a stage.
    pub fn for_stage(
        sys: &SystemDef,
        cfg: &StageConfig,
        frame: NoiseFrame,
        penalty: f64,
    ) -> Result<Self, TrainError> {
        let probe = Self::new(sys, &cfg.tags, PreparedBatch::empty(), penalty)?;
        let derivs = probe.order == JetOrder::Second;
        let batch = PreparedBatch::new(sys, cfg.batch, cfg.seed, cfg.sigma, frame, derivs)?;
        Ok(Objective { batch, ..probe })
    }

    pub fn specs(&self) -> &[SymmetrySpec] {
        &self.specs
    }

    pub fn order(&self) -> JetOrder {
        self.order
    }

    pub fn batch(&self) -> &PreparedBatch {
        &self.batch
    }

    /// Downstream of the network output jets for point `p`.
    fn point<S: Real>(&self, f: &[Jet2<S>], p: usize) -> Result<PointOutcome<S>, TrainError> {
        let z = &self.batch.points[p];
        let out = residual_jets(self.input, f, z)?;
        let bundle = match JacobianBundle::from_jets(&out, self.order == JetOrder::Second) {
            Ok(b) => b,
            Err(e) if is_singular(&e) => return Ok(PointOutcome::Singular),
            Err(e) => return Err(e.into()),
        };
        let det = bundle.det.value().abs();
        let mut pushed = push(&self.batch.fields[p].lift::<S>(), &bundle)?;
        if let Some(noise) = &self.batch.post_noise {
            for (v, e) in pushed.value.iter_mut().zip(&noise[p]) {
                *v = *v + S::cst(*e);
            }
        }
        let terms = self
            .specs
            .iter()
            .map(|s| s.point_terms(&pushed, &bundle.z))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PointOutcome::Regular { terms, det })
    }

    /// Adjoint of point `p`'s output jets under the weighted objective.
    fn point_adjoint(
        &self,
        fwd: &BatchForward,
        p: usize,
        coeffs: &[TermCoeffs],
    ) -> Result<Vec<Vec<f64>>, TrainError> {
        let tape = Tape::new();
        let d = fwd.comps();
        let jets: Vec<Jet2<f64>> = fwd.output_jets(p);
        let inner = jets[0].dim();
        let mut vars: Vec<Vec<Var>> = Vec::with_capacity(jets.len());
        let tjets: Vec<Jet2<Var>> = jets
            .iter()
            .map(|j| {
                let v = tape.var(j.value());
                let d1: Vec<Var> = j.grad().iter().map(|&x| tape.var(x)).collect();
                let d2: Vec<Var> = match fwd.order() {
                    JetOrder::Second => j.hessian_packed().iter().map(|&x| tape.var(x)).collect(),
                    JetOrder::First => vec![Var::constant(0.0); tri_len(inner)],
                };
                let mut all = vec![v];
                all.extend_from_slice(&d1);
                all.extend_from_slice(&d2);
                all.truncate(d);
                vars.push(all);
                Jet2::from_packed(v, d1, d2)
            })
            .collect();
        let terms = match self.point(&tjets, p)? {
            PointOutcome::Regular { terms, .. } => terms,
            PointOutcome::Singular => return Ok(vec![vec![0.0; d]; jets.len()]),
        };
        let mut obj = Var::constant(0.0);
        for ((r, q), c) in terms.into_iter().zip(coeffs) {
            obj = obj + r * Var::constant(c.d_residual);
            if c.d_norm != 0.0 {
                obj = obj + q * Var::constant(c.d_norm);
            }
        }
        let adj = tape.backward(obj)?;
        Ok(vars.iter().map(|vs| adj.wrt_all(vs)).collect())
    }

    /// Per-point squared residual norms, one per spec; `None` marks a
    /// singular point.
    pub fn point_residuals(&self, net: &TransformNet) -> Result<Vec<Option<Vec<f64>>>, TrainError> {
        let fwd = net.forward_batch(&self.batch.inner, self.order);
        (0..self.batch.len())
            .into_par_iter()
            .map(|p| {
                Ok(match self.point(&fwd.output_jets(p), p)? {
                    PointOutcome::Regular { terms, .. } => Some(terms.iter().map(|t| t.0).collect()),
                    PointOutcome::Singular => None,
                })
            })
            .collect()
    }

    /// Loss report, min |det W| and (optionally) the parameter gradient.
    pub fn evaluate(&self, net: &TransformNet, with_grad: bool) -> Result<Evaluation, TrainError> {
        let fwd = net.forward_batch(&self.batch.inner, self.order);
        let outcomes: Vec<PointOutcome<f64>> = (0..self.batch.len())
            .into_par_iter()
            .map(|p| self.point(&fwd.output_jets(p), p))
            .collect::<Result<_, _>>()?;
        let mut acc = LossAccumulator::new(&self.specs, self.penalty);
        let mut min_det = f64::INFINITY;
        for o in &outcomes {
            match o {
                PointOutcome::Regular { terms, det } => {
                    acc.add_regular(terms);
                    min_det = min_det.min(*det);
                }
                PointOutcome::Singular => {
                    acc.add_singular();
                    min_det = 0.0;
                }
            }
        }
        let report = acc.report()?;
        let grad = if with_grad {
            let coeffs = acc.coeffs();
            let adjs: Vec<Vec<Vec<f64>>> = (0..self.batch.len())
                .into_par_iter()
                .map(|p| match outcomes[p] {
                    PointOutcome::Singular => Ok(Vec::new()),
                    PointOutcome::Regular { .. } => self.point_adjoint(&fwd, p, &coeffs),
                })
                .collect::<Result<_, _>>()?;
            let mut buf = fwd.zero_adjoint();
            for (p, a) in adjs.iter().enumerate() {
                for (i, comp) in a.iter().enumerate() {
                    fwd.set_adjoint(&mut buf, i, p, comp);
                }
            }
            Some(net.backward_batch(&fwd, &buf))
        } else {
            None
        };
        Ok(Evaluation {
            report,
            min_abs_det: min_det,
            grad,
        })
    }
}

impl PreparedBatch {
    /// A batch from explicit points and noise-free samples.
    pub fn from_samples(
        input: InputMap,
        points: Vec<Vec<f64>>,
        fields: Vec<FieldSample<f64>>,
    ) -> Result<Self, TrainError> {
        let inner = points
            .iter()
            .map(|z| input.reduce(z))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PreparedBatch {
            points,
            inner,
            fields,
            post_noise: None,
        })
    }

    fn empty() -> Self {
        PreparedBatch {
            points: Vec::new(),
            inner: Vec::new(),
            fields: Vec::new(),
            post_noise: None,
        }
    }
}

fn check_net(sys: &SystemDef, net: &TransformNet) -> Result<(), TrainError> {
    if net.dim() != sys.dim() || net.input_map() != sys.input_map() {
        return Err(TrainError::Mismatch {
            system: sys.id,
            msg: format!(
                "network dimension {} ({:?}), system {} ({:?})",
                net.dim(),
                net.input_map(),
                sys.dim(),
                sys.input_map()
            ),
        });
    }
    Ok(())
}

/// Rejects optimizer steps that jump across the det W → 0 barrier.
///
/// A step whose loss exceeds `spike` times the previous loss (or is
/// non-finite, or makes most points singular) is undone, parameters and
/// optimizer state included, and the stage's step size is multiplied by
/// `shrink`. Every accepted step multiplies it by `recover`, up to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepGuard {
    pub spike: f64,
    pub shrink: f64,
    pub recover: f64,
    /// Consecutive rejections tolerated before the stage aborts.
    pub max_rejects: usize,
}

impl Default for StepGuard {
    fn default() -> Self {
        StepGuard {
            spike: 2.0,
            shrink: 0.5,
            recover: 1.02,
            max_rejects: 40,
        }
    }
}

fn report_ok(ev: &Evaluation) -> bool {
    let rep = &ev.report;
    rep.total.is_finite() && rep.parts.iter().all(|p| p.loss.is_finite()) && 2 * rep.singular <= rep.batch_size
}

/// Train one stage on a fixed batch. Returns `epochs + 1` records: the
/// initial evaluation and one after every optimizer step. On abort the
/// records gathered so far are returned alongside the error.
#[allow(clippy::too_many_arguments)]
pub fn run_stage(
    stage: usize,
    cfg: &StageConfig,
    sys: &SystemDef,
    net: &mut TransformNet,
    opt: &mut AdamState,
    opts: &ExperimentOptions,
    clock: Instant,
    sink: &mut RecordSink<'_>,
) -> (Vec<TrainRecord>, Result<(), TrainError>) {
    let mut records = Vec::with_capacity(cfg.epochs + 1);
    let res = (|| {
        cfg.validate(stage)?;
        check_net(sys, net)?;
        let obj = Objective::for_stage(sys, cfg, opts.noise_frame, opts.penalty)?;
        let mut scale = 1.0;
        let mut rejects = 0;
        let mut last: Option<(Vec<f64>, AdamState, Evaluation)> = None;
        for epoch in 0..=cfg.epochs {
            let step = epoch < cfg.epochs;
            let mut ev = obj.evaluate(net, step)?;
            if let (Some(g), Some((p0, o0, ev0))) = (&opts.guard, &last) {
                if !report_ok(&ev) || ev.report.total > g.spike * ev0.report.total {
                    rejects += 1;
                    if rejects > g.max_rejects {
                        return Err(TrainError::Stalled { stage, epoch });
                    }
                    net.set_params(p0.clone())?;
                    *opt = o0.clone();
                    scale *= g.shrink;
                    ev = ev0.clone();
                } else {
                    rejects = 0;
                    scale = (scale * g.recover).min(1.0);
                }
            }
            let rep = &ev.report;
            if !rep.total.is_finite() || rep.parts.iter().any(|p| !p.loss.is_finite()) {
                return Err(TrainError::NonFiniteLoss { stage, epoch });
            }
            if 2 * rep.singular > rep.batch_size {
                return Err(TrainError::TooManySingular {
                    stage,
                    epoch,
                    singular: rep.singular,
                    points: rep.batch_size,
                });
            }
            records.push(TrainRecord {
                stage,
                epoch,
                losses: rep.parts.iter().map(|p| p.loss).collect(),
                total: rep.total,
                min_abs_det: ev.min_abs_det,
                singular: rep.singular,
                elapsed: clock.elapsed().as_secs_f64(),
            });
            let r = records.last().expect("just pushed");
            sink(r, net)?;
            if opts.log_every.is_some_and(|n| n > 0 && (epoch % n == 0 || epoch == cfg.epochs)) {
                eprintln!(
                    "stage {stage} epoch {epoch:>5}  total {:.3e}  min|detW| {:.2e}  step x{scale:.3}  [{:.0}s]",
                    r.total, r.min_abs_det, r.elapsed
                );
            }
            if !step {
                break;
            }
            let g = ev.grad.as_ref().expect("gradient requested");
            if let Some(index) = first_nonfinite(g) {
                return Err(TrainError::Step {
                    stage,
                    epoch,
                    source: NetError::NonFiniteGradient { index },
                });
            }
            if opts.guard.is_some() {
                last = Some((net.params().to_vec(), opt.clone(), ev.clone()));
            }
            opt.step(net.params_mut(), g, scale * cfg.lr_at(epoch))
                .map_err(|source| TrainError::Step {
                    stage,
                    epoch,
                    source,
                })?;
        }
        Ok(())
    })();
    (records, res)
}

/// Seed of stage `k`'s batch for an experiment seed.
pub fn stage_seed(seed: u64, stage: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add((stage as u64 + 1).wrapping_mul(0xbf58_476d_1ce4_e5b9))
}

/// Run stages in order, carrying the network and optimizer state forward.
///
/// Stage seeds are derived from `opts.seed`; the batch size and σ of each
/// stage are taken from its config.
pub fn run_experiment(
    sys: &SystemDef,
    stages: &[StageConfig],
    opts: &ExperimentOptions,
) -> Result<ExperimentResult, TrainError> {
    run_experiment_with(sys, stages, opts, &mut |_, _| Ok(()))
}

/// [`run_experiment`] with a callback on every record. A sink error aborts
/// training like any other stage failure.
pub fn run_experiment_with(
    sys: &SystemDef,
    stages: &[StageConfig],
    opts: &ExperimentOptions,
    sink: &mut RecordSink<'_>,
) -> Result<ExperimentResult, TrainError> {
    with_threads(opts.threads, || run_experiment_inner(sys, stages, opts, sink))?
}

fn run_experiment_inner(
    sys: &SystemDef,
    stages: &[StageConfig],
    opts: &ExperimentOptions,
    sink: &mut RecordSink<'_>,
) -> Result<ExperimentResult, TrainError> {
    if stages.is_empty() {
        return Err(TrainError::Config {
            stage: 0,
            msg: "no stages".into(),
        });
    }
    let clock = Instant::now();
    let mut net = TransformNet::init(sys.dim(), &opts.widths, sys.input_map(), opts.seed)?;
    let mut opt = AdamState::new(net.num_params());
    let mut outcomes = Vec::with_capacity(stages.len());
    let mut failure = None;
    for (k, cfg) in stages.iter().enumerate() {
        let mut cfg = cfg.clone();
        cfg.seed = stage_seed(opts.seed, k);
        let (records, res) = run_stage(k, &cfg, sys, &mut net, &mut opt, opts, clock, sink);
        outcomes.push(StageOutcome {
            tags: cfg.tags.clone(),
            records,
        });
        if let Err(e) = res {
            failure = Some(e);
            break;
        }
    }
    let verdicts = match (&failure, outcomes.last()) {
        (None, Some(last)) => last
            .final_record()
            .map(|r| {
                last.tags
                    .iter()
                    .zip(&r.losses)
                    .map(|(t, &l)| SymmetryVerdict {
                        tag: t.clone(),
                        loss: l,
                        pass: l < opts.epsilon,
                    })
                    .collect()
            })
            .unwrap_or_default(),
        _ => Vec::new(),
    };
    let table = transform_table(sys, &net, TABLE_ROWS, opts.seed ^ 0x7ab1e)?;
    Ok(ExperimentResult {
        system: sys.id,
        seed: opts.seed,
        stages: outcomes,
        net,
        verdicts,
        table,
        failure,
        seconds: clock.elapsed().as_secs_f64(),
    })
}

/// z′ from the network at freshly sampled in-domain points.
pub fn transform_table(
    sys: &SystemDef,
    net: &TransformNet,
    rows: usize,
    seed: u64,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>, TrainError> {
    sys.sample_points(rows, seed, |_| true)?
        .into_iter()
        .map(|z| {
            let zp = net.forward(&z)?;
            Ok((z, zp))
        })
        .collect()
}

/// Gullstrand–Painlevé time shift h(r) = 2M[2u + ln((u − 1)/(u + 1))],
/// u = √(r/2M).
pub fn gp_shift(r: f64, two_m: f64) -> f64 {
    let u = (r / two_m).sqrt();
    two_m * (2.0 * u + ((u - 1.0) / (u + 1.0)).ln())
}

/// Max deviation of the learned time map from t + h(r) + c, with c the
/// constant minimizing that maximum, over a (t, r) grid.
pub fn gp_time_deviation(net: &TransformNet, two_m: f64, r_range: (f64, f64), t_values: &[f64]) -> Result<(f64, f64), TrainError> {
    let mut shifts = Vec::new();
    let steps = 200;
    for &t in t_values {
        for k in 0..=steps {
            let r = r_range.0 + (r_range.1 - r_range.0) * k as f64 / steps as f64;
            let zp = net.forward(&[t, r, 0.0, 0.0])?;
            shifts.push(zp[0] - t - gp_shift(r, two_m));
        }
    }
    let lo = shifts.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = shifts.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let c = 0.5 * (lo + hi);
    Ok((0.5 * (hi - lo), c))
}

/// Maximum relative error between reverse-mode and finite-difference
/// gradients of a stage objective, over `probes` random parameters.
pub fn gradient_check(
    obj: &Objective,
    net: &TransformNet,
    probes: usize,
    h: f64,
    seed: u64,
) -> Result<f64, TrainError> {
    let ev = obj.evaluate(net, true)?;
    let grad = ev.grad.expect("gradient requested");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut probe = net.clone();
    for _ in 0..probes {
        let i = rng.gen_range(0..net.num_params());
        let base = net.params()[i];
        let mut at = |dx: f64| -> Result<f64, TrainError> {
            probe.params_mut()[i] = base + dx;
            Ok(obj.evaluate(&probe, false)?.report.total)
        };
        // fourth-order stencil keeps the reference's own error far below
        // the tolerance at a step where rounding is negligible
        let fd = (8.0 * (at(h)? - at(-h)?) - (at(2.0 * h)? - at(-2.0 * h)?)) / (12.0 * h);
        probe.params_mut()[i] = base;
        let scale = grad[i].abs().max(fd.abs()).max(1e-8 * ev.report.total.abs().max(1e-300));
        worst = worst.max((grad[i] - fd).abs() / scale);
    }
    Ok(worst)
}
