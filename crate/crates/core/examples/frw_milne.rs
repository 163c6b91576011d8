//! Expanding open universe (system E). With κ = −1 and a(t) = t the FRW
//! metric is flat Minkowski space in disguise (the Milne universe); other
//! curvatures are genuinely curved and the flatness loss should stall.
//!
//! cargo run --release --example frw_milne -- [kappa] [seed] [sigma]

use symforge::systems::{SystemDef, SystemId, SystemParams};
use symforge::trainer::{default_stages, run_experiment, ExperimentOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: f64| args.get(i).map_or(Ok(d), |s| s.parse());
    let params = SystemParams {
        kappa: arg(0, -1.0)?,
        ..SystemParams::default()
    };
    let seed = arg(1, 0.0)? as u64;
    let sigma = arg(2, 0.0)?;

    let sys = SystemDef::with_params(SystemId::E, params);
    let mut stages = default_stages(&sys);
    for s in &mut stages {
        s.sigma = sigma;
    }
    let opts = ExperimentOptions {
        seed,
        log_every: Some(250),
        ..ExperimentOptions::default()
    };
    let res = run_experiment(&sys, &stages, &opts)?;
    for v in &res.verdicts {
        println!("κ = {}, σ = {sigma}: {} {:.3e} {}", params.kappa, v.tag, v.loss, if v.pass { "PASS" } else { "FAIL" });
    }
    if let Some(e) = &res.failure {
        println!("aborted: {e}");
    }
    Ok(())
}
