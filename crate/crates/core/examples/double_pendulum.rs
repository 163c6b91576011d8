//! Linearized double pendulum (system D): find coordinates in which the
//! flow splits into two independent oscillators, then print the normal-mode
//! frequencies those oscillators should have.
//!
//! cargo run --release --example double_pendulum -- [seed] [m1 m2]

use symforge::systems::{SystemDef, SystemId, SystemParams};
use symforge::trainer::{default_stages, run_experiment, ExperimentOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed = args.first().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let mut params = SystemParams::default();
    if let [_, m1, m2, ..] = args.as_slice() {
        params.m1 = m1.parse()?;
        params.m2 = m2.parse()?;
    }
    let (wp, wm) = params.normal_mode_frequencies();
    println!("m1 = {}, m2 = {}: normal modes ω² = {wp:.4} and {wm:.4}", params.m1, params.m2);

    let sys = SystemDef::with_params(SystemId::D, params);
    let opts = ExperimentOptions {
        seed,
        log_every: Some(200),
        ..ExperimentOptions::default()
    };
    let res = run_experiment(&sys, &default_stages(&sys), &opts)?;
    for v in &res.verdicts {
        println!("{}: {:.3e} {}", v.tag, v.loss, if v.pass { "PASS" } else { "FAIL" });
    }
    if let Some(e) = &res.failure {
        println!("aborted: {e}");
    }
    Ok(())
}
