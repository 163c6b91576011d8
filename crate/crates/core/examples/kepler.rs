//! Kepler problem in distorted phase-space coordinates (system C). The
//! canonical SO(2) symmetry is angular momentum conservation; the ham stage
//! runs first, then the rotation is added.
//!
//! cargo run --release --example kepler -- [seed]

use symforge::systems::{SystemDef, SystemId};
use symforge::trainer::{default_stages, run_experiment, ExperimentOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let sys = SystemDef::new(SystemId::C);
    let stages = default_stages(&sys);
    for (k, s) in stages.iter().enumerate() {
        println!("stage {k}: {:?}, {} epochs, lr {:?}", s.tags, s.epochs, s.lr);
    }
    let opts = ExperimentOptions {
        seed,
        log_every: Some(250),
        ..ExperimentOptions::default()
    };
    let res = run_experiment(&sys, &stages, &opts)?;
    for v in &res.verdicts {
        println!("{}: {:.3e} {}", v.tag, v.loss, if v.pass { "PASS" } else { "FAIL" });
    }
    if let Some(e) = &res.failure {
        println!("aborted: {e}");
    }
    println!("{:.0} s", res.seconds);
    Ok(())
}
