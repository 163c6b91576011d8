//! Rediscover the hidden rotation symmetry of an obfuscated harmonic
//! oscillator (system B).
//!
//! cargo run --release --example harmonic_oscillator -- [seed]

use symforge::systems::{SystemDef, SystemId};
use symforge::trainer::{default_stages, run_experiment, ExperimentOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let sys = SystemDef::new(SystemId::B);
    let opts = ExperimentOptions {
        seed,
        log_every: Some(100),
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
