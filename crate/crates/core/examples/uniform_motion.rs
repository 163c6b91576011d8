//! Uniform motion written in mixed, log-distorted coordinates (system A):
//! learn a transformation under which the flow is Hamiltonian and
//! translation invariant in x.
//!
//! cargo run --release --example uniform_motion -- [seed]

use symforge::systems::{SystemDef, SystemId};
use symforge::trainer::{default_stages, run_experiment, ExperimentOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let sys = SystemDef::new(SystemId::A);
    let opts = ExperimentOptions {
        seed,
        log_every: Some(100),
        ..ExperimentOptions::default()
    };
    let res = run_experiment(&sys, &default_stages(&sys), &opts)?;
    for v in &res.verdicts {
        println!("{}: {:.3e} {}", v.tag, v.loss, if v.pass { "PASS" } else { "FAIL" });
    }
    // the learned map is not unique; only the symmetries are
    for (z, zp) in res.table.iter().take(5) {
        println!("({:+.3}, {:+.3}) -> ({:+.3}, {:+.3})", z[0], z[1], zp[0], zp[1]);
    }
    if let Some(e) = &res.failure {
        println!("aborted: {e}");
    }
    Ok(())
}
