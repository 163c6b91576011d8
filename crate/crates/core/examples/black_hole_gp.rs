//! Schwarzschild black hole (system F): flatten the spatial slices, then
//! compare the learned time map with the Gullstrand–Painlevé shift
//! t′ = t + h(r).
//!
//! cargo run --release --example black_hole_gp -- [seed]

use symforge::systems::{SystemDef, SystemId};
use symforge::trainer::{default_stages, gp_shift, gp_time_deviation, run_experiment, ExperimentOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let sys = SystemDef::new(SystemId::F);
    let opts = ExperimentOptions {
        seed,
        log_every: Some(250),
        ..ExperimentOptions::default()
    };
    let res = run_experiment(&sys, &default_stages(&sys), &opts)?;
    for v in &res.verdicts {
        println!("{}: {:.3e} {}", v.tag, v.loss, if v.pass { "PASS" } else { "FAIL" });
    }
    if let Some(e) = &res.failure {
        println!("aborted: {e}");
        return Ok(());
    }
    let two_m = sys.params.two_m;
    let (dev, c) = gp_time_deviation(&res.net, two_m, (1.2, 5.8), &[0.0, 1.5, 3.0])?;
    println!("max |t′ − t − h(r) − c| = {dev:.3e} with c = {c:.3e}");
    println!("    r   t′ − t     h(r) + c");
    for r in [1.5, 2.0, 3.0, 4.0, 5.0] {
        let zp = res.net.forward(&[1.0, r, 0.0, 0.0])?;
        println!("{r:5.2} {:8.4} {:8.4}", zp[0] - 1.0, gp_shift(r, two_m) + c);
    }
    Ok(())
}
