//! Push every system's field through its closed-form simplifying
//! transformation and print the symmetry losses, which should all vanish.
//!
//! cargo run --release --example oracle_check -- [points]

use symforge::systems::{SystemDef, SystemId};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let points = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(1000);
    for id in SystemId::ALL {
        let sys = SystemDef::new(id);
        let rep = sys.verify_ground_truth(points, 0)?;
        println!("{id} ({}), {} points:", id.name(), rep.points);
        for p in &rep.losses.parts {
            println!("    {:<16} {:.3e}", p.tag, p.loss);
        }
        println!("    {:<16} {:.3e}", "target value", rep.max_value_error);
    }
    Ok(())
}
