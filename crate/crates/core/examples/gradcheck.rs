//! Finite-difference checks of the loss gradient, W and ∂W on small random
//! networks, one line per network.
//!
//! cargo run --release --example gradcheck -- [nets] [seed]

use symforge::gradcheck::{check_networks, GRAD_TOL, DW_TOL};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let nets = args.next().map(|s| s.parse()).transpose()?.unwrap_or(10);
    let seed = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let rep = check_networks(nets, seed)?;
    for c in &rep.nets {
        println!(
            "{} {:?}: gradient {:.2e}, W {:.2e}, dW {:.2e}",
            c.system, c.widths, c.grad_err, c.w_err, c.dw_err
        );
    }
    let (g, d) = rep.worst();
    println!("worst: gradient {g:.2e} (tol {GRAD_TOL:e}), W/dW {d:.2e} (tol {DW_TOL:e})");
    Ok(())
}
