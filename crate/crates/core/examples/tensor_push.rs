//! Tensor transformation by hand: push the harmonic-oscillator flow and the
//! Milne metric through their closed-form transformations at one point and
//! print the results in the new coordinates.
//!
//! cargo run --release --example tensor_push

use symforge::systems::{SystemDef, SystemId};
use symforge::tensor_calc::push;

fn print_matrix(name: &str, n: usize, m: &[f64]) {
    println!("{name}:");
    for row in m.chunks(n) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:+.6}")).collect();
        println!("    [{}]", cells.join(", "));
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let b = SystemDef::new(SystemId::B);
    let z = [0.7, -0.3];
    let f = b.eval(&z)?;
    let bundle = b.ground_truth_bundle(&z)?;
    let pushed = push(&f, &bundle)?;
    println!("B at z = {z:?} -> z′ = {:?}", bundle.z);
    println!("f  = {:?}", f.value);
    println!("f′ = {:?}  (expected (p′, −x′))", pushed.value);
    print_matrix("J′ = ∂f′/∂z′", 2, pushed.deriv.as_deref().unwrap_or(&[]));

    let e = SystemDef::new(SystemId::E);
    let z = [1.5, 0.2, -0.4, 0.1];
    let g = e.eval(&z)?;
    let bundle = e.ground_truth_bundle(&z)?;
    let pushed = push(&g, &bundle)?;
    println!("\nE at z = {z:?}, det W = {:.4}", bundle.det);
    print_matrix("g", 4, &g.value);
    print_matrix("g′ (Minkowski)", 4, &pushed.value);
    let worst = pushed
        .deriv
        .as_deref()
        .unwrap_or(&[])
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    println!("max |∂′g′| = {worst:.2e}");
    Ok(())
}
