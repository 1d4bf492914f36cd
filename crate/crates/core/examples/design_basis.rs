//! Uniform versus optimized 31-pixel mask.

use jtma::basis::{basis_quadrature, optimize_basis, OptimizeOptions};
use jtma::JtmaParams;

fn main() -> jtma::Result<()> {
    let p = JtmaParams::new(7.45, 151.1, 103.2)?;
    let run = optimize_basis(31, &p, &OptimizeOptions::default(), &basis_quadrature())?;
    for (tag, d) in [("uniform", &run.uniform), ("optimized", &run.optimized)] {
        let diag = d.t.diagonal_abs2();
        let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
        println!(
            "{tag:>9}: d_ent >= {}, F = {:.4}, K = {:.2}, E = {:.3} ebits, |T_aa|^2 max/min = {:.3}, crosstalk {:.2e}",
            d.metrics.d_ent_lower_bound,
            d.metrics.fidelity,
            d.metrics.schmidt_number,
            d.metrics.eof_ebits,
            hi / lo,
            d.crosstalk
        );
    }
    println!("pixel radii (rad/mm):");
    for px in &run.optimized.basis_s.pixels {
        println!("  ({:7.2}, {:7.2})  r = {:.3}", px.center[0], px.center[1], px.radius);
    }
    Ok(())
}
