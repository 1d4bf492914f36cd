//! Heralding efficiency against idler pixel size.

use jtma::basis::basis_quadrature;
use jtma::herald::{heralding_sweep, HeraldKernel};
use jtma::JtmaParams;

fn main() -> jtma::Result<()> {
    let p = JtmaParams::new(7.45, 151.1, 103.2)?;
    let d1 = 15.0;
    let d2: Vec<f64> = (1..=8).map(|k| k as f64 * 7.5).collect();
    for kernel in [HeraldKernel::Full, HeraldKernel::ClSubstituted] {
        println!("{} kernel, signal pixel diameter {d1} rad/mm", kernel.name());
        for h in heralding_sweep(d1, &d2, &p, kernel, &basis_quadrature())? {
            println!("  d2 = {:5.1}  eta = {:.4}", h.d2, h.eta);
        }
    }
    Ok(())
}
