//! Source widths from the optical layout, and the pump index that a
//! measured phase-matching width implies.

use jtma::model::{params_from_optics, refractive_index_for_sigma_s};
use jtma::OpticalSystem;

fn main() -> jtma::Result<()> {
    for (name, sys) in [
        ("810 nm", OpticalSystem::degenerate_810nm()),
        ("1550 nm", OpticalSystem::degenerate_1550nm()),
    ] {
        let p = params_from_optics(&sys)?;
        println!(
            "{name}: w_p = {:.0} um -> sigma_P = {:.2}, sigma_S = {:.1}, sigma_C = {:.1} rad/mm (n_P = {:.5})",
            sys.pump_waist_mm * 1e3,
            p.sigma_p,
            p.sigma_s,
            p.sigma_c,
            sys.refractive_index_pump
        );
        let v = p.cl_validity();
        println!("  collection-limited form valid: coincidences {}, singles {}", v.coincidence, v.singles);
    }

    // A 2 mm crystal at the same index has a wider phase-matching envelope.
    let n = refractive_index_for_sigma_s(151.1, 5.0, 405.0);
    let sys = OpticalSystem {
        crystal_length_mm: 2.0,
        refractive_index_pump: n,
        ..OpticalSystem::degenerate_810nm()
    };
    println!("2 mm crystal: sigma_S = {:.1} rad/mm", params_from_optics(&sys)?.sigma_s);
    Ok(())
}
