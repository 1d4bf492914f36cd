//! Entanglement figures of a noisy diagonal mode matrix, and their
//! invariance under local unitaries.

use jtma::metrics::{entanglement_metrics, random_unitary};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> jtma::Result<()> {
    let d = 8;
    let mut t = DMatrix::<Complex64>::identity(d, d);
    t[(0, 0)] = Complex64::new(0.7, 0.0);
    t[(2, 3)] = Complex64::new(0.05, 0.02);
    let m = entanglement_metrics(&t)?;
    println!("K = {:.3}, F = {:.4}, d_ent >= {}, E = {:.3}", m.schmidt_number, m.fidelity, m.d_ent_lower_bound, m.eof_ebits);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (u, v) = (random_unitary(d, &mut rng), random_unitary(d, &mut rng));
    let m2 = entanglement_metrics(&(&u * &t * &v))?;
    println!("after local unitaries: K = {:.3}, E = {:.3}", m2.schmidt_number, m2.eof_ebits);
    Ok(())
}
