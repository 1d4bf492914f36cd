//! How well the double Gaussian replaces the sinc phase matching.

use jtma::validate::{cl_overlap, overlap_table, threshold_ratio, OverlapPath};

fn main() -> jtma::Result<()> {
    println!("{:>8} {:>12} {:>12}", "ratio", "coincidence", "singles");
    for (c, s) in overlap_table(&[0.5, 1.0, 1.25, 1.5, 2.0, 3.0])? {
        println!("{:>8.3} {:>12.5} {:>12.5}", c.ratio, c.overlap, s.overlap);
    }
    for target in [0.95, 0.99] {
        let tc = threshold_ratio(target, OverlapPath::Coincidence)?;
        let ts = threshold_ratio(target, OverlapPath::Singles)?;
        println!("overlap {target}: sigma_S/sigma_C >= {tc:.4} (coincidences), {ts:.4} (singles)");
    }
    let r = 151.1 / 103.2;
    println!("810 nm source, ratio {r:.3}: overlap {:.4}", cl_overlap(r, OverlapPath::Coincidence)?.overlap);
    Ok(())
}
