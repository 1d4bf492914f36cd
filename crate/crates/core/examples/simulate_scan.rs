//! Noiseless pi-step scan compared against its closed-form slices, then a
//! Poisson draw written as CSV.

use jtma::io::scan_csv_string;
use jtma::scan::{closed_pr_antidiag, expected_probabilities, simulate_scan, ClScales, Noise, ScanGrid};
use jtma::{JtmaParams, Model, QuadratureSpec};

fn main() -> jtma::Result<()> {
    let p = JtmaParams::cl(7.45, 103.2)?;
    let spec = QuadratureSpec::default();
    let half = 2.0 * p.sigma_c;

    let n = 9;
    let probs = expected_probabilities(&ScanGrid::uniform(n, half)?, &p, &Model::Cl, &spec)?;
    let sc = ClScales::for_params(&p);
    println!("{:>10} {:>14} {:>14}", "a", "quadrature", "closed form");
    for k in 0..n {
        let a = probs.grid.a_s_values[k];
        // anti-diagonal: a_i = -a_s
        let q = probs.values[k * n + (n - 1 - k)];
        println!("{a:>10.2} {q:>14.6e} {:>14.6e}", closed_pr_antidiag(a, sc.n, sc.n_prime, p.sigma_c));
    }

    let grid = ScanGrid::uniform(21, half)?;
    let pmax = expected_probabilities(&grid, &p, &Model::Cl, &spec)?.max();
    let data = simulate_scan(&grid, &p, &Model::Cl, &spec, Noise::Poisson { seed: 7 }, 1e4 / pmax)?;
    let csv = scan_csv_string(&data);
    println!("\n{} rows; first lines:", data.counts.len());
    for line in csv.lines().take(4) {
        println!("{line}");
    }
    Ok(())
}
