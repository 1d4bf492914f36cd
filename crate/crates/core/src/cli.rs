//! `jtma` command line: simulate, fit, validate-approx, design.
//!
//! Each run writes its outputs plus `<command>.manifest.toml` with every
//! resolved key into the output directory; passing it back as `--config`
//! repeats the run.
//! Exit codes: 0 ok, 1 validation or usage, 2 numeric, 3 I/O.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::basis::{basis_quadrature, optimize_basis, Design, Pixel};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::fit::{fit_full, fmt6};
use crate::herald::heralding_sweep;
use crate::io::{self, BasisFile, ScanMeta};
use crate::model::{JtmaParams, Model};
use crate::quadrature::QuadratureSpec;
use crate::scan::{counts_from_probabilities, expected_probabilities, Noise, ScanGrid, SimulateOptions};
use crate::validate::{cl_overlap, overlap_table, OverlapPath};

const DEFAULT_RATIOS: [f64; 10] = [0.5, 0.75, 1.0, 1.0607, 1.25, 1.4161, 1.5, 2.0, 3.0, 5.0];
const CL_OVERLAP_TARGET: f64 = 0.99;

#[derive(Debug, Parser)]
#[command(name = "jtma", version, about = "Collected JTMA modeling, pi-step scan fitting and pixel-basis design")]
struct Cli {
    /// Worker threads for the numeric kernels (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a pi-step coincidence scan.
    Simulate(SimulateArgs),
    /// Fit sigma_C, sigma_P and the origins to a scan CSV.
    Fit(FitArgs),
    /// Tabulate the collection-limited overlap and judge a source.
    ValidateApprox(ValidateArgs),
    /// Design uniform and optimized pixel bases.
    Design(DesignArgs),
}

#[derive(Debug, Args, Default)]
struct Common {
    /// TOML config; flags override its keys.
    #[arg(long, alias = "params", value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long = "out", value_name = "DIR")]
    output_dir: Option<String>,
    #[arg(long = "sigma-p")]
    sigma_p_rad_per_mm: Option<f64>,
    #[arg(long = "sigma-s")]
    sigma_s_rad_per_mm: Option<f64>,
    #[arg(long = "sigma-c")]
    sigma_c_rad_per_mm: Option<f64>,
    #[arg(long = "origin-s")]
    origin_s_rad_per_mm: Option<f64>,
    #[arg(long = "origin-i")]
    origin_i_rad_per_mm: Option<f64>,
    #[arg(long)]
    amp_scale: Option<f64>,
    /// Optics preset: 810nm or 1550nm.
    #[arg(long)]
    optics: Option<String>,
    /// Pump waist in mm, applied to the optics preset.
    #[arg(long)]
    pump_waist_mm: Option<f64>,
    /// collected, cl or general.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    c_s: Option<f64>,
    #[arg(long)]
    c_i: Option<f64>,
    #[arg(long)]
    quad_order: Option<usize>,
    #[arg(long)]
    quad_rel_tol: Option<f64>,
    #[arg(long)]
    quad_max_refinements: Option<usize>,
}

impl Common {
    fn overrides(&self) -> RunConfig {
        RunConfig {
            output_dir: self.output_dir.clone(),
            sigma_p_rad_per_mm: self.sigma_p_rad_per_mm,
            sigma_s_rad_per_mm: self.sigma_s_rad_per_mm,
            sigma_c_rad_per_mm: self.sigma_c_rad_per_mm,
            origin_s_rad_per_mm: self.origin_s_rad_per_mm,
            origin_i_rad_per_mm: self.origin_i_rad_per_mm,
            amp_scale: self.amp_scale,
            optics: self.optics.clone(),
            pump_waist_mm: self.pump_waist_mm,
            model: self.model.clone(),
            c_s: self.c_s,
            c_i: self.c_i,
            quad_order: self.quad_order,
            quad_rel_tol: self.quad_rel_tol,
            quad_max_refinements: self.quad_max_refinements,
            ..Default::default()
        }
    }

    fn load(&self, extra: RunConfig) -> Result<RunConfig> {
        let file = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        Ok(file.merged(self.overrides()).merged(extra))
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Grid points per axis.
    #[arg(long = "grid")]
    grid_points: Option<usize>,
    /// Scan half width in rad/mm (default 2 sigma_C).
    #[arg(long = "half-width")]
    grid_half_width_rad_per_mm: Option<f64>,
    /// none or poisson.
    #[arg(long)]
    noise: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Expected counts at the brightest cell.
    #[arg(long)]
    peak_counts: Option<f64>,
    /// Expected accidentals per cell.
    #[arg(long = "background")]
    background_counts: Option<f64>,
    #[arg(long = "dwell")]
    dwell_time_s: Option<f64>,
    /// Also write a noiseless probability grid with this many points per axis.
    #[arg(long = "dense")]
    dense_points: Option<usize>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    /// Scan CSV; a `.meta.toml` sidecar is read when present.
    scan_csv: Option<String>,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated sigma_S/sigma_C ratios to tabulate.
    #[arg(long, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
struct DesignArgs {
    #[command(flatten)]
    common: Common,
    /// Number of pixel modes.
    #[arg(long)]
    d: Option<usize>,
    /// Only max_ent is available.
    #[arg(long)]
    objective: Option<String>,
    /// hex or rings.
    #[arg(long)]
    layout: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    spacing_factor: Option<f64>,
    #[arg(long)]
    crosstalk_cap: Option<f64>,
    /// Signal pixel diameter for the heralding sweep (default: optimized central pixel).
    #[arg(long = "herald-d1")]
    herald_d1_rad_per_mm: Option<f64>,
    /// Comma-separated idler diameters; enables the heralding sweep.
    #[arg(long = "herald-d2", value_delimiter = ',')]
    herald_d2_rad_per_mm: Option<Vec<f64>>,
    /// full or cl.
    #[arg(long)]
    herald_kernel: Option<String>,
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let run = || match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit(a),
        Command::ValidateApprox(a) => validate_approx(a),
        Command::Design(a) => design(a),
    };
    let out = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(run),
            Err(e) => Err(Error::Validation(format!("cannot start {n} threads: {e}"))),
        },
        None => run(),
    };
    match out {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn out_dir(cfg: &mut RunConfig) -> PathBuf {
    PathBuf::from(cfg.output_dir.get_or_insert_with(|| ".".into()).as_str())
}

fn write_manifest(dir: &Path, command: &str, cfg: &RunConfig) -> Result<()> {
    let name = format!("{command}.manifest.toml");
    let text = format!("# jtma {command} --config {name}\n{}", cfg.to_toml()?);
    io::write_text(&dir.join(name), &text)
}

fn record_params(cfg: &mut RunConfig, p: &JtmaParams) {
    cfg.sigma_p_rad_per_mm = Some(p.sigma_p);
    cfg.sigma_s_rad_per_mm = p.sigma_s.is_finite().then_some(p.sigma_s);
    cfg.sigma_c_rad_per_mm = Some(p.sigma_c);
    cfg.origin_s_rad_per_mm = Some(p.origin_s);
    cfg.origin_i_rad_per_mm = Some(p.origin_i);
    cfg.amp_scale = Some(p.amp_scale);
}

fn record_model(cfg: &mut RunConfig, m: &Model) {
    cfg.model = Some(m.name().into());
    if let Model::General(k) = m {
        cfg.c_s = Some(k.c_s);
        cfg.c_i = Some(k.c_i);
    }
}

fn record_quadrature(cfg: &mut RunConfig, q: &QuadratureSpec) {
    cfg.quad_order = Some(q.order);
    cfg.quad_truncation_rad_per_mm = q.truncation_radius;
    cfg.quad_rel_tol = Some(q.target_rel_tol);
    cfg.quad_max_refinements = Some(q.max_refinements);
}

fn simulate(a: SimulateArgs) -> Result<i32> {
    let mut cfg = a.common.load(RunConfig {
        grid_points: a.grid_points,
        grid_half_width_rad_per_mm: a.grid_half_width_rad_per_mm,
        noise: a.noise,
        seed: a.seed,
        peak_counts: a.peak_counts,
        background_counts: a.background_counts,
        dwell_time_s: a.dwell_time_s,
        dense_points: a.dense_points,
        ..Default::default()
    })?;
    let p = cfg.params()?;
    let model = cfg.model()?;
    let spec = cfg.quadrature(QuadratureSpec::default())?;
    let noise = cfg.noise()?;
    let n = cfg.grid_points.unwrap_or(21);
    let half = cfg.grid_half_width_rad_per_mm.unwrap_or(2.0 * p.sigma_c);
    let peak = cfg.peak_counts.unwrap_or(1e4);
    let background = cfg.background_counts.unwrap_or(0.0);
    let dwell = cfg.dwell_time_s.unwrap_or(1.0);
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::Validation(format!("peak_counts must be > 0, got {peak}")));
    }
    if !(dwell > 0.0) {
        return Err(Error::Validation(format!("dwell_time_s must be > 0, got {dwell}")));
    }

    let grid = ScanGrid::uniform(n, half)?;
    let probs = expected_probabilities(&grid, &p, &model, &spec)?;
    let pmax = probs.max();
    if !(pmax > 0.0) {
        return Err(Error::Numeric("simulated probabilities are all zero".into()));
    }
    let opts = SimulateOptions {
        model,
        spec,
        noise,
        count_scale: peak / pmax,
        background,
        dwell_time_s: dwell,
    };
    let data = counts_from_probabilities(&probs, &opts);

    record_params(&mut cfg, &p);
    record_model(&mut cfg, &model);
    record_quadrature(&mut cfg, &spec);
    cfg.grid_points = Some(n);
    cfg.grid_half_width_rad_per_mm = Some(half);
    cfg.noise = Some(match noise {
        Noise::None => "none".into(),
        Noise::Poisson { .. } => "poisson".into(),
    });
    cfg.seed = match noise {
        Noise::Poisson { seed } => Some(seed),
        Noise::None => None,
    };
    cfg.peak_counts = Some(peak);
    cfg.background_counts = Some(background);
    cfg.dwell_time_s = Some(dwell);
    let dir = out_dir(&mut cfg);

    let meta = ScanMeta {
        dwell_time_s: dwell,
        count_scale: opts.count_scale,
        noise: cfg.noise.clone().unwrap_or_default(),
        seed: cfg.seed,
        model: model.name().into(),
        sigma_p_rad_per_mm: p.sigma_p,
        sigma_s_rad_per_mm: cfg.sigma_s_rad_per_mm,
        sigma_c_rad_per_mm: p.sigma_c,
        origin_s_rad_per_mm: p.origin_s,
        origin_i_rad_per_mm: p.origin_i,
        amp_scale: p.amp_scale,
        quad_order: spec.order,
        converged: probs.converged,
    };
    let scan_path = dir.join("scan.csv");
    io::write_scan(&scan_path, &data, &meta)?;
    if let Some(nd) = cfg.dense_points {
        let dense = expected_probabilities(&ScanGrid::uniform(nd, half)?, &p, &model, &spec)?;
        io::write_text(&dir.join("probability.csv"), &io::probability_csv_string(&dense))?;
    }
    write_manifest(&dir, "simulate", &cfg)?;
    println!(
        "wrote {} ({n}x{n}, peak {} counts, quadrature {})",
        scan_path.display(),
        data.counts.iter().max().copied().unwrap_or(0),
        if probs.converged { "converged" } else { "NOT converged" }
    );
    Ok(if probs.converged { 0 } else { 2 })
}

fn fit(a: FitArgs) -> Result<i32> {
    let mut cfg = a.common.load(RunConfig {
        scan_csv: a.scan_csv,
        ..Default::default()
    })?;
    let scan = cfg
        .scan_csv
        .clone()
        .ok_or_else(|| Error::Validation("no scan CSV given (positional argument or scan_csv key)".into()))?;
    let (data, meta) = io::read_scan(Path::new(&scan))?;
    let report = fit_full(&data)?;
    let dir = out_dir(&mut cfg);
    io::write_fit_report(&dir.join("fit_report.toml"), &report)?;
    write_manifest(&dir, "fit", &cfg)?;
    print!("{}", report.table());
    if let Some(m) = meta {
        println!(
            "{:<10} {:>22} {:>22}",
            "generated",
            format!("{:.2}", m.sigma_p_rad_per_mm),
            format!("{:.1}", m.sigma_c_rad_per_mm)
        );
    }
    println!("visibility {:.4}, reduced chi2 {:.3}", report.visibility, report.residual_chi2 / report.dof.max(1) as f64);
    if report.converged {
        Ok(0)
    } else {
        eprintln!("error: fit did not converge; report written with converged = false");
        Ok(2)
    }
}

fn validate_approx(a: ValidateArgs) -> Result<i32> {
    let mut cfg = a.common.load(RunConfig {
        ratios: a.ratios,
        ..Default::default()
    })?;
    let ratios = cfg.ratios.clone().unwrap_or_else(|| DEFAULT_RATIOS.to_vec());
    let table = overlap_table(&ratios)?;
    let mut csv = String::from("ratio,overlap_coincidence,overlap_singles\n");
    for (c, s) in &table {
        let _ = writeln!(csv, "{},{},{}", c.ratio, fmt6(c.overlap), fmt6(s.overlap));
    }
    cfg.ratios = Some(ratios);

    let system = match (cfg.sigma_p_rad_per_mm, cfg.sigma_c_rad_per_mm, cfg.optics.as_ref()) {
        (None, None, None) => None,
        _ => Some(cfg.params()?),
    };
    let dir = out_dir(&mut cfg);
    if let Some(p) = &system {
        record_params(&mut cfg, p);
    }
    io::write_text(&dir.join("overlap.csv"), &csv)?;
    write_manifest(&dir, "validate-approx", &cfg)?;

    print!("{csv}");
    if let Some(p) = system {
        let ratio = p.sigma_s / p.sigma_c;
        for path in [OverlapPath::Coincidence, OverlapPath::Singles] {
            let o = cl_overlap(ratio, path)?;
            println!(
                "{}: sigma_S/sigma_C = {:.4}, overlap = {:.5} -> {}",
                path.name(),
                ratio,
                o.overlap,
                if o.overlap >= CL_OVERLAP_TARGET { "pass" } else { "fail" }
            );
        }
    }
    Ok(0)
}

#[derive(Serialize, Deserialize)]
struct BasisPair {
    signal: BasisFile,
    idler: BasisFile,
}

fn write_design(dir: &Path, tag: &str, d: &Design, lambda: f64, f: f64) -> Result<()> {
    let pair = BasisPair {
        signal: BasisFile::new(&d.basis_s, lambda, f),
        idler: BasisFile::new(&d.basis_i, lambda, f),
    };
    io::write_text(&dir.join(format!("basis_{tag}.toml")), &io::to_toml(&pair)?)?;
    io::write_text(&dir.join(format!("t_{tag}.csv")), &io::mode_matrix_csv_string(&d.t))?;
    let extra = [
        ("diagonal_spread", fmt6(d.diagonal_spread)),
        ("objective", fmt6(d.objective)),
        ("feasible", d.feasible.to_string()),
    ];
    io::write_text(&dir.join(format!("metrics_{tag}.toml")), &io::metrics_string(&d.t, &d.metrics, &extra))
}

fn design(a: DesignArgs) -> Result<i32> {
    let mut cfg = a.common.load(RunConfig {
        d: a.d,
        objective: a.objective,
        layout: a.layout,
        alpha: a.alpha,
        spacing_factor: a.spacing_factor,
        crosstalk_cap: a.crosstalk_cap,
        herald_d1_rad_per_mm: a.herald_d1_rad_per_mm,
        herald_d2_rad_per_mm: a.herald_d2_rad_per_mm,
        herald_kernel: a.herald_kernel,
        ..Default::default()
    })?;
    let d = cfg.d.ok_or_else(|| Error::Validation("design needs d (--d or the d key)".into()))?;
    let p = cfg.params()?;
    let opts = cfg.optimize_options()?;
    let spec = cfg.quadrature(basis_quadrature())?;
    let kernel = cfg.herald_kernel()?;
    let (lambda, f) = cfg.slm_optics()?;

    let run = optimize_basis(d, &p, &opts, &spec)?;

    let herald = match cfg.herald_d2_rad_per_mm.clone() {
        Some(d2) => {
            let d1 = cfg.herald_d1_rad_per_mm.unwrap_or_else(|| {
                let b = &run.optimized.basis_s;
                let near = b
                    .pixels
                    .iter()
                    .min_by(|x, y| {
                        let r = |px: &Pixel| {
                            (px.center[0] - b.axis[0]).hypot(px.center[1] - b.axis[1])
                        };
                        r(x).total_cmp(&r(y))
                    })
                    .expect("non-empty basis");
                2.0 * near.radius
            });
            cfg.herald_d1_rad_per_mm = Some(d1);
            Some(heralding_sweep(d1, &d2, &p, kernel, &spec)?)
        }
        None => None,
    };

    record_params(&mut cfg, &p);
    record_model(&mut cfg, &opts.model);
    record_quadrature(&mut cfg, &spec);
    cfg.objective = Some("max_ent".into());
    cfg.layout = Some(opts.layout.name().into());
    cfg.alpha = Some(opts.geometry.alpha);
    cfg.spacing_factor = Some(opts.geometry.spacing_factor);
    cfg.crosstalk_cap = Some(opts.crosstalk_cap);
    if herald.is_some() {
        cfg.herald_kernel = Some(kernel.name().into());
    }
    cfg.lambda_signal_nm = Some(lambda);
    cfg.focal_length_mm = Some(f);
    let dir = out_dir(&mut cfg);

    write_design(&dir, "uniform", &run.uniform, lambda, f)?;
    write_design(&dir, "optimized", &run.optimized, lambda, f)?;
    if let Some(pts) = &herald {
        let mut csv = String::from("d2_rad_per_mm,coincidence,singles,eta\n");
        for h in pts {
            let _ = writeln!(csv, "{},{:e},{:e},{}", h.d2, h.coincidence, h.singles, fmt6(h.eta));
        }
        io::write_text(&dir.join("herald.csv"), &csv)?;
    }
    write_manifest(&dir, "design", &cfg)?;

    println!("{:<10} {:>6} {:>10} {:>10} {:>10}", "", "d_ent", "fidelity", "schmidt", "crosstalk");
    for (tag, x) in [("uniform", &run.uniform), ("optimized", &run.optimized)] {
        println!(
            "{:<10} {:>6} {:>10.4} {:>10.3} {:>10.2e}",
            tag, x.metrics.d_ent_lower_bound, x.metrics.fidelity, x.metrics.schmidt_number, x.crosstalk
        );
    }
    let converged = run.uniform.t.converged && run.optimized.t.converged;
    if !converged {
        eprintln!("error: mode-matrix quadrature did not reach its tolerance");
    }
    Ok(if converged { 0 } else { 2 })
}
