//! Batch front end: simulate fields, build mean-EC tables, identify
//! deformations, run the spiral estimators, and verify rotation invariance.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 I/O.

mod config;

use clap::{Args, Parser, Subcommand};
use config::Config;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use warpfield::covariance::Level;
use warpfield::deform::{Deformation, Rect};
use warpfield::field::{self, GridSpec};
use warpfield::geom::{Mat2, Vec2};
use warpfield::identify::{self, MeanEcTable};
use warpfield::spiral;
use warpfield::stats;

#[derive(Parser)]
#[command(
    name = "warpfield",
    version,
    about = "Deformed Gaussian random fields: simulation, excursion geometry, identification"
)]
struct Cli {
    /// Configuration file (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the experiment seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Cap the worker thread count (0 = library default).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Print the fully defaulted configuration and exit.
    #[arg(long)]
    print_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate field realizations and write .gfd files plus a summary CSV.
    Simulate,
    /// Build a mean modified-EC table over the configured partition.
    Table(TableArgs),
    /// Recover deformation data from a mean-EC table.
    Identify(IdentifyArgs),
    /// Single-realization sector/segment estimation for spiral deformations.
    EstimateSpiral,
    /// Rotation-invariance verdict for the configured deformation.
    VerifyIsotropy,
}

#[derive(Args)]
struct TableArgs {
    /// "analytic" (quadrature expectations) or "montecarlo".
    #[arg(long, default_value = "analytic")]
    mode: String,
}

#[derive(Args)]
struct IdentifyArgs {
    /// Mean-EC table CSV (defaults to the table command's output path).
    #[arg(long)]
    table: Option<PathBuf>,
    /// "linear", "general" or "tensorial".
    #[arg(long, default_value = "general")]
    method: String,
    /// Level used when the table was built (consistency check).
    #[arg(long)]
    u: Option<f64>,
    /// Coordinate signs for the tensorial method, e.g. "++" or "+-".
    #[arg(long)]
    signs: Option<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

struct CmdError {
    code: u8,
    message: String,
}

fn config_err(message: impl Into<String>) -> CmdError {
    CmdError {
        code: 2,
        message: message.into(),
    }
}

fn numeric_err(e: warpfield::Error) -> CmdError {
    let code = match &e {
        warpfield::Error::Io(_) => 4,
        _ => 3,
    };
    CmdError {
        code,
        message: e.to_string(),
    }
}

fn io_err(e: std::io::Error) -> CmdError {
    CmdError {
        code: 4,
        message: e.to_string(),
    }
}

fn run(cli: Cli) -> Result<(), CmdError> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path).map_err(config_err)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.experiment.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.experiment.out_dir = out.display().to_string();
    }
    if cli.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    cfg.validate().map_err(config_err)?;
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| config_err(format!("thread pool: {e}")))?;
    }
    let command = cli
        .command
        .ok_or_else(|| config_err("no command given; try --help"))?;
    let out_dir = PathBuf::from(&cfg.experiment.out_dir);
    std::fs::create_dir_all(&out_dir).map_err(io_err)?;

    match command {
        Command::Simulate => cmd_simulate(&cfg, &out_dir),
        Command::Table(args) => cmd_table(&cfg, &out_dir, &args.mode),
        Command::Identify(args) => cmd_identify(&cfg, &out_dir, &args),
        Command::EstimateSpiral => cmd_estimate_spiral(&cfg, &out_dir),
        Command::VerifyIsotropy => cmd_verify_isotropy(&cfg, &out_dir),
    }
}

fn write_out(path: &Path, content: &str) -> Result<(), CmdError> {
    let mut f = std::fs::File::create(path).map_err(io_err)?;
    f.write_all(content.as_bytes()).map_err(io_err)?;
    Ok(())
}

fn provenance(cfg: &Config) -> String {
    format!(
        "# config-hash: {}\n# warpfield-version: {}\n# seed: {}\n",
        cfg.hash(),
        env!("CARGO_PKG_VERSION"),
        cfg.experiment.seed
    )
}

fn stamped(cfg: &Config, body: &str) -> String {
    format!("# config-hash: {}\n{}", cfg.hash(), body)
}

fn cmd_simulate(cfg: &Config, out_dir: &Path) -> Result<(), CmdError> {
    let model = cfg.build_model().map_err(config_err)?;
    let spec = cfg.build_grid().map_err(config_err)?;
    let mut summary = String::from("rep,seed,file,mean,variance,min,max\n");
    let mut euler_rows = String::from(warpfield::excursion::euler_stats_csv_header());
    euler_rows.push('\n');
    for rep in 0..cfg.experiment.reps {
        let seed = stats::derive_seed(cfg.experiment.seed, rep);
        let field = field::simulate(&spec, &model, seed).map_err(numeric_err)?;
        let name = format!("field_{rep:04}.gfd");
        field::write_gfd(&field, out_dir.join(&name)).map_err(numeric_err)?;
        let vals = field.values.as_slice();
        let mean = stats::mean(vals);
        let var = stats::variance(vals);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in vals {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        summary.push_str(&format!(
            "{rep},{seed},{name},{mean:?},{var:?},{lo:?},{hi:?}\n"
        ));
        for &u in &cfg.experiment.levels {
            let mask = warpfield::excursion::excursion_mask(&field, u).map_err(numeric_err)?;
            let st = warpfield::excursion::euler_characteristic_2d(&mask);
            let phi = warpfield::excursion::modified_euler_2d(&field, u).map_err(numeric_err)?;
            euler_rows.push_str(&warpfield::excursion::euler_stats_csv_row(
                seed, u, "grid", &st, phi,
            ));
            euler_rows.push('\n');
        }
    }
    write_out(
        &out_dir.join("simulate_summary.csv"),
        &stamped(cfg, &summary),
    )?;
    write_out(&out_dir.join("euler_stats.csv"), &stamped(cfg, &euler_rows))?;
    println!(
        "wrote {} field file(s), simulate_summary.csv and euler_stats.csv",
        cfg.experiment.reps
    );
    Ok(())
}

fn cmd_table(cfg: &Config, out_dir: &Path, mode: &str) -> Result<(), CmdError> {
    let theta = cfg.build_deformation().map_err(config_err)?;
    let sigma = cfg.sigma().map_err(config_err)?;
    let model = cfg.build_model().map_err(config_err)?;
    for &u in &cfg.experiment.levels {
        let table = match mode {
            "analytic" => {
                identify::analytic_table(&theta, Level(u), &sigma).map_err(numeric_err)?
            }
            "montecarlo" => {
                if u == 0.0 {
                    return Err(config_err(
                        "u = 0 degenerates the 2-d inversion; pick a nonzero level",
                    ));
                }
                identify::monte_carlo_table(
                    &theta,
                    &model,
                    Level(u),
                    &sigma,
                    cfg.grid.spacing,
                    cfg.experiment.reps,
                    cfg.experiment.seed,
                )
                .map_err(numeric_err)?
            }
            other => return Err(config_err(format!("unknown table mode `{other}`"))),
        };
        let name = format!("table_u{u:?}_{mode}.csv");
        write_out(&out_dir.join(&name), &stamped(cfg, &table.to_csv()))?;
        println!("wrote {name} ({} entries)", table.len());
    }
    Ok(())
}

fn cmd_identify(cfg: &Config, out_dir: &Path, args: &IdentifyArgs) -> Result<(), CmdError> {
    let table_path = match &args.table {
        Some(p) => p.clone(),
        None => {
            let u = cfg.experiment.levels.first().copied().unwrap_or(1.0);
            out_dir.join(format!("table_u{u:?}_analytic.csv"))
        }
    };
    let text = std::fs::read_to_string(&table_path).map_err(io_err)?;
    let table = MeanEcTable::from_csv(&text).map_err(numeric_err)?;
    if let Some(u) = args.u {
        if (u - table.u).abs() > 1e-12 {
            return Err(config_err(format!(
                "--u {u} does not match the table level {}",
                table.u
            )));
        }
    }
    if args.method != "tensorial" && table.u == 0.0 {
        return Err(config_err("the linear and general methods need u != 0"));
    }
    let sigma = cfg.sigma().map_err(config_err)?;
    let mut report = provenance(cfg);
    report.push_str(&format!(
        "table: {}\nmethod: {}\nu: {:?}\n",
        table_path.display(),
        args.method,
        table.u
    ));

    match args.method.as_str() {
        "linear" => {
            let s = sigma.iter().cloned().fold(0.0f64, f64::max);
            let id = identify::identify_linear(&table, s, s).map_err(numeric_err)?;
            report.push_str(&format!(
                "a: {:?}\nb: {:?}\nc: {:?}\ndelta candidates: {:?} {:?}\n",
                id.a, id.b, id.c, id.delta.0, id.delta.1
            ));
            for (i, m) in id.class.representatives().iter().enumerate() {
                report.push_str(&format!(
                    "representative {i}: [[{:?}, {:?}], [{:?}, {:?}]]\n",
                    m.a, m.b, m.c, m.d
                ));
            }
            report.push_str(&format!(
                "dilatation candidates: {:?} +- {:?} i  (|mu| = {:?})\n",
                id.dilatation.re,
                id.dilatation.im,
                id.dilatation.modulus()
            ));
            let mut csv = String::from("a,b,c,delta0,delta1,mu_re,mu_im,mu_mod\n");
            csv.push_str(&format!(
                "{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}\n",
                id.a,
                id.b,
                id.c,
                id.delta.0,
                id.delta.1,
                id.dilatation.re,
                id.dilatation.im,
                id.dilatation.modulus()
            ));
            write_out(&out_dir.join("identify_linear.csv"), &stamped(cfg, &csv))?;
        }
        "general" => {
            let field = identify::recover_abc_field(&table, &sigma).map_err(numeric_err)?;
            write_out(
                &out_dir.join("abc_field.csv"),
                &stamped(cfg, &field.to_csv()),
            )?;
            let flagged: usize = (0..sigma.len())
                .flat_map(|i| (0..sigma.len()).map(move |j| (i, j)))
                .filter(|&(i, j)| field.node(i, j).flagged)
                .count();
            report.push_str(&format!(
                "nodes: {}\nflagged: {flagged}\nwrote abc_field.csv\n",
                sigma.len() * sigma.len()
            ));
        }
        "tensorial" => {
            let signs = match args.signs.as_deref() {
                Some(s) => {
                    let chars: Vec<char> = s.chars().collect();
                    if chars.len() != 2 || chars.iter().any(|c| *c != '+' && *c != '-') {
                        return Err(config_err(format!(
                            "bad --signs `{s}`; expected like ++ or +-"
                        )));
                    }
                    let sgn = |c: char| if c == '+' { 1.0 } else { -1.0 };
                    Some((sgn(chars[0]), sgn(chars[1])))
                }
                None => None,
            };
            let id = identify::identify_tensorial(&table, &sigma, signs).map_err(numeric_err)?;
            if signs.is_none() {
                report
                    .push_str("warning: no --signs given; reporting derivative magnitudes only\n");
            }
            let mut csv = String::from("s,d1_abs,d2_abs,theta1,theta2\n");
            for (k, &s) in id.sigma.iter().enumerate() {
                let t1 = id
                    .theta1
                    .as_ref()
                    .map(|v| format!("{:?}", v[k]))
                    .unwrap_or_default();
                let t2 = id
                    .theta2
                    .as_ref()
                    .map(|v| format!("{:?}", v[k]))
                    .unwrap_or_default();
                csv.push_str(&format!(
                    "{s:?},{:?},{:?},{t1},{t2}\n",
                    id.d1_abs[k], id.d2_abs[k]
                ));
            }
            write_out(&out_dir.join("identify_tensorial.csv"), &stamped(cfg, &csv))?;
            report.push_str("wrote identify_tensorial.csv\n");
        }
        other => return Err(config_err(format!("unknown method `{other}`"))),
    }
    write_out(&out_dir.join("identify_report.txt"), &report)?;
    println!("{report}");
    Ok(())
}

/// Field source for the estimators: linear deformations simulate the
/// composed covariance exactly; other deformations evaluate an underlying
/// realization at the deformed nodes through bicubic interpolation on a
/// correlation-scale lattice.
fn estimator_source<'a>(
    theta: &'a Deformation,
    model: &'a warpfield::covariance::CovarianceModel,
    spec: &'a GridSpec,
    base_seed: u64,
) -> Result<Box<dyn Fn(usize, u64) -> warpfield::Result<field::GridField> + Sync + 'a>, CmdError> {
    match theta {
        Deformation::Linear(m) => {
            let sampler =
                field::LinearDeformedSampler::new(spec, model, *m).map_err(numeric_err)?;
            Ok(Box::new(move |_n, rep| {
                Ok(sampler.sample(stats::derive_seed(base_seed, rep)))
            }))
        }
        _ => {
            // Bounding box of theta(window) from the window boundary.
            let (lo, hi) = spec.bounds();
            let mut ilo = Vec2::new(f64::INFINITY, f64::INFINITY);
            let mut ihi = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
            let m = 512;
            for i in 0..=m {
                let f = i as f64 / m as f64;
                for p in [
                    Vec2::new(lo.x + f * (hi.x - lo.x), lo.y),
                    Vec2::new(lo.x + f * (hi.x - lo.x), hi.y),
                    Vec2::new(lo.x, lo.y + f * (hi.y - lo.y)),
                    Vec2::new(hi.x, lo.y + f * (hi.y - lo.y)),
                ] {
                    let y = theta.eval(p).map_err(numeric_err)?;
                    ilo = Vec2::new(ilo.x.min(y.x), ilo.y.min(y.y));
                    ihi = Vec2::new(ihi.x.max(y.x), ihi.y.max(y.y));
                }
            }
            // Correlation-scale lattice for the underlying field; bicubic
            // interpolation error is negligible at this resolution.
            let h_img = 0.02f64;
            let pad = 4.0 * h_img;
            let origin = ilo - Vec2::new(pad, pad);
            let rows = ((ihi.y - ilo.y + 2.0 * pad) / h_img).ceil() as usize + 1;
            let cols = ((ihi.x - ilo.x + 2.0 * pad) / h_img).ceil() as usize + 1;
            let img_spec = GridSpec::new(origin, h_img, (rows, cols)).map_err(numeric_err)?;
            let sampler = field::LinearDeformedSampler::new(&img_spec, model, Mat2::IDENTITY)
                .map_err(numeric_err)?;
            let spec = *spec;
            Ok(Box::new(move |_n, rep| {
                let x = sampler.sample(stats::derive_seed(base_seed, rep));
                let (out_rows, out_cols) = spec.shape;
                let mut values = warpfield::geom::Grid2::zeros(out_rows, out_cols);
                for i in 0..out_rows {
                    for j in 0..out_cols {
                        let t = spec.node(i, j);
                        values[(i, j)] = field::bicubic_on_grid(&x, theta.eval(t)?)?;
                    }
                }
                Ok(field::GridField {
                    spec,
                    values,
                    seed: x.seed,
                    model: x.model.clone(),
                })
            }))
        }
    }
}

fn cmd_estimate_spiral(cfg: &Config, out_dir: &Path) -> Result<(), CmdError> {
    let theta = cfg.build_deformation().map_err(config_err)?;
    let model = cfg.build_model().map_err(config_err)?;
    let [r0, phi0] = cfg.estimate.point;
    if !(r0 > 0.0) {
        return Err(config_err(format!(
            "estimator base radius must be positive, got {r0}"
        )));
    }
    let u = cfg.estimate.u;
    let schedule = &cfg.estimate.schedule;
    let max_n = *schedule.iter().max().unwrap();
    let spacing = if cfg.estimate.spacing > 0.0 {
        cfg.estimate.spacing
    } else {
        1.0 / (8.0 * max_n as f64)
    };
    let half =
        r0 + 1.0 / schedule.iter().cloned().fold(usize::MAX, usize::min) as f64 + 4.0 * spacing;
    let n = (2.0 * half / spacing).round() as usize + 1;
    let spec = GridSpec::new(Vec2::new(-half, -half), spacing, (n, n)).map_err(numeric_err)?;
    let source = estimator_source(&theta, &model, &spec, cfg.experiment.seed)?;

    let run = spiral::run_z_schedule(&*source, r0, phi0, schedule, cfg.experiment.reps, u)
        .map_err(numeric_err)?;
    let est = spiral::regress_detjac(&run).map_err(numeric_err)?;
    write_out(
        &out_dir.join("estimator_run.csv"),
        &stamped(cfg, &run.to_csv(&est)),
    )?;
    // Plot-data series: sector area against the replication mean of Z_N.
    let mut plot = String::from("x,y,yerr\n");
    for e in &run.entries {
        plot.push_str(&format!(
            "{:?},{:?},{:?}\n",
            e.domain_measure,
            e.mean,
            (e.variance / e.replications as f64).sqrt()
        ));
    }
    write_out(&out_dir.join("plot_zn.csv"), &stamped(cfg, &plot))?;

    let mut report = provenance(cfg);
    report.push_str(&format!(
        "point: (r0, phi0) = ({r0:?}, {phi0:?})\nschedule: {schedule:?}\nreps: {}\nu: {u:?}\n",
        cfg.experiment.reps
    ));
    report.push_str(&format!("estimated |det J|: {:?}\n", est.det));
    if let Ok(summary) = theta.jacobian_summary(Vec2::from_polar(r0, phi0)) {
        report.push_str(&format!("exact det J at the base point: {:?}\n", summary.c));
    }
    report.push_str(&format!(
        "normalized variance sequence: {:?}\n",
        est.normalized_var
    ));
    write_out(&out_dir.join("estimate_report.txt"), &report)?;
    println!("{report}");
    Ok(())
}

fn cmd_verify_isotropy(cfg: &Config, out_dir: &Path) -> Result<(), CmdError> {
    let theta = cfg.build_deformation().map_err(config_err)?;
    let rect = Rect::placed(
        cfg.isotropy.rect[0],
        cfg.isotropy.rect[1],
        0.0,
        Vec2::new(
            cfg.isotropy.rect_translation[0],
            cfg.isotropy.rect_translation[1],
        ),
    )
    .map_err(numeric_err)?;
    let rep = identify::chi_isotropy_test(
        &theta,
        &rect,
        &cfg.isotropy.angles,
        Level(cfg.isotropy.u),
        identify::ISOTROPY_ANALYTIC_TOL,
        identify::ISOTROPY_JACOBIAN_TOL,
    )
    .map_err(numeric_err)?;
    let mut report = provenance(cfg);
    report.push_str(&format!(
        "analytic: {} (worst relative deviation {:?} at angle {:?})\n",
        if rep.analytic_pass { "PASS" } else { "FAIL" },
        rep.analytic_worst_deviation,
        rep.analytic_worst_angle
    ));
    report.push_str(&format!(
        "jacobian: {} (worst relative deviation {:?} at angle {:?})\n",
        if rep.jacobian_pass { "PASS" } else { "FAIL" },
        rep.jacobian_worst_deviation,
        rep.jacobian_worst_angle
    ));
    let verdict = rep.analytic_pass && rep.jacobian_pass;
    report.push_str(&format!(
        "verdict: the deformation {} chi-isotropic\n",
        if verdict { "is" } else { "is NOT" }
    ));
    write_out(&out_dir.join("isotropy_report.txt"), &report)?;
    println!("{report}");
    Ok(())
}
