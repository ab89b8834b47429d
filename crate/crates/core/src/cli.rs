//! Command-line front end. Exit codes: 0 success, 1 acceptance failure,
//! 2 configuration error, 3 numerical failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use num_complex::Complex64 as c64;
use serde_json::{json, Value};

use crate::acceptance::{self, ALL};
use crate::brown::{density_from_l, potential_field, total_mass};
use crate::config::{parse_grid, parse_list, Overrides, RunConfig};
use crate::dyson::solve_vde;
use crate::error::Error;
use crate::grid::ScalarField;
use crate::profiles::{discretize, validate, DiscretizedModel};
use crate::rmt::{
    eigenvalues, girko_probe, hermitized_spectrum, logdet_identity_probe, pseudospectrum_grid, sample,
    singular_values, small_sv_count, smin_assumption_probe, smooth_bump, LogdetQuadrature, ProbeReport,
};
use crate::support::{dist_field, s_eps_mask};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ACCEPTANCE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "brown-mde", version, about = "Brown measure and pseudospectra from the Dyson equation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Run configuration (TOML); bundled names such as `circular.cfg` work
    /// from any directory.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Output directory, overriding `output_dir`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Worker threads; never changes any output value.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,

    /// `re_min,re_max,im_min,im_max,h`
    #[arg(long, global = true, value_name = "SPEC", allow_hyphen_values = true)]
    pub grid: Option<String>,

    #[arg(long, global = true, value_name = "N")]
    pub n: Option<usize>,

    /// Comma-separated eps values.
    #[arg(long, global = true, value_name = "LIST")]
    pub eps: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the assumption report of the model.
    Validate,
    /// Solve the vector Dyson equation at the `[solve]` point.
    Solve,
    /// Log-potential field.
    Potential,
    /// Log-potential and density fields.
    Density,
    /// Distance-to-support field and S_eps masks.
    Support,
    /// Eigenvalues of one sampled matrix.
    Sample,
    /// Smallest singular value field and eps-pseudospectrum masks.
    Pseudospec,
    /// Identity and assumption probes.
    Probes,
    /// Acceptance suite.
    Verify {
        /// Comma-separated criterion numbers; all by default.
        #[arg(long, value_name = "LIST")]
        only: Option<String>,
    },
}

/// An error tagged with the module and operation that raised it.
#[derive(Debug)]
pub struct Failure {
    pub op: &'static str,
    pub error: Error,
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.op, self.error)
    }
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self.error {
            Error::Config(_) | Error::InvalidSpec(_) | Error::BlockUnresolved { .. } | Error::Io(_) => EXIT_CONFIG,
            Error::NonConvergence { .. } | Error::NumericalFailure(_) | Error::Domain(_) => EXIT_NUMERICAL,
        }
    }
}

fn at(op: &'static str) -> impl FnOnce(Error) -> Failure {
    move |error| Failure { op, error }
}

type Run<T> = std::result::Result<T, Failure>;

/// Parses `args` (program name first), runs the command and returns the
/// exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}

fn overrides(cli: &Cli) -> Run<Overrides> {
    let cfg = at("cli::arguments");
    Ok(Overrides {
        out: cli.out.clone(),
        seed: cli.seed,
        grid: cli.grid.as_deref().map(parse_grid).transpose().map_err(cfg)?,
        n: cli.n,
        eps: cli
            .eps
            .as_deref()
            .map(parse_list)
            .transpose()
            .map_err(at("cli::arguments"))?,
    })
}

pub fn run(cli: &Cli) -> Run<i32> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(at("cli::arguments")(Error::Config("--threads must be positive".into())));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| at("cli::arguments")(Error::Config("--config PATH is required".into())))?;
    let cfg = RunConfig::load(path, &overrides(cli)?).map_err(at("config::load"))?;

    match &cli.command {
        Command::Validate => cmd_validate(&cfg),
        Command::Solve => cmd_solve(&cfg),
        Command::Potential => cmd_potential(&cfg, false),
        Command::Density => cmd_potential(&cfg, true),
        Command::Support => cmd_support(&cfg),
        Command::Sample => cmd_sample(&cfg),
        Command::Pseudospec => cmd_pseudospec(&cfg),
        Command::Probes => cmd_probes(&cfg),
        Command::Verify { only } => cmd_verify(&cfg, only.as_deref()),
    }
}

fn model(cfg: &RunConfig) -> Run<DiscretizedModel> {
    discretize(&cfg.model, cfg.raw.n).map_err(at("profiles::discretize"))
}

fn out_dir(cfg: &RunConfig) -> Run<&Path> {
    let dir = cfg.raw.output_dir.as_path();
    fs::create_dir_all(dir).map_err(|e| at("cli::output")(Error::Config(format!("cannot create {}: {e}", dir.display()))))?;
    Ok(dir)
}

fn write_text(dir: &Path, name: &str, text: &str) -> Run<()> {
    fs::write(dir.join(name), text).map_err(|e| at("cli::output")(Error::from(e)))
}

fn write_json(dir: &Path, name: &str, v: &Value) -> Run<()> {
    let text = serde_json::to_string_pretty(v).expect("JSON values serialize") + "\n";
    write_text(dir, name, &text)
}

fn sidecar(cfg: &RunConfig, field: &ScalarField, extra: Value) -> Value {
    let mut m = cfg.sidecar_base();
    m.insert("quantity".into(), field.quantity.clone().into());
    m.insert("model_hash".into(), field.model_hash.clone().into());
    m.insert("grid".into(), serde_json::to_value(field.grid).expect("grid serializes"));
    m.insert("failures".into(), field.failures().into());
    if let Value::Object(e) = extra {
        m.extend(e);
    }
    Value::Object(m)
}

fn write_field(cfg: &RunConfig, field: &ScalarField, stem: &str, extra: Value) -> Run<PathBuf> {
    let dir = out_dir(cfg)?;
    field
        .write(dir, stem, &sidecar(cfg, field, extra))
        .map_err(at("cli::output"))?;
    Ok(dir.join(format!("{stem}.csv")))
}

fn cmd_validate(cfg: &RunConfig) -> Run<i32> {
    let report = validate(&cfg.model);
    print!("{report}");
    Ok(EXIT_OK)
}

fn cmd_solve(cfg: &RunConfig) -> Run<i32> {
    let m = model(cfg)?;
    let p = cfg.raw.solve;
    let sol = solve_vde(&m, p.zeta(), p.eta, None, &cfg.raw.solver).map_err(at("dyson::solve_vde"))?;
    println!(
        "zeta = {} eta = {:e} <v1> = {:.15} <v2> = {:.15} residual = {:.3e} iterations = {} sanity = {:.4}",
        sol.zeta,
        sol.eta,
        sol.mean_v1(),
        sol.mean_v2(),
        sol.residual,
        sol.iterations,
        sol.sanity_ratio()
    );
    Ok(EXIT_OK)
}

fn cmd_potential(cfg: &RunConfig, density: bool) -> Run<i32> {
    let m = model(cfg)?;
    let quad = cfg.raw.quadrature;
    let (l, stats) = potential_field(&m, &cfg.raw.grid, &quad, &cfg.raw.solver).map_err(at("brown::potential_field"))?;
    let extra = json!({
        "quadrature": quad,
        "max_residual": stats.max_residual,
        "max_error_estimate": stats.max_error_estimate,
    });
    let path = write_field(cfg, &l, "potential", extra.clone())?;
    println!("wrote {} ({} failed nodes)", path.display(), stats.failures);
    if density {
        let d = density_from_l(&l).map_err(at("brown::density_from_L"))?;
        let mut extra = extra;
        extra["clamped"] = d.clamped.into();
        extra["negative"] = d.negative.len().into();
        extra["tol_density"] = d.tol_density.into();
        extra["total_mass"] = total_mass(&d.field).into();
        let path = write_field(cfg, &d.field, "density", extra)?;
        println!("wrote {} (mass {:.6})", path.display(), total_mass(&d.field));
    }
    Ok(EXIT_OK)
}

fn eps_tag(e: f64) -> String {
    format!("{e}").replace('.', "p")
}

fn cmd_support(cfg: &RunConfig) -> Run<i32> {
    let m = model(cfg)?;
    let (field, stats) = dist_field(&m, &cfg.raw.grid, &cfg.raw.support, &cfg.raw.solver).map_err(at("support::region_S_eps"))?;
    let extra = json!({ "support": cfg.raw.support });
    let path = write_field(cfg, &field, "dist0", extra.clone())?;
    println!("wrote {} ({} failed nodes)", path.display(), stats.failures);
    for &e in &cfg.raw.eps {
        let mask = s_eps_mask(&field, e);
        let values = mask.iter().map(|b| f64::from(u8::from(*b))).collect();
        let mf = ScalarField::new(field.grid, values, field.ok.clone(), "s_eps_mask", &field.model_hash)
            .map_err(at("support::region_S_eps"))?;
        let mut extra = extra.clone();
        extra["eps"] = e.into();
        write_field(cfg, &mf, &format!("s_eps_{}", eps_tag(e)), extra)?;
    }
    Ok(EXIT_OK)
}

fn cmd_sample(cfg: &RunConfig) -> Run<i32> {
    let m = model(cfg)?;
    let sc = cfg.sample_config(0);
    let s = sample(&m, &sc).map_err(at("rmt::sample"))?;
    let esd = eigenvalues(&s).map_err(at("rmt::eigenvalues"))?;
    let dir = out_dir(cfg)?;
    let stem = format!("esd_seed{}", sc.seed);
    write_text(dir, &format!("{stem}.csv"), &esd.to_csv())?;
    let mut side = cfg.sidecar_base();
    side.insert("quantity".into(), "esd".into());
    side.insert("model_hash".into(), esd.model_hash.clone().into());
    side.insert("sample".into(), serde_json::to_value(sc).expect("sample config serializes"));
    write_json(dir, &format!("{stem}.json"), &Value::Object(side))?;
    println!("wrote {}", dir.join(format!("{stem}.csv")).display());
    Ok(EXIT_OK)
}

fn cmd_pseudospec(cfg: &RunConfig) -> Run<i32> {
    let m = model(cfg)?;
    let sc = cfg.sample_config(0);
    let s = sample(&m, &sc).map_err(at("rmt::sample"))?;
    let (field, masks) = pseudospectrum_grid(&s, &cfg.raw.grid, &cfg.raw.eps).map_err(at("rmt::pseudospectrum_grid"))?;
    let extra = json!({ "sample": sc });
    let path = write_field(cfg, &field, "smin", extra.clone())?;
    println!("wrote {}", path.display());
    for (&e, mask) in cfg.raw.eps.iter().zip(&masks) {
        let values = mask.iter().map(|b| f64::from(u8::from(*b))).collect();
        let mf = ScalarField::new(field.grid, values, field.ok.clone(), "pseudospectrum_mask", &field.model_hash)
            .map_err(at("rmt::pseudospectrum_grid"))?;
        let mut extra = extra.clone();
        extra["eps"] = e.into();
        write_field(cfg, &mf, &format!("pseudospec_{}", eps_tag(e)), extra)?;
    }
    Ok(EXIT_OK)
}

fn cmd_probes(cfg: &RunConfig) -> Run<i32> {
    let m = model(cfg)?;
    let p = cfg.raw.probes;
    let sc = cfg.sample_config(0);
    let s = sample(&m, &sc).map_err(at("rmt::sample"))?;
    let zeta = c64::new(p.zeta_re, p.zeta_im);
    let mut reports = Vec::new();

    let quad = LogdetQuadrature {
        nodes: p.logdet_nodes,
        ..LogdetQuadrature::default()
    };
    let ld = logdet_identity_probe(&s, zeta, p.logdet_t, &quad).map_err(at("rmt::logdet_identity_probe"))?;
    reports.push(ProbeReport::new(
        "logdet_identity",
        json!({ "zeta": [zeta.re, zeta.im], "T": p.logdet_t, "nodes": p.logdet_nodes, "lhs": ld.lhs, "rhs": ld.rhs }),
        ld.relative_error,
        p.logdet_tol,
    ));

    let r = p.girko_radius;
    let cells = (r / p.girko_h).ceil() + 3.0;
    let grid = crate::grid::GridSpec::square(cells * p.girko_h, p.girko_h).map_err(at("rmt::girko_probe"))?;
    let gk = girko_probe(&s, smooth_bump(c64::new(0.0, 0.0), r), &grid).map_err(at("rmt::girko_probe"))?;
    reports.push(ProbeReport::new(
        "girko",
        json!({ "radius": r, "h": p.girko_h, "lhs": gk.lhs, "rhs": gk.rhs, "abs_error": gk.abs_error }),
        gk.relative_error,
        p.girko_tol,
    ));

    let ev = hermitized_spectrum(&s, zeta).map_err(at("rmt::hermitize"))?;
    let n = cfg.raw.n;
    let sym = ev.iter().zip(ev.iter().rev()).map(|(a, b)| (a + b).abs()).fold(0.0, f64::max);
    let sv = singular_values(&s, zeta).map_err(at("rmt::smin"))?;
    let svd = ev[n..].iter().rev().zip(&sv).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    reports.push(ProbeReport::new(
        "hermitization",
        json!({ "zeta": [zeta.re, zeta.im], "symmetry": sym, "svd_agreement": svd }),
        sym.max(svd),
        1e-8,
    ));

    let cnt = small_sv_count(&s, zeta, p.small_eta).map_err(at("rmt::small_sv_count"))?;
    reports.push(ProbeReport::new(
        "small_sv_count",
        json!({ "zeta": [zeta.re, zeta.im], "eta": p.small_eta, "count": cnt.count }),
        cnt.ratio,
        3.0,
    ));

    let z: Vec<c64> = (0..n)
        .map(|k| c64::from_polar(p.assumption_modulus, std::f64::consts::TAU * k as f64 / n as f64))
        .collect();
    let asm = smin_assumption_probe(&m, &z, p.assumption_trials, p.assumption_beta, sc.distribution, sc.seed)
        .map_err(at("rmt::smin_assumption_probe"))?;
    reports.push(ProbeReport::new(
        "smin_assumption",
        json!({
            "trials": asm.trials, "beta": p.assumption_beta, "modulus": p.assumption_modulus,
            "threshold": asm.threshold, "hits": asm.hits, "wilson_radius": asm.radius,
        }),
        asm.frequency,
        0.05,
    ));

    for r in &reports {
        println!(
            "{:<18} value {:.3e} tolerance {:.1e} {}",
            r.probe,
            r.value,
            r.tolerance,
            if r.pass { "pass" } else { "above tolerance" }
        );
    }
    let dir = out_dir(cfg)?;
    let mut side = cfg.sidecar_base();
    side.insert("model_hash".into(), s.model_hash.clone().into());
    side.insert("sample".into(), serde_json::to_value(sc).expect("sample config serializes"));
    side.insert("probes".into(), serde_json::to_value(&reports).expect("reports serialize"));
    write_json(dir, "probes.json", &Value::Object(side))?;
    Ok(EXIT_OK)
}

fn cmd_verify(cfg: &RunConfig, only: Option<&str>) -> Run<i32> {
    let ids: Vec<u8> = match only {
        None => ALL.to_vec(),
        Some(s) => s
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<u8>()
                    .ok()
                    .filter(|id| ALL.contains(id))
                    .ok_or_else(|| at("cli::arguments")(Error::Config(format!("no acceptance criterion '{t}'"))))
            })
            .collect::<Run<_>>()?,
    };
    let mut outcomes = Vec::new();
    for id in ids {
        let o = acceptance::run(id);
        println!("{o}");
        outcomes.push(o);
    }
    let pass = outcomes.iter().all(|o| o.pass);
    let dir = out_dir(cfg)?;
    let mut side = cfg.sidecar_base();
    side.insert("pass".into(), pass.into());
    // wall times vary between runs and stay out of the file
    let rows: Vec<Value> = outcomes
        .iter()
        .map(|o| json!({ "criterion": o.id, "title": o.title, "pass": o.pass, "detail": o.detail }))
        .collect();
    side.insert("criteria".into(), rows.into());
    write_json(dir, "verify.json", &Value::Object(side))?;
    Ok(if pass { EXIT_OK } else { EXIT_ACCEPTANCE })
}
