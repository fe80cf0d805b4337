//! Command-line front end.
//!
//! Exit codes: 0 success, 2 config error, 3 numerical failure, 4 guard
//! violation. Every artifact embeds the resolved config.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{parse_config, ConfigError, ExperimentConfig, Kind, ModelConfig};
use crate::error::Error;
use crate::expansions::{
    corrected_count_pmf, corrected_count_pmf_periodic, corrected_queue_pmf, default_kmax,
    eta_squared, mean_q0, poisson_pmf, tv_limit_exact, ExpansionInputs, PmfVector,
};
use crate::harness::{convergence_study, estimate_pmf, ExperimentSpec, ResidualReport};
use crate::markov_env::analyze;

/// Residual checks in `validate` allow this many standard errors.
const VALIDATE_Z: f64 = 3.0;

#[derive(Debug, Parser)]
#[command(
    name = "rapid-poisson",
    version,
    about = "Poisson approximations for rapidly fluctuating arrival intensities"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Stationary analysis: π, λ*, g, σ², and optionally η² and the TV limit
    Analyze(CommonArgs),
    /// Poisson baseline and first-order corrected pmf as CSV
    Expand(CommonArgs),
    /// Monte Carlo pmf estimate with 99% intervals as CSV
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Override the config's experiment kind
        #[arg(long, value_enum)]
        kind: Option<Kind>,
    },
    /// Residual study over the config's eps_grid as JSON
    Validate(CommonArgs),
    /// Limiting path-level total variation distance as JSON
    TvLimit(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Master seed, overriding the config
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Replications, overriding the config
    #[arg(long, value_name = "N")]
    reps: Option<u64>,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Numerical(String),
    Guard(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
            Failure::Guard(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Numerical(m) | Failure::Guard(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(format!("config error at {e}"))
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::SingularSystem(_) | Error::QuadratureFailure { .. } => {
                Failure::Numerical(format!("numerical failure: {e}"))
            }
            Error::TooLarge(_) => Failure::Guard(format!("guard violation: {e}")),
            other => Failure::Config(format!("config error: {other}")),
        }
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("rapid-poisson: {}", f.message());
            f.code()
        }
    }
}

fn load(common: &CommonArgs) -> Result<ExperimentConfig, Failure> {
    let text = std::fs::read_to_string(&common.config)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", common.config.display())))?;
    let mut cfg = parse_config(&text)?;
    if let Some(seed) = common.seed {
        cfg.master_seed = Some(seed);
    }
    if let Some(reps) = common.reps {
        cfg.reps = Some(reps);
    }
    cfg.check_consistency()?;
    Ok(cfg.resolve())
}

fn emit(common: &CommonArgs, cfg: &ExperimentConfig, body: &str) -> Result<(), Failure> {
    let target = common
        .out
        .clone()
        .or_else(|| cfg.output.as_ref().map(PathBuf::from));
    match target {
        Some(path) => std::fs::write(&path, body)
            .map_err(|e| Failure::Config(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable output");
    s.push('\n');
    s
}

fn config_json(cfg: &ExperimentConfig) -> String {
    serde_json::to_string(cfg).expect("serializable config")
}

fn config_hash(cfg: &ExperimentConfig) -> String {
    hex::encode(Sha256::digest(config_json(cfg).as_bytes()))
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Analyze(common) => {
            let cfg = load(&common)?;
            let body = analyze_cmd(&cfg)?;
            emit(&common, &cfg, &body)
        }
        Command::Expand(common) => {
            let cfg = load(&common)?;
            let body = expand_cmd(&cfg)?;
            emit(&common, &cfg, &body)
        }
        Command::Simulate { common, kind } => {
            let mut cfg = load(&common)?;
            if let Some(kind) = kind {
                cfg.kind = kind;
                cfg.check_consistency()?;
            }
            let body = simulate_cmd(&cfg)?;
            emit(&common, &cfg, &body)
        }
        Command::Validate(common) => {
            let cfg = load(&common)?;
            let body = validate_cmd(&cfg)?;
            emit(&common, &cfg, &body)
        }
        Command::TvLimit(common) => {
            let cfg = load(&common)?;
            let body = tv_limit_cmd(&cfg)?;
            emit(&common, &cfg, &body)
        }
    }
}

#[derive(Serialize)]
struct AnalyzeOutput<'a> {
    pi: &'a [f64],
    lambda_star: f64,
    g: &'a [f64],
    sigma2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    eta2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tv_limit: Option<f64>,
    config: &'a ExperimentConfig,
}

fn analyze_cmd(cfg: &ExperimentConfig) -> Result<String, Failure> {
    let model = cfg.model.ctmc()?;
    let service = cfg.service()?;
    let analysis = analyze(&model)?;
    let t = if service.is_some() || cfg.tv_limit {
        Some(cfg.require_t()?)
    } else {
        None
    };
    let eta2 = match (service, t) {
        (Some(s), Some(t)) => Some(eta_squared(analysis.sigma2, &s, t)?),
        _ => None,
    };
    let tv_limit = match t {
        Some(t) if cfg.tv_limit => Some(tv_limit_exact(&model, t, cfg.truncation_mass())?),
        _ => None,
    };
    Ok(to_json(&AnalyzeOutput {
        pi: &analysis.pi,
        lambda_star: analysis.lambda_star,
        g: &analysis.g,
        sigma2: analysis.sigma2,
        eta2,
        tv_limit,
        config: cfg,
    }))
}

/// Poisson baseline and, where a first-order theory exists, the corrected pmf.
struct Reference {
    mean: f64,
    poisson: PmfVector,
    corrected: Option<PmfVector>,
}

fn reference(
    cfg: &ExperimentConfig,
    eps: f64,
    t: f64,
    kmax: Option<usize>,
) -> Result<Reference, Failure> {
    if let Some(intensity) = cfg.model.periodic()? {
        let mean = intensity.lambda_star() * t;
        let kmax = kmax.unwrap_or_else(|| default_kmax(mean));
        let corrected = corrected_count_pmf_periodic(&intensity, eps, t, Some(kmax))?;
        return Ok(Reference {
            mean,
            poisson: poisson_pmf(mean, kmax),
            corrected: Some(corrected),
        });
    }
    if let Some(base) = cfg.model.base()? {
        let mean = base.lambda_star()? * t;
        let kmax = kmax.unwrap_or_else(|| default_kmax(mean));
        let poisson = poisson_pmf(mean, kmax);
        // a thinned Poisson stream is exactly Poisson; renewal bases have no
        // first-order theory here
        let corrected = matches!(cfg.model, ModelConfig::Poisson { .. }).then(|| poisson.clone());
        return Ok(Reference {
            mean,
            poisson,
            corrected,
        });
    }
    let model = cfg.model.ctmc()?;
    let analysis = analyze(&model)?;
    let g_x0 = analysis.g_at(model.initial_state());
    match cfg.service()? {
        Some(service) if cfg.kind == Kind::Queue => {
            let mean = mean_q0(analysis.lambda_star, &service, t);
            let kmax = kmax.unwrap_or_else(|| default_kmax(mean));
            let corrected = corrected_queue_pmf(
                analysis.lambda_star,
                g_x0,
                analysis.sigma2,
                &service,
                eps,
                t,
                Some(kmax),
            )?;
            Ok(Reference {
                mean,
                poisson: poisson_pmf(mean, kmax),
                corrected: Some(corrected),
            })
        }
        _ => {
            let inputs = ExpansionInputs::from_analysis(&analysis, &model, t, eps);
            let mean = inputs.mean();
            let kmax = kmax.unwrap_or_else(|| default_kmax(mean));
            let corrected = corrected_count_pmf(&inputs, Some(kmax))?;
            Ok(Reference {
                mean,
                poisson: poisson_pmf(mean, kmax),
                corrected: Some(corrected),
            })
        }
    }
}

fn csv_header(out: &mut String, command: &str, cfg: &ExperimentConfig) {
    let _ = writeln!(out, "# rapid-poisson {command}");
    let _ = writeln!(out, "# config: {}", config_json(cfg));
}

fn fmt_opt(p: Option<f64>) -> String {
    p.map(|p| p.to_string()).unwrap_or_default()
}

fn expand_cmd(cfg: &ExperimentConfig) -> Result<String, Failure> {
    let t = cfg.require_t()?;
    let eps = cfg.require_eps()?;
    let r = reference(cfg, eps, t, cfg.kmax)?;
    let mut out = String::new();
    csv_header(&mut out, "expand", cfg);
    let _ = writeln!(
        out,
        "# mean={} kmax={} poisson_truncation_mass={:e} corrected_truncation_mass={} negative_bins={:?}",
        r.mean,
        r.poisson.kmax,
        r.poisson.truncation_mass,
        r.corrected.as_ref().map(|c| format!("{:e}", c.truncation_mass)).unwrap_or_default(),
        r.corrected.as_ref().map(|c| c.negative_indices.clone()).unwrap_or_default(),
    );
    out.push_str("k,p_poisson,p_corrected\n");
    for k in 0..=r.poisson.kmax {
        let _ = writeln!(
            out,
            "{k},{},{}",
            r.poisson.probs[k],
            fmt_opt(r.corrected.as_ref().map(|c| c.get(k)))
        );
    }
    Ok(out)
}

fn experiment(cfg: &ExperimentConfig, eps: f64, t: f64) -> Result<ExperimentSpec, Failure> {
    if let Some(intensity) = cfg.model.periodic()? {
        return Ok(ExperimentSpec::Periodic { intensity, eps, t });
    }
    if let Some(base) = cfg.model.base()? {
        return Ok(ExperimentSpec::Thinned { base, eps, t });
    }
    let model = cfg.model.ctmc()?;
    Ok(match cfg.service()? {
        Some(service) if cfg.kind == Kind::Queue => ExperimentSpec::Queue {
            model,
            service,
            eps,
            t,
        },
        _ => ExperimentSpec::Cox { model, eps, t },
    })
}

fn simulate_cmd(cfg: &ExperimentConfig) -> Result<String, Failure> {
    let t = cfg.require_t()?;
    let eps = cfg.require_eps()?;
    if eps == 0.0 {
        return Err(ConfigError::new("eps", "simulation needs eps > 0").into());
    }
    let r = reference(cfg, eps, t, cfg.kmax)?;
    let spec = experiment(cfg, eps, t)?;
    let kmax = r.poisson.kmax;
    let est = estimate_pmf(
        &spec,
        cfg.reps(),
        cfg.master_seed(),
        Some(kmax),
        cfg.workers,
    )?;
    let mut out = String::new();
    csv_header(&mut out, "simulate", cfg);
    let _ = writeln!(
        out,
        "# reps={} master_seed={} kmax={} overflow={} mean={}",
        est.reps,
        cfg.master_seed(),
        kmax,
        est.overflow,
        r.mean
    );
    out.push_str("k,p_hat,ci_low,ci_high,p_poisson,p_corrected\n");
    for k in 0..=kmax {
        let _ = writeln!(
            out,
            "{k},{},{},{},{},{}",
            est.probs[k],
            est.ci_low[k],
            est.ci_high[k],
            r.poisson.probs[k],
            fmt_opt(r.corrected.as_ref().map(|c| c.get(k)))
        );
    }
    Ok(out)
}

#[derive(Serialize)]
struct Checks {
    first_order_dominates: bool,
    ratio_nonincreasing: bool,
    marginal_tv_decreasing: bool,
    z: f64,
}

#[derive(Serialize)]
struct ValidateOutput<'a> {
    config: &'a ExperimentConfig,
    config_hash: String,
    checks: Checks,
    report: ResidualReport,
}

fn validate_cmd(cfg: &ExperimentConfig) -> Result<String, Failure> {
    let model = cfg.model.ctmc()?;
    let grid = cfg.require_eps_grid()?;
    let t = cfg.require_t()?;
    let service = match cfg.kind {
        Kind::Queue => cfg.service()?,
        Kind::Count => None,
    };
    let report = convergence_study(
        &model,
        service.as_ref(),
        grid,
        t,
        cfg.reps(),
        cfg.master_seed(),
        cfg.workers,
    )?;
    let checks = Checks {
        first_order_dominates: report.first_order_dominates(VALIDATE_Z),
        ratio_nonincreasing: report.ratio_nonincreasing(VALIDATE_Z),
        marginal_tv_decreasing: report.marginal_tv_decreasing(),
        z: VALIDATE_Z,
    };
    Ok(to_json(&ValidateOutput {
        config: cfg,
        config_hash: config_hash(cfg),
        checks,
        report,
    }))
}

#[derive(Serialize)]
struct TvOutput<'a> {
    tv_limit: f64,
    t: f64,
    truncation_mass: f64,
    config: &'a ExperimentConfig,
}

fn tv_limit_cmd(cfg: &ExperimentConfig) -> Result<String, Failure> {
    let model = cfg.model.ctmc()?;
    let t = cfg.require_t()?;
    let tv_limit = tv_limit_exact(&model, t, cfg.truncation_mass())?;
    Ok(to_json(&TvOutput {
        tv_limit,
        t,
        truncation_mass: cfg.truncation_mass(),
        config: cfg,
    }))
}
