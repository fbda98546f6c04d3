//! Command-line entry points.

use std::path::{Path, PathBuf};

use besov_core::metrics::median;
use besov_core::posterior::{run_chain, ChainState, Model};
use besov_core::prior::sample_prior;
use besov_core::rng::{derive_seed, stream};
use besov_core::{push_forward, LinkFunction, WaveletBasis};
use clap::{Args, Parser, Subcommand};

use crate::config::Config;
use crate::diagnostics::prior_diagnostics;
use crate::io::{self, Provenance};
use crate::study::{check_quality, contraction_study};
use crate::Error;

#[derive(Debug, Parser)]
#[command(name = "besov-density", version, about = "Besov-Laplace priors for density estimation")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug, -vvv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw coefficient trees from the configured prior.
    SamplePrior(Common),
    /// Run one posterior chain on a data file.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Observations, one per line.
        #[arg(long)]
        data: PathBuf,
    },
    /// Contraction-rate study over the configured n grid.
    RateStudy(Common),
    /// Tail, small-ball and decentering tables for prior draws.
    PriorDiagnostics(Common),
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .try_init();
}

/// Reads the config file and applies the seed override.
pub fn load_config(path: &Path, seed: Option<u64>) -> Result<Config, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut config = Config::parse(&text)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

fn provenance(config: &Config) -> Provenance {
    Provenance {
        config_hash: config.hash(),
        seed: config.seed,
    }
}

pub fn run(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::SamplePrior(c) => sample_prior_command(&load_config(&c.config, c.seed)?, &c.out),
        Command::Fit { common, data } => fit_command(&load_config(&common.config, common.seed)?, data, &common.out),
        Command::RateStudy(c) => rate_study_command(&load_config(&c.config, c.seed)?, &c.config, &c.out),
        Command::PriorDiagnostics(c) => diagnostics_command(&load_config(&c.config, c.seed)?, &c.out),
    }
}

/// Writes `draw_<k>.txt` (coefficients) and `draw_<k>_density.csv` for each draw.
pub fn sample_prior_command(config: &Config, out: &Path) -> Result<(), Error> {
    io::ensure_dir(out)?;
    let prov = provenance(config);
    let spec = config.prior_spec()?;
    let family = config.family()?;
    let basis = WaveletBasis::new(family, spec.dimension, config.basis.grid_level)?;
    let link = LinkFunction::new(config.link_kind()?)?;
    for k in 0..config.sample.draws {
        let draw = sample_prior(&spec, &mut stream(derive_seed(config.seed, &[k as u64])))?;
        io::write_tree(&out.join(format!("draw_{k}.txt")), &prov, family, &draw.coeffs, draw.s_drawn)?;
        let w = basis.synthesize(&draw.coeffs)?;
        io::write_density(&out.join(format!("draw_{k}_density.csv")), &prov, &push_forward(&w, &link)?)?;
    }
    log::info!("wrote {} prior draws to {}", config.sample.draws, out.display());
    Ok(())
}

/// Runs one chain with the prior's `n` set to the sample size and writes the
/// posterior mean density, its coefficients and the chain trace.
pub fn fit_command(config: &Config, data_path: &Path, out: &Path) -> Result<(), Error> {
    io::ensure_dir(out)?;
    let prov = provenance(config);
    let mut spec = config.prior_spec()?;
    let data = io::read_data(data_path, spec.dimension)?;
    spec.n = data.n() as u64;
    spec.validate()?;
    let family = config.family()?;
    let basis = WaveletBasis::new(family, spec.dimension, config.basis.grid_level)?;
    let link = LinkFunction::new(config.link_kind()?)?;
    let model = Model::new(basis, link, spec, data)?;
    let mcmc = config.mcmc_config()?;
    let summary = run_chain(&model, &mcmc, None)?;
    if summary.divergent {
        return Err(Error::Numeric("the chain diverged (non-finite log posterior)".into()));
    }
    let mean = summary
        .mean_density
        .as_ref()
        .ok_or_else(|| Error::Numeric("no posterior samples were kept".into()))?;
    let s = median(&summary.s_values());
    let state = ChainState::from_coefficients(&model, summary.mean_coefficients.clone(), s)?;
    io::write_density(&out.join("posterior_mean.csv"), &prov, mean)?;
    io::write_tree(&out.join("posterior_mean_coefficients.txt"), &prov, family, &state.tree(&model), s)?;
    io::write_text(&out.join("chain.csv"), &io::format_chain(&prov, &summary))?;
    io::write_text(&out.join("acceptance.csv"), &io::format_acceptance(&prov, &summary))?;
    if mcmc.record_coefficients {
        io::write_text(&out.join("samples.csv"), &io::format_coefficient_samples(&prov, &summary))?;
    }
    log::info!("kept {} samples; output in {}", summary.samples.len(), out.display());
    Ok(())
}

/// Writes the study files, then applies the exclusion cap.
pub fn rate_study_command(config: &Config, config_path: &Path, out: &Path) -> Result<(), Error> {
    let custom = match config.truth.as_ref().and_then(|t| t.coefficients.as_ref()) {
        Some(file) => {
            let base = config_path.parent().unwrap_or(Path::new("."));
            Some(io::read_tree(&base.join(file))?.tree)
        }
        None => None,
    };
    let study = config.study_config(custom)?;
    let result = contraction_study(&study)?;
    io::write_study(out, &provenance(config), &config.emit(), &result)?;
    log::info!(
        "slope {:.4} over {} sample sizes; {} replicates excluded",
        result.fit.slope,
        result.fit.n_points(),
        result.excluded
    );
    let pairs = result.summaries.len().saturating_sub(1);
    if result.monotone_pairs + 1 < pairs {
        log::warn!("median error decreased in only {} of {pairs} adjacent pairs", result.monotone_pairs);
    }
    check_quality(&study, &result)
}

pub fn diagnostics_command(config: &Config, out: &Path) -> Result<(), Error> {
    let diag = prior_diagnostics(&config.prior_spec()?, config.family()?, &config.diagnostics_config(), config.seed)?;
    io::write_diagnostics(out, &provenance(config), &diag)?;
    let failing = diag.decentering.iter().filter(|r| !r.holds).count();
    if failing > 0 {
        log::warn!("{failing} decentering rows violate the inequality beyond 3 standard errors");
    }
    log::info!("small-ball slope {:.3}", diag.small_ball_fit.slope);
    Ok(())
}
