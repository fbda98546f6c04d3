//! Contraction-rate studies over a grid of sample sizes.
//!
//! For every `(n, replicate)` pair the study simulates `n` points from the
//! truth, runs one chain and records the posterior median of
//! `d_TV(p, p0)` over the kept samples. The per-`n` medians across replicates
//! are regressed on `n` in log-log space.
//!
//! Seeds: the truth uses `derive_seed(seed, [TRUTH])`; replicate `(n, r)`
//! uses `derive_seed(seed, [n, r])`, from which the data stream (label 1) and
//! the chain seed (label 2) are derived. Results do not depend on the order
//! in which replicates are scheduled.

use std::time::Instant;

use besov_core::metrics::{fit_rate, median, tv_distance, RateFit};
use besov_core::posterior::{run_chain, McmcConfig, Model};
use besov_core::rng::{derive_seed, stream};
use besov_core::{Family, LinkFunction, PriorSpec, WaveletBasis};
use besov_core::link::LinkKind;
use rayon::prelude::*;

use crate::truth::{make_truth, simulate_data, Truth, TruthSpec};
use crate::Error;

const TRUTH_LABEL: u64 = 0x7472_7574;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorSummary {
    /// Posterior median of `d_TV(p, p0)` over kept samples.
    PosteriorMedianTv,
    /// `d_TV` between the posterior mean density and `p0`.
    PosteriorMeanTv,
}

/// Replaces the chains by an exact power law `constant * n^exponent`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bypass {
    pub constant: f64,
    pub exponent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub truth: TruthSpec,
    /// Prior template; its `n` is replaced by each grid value.
    pub prior: PriorSpec,
    pub family: Family,
    pub grid_level: u32,
    pub link: LinkKind,
    pub n_grid: Vec<u64>,
    pub replicates: usize,
    pub mcmc: McmcConfig,
    pub error: ErrorSummary,
    pub seed: u64,
    pub bypass: Option<Bypass>,
    /// Largest tolerated fraction of excluded (divergent) replicates.
    pub max_exclusion: f64,
}

impl StudyConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.n_grid.len() < 3 {
            return Err(Error::Config("n_grid needs at least three sample sizes".into()));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("n_grid must be strictly increasing".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.max_exclusion) {
            return Err(Error::Config("max_exclusion must lie in [0, 1]".into()));
        }
        self.prior.validate()?;
        self.mcmc.validate()?;
        Ok(())
    }
}

/// One `(n, replicate)` run.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRecord {
    pub n: u64,
    pub replicate: usize,
    pub seed: u64,
    /// Error functional selected in the config (NaN when excluded).
    pub error: f64,
    /// Posterior median of `d_TV` over kept samples.
    pub median_tv: f64,
    /// `d_TV` of the posterior mean density.
    pub mean_density_tv: f64,
    /// Acceptance rate over all coefficient proposals after burn-in.
    pub acceptance: f64,
    pub s_acceptance: Option<f64>,
    pub posterior_median_s: Option<f64>,
    pub divergent: bool,
    pub kept: usize,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NSummary {
    pub n: u64,
    pub median_error: f64,
    pub used: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyResult {
    pub records: Vec<ReplicateRecord>,
    pub summaries: Vec<NSummary>,
    pub fit: RateFit,
    pub excluded: usize,
    /// Adjacent `n` pairs whose median error does not increase.
    pub monotone_pairs: usize,
}

impl StudyResult {
    pub fn exclusion_fraction(&self) -> f64 {
        self.excluded as f64 / self.records.len().max(1) as f64
    }
}

/// Builds the truth shared by every replicate of a study.
pub fn study_truth(config: &StudyConfig) -> Result<(Truth, WaveletBasis), Error> {
    let basis = WaveletBasis::new(config.family, config.prior.dimension, config.grid_level)?;
    let mut spec = config.truth.clone();
    spec.seed = derive_seed(config.seed, &[TRUTH_LABEL]);
    Ok((make_truth(&spec, &basis)?, basis))
}

/// Runs the study; fails with [`Error::Quality`] only through
/// [`check_quality`], so callers can persist results first.
pub fn contraction_study(config: &StudyConfig) -> Result<StudyResult, Error> {
    config.validate()?;
    let jobs: Vec<(u64, usize)> = config
        .n_grid
        .iter()
        .flat_map(|&n| (0..config.replicates).map(move |r| (n, r)))
        .collect();
    let records: Vec<ReplicateRecord> = match config.bypass {
        Some(b) => jobs
            .iter()
            .map(|&(n, r)| bypass_record(config, b, n, r))
            .collect(),
        None => {
            let (truth, basis) = study_truth(config)?;
            let link = LinkFunction::new(config.link)?;
            jobs.par_iter()
                .map(|&(n, r)| run_replicate(config, &truth, &basis, &link, n, r))
                .collect::<Result<_, Error>>()?
        }
    };
    aggregate(config, records)
}

fn bypass_record(config: &StudyConfig, b: Bypass, n: u64, r: usize) -> ReplicateRecord {
    let e = b.constant * (n as f64).powf(b.exponent);
    ReplicateRecord {
        n,
        replicate: r,
        seed: derive_seed(config.seed, &[n, r as u64]),
        error: e,
        median_tv: e,
        mean_density_tv: e,
        acceptance: f64::NAN,
        s_acceptance: None,
        posterior_median_s: None,
        divergent: false,
        kept: 0,
        wall_seconds: 0.0,
    }
}

/// One replicate: simulate, sample, summarize.
pub fn run_replicate(
    config: &StudyConfig,
    truth: &Truth,
    basis: &WaveletBasis,
    link: &LinkFunction,
    n: u64,
    replicate: usize,
) -> Result<ReplicateRecord, Error> {
    let started = Instant::now();
    let seed = derive_seed(config.seed, &[n, replicate as u64]);
    let data = simulate_data(&truth.density, n as usize, &mut stream(derive_seed(seed, &[1])))?;
    let spec = PriorSpec { n, ..config.prior };
    let model = Model::new(basis.clone(), link.clone(), spec, data)?;
    let mcmc = McmcConfig {
        seed: derive_seed(seed, &[2]),
        ..config.mcmc.clone()
    };
    let summary = run_chain(&model, &mcmc, Some(&truth.density))?;
    let tvs = summary.tv_values();
    let median_tv = median(&tvs).unwrap_or(f64::NAN);
    let mean_density_tv = match &summary.mean_density {
        Some(d) => tv_distance(d, &truth.density)?,
        None => f64::NAN,
    };
    let (proposed, accepted) = summary
        .acceptance
        .iter()
        .fold((0u64, 0u64), |(p, a), l| (p + l.proposed, a + l.accepted));
    let divergent = summary.divergent || !median_tv.is_finite();
    let error = if divergent {
        f64::NAN
    } else {
        match config.error {
            ErrorSummary::PosteriorMedianTv => median_tv,
            ErrorSummary::PosteriorMeanTv => mean_density_tv,
        }
    };
    Ok(ReplicateRecord {
        n,
        replicate,
        seed,
        error,
        median_tv,
        mean_density_tv,
        acceptance: if proposed > 0 { accepted as f64 / proposed as f64 } else { f64::NAN },
        s_acceptance: summary.s_acceptance,
        posterior_median_s: median(&summary.s_values()),
        divergent,
        kept: summary.samples.len(),
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

fn aggregate(config: &StudyConfig, records: Vec<ReplicateRecord>) -> Result<StudyResult, Error> {
    let mut summaries = Vec::new();
    let mut excluded = 0;
    for &n in &config.n_grid {
        let errors: Vec<f64> = records
            .iter()
            .filter(|r| r.n == n && !r.divergent)
            .map(|r| r.error)
            .collect();
        let dropped = records.iter().filter(|r| r.n == n && r.divergent).count();
        excluded += dropped;
        summaries.push(NSummary {
            n,
            median_error: median(&errors).unwrap_or(f64::NAN),
            used: errors.len(),
            excluded: dropped,
        });
    }
    let pairs: Vec<(f64, f64)> = summaries
        .iter()
        .filter(|s| s.median_error.is_finite())
        .map(|s| (s.n as f64, s.median_error))
        .collect();
    let fit = fit_rate(&pairs).map_err(|e| Error::Numeric(format!("rate fit failed: {e}")))?;
    let monotone_pairs = summaries
        .windows(2)
        .filter(|w| w[1].median_error <= w[0].median_error)
        .count();
    Ok(StudyResult {
        records,
        summaries,
        fit,
        excluded,
        monotone_pairs,
    })
}

/// Errors when more replicates than allowed were excluded.
pub fn check_quality(config: &StudyConfig, result: &StudyResult) -> Result<(), Error> {
    let fraction = result.exclusion_fraction();
    if fraction > config.max_exclusion {
        return Err(Error::Quality(format!(
            "{} of {} replicates excluded ({:.0}% > {:.0}%)",
            result.excluded,
            result.records.len(),
            100.0 * fraction,
            100.0 * config.max_exclusion
        )));
    }
    Ok(())
}
