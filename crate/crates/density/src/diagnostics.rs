//! Monte-Carlo diagnostics of prior draws in the sup norm.
//!
//! Three tables are produced:
//!
//! * tail: `P(||W||_inf > R)` for the configured prior,
//! * small ball: `P(||W||_inf <= xi)` for the unit-scale `t`-regular element
//!   `sum 2^{-l(t+d/2)} W_lr psi_lr` truncated at `l_max`, with a log-log fit of
//!   `-log P` against `xi` (theory: exponent `-d/t`),
//! * decentering: for shifts `w` with weighted norm
//!   `||w||_Z = sum |w_lr| / sigma_l`, the check
//!   `P(||W - w||_inf <= xi) >= exp(-||w||_Z) P(||W||_inf <= xi)`.

use besov_core::metrics::{fit_rate, RateFit};
use besov_core::prior::sample_scaled;
use besov_core::rng::{derive_seed, laplace, stream};
use besov_core::wavelet::{level_size, GridNorm};
use besov_core::{Family, PriorSpec, WaveletBasis};
use rand::Rng;

use crate::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsConfig {
    pub draws: usize,
    /// Radii for the tail table; by default upper quantiles of the sample.
    pub tail_radii: Option<Vec<f64>>,
    pub small_ball_t: f64,
    pub small_ball_l_max: u32,
    pub small_ball_points: usize,
    pub decentering_shifts: usize,
    pub decentering_draws: usize,
    /// Shifts have `||w||_Z` spread evenly over `(0, z_max]`.
    pub decentering_z_max: f64,
    /// Probability level of the centred ball used for the decentering check.
    pub decentering_level: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            draws: 10_000,
            tail_radii: None,
            small_ball_t: 1.0,
            small_ball_l_max: 10,
            small_ball_points: 12,
            decentering_shifts: 20,
            decentering_draws: 10_000,
            decentering_z_max: 2.0,
            decentering_level: 0.3,
        }
    }
}

impl DiagnosticsConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.draws < 1000 || self.decentering_draws < 1000 {
            return Err(Error::Config("diagnostics need at least 1000 draws".into()));
        }
        if !(self.small_ball_t > 0.0) {
            return Err(Error::Config("small-ball regularity t must be positive".into()));
        }
        if self.small_ball_points < 3 {
            return Err(Error::Config("small-ball table needs at least three points".into()));
        }
        if !(self.decentering_level > 0.0 && self.decentering_level < 1.0) {
            return Err(Error::Config("decentering level must lie in (0, 1)".into()));
        }
        if !(self.decentering_z_max > 0.0) {
            return Err(Error::Config("decentering z_max must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbabilityRow {
    /// Radius `R` (tail) or `xi` (small ball).
    pub radius: f64,
    pub probability: f64,
    pub standard_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecenteringRow {
    pub shift: usize,
    pub z_norm: f64,
    pub xi: f64,
    pub shifted: f64,
    pub centred: f64,
    /// `exp(-||w||_Z) * centred`.
    pub bound: f64,
    pub pooled_se: f64,
    /// `shifted >= bound - 3 pooled_se`.
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorDiagnostics {
    pub tail: Vec<ProbabilityRow>,
    pub small_ball: Vec<ProbabilityRow>,
    /// Fit of `log(-log P)` on `log xi`; the slope estimates `-d/t`.
    pub small_ball_fit: RateFit,
    pub decentering: Vec<DecenteringRow>,
}

fn binomial_row(radius: f64, hits: usize, total: usize) -> ProbabilityRow {
    let p = hits as f64 / total as f64;
    ProbabilityRow {
        radius,
        probability: p,
        standard_error: (p * (1.0 - p) / total as f64).sqrt(),
    }
}

/// Sup norms on the grid of `draws` independent expansions with level scalings `scales`.
pub fn sup_norm_sample<R: Rng + ?Sized>(basis: &WaveletBasis, scales: &[f64], draws: usize, rng: &mut R) -> Vec<f64> {
    let d = basis.dimension();
    (0..draws)
        .map(|_| {
            let levels: Vec<Vec<f64>> = scales
                .iter()
                .enumerate()
                .map(|(i, &s)| (0..level_size(d, i as u32 + 1)).map(|_| s * laplace(rng)).collect())
                .collect();
            basis.synthesize_levels(&levels).norm(GridNorm::Sup)
        })
        .collect()
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let i = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[i]
}

/// Tail probabilities `P(||W||_inf > R)`.
pub fn tail_table(sups: &[f64], radii: &[f64]) -> Vec<ProbabilityRow> {
    radii
        .iter()
        .map(|&r| binomial_row(r, sups.iter().filter(|&&s| s > r).count(), sups.len()))
        .collect()
}

/// Small-ball probabilities at `points` radii whose probabilities are spread
/// geometrically over `[max(0.001, 50/N), 0.5]`, and the fit of
/// `log(-log P)` on `log xi`.
pub fn small_ball_table(sups: &[f64], points: usize) -> Result<(Vec<ProbabilityRow>, RateFit), Error> {
    let s = sorted(sups.to_vec());
    let lo = (50.0 / s.len() as f64).max(0.001);
    let hi = 0.5;
    let rows: Vec<ProbabilityRow> = (0..points)
        .map(|k| {
            let p = lo * (hi / lo).powf(k as f64 / (points - 1) as f64);
            let xi = quantile(&s, p);
            binomial_row(xi, s.iter().filter(|&&v| v <= xi).count(), s.len())
        })
        .collect();
    let pairs: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.probability > 0.0 && r.probability < 1.0)
        .map(|r| (r.radius, -r.probability.ln()))
        .collect();
    let fit = fit_rate(&pairs)?;
    Ok((rows, fit))
}

pub fn prior_diagnostics(spec: &PriorSpec, family: Family, config: &DiagnosticsConfig, seed: u64) -> Result<PriorDiagnostics, Error> {
    config.validate()?;
    spec.validate()?;
    let d = spec.dimension;

    // tail of the configured prior
    let levels = spec.effective_max_level();
    let basis = WaveletBasis::new(family, d, levels + 1)?;
    let scales: Vec<f64> = (1..=levels).map(|l| spec.scaling_factor(l)).collect();
    let sups = sorted(sup_norm_sample(&basis, &scales, config.draws, &mut stream(derive_seed(seed, &[1]))));
    let radii = match &config.tail_radii {
        Some(r) => r.clone(),
        None => [0.5, 0.75, 0.9, 0.95, 0.99, 0.995, 0.999]
            .iter()
            .map(|&p| quantile(&sups, p))
            .collect(),
    };
    let tail = tail_table(&sups, &radii);

    // small balls of the unit-scale t-regular element
    let t = config.small_ball_t;
    let ball_basis = WaveletBasis::new(family, d, config.small_ball_l_max + 1)?;
    let unit: Vec<f64> = (1..=config.small_ball_l_max)
        .map(|l| libm::exp2(-(l as f64) * (t + d as f64 / 2.0)))
        .collect();
    let ball_sups = sup_norm_sample(&ball_basis, &unit, config.draws, &mut stream(derive_seed(seed, &[2])));
    let (small_ball, small_ball_fit) = small_ball_table(&ball_sups, config.small_ball_points)?;

    let decentering = decentering_rows(spec, &basis, &scales, config, seed)?;
    Ok(PriorDiagnostics {
        tail,
        small_ball,
        small_ball_fit,
        decentering,
    })
}

fn decentering_rows(
    spec: &PriorSpec,
    basis: &WaveletBasis,
    scales: &[f64],
    config: &DiagnosticsConfig,
    seed: u64,
) -> Result<Vec<DecenteringRow>, Error> {
    let d = spec.dimension;
    let levels = scales.len() as u32;
    let mut shift_rng = stream(derive_seed(seed, &[3]));
    let mut shifts = Vec::with_capacity(config.decentering_shifts);
    for k in 0..config.decentering_shifts {
        let z = config.decentering_z_max * (k + 1) as f64 / config.decentering_shifts as f64;
        // direction drawn from the prior, rescaled to the target weighted norm
        let tree = sample_scaled(d, levels, |l| scales[l as usize - 1], &mut shift_rng);
        let norm = besov_core::prior::z_norm(&tree, spec);
        let mut scaled = tree.clone();
        for (l, r, c) in tree.iter() {
            scaled.insert(l, r, c * z / norm)?;
        }
        let z_exact = besov_core::prior::z_norm(&scaled, spec);
        shifts.push((z_exact, basis.synthesize(&scaled)?.into_values()));
    }
    let mut draw_rng = stream(derive_seed(seed, &[4]));
    let mut centred_sups = Vec::with_capacity(config.decentering_draws);
    let mut shifted_sups = vec![Vec::with_capacity(config.decentering_draws); shifts.len()];
    for _ in 0..config.decentering_draws {
        let levels_v: Vec<Vec<f64>> = scales
            .iter()
            .enumerate()
            .map(|(i, &s)| (0..level_size(d, i as u32 + 1)).map(|_| s * laplace(&mut draw_rng)).collect())
            .collect();
        let w = basis.synthesize_levels(&levels_v);
        let values = w.values();
        centred_sups.push(values.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        for (k, (_, shift)) in shifts.iter().enumerate() {
            let sup = values
                .iter()
                .zip(shift)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            shifted_sups[k].push(sup);
        }
    }
    let xi = quantile(&sorted(centred_sups.clone()), config.decentering_level);
    let m = config.decentering_draws;
    let centred = binomial_row(xi, centred_sups.iter().filter(|&&v| v <= xi).count(), m);
    Ok(shifts
        .iter()
        .enumerate()
        .map(|(k, (z, _))| {
            let shifted = binomial_row(xi, shifted_sups[k].iter().filter(|&&v| v <= xi).count(), m);
            let factor = (-z).exp();
            let bound = factor * centred.probability;
            let pooled_se = (shifted.standard_error.powi(2) + (factor * centred.standard_error).powi(2)).sqrt();
            DecenteringRow {
                shift: k + 1,
                z_norm: *z,
                xi,
                shifted: shifted.probability,
                centred: centred.probability,
                bound,
                pooled_se,
                holds: shifted.probability >= bound - 3.0 * pooled_se,
            }
        })
        .collect())
}
