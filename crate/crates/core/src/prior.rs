//! Laplace prior regimes on wavelet coefficients and the smoothness hyper-prior.
//!
//! A prior draw is `W = sum_{l,r} sigma_l W_lr psi_lr` with `W_lr` i.i.d.
//! standard Laplace. The regimes differ only in the level scalings `sigma_l`
//! and in where the series is cut:
//!
//! | regime | `sigma_l` | levels |
//! |---|---|---|
//! | rescaled under-smoothing | `2^{-l(s-d/2)} n^{-d/(2s+d)}` | `1..=L_max` |
//! | partially rescaled | `2^{-l(s-d/2)}`, times `n^{-d/(2s+d)}/log n` above `L_n` | `1..=L_max` |
//! | truncated | `2^{-l(s+d/2)}` | `1..=L_n` |
//! | hierarchical (truncated) | `2^{-l(S+d/2)}`, `S ~ sigma_n` | `1..=L_{S,n}` |
//! | hierarchical rescaled | `2^{-l(S-d/2)} n^{-d/(2S+d)}`, `S ~ sigma_n` | `1..=L_max` |
//!
//! with `2^{L_n}` the smallest dyadic power not below `n^{1/(2s+d)}`.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::quad;
use crate::rng;
use crate::wavelet::{level_size, CoefficientTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    RescaledUndersmoothing,
    PartiallyRescaled,
    Truncated,
    /// Truncated prior with random smoothness `S`.
    Hierarchical,
    /// Rescaled under-smoothing prior with random smoothness `S`.
    HierarchicalRescaled,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::RescaledUndersmoothing => "rescaled-undersmoothing",
            Regime::PartiallyRescaled => "partially-rescaled",
            Regime::Truncated => "truncated",
            Regime::Hierarchical => "hierarchical",
            Regime::HierarchicalRescaled => "hierarchical-rescaled",
        }
    }

    pub fn parse(name: &str) -> Option<Regime> {
        [
            Regime::RescaledUndersmoothing,
            Regime::PartiallyRescaled,
            Regime::Truncated,
            Regime::Hierarchical,
            Regime::HierarchicalRescaled,
        ]
        .into_iter()
        .find(|r| r.name() == name)
    }

    pub fn is_hierarchical(self) -> bool {
        matches!(self, Regime::Hierarchical | Regime::HierarchicalRescaled)
    }

    /// Whether the series stops at the statistical truncation level.
    pub fn is_truncated(self) -> bool {
        matches!(self, Regime::Truncated | Regime::Hierarchical)
    }
}

/// A prior regime with its parameters. For the hierarchical regimes `s` is
/// the current value of the smoothness `S`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorSpec {
    pub regime: Regime,
    pub s: f64,
    pub dimension: u32,
    pub n: u64,
    pub l_max: u32,
}

impl PriorSpec {
    pub fn new(regime: Regime, s: f64, dimension: u32, n: u64, l_max: u32) -> Result<Self> {
        let spec = Self {
            regime,
            s,
            dimension,
            n,
            l_max,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.dimension) {
            return Err(Error::InvalidSpec(format!(
                "dimension must be 1 or 2, got {}",
                self.dimension
            )));
        }
        if !(self.s > self.dimension as f64) || !self.s.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "regularity s = {} must exceed the dimension d = {} (s > d)",
                self.s, self.dimension
            )));
        }
        if self.n < 2 {
            return Err(Error::InvalidSpec(format!("sample size n = {} must be at least 2", self.n)));
        }
        if self.l_max == 0 || self.l_max > 24 {
            return Err(Error::InvalidSpec(format!("l_max = {} must lie in 1..=24", self.l_max)));
        }
        if self.regime.is_hierarchical() && libm::log(self.n as f64) <= self.dimension as f64 {
            return Err(Error::EmptySupport {
                log_n: libm::log(self.n as f64),
                d: self.dimension,
            });
        }
        Ok(())
    }

    /// Same spec with a different smoothness value.
    pub fn with_s(self, s: f64) -> Self {
        Self { s, ..self }
    }

    fn d(&self) -> f64 {
        self.dimension as f64
    }

    /// `n^{-d/(2s+d)}`.
    fn rescaling(&self) -> f64 {
        libm::pow(self.n as f64, -self.d() / (2.0 * self.s + self.d()))
    }

    /// Regularity `t` of the draws: `s - d` for the rescaled regimes, `s` for
    /// the truncated ones.
    pub fn regularity(&self) -> f64 {
        if self.regime.is_truncated() {
            self.s
        } else {
            self.s - self.d()
        }
    }

    /// `L_n` for this spec's `s`, capped at `l_max`.
    pub fn truncation_level(&self) -> u32 {
        truncation_level(self.s, self.dimension, self.n).min(self.l_max)
    }

    /// Highest level carrying prior mass.
    pub fn effective_max_level(&self) -> u32 {
        if self.regime.is_truncated() {
            self.truncation_level()
        } else {
            self.l_max
        }
    }

    /// `sigma_{n,lr}` at level `l` (identical for all `r`).
    pub fn scaling_factor(&self, level: u32) -> f64 {
        let l = level as f64;
        let d = self.d();
        let s = self.s;
        match self.regime {
            Regime::RescaledUndersmoothing | Regime::HierarchicalRescaled => {
                libm::exp2(-l * (s - d / 2.0)) * self.rescaling()
            }
            Regime::PartiallyRescaled => {
                let base = libm::exp2(-l * (s - d / 2.0));
                if level <= truncation_level(s, self.dimension, self.n) {
                    base
                } else {
                    base * self.rescaling() / libm::log(self.n as f64)
                }
            }
            Regime::Truncated | Regime::Hierarchical => {
                if level <= self.truncation_level() {
                    libm::exp2(-l * (s + d / 2.0))
                } else {
                    0.0
                }
            }
        }
    }

    /// Scaling without the truncation cut: for the truncated regimes this is
    /// `2^{-l(s+d/2)}` at every level. The hierarchical sampler uses it as the
    /// pseudo-prior of the coefficients above `L_{S,n}`.
    pub fn untruncated_scaling(&self, level: u32) -> f64 {
        if self.regime.is_truncated() {
            libm::exp2(-(level as f64) * (self.s + self.d() / 2.0))
        } else {
            self.scaling_factor(level)
        }
    }

    /// Scaling of the unit-scale `t`-regular element, `2^{-l(t+d/2)}`, with
    /// `t` the regularity of this spec.
    pub fn unit_scaling(&self, level: u32) -> f64 {
        libm::exp2(-(level as f64) * (self.regularity() + self.d() / 2.0))
    }

    /// Number of coefficients carrying prior mass.
    pub fn dimension_of_support(&self) -> usize {
        (1..=self.effective_max_level())
            .map(|l| level_size(self.dimension, l))
            .sum()
    }
}

/// `sigma_{n,lr}` for `spec` at level `l`.
pub fn scaling_factor(spec: &PriorSpec, level: u32) -> f64 {
    spec.scaling_factor(level)
}

/// Smallest `L >= 1` with `2^L >= n^{1/(2s+d)}`.
pub fn truncation_level(s: f64, d: u32, n: u64) -> u32 {
    let exponent = libm::log2(n as f64) / (2.0 * s + d as f64);
    (libm::ceil(exponent - 1e-12) as i64).max(1) as u32
}

/// A draw from a prior regime.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorDraw {
    pub coeffs: CoefficientTree,
    /// Drawn smoothness (hierarchical regimes only).
    pub s_drawn: Option<f64>,
    /// The spec the coefficients were drawn from (with `s = S` when hierarchical).
    pub spec: PriorSpec,
}

/// Draws `c_lr = sigma_l W_lr` with `W_lr` standard Laplace; hierarchical
/// regimes first draw `S` from the hyper-prior.
pub fn sample_prior<R: Rng + ?Sized>(spec: &PriorSpec, rng: &mut R) -> Result<PriorDraw> {
    spec.validate()?;
    let (spec, s_drawn) = if spec.regime.is_hierarchical() {
        let hyper = HyperPrior::new(spec.n as f64, spec.dimension)?;
        let s = hyper.sample(rng);
        (spec.with_s(s), Some(s))
    } else {
        (*spec, None)
    };
    let max_level = spec.effective_max_level();
    let coeffs = sample_scaled(spec.dimension, max_level, |l| spec.scaling_factor(l), rng);
    Ok(PriorDraw {
        coeffs,
        s_drawn,
        spec,
    })
}

/// Draws a Laplace expansion with arbitrary level scalings on levels `1..=max_level`.
pub fn sample_scaled<R: Rng + ?Sized>(
    dimension: u32,
    max_level: u32,
    scaling: impl Fn(u32) -> f64,
    rng: &mut R,
) -> CoefficientTree {
    let levels: Vec<Vec<f64>> = (1..=max_level)
        .map(|l| {
            let sigma = scaling(l);
            (0..level_size(dimension, l))
                .map(|_| sigma * rng::laplace(rng))
                .collect()
        })
        .collect();
    CoefficientTree::from_levels(dimension, &levels).expect("level sizes match by construction")
}

/// Log density of the product of Laplace laws over the truncated index set,
/// `sum_{l,r} [-|c_lr|/sigma_l - log(2 sigma_l)]`.
///
/// Returns `-inf` when a nonzero coefficient sits on a level without prior mass.
pub fn log_prior_density(coeffs: &CoefficientTree, spec: &PriorSpec) -> f64 {
    let max_level = spec.effective_max_level();
    let mut abs_sums = alloc::vec![0.0; max_level as usize];
    for (l, _, c) in coeffs.iter() {
        if l > max_level {
            if c != 0.0 {
                return f64::NEG_INFINITY;
            }
            continue;
        }
        abs_sums[l as usize - 1] += c.abs();
    }
    (1..=max_level)
        .map(|l| {
            let sigma = spec.scaling_factor(l);
            -abs_sums[l as usize - 1] / sigma
                - level_size(spec.dimension, l) as f64 * libm::log(2.0 * sigma)
        })
        .sum()
}

/// Weighted `l^1` norm `sum |w_lr| / sigma_l` of the decentering space.
pub fn z_norm(coeffs: &CoefficientTree, spec: &PriorSpec) -> f64 {
    coeffs
        .iter()
        .map(|(l, _, c)| {
            if c == 0.0 {
                0.0
            } else {
                let sigma = spec.scaling_factor(l);
                if sigma > 0.0 {
                    c.abs() / sigma
                } else {
                    f64::INFINITY
                }
            }
        })
        .sum()
}

/// Number of abscissae of the tabulated hyper-prior CDF.
pub const HYPERPRIOR_TABLE_POINTS: usize = 10_000;

/// Hyper-prior on the smoothness, with density
/// `sigma_n(s) = exp(-n^{d/(2s+d)}) / zeta_n` on `(d, log n]`.
///
/// `n` is real so that the support endpoints can be placed exactly.
#[derive(Debug, Clone)]
pub struct HyperPrior {
    n: f64,
    dimension: u32,
    zeta: f64,
    abscissae: Vec<f64>,
    cdf: Vec<f64>,
}

fn unnormalized_hyper_density(n: f64, d: f64, s: f64) -> f64 {
    libm::exp(-libm::pow(n, d / (2.0 * s + d)))
}

/// `zeta_n = int_d^{log n} exp(-n^{d/(2s+d)}) ds`.
pub fn hyperprior_normalizer(n: f64, dimension: u32) -> Result<f64> {
    let d = dimension as f64;
    let hi = libm::log(n);
    if !(hi > d) {
        return Err(Error::EmptySupport { log_n: hi, d: dimension });
    }
    let f = |s: f64| unnormalized_hyper_density(n, d, s);
    Ok(quad::adaptive_simpson(&f, d, hi, 1e-14))
}

impl HyperPrior {
    pub fn new(n: f64, dimension: u32) -> Result<Self> {
        let zeta = hyperprior_normalizer(n, dimension)?;
        let d = dimension as f64;
        let hi = libm::log(n);
        let f = |s: f64| unnormalized_hyper_density(n, d, s);
        let step = (hi - d) / (HYPERPRIOR_TABLE_POINTS - 1) as f64;
        let abscissae: Vec<f64> = (0..HYPERPRIOR_TABLE_POINTS)
            .map(|i| if i + 1 == HYPERPRIOR_TABLE_POINTS { hi } else { d + i as f64 * step })
            .collect();
        let mut cdf = Vec::with_capacity(HYPERPRIOR_TABLE_POINTS);
        let mut acc = 0.0;
        cdf.push(0.0);
        for w in abscissae.windows(2) {
            acc += quad::gauss_legendre5(&f, w[0], w[1]);
            cdf.push(acc);
        }
        cdf.iter_mut().for_each(|c| *c /= acc);
        Ok(Self {
            n,
            dimension,
            zeta,
            abscissae,
            cdf,
        })
    }

    pub fn n(&self) -> f64 {
        self.n
    }

    pub fn dimension(&self) -> u32 {
        self.dimension
    }

    pub fn normalizer(&self) -> f64 {
        self.zeta
    }

    /// Support `(d, log n]` as `(lower, upper)`.
    pub fn support(&self) -> (f64, f64) {
        (self.dimension as f64, libm::log(self.n))
    }

    pub fn contains(&self, s: f64) -> bool {
        let (lo, hi) = self.support();
        s > lo && s <= hi
    }

    pub fn density(&self, s: f64) -> f64 {
        if self.contains(s) {
            unnormalized_hyper_density(self.n, self.dimension as f64, s) / self.zeta
        } else {
            0.0
        }
    }

    pub fn log_density(&self, s: f64) -> f64 {
        if self.contains(s) {
            -libm::pow(self.n, self.dimension as f64 / (2.0 * s + self.dimension as f64))
                - libm::log(self.zeta)
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Tabulated CDF with linear interpolation.
    pub fn cdf(&self, s: f64) -> f64 {
        let (lo, hi) = self.support();
        if s <= lo {
            return 0.0;
        }
        if s >= hi {
            return 1.0;
        }
        let i = self.abscissae.partition_point(|&a| a <= s) - 1;
        let (a0, a1) = (self.abscissae[i], self.abscissae[i + 1]);
        let t = (s - a0) / (a1 - a0);
        self.cdf[i] + t * (self.cdf[i + 1] - self.cdf[i])
    }

    /// Inverse of the tabulated CDF.
    pub fn quantile(&self, u: f64) -> f64 {
        let i = (self.cdf.partition_point(|&c| c <= u)).clamp(1, self.cdf.len() - 1) - 1;
        let (c0, c1) = (self.cdf[i], self.cdf[i + 1]);
        let t = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        self.abscissae[i] + t * (self.abscissae[i + 1] - self.abscissae[i])
    }

    /// Inverse-CDF draw; always inside `(d, log n]`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (lo, hi) = self.support();
        let s = self.quantile(rng::open_unit(rng));
        if s <= lo {
            libm::nextafter(lo, hi)
        } else {
            s.min(hi)
        }
    }
}

/// Draw from the hyper-prior with sample size `n`.
pub fn sample_hyperprior<R: Rng + ?Sized>(n: u64, dimension: u32, rng: &mut R) -> Result<f64> {
    Ok(HyperPrior::new(n as f64, dimension)?.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn rescaled_scaling_value() {
        let spec = PriorSpec::new(Regime::RescaledUndersmoothing, 2.0, 1, 1000, 12).unwrap();
        // 2^{-1.5} * 1000^{-0.2}, 30-digit arithmetic
        assert!((spec.scaling_factor(1) - 0.088_808_596_464_545_11).abs() < 1e-15);
    }

    #[test]
    fn truncated_vanishes_above_ln() {
        let spec = PriorSpec::new(Regime::Truncated, 2.0, 1, 1024, 12).unwrap();
        assert_eq!(spec.truncation_level(), 2);
        assert!(spec.scaling_factor(2) > 0.0);
        assert_eq!(spec.scaling_factor(3), 0.0);
        assert_eq!(spec.scaling_factor(12), 0.0);
    }

    #[test]
    fn partial_rescaling_jump() {
        let spec = PriorSpec::new(Regime::PartiallyRescaled, 2.0, 1, 100_000, 12).unwrap();
        let ln = spec.truncation_level();
        let ratio = spec.scaling_factor(ln + 1) / spec.scaling_factor(ln);
        let expected = libm::exp2(-1.5) * libm::pow(1e5, -0.2) / libm::log(1e5);
        assert!((ratio - expected).abs() < 1e-15);
    }

    #[test]
    fn truncation_levels() {
        assert_eq!(truncation_level(2.0, 1, 1024), 2);
        assert_eq!(truncation_level(2.0, 1, 2), 1);
        assert_eq!(truncation_level(2.0, 1, 100_000), 4);
        assert_eq!(truncation_level(5.0, 1, 2), 1);
    }

    #[test]
    fn rejects_s_not_above_d() {
        let err = PriorSpec::new(Regime::Truncated, 0.5, 1, 1000, 8).unwrap_err();
        assert!(alloc::format!("{err}").contains("s > d"));
        assert!(PriorSpec::new(Regime::Truncated, 2.0, 2, 1000, 8).is_err());
    }

    #[test]
    fn draws_are_reproducible_and_truncated() {
        let spec = PriorSpec::new(Regime::Truncated, 2.0, 1, 100_000, 12).unwrap();
        let a = sample_prior(&spec, &mut stream(5)).unwrap();
        let b = sample_prior(&spec, &mut stream(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.coeffs.max_level(), 4);
        assert!(a.coeffs.iter().all(|(l, _, _)| l <= 4));
        let h = PriorSpec::new(Regime::Hierarchical, 2.0, 1, 100_000, 12).unwrap();
        let draw = sample_prior(&h, &mut stream(9)).unwrap();
        let s = draw.s_drawn.unwrap();
        assert!(s > 1.0 && s <= libm::log(1e5));
        assert_eq!(draw.coeffs.max_level(), truncation_level(s, 1, 100_000).min(12));
    }

    #[test]
    fn log_prior_zero_tree() {
        // sigma = 1 on one level of two coefficients: s with 2^{-(s+1/2)} = 1 is
        // impossible, so build the constant from the formula directly.
        let spec = PriorSpec::new(Regime::Truncated, 2.0, 1, 1024, 12).unwrap();
        let zero = CoefficientTree::new(1);
        let expected: f64 = (1..=2)
            .map(|l| -(level_size(1, l) as f64) * libm::log(2.0 * spec.scaling_factor(l)))
            .sum();
        assert!((log_prior_density(&zero, &spec) - expected).abs() < 1e-12);
        let mut above = CoefficientTree::new(1);
        above.insert(3, 1, 0.1).unwrap();
        assert_eq!(log_prior_density(&above, &spec), f64::NEG_INFINITY);
    }

    #[test]
    fn log_prior_matches_per_coefficient_loop() {
        let spec = PriorSpec::new(Regime::PartiallyRescaled, 1.7, 1, 5000, 7).unwrap();
        let draw = sample_prior(&spec, &mut stream(2)).unwrap();
        let mut brute = 0.0;
        for l in 1..=7u32 {
            for r in 1..=level_size(1, l) {
                let sigma = spec.scaling_factor(l);
                brute += -draw.coeffs.get(l, r).abs() / sigma - libm::log(2.0 * sigma);
            }
        }
        let v = log_prior_density(&draw.coeffs, &spec);
        assert!((v - brute).abs() <= 1e-12 * brute.abs());
    }

    #[test]
    fn hyperprior_normalizer_regression() {
        // 30-digit adaptive quadrature values of zeta_n
        let frozen = [
            (1e3, 0.620_819_009_939_586_4),
            (1e4, 0.794_124_741_521_577_3),
            (1e5, 0.967_689_215_249_785_8),
            (1e6, 1.141_386_908_423_579_3),
            (1e7, 1.315_161_698_568_035_3),
        ];
        for (n, zeta) in frozen {
            let v = hyperprior_normalizer(n, 1).unwrap();
            assert!(((v - zeta) / zeta).abs() < 1e-8, "n={n}: {v}");
            let ratio = v / libm::log(n);
            assert!((0.08..0.09).contains(&ratio));
        }
    }

    #[test]
    fn hyperprior_small_support() {
        let n = libm::exp(2.0);
        let zeta = hyperprior_normalizer(n, 1).unwrap();
        assert!(zeta <= libm::exp(-1.0));
        // brute-force Riemann sum with 10^6 midpoints
        let m = 1_000_000;
        let h = 1.0 / m as f64;
        let riemann: f64 = (0..m)
            .map(|i| {
                let s = 1.0 + (i as f64 + 0.5) * h;
                libm::exp(-libm::pow(n, 1.0 / (2.0 * s + 1.0)))
            })
            .sum::<f64>()
            * h;
        assert!(((zeta - riemann) / riemann).abs() < 1e-6);
        assert!(matches!(
            hyperprior_normalizer(2.0, 1),
            Err(Error::EmptySupport { .. })
        ));
    }

    #[test]
    fn hyperprior_density_properties() {
        let hp = HyperPrior::new(1e4, 1).unwrap();
        let (lo, hi) = hp.support();
        let total = quad::adaptive_simpson(&|s| hp.density(s), lo + 1e-15, hi, 1e-12);
        assert!((total - 1.0).abs() < 1e-6);
        let mut prev = 0.0;
        for i in 1..=100 {
            let s = lo + (hi - lo) * i as f64 / 100.0;
            let v = hp.density(s);
            assert!(v > prev);
            prev = v;
        }
        assert!((hp.cdf(hi) - 1.0).abs() < 1e-15);
        let mut rng = stream(4);
        for _ in 0..10_000 {
            let s = hp.sample(&mut rng);
            assert!(s > lo && s <= hi);
        }
        assert!(hp.quantile(0.5) > 0.5 * (lo + hi));
    }

    #[test]
    fn scaling_decay_bound() {
        for regime in [
            Regime::RescaledUndersmoothing,
            Regime::PartiallyRescaled,
            Regime::Truncated,
            Regime::Hierarchical,
        ] {
            let spec = PriorSpec::new(regime, 2.5, 1, 4000, 24).unwrap();
            let t = spec.regularity();
            let ratios: Vec<f64> = (1..=24)
                .map(|l| spec.scaling_factor(l) / libm::exp2(-(l as f64) * (t + 0.5)))
                .collect();
            let max = ratios.iter().cloned().fold(0.0, f64::max);
            assert!(max.is_finite() && max <= 1.0 + 1e-12, "{regime:?}");
        }
    }
}
