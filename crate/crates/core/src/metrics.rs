//! Distances between gridded densities and log-log rate fits.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::link::DensityOnGrid;

/// Floor applied to densities inside logarithms.
pub const DENSITY_FLOOR: f64 = 1e-300;

fn paired<'a>(p: &'a DensityOnGrid, q: &'a DensityOnGrid) -> Result<(impl Iterator<Item = (f64, f64)> + 'a, f64)> {
    if !p.grid().same_grid(q.grid()) {
        return Err(Error::GridMismatch);
    }
    let w = p.grid().cell_weight();
    Ok((p.values().iter().copied().zip(q.values().iter().copied()), w))
}

/// `d_TV(p, q) = (1/2) int |p - q|`.
pub fn tv_distance(p: &DensityOnGrid, q: &DensityOnGrid) -> Result<f64> {
    let (pairs, w) = paired(p, q)?;
    Ok(0.5 * w * pairs.map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// `d_H(p, q) = (int (sqrt p - sqrt q)^2)^{1/2}`, in `[0, sqrt 2]`.
pub fn hellinger(p: &DensityOnGrid, q: &DensityOnGrid) -> Result<f64> {
    let (pairs, w) = paired(p, q)?;
    let sq: f64 = pairs
        .map(|(a, b)| {
            let d = libm::sqrt(a) - libm::sqrt(b);
            d * d
        })
        .sum();
    Ok(libm::sqrt(w * sq))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlDivergence {
    /// `int p0 log(p0/p)`.
    pub kl: f64,
    /// `int p0 log^2(p/p0)`.
    pub v: f64,
    /// Set when a density value was raised to [`DENSITY_FLOOR`].
    pub clipped: bool,
}

/// Kullback-Leibler divergence of `p` from `p0` and the second log moment.
pub fn kl_divergence(p0: &DensityOnGrid, p: &DensityOnGrid) -> Result<KlDivergence> {
    let (pairs, w) = paired(p0, p)?;
    let mut clipped = false;
    let (mut kl, mut v) = (0.0, 0.0);
    for (a, b) in pairs {
        if a <= 0.0 {
            continue;
        }
        let b = if b < DENSITY_FLOOR {
            clipped = true;
            DENSITY_FLOOR
        } else {
            b
        };
        let log_ratio = libm::log(a / b);
        kl += a * log_ratio;
        v += a * log_ratio * log_ratio;
    }
    Ok(KlDivergence {
        kl: (kl * w).max(0.0),
        v: v * w,
        clipped,
    })
}

/// Least-squares fit of `log error = intercept + slope log n`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub pairs: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    /// Root mean square residual in log space.
    pub residual: f64,
}

impl RateFit {
    pub fn n_points(&self) -> usize {
        self.pairs.len()
    }
}

/// Fits a power law to `(n, error)` pairs.
pub fn fit_rate(pairs: &[(f64, f64)]) -> Result<RateFit> {
    if pairs.len() < 3 {
        return Err(Error::DegenerateFit("need at least three (n, error) pairs"));
    }
    if pairs.iter().any(|&(n, e)| !(n > 0.0) || !(e > 0.0) || !e.is_finite()) {
        return Err(Error::DegenerateFit("sample sizes and errors must be positive"));
    }
    let xs: Vec<f64> = pairs.iter().map(|p| libm::log(p.0)).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| libm::log(p.1)).collect();
    let m = pairs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx <= 1e-12 * m {
        return Err(Error::DegenerateFit("all sample sizes are equal"));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - intercept - slope * x;
            r * r
        })
        .sum();
    Ok(RateFit {
        pairs: pairs.to_vec(),
        slope,
        intercept,
        residual: libm::sqrt(rss / m),
    })
}

/// Kolmogorov-Smirnov statistic of a sample against a continuous CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / m).max((i + 1) as f64 / m - f)
        })
        .fold(0.0, f64::max)
}

/// Median of a sample (mean of the two middle values for even sizes).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    Some(if k % 2 == 1 { v[k / 2] } else { 0.5 * (v[k / 2 - 1] + v[k / 2]) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelet::GridFunction;

    fn density(j: u32, f: impl Fn(f64) -> f64) -> DensityOnGrid {
        DensityOnGrid::from_unnormalized(GridFunction::from_fn(j, 1, |x| f(x[0]))).unwrap()
    }

    #[test]
    fn closed_form_distances() {
        let j = 12;
        let one = DensityOnGrid::uniform(j, 1);
        let lin = density(j, |x| 2.0 * x);
        let tv = tv_distance(&one, &lin).unwrap();
        assert!((tv - 0.25).abs() <= libm::ldexp(1.0, -(j as i32)));
        assert_eq!(tv, tv_distance(&lin, &one).unwrap());
        let h = hellinger(&one, &lin).unwrap();
        let exact = libm::sqrt(2.0 - 4.0 * libm::sqrt(2.0) / 3.0);
        assert!((h - exact).abs() <= libm::ldexp(1.0, -(j as i32) / 2));
        assert_eq!(tv_distance(&one, &one).unwrap(), 0.0);
        let kl = kl_divergence(&lin, &lin).unwrap();
        assert_eq!((kl.kl, kl.v), (0.0, 0.0));
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let a = DensityOnGrid::uniform(5, 1);
        let b = DensityOnGrid::uniform(6, 1);
        assert_eq!(tv_distance(&a, &b), Err(Error::GridMismatch));
    }

    #[test]
    fn exact_power_law() {
        let pairs: Vec<(f64, f64)> = [100.0, 400.0, 1600.0, 6400.0]
            .iter()
            .map(|&n| (n, 3.0 * libm::pow(n, -0.4)))
            .collect();
        let fit = fit_rate(&pairs).unwrap();
        assert!((fit.slope + 0.4).abs() < 1e-12);
        assert!((fit.intercept - libm::log(3.0)).abs() < 1e-12);
        assert!(fit.residual < 1e-12);
    }

    #[test]
    fn log_factor_flattens_slope() {
        let pairs: Vec<(f64, f64)> = [500.0, 1000.0, 2000.0, 4000.0, 8000.0]
            .iter()
            .map(|&n| (n, libm::pow(n, -0.4) * libm::sqrt(libm::log(n))))
            .collect();
        let slope = fit_rate(&pairs).unwrap().slope;
        assert!(slope > -0.40 && slope < -0.30, "{slope}");
    }

    #[test]
    fn degenerate_fits() {
        assert!(fit_rate(&[(10.0, 1.0), (10.0, 2.0), (10.0, 3.0)]).is_err());
        assert!(fit_rate(&[(10.0, 1.0), (20.0, 2.0)]).is_err());
        assert!(fit_rate(&[(10.0, 1.0), (20.0, 0.0), (30.0, 1.0)]).is_err());
    }

    #[test]
    fn ks_of_exact_quantiles_is_small() {
        let m = 1000;
        let samples: Vec<f64> = (0..m).map(|i| (i as f64 + 0.5) / m as f64).collect();
        assert!(ks_statistic(&samples, |x| x) <= 0.5 / m as f64 + 1e-15);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }
}
