//! Ground-truth densities for simulation studies and data simulation.

use besov_core::link::LinkKind;
use besov_core::rng::{self, open_unit};
use besov_core::wavelet::level_size;
use besov_core::{push_forward, CoefficientTree, Dataset, DensityOnGrid, LinkFunction, WaveletBasis};
use rand::Rng;

use crate::Error;

#[derive(Debug, Clone, PartialEq)]
pub enum TruthKind {
    Uniform,
    /// `|c_lr| <= a 2^{-l(s+d/2)}` at every level, with pseudo-random signs and sizes.
    HomogeneousSmooth,
    /// A spike built from one coefficient per level along a dyadic path,
    /// decaying at the critical `B^s_11` rate, over a faint low-level background.
    InhomogeneousSpiky,
    Custom(CoefficientTree),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthSpec {
    pub kind: TruthKind,
    pub s: f64,
    pub dimension: u32,
    pub link: LinkKind,
    /// Scale of the coefficients: the bound `a` for the homogeneous truth and
    /// the size of the first spike coefficient for the spiky one.
    pub amplitude: f64,
    /// Finest level of the truth; defaults to the finest level of the basis.
    pub max_level: Option<u32>,
    /// First level of the spike path.
    pub spike_start: u32,
    pub spike_location: [f64; 2],
    /// Relative size of the spiky truth's background.
    pub background: f64,
    pub seed: u64,
}

impl TruthSpec {
    pub fn new(kind: TruthKind, s: f64, dimension: u32) -> Self {
        Self {
            kind,
            s,
            dimension,
            link: LinkKind::Exponential,
            amplitude: 1.0,
            max_level: None,
            spike_start: 3,
            spike_location: [0.3, 0.6],
            background: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Truth {
    pub density: DensityOnGrid,
    pub coefficients: CoefficientTree,
    /// Flat `(level, r)` indices of the spike path (spiky truth only).
    pub spike_path: Vec<(u32, usize)>,
}

/// Builds the truth `p0 = phi(w0) / int phi(w0)` and its coefficients `w0`.
pub fn make_truth(spec: &TruthSpec, basis: &WaveletBasis) -> Result<Truth, Error> {
    let d = spec.dimension;
    if basis.dimension() != d {
        return Err(Error::Config(format!(
            "truth dimension {d} does not match the basis dimension {}",
            basis.dimension()
        )));
    }
    if !(spec.s > 0.0) {
        return Err(Error::Config(format!("truth smoothness must be positive, got {}", spec.s)));
    }
    let max_level = spec.max_level.unwrap_or(basis.max_level());
    if max_level > basis.max_level() {
        return Err(Error::Config(format!(
            "truth level {max_level} exceeds the finest basis level {}",
            basis.max_level()
        )));
    }
    let dd = d as f64;
    let mut stream = rng::stream(rng::derive_seed(spec.seed, &[0x7275_7468]));
    let mut coefficients = CoefficientTree::with_max_level(d, max_level);
    let mut spike_path = Vec::new();
    match &spec.kind {
        TruthKind::Uniform => {}
        TruthKind::HomogeneousSmooth => {
            for l in 1..=max_level {
                let bound = spec.amplitude * libm::exp2(-(l as f64) * (spec.s + dd / 2.0));
                for r in 1..=level_size(d, l) {
                    let u = 2.0 * open_unit(&mut stream) - 1.0;
                    coefficients.insert(l, r, bound * u)?;
                }
            }
        }
        TruthKind::InhomogeneousSpiky => {
            let start = spec.spike_start.clamp(1, max_level);
            for l in 1..start {
                let bound = spec.background * libm::exp2(-(l as f64) * (spec.s + dd / 2.0));
                for r in 1..=level_size(d, l) {
                    let u = 2.0 * open_unit(&mut stream) - 1.0;
                    coefficients.insert(l, r, bound * u)?;
                }
            }
            let x = &spec.spike_location[..d as usize];
            let critical = |l: u32| libm::exp2(-(l as f64) * (spec.s - dd / 2.0)) / (l as f64 * l as f64);
            let scale = spec.amplitude / critical(start);
            for l in start..=max_level {
                let (r, value) = peak_index(basis, l, x)?;
                let c = scale * critical(l);
                coefficients.insert(l, r, if value >= 0.0 { c } else { -c })?;
                spike_path.push((l, r));
            }
        }
        TruthKind::Custom(tree) => {
            if tree.dimension() != d {
                return Err(Error::Config("custom truth dimension mismatch".into()));
            }
            coefficients = tree.clone();
        }
    }
    let w = basis.synthesize(&coefficients)?;
    let link = LinkFunction::new(spec.link)?;
    let density = push_forward(&w, &link)?;
    if density.values().iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Numeric("truth density is not strictly positive on the grid".into()));
    }
    Ok(Truth {
        density,
        coefficients,
        spike_path,
    })
}

/// The function at `level` with the largest `|psi_lr(x)|` (among pure
/// wavelet-product functions in two dimensions).
fn peak_index(basis: &WaveletBasis, level: u32, x: &[f64]) -> Result<(usize, f64), Error> {
    let d = basis.dimension();
    let first = if d == 1 { 1 } else { 2 * (1usize << (2 * level)) + 1 };
    let mut best = (first, 0.0f64);
    for r in first..=level_size(d, level) {
        let v = basis.eval(level, r, x)?;
        if v.abs() > best.1.abs() {
            best = (r, v);
        }
    }
    Ok(best)
}

/// Draws `n` points from a gridded density: a cell is chosen with its
/// probability mass and the point is uniform inside it.
pub fn simulate_data<R: Rng + ?Sized>(p0: &DensityOnGrid, n: usize, rng: &mut R) -> Result<Dataset, Error> {
    if n == 0 {
        return Err(Error::Config("cannot simulate an empty sample".into()));
    }
    let mut cumulative = Vec::with_capacity(p0.values().len());
    let mut acc = 0.0;
    for v in p0.values() {
        acc += v;
        cumulative.push(acc);
    }
    let j = p0.grid_level();
    let side = 1usize << j;
    let h = 1.0 / side as f64;
    let points = (0..n)
        .map(|_| {
            let u = open_unit(rng) * acc;
            let cell = cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1);
            if p0.dimension() == 1 {
                [(cell as f64 + open_unit(rng)) * h, 0.0]
            } else {
                let (i1, i2) = (cell >> j, cell & (side - 1));
                [(i1 as f64 + open_unit(rng)) * h, (i2 as f64 + open_unit(rng)) * h]
            }
        })
        .collect();
    Ok(Dataset::new(points, p0.dimension())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use besov_core::wavelet::{besov_norm, Family};

    #[test]
    fn zero_amplitude_is_uniform() {
        let basis = WaveletBasis::new(Family::Daubechies(4), 1, 8).unwrap();
        let mut spec = TruthSpec::new(TruthKind::HomogeneousSmooth, 2.0, 1);
        spec.amplitude = 0.0;
        let truth = make_truth(&spec, &basis).unwrap();
        assert!(truth.density.values().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn homogeneous_respects_bound() {
        let basis = WaveletBasis::new(Family::Daubechies(4), 1, 9).unwrap();
        let truth = make_truth(&TruthSpec::new(TruthKind::HomogeneousSmooth, 2.0, 1), &basis).unwrap();
        for (l, _, c) in truth.coefficients.iter() {
            assert!(c.abs() <= libm::exp2(-(l as f64) * 2.5));
        }
    }

    #[test]
    fn spiky_truth_is_inhomogeneous() {
        let basis = WaveletBasis::new(Family::Daubechies(4), 1, 11).unwrap();
        let truth = make_truth(&TruthSpec::new(TruthKind::InhomogeneousSpiky, 2.0, 1), &basis).unwrap();
        let w0 = &truth.coefficients;
        // B^s_11 increments per level behave like l^{-2}; at s + 1/2 they grow like 2^{l/2} l^{-2}
        let increments = |s: f64| -> Vec<f64> {
            let sums: Vec<f64> = (3..=w0.max_level()).map(|l| besov_norm(&w0.project(l), s, 1.0, 1.0)).collect();
            sums.windows(2).map(|w| w[1] - w[0]).collect()
        };
        let at_s = increments(2.0);
        assert!(at_s.windows(2).all(|w| w[1] < w[0]), "{at_s:?}");
        let above = increments(2.5);
        // 2^{1/2} (l/(l+1))^2 > 1 from l = 5 on
        assert!(above.windows(2).skip(2).all(|w| w[1] > w[0]), "{above:?}");
        let b11 = besov_norm(w0, 2.0, 1.0, 1.0);
        // per-level maxima decay slower than the B^s_inf,inf rate
        let binf = besov_norm(w0, 2.0, f64::INFINITY, f64::INFINITY);
        assert!(binf > b11);
        let w = basis.synthesize(w0).unwrap();
        let values = w.values();
        let spike = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let flat = values
            .iter()
            .enumerate()
            .filter(|(m, _)| (w.midpoint(*m)[0] - 0.3).abs() > 0.25)
            .fold(0.0f64, |m, (_, v)| m.max(v.abs()));
        assert!(spike >= 3.0 * flat, "spike {spike}, flat {flat}");
    }

    #[test]
    fn uniform_sample_passes_ks() {
        let p0 = DensityOnGrid::uniform(10, 1);
        let mut stream = rng::stream(1);
        let mut failures = 0;
        for _ in 0..50 {
            let data = simulate_data(&p0, 500, &mut stream).unwrap();
            let xs: Vec<f64> = data.points().iter().map(|p| p[0]).collect();
            let ks = besov_core::metrics::ks_statistic(&xs, |x| x);
            if ks > 1.63 / libm::sqrt(500.0) {
                failures += 1;
            }
        }
        assert!(failures <= 3);
    }

    #[test]
    fn cell_histogram_matches_density() {
        let basis = WaveletBasis::new(Family::Haar, 1, 5).unwrap();
        let truth = make_truth(&TruthSpec::new(TruthKind::HomogeneousSmooth, 1.5, 1), &basis).unwrap();
        let n = 1_000_000;
        let data = simulate_data(&truth.density, n, &mut rng::stream(2)).unwrap();
        let mut counts = [0usize; 32];
        for p in data.points() {
            counts[((p[0] * 32.0) as usize).min(31)] += 1;
        }
        for (m, &c) in counts.iter().enumerate() {
            let prob = truth.density.values()[m] / 32.0;
            let se = libm::sqrt(n as f64 * prob * (1.0 - prob));
            assert!((c as f64 - n as f64 * prob).abs() < 4.0 * se);
        }
    }
}
