//! Link functions and the normalized push-forward `phi(w) / int phi(w)`.
//!
//! Two links are provided. The exponential link gives the classical
//! log-density model. The floored link is
//!
//! `phi(z) = B + (1 - B) (g * eta)(z) / (g * eta)(0)`
//!
//! where `eta(z) = e^z` for `z < 0` and `1 + z` for `z >= 0`, and `g` is the
//! normalized bump `(315/256)(1 - u^2)^4` on `[-1, 1]`. The convolution has a
//! closed form: it is `c e^z` below `-1`, exactly `1 + z` above `1`, and a
//! polynomial plus an exponential in between. So `phi` is smooth, strictly
//! increasing, bounded below by `B`, affine above the knee `z = 1`, and
//! `phi(0) = 1`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::wavelet::{GridFunction, GridNorm};

/// `(1 - u^2)^4` scaled to unit mass, ascending coefficients.
const BUMP: [f64; 9] = {
    let c = 315.0 / 256.0;
    [c, 0.0, -4.0 * c, 0.0, 6.0 * c, 0.0, -4.0 * c, 0.0, c]
};

fn poly_eval(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

fn derivative(coeffs: &[f64]) -> Vec<f64> {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, &c)| k as f64 * c)
        .collect()
}

/// Antiderivative vanishing at `-1`.
fn antiderivative_from_minus_one(coeffs: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(coeffs.len() + 1);
    out.push(0.0);
    out.extend(coeffs.iter().enumerate().map(|(k, &c)| c / (k + 1) as f64));
    let at_minus_one = poly_eval(&out, -1.0);
    out[0] = -at_minus_one;
    out
}

/// Closed-form pieces of `g * eta`.
#[derive(Debug, Clone, PartialEq)]
struct Mollified {
    /// `Q = g + g' + g'' + ...`, so that `int p e^{-u} = -e^{-u} Q`.
    q: Vec<f64>,
    /// `G(z) = int_{-1}^z g`.
    g_int: Vec<f64>,
    /// `H(z) = int_{-1}^z u g(u) du`.
    h_int: Vec<f64>,
    q_plus: f64,
    q_minus: f64,
}

impl Mollified {
    fn new() -> Self {
        let mut q = BUMP.to_vec();
        let mut d = BUMP.to_vec();
        while d.len() > 1 {
            d = derivative(&d);
            for (k, c) in d.iter().enumerate() {
                q[k] += c;
            }
        }
        let mut ug = alloc::vec![0.0];
        ug.extend_from_slice(&BUMP);
        let g_int = antiderivative_from_minus_one(&BUMP);
        let h_int = antiderivative_from_minus_one(&ug);
        let q_plus = poly_eval(&q, 1.0);
        let q_minus = poly_eval(&q, -1.0);
        Self {
            q,
            g_int,
            h_int,
            q_plus,
            q_minus,
        }
    }

    /// Coefficient `c` of the left tail `c e^z`.
    fn tail_coefficient(&self) -> f64 {
        libm::exp(1.0) * self.q_minus - libm::exp(-1.0) * self.q_plus
    }

    fn value(&self, z: f64) -> f64 {
        if z <= -1.0 {
            libm::exp(z) * self.tail_coefficient()
        } else if z >= 1.0 {
            1.0 + z
        } else {
            (1.0 + z) * poly_eval(&self.g_int, z) - poly_eval(&self.h_int, z)
                + poly_eval(&self.q, z)
                - libm::exp(z - 1.0) * self.q_plus
        }
    }

    fn slope(&self, z: f64) -> f64 {
        if z <= -1.0 {
            libm::exp(z) * self.tail_coefficient()
        } else if z >= 1.0 {
            1.0
        } else {
            poly_eval(&self.g_int, z) + poly_eval(&self.q, z) - libm::exp(z - 1.0) * self.q_plus
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinkKind {
    Exponential,
    /// Lipschitz link bounded below by `floor`, with `0 < floor < 1`.
    RegularFloor { floor: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkFunction {
    kind: LinkKind,
    mollified: Option<Mollified>,
    /// `(g * eta)(0)`.
    center: f64,
}

impl LinkFunction {
    pub fn exponential() -> Self {
        Self {
            kind: LinkKind::Exponential,
            mollified: None,
            center: 1.0,
        }
    }

    pub fn regular_floor(floor: f64) -> Result<Self> {
        if !(floor > 0.0 && floor < 1.0) {
            return Err(Error::InvalidSpec(alloc::format!(
                "link floor must lie in (0, 1), got {floor}"
            )));
        }
        let m = Mollified::new();
        let center = m.value(0.0);
        Ok(Self {
            kind: LinkKind::RegularFloor { floor },
            mollified: Some(m),
            center,
        })
    }

    pub fn new(kind: LinkKind) -> Result<Self> {
        match kind {
            LinkKind::Exponential => Ok(Self::exponential()),
            LinkKind::RegularFloor { floor } => Self::regular_floor(floor),
        }
    }

    pub fn kind(&self) -> LinkKind {
        self.kind
    }

    /// Lower bound `B` of the range (0 for the exponential link).
    pub fn floor(&self) -> f64 {
        match self.kind {
            LinkKind::Exponential => 0.0,
            LinkKind::RegularFloor { floor } => floor,
        }
    }

    fn gain(&self) -> f64 {
        (1.0 - self.floor()) / self.center
    }

    pub fn eval(&self, z: f64) -> f64 {
        match (&self.kind, &self.mollified) {
            (LinkKind::RegularFloor { floor }, Some(m)) => floor + self.gain() * m.value(z),
            _ => libm::exp(z),
        }
    }

    pub fn log_eval(&self, z: f64) -> f64 {
        match self.kind {
            LinkKind::Exponential => z,
            LinkKind::RegularFloor { .. } => libm::log(self.eval(z)),
        }
    }

    pub fn derivative(&self, z: f64) -> f64 {
        match &self.mollified {
            Some(m) => self.gain() * m.slope(z),
            None => libm::exp(z),
        }
    }

    /// Knee above which the floored link is exactly affine.
    pub fn knee(&self) -> Option<f64> {
        self.mollified.as_ref().map(|_| 1.0)
    }

    pub fn inverse(&self, y: f64) -> Result<f64> {
        let floor = self.floor();
        if !(y > floor) || !y.is_finite() {
            return Err(Error::LinkDomain { value: y, floor });
        }
        let m = match &self.mollified {
            None => return Ok(libm::log(y)),
            Some(m) => m,
        };
        let target = (y - floor) / self.gain();
        if target >= 2.0 {
            return Ok(target - 1.0);
        }
        let c = m.tail_coefficient();
        if target <= c * libm::exp(-1.0) {
            return Ok(libm::log(target / c));
        }
        // Newton on [-1, 1], falling back to bisection when a step leaves the bracket
        let (mut lo, mut hi) = (-1.0, 1.0);
        let mut z = 0.0;
        for _ in 0..100 {
            let f = m.value(z) - target;
            if f > 0.0 {
                hi = z;
            } else {
                lo = z;
            }
            let step = f / m.slope(z);
            let mut next = z - step;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - z).abs() <= 1e-15 * (1.0 + z.abs()) {
                return Ok(next);
            }
            z = next;
        }
        Ok(z)
    }

    /// Uniform Lipschitz constant of the link; `None` for the exponential link.
    pub fn lipschitz(&self) -> Option<f64> {
        // the slope of g * eta never exceeds 1
        self.mollified.as_ref().map(|_| self.gain())
    }

    /// Uniform Lipschitz constant of `log phi`.
    pub fn log_lipschitz(&self) -> f64 {
        match self.kind {
            LinkKind::Exponential => 1.0,
            LinkKind::RegularFloor { floor } => self.gain() / floor,
        }
    }
}

/// A probability density tabulated on the dyadic grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOnGrid {
    values: GridFunction,
    normalizer: f64,
}

impl DensityOnGrid {
    /// Wraps tabulated values, normalizing them by their quadrature integral.
    pub fn from_unnormalized(values: GridFunction) -> Result<Self> {
        if values.values().iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NonFinite("density values"));
        }
        let normalizer = values.integral();
        if !(normalizer > 0.0) || !normalizer.is_finite() {
            return Err(Error::NonFinite("density normalizer"));
        }
        let values = values.map(|v| v / normalizer);
        Ok(Self { values, normalizer })
    }

    /// Uniform density on the grid.
    pub fn uniform(grid_level: u32, dimension: u32) -> Self {
        Self {
            values: GridFunction::constant(1.0, grid_level, dimension),
            normalizer: 1.0,
        }
    }

    pub fn grid(&self) -> &GridFunction {
        &self.values
    }

    pub fn values(&self) -> &[f64] {
        self.values.values()
    }

    pub fn grid_level(&self) -> u32 {
        self.values.grid_level()
    }

    pub fn dimension(&self) -> u32 {
        self.values.dimension()
    }

    /// `int phi(w)` before normalization (for the exponential link this may
    /// overflow even though the density itself is well defined).
    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    pub fn integral(&self) -> f64 {
        self.values.integral()
    }

    pub fn value_at(&self, x: &[f64]) -> f64 {
        self.values.value_at(x)
    }

    /// Cellwise average of densities on a common grid.
    pub fn average<'a>(densities: impl IntoIterator<Item = &'a DensityOnGrid>) -> Result<Self> {
        let mut iter = densities.into_iter();
        let first = iter.next().ok_or(Error::InvalidSpec("no densities to average".into()))?;
        let mut acc = first.values.values().to_vec();
        let mut count = 1usize;
        for d in iter {
            if !d.values.same_grid(&first.values) {
                return Err(Error::GridMismatch);
            }
            acc.iter_mut().zip(d.values()).for_each(|(a, v)| *a += v);
            count += 1;
        }
        acc.iter_mut().for_each(|a| *a /= count as f64);
        let grid = GridFunction::new(acc, first.grid_level(), first.dimension())?;
        Ok(Self {
            values: grid,
            normalizer: 1.0,
        })
    }
}

/// `phi(w) / int phi(w)` on the grid of `w`.
pub fn push_forward(w: &GridFunction, link: &LinkFunction) -> Result<DensityOnGrid> {
    if w.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("w on grid"));
    }
    match link.kind() {
        LinkKind::Exponential => {
            let max = w.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let shifted = w.map(|v| libm::exp(v - max));
            let integral = shifted.integral();
            let values = shifted.map(|v| v / integral);
            Ok(DensityOnGrid {
                values,
                normalizer: integral * libm::exp(max),
            })
        }
        LinkKind::RegularFloor { .. } => DensityOnGrid::from_unnormalized(w.map(|v| link.eval(v))),
    }
}

/// Upper bound on `||phi_w - phi_w'||_1` for a link with Lipschitz logarithm:
/// `2 Lg e^{Lg ||w - w'||_inf} / phi(-||w'||_inf) * ||w - w'||_1`,
/// with `Lg` the log-Lipschitz constant.
pub fn log_lipschitz_l1_bound(w: &GridFunction, w_prime: &GridFunction, link: &LinkFunction) -> Result<f64> {
    let diff = w.zip_with(w_prime, |a, b| a - b)?;
    let l1 = diff.norm(GridNorm::L1);
    if l1 == 0.0 {
        return Ok(0.0);
    }
    let lg = link.log_lipschitz();
    let sup = diff.norm(GridNorm::Sup);
    Ok(2.0 * lg * libm::exp(lg * sup) / link.eval(-w_prime.norm(GridNorm::Sup)) * l1)
}

/// Constant `C` in [`floor_link_bounds`]. With `h` the Hellinger distance,
/// `KL(p||q) <= 2 ||p/q||_inf h^2` and `E_p log^2(p/q) <= 4 ||p/q||_inf h^2`,
/// while `h <= (L/B) ||w - w'||_2` for a link with Lipschitz constant `L`
/// and floor `B`; `C = 4` covers both moments.
pub const FLOOR_KL_CONSTANT: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloorBounds {
    /// Bound on `KL(phi_w' || phi_w)` and on the second log moment.
    pub kl_bound: f64,
    /// Bound on `||phi_w - phi_w'||_1`.
    pub tv_bound: f64,
}

/// Perturbation bounds for a Lipschitz link with floor `B > 0`:
/// `kl_bound = C (L/B)^2 ||phi_w' / phi_w||_inf ||w - w'||_2^2` and
/// `tv_bound = (2L/B) ||w - w'||_1`.
pub fn floor_link_bounds(w: &GridFunction, w_prime: &GridFunction, link: &LinkFunction) -> Result<FloorBounds> {
    let lip = match link.lipschitz() {
        Some(l) if link.floor() > 0.0 => l,
        _ => {
            return Err(Error::LinkDomain {
                value: 0.0,
                floor: link.floor(),
            })
        }
    };
    let ratio = lip / link.floor();
    let diff = w.zip_with(w_prime, |a, b| a - b)?;
    let l1 = diff.norm(GridNorm::L1);
    let l2 = diff.norm(GridNorm::L2);
    let p = push_forward(w, link)?;
    let p_prime = push_forward(w_prime, link)?;
    let sup_ratio = p_prime
        .values()
        .iter()
        .zip(p.values())
        .map(|(a, b)| a / b)
        .fold(0.0, f64::max);
    Ok(FloorBounds {
        kl_bound: FLOOR_KL_CONSTANT * ratio * ratio * sup_ratio * l2 * l2,
        tv_bound: 2.0 * ratio * l1,
    })
}
