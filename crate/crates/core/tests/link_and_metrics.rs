use besov_core::link::{floor_link_bounds, log_lipschitz_l1_bound, FLOOR_KL_CONSTANT};
use besov_core::metrics::{hellinger, kl_divergence, tv_distance};
use besov_core::prior::sample_prior;
use besov_core::rng::stream;
use besov_core::{push_forward, DensityOnGrid, Family, GridFunction, LinkFunction, PriorSpec, Regime, WaveletBasis};
use rand::Rng;

fn random_fields(count: usize, seed: u64) -> Vec<GridFunction> {
    let basis = WaveletBasis::new(Family::Daubechies(4), 1, 9).unwrap();
    let spec = PriorSpec::new(Regime::RescaledUndersmoothing, 2.0, 1, 200, 8).unwrap();
    let mut rng = stream(seed);
    (0..count)
        .map(|_| {
            let amplitude: f64 = rng.random_range(0.5..4.0);
            let tree = sample_prior(&spec, &mut rng).unwrap().coeffs;
            basis.synthesize(&tree).unwrap().map(|v| amplitude * v)
        })
        .collect()
}

/// `||p - q||_1` by midpoint quadrature.
fn l1(p: &DensityOnGrid, q: &DensityOnGrid) -> f64 {
    let h = p.grid().cell_weight();
    p.values().iter().zip(q.values()).map(|(a, b)| (a - b).abs()).sum::<f64>() * h
}

#[test]
fn densities_are_normalized_and_shift_invariant() {
    let exp = LinkFunction::exponential();
    let floor = LinkFunction::regular_floor(0.2).unwrap();
    for (k, w) in random_fields(200, 1).iter().enumerate() {
        let c = (k as f64 - 100.0) / 10.0;
        let p = push_forward(w, &exp).unwrap();
        assert!((p.integral() - 1.0).abs() < 1e-8);
        let shifted = push_forward(&w.map(|v| v + c), &exp).unwrap();
        for (a, b) in p.values().iter().zip(shifted.values()) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!((push_forward(w, &floor).unwrap().integral() - 1.0).abs() < 1e-8);
    }
}

#[test]
fn log_lipschitz_bound_holds() {
    let link = LinkFunction::exponential();
    let fields = random_fields(400, 2);
    for pair in fields.chunks(2) {
        let (w, w2) = (&pair[0], &pair[1]);
        // large and small perturbations
        for eps in [1.0, 0.05] {
            let wp = w.zip_with(w2, |a, b| a + eps * b).unwrap();
            let lhs = l1(&push_forward(w, &link).unwrap(), &push_forward(&wp, &link).unwrap());
            let bound = log_lipschitz_l1_bound(w, &wp, &link).unwrap();
            assert!(lhs <= bound, "{lhs} > {bound}");
        }
    }
}

#[test]
fn floor_link_bounds_hold() {
    for floor in [0.05, 0.3, 0.7] {
        let link = LinkFunction::regular_floor(floor).unwrap();
        let fields = random_fields(200, 3);
        for pair in fields.chunks(2) {
            let (w, wp) = (&pair[0], &pair[1]);
            let p = push_forward(w, &link).unwrap();
            let q = push_forward(wp, &link).unwrap();
            let bounds = floor_link_bounds(w, wp, &link).unwrap();
            assert!(l1(&p, &q) <= bounds.tv_bound);
            let kl = kl_divergence(&q, &p).unwrap();
            assert!(kl.kl <= bounds.kl_bound && kl.v <= bounds.kl_bound, "{kl:?} vs {bounds:?}");
        }
    }
    assert_eq!(FLOOR_KL_CONSTANT, 4.0);
}

#[test]
fn floor_bounds_reject_exponential_link() {
    let w = GridFunction::zeros(4, 1);
    assert!(floor_link_bounds(&w, &w, &LinkFunction::exponential()).is_err());
}

#[test]
fn metric_inequalities() {
    let link = LinkFunction::exponential();
    let ps: Vec<DensityOnGrid> = random_fields(300, 4).iter().map(|w| push_forward(w, &link).unwrap()).collect();
    for t in ps.chunks(3) {
        let (p, q, r) = (&t[0], &t[1], &t[2]);
        let tv = tv_distance(p, q).unwrap();
        let h = hellinger(p, q).unwrap();
        assert!(h * h <= 2.0 * tv + 1e-12);
        assert!(2.0 * tv <= 2.0 * h + 1e-12);
        assert!(tv <= tv_distance(p, r).unwrap() + tv_distance(r, q).unwrap() + 1e-12);
        assert!(h <= hellinger(p, r).unwrap() + hellinger(r, q).unwrap() + 1e-12);
        assert!(kl_divergence(p, q).unwrap().kl >= -1e-12);
    }
}
