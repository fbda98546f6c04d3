use besov_core::metrics::{ks_statistic, median};
use besov_core::prior::{sample_prior, scaling_factor};
use besov_core::rng::stream;
use besov_core::wavelet::besov_norm;
use besov_core::{HyperPrior, PriorSpec, Regime};

#[test]
fn draws_are_regular_below_t_only() {
    // rescaled prior with s = 2, d = 1: draws have regularity t = 1
    let t = 1.0;
    let medians = |t_prime: f64| -> Vec<f64> {
        [8u32, 10, 12]
            .iter()
            .map(|&l_max| {
                let spec = PriorSpec::new(Regime::RescaledUndersmoothing, 2.0, 1, 1000, l_max).unwrap();
                let mut rng = stream(u64::from(l_max));
                let norms: Vec<f64> = (0..200)
                    .map(|_| besov_norm(&sample_prior(&spec, &mut rng).unwrap().coeffs, t_prime, 1.0, 1.0))
                    .collect();
                median(&norms).unwrap()
            })
            .collect()
    };
    let below = medians(t - 0.25);
    let at = medians(t);
    assert!(at.windows(2).all(|w| w[1] > w[0]), "{at:?}");
    // below t the median stabilizes: the last two levels add little
    let growth_below = (below[2] - below[1]) / below[1];
    let growth_at = (at[2] - at[1]) / at[1];
    assert!(growth_below < 0.5 * growth_at, "{below:?} vs {at:?}");
}

#[test]
fn coefficient_variance_matches_scaling() {
    for regime in [Regime::RescaledUndersmoothing, Regime::PartiallyRescaled, Regime::Truncated] {
        let spec = PriorSpec::new(regime, 2.5, 1, 2000, 6).unwrap();
        let mut rng = stream(7);
        let draws = 20_000;
        let probes = [(1u32, 1usize), (2, 3), (3, 5)];
        let mut sums = [0.0f64; 3];
        for _ in 0..draws {
            let tree = sample_prior(&spec, &mut rng).unwrap().coeffs;
            for (k, &(l, r)) in probes.iter().enumerate() {
                sums[k] += tree.get(l, r).powi(2);
            }
        }
        for (k, &(l, _)) in probes.iter().enumerate() {
            let sigma = scaling_factor(&spec, l);
            let expected = 2.0 * sigma * sigma;
            // Laplace: Var(c^2) = 20 sigma^4
            let se = (20.0f64).sqrt() * sigma * sigma / (draws as f64).sqrt();
            assert!((sums[k] / draws as f64 - expected).abs() < 5.0 * se.max(1e-300), "{regime:?} level {l}");
        }
    }
}

#[test]
fn hyperprior_draws_follow_the_tabulated_law() {
    for (n, d) in [(1000.0, 1u32), (5000.0, 2)] {
        let h = HyperPrior::new(n, d).unwrap();
        let mut rng = stream(11);
        let draws: Vec<f64> = (0..20_000).map(|_| h.sample(&mut rng)).collect();
        let (lo, hi) = h.support();
        assert!(draws.iter().all(|&s| s > lo && s <= hi));
        let ks = ks_statistic(&draws, |s| h.cdf(s));
        assert!(ks < 1.63 / (draws.len() as f64).sqrt(), "KS {ks}");
    }
}

#[test]
fn hyperprior_cdf_matches_density_integral() {
    let h = HyperPrior::new(800.0, 1).unwrap();
    let (lo, hi) = h.support();
    let steps = 200_000;
    let dx = (hi - lo) / steps as f64;
    let mut acc = 0.0;
    for i in 0..steps {
        let x = lo + (i as f64 + 0.5) * dx;
        acc += h.density(x) * dx;
        if i % 20_000 == 19_999 {
            let at = lo + (i + 1) as f64 * dx;
            assert!((acc - h.cdf(at)).abs() < 1e-5, "{at}: {acc} vs {}", h.cdf(at));
        }
    }
    assert!((acc - 1.0).abs() < 1e-6);
}
