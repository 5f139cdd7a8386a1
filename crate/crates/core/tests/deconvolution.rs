use nmfrank_core::decon::{deconvolve, fit_density, pvalue_decon, DeconOptions, PenaltyChoice};
use nmfrank_core::seed;
use nmfrank_core::stats::{ks_distance, ks_distance_to, mean};
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};

/// Right-skewed unit-scale error, `Exp(1)`.
fn skewed_errors(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let exp = Exp::new(1.0).unwrap();
    (0..n).map(|_| exp.sample(rng)).collect()
}

fn ground_truth_case(seed_value: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = seed::rng(seed_value);
    let signal = Normal::new(5.0, 1.0).unwrap();
    let contaminating = skewed_errors(&mut rng, 200);
    let contaminated: Vec<f64> = contaminating
        .iter()
        .map(|e| signal.sample(&mut rng) + e)
        .collect();
    let errors = skewed_errors(&mut rng, 200);
    (contaminated, errors)
}

#[test]
fn recovers_normal_signal_under_skewed_error() {
    for s in 1..=10 {
        let (contaminated, errors) = ground_truth_case(s);
        let d = deconvolve(&contaminated, &errors, &DeconOptions::default()).unwrap();
        let (m, sd) = (d.mean(), d.sd());
        assert!((4.5..=5.5).contains(&m), "seed {s}: mean {m}");
        assert!((0.6..=1.4).contains(&sd), "seed {s}: sd {sd}");
        // Naive fit without deconvolution is visibly shifted.
        assert!(mean(&contaminated) - m > 0.5);
    }
}

#[test]
fn zero_errors_reduce_to_direct_fit() {
    let mut rng = seed::rng(12);
    let normal = Normal::new(10.0, 2.0).unwrap();
    let sample: Vec<f64> = (0..200).map(|_| normal.sample(&mut rng)).collect();
    let opts = DeconOptions::default();
    let decon = deconvolve(&sample, &vec![0.0; 400], &opts).unwrap();
    let direct = fit_density(&sample, &opts).unwrap();
    assert_eq!(decon.grid, direct.grid);
    for (a, b) in decon.weights.iter().zip(&direct.weights) {
        assert!((a - b).abs() <= 1e-12);
    }
    let (lo, hi) = sample
        .iter()
        .fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
    assert!((decon.mean() - mean(&sample)).abs() <= 1e-2 * (hi - lo));
    assert!(ks_distance_to(&sample, |x| decon.cdf(x)) <= 0.05);
}

#[test]
fn constant_signal_concentrates() {
    let mut rng = seed::rng(33);
    let errors = skewed_errors(&mut rng, 200);
    let c = 7.3;
    let contaminated: Vec<f64> = (0..200)
        .map(|_| c + errors[rng.random_range(0..errors.len())])
        .collect();
    let d = deconvolve(&contaminated, &errors, &DeconOptions::default()).unwrap();
    let h = d.bandwidth;
    let mass = d.cdf(c + 2.0 * h) - d.cdf(c - 2.0 * h);
    assert!(mass >= 0.9, "mass within c ± 2h = {mass} (h = {h})");
}

#[test]
fn convolution_consistency() {
    let (contaminated, errors) = ground_truth_case(7);
    let d = deconvolve(&contaminated, &errors, &DeconOptions::default()).unwrap();
    let mut rng = seed::rng(8);
    let regenerated: Vec<f64> = (0..10_000)
        .map(|_| d.sample(&mut rng) + errors[rng.random_range(0..errors.len())])
        .collect();
    let ks = ks_distance(&regenerated, &contaminated);
    assert!(ks <= 0.08, "ks = {ks}");
}

#[test]
fn half_spacing_grid_shift_is_stable() {
    let (contaminated, errors) = ground_truth_case(5);
    let base = deconvolve(&contaminated, &errors, &DeconOptions::default()).unwrap();
    let spacing = base.grid[1] - base.grid[0];
    // Shifting every input by half a spacing shifts the grid relative to the data.
    let shifted: Vec<f64> = contaminated.iter().map(|v| v + 0.5 * spacing).collect();
    let moved = deconvolve(&shifted, &errors, &DeconOptions::default()).unwrap();
    for lambda in [4.0, 5.0, 6.5] {
        let p0 = pvalue_decon(&base, lambda);
        let p1 = pvalue_decon(&moved, lambda + 0.5 * spacing);
        assert!((p0 - p1).abs() < 0.02, "λ {lambda}: {p0} vs {p1}");
    }
}

#[test]
fn cross_validated_penalty_is_a_candidate() {
    let (contaminated, errors) = ground_truth_case(11);
    let opts = DeconOptions {
        penalty: PenaltyChoice::CrossValidated,
        ..DeconOptions::default()
    };
    let d = deconvolve(&contaminated, &errors, &opts).unwrap();
    let scores = d.cv_scores.as_ref().unwrap();
    assert_eq!(scores.len(), 5);
    let best = scores.iter().fold(f64::MIN, |m, s| m.max(s.1));
    assert!(scores.iter().any(|s| s.0 == d.penalty && s.1 == best));
}
