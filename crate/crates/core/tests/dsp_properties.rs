use std::f64::consts::PI;

use num_complex::Complex64;
use pieeg_core::dsp::{design_filter, BiquadCascade, FilterChainSpec, FilterSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn db(x: f64) -> f64 {
    20.0 * x.log10()
}

fn omega(hz: f64, fs: f64) -> f64 {
    2.0 * PI * hz / fs
}

fn run(filter: &mut BiquadCascade, input: &[f64]) -> Vec<f64> {
    input.iter().map(|x| filter.process_sample(0, *x)).collect()
}

fn impulse_response(spec: &FilterSpec, n: usize) -> Vec<f64> {
    let mut f = design_filter(spec).unwrap();
    (0..n)
        .map(|i| f.process_sample(0, if i == 0 { 1.0 } else { 0.0 }))
        .collect()
}

fn dft_at(h: &[f64], w: f64) -> Complex64 {
    h.iter()
        .enumerate()
        .map(|(n, x)| Complex64::from_polar(*x, -w * n as f64))
        .sum()
}

#[test]
fn notch_and_bandpass_targets() {
    let notch = design_filter(&FilterSpec::notch(50.0, 30.0, 250.0)).unwrap();
    assert!(db(notch.magnitude(omega(50.0, 250.0))) <= -30.0);
    let bp = design_filter(&FilterSpec::bandpass(1.0, 40.0, 4, 250.0)).unwrap();
    assert!(db(bp.magnitude(omega(10.0, 250.0))).abs() <= 1.0);
    assert!(db(bp.magnitude(omega(0.1, 250.0))) <= -20.0);
}

#[test]
fn impulse_response_dft_matches_analytic() {
    for spec in [
        FilterSpec::notch(50.0, 30.0, 250.0),
        FilterSpec::notch(60.0, 30.0, 1000.0),
        FilterSpec::bandpass(1.0, 40.0, 4, 250.0),
        FilterSpec::bandpass(0.5, 100.0, 8, 1000.0),
    ] {
        let h = impulse_response(&spec, 1 << 15);
        let f = design_filter(&spec).unwrap();
        for k in 0..200 {
            let w = PI * k as f64 / 200.0;
            let err = (dft_at(&h, w) - f.response(w)).norm();
            assert!(err < 1e-6, "{spec:?} at w={w}: {err}");
        }
    }
}

#[test]
fn bounded_input_stays_bounded_for_a_million_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut f = FilterChainSpec::default().design(250.0).unwrap();
    // Sum of |h| bounds the output for inputs in [-1, 1].
    let l1: f64 = {
        let mut g = FilterChainSpec::default().design(250.0).unwrap();
        (0..1 << 15)
            .map(|i| g.process_sample(0, if i == 0 { 1.0 } else { 0.0 }).abs())
            .sum()
    };
    let mut peak = 0f64;
    for _ in 0..1_000_000 {
        let x: f64 = rng.random_range(-1.0..=1.0);
        peak = peak.max(f.process_sample(0, x).abs());
    }
    assert!(peak.is_finite());
    assert!(peak <= l1 + 1e-9, "peak {peak} > l1 {l1}");
}

#[test]
fn dc_settles_to_analytic_gain() {
    let mut bp = design_filter(&FilterSpec::bandpass(1.0, 40.0, 4, 250.0)).unwrap();
    let y = run(&mut bp, &vec![1.0; 20_000]);
    assert!(y.last().unwrap().abs() < 1e-9);
    let mut notch = design_filter(&FilterSpec::notch(50.0, 30.0, 250.0)).unwrap();
    let y = run(&mut notch, &vec![1.0; 20_000]);
    assert!((y.last().unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn sinusoid_steady_state_matches_magnitude() {
    let fs = 250.0;
    let mut f = FilterChainSpec::default().design(fs).unwrap();
    let expected = f.magnitude(omega(10.0, fs));
    let x: Vec<f64> = (0..10_000)
        .map(|n| (omega(10.0, fs) * n as f64).sin())
        .collect();
    let y = run(&mut f, &x);
    let peak = y[8_000..].iter().fold(0f64, |m, v| m.max(v.abs()));
    assert!((peak - expected).abs() < 1e-3, "{peak} vs {expected}");
}

fn signal() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 64..256)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn linear(a in signal(), b in signal(), k in -10.0f64..10.0) {
        let n = a.len().min(b.len());
        let mix: Vec<f64> = (0..n).map(|i| k * a[i] + b[i]).collect();
        let spec = FilterChainSpec::default();
        let ya = run(&mut spec.design(250.0).unwrap(), &a[..n]);
        let yb = run(&mut spec.design(250.0).unwrap(), &b[..n]);
        let ym = run(&mut spec.design(250.0).unwrap(), &mix);
        for i in 0..n {
            prop_assert!((ym[i] - (k * ya[i] + yb[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn time_invariant(a in signal(), delay in 1usize..32) {
        let spec = FilterChainSpec::default();
        let y = run(&mut spec.design(250.0).unwrap(), &a);
        let mut shifted = vec![0.0; delay];
        shifted.extend_from_slice(&a);
        let ys = run(&mut spec.design(250.0).unwrap(), &shifted);
        for i in 0..a.len() {
            prop_assert!((ys[i + delay] - y[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn designed_sections_are_stable(
        low in 0.1f64..20.0,
        width in 1.0f64..80.0,
        order in prop::sample::select(vec![2u8, 4, 6, 8]),
        fs in prop::sample::select(vec![250.0, 500.0, 1000.0, 16000.0]),
    ) {
        let high = (low + width).min(fs / 2.0 - 1.0);
        let f = design_filter(&FilterSpec::bandpass(low, high, order, fs)).unwrap();
        prop_assert_eq!(f.sections().len(), usize::from(order / 2));
        prop_assert!(f.sections().iter().all(|s| s.is_stable()));
    }
}
