use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use radu_core::signal::{
    apply_sensor_noise, distance_to_phase, fit_mean_variance, max_distance, orders_for_range, phase_to_distance,
    recover_phasor, synthesize_taps, unwrap_two_freq, wrap_phase, CorrelationFrame, ModulationConfig, NoiseModel,
    PathComponent,
};
use radu_core::Tensor;

fn single_pixel(paths: Vec<PathComponent>, config: &ModulationConfig) -> CorrelationFrame {
    synthesize_taps(&[paths], 1, 1, config).unwrap()
}

/// Circular difference of two phases in `(-pi, pi]`.
fn phase_diff(a: f64, b: f64) -> f64 {
    let d = wrap_phase(a - b);
    if d > std::f64::consts::PI {
        d - std::f64::consts::TAU
    } else {
        d
    }
}

proptest! {
    #[test]
    fn recover_inverts_synthesis(
        amp in 0.01f64..50.0,
        extra in 0.0f64..20.0,
        dist in 0.0f64..7.4,
        phases in 3usize..9,
    ) {
        let config = ModulationConfig::uniform(vec![20e6, 50e6, 70e6], phases).unwrap();
        let path = PathComponent::at_distance(amp + extra, amp, dist, &config);
        let ph = recover_phasor(&single_pixel(vec![path.clone()], &config)).unwrap();
        for f in 0..3 {
            prop_assert!((ph.intensity.data()[f] - (amp + extra)).abs() < 1e-9);
            prop_assert!((ph.amplitude.data()[f] - amp).abs() < 1e-9);
            prop_assert!(phase_diff(ph.phase.data()[f], path.phases[f]).abs() < 1e-9);
        }
    }

    #[test]
    fn phase_distance_round_trip(dist in 0.0f64..7.49, f in 10e6f64..100e6) {
        let d = dist % max_distance(f);
        let back = phase_to_distance(distance_to_phase(d, f).unwrap(), f).unwrap();
        let diff = (back - d).abs();
        let err = diff.min(max_distance(f) - diff);
        prop_assert!(err < 1e-9);
    }

    #[test]
    fn unwrap_matches_brute_force(dist in 0.0f64..7.4) {
        let (fa, fb) = (20e6, 50e6);
        let wa = dist % max_distance(fa);
        let wb = dist % max_distance(fb);
        let orders = orders_for_range(max_distance(fa), fa, fb);
        let got = unwrap_two_freq(wa, fa, wb, fb, orders);
        prop_assert!((got - dist).abs() < 1e-6, "{dist} unwrapped to {got}");
    }

    /// A second, farther path pulls the recovered distance beyond the
    /// direct one at the lowest frequency.
    #[test]
    fn weaker_longer_path_overestimates(
        dist in 0.5f64..3.0,
        extra in 0.05f64..0.8,
        ratio in 0.05f64..0.5,
    ) {
        let config = ModulationConfig::default();
        let direct = PathComponent::at_distance(10.0, 10.0, dist, &config);
        let indirect = PathComponent::at_distance(10.0 * ratio, 10.0 * ratio, dist + extra, &config);
        let ph = recover_phasor(&single_pixel(vec![direct, indirect], &config)).unwrap();
        let d1 = ph.distance(0)[0];
        prop_assert!(d1 > dist, "recovered {d1} for true {dist}");
        prop_assert!(d1 < dist + extra);
    }

    #[test]
    fn noise_is_seeded(seed in any::<u64>()) {
        let config = ModulationConfig::default();
        let frame = single_pixel(vec![PathComponent::at_distance(300.0, 200.0, 1.0, &config)], &config);
        let model = NoiseModel::default();
        let a = apply_sensor_noise(&frame, &model, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = apply_sensor_noise(&frame, &model, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn noise_regression_recovers_model() {
    let config = ModulationConfig::uniform(vec![20e6], 2).unwrap();
    let model = NoiseModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let levels = [100.0, 200.0, 400.0, 700.0, 1000.0];
    let per_level = 40_000;
    let mut points = Vec::new();
    for &m in &levels {
        let taps = Tensor::full(&[1, 2, 1, per_level / 2], m);
        let frame = CorrelationFrame::new(taps, config.clone()).unwrap();
        let noisy = apply_sensor_noise(&frame, &model, &mut rng).unwrap();
        let v = noisy.taps.data();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        points.push((mean, var));
    }
    let fit = fit_mean_variance(&points).unwrap();
    assert!((fit.gain - 0.33).abs() < 0.05 * 0.33, "gain {}", fit.gain);
    assert!((fit.intercept + 18.4).abs() < 0.05 * 18.4, "intercept {}", fit.intercept);
}

#[test]
fn noise_free_frame_is_unchanged_below_intercept() {
    // Variance clamps to zero below -b/K, so dark taps pass through.
    let config = ModulationConfig::uniform(vec![20e6], 4).unwrap();
    let frame = CorrelationFrame::new(Tensor::full(&[1, 4, 2, 2], 10.0), config).unwrap();
    let noisy = apply_sensor_noise(&frame, &NoiseModel::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(noisy, frame);
}
