use approx::assert_relative_eq;
use grouse_core::bounds::phase_targets;
use grouse_core::metrics::determinant_similarity_explicit;
use grouse_core::rng::stream;
use grouse_core::{
    detect_phases, determinant_similarity, frobenius_discrepancy, make_planted, principal_angles, random_orthonormal,
    BoundParams, MetricSample, OracleInfo, StepConfig, Stepper,
};

#[test]
fn noiseless_trajectory_converges_monotonically() {
    let (n, d) = (60, 4);
    let mut rng = stream(21);
    let model = make_planted(n, d, 0.0, true, &mut rng).unwrap();
    let mut u = random_orthonormal(n, d, &mut rng).unwrap();
    let mut stepper = Stepper::new(StepConfig::greedy()).unwrap();
    let params = BoundParams::new(n, d);

    let mut samples = vec![MetricSample::measure(0, &u, &model.ubar, 0.0, 0.0).unwrap()];
    for t in 1..=2000 {
        let x = model.draw_sample(&mut rng).x;
        let out = stepper.step(&u, &x, None).unwrap();
        u = out.updated;
        let s = MetricSample::measure(t, &u, &model.ubar, out.p.norm_squared(), out.r.norm_squared()).unwrap();
        let prev = samples.last().unwrap();
        assert!(s.zeta >= prev.zeta * (1.0 - 1e-12));
        assert!(s.epsilon <= prev.epsilon + 1e-12);
        samples.push(s);
    }
    let last = samples.last().unwrap();
    assert!(last.epsilon < 1e-10);
    assert_relative_eq!(last.zeta, 1.0, epsilon = 1e-10);

    let report = detect_phases(&samples, &params, false).unwrap();
    let (target_zeta, target_eps) = phase_targets(&params, false);
    let k1 = report.k1.unwrap() as usize;
    let k = report.total().unwrap() as usize;
    assert!(samples[k1].zeta >= target_zeta && (k1 == 0 || samples[k1 - 1].zeta < target_zeta));
    assert!(samples[k].epsilon <= target_eps);
}

#[test]
fn metrics_agree_with_determinant_and_angles() {
    let mut rng = stream(22);
    let a = random_orthonormal(30, 5, &mut rng).unwrap();
    let b = random_orthonormal(30, 5, &mut rng).unwrap();
    let zeta = determinant_similarity(&a, &b).unwrap();
    assert_relative_eq!(zeta, determinant_similarity_explicit(&a, &b).unwrap(), max_relative = 1e-9);
    let cos = principal_angles(&a, &b).unwrap();
    let sum_sin_sq: f64 = cos.cosines().iter().map(|c| 1.0 - c * c).sum();
    assert_relative_eq!(frobenius_discrepancy(&a, &b).unwrap(), sum_sin_sq, epsilon = 1e-12);
}

#[test]
fn oracle_step_stays_orthonormal_under_noise() {
    let (n, d) = (200, 6);
    let mut rng = stream(23);
    let model = make_planted(n, d, 1e-2, false, &mut rng).unwrap();
    let mut u = random_orthonormal(n, d, &mut rng).unwrap();
    let mut stepper = Stepper::new(StepConfig::oracle(1e-2)).unwrap();
    for _ in 0..500 {
        let sample = model.draw_sample(&mut rng);
        let oracle = OracleInfo::from_signal(&u, &sample.v).unwrap();
        let out = stepper.step(&u, &sample.x, Some(&oracle)).unwrap();
        assert!((0.0..=1.0).contains(&out.alpha));
        u = out.updated;
    }
    assert!(u.orthonormality_error() < 1e-12);
    assert!(frobenius_discrepancy(&u, &model.ubar).unwrap() < 0.5);
}
