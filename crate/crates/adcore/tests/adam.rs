use adcore::{adam_step, AdError, AdamConfig, AdamState};

#[test]
fn first_step_moves_by_learning_rate() {
    let mut p = vec![0.5];
    let mut st = AdamState::new(AdamConfig::with_lr(1e-3), &[1]);
    adam_step(&mut p, &[1.0], &mut st).unwrap();
    assert!((p[0] - (0.5 - 1e-3)).abs() < 1e-10);
    assert_eq!(st.step_count(), 1);
}

#[test]
fn zero_gradient_leaves_params() {
    let mut p = vec![1.0, -2.0, 3.5];
    let mut st = AdamState::new(AdamConfig::default(), &[3]);
    for _ in 0..10 {
        adam_step(&mut p, &[0.0; 3], &mut st).unwrap();
    }
    for (a, b) in p.iter().zip([1.0, -2.0, 3.5]) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn non_finite_gradient_names_block() {
    let mut a = vec![0.0; 2];
    let mut b = vec![0.0; 3];
    let mut st = AdamState::new(AdamConfig::default(), &[2, 3]);
    let err = st.step(&mut [&mut a, &mut b], &[&[0.0, 0.0], &[0.0, f64::NAN, 0.0]]).unwrap_err();
    assert!(matches!(err, AdError::NonFiniteGradient { block: 1 }));
    assert_eq!(st.step_count(), 0);
}

#[test]
fn minimizes_shifted_parabola() {
    // Independent scalar recursion of bias-corrected Adam on (x - 2)^2.
    let (lr, b1, b2, eps) = (0.05, 0.9, 0.999, 1e-8);
    let (mut x, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
    for t in 1..=500 {
        let g = 2.0 * (x - 2.0);
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        x -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
    }
    assert!((x - 2.0).abs() < 1e-2, "oracle recursion ended at {x}");

    let mut p = vec![0.0];
    let mut st = AdamState::new(AdamConfig::with_lr(lr), &[1]);
    for _ in 0..500 {
        let g = 2.0 * (p[0] - 2.0);
        adam_step(&mut p, &[g], &mut st).unwrap();
    }
    assert!((p[0] - 2.0).abs() < 1e-2);
    assert!((p[0] - x).abs() < 1e-12);
}
