use cygen_bench::optim::Adam;

#[test]
fn first_step_moves_by_the_learning_rate() {
    // Bias correction makes the first update lr * g / (|g| + eps).
    let mut a = Adam::new(3, 0.1, 0.0);
    let mut x = vec![1.0, -2.0, 0.5];
    a.step(&mut x, &[3.0, -0.5, 0.0], &[1.0, 1.0, 1.0]);
    assert!((x[0] - 0.9).abs() < 1e-8);
    assert!((x[1] + 1.9).abs() < 1e-8);
    assert_eq!(x[2], 0.5);
}

#[test]
fn matches_reference_recursion() {
    let (lr, b1, b2, eps): (f64, f64, f64, f64) = (0.01, 0.9, 0.999, 1e-8);
    let grads = [0.5, -1.0, 2.0, 0.1];
    let mut a = Adam::new(1, lr, 0.0);
    let mut x = vec![0.0];
    let (mut m, mut v, mut xr) = (0.0, 0.0, 0.0);
    for (t, &g) in grads.iter().enumerate() {
        a.step(&mut x, &[g], &[1.0]);
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t as i32 + 1));
        let vh = v / (1.0 - b2.powi(t as i32 + 1));
        xr -= lr * mh / (vh.sqrt() + eps);
        assert!((x[0] - xr).abs() < 1e-15);
    }
    assert_eq!(a.steps_taken(), 4);
}

#[test]
fn minimizes_a_quadratic_with_decay_and_scaling() {
    // f = (x - 3)^2 with L2 decay w: minimum at 6 / (2 + w).
    let w = 0.5;
    let mut a = Adam::new(2, 0.05, w);
    let mut x = vec![0.0, 0.0];
    for _ in 0..5000 {
        let g: Vec<f64> = x.iter().map(|v| 2.0 * (v - 3.0)).collect();
        a.step(&mut x, &g, &[1.0, 0.0]);
    }
    assert!((x[0] - 6.0 / (2.0 + w)).abs() < 1e-3, "{}", x[0]);
    assert_eq!(x[1], 0.0, "zero scale freezes the parameter");
}
