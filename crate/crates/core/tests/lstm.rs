mod oracles;

use celladapt::predictor::lstm::{forward, Workspace};
use celladapt::predictor::{analytic_gradient, init_parameters, LstmShape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_case(f: usize, h: usize, steps: usize, seed: u64) -> (LstmShape, Vec<f64>, Vec<f64>) {
    let shape = LstmShape::new(f, h);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params: Vec<f64> = (0..shape.param_count()).map(|_| rng.random_range(-0.8..0.8)).collect();
    let input: Vec<f64> = (0..steps * f).map(|_| rng.random_range(0.0..1.0)).collect();
    (shape, params, input)
}

#[test]
fn forward_matches_unrolled_recurrence() {
    let mut ws = Workspace::default();
    for (i, &(f, h, steps)) in [(1, 1, 1), (1, 3, 5), (3, 2, 4), (2, 5, 24)].iter().enumerate() {
        let (shape, params, input) = random_case(f, h, steps, i as u64);
        let fast = forward(shape, &params, &input, &mut ws);
        let slow = oracles::unrolled_lstm(f, h, &params, &input);
        assert!((fast - slow).abs() < 1e-12, "f={f} h={h}: {fast} vs {slow}");
    }
}

#[test]
fn bptt_matches_finite_differences() {
    for h in [1, 2, 4] {
        for f in [1, 3] {
            for n in [3, 6] {
                let (shape, params, input) = random_case(f, h, n, (h * 100 + f * 10 + n) as u64);
                let out = oracles::unrolled_lstm(f, h, &params, &input);
                let target = out + 0.5;
                let bptt = analytic_gradient(shape, &params, &input, target);
                let numeric = oracles::finite_differences(f, h, &params, &input, target, 1e-6);
                let err = oracles::max_relative_error(&bptt, &numeric);
                assert!(err < 1e-3, "h={h} f={f} n={n}: {err}");
            }
        }
    }
}

#[test]
fn initial_parameters_are_seeded_with_unit_forget_bias() {
    let shape = LstmShape::new(2, 3);
    let a = init_parameters(shape, 5);
    assert_eq!(a, init_parameters(shape, 5));
    assert_ne!(a, init_parameters(shape, 6));
    let block = 3 * 2 + 3 * 3 + 3;
    let forget_bias = &a[block + 3 * 2 + 3 * 3..2 * block];
    assert_eq!(forget_bias, &[1.0; 3]);
}
