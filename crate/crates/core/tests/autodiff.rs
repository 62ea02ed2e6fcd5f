use std::sync::Arc;

use opcd::autodiff::{Nonlinearity, Tape, Tensor, Var};
use opcd::error::Result;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;
const TINY: f64 = 1e-8;

type Build = dyn Fn(&mut Tape, &[Var]) -> Result<Var>;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Entries bounded away from zero, for the ReLU kink.
fn random_off_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let m: f64 = rng.gen_range(0.1..1.0);
            if rng.gen::<bool>() { m } else { -m }
        })
        .collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

fn eval(inputs: &[Tensor], build: &Build) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().enumerate().map(|(i, t)| tape.param(i, Arc::new(t.clone()))).collect();
    let loss = build(&mut tape, &vars).unwrap();
    tape.value(loss).item()
}

/// Largest relative error between analytic and central-difference gradients
/// over every input element. Elements where both are below [`TINY`] count
/// by absolute difference instead.
fn gradient_error(inputs: &[Tensor], build: &Build) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().enumerate().map(|(i, t)| tape.param(i, Arc::new(t.clone()))).collect();
    let loss = build(&mut tape, &vars).unwrap();
    let grads = tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (slot, input) in inputs.iter().enumerate() {
        let zero = Tensor::zeros(input.shape());
        let analytic = grads.get(slot).unwrap_or(&zero);
        for e in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[slot].data_mut()[e] += H;
            let mut minus = inputs.to_vec();
            minus[slot].data_mut()[e] -= H;
            let numeric = (eval(&plus, build) - eval(&minus, build)) / (2.0 * H);
            let a = analytic.data()[e];
            let scale = a.abs().max(numeric.abs());
            let err = if scale < TINY { (a - numeric).abs() } else { (a - numeric).abs() / scale };
            worst = worst.max(err);
        }
    }
    worst
}

/// `Σ out ⊙ w` for a fixed random `w`, so every output element gets its own
/// upstream gradient.
fn weighted_sum(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(out).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let w = Tensor::new(shape, (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
    let w = tape.constant(w);
    let prod = tape.mul(out, w)?;
    tape.sum(prod)
}

fn check(name: &str, inputs: Vec<Tensor>, build: &Build) {
    let err = gradient_error(&inputs, build);
    assert!(err <= REL_TOL, "{name}: max relative error {err:e}");
}

#[test]
fn every_primitive_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let r = &mut rng;
    check("matmul", vec![random(r, 3, 4), random(r, 4, 2)], &|t, v| {
        let o = t.matmul(v[0], v[1])?;
        weighted_sum(t, o, 1)
    });
    check("matmul_t", vec![random(r, 3, 4), random(r, 5, 4)], &|t, v| {
        let o = t.matmul_t(v[0], v[1])?;
        weighted_sum(t, o, 2)
    });
    check("add", vec![random(r, 2, 3), random(r, 2, 3)], &|t, v| {
        let o = t.add(v[0], v[1])?;
        weighted_sum(t, o, 3)
    });
    check("sub", vec![random(r, 2, 3), random(r, 2, 3)], &|t, v| {
        let o = t.sub(v[0], v[1])?;
        weighted_sum(t, o, 4)
    });
    check("mul", vec![random(r, 2, 3), random(r, 2, 3)], &|t, v| {
        let o = t.mul(v[0], v[1])?;
        weighted_sum(t, o, 5)
    });
    let row = Tensor::vector(random(r, 1, 3).into_data());
    check("add_row", vec![random(r, 4, 3), row.clone()], &|t, v| {
        let o = t.add_row(v[0], v[1])?;
        weighted_sum(t, o, 6)
    });
    check("mul_row", vec![random(r, 4, 3), row], &|t, v| {
        let o = t.mul_row(v[0], v[1])?;
        weighted_sum(t, o, 7)
    });
    check("gather_rows", vec![random(r, 5, 3)], &|t, v| {
        let o = t.gather_rows(v[0], &[4, 0, 4, 2])?;
        weighted_sum(t, o, 8)
    });
    check("slice_rows", vec![random(r, 5, 3)], &|t, v| {
        let o = t.slice_rows(v[0], 1, 3)?;
        weighted_sum(t, o, 9)
    });
    check("slice_cols", vec![random(r, 3, 5)], &|t, v| {
        let o = t.slice_cols(v[0], 2, 2)?;
        weighted_sum(t, o, 10)
    });
    check("concat_cols", vec![random(r, 3, 2), random(r, 3, 4)], &|t, v| {
        let o = t.concat_cols(&[v[0], v[1], v[0]])?;
        weighted_sum(t, o, 11)
    });
    check("softmax_rows", vec![random(r, 3, 5)], &|t, v| {
        let o = t.softmax_rows(v[0])?;
        weighted_sum(t, o, 12)
    });
    check("causal_softmax_rows", vec![random(r, 4, 4)], &|t, v| {
        let o = t.causal_softmax_rows(v[0])?;
        weighted_sum(t, o, 13)
    });
    check("log_softmax_rows", vec![random(r, 3, 5)], &|t, v| {
        let o = t.log_softmax_rows(v[0])?;
        weighted_sum(t, o, 14)
    });
    check("layer_normalize_rows", vec![random(r, 3, 6)], &|t, v| {
        let o = t.layer_normalize_rows(v[0])?;
        weighted_sum(t, o, 15)
    });
    for (i, kind) in [Nonlinearity::Gelu, Nonlinearity::Relu, Nonlinearity::Tanh, Nonlinearity::Exp]
        .into_iter()
        .enumerate()
    {
        check(&format!("{kind:?}"), vec![random_off_zero(r, 3, 4)], &move |t, v| {
            let o = t.nonlinearity(v[0], kind)?;
            weighted_sum(t, o, 16 + i as u64)
        });
    }
    check("sum", vec![random(r, 3, 4)], &|t, v| {
        let sq = t.mul(v[0], v[0])?;
        t.sum(sq)
    });
    check("mean", vec![random(r, 3, 4)], &|t, v| {
        let sq = t.mul(v[0], v[0])?;
        t.mean(sq)
    });
    check("scale", vec![random(r, 3, 4)], &|t, v| {
        let o = t.scale(v[0], -3.5)?;
        weighted_sum(t, o, 20)
    });
}

fn three_layer(t: &mut Tape, v: &[Var]) -> Result<Var> {
    let h = t.matmul(v[0], v[1])?;
    let h = t.add_row(h, v[2])?;
    let h = t.nonlinearity(h, Nonlinearity::Gelu)?;
    let h = t.matmul(h, v[3])?;
    let h = t.layer_normalize_rows(h)?;
    let h = t.nonlinearity(h, Nonlinearity::Tanh)?;
    let h = t.matmul(h, v[4])?;
    let lp = t.log_softmax_rows(h)?;
    weighted_sum(t, lp, 99)
}

#[test]
fn random_three_layer_graph_matches_finite_differences() {
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = &mut rng;
        let inputs = vec![
            random(r, 4, 5),
            random(r, 5, 6),
            Tensor::vector(random(r, 1, 6).into_data()),
            random(r, 6, 6),
            random(r, 6, 7),
        ];
        let err = gradient_error(&inputs, &three_layer);
        assert!(err <= REL_TOL, "seed {seed}: {err:e}");
    }
}

#[test]
fn large_spread_logits_stay_finite() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let row: Vec<f64> = (0..16).map(|_| rng.gen_range(-1e3..1e3)).collect();
        let x = Tensor::matrix(1, 16, row).unwrap();
        let mut tape = Tape::new();
        let v = tape.param(0, Arc::new(x.clone()));
        let lp = tape.log_softmax_rows(v).unwrap();
        let p = tape.softmax_rows(v).unwrap();
        assert!(tape.value(lp).is_finite() && tape.value(p).is_finite());
        let a = weighted_sum(&mut tape, lp, 1).unwrap();
        let b = weighted_sum(&mut tape, p, 2).unwrap();
        let loss = tape.add(a, b).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g.get(0).unwrap().is_finite());
    }
}

#[test]
fn forward_and_backward_are_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let r = &mut rng;
        let inputs = [
            random(r, 4, 5),
            random(r, 5, 6),
            Tensor::vector(random(r, 1, 6).into_data()),
            random(r, 6, 6),
            random(r, 6, 7),
        ];
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().enumerate().map(|(i, t)| tape.param(i, Arc::new(t.clone()))).collect();
        let loss = three_layer(&mut tape, &vars).unwrap();
        let value = tape.value(loss).item().to_bits();
        let grads = tape.backward(loss).unwrap();
        let bits: Vec<Vec<u64>> = grads.iter().map(|(_, g)| g.data().iter().map(|x| x.to_bits()).collect()).collect();
        (value, bits)
    };
    assert_eq!(run(), run());
}

/// `z − logsumexp(z)` with a compensated sum of the shifted exponentials
/// and `ln_1p` around the maximum term.
fn log_softmax_oracle(z: &[f64]) -> Vec<f64> {
    let (imax, &m) = z.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for (i, &v) in z.iter().enumerate() {
        if i == imax {
            continue;
        }
        let y = (v - m).exp() - c;
        let t = s + y;
        c = (t - s) - y;
        s = t;
    }
    let lse = m + s.ln_1p();
    z.iter().map(|v| v - lse).collect()
}

fn matrix_strategy() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (1usize..5, 1usize..9).prop_flat_map(|(r, c)| (Just(r), Just(c), prop::collection::vec(-30.0f64..30.0, r * c)))
}

proptest! {
    #[test]
    fn log_softmax_matches_scalar_oracle((rows, cols, data) in matrix_strategy()) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(rows, cols, data.clone()).unwrap());
        let lp = tape.log_softmax_rows(x).unwrap();
        let p = tape.softmax_rows(x).unwrap();
        for r in 0..rows {
            let oracle = log_softmax_oracle(&data[r * cols..(r + 1) * cols]);
            for (a, b) in tape.value(lp).row(r).iter().zip(&oracle) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{} vs {}", a, b);
            }
            let total: f64 = tape.value(p).row(r).iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_chain_gradients_match((m, k, n) in (1usize..4, 1usize..4, 1usize..4), seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs = vec![random(&mut rng, m, k), random(&mut rng, k, n)];
        let err = gradient_error(&inputs, &move |t, v| {
            let o = t.matmul(v[0], v[1])?;
            let o = t.log_softmax_rows(o)?;
            weighted_sum(t, o, seed)
        });
        prop_assert!(err <= REL_TOL, "{:e}", err);
    }
}
