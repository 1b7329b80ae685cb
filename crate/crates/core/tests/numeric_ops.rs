//! Operation-level checks of the tape: closed-form examples and
//! finite-difference agreement of every backward rule.

use std::sync::Arc;

use hetscene::numeric::gradcheck::{check_params, relative_error, STEP};
use hetscene::numeric::{ParamStore, Tape, Tensor, Var};
use hetscene::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(rows, cols, |_, _| rng.gen_range(-1.5..1.5))
}

/// Checks every entry of `inputs` for the scalar produced by `f`.
fn fd_check(inputs: Vec<Tensor<f64>>, f: impl Fn(&mut Tape<f64>, &[Var]) -> Var) -> f64 {
    let mut store = ParamStore::new();
    let ids: Vec<_> = inputs
        .into_iter()
        .enumerate()
        .map(|(i, t)| store.insert(format!("x{i}"), t).unwrap())
        .collect();
    let report = check_params(&mut store, None, |tape, store| {
        let vars: Vec<Var> = ids.iter().map(|&id| tape.param(store, id)).collect();
        Ok(f(tape, &vars))
    })
    .unwrap();
    assert!(report.checked > 0);
    report.max_rel_error
}

/// Contracts an arbitrary-shaped output with fixed random weights so every
/// output entry influences the scalar.
fn project(tape: &mut Tape<f64>, v: Var, seed: u64) -> Var {
    let (r, c) = tape.shape(v);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(Tensor::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0)));
    let m = tape.mul(v, w).unwrap();
    tape.sum(m)
}

const TOL: f64 = 1e-5;

#[test]
fn matmul_backward() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let err = fd_check(vec![random(3, 4, &mut rng), random(4, 2, &mut rng)], |t, v| {
        let y = t.matmul(v[0], v[1]).unwrap();
        project(t, y, 9)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn elementwise_backward() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let err = fd_check(vec![random(3, 3, &mut rng), random(3, 3, &mut rng)], |t, v| {
        let a = t.add(v[0], v[1]).unwrap();
        let s = t.sub(a, v[1]).unwrap();
        let m = t.mul(s, v[1]).unwrap();
        let sg = t.sigmoid(m);
        let th = t.tanh(v[0]);
        let sc = t.scale(th, -0.7);
        let z = t.add(sg, sc).unwrap();
        project(t, z, 3)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn activations_backward() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let err = fd_check(vec![random(4, 5, &mut rng)], |t, v| {
        let a = t.relu(v[0]);
        let b = t.leaky_relu(v[0], 0.2).unwrap();
        let s = t.add(a, b).unwrap();
        project(t, s, 4)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn structural_ops_backward() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let err = fd_check(
        vec![random(4, 3, &mut rng), random(4, 2, &mut rng), random(1, 5, &mut rng)],
        |t, v| {
            let c = t.concat_cols(&[v[0], v[1]]).unwrap();
            let c = t.add_row(c, v[2]).unwrap();
            let s = t.slice_cols(c, 1, 3).unwrap();
            let g = t.gather_rows(s, Arc::from(vec![3, 0, 0, 2, 1])).unwrap();
            let sc = t.scatter_add_rows(g, Arc::from(vec![1, 1, 0, 2, 0]), 3).unwrap();
            let m = t.mean(sc).unwrap();
            let p = project(t, sc, 5);
            t.add(m, p).unwrap()
        },
    );
    assert!(err < TOL, "{err}");
}

#[test]
fn attention_ops_backward() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let err = fd_check(
        vec![random(5, 6, &mut rng), random(1, 6, &mut rng), random(5, 6, &mut rng)],
        |t, v| {
            let logits = t.head_dot(v[0], v[1], 2).unwrap();
            let alpha = t.segment_softmax(logits, Arc::from(vec![0, 2, 0, 2, 1]), 3).unwrap();
            let scaled = t.head_scale(v[2], alpha).unwrap();
            project(t, scaled, 6)
        },
    );
    assert!(err < TOL, "{err}");
}

#[test]
fn losses_backward() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let err = fd_check(vec![random(4, 1, &mut rng), random(3, 4, &mut rng)], |t, v| {
        let b = t
            .bce_with_logits(v[0], &[1.0, 0.0, 1.0, 0.0], &[1.0, 1.0, 0.0, 2.0])
            .unwrap();
        let c = t.cross_entropy(v[1], &[3, 0, 1]).unwrap();
        t.add(b, c).unwrap()
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn gru_sequence_backward() {
    use hetscene::numeric::{gru_sequence, GruParams};
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::<f64>::new();
    let p = GruParams::new(&mut store, "gru", 2, 3, &mut rng).unwrap();
    for id in store.ids().collect::<Vec<_>>() {
        let t = random(store.value(id).rows(), store.value(id).cols(), &mut rng);
        *store.value_mut(id) = t;
    }
    let seq = random(2, 8, &mut rng);
    let report = check_params(&mut store, None, |tape, store| {
        let vars = p.load(tape, store)?;
        let s = tape.constant(seq.clone());
        let h = gru_sequence(tape, s, 4, &vars)?;
        Ok(project(tape, h, 8))
    })
    .unwrap();
    assert_eq!(report.checked, 3 * (2 * 3) + 3 * 9 + 3 * 3);
    assert!(report.max_rel_error < TOL, "{report:?}");
}

#[test]
fn leaky_relu_examples() {
    let mut t = Tape::<f64>::new();
    let x = t.variable(Tensor::from_rows(&[vec![2.0, -1.0, -3.0]]).unwrap());
    let y = t.leaky_relu(x, 0.2).unwrap();
    assert_eq!(t.value(y).data(), &[2.0, -0.2, -0.6000000000000001]);
    let s = t.sum(y);
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[1.0, 0.2, 0.2]);
    // central difference at x = -3
    let f = |x: f64| if x > 0.0 { x } else { 0.2 * x };
    let fd = (f(-3.0 + STEP) - f(-3.0 - STEP)) / (2.0 * STEP);
    assert!((fd - 0.2).abs() < 1e-6);
    assert!(t.leaky_relu(x, 1.0).is_err());
}

#[test]
fn relu_examples() {
    let mut t = Tape::<f32>::new();
    let x = t.variable(Tensor::from_rows(&[vec![-5.0, 5.0, -1.0, 0.0, 2.0]]).unwrap());
    let y = t.relu(x);
    assert_eq!(t.value(y).data(), &[0.0, 5.0, 0.0, 0.0, 2.0]);
    let s = t.sum(y);
    let g = t.backward(s).unwrap();
    // subgradient at zero is zero
    assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0, 0.0, 0.0, 1.0]);
}

#[test]
fn backward_examples() {
    let mut t = Tape::<f64>::new();
    let x = t.variable(Tensor::from_fn(2, 3, |r, c| (r + c) as f64));
    let s = t.sum(x);
    let g = t.backward(s).unwrap();
    assert!(g.get(x).unwrap().data().iter().all(|&v| v == 1.0));
    assert_eq!(g.get(s).unwrap().data(), &[1.0]);

    let mut t = Tape::<f64>::new();
    let x = t.variable(Tensor::scalar(3.0));
    let y = t.variable(Tensor::scalar(4.0));
    let p = t.mul(x, y).unwrap();
    let g = t.backward(p).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[4.0]);
    assert_eq!(g.get(y).unwrap().data(), &[3.0]);

    let v = t.variable(Tensor::zeros(2, 1));
    assert!(matches!(t.backward(v), Err(Error::Contract(_))));
}

#[test]
fn random_three_layer_composite() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for trial in 0..5 {
        let x = random(4, 5, &mut rng);
        let err = fd_check(
            vec![random(5, 6, &mut rng), random(6, 4, &mut rng), random(4, 1, &mut rng)],
            |t, v| {
                let xin = t.constant(x.clone());
                let h = t.matmul(xin, v[0]).unwrap();
                let h = t.relu(h);
                let h = t.matmul(h, v[1]).unwrap();
                let h = t.relu(h);
                let h = t.matmul(h, v[2]).unwrap();
                t.sum(h)
            },
        );
        assert!(err < TOL, "trial {trial}: {err}");
    }
}

#[test]
fn non_finite_values_poison_backward() {
    let mut t = Tape::<f64>::new();
    let x = t.variable(Tensor::scalar(f64::MAX));
    let y = t.scale(x, 10.0);
    assert_eq!(t.fault(), Some("scale"));
    assert!(matches!(t.backward(y), Err(Error::NonFinite("scale"))));
}

#[test]
fn dropout_semantics() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut t = Tape::<f32>::new();
    let x = t.variable(Tensor::filled(1, 100_000, 1.0));
    assert_eq!(t.dropout(x, 0.3, false, &mut rng).unwrap(), x);
    assert_eq!(t.dropout(x, 0.0, true, &mut rng).unwrap(), x);
    assert!(t.dropout(x, 1.0, true, &mut rng).is_err());

    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = t.dropout(x, 0.3, true, &mut rng).unwrap();
        let vals = t.value(y).data();
        let zeros = vals.iter().filter(|&&v| v == 0.0).count() as f64 / vals.len() as f64;
        assert!((zeros - 0.3).abs() < 0.01, "{zeros}");
        let kept = vals.iter().find(|&&v| v != 0.0).unwrap();
        assert!((kept - 1.0 / 0.7).abs() < 1e-6);
    }
}

#[test]
fn replay_is_bitwise_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut t = Tape::<f32>::new();
        let a = t.variable(Tensor::from_fn(8, 8, |r, c| ((r * 8 + c) as f32).sin()));
        let b = t.matmul(a, a).unwrap();
        let d = t.dropout(b, 0.3, true, &mut rng).unwrap();
        let s = t.tanh(d);
        let l = t.sum(s);
        let g = t.backward(l).unwrap();
        g.get(a).unwrap().clone()
    };
    assert_eq!(run(), run());
}

#[test]
fn relative_error_floor() {
    assert_eq!(relative_error(1.0, 1.0), 0.0);
    assert!(relative_error(1e-12, 0.0) < 1e-7);
    assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
}
