mod common;

use common::{all_coords, gradcheck_params, random_tensor};
use dpfaga_core::nn::{Activation, Adjacency, Gradients, ParamStore, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;
const TOL: f64 = 1e-4;

/// Projects `out` onto a fixed random tensor so every output entry matters.
fn reduce(tape: &mut Tape, out: Var, weights: &Tensor) -> Var {
    let n = weights.len() as f64;
    let w = tape.input(weights.clone());
    let prod = tape.mul(out, w).unwrap();
    let m = tape.mean(prod);
    tape.scale(m, n)
}

fn check(store: ParamStore, out_shape: (usize, usize), build: impl Fn(&mut Tape, &[Var]) -> Var, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let proj = random_tensor(&mut rng, out_shape.0, out_shape.1);
    let loss = |s: &ParamStore| -> (f64, Gradients) {
        let mut tape = Tape::new(s);
        let vars: Vec<Var> = s.ids().map(|id| tape.param(id)).collect();
        let out = build(&mut tape, &vars);
        assert_eq!(tape.value(out).shape(), out_shape);
        let l = reduce(&mut tape, out, &proj);
        (tape.scalar(l), tape.backward(l).unwrap())
    };
    gradcheck_params(&store, &loss, &all_coords(&store), H, 1e-8)
}

fn store_of(rng: &mut ChaCha8Rng, shapes: &[(usize, usize)]) -> ParamStore {
    let mut s = ParamStore::new();
    for (i, &(r, c)) in shapes.iter().enumerate() {
        s.add(&format!("p{i}"), random_tensor(rng, r, c));
    }
    s
}

fn ring(n: usize) -> Adjacency {
    let lists: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| vec![(i, 0.5), ((i + 1) % n, 0.3), ((i + n - 1) % n, 0.2)])
        .collect();
    Adjacency::from_lists(&lists)
}

#[test]
fn dense_primitives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cases: Vec<(&str, Vec<(usize, usize)>, (usize, usize), Box<dyn Fn(&mut Tape, &[Var]) -> Var>)> = vec![
        ("matmul", vec![(3, 4), (4, 2)], (3, 2), Box::new(|t, v| t.matmul(v[0], v[1]).unwrap())),
        ("add_bias", vec![(3, 4), (1, 4)], (3, 4), Box::new(|t, v| t.add_bias(v[0], v[1]).unwrap())),
        ("add", vec![(2, 3), (2, 3)], (2, 3), Box::new(|t, v| t.add(v[0], v[1]).unwrap())),
        ("sub", vec![(2, 3), (2, 3)], (2, 3), Box::new(|t, v| t.sub(v[0], v[1]).unwrap())),
        ("mul", vec![(2, 3), (2, 3)], (2, 3), Box::new(|t, v| t.mul(v[0], v[1]).unwrap())),
        ("scale", vec![(2, 3)], (2, 3), Box::new(|t, v| t.scale(v[0], -1.7))),
        ("sigmoid", vec![(3, 3)], (3, 3), Box::new(|t, v| t.activation(v[0], Activation::Sigmoid))),
        ("tanh", vec![(3, 3)], (3, 3), Box::new(|t, v| t.activation(v[0], Activation::Tanh))),
        ("relu", vec![(3, 3)], (3, 3), Box::new(|t, v| t.activation(v[0], Activation::Relu))),
        ("concat", vec![(3, 2), (3, 1)], (3, 3), Box::new(|t, v| t.concat_cols(v[0], v[1]).unwrap())),
        ("softmax_rows", vec![(3, 4)], (3, 4), Box::new(|t, v| t.softmax_rows(v[0]))),
        ("mean", vec![(3, 4)], (1, 1), Box::new(|t, v| t.mean(v[0]))),
    ];
    for (k, (name, shapes, out, build)) in cases.into_iter().enumerate() {
        let store = store_of(&mut rng, &shapes);
        let err = check(store, out, build, 100 + k as u64);
        assert!(err < TOL, "{name}: relative error {err:e}");
    }
}

#[test]
fn losses_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let target = random_tensor(&mut rng, 4, 3);
    let store = store_of(&mut rng, &[(4, 3)]);
    let loss = |s: &ParamStore| {
        let mut tape = Tape::new(s);
        let p = tape.param(s.ids().next().unwrap());
        let l = tape.mse_loss(p, &target).unwrap();
        (tape.scalar(l), tape.backward(l).unwrap())
    };
    let err = gradcheck_params(&store, &loss, &all_coords(&store), H, 1e-8);
    assert!(err < TOL, "mse_loss: {err:e}");

    let mut soft = random_tensor(&mut rng, 4, 3).map(f64::abs);
    for r in 0..4 {
        let s: f64 = soft.row(r).iter().sum();
        soft.row_mut(r).iter_mut().for_each(|v| *v /= s);
    }
    let weights = [1.0, 0.0, 2.5, 0.7];
    let loss = |s: &ParamStore| {
        let mut tape = Tape::new(s);
        let p = tape.param(s.ids().next().unwrap());
        let l = tape.cross_entropy(p, &soft, &weights).unwrap();
        (tape.scalar(l), tape.backward(l).unwrap())
    };
    let coords: Vec<_> = all_coords(&store).into_iter().filter(|&(_, k)| k / 3 != 1).collect();
    let err = gradcheck_params(&store, &loss, &coords, H, 1e-8);
    assert!(err < TOL, "cross_entropy: {err:e}");
}

#[test]
fn graph_primitives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let adj: &'static Adjacency = Box::leak(Box::new(ring(5)));
    let batch = 2;
    let rows = batch * 5;
    let e = adj.n_edges();

    let err = check(store_of(&mut rng, &[(rows, 3)]), (rows, 3), |t, v| t.propagate(v[0], adj).unwrap(), 10);
    assert!(err < TOL, "propagate: {err:e}");

    let err = check(store_of(&mut rng, &[(rows, 2)]), (batch, e), |t, v| t.edge_scores(v[0], adj).unwrap(), 11);
    assert!(err < TOL, "edge_scores: {err:e}");

    let err = check(store_of(&mut rng, &[(batch, e)]), (batch, e), |t, v| t.edge_softmax(v[0], adj).unwrap(), 12);
    assert!(err < TOL, "edge_softmax: {err:e}");

    let err = check(
        store_of(&mut rng, &[(batch, e), (rows, 3)]),
        (rows, 3),
        |t, v| t.edge_aggregate(v[0], v[1], adj).unwrap(),
        13,
    );
    assert!(err < TOL, "edge_aggregate: {err:e}");
}

#[test]
fn constant_inputs_receive_no_gradient_work() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let store = store_of(&mut rng, &[(2, 2)]);
    let mut tape = Tape::new(&store);
    let x = tape.input(random_tensor(&mut rng, 3, 2));
    let w = tape.param(store.ids().next().unwrap());
    let y = tape.matmul(x, w).unwrap();
    let l = tape.mean(y);
    let g = tape.backward(l).unwrap();
    let expected: Vec<f64> = {
        let xv = tape.value(x);
        (0..4).map(|k| (0..3).map(|r| xv[(r, k / 2)]).sum::<f64>() / 6.0).collect()
    };
    for (a, b) in g.get(store.ids().next().unwrap()).data().iter().zip(&expected) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn softmax_rows_are_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let store = ParamStore::new();
    for _ in 0..200 {
        let mut tape = Tape::new(&store);
        let x = tape.input(random_tensor(&mut rng, 4, 6).map(|v| v * 30.0));
        let y = tape.softmax_rows(x);
        for r in 0..4 {
            let row = tape.value(y).row(r);
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
