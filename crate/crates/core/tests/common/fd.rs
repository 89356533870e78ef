//! Finite-difference checks of every differentiable primitive.

use ibrl::numerics::{Graph, Tensor, Var};
use ibrl::rng::{self, RngStream};
use rand::Rng;

pub const CASES: usize = 100;
pub const TOL: f64 = 1e-4;
pub const H: f64 = 1e-6;

pub const PRIMITIVES: [&str; 15] = [
    "matmul",
    "add_bias",
    "add",
    "sub",
    "mul",
    "min",
    "scale",
    "square",
    "tanh",
    "relu",
    "mean",
    "mask",
    "layer_norm",
    "concat_cols",
    "mse",
];

pub fn random_tensor(rng: &mut RngStream, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

type Op = dyn Fn(&mut Graph, &[Var]) -> Var;
type Shapes = dyn Fn(&mut RngStream) -> Vec<Vec<usize>>;
type Prepare = dyn Fn(&mut [Tensor]);

/// Builds `loss = mean(op(inputs) * weights)` and returns its value and input gradients.
fn eval_loss(inputs: &[Tensor], weights: Option<&Tensor>, op: &Op) -> (f64, Vec<Tensor>) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = op(&mut g, &vars);
    let loss = match weights {
        Some(w) => {
            let wv = g.constant(w.clone());
            let prod = g.mul(out, wv).unwrap();
            g.mean(prod)
        }
        None => out,
    };
    let value = g.value(loss).item();
    let grads = g.backward(loss).unwrap();
    (value, grads.wrt_all(&vars))
}

/// Norm-wise relative error between two gradient vectors.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = norm(a) + norm(b);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Central-difference gradient of `f` with respect to every entry of `x`.
pub fn numeric_grad(x: &[f64], f: &mut dyn FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut buf = x.to_vec();
    (0..x.len())
        .map(|i| {
            buf[i] = x[i] + H;
            let fp = f(&buf);
            buf[i] = x[i] - H;
            let fm = f(&buf);
            buf[i] = x[i];
            (fp - fm) / (2.0 * H)
        })
        .collect()
}

fn worst_error(seed: u64, shapes: &Shapes, prepare: &Prepare, op: &Op) -> f64 {
    let mut rng = rng::stream(seed, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..CASES {
        let mut inputs: Vec<Tensor> = shapes(&mut rng)
            .iter()
            .map(|s| random_tensor(&mut rng, s))
            .collect();
        prepare(&mut inputs);
        let out_shape = {
            let mut g = Graph::new();
            let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
            let o = op(&mut g, &vars);
            g.shape(o).to_vec()
        };
        let weights = (out_shape.iter().product::<usize>() > 1).then(|| random_tensor(&mut rng, &out_shape));
        let (_, analytic) = eval_loss(&inputs, weights.as_ref(), op);
        for (k, grad) in analytic.iter().enumerate() {
            let numeric = numeric_grad(inputs[k].data(), &mut |x| {
                let mut perturbed = inputs.clone();
                perturbed[k].data_mut().copy_from_slice(x);
                eval_loss(&perturbed, weights.as_ref(), op).0
            });
            worst = worst.max(rel_err(grad.data(), &numeric));
        }
    }
    worst
}

fn dims(rng: &mut RngStream) -> (usize, usize, usize) {
    (
        rng.random_range(1..5),
        rng.random_range(1..5),
        rng.random_range(1..5),
    )
}

fn same2(r: &mut RngStream) -> Vec<Vec<usize>> {
    let (n, m, _) = dims(r);
    vec![vec![n, m], vec![n, m]]
}

fn same1(r: &mut RngStream) -> Vec<Vec<usize>> {
    let (n, m, _) = dims(r);
    vec![vec![n, m]]
}

fn no_prep(_: &mut [Tensor]) {}

/// Keeps inputs away from the relu kink.
fn away_from_zero(t: &mut [Tensor]) {
    for x in t[0].data_mut() {
        if x.abs() < 1e-3 {
            *x = 1e-2;
        }
    }
}

/// Keeps the two arguments of `min` apart.
fn separate(t: &mut [Tensor]) {
    let b = t[1].clone();
    for (a, &bv) in t[0].data_mut().iter_mut().zip(b.data()) {
        if (*a - bv).abs() < 1e-3 {
            *a += 1e-2;
        }
    }
}

/// Worst relative error of the named primitive over `CASES` random inputs.
pub fn primitive_error(name: &str) -> f64 {
    match name {
        "matmul" => worst_error(
            1,
            &|r| {
                let (n, k, m) = dims(r);
                vec![vec![n, k], vec![k, m]]
            },
            &no_prep,
            &|g, v| g.matmul(v[0], v[1]).unwrap(),
        ),
        "add_bias" => worst_error(
            2,
            &|r| {
                let (n, m, _) = dims(r);
                vec![vec![n, m], vec![m]]
            },
            &no_prep,
            &|g, v| g.add_bias(v[0], v[1]).unwrap(),
        ),
        "add" => worst_error(3, &same2, &no_prep, &|g, v| g.add(v[0], v[1]).unwrap()),
        "sub" => worst_error(4, &same2, &no_prep, &|g, v| g.sub(v[0], v[1]).unwrap()),
        "mul" => worst_error(5, &same2, &no_prep, &|g, v| g.mul(v[0], v[1]).unwrap()),
        "min" => worst_error(6, &same2, &separate, &|g, v| g.min(v[0], v[1]).unwrap()),
        "scale" => worst_error(7, &same1, &no_prep, &|g, v| g.scale(v[0], -1.7)),
        "square" => worst_error(8, &same1, &no_prep, &|g, v| g.square(v[0])),
        "tanh" => worst_error(9, &same1, &no_prep, &|g, v| g.tanh(v[0])),
        "relu" => worst_error(10, &same1, &away_from_zero, &|g, v| g.relu(v[0])),
        "mean" => worst_error(11, &same1, &no_prep, &|g, v| g.mean(v[0])),
        "mask" => {
            let mask = Tensor::new(
                vec![3, 4],
                vec![0.0, 2.0, 2.0, 0.0, 2.0, 2.0, 0.0, 2.0, 0.0, 0.0, 2.0, 2.0],
            )
            .unwrap();
            worst_error(12, &|_| vec![vec![3, 4]], &no_prep, &move |g, v| {
                g.mask(v[0], &mask).unwrap()
            })
        }
        "layer_norm" => worst_error(
            13,
            &|r| {
                let n = r.random_range(1..5);
                let m = r.random_range(2..6);
                vec![vec![n, m], vec![m], vec![m]]
            },
            &no_prep,
            &|g, v| g.layer_norm(v[0], v[1], v[2]).unwrap(),
        ),
        "concat_cols" => worst_error(
            14,
            &|r| {
                let (n, a, b) = dims(r);
                vec![vec![n, a], vec![n, b]]
            },
            &no_prep,
            &|g, v| g.concat_cols(v[0], v[1]).unwrap(),
        ),
        "mse" => worst_error(15, &same2, &no_prep, &|g, v| g.mse(v[0], v[1]).unwrap()),
        other => panic!("unknown primitive {other}"),
    }
}
