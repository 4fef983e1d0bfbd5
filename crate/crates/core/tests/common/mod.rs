//! Independent reference computations shared by the integration tests.
//! Nothing here calls into the code under test except for plain data types.

#![allow(dead_code)]

use std::f64::consts::PI;

use nis::datagen::BoolNetTable;
use nis::dataset::TransitionDataset;

/// Central finite-difference gradient of a scalar function.
pub fn fd_grad(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            xp[i] = x[i] + h;
            let up = f(&xp);
            xp[i] = x[i] - h;
            let down = f(&xp);
            xp[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Central finite-difference Jacobian, `m × n` row-major.
pub fn fd_jacobian(f: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Vec<Vec<f64>> {
    let n = x.len();
    let m = f(x).len();
    let mut jac = vec![vec![0.0; n]; m];
    let mut xp = x.to_vec();
    for j in 0..n {
        xp[j] = x[j] + h;
        let up = f(&xp);
        xp[j] = x[j] - h;
        let down = f(&xp);
        xp[j] = x[j];
        for i in 0..m {
            jac[i][j] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    jac
}

/// `ln |det|` by Gaussian elimination with partial pivoting.
pub fn log_abs_det(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut acc = 0.0;
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        let d = a[c][c];
        if d == 0.0 {
            return f64::NEG_INFINITY;
        }
        acc += d.abs().ln();
        for r in c + 1..n {
            let k = a[r][c] / d;
            let pivot = a[c].clone();
            for (x, y) in a[r][c..].iter_mut().zip(&pivot[c..]) {
                *x -= k * y;
            }
        }
    }
    acc
}

/// Gaussian EI of a map with constant Jacobian determinant:
/// `−(1 + q ln 2π + ln det Σ)/2 + q ln 2L + ln |det A|`.
pub fn ei_constant_jacobian(log_abs_det_a: f64, sigma: &[f64], l: f64) -> f64 {
    let q = sigma.len() as f64;
    let log_det_sigma: f64 = sigma.iter().map(|s| 2.0 * s.ln()).sum();
    -0.5 * (1.0 + q * (2.0 * PI).ln() + log_det_sigma) + q * (2.0 * l).ln() + log_abs_det_a
}

/// `I(X; Y)` for `X ~ U[−L, L]`, `Y = μ(X) + σ ε` by direct quadrature of
/// `H(Y) − H(Y | X)` on midpoint grids.
pub fn grid_mi_1d(mu: &dyn Fn(f64) -> f64, sigma: f64, l: f64, nx: usize, ny: usize) -> f64 {
    let hx = 2.0 * l / nx as f64;
    let means: Vec<f64> = (0..nx).map(|i| mu(-l + (i as f64 + 0.5) * hx)).collect();
    let lo = means.iter().cloned().fold(f64::INFINITY, f64::min) - 10.0 * sigma;
    let hi = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 10.0 * sigma;
    let hy = (hi - lo) / ny as f64;
    let norm = 1.0 / (sigma * (2.0 * PI).sqrt());
    let mut h_y = 0.0;
    for k in 0..ny {
        let y = lo + (k as f64 + 0.5) * hy;
        let density: f64 = means
            .iter()
            .map(|m| {
                let z = (y - m) / sigma;
                norm * (-0.5 * z * z).exp()
            })
            .sum::<f64>()
            / nx as f64;
        if density > 0.0 {
            h_y -= density * density.ln() * hy;
        }
    }
    h_y - 0.5 * (2.0 * PI * std::f64::consts::E * sigma * sigma).ln()
}

/// Joint transition matrix of a Boolean network, enumerated directly from
/// the table's string keys: node `k` of state `s` is bit `n − 1 − k`.
pub fn brute_force_boolnet(table: &BoolNetTable) -> Vec<Vec<f64>> {
    let n = table.nodes.len();
    let m = 1usize << n;
    let bit = |s: usize, name: &str| {
        let k = table.nodes.iter().position(|x| x == name).unwrap();
        (s >> (n - 1 - k)) & 1
    };
    let mut out = vec![vec![0.0; m]; m];
    for (s, row) in out.iter_mut().enumerate() {
        for (t, cell) in row.iter_mut().enumerate() {
            let mut prob = 1.0;
            for node in &table.nodes {
                let mech = &table.mechanisms[node];
                let key: String = mech
                    .inputs
                    .iter()
                    .map(|i| if bit(s, i) == 1 { '1' } else { '0' })
                    .collect();
                let p0 = mech.p_zero[&key];
                prob *= if bit(t, node) == 0 { p0 } else { 1.0 - p0 };
            }
            *cell = prob;
        }
    }
    out
}

/// Transition frequencies of a one-hot dataset, with the visit count of
/// every source state.
pub fn empirical_transitions(ds: &TransitionDataset) -> (Vec<Vec<f64>>, Vec<usize>) {
    let p = ds.dim();
    let hot = |row: &[f64]| row.iter().position(|&v| v == 1.0).expect("one-hot row");
    let mut counts = vec![vec![0usize; p]; p];
    for i in 0..ds.len() {
        counts[hot(ds.current(i))][hot(ds.next(i))] += 1;
    }
    let visits: Vec<usize> = counts.iter().map(|r| r.iter().sum()).collect();
    let freq = counts
        .iter()
        .zip(&visits)
        .map(|(r, &n)| r.iter().map(|&c| c as f64 / n.max(1) as f64).collect())
        .collect();
    (freq, visits)
}

/// Spring latent estimate from the two sensors: `((x0 + x2)/2, (x1 + x3)/2)`.
pub fn spring_latent(x: &[f64]) -> (f64, f64) {
    (0.5 * (x[0] + x[2]), 0.5 * (x[1] + x[3]))
}

/// Period (in steps) of a planar trajectory from its accumulated unwrapped
/// phase angle.
pub fn rotation_period(points: &[(f64, f64)]) -> f64 {
    let mut total = 0.0;
    for w in points.windows(2) {
        let a = w[0].1.atan2(w[0].0);
        let b = w[1].1.atan2(w[1].0);
        let mut d = b - a;
        while d > PI {
            d -= 2.0 * PI;
        }
        while d < -PI {
            d += 2.0 * PI;
        }
        total += d;
    }
    2.0 * PI * (points.len() - 1) as f64 / total.abs()
}

/// The chain with seven mutually communicating states and one absorbing
/// state, written out entry by entry.
pub fn eight_state_chain() -> Vec<Vec<f64>> {
    let s = 1.0 / 7.0;
    let mut m = vec![vec![s, s, s, s, s, s, s, 0.0]; 7];
    m.push(vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    m
}

pub fn pass_line(id: u32, name: &str, passed: bool, detail: &str) {
    println!("criterion {id} [{name}]: {} ({detail})", if passed { "PASS" } else { "FAIL" });
}

// ------------------------------------------------------------ gradient suite

pub type OpBuilder = fn(&mut nis::Graph, &[nis::Var]) -> nis::Result<nis::Var>;

/// Every differentiable primitive with operand shapes that exercise it.
/// Inputs of `relu` and `abs` are kept away from their kink.
pub fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, OpBuilder)> {
    vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], |g, v| g.matmul(v[0], v[1])),
        ("matvec", vec![vec![3, 4], vec![4]], |g, v| g.matmul(v[0], v[1])),
        ("add", vec![vec![2, 3], vec![2, 3]], |g, v| g.add(v[0], v[1])),
        ("sub", vec![vec![2, 3], vec![2, 3]], |g, v| g.sub(v[0], v[1])),
        ("mul", vec![vec![2, 3], vec![2, 3]], |g, v| g.mul(v[0], v[1])),
        ("relu", vec![vec![2, 3]], |g, v| Ok(g.relu(v[0]))),
        ("exp", vec![vec![2, 3]], |g, v| g.exp(v[0])),
        ("neg", vec![vec![2, 3]], |g, v| Ok(g.neg(v[0]))),
        ("scale", vec![vec![2, 3]], |g, v| Ok(g.scale(v[0], -1.7))),
        ("tanh", vec![vec![2, 3]], |g, v| Ok(g.tanh(v[0]))),
        ("abs", vec![vec![2, 3]], |g, v| Ok(g.abs(v[0]))),
        ("sum", vec![vec![2, 3]], |g, v| Ok(g.sum(v[0]))),
        ("concat", vec![vec![2, 3], vec![2, 2]], |g, v| g.concat(&[v[0], v[1]])),
        ("slice", vec![vec![2, 5]], |g, v| g.slice(v[0], 1, 4)),
        ("mlp", vec![vec![4, 3], vec![3, 5], vec![5, 2]], |g, v| {
            let h = g.matmul(v[0], v[1])?;
            let h = g.tanh(h);
            let h = g.matmul(h, v[2])?;
            let r = g.relu(h);
            g.exp(r)
        }),
    ]
}

/// Worst relative error `|a − n| / max(1, |n|)` between the autodiff
/// gradient and central differences (h = 1e-5) of `Σ w ⊙ op(inputs)` at
/// one random point.
pub fn op_grad_error<R: rand::Rng>(shapes: &[Vec<usize>], build: OpBuilder, rng: &mut R) -> f64 {
    use nis::{Graph, Tensor};
    let draw = |rng: &mut R, n: usize| -> Vec<f64> {
        (0..n)
            .map(|_| loop {
                let v: f64 = rng.random_range(-2.0..2.0);
                if v.abs() > 0.05 {
                    break v;
                }
            })
            .collect()
    };
    let inputs: Vec<Vec<f64>> = shapes.iter().map(|s| draw(rng, s.iter().product())).collect();
    let out_len = {
        let mut g = Graph::new();
        let vars: Vec<_> = shapes
            .iter()
            .zip(&inputs)
            .map(|(s, d)| g.leaf(Tensor::new(s.clone(), d.clone()).unwrap()))
            .collect();
        let out = build(&mut g, &vars).unwrap();
        g.value(out).numel()
    };
    let w = draw(rng, out_len);
    let scalar = |vals: &[Vec<f64>]| -> (f64, Vec<Tensor>) {
        let mut g = Graph::new();
        let vars: Vec<_> = shapes
            .iter()
            .zip(vals)
            .map(|(s, d)| g.leaf(Tensor::new(s.clone(), d.clone()).unwrap()))
            .collect();
        let out = build(&mut g, &vars).unwrap();
        let shape = g.shape(out).to_vec();
        let wv = g.leaf(Tensor::new(shape, w.clone()).unwrap());
        let prod = g.mul(out, wv).unwrap();
        let root = g.sum(prod);
        let grads = g.backward(root).unwrap();
        (g.value(root).item(), vars.iter().map(|&v| grads.get(v)).collect())
    };
    let (_, analytic) = scalar(&inputs);
    let mut worst: f64 = 0.0;
    for k in 0..inputs.len() {
        let f = |x: &[f64]| {
            let mut vals = inputs.clone();
            vals[k] = x.to_vec();
            scalar(&vals).0
        };
        let numeric = fd_grad(&f, &inputs[k], 1e-5);
        for (a, n) in analytic[k].data().iter().zip(&numeric) {
            worst = worst.max((a - n).abs() / n.abs().max(1.0));
        }
    }
    worst
}
