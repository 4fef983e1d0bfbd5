//! Parametric building blocks: a three-layer ReLU perceptron, the affine
//! coupling block and the invertible bijector built from a stack of them.
//!
//! Every network exposes its parameters in a fixed order (`params`,
//! `params_mut`, `param_names`) and can be bound into a [`Graph`], which
//! yields the matching graph variables in the same order. Forward passes
//! work on row batches `[B, d]`.

use rand::Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{NisError, Result};

pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_BLOCKS: usize = 3;

/// Bound on the scale exponent of a coupling half-step.
pub const SCALE_CLAMP: f64 = 5.0;

/// Three-layer perceptron `in → hidden → hidden → out`, ReLU on the hidden
/// layers and identity on the output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    /// `[fan_in, fan_out]` per layer.
    weights: [Tensor; 3],
    /// `[1, fan_out]` per layer.
    biases: [Tensor; 3],
}

#[derive(Clone, Debug)]
pub struct MlpVars {
    weights: [Var; 3],
    biases: [Var; 3],
}

fn uniform_tensor<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape with positive dims")
}

impl Mlp {
    /// Uniform fan-in initialisation `U(-1/√fan_in, 1/√fan_in)` for every
    /// weight and bias; with `zero_output` the last layer starts at zero.
    pub fn new<R: Rng + ?Sized>(
        input: usize,
        hidden: usize,
        output: usize,
        zero_output: bool,
        rng: &mut R,
    ) -> Self {
        let dims = [(input, hidden), (hidden, hidden), (hidden, output)];
        let mut layer = |i: usize| {
            let (fan_in, fan_out) = dims[i];
            if zero_output && i == 2 {
                return (Tensor::zeros(&[fan_in, fan_out]), Tensor::zeros(&[1, fan_out]));
            }
            let bound = 1.0 / (fan_in as f64).sqrt();
            (
                uniform_tensor(rng, &[fan_in, fan_out], bound),
                uniform_tensor(rng, &[1, fan_out], bound),
            )
        };
        let (w0, b0) = layer(0);
        let (w1, b1) = layer(1);
        let (w2, b2) = layer(2);
        Self {
            weights: [w0, w1, w2],
            biases: [b0, b1, b2],
        }
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            weights: [
                Tensor::zeros(&[input, hidden]),
                Tensor::zeros(&[hidden, hidden]),
                Tensor::zeros(&[hidden, output]),
            ],
            biases: [
                Tensor::zeros(&[1, hidden]),
                Tensor::zeros(&[1, hidden]),
                Tensor::zeros(&[1, output]),
            ],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].shape()[0]
    }

    pub fn hidden_dim(&self) -> usize {
        self.weights[0].shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weights[2].shape()[1]
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::with_capacity(6);
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w);
            out.push(b);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::with_capacity(6);
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        out
    }

    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        (0..3)
            .flat_map(|i| [format!("{prefix}.w{i}"), format!("{prefix}.b{i}")])
            .collect()
    }

    pub fn bind(&self, g: &mut Graph) -> MlpVars {
        MlpVars {
            weights: std::array::from_fn(|i| g.leaf(self.weights[i].clone())),
            biases: std::array::from_fn(|i| g.leaf(self.biases[i].clone())),
        }
    }

    /// Evaluates on a batch `[B, in]` outside any training graph.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g);
        let xv = g.leaf(x.clone());
        let y = vars.forward(&mut g, xv)?;
        Ok(g.value(y).clone())
    }
}

impl MlpVars {
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::with_capacity(6);
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(*w);
            out.push(*b);
        }
        out
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let rows = match g.shape(x) {
            [rows, _] => *rows,
            other => {
                return Err(NisError::ShapeMismatch {
                    op: "mlp",
                    lhs: other.to_vec(),
                    rhs: g.shape(self.weights[0]).to_vec(),
                })
            }
        };
        let ones = g.leaf(Tensor::filled(&[rows, 1], 1.0));
        let mut h = x;
        for i in 0..3 {
            let lin = g.matmul(h, self.weights[i])?;
            let bias = g.matmul(ones, self.biases[i])?;
            let pre = g.add(lin, bias)?;
            h = if i < 2 { g.relu(pre) } else { pre };
        }
        Ok(h)
    }
}

/// Sum over the last axis of a `[B, d]` variable, as `[B, 1]`.
fn row_sum(g: &mut Graph, x: Var) -> Result<Var> {
    let d = g.value(x).last_dim();
    let ones = g.leaf(Tensor::filled(&[d, 1], 1.0));
    g.matmul(x, ones)
}

/// `SCALE_CLAMP · tanh(raw / SCALE_CLAMP)`.
fn squash(g: &mut Graph, raw: Var) -> Var {
    let r = g.scale(raw, 1.0 / SCALE_CLAMP);
    let t = g.tanh(r);
    g.scale(t, SCALE_CLAMP)
}

/// Affine coupling block. With `flip == false` the first half-step
/// transforms columns `split..p` conditioned on `0..split`:
///
/// ```text
/// u' = u ⊙ exp(s1(c)) + t1(c)
/// c' = c ⊙ exp(s2(u')) + t2(u')
/// ```
///
/// and `flip == true` swaps the roles of the two column ranges.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingBlock {
    dim: usize,
    split: usize,
    flip: bool,
    s1: Mlp,
    t1: Mlp,
    s2: Mlp,
    t2: Mlp,
}

#[derive(Clone, Debug)]
pub struct BlockVars {
    s1: MlpVars,
    t1: MlpVars,
    s2: MlpVars,
    t2: MlpVars,
}

impl BlockVars {
    pub fn vars(&self) -> Vec<Var> {
        [&self.s1, &self.t1, &self.s2, &self.t2]
            .iter()
            .flat_map(|m| m.vars())
            .collect()
    }
}

impl CouplingBlock {
    pub fn new<R: Rng + ?Sized>(
        dim: usize,
        split: usize,
        flip: bool,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if dim < 2 || split == 0 || split >= dim {
            return Err(NisError::Config(format!(
                "coupling block needs 1 <= split < dim, got split={split}, dim={dim}"
            )));
        }
        let (c, u) = if flip {
            (dim - split, split)
        } else {
            (split, dim - split)
        };
        Ok(Self {
            dim,
            split,
            flip,
            s1: Mlp::new(c, hidden, u, true, rng),
            t1: Mlp::new(c, hidden, u, true, rng),
            s2: Mlp::new(u, hidden, c, true, rng),
            t2: Mlp::new(u, hidden, c, true, rng),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn split(&self) -> usize {
        self.split
    }

    pub fn is_flipped(&self) -> bool {
        self.flip
    }

    fn nets(&self) -> [&Mlp; 4] {
        [&self.s1, &self.t1, &self.s2, &self.t2]
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.nets().into_iter().flat_map(|m| m.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.s1.params_mut();
        out.extend(self.t1.params_mut());
        out.extend(self.s2.params_mut());
        out.extend(self.t2.params_mut());
        out
    }

    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        ["s1", "t1", "s2", "t2"]
            .iter()
            .zip(self.nets())
            .flat_map(|(name, m)| m.param_names(&format!("{prefix}.{name}")))
            .collect()
    }

    pub fn bind(&self, g: &mut Graph) -> BlockVars {
        BlockVars {
            s1: self.s1.bind(g),
            t1: self.t1.bind(g),
            s2: self.s2.bind(g),
            t2: self.t2.bind(g),
        }
    }

    fn split_columns(&self, g: &mut Graph, x: Var) -> Result<(Var, Var)> {
        let lo = g.slice(x, 0, self.split)?;
        let hi = g.slice(x, self.split, self.dim)?;
        Ok(if self.flip { (hi, lo) } else { (lo, hi) })
    }

    fn join_columns(&self, g: &mut Graph, c: Var, u: Var) -> Result<Var> {
        if self.flip {
            g.concat(&[u, c])
        } else {
            g.concat(&[c, u])
        }
    }

    /// Returns the transformed batch and per-row `log|det J|` as `[B, 1]`.
    pub fn forward(&self, g: &mut Graph, vars: &BlockVars, x: Var) -> Result<(Var, Var)> {
        let (c, u) = self.split_columns(g, x)?;

        let raw1 = vars.s1.forward(g, c)?;
        let s1 = squash(g, raw1);
        let t1 = vars.t1.forward(g, c)?;
        let e1 = g.exp(s1)?;
        let scaled_u = g.mul(u, e1)?;
        let u_new = g.add(scaled_u, t1)?;

        let raw2 = vars.s2.forward(g, u_new)?;
        let s2 = squash(g, raw2);
        let t2 = vars.t2.forward(g, u_new)?;
        let e2 = g.exp(s2)?;
        let scaled_c = g.mul(c, e2)?;
        let c_new = g.add(scaled_c, t2)?;

        let ld1 = row_sum(g, s1)?;
        let ld2 = row_sum(g, s2)?;
        let logdet = g.add(ld1, ld2)?;
        Ok((self.join_columns(g, c_new, u_new)?, logdet))
    }

    /// Exact inverse of [`forward`](Self::forward); the returned log-det is
    /// that of the inverse map (the negative of the forward one).
    pub fn inverse(&self, g: &mut Graph, vars: &BlockVars, y: Var) -> Result<(Var, Var)> {
        let (c_new, u_new) = self.split_columns(g, y)?;

        let raw2 = vars.s2.forward(g, u_new)?;
        let s2 = squash(g, raw2);
        let t2 = vars.t2.forward(g, u_new)?;
        let diff_c = g.sub(c_new, t2)?;
        let neg_s2 = g.neg(s2);
        let inv_e2 = g.exp(neg_s2)?;
        let c = g.mul(diff_c, inv_e2)?;

        let raw1 = vars.s1.forward(g, c)?;
        let s1 = squash(g, raw1);
        let t1 = vars.t1.forward(g, c)?;
        let diff_u = g.sub(u_new, t1)?;
        let neg_s1 = g.neg(s1);
        let inv_e1 = g.exp(neg_s1)?;
        let u = g.mul(diff_u, inv_e1)?;

        let ld1 = row_sum(g, s1)?;
        let ld2 = row_sum(g, s2)?;
        let total = g.add(ld1, ld2)?;
        let logdet = g.neg(total);
        Ok((self.join_columns(g, c, u)?, logdet))
    }
}

/// Invertible map `R^p → R^p`: a stack of coupling blocks whose split
/// orientation alternates from block to block.
#[derive(Clone, Debug, PartialEq)]
pub struct Bijector {
    dim: usize,
    blocks: Vec<CouplingBlock>,
}

#[derive(Clone, Debug)]
pub struct BijectorVars {
    blocks: Vec<BlockVars>,
}

impl BijectorVars {
    pub fn vars(&self) -> Vec<Var> {
        self.blocks.iter().flat_map(|b| b.vars()).collect()
    }
}

impl Bijector {
    /// Identity-initialised bijector: every scale and translation net has a
    /// zero output layer.
    pub fn new<R: Rng + ?Sized>(
        dim: usize,
        n_blocks: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if dim < 2 {
            return Err(NisError::Config(format!(
                "bijector dimension must be at least 2, got {dim}"
            )));
        }
        if n_blocks == 0 {
            return Err(NisError::Config("bijector needs at least one block".into()));
        }
        let split = dim.div_ceil(2);
        let blocks = (0..n_blocks)
            .map(|i| CouplingBlock::new(dim, split, i % 2 == 1, hidden, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dim, blocks })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[CouplingBlock] {
        &self.blocks
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.blocks.iter().flat_map(|b| b.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.blocks.iter_mut().flat_map(|b| b.params_mut()).collect()
    }

    pub fn param_names(&self, prefix: &str) -> Vec<String> {
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(i, b)| b.param_names(&format!("{prefix}.block{i}")))
            .collect()
    }

    /// Overwrites every parameter with `U(-scale, scale)` draws.
    pub fn randomize<R: Rng + ?Sized>(&mut self, scale: f64, rng: &mut R) {
        for t in self.params_mut() {
            for v in t.data_mut() {
                *v = rng.random_range(-scale..=scale);
            }
        }
    }

    pub fn bind(&self, g: &mut Graph) -> BijectorVars {
        BijectorVars {
            blocks: self.blocks.iter().map(|b| b.bind(g)).collect(),
        }
    }

    fn check_input(&self, g: &Graph, x: Var) -> Result<()> {
        match g.shape(x) {
            [_, d] if *d == self.dim => Ok(()),
            other => Err(NisError::Dimension {
                context: "bijector input",
                expected: self.dim,
                got: other.last().copied().unwrap_or(0),
            }),
        }
    }

    /// `ψ(x)` and per-row `log|det J_ψ(x)|` (`[B, 1]`).
    pub fn forward(&self, g: &mut Graph, vars: &BijectorVars, x: Var) -> Result<(Var, Var)> {
        self.check_input(g, x)?;
        let mut h = x;
        let mut total: Option<Var> = None;
        for (block, bv) in self.blocks.iter().zip(&vars.blocks) {
            let (next, ld) = block.forward(g, bv, h)?;
            h = next;
            total = Some(match total {
                Some(t) => g.add(t, ld)?,
                None => ld,
            });
        }
        Ok((h, total.expect("at least one block")))
    }

    /// `ψ⁻¹(y)` and per-row `log|det J_{ψ⁻¹}(y)|`.
    pub fn inverse(&self, g: &mut Graph, vars: &BijectorVars, y: Var) -> Result<(Var, Var)> {
        self.check_input(g, y)?;
        let mut h = y;
        let mut total: Option<Var> = None;
        for (block, bv) in self.blocks.iter().zip(&vars.blocks).rev() {
            let (next, ld) = block.inverse(g, bv, h)?;
            h = next;
            total = Some(match total {
                Some(t) => g.add(t, ld)?,
                None => ld,
            });
        }
        if !g.value(h).is_finite() {
            return Err(NisError::NumericRange(
                "bijector inverse produced non-finite values".into(),
            ));
        }
        Ok((h, total.expect("at least one block")))
    }

    /// Batch forward outside a training graph: returns `ψ(x)` and the
    /// per-row log-determinants.
    pub fn forward_rows(&self, x: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g);
        let xv = g.leaf(x.clone());
        let (y, ld) = self.forward(&mut g, &vars, xv)?;
        Ok((g.value(y).clone(), g.value(ld).data().to_vec()))
    }

    pub fn inverse_rows(&self, y: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g);
        let yv = g.leaf(y.clone());
        let (x, ld) = self.inverse(&mut g, &vars, yv)?;
        Ok((g.value(x).clone(), g.value(ld).data().to_vec()))
    }

    /// Single micro-state convenience wrapper around [`forward_rows`](Self::forward_rows).
    pub fn forward_vec(&self, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        if x.len() != self.dim {
            return Err(NisError::Dimension {
                context: "bijector input",
                expected: self.dim,
                got: x.len(),
            });
        }
        let (y, ld) = self.forward_rows(&Tensor::matrix(1, self.dim, x.to_vec()))?;
        Ok((y.into_data(), ld[0]))
    }

    pub fn inverse_vec(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.dim {
            return Err(NisError::Dimension {
                context: "bijector input",
                expected: self.dim,
                got: y.len(),
            });
        }
        let (x, _) = self.inverse_rows(&Tensor::matrix(1, self.dim, y.to_vec()))?;
        Ok(x.into_data())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_mlp_gives_zero_output() {
        let m = Mlp::zeros(3, 8, 2);
        let y = m.forward(&Tensor::matrix(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.5, 0.5])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_path_mlp_is_linear_for_positive_inputs() {
        // hidden unit 0 carries x through both ReLUs, output reads it back
        let mut m = Mlp::zeros(1, 4, 1);
        m.params_mut()[0].data_mut()[0] = 1.0; // w0[0,0]
        m.params_mut()[2].data_mut()[0] = 1.0; // w1[0,0]
        m.params_mut()[4].data_mut()[0] = 2.0; // w2[0,0]
        for x in [0.5, 1.0, 3.0] {
            let y = m.forward(&Tensor::matrix(1, 1, vec![x])).unwrap();
            assert_eq!(y.item(), 2.0 * x);
        }
    }

    #[test]
    fn mlp_param_count() {
        let m = Mlp::new(2, 64, 3, false, &mut rng(0));
        assert_eq!(m.param_count(), 2 * 64 + 64 + 64 * 64 + 64 + 64 * 3 + 3);
        assert_eq!(m.param_names("f").len(), 6);
    }

    #[test]
    fn zero_output_init_bijector_is_identity() {
        let b = Bijector::new(4, 3, 16, &mut rng(1)).unwrap();
        let x = [0.3, -1.2, 2.5, 0.0];
        let (y, ld) = b.forward_vec(&x).unwrap();
        assert_eq!(y, x);
        assert_eq!(ld, 0.0);
        assert_eq!(b.inverse_vec(&x).unwrap(), x);
    }

    #[test]
    fn odd_dimension_splits_at_ceiling_and_alternates() {
        let b = Bijector::new(5, 3, 8, &mut rng(2)).unwrap();
        assert!(b.blocks().iter().all(|blk| blk.split() == 3));
        let flips: Vec<bool> = b.blocks().iter().map(|blk| blk.is_flipped()).collect();
        assert_eq!(flips, vec![false, true, false]);
    }

    #[test]
    fn random_block_round_trip() {
        let mut b = Bijector::new(4, 1, 16, &mut rng(3)).unwrap();
        b.randomize(0.5, &mut rng(4));
        let x = [0.7, -0.1, 1.9, -2.2];
        let (y, _) = b.forward_vec(&x).unwrap();
        let back = b.inverse_vec(&y).unwrap();
        for (a, c) in back.iter().zip(&x) {
            assert!((a - c).abs() <= 1e-6);
        }
    }

    #[test]
    fn inverse_logdet_is_negated() {
        let mut b = Bijector::new(3, 3, 8, &mut rng(5)).unwrap();
        b.randomize(0.4, &mut rng(6));
        let x = Tensor::matrix(1, 3, vec![0.2, 0.4, -0.8]);
        let (y, ld_f) = b.forward_rows(&x).unwrap();
        let (_, ld_i) = b.inverse_rows(&y).unwrap();
        assert!((ld_f[0] + ld_i[0]).abs() < 1e-10);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let b = Bijector::new(4, 3, 8, &mut rng(7)).unwrap();
        assert!(matches!(
            b.forward_vec(&[1.0, 2.0]),
            Err(NisError::Dimension { expected: 4, got: 2, .. })
        ));
        assert!(Bijector::new(1, 3, 8, &mut rng(7)).is_err());
    }
}
