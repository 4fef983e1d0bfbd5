//! The squeezer model: encoder `χ_q ∘ ψ`, Euler macro step
//! `y ↦ y + f(y)`, decoder `ψ⁻¹(y ⊕ z)` with standard-normal filler `z`,
//! the training loop on one-step micro prediction, pure-macro rollouts and
//! a parameter-matched feed-forward baseline.

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::dataset::TransitionDataset;
use crate::error::{NisError, Result};
use crate::networks::{Bijector, BijectorVars, Mlp, MlpVars, DEFAULT_BLOCKS, DEFAULT_HIDDEN};
use crate::optim::{clip_global_norm, Optimizer, OptimizerKind};
use crate::rng::stream;

/// Rows per graph when evaluating whole datasets.
const EVAL_CHUNK: usize = 1024;

/// Macro trajectories beyond this magnitude are treated as diverged.
pub const ROLLOUT_LIMIT: f64 = 1e12;

/// Objective norm `‖x̂ − x‖_l`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    #[default]
    L2,
}

impl Norm {
    pub fn from_order(l: u8) -> Result<Self> {
        match l {
            1 => Ok(Norm::L1),
            2 => Ok(Norm::L2),
            other => Err(NisError::Config(format!("objective norm must be 1 or 2, got {other}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    pub blocks: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: DEFAULT_HIDDEN,
            blocks: DEFAULT_BLOCKS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub norm: Norm,
    pub grad_clip: f64,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 128,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            norm: Norm::L2,
            grad_clip: 1.0,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(NisError::Config(format!("train config: {what}")));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(self.grad_clip.is_finite() && self.grad_clip > 0.0) {
            return bad("gradient clip must be positive");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation fraction must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct NisModel {
    bijector: Bijector,
    q: usize,
    dynamics: Mlp,
    norm: Norm,
}

#[derive(Clone, Debug)]
pub struct ModelVars {
    bijector: BijectorVars,
    dynamics: MlpVars,
}

impl ModelVars {
    /// Graph variables in the order of [`NisModel::params`].
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.bijector.vars();
        v.extend(self.dynamics.vars());
        v
    }
}

fn check_cols(g: &Graph, v: Var, expected: usize, context: &'static str) -> Result<()> {
    match g.shape(v) {
        [_, d] if *d == expected => Ok(()),
        other => Err(NisError::Dimension {
            context,
            expected,
            got: other.last().copied().unwrap_or(0),
        }),
    }
}

fn standard_normal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// How the decoder fills the `p − q` dropped coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeNoise {
    /// `z = 0`: deterministic decoding.
    Zero,
    /// Fresh `z ~ N(0, I)` from a seeded stream.
    Sampled { seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    /// `steps + 1` macro states, starting with `encode(x_0)`.
    pub macro_states: Vec<Vec<f64>>,
    /// `steps + 1` micro states, starting with `x_0` itself.
    pub micro_states: Vec<Vec<f64>>,
}

impl NisModel {
    /// Identity-initialised bijector plus a freshly initialised dynamics net.
    pub fn new(p: usize, q: usize, arch: ModelConfig, norm: Norm, seed: u64) -> Result<Self> {
        if q == 0 || q > p {
            return Err(NisError::Config(format!("macro dimension q={q} must satisfy 1 <= q <= p={p}")));
        }
        let mut rng = stream(seed, "model/init");
        let bijector = Bijector::new(p, arch.blocks, arch.hidden, &mut rng)?;
        let dynamics = Mlp::new(q, arch.hidden, q, false, &mut rng);
        Ok(Self {
            bijector,
            q,
            dynamics,
            norm,
        })
    }

    pub fn from_parts(bijector: Bijector, q: usize, dynamics: Mlp, norm: Norm) -> Result<Self> {
        if q == 0 || q > bijector.dim() {
            return Err(NisError::Config(format!(
                "macro dimension q={q} must satisfy 1 <= q <= p={}",
                bijector.dim()
            )));
        }
        if dynamics.input_dim() != q || dynamics.output_dim() != q {
            return Err(NisError::Dimension {
                context: "dynamics net",
                expected: q,
                got: dynamics.input_dim(),
            });
        }
        Ok(Self {
            bijector,
            q,
            dynamics,
            norm,
        })
    }

    pub fn p(&self) -> usize {
        self.bijector.dim()
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn norm(&self) -> Norm {
        self.norm
    }

    pub fn arch(&self) -> ModelConfig {
        ModelConfig {
            hidden: self.dynamics.hidden_dim(),
            blocks: self.bijector.blocks().len(),
        }
    }

    pub fn bijector(&self) -> &Bijector {
        &self.bijector
    }

    pub fn bijector_mut(&mut self) -> &mut Bijector {
        &mut self.bijector
    }

    pub fn dynamics(&self) -> &Mlp {
        &self.dynamics
    }

    pub fn dynamics_mut(&mut self) -> &mut Mlp {
        &mut self.dynamics
    }

    pub fn param_count(&self) -> usize {
        self.bijector.param_count() + self.dynamics.param_count()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut v = self.bijector.params();
        v.extend(self.dynamics.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.bijector.params_mut();
        v.extend(self.dynamics.params_mut());
        v
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut v = self.bijector.param_names("bijector");
        v.extend(self.dynamics.param_names("dynamics"));
        v
    }

    pub fn bind(&self, g: &mut Graph) -> ModelVars {
        ModelVars {
            bijector: self.bijector.bind(g),
            dynamics: self.dynamics.bind(g),
        }
    }

    // ---- graph-level building blocks

    /// `χ_q(ψ(x))` for a `[B, p]` batch; also returns `ψ(x)`.
    pub fn encode_graph(&self, g: &mut Graph, vars: &ModelVars, x: Var) -> Result<(Var, Var)> {
        check_cols(g, x, self.p(), "encode input")?;
        let (full, _) = self.bijector.forward(g, &vars.bijector, x)?;
        let y = if self.q == self.p() {
            full
        } else {
            g.slice(full, 0, self.q)?
        };
        Ok((y, full))
    }

    /// `y + f(y)`.
    pub fn macro_step_graph(&self, g: &mut Graph, vars: &ModelVars, y: Var) -> Result<Var> {
        check_cols(g, y, self.q, "macro state")?;
        let drift = vars.dynamics.forward(g, y)?;
        g.add(y, drift)
    }

    /// `ψ⁻¹(y ⊕ z)`; `z` must be `[B, p − q]` when `q < p` and is ignored
    /// otherwise.
    pub fn decode_graph(&self, g: &mut Graph, vars: &ModelVars, y: Var, z: Option<Var>) -> Result<Var> {
        check_cols(g, y, self.q, "macro state")?;
        let full = if self.q == self.p() {
            y
        } else {
            let z = z.ok_or(NisError::Dimension {
                context: "decoder filler",
                expected: self.p() - self.q,
                got: 0,
            })?;
            check_cols(g, z, self.p() - self.q, "decoder filler")?;
            g.concat(&[y, z])?
        };
        let (x, _) = self.bijector.inverse(g, &vars.bijector, full)?;
        Ok(x)
    }

    /// Loss graph for one batch; returns the scalar loss.
    pub fn loss_graph(
        &self,
        g: &mut Graph,
        vars: &ModelVars,
        x_t: Tensor,
        x_next: Tensor,
        z: Option<Tensor>,
    ) -> Result<Var> {
        let rows = x_t.shape()[0];
        let xt = g.leaf(x_t);
        let target = g.leaf(x_next);
        let (y, _) = self.encode_graph(g, vars, xt)?;
        let y_next = self.macro_step_graph(g, vars, y)?;
        let zv = z.map(|t| g.leaf(t));
        let x_hat = self.decode_graph(g, vars, y_next, zv)?;
        micro_loss(g, x_hat, target, self.norm, rows * self.p())
    }

    // ---- value-level API

    fn check_len(&self, v: &[f64], expected: usize, context: &'static str) -> Result<()> {
        if v.len() != expected {
            return Err(NisError::Dimension {
                context,
                expected,
                got: v.len(),
            });
        }
        Ok(())
    }

    /// Encodes every row of `x: [B, p]`, returning `[B, q]`.
    pub fn encode_batch(&self, x: &Tensor) -> Result<Tensor> {
        map_rows(x, self.q, |rows| {
            let mut g = Graph::new();
            let vars = self.bind(&mut g);
            let xv = g.leaf(rows);
            let (y, _) = self.encode_graph(&mut g, &vars, xv)?;
            Ok(g.value(y).clone())
        })
    }

    /// `ψ(x)` for every row.
    pub fn transform_batch(&self, x: &Tensor) -> Result<Tensor> {
        map_rows(x, self.p(), |rows| Ok(self.bijector.forward_rows(&rows)?.0))
    }

    pub fn macro_step_batch(&self, y: &Tensor) -> Result<Tensor> {
        map_rows(y, self.q, |rows| {
            let mut g = Graph::new();
            let vars = self.bind(&mut g);
            let yv = g.leaf(rows);
            let out = self.macro_step_graph(&mut g, &vars, yv)?;
            Ok(g.value(out).clone())
        })
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x, self.p(), "micro state")?;
        Ok(self.encode_batch(&Tensor::matrix(1, x.len(), x.to_vec()))?.into_data())
    }

    pub fn macro_step(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_len(y, self.q, "macro state")?;
        Ok(self.macro_step_batch(&Tensor::matrix(1, y.len(), y.to_vec()))?.into_data())
    }

    /// Decodes `y` with explicit filler `z` (`p − q` entries; empty when
    /// `q = p`).
    pub fn decode(&self, y: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        self.check_len(y, self.q, "macro state")?;
        self.check_len(z, self.p() - self.q, "decoder filler")?;
        let mut full = y.to_vec();
        full.extend_from_slice(z);
        self.bijector.inverse_vec(&full)
    }

    /// Decodes `y` with `z ~ N(0, I)` drawn from `rng`.
    pub fn decode_sampled(&self, y: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let z = standard_normal(rng, self.p() - self.q);
        self.decode(y, &z)
    }

    /// The `p − q` coordinates of `ψ(x)` that the encoder drops.
    pub fn dropped(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x, self.p(), "micro state")?;
        let (full, _) = self.bijector.forward_vec(x)?;
        Ok(full[self.q..].to_vec())
    }

    /// `x̂_{t+1} = ψ⁻¹((y + f(y)) ⊕ z)` with `y = encode(x_t)`.
    pub fn predict_micro(&self, x: &[f64], noise: DecodeNoise) -> Result<Vec<f64>> {
        let y = self.encode(x)?;
        let y_next = self.macro_step(&y)?;
        match noise {
            DecodeNoise::Zero => self.decode(&y_next, &vec![0.0; self.p() - self.q]),
            DecodeNoise::Sampled { seed } => {
                let mut rng = stream(seed, "predict/noise");
                self.decode_sampled(&y_next, &mut rng)
            }
        }
    }

    /// Iterates the macro dynamics from `encode(x0)` without re-encoding
    /// and decodes every visited macro state.
    pub fn rollout(&self, x0: &[f64], steps: usize, noise: DecodeNoise) -> Result<Rollout> {
        if steps == 0 {
            return Err(NisError::Config("rollout needs at least one step".into()));
        }
        let mut rng = match noise {
            DecodeNoise::Sampled { seed } => Some(stream(seed, "rollout/noise")),
            DecodeNoise::Zero => None,
        };
        let mut y = self.encode(x0)?;
        let mut out = Rollout {
            macro_states: vec![y.clone()],
            micro_states: vec![x0.to_vec()],
        };
        for step in 1..=steps {
            y = self.macro_step(&y)?;
            if let Some(bad) = y.iter().find(|v| !(v.abs() <= ROLLOUT_LIMIT)) {
                return Err(NisError::NumericRange(format!(
                    "macro rollout diverged at step {step} (|y| = {bad})"
                )));
            }
            let x = match rng.as_mut() {
                Some(r) => self.decode_sampled(&y, r)?,
                None => self.decode(&y, &vec![0.0; self.p() - self.q])?,
            };
            out.macro_states.push(y.clone());
            out.micro_states.push(x);
        }
        Ok(out)
    }

    /// Per-dimension macro residual variances
    /// `σ_i² = mean((y_t + f(y_t))_i − encode(x_{t+1})_i)²` over `rows`.
    pub fn macro_residual_variance(&self, dataset: &TransitionDataset, rows: &[usize]) -> Result<Vec<f64>> {
        if rows.is_empty() {
            return Err(NisError::Config("no rows to estimate residual variance".into()));
        }
        let mut acc = vec![0.0; self.q];
        for chunk in rows.chunks(EVAL_CHUNK) {
            let (cur, nxt) = dataset.gather(chunk);
            let pred = self.macro_step_batch(&self.encode_batch(&cur)?)?;
            let target = self.encode_batch(&nxt)?;
            for (i, (a, b)) in pred.data().iter().zip(target.data()).enumerate() {
                acc[i % self.q] += (a - b) * (a - b);
            }
        }
        Ok(acc.into_iter().map(|s| s / rows.len() as f64).collect())
    }
}

/// Evaluates `f` on chunks of rows of `x` and stacks the results.
fn map_rows(x: &Tensor, out_cols: usize, f: impl Fn(Tensor) -> Result<Tensor>) -> Result<Tensor> {
    let (rows, cols) = match x.shape() {
        [r, c] => (*r, *c),
        other => {
            return Err(NisError::ShapeMismatch {
                op: "rows",
                lhs: other.to_vec(),
                rhs: vec![0, 0],
            })
        }
    };
    let mut data = Vec::with_capacity(rows * out_cols);
    let mut start = 0;
    while start < rows {
        let end = (start + EVAL_CHUNK).min(rows);
        let chunk = Tensor::matrix(end - start, cols, x.data()[start * cols..end * cols].to_vec());
        let out = f(chunk)?;
        data.extend_from_slice(out.data());
        start = end;
    }
    Ok(Tensor::matrix(rows, out_cols, data))
}

/// Mean of `(x̂ − x)²` (L2) or `|x̂ − x|` (L1) over all entries.
fn micro_loss(g: &mut Graph, x_hat: Var, target: Var, norm: Norm, count: usize) -> Result<Var> {
    let diff = g.sub(x_hat, target)?;
    let per_entry = match norm {
        Norm::L2 => g.mul(diff, diff)?,
        Norm::L1 => g.abs(diff),
    };
    let total = g.sum(per_entry);
    Ok(g.scale(total, 1.0 / count as f64))
}

// ------------------------------------------------------------------ training

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub best_val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub train_rows: Vec<usize>,
    pub val_rows: Vec<usize>,
}

/// Anything trainable on one-step micro prediction.
pub trait Predictor: Clone {
    /// Width of the per-row filler noise the loss needs (0 for none).
    fn noise_dim(&self) -> usize;
    fn param_sizes(&self) -> Vec<usize>;
    fn param_tensors_mut(&mut self) -> Vec<&mut Tensor>;
    /// Builds the loss of one batch; returns the loss and the parameter
    /// variables in `param_tensors_mut` order.
    fn batch_loss(&self, g: &mut Graph, x_t: Tensor, x_next: Tensor, z: Option<Tensor>) -> Result<(Var, Vec<Var>)>;
}

impl Predictor for NisModel {
    fn noise_dim(&self) -> usize {
        self.p() - self.q
    }

    fn param_sizes(&self) -> Vec<usize> {
        self.params().iter().map(|t| t.numel()).collect()
    }

    fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.params_mut()
    }

    fn batch_loss(&self, g: &mut Graph, x_t: Tensor, x_next: Tensor, z: Option<Tensor>) -> Result<(Var, Vec<Var>)> {
        let vars = self.bind(g);
        let loss = self.loss_graph(g, &vars, x_t, x_next, z)?;
        Ok((loss, vars.vars()))
    }
}

/// Deterministic train/validation split.
pub fn split_rows(n: usize, validation_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(NisError::Config(format!("need at least 2 pairs to split, got {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(seed, "train/split"));
    let n_val = ((n as f64 * validation_fraction).round() as usize).clamp(1, n - 1);
    let val = idx[..n_val].to_vec();
    let train = idx[n_val..].to_vec();
    Ok((train, val))
}

fn noise_tensor(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Option<Tensor> {
    (dim > 0).then(|| Tensor::matrix(rows, dim, standard_normal(rng, rows * dim)))
}

fn evaluate<P: Predictor>(model: &P, dataset: &TransitionDataset, rows: &[usize], seed: u64) -> Result<f64> {
    // Fixed filler noise so validation losses are comparable across epochs.
    let mut rng = stream(seed, "train/val-noise");
    let mut total = 0.0;
    for chunk in rows.chunks(EVAL_CHUNK) {
        let (cur, nxt) = dataset.gather(chunk);
        let z = noise_tensor(&mut rng, chunk.len(), model.noise_dim());
        let mut g = Graph::new();
        let (loss, _) = model.batch_loss(&mut g, cur, nxt, z)?;
        total += g.value(loss).item() * chunk.len() as f64;
    }
    Ok(total / rows.len() as f64)
}

/// Validation loss of the best constant guess fitted on the training rows:
/// the column mean under L2, the column median under L1. A model that does
/// not beat it has learned nothing about the dynamics.
pub fn constant_predictor_loss(dataset: &TransitionDataset, train_rows: &[usize], val_rows: &[usize], norm: Norm) -> f64 {
    let p = dataset.dim();
    let guess: Vec<f64> = (0..p)
        .map(|j| {
            let mut col: Vec<f64> = train_rows.iter().map(|&i| dataset.next(i)[j]).collect();
            match norm {
                Norm::L2 => col.iter().sum::<f64>() / col.len() as f64,
                Norm::L1 => {
                    col.sort_unstable_by(f64::total_cmp);
                    col[col.len() / 2]
                }
            }
        })
        .collect();
    let mut total = 0.0;
    for &i in val_rows {
        for (x, c) in dataset.next(i).iter().zip(&guess) {
            let d = x - c;
            total += match norm {
                Norm::L2 => d * d,
                Norm::L1 => d.abs(),
            };
        }
    }
    total / (val_rows.len() * p) as f64
}

fn non_finite(epoch: usize, step: usize, cfg: &TrainConfig) -> NisError {
    NisError::NumericRange(format!(
        "loss became non-finite at epoch {epoch}, step {step} (learning rate {}, gradient clip {}, \
         coupling scale clamp ±{}); try a smaller learning rate",
        cfg.learning_rate,
        cfg.grad_clip,
        crate::networks::SCALE_CLAMP
    ))
}

/// Mini-batch training. Keeps the parameters of the epoch with the lowest
/// validation loss.
pub fn fit<P: Predictor>(model: &mut P, dataset: &TransitionDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (train_rows, val_rows) = split_rows(dataset.len(), cfg.validation_fraction, cfg.seed)?;
    let mut order = train_rows.clone();
    let mut shuffle_rng = stream(cfg.seed, "train/shuffle");
    let mut noise_rng = stream(cfg.seed, "train/noise");
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, &model.param_sizes());

    let mut best = (f64::INFINITY, f64::INFINITY, 0usize, model.clone());
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (cur, nxt) = dataset.gather(batch);
            let z = noise_tensor(&mut noise_rng, batch.len(), model.noise_dim());
            let mut g = Graph::new();
            let (loss, vars) = match model.batch_loss(&mut g, cur, nxt, z) {
                Err(NisError::NumericRange(_)) => return Err(non_finite(epoch, step, cfg)),
                other => other?,
            };
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(non_finite(epoch, step, cfg));
            }
            epoch_loss += value * batch.len() as f64;
            let mut grads = g.backward(loss)?;
            let mut grad_list: Vec<Tensor> = vars.iter().map(|&v| grads.take(v)).collect();
            let norm = clip_global_norm(&mut grad_list, cfg.grad_clip);
            if !norm.is_finite() {
                return Err(non_finite(epoch, step, cfg));
            }
            opt.update(&mut model.param_tensors_mut(), &grad_list);
        }
        let train_loss = epoch_loss / order.len() as f64;
        let val_loss = evaluate(model, dataset, &val_rows, cfg.seed)?;
        if !val_loss.is_finite() {
            return Err(non_finite(epoch, 0, cfg));
        }
        if val_loss < best.1 {
            best = (train_loss, val_loss, epoch, model.clone());
        }
        debug!("epoch {epoch}: train {train_loss:.6e} val {val_loss:.6e}");
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            best_val_loss: best.1,
        });
    }
    let (train_loss, val_loss, best_epoch, best_model) = best;
    *model = best_model;
    info!("training done: best epoch {best_epoch}, validation loss {val_loss:.6e}");
    Ok(TrainOutcome {
        history,
        train_loss,
        val_loss,
        best_epoch,
        train_rows,
        val_rows,
    })
}

/// Trained squeezer with its validation macro residual variances.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub model: NisModel,
    pub outcome: TrainOutcome,
    pub sigma2: Vec<f64>,
}

/// Trains `model` in place and estimates `σ_i²` on the validation rows.
pub fn train(mut model: NisModel, dataset: &TransitionDataset, cfg: &TrainConfig) -> Result<TrainedModel> {
    if dataset.dim() != model.p() {
        return Err(NisError::Dimension {
            context: "dataset",
            expected: model.p(),
            got: dataset.dim(),
        });
    }
    if model.norm() != cfg.norm {
        return Err(NisError::Config(format!(
            "model objective {:?} differs from training objective {:?}",
            model.norm(),
            cfg.norm
        )));
    }
    let outcome = fit(&mut model, dataset, cfg)?;
    let sigma2 = model.macro_residual_variance(dataset, &outcome.val_rows)?;
    Ok(TrainedModel { model, outcome, sigma2 })
}

// ------------------------------------------------------------------ baseline

/// Direct feed-forward predictor `x_t ↦ x̂_{t+1}`.
#[derive(Clone, Debug)]
pub struct Baseline {
    net: Mlp,
    norm: Norm,
}

impl Baseline {
    pub fn new(p: usize, hidden: usize, norm: Norm, seed: u64) -> Self {
        let mut rng = stream(seed, "baseline/init");
        Self {
            net: Mlp::new(p, hidden, p, false, &mut rng),
            norm,
        }
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        map_rows(x, self.net.output_dim(), |rows| self.net.forward(&rows))
    }
}

impl Predictor for Baseline {
    fn noise_dim(&self) -> usize {
        0
    }

    fn param_sizes(&self) -> Vec<usize> {
        self.net.params().iter().map(|t| t.numel()).collect()
    }

    fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.net.params_mut()
    }

    fn batch_loss(&self, g: &mut Graph, x_t: Tensor, x_next: Tensor, _z: Option<Tensor>) -> Result<(Var, Vec<Var>)> {
        let count = x_t.numel();
        let vars = self.net.bind(g);
        let xt = g.leaf(x_t);
        let target = g.leaf(x_next);
        let pred = vars.forward(g, xt)?;
        let loss = micro_loss(g, pred, target, self.norm, count)?;
        Ok((loss, vars.vars()))
    }
}

/// Hidden width whose three-layer `p → h → h → p` perceptron has the
/// parameter count closest to `budget`.
pub fn baseline_hidden_for_budget(p: usize, budget: usize) -> usize {
    let count = |h: usize| h * h + (2 * p + 2) * h + p;
    let mut best = 1;
    let mut h = 1;
    while count(h) <= budget.saturating_mul(2) {
        if count(h).abs_diff(budget) < count(best).abs_diff(budget) {
            best = h;
        }
        h += 1;
    }
    best
}

/// Trains the baseline sized to within 2% of `param_budget` parameters.
pub fn baseline_train(dataset: &TransitionDataset, cfg: &TrainConfig, param_budget: usize) -> Result<(Baseline, TrainOutcome)> {
    let hidden = baseline_hidden_for_budget(dataset.dim(), param_budget);
    let mut model = Baseline::new(dataset.dim(), hidden, cfg.norm, cfg.seed);
    let count = model.param_count();
    if count.abs_diff(param_budget) as f64 > 0.02 * param_budget as f64 {
        return Err(NisError::Config(format!(
            "cannot match a parameter budget of {param_budget} within 2% (closest: {count})"
        )));
    }
    let outcome = fit(&mut model, dataset, cfg)?;
    Ok((model, outcome))
}
