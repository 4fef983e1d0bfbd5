//! Effective information of Gaussian-output dynamics, its normalised form
//! Eff, the line search over the macro dimension and clustering of macro
//! codes.
//!
//! For `Y | X ~ N(μ(X), Σ)` with `X` uniform on `[−L, L]^q` the estimate is
//!
//! ```text
//! EI ≈ −(1 + q ln 2π + ln det Σ)/2 + q ln 2L + E_X[ln |det ∂μ(X)|]
//! ```
//!
//! with the expectation taken by Monte Carlo. When `|det ∂μ|` vanishes at
//! every sample the map carries no information and EI is reported as 0.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{batched_values_and_jacobians, Graph, Tensor, Var};
use crate::checkpoint::Checkpoint;
use crate::config_hash;
use crate::dataset::TransitionDataset;
use crate::error::{NisError, Result};
use crate::rng::substream;
use crate::squeezer::{constant_predictor_loss, split_rows, train, ModelConfig, NisModel, TrainConfig};

/// Monte-Carlo samples per Jacobian batch. Fixed so results do not depend
/// on the number of worker threads.
const SAMPLE_CHUNK: usize = 250;

/// A candidate counts as signal only when its Eff reaches this value and
/// its validation loss undercuts the best constant guess by [`MIN_SKILL`].
/// Sweeps without such a candidate are flagged low-signal.
pub const LOW_SIGNAL_EFF: f64 = 0.05;

/// Relative validation-loss improvement over the constant guess below which
/// a model is treated as having learned nothing. Eff alone cannot tell: an
/// untrained map on a shrunken latent still scores well against a fixed `L`.
pub const MIN_SKILL: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EiConfig {
    /// Half-width of the intervention cube.
    pub l: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub det_eps: f64,
    pub sigma_floor: f64,
}

impl Default for EiConfig {
    fn default() -> Self {
        Self {
            l: 100.0,
            n_samples: 1000,
            seed: 0,
            det_eps: 1e-12,
            sigma_floor: 1e-6,
        }
    }
}

impl EiConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l.is_finite() && self.l > 0.0) {
            return Err(NisError::Config(format!("cube half-width must be positive, got {}", self.l)));
        }
        if self.n_samples == 0 {
            return Err(NisError::Config("need at least one Monte-Carlo sample".into()));
        }
        if !(self.det_eps > 0.0 && self.sigma_floor > 0.0) {
            return Err(NisError::Config("determinant clamp and sigma floor must be positive".into()));
        }
        Ok(())
    }

    /// `q ln 2L`, the EI of a noiseless bijection on the cube.
    pub fn max_ei(&self, q: usize) -> f64 {
        q as f64 * (2.0 * self.l).ln()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EiReport {
    pub q: usize,
    /// Nats.
    pub ei: f64,
    pub eff: f64,
    /// Per-dimension standard deviations entering `Σ`.
    pub sigma: Vec<f64>,
    pub l: f64,
    pub n_samples: usize,
    pub seed: u64,
    /// Sample mean of `ln max(|det ∂μ|, ε)`.
    pub mean_log_det: f64,
    /// Monte-Carlo standard error of `mean_log_det` (and hence of EI).
    pub stderr: f64,
    /// Samples whose determinant hit the clamp.
    pub clamped: usize,
    /// Every sample was singular; EI is reported as 0.
    pub degenerate: bool,
}

impl EiReport {
    pub fn bits(&self) -> f64 {
        self.ei / std::f64::consts::LN_2
    }
}

/// Uniform draw `k` from `[−L, L]^q`, a pure function of `(seed, k)`.
pub fn cube_sample(cfg: &EiConfig, q: usize, k: usize) -> Vec<f64> {
    let mut rng = substream(cfg.seed, "ei/cube", k as u64);
    (0..q).map(|_| rng.random_range(-cfg.l..=cfg.l)).collect()
}

fn log_abs_det(jac: &Tensor) -> f64 {
    let q = jac.shape()[0];
    let det = match q {
        1 => jac.data()[0],
        2 => {
            let d = jac.data();
            d[0] * d[3] - d[1] * d[2]
        }
        _ => DMatrix::from_row_slice(q, q, jac.data()).determinant(),
    };
    det.abs().ln()
}

/// Monte-Carlo EI of `μ: R^q → R^q` (row-wise graph map on `[B, q]`) with
/// Gaussian noise of standard deviations `sigma`.
pub fn ei_gaussian<F>(mu: F, sigma: &[f64], cfg: &EiConfig) -> Result<EiReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var> + Sync,
{
    cfg.validate()?;
    let q = sigma.len();
    if q == 0 {
        return Err(NisError::Config("EI needs at least one dimension".into()));
    }
    if let Some(s) = sigma.iter().find(|s| !(s.is_finite() && **s >= cfg.sigma_floor)) {
        return Err(NisError::Config(format!(
            "sigma {s} is below the floor {} or not finite",
            cfg.sigma_floor
        )));
    }
    let chunks: Vec<usize> = (0..cfg.n_samples).step_by(SAMPLE_CHUNK).collect();
    let per_chunk: Vec<Result<Vec<f64>>> = chunks
        .par_iter()
        .map(|&start| {
            let end = (start + SAMPLE_CHUNK).min(cfg.n_samples);
            let mut xs = Vec::with_capacity((end - start) * q);
            for k in start..end {
                xs.extend(cube_sample(cfg, q, k));
            }
            let xs = Tensor::matrix(end - start, q, xs);
            let (values, jacs) = batched_values_and_jacobians(&mu, &xs)?;
            if values.last_dim() != q {
                return Err(NisError::Dimension {
                    context: "EI map output",
                    expected: q,
                    got: values.last_dim(),
                });
            }
            let mut out = Vec::with_capacity(jacs.len());
            for (r, jac) in jacs.iter().enumerate() {
                if !values.row(r).iter().all(|v| v.is_finite()) || !jac.is_finite() {
                    return Err(NisError::NumericRange(format!(
                        "map is not finite at Monte-Carlo sample {} (x = {:?})",
                        start + r,
                        xs.row(r)
                    )));
                }
                out.push(log_abs_det(jac));
            }
            Ok(out)
        })
        .collect();

    let floor = cfg.det_eps.ln();
    let mut clamped = 0;
    let mut logs = Vec::with_capacity(cfg.n_samples);
    for chunk in per_chunk {
        for v in chunk? {
            if v < floor {
                clamped += 1;
                logs.push(floor);
            } else {
                logs.push(v);
            }
        }
    }
    let n = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / n;
    let stderr = if logs.len() > 1 {
        let var = logs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };

    let degenerate = clamped == cfg.n_samples;
    let ei = if degenerate {
        0.0
    } else {
        let log_det_sigma: f64 = sigma.iter().map(|s| 2.0 * s.ln()).sum();
        let qf = q as f64;
        -0.5 * (1.0 + qf * (2.0 * std::f64::consts::PI).ln() + log_det_sigma) + cfg.max_ei(q) + mean
    };
    Ok(EiReport {
        q,
        ei,
        eff: ei / cfg.max_ei(q),
        sigma: sigma.to_vec(),
        l: cfg.l,
        n_samples: cfg.n_samples,
        seed: cfg.seed,
        mean_log_det: mean,
        stderr,
        clamped,
        degenerate,
    })
}

/// EI of the learned macro transition `y ↦ y + f(y)` with noise scales
/// `σ_i = max(√σ_i², floor)`.
pub fn ei_of_macro(model: &NisModel, sigma2: Option<&[f64]>, cfg: &EiConfig) -> Result<EiReport> {
    let sigma2 = sigma2.ok_or_else(|| {
        NisError::Config("model carries no macro residual variances; train it first".into())
    })?;
    if sigma2.len() != model.q() {
        return Err(NisError::Dimension {
            context: "residual variances",
            expected: model.q(),
            got: sigma2.len(),
        });
    }
    let sigma: Vec<f64> = sigma2.iter().map(|s| s.max(0.0).sqrt().max(cfg.sigma_floor)).collect();
    ei_gaussian(
        |g: &mut Graph, y: Var| {
            let vars = model.bind(g);
            model.macro_step_graph(g, &vars, y)
        },
        &sigma,
        cfg,
    )
}

pub fn ei_of_checkpoint(ckpt: &Checkpoint, cfg: &EiConfig) -> Result<EiReport> {
    ei_of_macro(&ckpt.to_model()?, ckpt.sigma2.as_deref(), cfg)
}

// ------------------------------------------------------------------ sweep

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub q: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub report: EiReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub p: usize,
    pub entries: Vec<SweepEntry>,
    pub q_star: Option<usize>,
    pub emergent: bool,
    pub low_signal: bool,
    /// Validation loss of the best constant prediction.
    pub constant_loss: f64,
    pub warnings: Vec<String>,
    pub seed: u64,
    pub config_hash: String,
    pub tool_version: String,
}

#[derive(Clone, Debug)]
pub struct SweepOptions {
    pub arch: ModelConfig,
    pub train: TrainConfig,
    pub ei: EiConfig,
    /// Candidate macro dimensions; `p` is always added.
    pub qs: Vec<usize>,
    /// Train the candidates on the rayon pool instead of one after another.
    pub parallel: bool,
}

/// Trained model for one candidate, kept so callers can inspect it.
pub type SweepModels = Vec<(usize, NisModel)>;

impl SweepResult {
    pub fn entry(&self, q: usize) -> Option<&SweepEntry> {
        self.entries.iter().find(|e| e.q == q)
    }

    pub fn eff(&self, q: usize) -> Option<f64> {
        self.entry(q).map(|e| e.report.eff)
    }

    /// `q,EI,Eff,stderr,sigma0..` rows preceded by provenance comments and
    /// followed by the verdict.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# tool={} seed={} config_hash={}", self.tool_version, self.seed, self.config_hash);
        let sigma_cols: Vec<String> = (0..self.p).map(|i| format!("sigma{i}")).collect();
        let _ = writeln!(s, "q,EI,Eff,stderr,{}", sigma_cols.join(","));
        for e in &self.entries {
            let r = &e.report;
            let mut sig: Vec<String> = r.sigma.iter().map(|v| v.to_string()).collect();
            sig.resize(self.p, String::new());
            let _ = writeln!(s, "{},{},{},{},{}", e.q, r.ei, r.eff, r.stderr, sig.join(","));
        }
        for w in &self.warnings {
            let _ = writeln!(s, "# warning: {w}");
        }
        let q_star = self.q_star.map_or("none".to_string(), |q| q.to_string());
        let _ = writeln!(s, "# q*: {q_star}");
        if self.low_signal {
            let _ = writeln!(
                s,
                "# low-signal: no model beats the constant guess ({}) by {MIN_SKILL} with Eff >= {LOW_SIGNAL_EFF}",
                self.constant_loss
            );
        }
        let _ = writeln!(s, "# emergent: {}", self.emergent);
        s
    }

    pub fn write(&self, csv_path: &Path, json_path: &Path) -> Result<()> {
        fs::write(csv_path, self.to_csv())?;
        fs::write(json_path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Trains one model per candidate `q` and compares their Eff.
///
/// Candidates that fail to train are dropped with a warning. `q*` is the
/// argmax of Eff with ties going to the smaller `q`; the sweep is emergent
/// when `Eff(q*) > Eff(p)`.
pub fn sweep_q(dataset: &TransitionDataset, opts: &SweepOptions) -> Result<(SweepResult, SweepModels)> {
    let p = dataset.dim();
    if p < 2 {
        return Err(NisError::Config(format!("sweeping q needs p >= 2, got p = {p}")));
    }
    opts.train.validate()?;
    opts.ei.validate()?;
    let mut qs = opts.qs.clone();
    qs.push(p);
    qs.sort_unstable();
    qs.dedup();
    if let Some(&bad) = qs.iter().find(|&&q| q == 0 || q > p) {
        return Err(NisError::Config(format!("candidate q = {bad} outside 1..={p}")));
    }

    let run = |q: usize| -> Result<(SweepEntry, NisModel)> {
        let model = NisModel::new(p, q, opts.arch, opts.train.norm, opts.train.seed)?;
        let trained = train(model, dataset, &opts.train)?;
        let report = ei_of_macro(&trained.model, Some(&trained.sigma2), &opts.ei)?;
        let entry = SweepEntry {
            q,
            train_loss: trained.outcome.train_loss,
            val_loss: trained.outcome.val_loss,
            report,
        };
        Ok((entry, trained.model))
    };
    let outcomes: Vec<Result<(SweepEntry, NisModel)>> = if opts.parallel {
        qs.par_iter().map(|&q| run(q)).collect()
    } else {
        qs.iter().map(|&q| run(q)).collect()
    };

    let mut entries = Vec::new();
    let mut models = Vec::new();
    let mut warnings = Vec::new();
    for (q, outcome) in qs.iter().zip(outcomes) {
        match outcome {
            Ok((entry, model)) => {
                entries.push(entry);
                models.push((*q, model));
            }
            Err(e @ (NisError::NumericRange(_) | NisError::Config(_) | NisError::Dimension { .. })) => {
                warn!("q = {q} failed: {e}");
                warnings.push(format!("q = {q} excluded: {e}"));
            }
            Err(e) => return Err(e),
        }
    }

    let mut q_star: Option<(usize, f64)> = None;
    for e in &entries {
        if q_star.is_none_or(|(_, best)| e.report.eff > best) {
            q_star = Some((e.q, e.report.eff));
        }
    }
    let emergent = match (q_star, entries.iter().find(|e| e.q == p)) {
        (Some((_, best)), Some(full)) => best > full.report.eff,
        _ => {
            if !entries.is_empty() {
                warnings.push(format!("q = {p} reference failed; no emergence verdict"));
            }
            false
        }
    };
    let (train_rows, val_rows) = split_rows(dataset.len(), opts.train.validation_fraction, opts.train.seed)?;
    let constant_loss = constant_predictor_loss(dataset, &train_rows, &val_rows, opts.train.norm);
    let low_signal = !entries
        .iter()
        .any(|e| e.report.eff >= LOW_SIGNAL_EFF && e.val_loss <= (1.0 - MIN_SKILL) * constant_loss);

    let result = SweepResult {
        p,
        entries,
        q_star: q_star.map(|(q, _)| q),
        emergent,
        low_signal,
        constant_loss,
        warnings,
        seed: opts.train.seed,
        config_hash: config_hash(&(&opts.arch, &opts.train, &opts.ei, &qs)),
        tool_version: crate::TOOL_VERSION.to_string(),
    };
    Ok((result, models))
}

// ------------------------------------------------------------------ clusters

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clusters {
    pub count: usize,
    /// Cluster of each input point, numbered by first appearance.
    pub labels: Vec<usize>,
}

/// Single-linkage clustering that cuts every link longer than ten times
/// the median nearest-neighbour distance.
pub fn cluster_points(points: &[Vec<f64>]) -> Clusters {
    let n = points.len();
    if n < 2 {
        return Clusters {
            count: n.min(1),
            labels: vec![0; n],
        };
    }
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let mut nn: Vec<f64> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| dist(&points[i], &points[j]))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    nn.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        nn[n / 2]
    } else {
        0.5 * (nn[n / 2 - 1] + nn[n / 2])
    };
    let threshold = 10.0 * median;

    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if dist(&points[i], &points[j]) <= threshold {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut ids: Vec<Option<usize>> = vec![None; n];
    let mut labels = Vec::with_capacity(n);
    let mut count = 0;
    for i in 0..n {
        let root = find(&mut parent, i);
        let label = *ids[root].get_or_insert_with(|| {
            count += 1;
            count - 1
        });
        labels.push(label);
    }
    Clusters { count, labels }
}

/// Encodes every micro state and clusters the macro codes.
pub fn cluster_macro_codes(model: &NisModel, states: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Clusters)> {
    let codes = states.iter().map(|x| model.encode(x)).collect::<Result<Vec<_>>>()?;
    let clusters = cluster_points(&codes);
    Ok((codes, clusters))
}

/// The `n` one-hot vectors of length `n`.
pub fn one_hot_states(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let mut v = vec![0.0; n];
            v[i] = 1.0;
            v
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(a: Vec<f64>, q: usize) -> impl Fn(&mut Graph, Var) -> Result<Var> + Sync {
        move |g: &mut Graph, x: Var| {
            // Rows are samples, so x·Aᵀ.
            let mut at = vec![0.0; q * q];
            for i in 0..q {
                for j in 0..q {
                    at[j * q + i] = a[i * q + j];
                }
            }
            let w = g.leaf(Tensor::matrix(q, q, at));
            g.matmul(x, w)
        }
    }

    #[test]
    fn identity_map_closed_form() {
        let cfg = EiConfig::default();
        let r = ei_gaussian(linear(vec![1.0], 1), &[1.0], &cfg).unwrap();
        let exact = -0.5 * (1.0 + (2.0 * std::f64::consts::PI).ln()) + 200f64.ln();
        assert!((r.ei - exact).abs() < 1e-12);
        assert!((r.ei - 3.8797).abs() < 1e-3);
        assert_eq!(r.eff, r.ei / 200f64.ln());
    }

    #[test]
    fn constant_map_is_degenerate() {
        let cfg = EiConfig::default();
        let r = ei_gaussian(
            |g: &mut Graph, x: Var| Ok(g.scale(x, 0.0)),
            &[0.5, 2.0],
            &cfg,
        )
        .unwrap();
        assert_eq!(r.ei, 0.0);
        assert!(r.degenerate);
        assert_eq!(r.clamped, cfg.n_samples);
    }

    #[test]
    fn sigma_below_floor_rejected() {
        let cfg = EiConfig::default();
        assert!(ei_gaussian(linear(vec![1.0], 1), &[1e-9], &cfg).is_err());
        assert!(ei_gaussian(linear(vec![1.0], 1), &[], &cfg).is_err());
    }

    #[test]
    fn non_finite_map_names_sample() {
        let cfg = EiConfig { n_samples: 10, ..Default::default() };
        let err = ei_gaussian(
            |g: &mut Graph, x: Var| {
                let big = g.scale(x, 1e3);
                g.exp(big)
            },
            &[1.0],
            &cfg,
        );
        assert!(matches!(err, Err(NisError::NumericRange(_))));
    }

    #[test]
    fn missing_sigma_is_config_error() {
        let model = NisModel::new(2, 1, ModelConfig { hidden: 4, blocks: 1 }, Default::default(), 0).unwrap();
        assert!(matches!(
            ei_of_macro(&model, None, &EiConfig::default()),
            Err(NisError::Config(_))
        ));
    }

    #[test]
    fn zero_drift_macro_is_identity() {
        let mut model = NisModel::new(2, 1, ModelConfig { hidden: 4, blocks: 1 }, Default::default(), 0).unwrap();
        *model.dynamics_mut() = crate::networks::Mlp::zeros(1, 4, 1);
        let r = ei_of_macro(&model, Some(&[1.0]), &EiConfig::default()).unwrap();
        assert!((r.ei - 3.8797).abs() < 1e-3);
    }

    #[test]
    fn gap_clustering() {
        let c = cluster_points(&[vec![0.0], vec![0.01], vec![5.0]]);
        assert_eq!(c.count, 2);
        assert_eq!(c.labels, vec![0, 0, 1]);
        assert_eq!(cluster_points(&[vec![1.0]]).count, 1);
        assert_eq!(cluster_points(&[]).count, 0);
    }

    #[test]
    fn csv_lists_verdict() {
        let report = EiReport {
            q: 1,
            ei: 1.0,
            eff: 0.5,
            sigma: vec![0.1],
            l: 100.0,
            n_samples: 1,
            seed: 0,
            mean_log_det: 0.0,
            stderr: 0.0,
            clamped: 0,
            degenerate: false,
        };
        let r = SweepResult {
            p: 2,
            entries: vec![SweepEntry {
                q: 1,
                train_loss: 0.0,
                val_loss: 0.0,
                report,
            }],
            q_star: Some(1),
            emergent: true,
            low_signal: false,
            constant_loss: 1.0,
            warnings: vec![],
            seed: 0,
            config_hash: "x".into(),
            tool_version: "t".into(),
        };
        let csv = r.to_csv();
        assert!(csv.contains("q,EI,Eff,stderr,sigma0,sigma1\n1,1,0.5,0,0.1,\n"));
        assert!(csv.ends_with("# emergent: true\n"));
    }
}
