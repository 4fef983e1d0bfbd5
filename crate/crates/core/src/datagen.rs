//! Seeded generators for the three benchmark systems: a spring oscillator
//! observed through two noisy sensors, an 8-state Markov chain with one
//! absorbing state, and a 4-node stochastic Boolean network.
//!
//! Each batch draws from its own counter-based substream, so batch `i` is
//! the same no matter how many batches are generated.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetMeta, TransitionDataset};
use crate::error::{NisError, Result};
use crate::rng::substream;
use crate::TOOL_VERSION;

fn one_hot(n: usize, i: usize, out: &mut Vec<f64>) {
    out.extend((0..n).map(|j| if j == i { 1.0 } else { 0.0 }));
}

/// Index of the hot entry of a one-hot row (largest entry).
pub fn hot_index(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

fn meta(p: usize, generator: &str, params: serde_json::Value, seed: u64, illustrative: bool) -> DatasetMeta {
    DatasetMeta {
        p,
        generator: generator.to_owned(),
        seed,
        n_pairs: 0,
        illustrative,
        tool_version: TOOL_VERSION.to_owned(),
        config_hash: crate::config_hash(&(generator, &params)),
        params,
    }
}

// ---------------------------------------------------------------- spring

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpringParams {
    /// Standard deviations of the sensor noise for (position, velocity).
    pub sigma: [f64; 2],
    /// Time step of the exact flow.
    pub dt: f64,
    /// Initial latent states are drawn from `U([-amplitude, amplitude]^2)`.
    pub amplitude: f64,
    pub batches: usize,
    pub per_batch: usize,
    pub seed: u64,
}

impl Default for SpringParams {
    fn default() -> Self {
        Self {
            sigma: [0.1, 0.1],
            dt: 1.0,
            amplitude: 1.0,
            batches: 1000,
            per_batch: 100,
            seed: 0,
        }
    }
}

impl SpringParams {
    pub fn validate(&self) -> Result<()> {
        if self.sigma.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(NisError::Config(format!(
                "spring noise sigma must be finite and non-negative, got {:?}",
                self.sigma
            )));
        }
        if !(self.dt.is_finite() && self.amplitude.is_finite() && self.amplitude > 0.0) {
            return Err(NisError::Config("spring dt/amplitude must be finite, amplitude > 0".into()));
        }
        if self.batches == 0 || self.per_batch == 0 {
            return Err(NisError::Config("batches and per-batch must be positive".into()));
        }
        Ok(())
    }
}

/// Exact solution of `dz/dt = v, dv/dt = -z` after time `dt`.
pub fn spring_flow(state: [f64; 2], dt: f64) -> [f64; 2] {
    let (s, c) = dt.sin_cos();
    [state[0] * c + state[1] * s, -state[0] * s + state[1] * c]
}

/// Latent `(z, v)` at both times for every generated pair.
#[derive(Clone, Debug, PartialEq)]
pub struct SpringLatents {
    pub current: Vec<[f64; 2]>,
    pub next: Vec<[f64; 2]>,
}

/// Observation `x̃₁ ⊕ x̃₂ = (x + ξ) ⊕ (x − ξ)`.
fn observe<R: Rng + ?Sized>(x: [f64; 2], noise: &[Normal<f64>; 2], rng: &mut R, out: &mut Vec<f64>) {
    let xi = [noise[0].sample(rng), noise[1].sample(rng)];
    out.extend_from_slice(&[x[0] + xi[0], x[1] + xi[1], x[0] - xi[0], x[1] - xi[1]]);
}

pub fn gen_spring_with_latents(params: &SpringParams) -> Result<(TransitionDataset, SpringLatents)> {
    params.validate()?;
    let noise = [
        Normal::new(0.0, params.sigma[0]).map_err(|e| NisError::Config(e.to_string()))?,
        Normal::new(0.0, params.sigma[1]).map_err(|e| NisError::Config(e.to_string()))?,
    ];
    let n = params.batches * params.per_batch;
    let mut cur = Vec::with_capacity(4 * n);
    let mut nxt = Vec::with_capacity(4 * n);
    let mut latents = SpringLatents {
        current: Vec::with_capacity(n),
        next: Vec::with_capacity(n),
    };
    let a = params.amplitude;
    for b in 0..params.batches {
        let mut rng = substream(params.seed, "datagen/spring", b as u64);
        for _ in 0..params.per_batch {
            let x = [rng.random_range(-a..=a), rng.random_range(-a..=a)];
            let x_next = spring_flow(x, params.dt);
            observe(x, &noise, &mut rng, &mut cur);
            observe(x_next, &noise, &mut rng, &mut nxt);
            latents.current.push(x);
            latents.next.push(x_next);
        }
    }
    let meta = meta(4, "spring", serde_json::to_value(params)?, params.seed, false);
    Ok((TransitionDataset::new(4, cur, nxt, meta)?, latents))
}

pub fn gen_spring(params: &SpringParams) -> Result<TransitionDataset> {
    gen_spring_with_latents(params).map(|(d, _)| d)
}

// ---------------------------------------------------------------- markov

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovParams {
    /// Row-stochastic transition matrix `P[from][to]`.
    pub matrix: Vec<Vec<f64>>,
    pub batches: usize,
    pub per_batch: usize,
    pub seed: u64,
}

/// Seven mutually communicating states with uniform transitions and one
/// absorbing state.
pub fn default_markov_matrix() -> Vec<Vec<f64>> {
    (0..8)
        .map(|i| {
            (0..8)
                .map(|j| match (i < 7, j < 7) {
                    (true, true) => 1.0 / 7.0,
                    (false, false) => 1.0,
                    _ => 0.0,
                })
                .collect()
        })
        .collect()
}

impl Default for MarkovParams {
    fn default() -> Self {
        Self {
            matrix: default_markov_matrix(),
            batches: 5000,
            per_batch: 1,
            seed: 0,
        }
    }
}

pub fn validate_stochastic(matrix: &[Vec<f64>]) -> Result<()> {
    let n = matrix.len();
    if n == 0 {
        return Err(NisError::Config("transition matrix is empty".into()));
    }
    for (i, row) in matrix.iter().enumerate() {
        if row.len() != n {
            return Err(NisError::Config(format!(
                "transition matrix row {i} has {} entries, expected {n}",
                row.len()
            )));
        }
        if row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(NisError::Config(format!("transition matrix row {i} has a negative entry")));
        }
        let total: f64 = row.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(NisError::Config(format!(
                "transition matrix row {i} sums to {total}, not 1"
            )));
        }
    }
    Ok(())
}

fn sample_row<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (j, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    // Rounding left `u` above the cumulative total: take the last
    // state with positive mass.
    row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
}

pub fn gen_markov(params: &MarkovParams) -> Result<TransitionDataset> {
    validate_stochastic(&params.matrix)?;
    if params.batches == 0 || params.per_batch == 0 {
        return Err(NisError::Config("batches and per-batch must be positive".into()));
    }
    let n = params.matrix.len();
    let total = params.batches * params.per_batch;
    let mut cur = Vec::with_capacity(n * total);
    let mut nxt = Vec::with_capacity(n * total);
    for b in 0..params.batches {
        let mut rng = substream(params.seed, "datagen/markov", b as u64);
        for _ in 0..params.per_batch {
            let s = rng.random_range(0..n);
            let s_next = sample_row(&params.matrix[s], &mut rng);
            one_hot(n, s, &mut cur);
            one_hot(n, s_next, &mut nxt);
        }
    }
    let meta = meta(n, "markov", serde_json::to_value(params)?, params.seed, false);
    TransitionDataset::new(n, cur, nxt, meta)
}

// ---------------------------------------------------------------- boolnet

/// Mechanism of one node: its input nodes and `Pr(node' = 0)` for every
/// input bit pattern (first input is the leftmost bit).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeMechanism {
    pub inputs: Vec<String>,
    pub p_zero: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoolNetTable {
    /// Node order; the first node is the most significant bit of the joint
    /// state code.
    pub nodes: Vec<String>,
    pub in_degree: usize,
    pub mechanisms: BTreeMap<String, NodeMechanism>,
    /// Set for tables that are not taken from measured data.
    #[serde(default)]
    pub illustrative: bool,
}

impl Default for BoolNetTable {
    /// Four nodes; `A`, `B` read `(C, D)` and `C`, `D` read `(A, B)`. Every
    /// node is 0 with probability 0.7 unless both inputs are on, in which
    /// case it switches on. Only the `00 → 0.7` entry is documented; the
    /// rest of the table is illustrative.
    fn default() -> Self {
        let names = ["A", "B", "C", "D"];
        let table: BTreeMap<String, f64> = [("00", 0.7), ("01", 0.7), ("10", 0.7), ("11", 0.0)]
            .into_iter()
            .map(|(k, v)| (k.to_owned(), v))
            .collect();
        let mechanisms = names
            .iter()
            .map(|&n| {
                let inputs = if n == "A" || n == "B" { ["C", "D"] } else { ["A", "B"] };
                (
                    n.to_owned(),
                    NodeMechanism {
                        inputs: inputs.iter().map(|s| s.to_string()).collect(),
                        p_zero: table.clone(),
                    },
                )
            })
            .collect();
        Self {
            nodes: names.iter().map(|s| s.to_string()).collect(),
            in_degree: 2,
            mechanisms,
            illustrative: true,
        }
    }
}

/// Validated, index-based form of a [`BoolNetTable`].
#[derive(Clone, Debug, PartialEq)]
pub struct BoolNet {
    n: usize,
    inputs: Vec<Vec<usize>>,
    /// `p_zero[node][pattern]`, pattern read with the first input as MSB.
    p_zero: Vec<Vec<f64>>,
}

fn pattern_key(pattern: usize, width: usize) -> String {
    (0..width)
        .map(|i| if pattern >> (width - 1 - i) & 1 == 1 { '1' } else { '0' })
        .collect()
}

impl BoolNet {
    pub fn from_table(table: &BoolNetTable) -> Result<Self> {
        let n = table.nodes.len();
        if n == 0 || n > 20 {
            return Err(NisError::Config(format!("boolean network must have 1..=20 nodes, got {n}")));
        }
        let index = |name: &str| {
            table
                .nodes
                .iter()
                .position(|x| x == name)
                .ok_or_else(|| NisError::Config(format!("unknown node {name:?}")))
        };
        let mut inputs = Vec::with_capacity(n);
        let mut p_zero = Vec::with_capacity(n);
        for node in &table.nodes {
            let mech = table
                .mechanisms
                .get(node)
                .ok_or_else(|| NisError::Config(format!("node {node:?} has no mechanism")))?;
            if mech.inputs.len() != table.in_degree {
                return Err(NisError::Config(format!(
                    "node {node:?} has {} inputs, configured in-degree is {}",
                    mech.inputs.len(),
                    table.in_degree
                )));
            }
            let ins = mech.inputs.iter().map(|s| index(s)).collect::<Result<Vec<_>>>()?;
            let width = ins.len();
            let mut probs = Vec::with_capacity(1 << width);
            for pattern in 0..(1usize << width) {
                let key = pattern_key(pattern, width);
                let p = *mech.p_zero.get(&key).ok_or_else(|| {
                    NisError::Config(format!("node {node:?}: table entry missing for inputs {key}"))
                })?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(NisError::Config(format!(
                        "node {node:?}: probability {p} for inputs {key} outside [0, 1]"
                    )));
                }
                probs.push(p);
            }
            inputs.push(ins);
            p_zero.push(probs);
        }
        Ok(Self { n, inputs, p_zero })
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn state_count(&self) -> usize {
        1 << self.n
    }

    /// Bit of node `i` in joint state `s` (node 0 is the MSB).
    pub fn bit(&self, state: usize, node: usize) -> usize {
        (state >> (self.n - 1 - node)) & 1
    }

    fn input_pattern(&self, state: usize, node: usize) -> usize {
        self.inputs[node]
            .iter()
            .fold(0, |acc, &src| (acc << 1) | self.bit(state, src))
    }

    /// `Pr(node' = 0 | joint state)`.
    pub fn prob_zero(&self, state: usize, node: usize) -> f64 {
        self.p_zero[node][self.input_pattern(state, node)]
    }

    /// Joint transition matrix; nodes update independently given the
    /// current state.
    pub fn transition_matrix(&self) -> Vec<Vec<f64>> {
        let m = self.state_count();
        (0..m)
            .map(|s| {
                (0..m)
                    .map(|t| {
                        (0..self.n)
                            .map(|i| {
                                let p0 = self.prob_zero(s, i);
                                if self.bit(t, i) == 0 {
                                    p0
                                } else {
                                    1.0 - p0
                                }
                            })
                            .product()
                    })
                    .collect()
            })
            .collect()
    }

    pub fn step<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> usize {
        (0..self.n).fold(0, |acc, i| {
            let u: f64 = rng.random();
            let bit = usize::from(u >= self.prob_zero(state, i));
            (acc << 1) | bit
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoolNetParams {
    pub table: BoolNetTable,
    pub batches: usize,
    pub per_batch: usize,
    pub seed: u64,
}

impl Default for BoolNetParams {
    fn default() -> Self {
        Self {
            table: BoolNetTable::default(),
            batches: 5000,
            per_batch: 1,
            seed: 0,
        }
    }
}

pub fn load_table(path: &Path) -> Result<BoolNetTable> {
    let text = std::fs::read_to_string(path)?;
    let table: BoolNetTable = serde_json::from_str(&text)?;
    BoolNet::from_table(&table)?;
    Ok(table)
}

pub fn gen_boolnet(params: &BoolNetParams) -> Result<TransitionDataset> {
    let net = BoolNet::from_table(&params.table)?;
    if params.batches == 0 || params.per_batch == 0 {
        return Err(NisError::Config("batches and per-batch must be positive".into()));
    }
    let m = net.state_count();
    let total = params.batches * params.per_batch;
    let mut cur = Vec::with_capacity(m * total);
    let mut nxt = Vec::with_capacity(m * total);
    for b in 0..params.batches {
        let mut rng = substream(params.seed, "datagen/boolnet", b as u64);
        for _ in 0..params.per_batch {
            let s = rng.random_range(0..m);
            let t = net.step(s, &mut rng);
            one_hot(m, s, &mut cur);
            one_hot(m, t, &mut nxt);
        }
    }
    let meta = meta(
        m,
        "boolnet",
        serde_json::to_value(params)?,
        params.seed,
        params.table.illustrative,
    );
    TransitionDataset::new(m, cur, nxt, meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_sensors_agree() {
        let params = SpringParams {
            sigma: [0.0, 0.0],
            batches: 3,
            per_batch: 10,
            ..Default::default()
        };
        let (ds, lat) = gen_spring_with_latents(&params).unwrap();
        for i in 0..ds.len() {
            let x = ds.current(i);
            assert_eq!(x[0..2], x[2..4]);
            assert_eq!(x[0..2], lat.current[i]);
        }
    }

    #[test]
    fn sensor_sum_recovers_latent() {
        let params = SpringParams {
            sigma: [0.3, 0.2],
            batches: 2,
            per_batch: 50,
            ..Default::default()
        };
        let (ds, lat) = gen_spring_with_latents(&params).unwrap();
        for i in 0..ds.len() {
            for (row, latent) in [(ds.current(i), lat.current[i]), (ds.next(i), lat.next[i])] {
                for k in 0..2 {
                    assert!((row[k] + row[k + 2] - 2.0 * latent[k]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn exact_flow_one_step() {
        let [z, v] = spring_flow([1.0, 0.0], 1.0);
        assert!((z - 1f64.cos()).abs() < 1e-15);
        assert!((v + 1f64.sin()).abs() < 1e-15);
        assert!((z - 0.5403).abs() < 1e-4 && (v + 0.8415).abs() < 1e-4);
    }

    #[test]
    fn generators_are_deterministic() {
        let p = SpringParams {
            batches: 4,
            per_batch: 5,
            seed: 11,
            ..Default::default()
        };
        assert_eq!(gen_spring(&p).unwrap(), gen_spring(&p).unwrap());
        let m = MarkovParams {
            batches: 50,
            seed: 2,
            ..Default::default()
        };
        assert_eq!(gen_markov(&m).unwrap(), gen_markov(&m).unwrap());
    }

    #[test]
    fn batch_prefix_is_stable() {
        let small = SpringParams {
            batches: 2,
            per_batch: 3,
            seed: 5,
            ..Default::default()
        };
        let large = SpringParams { batches: 6, ..small.clone() };
        let a = gen_spring(&small).unwrap();
        let b = gen_spring(&large).unwrap();
        for i in 0..a.len() {
            assert_eq!(a.current(i), b.current(i));
        }
    }

    #[test]
    fn absorbing_and_uniform_rows() {
        let ds = gen_markov(&MarkovParams {
            batches: 4000,
            seed: 9,
            ..Default::default()
        })
        .unwrap();
        for i in 0..ds.len() {
            let s = hot_index(ds.current(i));
            let t = hot_index(ds.next(i));
            if s == 7 {
                assert_eq!(t, 7);
            } else {
                assert!(t < 7);
            }
        }
    }

    #[test]
    fn non_stochastic_matrix_rejected() {
        let mut m = default_markov_matrix();
        m[0][0] += 0.01;
        assert!(gen_markov(&MarkovParams { matrix: m, ..Default::default() }).is_err());
        let mut m = default_markov_matrix();
        m[7][7] = -1.0;
        m[7][0] = 2.0;
        assert!(validate_stochastic(&m).is_err());
    }

    #[test]
    fn default_table_first_entry() {
        let net = BoolNet::from_table(&BoolNetTable::default()).unwrap();
        // A reads (C, D); state 0b0000 has C = D = 0.
        assert_eq!(net.prob_zero(0, 0), 0.7);
        assert!(BoolNetTable::default().illustrative);
    }

    #[test]
    fn missing_table_entry_rejected() {
        let mut table = BoolNetTable::default();
        table.mechanisms.get_mut("B").unwrap().p_zero.remove("10");
        let err = BoolNet::from_table(&table).unwrap_err().to_string();
        assert!(err.contains("missing") && err.contains("10"), "{err}");
    }

    #[test]
    fn wrong_in_degree_rejected() {
        let mut table = BoolNetTable::default();
        table.mechanisms.get_mut("C").unwrap().inputs.pop();
        assert!(BoolNet::from_table(&table).is_err());
    }

    #[test]
    fn deterministic_table_gives_function_matrix() {
        let mut table = BoolNetTable::default();
        for mech in table.mechanisms.values_mut() {
            for (k, v) in mech.p_zero.iter_mut() {
                *v = if k == "11" { 0.0 } else { 1.0 };
            }
        }
        let net = BoolNet::from_table(&table).unwrap();
        for row in net.transition_matrix() {
            assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(row.iter().filter(|&&v| v == 0.0).count(), row.len() - 1);
        }
    }

    #[test]
    fn boolnet_dataset_is_one_hot_over_joint_states() {
        let ds = gen_boolnet(&BoolNetParams {
            batches: 20,
            per_batch: 10,
            seed: 1,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(ds.dim(), 16);
        assert!(ds.meta().illustrative);
        for i in 0..ds.len() {
            assert_eq!(ds.current(i).iter().sum::<f64>(), 1.0);
            assert_eq!(ds.next(i).iter().sum::<f64>(), 1.0);
        }
    }
}
