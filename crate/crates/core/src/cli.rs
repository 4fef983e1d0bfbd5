//! Command-line driver: dataset generation, training, q-sweeps, EI of a
//! single checkpoint and plot-data reports.
//!
//! Relative output paths resolve against `--out-dir` (or `NIS_OUT_DIR`).
//! Every emitted CSV starts with a `# tool=.. seed=.. config_hash=..` line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use crate::checkpoint::Checkpoint;
use crate::datagen::{
    default_markov_matrix, gen_boolnet, gen_markov, gen_spring, hot_index, load_table, validate_stochastic,
    BoolNetParams, BoolNetTable, MarkovParams, SpringParams,
};
use crate::dataset::TransitionDataset;
use crate::ei::{cluster_macro_codes, ei_of_checkpoint, one_hot_states, sweep_q, EiConfig, SweepOptions};
use crate::error::{NisError, Result};
use crate::optim::OptimizerKind;
use crate::squeezer::{train, DecodeNoise, ModelConfig, NisModel, Norm, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "nis", version, about = "Neural information squeezer: coarse-graining, macro dynamics and causal emergence")]
pub struct Cli {
    /// Directory that relative output paths resolve against.
    #[arg(long, global = true, env = "NIS_OUT_DIR", default_value = ".")]
    pub out_dir: PathBuf,

    /// Worker threads for training and Monte-Carlo evaluation.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,

    /// Raise log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a transition-pair dataset.
    #[command(subcommand)]
    Generate(Generator),
    /// Train one squeezer and write its checkpoint and loss curve.
    Train(TrainCmd),
    /// Train one squeezer per macro dimension and judge causal emergence.
    Sweep(SweepCmd),
    /// Effective information of a trained checkpoint.
    Ei(EiCmd),
    /// Plot data for a trained checkpoint: scatter, dynamics field, rollout
    /// and clusters.
    Report(ReportCmd),
}

#[derive(Debug, Subcommand)]
pub enum Generator {
    /// Spring oscillator seen through two noisy sensors (p = 4).
    Spring(SpringCmd),
    /// One-hot Markov chain (p = number of states).
    Markov(MarkovCmd),
    /// One-hot stochastic Boolean network (p = 2^nodes).
    Boolnet(BoolnetCmd),
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub batches: Option<usize>,
    #[arg(long)]
    pub per_batch: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dataset CSV; the metadata sidecar is written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SpringCmd {
    /// Sensor noise standard deviations for position and velocity.
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.1])]
    pub sigma: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub dt: f64,
    #[arg(long, default_value_t = 1.0)]
    pub amplitude: f64,
    #[command(flatten)]
    pub sample: SampleArgs,
}

#[derive(Debug, Args)]
pub struct MarkovCmd {
    /// JSON file holding a row-stochastic matrix; defaults to the built-in
    /// 8-state chain.
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    #[command(flatten)]
    pub sample: SampleArgs,
}

#[derive(Debug, Args)]
pub struct BoolnetCmd {
    /// JSON mechanism table; defaults to the built-in illustrative table.
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[command(flatten)]
    pub sample: SampleArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    pub optimizer: OptimizerArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Order of the reconstruction norm (1 or 2).
    #[arg(long, default_value_t = 2)]
    pub norm: u8,
    #[arg(long, default_value_t = 1.0)]
    pub grad_clip: f64,
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
    #[arg(long, default_value_t = ModelConfig::default().hidden)]
    pub hidden: usize,
    #[arg(long, default_value_t = ModelConfig::default().blocks)]
    pub blocks: usize,
}

impl TrainArgs {
    fn config(&self) -> Result<(ModelConfig, TrainConfig)> {
        let cfg = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            optimizer: match self.optimizer {
                OptimizerArg::Adam => OptimizerKind::Adam,
                OptimizerArg::Sgd => OptimizerKind::Sgd,
            },
            seed: self.seed,
            norm: Norm::from_order(self.norm)?,
            grad_clip: self.grad_clip,
            validation_fraction: self.val_fraction,
        };
        cfg.validate()?;
        if self.hidden == 0 || self.blocks == 0 {
            return Err(NisError::Config("hidden width and block count must be positive".into()));
        }
        Ok((
            ModelConfig {
                hidden: self.hidden,
                blocks: self.blocks,
            },
            cfg,
        ))
    }
}

#[derive(Debug, Args)]
pub struct EiArgs {
    /// Half-width of the intervention cube.
    #[arg(long, default_value_t = 100.0)]
    pub ei_l: f64,
    #[arg(long, default_value_t = 1000)]
    pub ei_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub ei_seed: u64,
}

impl EiArgs {
    fn config(&self) -> Result<EiConfig> {
        let cfg = EiConfig {
            l: self.ei_l,
            n_samples: self.ei_samples,
            seed: self.ei_seed,
            ..EiConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainCmd {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub q: usize,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Checkpoint path; the loss curve goes next to it as `<stem>.loss.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepCmd {
    #[arg(long)]
    pub data: PathBuf,
    /// Candidate macro dimensions; `p` is always included.
    #[arg(long, value_delimiter = ',', conflicts_with = "q_max")]
    pub qs: Option<Vec<usize>>,
    /// Sweep `q = 1..=q-max` (plus `p`).
    #[arg(long)]
    pub q_max: Option<usize>,
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub ei: EiArgs,
    /// Train the candidates concurrently.
    #[arg(long)]
    pub parallel: bool,
    /// Output stem: writes `<name>.csv` and `<name>.json`.
    #[arg(long, default_value = "sweep")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct EiCmd {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub ei: EiArgs,
    /// Print EI in bits as well as nats.
    #[arg(long)]
    pub bits: bool,
}

#[derive(Debug, Args)]
pub struct ReportCmd {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 400)]
    pub steps: usize,
    /// Dataset row whose current state starts the rollout.
    #[arg(long, default_value_t = 0)]
    pub start: usize,
    /// Continuous datasets: number of rows to encode for the scatter.
    #[arg(long, default_value_t = 1000)]
    pub points: usize,
    /// Decode rollouts with sampled instead of zero latent noise.
    #[arg(long)]
    pub sampled: bool,
    /// Output stem: writes `<name>_scatter.csv`, `<name>_field.csv`,
    /// `<name>_rollout.csv` and `<name>_clusters.csv`.
    #[arg(long, default_value = "report")]
    pub name: String,
}

/// Process exit status for an error: 2 for configuration and malformed
/// input, 3 for numeric failures, 4 for I/O.
pub fn exit_code(err: &NisError) -> i32 {
    match err {
        NisError::Config(_) | NisError::Parse(_) | NisError::Dimension { .. } | NisError::ShapeMismatch { .. } => 2,
        NisError::NumericRange(_) => 3,
        NisError::Io(_) => 4,
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(NisError::Config("--threads must be positive".into()));
    }
    // A pool may already exist when `run` is called twice in one process.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    prepare_dir(&cli.out_dir)?;
    match &cli.command {
        Command::Generate(generator) => cmd_generate(cli, generator),
        Command::Train(cmd) => cmd_train(cli, cmd),
        Command::Sweep(cmd) => cmd_sweep(cli, cmd),
        Command::Ei(cmd) => cmd_ei(cmd),
        Command::Report(cmd) => cmd_report(cli, cmd),
    }
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    if !dir.is_dir() {
        return Err(NisError::Io(std::io::Error::other(format!("{} is not a directory", dir.display()))));
    }
    Ok(())
}

fn output_path(cli: &Cli, path: &Path) -> Result<PathBuf> {
    let full = if path.is_absolute() { path.to_path_buf() } else { cli.out_dir.join(path) };
    if let Some(parent) = full.parent().filter(|p| !p.as_os_str().is_empty()) {
        prepare_dir(parent)?;
    }
    Ok(full)
}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(NisError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} not found", path.display()),
        )));
    }
    Ok(())
}

fn read_dataset(path: &Path) -> Result<TransitionDataset> {
    require_file(path)?;
    require_file(&TransitionDataset::sidecar_path(path))?;
    TransitionDataset::read(path)
}

fn provenance(seed: u64, hash: &str) -> String {
    format!("# tool={} seed={seed} config_hash={hash}\n", crate::TOOL_VERSION)
}

fn join<T: ToString>(values: &[T]) -> String {
    values.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn names(prefix: &str, n: usize) -> String {
    (0..n).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>().join(",")
}

// ----------------------------------------------------------------- commands

fn cmd_generate(cli: &Cli, generator: &Generator) -> Result<()> {
    let (dataset, sample, default_name) = match generator {
        Generator::Spring(cmd) => {
            let defaults = SpringParams::default();
            if cmd.sigma.len() != 2 {
                return Err(NisError::Config(format!(
                    "--sigma takes two comma-separated values, got {}",
                    cmd.sigma.len()
                )));
            }
            let params = SpringParams {
                sigma: [cmd.sigma[0], cmd.sigma[1]],
                dt: cmd.dt,
                amplitude: cmd.amplitude,
                batches: cmd.sample.batches.unwrap_or(defaults.batches),
                per_batch: cmd.sample.per_batch.unwrap_or(defaults.per_batch),
                seed: cmd.sample.seed,
            };
            params.validate()?;
            let out = output_path(cli, cmd.sample.out.as_deref().unwrap_or(Path::new("spring.csv")))?;
            (gen_spring(&params)?, out, "spring")
        }
        Generator::Markov(cmd) => {
            let defaults = MarkovParams::default();
            let matrix = match &cmd.matrix {
                Some(path) => {
                    require_file(path)?;
                    let m: Vec<Vec<f64>> = serde_json::from_str(&fs::read_to_string(path)?)?;
                    validate_stochastic(&m)?;
                    m
                }
                None => default_markov_matrix(),
            };
            let params = MarkovParams {
                matrix,
                batches: cmd.sample.batches.unwrap_or(defaults.batches),
                per_batch: cmd.sample.per_batch.unwrap_or(defaults.per_batch),
                seed: cmd.sample.seed,
            };
            let out = output_path(cli, cmd.sample.out.as_deref().unwrap_or(Path::new("markov.csv")))?;
            (gen_markov(&params)?, out, "markov")
        }
        Generator::Boolnet(cmd) => {
            let defaults = BoolNetParams::default();
            let table = match &cmd.table {
                Some(path) => {
                    require_file(path)?;
                    load_table(path)?
                }
                None => BoolNetTable::default(),
            };
            let params = BoolNetParams {
                table,
                batches: cmd.sample.batches.unwrap_or(defaults.batches),
                per_batch: cmd.sample.per_batch.unwrap_or(defaults.per_batch),
                seed: cmd.sample.seed,
            };
            let out = output_path(cli, cmd.sample.out.as_deref().unwrap_or(Path::new("boolnet.csv")))?;
            (gen_boolnet(&params)?, out, "boolnet")
        }
    };
    dataset.write(&sample)?;
    if dataset.meta().illustrative {
        log::warn!("{default_name}: the mechanism table is illustrative");
    }
    println!(
        "wrote {} pairs (p = {}) to {}",
        dataset.len(),
        dataset.dim(),
        sample.display()
    );
    Ok(())
}

fn cmd_train(cli: &Cli, cmd: &TrainCmd) -> Result<()> {
    let (arch, cfg) = cmd.train.config()?;
    let dataset = read_dataset(&cmd.data)?;
    let p = dataset.dim();
    if cmd.q == 0 || cmd.q > p {
        return Err(NisError::Config(format!("q must lie in 1..={p}, got {}", cmd.q)));
    }
    let default_out = PathBuf::from(format!("model_q{}.json", cmd.q));
    let ckpt_path = output_path(cli, cmd.out.as_deref().unwrap_or(&default_out))?;
    let loss_path = ckpt_path.with_extension("loss.csv");

    let model = NisModel::new(p, cmd.q, arch, cfg.norm, cfg.seed)?;
    info!("training q = {} on {} pairs, {} parameters", cmd.q, dataset.len(), model.param_count());
    let trained = train(model, &dataset, &cfg)?;
    let ckpt = Checkpoint::from_trained(&trained, &cfg);
    ckpt.write(&ckpt_path)?;

    let mut csv = provenance(cfg.seed, &ckpt.config_hash);
    csv.push_str("epoch,train_loss,val_loss,best_val_loss\n");
    for r in &trained.outcome.history {
        let _ = writeln!(csv, "{},{},{},{}", r.epoch, r.train_loss, r.val_loss, r.best_val_loss);
    }
    fs::write(&loss_path, csv)?;

    println!(
        "train_loss: {} val_loss: {} best_epoch: {}",
        trained.outcome.train_loss, trained.outcome.val_loss, trained.outcome.best_epoch
    );
    println!("sigma2: {}", join(&trained.sigma2));
    println!("checkpoint: {}", ckpt_path.display());
    Ok(())
}

fn cmd_sweep(cli: &Cli, cmd: &SweepCmd) -> Result<()> {
    let (arch, train_cfg) = cmd.train.config()?;
    let ei = cmd.ei.config()?;
    let csv_path = output_path(cli, Path::new(&format!("{}.csv", cmd.name)))?;
    let json_path = output_path(cli, Path::new(&format!("{}.json", cmd.name)))?;
    let dataset = read_dataset(&cmd.data)?;
    let p = dataset.dim();
    let qs = match (&cmd.qs, cmd.q_max) {
        (Some(qs), _) => qs.clone(),
        (None, Some(max)) => (1..=max).collect(),
        (None, None) => (1..=p).collect(),
    };
    let opts = SweepOptions {
        arch,
        train: train_cfg,
        ei,
        qs,
        parallel: cmd.parallel,
    };
    let (result, _) = sweep_q(&dataset, &opts)?;
    result.write(&csv_path, &json_path)?;
    for w in &result.warnings {
        log::warn!("{w}");
    }
    for e in &result.entries {
        println!("q={} EI={} Eff={} stderr={}", e.q, e.report.ei, e.report.eff, e.report.stderr);
    }
    println!("q*: {}", result.q_star.map_or("none".into(), |q| q.to_string()));
    if result.low_signal {
        println!("low-signal: true");
    }
    println!("emergent: {}", result.emergent);
    Ok(())
}

fn cmd_ei(cmd: &EiCmd) -> Result<()> {
    let cfg = cmd.ei.config()?;
    require_file(&cmd.checkpoint)?;
    let ckpt = Checkpoint::read(&cmd.checkpoint)?;
    let report = ei_of_checkpoint(&ckpt, &cfg)?;
    if cmd.bits {
        println!("EI: {} nats ({} bits)", report.ei, report.bits());
    } else {
        println!("EI: {} nats", report.ei);
    }
    println!("Eff: {}", report.eff);
    println!("stderr: {}", report.stderr);
    println!("sigma: {}", join(&report.sigma));
    if report.clamped > 0 {
        println!("clamped: {} of {}", report.clamped, report.n_samples);
    }
    Ok(())
}

fn is_one_hot(dataset: &TransitionDataset) -> bool {
    (0..dataset.len()).all(|i| {
        let row = dataset.current(i);
        row.iter().all(|&v| v == 0.0 || v == 1.0) && row.iter().filter(|&&v| v == 1.0).count() == 1
    })
}

fn cmd_report(cli: &Cli, cmd: &ReportCmd) -> Result<()> {
    require_file(&cmd.checkpoint)?;
    let stem = |suffix: &str| output_path(cli, Path::new(&format!("{}_{suffix}.csv", cmd.name)));
    let paths = [stem("scatter")?, stem("field")?, stem("rollout")?, stem("clusters")?];
    let ckpt = Checkpoint::read(&cmd.checkpoint)?;
    let dataset = read_dataset(&cmd.data)?;
    let model = ckpt.to_model()?;
    let (p, q) = (model.p(), model.q());
    if dataset.dim() != p {
        return Err(NisError::Dimension {
            context: "report dataset",
            expected: p,
            got: dataset.dim(),
        });
    }
    if cmd.start >= dataset.len() {
        return Err(NisError::Config(format!(
            "--start {} outside a dataset of {} pairs",
            cmd.start,
            dataset.len()
        )));
    }
    let head = provenance(ckpt.seed, &ckpt.config_hash);

    // Discrete systems: every state once, labelled by its decimal code.
    // Continuous systems: the first `points` rows, labelled by row.
    let (labels, states): (Vec<usize>, Vec<Vec<f64>>) = if is_one_hot(&dataset) {
        let states = one_hot_states(p);
        ((0..p).map(|s| hot_index(&states[s])).collect(), states)
    } else {
        let n = cmd.points.min(dataset.len());
        ((0..n).collect(), (0..n).map(|i| dataset.current(i).to_vec()).collect())
    };
    let (codes, clusters) = cluster_macro_codes(&model, &states)?;

    let mut scatter = head.clone();
    let _ = writeln!(scatter, "state,{},{}", names("x", p), names("y", q));
    for ((label, x), y) in labels.iter().zip(&states).zip(&codes) {
        let _ = writeln!(scatter, "{label},{},{}", join(x), join(y));
    }

    let mut field = head.clone();
    let _ = writeln!(field, "{},{}", names("y", q), names("dy", q));
    for y in &codes {
        let next = model.macro_step(y)?;
        let dy: Vec<f64> = next.iter().zip(y).map(|(a, b)| a - b).collect();
        let _ = writeln!(field, "{},{}", join(y), join(&dy));
    }

    let noise = if cmd.sampled {
        DecodeNoise::Sampled { seed: ckpt.seed }
    } else {
        DecodeNoise::Zero
    };
    let rollout = model.rollout(dataset.current(cmd.start), cmd.steps, noise)?;
    let mut roll = head.clone();
    let _ = writeln!(roll, "step,{},{}", names("y", q), names("x", p));
    for (t, (y, x)) in rollout.macro_states.iter().zip(&rollout.micro_states).enumerate() {
        let _ = writeln!(roll, "{t},{},{}", join(y), join(x));
    }

    let mut clus = head;
    let _ = writeln!(clus, "# clusters: {}", clusters.count);
    clus.push_str("state,cluster\n");
    for (label, c) in labels.iter().zip(&clusters.labels) {
        let _ = writeln!(clus, "{label},{c}");
    }

    for (path, body) in paths.iter().zip([scatter, field, roll, clus]) {
        fs::write(path, body)?;
    }
    println!("clusters: {}", clusters.count);
    println!("wrote {}", paths.map(|p| p.display().to_string()).join(", "));
    Ok(())
}
