use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::builder::BoolishValueParser;
use clap::{Args, Parser, Subcommand};
use neurogen_core::circuit::{extract_circuit, random_topology, CircuitFile};
use neurogen_core::data::{load_cifar10, load_mnist_dir, Dataset, DatasetName, Split, N_CLASSES};
use neurogen_core::devsim::{census, run_development, SimState};
use neurogen_core::grn::{infer_ruleset, parse_expression_matrix, RuleSet};
use neurogen_core::model::{evaluate, init_model, train_epoch, Adam, Model};

use crate::config::{ExperimentConfig, Seeds};
use crate::metrics::{self, AblationRow, MetricsRecord};
use crate::report;

pub const RULES_FILE: &str = "rules.json";
pub const SIM_FILE: &str = "sim.json";
pub const RANDOM_CIRCUIT_FILE: &str = "random_circuit.json";
pub const ABLATION_METRICS_FILE: &str = "ablation_metrics.csv";
pub const REPORT_FILE: &str = "report.md";

#[derive(Debug, Parser)]
#[command(name = "neurogen", version, about = "Grow a recurrent circuit from gene rules and train a classifier on it")]
pub struct Cli {
    /// JSON experiment config; unset keys take defaults.
    #[arg(long, global = true, env = "NEUROGEN_CONFIG")]
    pub config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true, env = "NEUROGEN_SEED")]
    pub seed: Option<u64>,
    /// Artifact directory.
    #[arg(long, global = true, env = "NEUROGEN_OUT", default_value = "out")]
    pub out: PathBuf,
    /// Directory containing `mnist/` and `cifar-10-batches-bin/`.
    #[arg(long, global = true, env = "NEUROGEN_DATA_DIR")]
    pub data_root: Option<PathBuf>,
    /// Record wall_time_sec as 0 so metrics are byte-reproducible.
    #[arg(long, global = true, env = "NEUROGEN_FIXED_CLOCK", value_parser = BoolishValueParser::new())]
    pub fixed_clock: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Infer Boolean rules from an expression CSV and write rules.json.
    Infer(InferArgs),
    /// Grow a population from rules.json and write sim.json and census.json.
    Develop(DevelopArgs),
    /// Collapse sim.json into the normalized recurrent matrix circuit.json.
    Extract(ExtractArgs),
    /// Train the projections on a dataset and append to metrics.csv.
    Train(TrainArgs),
    /// Train developmental and density-matched random circuits side by side.
    Ablate(TrainArgs),
    /// Render report.md from stored artifacts.
    Report,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub expression: Option<PathBuf>,
    /// Minimum agreement score a rule must exceed.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub k_max: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DevelopArgs {
    #[arg(long)]
    pub rules: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub sim: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Circuit file [default: <out>/circuit.json].
    #[arg(long)]
    pub circuit: Option<PathBuf>,
    /// mnist or cifar10.
    #[arg(long, value_parser = parse_dataset)]
    pub dataset: Option<DatasetName>,
    /// Directory holding this dataset's files.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Constant subtracted from each input pixel before projection.
    #[arg(long, allow_hyphen_values = true)]
    pub input_offset: Option<f64>,
    /// Defaults to `<dataset>-seed<seed>`.
    #[arg(long)]
    pub run_id: Option<String>,
    /// Also record a train-split row per epoch.
    #[arg(long)]
    pub train_rows: bool,
    /// Metrics CSV to append to [default: <out>/metrics.csv, or ablation_metrics.csv for ablate].
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

fn parse_dataset(s: &str) -> Result<DatasetName, String> {
    match s {
        "mnist" => Ok(DatasetName::Mnist),
        "cifar10" | "cifar-10" => Ok(DatasetName::Cifar10),
        _ => Err(format!("unknown dataset `{s}` (expected mnist or cifar10)")),
    }
}

fn dataset_str(d: DatasetName) -> &'static str {
    match d {
        DatasetName::Mnist => "mnist",
        DatasetName::Cifar10 => "cifar10",
    }
}

struct Ctx {
    cfg: ExperimentConfig,
    seeds: Seeds,
    out: PathBuf,
    fixed_clock: bool,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, name: &str, text: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.out).with_context(|| format!("cannot create {}", self.out.display()))?;
        let p = self.path(name);
        fs::write(&p, text).with_context(|| format!("cannot write {}", p.display()))?;
        Ok(p)
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn cmd_infer(ctx: &Ctx, args: &InferArgs) -> Result<()> {
    let path = args.expression.clone().unwrap_or_else(|| ctx.cfg.expression.clone());
    let m = parse_expression_matrix(&read(&path)?).with_context(|| format!("cannot parse {}", path.display()))?;
    let theta = args.threshold.unwrap_or(ctx.cfg.theta);
    let k_max = args.k_max.unwrap_or(ctx.cfg.k_max);
    let rs = infer_ruleset(&m, k_max, theta)?;
    let written = ctx.write(RULES_FILE, &rs.to_json())?;
    print!("{rs}");
    println!("mean score {:.3}; wrote {}", rs.mean_score(), written.display());
    Ok(())
}

fn cmd_develop(ctx: &Ctx, args: &DevelopArgs) -> Result<()> {
    let path = args.rules.clone().unwrap_or_else(|| ctx.path(RULES_FILE));
    let rs = RuleSet::from_json(&read(&path)?).with_context(|| format!("invalid rules {}", path.display()))?;
    let mut sim = ctx.cfg.sim.clone();
    sim.seed = ctx.seeds.development;
    if let Some(steps) = args.steps {
        sim.steps = steps;
    }
    let state = run_development(&rs, &sim)?;
    let c = census(&state);
    ctx.write(SIM_FILE, &state.to_json())?;
    ctx.write(report::CENSUS_FILE, &serde_json::to_string_pretty(&c)?)?;
    println!("{c}");
    Ok(())
}

fn cmd_extract(ctx: &Ctx, args: &ExtractArgs) -> Result<()> {
    let path = args.sim.clone().unwrap_or_else(|| ctx.path(SIM_FILE));
    let state = SimState::from_json(&read(&path)?).with_context(|| format!("invalid snapshot {}", path.display()))?;
    let graph = extract_circuit(&state)?;
    let circuit = CircuitFile::build("developmental", &graph);
    ctx.write(report::CIRCUIT_FILE, &circuit.to_json())?;
    print_circuit(&circuit);
    Ok(())
}

fn print_circuit(c: &CircuitFile) {
    let g = &c.stats.graph;
    let s = &c.stats.spectral;
    println!(
        "{} circuit: {} neurons, {} synapses, average total degree {:.2}",
        c.source, g.n_neurons, g.n_synapses, g.avg_total_degree
    );
    println!(
        "spectral radius {:.6}, top moduli {:?}, converged {}",
        s.spectral_radius, s.top_moduli, s.converged
    );
}

struct TrainSetup {
    dataset: DatasetName,
    train: Dataset,
    test: Dataset,
    circuit: CircuitFile,
    epochs: u64,
    batch_size: usize,
    lr: f64,
    input_offset: f64,
    run_id: String,
    metrics: PathBuf,
}

fn load_split(dataset: DatasetName, dir: &Path, split: Split) -> Result<Dataset> {
    let ds = match dataset {
        DatasetName::Mnist => load_mnist_dir(dir, split)?,
        DatasetName::Cifar10 => load_cifar10(dir, split)?,
    };
    if ds.is_empty() {
        bail!("{} {} split in {} is empty", dataset_str(dataset), split.as_str(), dir.display());
    }
    Ok(ds)
}

fn setup(ctx: &Ctx, args: &TrainArgs, default_metrics: &str) -> Result<TrainSetup> {
    let t = &ctx.cfg.train;
    let dataset = args.dataset.unwrap_or(t.dataset);
    let circuit_path = args.circuit.clone().unwrap_or_else(|| ctx.path(report::CIRCUIT_FILE));
    let circuit =
        CircuitFile::from_json(&read(&circuit_path)?).with_context(|| format!("invalid circuit {}", circuit_path.display()))?;
    if circuit.n == 0 {
        bail!("circuit {} has no neurons", circuit_path.display());
    }
    let dir = args.data_dir.clone().unwrap_or_else(|| ctx.cfg.data_dir(dataset));
    let train = load_split(dataset, &dir, Split::Train)?;
    let test = load_split(dataset, &dir, Split::Test)?;
    if train.input_dim != test.input_dim {
        bail!("train inputs have {} features but test inputs have {}", train.input_dim, test.input_dim);
    }
    let batch_size = args.batch_size.unwrap_or(t.batch_size);
    if batch_size == 0 {
        bail!("batch size must be positive");
    }
    Ok(TrainSetup {
        dataset,
        train,
        test,
        circuit,
        epochs: args.epochs.unwrap_or(t.epochs),
        batch_size,
        lr: args.lr.unwrap_or(t.lr),
        input_offset: args.input_offset.unwrap_or(t.input_offset),
        run_id: args
            .run_id
            .clone()
            .unwrap_or_else(|| format!("{}-seed{}", dataset_str(dataset), ctx.seeds.master)),
        metrics: args.metrics.clone().unwrap_or_else(|| ctx.path(default_metrics)),
    })
}

/// Epoch-0 evaluation, then one shuffled pass and one evaluation per epoch.
fn train_arm(ctx: &Ctx, s: &TrainSetup, circuit: &CircuitFile, arm: &str, run_id: &str, train_rows: bool) -> Result<Vec<MetricsRecord>> {
    let start = Instant::now();
    let clock = || {
        if ctx.fixed_clock {
            0.0
        } else {
            (start.elapsed().as_secs_f64() * 1000.0).round() / 1000.0
        }
    };
    let phase = format!("{}:{arm}", dataset_str(s.dataset));
    let record = |epoch, split: Split, loss, accuracy, wall| MetricsRecord {
        run_id: run_id.to_owned(),
        phase: phase.clone(),
        epoch,
        split: split.as_str().to_owned(),
        loss,
        accuracy,
        wall_time_sec: wall,
        seed: ctx.seeds.master,
    };
    let mut model: Model<f32> = init_model(s.train.input_dim, &circuit.weight_matrix(), N_CLASSES, ctx.seeds.init);
    model = model.with_input_offset(s.input_offset);
    let mut opt = Adam::new(&model, s.lr);

    let e0 = evaluate(&model, &s.test)?;
    println!("[{arm}] epoch 0: test accuracy {:.4}, loss {:.4}", e0.accuracy, e0.loss);
    let mut out = vec![record(0, Split::Test, e0.loss, e0.accuracy, clock())];
    for epoch in 1..=s.epochs {
        let tr = train_epoch(&mut model, &mut opt, &s.train, s.batch_size, ctx.seeds.shuffle, epoch)?;
        let te = evaluate(&model, &s.test)?;
        let wall = clock();
        println!(
            "[{arm}] epoch {epoch}: train accuracy {:.4}, loss {:.4}; test accuracy {:.4}, loss {:.4}",
            tr.accuracy, tr.loss, te.accuracy, te.loss
        );
        if train_rows {
            out.push(record(epoch, Split::Train, tr.loss, tr.accuracy, wall));
        }
        out.push(record(epoch, Split::Test, te.loss, te.accuracy, wall));
    }
    Ok(out)
}

fn cmd_train(ctx: &Ctx, args: &TrainArgs) -> Result<()> {
    let s = setup(ctx, args, report::METRICS_FILE)?;
    let records = train_arm(ctx, &s, &s.circuit, "developmental", &s.run_id, args.train_rows)?;
    metrics::append(&s.metrics, &records)?;
    println!("appended {} rows to {}", records.len(), s.metrics.display());
    Ok(())
}

fn test_accuracy(records: &[MetricsRecord]) -> Vec<(u64, f64)> {
    records.iter().filter(|r| r.split == "test").map(|r| (r.epoch, r.accuracy)).collect()
}

fn cmd_ablate(ctx: &Ctx, args: &TrainArgs) -> Result<()> {
    let s = setup(ctx, args, ABLATION_METRICS_FILE)?;
    let g = &s.circuit.stats.graph;
    let random = CircuitFile::build("random", &random_topology(g.n_neurons, g.n_synapses, ctx.seeds.topology)?);
    ctx.write(RANDOM_CIRCUIT_FILE, &random.to_json())?;
    print_circuit(&random);

    let dev = train_arm(ctx, &s, &s.circuit, "developmental", &s.run_id, args.train_rows)?;
    let rand_run = format!("{}-random", s.run_id);
    let rnd = train_arm(ctx, &s, &random, "random", &rand_run, args.train_rows)?;
    let rows: Vec<AblationRow> = test_accuracy(&dev)
        .into_iter()
        .zip(test_accuracy(&rnd))
        .map(|((epoch, d), (_, r))| AblationRow {
            epoch,
            dev_accuracy: d,
            rand_accuracy: r,
            delta: d - r,
        })
        .collect();
    let mut all = dev;
    all.extend(rnd);
    metrics::append(&s.metrics, &all)?;
    let table = ctx.path(report::ABLATION_FILE);
    fs::create_dir_all(&ctx.out)?;
    metrics::write_ablation(&table, &rows)?;
    println!("epoch  developmental  random  delta");
    for r in &rows {
        println!("{:>5}  {:>13.4}  {:>6.4}  {:+.4}", r.epoch, r.dev_accuracy, r.rand_accuracy, r.delta);
    }
    println!("wrote {} and {}", s.metrics.display(), table.display());
    Ok(())
}

fn cmd_report(ctx: &Ctx) -> Result<()> {
    let text = report::render(&ctx.out)?;
    ctx.write(REPORT_FILE, &text)?;
    print!("{text}");
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(root) = cli.data_root {
        cfg.data_root = root;
    }
    let seeds = Seeds::from_master(cli.seed.unwrap_or(cfg.seed));
    let ctx = Ctx {
        cfg,
        seeds,
        out: cli.out,
        fixed_clock: cli.fixed_clock,
    };
    match &cli.command {
        Command::Infer(a) => cmd_infer(&ctx, a),
        Command::Develop(a) => cmd_develop(&ctx, a),
        Command::Extract(a) => cmd_extract(&ctx, a),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Ablate(a) => cmd_ablate(&ctx, a),
        Command::Report => cmd_report(&ctx),
    }
}

/// One line, `error: ` prefixed, no embedded newlines.
pub fn error_line(message: &str) -> String {
    let flat: Vec<&str> = message.split_whitespace().collect();
    let text = flat.join(" ");
    let text = text.strip_prefix("error: ").unwrap_or(&text);
    format!("error: {text}")
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", error_line(first));
            return 1;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&format!("{e:#}")));
            1
        }
    }
}
