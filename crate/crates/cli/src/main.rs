//! `qdd`: dataset generation, training, dreaming and analysis from the shell.
//!
//! Outputs go under `--out`, else `$QDD_OUT`, else `./qdd-out`, in a
//! per-command subdirectory together with a `manifest.json`. Reruns with the
//! same arguments reproduce every file byte for byte. On failure a JSON
//! object `{"error": {"kind", "message"}}` is printed to stderr and the exit
//! code is 1.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use qdd_core::analysis::{
    entangling_ansatz, expressibility, render_report, trace_metrics, cohort_metrics, AnalysisError,
    DreamMetrics, ReportFormat,
};
use qdd_core::circuit::{parse_circuit_string, Circuit, CircuitError};
use qdd_core::datagen::{load_dataset, mean_field_circuit, save_dataset, DatagenError, MfMode, MEAN_FIELD_ENERGY};
use qdd_core::dreaming::{dream_cohort, read_traces, sample_indices, write_traces, DreamConfig, DreamError};
use qdd_core::encoding::{encode, EncodingError, Vocabulary};
use qdd_core::neuralnet::{
    checkpoint_bytes, load_checkpoint, train, Checkpoint, CheckpointError, NnError, TrainConfig, TrainReport,
};
use qdd_core::presets::{sweep_grid, Preset, PresetError};
use qdd_core::simulator::{exact_ground_energy, Boundary, HamiltonianSpec, SimError};
use qdd_core::vqe::VqeConfig;

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Preset(#[from] PresetError),
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error(transparent)]
    Train(#[from] NnError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Dream(#[from] DreamError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error("circuit {index} does not fit the checkpoint vocabulary: {source}")]
    Vocabulary { index: usize, source: EncodingError },
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Preset(PresetError::Unknown { .. }) => "unknown_preset",
            CliError::Preset(_) => "preset",
            CliError::Datagen(DatagenError::Io { .. }) => "io",
            CliError::Datagen(_) => "dataset",
            CliError::Train(_) => "train",
            CliError::Checkpoint(CheckpointError::Fingerprint { .. }) => "fingerprint",
            CliError::Checkpoint(_) => "checkpoint",
            CliError::Dream(_) => "dream",
            CliError::Analysis(_) => "analysis",
            CliError::Sim(_) => "simulator",
            CliError::Circuit(_) => "circuit",
            CliError::Vocabulary { .. } => "fingerprint",
            CliError::Io { .. } => "io",
            CliError::Usage(_) => "usage",
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(name = "qdd", version, about = "Quantum circuit dreaming workbench")]
struct Cli {
    /// Output root (overrides $QDD_OUT).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for labeling and dreaming (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate and label a dataset.
    Gen(GenArgs),
    /// Train a regressor on a dataset.
    Train(TrainArgs),
    /// Dream circuits with a trained checkpoint.
    Dream(DreamArgs),
    /// Exact TFIM ground energy by dense diagonalization.
    Oracle(OracleArgs),
    /// Expressibility of a circuit or of dreamed circuits.
    Expr(ExprArgs),
    /// Train every point of the hyperparameter search grid.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Built-in preset name or TOML file.
    #[arg(long)]
    preset: String,
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    vqe: VqeArgs,
}

#[derive(Args)]
struct VqeArgs {
    /// VQE restarts per circuit.
    #[arg(long, default_value_t = 3)]
    restarts: usize,
    #[arg(long, default_value_t = 500)]
    vqe_iterations: usize,
    #[arg(long, default_value_t = 0)]
    vqe_seed: u64,
}

impl VqeArgs {
    fn config(&self) -> VqeConfig {
        VqeConfig {
            restarts: self.restarts,
            max_iterations: self.vqe_iterations,
            seed: self.vqe_seed,
            ..VqeConfig::default()
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    dataset: PathBuf,
    #[arg(long)]
    preset: String,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DreamArgs {
    checkpoint: PathBuf,
    /// Dataset to sample starting circuits from (with --n).
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    /// Starting circuit string; repeatable.
    #[arg(long)]
    circuit: Vec<String>,
    /// File with one starting circuit string per line.
    #[arg(long)]
    circuit_file: Option<PathBuf>,
    #[arg(long, default_value_t = -8.0, allow_negative_numbers = true)]
    target: f64,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 50)]
    inner_steps: usize,
    #[arg(long, default_value_t = 10)]
    outer_epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    noise_lower: f64,
    #[arg(long, default_value_t = 0.9)]
    noise_upper: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    #[arg(long, default_value_t = MEAN_FIELD_ENERGY, allow_negative_numbers = true)]
    mf_energy: f64,
    #[command(flatten)]
    vqe: VqeArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Lines,
    Table,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long = "n")]
    n_qubits: usize,
    #[arg(long = "J", default_value_t = 1.0, allow_negative_numbers = true)]
    j: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    g: f64,
    #[arg(long)]
    periodic: bool,
}

#[derive(Args)]
struct ExprArgs {
    /// Circuit string; needs --n-qubits.
    #[arg(long)]
    circuit: Option<String>,
    #[arg(long)]
    n_qubits: Option<usize>,
    /// Mean-field circuit (relaxed or fixed).
    #[arg(long)]
    mf: Option<MfMode>,
    /// Entangling ansatz with this many moments (needs --n-qubits).
    #[arg(long)]
    ansatz_moments: Option<usize>,
    /// Trace file from `dream`; scores the initial and final circuit of every run.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value_t = 5000)]
    samples: usize,
    #[arg(long, default_value_t = 75)]
    bins: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SweepArgs {
    dataset: PathBuf,
    #[arg(long)]
    preset: String,
    /// Only this round (architecture, learning_rate, noise, loss).
    #[arg(long)]
    round: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn io_err(path: &Path, e: impl ToString) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| io_err(path, e))
}

/// One command's output directory plus what goes into its manifest.
struct Run {
    dir: PathBuf,
    outputs: BTreeMap<String, String>,
}

impl Run {
    fn open(root: &Path, command: &str, label: &str) -> Result<Self> {
        let dir = root.join(command).join(label);
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        Ok(Run {
            dir,
            outputs: BTreeMap::new(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let p = self.path(name);
        fs::write(&p, bytes).map_err(|e| io_err(&p, e))?;
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(p)
    }

    /// Records a file written by a library call.
    fn record(&mut self, name: &str) -> Result<PathBuf> {
        let p = self.path(name);
        let bytes = read(&p)?;
        self.outputs.insert(name.to_string(), sha256_hex(&bytes));
        Ok(p)
    }

    fn finish(mut self, command: &str, config: &Value, seeds: Value) -> Result<PathBuf> {
        let config_text = serde_json::to_string(config).expect("json");
        let argv: Vec<String> = std::env::args().skip(1).collect();
        let manifest = json!({
            "command": command,
            "argv": argv,
            "version": env!("CARGO_PKG_VERSION"),
            "config": config,
            "config_digest": sha256_hex(config_text.as_bytes()),
            "seeds": seeds,
            "outputs": self.outputs,
        });
        let text = serde_json::to_string_pretty(&manifest).expect("json") + "\n";
        let p = self.path("manifest.json");
        fs::write(&p, text).map_err(|e| io_err(&p, e))?;
        self.outputs.clear();
        Ok(self.dir)
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

fn file_stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "input".into())
}

fn cmd_gen(root: &Path, a: &GenArgs) -> Result<Value> {
    if !(a.scale > 0.0 && a.scale.is_finite()) {
        return Err(CliError::Usage("--scale must be positive".into()));
    }
    let preset = Preset::resolve(&a.preset)?;
    let vqe = a.vqe.config();
    let h = HamiltonianSpec::benchmark();
    let records = preset.build(a.seed, a.scale, &h, &vqe)?;
    let mut run = Run::open(root, "gen", &format!("{}-seed{}-scale{}", preset.name, a.seed, a.scale))?;
    let path = run.path("dataset.jsonl");
    save_dataset(&path, &records)?;
    run.record("dataset.jsonl")?;
    run.write("preset.toml", preset.to_toml().as_bytes())?;
    let energies = records.iter().map(|r| r.energy);
    let summary = json!({
        "preset": preset.name,
        "records": records.len(),
        "min_energy": energies.clone().fold(f64::INFINITY, f64::min),
        "max_energy": energies.fold(f64::NEG_INFINITY, f64::max),
        "dataset": path,
    });
    let config = json!({ "preset": preset, "scale": a.scale, "seed": a.seed, "vqe": vqe, "hamiltonian": h });
    let dir = run.finish("gen", &config, json!({ "dataset": a.seed, "vqe": vqe.seed }))?;
    Ok(json!({ "summary": summary, "dir": dir }))
}

fn dataset_vocabulary(preset: &Preset, records: &[qdd_core::datagen::DatasetRecord]) -> Result<Vocabulary> {
    let circuits = records.iter().map(|r| r.parse()).collect::<std::result::Result<Vec<_>, _>>()?;
    Vocabulary::for_circuits(&preset.dataset.gate_pool, preset.dataset.n_qubits, circuits.iter())
        .map_err(|e| CliError::Train(NnError::Encoding(e)))
}

fn curves_tsv(r: &TrainReport) -> String {
    let mut s = String::from("epoch\ttrain_loss\ttest_loss\n");
    for (i, (a, b)) in r.train_curve.iter().zip(&r.test_curve).enumerate() {
        s.push_str(&format!("{}\t{a}\t{b}\n", i + 1));
    }
    s
}

fn train_summary(r: &TrainReport) -> Value {
    json!({
        "final_train_loss": r.final_train_loss,
        "final_test_loss": r.final_test_loss,
        "best_test_loss": r.best_test_loss,
        "best_epoch": r.best_epoch,
        "epochs_run": r.epochs_run,
        "baseline_test_loss": r.baseline_test_loss,
        "beats_baseline": r.best_test_loss < r.baseline_test_loss,
    })
}

fn cmd_train(root: &Path, a: &TrainArgs) -> Result<Value> {
    let preset = Preset::resolve(&a.preset)?;
    let records = load_dataset(&a.dataset)?;
    let data_digest = sha256_hex(&read(&a.dataset)?);
    let vocab = dataset_vocabulary(&preset, &records)?;
    let mut cfg = preset.train.clone();
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let (model, report) = train(&records, &vocab, &cfg)?;
    let mut run = Run::open(root, "train", &format!("{}-{}-seed{}", file_stem(&a.dataset), preset.name, cfg.seed))?;
    let ck = Checkpoint {
        model,
        vocabulary: Some(vocab),
        train_config: Some(cfg.clone()),
    };
    let ck_path = run.write("model.ckpt", &checkpoint_bytes(&ck))?;
    run.write("report.json", (serde_json::to_string_pretty(&report).expect("json") + "\n").as_bytes())?;
    run.write("curves.tsv", curves_tsv(&report).as_bytes())?;
    let config = json!({ "preset": preset.name, "train": cfg, "dataset": a.dataset, "dataset_sha256": data_digest });
    let dir = run.finish("train", &config, json!({ "train": cfg.seed }))?;
    Ok(json!({ "summary": train_summary(&report), "checkpoint": ck_path, "dir": dir }))
}

fn cmd_dream(root: &Path, a: &DreamArgs) -> Result<Value> {
    let ck_bytes = read(&a.checkpoint)?;
    let ck = load_checkpoint(&a.checkpoint)?;
    let vocab = ck.vocabulary_for(None)?;
    let n_qubits = vocab.n_qubits();
    let mut texts: Vec<String> = a.circuit.clone();
    if let Some(p) = &a.circuit_file {
        let body = String::from_utf8_lossy(&read(p)?).into_owned();
        texts.extend(body.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from));
    }
    let mut circuits: Vec<Circuit> = texts
        .iter()
        .map(|t| parse_circuit_string(t, n_qubits))
        .collect::<std::result::Result<_, _>>()?;
    let mut data_digest = Value::Null;
    if let Some(n) = a.n {
        let path = a
            .dataset
            .as_ref()
            .ok_or_else(|| CliError::Usage("--n needs --dataset to sample from".into()))?;
        let records = load_dataset(path)?;
        data_digest = sha256_hex(&read(path)?).into();
        for i in sample_indices(records.len(), n, a.seed) {
            circuits.push(records[i].parse()?);
        }
    }
    if circuits.is_empty() {
        return Err(CliError::Usage("no starting circuits; give --n with --dataset, --circuit or --circuit-file".into()));
    }
    for (index, c) in circuits.iter().enumerate() {
        encode(c, &vocab).map_err(|source| CliError::Vocabulary { index, source })?;
    }
    let cfg = DreamConfig {
        target_energy: a.target,
        lr: a.lr,
        noise_lower: a.noise_lower,
        noise_upper: a.noise_upper,
        inner_steps: a.inner_steps,
        outer_epochs: a.outer_epochs,
        seed: a.seed,
        ..DreamConfig::default()
    };
    let vqe = a.vqe.config();
    let h = HamiltonianSpec::tfim(n_qubits, 1.0, 1.0);
    let traces = dream_cohort(&ck.model, &vocab, &circuits, &cfg, &h, &vqe)?;
    let metrics: Vec<DreamMetrics> = traces.iter().map(trace_metrics).collect::<std::result::Result<_, _>>()?;
    let cohort = cohort_metrics(&metrics, a.mf_energy)?;

    let mut run = Run::open(root, "dream", &format!("{}-seed{}", file_stem(&a.checkpoint), a.seed))?;
    let mut buf = Vec::new();
    write_traces(&mut buf, &traces)?;
    run.write("traces.jsonl", &buf)?;
    let mut tsv = String::from("run\tepoch\tenergy\tpredicted\tloss\taccepted\n");
    for (r, t) in traces.iter().enumerate() {
        for e in &t.epochs {
            tsv.push_str(&format!("{r}\t{}\t{}\t{}\t{}\t{}\n", e.epoch, e.energy, e.predicted, e.loss, e.accepted));
        }
    }
    run.write("energies.tsv", tsv.as_bytes())?;
    let digests = BTreeMap::from([
        ("checkpoint".to_string(), sha256_hex(&ck_bytes)),
        ("dream_config".to_string(), sha256_hex(serde_json::to_string(&cfg).expect("json").as_bytes())),
        ("model".to_string(), ck.model.checksum()),
    ]);
    let (name, format) = match a.format {
        Format::Lines => ("report.jsonl", ReportFormat::Lines),
        Format::Table => ("report.txt", ReportFormat::Table),
    };
    run.write(name, render_report(&metrics, &cohort, &digests, format).as_bytes())?;
    let config = json!({
        "checkpoint": a.checkpoint,
        "dataset": a.dataset,
        "dataset_sha256": data_digest,
        "n": a.n,
        "circuits": texts,
        "dream": cfg,
        "vqe": vqe,
        "mf_energy": a.mf_energy,
        "digests": digests,
    });
    let dir = run.finish("dream", &config, json!({ "dream": cfg.seed, "vqe": vqe.seed }))?;
    Ok(json!({ "cohort": cohort, "dir": dir }))
}

fn cmd_oracle(root: &Path, a: &OracleArgs) -> Result<Value> {
    let h = HamiltonianSpec {
        boundary: if a.periodic { Boundary::Periodic } else { Boundary::Open },
        ..HamiltonianSpec::tfim(a.n_qubits, a.j, a.g)
    };
    let e = exact_ground_energy(&h)?;
    let out = json!({ "n_qubits": h.n_qubits, "J": h.j, "g": h.g, "boundary": h.boundary, "ground_energy": e });
    let mut run = Run::open(root, "oracle", &format!("n{}-J{}-g{}-{}", h.n_qubits, h.j, h.g, h.boundary))?;
    run.write("oracle.json", (out.to_string() + "\n").as_bytes())?;
    run.finish("oracle", &to_value(&h), Value::Null)?;
    Ok(out)
}

fn cmd_expr(root: &Path, a: &ExprArgs) -> Result<Value> {
    let mut targets: Vec<(String, Circuit)> = Vec::new();
    if let Some(text) = &a.circuit {
        let n = a.n_qubits.ok_or_else(|| CliError::Usage("--circuit needs --n-qubits".into()))?;
        targets.push(("circuit".into(), parse_circuit_string(text, n)?));
    }
    if let Some(mode) = a.mf {
        let c = mean_field_circuit(mode, 6)?;
        targets.push((format!("mf-{}", serde_json::to_value(mode).expect("json").as_str().unwrap_or("mf")), c));
    }
    if let Some(m) = a.ansatz_moments {
        let n = a.n_qubits.ok_or_else(|| CliError::Usage("--ansatz-moments needs --n-qubits".into()))?;
        targets.push((format!("entangling-{m}"), entangling_ansatz(n, m)));
    }
    if let Some(p) = &a.trace {
        let f = fs::File::open(p).map_err(|e| io_err(p, e))?;
        for (i, t) in read_traces(BufReader::new(f))?.iter().enumerate() {
            let initial = parse_circuit_string(&t.initial().circuit, t.n_qubits)?;
            targets.push((format!("run{i}-initial"), initial));
            targets.push((format!("run{i}-final"), t.final_circuit()?));
        }
    }
    if targets.is_empty() {
        return Err(CliError::Usage("nothing to score; give --circuit, --mf, --ansatz-moments or --trace".into()));
    }
    let mut rows = Vec::new();
    for (label, c) in &targets {
        let s = expressibility(c, a.samples, a.bins, a.seed)?;
        rows.push(json!({
            "label": label,
            "circuit": c.serialize(),
            "kl_divergence": s.kl_divergence,
            "neg_log10_kl": s.neg_log10_kl,
            "samples": s.samples,
            "bins": s.bins,
            "degenerate": s.degenerate,
        }));
    }
    let mut run = Run::open(root, "expr", &format!("samples{}-bins{}-seed{}", a.samples, a.bins, a.seed))?;
    let body: String = rows.iter().map(|r| r.to_string() + "\n").collect();
    run.write("expressibility.jsonl", body.as_bytes())?;
    let config = json!({
        "circuit": a.circuit, "n_qubits": a.n_qubits, "mf": a.mf, "ansatz_moments": a.ansatz_moments,
        "trace": a.trace, "samples": a.samples, "bins": a.bins,
    });
    let dir = run.finish("expr", &config, json!({ "expr": a.seed }))?;
    Ok(json!({ "scores": rows, "dir": dir }))
}

fn cmd_sweep(root: &Path, a: &SweepArgs) -> Result<Value> {
    let preset = Preset::resolve(&a.preset)?;
    let records = load_dataset(&a.dataset)?;
    let vocab = dataset_vocabulary(&preset, &records)?;
    let mut grid = sweep_grid(&preset.train);
    if let Some(r) = &a.round {
        grid.retain(|p| &p.round == r);
        if grid.is_empty() {
            return Err(CliError::Usage(format!("unknown round `{r}`; use architecture, learning_rate, noise or loss")));
        }
    }
    let mut rows = Vec::new();
    for point in &grid {
        let cfg = TrainConfig {
            epochs: a.epochs.unwrap_or(point.train.epochs),
            ..point.train.clone()
        };
        let (_, report) = train(&records, &vocab, &cfg)?;
        let mut row = train_summary(&report);
        row["round"] = point.round.clone().into();
        row["label"] = point.label.clone().into();
        row["train_config_digest"] = cfg.digest().into();
        rows.push(row);
    }
    let mut run = Run::open(root, "sweep", &format!("{}-{}", file_stem(&a.dataset), preset.name))?;
    let body: String = rows.iter().map(|r| r.to_string() + "\n").collect();
    run.write("sweep.jsonl", body.as_bytes())?;
    let config = json!({ "preset": preset.name, "round": a.round, "epochs": a.epochs, "dataset": a.dataset, "grid": to_value(&grid) });
    let dir = run.finish("sweep", &config, json!({ "train": preset.train.seed }))?;
    Ok(json!({ "points": rows.len(), "dir": dir }))
}

fn run(cli: &Cli) -> Result<Value> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let root = cli
        .out
        .clone()
        .or_else(|| std::env::var_os("QDD_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("qdd-out"));
    match &cli.cmd {
        Cmd::Gen(a) => cmd_gen(&root, a),
        Cmd::Train(a) => cmd_train(&root, a),
        Cmd::Dream(a) => cmd_dream(&root, a),
        Cmd::Oracle(a) => cmd_oracle(&root, a),
        Cmd::Expr(a) => cmd_expr(&root, a),
        Cmd::Sweep(a) => cmd_sweep(&root, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("json"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": { "kind": e.kind(), "message": e.to_string() } }));
            ExitCode::FAILURE
        }
    }
}
