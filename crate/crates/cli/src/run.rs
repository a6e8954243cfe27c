//! Command-line surface: argument definitions and one function per
//! subcommand. Compute precision follows the checkpoint that a command
//! loads; commands that build a fresh model take it from the run config.

use crate::config::{Precision, RunConfig};
use crate::eval::{self, AdpStats, EvalReport};
use anyhow::{anyhow, bail, Context, Result};
use clap::{ArgGroup, Args, Parser, Subcommand};
use prefixforge_core::{
    baseline, export_netlist, graph_to_sequence, sequence_to_graph, BaselineKind,
    CoordinateSequence, SynthHook,
};
use prefixforge_model::{
    dump_attention, load_checkpoint, rollout_masked, save_checkpoint, unmasked_legal_rate,
    CheckpointHeader, LayerSelector, PolicyModel, Real, RolloutConfig,
};
use prefixforge_train::{
    finetune, gen_corpus, load_corpus, pretrain, DesignDb, DesignRecord, TrainState,
};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, Parser)]
#[command(
    name = "prefixforge",
    version,
    about = "Search the space of parallel-prefix adders with a learned policy"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print size, depth, and validity of the classic adder families
    Baselines(BaselinesArgs),
    /// Generate a random-walk design corpus as JSONL
    GenCorpus(GenCorpusArgs),
    /// Write a freshly initialized model checkpoint
    InitModel(InitModelArgs),
    /// Cross-entropy training on a corpus file
    Pretrain(PretrainArgs),
    /// Policy-gradient fine-tuning against the design database
    Finetune(FinetuneArgs),
    /// Sample complete designs from a checkpoint under the legality mask
    Sample(SampleArgs),
    /// Convert one design to a structural Verilog netlist
    ExportNetlist(ExportNetlistArgs),
    /// Dump post-softmax attention maps for one design
    AttentionDump(AttentionDumpArgs),
    /// Depth-limited size minima and Pareto front of a database
    EvalDb(EvalDbArgs),
    /// Measure how often unmasked sampling stays legal
    LegalRate(LegalRateArgs),
    /// Summary statistics and plot files for a finished run
    Report(ReportArgs),
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Baselines(args) => baselines_cmd(args),
        Command::GenCorpus(args) => gen_corpus_cmd(args),
        Command::InitModel(args) => init_model_cmd(args),
        Command::Pretrain(args) => pretrain_cmd(args),
        Command::Finetune(args) => finetune_cmd(args),
        Command::Sample(args) => sample_cmd(args),
        Command::ExportNetlist(args) => export_netlist_cmd(args),
        Command::AttentionDump(args) => attention_dump_cmd(args),
        Command::EvalDb(args) => eval_db_cmd(args),
        Command::LegalRate(args) => legal_rate_cmd(args),
        Command::Report(args) => report_cmd(args),
    }
}

fn load_run_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

/// Reads just the header line of a checkpoint, leaving the weight blob
/// untouched, so precision can be chosen before the full load.
fn peek_header(path: &Path) -> Result<CheckpointHeader> {
    let file = fs::File::open(path)
        .with_context(|| format!("opening checkpoint {}", path.display()))?;
    let mut line = String::new();
    BufReader::new(file)
        .read_line(&mut line)
        .with_context(|| format!("reading checkpoint {}", path.display()))?;
    serde_json::from_str(line.trim_end())
        .with_context(|| format!("parsing checkpoint header of {}", path.display()))
}

fn checkpoint_precision(path: &Path) -> Result<Precision> {
    let header = peek_header(path)?;
    Precision::from_str(&header.dtype)
        .map_err(|e| anyhow!("checkpoint {}: {e}", path.display()))
}

/// Reads one design from a file holding either a single JSON object or
/// JSONL (the first non-empty line is taken), so corpus and database lines
/// feed straight into the single-design commands.
fn load_sequence_file(path: &Path) -> Result<CoordinateSequence> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading design {}", path.display()))?;
    let line = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| anyhow!("design file {} is empty", path.display()))?;
    CoordinateSequence::from_json(line)
        .with_context(|| format!("parsing design {}", path.display()))
}

/// Writes a payload to stdout. A closed pipe (`prefixforge ... | head`) is
/// a normal way to stop reading, so it ends the process quietly instead of
/// panicking.
fn emit_stdout(content: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(content.as_bytes()).and_then(|()| out.flush()) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => std::process::exit(0),
        Err(e) => Err(e.into()),
    }
}

fn write_or_print(out: Option<&Path>, content: &str) -> Result<()> {
    match out {
        Some(path) => {
            fs::write(path, content).with_context(|| format!("writing {}", path.display()))?;
            println!("wrote {}", path.display());
            Ok(())
        }
        None => emit_stdout(content),
    }
}

#[derive(Debug, Args)]
pub struct BaselinesArgs {
    /// Adder width in bits
    #[arg(long, default_value_t = 16)]
    pub width: usize,
    /// Also write the CSV to this file
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn baselines_cmd(args: BaselinesArgs) -> Result<()> {
    let mut csv = String::from("name,width,size,depth,valid\n");
    for kind in BaselineKind::ALL {
        let graph = baseline(kind, args.width)?;
        let depth = graph.depth()?;
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            kind.name(),
            args.width,
            graph.size(),
            depth,
            graph.validate().is_valid(),
        ));
    }
    if let Some(path) = &args.out {
        fs::write(path, &csv).with_context(|| format!("writing {}", path.display()))?;
    }
    emit_stdout(&csv)
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    /// Adder width in bits
    #[arg(long)]
    pub width: usize,
    /// Number of sequences to generate
    #[arg(long)]
    pub count: usize,
    /// RNG seed; the same seed reproduces the same file byte for byte
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output JSONL path
    #[arg(long)]
    pub out: PathBuf,
}

fn gen_corpus_cmd(args: GenCorpusArgs) -> Result<()> {
    gen_corpus(args.width, args.count, args.seed, &args.out)
        .with_context(|| format!("generating corpus {}", args.out.display()))?;
    println!(
        "wrote {} width-{} sequences to {}",
        args.count,
        args.width,
        args.out.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct InitModelArgs {
    /// Run configuration TOML
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the configured width
    #[arg(long)]
    pub width: Option<usize>,
    /// Override the configured seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the configured precision (f32 or f64)
    #[arg(long, value_parser = Precision::from_str)]
    pub precision: Option<Precision>,
    /// Checkpoint path to write
    #[arg(long)]
    pub out: PathBuf,
}

fn init_model_cmd(args: InitModelArgs) -> Result<()> {
    let mut config = load_run_config(args.config.as_deref())?;
    if let Some(width) = args.width {
        config.width = width;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(precision) = args.precision {
        config.precision = precision;
    }
    match config.precision() {
        Precision::F32 => init_model_with::<f32>(&config, &args.out),
        Precision::F64 => init_model_with::<f64>(&config, &args.out),
    }
}

fn init_model_with<F: Real>(config: &RunConfig, out: &Path) -> Result<()> {
    let model: PolicyModel<F> = PolicyModel::new(config.model_config(), config.seed())?;
    save_checkpoint(
        out,
        model.config(),
        model.params(),
        serde_json::json!({ "phase": "init", "seed": config.seed() }),
    )?;
    println!(
        "wrote {} ({} parameters, max width {}, dtype {})",
        out.display(),
        model.params().param_count(),
        model.config().max_width,
        F::DTYPE,
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// Run configuration TOML
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Corpus JSONL produced by gen-corpus
    #[arg(long)]
    pub corpus: PathBuf,
    /// Directory for checkpoints and the training report
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Override the configured epoch count
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Override the configured learning rate
    #[arg(long)]
    pub lr: Option<f64>,
    /// Override the configured batch size
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Override the configured held-out count
    #[arg(long)]
    pub holdout: Option<usize>,
    /// Override the configured seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the configured precision (f32 or f64)
    #[arg(long, value_parser = Precision::from_str)]
    pub precision: Option<Precision>,
}

fn pretrain_cmd(args: PretrainArgs) -> Result<()> {
    let mut config = load_run_config(args.config.as_deref())?;
    if let Some(epochs) = args.epochs {
        config.pretrain.epochs = epochs;
    }
    if let Some(lr) = args.lr {
        config.pretrain.lr = lr;
    }
    if let Some(batch_size) = args.batch_size {
        config.pretrain.batch_size = batch_size;
    }
    if let Some(holdout) = args.holdout {
        config.pretrain.holdout = holdout;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(precision) = args.precision {
        config.precision = precision;
    }
    match config.precision() {
        Precision::F32 => pretrain_with::<f32>(&config, &args),
        Precision::F64 => pretrain_with::<f64>(&config, &args),
    }
}

fn pretrain_with<F: Real>(config: &RunConfig, args: &PretrainArgs) -> Result<()> {
    let corpus = load_corpus(&args.corpus)
        .with_context(|| format!("loading corpus {}", args.corpus.display()))?;
    let corpus_width = corpus
        .first()
        .ok_or_else(|| anyhow!("corpus {} is empty", args.corpus.display()))?
        .width();
    let model_config = {
        let mut mc = config.model_config();
        // The corpus fixes the data width; the model only needs capacity
        // for it, so a narrower configured width is widened rather than
        // rejected.
        if mc.max_width < corpus_width {
            mc.max_width = corpus_width;
        }
        mc
    };
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;

    let mut model: PolicyModel<F> = PolicyModel::new(model_config, config.seed())?;
    let mut pretrain_config = config.pretrain_config();
    pretrain_config.checkpoint_dir = Some(args.out_dir.clone());

    let report = pretrain(&mut model, &corpus, &pretrain_config)?;
    for epoch in &report.epochs {
        match epoch.holdout_loss {
            Some(h) => println!(
                "epoch {}: train loss {:.4}, held-out loss {:.4}",
                epoch.epoch, epoch.train_loss, h
            ),
            None => println!("epoch {}: train loss {:.4}", epoch.epoch, epoch.train_loss),
        }
    }
    println!(
        "unmasked legal rate: {}/{} ({:.1}%)",
        report.legal_rate.legal,
        report.legal_rate.samples,
        100.0 * report.legal_rate.rate
    );

    let model_path = args.out_dir.join("model.ckpt");
    save_checkpoint(
        &model_path,
        model.config(),
        model.params(),
        serde_json::json!({
            "phase": "pretrain",
            "epochs": pretrain_config.epochs,
            "width": report.width,
            "train_sequences": report.train_sequences,
        }),
    )?;
    let report_path = args.out_dir.join("pretrain-report.json");
    fs::write(&report_path, serde_json::to_string_pretty(&report)?)
        .with_context(|| format!("writing {}", report_path.display()))?;
    println!("wrote {} and {}", model_path.display(), report_path.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    /// Run configuration TOML
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Pre-trained model checkpoint (omit only with --ablate skip_pretrain)
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Directory for the database, history, report, and final checkpoint
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Design database path (default: <out-dir>/designs.jsonl)
    #[arg(long)]
    pub db: Option<PathBuf>,
    /// Override the configured iteration count
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Override the configured group size
    #[arg(long)]
    pub group_size: Option<usize>,
    /// Override the configured seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the configured KL weight
    #[arg(long)]
    pub beta: Option<f64>,
    /// Override the configured sampling temperature
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Override the configured objective form (prob or logprob)
    #[arg(long, value_parser = prefixforge_train::ObjectiveForm::from_str)]
    pub objective: Option<prefixforge_train::ObjectiveForm>,
    /// Override the configured reward mode (proxy or external)
    #[arg(long, value_parser = prefixforge_train::RewardMode::from_str)]
    pub reward_mode: Option<prefixforge_train::RewardMode>,
    /// Disable a component: rope_off, skip_pretrain, kl_off, retrieval_off
    #[arg(long = "ablate", value_name = "FLAG")]
    pub ablate: Vec<String>,
    /// Insert the four classic baselines into the database before training
    #[arg(long)]
    pub seed_baselines: bool,
}

fn apply_ablations(config: &mut RunConfig, flags: &[String]) -> Result<()> {
    for flag in flags {
        match flag.as_str() {
            "rope_off" => config.ablate.rope_off = true,
            "skip_pretrain" => config.ablate.skip_pretrain = true,
            "kl_off" => config.ablate.kl_off = true,
            "retrieval_off" => config.ablate.retrieval_off = true,
            other => bail!(
                "unknown ablation {other:?} (expected rope_off, skip_pretrain, kl_off, or retrieval_off)"
            ),
        }
    }
    Ok(())
}

fn finetune_cmd(args: FinetuneArgs) -> Result<()> {
    let mut config = load_run_config(args.config.as_deref())?;
    apply_ablations(&mut config, &args.ablate)?;
    if let Some(iterations) = args.iterations {
        config.finetune.iterations = iterations;
    }
    if let Some(group_size) = args.group_size {
        config.finetune.group_size = group_size;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(beta) = args.beta {
        config.finetune.beta = beta;
    }
    if let Some(temperature) = args.temperature {
        config.finetune.temperature = temperature;
    }
    if let Some(objective) = args.objective {
        config.finetune.objective = objective;
    }
    if let Some(reward_mode) = args.reward_mode {
        config.finetune.reward_mode = reward_mode;
    }

    let precision = if config.ablate.skip_pretrain {
        config.precision()
    } else {
        let checkpoint = args.checkpoint.as_deref().ok_or_else(|| {
            anyhow!(
                "missing --checkpoint: fine-tuning starts from a pre-trained model \
                 (pass --ablate skip_pretrain to start from a random initialization)"
            )
        })?;
        checkpoint_precision(checkpoint)?
    };
    match precision {
        Precision::F32 => finetune_with::<f32>(&config, &args),
        Precision::F64 => finetune_with::<f64>(&config, &args),
    }
}

fn finetune_with<F: Real>(config: &RunConfig, args: &FinetuneArgs) -> Result<()> {
    let policy: PolicyModel<F> = if config.ablate.skip_pretrain {
        PolicyModel::new(config.model_config(), config.seed())?
    } else {
        let path = args.checkpoint.as_deref().expect("presence checked by caller");
        let (model, _) =
            load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
        model
    };
    if config.width() > policy.config().max_width {
        bail!(
            "run width {} exceeds the model's maximum width {}",
            config.width(),
            policy.config().max_width
        );
    }

    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let db_path = args
        .db
        .clone()
        .unwrap_or_else(|| args.out_dir.join("designs.jsonl"));
    let db = DesignDb::open(&db_path)
        .with_context(|| format!("opening database {}", db_path.display()))?;

    let mut state = TrainState::new(policy, db, config.grpo_config())?;
    if let Some(hook) = SynthHook::from_env()? {
        state = state.with_hook(hook);
    }
    if args.seed_baselines {
        let seeds: Vec<CoordinateSequence> = BaselineKind::ALL
            .iter()
            .map(|&kind| Ok(graph_to_sequence(&baseline(kind, config.width())?)?))
            .collect::<Result<_>>()?;
        let added = state.seed_designs(&seeds)?;
        println!("seeded {added} baseline designs into {}", db_path.display());
    }

    let report = finetune(&mut state)?;

    let history_path = args.out_dir.join("history.csv");
    fs::write(&history_path, report.history_csv())?;
    let report_path = args.out_dir.join("report.json");
    fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;
    let pareto_path = args.out_dir.join("pareto.csv");
    fs::write(&pareto_path, eval::pareto_csv(&report.pareto))?;

    let iterations = state.iteration();
    let (model, db) = state.into_parts();
    let ckpt_path = args.out_dir.join("policy.ckpt");
    save_checkpoint(
        &ckpt_path,
        model.config(),
        model.params(),
        serde_json::json!({
            "phase": "finetune",
            "iterations": iterations,
            "width": config.width(),
        }),
    )?;

    match &report.best {
        Some(best) => println!(
            "{} unique designs; best size {} depth {} (ADP {:.0})",
            db.len(),
            best.size,
            best.depth,
            best.adp()
        ),
        None => println!("{} unique designs", db.len()),
    }
    println!(
        "wrote {}, {}, {}, {}",
        history_path.display(),
        report_path.display(),
        pareto_path.display(),
        ckpt_path.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Model checkpoint to sample from
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Adder width in bits
    #[arg(long)]
    pub width: usize,
    /// Number of designs to sample
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    /// RNG seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Softmax temperature
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    /// Output JSONL path (default: stdout)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn sample_cmd(args: SampleArgs) -> Result<()> {
    match checkpoint_precision(&args.checkpoint)? {
        Precision::F32 => sample_with::<f32>(&args),
        Precision::F64 => sample_with::<f64>(&args),
    }
}

fn sample_with<F: Real>(args: &SampleArgs) -> Result<()> {
    let (model, _): (PolicyModel<F>, _) = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let mut rollout = RolloutConfig::new(args.width, args.count, args.seed);
    rollout.temperature = args.temperature;
    let seqs = rollout_masked(&model, &rollout)?;
    let mut lines = String::new();
    for seq in &seqs {
        lines.push_str(&seq.to_json());
        lines.push('\n');
    }
    match &args.out {
        Some(path) => {
            fs::write(path, &lines).with_context(|| format!("writing {}", path.display()))?;
            println!("wrote {} designs to {}", seqs.len(), path.display());
            Ok(())
        }
        None => emit_stdout(&lines),
    }
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["sequence", "baseline"])))]
pub struct ExportNetlistArgs {
    /// Design file (JSON or JSONL; the first design is taken)
    #[arg(long)]
    pub sequence: Option<PathBuf>,
    /// Baseline family: ripple, sklansky, kogge_stone, or brent_kung
    #[arg(long, value_parser = BaselineKind::from_str)]
    pub baseline: Option<BaselineKind>,
    /// Width for --baseline (ignored with --sequence)
    #[arg(long, default_value_t = 16)]
    pub width: usize,
    /// Verilog module name
    #[arg(long, default_value = "prefix_adder")]
    pub module: String,
    /// Output path (default: stdout)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn export_netlist_cmd(args: ExportNetlistArgs) -> Result<()> {
    let graph = match (&args.sequence, args.baseline) {
        (Some(path), None) => sequence_to_graph(&load_sequence_file(path)?)?,
        (None, Some(kind)) => baseline(kind, args.width)?,
        _ => unreachable!("clap enforces exactly one source"),
    };
    let netlist = export_netlist(&graph, &args.module)?;
    write_or_print(args.out.as_deref(), &netlist)
}

#[derive(Debug, Args)]
pub struct AttentionDumpArgs {
    /// Model checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Design file to run through the model
    #[arg(long)]
    pub sequence: PathBuf,
    /// Layers to dump: "all", a stack name, or stack:index, comma-separated
    #[arg(long, default_value = "all")]
    pub layers: String,
    /// Output JSON path (default: stdout)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn attention_dump_cmd(args: AttentionDumpArgs) -> Result<()> {
    match checkpoint_precision(&args.checkpoint)? {
        Precision::F32 => attention_dump_with::<f32>(&args),
        Precision::F64 => attention_dump_with::<f64>(&args),
    }
}

fn attention_dump_with<F: Real>(args: &AttentionDumpArgs) -> Result<()> {
    let (model, _): (PolicyModel<F>, _) = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let seq = load_sequence_file(&args.sequence)?;
    let selector = LayerSelector::from_str(&args.layers)?;
    let dump = dump_attention(&model, &seq, &selector)?;
    let json = serde_json::to_string_pretty(&dump)?;
    write_or_print(args.out.as_deref(), &(json + "\n"))
}

#[derive(Debug, Args)]
pub struct EvalDbArgs {
    /// Design database (JSONL)
    #[arg(long)]
    pub db: PathBuf,
    /// Width to evaluate
    #[arg(long)]
    pub width: usize,
    /// Comma-separated depth limits (default: tightest feasible, +1, +2)
    #[arg(long)]
    pub limits: Option<String>,
    /// Write <prefix>.json, <prefix>-limits.csv, and <prefix>-pareto.csv
    #[arg(long)]
    pub out_prefix: Option<PathBuf>,
}

fn parse_limits(spec: &str) -> Result<Vec<usize>> {
    spec.split(',')
        .map(|item| {
            item.trim()
                .parse::<usize>()
                .with_context(|| format!("bad depth limit {item:?}"))
        })
        .collect()
}

fn open_existing_db(path: &Path) -> Result<DesignDb> {
    if !path.exists() {
        bail!("database {} does not exist", path.display());
    }
    DesignDb::open(path).with_context(|| format!("opening database {}", path.display()))
}

fn eval_db_cmd(args: EvalDbArgs) -> Result<()> {
    let db = open_existing_db(&args.db)?;
    let records: Vec<DesignRecord> = db
        .records()
        .iter()
        .filter(|r| r.sequence.width() == args.width)
        .cloned()
        .collect();
    let limits = match &args.limits {
        Some(spec) => parse_limits(spec)?,
        None => eval::default_limits(args.width),
    };
    let report = EvalReport::build(&records, args.width, &limits);

    println!(
        "width {}: {} designs, tightest feasible depth {}",
        report.width, report.total_designs, report.min_depth
    );
    println!("depth convention: {}", eval::DEPTH_CONVENTION);
    for row in &report.rows {
        let reference = row
            .published_best
            .map_or(String::new(), |b| format!(" (published best {b})"));
        match row.min_size {
            Some(size) => println!("  depth <= {}: min size {}{}", row.limit, size, reference),
            None => println!("  depth <= {}: no design stored{}", row.limit, reference),
        }
    }
    println!("pareto front: {} points", report.pareto.len());

    if let Some(prefix) = &args.out_prefix {
        let json_path = prefix.with_extension("json");
        fs::write(&json_path, serde_json::to_string_pretty(&report)?)?;
        let limits_path = with_suffix(prefix, "-limits.csv");
        fs::write(&limits_path, report.limits_csv())?;
        let pareto_path = with_suffix(prefix, "-pareto.csv");
        fs::write(&pareto_path, eval::pareto_csv(&report.pareto))?;
        println!(
            "wrote {}, {}, {}",
            json_path.display(),
            limits_path.display(),
            pareto_path.display()
        );
    }
    Ok(())
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.push_str(suffix);
    prefix.with_file_name(name)
}

#[derive(Debug, Args)]
pub struct LegalRateArgs {
    /// Model checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Adder width in bits
    #[arg(long)]
    pub width: usize,
    /// Number of unmasked rollouts to attempt
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    /// RNG seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Softmax temperature
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
}

fn legal_rate_cmd(args: LegalRateArgs) -> Result<()> {
    match checkpoint_precision(&args.checkpoint)? {
        Precision::F32 => legal_rate_with::<f32>(&args),
        Precision::F64 => legal_rate_with::<f64>(&args),
    }
}

fn legal_rate_with<F: Real>(args: &LegalRateArgs) -> Result<()> {
    let (model, _): (PolicyModel<F>, _) = load_checkpoint(&args.checkpoint)
        .with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let mut rollout = RolloutConfig::new(args.width, args.samples, args.seed);
    rollout.temperature = args.temperature;
    let report = unmasked_legal_rate(&model, &rollout)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Design database (JSONL)
    #[arg(long)]
    pub db: PathBuf,
    /// Restrict to one width (default: all records)
    #[arg(long)]
    pub width: Option<usize>,
    /// history.csv from a fine-tuning run, copied in as reward_curve.csv
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Directory for the plot files and statistics
    #[arg(long)]
    pub out_dir: PathBuf,
}

fn report_cmd(args: ReportArgs) -> Result<()> {
    let db = open_existing_db(&args.db)?;
    let records: Vec<DesignRecord> = db
        .records()
        .iter()
        .filter(|r| args.width.map_or(true, |w| r.sequence.width() == w))
        .cloned()
        .collect();
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;

    let stats = AdpStats::compute(&records);
    let front: Vec<DesignRecord> = prefixforge_train::pareto_of(&records)
        .into_iter()
        .cloned()
        .collect();

    fs::write(args.out_dir.join("adp.csv"), eval::adp_csv(&records))?;
    fs::write(args.out_dir.join("pareto.csv"), eval::pareto_csv(&front))?;
    let stats_path = args.out_dir.join("stats.json");
    let mut file = fs::File::create(&stats_path)?;
    serde_json::to_writer_pretty(&mut file, &stats)?;
    file.write_all(b"\n")?;

    if let Some(history) = &args.history {
        let dest = args.out_dir.join("reward_curve.csv");
        fs::copy(history, &dest)
            .with_context(|| format!("copying {} to {}", history.display(), dest.display()))?;
    }

    match &stats {
        Some(s) => println!(
            "{} designs ({} unique): ADP min {:.0}, mean {:.1}, stddev {:.1}",
            s.count, s.unique, s.min, s.mean, s.stddev
        ),
        None => println!("database holds no matching designs"),
    }
    println!("wrote plot files to {}", args.out_dir.display());
    Ok(())
}
