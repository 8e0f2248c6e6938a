use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde_json::{json, Value};

use toolpref::dfsdt::RolloutResult;
use toolpref::eval::{aggregate, MetricsReport};
use toolpref::forge::{read_pairs, read_sft, write_pairs, write_sft, Granularity};
use toolpref::pipeline::{
    annotate, forge_datasets, report, rollout_expert, rollout_policy, task_docs, RunConfig,
};
use toolpref::policy::{load_checkpoint, save_checkpoint, PolicyError, PolicyParams};
use toolpref::trainer::{dpo_examples, sft_steps, train_dpo, train_sft, TrainConfig, TrainLogRecord};
use toolpref::trajectory::{read_corpus, write_corpus};
use toolpref::world::{gen_world, World};

#[derive(Parser)]
#[command(name = "toolpref", version, about = "Tool-use preference training on a synthetic tool world")]
struct Cli {
    /// TOML run configuration. Built-in defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config value, e.g. `--set train.beta=1.0`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the resolved configuration and its hash.
    ShowConfig,
    /// Generate the synthetic tool world.
    GenWorld,
    /// Run the simulated expert over the training tasks and store its trees.
    Annotate,
    /// Extract preference pairs and the SFT set from the annotated trees.
    Forge {
        #[arg(long, value_enum)]
        granularity: Option<GranularityArg>,
    },
    /// Train the policy. `dpo` needs an SFT checkpoint from an earlier run.
    Train {
        #[arg(value_enum)]
        stage: StageArg,
    },
    /// Roll out a checkpoint (or the expert) on the test tasks.
    Rollout {
        /// Policy checkpoint; the simulated expert is used when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate checkpoints over the configured seeds.
    Eval {
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        /// Win-rate reference: `expert`, `none` or a checkpoint path.
        #[arg(long, default_value = "expert")]
        reference: String,
        /// Comma-separated seeds; defaults to eval.seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Exit with status 3 when a checkpoint's mean pass rate is lower.
        #[arg(long)]
        min_pass_rate: Option<f64>,
    },
    /// Print tables for stored evaluation reports.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum GranularityArg {
    StepWise,
    PathWise,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum StageArg {
    Sft,
    Dpo,
    Both,
}

/// Failures that map to dedicated exit codes.
#[derive(Debug)]
enum Exit {
    Validation(String),
    Threshold(String),
}

impl fmt::Display for Exit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Exit::Validation(m) => write!(f, "invalid input: {m}"),
            Exit::Threshold(m) => write!(f, "threshold not met: {m}"),
        }
    }
}

impl std::error::Error for Exit {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Exit::Validation(msg.into()).into()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Exit>() {
                Some(Exit::Validation(_)) => ExitCode::from(2),
                Some(Exit::Threshold(_)) => ExitCode::from(3),
                None => ExitCode::FAILURE,
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let mut cfg = load_config(cli.config.as_deref(), &cli.overrides)?;
    match cli.command {
        Command::ShowConfig => {
            println!("# config hash: {}", cfg.hash());
            print!("{}", cfg.to_toml());
            Ok(())
        }
        Command::GenWorld => cmd_gen_world(&cfg),
        Command::Annotate => cmd_annotate(&cfg),
        Command::Forge { granularity } => {
            if let Some(g) = granularity {
                cfg.forge.granularity = match g {
                    GranularityArg::StepWise => Granularity::StepWise,
                    GranularityArg::PathWise => Granularity::PathWise,
                };
            }
            cmd_forge(&cfg)
        }
        Command::Train { stage } => {
            if stage != StageArg::Dpo {
                cmd_train_sft(&cfg)?;
            }
            if stage != StageArg::Sft {
                cmd_train_dpo(&cfg)?;
            }
            Ok(())
        }
        Command::Rollout { checkpoint, seed, out } => cmd_rollout(&cfg, checkpoint.as_deref(), seed, &out),
        Command::Eval { checkpoints, reference, seeds, min_pass_rate } => {
            if !seeds.is_empty() {
                cfg.eval.seeds = seeds;
            }
            cmd_eval(&cfg, &checkpoints, &reference, min_pass_rate)
        }
        Command::Report { inputs } => cmd_report(&inputs),
    }
}

// ---------------------------------------------------------------------------
// config

fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let text = match path {
        Some(p) => fs::read_to_string(p).map_err(|e| invalid(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut doc: toml::Table = toml::from_str(&text).map_err(|e| invalid(format!("config: {e}")))?;
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let merged = toml::to_string(&doc).expect("table serializes");
    RunConfig::from_toml(&merged).map_err(|e| invalid(e.to_string()))
}

/// `a.b.c=value`; the value is read as TOML and falls back to a string.
fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| invalid(format!("override `{spec}` is not KEY=VALUE")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut table = doc;
    for p in parents {
        table = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| invalid(format!("override `{key}`: `{p}` is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

// ---------------------------------------------------------------------------
// artifacts

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn open(path: &Path, produced_by: &str) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| invalid(format!("{}: {e} (run `toolpref {produced_by}` first)", path.display())))
}

/// Sidecar recording which config and seed produced a line-delimited artifact.
fn write_meta(artifact: &Path, cfg: &RunConfig, seed: u64, extra: Value) -> Result<()> {
    let mut name = artifact.as_os_str().to_owned();
    name.push(".meta.json");
    let meta = json!({
        "artifact": artifact.display().to_string(),
        "config_hash": cfg.hash(),
        "seed": seed,
        "details": extra,
    });
    let mut w = create(Path::new(&name))?;
    writeln!(w, "{}", serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

fn load_world(cfg: &RunConfig) -> Result<World> {
    let path = &cfg.paths.world;
    let text = fs::read_to_string(path)
        .map_err(|e| invalid(format!("{}: {e} (run `toolpref gen-world` first)", path.display())))?;
    let world = World::from_json(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    if world.config != cfg.world {
        return Err(invalid(format!(
            "{} was generated from a different world config; rerun gen-world",
            path.display()
        )));
    }
    Ok(world)
}

fn checkpoint_path(cfg: &RunConfig, stage: &str) -> PathBuf {
    cfg.paths.checkpoints.join(format!("{stage}.json"))
}

fn read_checkpoint(path: &Path) -> Result<PolicyParams> {
    load_checkpoint(path).map_err(|e| match e {
        PolicyError::Checkpoint(_) | PolicyError::SchemaMismatch { .. } => invalid(e.to_string()),
        other => other.into(),
    })
}

fn write_checkpoint(cfg: &RunConfig, stage: &str, params: &PolicyParams) -> Result<PathBuf> {
    let path = checkpoint_path(cfg, stage);
    fs::create_dir_all(&cfg.paths.checkpoints)?;
    let meta = BTreeMap::from([
        ("stage".to_string(), stage.to_string()),
        ("config_hash".to_string(), cfg.hash()),
        ("seed".to_string(), cfg.seed.to_string()),
    ]);
    save_checkpoint(&path, params, &meta)?;
    info!("wrote {}", path.display());
    Ok(path)
}

fn write_log(cfg: &RunConfig, stage: &str, log: &[TrainLogRecord]) -> Result<()> {
    let path = cfg.paths.checkpoints.join(format!("{stage}_log.jsonl"));
    let mut w = create(&path)?;
    for rec in log {
        let mut v = serde_json::to_value(rec)?;
        v["config_hash"] = json!(cfg.hash());
        v["seed"] = json!(cfg.seed);
        writeln!(w, "{v}")?;
    }
    w.flush()?;
    Ok(())
}

fn train_cfg(cfg: &RunConfig) -> TrainConfig {
    TrainConfig { seed: cfg.seed, ..cfg.train.clone() }
}

// ---------------------------------------------------------------------------
// commands

fn cmd_gen_world(cfg: &RunConfig) -> Result<()> {
    let world = gen_world(&cfg.world).map_err(|e| invalid(e.to_string()))?;
    let mut w = create(&cfg.paths.world)?;
    w.write_all(world.to_json().as_bytes())?;
    w.flush()?;
    info!(
        "wrote {} ({} tools, {} tasks)",
        cfg.paths.world.display(),
        world.tools.len(),
        world.tasks.len()
    );
    Ok(())
}

fn cmd_annotate(cfg: &RunConfig) -> Result<()> {
    let world = load_world(cfg)?;
    let trees = annotate(&world, cfg.forge.expert_noise, &cfg.budget, cfg.seed)?;
    let mut w = create(&cfg.paths.trees)?;
    write_corpus(&mut w, &trees)?;
    w.flush()?;
    write_meta(&cfg.paths.trees, cfg, cfg.seed, json!({ "trees": trees.len() }))?;
    info!("wrote {} trees to {}", trees.len(), cfg.paths.trees.display());
    Ok(())
}

fn cmd_forge(cfg: &RunConfig) -> Result<()> {
    let world = load_world(cfg)?;
    let trees = read_corpus(open(&cfg.paths.trees, "annotate")?, &cfg.eval.filter())
        .map_err(|e| invalid(format!("{}: {e}", cfg.paths.trees.display())))?;
    let data = forge_datasets(&world, &trees, &cfg.forge, cfg.seed)?;

    let mut w = create(&cfg.paths.preferences)?;
    write_pairs(&mut w, &data.pairs)?;
    w.flush()?;
    write_meta(&cfg.paths.preferences, cfg, cfg.seed, json!({ "pairs": data.pairs.len() }))?;

    let docs_for = |id: &str| world.task(id).map(|t| task_docs(&world, t)).unwrap_or_default();
    let mut w = create(&cfg.paths.sft)?;
    write_sft(&mut w, &data.sft, docs_for)?;
    w.flush()?;
    write_meta(&cfg.paths.sft, cfg, cfg.seed, json!({ "examples": data.sft.len() }))?;

    let mut w = create(&cfg.paths.forge_stats)?;
    let stats = json!({
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "sft_instructions": data.sft_instructions,
        "sft_examples": data.sft.len(),
        "stats": data.stats,
    });
    writeln!(w, "{}", serde_json::to_string_pretty(&stats)?)?;
    w.flush()?;
    info!(
        "{} {:?} pairs from {} trees, {} SFT examples",
        data.pairs.len(),
        cfg.forge.granularity,
        data.stats.trees_selected,
        data.sft.len()
    );
    Ok(())
}

fn cmd_train_sft(cfg: &RunConfig) -> Result<()> {
    let world = load_world(cfg)?;
    let examples = read_sft(open(&cfg.paths.sft, "forge")?)
        .map_err(|e| invalid(format!("{}: {e}", cfg.paths.sft.display())))?;
    let steps = sft_steps(&world, &examples)?;
    let (params, log) = train_sft(&PolicyParams::zeros("init"), &steps, &train_cfg(cfg))?;
    if let Some(last) = log.last() {
        info!("sft: {} examples, final loss {:.4}", steps.len(), last.loss);
    }
    write_checkpoint(cfg, "sft", &params)?;
    write_log(cfg, "sft", &log)
}

fn cmd_train_dpo(cfg: &RunConfig) -> Result<()> {
    let world = load_world(cfg)?;
    let sft_path = checkpoint_path(cfg, "sft");
    if !sft_path.exists() {
        return Err(invalid(format!(
            "no SFT checkpoint at {} (run `toolpref train sft` first)",
            sft_path.display()
        )));
    }
    let sft = read_checkpoint(&sft_path)?;
    let pairs = read_pairs(open(&cfg.paths.preferences, "forge")?)
        .map_err(|e| invalid(format!("{}: {e}", cfg.paths.preferences.display())))?;
    let raw: Vec<_> = pairs.into_iter().map(|p| p.pair).collect();
    let examples = dpo_examples(&world, &raw)?;
    let (params, log) = train_dpo(&sft, &examples, &train_cfg(cfg))?;
    if let Some(first) = log.first() {
        info!("dpo: {} pairs, first batch loss {:.6}", examples.len(), first.loss);
    }
    let reference = PolicyParams { version_tag: "ref".into(), ..sft };
    write_checkpoint(cfg, "ref", &reference)?;
    write_checkpoint(cfg, "dpo", &params)?;
    write_log(cfg, "dpo", &log)
}

fn cmd_rollout(cfg: &RunConfig, checkpoint: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let world = load_world(cfg)?;
    let seed = seed.unwrap_or(cfg.seed);
    let (results, model) = match checkpoint {
        Some(p) => (
            rollout_policy(&world, &read_checkpoint(p)?, &cfg.budget, cfg.eval.temperature, seed)?,
            p.display().to_string(),
        ),
        None => (rollout_expert(&world, cfg.forge.expert_noise, &cfg.budget, seed)?, "expert".into()),
    };
    let mut w = create(out)?;
    for r in &results {
        writeln!(w, "{}", serde_json::to_string(r)?)?;
    }
    w.flush()?;
    write_meta(out, cfg, seed, json!({ "model": model, "rollouts": results.len() }))?;
    info!("wrote {} rollouts to {}", results.len(), out.display());
    Ok(())
}

fn model_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn cmd_eval(cfg: &RunConfig, checkpoints: &[PathBuf], reference: &str, min_pass_rate: Option<f64>) -> Result<()> {
    let world = load_world(cfg)?;
    let models: Vec<(String, PolicyParams)> = checkpoints
        .iter()
        .map(|p| Ok((model_name(p), read_checkpoint(p)?)))
        .collect::<Result<_>>()?;
    let reference_params = match reference {
        "expert" | "none" => None,
        path => Some(read_checkpoint(Path::new(path))?),
    };
    fs::create_dir_all(&cfg.paths.reports)?;

    let mut per_model: Vec<Vec<MetricsReport>> = vec![Vec::new(); models.len()];
    for &seed in &cfg.eval.seeds {
        let reference_results: Option<Vec<RolloutResult>> = match (reference, &reference_params) {
            ("none", _) => None,
            (_, Some(p)) => Some(rollout_policy(&world, p, &cfg.budget, cfg.eval.temperature, seed)?),
            _ => Some(rollout_expert(&world, cfg.forge.expert_noise, &cfg.budget, seed)?),
        };
        for ((name, params), reports) in models.iter().zip(&mut per_model) {
            let results = rollout_policy(&world, params, &cfg.budget, cfg.eval.temperature, seed)?;
            let r = report(cfg, &world, name, seed, &results, reference_results.as_deref())?;
            info!("{name} seed {seed}: pass rate {:.4}", r.average().pass_rate);
            reports.push(r);
        }
    }

    let mut shortfalls = Vec::new();
    for ((name, _), reports) in models.iter().zip(&per_model) {
        let path = cfg.paths.reports.join(format!("{name}.jsonl"));
        let mut w = create(&path)?;
        for r in reports {
            writeln!(w, "{}", serde_json::to_string(r)?)?;
        }
        w.flush()?;
        let agg = aggregate(reports)?;
        let agg_path = cfg.paths.reports.join(format!("{name}.aggregate.json"));
        fs::write(&agg_path, serde_json::to_string_pretty(&agg)?)?;
        println!("{}", agg.render_table());

        let mean = agg.rows.iter().find(|r| r.scenario == "Avg").map(|r| r.pass_rate.mean);
        if let (Some(min), Some(mean)) = (min_pass_rate, mean) {
            if mean < min {
                shortfalls.push(format!("{name}: mean pass rate {mean:.4} < {min}"));
            }
        }
    }
    if !shortfalls.is_empty() {
        return Err(Exit::Threshold(shortfalls.join("; ")).into());
    }
    Ok(())
}

fn cmd_report(inputs: &[PathBuf]) -> Result<()> {
    for path in inputs {
        let reader = BufReader::new(File::open(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?);
        let mut reports = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r: MetricsReport = serde_json::from_str(&line)
                .map_err(|e| invalid(format!("{}:{}: {e}", path.display(), i + 1)))?;
            reports.push(r);
        }
        if reports.is_empty() {
            warn!("{} holds no reports", path.display());
            continue;
        }
        for r in &reports {
            println!("{}", r.render_table());
        }
        if reports.len() > 1 {
            println!("{}", aggregate(&reports)?.render_table());
        }
    }
    Ok(())
}
