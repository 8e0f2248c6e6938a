//! Run configuration and the in-memory experiment pipeline:
//! world → expert trees → datasets → SFT → DPO → rollouts → reports.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dfsdt::{batch_rollout, task_seed, DfsdtError, LinearPolicy, OraclePolicy, RolloutResult, SearchBudget, SearchPolicy};
use crate::eval::{EvalError, KeywordFilter, MetricsReport, OracleJudge, ReportInputs};
use crate::forge::{build_corpus, resample_sft_set, ApiDocs, CorpusStats, ForgeError, ForgedPair, Granularity, SftExample};
use crate::policy::{PolicyParams, FEATURE_DIM};
use crate::trainer::{dpo_examples, sft_steps, train_dpo, train_sft, TrainConfig, TrainError, TrainLogRecord};
use crate::trajectory::{success_paths, DecisionTree};
use crate::world::{stable_hash, Task, World, WorldConfig, WorldError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Search(#[from] DfsdtError),
    #[error(transparent)]
    Forge(#[from] ForgeError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub world: PathBuf,
    pub trees: PathBuf,
    pub preferences: PathBuf,
    pub sft: PathBuf,
    pub forge_stats: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            world: "out/world.json".into(),
            trees: "out/trees.jsonl".into(),
            preferences: "out/preferences.jsonl".into(),
            sft: "out/sft.jsonl".into(),
            forge_stats: "out/forge_stats.json".into(),
            checkpoints: "out/checkpoints".into(),
            reports: "out/reports".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForgeConfig {
    pub granularity: Granularity,
    /// Probability that the simulated expert deviates from the ground truth.
    pub expert_noise: f64,
    /// Share of success trees whose paths become SFT instructions.
    pub sft_instruction_fraction: f64,
    /// Preference-pair target relative to the number of SFT instructions;
    /// `None` keeps every extracted pair.
    pub pairs_per_sft_instruction: Option<f64>,
}

impl Default for ForgeConfig {
    fn default() -> Self {
        Self {
            granularity: Granularity::StepWise,
            expert_noise: 0.3,
            sft_instruction_fraction: 1.0,
            pairs_per_sft_instruction: Some(8202.0 / 11142.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub seeds: Vec<u64>,
    pub temperature: f64,
    pub keywords: Vec<String>,
    /// Count only Pass endings in avg_steps (GiveUp endings count otherwise).
    pub pass_only_steps: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3, 4, 5],
            temperature: 1.0,
            keywords: KeywordFilter::default().keywords().to_vec(),
            pass_only_steps: false,
        }
    }
}

impl EvalConfig {
    pub fn filter(&self) -> KeywordFilter {
        KeywordFilter::new(self.keywords.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for annotation, dataset sampling and training.
    pub seed: u64,
    pub paths: PathsConfig,
    pub world: WorldConfig,
    pub train: TrainConfig,
    pub budget: SearchBudget,
    pub forge: ForgeConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            paths: PathsConfig::default(),
            world: WorldConfig::default(),
            train: TrainConfig::desk_scale(),
            budget: SearchBudget::default(),
            forge: ForgeConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.world.validate()?;
        self.train.validate()?;
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.forge.expert_noise) {
            return bad("forge.expert_noise must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.forge.sft_instruction_fraction) {
            return bad("forge.sft_instruction_fraction must lie in [0, 1]");
        }
        if self.forge.pairs_per_sft_instruction.is_some_and(|r| r.is_nan() || r <= 0.0) {
            return bad("forge.pairs_per_sft_instruction must be positive");
        }
        if self.budget.max_actions == 0 || self.budget.max_children_per_node == 0 {
            return bad("budget limits must be positive");
        }
        if self.eval.temperature.is_nan() || self.eval.temperature <= 0.0 {
            return bad("eval.temperature must be positive");
        }
        if self.eval.seeds.is_empty() {
            return bad("eval.seeds must not be empty");
        }
        Ok(())
    }

    /// Hash of everything except file locations.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.paths = PathsConfig::default();
        stable_hash(&[&serde_json::to_string(&c).expect("config serializes")])[..16].to_string()
    }
}

/// Documentation for every tool in a task's scope.
pub fn task_docs(world: &World, task: &Task) -> ApiDocs {
    world.scope_tools(task).map(|t| (t.name.clone(), t.doc())).collect()
}

pub fn tree_docs(world: &World, tree: &DecisionTree) -> ApiDocs {
    tree.id
        .as_deref()
        .and_then(|id| world.task(id).ok())
        .map(|t| task_docs(world, t))
        .unwrap_or_default()
}

fn rollouts(
    policy: &dyn SearchPolicy,
    world: &World,
    tasks: &[&Task],
    budget: &SearchBudget,
    seed: u64,
) -> Result<Vec<RolloutResult>, DfsdtError> {
    let seeds: Vec<u64> = tasks.iter().map(|t| task_seed(seed, &t.id)).collect();
    batch_rollout(policy, world, tasks, budget, &seeds)
}

/// Expert trees for every training task, in task order.
pub fn annotate(world: &World, noise: f64, budget: &SearchBudget, seed: u64) -> Result<Vec<DecisionTree>, PipelineError> {
    let tasks: Vec<&Task> = world.train_tasks().collect();
    let results = rollouts(&OraclePolicy { noise }, world, &tasks, budget, seed)?;
    Ok(results.into_iter().map(|r| r.tree).collect())
}

pub struct Datasets {
    pub sft: Vec<SftExample>,
    pub pairs: Vec<ForgedPair>,
    pub stats: CorpusStats,
    pub sft_instructions: usize,
}

pub fn forge_datasets(
    world: &World,
    trees: &[DecisionTree],
    forge: &ForgeConfig,
    seed: u64,
) -> Result<Datasets, PipelineError> {
    let with_success: Vec<DecisionTree> = trees.iter().filter(|t| !success_paths(t).is_empty()).cloned().collect();
    let n_sft = (forge.sft_instruction_fraction * with_success.len() as f64).round() as usize;
    let sft = resample_sft_set(&with_success, n_sft, seed)?;
    let max_pairs = forge
        .pairs_per_sft_instruction
        .map(|r| (r * n_sft as f64).ceil() as usize);
    let (pairs, stats) = build_corpus(trees, forge.granularity, |t| tree_docs(world, t), max_pairs, seed)?;
    Ok(Datasets { sft, pairs, stats, sft_instructions: n_sft })
}

pub struct Trained {
    pub sft: PolicyParams,
    pub dpo: PolicyParams,
    pub sft_log: Vec<TrainLogRecord>,
    pub dpo_log: Vec<TrainLogRecord>,
}

pub fn train_sft_stage(world: &World, data: &Datasets, cfg: &TrainConfig) -> Result<(PolicyParams, Vec<TrainLogRecord>), PipelineError> {
    let steps = sft_steps(world, &data.sft)?;
    Ok(train_sft(&PolicyParams::zeros("init"), &steps, cfg)?)
}

pub fn train_dpo_stage(
    world: &World,
    sft: &PolicyParams,
    pairs: &[ForgedPair],
    cfg: &TrainConfig,
) -> Result<(PolicyParams, Vec<TrainLogRecord>), PipelineError> {
    let raw: Vec<_> = pairs.iter().map(|p| p.pair.clone()).collect();
    let examples = dpo_examples(world, &raw)?;
    Ok(train_dpo(sft, &examples, cfg)?)
}

pub fn train_both(world: &World, data: &Datasets, cfg: &TrainConfig) -> Result<Trained, PipelineError> {
    let (sft, sft_log) = train_sft_stage(world, data, cfg)?;
    let (dpo, dpo_log) = train_dpo_stage(world, &sft, &data.pairs, cfg)?;
    Ok(Trained { sft, dpo, sft_log, dpo_log })
}

/// All test-scenario tasks, in world order.
pub fn eval_tasks(world: &World) -> Vec<&Task> {
    world.tasks.iter().filter(|t| t.scenario.is_some()).collect()
}

pub fn rollout_policy(
    world: &World,
    params: &PolicyParams,
    budget: &SearchBudget,
    temperature: f64,
    seed: u64,
) -> Result<Vec<RolloutResult>, PipelineError> {
    if params.weights.len() != FEATURE_DIM {
        return Err(DfsdtError::SchemaMismatch.into());
    }
    let policy = LinearPolicy::new(params.clone(), temperature);
    Ok(rollouts(&policy, world, &eval_tasks(world), budget, seed)?)
}

/// Rollouts of the simulated expert on the test tasks; the default
/// win-rate reference.
pub fn rollout_expert(world: &World, noise: f64, budget: &SearchBudget, seed: u64) -> Result<Vec<RolloutResult>, PipelineError> {
    Ok(rollouts(&OraclePolicy { noise }, world, &eval_tasks(world), budget, seed)?)
}

pub fn report(
    cfg: &RunConfig,
    world: &World,
    model: &str,
    seed: u64,
    results: &[RolloutResult],
    reference: Option<&[RolloutResult]>,
) -> Result<MetricsReport, PipelineError> {
    let filter = cfg.eval.filter();
    let judge = OracleJudge { world };
    let inputs = ReportInputs {
        world,
        filter: &filter,
        judge: Some(&judge),
        pass_only_steps: cfg.eval.pass_only_steps,
    };
    Ok(MetricsReport::compute(model, cfg.hash(), seed, results, reference, &inputs)?)
}

/// One seed of the full comparison, kept in memory.
pub struct SeedRun {
    pub seed: u64,
    pub trees: Vec<DecisionTree>,
    pub datasets: Datasets,
    pub trained: Trained,
    pub sft_report: MetricsReport,
    pub dpo_report: MetricsReport,
}

pub fn run_seed(cfg: &RunConfig, world: &World, seed: u64) -> Result<SeedRun, PipelineError> {
    let trees = annotate(world, cfg.forge.expert_noise, &cfg.budget, seed)?;
    let datasets = forge_datasets(world, &trees, &cfg.forge, seed)?;
    let train_cfg = TrainConfig { seed, ..cfg.train.clone() };
    let trained = train_both(world, &datasets, &train_cfg)?;
    let expert = rollout_expert(world, cfg.forge.expert_noise, &cfg.budget, seed)?;
    let sft_r = rollout_policy(world, &trained.sft, &cfg.budget, cfg.eval.temperature, seed)?;
    let dpo_r = rollout_policy(world, &trained.dpo, &cfg.budget, cfg.eval.temperature, seed)?;
    Ok(SeedRun {
        seed,
        sft_report: report(cfg, world, "sft", seed, &sft_r, Some(&expert))?,
        dpo_report: report(cfg, world, "sft+dpo", seed, &dpo_r, Some(&expert))?,
        trees,
        datasets,
        trained,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_validation() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        let partial = RunConfig::from_toml("seed = 9\n[world]\nseed = 3\n").unwrap();
        assert_eq!(partial.world.tools_per_category, WorldConfig::default().tools_per_category);
        assert!(matches!(RunConfig::from_toml("[train]\nbeta = 0.0\n"), Err(PipelineError::Train(_))));
        assert!(matches!(RunConfig::from_toml("bogus = 1\n"), Err(PipelineError::Config(_))));
    }

    #[test]
    fn hash_ignores_paths() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.paths.world = "elsewhere.json".into();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
