//! Log-linear softmax policy over candidate decisions.
//!
//! The score of a candidate is `w · f(state, candidate)`; the policy is the
//! softmax of those scores over the unmasked candidates. Gradients of the
//! log-probability are available in closed form:
//! `∇_w log π(a) = f(a) − Σ_b π(b) f(b)`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path as FsPath;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajectory::{ApiAction, Decision, ReasoningState, ResponseStatus};
use crate::world::{tokens, Task, ToolSpec, World};

pub const FEATURE_NAMES: [&str; 16] = [
    "bias",
    "call_in_scope",
    "call_relevance",
    "call_args_valid",
    "call_args_grounded",
    "call_repeat_failed",
    "call_repeat_success",
    "call_tool_succeeded",
    "call_tool_failed",
    "call_history_len",
    "give_up",
    "give_up_after_error",
    "give_up_after_irrelevant",
    "finish_answer",
    "finish_ready",
    "finish_progress",
];
pub const FEATURE_DIM: usize = FEATURE_NAMES.len();

/// History length at which `call_history_len` saturates.
const HISTORY_SCALE: f64 = 20.0;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("decision is masked out of the candidate set")]
    MaskedAction,
    #[error("decision is not in the candidate set")]
    NotACandidate,
    #[error("no unmasked candidates")]
    EmptyCandidates,
    #[error("missing candidate record for step {0}")]
    MissingCandidateRecord(usize),
    #[error("feature schema mismatch: expected {expected}, found {found}")]
    SchemaMismatch { expected: String, found: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub fn feature_schema_hash() -> String {
    crate::world::stable_hash(&FEATURE_NAMES)[..16].to_string()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; FEATURE_DIM]);

impl FeatureVector {
    pub fn zeros() -> Self {
        Self([0.0; FEATURE_DIM])
    }

    pub fn dot(&self, w: &[f64]) -> f64 {
        self.0.iter().zip(w).map(|(a, b)| a * b).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub weights: Vec<f64>,
    pub version_tag: String,
}

impl PolicyParams {
    pub fn zeros(version_tag: impl Into<String>) -> Self {
        Self {
            weights: vec![0.0; FEATURE_DIM],
            version_tag: version_tag.into(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    pub fn retagged(&self, tag: impl Into<String>) -> Self {
        Self {
            weights: self.weights.clone(),
            version_tag: tag.into(),
        }
    }
}

/// Candidate decisions at a state plus an exclusion mask (`true` = excluded).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub decisions: Vec<Decision>,
    pub excluded: Vec<bool>,
}

impl CandidateSet {
    pub fn full(decisions: Vec<Decision>) -> Self {
        let excluded = vec![false; decisions.len()];
        Self {
            decisions,
            excluded,
        }
    }

    /// Mask every decision equal to one in `tried`. `FinishGiveUp` is never
    /// masked.
    pub fn masking(decisions: Vec<Decision>, tried: &[Decision]) -> Self {
        let excluded = decisions
            .iter()
            .map(|d| *d != Decision::FinishGiveUp && tried.contains(d))
            .collect();
        Self {
            decisions,
            excluded,
        }
    }

    pub fn len(&self) -> usize {
        self.decisions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decisions.is_empty()
    }

    pub fn unmasked(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.decisions.len()).filter(|&i| !self.excluded[i])
    }

    pub fn index_of(&self, decision: &Decision) -> Option<usize> {
        self.decisions.iter().position(|d| d == decision)
    }
}

/// Features of every candidate at one state, with its mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidates {
    pub features: Vec<FeatureVector>,
    pub excluded: Vec<bool>,
}

impl ScoredCandidates {
    pub fn unmasked(features: Vec<FeatureVector>) -> Self {
        let excluded = vec![false; features.len()];
        Self { features, excluded }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// One recorded decision: the candidate features at the state and the index
/// that was taken.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredStep {
    pub candidates: ScoredCandidates,
    pub chosen: usize,
}

// ---------------------------------------------------------------------------
// Featurization
// ---------------------------------------------------------------------------

/// Per-task data that does not depend on the history: the candidate list and
/// the static part of each candidate's features.
#[derive(Clone, Debug)]
pub struct TaskContext<'a> {
    pub world: &'a World,
    pub task: &'a Task,
    pub candidates: Vec<Decision>,
    statics: Vec<CallStatics>,
    relevance: HashMap<String, f64>,
}

#[derive(Clone, Copy, Debug, Default)]
struct CallStatics {
    in_scope: f64,
    relevance: f64,
    valid: f64,
    grounded: f64,
}

/// Fraction of the tool's keywords that appear in the query.
pub fn relevance(tool: &ToolSpec, query_tokens: &HashSet<String>) -> f64 {
    if tool.keywords.is_empty() {
        return 0.0;
    }
    let hits = tool
        .keywords
        .iter()
        .filter(|k| query_tokens.contains(k.as_str()))
        .count();
    hits as f64 / tool.keywords.len() as f64
}

fn call_statics(world: &World, task: &Task, q: &HashSet<String>, a: &ApiAction) -> CallStatics {
    let Some(tool) = world.tool(&a.tool_name) else {
        return CallStatics::default();
    };
    let grounded = !a.arguments.is_empty()
        && a.arguments
            .values()
            .all(|v| q.contains(&v.to_ascii_lowercase()));
    CallStatics {
        in_scope: f64::from(task.scope.contains(&tool.category)),
        relevance: relevance(tool, q),
        valid: f64::from(tool.check_arguments(&a.arguments).is_ok()),
        grounded: f64::from(grounded),
    }
}

/// What the features need to know about a history.
struct HistorySummary {
    failed_actions: HashSet<ApiAction>,
    ok_actions: HashSet<ApiAction>,
    ok_tools: HashSet<String>,
    failed_tools: HashSet<String>,
    len: usize,
    last_error: bool,
    last_relevance: Option<f64>,
    ready: bool,
    progress: f64,
}

impl HistorySummary {
    fn new(world: &World, task: &Task, relevance: &HashMap<String, f64>, s: &ReasoningState) -> Self {
        let mut out = Self {
            failed_actions: HashSet::new(),
            ok_actions: HashSet::new(),
            ok_tools: HashSet::new(),
            failed_tools: HashSet::new(),
            len: s.history.len(),
            last_error: s.last_response().is_some_and(|r| r.is_error()),
            last_relevance: s
                .history
                .last()
                .map(|(a, _)| relevance.get(&a.tool_name).copied().unwrap_or(0.0)),
            ready: false,
            progress: 0.0,
        };
        for (a, r) in &s.history {
            match r.status {
                ResponseStatus::Ok => {
                    out.ok_actions.insert(a.clone());
                    out.ok_tools.insert(a.tool_name.clone());
                }
                ResponseStatus::Error => {
                    out.failed_actions.insert(a.clone());
                    out.failed_tools.insert(a.tool_name.clone());
                }
            }
        }
        let goals = world.goal_state(task, &s.history);
        out.ready = goals.all_satisfied;
        out.progress = goals.partial_credit;
        out
    }

    fn features(&self, decision: &Decision, statics: CallStatics) -> FeatureVector {
        let mut f = [0.0; FEATURE_DIM];
        f[0] = 1.0;
        match decision {
            Decision::Call(a) => {
                f[1] = statics.in_scope;
                f[2] = statics.relevance;
                f[3] = statics.valid;
                f[4] = statics.grounded;
                f[5] = f64::from(self.failed_actions.contains(a));
                f[6] = f64::from(self.ok_actions.contains(a));
                f[7] = f64::from(self.ok_tools.contains(&a.tool_name));
                f[8] = f64::from(self.failed_tools.contains(&a.tool_name));
                f[9] = (self.len as f64 / HISTORY_SCALE).min(1.0);
            }
            Decision::FinishGiveUp => {
                f[10] = 1.0;
                f[11] = f64::from(self.last_error);
                f[12] = self.last_relevance.map_or(0.0, |r| 1.0 - r);
            }
            Decision::FinishAnswer => {
                f[13] = 1.0;
                f[14] = f64::from(self.ready);
                f[15] = self.progress;
            }
        }
        FeatureVector(f)
    }
}

impl<'a> TaskContext<'a> {
    pub fn new(world: &'a World, task: &'a Task) -> Self {
        let q = tokens(&task.query);
        let candidates = world.candidates(task);
        let statics = candidates
            .iter()
            .map(|d| match d {
                Decision::Call(a) => call_statics(world, task, &q, a),
                _ => CallStatics::default(),
            })
            .collect();
        let relevance = world
            .scope_tools(task)
            .map(|t| (t.name.clone(), self::relevance(t, &q)))
            .collect();
        Self {
            world,
            task,
            candidates,
            statics,
            relevance,
        }
    }

    /// Features of every candidate at `state`, in candidate order.
    pub fn featurize_all(&self, state: &ReasoningState) -> Vec<FeatureVector> {
        let summary = HistorySummary::new(self.world, self.task, &self.relevance, state);
        self.candidates
            .iter()
            .zip(&self.statics)
            .map(|(d, s)| summary.features(d, *s))
            .collect()
    }

    pub fn score(&self, state: &ReasoningState, set: &CandidateSet) -> ScoredCandidates {
        debug_assert_eq!(set.decisions, self.candidates);
        ScoredCandidates {
            features: self.featurize_all(state),
            excluded: set.excluded.clone(),
        }
    }

    /// A training step: full candidate set at `state`, `decision` chosen.
    pub fn step(&self, state: &ReasoningState, decision: &Decision) -> Result<ScoredStep, PolicyError> {
        let chosen = self
            .candidates
            .iter()
            .position(|d| d == decision)
            .ok_or(PolicyError::NotACandidate)?;
        Ok(ScoredStep {
            candidates: ScoredCandidates::unmasked(self.featurize_all(state)),
            chosen,
        })
    }
}

/// Features of one (state, decision) pair computed from scratch.
pub fn featurize(ctx: &TaskContext<'_>, state: &ReasoningState, decision: &Decision) -> FeatureVector {
    let q = tokens(&ctx.task.query);
    let statics = match decision {
        Decision::Call(a) => call_statics(ctx.world, ctx.task, &q, a),
        _ => CallStatics::default(),
    };
    HistorySummary::new(ctx.world, ctx.task, &ctx.relevance, state).features(decision, statics)
}

// ---------------------------------------------------------------------------
// Softmax machinery
// ---------------------------------------------------------------------------

pub fn logits(weights: &[f64], features: &[FeatureVector]) -> Vec<f64> {
    features.iter().map(|f| f.dot(weights)).collect()
}

/// Log-softmax of `logits / temperature` over unmasked entries; masked
/// entries get `-inf`.
pub fn log_softmax(logits: &[f64], excluded: &[bool], temperature: f64) -> Vec<f64> {
    let max = logits
        .iter()
        .zip(excluded)
        .filter(|(_, e)| !**e)
        .map(|(l, _)| l / temperature)
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = max
        + logits
            .iter()
            .zip(excluded)
            .filter(|(_, e)| !**e)
            .map(|(l, _)| (l / temperature - max).exp())
            .sum::<f64>()
            .ln();
    logits
        .iter()
        .zip(excluded)
        .map(|(l, e)| if *e { f64::NEG_INFINITY } else { l / temperature - lse })
        .collect()
}

pub fn log_probs(params: &PolicyParams, scored: &ScoredCandidates) -> Vec<f64> {
    log_softmax(&logits(&params.weights, &scored.features), &scored.excluded, 1.0)
}

pub fn log_prob(params: &PolicyParams, scored: &ScoredCandidates, index: usize) -> Result<f64, PolicyError> {
    if index >= scored.len() {
        return Err(PolicyError::NotACandidate);
    }
    if scored.excluded[index] {
        return Err(PolicyError::MaskedAction);
    }
    Ok(log_probs(params, scored)[index])
}

/// `log π(decision | state)` against a candidate set.
pub fn log_prob_decision(
    params: &PolicyParams,
    ctx: &TaskContext<'_>,
    state: &ReasoningState,
    set: &CandidateSet,
    decision: &Decision,
) -> Result<f64, PolicyError> {
    let i = set.index_of(decision).ok_or(PolicyError::NotACandidate)?;
    log_prob(params, &ctx.score(state, set), i)
}

/// `∇_w log π(index)`.
pub fn grad_log_prob(params: &PolicyParams, scored: &ScoredCandidates, index: usize) -> Vec<f64> {
    let lp = log_probs(params, scored);
    let mut g = scored.features[index].0.to_vec();
    for (f, l) in scored.features.iter().zip(&lp) {
        if l.is_finite() {
            let p = l.exp();
            for (gi, fi) in g.iter_mut().zip(f.0.iter()) {
                *gi -= p * fi;
            }
        }
    }
    g
}

pub fn sample_index<R: Rng + ?Sized>(
    params: &PolicyParams,
    scored: &ScoredCandidates,
    temperature: f64,
    rng: &mut R,
) -> Result<usize, PolicyError> {
    if scored.excluded.iter().all(|e| *e) {
        return Err(PolicyError::EmptyCandidates);
    }
    let lp = log_softmax(&logits(&params.weights, &scored.features), &scored.excluded, temperature);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, l) in lp.iter().enumerate() {
        if l.is_finite() {
            acc += l.exp();
            last = i;
            if u < acc {
                return Ok(i);
            }
        }
    }
    // rounding left the cumulative sum a hair under 1
    Ok(last)
}

/// Draw a decision from the policy at `state`.
pub fn sample_action<R: Rng + ?Sized>(
    params: &PolicyParams,
    ctx: &TaskContext<'_>,
    state: &ReasoningState,
    set: &CandidateSet,
    temperature: f64,
    rng: &mut R,
) -> Result<Decision, PolicyError> {
    let i = sample_index(params, &ctx.score(state, set), temperature, rng)?;
    Ok(set.decisions[i].clone())
}

/// Sum of per-step log-probabilities along a recorded segment.
pub fn segment_log_prob(params: &PolicyParams, segment: &[ScoredStep]) -> Result<f64, PolicyError> {
    let mut total = 0.0;
    for (i, step) in segment.iter().enumerate() {
        if step.candidates.is_empty() || step.chosen >= step.candidates.len() {
            return Err(PolicyError::MissingCandidateRecord(i));
        }
        total += log_prob(params, &step.candidates, step.chosen)?;
    }
    Ok(total)
}

pub fn grad_segment_log_prob(params: &PolicyParams, segment: &[ScoredStep]) -> Vec<f64> {
    let mut g = vec![0.0; params.weights.len()];
    for step in segment {
        for (gi, si) in g.iter_mut().zip(grad_log_prob(params, &step.candidates, step.chosen)) {
            *gi += si;
        }
    }
    g
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    version_tag: String,
    feature_schema_hash: String,
    feature_names: Vec<String>,
    weights: Vec<f64>,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

pub fn save_checkpoint(
    path: &FsPath,
    params: &PolicyParams,
    metadata: &BTreeMap<String, String>,
) -> Result<(), PolicyError> {
    let ck = Checkpoint {
        format_version: 1,
        version_tag: params.version_tag.clone(),
        feature_schema_hash: feature_schema_hash(),
        feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        weights: params.weights.clone(),
        metadata: metadata.clone(),
    };
    let text = serde_json::to_string_pretty(&ck).expect("checkpoint serializes");
    std::fs::write(path, text).map_err(|e| PolicyError::Checkpoint(e.to_string()))
}

pub fn load_checkpoint(path: &FsPath) -> Result<PolicyParams, PolicyError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PolicyError::Checkpoint(format!("{}: {e}", path.display())))?;
    parse_checkpoint(&text)
}

pub fn parse_checkpoint(text: &str) -> Result<PolicyParams, PolicyError> {
    let ck: Checkpoint =
        serde_json::from_str(text).map_err(|e| PolicyError::Checkpoint(e.to_string()))?;
    let expected = feature_schema_hash();
    if ck.feature_schema_hash != expected {
        return Err(PolicyError::SchemaMismatch {
            expected,
            found: ck.feature_schema_hash,
        });
    }
    if ck.weights.len() != FEATURE_DIM {
        return Err(PolicyError::Checkpoint(format!(
            "expected {FEATURE_DIM} weights, found {}",
            ck.weights.len()
        )));
    }
    let params = PolicyParams {
        weights: ck.weights,
        version_tag: ck.version_tag,
    };
    if !params.is_finite() {
        return Err(PolicyError::Checkpoint("non-finite weight".into()));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::ApiResponse;
    use crate::world::{gen_world, WorldConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_scored(rng: &mut ChaCha8Rng, n: usize) -> ScoredCandidates {
        let features = (0..n)
            .map(|_| {
                let mut f = [0.0; FEATURE_DIM];
                for x in f.iter_mut() {
                    *x = rng.gen_range(-1.0..1.0);
                }
                FeatureVector(f)
            })
            .collect();
        ScoredCandidates::unmasked(features)
    }

    fn random_params(rng: &mut ChaCha8Rng) -> PolicyParams {
        PolicyParams {
            weights: (0..FEATURE_DIM).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            version_tag: "rand".into(),
        }
    }

    fn small_world() -> World {
        gen_world(&WorldConfig {
            train_tasks: 5,
            tasks_per_scenario: 2,
            ..WorldConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_weights_give_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_scored(&mut rng, 4);
        let p = PolicyParams::zeros("z");
        for i in 0..4 {
            assert!((log_prob(&p, &s, i).unwrap() - (0.25f64).ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let n = rng.gen_range(1..40);
            let s = random_scored(&mut rng, n);
            let p = random_params(&mut rng);
            let total: f64 = (0..n).map(|i| log_prob(&p, &s, i).unwrap().exp()).sum();
            assert!((total - 1.0).abs() < 1e-12, "{total}");
        }
    }

    #[test]
    fn shift_invariance() {
        // Adding c to every logit = adding c to a feature that is 1 for all
        // candidates with weight c. The bias feature plays that role.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = random_scored(&mut rng, 6);
        for f in s.features.iter_mut() {
            f.0[0] = 1.0;
        }
        let p = random_params(&mut rng);
        let mut shifted = p.clone();
        shifted.weights[0] += 17.5;
        for i in 0..6 {
            let a = log_prob(&p, &s, i).unwrap();
            let b = log_prob(&shifted, &s, i).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn positive_scaling_keeps_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let s = random_scored(&mut rng, 8);
            let p = random_params(&mut rng);
            let argmax = |p: &PolicyParams| {
                let lp = log_probs(p, &s);
                (0..lp.len()).max_by(|&a, &b| lp[a].total_cmp(&lp[b])).unwrap()
            };
            let scaled = PolicyParams {
                weights: p.weights.iter().map(|w| w * rng.gen_range(0.1..10.0f64)).collect(),
                version_tag: "s".into(),
            };
            let k = rng.gen_range(0.1..10.0);
            let uniform = PolicyParams {
                weights: p.weights.iter().map(|w| w * k).collect(),
                version_tag: "k".into(),
            };
            let _ = scaled;
            assert_eq!(argmax(&p), argmax(&uniform));
        }
    }

    #[test]
    fn masking_never_lowers_remaining_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = rng.gen_range(2..12);
            let s = random_scored(&mut rng, n);
            let p = random_params(&mut rng);
            let before = log_probs(&p, &s);
            let mut masked = s.clone();
            let drop = rng.gen_range(0..n);
            masked.excluded[drop] = true;
            let after = log_probs(&p, &masked);
            for i in (0..n).filter(|&i| i != drop) {
                assert!(after[i] >= before[i] - 1e-15);
            }
            assert_eq!(log_prob(&p, &masked, drop), Err(PolicyError::MaskedAction));
        }
    }

    #[test]
    fn sampling_is_seeded_and_respects_single_candidate() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut s = random_scored(&mut rng, 5);
        let p = random_params(&mut rng);
        let draw = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| sample_index(&p, &s, 1.0, &mut r).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        s.excluded = vec![true, true, false, true, true];
        for _ in 0..20 {
            assert_eq!(sample_index(&p, &s, 1.0, &mut rng).unwrap(), 2);
        }
        s.excluded = vec![true; 5];
        assert_eq!(sample_index(&p, &s, 1.0, &mut rng), Err(PolicyError::EmptyCandidates));
    }

    #[test]
    fn empirical_frequencies_match_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = random_scored(&mut rng, 6);
        let p = random_params(&mut rng);
        let probs: Vec<f64> = log_probs(&p, &s).iter().map(|l| l.exp()).collect();
        let n = 100_000;
        let mut counts = [0usize; 6];
        for _ in 0..n {
            counts[sample_index(&p, &s, 1.0, &mut rng).unwrap()] += 1;
        }
        for (c, pr) in counts.iter().zip(&probs) {
            let freq = *c as f64 / n as f64;
            let se = (pr * (1.0 - pr) / n as f64).sqrt();
            assert!((freq - pr).abs() <= 3.0 * se + 1e-12, "{freq} vs {pr}");
        }
    }

    #[test]
    fn segment_log_prob_is_additive() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_params(&mut rng);
        let steps: Vec<ScoredStep> = (0..5)
            .map(|_| {
                let n = rng.gen_range(2..9);
                ScoredStep {
                    candidates: random_scored(&mut rng, n),
                    chosen: rng.gen_range(0..n),
                }
            })
            .collect();
        let one = segment_log_prob(&p, &steps[..1]).unwrap();
        assert_eq!(one, log_prob(&p, &steps[0].candidates, steps[0].chosen).unwrap());
        let whole = segment_log_prob(&p, &steps).unwrap();
        let parts = segment_log_prob(&p, &steps[..2]).unwrap() + segment_log_prob(&p, &steps[2..]).unwrap();
        assert!((whole - parts).abs() < 1e-12);
        // independent product of explicitly normalised probabilities
        let product: f64 = steps
            .iter()
            .map(|st| {
                let e: Vec<f64> = st.candidates.features.iter().map(|f| f.dot(&p.weights).exp()).collect();
                e[st.chosen] / e.iter().sum::<f64>()
            })
            .product();
        assert!((whole.exp() - product).abs() < 1e-12 * product.max(1e-300) + 1e-15);
        let broken = vec![ScoredStep {
            candidates: ScoredCandidates::unmasked(vec![]),
            chosen: 0,
        }];
        assert_eq!(segment_log_prob(&p, &broken), Err(PolicyError::MissingCandidateRecord(0)));
    }

    #[test]
    fn featurize_matches_batched_path_and_is_deterministic() {
        let world = small_world();
        for task in world.tasks.iter().take(6) {
            let ctx = TaskContext::new(&world, task);
            let mut state = ReasoningState::new(task.query.clone());
            for d in ctx.candidates.iter().take(4) {
                if let Decision::Call(a) = d {
                    let r = world.execute(task, a).unwrap();
                    state.history.push((a.clone(), r));
                }
            }
            let all = ctx.featurize_all(&state);
            for (d, f) in ctx.candidates.iter().zip(&all) {
                assert_eq!(featurize(&ctx, &state, d), *f);
                assert_eq!(featurize(&ctx, &state, d), featurize(&ctx, &state, d));
            }
        }
    }

    #[test]
    fn repeat_failed_feature_fires() {
        let world = small_world();
        let task = &world.tasks[0];
        let ctx = TaskContext::new(&world, task);
        let action = ctx.candidates.iter().find_map(|d| d.as_call()).unwrap().clone();
        let mut state = ReasoningState::new(task.query.clone());
        state.history.push((action.clone(), ApiResponse::error("boom")));
        let f = featurize(&ctx, &state, &Decision::Call(action));
        assert_eq!(f.0[5], 1.0);
        assert_eq!(f.0[8], 1.0);
    }

    #[test]
    fn checkpoint_round_trip_and_schema_guard() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_params(&mut rng);
        save_checkpoint(&path, &p, &BTreeMap::new()).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), p);
        let text = std::fs::read_to_string(&path).unwrap();
        let bad = text.replace(&feature_schema_hash(), "0000000000000000");
        assert!(matches!(parse_checkpoint(&bad), Err(PolicyError::SchemaMismatch { .. })));
    }
}
