//! Depth-first search decision-tree inference.
//!
//! At each frontier node the policy picks one unmasked candidate. A call is
//! executed and becomes the new frontier; `FinishAnswer` ends the search;
//! `FinishGiveUp` abandons the current node and backtracks. Siblings already
//! tried at a node are masked when it is expanded again. Every decision,
//! `Finish` calls included, spends one unit of the action budget.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{
    feature_schema_hash, sample_index, CandidateSet, PolicyError, PolicyParams, TaskContext,
    FEATURE_DIM,
};
use crate::trajectory::{ApiResponse, Decision, DecisionTree, NodeId, ReasoningState, TreeError};
use crate::world::{stable_hash, Task, World, WorldError};

pub const FINISH_RESPONSE: &str = "successfully giving the final answer";

#[derive(Debug, Error, PartialEq)]
pub enum DfsdtError {
    #[error("policy feature schema does not match the world featurizer")]
    SchemaMismatch,
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// Where the search resumes after a give-up.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BacktrackMode {
    /// Deepest ancestor that can still take another child.
    #[default]
    DeepestOpen,
    /// Parent of the abandoned node only; the search ends if it is full.
    ParentOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchBudget {
    pub max_actions: usize,
    pub max_children_per_node: usize,
    pub backtrack: BacktrackMode,
}

impl Default for SearchBudget {
    fn default() -> Self {
        Self {
            max_actions: 200,
            max_children_per_node: 3,
            backtrack: BacktrackMode::DeepestOpen,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    GiveUp,
    BudgetExhausted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    pub task_id: String,
    pub seed: u64,
    pub tree: DecisionTree,
    pub outcome: Outcome,
    pub final_answer: Option<String>,
    pub actions_used: usize,
    pub success_path_steps: Option<usize>,
    /// Candidate decisions offered at every expansion of this task.
    pub candidates: Vec<Decision>,
    /// For each non-root node: candidate indices masked when it was chosen.
    pub masked_at_choice: BTreeMap<NodeId, Vec<usize>>,
}

/// Anything that can pick a candidate during search.
pub trait SearchPolicy: Sync {
    /// Fails when the policy cannot score this featurizer's vectors.
    fn check_schema(&self) -> Result<(), DfsdtError> {
        Ok(())
    }

    fn choose(
        &self,
        ctx: &TaskContext<'_>,
        state: &ReasoningState,
        set: &CandidateSet,
        rng: &mut ChaCha8Rng,
    ) -> Result<usize, DfsdtError>;
}

/// Samples from the log-linear softmax policy.
#[derive(Clone, Debug)]
pub struct LinearPolicy {
    pub params: PolicyParams,
    pub temperature: f64,
    /// Schema hash the params were trained against.
    pub schema_hash: String,
}

impl LinearPolicy {
    pub fn new(params: PolicyParams, temperature: f64) -> Self {
        Self {
            params,
            temperature,
            schema_hash: feature_schema_hash(),
        }
    }
}

impl SearchPolicy for LinearPolicy {
    fn check_schema(&self) -> Result<(), DfsdtError> {
        if self.params.weights.len() != FEATURE_DIM || self.schema_hash != feature_schema_hash() {
            return Err(DfsdtError::SchemaMismatch);
        }
        Ok(())
    }

    fn choose(
        &self,
        ctx: &TaskContext<'_>,
        state: &ReasoningState,
        set: &CandidateSet,
        rng: &mut ChaCha8Rng,
    ) -> Result<usize, DfsdtError> {
        Ok(sample_index(
            &self.params,
            &ctx.score(state, set),
            self.temperature,
            rng,
        )?)
    }
}

/// Ground-truth annotator. With probability `noise` it takes a uniformly
/// random unmasked candidate other than its intended one.
///
/// The intended decision: give up right after a call that failed or did not
/// advance any sub-goal; otherwise call the first achievable, unsatisfied,
/// unblocked sub-goal that is not masked; finish once every achievable
/// sub-goal is done (if anything was achieved); give up otherwise.
#[derive(Clone, Copy, Debug)]
pub struct OraclePolicy {
    pub noise: f64,
}

impl OraclePolicy {
    pub fn intended(&self, ctx: &TaskContext<'_>, state: &ReasoningState, set: &CandidateSet) -> Decision {
        let (world, task) = (ctx.world, ctx.task);
        let goals = world.goal_state(task, &state.history);
        if let Some((_, last)) = state.history.last() {
            let before = world.goal_state(task, &state.history[..state.history.len() - 1]);
            if last.is_error() || goals.n_satisfied() <= before.n_satisfied() {
                return Decision::FinishGiveUp;
            }
        }
        let achievable = world.achievable(task);
        let mut pending = false;
        for (k, g) in task.required_calls.iter().enumerate() {
            if goals.satisfied[k] || !achievable[k] {
                continue;
            }
            pending = true;
            if g.after.is_some_and(|p| !goals.satisfied[p]) {
                continue;
            }
            let call = Decision::Call(crate::trajectory::ApiAction {
                tool_name: g.tool.clone(),
                arguments: g.arguments.clone(),
            });
            if set.index_of(&call).is_some_and(|i| !set.excluded[i]) {
                return call;
            }
        }
        if !pending && goals.n_satisfied() > 0 {
            Decision::FinishAnswer
        } else {
            Decision::FinishGiveUp
        }
    }
}

impl SearchPolicy for OraclePolicy {
    fn choose(
        &self,
        ctx: &TaskContext<'_>,
        state: &ReasoningState,
        set: &CandidateSet,
        rng: &mut ChaCha8Rng,
    ) -> Result<usize, DfsdtError> {
        let intended = self.intended(ctx, state, set);
        let best = set
            .index_of(&intended)
            .filter(|&i| !set.excluded[i])
            .or_else(|| set.index_of(&Decision::FinishGiveUp))
            .ok_or(PolicyError::EmptyCandidates)?;
        if self.noise > 0.0 && rng.gen_bool(self.noise.min(1.0)) {
            let others: Vec<usize> = set.unmasked().filter(|&i| i != best).collect();
            if !others.is_empty() {
                return Ok(others[rng.gen_range(0..others.len())]);
            }
        }
        Ok(best)
    }
}

fn backtrack_target(tree: &DecisionTree, abandoned: NodeId, budget: &SearchBudget) -> Option<NodeId> {
    let has_room = |id: NodeId| {
        tree.node(id)
            .is_ok_and(|n| n.children.len() < budget.max_children_per_node)
    };
    let mut cur = tree.node(abandoned).ok()?.parent;
    while let Some(id) = cur {
        if has_room(id) {
            return Some(id);
        }
        if budget.backtrack == BacktrackMode::ParentOnly {
            return None;
        }
        cur = tree.node(id).ok()?.parent;
    }
    None
}

/// Run one DFSDT search for `task`.
pub fn run_dfsdt(
    policy: &dyn SearchPolicy,
    world: &World,
    task: &Task,
    budget: &SearchBudget,
    rng: &mut ChaCha8Rng,
) -> Result<RolloutResult, DfsdtError> {
    policy.check_schema()?;
    if world.task(&task.id).is_err() {
        return Err(DfsdtError::UnknownTask(task.id.clone()));
    }
    let ctx = TaskContext::new(world, task);
    let mut tree = DecisionTree::with_root(task.query.clone()).with_id(task.id.clone());
    let mut masked_at_choice = BTreeMap::new();
    let mut current = tree.root_id();
    let mut used = 0;
    let mut final_answer = None;

    let outcome = loop {
        if used >= budget.max_actions {
            break Outcome::BudgetExhausted;
        }
        let state = tree.state_after(current)?;
        let tried: Vec<Decision> = tree
            .node(current)?
            .children
            .iter()
            .filter_map(|&c| tree.node(c).ok().and_then(|n| n.decision()))
            .collect();
        let set = CandidateSet::masking(ctx.candidates.clone(), &tried);
        let choice = policy.choose(&ctx, &state, &set, rng)?;
        if set.excluded[choice] {
            return Err(PolicyError::MaskedAction.into());
        }
        let decision = set.decisions[choice].clone();
        used += 1;
        let note = (!tried.is_empty()).then(|| {
            let shown: Vec<String> = tried.iter().map(Decision::render).collect();
            format!("previously tried: {}", shown.join("; "))
        });
        let masked: Vec<usize> = set.excluded.iter().enumerate().filter(|(_, e)| **e).map(|(i, _)| i).collect();

        match &decision {
            Decision::Call(action) => {
                let response = world.execute(task, action)?;
                let id = tree.add_child(current, &decision, Some(response), None, note)?;
                masked_at_choice.insert(id, masked);
                current = id;
            }
            Decision::FinishAnswer => {
                let answer = world.render_answer(task, &state.history);
                let id = tree.add_child(
                    current,
                    &decision,
                    Some(ApiResponse::ok(FINISH_RESPONSE)),
                    Some(answer.clone()),
                    note,
                )?;
                masked_at_choice.insert(id, masked);
                final_answer = Some(answer);
                break Outcome::Pass;
            }
            Decision::FinishGiveUp => {
                let id = tree.add_child(current, &decision, None, None, note)?;
                masked_at_choice.insert(id, masked);
                match backtrack_target(&tree, current, budget) {
                    Some(target) => current = target,
                    None => break Outcome::GiveUp,
                }
            }
        }
    };

    let success_path_steps = match outcome {
        Outcome::Pass => {
            let leaf = tree
                .nodes()
                .find(|n| n.kind == crate::trajectory::NodeKind::FinishAnswer)
                .map(|n| n.id)
                .expect("pass adds an answer node");
            Some(tree.path_to(leaf)?.len() - 1)
        }
        _ => None,
    };
    Ok(RolloutResult {
        task_id: task.id.clone(),
        seed: 0,
        tree,
        outcome,
        final_answer,
        actions_used: used,
        success_path_steps,
        candidates: ctx.candidates,
        masked_at_choice,
    })
}

/// Simulated expert annotation: DFSDT with a noisy ground-truth policy.
pub fn annotate_expert_tree(
    world: &World,
    task: &Task,
    expert_noise: f64,
    rng: &mut ChaCha8Rng,
    budget: &SearchBudget,
) -> Result<DecisionTree, DfsdtError> {
    Ok(run_dfsdt(&OraclePolicy { noise: expert_noise }, world, task, budget, rng)?.tree)
}

/// Per-task RNG seed derived from a run seed.
pub fn task_seed(seed: u64, task_id: &str) -> u64 {
    let h = stable_hash(&["task-seed", &seed.to_string(), task_id]);
    u64::from_str_radix(&h[..16], 16).expect("hex digest")
}

/// Independent rollouts, one per task, each seeded by the matching entry
/// of `seeds`. Output order follows `tasks`.
pub fn batch_rollout(
    policy: &dyn SearchPolicy,
    world: &World,
    tasks: &[&Task],
    budget: &SearchBudget,
    seeds: &[u64],
) -> Result<Vec<RolloutResult>, DfsdtError> {
    assert_eq!(tasks.len(), seeds.len(), "one seed per task");
    tasks
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(task, &seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut r = run_dfsdt(policy, world, task, budget, &mut rng)?;
            r.seed = seed;
            Ok(r)
        })
        .collect()
}
