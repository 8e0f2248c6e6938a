//! Seeded synthetic tool ecosystem.
//!
//! A world is a catalog of tools grouped into categories plus a set of
//! tasks. Each task names the calls that answer it (its sub-goals) and the
//! categories whose tools are offered to the agent. Everything, including
//! responses and flaky failures, is a pure function of the world seed.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::trajectory::{ApiAction, ApiResponse, Decision, ReasoningState};

/// Response body returned by every call to an inaccessible tool.
pub const INVALID_KEY_PAYLOAD: &str = "The consumer key passed was not valid.";
const FLAKY_PAYLOAD: &str = "Service temporarily unavailable (HTTP 503).";
/// Value placed in required parameters the query gives no value for.
const PLACEHOLDER_STRING: &str = "default";
const PLACEHOLDER_INT: &str = "1";
const WRONG_STRING: &str = "unknown";
const WRONG_INT: &str = "latest";

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("invalid world config: {0}")]
    Config(String),
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("malformed world document: {0}")]
    Document(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "G1_Ins")]
    G1Ins,
    #[serde(rename = "G1_Tool")]
    G1Tool,
    #[serde(rename = "G1_Cat")]
    G1Cat,
    #[serde(rename = "G2_Ins")]
    G2Ins,
    #[serde(rename = "G2_Cat")]
    G2Cat,
    #[serde(rename = "G3_Ins")]
    G3Ins,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::G1Ins,
        Scenario::G1Tool,
        Scenario::G1Cat,
        Scenario::G2Ins,
        Scenario::G2Cat,
        Scenario::G3Ins,
    ];

    pub fn group(self) -> Group {
        match self {
            Scenario::G1Ins | Scenario::G1Tool | Scenario::G1Cat => Group::G1,
            Scenario::G2Ins | Scenario::G2Cat => Group::G2,
            Scenario::G3Ins => Group::G3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Scenario::G1Ins => "G1_Ins",
            Scenario::G1Tool => "G1_Tool",
            Scenario::G1Cat => "G1_Cat",
            Scenario::G2Ins => "G2_Ins",
            Scenario::G2Cat => "G2_Cat",
            Scenario::G3Ins => "G3_Ins",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Single tool, several tools from one category, or tools across categories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Group {
    G1,
    G2,
    G3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamType {
    String,
    Integer,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub ty: ParamType,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub category: String,
    pub description: String,
    pub keywords: Vec<String>,
    pub required: Vec<ParamSpec>,
    pub optional: Vec<ParamSpec>,
    pub accessible: bool,
    /// Held out of every training task.
    pub heldout: bool,
}

impl ToolSpec {
    /// Schema check of an argument map; the error text names the problem.
    pub fn check_arguments(&self, args: &BTreeMap<String, String>) -> Result<(), String> {
        for p in &self.required {
            if !args.contains_key(&p.name) {
                return Err(format!("Missing required parameter: {}", p.name));
            }
        }
        for (name, value) in args {
            let spec = self
                .required
                .iter()
                .chain(&self.optional)
                .find(|p| &p.name == name)
                .ok_or_else(|| format!("Unexpected parameter: {name}"))?;
            if spec.ty == ParamType::Integer && value.parse::<i64>().is_err() {
                return Err(format!(
                    "Invalid value for parameter {name}: expected integer"
                ));
            }
        }
        Ok(())
    }

    pub fn doc(&self) -> String {
        let params = |ps: &[ParamSpec]| {
            ps.iter()
                .map(|p| {
                    let ty = match p.ty {
                        ParamType::String => "string",
                        ParamType::Integer => "integer",
                    };
                    format!("{}: {ty}", p.name)
                })
                .collect::<Vec<_>>()
                .join(", ")
        };
        format!(
            "Name: {}\nDescription: {}\nRequired: [{}]\nOptional: [{}]",
            self.name,
            self.description,
            params(&self.required),
            params(&self.optional)
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub name: String,
    pub heldout: bool,
}

/// One required call: `tool` invoked with `arguments` (the required
/// parameters, exact values). `after` names a sub-goal that has to be
/// satisfied earlier in the history for this one to count.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubGoal {
    pub tool: String,
    pub arguments: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub after: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub query: String,
    pub group: Group,
    /// `None` for training instructions.
    pub scenario: Option<Scenario>,
    /// Categories whose tools are offered as candidates.
    pub scope: Vec<String>,
    pub required_calls: Vec<SubGoal>,
    pub solvable: bool,
}

impl Task {
    pub fn is_train(&self) -> bool {
        self.scenario.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub seed: u64,
    pub n_categories: usize,
    pub tools_per_category: usize,
    pub tasks_per_scenario: usize,
    pub train_tasks: usize,
    pub heldout_categories: usize,
    pub heldout_tools_per_category: usize,
    /// Probability that a given (task, tool) pair always fails with a
    /// transient-looking error.
    pub error_rate: f64,
    pub inaccessible_fraction: f64,
    pub max_calls_per_task: usize,
    pub keywords_per_tool: usize,
    /// Probability that a later sub-goal depends on the previous one.
    pub dependency_rate: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_categories: 10,
            tools_per_category: 8,
            tasks_per_scenario: 60,
            train_tasks: 400,
            heldout_categories: 2,
            heldout_tools_per_category: 2,
            error_rate: 0.03,
            inaccessible_fraction: 0.08,
            max_calls_per_task: 3,
            keywords_per_tool: 3,
            dependency_rate: 0.4,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        let err = |m: &str| Err(WorldError::Config(m.to_string()));
        if self.heldout_categories == 0 {
            return err("heldout_categories must be at least 1 (needed for *_Cat splits)");
        }
        if self.n_categories < self.heldout_categories + 2 {
            return err("need at least two seen categories beyond the held-out ones (G3 tasks)");
        }
        if self.heldout_tools_per_category == 0 {
            return err("heldout_tools_per_category must be at least 1 (needed for G1_Tool)");
        }
        if self.tools_per_category < self.heldout_tools_per_category + 2 {
            return err("need at least two seen tools per category (G2 tasks)");
        }
        if self.max_calls_per_task < 2 {
            return err("max_calls_per_task must be at least 2");
        }
        if self.keywords_per_tool < 2 {
            return err("keywords_per_tool must be at least 2");
        }
        for (name, v) in [
            ("error_rate", self.error_rate),
            ("inaccessible_fraction", self.inaccessible_fraction),
            ("dependency_rate", self.dependency_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(WorldError::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        stable_hash(&[&serde_json::to_string(self).expect("config serializes")])
    }
}

/// Sub-goal accounting for a history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalState {
    pub satisfied: Vec<bool>,
    pub all_satisfied: bool,
    pub partial_credit: f64,
}

impl GoalState {
    pub fn n_satisfied(&self) -> usize {
        self.satisfied.iter().filter(|s| **s).count()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct WorldDocument {
    config: WorldConfig,
    config_hash: String,
    categories: Vec<Category>,
    tools: Vec<ToolSpec>,
    tasks: Vec<Task>,
}

#[derive(Clone, Debug)]
pub struct World {
    pub config: WorldConfig,
    pub categories: Vec<Category>,
    pub tools: Vec<ToolSpec>,
    pub tasks: Vec<Task>,
    tool_index: HashMap<String, usize>,
    task_index: HashMap<String, usize>,
}

impl PartialEq for World {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.categories == other.categories
            && self.tools == other.tools
            && self.tasks == other.tasks
    }
}

pub(crate) fn stable_hash(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

fn unit_hash(parts: &[&str]) -> f64 {
    let hex = stable_hash(parts);
    let v = u64::from_str_radix(&hex[..16], 16).expect("hex digest");
    (v >> 11) as f64 / (1u64 << 53) as f64
}

/// Lower-case alphanumeric tokens of `text`.
pub fn tokens(text: &str) -> HashSet<String> {
    text.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_ascii_lowercase())
        .collect()
}

const VERBS: [&str; 8] = [
    "get", "search", "list", "fetch", "lookup", "convert", "check", "find",
];
const PARAMS: [(&str, ParamType); 10] = [
    ("query", ParamType::String),
    ("id", ParamType::String),
    ("city", ParamType::String),
    ("date", ParamType::String),
    ("symbol", ParamType::String),
    ("user", ParamType::String),
    ("lang", ParamType::String),
    ("limit", ParamType::Integer),
    ("page", ParamType::Integer),
    ("year", ParamType::Integer),
];

struct WordGen {
    used: HashSet<String>,
}

impl WordGen {
    fn word(&mut self, rng: &mut ChaCha8Rng, syllables: usize) -> String {
        const C: &[u8] = b"bdfgklmnprstvz";
        const V: &[u8] = b"aeiou";
        loop {
            let mut w = String::new();
            for _ in 0..syllables {
                w.push(C[rng.gen_range(0..C.len())] as char);
                w.push(V[rng.gen_range(0..V.len())] as char);
            }
            if rng.gen_bool(0.5) {
                w.push(C[rng.gen_range(0..C.len())] as char);
            }
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }
}

struct Pools {
    /// Seen (category index, tool indices) for instruction splits and training.
    seen: Vec<(usize, Vec<usize>)>,
    /// Held-out tools of seen categories.
    heldout_tools: Vec<usize>,
    /// Held-out categories with all their tools.
    unseen: Vec<(usize, Vec<usize>)>,
}

/// Generate a world. Pure function of `config`.
pub fn gen_world(config: &WorldConfig) -> Result<World, WorldError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut words = WordGen {
        used: HashSet::new(),
    };
    for p in PARAMS {
        words.used.insert(p.0.to_string());
    }
    for w in [PLACEHOLDER_STRING, WRONG_STRING, WRONG_INT] {
        words.used.insert(w.to_string());
    }

    let mut cat_order: Vec<usize> = (0..config.n_categories).collect();
    cat_order.shuffle(&mut rng);
    let heldout_cats: BTreeSet<usize> = cat_order[..config.heldout_categories]
        .iter()
        .copied()
        .collect();

    let mut categories = Vec::new();
    let mut tools = Vec::new();
    let mut pools = Pools {
        seen: Vec::new(),
        heldout_tools: Vec::new(),
        unseen: Vec::new(),
    };
    for c in 0..config.n_categories {
        let name = words.word(&mut rng, 2);
        let cat_heldout = heldout_cats.contains(&c);
        categories.push(Category {
            name: name.clone(),
            heldout: cat_heldout,
        });
        let mut tool_ids = Vec::new();
        for _ in 0..config.tools_per_category {
            let verb = VERBS[rng.gen_range(0..VERBS.len())];
            let noun = words.word(&mut rng, 2);
            let keywords: Vec<String> = (0..config.keywords_per_tool)
                .map(|_| words.word(&mut rng, 3))
                .collect();
            let mut params: Vec<(&str, ParamType)> = PARAMS.to_vec();
            params.shuffle(&mut rng);
            let n_req = rng.gen_range(1..=2);
            let n_opt = rng.gen_range(0..=1);
            let spec = |p: &(&str, ParamType)| ParamSpec {
                name: p.0.to_string(),
                ty: p.1,
            };
            let mut required: Vec<ParamSpec> = params[..n_req].iter().map(spec).collect();
            required.sort_by(|a, b| a.name.cmp(&b.name));
            let optional = params[n_req..n_req + n_opt].iter().map(spec).collect();
            tool_ids.push(tools.len());
            tools.push(ToolSpec {
                name: format!("{verb}{noun}_for_{name}"),
                category: name.clone(),
                description: format!("{} {} {}", verb, noun, keywords.join(" ")),
                keywords,
                required,
                optional,
                accessible: !rng.gen_bool(config.inaccessible_fraction),
                heldout: cat_heldout,
            });
        }
        if cat_heldout {
            pools.unseen.push((c, tool_ids));
        } else {
            let mut shuffled = tool_ids.clone();
            shuffled.shuffle(&mut rng);
            let (held, seen) = shuffled.split_at(config.heldout_tools_per_category);
            for &t in held {
                tools[t].heldout = true;
                pools.heldout_tools.push(t);
            }
            let mut seen = seen.to_vec();
            seen.sort_unstable();
            pools.seen.push((c, seen));
        }
    }

    let mut gen = TaskGen {
        config,
        tools: &tools,
        words,
        rng,
    };
    let mut tasks = Vec::new();
    for i in 0..config.train_tasks {
        let group = match i % 5 {
            0 | 1 => Group::G1,
            2 | 3 => Group::G2,
            _ => Group::G3,
        };
        let picked = gen.pick_tools(group, &pools.seen);
        tasks.push(gen.make_task(format!("train-{i:05}"), group, None, picked));
    }
    for scenario in Scenario::ALL {
        for i in 0..config.tasks_per_scenario {
            let picked = match scenario {
                Scenario::G1Ins | Scenario::G2Ins | Scenario::G3Ins => {
                    gen.pick_tools(scenario.group(), &pools.seen)
                }
                Scenario::G1Tool => {
                    vec![*pools.heldout_tools.choose(&mut gen.rng).expect("validated")]
                }
                Scenario::G1Cat | Scenario::G2Cat => {
                    gen.pick_tools(scenario.group(), &pools.unseen)
                }
            };
            tasks.push(gen.make_task(
                format!("{}-{i:05}", scenario.label()),
                scenario.group(),
                Some(scenario),
                picked,
            ));
        }
    }
    Ok(World::from_parts(config.clone(), categories, tools, tasks))
}

struct TaskGen<'a> {
    config: &'a WorldConfig,
    tools: &'a [ToolSpec],
    words: WordGen,
    rng: ChaCha8Rng,
}

impl TaskGen<'_> {
    fn pick_tools(&mut self, group: Group, pool: &[(usize, Vec<usize>)]) -> Vec<usize> {
        let max = self.config.max_calls_per_task;
        match group {
            Group::G1 => {
                let (_, ts) = pool.choose(&mut self.rng).expect("non-empty pool");
                vec![*ts.choose(&mut self.rng).expect("non-empty category")]
            }
            Group::G2 => {
                let (_, ts) = pool.choose(&mut self.rng).expect("non-empty pool");
                let n = self.rng.gen_range(2..=max.min(ts.len()));
                ts.choose_multiple(&mut self.rng, n).copied().collect()
            }
            Group::G3 => {
                let cats: Vec<&(usize, Vec<usize>)> =
                    pool.choose_multiple(&mut self.rng, 2).collect();
                let mut picked: Vec<usize> = cats
                    .iter()
                    .map(|(_, ts)| *ts.choose(&mut self.rng).expect("non-empty"))
                    .collect();
                if max > 2 && self.rng.gen_bool(0.5) {
                    let (_, ts) = cats[self.rng.gen_range(0..2)];
                    if let Some(&t) = ts
                        .iter()
                        .filter(|t| !picked.contains(t))
                        .collect::<Vec<_>>()
                        .choose(&mut self.rng)
                    {
                        picked.push(*t);
                    }
                }
                picked
            }
        }
    }

    fn value_for(&mut self, ty: ParamType) -> String {
        match ty {
            ParamType::String => self.words.word(&mut self.rng, 2),
            ParamType::Integer => self.rng.gen_range(2..=999).to_string(),
        }
    }

    fn make_task(
        &mut self,
        id: String,
        group: Group,
        scenario: Option<Scenario>,
        picked: Vec<usize>,
    ) -> Task {
        let mut scope: Vec<String> = Vec::new();
        for &t in &picked {
            let c = &self.tools[t].category;
            if !scope.contains(c) {
                scope.push(c.clone());
            }
        }
        let mut required_calls = Vec::new();
        let mut clauses = Vec::new();
        for (k, &t) in picked.iter().enumerate() {
            let tool = &self.tools[t];
            let mut arguments = BTreeMap::new();
            for p in &tool.required {
                let v = self.value_for(p.ty);
                arguments.insert(p.name.clone(), v);
            }
            let after = (k > 0 && self.rng.gen_bool(self.config.dependency_rate)).then(|| k - 1);
            let n_kw = if self.rng.gen_bool(0.5) {
                tool.keywords.len()
            } else {
                tool.keywords.len() - 1
            };
            let kws: Vec<&str> = tool
                .keywords
                .choose_multiple(&mut self.rng, n_kw)
                .map(String::as_str)
                .collect();
            let args_text = arguments
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>()
                .join(" and ");
            let lead = if after.is_some() { "using that, " } else { "" };
            clauses.push(format!("{lead}{} with {args_text}", kws.join(" ")));
            required_calls.push(SubGoal {
                tool: tool.name.clone(),
                arguments,
                after,
            });
        }
        // Distractor keywords from other in-scope tools.
        let others: Vec<&ToolSpec> = self
            .tools
            .iter()
            .enumerate()
            .filter(|(i, t)| scope.contains(&t.category) && !picked.contains(i))
            .map(|(_, t)| t)
            .collect();
        let n_distract = self.rng.gen_range(0..=2).min(others.len());
        let mut aside = Vec::new();
        for tool in others.choose_multiple(&mut self.rng, n_distract) {
            let n = if self.rng.gen_bool(0.3) { 2 } else { 1 };
            aside.extend(
                tool.keywords
                    .choose_multiple(&mut self.rng, n)
                    .map(String::as_str),
            );
        }
        let mut query = format!("Please {}.", clauses.join("; then "));
        if !aside.is_empty() {
            query.push_str(&format!(" I was also reading about {}.", aside.join(" ")));
        }
        let mut task = Task {
            id,
            query,
            group,
            scenario,
            scope,
            required_calls,
            solvable: false,
        };
        task.solvable = achievable_with(self.tools, self.config, &task)
            .iter()
            .all(|a| *a);
        task
    }
}

fn tool_by_name<'a>(tools: &'a [ToolSpec], name: &str) -> Option<&'a ToolSpec> {
    tools.iter().find(|t| t.name == name)
}

fn is_flaky(seed: u64, error_rate: f64, task: &str, tool: &str) -> bool {
    error_rate > 0.0 && unit_hash(&["flaky", &seed.to_string(), task, tool]) < error_rate
}

fn achievable_with(tools: &[ToolSpec], config: &WorldConfig, task: &Task) -> Vec<bool> {
    let mut out: Vec<bool> = Vec::with_capacity(task.required_calls.len());
    for g in &task.required_calls {
        let works = tool_by_name(tools, &g.tool).is_some_and(|t| {
            t.accessible && !is_flaky(config.seed, config.error_rate, &task.id, &t.name)
        });
        out.push(works && g.after.is_none_or(|p| out[p]));
    }
    out
}

impl World {
    fn from_parts(
        config: WorldConfig,
        categories: Vec<Category>,
        tools: Vec<ToolSpec>,
        tasks: Vec<Task>,
    ) -> Self {
        let tool_index = tools
            .iter()
            .enumerate()
            .map(|(i, t)| (t.name.clone(), i))
            .collect();
        let task_index = tasks
            .iter()
            .enumerate()
            .map(|(i, t)| (t.id.clone(), i))
            .collect();
        Self {
            config,
            categories,
            tools,
            tasks,
            tool_index,
            task_index,
        }
    }

    pub fn tool(&self, name: &str) -> Option<&ToolSpec> {
        self.tool_index.get(name).map(|&i| &self.tools[i])
    }

    pub fn task(&self, id: &str) -> Result<&Task, WorldError> {
        self.task_index
            .get(id)
            .map(|&i| &self.tasks[i])
            .ok_or_else(|| WorldError::UnknownTask(id.to_string()))
    }

    pub fn train_tasks(&self) -> impl Iterator<Item = &Task> {
        self.tasks.iter().filter(|t| t.is_train())
    }

    pub fn scenario_tasks(&self, scenario: Scenario) -> impl Iterator<Item = &Task> {
        self.tasks
            .iter()
            .filter(move |t| t.scenario == Some(scenario))
    }

    /// Tools offered for `task`, in catalog order.
    pub fn scope_tools<'a>(&'a self, task: &'a Task) -> impl Iterator<Item = &'a ToolSpec> {
        self.tools
            .iter()
            .filter(move |t| task.scope.contains(&t.category))
    }

    pub fn is_flaky(&self, task: &Task, tool: &str) -> bool {
        is_flaky(self.config.seed, self.config.error_rate, &task.id, tool)
    }

    /// Whether a call to `tool` can ever succeed for `task`.
    pub fn tool_works(&self, task: &Task, tool: &str) -> bool {
        self.tool(tool)
            .is_some_and(|t| t.accessible && !self.is_flaky(task, &t.name))
    }

    /// Per sub-goal: can it be satisfied at all (its tool works and its
    /// prerequisite is achievable)?
    pub fn achievable(&self, task: &Task) -> Vec<bool> {
        achievable_with(&self.tools, &self.config, task)
    }

    /// Execute a tool call. Pure in (world, task, action).
    pub fn execute(&self, task: &Task, action: &ApiAction) -> Result<ApiResponse, WorldError> {
        let tool = self
            .tool(&action.tool_name)
            .ok_or_else(|| WorldError::UnknownTool(action.tool_name.clone()))?;
        if !tool.accessible {
            return Ok(ApiResponse::error(INVALID_KEY_PAYLOAD));
        }
        if let Err(msg) = tool.check_arguments(&action.arguments) {
            return Ok(ApiResponse::error(msg));
        }
        if self.is_flaky(task, &tool.name) {
            return Ok(ApiResponse::error(FLAKY_PAYLOAD));
        }
        let args = serde_json::to_string(&action.arguments).expect("map serializes");
        let digest = stable_hash(&[
            "response",
            &self.config.seed.to_string(),
            &task.id,
            &tool.name,
            &args,
        ]);
        Ok(ApiResponse::ok(format!(
            "{{\"tool\":\"{}\",\"result\":\"{}\"}}",
            tool.name,
            &digest[..12]
        )))
    }

    /// Sub-goal accounting from the successful calls in `history`.
    pub fn goal_state(&self, task: &Task, history: &[(ApiAction, ApiResponse)]) -> GoalState {
        let n = task.required_calls.len();
        // index in history at which each sub-goal was first satisfied
        let mut when: Vec<Option<usize>> = vec![None; n];
        for (step, (action, resp)) in history.iter().enumerate() {
            if resp.is_error() {
                continue;
            }
            for (k, g) in task.required_calls.iter().enumerate() {
                if when[k].is_some() || g.tool != action.tool_name {
                    continue;
                }
                let matches = g
                    .arguments
                    .iter()
                    .all(|(name, v)| action.arguments.get(name) == Some(v));
                let prereq_ok = g.after.is_none_or(|p| when[p].is_some_and(|s| s < step));
                if matches && prereq_ok {
                    when[k] = Some(step);
                }
            }
        }
        let satisfied: Vec<bool> = when.iter().map(Option::is_some).collect();
        let count = satisfied.iter().filter(|s| **s).count();
        GoalState {
            all_satisfied: count == n,
            partial_credit: if n == 0 { 1.0 } else { count as f64 / n as f64 },
            satisfied,
        }
    }

    /// The answer text a `FinishAnswer` produces from the current history.
    pub fn render_answer(&self, task: &Task, history: &[(ApiAction, ApiResponse)]) -> String {
        let goals = self.goal_state(task, history);
        let n = task.required_calls.len();
        let k = goals.n_satisfied();
        let results: Vec<String> = history
            .iter()
            .filter(|(_, r)| !r.is_error())
            .map(|(a, r)| format!("{} -> {}", a.tool_name, r.payload))
            .collect();
        if k == 0 {
            "Sorry, I could not obtain any of the requested information.".to_string()
        } else if k == n {
            format!("Here is everything you asked for: {}", results.join("; "))
        } else {
            format!(
                "Partial result ({k} of {n} requests completed): {}",
                results.join("; ")
            )
        }
    }

    /// Argument variants offered for `tool` on `task`: the grounded call,
    /// the call with its first required parameter missing, and the call
    /// with a wrong value in that parameter.
    pub fn argument_variants(&self, task: &Task, tool: &ToolSpec) -> Vec<ApiAction> {
        let goal = task.required_calls.iter().find(|g| g.tool == tool.name);
        let query_values: BTreeMap<&str, &str> = task
            .required_calls
            .iter()
            .flat_map(|g| g.arguments.iter())
            .map(|(k, v)| (k.as_str(), v.as_str()))
            .collect();
        let canonical: BTreeMap<String, String> = match goal {
            Some(g) => g.arguments.clone(),
            None => tool
                .required
                .iter()
                .map(|p| {
                    let v = query_values.get(p.name.as_str()).copied().unwrap_or(match p.ty {
                        ParamType::String => PLACEHOLDER_STRING,
                        ParamType::Integer => PLACEHOLDER_INT,
                    });
                    (p.name.clone(), v.to_string())
                })
                .collect(),
        };
        let first = &tool.required[0];
        let mut missing = canonical.clone();
        missing.remove(&first.name);
        let mut wrong = canonical.clone();
        wrong.insert(
            first.name.clone(),
            match first.ty {
                ParamType::String => WRONG_STRING,
                ParamType::Integer => WRONG_INT,
            }
            .to_string(),
        );
        [canonical, missing, wrong]
            .into_iter()
            .map(|arguments| ApiAction {
                tool_name: tool.name.clone(),
                arguments,
            })
            .collect()
    }

    /// Every decision available for `task`: argument variants of each
    /// in-scope tool, then `FinishAnswer` and `FinishGiveUp`.
    pub fn candidates(&self, task: &Task) -> Vec<Decision> {
        let mut out: Vec<Decision> = self
            .scope_tools(task)
            .flat_map(|t| self.argument_variants(task, t))
            .map(Decision::Call)
            .collect();
        out.push(Decision::FinishAnswer);
        out.push(Decision::FinishGiveUp);
        out
    }

    /// The next step of an ideal annotator for the state, ignoring masks:
    /// the first achievable unsatisfied sub-goal whose prerequisite is met,
    /// else `FinishAnswer` if anything was achieved, else `FinishGiveUp`.
    pub fn ground_truth_next(&self, task: &Task, state: &ReasoningState) -> Decision {
        let goals = self.goal_state(task, &state.history);
        let achievable = self.achievable(task);
        for (k, g) in task.required_calls.iter().enumerate() {
            if goals.satisfied[k] || !achievable[k] {
                continue;
            }
            if g.after.is_some_and(|p| !goals.satisfied[p]) {
                continue;
            }
            return Decision::Call(ApiAction {
                tool_name: g.tool.clone(),
                arguments: g.arguments.clone(),
            });
        }
        if goals.n_satisfied() > 0 {
            Decision::FinishAnswer
        } else {
            Decision::FinishGiveUp
        }
    }

    /// Number of calls in the ideal solution (achievable sub-goals).
    pub fn solution_length(&self, task: &Task) -> usize {
        self.achievable(task).iter().filter(|a| **a).count()
    }

    pub fn to_json(&self) -> String {
        let doc = WorldDocument {
            config: self.config.clone(),
            config_hash: self.config.hash(),
            categories: self.categories.clone(),
            tools: self.tools.clone(),
            tasks: self.tasks.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("world serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, WorldError> {
        let doc: WorldDocument =
            serde_json::from_str(text).map_err(|e| WorldError::Document(e.to_string()))?;
        if doc.config_hash != doc.config.hash() {
            return Err(WorldError::Document("config hash mismatch".into()));
        }
        Ok(Self::from_parts(
            doc.config,
            doc.categories,
            doc.tools,
            doc.tasks,
        ))
    }
}

pub fn execute(world: &World, task: &Task, action: &ApiAction) -> Result<ApiResponse, WorldError> {
    world.execute(task, action)
}

pub fn goal_state(world: &World, task: &Task, history: &[(ApiAction, ApiResponse)]) -> GoalState {
    world.goal_state(task, history)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> WorldConfig {
        WorldConfig {
            n_categories: 4,
            tools_per_category: 4,
            tasks_per_scenario: 6,
            train_tasks: 20,
            heldout_categories: 1,
            heldout_tools_per_category: 1,
            error_rate: 0.25,
            inaccessible_fraction: 0.25,
            ..WorldConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = gen_world(&WorldConfig::default()).unwrap().to_json();
        let b = gen_world(&WorldConfig::default()).unwrap().to_json();
        assert_eq!(a, b);
        let other = gen_world(&WorldConfig { seed: 8, ..WorldConfig::default() }).unwrap().to_json();
        assert_ne!(a, other);
        let back = World::from_json(&a).unwrap();
        assert_eq!(back.to_json(), a);
    }

    #[test]
    fn tampered_document_is_rejected() {
        let text = gen_world(&small()).unwrap().to_json().replacen("\"seed\": 7", "\"seed\": 9", 1);
        assert!(matches!(World::from_json(&text), Err(WorldError::Document(_))));
    }

    #[test]
    fn bad_configs_are_rejected() {
        for cfg in [
            WorldConfig { n_categories: 2, ..WorldConfig::default() },
            WorldConfig { heldout_categories: 0, ..WorldConfig::default() },
            WorldConfig { tools_per_category: 2, ..WorldConfig::default() },
            WorldConfig { error_rate: 1.5, ..WorldConfig::default() },
        ] {
            assert!(matches!(gen_world(&cfg), Err(WorldError::Config(_))));
        }
    }

    #[test]
    fn scenario_constraints_hold() {
        let w = gen_world(&WorldConfig::default()).unwrap();
        let train_cats: HashSet<&str> = w
            .train_tasks()
            .flat_map(|t| t.required_calls.iter())
            .map(|g| w.tool(&g.tool).unwrap().category.as_str())
            .collect();
        let train_tools: HashSet<&str> = w
            .train_tasks()
            .flat_map(|t| t.required_calls.iter())
            .map(|g| g.tool.as_str())
            .collect();
        let train_queries: HashSet<&str> = w.train_tasks().map(|t| t.query.as_str()).collect();
        for s in Scenario::ALL {
            let tasks: Vec<&Task> = w.scenario_tasks(s).collect();
            assert_eq!(tasks.len(), w.config.tasks_per_scenario);
            for t in tasks {
                let tools: HashSet<&str> = t.required_calls.iter().map(|g| g.tool.as_str()).collect();
                let cats: HashSet<&str> = tools.iter().map(|n| w.tool(n).unwrap().category.as_str()).collect();
                match s.group() {
                    Group::G1 => assert_eq!(tools.len(), 1, "{}", t.id),
                    Group::G2 => assert!(tools.len() >= 2 && cats.len() == 1, "{}", t.id),
                    Group::G3 => assert!(cats.len() >= 2, "{}", t.id),
                }
                assert!(!train_queries.contains(t.query.as_str()));
                match s {
                    Scenario::G1Cat | Scenario::G2Cat => {
                        assert!(cats.iter().all(|c| !train_cats.contains(c)), "{}", t.id)
                    }
                    Scenario::G1Tool => {
                        assert!(tools.iter().all(|n| !train_tools.contains(n) && w.tool(n).unwrap().heldout));
                        assert!(cats.iter().all(|c| train_cats.contains(c)));
                    }
                    _ => assert!(tools.iter().all(|n| train_tools.contains(n))),
                }
            }
        }
    }

    /// Is there any sequence of successful calls that satisfies every goal?
    fn plan_exists(w: &World, task: &Task, history: &mut Vec<(ApiAction, ApiResponse)>, calls: &[ApiAction]) -> bool {
        if w.goal_state(task, history).all_satisfied {
            return true;
        }
        if history.len() == task.required_calls.len() {
            return false;
        }
        for a in calls {
            let r = w.execute(task, a).unwrap();
            if r.is_error() {
                continue;
            }
            history.push((a.clone(), r));
            let found = plan_exists(w, task, history, calls);
            history.pop();
            if found {
                return true;
            }
        }
        false
    }

    #[test]
    fn solvable_matches_plan_search() {
        let mut seen = [0usize; 2];
        for seed in 0..4 {
            let w = gen_world(&WorldConfig { seed, ..small() }).unwrap();
            for task in &w.tasks {
                let calls: Vec<ApiAction> = w
                    .candidates(task)
                    .into_iter()
                    .filter_map(|d| d.as_call().cloned())
                    .collect();
                let found = plan_exists(&w, task, &mut Vec::new(), &calls);
                assert_eq!(found, task.solvable, "{}", task.id);
                seen[found as usize] += 1;
            }
        }
        assert!(seen[0] > 0 && seen[1] > 0, "{seen:?}");
    }

    #[test]
    fn execute_cases() {
        let w = gen_world(&WorldConfig { inaccessible_fraction: 0.5, ..small() }).unwrap();
        let task = &w.tasks[0];
        let dead = w.tools.iter().find(|t| !t.accessible).unwrap();
        let args = dead.required.iter().map(|p| (p.name.clone(), "x".to_string())).collect();
        let r = w.execute(task, &ApiAction { tool_name: dead.name.clone(), arguments: args }).unwrap();
        assert!(r.is_error());
        assert_eq!(r.payload, INVALID_KEY_PAYLOAD);

        let live = w.tools.iter().find(|t| t.accessible).unwrap();
        let r = w.execute(task, &ApiAction { tool_name: live.name.clone(), arguments: BTreeMap::new() }).unwrap();
        assert!(r.is_error());
        assert_eq!(r.payload, format!("Missing required parameter: {}", live.required[0].name));

        assert!(matches!(
            w.execute(task, &ApiAction::new("nope", [("a", "b")])),
            Err(WorldError::UnknownTool(_))
        ));

        let solvable = w.tasks.iter().find(|t| t.solvable).unwrap();
        let g = &solvable.required_calls[0];
        let call = ApiAction { tool_name: g.tool.clone(), arguments: g.arguments.clone() };
        let first = w.execute(solvable, &call).unwrap();
        assert!(!first.is_error());
        assert_eq!(w.execute(solvable, &call).unwrap(), first);
    }

    #[test]
    fn goal_state_counts() {
        let w = gen_world(&WorldConfig { error_rate: 0.0, inaccessible_fraction: 0.0, ..WorldConfig::default() }).unwrap();
        let task = w
            .tasks
            .iter()
            .find(|t| t.required_calls.len() == 3 && t.required_calls.iter().all(|g| g.after.is_none()))
            .unwrap();
        assert_eq!(w.goal_state(task, &[]).n_satisfied(), 0);
        let history: Vec<(ApiAction, ApiResponse)> = task
            .required_calls
            .iter()
            .map(|g| {
                let a = ApiAction { tool_name: g.tool.clone(), arguments: g.arguments.clone() };
                let r = w.execute(task, &a).unwrap();
                (a, r)
            })
            .collect();
        assert!(w.goal_state(task, &history).all_satisfied);
        let one = w.goal_state(task, &history[..1]);
        assert_eq!(one.partial_credit, 1.0 / 3.0);
        assert!(!one.all_satisfied);
    }

    #[test]
    fn prerequisites_are_ordered() {
        let w = gen_world(&WorldConfig { error_rate: 0.0, inaccessible_fraction: 0.0, dependency_rate: 1.0, ..WorldConfig::default() }).unwrap();
        let task = w.tasks.iter().find(|t| t.required_calls.iter().any(|g| g.after.is_some())).unwrap();
        let k = task.required_calls.iter().position(|g| g.after.is_some()).unwrap();
        let p = task.required_calls[k].after.unwrap();
        let call = |i: usize| {
            let g = &task.required_calls[i];
            let a = ApiAction { tool_name: g.tool.clone(), arguments: g.arguments.clone() };
            let r = w.execute(task, &a).unwrap();
            (a, r)
        };
        assert!(!w.goal_state(task, &[call(k), call(p)]).satisfied[k]);
        assert!(w.goal_state(task, &[call(p), call(k)]).satisfied[k]);
    }
}
