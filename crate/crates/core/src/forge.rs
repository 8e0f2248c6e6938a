//! Preference-pair construction from decision trees.
//!
//! Step-wise pairs contrast, at each branch node of a success path, the
//! child that continues the path against every sibling whose subtree never
//! reaches a successful answer. Path-wise pairs are the Cartesian product of
//! success paths and failure paths of the same tree.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajectory::{
    failure_paths, has_failed_branch, scrub_diversity_prompts, success_paths, ApiAction,
    ApiResponse, Decision, DecisionTree, NodeId, ReasoningState, FINISH_TOOL,
};

pub const SYSTEM_PROMPT: &str = "You are an agent solving a user query with tools. \
The reasoning runs as a depth-first search over a decision tree: at every step call one \
of the APIs below, or call Finish. Use Finish with return_type=give_answer once the \
responses answer the query, or Finish with return_type=give_up_and_restart to abandon \
the current branch and resume from an earlier step.";

const FINISH_DOC: &str = "Name: Finish\nDescription: Provide the final answer \
(return_type=give_answer, final_answer=<text>) or abandon the current branch \
(return_type=give_up_and_restart).";

#[derive(Debug, Error, PartialEq)]
pub enum ForgeError {
    #[error("no API documentation for tool `{0}`")]
    MissingDoc(String),
    #[error("need {needed} qualifying instructions, have {available}")]
    InsufficientData { needed: usize, available: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    StepWise,
    PathWise,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PathStep {
    pub decision: Decision,
    pub response: Option<ApiResponse>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairPayload {
    Step(Decision),
    Path(Vec<PathStep>),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PreferencePair {
    pub instruction: String,
    pub context_history: Vec<(ApiAction, ApiResponse)>,
    pub preferred: PairPayload,
    pub dispreferred: PairPayload,
    pub granularity: Granularity,
    pub source_tree: String,
    /// Root-to-node ids of the preferred side (`⟨0,9⟩` style).
    pub preferred_nodes: Vec<NodeId>,
    pub dispreferred_nodes: Vec<NodeId>,
}

impl PreferencePair {
    pub fn context(&self) -> ReasoningState {
        ReasoningState {
            instruction: self.instruction.clone(),
            history: self.context_history.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormattedSample {
    pub instruction_block: String,
    pub input_block: String,
    pub output_preferred: String,
    pub output_dispreferred: String,
}

/// Tool name → documentation text.
pub type ApiDocs = BTreeMap<String, String>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SftExample {
    pub source_tree: String,
    pub instruction: String,
    pub state: ReasoningState,
    pub target: Decision,
}

fn tree_name(tree: &DecisionTree) -> String {
    tree.id.clone().unwrap_or_else(|| "unnamed".to_string())
}

/// Step-wise pairs in (branch node, sibling order) order.
pub fn extract_stepwise(tree: &DecisionTree) -> Vec<PreferencePair> {
    // (branch node, position of preferred child, position of dispreferred)
    let mut triples: BTreeSet<(NodeId, usize, usize)> = BTreeSet::new();
    for path in success_paths(tree) {
        for w in path.node_ids.windows(2) {
            let (branch, on_path) = (w[0], w[1]);
            let children = &tree.node(branch).expect("path node").children;
            let pos_w = children.iter().position(|&c| c == on_path).expect("child");
            for (pos_l, &c) in children.iter().enumerate() {
                if c != on_path && !tree.subtree_has_success(c) {
                    triples.insert((branch, pos_w, pos_l));
                }
            }
        }
    }
    let name = tree_name(tree);
    triples
        .into_iter()
        .map(|(branch, pos_w, pos_l)| {
            let children = &tree.node(branch).expect("branch").children;
            let (cw, cl) = (children[pos_w], children[pos_l]);
            let context = tree.state_at(cw).expect("child exists");
            let decision = |id| tree.node(id).expect("child").decision().expect("non-root");
            PreferencePair {
                instruction: context.instruction,
                context_history: context.history,
                preferred: PairPayload::Step(decision(cw)),
                dispreferred: PairPayload::Step(decision(cl)),
                granularity: Granularity::StepWise,
                source_tree: name.clone(),
                preferred_nodes: tree.path_to(cw).expect("child"),
                dispreferred_nodes: tree.path_to(cl).expect("child"),
            }
        })
        .collect()
}

fn path_payload(tree: &DecisionTree, ids: &[NodeId]) -> PairPayload {
    PairPayload::Path(
        ids[1..]
            .iter()
            .map(|&id| {
                let node = tree.node(id).expect("path node");
                PathStep {
                    decision: node.decision().expect("non-root"),
                    response: node.response.clone(),
                }
            })
            .collect(),
    )
}

/// Every (success path, failure path) combination.
pub fn extract_pathwise(tree: &DecisionTree) -> Vec<PreferencePair> {
    let failures = failure_paths(tree);
    let name = tree_name(tree);
    success_paths(tree)
        .iter()
        .flat_map(|s| {
            failures.iter().map(|f| PreferencePair {
                instruction: tree.instruction.clone(),
                context_history: Vec::new(),
                preferred: path_payload(tree, &s.node_ids),
                dispreferred: path_payload(tree, &f.node_ids),
                granularity: Granularity::PathWise,
                source_tree: name.clone(),
                preferred_nodes: s.node_ids.clone(),
                dispreferred_nodes: f.node_ids.clone(),
            })
        })
        .collect()
}

pub fn extract(tree: &DecisionTree, granularity: Granularity) -> Vec<PreferencePair> {
    match granularity {
        Granularity::StepWise => extract_stepwise(tree),
        Granularity::PathWise => extract_pathwise(tree),
    }
}

fn render_history(history: &[(ApiAction, ApiResponse)]) -> String {
    if history.is_empty() {
        return "(none)".to_string();
    }
    history
        .iter()
        .enumerate()
        .map(|(i, (a, r))| {
            format!(
                "Step {}: call {} -> [{}] {}",
                i + 1,
                a.render(),
                if r.is_error() { "error" } else { "ok" },
                r.payload
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_payload(p: &PairPayload) -> String {
    match p {
        PairPayload::Step(d) => d.render(),
        PairPayload::Path(steps) => steps
            .iter()
            .map(|s| match &s.response {
                Some(r) => format!(
                    "call {} -> [{}] {}",
                    s.decision.render(),
                    if r.is_error() { "error" } else { "ok" },
                    r.payload
                ),
                None => format!("call {}", s.decision.render()),
            })
            .collect::<Vec<_>>()
            .join("\n"),
    }
}

fn referenced_tools(pair: &PreferencePair) -> BTreeSet<String> {
    let mut out: BTreeSet<String> = pair
        .context_history
        .iter()
        .map(|(a, _)| a.tool_name.clone())
        .collect();
    for p in [&pair.preferred, &pair.dispreferred] {
        let decisions: Vec<&Decision> = match p {
            PairPayload::Step(d) => vec![d],
            PairPayload::Path(s) => s.iter().map(|s| &s.decision).collect(),
        };
        out.extend(decisions.into_iter().filter_map(|d| d.as_call()).map(|a| a.tool_name.clone()));
    }
    out.remove(FINISH_TOOL);
    out
}

/// Render a pair as {Instruction, Input, Output}.
pub fn format_sample(pair: &PreferencePair, api_docs: &ApiDocs) -> Result<FormattedSample, ForgeError> {
    if let Some(missing) = referenced_tools(pair).into_iter().find(|t| !api_docs.contains_key(t)) {
        return Err(ForgeError::MissingDoc(missing));
    }
    let mut instruction_block = format!("{SYSTEM_PROMPT}\n\nAvailable APIs:\n");
    for doc in api_docs.values() {
        instruction_block.push_str(doc);
        instruction_block.push_str("\n\n");
    }
    instruction_block.push_str(FINISH_DOC);
    Ok(FormattedSample {
        instruction_block,
        input_block: format!(
            "Query: {}\nHistory:\n{}",
            pair.instruction,
            render_history(&pair.context_history)
        ),
        output_preferred: render_payload(&pair.preferred),
        output_dispreferred: render_payload(&pair.dispreferred),
    })
}

impl FormattedSample {
    fn dedup_key(&self) -> String {
        [
            self.instruction_block.as_str(),
            self.input_block.as_str(),
            self.output_preferred.as_str(),
            self.output_dispreferred.as_str(),
        ]
        .join("\u{1f}")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeStats {
    pub tree: String,
    pub kept: bool,
    pub selected: bool,
    pub pairs_extracted: usize,
    pub pairs_emitted: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub granularity: Option<Granularity>,
    pub seed: u64,
    pub trees_in: usize,
    pub trees_kept: usize,
    pub trees_selected: usize,
    pub pairs_extracted: usize,
    pub duplicates_removed: usize,
    pub pairs_total: usize,
    pub per_tree: Vec<TreeStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForgedPair {
    pub pair: PreferencePair,
    pub sample: FormattedSample,
}

/// Filter, scrub, extract, render and deduplicate a corpus.
///
/// With `max_pairs` set, kept trees are visited in a seeded random order and
/// taken whole until the pair count reaches the target; selected trees keep
/// their corpus order in the output.
pub fn build_corpus<F>(
    trees: &[DecisionTree],
    granularity: Granularity,
    docs_for: F,
    max_pairs: Option<usize>,
    seed: u64,
) -> Result<(Vec<ForgedPair>, CorpusStats), ForgeError>
where
    F: Fn(&DecisionTree) -> ApiDocs + Sync,
{
    use rayon::prelude::*;

    let extracted: Vec<Option<Vec<ForgedPair>>> = trees
        .par_iter()
        .map(|tree| {
            if !has_failed_branch(tree) {
                return Ok(None);
            }
            let clean = scrub_diversity_prompts(tree);
            let docs = docs_for(&clean);
            extract(&clean, granularity)
                .into_iter()
                .map(|pair| {
                    let sample = format_sample(&pair, &docs)?;
                    Ok(ForgedPair { pair, sample })
                })
                .collect::<Result<Vec<_>, ForgeError>>()
                .map(Some)
        })
        .collect::<Result<_, _>>()?;

    let kept: Vec<usize> = (0..trees.len()).filter(|&i| extracted[i].is_some()).collect();
    let selected: BTreeSet<usize> = match max_pairs {
        None => kept.iter().copied().collect(),
        Some(target) => {
            let mut order = kept.clone();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut chosen = BTreeSet::new();
            let mut total = 0;
            for i in order {
                if total >= target {
                    break;
                }
                total += extracted[i].as_ref().map_or(0, Vec::len);
                chosen.insert(i);
            }
            chosen
        }
    };

    let mut stats = CorpusStats {
        granularity: Some(granularity),
        seed,
        trees_in: trees.len(),
        trees_kept: kept.len(),
        trees_selected: selected.len(),
        ..CorpusStats::default()
    };
    let mut seen: HashSet<String> = HashSet::new();
    let mut out = Vec::new();
    for (i, (tree, pairs)) in trees.iter().zip(extracted).enumerate() {
        let n_extracted = pairs.as_ref().map_or(0, Vec::len);
        let mut emitted = 0;
        if selected.contains(&i) {
            for fp in pairs.unwrap_or_default() {
                stats.pairs_extracted += 1;
                if seen.insert(fp.sample.dedup_key()) {
                    emitted += 1;
                    out.push(fp);
                } else {
                    stats.duplicates_removed += 1;
                }
            }
        }
        stats.per_tree.push(TreeStats {
            tree: tree_name(tree),
            kept: kept.binary_search(&i).is_ok(),
            selected: selected.contains(&i),
            pairs_extracted: n_extracted,
            pairs_emitted: emitted,
        });
    }
    stats.pairs_total = out.len();
    Ok((out, stats))
}

/// Sample `n_instructions` whole trees without replacement and expand every
/// success path into one example per decision.
pub fn resample_sft_set(
    trees: &[DecisionTree],
    n_instructions: usize,
    seed: u64,
) -> Result<Vec<SftExample>, ForgeError> {
    if n_instructions > trees.len() {
        return Err(ForgeError::InsufficientData {
            needed: n_instructions,
            available: trees.len(),
        });
    }
    let mut order: Vec<usize> = (0..trees.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut picked = order[..n_instructions].to_vec();
    picked.sort_unstable();

    let mut out = Vec::new();
    for i in picked {
        let tree = scrub_diversity_prompts(&trees[i]);
        let name = tree_name(&tree);
        let mut seen = HashSet::new();
        for path in success_paths(&tree) {
            for &id in &path.node_ids[1..] {
                if !seen.insert(id) {
                    continue;
                }
                let state = tree.state_at(id).expect("path node");
                out.push(SftExample {
                    source_tree: name.clone(),
                    instruction: state.instruction.clone(),
                    state,
                    target: tree.node(id).expect("path node").decision().expect("non-root"),
                });
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct PairOutput {
    preferred: String,
    dispreferred: String,
}

#[derive(Serialize, Deserialize)]
struct PairRecord {
    instruction: String,
    input: String,
    output: PairOutput,
    granularity: Granularity,
    source_tree: String,
    pair: PreferencePair,
}

#[derive(Serialize, Deserialize)]
struct SftRecord {
    instruction: String,
    input: String,
    target: String,
    example: SftExample,
}

pub fn write_pairs<W: Write>(mut w: W, pairs: &[ForgedPair]) -> std::io::Result<()> {
    for fp in pairs {
        let rec = PairRecord {
            instruction: fp.sample.instruction_block.clone(),
            input: fp.sample.input_block.clone(),
            output: PairOutput {
                preferred: fp.sample.output_preferred.clone(),
                dispreferred: fp.sample.output_dispreferred.clone(),
            },
            granularity: fp.pair.granularity,
            source_tree: fp.pair.source_tree.clone(),
            pair: fp.pair.clone(),
        };
        writeln!(w, "{}", serde_json::to_string(&rec)?)?;
    }
    Ok(())
}

pub fn read_pairs<R: BufRead>(r: R) -> std::io::Result<Vec<ForgedPair>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PairRecord = serde_json::from_str(&line)?;
        out.push(ForgedPair {
            pair: rec.pair,
            sample: FormattedSample {
                instruction_block: rec.instruction,
                input_block: rec.input,
                output_preferred: rec.output.preferred,
                output_dispreferred: rec.output.dispreferred,
            },
        });
    }
    Ok(out)
}

pub fn write_sft<W: Write>(mut w: W, examples: &[SftExample], docs_for: impl Fn(&str) -> ApiDocs) -> std::io::Result<()> {
    for ex in examples {
        let docs = docs_for(&ex.source_tree);
        let mut instruction = format!("{SYSTEM_PROMPT}\n\nAvailable APIs:\n");
        for doc in docs.values() {
            instruction.push_str(doc);
            instruction.push_str("\n\n");
        }
        instruction.push_str(FINISH_DOC);
        let rec = SftRecord {
            instruction,
            input: format!(
                "Query: {}\nHistory:\n{}",
                ex.instruction,
                render_history(&ex.state.history)
            ),
            target: ex.target.render(),
            example: ex.clone(),
        };
        writeln!(w, "{}", serde_json::to_string(&rec)?)?;
    }
    Ok(())
}

pub fn read_sft<R: BufRead>(r: R) -> std::io::Result<Vec<SftExample>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SftRecord = serde_json::from_str(&line)?;
        out.push(rec.example);
    }
    Ok(out)
}

/// Documentation stub for every tool a tree mentions, for corpora that come
/// without a tool catalog.
pub fn placeholder_docs(tree: &DecisionTree) -> ApiDocs {
    tree.nodes()
        .filter_map(|n| n.action.as_ref())
        .filter(|a| a.tool_name != FINISH_TOOL)
        .map(|a| {
            let params: BTreeSet<&str> = a.arguments.keys().map(String::as_str).collect();
            (
                a.tool_name.clone(),
                format!("Name: {}\nParameters seen: {:?}", a.tool_name, params),
            )
        })
        .collect::<BTreeMap<_, _>>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{reference_tree, DecisionTree};

    fn ids(pairs: &[PreferencePair]) -> Vec<(Vec<NodeId>, Vec<NodeId>)> {
        pairs
            .iter()
            .map(|p| (p.preferred_nodes.clone(), p.dispreferred_nodes.clone()))
            .collect()
    }

    #[test]
    fn reference_tree_stepwise_pairs() {
        let pairs = extract_stepwise(&reference_tree());
        assert_eq!(
            ids(&pairs),
            vec![
                (vec![0, 9], vec![0, 1]),
                (vec![0, 9], vec![0, 3]),
                (vec![0, 9, 12], vec![0, 9, 10]),
            ]
        );
        assert!(pairs[0].context_history.is_empty());
        assert_eq!(pairs[2].context_history.len(), 1);
    }

    #[test]
    fn reference_tree_pathwise_pairs() {
        let pairs = extract_pathwise(&reference_tree());
        assert_eq!(pairs.len(), 4);
        for p in &pairs {
            assert_eq!(p.preferred_nodes, vec![0, 9, 12, 13, 14, 15]);
        }
        assert_eq!(pairs[1].dispreferred_nodes, vec![0, 3, 4, 5, 6]);
    }

    #[test]
    fn linear_chain_yields_nothing() {
        let mut t = DecisionTree::with_root("q");
        let a = t
            .add_child(0, &Decision::Call(ApiAction::new("t", [("a", "1")])), Some(ApiResponse::ok("x")), None, None)
            .unwrap();
        t.add_child(a, &Decision::FinishAnswer, Some(ApiResponse::ok("ok")), Some("answer".into()), None)
            .unwrap();
        assert!(extract_stepwise(&t).is_empty());
        assert!(extract_pathwise(&t).is_empty());
    }

    #[test]
    fn format_sample_layout() {
        let tree = reference_tree();
        let docs = placeholder_docs(&tree);
        let pairs = extract_stepwise(&tree);
        let root = format_sample(&pairs[0], &docs).unwrap();
        assert!(root.input_block.ends_with("History:\n(none)"));
        let deep = format_sample(&pairs[2], &docs).unwrap();
        assert_eq!(deep.input_block.matches("Step ").count(), 1);
        assert!(deep.instruction_block.contains("download_stream_for_ytstream"));
        let mut short = docs.clone();
        short.remove("download_stream_for_ytstream");
        assert_eq!(
            format_sample(&pairs[2], &short),
            Err(ForgeError::MissingDoc("download_stream_for_ytstream".into()))
        );
    }

    #[test]
    fn reference_tree_corpus_keeps_three_pairs_and_drops_notes() {
        let tree = reference_tree();
        let (pairs, stats) =
            build_corpus(std::slice::from_ref(&tree), Granularity::StepWise, placeholder_docs, None, 0).unwrap();
        assert_eq!(pairs.len(), 3);
        assert_eq!(stats.trees_kept, 1);
        assert_eq!(stats.pairs_total, 3);
        let notes: Vec<String> = tree.nodes().filter_map(|n| n.diversity_note.clone()).collect();
        assert!(!notes.is_empty());
        for fp in &pairs {
            let s = &fp.sample;
            for note in &notes {
                for text in [&s.instruction_block, &s.input_block, &s.output_preferred, &s.output_dispreferred] {
                    assert!(!text.contains(note.as_str()));
                }
            }
        }
    }

    #[test]
    fn reference_tree_sft_examples_follow_success_path() {
        let tree = reference_tree();
        let ex = resample_sft_set(std::slice::from_ref(&tree), 1, 3).unwrap();
        assert_eq!(ex.len(), 5);
        assert_eq!(ex.last().unwrap().target, Decision::FinishAnswer);
        assert!(ex[0].state.history.is_empty());
        assert_eq!(ex[4].state.history.len(), 4);
        assert!(resample_sft_set(std::slice::from_ref(&tree), 0, 3).unwrap().is_empty());
        assert_eq!(
            resample_sft_set(&[tree], 2, 3),
            Err(ForgeError::InsufficientData { needed: 2, available: 1 })
        );
    }

    #[test]
    fn file_round_trip() {
        let tree = reference_tree();
        let (pairs, _) = build_corpus(std::slice::from_ref(&tree), Granularity::PathWise, placeholder_docs, None, 0).unwrap();
        let mut buf = Vec::new();
        write_pairs(&mut buf, &pairs).unwrap();
        assert_eq!(read_pairs(buf.as_slice()).unwrap(), pairs);
        let sft = resample_sft_set(std::slice::from_ref(&tree), 1, 0).unwrap();
        let mut buf = Vec::new();
        write_sft(&mut buf, &sft, |_| placeholder_docs(&tree)).unwrap();
        assert_eq!(read_sft(buf.as_slice()).unwrap(), sft);
    }
}
