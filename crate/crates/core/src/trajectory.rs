//! Decision-tree trajectories: the data model, the line-delimited corpus
//! schema, and path extraction.
//!
//! A tree is stored on disk as a flat array of nodes with explicit parent
//! ids. Children order is the order in which nodes appear in the document,
//! which is also the exploration order the depth-first search used.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::KeywordFilter;

pub type NodeId = u32;

/// Tool name used by the two terminal decisions.
pub const FINISH_TOOL: &str = "Finish";

const DIVERSITY_OPEN: &str = "<diversity_prompt>";
const DIVERSITY_CLOSE: &str = "</diversity_prompt>";

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("structure error: {0}")]
    Structure(#[from] StructureError),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StructureError {
    #[error("cycle through node {0}")]
    Cycle(NodeId),
    #[error("node {node} references missing parent {parent}")]
    Orphan { node: NodeId, parent: NodeId },
    #[error("finish node {0} has children")]
    NonLeafFinish(NodeId),
    #[error("duplicate node id {0}")]
    DuplicateId(NodeId),
    #[error("tree has no root")]
    NoRoot,
    #[error("tree has several roots: {0:?}")]
    MultipleRoots(Vec<NodeId>),
}

/// A tool invocation: the tool plus its named arguments.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ApiAction {
    pub tool_name: String,
    pub arguments: BTreeMap<String, String>,
}

impl ApiAction {
    pub fn new<I, K, V>(tool_name: impl Into<String>, arguments: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        Self {
            tool_name: tool_name.into(),
            arguments: arguments
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
        }
    }

    /// `tool({"k": "v", ...})`, with the arguments JSON-encoded so the
    /// rendering is unambiguous.
    pub fn render(&self) -> String {
        format!(
            "{}({})",
            self.tool_name,
            serde_json::to_string(&self.arguments).expect("string map serializes")
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseStatus {
    Ok,
    Error,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ApiResponse {
    pub status: ResponseStatus,
    pub payload: String,
}

impl ApiResponse {
    pub fn ok(payload: impl Into<String>) -> Self {
        Self {
            status: ResponseStatus::Ok,
            payload: payload.into(),
        }
    }

    pub fn error(payload: impl Into<String>) -> Self {
        Self {
            status: ResponseStatus::Error,
            payload: payload.into(),
        }
    }

    pub fn is_error(&self) -> bool {
        self.status == ResponseStatus::Error
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Call,
    FinishAnswer,
    FinishGiveUp,
}

impl NodeKind {
    pub fn is_finish(self) -> bool {
        !matches!(self, NodeKind::Call)
    }
}

/// One choice made at a reasoning state: call a tool, or one of the two
/// `Finish` variants.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Call(ApiAction),
    FinishAnswer,
    FinishGiveUp,
}

impl Decision {
    pub fn kind(&self) -> NodeKind {
        match self {
            Decision::Call(_) => NodeKind::Call,
            Decision::FinishAnswer => NodeKind::FinishAnswer,
            Decision::FinishGiveUp => NodeKind::FinishGiveUp,
        }
    }

    pub fn as_call(&self) -> Option<&ApiAction> {
        match self {
            Decision::Call(a) => Some(a),
            _ => None,
        }
    }

    pub fn render(&self) -> String {
        match self {
            Decision::Call(a) => a.render(),
            Decision::FinishAnswer => format!("{FINISH_TOOL}({{\"return_type\":\"give_answer\"}})"),
            Decision::FinishGiveUp => {
                format!("{FINISH_TOOL}({{\"return_type\":\"give_up_and_restart\"}})")
            }
        }
    }
}

/// The `Finish` action recorded on terminal nodes.
pub fn finish_action(kind: NodeKind, final_answer: Option<&str>) -> ApiAction {
    let mut args = BTreeMap::new();
    match kind {
        NodeKind::FinishAnswer => {
            args.insert("return_type".to_string(), "give_answer".to_string());
            args.insert(
                "final_answer".to_string(),
                final_answer.unwrap_or_default().to_string(),
            );
        }
        NodeKind::FinishGiveUp => {
            args.insert("return_type".to_string(), "give_up_and_restart".to_string());
        }
        NodeKind::Call => unreachable!("call nodes carry their own action"),
    }
    ApiAction {
        tool_name: FINISH_TOOL.to_string(),
        arguments: args,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeNode {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub kind: NodeKind,
    /// Absent only on the root.
    pub action: Option<ApiAction>,
    /// Absent on the root and on give-up leaves.
    pub response: Option<ApiResponse>,
    pub children: Vec<NodeId>,
    pub final_answer: Option<String>,
    /// Sibling-disclosure text shown to the annotator when this node was
    /// expanded. Must never reach training data.
    pub diversity_note: Option<String>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// The decision that created this node; `None` for the root.
    pub fn decision(&self) -> Option<Decision> {
        self.parent?;
        Some(match self.kind {
            NodeKind::Call => Decision::Call(self.action.clone()?),
            NodeKind::FinishAnswer => Decision::FinishAnswer,
            NodeKind::FinishGiveUp => Decision::FinishGiveUp,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PathOutcome {
    Success,
    Failure,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Path {
    pub node_ids: Vec<NodeId>,
    pub outcome: PathOutcome,
}

impl Path {
    pub fn leaf(&self) -> NodeId {
        *self.node_ids.last().expect("paths are never empty")
    }
}

/// The reasoning state at a decision point: the instruction plus the
/// (action, response) pairs taken so far along the current branch.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReasoningState {
    pub instruction: String,
    pub history: Vec<(ApiAction, ApiResponse)>,
}

impl ReasoningState {
    pub fn new(instruction: impl Into<String>) -> Self {
        Self {
            instruction: instruction.into(),
            history: Vec::new(),
        }
    }

    pub fn last_response(&self) -> Option<&ApiResponse> {
        self.history.last().map(|(_, r)| r)
    }
}

#[derive(Clone, Debug)]
pub struct DecisionTree {
    pub id: Option<String>,
    pub instruction: String,
    nodes: BTreeMap<NodeId, TreeNode>,
    root_id: NodeId,
    answer_filter: KeywordFilter,
}

impl PartialEq for DecisionTree {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
            && self.instruction == other.instruction
            && self.nodes == other.nodes
            && self.root_id == other.root_id
    }
}

impl DecisionTree {
    /// A tree holding only its root. Nodes added with [`add_child`] get
    /// sequential ids in creation order.
    ///
    /// [`add_child`]: DecisionTree::add_child
    pub fn with_root(instruction: impl Into<String>) -> Self {
        let root = TreeNode {
            id: 0,
            parent: None,
            kind: NodeKind::Call,
            action: None,
            response: None,
            children: Vec::new(),
            final_answer: None,
            diversity_note: None,
        };
        Self {
            id: None,
            instruction: instruction.into(),
            nodes: BTreeMap::from([(0, root)]),
            root_id: 0,
            answer_filter: KeywordFilter::default(),
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }

    /// Replace the meaningless-answer filter used to classify
    /// `FinishAnswer` leaves.
    pub fn with_answer_filter(mut self, filter: KeywordFilter) -> Self {
        self.answer_filter = filter;
        self
    }

    pub fn answer_filter(&self) -> &KeywordFilter {
        &self.answer_filter
    }

    /// Append a child under `parent` and return its id.
    pub fn add_child(
        &mut self,
        parent: NodeId,
        decision: &Decision,
        response: Option<ApiResponse>,
        final_answer: Option<String>,
        diversity_note: Option<String>,
    ) -> Result<NodeId, TreeError> {
        let parent_node = self.node(parent)?;
        if parent_node.kind.is_finish() {
            return Err(StructureError::NonLeafFinish(parent).into());
        }
        let id = self.nodes.keys().next_back().map_or(0, |k| k + 1);
        let kind = decision.kind();
        let action = match decision {
            Decision::Call(a) => a.clone(),
            _ => finish_action(kind, final_answer.as_deref()),
        };
        let node = TreeNode {
            id,
            parent: Some(parent),
            kind,
            action: Some(action),
            response,
            children: Vec::new(),
            final_answer,
            diversity_note,
        };
        check_node_fields(&node, false)?;
        self.nodes
            .get_mut(&parent)
            .expect("checked above")
            .children
            .push(id);
        self.nodes.insert(id, node);
        Ok(id)
    }

    pub fn root_id(&self) -> NodeId {
        self.root_id
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[&self.root_id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Result<&TreeNode, TreeError> {
        self.nodes.get(&id).ok_or(TreeError::UnknownNode(id))
    }

    pub fn nodes(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.values()
    }

    /// Node ids in depth-first pre-order following children order.
    pub fn preorder(&self) -> Vec<NodeId> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![self.root_id];
        while let Some(id) = stack.pop() {
            out.push(id);
            stack.extend(self.nodes[&id].children.iter().rev());
        }
        out
    }

    /// Ids from the root down to `id`, inclusive.
    pub fn path_to(&self, id: NodeId) -> Result<Vec<NodeId>, TreeError> {
        let mut path = vec![id];
        let mut cur = self.node(id)?;
        while let Some(p) = cur.parent {
            path.push(p);
            cur = &self.nodes[&p];
        }
        path.reverse();
        Ok(path)
    }

    /// Whether `id` is a `FinishAnswer` leaf whose answer passes the filter.
    pub fn is_success_leaf(&self, id: NodeId) -> bool {
        self.nodes.get(&id).is_some_and(|n| {
            n.kind == NodeKind::FinishAnswer
                && !self
                    .answer_filter
                    .is_meaningless(n.final_answer.as_deref().unwrap_or(""))
        })
    }

    /// Whether the subtree rooted at `id` contains a successful leaf.
    pub fn subtree_has_success(&self, id: NodeId) -> bool {
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            if self.is_success_leaf(n) {
                return true;
            }
            if let Some(node) = self.nodes.get(&n) {
                stack.extend(node.children.iter().copied());
            }
        }
        false
    }

    /// Every root-to-leaf path in depth-first order. A root without
    /// children has no paths.
    pub fn all_paths(&self) -> Vec<Path> {
        if self.root().is_leaf() {
            return Vec::new();
        }
        self.preorder()
            .into_iter()
            .filter(|id| self.nodes[id].is_leaf())
            .map(|leaf| Path {
                node_ids: self.path_to(leaf).expect("leaf is in tree"),
                outcome: if self.is_success_leaf(leaf) {
                    PathOutcome::Success
                } else {
                    PathOutcome::Failure
                },
            })
            .collect()
    }

    /// Reasoning state just before the decision that created `id`.
    pub fn state_at(&self, id: NodeId) -> Result<ReasoningState, TreeError> {
        let path = self.path_to(id)?;
        let history = path[..path.len() - 1]
            .iter()
            .filter_map(|n| {
                let node = &self.nodes[n];
                match (&node.action, &node.response) {
                    (Some(a), Some(r)) if node.kind == NodeKind::Call => {
                        Some((a.clone(), r.clone()))
                    }
                    _ => None,
                }
            })
            .collect();
        Ok(ReasoningState {
            instruction: self.instruction.clone(),
            history,
        })
    }

    /// Reasoning state *at* node `id`, i.e. after its own action.
    pub fn state_after(&self, id: NodeId) -> Result<ReasoningState, TreeError> {
        let mut state = self.state_at(id)?;
        let node = &self.nodes[&id];
        if let (NodeKind::Call, Some(a), Some(r)) = (node.kind, &node.action, &node.response) {
            state.history.push((a.clone(), r.clone()));
        }
        Ok(state)
    }
}

pub fn success_paths(tree: &DecisionTree) -> Vec<Path> {
    tree.all_paths()
        .into_iter()
        .filter(|p| p.outcome == PathOutcome::Success)
        .collect()
}

pub fn failure_paths(tree: &DecisionTree) -> Vec<Path> {
    tree.all_paths()
        .into_iter()
        .filter(|p| p.outcome == PathOutcome::Failure)
        .collect()
}

/// True when some node on a success path has a child off that path whose
/// whole subtree failed, i.e. the tree yields at least one step-wise pair.
pub fn has_failed_branch(tree: &DecisionTree) -> bool {
    success_paths(tree).iter().any(|path| {
        path.node_ids.windows(2).any(|w| {
            let (branch, on_path) = (w[0], w[1]);
            tree.nodes[&branch]
                .children
                .iter()
                .any(|&c| c != on_path && !tree.subtree_has_success(c))
        })
    })
}

pub fn state_at(tree: &DecisionTree, id: NodeId) -> Result<ReasoningState, TreeError> {
    tree.state_at(id)
}

fn strip_diversity(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find(DIVERSITY_OPEN) {
        out.push_str(&rest[..start]);
        let after = &rest[start + DIVERSITY_OPEN.len()..];
        match after.find(DIVERSITY_CLOSE) {
            Some(end) => rest = &after[end + DIVERSITY_CLOSE.len()..],
            // unterminated block runs to end of text
            None => rest = "",
        }
    }
    out.push_str(rest);
    out
}

/// Wrap `text` in the inline diversity-prompt delimiters.
pub fn diversity_block(text: &str) -> String {
    format!("{DIVERSITY_OPEN}{text}{DIVERSITY_CLOSE}")
}

/// Remove every sibling-disclosure segment: the structured note on each
/// node and any inline delimited block in node text. Structure is untouched.
pub fn scrub_diversity_prompts(tree: &DecisionTree) -> DecisionTree {
    let mut out = tree.clone();
    out.instruction = strip_diversity(&out.instruction);
    for node in out.nodes.values_mut() {
        node.diversity_note = None;
        if let Some(action) = node.action.as_mut() {
            for v in action.arguments.values_mut() {
                *v = strip_diversity(v);
            }
        }
        if let Some(resp) = node.response.as_mut() {
            resp.payload = strip_diversity(&resp.payload);
        }
        if let Some(ans) = node.final_answer.as_mut() {
            *ans = strip_diversity(ans);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Wire format
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tree_id: Option<String>,
    instruction: String,
    nodes: Vec<NodeRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRecord {
    id: NodeId,
    parent: Option<NodeId>,
    kind: NodeKind,
    #[serde(default)]
    tool: Option<String>,
    #[serde(default)]
    args: Option<BTreeMap<String, String>>,
    #[serde(default)]
    response_status: Option<ResponseStatus>,
    #[serde(default)]
    response_payload: Option<String>,
    #[serde(default)]
    final_answer: Option<String>,
    #[serde(default)]
    diversity_note: Option<String>,
}

fn check_node_fields(node: &TreeNode, is_root: bool) -> Result<(), TreeError> {
    let schema = |msg: String| Err(TreeError::Schema(format!("node {}: {msg}", node.id)));
    if is_root {
        if node.kind != NodeKind::Call {
            return schema("root must have kind `call`".into());
        }
        if node.action.is_some() || node.response.is_some() {
            return schema("root carries no action or response".into());
        }
        return Ok(());
    }
    let Some(action) = &node.action else {
        return schema("missing field `tool`".into());
    };
    if action.tool_name.is_empty() {
        return schema("empty tool name".into());
    }
    match node.kind {
        NodeKind::Call if node.response.is_none() => {
            return schema("call node missing `response_status`".into())
        }
        NodeKind::FinishGiveUp if node.response.is_some() => {
            return schema("give-up node carries a response".into())
        }
        _ => {}
    }
    if node.final_answer.is_some() && node.kind != NodeKind::FinishAnswer {
        return schema("`final_answer` on a non-answer node".into());
    }
    if let Some(r) = &node.response {
        if r.is_error() && r.payload.is_empty() {
            return schema("error response with empty payload".into());
        }
    }
    Ok(())
}

impl NodeRecord {
    fn into_node(self) -> Result<TreeNode, TreeError> {
        let action = match (self.tool, self.args) {
            (Some(tool), args) => Some(ApiAction {
                tool_name: tool,
                arguments: args.unwrap_or_default(),
            }),
            (None, Some(_)) => {
                return Err(TreeError::Schema(format!(
                    "node {}: `args` without `tool`",
                    self.id
                )))
            }
            (None, None) => None,
        };
        let response = match (self.response_status, self.response_payload) {
            (Some(status), payload) => Some(ApiResponse {
                status,
                payload: payload.unwrap_or_default(),
            }),
            (None, Some(_)) => {
                return Err(TreeError::Schema(format!(
                    "node {}: `response_payload` without `response_status`",
                    self.id
                )))
            }
            (None, None) => None,
        };
        Ok(TreeNode {
            id: self.id,
            parent: self.parent,
            kind: self.kind,
            action,
            response,
            children: Vec::new(),
            final_answer: self.final_answer,
            diversity_note: self.diversity_note,
        })
    }

    fn from_node(node: &TreeNode) -> Self {
        Self {
            id: node.id,
            parent: node.parent,
            kind: node.kind,
            tool: node.action.as_ref().map(|a| a.tool_name.clone()),
            args: node.action.as_ref().map(|a| a.arguments.clone()),
            response_status: node.response.as_ref().map(|r| r.status),
            response_payload: node.response.as_ref().map(|r| r.payload.clone()),
            final_answer: node.final_answer.clone(),
            diversity_note: node.diversity_note.clone(),
        }
    }
}

/// Parse and validate one tree document.
pub fn parse_tree(document: &str) -> Result<DecisionTree, TreeError> {
    let doc: TreeDocument =
        serde_json::from_str(document).map_err(|e| TreeError::Schema(e.to_string()))?;
    build_tree(doc)
}

fn build_tree(doc: TreeDocument) -> Result<DecisionTree, TreeError> {
    let mut nodes: BTreeMap<NodeId, TreeNode> = BTreeMap::new();
    let mut order = Vec::with_capacity(doc.nodes.len());
    for rec in doc.nodes {
        let node = rec.into_node()?;
        if nodes.contains_key(&node.id) {
            return Err(StructureError::DuplicateId(node.id).into());
        }
        order.push(node.id);
        nodes.insert(node.id, node);
    }

    let roots: Vec<NodeId> = order
        .iter()
        .copied()
        .filter(|id| nodes[id].parent.is_none())
        .collect();
    for &id in &order {
        if let Some(p) = nodes[&id].parent {
            if p == id {
                return Err(StructureError::Cycle(id).into());
            }
            if !nodes.contains_key(&p) {
                return Err(StructureError::Orphan { node: id, parent: p }.into());
            }
            nodes.get_mut(&p).unwrap().children.push(id);
        }
    }
    let root_id = match roots.as_slice() {
        [] if nodes.is_empty() => return Err(StructureError::NoRoot.into()),
        // every node has a parent, so the parent graph must loop
        [] => return Err(StructureError::Cycle(order[0]).into()),
        [r] => *r,
        many => return Err(StructureError::MultipleRoots(many.to_vec()).into()),
    };

    // Anything not reachable from the root sits on a parent cycle.
    let mut seen = BTreeSet::new();
    let mut stack = vec![root_id];
    while let Some(id) = stack.pop() {
        seen.insert(id);
        stack.extend(nodes[&id].children.iter().copied());
    }
    if let Some(&stray) = order.iter().find(|id| !seen.contains(id)) {
        return Err(StructureError::Cycle(stray).into());
    }

    for node in nodes.values() {
        if node.kind.is_finish() && !node.is_leaf() {
            return Err(StructureError::NonLeafFinish(node.id).into());
        }
        check_node_fields(node, node.id == root_id)?;
    }

    Ok(DecisionTree {
        id: doc.tree_id,
        instruction: doc.instruction,
        nodes,
        root_id,
        answer_filter: KeywordFilter::default(),
    })
}

/// Serialize a tree as a single JSON line. Nodes are written in pre-order
/// so children order survives a round trip.
pub fn serialize_tree(tree: &DecisionTree) -> String {
    serde_json::to_string(tree).expect("tree document serializes")
}

impl Serialize for DecisionTree {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        TreeDocument {
            tree_id: self.id.clone(),
            instruction: self.instruction.clone(),
            nodes: self
                .preorder()
                .into_iter()
                .map(|id| NodeRecord::from_node(&self.nodes[&id]))
                .collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for DecisionTree {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let doc = TreeDocument::deserialize(deserializer)?;
        build_tree(doc).map_err(serde::de::Error::custom)
    }
}

/// Error from reading a multi-tree corpus, tagged with the 1-based line.
#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {source}")]
    Tree { line: usize, source: TreeError },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Read a line-delimited tree corpus, applying `filter` to every tree.
/// Blank lines are skipped.
pub fn read_corpus<R: BufRead>(
    reader: R,
    filter: &KeywordFilter,
) -> Result<Vec<DecisionTree>, CorpusError> {
    let mut trees = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let tree = parse_tree(&line).map_err(|source| CorpusError::Tree { line: i + 1, source })?;
        trees.push(tree.with_answer_filter(filter.clone()));
    }
    Ok(trees)
}

pub fn write_corpus<W: Write>(mut writer: W, trees: &[DecisionTree]) -> std::io::Result<()> {
    for tree in trees {
        writeln!(writer, "{}", serialize_tree(tree))?;
    }
    Ok(())
}

/// The reference tree shipped with the crate: 16 nodes, one success path
/// ending at node 15 and four failure paths.
pub const REFERENCE_TREE_FIXTURE: &str = include_str!("../fixtures/reference_tree.jsonl");

pub fn reference_tree() -> DecisionTree {
    parse_tree(REFERENCE_TREE_FIXTURE).expect("shipped fixture is valid")
}
