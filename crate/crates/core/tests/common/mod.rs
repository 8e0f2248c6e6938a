//! Random trees and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use toolpref::trajectory::{diversity_block, ApiAction, ApiResponse, Decision, DecisionTree, NodeId, NodeKind};

/// A valid random tree with at most `max_nodes` nodes (root included).
pub fn random_tree(seed: u64, max_nodes: usize) -> DecisionTree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=max_nodes);
    let instruction = if rng.gen_bool(0.3) {
        format!("query {seed} {}", diversity_block("avoid tool_0"))
    } else {
        format!("query {seed}")
    };
    let mut tree = DecisionTree::with_root(instruction).with_id(format!("t{seed}"));
    let mut open: Vec<NodeId> = vec![tree.root_id()];
    for _ in 1..n {
        let parent = open[rng.gen_range(0..open.len())];
        let roll: f64 = rng.gen();
        if roll < 0.55 {
            let tool = format!("tool_{}", rng.gen_range(0..4));
            let action = ApiAction::new(tool, [("q", format!("v{}", rng.gen_range(0..3)))]);
            let response = if rng.gen_bool(0.3) {
                ApiResponse::error("boom")
            } else {
                let block = if rng.gen_bool(0.2) { diversity_block("sibling said r1") } else { String::new() };
                ApiResponse::ok(format!("r{}{block}", rng.gen_range(0..5)))
            };
            let note = rng.gen_bool(0.2).then(|| format!("note {}", rng.gen_range(0..9)));
            let id = tree.add_child(parent, &Decision::Call(action), Some(response), None, note).unwrap();
            open.push(id);
        } else if roll < 0.8 {
            tree.add_child(parent, &Decision::FinishGiveUp, None, None, None).unwrap();
        } else {
            let answer = if rng.gen_bool(0.25) { "Sorry, no luck" } else { "the answer" };
            tree.add_child(parent, &Decision::FinishAnswer, Some(ApiResponse::ok("done")), Some(answer.into()), None)
                .unwrap();
        }
    }
    tree
}

fn ancestors(tree: &DecisionTree, id: NodeId) -> Vec<NodeId> {
    let mut out = vec![id];
    let mut cur = tree.node(id).unwrap().parent;
    while let Some(p) = cur {
        out.push(p);
        cur = tree.node(p).unwrap().parent;
    }
    out.reverse();
    out
}

fn good_leaf(tree: &DecisionTree, id: NodeId) -> bool {
    let n = tree.node(id).unwrap();
    n.kind == NodeKind::FinishAnswer
        && !n
            .final_answer
            .as_deref()
            .is_some_and(|a| ["sorry", "apologize"].iter().any(|k| a.to_lowercase().contains(k)))
}

fn leaves(tree: &DecisionTree) -> Vec<NodeId> {
    let all: Vec<NodeId> = tree.nodes().map(|n| n.id).collect();
    let parents: BTreeSet<NodeId> = tree.nodes().filter_map(|n| n.parent).collect();
    all.into_iter().filter(|id| !parents.contains(id) && *id != tree.root_id()).collect()
}

/// (success paths, failure paths), each sorted.
pub fn brute_paths(tree: &DecisionTree) -> (Vec<Vec<NodeId>>, Vec<Vec<NodeId>>) {
    let mut s = Vec::new();
    let mut f = Vec::new();
    for leaf in leaves(tree) {
        let p = ancestors(tree, leaf);
        if good_leaf(tree, leaf) {
            s.push(p)
        } else {
            f.push(p)
        }
    }
    s.sort();
    f.sort();
    (s, f)
}

fn subtree_ok(tree: &DecisionTree, id: NodeId) -> bool {
    leaves(tree)
        .into_iter()
        .filter(|&l| good_leaf(tree, l))
        .any(|l| ancestors(tree, l).contains(&id))
}

/// Step-wise pairs as (preferred root path, dispreferred root path), in
/// (branch node, preferred position, dispreferred position) order.
pub fn brute_stepwise(tree: &DecisionTree) -> Vec<(Vec<NodeId>, Vec<NodeId>)> {
    let mut out = Vec::new();
    for n in tree.nodes() {
        for (i, &w) in n.children.iter().enumerate() {
            if !subtree_ok(tree, w) {
                continue;
            }
            for (j, &l) in n.children.iter().enumerate() {
                if i != j && !subtree_ok(tree, l) {
                    out.push(((n.id, i, j), ancestors(tree, w), ancestors(tree, l)));
                }
            }
        }
    }
    out.sort();
    out.into_iter().map(|(_, w, l)| (w, l)).collect()
}

pub fn brute_pathwise(tree: &DecisionTree) -> Vec<(Vec<NodeId>, Vec<NodeId>)> {
    let (s, f) = brute_paths(tree);
    let mut out: Vec<_> = s.iter().flat_map(|a| f.iter().map(move |b| (a.clone(), b.clone()))).collect();
    out.sort();
    out
}
