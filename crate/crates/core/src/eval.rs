//! Pass rate, win rate, step efficiency, and report rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dfsdt::{Outcome, RolloutResult};
use crate::trajectory::NodeKind;
use crate::world::{Scenario, World};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("task `{0}` appears in only one result set")]
    UnpairedTask(String),
    #[error("no result ended with an explicit Finish call")]
    NoQualifyingSamples,
    #[error("baseline is zero")]
    ZeroBaseline,
    #[error("no per-seed reports to aggregate")]
    NoReports,
}

/// Case-insensitive substring filter for answers that amount to a refusal.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordFilter {
    keywords: Vec<String>,
}

impl Default for KeywordFilter {
    fn default() -> Self {
        Self::new(vec!["sorry".into(), "apologize".into()])
    }
}

impl KeywordFilter {
    pub fn new(keywords: Vec<String>) -> Self {
        Self {
            keywords: keywords.into_iter().map(|k| k.to_lowercase()).collect(),
        }
    }

    pub fn keywords(&self) -> &[String] {
        &self.keywords
    }

    pub fn is_meaningless(&self, answer: &str) -> bool {
        let lower = answer.to_lowercase();
        self.keywords.iter().any(|k| lower.contains(k.as_str()))
    }
}

fn fraction(hits: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        hits as f64 / n as f64
    }
}

/// Share of results that finished with an answer free of filter keywords.
pub fn pass_rate(results: &[RolloutResult], filter: &KeywordFilter) -> f64 {
    let hits = results
        .iter()
        .filter(|r| {
            r.outcome == Outcome::Pass
                && !r.final_answer.as_deref().is_some_and(|a| filter.is_meaningless(a))
        })
        .count();
    fraction(hits, results.len())
}

fn answer_history_credit(world: &World, r: &RolloutResult) -> Option<(bool, f64)> {
    let task = world.task(&r.task_id).ok()?;
    let leaf = r.tree.nodes().find(|n| n.kind == NodeKind::FinishAnswer)?;
    let state = r.tree.state_at(leaf.id).ok()?;
    let goals = world.goal_state(task, &state.history);
    Some((goals.all_satisfied, goals.partial_credit))
}

/// Solvability-aware pass rate: an answer counts when it satisfies every
/// sub-goal, or when the task could not have been solved anyway.
pub fn pass_rate_v2(results: &[RolloutResult], world: &World) -> f64 {
    let hits = results
        .iter()
        .filter(|r| {
            let Some((all, _)) = answer_history_credit(world, r) else {
                return false;
            };
            let solvable = world.task(&r.task_id).map(|t| t.solvable).unwrap_or(true);
            all || !solvable
        })
        .count();
    fraction(hits, results.len())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preference {
    PreferA,
    PreferB,
    Tie,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub preference: Preference,
    pub rationale: String,
}

/// Compares two solutions of the same task.
///
/// An LLM-backed judge plugs in here by implementing this trait outside the
/// core crate; nothing in core performs network calls.
pub trait Judge: Sync {
    fn name(&self) -> &str;
    fn judge(&self, a: &RolloutResult, b: &RolloutResult) -> JudgeVerdict;
}

fn by_steps(a: &RolloutResult, b: &RolloutResult, prefix: String) -> JudgeVerdict {
    use std::cmp::Ordering::*;
    let preference = match a.actions_used.cmp(&b.actions_used) {
        Less => Preference::PreferA,
        Greater => Preference::PreferB,
        Equal => Preference::Tie,
    };
    JudgeVerdict {
        preference,
        rationale: format!("{prefix}; steps {} vs {}", a.actions_used, b.actions_used),
    }
}

/// Ground-truth judge: more sub-goals satisfied on the answered path wins,
/// then fewer search actions. A stand-in for the model-based judge.
pub struct OracleJudge<'a> {
    pub world: &'a World,
}

impl Judge for OracleJudge<'_> {
    fn name(&self) -> &str {
        "oracle (ground-truth goals, then fewer steps)"
    }

    fn judge(&self, a: &RolloutResult, b: &RolloutResult) -> JudgeVerdict {
        let ca = answer_history_credit(self.world, a).map_or(0.0, |c| c.1);
        let cb = answer_history_credit(self.world, b).map_or(0.0, |c| c.1);
        let prefix = format!("credit {ca:.3} vs {cb:.3}");
        if ca > cb {
            JudgeVerdict { preference: Preference::PreferA, rationale: prefix }
        } else if cb > ca {
            JudgeVerdict { preference: Preference::PreferB, rationale: prefix }
        } else {
            by_steps(a, b, prefix)
        }
    }
}

/// Prefers a keyword-clean answer, then fewer steps.
pub struct KeywordJudge {
    pub filter: KeywordFilter,
}

impl Judge for KeywordJudge {
    fn name(&self) -> &str {
        "keyword"
    }

    fn judge(&self, a: &RolloutResult, b: &RolloutResult) -> JudgeVerdict {
        let ok = |r: &RolloutResult| pass_rate(std::slice::from_ref(r), &self.filter) > 0.0;
        let (pa, pb) = (ok(a), ok(b));
        let prefix = format!("passed {pa} vs {pb}");
        match (pa, pb) {
            (true, false) => JudgeVerdict { preference: Preference::PreferA, rationale: prefix },
            (false, true) => JudgeVerdict { preference: Preference::PreferB, rationale: prefix },
            _ => by_steps(a, b, prefix),
        }
    }
}

/// Fraction of tasks where `a` is preferred; ties count one half.
pub fn win_rate(a: &[RolloutResult], b: &[RolloutResult], judge: &dyn Judge) -> Result<f64, EvalError> {
    use rayon::prelude::*;

    let index_b: BTreeMap<&str, &RolloutResult> = b.iter().map(|r| (r.task_id.as_str(), r)).collect();
    let index_a: BTreeMap<&str, &RolloutResult> = a.iter().map(|r| (r.task_id.as_str(), r)).collect();
    if let Some(r) = b.iter().find(|r| !index_a.contains_key(r.task_id.as_str())) {
        return Err(EvalError::UnpairedTask(r.task_id.clone()));
    }
    let pairs: Vec<(&RolloutResult, &RolloutResult)> = a
        .iter()
        .map(|ra| {
            index_b
                .get(ra.task_id.as_str())
                .map(|rb| (ra, *rb))
                .ok_or_else(|| EvalError::UnpairedTask(ra.task_id.clone()))
        })
        .collect::<Result<_, _>>()?;
    let scores: Vec<f64> = pairs
        .par_iter()
        .map(|(ra, rb)| match judge.judge(ra, rb).preference {
            Preference::PreferA => 1.0,
            Preference::Tie => 0.5,
            Preference::PreferB => 0.0,
        })
        .collect();
    Ok(if scores.is_empty() { 0.0 } else { scores.iter().sum::<f64>() / scores.len() as f64 })
}

/// Mean `actions_used` over Finish-terminated results. GiveUp endings count
/// unless `pass_only` is set.
pub fn avg_steps(results: &[RolloutResult], pass_only: bool) -> Result<f64, EvalError> {
    let steps: Vec<f64> = results
        .iter()
        .filter(|r| match r.outcome {
            Outcome::Pass => true,
            Outcome::GiveUp => !pass_only,
            Outcome::BudgetExhausted => false,
        })
        .map(|r| r.actions_used as f64)
        .collect();
    if steps.is_empty() {
        return Err(EvalError::NoQualifyingSamples);
    }
    Ok(steps.iter().sum::<f64>() / steps.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImprovementKind {
    /// Relative reduction in percent; lower is better.
    Steps,
    /// Difference in percentage points; higher is better.
    Rate,
}

pub fn improvement(baseline: f64, treated: f64, kind: ImprovementKind) -> Result<f64, EvalError> {
    if baseline == 0.0 {
        return Err(EvalError::ZeroBaseline);
    }
    Ok(match kind {
        ImprovementKind::Steps => (baseline - treated) / baseline * 100.0,
        ImprovementKind::Rate => (treated - baseline) * 100.0,
    })
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    /// Scenario label, or "Avg".
    pub scenario: String,
    pub n: usize,
    pub pass_rate: f64,
    pub pass_rate_v2: f64,
    pub win_rate: Option<f64>,
    pub avg_steps: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub judge: Option<String>,
    pub config_hash: String,
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
}

pub struct ReportInputs<'a> {
    pub world: &'a World,
    pub filter: &'a KeywordFilter,
    pub judge: Option<&'a dyn Judge>,
    pub pass_only_steps: bool,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = xs.into_iter().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl MetricsReport {
    /// Per-scenario metrics; the Avg row is the unweighted mean of the
    /// scenario rows. `reference` enables the win-rate column.
    pub fn compute(
        model: impl Into<String>,
        config_hash: impl Into<String>,
        seed: u64,
        results: &[RolloutResult],
        reference: Option<&[RolloutResult]>,
        inputs: &ReportInputs<'_>,
    ) -> Result<Self, EvalError> {
        let scenario_of = |r: &RolloutResult| inputs.world.task(&r.task_id).ok().and_then(|t| t.scenario);
        let mut rows = Vec::new();
        for scenario in Scenario::ALL {
            let mine: Vec<RolloutResult> =
                results.iter().filter(|r| scenario_of(r) == Some(scenario)).cloned().collect();
            if mine.is_empty() {
                continue;
            }
            let win = match (reference, inputs.judge) {
                (Some(reference), Some(judge)) => {
                    let theirs: Vec<RolloutResult> =
                        reference.iter().filter(|r| scenario_of(r) == Some(scenario)).cloned().collect();
                    Some(win_rate(&mine, &theirs, judge)?)
                }
                _ => None,
            };
            rows.push(MetricsRow {
                scenario: scenario.label().to_string(),
                n: mine.len(),
                pass_rate: pass_rate(&mine, inputs.filter),
                pass_rate_v2: pass_rate_v2(&mine, inputs.world),
                win_rate: win,
                avg_steps: avg_steps(&mine, inputs.pass_only_steps).ok(),
            });
        }
        let avg = MetricsRow {
            scenario: "Avg".into(),
            n: rows.iter().map(|r| r.n).sum(),
            pass_rate: mean(rows.iter().map(|r| r.pass_rate)).unwrap_or(0.0),
            pass_rate_v2: mean(rows.iter().map(|r| r.pass_rate_v2)).unwrap_or(0.0),
            win_rate: if rows.iter().all(|r| r.win_rate.is_some()) {
                mean(rows.iter().filter_map(|r| r.win_rate))
            } else {
                None
            },
            avg_steps: mean(rows.iter().filter_map(|r| r.avg_steps)),
        };
        rows.push(avg);
        Ok(Self {
            model: model.into(),
            judge: reference.and(inputs.judge).map(|j| j.name().to_string()),
            config_hash: config_hash.into(),
            seed,
            rows,
        })
    }

    pub fn row(&self, scenario: &str) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.scenario == scenario)
    }

    pub fn average(&self) -> &MetricsRow {
        self.row("Avg").expect("report always has an Avg row")
    }

    /// One JSON object per row.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            let rec = serde_json::json!({
                "model": self.model,
                "judge": self.judge,
                "config_hash": self.config_hash,
                "seed": self.seed,
                "row": row,
            });
            out.push_str(&rec.to_string());
            out.push('\n');
        }
        out
    }

    pub fn render_table(&self) -> String {
        let mut out = format!("model: {}  seed: {}  config: {}\n", self.model, self.seed, self.config_hash);
        if let Some(j) = &self.judge {
            let _ = writeln!(out, "win-rate judge: {j}");
        }
        let _ = writeln!(
            out,
            "{:<10} {:>5} {:>10} {:>13} {:>9} {:>10}",
            "scenario", "n", "pass_rate", "pass_rate_v2", "win_rate", "avg_steps"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<10} {:>5} {:>10.4} {:>13.4} {:>9} {:>10}",
                r.scenario,
                r.n,
                r.pass_rate,
                r.pass_rate_v2,
                r.win_rate.map_or("-".into(), |w| format!("{w:.4}")),
                r.avg_steps.map_or("-".into(), |s| format!("{s:.2}")),
            );
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    /// Sample standard deviation (n-1); zero for a single value.
    pub fn of(xs: &[f64]) -> Option<Self> {
        let n = xs.len();
        let mean = mean(xs.iter().copied())?;
        let var = if n > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Some(Self { mean, std: var.sqrt(), n })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub scenario: String,
    pub pass_rate: MeanStd,
    pub pass_rate_v2: MeanStd,
    pub win_rate: Option<MeanStd>,
    pub avg_steps: Option<MeanStd>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub model: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<AggregateRow>,
}

/// Mean ± std across per-seed reports of the same model.
pub fn aggregate(reports: &[MetricsReport]) -> Result<AggregateReport, EvalError> {
    let first = reports.first().ok_or(EvalError::NoReports)?;
    let rows = first
        .rows
        .iter()
        .map(|template| {
            let cells: Vec<&MetricsRow> = reports.iter().filter_map(|r| r.row(&template.scenario)).collect();
            let col = |f: &dyn Fn(&MetricsRow) -> Option<f64>| {
                let xs: Vec<f64> = cells.iter().filter_map(|c| f(c)).collect();
                MeanStd::of(&xs)
            };
            AggregateRow {
                scenario: template.scenario.clone(),
                pass_rate: col(&|c| Some(c.pass_rate)).expect("at least one report"),
                pass_rate_v2: col(&|c| Some(c.pass_rate_v2)).expect("at least one report"),
                win_rate: col(&|c| c.win_rate),
                avg_steps: col(&|c| c.avg_steps),
            }
        })
        .collect();
    Ok(AggregateReport {
        model: first.model.clone(),
        config_hash: first.config_hash.clone(),
        seeds: reports.iter().map(|r| r.seed).collect(),
        rows,
    })
}

impl AggregateReport {
    pub fn render_table(&self) -> String {
        let ms = |m: &MeanStd| format!("{:.4}±{:.4}", m.mean, m.std);
        let mut out = format!("model: {}  seeds: {:?}  config: {}\n", self.model, self.seeds, self.config_hash);
        let _ = writeln!(
            out,
            "{:<10} {:>16} {:>16} {:>16} {:>16}",
            "scenario", "pass_rate", "pass_rate_v2", "win_rate", "avg_steps"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<10} {:>16} {:>16} {:>16} {:>16}",
                r.scenario,
                ms(&r.pass_rate),
                ms(&r.pass_rate_v2),
                r.win_rate.as_ref().map_or("-".into(), ms),
                r.avg_steps
                    .as_ref()
                    .map_or("-".into(), |m| format!("{:.2}±{:.2}", m.mean, m.std)),
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::DecisionTree;

    fn result(id: &str, outcome: Outcome, answer: Option<&str>, steps: usize) -> RolloutResult {
        RolloutResult {
            task_id: id.into(),
            seed: 0,
            tree: DecisionTree::with_root("q"),
            outcome,
            final_answer: answer.map(str::to_string),
            actions_used: steps,
            success_path_steps: None,
            candidates: vec![],
            masked_at_choice: BTreeMap::new(),
        }
    }

    #[test]
    fn pass_rate_counts_clean_answers() {
        let rs = vec![
            result("a", Outcome::Pass, Some("done"), 3),
            result("b", Outcome::Pass, Some("Sorry I cannot"), 3),
            result("c", Outcome::Pass, Some("here"), 3),
            result("d", Outcome::GiveUp, None, 3),
        ];
        assert_eq!(pass_rate(&rs, &KeywordFilter::default()), 0.5);
        assert_eq!(pass_rate(&rs, &KeywordFilter::new(vec![])), 0.75);
        let gave_up = vec![result("a", Outcome::GiveUp, None, 1)];
        assert_eq!(pass_rate(&gave_up, &KeywordFilter::default()), 0.0);
        assert_eq!(pass_rate(&[], &KeywordFilter::default()), 0.0);
    }

    #[test]
    fn keyword_filter_ignores_case() {
        let f = KeywordFilter::default();
        assert!(f.is_meaningless("We APOLOGIZE"));
        assert!(!f.is_meaningless("all good"));
    }

    #[test]
    fn avg_steps_cases() {
        let rs = vec![
            result("a", Outcome::Pass, Some("x"), 10),
            result("b", Outcome::GiveUp, None, 30),
            result("c", Outcome::BudgetExhausted, None, 200),
        ];
        assert_eq!(avg_steps(&rs, false), Ok(20.0));
        assert_eq!(avg_steps(&rs, true), Ok(10.0));
        assert_eq!(avg_steps(&rs[2..], false), Err(EvalError::NoQualifyingSamples));
    }

    #[test]
    fn improvement_values() {
        let steps = improvement(32.06, 22.62, ImprovementKind::Steps).unwrap();
        assert!((steps - 29.44).abs() <= 0.01, "{steps}");
        let mistral = improvement(27.22, 22.39, ImprovementKind::Steps).unwrap();
        assert!((mistral - 17.74).abs() <= 0.01, "{mistral}");
        assert_eq!(improvement(5.0, 5.0, ImprovementKind::Steps), Ok(0.0));
        assert!((improvement(0.40, 0.52, ImprovementKind::Rate).unwrap() - 12.0).abs() < 1e-9);
        assert_eq!(improvement(0.0, 1.0, ImprovementKind::Rate), Err(EvalError::ZeroBaseline));
    }

    #[test]
    fn keyword_judge_and_ties() {
        let judge = KeywordJudge { filter: KeywordFilter::default() };
        let a = vec![result("t1", Outcome::Pass, Some("ok"), 5), result("t2", Outcome::GiveUp, None, 5)];
        let b = vec![result("t2", Outcome::Pass, Some("ok"), 9), result("t1", Outcome::Pass, Some("ok"), 5)];
        assert_eq!(win_rate(&a, &a, &judge), Ok(0.5));
        // t1 ties, t2 goes to b.
        assert_eq!(win_rate(&a, &b, &judge), Ok(0.25));
        assert_eq!(win_rate(&b, &a, &judge), Ok(0.75));
        let short = vec![result("t1", Outcome::Pass, Some("ok"), 5)];
        assert_eq!(win_rate(&a, &short, &judge), Err(EvalError::UnpairedTask("t2".into())));
        assert_eq!(win_rate(&short, &a, &judge), Err(EvalError::UnpairedTask("t2".into())));
    }

    #[test]
    fn mean_std_matches_hand_computation() {
        let m = MeanStd::of(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.mean, 2.5);
        assert!((m.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(MeanStd::of(&[7.0]).unwrap().std, 0.0);
        assert!(MeanStd::of(&[]).is_none());
    }
}
