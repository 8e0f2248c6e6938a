//! Supervised fine-tuning and direct preference optimization for the
//! log-linear policy, with the Bradley-Terry reward objective it derives from.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forge::{PairPayload, PreferencePair, SftExample};
use crate::policy::{
    grad_segment_log_prob, segment_log_prob, PolicyError, PolicyParams, ScoredStep, TaskContext,
    FEATURE_DIM,
};
use crate::trajectory::{Decision, ReasoningState};
use crate::world::{World, WorldError};

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("batch is empty")]
    EmptyBatch,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    World(#[from] WorldError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// KL weight.
    pub beta: f64,
    pub sft_lr: f64,
    pub dpo_lr: f64,
    pub sft_epochs: usize,
    pub dpo_epochs: usize,
    pub sft_batch_size: usize,
    pub dpo_batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            sft_lr: 1e-5,
            dpo_lr: 1e-6,
            sft_epochs: 2,
            dpo_epochs: 1,
            sft_batch_size: 16,
            dpo_batch_size: 8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Step sizes for the 16-weight policy. The defaults above were chosen
    /// for billion-parameter models and barely move a linear policy; the
    /// epoch counts, batch sizes and beta are kept.
    pub fn desk_scale() -> Self {
        Self {
            sft_lr: 0.05,
            dpo_lr: 0.5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta must be positive");
        }
        if !(self.sft_lr > 0.0 && self.dpo_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.sft_batch_size == 0 || self.dpo_batch_size == 0 {
            return bad("batch sizes must be positive");
        }
        Ok(())
    }
}

/// One preference pair as recorded decisions. Step-wise pairs hold a
/// single step on each side, path-wise pairs whole segments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpoExample {
    pub preferred: Vec<ScoredStep>,
    pub dispreferred: Vec<ScoredStep>,
}

pub type DpoBatch = [DpoExample];

/// Explicit reward head over the policy's feature space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardModelParams {
    pub weights: Vec<f64>,
}

impl RewardModelParams {
    pub fn zeros() -> Self {
        Self { weights: vec![0.0; FEATURE_DIM] }
    }

    /// Sum of chosen-candidate scores along a segment.
    pub fn reward(&self, segment: &[ScoredStep]) -> f64 {
        segment
            .iter()
            .map(|s| s.candidates.features[s.chosen].dot(&self.weights))
            .sum()
    }

    fn grad_reward(&self, segment: &[ScoredStep]) -> Vec<f64> {
        let mut g = vec![0.0; self.weights.len()];
        for s in segment {
            for (gi, fi) in g.iter_mut().zip(s.candidates.features[s.chosen].0.iter()) {
                *gi += fi;
            }
        }
        g
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log σ(x) = -softplus(-x)`, stable for large |x|.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Bradley-Terry probability that `w` beats `l`.
pub fn bt_probability(r_w: f64, r_l: f64) -> f64 {
    sigmoid(r_w - r_l)
}

/// Mean `-log σ(r(y_w) - r(y_l))` for an arbitrary reward function.
pub fn reward_nll_with<F>(batch: &DpoBatch, reward: F) -> Result<f64, TrainError>
where
    F: Fn(&[ScoredStep]) -> Result<f64, TrainError> + Sync,
{
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let terms: Vec<f64> = batch
        .par_iter()
        .map(|ex| Ok(-log_sigmoid(reward(&ex.preferred)? - reward(&ex.dispreferred)?)))
        .collect::<Result<_, TrainError>>()?;
    Ok(ordered_mean(&terms))
}

pub fn reward_nll(params: &RewardModelParams, batch: &DpoBatch) -> Result<f64, TrainError> {
    reward_nll_with(batch, |seg| Ok(params.reward(seg)))
}

pub fn reward_nll_grad(params: &RewardModelParams, batch: &DpoBatch) -> Result<Vec<f64>, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let per: Vec<Vec<f64>> = batch
        .par_iter()
        .map(|ex| {
            let m = params.reward(&ex.preferred) - params.reward(&ex.dispreferred);
            let s = sigmoid(-m);
            let gw = params.grad_reward(&ex.preferred);
            let gl = params.grad_reward(&ex.dispreferred);
            gw.iter().zip(&gl).map(|(a, b)| -s * (a - b)).collect()
        })
        .collect();
    Ok(ordered_mean_vec(&per, params.weights.len()))
}

/// `β (log π_θ(y|x) - log π_ref(y|x))`; the partition term is omitted
/// because it cancels in every pairwise difference.
pub fn implicit_reward(
    params: &PolicyParams,
    reference: &PolicyParams,
    segment: &[ScoredStep],
    beta: f64,
) -> Result<f64, TrainError> {
    Ok(beta * (segment_log_prob(params, segment)? - segment_log_prob(reference, segment)?))
}

fn dpo_margin(params: &PolicyParams, reference: &PolicyParams, ex: &DpoExample, beta: f64) -> Result<f64, TrainError> {
    Ok(implicit_reward(params, reference, &ex.preferred, beta)?
        - implicit_reward(params, reference, &ex.dispreferred, beta)?)
}

pub fn dpo_loss(params: &PolicyParams, reference: &PolicyParams, batch: &DpoBatch, beta: f64) -> Result<f64, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let terms: Vec<f64> = batch
        .par_iter()
        .map(|ex| Ok(-log_sigmoid(dpo_margin(params, reference, ex, beta)?)))
        .collect::<Result<_, TrainError>>()?;
    Ok(ordered_mean(&terms))
}

/// Mean implicit-reward margin over a batch.
pub fn dpo_margin_mean(params: &PolicyParams, reference: &PolicyParams, batch: &DpoBatch, beta: f64) -> Result<f64, TrainError> {
    let m: Vec<f64> = batch
        .par_iter()
        .map(|ex| dpo_margin(params, reference, ex, beta))
        .collect::<Result<_, _>>()?;
    Ok(ordered_mean(&m))
}

/// Fraction of pairs whose implicit-reward margin is strictly positive.
pub fn positive_margin_fraction(params: &PolicyParams, reference: &PolicyParams, batch: &DpoBatch, beta: f64) -> Result<f64, TrainError> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let mut n = 0;
    for ex in batch {
        if dpo_margin(params, reference, ex, beta)? > 0.0 {
            n += 1;
        }
    }
    Ok(n as f64 / batch.len() as f64)
}

pub fn dpo_grad(params: &PolicyParams, reference: &PolicyParams, batch: &DpoBatch, beta: f64) -> Result<Vec<f64>, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let per: Vec<Vec<f64>> = batch
        .par_iter()
        .map(|ex| {
            let s = sigmoid(-dpo_margin(params, reference, ex, beta)?);
            let gw = grad_segment_log_prob(params, &ex.preferred);
            let gl = grad_segment_log_prob(params, &ex.dispreferred);
            Ok(gw.iter().zip(&gl).map(|(a, b)| -s * beta * (a - b)).collect())
        })
        .collect::<Result<_, TrainError>>()?;
    Ok(ordered_mean_vec(&per, params.weights.len()))
}

/// Mean `-log π_θ(target | state)`.
pub fn sft_loss(params: &PolicyParams, batch: &[ScoredStep]) -> Result<f64, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let terms: Vec<f64> = batch
        .par_iter()
        .map(|s| Ok(-segment_log_prob(params, std::slice::from_ref(s))?))
        .collect::<Result<_, TrainError>>()?;
    Ok(ordered_mean(&terms))
}

pub fn sft_grad(params: &PolicyParams, batch: &[ScoredStep]) -> Result<Vec<f64>, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let per: Vec<Vec<f64>> = batch
        .par_iter()
        .map(|s| grad_segment_log_prob(params, std::slice::from_ref(s)).into_iter().map(|g| -g).collect())
        .collect();
    Ok(ordered_mean_vec(&per, params.weights.len()))
}

// Sequential sums over collected per-example terms keep results independent
// of the worker count.
fn ordered_mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn ordered_mean_vec(rows: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    for r in rows {
        for (a, x) in acc.iter_mut().zip(r) {
            *a += x;
        }
    }
    let n = rows.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

fn norm(g: &[f64]) -> f64 {
    g.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Sft,
    Dpo,
}

/// Per-batch record: loss and gradient norm are measured before the update.
/// Records with `batch: None` summarize the whole training set after an
/// epoch (epoch 0 = before training).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub stage: Stage,
    pub epoch: usize,
    pub batch: Option<usize>,
    pub loss: f64,
    pub grad_norm: f64,
    pub margin_mean: Option<f64>,
}

fn epoch_order(n: usize, seed: u64, stage: Stage, epoch: usize) -> Vec<usize> {
    let salt = match stage {
        Stage::Sft => 0x5f7u64,
        Stage::Dpo => 0xd90u64,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

fn descend(params: &mut PolicyParams, grad: &[f64], lr: f64) {
    for (w, g) in params.weights.iter_mut().zip(grad) {
        *w -= lr * g;
    }
}

/// Mini-batch gradient descent on the behavior-cloning loss.
pub fn train_sft(
    init: &PolicyParams,
    data: &[ScoredStep],
    config: &TrainConfig,
) -> Result<(PolicyParams, Vec<TrainLogRecord>), TrainError> {
    config.validate()?;
    let mut params = init.retagged("sft");
    let mut log = Vec::new();
    if data.is_empty() {
        return Ok((params, log));
    }
    let summary = |params: &PolicyParams, epoch| -> Result<TrainLogRecord, TrainError> {
        Ok(TrainLogRecord {
            stage: Stage::Sft,
            epoch,
            batch: None,
            loss: sft_loss(params, data)?,
            grad_norm: norm(&sft_grad(params, data)?),
            margin_mean: None,
        })
    };
    log.push(summary(&params, 0)?);
    for epoch in 1..=config.sft_epochs {
        let order = epoch_order(data.len(), config.seed, Stage::Sft, epoch);
        for (b, chunk) in order.chunks(config.sft_batch_size).enumerate() {
            let batch: Vec<ScoredStep> = chunk.iter().map(|&i| data[i].clone()).collect();
            let grad = sft_grad(&params, &batch)?;
            log.push(TrainLogRecord {
                stage: Stage::Sft,
                epoch,
                batch: Some(b),
                loss: sft_loss(&params, &batch)?,
                grad_norm: norm(&grad),
                margin_mean: None,
            });
            descend(&mut params, &grad, config.sft_lr);
        }
        log::debug!("sft epoch {epoch} done");
        log.push(summary(&params, epoch)?);
    }
    Ok((params, log))
}

/// DPO against a frozen copy of `sft_params`, starting from the same point.
pub fn train_dpo(
    sft_params: &PolicyParams,
    data: &DpoBatch,
    config: &TrainConfig,
) -> Result<(PolicyParams, Vec<TrainLogRecord>), TrainError> {
    config.validate()?;
    let reference = sft_params.clone();
    let mut params = sft_params.retagged("dpo");
    let mut log = Vec::new();
    if data.is_empty() {
        return Ok((params, log));
    }
    let beta = config.beta;
    let summary = |params: &PolicyParams, epoch| -> Result<TrainLogRecord, TrainError> {
        Ok(TrainLogRecord {
            stage: Stage::Dpo,
            epoch,
            batch: None,
            loss: dpo_loss(params, &reference, data, beta)?,
            grad_norm: norm(&dpo_grad(params, &reference, data, beta)?),
            margin_mean: Some(dpo_margin_mean(params, &reference, data, beta)?),
        })
    };
    let mut pending_summary = vec![summary(&params, 0)?];
    for epoch in 1..=config.dpo_epochs {
        let order = epoch_order(data.len(), config.seed, Stage::Dpo, epoch);
        for (b, chunk) in order.chunks(config.dpo_batch_size).enumerate() {
            let batch: Vec<DpoExample> = chunk.iter().map(|&i| data[i].clone()).collect();
            let grad = dpo_grad(&params, &reference, &batch, beta)?;
            log.push(TrainLogRecord {
                stage: Stage::Dpo,
                epoch,
                batch: Some(b),
                loss: dpo_loss(&params, &reference, &batch, beta)?,
                grad_norm: norm(&grad),
                margin_mean: Some(dpo_margin_mean(&params, &reference, &batch, beta)?),
            });
            descend(&mut params, &grad, config.dpo_lr);
        }
        pending_summary.push(summary(&params, epoch)?);
    }
    // Batch records first so the first line of the log is the first update.
    log.extend(pending_summary);
    Ok((params, log))
}

// ---------------------------------------------------------------------------
// Dataset conversion
// ---------------------------------------------------------------------------

fn replay(ctx: &TaskContext<'_>, state: &mut ReasoningState, steps: &[(Decision, Option<crate::trajectory::ApiResponse>)]) -> Result<Vec<ScoredStep>, TrainError> {
    let mut out = Vec::with_capacity(steps.len());
    for (decision, response) in steps {
        out.push(ctx.step(state, decision)?);
        if let (Decision::Call(a), Some(r)) = (decision, response) {
            state.history.push((a.clone(), r.clone()));
        }
    }
    Ok(out)
}

fn payload_steps(p: &PairPayload) -> Vec<(Decision, Option<crate::trajectory::ApiResponse>)> {
    match p {
        PairPayload::Step(d) => vec![(d.clone(), None)],
        PairPayload::Path(steps) => steps.iter().map(|s| (s.decision.clone(), s.response.clone())).collect(),
    }
}

/// Featurize a preference pair against the task it came from.
pub fn dpo_example(world: &World, pair: &PreferencePair) -> Result<DpoExample, TrainError> {
    let task = world.task(&pair.source_tree)?;
    let ctx = TaskContext::new(world, task);
    let side = |p: &PairPayload| replay(&ctx, &mut pair.context(), &payload_steps(p));
    Ok(DpoExample {
        preferred: side(&pair.preferred)?,
        dispreferred: side(&pair.dispreferred)?,
    })
}

pub fn sft_step(world: &World, ex: &SftExample) -> Result<ScoredStep, TrainError> {
    let task = world.task(&ex.source_tree)?;
    Ok(TaskContext::new(world, task).step(&ex.state, &ex.target)?)
}

pub fn dpo_examples(world: &World, pairs: &[PreferencePair]) -> Result<Vec<DpoExample>, TrainError> {
    pairs.par_iter().map(|p| dpo_example(world, p)).collect()
}

pub fn sft_steps(world: &World, examples: &[SftExample]) -> Result<Vec<ScoredStep>, TrainError> {
    examples.par_iter().map(|e| sft_step(world, e)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{log_prob, FeatureVector, ScoredCandidates};
    use rand::Rng;

    fn random_step(rng: &mut ChaCha8Rng, k: usize) -> ScoredStep {
        let features = (0..k)
            .map(|_| {
                let mut f = [0.0; FEATURE_DIM];
                f.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
                FeatureVector(f)
            })
            .collect();
        ScoredStep {
            candidates: ScoredCandidates::unmasked(features),
            chosen: rng.gen_range(0..k),
        }
    }

    fn random_params(rng: &mut ChaCha8Rng, scale: f64) -> PolicyParams {
        PolicyParams {
            weights: (0..FEATURE_DIM).map(|_| rng.gen_range(-scale..scale)).collect(),
            version_tag: "r".into(),
        }
    }

    /// Step-wise example: both sides share one candidate set.
    fn random_pair(rng: &mut ChaCha8Rng) -> DpoExample {
        let w = random_step(rng, 4);
        let mut l = w.clone();
        l.chosen = (w.chosen + 1) % 4;
        DpoExample { preferred: vec![w], dispreferred: vec![l] }
    }

    #[test]
    fn bt_values() {
        assert_eq!(bt_probability(3.0, 3.0), 0.5);
        assert!((bt_probability(1.0, 0.0) - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!((bt_probability(0.3, -1.2) + bt_probability(-1.2, 0.3) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn log_sigmoid_is_stable() {
        assert!((log_sigmoid(0.0) + std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(log_sigmoid(1000.0), 0.0);
        assert_eq!(log_sigmoid(-1000.0), -1000.0);
        for x in [-5.0, -0.1, 0.7, 12.0] {
            assert!((log_sigmoid(x) - sigmoid(x).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn dpo_loss_is_ln2_at_reference_and_zero_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch: Vec<_> = (0..5).map(|_| random_pair(&mut rng)).collect();
        let p = random_params(&mut rng, 1.0);
        let q = random_params(&mut rng, 1.0);
        assert!((dpo_loss(&p, &p, &batch, 0.5).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((dpo_loss(&p, &q, &batch, 0.0).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(dpo_loss(&p, &q, &[], 0.5), Err(TrainError::EmptyBatch));
    }

    #[test]
    fn dpo_loss_matches_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch: Vec<_> = (0..5).map(|_| random_pair(&mut rng)).collect();
        let p = random_params(&mut rng, 1.0);
        let r = random_params(&mut rng, 1.0);
        let beta = 0.7;
        let mut expected = 0.0;
        for ex in &batch {
            let lp = |params: &PolicyParams, s: &ScoredStep| log_prob(params, &s.candidates, s.chosen).unwrap();
            let m = beta * ((lp(&p, &ex.preferred[0]) - lp(&r, &ex.preferred[0]))
                - (lp(&p, &ex.dispreferred[0]) - lp(&r, &ex.dispreferred[0])));
            expected += (1.0 + (-m).exp()).ln();
        }
        expected /= 5.0;
        assert!((dpo_loss(&p, &r, &batch, beta).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn implicit_reward_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_params(&mut rng, 1.0);
        let r = random_params(&mut rng, 1.0);
        let s = random_step(&mut rng, 2);
        assert_eq!(implicit_reward(&p, &p, std::slice::from_ref(&s), 0.5).unwrap(), 0.0);
        let one = implicit_reward(&p, &r, std::slice::from_ref(&s), 0.5).unwrap();
        let two = implicit_reward(&p, &r, std::slice::from_ref(&s), 1.0).unwrap();
        assert!((two - 2.0 * one).abs() < 1e-12);

        // Two candidates: log π(a) - log π(b) = logit(a) - logit(b).
        let mut other = s.clone();
        other.chosen = 1 - s.chosen;
        let beta = 0.3;
        let diff = implicit_reward(&p, &r, std::slice::from_ref(&s), beta).unwrap()
            - implicit_reward(&p, &r, std::slice::from_ref(&other), beta).unwrap();
        let fa = &s.candidates.features[s.chosen];
        let fb = &s.candidates.features[other.chosen];
        let hand = beta * ((fa.dot(&p.weights) - fb.dot(&p.weights)) - (fa.dot(&r.weights) - fb.dot(&r.weights)));
        assert!((diff - hand).abs() < 1e-12);
    }

    #[test]
    fn symmetric_pairs_have_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_params(&mut rng, 1.0);
        let mut s = random_step(&mut rng, 3);
        s.candidates.features[1] = s.candidates.features[0];
        let mut w = s.clone();
        w.chosen = 0;
        let mut l = s;
        l.chosen = 1;
        let batch = vec![DpoExample { preferred: vec![w], dispreferred: vec![l] }];
        assert!(dpo_grad(&p, &p, &batch, 0.5).unwrap().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn reward_nll_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let batch: Vec<_> = (0..6).map(|_| random_pair(&mut rng)).collect();
        let zero = RewardModelParams::zeros();
        assert!((reward_nll(&zero, &batch).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let phi = RewardModelParams { weights: random_params(&mut rng, 1.0).weights };
        let by_hand: f64 = batch
            .iter()
            .map(|ex| -(bt_probability(phi.reward(&ex.preferred), phi.reward(&ex.dispreferred))).ln())
            .sum::<f64>()
            / 6.0;
        assert!((reward_nll(&phi, &batch).unwrap() - by_hand).abs() < 1e-12);
        assert_eq!(reward_nll(&phi, &[]), Err(TrainError::EmptyBatch));

        // Scaling a separating reward drives the loss down monotonically.
        let ex = random_pair(&mut rng);
        let dir: Vec<f64> = ex.preferred[0].candidates.features[ex.preferred[0].chosen]
            .0
            .iter()
            .zip(ex.dispreferred[0].candidates.features[ex.dispreferred[0].chosen].0.iter())
            .map(|(a, b)| a - b)
            .collect();
        let mut last = f64::INFINITY;
        for k in [0.0, 1.0, 4.0, 16.0, 64.0] {
            let phi = RewardModelParams { weights: dir.iter().map(|d| d * k).collect() };
            let l = reward_nll(&phi, std::slice::from_ref(&ex)).unwrap();
            assert!(l < last);
            last = l;
        }
        assert!(last < 1e-6);
    }

    #[test]
    fn sft_loss_uniform_is_ln_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let batch: Vec<_> = (0..4).map(|_| random_step(&mut rng, 7)).collect();
        let zero = PolicyParams::zeros("z");
        assert!((sft_loss(&zero, &batch).unwrap() - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn descent_step_lowers_dpo_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let batch: Vec<_> = (0..5).map(|_| random_pair(&mut rng)).collect();
            let p = random_params(&mut rng, 1.0);
            let r = random_params(&mut rng, 1.0);
            let g = dpo_grad(&p, &r, &batch, 0.5).unwrap();
            let mut q = p.clone();
            descend(&mut q, &g, 1e-3);
            assert!(dpo_loss(&q, &r, &batch, 0.5).unwrap() < dpo_loss(&p, &r, &batch, 0.5).unwrap());
        }
    }

    #[test]
    fn training_is_deterministic_and_lowers_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let sft: Vec<_> = (0..40).map(|_| random_step(&mut rng, 5)).collect();
        let cfg = TrainConfig::desk_scale();
        let init = PolicyParams::zeros("init");
        let (a, log_a) = train_sft(&init, &sft, &cfg).unwrap();
        let (b, log_b) = train_sft(&init, &sft, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(log_a, log_b);
        assert!(sft_loss(&a, &sft).unwrap() < sft_loss(&init, &sft).unwrap());
        let (same, _) = train_sft(&init, &[], &cfg).unwrap();
        assert_eq!(same.weights, init.weights);

        let pairs: Vec<_> = (0..30).map(|_| random_pair(&mut rng)).collect();
        let (d, log) = train_dpo(&a, &pairs, &cfg).unwrap();
        assert!((log[0].loss - std::f64::consts::LN_2).abs() < 1e-9);
        assert!(log.last().unwrap().margin_mean.unwrap() >= 0.0);
        assert!(positive_margin_fraction(&d, &a, &pairs, cfg.beta).unwrap() > 0.0);
        let zero_epochs = TrainConfig { dpo_epochs: 0, ..cfg.clone() };
        assert_eq!(train_dpo(&a, &pairs, &zero_epochs).unwrap().0.weights, a.weights);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig { beta: 0.0, ..TrainConfig::default() };
        assert!(matches!(bad.validate(), Err(TrainError::Config(_))));
        let bad = TrainConfig { dpo_lr: -1.0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
    }
}
