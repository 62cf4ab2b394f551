//! GRPO over the tabular policy, rewarded by corpus grounding.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::policy::{Completion, Token, ToyPolicy};
use super::world::{generate_world, ProcedureGrammar, Prompt, StepId, World};
use crate::alignment::{grounding_score, score_pool, AlignConfig, StepSequence};
use crate::corpus::CorpusIndex;
use crate::embedder::{Embedder, HashFeatureEmbedder};
use crate::error::{Error, Result};
use crate::matrix::EmbeddingMatrix;
use crate::reward::{breakdown, group_advantages, BaselinePool, RewardBreakdown, RewardConfig};

/// How the KL penalty to the reference enters the surrogate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlEstimator {
    /// Per sampled token, `q/p - ln(q/p) - 1`, as in common GRPO code.
    K3,
    /// Exact `KL(p || q)` over the whole action row at each visited state.
    #[default]
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub group_size: usize,
    pub kl_beta: f64,
    pub kl_estimator: KlEstimator,
    pub clip_ratio: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Maximum completion length.
    pub horizon: usize,
    /// Prompts per GRPO step.
    pub batch_size: usize,
    pub n_narrations: usize,
    pub n_prompts: usize,
    pub temperature: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            group_size: 4,
            kl_beta: 0.04,
            kl_estimator: KlEstimator::Exact,
            clip_ratio: 0.30,
            learning_rate: 0.05,
            iterations: 600,
            seed: 0,
            horizon: 6,
            batch_size: 32,
            n_narrations: 500,
            n_prompts: 400,
            temperature: 1.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::InvalidConfig("group_size must be at least 2".into()));
        }
        if !(self.kl_beta >= 0.0) {
            return Err(Error::InvalidConfig("kl_beta must be >= 0".into()));
        }
        if !(self.clip_ratio > 0.0 && self.clip_ratio < 1.0) {
            return Err(Error::InvalidConfig("clip_ratio must lie in (0, 1)".into()));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be >= 0".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::InvalidConfig("training needs a positive temperature".into()));
        }
        if self.horizon == 0 || self.batch_size == 0 || self.n_prompts == 0 {
            return Err(Error::InvalidConfig(
                "horizon, batch_size and n_prompts must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Grounded {
    score: f64,
    best: usize,
    pool: Vec<(usize, f64)>,
}

/// Rewards step-id sequences against a corpus, memoizing grounding scores.
pub struct SimScorer {
    index: CorpusIndex,
    step_vectors: EmbeddingMatrix,
    vocab: Vec<String>,
    acfg: AlignConfig,
    rcfg: RewardConfig,
    cache: Mutex<HashMap<Vec<StepId>, Grounded>>,
}

impl SimScorer {
    pub fn new(
        index: CorpusIndex,
        vocab: &[String],
        embedder: &dyn Embedder,
        acfg: AlignConfig,
        rcfg: RewardConfig,
    ) -> Result<Self> {
        acfg.validate()?;
        rcfg.validate()?;
        if embedder.dim() != index.dim() {
            return Err(Error::DimMismatch {
                expected: index.dim(),
                found: embedder.dim(),
            });
        }
        Ok(Self {
            index,
            step_vectors: embedder.embed_all(vocab),
            vocab: vocab.to_vec(),
            acfg,
            rcfg,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn index(&self) -> &CorpusIndex {
        &self.index
    }

    pub fn sequence(&self, ids: &[StepId]) -> StepSequence {
        let mut rows = EmbeddingMatrix::empty(self.step_vectors.dim());
        for &id in ids {
            rows.push_row(self.step_vectors.row(id)).expect("same dim");
        }
        StepSequence::new(ids.iter().map(|&i| self.vocab[i].clone()).collect(), rows).expect("unit rows")
    }

    fn grounding(&self, ids: &[StepId]) -> Result<Grounded> {
        if let Some(g) = self.cache.lock().expect("cache poisoned").get(ids) {
            return Ok(g.clone());
        }
        let g = grounding_score(&self.sequence(ids), &self.index, &self.acfg)?;
        let grounded = Grounded {
            score: g.score,
            best: g.best.record_idx,
            pool: g.pool_ids(),
        };
        self.cache
            .lock()
            .expect("cache poisoned")
            .insert(ids.to_vec(), grounded.clone());
        Ok(grounded)
    }

    /// Same quantity as `reward::compute_reward` on the embedded step texts.
    pub fn reward(&self, history: &[StepId], completion: &[StepId]) -> Result<RewardBreakdown> {
        if history.is_empty() {
            return Err(Error::Empty("history must contain at least one step"));
        }
        let full_ids: Vec<StepId> = history.iter().chain(completion).copied().collect();
        let full = self.grounding(&full_ids)?;
        let hist = match self.rcfg.baseline {
            BaselinePool::Independent => self.grounding(history)?,
            BaselinePool::Shared => {
                let g = score_pool(&self.sequence(history), &self.index, &full.pool, &self.acfg)?;
                Grounded {
                    score: g.score,
                    best: g.best.record_idx,
                    pool: full.pool.clone(),
                }
            }
        };
        Ok(breakdown(full.score, hist.score, full.best, hist.best, &self.rcfg))
    }
}

/// One prompt's sampled group with its standardized advantages.
#[derive(Debug, Clone)]
pub struct Group {
    pub completions: Vec<Completion>,
    pub advantages: Vec<f64>,
}

/// Clipped-ratio surrogate with a KL penalty, averaged per token then per group.
///
/// `policy` supplies the current probabilities, `old` the sampling-time
/// probabilities in the ratio, and `reference` the KL anchor.
pub fn surrogate(policy: &ToyPolicy, old: &ToyPolicy, reference: &ToyPolicy, groups: &[Group], cfg: &SimConfig) -> f64 {
    let mut total = 0.0;
    for_each_token(groups, |w, adv, tok| {
        let p = policy.probs(tok.state);
        let p_old = old.probs(tok.state);
        let q = reference.probs(tok.state);
        let r = p[tok.action] / p_old[tok.action];
        let clipped = r.clamp(1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio);
        let penalty = match cfg.kl_estimator {
            KlEstimator::K3 => k3(p[tok.action], q[tok.action]),
            KlEstimator::Exact => kl(&p, &q),
        };
        total += w * ((r * adv).min(clipped * adv) - cfg.kl_beta * penalty);
    });
    total
}

/// Analytic gradient of [`surrogate`] with respect to `policy`'s logits.
pub fn surrogate_gradient(
    policy: &ToyPolicy,
    old: &ToyPolicy,
    reference: &ToyPolicy,
    groups: &[Group],
    cfg: &SimConfig,
) -> Vec<f64> {
    let n = policy.n_actions();
    let inv_t = 1.0 / policy.temperature();
    let mut grad = vec![0.0; policy.logits().len()];
    for_each_token(groups, |w, adv, tok| {
        let p = policy.probs(tok.state);
        let p_old = old.probs(tok.state);
        let q = reference.probs(tok.state);
        let r = p[tok.action] / p_old[tok.action];
        let clipped = r.clamp(1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio);
        let g = &mut grad[tok.state * n..(tok.state + 1) * n];
        // d r / d z_b = r (1[b = a] - p_b) / T, live only when the unclipped branch is the min
        if r * adv <= clipped * adv {
            for (b, gb) in g.iter_mut().enumerate() {
                let onehot = if b == tok.action { 1.0 } else { 0.0 };
                *gb += w * adv * r * (onehot - p[b]) * inv_t;
            }
        }
        if cfg.kl_beta > 0.0 {
            match cfg.kl_estimator {
                KlEstimator::K3 => {
                    // d k3 / d z_b = (1 - q_a / p_a) (1[b = a] - p_b) / T
                    let c = 1.0 - q[tok.action] / p[tok.action];
                    for (b, gb) in g.iter_mut().enumerate() {
                        let onehot = if b == tok.action { 1.0 } else { 0.0 };
                        *gb -= w * cfg.kl_beta * c * (onehot - p[b]) * inv_t;
                    }
                }
                KlEstimator::Exact => {
                    // d KL(p || q) / d z_b = p_b (ln(p_b / q_b) - KL) / T
                    let k = kl(&p, &q);
                    for (b, gb) in g.iter_mut().enumerate() {
                        let lr = if p[b] > 0.0 { (p[b] / q[b]).ln() } else { 0.0 };
                        *gb -= w * cfg.kl_beta * p[b] * (lr - k) * inv_t;
                    }
                }
            }
        }
    });
    grad
}

fn for_each_token(groups: &[Group], mut f: impl FnMut(f64, f64, &Token)) {
    let b = groups.len() as f64;
    for group in groups {
        let g = group.completions.len() as f64;
        for (c, &adv) in group.completions.iter().zip(&group.advantages) {
            if c.tokens.is_empty() {
                continue;
            }
            let w = 1.0 / (b * g * c.tokens.len() as f64);
            for tok in &c.tokens {
                f(w, adv, tok);
            }
        }
    }
}

fn k3(p: f64, q: f64) -> f64 {
    let ratio = q / p;
    ratio - ratio.ln() - 1.0
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pb, _)| pb > 0.0)
        .map(|(&pb, &qb)| pb * (pb / qb).ln())
        .sum()
}

/// Lazy Adam ascent on the policy logits.
///
/// Coordinates with a zero gradient keep their parameters and moments, and
/// each coordinate counts its own steps for bias correction. States a batch
/// never visits therefore stay put instead of coasting on stale momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: Vec<i32>,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: vec![0; n],
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn ascend(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        for (i, (x, &g)) in params.iter_mut().zip(grad).enumerate() {
            if g == 0.0 {
                continue;
            }
            self.t[i] += 1;
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / (1.0 - self.beta1.powi(self.t[i]));
            let v_hat = *v / (1.0 - self.beta2.powi(self.t[i]));
            *x += lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub mean_reward: f64,
    /// Token-averaged `KL(policy || reference)` at visited states, before the update.
    pub mean_kl: f64,
    /// Fraction of completions whose relative progress met the gate.
    pub gate_rate: f64,
}

/// Sample, score and standardize one batch of prompts.
pub fn collect_groups(
    policy: &ToyPolicy,
    prompts: &[&Prompt],
    scorer: &SimScorer,
    cfg: &SimConfig,
    seed: u64,
) -> Result<(Vec<Group>, Vec<Vec<RewardBreakdown>>)> {
    let rollouts: Vec<Vec<Completion>> = prompts
        .iter()
        .enumerate()
        .map(|(i, p)| policy.rollout(p, cfg.group_size, cfg.horizon, derive_seed(seed, i as u64)))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..prompts.len())
        .flat_map(|i| (0..cfg.group_size).map(move |g| (i, g)))
        .collect();
    let flat = jobs
        .par_iter()
        .map(|&(i, g)| scorer.reward(&prompts[i].history, &rollouts[i][g].steps))
        .collect::<Result<Vec<_>>>()?;

    let mut groups = Vec::with_capacity(prompts.len());
    let mut breakdowns = Vec::with_capacity(prompts.len());
    let mut flat = flat.into_iter();
    for completions in rollouts {
        let rewards: Vec<RewardBreakdown> = flat.by_ref().take(cfg.group_size).collect();
        let r: Vec<f64> = rewards.iter().map(|b| b.reward).collect();
        groups.push(Group {
            completions,
            advantages: group_advantages(&r)?.advantages,
        });
        breakdowns.push(rewards);
    }
    Ok((groups, breakdowns))
}

/// One GRPO update: rollout, score, standardize, single clipped-ratio epoch.
pub fn grpo_step(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    optimizer: &mut Adam,
    prompts: &[&Prompt],
    scorer: &SimScorer,
    cfg: &SimConfig,
    seed: u64,
) -> Result<(ToyPolicy, StepStats)> {
    cfg.validate()?;
    if !policy.same_shape(reference) {
        return Err(Error::InvalidInput(
            "policy and reference tables differ in shape".into(),
        ));
    }
    let (groups, breakdowns) = collect_groups(policy, prompts, scorer, cfg, seed)?;
    let grad = surrogate_gradient(policy, policy, reference, &groups, cfg);
    let mut next = policy.clone();
    optimizer.ascend(next.logits_mut(), &grad, cfg.learning_rate);

    let all: Vec<&RewardBreakdown> = breakdowns.iter().flatten().collect();
    let n = all.len() as f64;
    let mut kl_sum = 0.0;
    let mut kl_count = 0usize;
    for g in &groups {
        for c in &g.completions {
            for t in &c.tokens {
                kl_sum += kl(&policy.probs(t.state), &reference.probs(t.state));
                kl_count += 1;
            }
        }
    }
    let stats = StepStats {
        mean_reward: all.iter().map(|b| b.reward).sum::<f64>() / n,
        mean_kl: if kl_count > 0 { kl_sum / kl_count as f64 } else { 0.0 },
        gate_rate: all.iter().filter(|b| b.gated).count() as f64 / n,
    };
    Ok((next, stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub mean_reward: f64,
    pub mean_kl: f64,
    pub gate_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingCurve {
    pub points: Vec<CurvePoint>,
}

impl TrainingCurve {
    fn decile_mean(points: &[CurvePoint]) -> f64 {
        points.iter().map(|p| p.mean_reward).sum::<f64>() / points.len().max(1) as f64
    }

    fn decile_len(&self) -> usize {
        (self.points.len() / 10).max(1)
    }

    /// Mean reward over the first 10% of iterations.
    pub fn first_decile_mean(&self) -> f64 {
        let n = self.decile_len().min(self.points.len());
        Self::decile_mean(&self.points[..n])
    }

    /// Mean reward over the last 10% of iterations.
    pub fn last_decile_mean(&self) -> f64 {
        let n = self.decile_len().min(self.points.len());
        Self::decile_mean(&self.points[self.points.len() - n..])
    }

    pub fn improvement(&self) -> f64 {
        self.last_decile_mean() - self.first_decile_mean()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,mean_reward,mean_kl,gate_rate\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{}\n",
                p.iteration, p.mean_reward, p.mean_kl, p.gate_rate
            ));
        }
        out
    }
}

pub struct TrainOutcome {
    pub curve: TrainingCurve,
    pub policy: ToyPolicy,
    pub reference: ToyPolicy,
    pub world: World,
    pub scorer: SimScorer,
}

/// Completion modes found at one swappable pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapModes {
    pub task: usize,
    /// Index of the first step of the pair within the template.
    pub position: usize,
    /// Completions with probability at least the threshold, most likely first.
    pub modes: Vec<(Vec<StepId>, f64)>,
}

/// Prompt each swappable pair with the canonical prefix before it and list
/// the completions the policy emits with probability at least `min_prob`.
pub fn swap_modes(policy: &ToyPolicy, grammar: &ProcedureGrammar, horizon: usize, min_prob: f64) -> Vec<SwapModes> {
    let mut out = Vec::new();
    for (task, t) in grammar.tasks.iter().enumerate() {
        for &position in &t.swappable {
            let prompt = Prompt {
                task,
                history: t.steps[..position].to_vec(),
                reference: t.steps[position..].to_vec(),
            };
            out.push(SwapModes {
                task,
                position,
                modes: policy.modes(&prompt, horizon, min_prob),
            });
        }
    }
    out
}

/// Number of absolute positions a policy needs for `grammar` and `horizon`.
pub fn policy_positions(grammar: &ProcedureGrammar, horizon: usize) -> usize {
    grammar.max_task_len() + horizon
}

/// RL-only training from a uniform policy, which also serves as the KL reference.
pub fn train(cfg: &SimConfig, grammar: &ProcedureGrammar) -> Result<TrainOutcome> {
    train_with(cfg, grammar, AlignConfig::default(), RewardConfig::default())
}

pub fn train_with(
    cfg: &SimConfig,
    grammar: &ProcedureGrammar,
    acfg: AlignConfig,
    rcfg: RewardConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let embedder = HashFeatureEmbedder::default();
    let world = generate_world(grammar, cfg.n_narrations, cfg.n_prompts, &embedder, cfg.seed)?;
    let scorer = SimScorer::new(world.index.clone(), &grammar.vocab, &embedder, acfg, rcfg)?;
    let reference = ToyPolicy::uniform(
        grammar.tasks.len(),
        grammar.vocab.len(),
        policy_positions(grammar, cfg.horizon),
        cfg.temperature,
    )?;
    let mut policy = reference.clone();
    let mut adam = Adam::new(policy.logits().len());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, u64::MAX));
    let mut curve = TrainingCurve::default();

    for it in 0..cfg.iterations {
        let batch: Vec<&Prompt> = (0..cfg.batch_size)
            .map(|_| &world.prompts[rng.gen_range(0..world.prompts.len())])
            .collect();
        let (next, stats) = grpo_step(
            &policy,
            &reference,
            &mut adam,
            &batch,
            &scorer,
            cfg,
            derive_seed(cfg.seed, it as u64),
        )?;
        policy = next;
        curve.points.push(CurvePoint {
            iteration: it,
            mean_reward: stats.mean_reward,
            mean_kl: stats.mean_kl,
            gate_rate: stats.gate_rate,
        });
    }
    Ok(TrainOutcome {
        curve,
        policy,
        reference,
        world,
        scorer,
    })
}

/// The reward-hacking probe: restate the history instead of continuing it.
pub fn history_copy(prompt: &Prompt) -> Vec<StepId> {
    prompt.history.clone()
}

/// splitmix64 over `base ^ f(salt)`.
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
