//! Tabular softmax policy over step ids.
//!
//! The policy state is `(task, absolute position, previous step)`. Keying on
//! the previous step lets a swappable pair keep both of its orders without
//! leaking mass onto repeats of the same step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::world::{Prompt, StepId};
use crate::error::{Error, Result};

/// Logits stored row-per-state; probabilities are always a fresh softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    n_tasks: usize,
    n_positions: usize,
    vocab: usize,
    temperature: f64,
    logits: Vec<f64>,
}

/// One sampled decision: the policy state and the action taken there.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token {
    pub state: usize,
    pub action: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub steps: Vec<StepId>,
    pub tokens: Vec<Token>,
}

impl ToyPolicy {
    /// All-zero logits: uniform over the vocabulary plus the stop action.
    pub fn uniform(n_tasks: usize, vocab: usize, n_positions: usize, temperature: f64) -> Result<Self> {
        if n_tasks == 0 || vocab == 0 || n_positions == 0 {
            return Err(Error::InvalidConfig(
                "policy table needs tasks, vocabulary and positions".into(),
            ));
        }
        if !(temperature >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "temperature must be >= 0, got {temperature}"
            )));
        }
        let n_states = n_tasks * n_positions * (vocab + 1);
        Ok(Self {
            n_tasks,
            n_positions,
            vocab,
            temperature,
            logits: vec![0.0; n_states * (vocab + 1)],
        })
    }

    pub fn n_actions(&self) -> usize {
        self.vocab + 1
    }

    /// The action that ends a completion.
    pub fn stop(&self) -> usize {
        self.vocab
    }

    pub fn n_states(&self) -> usize {
        self.logits.len() / self.n_actions()
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn set_temperature(&mut self, t: f64) {
        self.temperature = t;
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    /// State id; positions past the table reuse the last position.
    pub fn state(&self, task: usize, position: usize, prev: Option<StepId>) -> usize {
        let pos = position.min(self.n_positions - 1);
        let ctx = prev.map_or(self.vocab, |p| p.min(self.vocab - 1));
        (task * self.n_positions + pos) * (self.vocab + 1) + ctx
    }

    pub fn state_logits(&self, state: usize) -> &[f64] {
        let n = self.n_actions();
        &self.logits[state * n..(state + 1) * n]
    }

    pub fn set_state_logits(&mut self, state: usize, values: &[f64]) {
        let n = self.n_actions();
        self.logits[state * n..(state + 1) * n].copy_from_slice(values);
    }

    /// Softmax of `logits / temperature`; zero temperature is greedy.
    pub fn probs(&self, state: usize) -> Vec<f64> {
        softmax(self.state_logits(state), self.temperature)
    }

    /// Sample `group` completions for `prompt`, each at most `horizon` steps.
    pub fn rollout(&self, prompt: &Prompt, group: usize, horizon: usize, seed: u64) -> Vec<Completion> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..group).map(|_| self.sample_one(prompt, horizon, &mut rng)).collect()
    }

    fn sample_one(&self, prompt: &Prompt, horizon: usize, rng: &mut impl Rng) -> Completion {
        let mut steps = Vec::new();
        let mut tokens = Vec::new();
        let mut prev = prompt.history.last().copied();
        for j in 0..horizon {
            let state = self.state(prompt.task, prompt.history.len() + j, prev);
            let action = sample(&self.probs(state), rng);
            tokens.push(Token { state, action });
            if action == self.stop() {
                break;
            }
            steps.push(action);
            prev = Some(action);
        }
        Completion { steps, tokens }
    }

    /// Probability of emitting exactly `steps` (then stopping, if below horizon).
    pub fn sequence_prob(&self, prompt: &Prompt, steps: &[StepId], horizon: usize) -> f64 {
        let mut p = 1.0;
        let mut prev = prompt.history.last().copied();
        for (j, &s) in steps.iter().enumerate() {
            let state = self.state(prompt.task, prompt.history.len() + j, prev);
            p *= self.probs(state)[s];
            prev = Some(s);
        }
        if steps.len() < horizon {
            let state = self.state(prompt.task, prompt.history.len() + steps.len(), prev);
            p *= self.probs(state)[self.stop()];
        }
        p
    }

    /// Completions with probability at least `min_prob`, most likely first.
    pub fn modes(&self, prompt: &Prompt, horizon: usize, min_prob: f64) -> Vec<(Vec<StepId>, f64)> {
        let mut out = Vec::new();
        let mut prefix = Vec::new();
        self.collect_modes(
            prompt,
            horizon,
            min_prob,
            1.0,
            prompt.history.last().copied(),
            &mut prefix,
            &mut out,
        );
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn collect_modes(
        &self,
        prompt: &Prompt,
        horizon: usize,
        min_prob: f64,
        p: f64,
        prev: Option<StepId>,
        prefix: &mut Vec<StepId>,
        out: &mut Vec<(Vec<StepId>, f64)>,
    ) {
        if prefix.len() == horizon {
            if p >= min_prob {
                out.push((prefix.clone(), p));
            }
            return;
        }
        let state = self.state(prompt.task, prompt.history.len() + prefix.len(), prev);
        let probs = self.probs(state);
        for (a, &pa) in probs.iter().enumerate() {
            let q = p * pa;
            if q < min_prob {
                continue;
            }
            if a == self.stop() {
                out.push((prefix.clone(), q));
            } else {
                prefix.push(a);
                self.collect_modes(prompt, horizon, min_prob, q, Some(a), prefix, out);
                prefix.pop();
            }
        }
    }

    /// Total variation distance between two policies, maximized over states.
    pub fn max_tv(&self, other: &ToyPolicy) -> f64 {
        (0..self.n_states())
            .map(|s| {
                let p = self.probs(s);
                let q = other.probs(s);
                0.5 * p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    pub fn same_shape(&self, other: &ToyPolicy) -> bool {
        self.n_tasks == other.n_tasks && self.n_positions == other.n_positions && self.vocab == other.vocab
    }
}

pub(crate) fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    if temperature == 0.0 {
        let best = argmax(logits);
        let mut p = vec![0.0; logits.len()];
        p[best] = 1.0;
        return p;
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| ((z - max) / temperature).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn sample(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the running sum; take the last nonzero action
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}
