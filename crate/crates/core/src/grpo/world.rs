//! Synthetic procedure world: task templates with optional adjacent swaps,
//! noisy narrations emitted from them, and cut-point prompts.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_index, CorpusIndex, EmbeddingSource, NarrationRecord, NarrationSegment};
use crate::embedder::Embedder;
use crate::error::{Error, Result};

pub type StepId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskTemplate {
    pub name: String,
    /// Canonical order.
    pub steps: Vec<StepId>,
    /// Positions `p` such that steps `p` and `p + 1` may appear in either order.
    #[serde(default)]
    pub swappable: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcedureGrammar {
    pub tasks: Vec<TaskTemplate>,
    pub vocab: Vec<String>,
    /// Per-segment probability of a perturbation: half drop, half paraphrase.
    /// A record's final segment is only ever paraphrased.
    pub noise: f64,
}

const PARAPHRASES: &[&str] = &["now {}", "then {}", "{} next", "so {}"];

impl ProcedureGrammar {
    pub fn new(tasks: Vec<TaskTemplate>, vocab: Vec<String>, noise: f64) -> Result<Self> {
        let g = Self { tasks, vocab, noise };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::InvalidConfig("grammar needs at least one task".into()));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::InvalidConfig(format!("noise {} outside [0, 1]", self.noise)));
        }
        for t in &self.tasks {
            if t.steps.len() < 3 {
                return Err(Error::InvalidConfig(format!(
                    "task {:?} has fewer than 3 steps",
                    t.name
                )));
            }
            if let Some(&bad) = t.steps.iter().find(|&&s| s >= self.vocab.len()) {
                return Err(Error::InvalidConfig(format!(
                    "task {:?} uses unknown step {bad}",
                    t.name
                )));
            }
            let mut sw = t.swappable.clone();
            sw.sort_unstable();
            for w in sw.windows(2) {
                if w[1] <= w[0] + 1 {
                    return Err(Error::InvalidConfig(format!("task {:?} has overlapping swaps", t.name)));
                }
            }
            if sw.last().is_some_and(|&p| p + 1 >= t.steps.len()) {
                return Err(Error::InvalidConfig(format!("task {:?} swap past the end", t.name)));
            }
        }
        Ok(())
    }

    /// Three household tasks over an 18-step vocabulary; two tasks carry a swappable pair.
    /// Within a task, step texts and filler words land in distinct hash buckets of the
    /// default embedder, so distinct steps of one task are orthogonal.
    pub fn default_world() -> Self {
        let vocab: Vec<String> = [
            // brew tea
            "boil kettle",
            "rinse teapot",
            "measure leaves",
            "pour hot water",
            "brew",
            "strain tea",
            // omelette
            "crack eggs",
            "whisk briskly",
            "season salt pepper",
            "melt butter",
            "tilt pan",
            "fold omelette",
            // repot
            "dampen roots lightly",
            "lift plant out",
            "loosen root ball",
            "add soil",
            "place in pot",
            "press down",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let tasks = vec![
            TaskTemplate {
                name: "brew tea".into(),
                steps: (0..6).collect(),
                swappable: vec![1],
            },
            TaskTemplate {
                name: "make omelette".into(),
                steps: (6..12).collect(),
                swappable: vec![7 - 6],
            },
            TaskTemplate {
                name: "repot plant".into(),
                steps: (12..18).collect(),
                swappable: vec![],
            },
        ];
        Self {
            tasks,
            vocab,
            noise: 0.2,
        }
    }

    pub fn max_task_len(&self) -> usize {
        self.tasks.iter().map(|t| t.steps.len()).max().unwrap_or(0)
    }

    /// Every valid ordering of a task, canonical first.
    pub fn orderings(&self, task: usize) -> Vec<Vec<StepId>> {
        let t = &self.tasks[task];
        let mut out = vec![t.steps.clone()];
        for &p in &t.swappable {
            let swapped: Vec<_> = out
                .iter()
                .map(|o| {
                    let mut o = o.clone();
                    o.swap(p, p + 1);
                    o
                })
                .collect();
            out.extend(swapped);
        }
        out
    }

    pub fn sample_ordering(&self, task: usize, rng: &mut impl Rng) -> Vec<StepId> {
        let t = &self.tasks[task];
        let mut order = t.steps.clone();
        for &p in &t.swappable {
            if rng.gen_bool(0.5) {
                order.swap(p, p + 1);
            }
        }
        order
    }

    pub fn texts(&self, ids: &[StepId]) -> Vec<String> {
        ids.iter().map(|&i| self.vocab[i].clone()).collect()
    }
}

/// History prefix of one valid ordering plus its remaining steps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub task: usize,
    pub history: Vec<StepId>,
    pub reference: Vec<StepId>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseStats {
    pub segments: usize,
    pub dropped: usize,
    pub paraphrased: usize,
}

#[derive(Debug, Clone)]
pub struct World {
    pub index: CorpusIndex,
    pub narrations: Vec<NarrationRecord>,
    pub prompts: Vec<Prompt>,
    pub noise: NoiseStats,
}

pub fn generate_world(
    grammar: &ProcedureGrammar,
    n_narrations: usize,
    n_prompts: usize,
    embedder: &dyn Embedder,
    seed: u64,
) -> Result<World> {
    grammar.validate()?;
    if n_narrations == 0 {
        return Err(Error::InvalidConfig("n_narrations must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = NoiseStats::default();
    let mut narrations = Vec::with_capacity(n_narrations);

    for r in 0..n_narrations {
        let task = rng.gen_range(0..grammar.tasks.len());
        let order = grammar.sample_ordering(task, &mut rng);
        let mut segments = Vec::with_capacity(order.len());
        let mut t = rng.gen_range(0.0..5.0f64);
        for (i, &step) in order.iter().enumerate() {
            stats.segments += 1;
            let dur = rng.gen_range(2.0..6.0f64);
            let text = if rng.gen_bool(grammar.noise) {
                // the finished result is always narrated, so records never end early
                if i + 1 < order.len() && rng.gen_bool(0.5) {
                    stats.dropped += 1;
                    t += dur;
                    continue;
                }
                stats.paraphrased += 1;
                let tpl = PARAPHRASES.choose(&mut rng).expect("non-empty");
                tpl.replace("{}", &grammar.vocab[step])
            } else {
                grammar.vocab[step].clone()
            };
            segments.push(NarrationSegment {
                start_s: t,
                end_s: t + dur,
                text,
            });
            t += dur + rng.gen_range(0.0..1.0f64);
        }
        narrations.push(NarrationRecord {
            video_id: format!("syn-{r:06}"),
            segments,
        });
    }

    let mut prompts = Vec::with_capacity(n_prompts);
    for _ in 0..n_prompts {
        let task = rng.gen_range(0..grammar.tasks.len());
        let order = grammar.sample_ordering(task, &mut rng);
        let cut = rng.gen_range(1..order.len());
        prompts.push(Prompt {
            task,
            history: order[..cut].to_vec(),
            reference: order[cut..].to_vec(),
        });
    }

    let raw = narrations
        .iter()
        .cloned()
        .enumerate()
        .map(|(i, r)| (i + 1, r))
        .collect();
    let (index, _) = build_index(raw, EmbeddingSource::Compute(embedder))?;
    Ok(World {
        index,
        narrations,
        prompts,
        noise: stats,
    })
}
