//! SGD training loop with periodic validation and early stopping on HITS@3.
//!
//! Plain SGD, no momentum or weight decay. One positive answer is drawn
//! uniformly per query occurrence per step; negatives are resampled fresh
//! every epoch pass. The best validation checkpoint is returned.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::kg::{EntityId, SymbolTable};
use crate::model::{
    apply_sgd, backward, backward_into, compile, init_parameters, BatchWorkspace,
    CompiledQuery, Gradients, LossItem, Parameters, Vocab,
};
use crate::sampler::{negatives_from_pool, EvalSample, TrainSample};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// distances to the query only
    Plain,
    /// generalization-weighted positive term
    GenWeighted,
}

impl Objective {
    pub fn as_str(&self) -> &'static str {
        match self {
            Objective::Plain => "plain",
            Objective::GenWeighted => "gen",
        }
    }

    pub fn parse(s: &str) -> Option<Objective> {
        match s {
            "plain" => Some(Objective::Plain),
            "gen" => Some(Objective::GenWeighted),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub d: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub k_negatives: usize,
    pub eval_every: usize,
    pub patience: usize,
    pub gamma: f64,
    pub seed: u64,
    pub objective: Objective,
    pub desk_scale: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            d: 400,
            learning_rate: 1e-4,
            batch_size: 512,
            max_steps: 150_000,
            k_negatives: 32,
            eval_every: 5000,
            patience: 5,
            gamma: 12.0,
            seed: 42,
            objective: Objective::Plain,
            desk_scale: false,
        }
    }
}

impl TrainConfig {
    /// Small configuration that trains in minutes on a laptop; the overrides
    /// are echoed in the run manifest.
    pub fn desk_preset() -> Self {
        TrainConfig {
            d: 32,
            learning_rate: 5e-2,
            batch_size: 128,
            max_steps: 20_000,
            k_negatives: 16,
            eval_every: 2000,
            patience: 5,
            gamma: 4.0,
            desk_scale: true,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0
            || self.batch_size == 0
            || self.max_steps == 0
            || self.k_negatives == 0
            || self.eval_every == 0
            || self.learning_rate <= 0.0
            || self.gamma <= 0.0
        {
            return Err(Error::Config(
                "d, batch_size, max_steps, k_negatives, eval_every, learning_rate and gamma \
                 must all be positive"
                    .into(),
            ));
        }
        Ok(())
    }

    /// Line-based `key = value` syntax.
    pub fn parse(text: &str) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(i + 1, "expected `key = value`"))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| Error::parse(i + 1, format!("bad {what} `{value}`"));
            match key {
                "d" => cfg.d = value.parse().map_err(|_| bad("dimension"))?,
                "learning_rate" => {
                    cfg.learning_rate = value.parse().map_err(|_| bad("learning rate"))?
                }
                "batch_size" => cfg.batch_size = value.parse().map_err(|_| bad("batch size"))?,
                "max_steps" => cfg.max_steps = value.parse().map_err(|_| bad("step count"))?,
                "k_negatives" => {
                    cfg.k_negatives = value.parse().map_err(|_| bad("negative count"))?
                }
                "eval_every" => cfg.eval_every = value.parse().map_err(|_| bad("interval"))?,
                "patience" => cfg.patience = value.parse().map_err(|_| bad("patience"))?,
                "gamma" => cfg.gamma = value.parse().map_err(|_| bad("margin"))?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad("seed"))?,
                "objective" => {
                    cfg.objective =
                        Objective::parse(value).ok_or_else(|| bad("objective"))?
                }
                "desk_scale" => {
                    let want: bool = value.parse().map_err(|_| bad("flag"))?;
                    if want {
                        let seed = cfg.seed;
                        let objective = cfg.objective;
                        cfg = TrainConfig::desk_preset();
                        cfg.seed = seed;
                        cfg.objective = objective;
                    }
                }
                other => {
                    return Err(Error::parse(i + 1, format!("unknown key `{other}`")));
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn render(&self) -> Vec<(String, String)> {
        vec![
            ("d".into(), self.d.to_string()),
            ("learning_rate".into(), format!("{}", self.learning_rate)),
            ("batch_size".into(), self.batch_size.to_string()),
            ("max_steps".into(), self.max_steps.to_string()),
            ("k_negatives".into(), self.k_negatives.to_string()),
            ("eval_every".into(), self.eval_every.to_string()),
            ("patience".into(), self.patience.to_string()),
            ("gamma".into(), format!("{}", self.gamma)),
            ("seed".into(), self.seed.to_string()),
            ("objective".into(), self.objective.as_str().into()),
            ("desk_scale".into(), self.desk_scale.to_string()),
        ]
    }
}

/// Append-only record of a training run: resolved config, input digests,
/// metric history and the best checkpoint pointer.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub config: Vec<(String, String)>,
    pub inputs: Vec<(String, String)>,
    pub history: Vec<(usize, f64)>,
    pub best_step: usize,
    pub stop_reason: String,
}

impl RunManifest {
    pub fn render(&self) -> String {
        let mut out = String::from("# omqa run manifest\n[config]\n");
        for (k, v) in &self.config {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out.push_str("[inputs]\n");
        for (k, v) in &self.inputs {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out.push_str("[history]\n");
        for (step, hits3) in &self.history {
            out.push_str(&format!("step {step} hits3 {hits3:.6}\n"));
        }
        out.push_str(&format!("best_step = {}\n", self.best_step));
        out.push_str(&format!("stop_reason = {}\n", self.stop_reason));
        out
    }
}

#[derive(Debug, Clone)]
pub struct BatchItem {
    pub sample: usize,
    pub positive: EntityId,
    pub negatives: Vec<EntityId>,
}

/// Deterministic batch assembly: uniform shuffling per epoch, one uniform
/// positive per occurrence, k fresh negatives per pair.
pub struct BatchStream<'a> {
    samples: &'a [TrainSample],
    positive_pools: Vec<Vec<EntityId>>,
    negative_pools: Vec<Vec<EntityId>>,
    batch_size: usize,
    k: usize,
    root: Rng,
    draws: Rng,
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
}

impl<'a> BatchStream<'a> {
    pub fn new(
        samples: &'a [TrainSample],
        batch_size: usize,
        k: usize,
        n_entities: usize,
        seed: u64,
    ) -> Result<BatchStream<'a>> {
        if samples.is_empty() {
            return Err(Error::Config("no training samples".into()));
        }
        let positive_pools: Vec<Vec<EntityId>> = samples
            .iter()
            .map(|s| s.positives.iter().copied().collect())
            .collect();
        let negative_pools: Vec<Vec<EntityId>> = samples
            .iter()
            .map(|s| {
                (0..n_entities as u32)
                    .map(EntityId)
                    .filter(|e| !s.positives.contains(e))
                    .collect()
            })
            .collect();
        let root = Rng::seeded(seed);
        let draws = root.derive("draws");
        let mut stream = BatchStream {
            samples,
            positive_pools,
            negative_pools,
            batch_size,
            k,
            root,
            draws,
            order: Vec::new(),
            cursor: 0,
            epoch: 0,
        };
        stream.reshuffle();
        Ok(stream)
    }

    fn reshuffle(&mut self) {
        let mut order: Vec<usize> = (0..self.samples.len()).collect();
        self.root
            .derive(&format!("epoch.{}", self.epoch))
            .shuffle(&mut order);
        self.order = order;
        self.cursor = 0;
        self.epoch += 1;
    }

    /// Up to batch_size items from the current epoch; shorter only at an
    /// epoch boundary.
    pub fn next_batch(&mut self) -> Result<Vec<BatchItem>> {
        if self.cursor >= self.order.len() {
            self.reshuffle();
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let mut items = Vec::with_capacity(end - self.cursor);
        for &si in &self.order[self.cursor..end] {
            let pos_pool = &self.positive_pools[si];
            let positive = pos_pool[self.draws.below(pos_pool.len())];
            let negs = negatives_from_pool(&self.negative_pools[si], self.k, &mut self.draws)?;
            items.push(BatchItem { sample: si, positive, negatives: negs });
        }
        self.cursor = end;
        Ok(items)
    }
}

/// A sample with its query (and generalizations, when the objective wants
/// them) compiled into reusable tapes.
struct Prepped {
    compiled: CompiledQuery,
    gens: Vec<CompiledQuery>,
}

fn prep_samples(
    params: &Parameters,
    samples: &[TrainSample],
    objective: Objective,
) -> Result<Vec<Prepped>> {
    samples
        .iter()
        .map(|s| {
            let compiled = compile(params, &s.query)
                .map_err(|e| Error::Config(format!("sample {}: {e}", s.id)))?;
            let gens = match objective {
                Objective::Plain => Vec::new(),
                Objective::GenWeighted => s
                    .gens
                    .iter()
                    .filter_map(|g| compile(params, g).ok())
                    .collect(),
            };
            Ok(Prepped { compiled, gens })
        })
        .collect()
}

fn loss_items<'a>(
    prepped: &'a [Prepped],
    batch: &'a [BatchItem],
) -> Vec<LossItem<'a>> {
    batch
        .iter()
        .map(|item| {
            let p = &prepped[item.sample];
            LossItem {
                query: &p.compiled,
                gens: &p.gens,
                positive: item.positive,
                negatives: &item.negatives,
            }
        })
        .collect()
}

/// One SGD step on a prepared batch; exposed for the loss-decrease test.
pub fn step_once(
    params: &mut Parameters,
    samples: &[TrainSample],
    batch: &[BatchItem],
    objective: Objective,
    lr: f64,
) -> Result<(f64, Gradients)> {
    let prepped = prep_samples(params, samples, objective)?;
    let items = loss_items(&prepped, batch);
    let (loss, grads) = backward(params, &items)?;
    apply_sgd(params, &grads, lr);
    Ok((loss, grads))
}

/// Train until max_steps or until `patience` consecutive evaluations fail to
/// improve validation HITS@3; returns the best checkpoint and the manifest.
/// `threads` fans the per-batch gradient work out over a fixed chunk grid,
/// so the result is bit-identical for every thread count.
pub fn train(
    config: &TrainConfig,
    samples: &[TrainSample],
    valid: &[EvalSample],
    symbols: &SymbolTable,
    inputs: &BTreeMap<String, String>,
    threads: usize,
) -> Result<(Parameters, RunManifest)> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("no training samples".into()));
    }
    if valid.is_empty() {
        return Err(Error::Config("no validation samples".into()));
    }
    let vocab = Vocab::from_symbols(symbols);
    let n_entities = vocab.entities.len();
    let mut params = init_parameters(vocab, config.d, config.gamma, config.seed);
    let prepped = prep_samples(&params, samples, config.objective)?;
    let mut stream = BatchStream::new(
        samples,
        config.batch_size,
        config.k_negatives,
        n_entities,
        config.seed,
    )?;

    // the strategy tag travels with the samples; echo it in the manifest
    let mut strategies: Vec<&str> =
        samples.iter().map(|s| s.strategy.as_str()).collect();
    strategies.sort_unstable();
    strategies.dedup();
    let strategy_tag = strategies.join("+");

    let mut ws = BatchWorkspace::new(&params);
    let mut best: Option<(f64, usize, Parameters)> = None;
    let mut history: Vec<(usize, f64)> = Vec::new();
    let mut stale = 0usize;
    let mut stop_reason = String::from("max_steps");

    let mut step = 0usize;
    while step < config.max_steps {
        step += 1;
        let batch = stream.next_batch()?;
        let items = loss_items(&prepped, &batch);
        match backward_into(&params, &items, threads, &mut ws) {
            Ok(_) => apply_sgd(&mut params, ws.total(), config.learning_rate),
            Err(Error::Numeric(what)) => {
                stop_reason = format!("diverged ({what}) at step {step}");
                break;
            }
            Err(other) => return Err(other),
        }
        if step % config.eval_every == 0 || step == config.max_steps {
            let (table, _) = evaluate(&params, valid)?;
            let hits3 = table.overall().hits3;
            history.push((step, hits3));
            let improved = best.as_ref().is_none_or(|(b, _, _)| hits3 > *b);
            if improved {
                best = Some((hits3, step, params.clone()));
                stale = 0;
            } else {
                stale += 1;
            }
            if stale >= config.patience {
                stop_reason = format!("early stop at step {step}");
                break;
            }
        }
    }

    let (best_step, best_params) = match best {
        Some((_, s, p)) => (s, p),
        // stopped before the first evaluation: return the live parameters
        None => (step, params),
    };
    let mut config_echo = config.render();
    config_echo.push(("strategy".into(), strategy_tag));
    let manifest = RunManifest {
        config: config_echo,
        inputs: inputs.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
        history,
        best_step,
        stop_reason,
    };
    Ok((best_params, manifest))
}
