//! Training orchestration: a supervised phase on labeled data, then repeated
//! cycles of selection, pseudo-labeling, promotion and continued training.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::losses::{segmentation_loss_with_grad, total_loss_with_grad};
use crate::metrics::dice_score;
use crate::nn::{apply_gradients, embed_sample, predict_mask, LatentFeatures, Model, ModelConfig, OptimizerState};
use crate::pairing::{sample_pair, sample_single, PairPolicy};
use crate::pool::{DatasetPool, HiddenTruth, Provenance, Sample};
use crate::proximity::{build_graph, select};
use crate::volume::Mask;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    #[default]
    Popcorn,
    /// Proximity selection without the consistency term.
    NoCr,
    /// Uniform random selection, same schedule and loss as `Popcorn`.
    RandomSelect,
    /// Single-patch Dice training on labeled data only.
    Baseline,
    /// Pair training with the consistency term on labeled data only.
    BaselineCr,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Popcorn,
        Strategy::NoCr,
        Strategy::RandomSelect,
        Strategy::Baseline,
        Strategy::BaselineCr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Popcorn => "popcorn",
            Strategy::NoCr => "no-cr",
            Strategy::RandomSelect => "random-select",
            Strategy::Baseline => "baseline",
            Strategy::BaselineCr => "baseline-cr",
        }
    }

    pub fn runs_cycles(self) -> bool {
        !matches!(self, Strategy::Baseline | Strategy::BaselineCr)
    }

    /// Weight of the consistency term, or `None` for single-patch training.
    pub fn effective_alpha(self, alpha: f64) -> Option<f64> {
        match self {
            Strategy::Baseline => None,
            Strategy::NoCr => Some(0.0),
            _ => Some(alpha),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::config("trainer.strategy", format!("unknown strategy `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub strategy: Strategy,
    /// Samples promoted per cycle.
    pub k: usize,
    /// Epochs trained between promotions.
    pub n: usize,
    /// Neighbours summed in the proximity score.
    pub p: usize,
    pub alpha: f64,
    pub threshold: f64,
    pub initial_epochs: usize,
    /// Initial-phase epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    /// Pairs per optimizer step.
    pub batch_size: usize,
    pub lr: f64,
    /// Stop after this many cycles even if unlabeled samples remain.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_cycles: Option<u32>,
    /// Fraction of labeled samples held out for early stopping.
    pub validation_fraction: f64,
    /// Set from the run's global seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Popcorn,
            k: 200,
            n: 2,
            p: 5,
            alpha: 0.2,
            threshold: 0.5,
            initial_epochs: 100,
            patience: 10,
            batch_size: 4,
            lr: 1e-4,
            max_cycles: None,
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("trainer.k", self.k), ("trainer.n", self.n), ("trainer.p", self.p)];
        for (field, v) in positive {
            if v < 1 {
                return Err(Error::config(field, "must be >= 1"));
            }
        }
        if self.batch_size < 1 {
            return Err(Error::config("trainer.batch_size", "must be >= 1"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("trainer.alpha", "must be finite and >= 0"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config("trainer.threshold", "must lie in (0, 1)"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("trainer.lr", "must be finite and > 0"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::config("trainer.validation_fraction", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Number of samples promoted in each cycle: `ceil(m / k)` cycles, the last
/// one taking the remainder.
pub fn cycle_schedule(m: usize, k: usize) -> Vec<usize> {
    assert!(k >= 1, "k must be >= 1");
    let mut left = m;
    let mut sizes = Vec::with_capacity(m.div_ceil(k));
    while left > 0 {
        let take = k.min(left);
        sizes.push(take);
        left -= take;
    }
    sizes
}

fn id_hash(id: &str) -> [u8; 32] {
    Sha256::digest(id.as_bytes()).into()
}

/// Hold out `round(fraction * n)` labeled samples, clamped to `[1, n - 1]`
/// (none when `n < 2` or `fraction == 0`), chosen by the SHA-256 of their ids.
pub fn split_validation(labeled: Vec<Sample>, fraction: f64) -> (Vec<Sample>, Vec<Sample>) {
    let n = labeled.len();
    if n < 2 || fraction <= 0.0 {
        return (labeled, Vec::new());
    }
    let n_val = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut ranked: Vec<(usize, [u8; 32])> = labeled.iter().map(|s| id_hash(s.id())).enumerate().collect();
    ranked.sort_by_key(|r| r.1);
    let held: Vec<usize> = ranked[..n_val].iter().map(|(i, _)| *i).collect();
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (i, s) in labeled.into_iter().enumerate() {
        if held.contains(&i) {
            val.push(s);
        } else {
            train.push(s);
        }
    }
    (train, val)
}

/// Pseudo-label each sample with the current model, in input order.
pub fn assign_pseudo_labels(model: &Model, samples: &[&Sample], threshold: f64) -> Result<Vec<Mask>> {
    samples
        .par_iter()
        .map(|s| predict_mask(model, s.volume(), threshold))
        .collect()
}

/// Mean Dice of the model's masks against each sample's mask.
pub fn mean_dice(model: &Model, samples: &[Sample], threshold: f64) -> Result<Option<f64>> {
    if samples.is_empty() {
        return Ok(None);
    }
    let scores = samples
        .par_iter()
        .map(|s| {
            let truth = s
                .mask()
                .ok_or_else(|| Error::config("evaluation", format!("sample `{}` has no mask", s.id())))?;
            dice_score(&predict_mask(model, s.volume(), threshold)?, truth)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(scores.iter().sum::<f64>() / scores.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Initial,
    Cycle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: Phase,
    pub cycle: u32,
    pub epoch: u32,
    pub steps: usize,
    pub mean_total_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_reg_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation_dice: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialLog {
    pub epochs_run: u32,
    /// Epoch whose parameters were kept; 0 means the initialization.
    pub best_epoch: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation_dice: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_dice: Option<f64>,
    pub model_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleLog {
    pub cycle: u32,
    pub selected_ids: Vec<String>,
    /// Proximity scores of the selected ids; empty for random selection.
    pub scores: Vec<f64>,
    pub mean_total_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_reg_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation_dice: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_dice: Option<f64>,
    /// Mean Dice of the new pseudo-labels against held-back truth, when available.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pseudo_label_dice: Option<f64>,
    /// Sizes of (training, unlabeled) after promotion.
    pub pool_sizes: (usize, usize),
    /// Parameters that produced the embeddings and pseudo-labels.
    pub labeling_model_hash: String,
    pub trained_model_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Promotion {
    pub cycle: u32,
    pub ids: Vec<String>,
    pub masks: Vec<Mask>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub initial_done: bool,
    pub cycles_completed: u32,
    pub finished: bool,
}

/// Everything needed to continue a run exactly.
#[derive(Debug, Clone)]
pub struct TrainerState {
    pub model: Model,
    pub optimizer: OptimizerState,
    pub rng: ChaCha8Rng,
    pub pool: DatasetPool,
    pub progress: Progress,
    pub promotions: Vec<Promotion>,
    pub initial_log: Option<InitialLog>,
    pub cycle_logs: Vec<CycleLog>,
    pub epoch_logs: Vec<EpochRecord>,
}

impl TrainerState {
    /// Fresh state: model and sampling RNG both derived from `config.seed`.
    pub fn new(config: &TrainerConfig, model_config: ModelConfig, pool: DatasetPool) -> Result<Self> {
        let model = Model::new(model_config, config.seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Self {
            optimizer: OptimizerState::with_lr(model.num_params(), config.lr),
            model,
            rng,
            pool,
            progress: Progress::default(),
            promotions: Vec::new(),
            initial_log: None,
            cycle_logs: Vec::new(),
            epoch_logs: Vec::new(),
        })
    }

    /// Number of log records emitted so far.
    pub fn record_count(&self) -> usize {
        self.epoch_logs.len() + usize::from(self.initial_log.is_some()) + self.cycle_logs.len()
    }
}

/// One line of the structured run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogRecord {
    Epoch(EpochRecord),
    Initial(InitialLog),
    Cycle(CycleLog),
}

impl TrainerState {
    /// All log records in emission order.
    pub fn records(&self) -> Vec<LogRecord> {
        let mut out = Vec::with_capacity(self.record_count());
        let mut epochs = self.epoch_logs.iter().peekable();
        while let Some(e) = epochs.next_if(|e| e.phase == Phase::Initial) {
            out.push(LogRecord::Epoch(e.clone()));
        }
        if let Some(init) = &self.initial_log {
            out.push(LogRecord::Initial(init.clone()));
        }
        for c in &self.cycle_logs {
            while let Some(e) = epochs.next_if(|e| e.cycle == c.cycle) {
                out.push(LogRecord::Epoch(e.clone()));
            }
            out.push(LogRecord::Cycle(c.clone()));
        }
        out.extend(epochs.map(|e| LogRecord::Epoch(e.clone())));
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Halt,
}

/// Receives log records as they are produced and the state at every
/// checkpoint boundary (after the initial phase and after each cycle).
pub trait Observer {
    fn record(&mut self, _record: &LogRecord) -> Result<()> {
        Ok(())
    }

    fn checkpoint(&mut self, _state: &TrainerState) -> Result<Control> {
        Ok(Control::Continue)
    }
}

impl Observer for () {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Finished,
    Halted,
}

#[derive(Debug, Default)]
struct EpochStats {
    steps: usize,
    total: f64,
    reg: Option<f64>,
}

pub struct Trainer<'a> {
    config: TrainerConfig,
    augment: AugmentConfig,
    policy: PairPolicy,
    validation: &'a [Sample],
    test: &'a [Sample],
    hidden: Option<&'a HiddenTruth>,
    state: TrainerState,
}

impl<'a> Trainer<'a> {
    pub fn new(
        config: TrainerConfig,
        augment: AugmentConfig,
        policy: PairPolicy,
        state: TrainerState,
        validation: &'a [Sample],
        test: &'a [Sample],
    ) -> Result<Self> {
        config.validate()?;
        augment.validate()?;
        policy.validate()?;
        let pool_ids = state.pool.training().iter().chain(state.pool.unlabeled()).map(Sample::id);
        for id in pool_ids {
            if validation.iter().any(|v| v.id() == id) {
                return Err(Error::DuplicateId(id.to_string()));
            }
        }
        Ok(Self {
            config,
            augment,
            policy,
            validation,
            test,
            hidden: None,
            state,
        })
    }

    /// Truth for unlabeled samples, used only to log pseudo-label quality.
    pub fn with_hidden_truth(mut self, hidden: &'a HiddenTruth) -> Self {
        self.hidden = Some(hidden);
        self
    }

    pub fn state(&self) -> &TrainerState {
        &self.state
    }

    pub fn into_state(self) -> TrainerState {
        self.state
    }

    fn emit(&mut self, observer: &mut dyn Observer, record: LogRecord) -> Result<()> {
        observer.record(&record)?;
        match record {
            LogRecord::Epoch(e) => self.state.epoch_logs.push(e),
            LogRecord::Initial(i) => self.state.initial_log = Some(i),
            LogRecord::Cycle(c) => self.state.cycle_logs.push(c),
        }
        Ok(())
    }

    /// Run (or continue) until every unlabeled sample is promoted, the cycle
    /// cap is reached, or the observer asks to halt.
    pub fn run(&mut self, observer: &mut dyn Observer) -> Result<RunStatus> {
        if !self.state.progress.initial_done {
            self.train_initial(observer)?;
            self.state.progress.initial_done = true;
            self.state.progress.finished = self.cycles_exhausted();
            if observer.checkpoint(&self.state)? == Control::Halt && !self.state.progress.finished {
                return Ok(RunStatus::Halted);
            }
        }
        while !self.state.progress.finished {
            self.run_cycle(observer)?;
            self.state.progress.finished = self.cycles_exhausted();
            if observer.checkpoint(&self.state)? == Control::Halt && !self.state.progress.finished {
                return Ok(RunStatus::Halted);
            }
        }
        Ok(RunStatus::Finished)
    }

    fn cycles_exhausted(&self) -> bool {
        !self.config.strategy.runs_cycles()
            || self.state.pool.unlabeled().is_empty()
            || self
                .config
                .max_cycles
                .is_some_and(|m| self.state.progress.cycles_completed >= m)
    }

    fn train_epoch(&mut self) -> Result<EpochStats> {
        let bs = self.config.batch_size;
        let steps = self.state.pool.training().len().div_ceil(bs);
        let patch = self.state.model.config().patch_size.clone();
        let alpha = self.config.strategy.effective_alpha(self.config.alpha);
        let mut stats = EpochStats {
            steps,
            reg: alpha.map(|_| 0.0),
            ..EpochStats::default()
        };
        for _ in 0..steps {
            let state = &mut self.state;
            let results: Vec<(f64, Option<f64>, Vec<f64>)> = match alpha {
                Some(alpha) => {
                    let pairs = (0..bs)
                        .map(|_| sample_pair(&state.pool, &self.policy, &self.augment, &patch, &mut state.rng))
                        .collect::<Result<Vec<_>>>()?;
                    let model = &state.model;
                    pairs
                        .par_iter()
                        .map(|pair| {
                            let (report, grads) = total_loss_with_grad(model, pair, alpha)?;
                            Ok((report.total, Some(report.reg), grads))
                        })
                        .collect::<Result<_>>()?
                }
                None => {
                    // Two single patches per pair slot keeps the patch count per step equal.
                    let singles = (0..2 * bs)
                        .map(|_| sample_single(&state.pool, &self.policy, &self.augment, &patch, &mut state.rng))
                        .collect::<Result<Vec<_>>>()?;
                    let model = &state.model;
                    singles
                        .par_iter()
                        .map(|(x, y)| {
                            let (loss, grads) = segmentation_loss_with_grad(model, x, y)?;
                            Ok((loss, None, grads))
                        })
                        .collect::<Result<_>>()?
                }
            };
            let scale = 1.0 / bs as f64;
            let mut grads = vec![0.0; state.model.num_params()];
            let mut step_total = 0.0;
            let mut step_reg = 0.0;
            for (total, reg, g) in &results {
                step_total += total;
                step_reg += reg.unwrap_or(0.0);
                for (acc, v) in grads.iter_mut().zip(g) {
                    *acc += v;
                }
            }
            grads.iter_mut().for_each(|g| *g *= scale);
            apply_gradients(&mut state.model, &grads, &mut state.optimizer)?;
            stats.total += step_total * scale;
            if let Some(r) = stats.reg.as_mut() {
                *r += step_reg / results.len() as f64;
            }
        }
        let n = steps.max(1) as f64;
        stats.total /= n;
        if let Some(r) = stats.reg.as_mut() {
            *r /= n;
        }
        Ok(stats)
    }

    /// Supervised phase with early stopping on validation Dice; keeps the best
    /// parameters (and matching optimizer state).
    pub fn train_initial(&mut self, observer: &mut dyn Observer) -> Result<()> {
        let training = self.state.pool.training();
        if training.is_empty() {
            return Err(Error::Empty("labeled training set"));
        }
        if let Some(s) = training.iter().find(|s| s.provenance() != Provenance::Labeled) {
            return Err(Error::config(
                "training",
                format!("initial training expects labeled samples only, found `{}`", s.id()),
            ));
        }
        let threshold = self.config.threshold;
        let mut best_dice = mean_dice(&self.state.model, self.validation, threshold)?;
        let mut best = (self.state.model.params().to_vec(), self.state.optimizer.clone(), 0u32);
        let mut since_best = 0;
        let mut epochs_run = 0;
        for epoch in 1..=self.config.initial_epochs as u32 {
            let stats = self.train_epoch()?;
            epochs_run = epoch;
            let vd = mean_dice(&self.state.model, self.validation, threshold)?;
            self.emit(
                observer,
                LogRecord::Epoch(EpochRecord {
                    phase: Phase::Initial,
                    cycle: 0,
                    epoch,
                    steps: stats.steps,
                    mean_total_loss: stats.total,
                    mean_reg_loss: stats.reg,
                    validation_dice: vd,
                }),
            )?;
            if let (Some(vd), Some(bd)) = (vd, best_dice) {
                if vd > bd {
                    best_dice = Some(vd);
                    best = (self.state.model.params().to_vec(), self.state.optimizer.clone(), epoch);
                    since_best = 0;
                } else {
                    since_best += 1;
                    if self.config.patience > 0 && since_best >= self.config.patience {
                        break;
                    }
                }
            }
        }
        let best_epoch = if best_dice.is_some() {
            let (params, optimizer, epoch) = best;
            self.state.model.set_params(params)?;
            self.state.optimizer = optimizer;
            epoch
        } else {
            epochs_run
        };
        let test_dice = mean_dice(&self.state.model, self.test, threshold)?;
        let record = InitialLog {
            epochs_run,
            best_epoch,
            validation_dice: best_dice,
            test_dice,
            model_hash: self.state.model.state_hash(),
        };
        self.emit(observer, LogRecord::Initial(record))
    }

    fn embed_all(&self, samples: &[Sample]) -> Result<Vec<(String, LatentFeatures)>> {
        samples
            .par_iter()
            .map(|s| Ok((s.id().to_string(), embed_sample(&self.state.model, s.volume())?)))
            .collect()
    }

    fn choose(&mut self, k: usize) -> Result<(Vec<String>, Vec<f64>)> {
        match self.config.strategy {
            Strategy::RandomSelect => {
                let unlabeled = self.state.pool.unlabeled();
                let picked = index::sample(&mut self.state.rng, unlabeled.len(), k);
                Ok((picked.iter().map(|i| unlabeled[i].id().to_string()).collect(), Vec::new()))
            }
            _ => {
                let u = self.embed_all(self.state.pool.unlabeled())?;
                let t = self.embed_all(self.state.pool.training())?;
                let graph = build_graph(&u, &t)?;
                let r = select(&graph, k, self.config.p)?;
                Ok((r.selected_ids, r.scores))
            }
        }
    }

    /// One selection / pseudo-label / promotion / training cycle.
    pub fn run_cycle(&mut self, observer: &mut dyn Observer) -> Result<()> {
        let unlabeled_len = self.state.pool.unlabeled().len();
        if unlabeled_len == 0 {
            return Err(Error::Empty("unlabeled pool"));
        }
        let cycle = self.state.progress.cycles_completed + 1;
        let k = self.config.k.min(unlabeled_len);
        let labeling_model_hash = self.state.model.state_hash();
        let (ids, scores) = self.choose(k)?;

        let chosen: Vec<&Sample> = ids
            .iter()
            .map(|id| {
                self.state
                    .pool
                    .unlabeled()
                    .iter()
                    .find(|s| s.id() == id)
                    .ok_or_else(|| Error::UnknownId(id.clone()))
            })
            .collect::<Result<_>>()?;
        let masks = assign_pseudo_labels(&self.state.model, &chosen, self.config.threshold)?;
        let pseudo_label_dice = match self.hidden {
            Some(h) => {
                let mut sum = 0.0;
                let mut n = 0;
                for (id, m) in ids.iter().zip(&masks) {
                    if let Some(truth) = h.get(id) {
                        sum += dice_score(m, truth)?;
                        n += 1;
                    }
                }
                (n > 0).then(|| sum / n as f64)
            }
            None => None,
        };
        self.state.pool.promote(&ids, masks.clone(), cycle)?;
        self.state.promotions.push(Promotion {
            cycle,
            ids: ids.clone(),
            masks,
        });

        let mut total = 0.0;
        let mut reg: Option<f64> = None;
        for epoch in 1..=self.config.n as u32 {
            let stats = self.train_epoch()?;
            total += stats.total;
            reg = stats.reg.map(|r| reg.unwrap_or(0.0) + r);
            self.emit(
                observer,
                LogRecord::Epoch(EpochRecord {
                    phase: Phase::Cycle,
                    cycle,
                    epoch,
                    steps: stats.steps,
                    mean_total_loss: stats.total,
                    mean_reg_loss: stats.reg,
                    validation_dice: None,
                }),
            )?;
        }
        let n = self.config.n as f64;
        let threshold = self.config.threshold;
        let log = CycleLog {
            cycle,
            selected_ids: ids,
            scores,
            mean_total_loss: total / n,
            mean_reg_loss: reg.map(|r| r / n),
            validation_dice: mean_dice(&self.state.model, self.validation, threshold)?,
            test_dice: mean_dice(&self.state.model, self.test, threshold)?,
            pseudo_label_dice,
            pool_sizes: self.state.pool.sizes(),
            labeling_model_hash,
            trained_model_hash: self.state.model.state_hash(),
        };
        self.state.progress.cycles_completed = cycle;
        self.emit(observer, LogRecord::Cycle(log))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use crate::volume::Volume;

    #[test]
    fn schedule_arithmetic() {
        assert_eq!(cycle_schedule(5, 2), [2, 2, 1]);
        let s = cycle_schedule(2901, 200);
        assert_eq!(s.len(), 15);
        assert_eq!(*s.last().unwrap(), 101);
        assert_eq!(s.iter().sum::<usize>(), 2901);
        assert!(cycle_schedule(0, 3).is_empty());
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!("popcorn2".parse::<Strategy>().is_err());
        assert_eq!(Strategy::NoCr.effective_alpha(0.2), Some(0.0));
        assert_eq!(Strategy::Baseline.effective_alpha(0.2), None);
        assert_eq!(Strategy::BaselineCr.effective_alpha(0.2), Some(0.2));
    }

    #[test]
    fn config_validation_names_fields() {
        let bad = TrainerConfig {
            k: 0,
            ..TrainerConfig::default()
        };
        assert!(bad.validate().unwrap_err().to_string().contains("trainer.k"));
        let bad = TrainerConfig {
            alpha: -1.0,
            ..TrainerConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    fn tiny_sample(id: &str, value: f64) -> Sample {
        let v = Volume::new(vec![8, 8], vec![value; 64]).unwrap();
        Sample::labeled(id, v, Mask::zeros(vec![8, 8]).unwrap()).unwrap()
    }

    #[test]
    fn validation_split_is_by_id() {
        let labeled: Vec<Sample> = (0..5).map(|i| tiny_sample(&format!("lab-{i}"), 0.0)).collect();
        let (train, val) = split_validation(labeled.clone(), 0.2);
        assert_eq!((train.len(), val.len()), (4, 1));
        let mut reversed = labeled.clone();
        reversed.reverse();
        let (_, val2) = split_validation(reversed, 0.2);
        assert_eq!(val[0].id(), val2[0].id());
        let (train, val) = split_validation(labeled[..1].to_vec(), 0.5);
        assert_eq!((train.len(), val.len()), (1, 0));
        let (train, val) = split_validation(labeled, 0.99);
        assert_eq!((train.len(), val.len()), (1, 4));
    }

    fn constant_model(bias: f64) -> Model {
        let cfg = ModelConfig {
            patch_size: vec![8, 8],
            base_filters: 4,
            activation: Activation::LeakyRelu,
            ..ModelConfig::default()
        };
        let mut m = Model::new(cfg, 0).unwrap();
        let head_bias = m.param_specs().iter().find(|s| s.name == "head.bias").unwrap().offset;
        let head_w = m.param_specs().iter().find(|s| s.name == "head.weight").unwrap().clone();
        let params = m.params_mut();
        params[head_w.offset..head_w.offset + head_w.len()].fill(0.0);
        params[head_bias] = bias;
        m
    }

    #[test]
    fn pseudo_labels_follow_threshold() {
        let samples = [
            Sample::unlabeled("u0", Volume::new(vec![16, 8], (0..128).map(f64::from).collect()).unwrap()),
            Sample::unlabeled("u1", Volume::new(vec![8, 8], vec![1.0; 64]).unwrap()),
        ];
        let refs: Vec<&Sample> = samples.iter().collect();
        let logit = |p: f64| (p / (1.0 - p)).ln();
        let low = assign_pseudo_labels(&constant_model(logit(0.4)), &refs, 0.5).unwrap();
        assert!(low.iter().all(|m| m.count_ones() == 0));
        assert_eq!(low[0].shape(), [16, 8]);
        let high = constant_model(logit(0.6));
        let a = assign_pseudo_labels(&high, &refs, 0.5).unwrap();
        assert!(a.iter().all(|m| m.count_ones() == m.len()));
        assert_eq!(a, assign_pseudo_labels(&high, &refs, 0.5).unwrap());
    }

    #[test]
    fn records_interleave_in_emission_order() {
        let labeled = vec![tiny_sample("a", 0.0), tiny_sample("b", 1.0)];
        let pool = DatasetPool::new(labeled, vec![]).unwrap();
        let mut state = TrainerState::new(&TrainerConfig::default(), constant_model(0.0).config().clone(), pool).unwrap();
        let epoch = |phase, cycle, epoch| EpochRecord {
            phase,
            cycle,
            epoch,
            steps: 1,
            mean_total_loss: 0.0,
            mean_reg_loss: None,
            validation_dice: None,
        };
        state.epoch_logs = vec![
            epoch(Phase::Initial, 0, 1),
            epoch(Phase::Cycle, 1, 1),
            epoch(Phase::Cycle, 1, 2),
        ];
        state.initial_log = Some(InitialLog {
            epochs_run: 1,
            best_epoch: 1,
            validation_dice: None,
            test_dice: None,
            model_hash: String::new(),
        });
        let kinds: Vec<&str> = state
            .records()
            .iter()
            .map(|r| match r {
                LogRecord::Epoch(_) => "e",
                LogRecord::Initial(_) => "i",
                LogRecord::Cycle(_) => "c",
            })
            .collect();
        assert_eq!(kinds, ["e", "i", "e", "e"]);
        assert_eq!(state.record_count(), 4);
    }
}
