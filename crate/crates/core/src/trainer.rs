//! Mini-batch training with augmentation, Adam, and early stopping on the
//! validation split.

use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::corpus::{Corpus, NewsPiece, SplitResult};
use crate::endef::{
    alpha_grid, binary_cross_entropy, init_model, sigmoid, EndefModel, EndefOptions, DEFAULT_ALPHA,
    DEFAULT_BETA, STREAM_DETECTOR_INIT, STREAM_ENTITY_INIT,
};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport, Metric, PredictionSet};
use crate::models::{adam_step, AdamState, EncoderSpec, ScalarModel, Vocabulary};

const STREAM_SHUFFLE: u64 = 3;
const STREAM_AUGMENT: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub alpha: f64,
    pub beta: f64,
    pub early_stop_metric: Metric,
    /// Minimum training-split frequency for a token to enter the vocabulary.
    pub min_freq: usize,
    pub augment: AugmentConfig,
    pub detector: EncoderSpec,
    pub entity_model: EncoderSpec,
    pub endef: EndefOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 64,
            max_epochs: 50,
            patience: 5,
            seed: 0,
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            early_stop_metric: Metric::Macf1,
            min_freq: 2,
            augment: AugmentConfig::default(),
            detector: EncoderSpec::bag_of_embeddings(),
            entity_model: EncoderSpec::bag_of_embeddings(),
            endef: EndefOptions::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr = {} must be positive", self.lr));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) || self.beta.is_nan() || self.beta < 0.0 {
            return bad("alpha must lie in [0, 1] and beta be non-negative".into());
        }
        self.augment.validate()?;
        self.detector.validate()?;
        self.entity_model.validate()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome<M> {
    /// Parameters from the best validation epoch.
    pub model: M,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl<M> TrainOutcome<M> {
    pub fn best_val(&self) -> &EvalReport {
        &self.history[self.best_epoch - 1].val
    }

    pub fn history_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for rec in &self.history {
            out.push_str(&serde_json::to_string(rec)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Which part of a piece a single-branch model reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputView {
    Tokens,
    Entities,
}

pub fn view_ids(model: &ScalarModel, piece: &NewsPiece, view: InputView) -> Vec<usize> {
    match view {
        InputView::Tokens => model.encode(&piece.tokens),
        InputView::Entities => model.vocab().encode_entities(&piece.entities, model.spec().max_len),
    }
}

/// Something the loop can update from a batch and score for validation.
trait Learner: Clone {
    fn step(&mut self, batch: &[NewsPiece], lr: f64) -> Result<f64>;
    fn score(&self, piece: &NewsPiece) -> Result<f64>;
}

#[derive(Clone)]
struct EndefLearner {
    model: EndefModel,
    entity_state: AdamState,
    detector_state: AdamState,
}

impl Learner for EndefLearner {
    fn step(&mut self, batch: &[NewsPiece], lr: f64) -> Result<f64> {
        let out = self.model.loss_total(batch)?;
        adam_step(
            self.model.detector.params_mut().values_mut(),
            &out.grad_detector,
            &mut self.detector_state,
            lr,
        )?;
        adam_step(
            self.model.entity_model.params_mut().values_mut(),
            &out.grad_entity,
            &mut self.entity_state,
            lr,
        )?;
        Ok(out.loss)
    }

    fn score(&self, piece: &NewsPiece) -> Result<f64> {
        self.model.debiased_predict(piece)
    }
}

#[derive(Clone)]
struct SingleLearner {
    model: ScalarModel,
    state: AdamState,
    view: InputView,
}

/// Mean cross-entropy of `sigmoid(logit)` over the batch, with gradient.
pub fn single_model_loss(model: &ScalarModel, batch: &[NewsPiece], view: InputView) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let b = batch.len() as f64;
    let mut grad = vec![0.0; model.num_params()];
    let mut sum = 0.0;
    for piece in batch {
        let pass = model.forward_pass(&view_ids(model, piece, view))?;
        let p = sigmoid(pass.logit());
        let loss = binary_cross_entropy(p, piece.label);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { id: piece.id.clone() });
        }
        sum += loss;
        model.backward_pass(&pass, (p - piece.label.as_f64()) / b, &mut grad)?;
    }
    Ok((sum / b, grad))
}

impl Learner for SingleLearner {
    fn step(&mut self, batch: &[NewsPiece], lr: f64) -> Result<f64> {
        let (loss, grad) = single_model_loss(&self.model, batch, self.view)?;
        adam_step(self.model.params_mut().values_mut(), &grad, &mut self.state, lr)?;
        Ok(loss)
    }

    fn score(&self, piece: &NewsPiece) -> Result<f64> {
        Ok(sigmoid(self.model.forward(&view_ids(&self.model, piece, self.view))?))
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn score_corpus<L: Learner>(learner: &L, corpus: &Corpus) -> Result<PredictionSet> {
    let scores = corpus.iter().map(|p| learner.score(p)).collect::<Result<Vec<_>>>()?;
    PredictionSet::new(scores, corpus.iter().map(|p| p.label).collect())
}

fn run_loop<L: Learner>(
    mut learner: L,
    split: &SplitResult,
    cfg: &TrainConfig,
    max_len: usize,
) -> Result<TrainOutcome<L>> {
    cfg.validate()?;
    for (part, name) in [
        (&split.train, "train"),
        (&split.validation, "validation"),
        (&split.test, "test"),
    ] {
        if part.is_empty() {
            return Err(Error::EmptySplitPart(name));
        }
    }
    let train: Vec<NewsPiece> = split.train.iter().map(|p| p.truncated(max_len)).collect();
    let mut shuffle_rng = stream_rng(cfg.seed, STREAM_SHUFFLE);
    let mut augment_rng = stream_rng(cfg.seed, STREAM_AUGMENT);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, L)> = None;
    let mut stale = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<NewsPiece> = chunk
                .iter()
                .map(|&i| cfg.augment.apply(&train[i], &mut augment_rng))
                .collect();
            let loss = learner.step(&batch, cfg.lr).map_err(|e| Error::Diverged {
                epoch,
                batch: batch_idx,
                source: Box::new(e),
            })?;
            loss_sum += loss * batch.len() as f64;
        }
        let val = evaluate(&score_corpus(&learner, &split.validation)?)?;
        let value = val.get(cfg.early_stop_metric);
        log::debug!("epoch {epoch}: loss {:.5} val {:?} {value:.4}", loss_sum / train.len() as f64, cfg.early_stop_metric);
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val,
        });
        match &best {
            Some((b, _, _)) if value <= *b => {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
            _ => {
                best = Some((value, epoch, learner.clone()));
                stale = 0;
            }
        }
    }
    let (_, best_epoch, model) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
    })
}

/// Vocabulary from the training split: tokens plus entity tokens.
pub fn build_vocab(train: &Corpus, min_freq: usize) -> Vocabulary {
    let tokens = train.iter().flat_map(|p| {
        p.tokens
            .iter()
            .map(String::as_str)
            .chain(p.entities.iter().flat_map(|e| e.split_whitespace()))
    });
    Vocabulary::build(tokens, min_freq)
}

/// Trains both branches on `L_O + beta * L_E`, selecting epochs by the
/// debiased validation score.
pub fn train(model: EndefModel, split: &SplitResult, cfg: &TrainConfig) -> Result<TrainOutcome<EndefModel>> {
    let learner = EndefLearner {
        entity_state: AdamState::new(model.entity_model.num_params()),
        detector_state: AdamState::new(model.detector.num_params()),
        model,
    };
    let max_len = learner.model.detector.spec().max_len;
    let out = run_loop(learner, split, cfg, max_len)?;
    Ok(TrainOutcome {
        model: out.model.model,
        history: out.history,
        best_epoch: out.best_epoch,
    })
}

/// Builds the vocabulary and both branches from `cfg`, then trains.
pub fn train_endef(split: &SplitResult, cfg: &TrainConfig) -> Result<TrainOutcome<EndefModel>> {
    cfg.validate()?;
    let vocab = Arc::new(build_vocab(&split.train, cfg.min_freq));
    let mut model = EndefModel::init(
        vocab,
        cfg.entity_model.clone(),
        cfg.detector.clone(),
        cfg.alpha,
        cfg.beta,
        cfg.seed,
    )?;
    model.options = cfg.endef;
    train(model, split, cfg)
}

fn train_single(model: ScalarModel, split: &SplitResult, cfg: &TrainConfig, view: InputView) -> Result<TrainOutcome<ScalarModel>> {
    let max_len = model.spec().max_len;
    let learner = SingleLearner {
        state: AdamState::new(model.num_params()),
        model,
        view,
    };
    let out = run_loop(learner, split, cfg, max_len)?;
    Ok(TrainOutcome {
        model: out.model.model,
        history: out.history,
        best_epoch: out.best_epoch,
    })
}

/// The detector alone on plain cross-entropy.
pub fn train_baseline(detector: ScalarModel, split: &SplitResult, cfg: &TrainConfig) -> Result<TrainOutcome<ScalarModel>> {
    train_single(detector, split, cfg, InputView::Tokens)
}

/// Baseline with vocabulary and initialization derived from `cfg`; the
/// detector starts from the same weights as in [`train_endef`].
pub fn train_baseline_from(split: &SplitResult, cfg: &TrainConfig) -> Result<TrainOutcome<ScalarModel>> {
    cfg.validate()?;
    let vocab = Arc::new(build_vocab(&split.train, cfg.min_freq));
    let detector = init_model(cfg.detector.clone(), vocab, cfg.seed, STREAM_DETECTOR_INIT)?;
    train_baseline(detector, split, cfg)
}

/// A classifier that only sees the entity list.
pub fn train_entity_only(split: &SplitResult, cfg: &TrainConfig) -> Result<TrainOutcome<ScalarModel>> {
    cfg.validate()?;
    let vocab = Arc::new(build_vocab(&split.train, cfg.min_freq));
    let model = init_model(cfg.entity_model.clone(), vocab, cfg.seed, STREAM_ENTITY_INIT)?;
    train_single(model, split, cfg, InputView::Entities)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictMode {
    /// `sigmoid(r_P)`.
    Debiased,
    /// Fused two-branch probability.
    Fused,
    /// Entity branch alone.
    Entity,
}

pub fn predict_endef(model: &EndefModel, corpus: &Corpus, mode: PredictMode) -> Result<PredictionSet> {
    let scores = corpus
        .iter()
        .map(|p| match mode {
            PredictMode::Debiased => model.debiased_predict(p),
            PredictMode::Fused => model.fused_forward(p).map(|r| r.y_hat),
            PredictMode::Entity => model.fused_forward(p).map(|r| sigmoid(r.r_entity)),
        })
        .collect::<Result<Vec<_>>>()?;
    PredictionSet::new(scores, corpus.iter().map(|p| p.label).collect())
}

pub fn predict_single(model: &ScalarModel, corpus: &Corpus, view: InputView) -> Result<PredictionSet> {
    let scores = corpus
        .iter()
        .map(|p| Ok(sigmoid(model.forward(&view_ids(model, p, view))?)))
        .collect::<Result<Vec<_>>>()?;
    PredictionSet::new(scores, corpus.iter().map(|p| p.label).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaRow {
    pub alpha: f64,
    pub val_metric: f64,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSearch {
    pub metric: Metric,
    pub best_alpha: f64,
    pub rows: Vec<AlphaRow>,
}

/// Trains once per alpha in `{0.0, 0.1, ..., 1.0}` and keeps the best
/// validation score; ties go to the larger alpha.
pub fn grid_search_alpha(split: &SplitResult, cfg: &TrainConfig) -> Result<AlphaSearch> {
    let mut rows = Vec::with_capacity(11);
    for alpha in alpha_grid() {
        let run_cfg = TrainConfig { alpha, ..cfg.clone() };
        let out = train_endef(split, &run_cfg)?;
        rows.push(AlphaRow {
            alpha,
            val_metric: out.best_val().get(cfg.early_stop_metric),
            best_epoch: out.best_epoch,
        });
    }
    let best = rows
        .iter()
        .fold(&rows[0], |acc, r| if r.val_metric >= acc.val_metric { r } else { acc });
    Ok(AlphaSearch {
        metric: cfg.early_stop_metric,
        best_alpha: best.alpha,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::temporal_split;
    use crate::synthetic::{generate, BiasSpec};

    fn tiny_split(seed: u64) -> SplitResult {
        let mut spec = BiasSpec::flipped(6, 0.05, 0.3, seed);
        spec.vocab_size = 60;
        spec.n_train = 240;
        spec.n_val = 80;
        spec.n_test = 80;
        spec.content_signal_strength = 0.3;
        let s = generate(&spec).unwrap();
        let (tr, va) = spec.split_ratios();
        temporal_split(&s.corpus, tr, va, seed).unwrap()
    }

    fn tiny_cfg() -> TrainConfig {
        let spec = EncoderSpec::bag_of_embeddings().with_dims(8, 16);
        TrainConfig {
            lr: 5e-3,
            batch_size: 32,
            max_epochs: 4,
            patience: 2,
            detector: spec.clone(),
            entity_model: spec,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn deterministic_runs() {
        let split = tiny_split(1);
        let a = train_endef(&split, &tiny_cfg()).unwrap();
        let b = train_endef(&split, &tiny_cfg()).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model, b.model);
        assert_eq!(a.history_jsonl().unwrap(), b.history_jsonl().unwrap());
    }

    #[test]
    fn validation_is_never_augmented() {
        let split = tiny_split(2);
        let mut cfg = tiny_cfg();
        cfg.augment.p = 0.9;
        let out = train_endef(&split, &cfg).unwrap();
        let recomputed = evaluate(&predict_endef(&out.model, &split.validation, PredictMode::Debiased).unwrap()).unwrap();
        assert_eq!(&recomputed, out.best_val());
    }

    #[test]
    fn vocabulary_comes_from_train_only() {
        let split = tiny_split(3);
        let vocab = build_vocab(&split.train, 1);
        let train_tokens: std::collections::HashSet<&str> = split
            .train
            .iter()
            .flat_map(|p| p.tokens.iter().map(String::as_str))
            .collect();
        for t in vocab.tokens().iter().skip(4) {
            assert!(train_tokens.contains(t.as_str()));
        }
    }

    #[test]
    fn returns_best_not_last() {
        let split = tiny_split(4);
        let mut cfg = tiny_cfg();
        cfg.max_epochs = 6;
        cfg.patience = 6;
        let out = train_endef(&split, &cfg).unwrap();
        let best = out
            .history
            .iter()
            .map(|r| r.val.macf1)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(out.best_val().macf1, best);
        let recomputed = evaluate(&predict_endef(&out.model, &split.validation, PredictMode::Debiased).unwrap()).unwrap();
        assert_eq!(recomputed.macf1, best);
    }

    #[test]
    fn config_round_trip_and_validation() {
        let cfg = TrainConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(TrainConfig::from_toml_str(&text).unwrap(), cfg);
        let partial = TrainConfig::from_toml_str("lr = 0.01\n[augment]\np = 0.2\n").unwrap();
        assert_eq!(partial.lr, 0.01);
        assert_eq!(partial.augment.p, 0.2);
        assert_eq!(partial.batch_size, 64);
        assert!(TrainConfig::from_toml_str("patience = 0").is_err());
        assert!(TrainConfig::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn divergence_reports_location() {
        let split = tiny_split(5);
        let mut cfg = tiny_cfg();
        cfg.max_epochs = 1;
        let vocab = Arc::new(build_vocab(&split.train, cfg.min_freq));
        let mut model = EndefModel::init(vocab, cfg.entity_model.clone(), cfg.detector.clone(), 0.8, 0.2, 0).unwrap();
        model.detector.params_mut().values_mut().iter_mut().for_each(|v| *v = f64::NAN);
        match train(model, &split, &cfg) {
            Err(Error::Diverged { epoch: 1, batch: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}
