//! Two-branch entity debiasing: an entity-only model and a full-text
//! detector trained through fused logits, with inference from the detector
//! alone.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Label, NewsPiece};
use crate::error::{Error, Result};
use crate::models::{EncoderSpec, ScalarModel, Vocabulary};

pub const DEFAULT_ALPHA: f64 = 0.8;
pub const DEFAULT_BETA: f64 = 0.2;
/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-12;

/// RNG streams derived from a run seed.
pub(crate) const STREAM_DETECTOR_INIT: u64 = 1;
pub(crate) const STREAM_ENTITY_INIT: u64 = 2;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of probability `p` against `y`, with clamping.
pub fn binary_cross_entropy(p: f64, y: Label) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    match y {
        Label::Fake => -p.ln(),
        Label::Real => -(1.0 - p).ln(),
    }
}

/// Loss of the fused prediction.
pub fn loss_overall(y_hat: f64, y: Label) -> f64 {
    binary_cross_entropy(y_hat, y)
}

/// Auxiliary loss of the entity branch on its own.
pub fn loss_entity(r_entity: f64, y: Label) -> f64 {
    binary_cross_entropy(sigmoid(r_entity), y)
}

pub fn fuse_logits(alpha: f64, r_detector: f64, r_entity: f64) -> f64 {
    alpha * r_detector + (1.0 - alpha) * r_entity
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndefOptions {
    /// Debiased inference returns `sigmoid(alpha * r_P)` instead of
    /// `sigmoid(r_P)`. Ranking metrics are unaffected.
    #[serde(default)]
    pub scale_by_alpha: bool,
    /// Block the fused-loss gradient from reaching the entity branch; it
    /// then learns only from the auxiliary loss.
    #[serde(default)]
    pub stop_grad_entity_from_overall: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForwardRecord {
    pub r_entity: f64,
    pub r_detector: f64,
    pub y_hat: f64,
}

/// Per-branch probabilities for one piece.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub id: String,
    pub p_entity: f64,
    pub p_detector: f64,
    pub p_fused: f64,
    pub p_debiased: f64,
    pub label: u8,
}

/// Batch loss with gradients for both branches.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    /// `overall + beta * entity`.
    pub loss: f64,
    /// Mean fused-prediction loss.
    pub overall: f64,
    /// Mean entity-branch loss.
    pub entity: f64,
    pub grad_entity: Vec<f64>,
    pub grad_detector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndefModel {
    pub entity_model: ScalarModel,
    pub detector: ScalarModel,
    alpha: f64,
    beta: f64,
    pub options: EndefOptions,
}

impl EndefModel {
    pub fn new(entity_model: ScalarModel, detector: ScalarModel, alpha: f64, beta: f64) -> Result<Self> {
        check_alpha_beta(alpha, beta)?;
        Ok(EndefModel {
            entity_model,
            detector,
            alpha,
            beta,
            options: EndefOptions::default(),
        })
    }

    /// Initializes both branches from `seed`. The detector draws from its
    /// own stream, so its starting weights match a detector-only run with
    /// the same seed.
    pub fn init(
        vocab: Arc<Vocabulary>,
        entity_spec: EncoderSpec,
        detector_spec: EncoderSpec,
        alpha: f64,
        beta: f64,
        seed: u64,
    ) -> Result<Self> {
        let detector = init_model(detector_spec, vocab.clone(), seed, STREAM_DETECTOR_INIT)?;
        let entity_model = init_model(entity_spec, vocab, seed, STREAM_ENTITY_INIT)?;
        Self::new(entity_model, detector, alpha, beta)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn set_alpha(&mut self, alpha: f64) -> Result<()> {
        check_alpha_beta(alpha, self.beta)?;
        self.alpha = alpha;
        Ok(())
    }

    pub fn set_beta(&mut self, beta: f64) -> Result<()> {
        check_alpha_beta(self.alpha, beta)?;
        self.beta = beta;
        Ok(())
    }

    pub fn entity_ids(&self, piece: &NewsPiece) -> Vec<usize> {
        let m = &self.entity_model;
        m.vocab().encode_entities(&piece.entities, m.spec().max_len)
    }

    pub fn detector_ids(&self, piece: &NewsPiece) -> Vec<usize> {
        self.detector.encode(&piece.tokens)
    }

    pub fn fused_forward(&self, piece: &NewsPiece) -> Result<ForwardRecord> {
        let r_entity = self.entity_model.forward(&self.entity_ids(piece))?;
        let r_detector = self.detector.forward(&self.detector_ids(piece))?;
        Ok(ForwardRecord {
            r_entity,
            r_detector,
            y_hat: sigmoid(fuse_logits(self.alpha, r_detector, r_entity)),
        })
    }

    /// Mean over the batch of `L_O + beta * L_E`, with gradients. The fused
    /// loss reaches both branches; the auxiliary loss only the entity one.
    pub fn loss_total(&self, batch: &[NewsPiece]) -> Result<LossOutput> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let b = batch.len() as f64;
        let mut grad_entity = vec![0.0; self.entity_model.num_params()];
        let mut grad_detector = vec![0.0; self.detector.num_params()];
        let mut sum_overall = 0.0;
        let mut sum_entity = 0.0;

        for piece in batch {
            let entity_pass = self.entity_model.forward_pass(&self.entity_ids(piece))?;
            let detector_pass = self.detector.forward_pass(&self.detector_ids(piece))?;
            let (r_e, r_p) = (entity_pass.logit(), detector_pass.logit());
            let y = piece.label.as_f64();
            let y_hat = sigmoid(fuse_logits(self.alpha, r_p, r_e));
            let p_entity = sigmoid(r_e);

            let l_o = loss_overall(y_hat, piece.label);
            let l_e = loss_entity(r_e, piece.label);
            if !(l_o.is_finite() && l_e.is_finite()) {
                return Err(Error::NonFiniteLoss { id: piece.id.clone() });
            }
            sum_overall += l_o;
            sum_entity += l_e;

            let d_fused = y_hat - y;
            let g_detector = self.alpha * d_fused / b;
            let mut g_entity = self.beta * (p_entity - y) / b;
            if !self.options.stop_grad_entity_from_overall {
                g_entity += (1.0 - self.alpha) * d_fused / b;
            }
            self.detector.backward_pass(&detector_pass, g_detector, &mut grad_detector)?;
            self.entity_model.backward_pass(&entity_pass, g_entity, &mut grad_entity)?;
        }

        let overall = sum_overall / b;
        let entity = sum_entity / b;
        Ok(LossOutput {
            loss: overall + self.beta * entity,
            overall,
            entity,
            grad_entity,
            grad_detector,
        })
    }

    /// Detector-only probability; the entity branch is never evaluated.
    pub fn debiased_predict(&self, piece: &NewsPiece) -> Result<f64> {
        let r_p = self.detector.forward(&self.detector_ids(piece))?;
        Ok(if self.options.scale_by_alpha {
            sigmoid(self.alpha * r_p)
        } else {
            sigmoid(r_p)
        })
    }

    /// Both logits and the fused probability, for diagnostics.
    pub fn biased_predict(&self, piece: &NewsPiece) -> Result<ForwardRecord> {
        self.fused_forward(piece)
    }

    pub fn case_report(&self, piece: &NewsPiece) -> Result<CaseReport> {
        let rec = self.fused_forward(piece)?;
        Ok(CaseReport {
            id: piece.id.clone(),
            p_entity: sigmoid(rec.r_entity),
            p_detector: sigmoid(rec.r_detector),
            p_fused: rec.y_hat,
            p_debiased: self.debiased_predict(piece)?,
            label: piece.label.as_u8(),
        })
    }
}

/// A freshly initialized encoder drawing from `stream` of the ChaCha generator
/// seeded with `seed`.
pub fn init_model(spec: EncoderSpec, vocab: Arc<Vocabulary>, seed: u64, stream: u64) -> Result<ScalarModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    ScalarModel::new(spec, vocab, &mut rng)
}

fn check_alpha_beta(alpha: f64, beta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!("beta {beta} must be non-negative")));
    }
    Ok(())
}

/// `{0.0, 0.1, ..., 1.0}`.
pub fn alpha_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EntitySource;
    use crate::models::EncoderKind;
    use proptest::prelude::*;
    use rand::Rng;

    fn piece(id: &str, tokens: &str, entities: &[&str], label: Label) -> NewsPiece {
        NewsPiece {
            id: id.into(),
            tokens: tokens.split_whitespace().map(String::from).collect(),
            entities: entities.iter().map(|s| s.to_string()).collect(),
            label,
            timestamp: 0,
            entity_source: EntitySource::External,
        }
    }

    fn tiny_model(kind: EncoderKind, alpha: f64, beta: f64, seed: u64) -> EndefModel {
        let vocab = Arc::new(Vocabulary::build("a b c d e f".split(' '), 1));
        let spec = EncoderSpec {
            kind,
            embed_dim: 3,
            hidden_dim: 4,
            window_sizes: vec![1, 2],
            channels: 2,
            max_len: 170,
        };
        let mut m = EndefModel::init(vocab, spec.clone(), spec, alpha, beta, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for p in [&mut m.entity_model, &mut m.detector] {
            p.params_mut().values_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.8..0.8));
        }
        m
    }

    fn batch() -> Vec<NewsPiece> {
        vec![
            piece("1", "a b c d", &["a b"], Label::Fake),
            piece("2", "c d e", &["e"], Label::Real),
            piece("3", "f a f", &[], Label::Fake),
        ]
    }

    #[test]
    fn scalar_oracles() {
        assert_eq!(sigmoid(0.0), 0.5);
        let y_hat = sigmoid(fuse_logits(0.8, 2.0, -1.0));
        assert!((y_hat - 0.802_183_888_558_581_6).abs() < 1e-15);
        assert!((loss_overall(0.5, Label::Fake) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(loss_overall(1.0 - 1e-15, Label::Fake) < 1e-12);
        assert!((loss_overall(y_hat, Label::Real) - 1.620_417_409_918_450_7).abs() < 1e-12);
        assert!((loss_entity(0.0, Label::Fake) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((loss_entity(-1.0, Label::Real) - 0.313_261_687_518_222_8).abs() < 1e-15);
        for r in [1e6, -1e6, 800.0, -800.0] {
            assert!(loss_entity(r, Label::Real).is_finite());
            assert!(loss_entity(r, Label::Fake).is_finite());
        }
    }

    #[test]
    fn alpha_one_ignores_entity_logit() {
        let m = tiny_model(EncoderKind::BagOfEmbeddingsMlp, 1.0, 0.2, 4);
        for p in batch() {
            let rec = m.fused_forward(&p).unwrap();
            assert_eq!(rec.y_hat, sigmoid(rec.r_detector));
        }
    }

    #[test]
    fn empty_entity_list_is_defined() {
        let m = tiny_model(EncoderKind::ConvNgram, 0.8, 0.2, 1);
        let p = piece("x", "a b", &[], Label::Real);
        assert_eq!(m.entity_ids(&p), vec![crate::models::PAD_ID]);
        assert!(m.fused_forward(&p).unwrap().r_entity.is_finite());
    }

    #[test]
    fn beta_zero_is_overall_only() {
        let m = tiny_model(EncoderKind::BagOfEmbeddingsMlp, 0.8, 0.0, 2);
        let out = m.loss_total(&batch()).unwrap();
        assert_eq!(out.loss, out.overall);
    }

    #[test]
    fn no_entity_gradient_without_path() {
        let m = tiny_model(EncoderKind::ConvNgram, 1.0, 0.0, 3);
        let out = m.loss_total(&batch()[..1]).unwrap();
        assert!(out.grad_entity.iter().all(|&g| g == 0.0));
        assert!(out.grad_detector.iter().any(|&g| g != 0.0));
    }

    #[test]
    fn stop_grad_leaves_only_auxiliary_signal() {
        let mut m = tiny_model(EncoderKind::BagOfEmbeddingsMlp, 0.5, 0.0, 9);
        m.options.stop_grad_entity_from_overall = true;
        let out = m.loss_total(&batch()).unwrap();
        assert!(out.grad_entity.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn debiased_ignores_entity_branch() {
        let m = tiny_model(EncoderKind::BagOfEmbeddingsMlp, 0.8, 0.2, 5);
        let mut zeroed = m.clone();
        zeroed.entity_model.params_mut().values_mut().iter_mut().for_each(|v| *v = 0.0);
        let mut randomized = m.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        randomized
            .entity_model
            .params_mut()
            .values_mut()
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(-5.0..5.0));
        for p in batch() {
            let a = m.debiased_predict(&p).unwrap();
            assert_eq!(a.to_bits(), zeroed.debiased_predict(&p).unwrap().to_bits());
            assert_eq!(a.to_bits(), randomized.debiased_predict(&p).unwrap().to_bits());
        }
    }

    #[test]
    fn zero_detector_predicts_half() {
        let mut m = tiny_model(EncoderKind::BagOfEmbeddingsMlp, 0.8, 0.2, 6);
        m.detector.params_mut().values_mut().iter_mut().for_each(|v| *v = 0.0);
        assert_eq!(m.debiased_predict(&batch()[0]).unwrap(), 0.5);
    }

    #[test]
    fn case_report_consistency() {
        let m = tiny_model(EncoderKind::ConvNgram, 0.8, 0.2, 7);
        for p in batch() {
            let rec = m.biased_predict(&p).unwrap();
            let refused = sigmoid(0.8 * rec.r_detector + 0.2 * rec.r_entity);
            assert!((rec.y_hat - refused).abs() <= 1e-15);
            let c = m.case_report(&p).unwrap();
            for v in [c.p_entity, c.p_detector, c.p_fused, c.p_debiased] {
                assert!((0.0..=1.0).contains(&v));
            }
            assert_eq!(c.p_detector, c.p_debiased);
        }
    }

    #[test]
    fn scale_by_alpha_keeps_ranking() {
        let mut m = tiny_model(EncoderKind::BagOfEmbeddingsMlp, 0.8, 0.2, 8);
        let plain: Vec<f64> = batch().iter().map(|p| m.debiased_predict(p).unwrap()).collect();
        m.options.scale_by_alpha = true;
        let scaled: Vec<f64> = batch().iter().map(|p| m.debiased_predict(p).unwrap()).collect();
        for i in 0..plain.len() {
            for j in 0..plain.len() {
                assert_eq!(plain[i] < plain[j], scaled[i] < scaled[j]);
            }
        }
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let m = tiny_model(EncoderKind::BagOfEmbeddingsMlp, 0.8, 0.2, 1);
        assert!(EndefModel::new(m.entity_model.clone(), m.detector.clone(), 1.5, 0.2).is_err());
        assert!(EndefModel::new(m.entity_model.clone(), m.detector.clone(), 0.5, -0.1).is_err());
        assert!(m.loss_total(&[]).is_err());
        assert_eq!(alpha_grid().len(), 11);
    }

    proptest! {
        #[test]
        fn fused_probability_is_monotone(
            alpha in 0.01f64..0.99,
            r_p in -10.0f64..10.0,
            r_e in -10.0f64..10.0,
            delta in 0.01f64..5.0,
        ) {
            let base = sigmoid(fuse_logits(alpha, r_p, r_e));
            prop_assert!(sigmoid(fuse_logits(alpha, r_p + delta, r_e)) > base);
            prop_assert!(sigmoid(fuse_logits(alpha, r_p, r_e + delta)) > base);
        }

        #[test]
        fn loss_decomposes_in_beta(beta in 0.0f64..3.0, seed in 0u64..50) {
            let mut m = tiny_model(EncoderKind::BagOfEmbeddingsMlp, 0.8, 0.0, seed);
            let base = m.loss_total(&batch()).unwrap();
            m.set_beta(beta).unwrap();
            let with = m.loss_total(&batch()).unwrap();
            let mean_entity = batch()
                .iter()
                .map(|p| loss_entity(m.fused_forward(p).unwrap().r_entity, p.label))
                .sum::<f64>() / 3.0;
            prop_assert!(((with.loss - base.loss) - beta * mean_entity).abs() <= 1e-12);
        }
    }
}
