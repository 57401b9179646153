#![allow(dead_code)]

use std::sync::Arc;

use endef::corpus::{EntitySource, Label, NewsPiece};
use endef::endef::EndefModel;
use endef::models::{EncoderKind, EncoderSpec, ScalarModel, Vocabulary};
use endef::trainer::{single_model_loss, view_ids, InputView};
use rand::seq::SliceRandom;
use rand::Rng;

pub const WORDS: [&str; 10] = ["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"];

pub fn tiny_vocab() -> Arc<Vocabulary> {
    Arc::new(Vocabulary::build(WORDS.iter().copied(), 1))
}

pub fn tiny_spec<R: Rng>(rng: &mut R, kind: EncoderKind) -> EncoderSpec {
    let mut spec = match kind {
        EncoderKind::BagOfEmbeddingsMlp => EncoderSpec::bag_of_embeddings(),
        EncoderKind::ConvNgram => EncoderSpec::conv_ngram(),
    };
    spec.embed_dim = rng.gen_range(2..=4);
    spec.hidden_dim = rng.gen_range(2..=5);
    spec.channels = rng.gen_range(1..=3);
    spec.window_sizes = vec![1, 2, 3];
    spec
}

pub fn random_kind<R: Rng>(rng: &mut R) -> EncoderKind {
    if rng.gen_bool(0.5) {
        EncoderKind::BagOfEmbeddingsMlp
    } else {
        EncoderKind::ConvNgram
    }
}

/// Pieces of 1..=6 tokens (some shorter than the widest window), with 0..=2
/// entities drawn from the same words plus an out-of-vocabulary one.
pub fn random_batch<R: Rng>(rng: &mut R, n: usize) -> Vec<NewsPiece> {
    (0..n)
        .map(|i| {
            let len = rng.gen_range(1..=6);
            let tokens: Vec<String> = (0..len)
                .map(|_| {
                    if rng.gen_bool(0.1) {
                        "zzz".to_string()
                    } else {
                        WORDS.choose(rng).unwrap().to_string()
                    }
                })
                .collect();
            let k = rng.gen_range(0..=2);
            let entities = (0..k)
                .map(|j| if j == 1 && rng.gen_bool(0.5) { "c d".to_string() } else { WORDS.choose(rng).unwrap().to_string() })
                .collect();
            NewsPiece {
                id: format!("p{i}"),
                tokens,
                entities,
                label: Label::from(rng.gen_bool(0.5)),
                timestamp: i as i64,
                entity_source: EntitySource::External,
            }
        })
        .collect()
}

#[derive(Debug, Default, Clone, Copy)]
pub struct GradCheck {
    pub checked: usize,
    /// Coordinates whose +-h probe crossed a ReLU or max-pool switch.
    pub skipped_kinks: usize,
    pub worst_rel_err: f64,
}

impl GradCheck {
    pub fn merge(&mut self, o: GradCheck) {
        self.checked += o.checked;
        self.skipped_kinks += o.skipped_kinks;
        self.worst_rel_err = self.worst_rel_err.max(o.worst_rel_err);
    }
}

pub const FD_STEP: f64 = 1e-4;
/// Denominator floor for the relative error of near-zero gradients.
pub const REL_FLOOR: f64 = 1e-6;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

type Pattern = Vec<(Vec<Option<usize>>, Vec<bool>)>;

fn patterns(model: &ScalarModel, batch: &[NewsPiece], view: InputView) -> Pattern {
    batch
        .iter()
        .map(|p| model.forward_pass(&view_ids(model, p, view)).unwrap().activation_pattern())
        .collect()
}

/// Central differences over every parameter of `branch`, comparing against
/// `analytic`. `loss` evaluates the objective for a perturbed model.
fn check_branch<F>(
    model: &EndefModel,
    entity_branch: bool,
    batch: &[NewsPiece],
    analytic: &[f64],
    loss: F,
) -> GradCheck
where
    F: Fn(&EndefModel) -> f64,
{
    let (view, base) = if entity_branch {
        (InputView::Entities, &model.entity_model)
    } else {
        (InputView::Tokens, &model.detector)
    };
    assert_eq!(analytic.len(), base.num_params());
    let reference = patterns(base, batch, view);
    let mut out = GradCheck::default();
    for (i, &a) in analytic.iter().enumerate() {
        let probe = |delta: f64| {
            let mut m = model.clone();
            let branch = if entity_branch { &mut m.entity_model } else { &mut m.detector };
            branch.params_mut().values_mut()[i] += delta;
            let branch = if entity_branch { &m.entity_model } else { &m.detector };
            let same = patterns(branch, batch, view) == reference;
            (loss(&m), same)
        };
        let (plus, same_plus) = probe(FD_STEP);
        let (minus, same_minus) = probe(-FD_STEP);
        if !(same_plus && same_minus) {
            out.skipped_kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        out.worst_rel_err = out.worst_rel_err.max(rel_err(a, numeric));
        out.checked += 1;
    }
    out
}

/// Checks both branches of the fused objective `L_O + beta * L_E`.
pub fn check_endef(model: &EndefModel, batch: &[NewsPiece]) -> GradCheck {
    let out = model.loss_total(batch).unwrap();
    let loss = |m: &EndefModel| m.loss_total(batch).unwrap().loss;
    let mut g = check_branch(model, true, batch, &out.grad_entity, loss);
    g.merge(check_branch(model, false, batch, &out.grad_detector, loss));
    g
}

/// With the fused-loss gradient blocked, the entity branch gradient must be
/// that of `beta * L_E` alone.
pub fn check_endef_stop_grad(model: &EndefModel, batch: &[NewsPiece]) -> GradCheck {
    let out = model.loss_total(batch).unwrap();
    let beta = model.beta();
    let aux = |m: &EndefModel| beta * m.loss_total(batch).unwrap().entity;
    check_branch(model, true, batch, &out.grad_entity, aux)
}

/// Plain cross-entropy through a single encoder.
pub fn check_single(model: &ScalarModel, batch: &[NewsPiece], view: InputView) -> GradCheck {
    let (_, analytic) = single_model_loss(model, batch, view).unwrap();
    assert_eq!(analytic.len(), model.num_params());
    let reference = patterns(model, batch, view);
    let mut out = GradCheck::default();
    for (i, &a) in analytic.iter().enumerate() {
        let probe = |delta: f64| {
            let mut m = model.clone();
            m.params_mut().values_mut()[i] += delta;
            let same = patterns(&m, batch, view) == reference;
            (single_model_loss(&m, batch, view).unwrap().0, same)
        };
        let (plus, same_plus) = probe(FD_STEP);
        let (minus, same_minus) = probe(-FD_STEP);
        if !(same_plus && same_minus) {
            out.skipped_kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        out.worst_rel_err = out.worst_rel_err.max(rel_err(a, numeric));
        out.checked += 1;
    }
    out
}

/// Mann-Whitney statistic by enumerating every positive/negative pair.
pub fn pairwise_auc(scores: &[f64], labels: &[Label]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (sp, lp) in scores.iter().zip(labels) {
        if !lp.is_fake() {
            continue;
        }
        for (sn, ln) in scores.iter().zip(labels) {
            if ln.is_fake() {
                continue;
            }
            pairs += 1.0;
            if sp > sn {
                wins += 1.0;
            } else if sp == sn {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// ROC points from thresholding at every distinct score (predict positive
/// when score >= t), starting at (0, 0).
pub fn brute_force_roc(scores: &[f64], labels: &[Label]) -> Vec<(f64, f64)> {
    let pos = labels.iter().filter(|l| l.is_fake()).count() as f64;
    let neg = labels.len() as f64 - pos;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut pts = vec![(0.0, 0.0)];
    for t in thresholds {
        let tp = scores.iter().zip(labels).filter(|(s, l)| **s >= t && l.is_fake()).count() as f64;
        let fp = scores.iter().zip(labels).filter(|(s, l)| **s >= t && !l.is_fake()).count() as f64;
        pts.push((fp / neg, tp / pos));
    }
    pts
}

/// Standardized partial AUC by midpoint integration of the piecewise-linear
/// ROC on a grid of `cells_per_negative` cells per 1/N of false-positive
/// rate. Grid edges fall on every ROC breakpoint k/N, and on `maxfpr` when
/// `maxfpr * N * cells_per_negative` is an integer.
pub fn grid_sp_auc(scores: &[f64], labels: &[Label], maxfpr: f64, cells_per_negative: usize) -> f64 {
    let neg = labels.iter().filter(|l| !l.is_fake()).count();
    let pts = brute_force_roc(scores, labels);
    let width = 1.0 / (neg * cells_per_negative) as f64;
    let cells = (maxfpr / width).round() as usize;
    let tpr_at = |f: f64| {
        // Highest point at or left of f, lowest point right of f.
        let left = pts.iter().filter(|p| p.0 <= f).fold((f64::NEG_INFINITY, 0.0), |acc, p| {
            if p.0 > acc.0 || (p.0 == acc.0 && p.1 > acc.1) {
                *p
            } else {
                acc
            }
        });
        let right = pts.iter().filter(|p| p.0 > f).fold((f64::INFINITY, 1.0), |acc, p| {
            if p.0 < acc.0 || (p.0 == acc.0 && p.1 < acc.1) {
                *p
            } else {
                acc
            }
        });
        if right.0.is_infinite() {
            return left.1;
        }
        left.1 + (right.1 - left.1) * (f - left.0) / (right.0 - left.0)
    };
    let mut area = 0.0;
    for c in 0..cells {
        let mid = (c as f64 + 0.5) * width;
        area += tpr_at(mid) * width;
    }
    let m = maxfpr;
    0.5 * (1.0 + (area - 0.5 * m * m) / (m - 0.5 * m * m))
}
