//! Token-level drop/mask augmentation for training samples.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::NewsPiece;
use crate::error::{Error, Result};

pub const MASK_TOKEN: &str = "[MASK]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentKind {
    WordLevel,
    EntityLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentAction {
    Drop,
    Mask,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentPolicy {
    pub kind: AugmentKind,
    pub action: AugmentAction,
    probability: f64,
}

impl AugmentPolicy {
    pub fn new(kind: AugmentKind, action: AugmentAction, probability: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&probability) {
            return Err(Error::InvalidArgument(format!(
                "augmentation probability {probability} outside [0, 1]"
            )));
        }
        Ok(AugmentPolicy {
            kind,
            action,
            probability,
        })
    }

    pub fn probability(&self) -> f64 {
        self.probability
    }
}

/// Applies one policy to a piece.
///
/// Word-level selects each token independently; entity-level selects each
/// entity occurrence and edits its whole span. Selected tokens are removed
/// or replaced by [`MASK_TOKEN`]. The entity list keeps only entities whose
/// tokens all survived unmodified. If dropping would leave no tokens, one
/// original token chosen uniformly is kept as is.
pub fn augment<R: Rng + ?Sized>(piece: &NewsPiece, policy: &AugmentPolicy, rng: &mut R) -> NewsPiece {
    let n = piece.tokens.len();
    let spans = piece.entity_spans();
    let mut selected = vec![false; n];
    let mut entity_selected = vec![false; piece.entities.len()];
    let p = policy.probability;

    match policy.kind {
        AugmentKind::WordLevel => {
            for s in selected.iter_mut() {
                *s = rng.gen_bool(p);
            }
        }
        AugmentKind::EntityLevel => {
            for span in &spans {
                if rng.gen_bool(p) {
                    entity_selected[span.entity] = true;
                    if let Some((start, end)) = span.range {
                        selected[start..end].iter_mut().for_each(|s| *s = true);
                    }
                }
            }
        }
    }

    let mut kept: Vec<bool> = selected.iter().map(|s| !s).collect();
    let mut tokens: Vec<String> = Vec::with_capacity(n);
    for (token, &sel) in piece.tokens.iter().zip(&selected) {
        match (sel, policy.action) {
            (false, _) => tokens.push(token.clone()),
            (true, AugmentAction::Mask) => tokens.push(MASK_TOKEN.to_string()),
            (true, AugmentAction::Drop) => {}
        }
    }
    if tokens.is_empty() {
        let j = rng.gen_range(0..n);
        kept[j] = true;
        tokens.push(piece.tokens[j].clone());
    }

    let entities = spans
        .iter()
        .filter(|span| match span.range {
            Some((start, end)) => kept[start..end].iter().all(|&k| k),
            None => !entity_selected[span.entity],
        })
        .map(|span| piece.entities[span.entity].clone())
        .collect();

    NewsPiece {
        tokens,
        entities,
        ..piece.clone()
    }
}

fn default_p() -> f64 {
    0.1
}

fn default_apply() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

fn default_kinds() -> Vec<AugmentKind> {
    vec![AugmentKind::WordLevel, AugmentKind::EntityLevel]
}

fn default_actions() -> Vec<AugmentAction> {
    vec![AugmentAction::Drop, AugmentAction::Mask]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    #[serde(default = "default_true")]
    pub enabled: bool,
    /// Per-token (word level) or per-occurrence (entity level) probability.
    #[serde(default = "default_p")]
    pub p: f64,
    /// Probability that a given sample is augmented at all.
    #[serde(default = "default_apply")]
    pub apply_prob: f64,
    #[serde(default = "default_kinds")]
    pub kinds: Vec<AugmentKind>,
    #[serde(default = "default_actions")]
    pub actions: Vec<AugmentAction>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            enabled: true,
            p: default_p(),
            apply_prob: default_apply(),
            kinds: default_kinds(),
            actions: default_actions(),
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        AugmentConfig {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.p) {
            return bad(format!("augment.p = {} outside [0, 1]", self.p));
        }
        if !(0.0..=1.0).contains(&self.apply_prob) {
            return bad(format!("augment.apply_prob = {} outside [0, 1]", self.apply_prob));
        }
        if self.kinds.is_empty() || self.actions.is_empty() {
            return bad("augment.kinds and augment.actions must be non-empty".into());
        }
        Ok(())
    }

    /// Uniform draw over the configured kinds × actions grid.
    pub fn choose_policy<R: Rng + ?Sized>(&self, rng: &mut R) -> AugmentPolicy {
        let kind = *self.kinds.choose(rng).expect("kinds non-empty");
        let action = *self.actions.choose(rng).expect("actions non-empty");
        AugmentPolicy {
            kind,
            action,
            probability: self.p,
        }
    }

    /// Training-time entry point: possibly picks a policy and applies it.
    pub fn apply<R: Rng + ?Sized>(&self, piece: &NewsPiece, rng: &mut R) -> NewsPiece {
        if !self.enabled {
            return piece.clone();
        }
        if self.apply_prob < 1.0 && !rng.gen_bool(self.apply_prob) {
            return piece.clone();
        }
        let policy = self.choose_policy(rng);
        augment(piece, &policy, rng)
    }
}

/// Uniform choice over both kinds and both actions with the default `p`.
pub fn choose_policy<R: Rng + ?Sized>(rng: &mut R) -> AugmentPolicy {
    AugmentConfig::default().choose_policy(rng)
}
