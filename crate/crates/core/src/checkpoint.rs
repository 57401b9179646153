//! JSON checkpoints. Floats are written with round-trip precision, so a
//! reloaded model predicts bit-identically.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::NewsPiece;
use crate::endef::{sigmoid, EndefModel, EndefOptions};
use crate::error::{Error, Result};
use crate::models::{EncoderSpec, ParamVector, ScalarModel, Vocabulary};
use crate::trainer::{view_ids, InputView};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Checkpoint {
    Endef(EndefModel),
    /// One encoder trained alone, reading either the text or the entities.
    Single { model: ScalarModel, view: InputView },
}

#[derive(Serialize, Deserialize)]
struct EncoderBlob {
    spec: EncoderSpec,
    params: ParamVector,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Body {
    Endef {
        alpha: f64,
        beta: f64,
        options: EndefOptions,
        entity_model: EncoderBlob,
        detector: EncoderBlob,
    },
    Single {
        view: InputView,
        model: EncoderBlob,
    },
}

#[derive(Serialize, Deserialize)]
struct File {
    version: u32,
    vocab: Vocabulary,
    #[serde(flatten)]
    body: Body,
}

fn blob(m: &ScalarModel) -> EncoderBlob {
    EncoderBlob {
        spec: m.spec().clone(),
        params: m.params().clone(),
    }
}

fn unblob(b: EncoderBlob, vocab: &Arc<Vocabulary>) -> Result<ScalarModel> {
    ScalarModel::from_parts(b.spec, vocab.clone(), b.params)
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        let file = match self {
            Checkpoint::Endef(m) => File {
                version: CHECKPOINT_VERSION,
                vocab: (**m.detector.vocab()).clone(),
                body: Body::Endef {
                    alpha: m.alpha(),
                    beta: m.beta(),
                    options: m.options,
                    entity_model: blob(&m.entity_model),
                    detector: blob(&m.detector),
                },
            },
            Checkpoint::Single { model, view } => File {
                version: CHECKPOINT_VERSION,
                vocab: (**model.vocab()).clone(),
                body: Body::Single {
                    view: *view,
                    model: blob(model),
                },
            },
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Version {
            version: u32,
        }
        let v: Version = serde_json::from_str(text)?;
        if v.version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion(v.version));
        }
        let file: File = serde_json::from_str(text)?;
        let vocab = Arc::new(file.vocab);
        match file.body {
            Body::Endef {
                alpha,
                beta,
                options,
                entity_model,
                detector,
            } => {
                let mut m = EndefModel::new(unblob(entity_model, &vocab)?, unblob(detector, &vocab)?, alpha, beta)?;
                m.options = options;
                Ok(Checkpoint::Endef(m))
            }
            Body::Single { view, model } => Ok(Checkpoint::Single {
                model: unblob(model, &vocab)?,
                view,
            }),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// The score used for evaluation: debiased for the two-branch model,
    /// the plain sigmoid output otherwise.
    pub fn predict(&self, piece: &NewsPiece) -> Result<f64> {
        match self {
            Checkpoint::Endef(m) => m.debiased_predict(piece),
            Checkpoint::Single { model, view } => Ok(sigmoid(model.forward(&view_ids(model, piece, *view))?)),
        }
    }
}
