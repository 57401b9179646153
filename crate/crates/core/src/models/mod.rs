//! Small differentiable text encoders producing a single logit, plus the
//! Adam optimizer used to train them.

mod adam;
mod encoder;
mod params;
mod vocab;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use encoder::{EncoderKind, EncoderSpec, ForwardPass, ScalarModel, DEFAULT_MAX_LEN};
pub use params::{ParamVector, TensorSlot};
pub use vocab::{Vocabulary, MASK_ID, PAD_ID, SEP_ID, UNK_ID};
