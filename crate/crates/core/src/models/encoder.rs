use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::params::ParamVector;
use super::vocab::{Vocabulary, UNK_ID};
use crate::error::{Error, Result};

/// Longest token sequence fed to an encoder; longer inputs are cut.
pub const DEFAULT_MAX_LEN: usize = 170;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// Mean of token embeddings, one ReLU hidden layer, scalar output.
    BagOfEmbeddingsMlp,
    /// Max-pooled ReLU convolutions over several window sizes, then the
    /// same hidden layer and output.
    ConvNgram,
}

fn default_embed_dim() -> usize {
    64
}
fn default_hidden_dim() -> usize {
    384
}
fn default_windows() -> Vec<usize> {
    vec![1, 2, 3, 5, 10]
}
fn default_channels() -> usize {
    32
}
fn default_max_len() -> usize {
    DEFAULT_MAX_LEN
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_hidden_dim")]
    pub hidden_dim: usize,
    /// Convolution widths; ignored by the bag-of-embeddings encoder.
    #[serde(default = "default_windows")]
    pub window_sizes: Vec<usize>,
    /// Filters per window size; ignored by the bag-of-embeddings encoder.
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
}

impl EncoderSpec {
    pub fn bag_of_embeddings() -> Self {
        EncoderSpec {
            kind: EncoderKind::BagOfEmbeddingsMlp,
            embed_dim: default_embed_dim(),
            hidden_dim: default_hidden_dim(),
            window_sizes: default_windows(),
            channels: default_channels(),
            max_len: DEFAULT_MAX_LEN,
        }
    }

    pub fn conv_ngram() -> Self {
        EncoderSpec {
            kind: EncoderKind::ConvNgram,
            ..Self::bag_of_embeddings()
        }
    }

    pub fn with_dims(mut self, embed_dim: usize, hidden_dim: usize) -> Self {
        self.embed_dim = embed_dim;
        self.hidden_dim = hidden_dim;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("encoder spec: {m}")));
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.max_len == 0 {
            return bad("dimensions must be positive");
        }
        if self.kind == EncoderKind::ConvNgram {
            if self.channels == 0 || self.window_sizes.is_empty() {
                return bad("conv encoder needs channels and window sizes");
            }
            if self.window_sizes.contains(&0) {
                return bad("window sizes must be positive");
            }
            let mut w = self.window_sizes.clone();
            w.sort_unstable();
            w.dedup();
            if w.len() != self.window_sizes.len() {
                return bad("window sizes must be distinct");
            }
        }
        Ok(())
    }

    fn feature_dim(&self) -> usize {
        match self.kind {
            EncoderKind::BagOfEmbeddingsMlp => self.embed_dim,
            EncoderKind::ConvNgram => self.window_sizes.len() * self.channels,
        }
    }

    fn shapes(&self, vocab_len: usize) -> Vec<(String, Vec<usize>)> {
        let d = self.embed_dim;
        let mut shapes = vec![("embedding".to_string(), vec![vocab_len, d])];
        if self.kind == EncoderKind::ConvNgram {
            for &k in &self.window_sizes {
                shapes.push((format!("conv{k}.weight"), vec![self.channels, k * d]));
                shapes.push((format!("conv{k}.bias"), vec![self.channels]));
            }
        }
        shapes.push(("hidden.weight".into(), vec![self.hidden_dim, self.feature_dim()]));
        shapes.push(("hidden.bias".into(), vec![self.hidden_dim]));
        shapes.push(("output.weight".into(), vec![self.hidden_dim]));
        shapes.push(("output.bias".into(), vec![1]));
        shapes
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Offsets {
    embedding: usize,
    conv: Vec<(usize, usize)>,
    hidden_w: usize,
    hidden_b: usize,
    out_w: usize,
    out_b: usize,
}

impl Offsets {
    fn resolve(spec: &EncoderSpec, params: &ParamVector) -> Result<Self> {
        let off = |name: &str| {
            params.slot(name).map(|s| s.offset).ok_or_else(|| {
                Error::InvalidArgument(format!("parameter layout lacks `{name}`"))
            })
        };
        let conv = match spec.kind {
            EncoderKind::ConvNgram => spec
                .window_sizes
                .iter()
                .map(|k| Ok((off(&format!("conv{k}.weight"))?, off(&format!("conv{k}.bias"))?)))
                .collect::<Result<Vec<_>>>()?,
            EncoderKind::BagOfEmbeddingsMlp => Vec::new(),
        };
        Ok(Offsets {
            embedding: off("embedding")?,
            conv,
            hidden_w: off("hidden.weight")?,
            hidden_b: off("hidden.bias")?,
            out_w: off("output.weight")?,
            out_b: off("output.bias")?,
        })
    }
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    ids: Vec<usize>,
    features: Vec<f64>,
    /// Per (window, channel): winning position, or `None` when the pooled
    /// value was clipped to zero.
    argmax: Vec<Option<usize>>,
    /// Per window: the (possibly `[PAD]`-extended) input it convolved.
    conv_inputs: Vec<Vec<usize>>,
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    logit: f64,
}

impl ForwardPass {
    pub fn logit(&self) -> f64 {
        self.logit
    }

    /// Pooling winners and active hidden units. The logit is smooth in the
    /// parameters wherever this stays unchanged.
    pub fn activation_pattern(&self) -> (Vec<Option<usize>>, Vec<bool>) {
        (self.argmax.clone(), self.hidden_pre.iter().map(|&z| z > 0.0).collect())
    }
}

/// A text encoder that maps a token id sequence to one real logit.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarModel {
    spec: EncoderSpec,
    vocab: Arc<Vocabulary>,
    params: ParamVector,
    offsets: Offsets,
}

impl ScalarModel {
    /// All-zero parameters.
    pub fn zeros(spec: EncoderSpec, vocab: Arc<Vocabulary>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.shapes(vocab.len());
        let borrowed: Vec<(&str, Vec<usize>)> =
            shapes.iter().map(|(n, s)| (n.as_str(), s.clone())).collect();
        let params = ParamVector::zeros(&borrowed);
        let offsets = Offsets::resolve(&spec, &params)?;
        Ok(ScalarModel {
            spec,
            vocab,
            params,
            offsets,
        })
    }

    /// Embeddings uniform in (-0.1, 0.1); dense and convolution weights
    /// normal with std sqrt(2 / fan_in); biases zero.
    pub fn new<R: Rng + ?Sized>(spec: EncoderSpec, vocab: Arc<Vocabulary>, rng: &mut R) -> Result<Self> {
        let mut model = Self::zeros(spec, vocab)?;
        let emb = Uniform::new(-0.1, 0.1);
        let layout = model.params.layout().to_vec();
        for slot in layout {
            let values = &mut model.params.values_mut()[slot.range()];
            if slot.name == "embedding" {
                values.iter_mut().for_each(|v| *v = emb.sample(rng));
            } else if slot.name.ends_with(".weight") {
                let fan_in = if slot.shape.len() == 2 { slot.shape[1] } else { slot.shape[0] };
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
                values.iter_mut().for_each(|v| *v = normal.sample(rng));
            }
        }
        Ok(model)
    }

    pub fn from_parts(spec: EncoderSpec, vocab: Arc<Vocabulary>, params: ParamVector) -> Result<Self> {
        let template = Self::zeros(spec, vocab)?;
        params.validate()?;
        if params.layout() != template.params.layout() {
            return Err(Error::InvalidArgument(
                "parameter layout does not match encoder spec".into(),
            ));
        }
        Ok(ScalarModel { params, ..template })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Token strings to ids, truncated to the encoder's maximum length.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        self.vocab.encode(tokens, self.spec.max_len)
    }

    pub fn forward(&self, token_ids: &[usize]) -> Result<f64> {
        Ok(self.forward_pass(token_ids)?.logit)
    }

    /// d(logit)/d(params) times `upstream`, as a fresh vector.
    pub fn backward(&self, token_ids: &[usize], upstream: f64) -> Result<ParamVector> {
        let mut grad = self.params.zeros_like();
        self.accumulate_gradient(token_ids, upstream, grad.values_mut())?;
        Ok(grad)
    }

    /// Adds `upstream * d(logit)/d(params)` into `grad` and returns the logit.
    pub fn accumulate_gradient(&self, token_ids: &[usize], upstream: f64, grad: &mut [f64]) -> Result<f64> {
        if grad.len() != self.params.len() {
            return Err(Error::ShapeMismatch {
                expected: self.params.len(),
                actual: grad.len(),
            });
        }
        let trace = self.forward_pass(token_ids)?;
        if upstream != 0.0 {
            self.backprop(&trace, upstream, grad);
        }
        Ok(trace.logit)
    }

    /// Adds `upstream * d(logit)/d(params)` for a recorded pass into `grad`.
    pub fn backward_pass(&self, pass: &ForwardPass, upstream: f64, grad: &mut [f64]) -> Result<()> {
        if grad.len() != self.params.len() {
            return Err(Error::ShapeMismatch {
                expected: self.params.len(),
                actual: grad.len(),
            });
        }
        if upstream != 0.0 {
            self.backprop(pass, upstream, grad);
        }
        Ok(())
    }

    fn sanitize(&self, token_ids: &[usize]) -> Result<Vec<usize>> {
        if token_ids.is_empty() {
            return Err(Error::EmptySequence);
        }
        let v = self.vocab.len();
        Ok(token_ids
            .iter()
            .take(self.spec.max_len)
            .map(|&id| if id < v { id } else { UNK_ID })
            .collect())
    }

    fn embedding_row(&self, id: usize) -> &[f64] {
        let d = self.spec.embed_dim;
        let start = self.offsets.embedding + id * d;
        &self.params.values()[start..start + d]
    }

    /// Runs the forward pass and keeps the activations for
    /// [`ScalarModel::backward_pass`].
    pub fn forward_pass(&self, token_ids: &[usize]) -> Result<ForwardPass> {
        let ids = self.sanitize(token_ids)?;
        let d = self.spec.embed_dim;
        let p = self.params.values();
        let mut argmax = Vec::new();
        let mut conv_inputs = Vec::new();

        let features = match self.spec.kind {
            EncoderKind::BagOfEmbeddingsMlp => {
                let mut x = vec![0.0; d];
                for &id in &ids {
                    for (xj, ej) in x.iter_mut().zip(self.embedding_row(id)) {
                        *xj += ej;
                    }
                }
                let inv = 1.0 / ids.len() as f64;
                x.iter_mut().for_each(|v| *v *= inv);
                x
            }
            EncoderKind::ConvNgram => {
                let c = self.spec.channels;
                let mut feats = Vec::with_capacity(self.spec.feature_dim());
                for (wi, &k) in self.spec.window_sizes.iter().enumerate() {
                    let mut input = ids.clone();
                    if input.len() < k {
                        input.resize(k, super::vocab::PAD_ID);
                    }
                    let (w_off, b_off) = self.offsets.conv[wi];
                    let positions = input.len() - k + 1;
                    for ch in 0..c {
                        let filter = &p[w_off + ch * k * d..w_off + (ch + 1) * k * d];
                        let bias = p[b_off + ch];
                        let mut best = f64::NEG_INFINITY;
                        let mut best_pos = 0;
                        for pos in 0..positions {
                            let mut a = bias;
                            for o in 0..k {
                                let row = self.embedding_row(input[pos + o]);
                                let f = &filter[o * d..(o + 1) * d];
                                a += f.iter().zip(row).map(|(x, y)| x * y).sum::<f64>();
                            }
                            if a > best {
                                best = a;
                                best_pos = pos;
                            }
                        }
                        if best > 0.0 {
                            feats.push(best);
                            argmax.push(Some(best_pos));
                        } else {
                            feats.push(0.0);
                            argmax.push(None);
                        }
                    }
                    conv_inputs.push(input);
                }
                feats
            }
        };

        let h = self.spec.hidden_dim;
        let f = features.len();
        let o = &self.offsets;
        let mut hidden_pre = Vec::with_capacity(h);
        let mut hidden = Vec::with_capacity(h);
        let mut logit = p[o.out_b];
        for r in 0..h {
            let row = &p[o.hidden_w + r * f..o.hidden_w + (r + 1) * f];
            let z = p[o.hidden_b + r] + row.iter().zip(&features).map(|(a, b)| a * b).sum::<f64>();
            let a = z.max(0.0);
            logit += p[o.out_w + r] * a;
            hidden_pre.push(z);
            hidden.push(a);
        }
        Ok(ForwardPass {
            ids,
            features,
            argmax,
            conv_inputs,
            hidden_pre,
            hidden,
            logit,
        })
    }

    fn backprop(&self, t: &ForwardPass, g: f64, grad: &mut [f64]) {
        let p = self.params.values();
        let o = &self.offsets;
        let d = self.spec.embed_dim;
        let h = self.spec.hidden_dim;
        let f = t.features.len();

        grad[o.out_b] += g;
        let mut d_features = vec![0.0; f];
        for r in 0..h {
            grad[o.out_w + r] += g * t.hidden[r];
            if t.hidden_pre[r] <= 0.0 {
                continue;
            }
            let dz = g * p[o.out_w + r];
            grad[o.hidden_b + r] += dz;
            let w = o.hidden_w + r * f;
            for j in 0..f {
                grad[w + j] += dz * t.features[j];
                d_features[j] += dz * p[w + j];
            }
        }

        match self.spec.kind {
            EncoderKind::BagOfEmbeddingsMlp => {
                let inv = 1.0 / t.ids.len() as f64;
                for &id in &t.ids {
                    let row = o.embedding + id * d;
                    for j in 0..d {
                        grad[row + j] += d_features[j] * inv;
                    }
                }
            }
            EncoderKind::ConvNgram => {
                let c = self.spec.channels;
                for (wi, &k) in self.spec.window_sizes.iter().enumerate() {
                    let (w_off, b_off) = o.conv[wi];
                    let input = &t.conv_inputs[wi];
                    for ch in 0..c {
                        let slot = wi * c + ch;
                        let Some(pos) = t.argmax[slot] else { continue };
                        let da = d_features[slot];
                        grad[b_off + ch] += da;
                        let filter = w_off + ch * k * d;
                        for off in 0..k {
                            let id = input[pos + off];
                            let row = o.embedding + id * d;
                            for j in 0..d {
                                grad[filter + off * d + j] += da * p[row + j];
                                grad[row + j] += da * p[filter + off * d + j];
                            }
                        }
                    }
                }
            }
        }
    }
}
