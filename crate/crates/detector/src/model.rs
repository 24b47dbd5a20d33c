//! Detector parameters and the scoring forward pass.
//!
//! Each modality plane pair `[parent; child]` goes through its own encoder
//! (1×1 conv 2→3, 3×3 conv 3→D, per-channel spatial normalization with an
//! affine map, rectifier, global mean pool) and becomes one token. The
//! sequence `[cls; z_θ + E_θ; z_F + E_F]` passes one pre-norm transformer
//! layer and a linear head reads the score at the class-token position.

use std::sync::Arc;

use lineage_core::{Layout, ParamVector, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DetectorError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Token width, equal to the encoders' output channels.
    pub d_model: usize,
    pub heads: usize,
    pub ff_width: usize,
    /// Output channels of the 1×1 layer.
    pub mid_channels: usize,
    pub use_weights: bool,
    pub use_features: bool,
    /// Adds the learnable no-parent logit `s′`.
    pub no_parent: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            heads: 4,
            ff_width: 128,
            mid_channels: 3,
            use_weights: true,
            use_features: true,
            no_parent: false,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.use_weights && !self.use_features {
            return Err(DetectorError::Contract(
                "both the weight and the feature modality are disabled".into(),
            ));
        }
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(DetectorError::Config(format!(
                "width {} is not divisible into {} heads",
                self.d_model, self.heads
            )));
        }
        if self.ff_width == 0 || self.mid_channels == 0 {
            return Err(DetectorError::Config(
                "layer widths must be positive".into(),
            ));
        }
        Ok(())
    }

    fn encoder_blocks(&self, prefix: &str) -> Vec<(String, Vec<usize>)> {
        let (m, d) = (self.mid_channels, self.d_model);
        vec![
            (format!("{prefix}.conv1.weight"), vec![m, 2, 1, 1]),
            (format!("{prefix}.conv1.bias"), vec![m]),
            (format!("{prefix}.conv2.weight"), vec![d, m, 3, 3]),
            (format!("{prefix}.conv2.bias"), vec![d]),
            (format!("{prefix}.norm.weight"), vec![d]),
            (format!("{prefix}.norm.bias"), vec![d]),
            (format!("{prefix}.embed"), vec![1, d]),
        ]
    }

    pub fn layout(&self) -> Layout {
        let (d, f) = (self.d_model, self.ff_width);
        let mut blocks = Vec::new();
        if self.use_weights {
            blocks.extend(self.encoder_blocks("weight_enc"));
        }
        if self.use_features {
            blocks.extend(self.encoder_blocks("feature_enc"));
        }
        blocks.push(("cls".into(), vec![1, d]));
        for (name, shape) in [
            ("tf.norm1.weight", vec![d]),
            ("tf.norm1.bias", vec![d]),
            ("tf.attn.q.weight", vec![d, d]),
            ("tf.attn.q.bias", vec![d]),
            ("tf.attn.k.weight", vec![d, d]),
            ("tf.attn.k.bias", vec![d]),
            ("tf.attn.v.weight", vec![d, d]),
            ("tf.attn.v.bias", vec![d]),
            ("tf.attn.out.weight", vec![d, d]),
            ("tf.attn.out.bias", vec![d]),
            ("tf.norm2.weight", vec![d]),
            ("tf.norm2.bias", vec![d]),
            ("tf.ff1.weight", vec![f, d]),
            ("tf.ff1.bias", vec![f]),
            ("tf.ff2.weight", vec![d, f]),
            ("tf.ff2.bias", vec![d]),
            ("head.weight", vec![1, d]),
            ("head.bias", vec![1]),
        ] {
            blocks.push((name.to_string(), shape));
        }
        if self.no_parent {
            blocks.push(("no_parent".into(), vec![1]));
        }
        Layout::from_shapes(blocks)
    }
}

/// Configuration plus a flat parameter vector in [`DetectorConfig::layout`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorParams {
    pub config: DetectorConfig,
    pub values: ParamVector,
}

/// Fan-in of a block for the symmetric uniform initializer.
fn fan_in(name: &str, shape: &[usize], cfg: &DetectorConfig) -> usize {
    let weight_fan = |w: &[usize]| w[1..].iter().product::<usize>();
    if name.ends_with("conv1.bias") {
        2
    } else if name.ends_with("conv2.bias") {
        cfg.mid_channels * 9
    } else if name == "tf.ff2.bias" {
        cfg.ff_width
    } else if name.ends_with(".bias") && name != "head.bias" {
        cfg.d_model
    } else if shape.len() >= 2 && !name.ends_with("embed") && name != "cls" {
        weight_fan(shape)
    } else {
        cfg.d_model
    }
}

impl DetectorParams {
    /// Symmetric fan-based initialization: `U(−1/√fan_in, 1/√fan_in)` for
    /// weights, biases, embeddings and the class token; normalization gains 1
    /// and shifts 0; `s′` starts at 0.
    pub fn init(config: DetectorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Arc::new(config.layout());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(layout.total());
        for b in layout.blocks() {
            let n = b.len();
            if b.name.ends_with("norm.weight")
                || b.name.ends_with("norm1.weight")
                || b.name.ends_with("norm2.weight")
            {
                values.extend(std::iter::repeat_n(1.0, n));
            } else if b.name.contains("norm") || b.name == "no_parent" {
                values.extend(std::iter::repeat_n(0.0, n));
            } else {
                let bound = 1.0 / (fan_in(&b.name, &b.shape, &config) as f64).sqrt();
                values.extend((0..n).map(|_| rng.random_range(-bound..bound)));
            }
        }
        Ok(Self {
            values: ParamVector::new(layout, values)?,
            config,
        })
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.values.block_by_name(name)
    }

    pub fn block_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let i = self.values.layout().index_of(name)?;
        Some(self.values.block_values_mut(i))
    }

    /// The learned no-parent logit.
    pub fn no_parent_logit(&self) -> Result<f64> {
        self.block("no_parent").map(|v| v[0]).ok_or_else(|| {
            DetectorError::Contract("detector was built without the no-parent logit".into())
        })
    }
}

/// Stacked `[parent; child]` planes for each modality, each `[2, H, W]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedInput {
    pub weights: Option<Tensor>,
    pub features: Option<Tensor>,
}

impl StackedInput {
    /// Stacks two equally shaped planes into `[2, H, W]`.
    pub fn stack(parent: &Tensor, child: &Tensor) -> Result<Tensor> {
        if parent.shape() != child.shape() || parent.shape().len() != 2 {
            return Err(DetectorError::Contract(format!(
                "parent plane {:?} and child plane {:?} are not aligned",
                parent.shape(),
                child.shape()
            )));
        }
        let (h, w) = (parent.rows(), parent.cols());
        let mut data = parent.data().to_vec();
        data.extend_from_slice(child.data());
        Ok(Tensor::new(vec![2, h, w], data)?)
    }
}

fn check_plane(t: &Tensor, what: &str) -> Result<()> {
    let s = t.shape();
    if s.len() != 3 || s[0] != 2 || s[1] == 0 || s[2] == 0 {
        return Err(DetectorError::Contract(format!(
            "{what} planes must be [2, H, W], got {s:?}"
        )));
    }
    if !t.is_finite() {
        return Err(DetectorError::Contract(format!(
            "{what} planes contain non-finite values"
        )));
    }
    Ok(())
}

fn encode(tape: &mut Tape, prefix: &str, planes: &Tensor) -> Var {
    let x = tape.constant(planes.clone());
    let w1 = tape.param_by_name(&format!("{prefix}.conv1.weight"));
    let b1 = tape.param_by_name(&format!("{prefix}.conv1.bias"));
    let h = tape.conv2d(x, w1, b1, 0);
    let w2 = tape.param_by_name(&format!("{prefix}.conv2.weight"));
    let b2 = tape.param_by_name(&format!("{prefix}.conv2.bias"));
    let h = tape.conv2d(h, w2, b2, 1);
    let shape = tape.value(h).shape().to_vec();
    // One statistics group over all channels and positions of this sample:
    // unlike per-channel statistics it keeps the channels' relative energy,
    // e.g. how large θ_c − θ_p is next to θ_p itself.
    let h = tape.reshape(h, vec![1, shape[0] * shape[1] * shape[2]]);
    let h = tape.layer_norm_rows(h);
    let h = tape.reshape(h, vec![shape[0], shape[1] * shape[2]]);
    let g = tape.param_by_name(&format!("{prefix}.norm.weight"));
    let b = tape.param_by_name(&format!("{prefix}.norm.bias"));
    let h = tape.mul_col(h, g);
    let h = tape.add_col(h, b);
    let h = tape.relu(h);
    let z = tape.mean_cols(h);
    let e = tape.param_by_name(&format!("{prefix}.embed"));
    tape.add(z, e)
}

fn norm(tape: &mut Tape, x: Var, prefix: &str) -> Var {
    let h = tape.layer_norm_rows(x);
    let g = tape.param_by_name(&format!("{prefix}.weight"));
    let b = tape.param_by_name(&format!("{prefix}.bias"));
    let h = tape.mul_row(h, g);
    tape.add_row(h, b)
}

fn linear(tape: &mut Tape, x: Var, prefix: &str) -> Var {
    let w = tape.param_by_name(&format!("{prefix}.weight"));
    let b = tape.param_by_name(&format!("{prefix}.bias"));
    let h = tape.matmul_bt(x, w);
    tape.add_row(h, b)
}

fn transformer(tape: &mut Tape, z: Var, cfg: &DetectorConfig) -> Var {
    let h = norm(tape, z, "tf.norm1");
    let q = linear(tape, h, "tf.attn.q");
    let k = linear(tape, h, "tf.attn.k");
    let v = linear(tape, h, "tf.attn.v");
    let dh = cfg.d_model / cfg.heads;
    let heads: Vec<Var> = (0..cfg.heads)
        .map(|i| {
            let qh = tape.slice_cols(q, i * dh, dh);
            let kh = tape.slice_cols(k, i * dh, dh);
            let vh = tape.slice_cols(v, i * dh, dh);
            let s = tape.matmul_bt(qh, kh);
            let s = tape.scale(s, 1.0 / (dh as f64).sqrt());
            let a = tape.softmax_rows(s);
            tape.matmul(a, vh)
        })
        .collect();
    let o = tape.concat_cols(&heads);
    let o = linear(tape, o, "tf.attn.out");
    let z = tape.add(z, o);
    let h = norm(tape, z, "tf.norm2");
    let h = linear(tape, h, "tf.ff1");
    let h = tape.relu(h);
    let h = linear(tape, h, "tf.ff2");
    tape.add(z, h)
}

/// Records the score of one stacked input on `tape` (which must be bound to
/// `params.values`) and returns its `1×1` node.
pub fn record_score(tape: &mut Tape, params: &DetectorParams, input: &StackedInput) -> Result<Var> {
    let cfg = &params.config;
    cfg.validate()?;
    let mut tokens = vec![tape.param_by_name("cls")];
    match (&input.weights, cfg.use_weights) {
        (Some(p), true) => {
            check_plane(p, "weight")?;
            tokens.push(encode(tape, "weight_enc", p));
        }
        (None, true) => return Err(DetectorError::Contract("weight planes missing".into())),
        _ => {}
    }
    match (&input.features, cfg.use_features) {
        (Some(p), true) => {
            check_plane(p, "feature")?;
            tokens.push(encode(tape, "feature_enc", p));
        }
        (None, true) => return Err(DetectorError::Contract("feature planes missing".into())),
        _ => {}
    }
    let z = tape.concat_rows(&tokens);
    let out = transformer(tape, z, cfg);
    let cls = tape.slice_rows(out, 0, 1);
    Ok(linear(tape, cls, "head"))
}

/// Score of one (parent candidate, child) stacked input.
pub fn detector_forward(params: &DetectorParams, input: &StackedInput) -> Result<f64> {
    let mut tape = Tape::with_params(&params.values);
    let s = record_score(&mut tape, params, input)?;
    Ok(tape.value(s).data()[0])
}

/// Score and its gradient with respect to every parameter block.
pub fn score_and_grad(params: &DetectorParams, input: &StackedInput) -> Result<(f64, ParamVector)> {
    let mut tape = Tape::with_params(&params.values);
    let s = record_score(&mut tape, params, input)?;
    Ok((tape.value(s).data()[0], tape.grad_scalar(s)?))
}
