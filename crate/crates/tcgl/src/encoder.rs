//! Shared clip encoder: maps a motion-enhanced snippet or frame-set of any
//! temporal length to an F-dimensional feature vector. One parameter set
//! serves snippets and frame-sets alike (global temporal pooling makes the
//! encoder length-agnostic).

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Result, TcglError};
use crate::numcore::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderVariant {
    PooledMlp,
    TinyConv3d,
}

impl EncoderVariant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pooled-mlp" => Ok(EncoderVariant::PooledMlp),
            "tiny-conv3d" => Ok(EncoderVariant::TinyConv3d),
            other => Err(TcglError::InvalidConfig(format!(
                "unknown encoder variant '{other}'"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EncoderVariant::PooledMlp => "pooled-mlp",
            EncoderVariant::TinyConv3d => "tiny-conv3d",
        }
    }
}

/// Encoder parameters. PooledMlp: pool per channel, then a two-layer MLP
/// C -> F -> F. TinyConv3d: a spatiotemporal conv3d (O channels), relu, a
/// temporal-only conv3d (O channels), relu, global pooling, then a linear
/// map O -> F. The second, purely temporal layer lets the encoder compose
/// sharp temporal-frequency selectivity without a spatial cost.
#[derive(Debug, Clone)]
pub enum EncoderParams {
    PooledMlp {
        w1: Tensor,
        b1: Tensor,
        w2: Tensor,
        b2: Tensor,
    },
    TinyConv3d {
        kernel: Tensor,
        kernel2: Tensor,
        w: Tensor,
        b: Tensor,
    },
}

/// Conv geometry for the tiny-conv3d variant.
#[derive(Debug, Clone, Copy)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub t: usize,
    pub d: usize,
}

impl EncoderParams {
    pub fn init(
        variant: EncoderVariant,
        channels: usize,
        feature_dim: usize,
        conv: ConvSpec,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        match variant {
            EncoderVariant::PooledMlp => EncoderParams::PooledMlp {
                w1: Tensor::init_uniform(vec![channels, feature_dim], channels, &mut rng),
                b1: Tensor::init_uniform(vec![feature_dim], channels, &mut rng),
                w2: Tensor::init_uniform(vec![feature_dim, feature_dim], feature_dim, &mut rng),
                b2: Tensor::init_uniform(vec![feature_dim], feature_dim, &mut rng),
            },
            EncoderVariant::TinyConv3d => {
                let fan_in = channels * conv.t * conv.d * conv.d;
                let fan_in2 = conv.out_channels * conv.t;
                EncoderParams::TinyConv3d {
                    kernel: Tensor::init_uniform(
                        vec![conv.out_channels, channels, conv.t, conv.d, conv.d],
                        fan_in,
                        &mut rng,
                    ),
                    kernel2: Tensor::init_uniform(
                        vec![conv.out_channels, conv.out_channels, conv.t, 1, 1],
                        fan_in2,
                        &mut rng,
                    ),
                    w: Tensor::init_uniform(
                        vec![conv.out_channels, feature_dim],
                        conv.out_channels,
                        &mut rng,
                    ),
                    b: Tensor::init_uniform(vec![feature_dim], conv.out_channels, &mut rng),
                }
            }
        }
    }

    pub fn variant(&self) -> EncoderVariant {
        match self {
            EncoderParams::PooledMlp { .. } => EncoderVariant::PooledMlp,
            EncoderParams::TinyConv3d { .. } => EncoderVariant::TinyConv3d,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            EncoderParams::PooledMlp { b2, .. } => b2.shape[0],
            EncoderParams::TinyConv3d { b, .. } => b.shape[0],
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            EncoderParams::PooledMlp { w1, .. } => w1.shape[0],
            EncoderParams::TinyConv3d { kernel, .. } => kernel.shape[1],
        }
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        match self {
            EncoderParams::PooledMlp { w1, b1, w2, b2 } => vec![
                ("encoder.mlp.w1".into(), w1),
                ("encoder.mlp.b1".into(), b1),
                ("encoder.mlp.w2".into(), w2),
                ("encoder.mlp.b2".into(), b2),
            ],
            EncoderParams::TinyConv3d { kernel, kernel2, w, b } => vec![
                ("encoder.conv.kernel".into(), kernel),
                ("encoder.conv.kernel2".into(), kernel2),
                ("encoder.out.w".into(), w),
                ("encoder.out.b".into(), b),
            ],
        }
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        match self {
            EncoderParams::PooledMlp { w1, b1, w2, b2 } => vec![
                ("encoder.mlp.w1".into(), w1),
                ("encoder.mlp.b1".into(), b1),
                ("encoder.mlp.w2".into(), w2),
                ("encoder.mlp.b2".into(), b2),
            ],
            EncoderParams::TinyConv3d { kernel, kernel2, w, b } => vec![
                ("encoder.conv.kernel".into(), kernel),
                ("encoder.conv.kernel2".into(), kernel2),
                ("encoder.out.w".into(), w),
                ("encoder.out.b".into(), b),
            ],
        }
    }

    pub fn track(&self, tape: &Tape) -> EncoderVars {
        match self {
            EncoderParams::PooledMlp { w1, b1, w2, b2 } => EncoderVars::PooledMlp {
                w1: tape.leaf(w1.clone()),
                b1: tape.leaf(b1.clone()),
                w2: tape.leaf(w2.clone()),
                b2: tape.leaf(b2.clone()),
            },
            EncoderParams::TinyConv3d { kernel, kernel2, w, b } => EncoderVars::TinyConv3d {
                kernel: tape.leaf(kernel.clone()),
                kernel2: tape.leaf(kernel2.clone()),
                w: tape.leaf(w.clone()),
                b: tape.leaf(b.clone()),
            },
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum EncoderVars {
    PooledMlp { w1: Var, b1: Var, w2: Var, b2: Var },
    TinyConv3d { kernel: Var, kernel2: Var, w: Var, b: Var },
}

impl EncoderVars {
    pub fn registry(&self) -> Vec<(String, Var)> {
        match self {
            EncoderVars::PooledMlp { w1, b1, w2, b2 } => vec![
                ("encoder.mlp.w1".into(), *w1),
                ("encoder.mlp.b1".into(), *b1),
                ("encoder.mlp.w2".into(), *w2),
                ("encoder.mlp.b2".into(), *b2),
            ],
            EncoderVars::TinyConv3d { kernel, kernel2, w, b } => vec![
                ("encoder.conv.kernel".into(), *kernel),
                ("encoder.conv.kernel2".into(), *kernel2),
                ("encoder.out.w".into(), *w),
                ("encoder.out.b".into(), *b),
            ],
        }
    }
}

/// Encode a clip [C, L', H, W] into an F-vector. Any L' >= 1 is legal.
pub fn encode(tape: &Tape, clip: Var, vars: &EncoderVars, channels: usize) -> Result<Var> {
    let shape = tape.shape(clip);
    if shape.len() != 4 || shape[0] != channels {
        return Err(TcglError::ShapeMismatch(format!(
            "encode expects [{channels},L,H,W], got {shape:?}"
        )));
    }
    match vars {
        EncoderVars::PooledMlp { w1, b1, w2, b2 } => {
            let pooled = tape.global_avg_pool(clip)?;
            let h = tape.affine_vec(pooled, *w1, *b1)?;
            let h = tape.relu(h);
            tape.affine_vec(h, *w2, *b2)
        }
        EncoderVars::TinyConv3d { kernel, kernel2, w, b } => {
            let conv = tape.conv3d(clip, *kernel)?;
            let act = tape.relu(conv);
            let conv2 = tape.conv3d(act, *kernel2)?;
            let act2 = tape.relu(conv2);
            let pooled = tape.global_avg_pool(act2)?;
            tape.affine_vec(pooled, *w, *b)
        }
    }
}
