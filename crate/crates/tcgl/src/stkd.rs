//! Spatial-temporal knowledge discovering: temporal frequency spectrum and
//! the closed-form motion-enhanced residual (frame minus temporal mean).
//!
//! The residual is the production path; the spectrum exists as its
//! verification oracle via the identity
//! sum_{k>=1} spectrum[k] == L * residual[frame 0].

use crate::error::{Result, TcglError};
use crate::numcore::{Tape, Tensor, Var};
use crate::synthvideo::VideoTensor;

/// Temporal frequency bands of a video: C x K x H x W with K == L.
#[derive(Debug, Clone)]
pub struct FrequencySpectrum {
    pub channels: usize,
    pub bands: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FrequencySpectrum {
    #[inline]
    pub fn idx(&self, c: usize, k: usize, y: usize, x: usize) -> usize {
        ((c * self.bands + k) * self.height + y) * self.width + x
    }

    pub fn band(&self, c: usize, k: usize) -> &[f64] {
        let fsz = self.height * self.width;
        let start = (c * self.bands + k) * fsz;
        &self.data[start..start + fsz]
    }
}

/// Temporal transform per channel/pixel with the cos(2*pi*k*i/L) kernel:
/// spectrum[k] = sum_i V(i) * cos(2*pi*k*i/L), k = 0..L-1.
pub fn dct_spectrum(video: &VideoTensor) -> FrequencySpectrum {
    let (c, l, h, w) = (video.channels, video.frames, video.height, video.width);
    let fsz = h * w;
    let mut spec = FrequencySpectrum {
        channels: c,
        bands: l,
        height: h,
        width: w,
        data: vec![0.0; c * l * fsz],
    };
    for ci in 0..c {
        for k in 0..l {
            for i in 0..l {
                let cosv = (2.0 * std::f64::consts::PI * (k * i) as f64 / l as f64).cos();
                let src = (ci * l + i) * fsz;
                let dst = (ci * l + k) * fsz;
                for px in 0..fsz {
                    spec.data[dst + px] += video.samples[src + px] * cosv;
                }
            }
        }
    }
    spec
}

/// Motion-enhanced residual: out(i) = V(i) - (1/L) * sum_j V(j).
pub fn stkd_residual(video: &VideoTensor) -> VideoTensor {
    let (c, l, h, w) = (video.channels, video.frames, video.height, video.width);
    let fsz = h * w;
    let mut out = video.clone();
    for ci in 0..c {
        let base = ci * l * fsz;
        for px in 0..fsz {
            // mean anchored at frame 0: a temporally constant pixel cancels
            // exactly, matching the tape operator's arithmetic
            let anchor = video.samples[base + px];
            let mut dev = 0.0;
            for i in 0..l {
                dev += video.samples[base + i * fsz + px] - anchor;
            }
            let mean = anchor + dev / l as f64;
            for i in 0..l {
                out.samples[base + i * fsz + px] -= mean;
            }
        }
    }
    out
}

/// Differentiable residual on the tape; the input var must be rank 4.
pub fn stkd_residual_var(tape: &Tape, video: Var) -> Result<Var> {
    tape.sub_temporal_mean(video)
}

/// Max elementwise error of the spectral identity
/// sum_{k=1}^{L-1} spectrum[k] == L * residual[frame 0].
pub fn spectral_identity_error(video: &VideoTensor) -> f64 {
    let spec = dct_spectrum(video);
    let res = stkd_residual(video);
    let (c, l) = (video.channels, video.frames);
    let fsz = video.height * video.width;
    let mut max_err = 0.0f64;
    for ci in 0..c {
        let mut summed = vec![0.0; fsz];
        for k in 1..l {
            for (s, b) in summed.iter_mut().zip(spec.band(ci, k)) {
                *s += b;
            }
        }
        let frame0 = &res.samples[ci * l * fsz..ci * l * fsz + fsz];
        for (s, r) in summed.iter().zip(frame0) {
            max_err = max_err.max((s - l as f64 * r).abs());
        }
    }
    max_err
}

/// Residual applied through the tape to a plain video (convenience for
/// pipelines that do not differentiate through the input).
pub fn residual_tensor(video: &VideoTensor) -> Tensor {
    let r = stkd_residual(video);
    r.to_tensor()
}

pub fn check_rank4(t: &Tensor) -> Result<()> {
    if t.shape.len() != 4 {
        return Err(TcglError::ShapeMismatch(format!(
            "expected [C,L,H,W], got {:?}",
            t.shape
        )));
    }
    Ok(())
}
