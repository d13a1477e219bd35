//! Unified feature interface: converts backbone output tensors of three
//! kinds into a flat token block and back, exactly.
//!
//! Flattening is row-major over (t, h, w) with channels as the feature axis.
//! A dropped classification token is preserved in the descriptor so the
//! inverse map can restore the original tensor bit-exactly.

use crate::error::{numeric_err, shape_err, Result};
use crate::numerics::Matrix;

/// The three backbone output layouts the interface understands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    VitTokens,
    CnnMap,
    VideoClip,
}

/// Raw backbone output before dimension unification.
#[derive(Debug, Clone, PartialEq)]
pub enum RawTensor {
    /// (N+1) x D token matrix; row 0 is the classification token.
    VitTokens(Matrix),
    /// C' x H' x W' feature map, row-major over (c, h, w).
    CnnMap {
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    },
    /// T x C' x H' x W' clip features, row-major over (t, c, h, w).
    VideoClip {
        frames: usize,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    },
}

impl RawTensor {
    pub fn kind(&self) -> TensorKind {
        match self {
            RawTensor::VitTokens(_) => TensorKind::VitTokens,
            RawTensor::CnnMap { .. } => TensorKind::CnnMap,
            RawTensor::VideoClip { .. } => TensorKind::VideoClip,
        }
    }

    fn values(&self) -> &[f64] {
        match self {
            RawTensor::VitTokens(m) => m.data(),
            RawTensor::CnnMap { data, .. } => data,
            RawTensor::VideoClip { data, .. } => data,
        }
    }
}

/// The unified N x D token matrix every backbone kind is flattened into.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBlock {
    data: Matrix,
}

impl FeatureBlock {
    pub fn new(data: Matrix) -> Result<Self> {
        if data.rows() == 0 || data.cols() == 0 {
            return shape_err("feature block needs N >= 1 and D >= 1");
        }
        if !data.is_finite() {
            return numeric_err("feature block contains a non-finite value");
        }
        Ok(FeatureBlock { data })
    }

    /// Token count N.
    pub fn n(&self) -> usize {
        self.data.rows()
    }

    /// Feature width D.
    pub fn d(&self) -> usize {
        self.data.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.data
    }

    pub fn into_matrix(self) -> Matrix {
        self.data
    }
}

/// Provenance of a [`FeatureBlock`]: the original layout plus whatever was
/// dropped on the way in, enough to invert the flattening exactly.
#[derive(Debug, Clone, PartialEq)]
pub enum ShapeDescriptor {
    VitTokens {
        /// Class token that was removed from row 0.
        class_token: Vec<f64>,
    },
    CnnMap {
        channels: usize,
        height: usize,
        width: usize,
    },
    VideoClip {
        frames: usize,
        channels: usize,
        height: usize,
        width: usize,
    },
}

impl ShapeDescriptor {
    pub fn kind(&self) -> TensorKind {
        match self {
            ShapeDescriptor::VitTokens { .. } => TensorKind::VitTokens,
            ShapeDescriptor::CnnMap { .. } => TensorKind::CnnMap,
            ShapeDescriptor::VideoClip { .. } => TensorKind::VideoClip,
        }
    }

    /// (N, D) this descriptor expects of its block.
    fn block_dims(&self) -> (usize, usize) {
        match self {
            ShapeDescriptor::VitTokens { class_token } => (0, class_token.len()),
            ShapeDescriptor::CnnMap {
                channels,
                height,
                width,
            } => (height * width, *channels),
            ShapeDescriptor::VideoClip {
                frames,
                channels,
                height,
                width,
            } => (frames * height * width, *channels),
        }
    }
}

/// Flattens a raw backbone tensor into an N x D block plus its descriptor.
///
/// VitTokens drops row 0 into the descriptor. CnnMap maps token
/// t = h*W' + w with the channel as the feature axis. VideoClip maps
/// t = tau*H'*W' + h*W' + w.
pub fn unify(raw: &RawTensor) -> Result<(FeatureBlock, ShapeDescriptor)> {
    if raw.values().iter().any(|v| !v.is_finite()) {
        return numeric_err("unify input contains a non-finite value");
    }
    match raw {
        RawTensor::VitTokens(m) => {
            if m.rows() < 2 || m.cols() == 0 {
                return shape_err(format!(
                    "VitTokens input must be at least 2 x 1, got {}x{}",
                    m.rows(),
                    m.cols()
                ));
            }
            let n = m.rows() - 1;
            let d = m.cols();
            let block = Matrix::from_fn(n, d, |r, c| m.get(r + 1, c));
            let class_token = m.row(0).to_vec();
            Ok((
                FeatureBlock::new(block)?,
                ShapeDescriptor::VitTokens { class_token },
            ))
        }
        RawTensor::CnnMap {
            channels,
            height,
            width,
            data,
        } => {
            let (c, h, w) = (*channels, *height, *width);
            if c == 0 || h == 0 || w == 0 || data.len() != c * h * w {
                return shape_err(format!(
                    "CnnMap dims {}x{}x{} inconsistent with {} values",
                    c,
                    h,
                    w,
                    data.len()
                ));
            }
            let block = Matrix::from_fn(h * w, c, |t, ch| data[ch * h * w + t]);
            Ok((
                FeatureBlock::new(block)?,
                ShapeDescriptor::CnnMap {
                    channels: c,
                    height: h,
                    width: w,
                },
            ))
        }
        RawTensor::VideoClip {
            frames,
            channels,
            height,
            width,
            data,
        } => {
            let (t, c, h, w) = (*frames, *channels, *height, *width);
            if t == 0 || c == 0 || h == 0 || w == 0 || data.len() != t * c * h * w {
                return shape_err(format!(
                    "VideoClip dims {}x{}x{}x{} inconsistent with {} values",
                    t,
                    c,
                    h,
                    w,
                    data.len()
                ));
            }
            let spatial = h * w;
            let block = Matrix::from_fn(t * spatial, c, |token, ch| {
                let tau = token / spatial;
                let s = token % spatial;
                data[tau * c * spatial + ch * spatial + s]
            });
            Ok((
                FeatureBlock::new(block)?,
                ShapeDescriptor::VideoClip {
                    frames: t,
                    channels: c,
                    height: h,
                    width: w,
                },
            ))
        }
    }
}

/// Exact inverse of [`unify`]. For VitTokens the stored class token is
/// re-inserted as row 0.
pub fn inverse_unify(block: &FeatureBlock, desc: &ShapeDescriptor) -> Result<RawTensor> {
    let (expect_n, expect_d) = desc.block_dims();
    if block.d() != expect_d {
        return shape_err(format!(
            "descriptor expects D={}, block has D={}",
            expect_d,
            block.d()
        ));
    }
    if expect_n != 0 && block.n() != expect_n {
        return shape_err(format!(
            "descriptor expects N={}, block has N={}",
            expect_n,
            block.n()
        ));
    }
    let m = block.matrix();
    match desc {
        ShapeDescriptor::VitTokens { class_token } => {
            let n = block.n();
            let d = block.d();
            let full = Matrix::from_fn(n + 1, d, |r, c| {
                if r == 0 {
                    class_token[c]
                } else {
                    m.get(r - 1, c)
                }
            });
            Ok(RawTensor::VitTokens(full))
        }
        ShapeDescriptor::CnnMap {
            channels,
            height,
            width,
        } => {
            let (c, h, w) = (*channels, *height, *width);
            let mut data = vec![0.0; c * h * w];
            for token in 0..h * w {
                for ch in 0..c {
                    data[ch * h * w + token] = m.get(token, ch);
                }
            }
            Ok(RawTensor::CnnMap {
                channels: c,
                height: h,
                width: w,
                data,
            })
        }
        ShapeDescriptor::VideoClip {
            frames,
            channels,
            height,
            width,
        } => {
            let (t, c, h, w) = (*frames, *channels, *height, *width);
            let spatial = h * w;
            let mut data = vec![0.0; t * c * spatial];
            for token in 0..t * spatial {
                let tau = token / spatial;
                let s = token % spatial;
                for ch in 0..c {
                    data[tau * c * spatial + ch * spatial + s] = m.get(token, ch);
                }
            }
            Ok(RawTensor::VideoClip {
                frames: t,
                channels: c,
                height: h,
                width: w,
                data,
            })
        }
    }
}
