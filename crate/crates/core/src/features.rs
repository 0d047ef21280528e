use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default stacked input dimension (23 raw bins × 15 context frames).
pub const DEFAULT_INPUT_DIM: usize = 345;

/// T×F acoustic feature sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Tensor,
    /// Seconds between consecutive frames.
    pub frame_period: f64,
}

impl FeatureMatrix {
    pub fn new(frames: usize, dim: usize, data: Vec<f64>, frame_period: f64) -> Result<Self> {
        if !(frame_period > 0.0) {
            return Err(Error::Config(format!("frame period {frame_period} must be positive")));
        }
        Ok(Self {
            values: Tensor::new(vec![frames, dim], data)?,
            frame_period,
        })
    }

    pub fn from_tensor(values: Tensor, frame_period: f64) -> Result<Self> {
        if values.rank() != 2 {
            return Err(Error::dim("FeatureMatrix", format!("rank {} tensor", values.rank())));
        }
        Ok(Self {
            values,
            frame_period,
        })
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn duration(&self) -> f64 {
        self.frames() as f64 * self.frame_period
    }

    pub fn tensor(&self) -> &Tensor {
        &self.values
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.values.row(t)
    }

    /// Frames `[from, to)` as a new matrix.
    pub fn slice_frames(&self, from: usize, to: usize) -> FeatureMatrix {
        let idx: Vec<usize> = (from..to.min(self.frames())).collect();
        FeatureMatrix {
            values: self.values.select_rows(&idx),
            frame_period: self.frame_period,
        }
    }

    /// Splices each frame with `context` neighbours on both sides (edge
    /// frames are replicated) and keeps every `factor`-th spliced frame.
    /// Output frames have `dim · (2·context + 1)` columns and period
    /// `frame_period · factor`.
    pub fn stack_and_subsample(&self, context: usize, factor: usize) -> Result<FeatureMatrix> {
        if factor == 0 {
            return Err(Error::Config("subsampling factor must be at least 1".into()));
        }
        let (t, f) = (self.frames(), self.dim());
        let width = 2 * context + 1;
        let kept: Vec<usize> = (0..t).step_by(factor).collect();
        let mut data = Vec::with_capacity(kept.len() * f * width);
        for &c in &kept {
            for k in 0..width {
                let src = (c + k).saturating_sub(context).min(t - 1);
                data.extend_from_slice(self.frame(src));
            }
        }
        FeatureMatrix::new(kept.len(), f * width, data, self.frame_period * factor as f64)
    }

    /// Reorders frames; `perm[i]` is the source frame of output frame `i`.
    pub fn permute_frames(&self, perm: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            values: self.values.select_rows(perm),
            frame_period: self.frame_period,
        }
    }
}
