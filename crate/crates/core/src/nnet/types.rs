use crate::error::{Error, Result};
use crate::tensor::{sigmoid, Tensor};

/// Row indices of the three activity classes.
pub const ROW_NON: usize = 0;
pub const ROW_SGL: usize = 1;
pub const ROW_OVL: usize = 2;
/// Number of activity rows preceding the speaker rows.
pub const ACTIVITY_ROWS: usize = 3;

/// T×D frame-level speaker embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEmbeddings {
    pub values: Tensor,
}

impl FrameEmbeddings {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.rank() != 2 || values.rows() == 0 {
            return Err(Error::dim("FrameEmbeddings", format!("{:?}", values.shape())));
        }
        if !values.is_finite() {
            return Err(Error::Numeric("frame embeddings"));
        }
        Ok(Self { values })
    }

    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.values.row(t)
    }

    /// Mean embedding over the given frames.
    pub fn average(&self, frames: &[usize]) -> Result<Vec<f64>> {
        if frames.is_empty() {
            return Err(Error::Contract("cannot average zero frames".into()));
        }
        let mut out = vec![0.0; self.dim()];
        for &t in frames {
            if t >= self.frames() {
                return Err(Error::dim("average", format!("frame {t} of {}", self.frames())));
            }
            for (o, v) in out.iter_mut().zip(self.frame(t)) {
                *o += v;
            }
        }
        let n = frames.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        Ok(out)
    }
}

/// Decoder queries ordered `[non, sgl, ovl, spk1..spkS]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnrollmentSet {
    /// 3×D activity enrollments.
    pub activity: Tensor,
    /// S×D speaker enrollments (S may be zero).
    pub speakers: Tensor,
}

impl EnrollmentSet {
    pub fn new(activity: Tensor, speakers: Vec<Vec<f64>>) -> Result<Self> {
        let dim = activity.cols();
        if activity.rank() != 2 || activity.rows() != ACTIVITY_ROWS {
            return Err(Error::dim(
                "EnrollmentSet",
                format!("activity block {:?} must be 3×D", activity.shape()),
            ));
        }
        let speakers = if speakers.is_empty() {
            Tensor::zeros(vec![0, dim])
        } else {
            Tensor::from_rows(&speakers)?
        };
        if speakers.cols() != dim {
            return Err(Error::dim(
                "EnrollmentSet",
                format!("speaker dim {} vs activity dim {dim}", speakers.cols()),
            ));
        }
        Ok(Self { activity, speakers })
    }

    pub fn num_speakers(&self) -> usize {
        self.speakers.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.activity.cols()
    }

    /// All rows stacked in decoder order.
    pub fn stacked(&self) -> Tensor {
        let mut data = self.activity.data().to_vec();
        data.extend_from_slice(self.speakers.data());
        Tensor::new(vec![ACTIVITY_ROWS + self.num_speakers(), self.dim()], data).expect("shape")
    }
}

/// (S+3)×D attractors aligned with the enrollment rows.
#[derive(Debug, Clone, PartialEq)]
pub struct AttractorSet {
    pub values: Tensor,
}

impl AttractorSet {
    pub fn rows(&self) -> usize {
        self.values.rows()
    }
}

/// (S+3)×T posteriors, every entry strictly inside (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix {
    values: Tensor,
}

impl PosteriorMatrix {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.rank() != 2 || values.rows() < ACTIVITY_ROWS {
            return Err(Error::dim(
                "PosteriorMatrix",
                format!("{:?} needs at least 3 rows", values.shape()),
            ));
        }
        if values.data().iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::Numeric("posterior outside (0, 1)"));
        }
        Ok(Self { values })
    }

    /// Applies the logistic function to a logit matrix.
    pub fn from_logits(logits: &Tensor) -> Result<Self> {
        let data = logits.data().iter().map(|&z| sigmoid(z)).collect();
        Self::new(Tensor::new(logits.shape().to_vec(), data)?)
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn row(&self, r: usize) -> &[f64] {
        self.values.row(r)
    }

    pub fn frames(&self) -> usize {
        self.values.cols()
    }

    pub fn num_speakers(&self) -> usize {
        self.values.rows() - ACTIVITY_ROWS
    }

    pub fn speaker_row(&self, s: usize) -> &[f64] {
        self.row(ACTIVITY_ROWS + s)
    }
}

/// `σ(A·Eᵀ)` evaluated directly.
pub fn posteriors(attr: &AttractorSet, emb: &FrameEmbeddings) -> Result<PosteriorMatrix> {
    if attr.values.cols() != emb.dim() {
        return Err(Error::Config(format!(
            "attractor dim {} vs embedding dim {}",
            attr.values.cols(),
            emb.dim()
        )));
    }
    let logits = attr.values.matmul(&emb.values.transpose()?)?;
    PosteriorMatrix::from_logits(&logits)
}
