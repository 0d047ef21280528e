use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::SpeakerModel;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::nnet::{FrameEmbeddings, PosteriorMatrix, ACTIVITY_ROWS};
use crate::tensor::Tensor;
use crate::train::LabelMatrix;

/// A stand-in model whose outputs come straight from reference labels.
///
/// Frame embeddings are the speaker activity vectors. A speaker enrollment
/// `e` scores frame `t` by `w·y_t` with `w = e / Σe`, so an enrollment taken
/// from one speaker's single-speaker frames reproduces that speaker's row.
/// Logits are `gain · (score − ½)`, optionally perturbed by temporally
/// correlated Gaussian noise that is fixed per output row.
#[derive(Debug, Clone)]
pub struct OracleStub {
    labels: LabelMatrix,
    pub gain: f64,
    pub noise: Option<LogitNoise>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogitNoise {
    pub sigma: f64,
    /// Lag-one correlation of successive frames, in `[0, 1)`.
    pub correlation: f64,
    pub seed: u64,
}

impl OracleStub {
    pub fn new(labels: LabelMatrix) -> Self {
        Self {
            labels,
            gain: 8.0,
            noise: None,
        }
    }

    pub fn with_noise(mut self, noise: LogitNoise) -> Self {
        self.noise = Some(noise);
        self
    }

    pub fn labels(&self) -> &LabelMatrix {
        &self.labels
    }

    fn noise_row(&self, row: usize) -> Vec<f64> {
        let t = self.labels.frames();
        let Some(n) = self.noise else {
            return vec![0.0; t];
        };
        let mut rng = ChaCha8Rng::seed_from_u64(n.seed ^ (row as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let rho = n.correlation;
        let innov = (1.0 - rho * rho).sqrt();
        let mut out = Vec::with_capacity(t);
        let mut prev: f64 = StandardNormal.sample(&mut rng);
        for _ in 0..t {
            out.push(n.sigma * prev);
            let e: f64 = StandardNormal.sample(&mut rng);
            prev = rho * prev + innov * e;
        }
        out
    }
}

impl SpeakerModel for OracleStub {
    fn embed(&self, features: &FeatureMatrix) -> Result<FrameEmbeddings> {
        let t = self.labels.frames();
        if features.frames() != t {
            return Err(Error::dim(
                "OracleStub::embed",
                format!("{} feature frames vs {} label frames", features.frames(), t),
            ));
        }
        let s = self.labels.num_speakers().max(1);
        let mut data = vec![0.0; t * s];
        for k in 0..self.labels.num_speakers() {
            for (i, &y) in self.labels.speaker_row(k).iter().enumerate() {
                data[i * s + k] = y;
            }
        }
        FrameEmbeddings::new(Tensor::new(vec![t, s], data)?)
    }

    fn infer(&self, emb: &FrameEmbeddings, speakers: &[Vec<f64>]) -> Result<PosteriorMatrix> {
        let t = self.labels.frames();
        if emb.frames() != t {
            return Err(Error::dim("OracleStub::infer", "embedding frames differ from labels"));
        }
        let rows = ACTIVITY_ROWS + speakers.len();
        let mut logits = Vec::with_capacity(rows * t);
        for r in 0..ACTIVITY_ROWS {
            let noise = self.noise_row(r);
            logits.extend(
                self.labels
                    .row(r)
                    .iter()
                    .zip(&noise)
                    .map(|(&y, n)| self.gain * (y - 0.5) + n),
            );
        }
        for (k, e) in speakers.iter().enumerate() {
            if e.len() != emb.dim() {
                return Err(Error::Config(format!("enrollment dim {} vs {}", e.len(), emb.dim())));
            }
            let total: f64 = e.iter().sum();
            let noise = self.noise_row(ACTIVITY_ROWS + k);
            for (i, n) in noise.iter().enumerate() {
                let score = if total > 0.0 {
                    e.iter().zip(emb.frame(i)).map(|(a, b)| a * b).sum::<f64>() / total
                } else {
                    0.0
                };
                logits.push(self.gain * (score - 0.5) + n);
            }
        }
        PosteriorMatrix::from_logits(&Tensor::new(vec![rows, t], logits)?)
    }
}
