//! Synthetic acoustic features from speaker signatures.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::annotation::Annotation;
use crate::error::Result;
use crate::features::FeatureMatrix;

/// Per-recording feature generator: each raw frame is the sum of the
/// signatures of the active speakers (or the non-speech signature when no
/// one speaks) plus Gaussian noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthProfile {
    /// Unit vectors, one per speaker.
    pub signatures: Vec<Vec<f64>>,
    pub nonspeech: Vec<f64>,
    pub noise: f64,
}

impl SynthProfile {
    /// Draws `n_speakers + 1` random unit vectors whose pairwise angles are
    /// all at least `min_angle` radians.
    pub fn random<R: Rng + ?Sized>(n_speakers: usize, dim: usize, noise: f64, min_angle: f64, rng: &mut R) -> Self {
        let max_cos = min_angle.cos();
        let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(n_speakers + 1);
        while vecs.len() < n_speakers + 1 {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-9 {
                continue;
            }
            let v: Vec<f64> = v.into_iter().map(|x| x / norm).collect();
            let ok = vecs
                .iter()
                .all(|u| u.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>().abs() <= max_cos);
            if ok {
                vecs.push(v);
            }
        }
        let nonspeech = vecs.pop().expect("n + 1 vectors");
        Self {
            signatures: vecs,
            nonspeech,
            noise,
        }
    }

    pub fn dim(&self) -> usize {
        self.nonspeech.len()
    }

    /// Noise-free frame for a set of active speakers.
    pub fn mixture(&self, active: &[usize]) -> Vec<f64> {
        if active.is_empty() {
            return self.nonspeech.clone();
        }
        let mut out = vec![0.0; self.dim()];
        for &s in active {
            for (o, x) in out.iter_mut().zip(&self.signatures[s]) {
                *o += x;
            }
        }
        out
    }

    /// Raw frames of period `period` covering `frames` frames. Speaker `k`
    /// of `speakers` is active in a frame whose midpoint lies in one of its
    /// segments.
    pub fn render<R: Rng + ?Sized>(
        &self,
        ann: &Annotation,
        speakers: &[String],
        frames: usize,
        period: f64,
        rng: &mut R,
    ) -> Result<FeatureMatrix> {
        let tracks: Vec<Vec<(f64, f64)>> = speakers.iter().map(|s| ann.speaker_intervals(s)).collect();
        let noise = Normal::new(0.0, self.noise.max(0.0)).expect("finite noise");
        let mut data = Vec::with_capacity(frames * self.dim());
        let mut cursor = vec![0usize; tracks.len()];
        for t in 0..frames {
            let mid = (t as f64 + 0.5) * period;
            let mut active = Vec::new();
            for (k, iv) in tracks.iter().enumerate() {
                while cursor[k] < iv.len() && iv[cursor[k]].1 <= mid {
                    cursor[k] += 1;
                }
                if cursor[k] < iv.len() && iv[cursor[k]].0 <= mid {
                    active.push(k);
                }
            }
            let base = self.mixture(&active);
            if self.noise > 0.0 {
                data.extend(base.into_iter().map(|x| x + noise.sample(rng)));
            } else {
                data.extend(base);
            }
        }
        FeatureMatrix::new(frames, self.dim(), data, period)
    }
}
