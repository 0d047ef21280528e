//! Diarization scoring: DER, JER, speaker counting and speech-type metrics.

mod assign;
mod der;
mod report;

use serde::Serialize;

pub use assign::max_weight_assignment;
pub use der::{der, jer, DerOptions, DerResult};
pub use report::{score_corpus, FileScore, ScoreReport};

use crate::annotation::Annotation;
use crate::decode::IndexList;
use crate::error::Result;
use crate::nnet::{ROW_NON, ROW_OVL, ROW_SGL};
use crate::train::build_labels;

/// Speaker-count confusion: `matrix[pred][ref]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountConfusion {
    pub matrix: Vec<Vec<usize>>,
    /// Percentage of recordings whose count was predicted exactly.
    pub accuracy: f64,
}

/// Tallies `(reference count, predicted count)` pairs.
pub fn speaker_count_confusion(pairs: &[(usize, usize)]) -> CountConfusion {
    let size = pairs.iter().map(|&(r, p)| r.max(p) + 1).max().unwrap_or(0);
    let mut matrix = vec![vec![0; size]; size];
    for &(r, p) in pairs {
        matrix[p][r] += 1;
    }
    let correct = (0..size).map(|i| matrix[i][i]).sum::<usize>();
    let accuracy = if pairs.is_empty() {
        0.0
    } else {
        100.0 * correct as f64 / pairs.len() as f64
    };
    CountConfusion { matrix, accuracy }
}

/// Frame-level detection counts for one speech type.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct TypeScore {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// Reference-negative frames.
    pub negatives: usize,
}

impl TypeScore {
    pub fn from_sets(pred: &IndexList, refr: &IndexList, frames: usize) -> Self {
        let tp = pred.as_slice().iter().filter(|&&t| refr.contains(t)).count();
        Self {
            tp,
            fp: pred.len() - tp,
            fn_: refr.len() - tp,
            negatives: frames - refr.len(),
        }
    }

    pub fn add(&self, o: &TypeScore) -> TypeScore {
        TypeScore {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            negatives: self.negatives + o.negatives,
        }
    }

    /// False alarms over reference-negative frames, in percent.
    pub fn fa_rate(&self) -> f64 {
        pct(self.fp, self.negatives)
    }

    /// Misses over reference-positive frames, in percent.
    pub fn miss_rate(&self) -> f64 {
        pct(self.fn_, self.tp + self.fn_)
    }

    /// Harmonic mean of precision and recall in percent; 100 when there is
    /// nothing to detect and nothing was predicted.
    pub fn f1(&self) -> f64 {
        let den = 2 * self.tp + self.fp + self.fn_;
        if den == 0 {
            100.0
        } else {
            100.0 * (2 * self.tp) as f64 / den as f64
        }
    }
}

fn pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct TypeMetrics {
    pub speech: TypeScore,
    pub single: TypeScore,
    pub overlap: TypeScore,
}

impl TypeMetrics {
    pub fn add(&self, o: &TypeMetrics) -> TypeMetrics {
        TypeMetrics {
            speech: self.speech.add(&o.speech),
            single: self.single.add(&o.single),
            overlap: self.overlap.add(&o.overlap),
        }
    }
}

/// Scores speech, single-speaker and overlap predictions (each over
/// `frames` frames) independently against the reference.
pub fn speech_type_metrics(
    refr: &Annotation,
    pred: &[IndexList; 3],
    frames: usize,
    frame_period: f64,
) -> Result<TypeMetrics> {
    let labels = build_labels(refr, frames, frame_period, &refr.speakers())?;
    let rows = |r: usize, positive: bool| {
        IndexList::from_sorted(
            (0..frames)
                .filter(|&t| (labels.row(r)[t] > 0.5) == positive)
                .collect(),
        )
        .expect("ascending")
    };
    Ok(TypeMetrics {
        speech: TypeScore::from_sets(&pred[0], &rows(ROW_NON, false), frames),
        single: TypeScore::from_sets(&pred[1], &rows(ROW_SGL, true), frames),
        overlap: TypeScore::from_sets(&pred[2], &rows(ROW_OVL, true), frames),
    })
}
