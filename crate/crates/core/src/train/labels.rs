use crate::annotation::Annotation;
use crate::error::{Error, Result};
use crate::nnet::{ACTIVITY_ROWS, ROW_NON, ROW_OVL, ROW_SGL};
use crate::tensor::Tensor;

/// Binary (S+3)×T targets ordered `[non, sgl, ovl, spk1..spkS]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    values: Tensor,
    pub frame_period: f64,
    /// Speaker label of each speaker row.
    pub speakers: Vec<String>,
}

impl LabelMatrix {
    /// Builds labels from per-speaker activity (`activity[s][t]`), deriving
    /// the three activity rows.
    pub fn from_activity(activity: &[Vec<bool>], frames: usize, frame_period: f64, speakers: Vec<String>) -> Result<Self> {
        if activity.len() != speakers.len() || activity.iter().any(|r| r.len() != frames) {
            return Err(Error::dim("LabelMatrix", "activity rows must be S×T"));
        }
        let rows = ACTIVITY_ROWS + speakers.len();
        let mut data = vec![0.0; rows * frames];
        for t in 0..frames {
            let active = activity.iter().filter(|r| r[t]).count();
            let class = match active {
                0 => ROW_NON,
                1 => ROW_SGL,
                _ => ROW_OVL,
            };
            data[class * frames + t] = 1.0;
            for (s, row) in activity.iter().enumerate() {
                if row[t] {
                    data[(ACTIVITY_ROWS + s) * frames + t] = 1.0;
                }
            }
        }
        Ok(Self {
            values: Tensor::new(vec![rows, frames], data)?,
            frame_period,
            speakers,
        })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn frames(&self) -> usize {
        self.values.cols()
    }

    pub fn num_speakers(&self) -> usize {
        self.speakers.len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        self.values.row(r)
    }

    pub fn speaker_row(&self, s: usize) -> &[f64] {
        self.values.row(ACTIVITY_ROWS + s)
    }

    pub fn is_active(&self, s: usize, t: usize) -> bool {
        self.speaker_row(s)[t] > 0.5
    }

    /// Frames where speaker `s` is the only active speaker.
    pub fn single_speaker_frames(&self, s: usize) -> Vec<usize> {
        let sgl = self.row(ROW_SGL);
        let spk = self.speaker_row(s);
        (0..self.frames())
            .filter(|&t| sgl[t] > 0.5 && spk[t] > 0.5)
            .collect()
    }

    /// Keeps the activity rows and the speaker rows flagged in `keep`.
    pub fn retain_speakers(&self, keep: &[bool]) -> LabelMatrix {
        let mut rows: Vec<usize> = (0..ACTIVITY_ROWS).collect();
        let mut speakers = Vec::new();
        for (s, &k) in keep.iter().enumerate() {
            if k {
                rows.push(ACTIVITY_ROWS + s);
                speakers.push(self.speakers[s].clone());
            }
        }
        LabelMatrix {
            values: self.values.select_rows(&rows),
            frame_period: self.frame_period,
            speakers,
        }
    }

    /// Swaps two speaker rows.
    pub fn swap_speakers(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        let t = self.frames();
        let data = self.values.data_mut();
        let (ra, rb) = ((ACTIVITY_ROWS + a) * t, (ACTIVITY_ROWS + b) * t);
        for j in 0..t {
            data.swap(ra + j, rb + j);
        }
        self.speakers.swap(a, b);
    }
}

/// Rasterizes an annotation onto `frames` frames of length `frame_period`.
/// Frame `t` is active for a speaker when its midpoint `(t + ½)·Δ` falls in
/// one of the speaker's half-open segments.
pub fn build_labels(
    ann: &Annotation,
    frames: usize,
    frame_period: f64,
    speaker_order: &[String],
) -> Result<LabelMatrix> {
    let mut activity = vec![vec![false; frames]; speaker_order.len()];
    for seg in &ann.segments {
        let s = speaker_order
            .iter()
            .position(|name| *name == seg.speaker)
            .ok_or_else(|| Error::Contract(format!("speaker {:?} missing from speaker order", seg.speaker)))?;
        // first frame with midpoint >= start, last with midpoint < end
        let first = ((seg.start / frame_period) - 0.5).ceil().max(0.0) as usize;
        let mut t = first;
        while t < frames && (t as f64 + 0.5) * frame_period < seg.end {
            if (t as f64 + 0.5) * frame_period >= seg.start {
                activity[s][t] = true;
            }
            t += 1;
        }
    }
    LabelMatrix::from_activity(&activity, frames, frame_period, speaker_order.to_vec())
}
