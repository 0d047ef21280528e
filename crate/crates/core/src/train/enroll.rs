//! Teacher-forced enrollment construction.

use rand::Rng;

use super::labels::LabelMatrix;
use crate::decode::segments::{continuous_segments, IndexList};
use crate::error::{Error, Result};
use crate::nnet::FrameEmbeddings;

/// Converts a duration range in seconds to an inclusive frame-count range.
pub fn el_range_frames(el_range: (f64, f64), frame_period: f64) -> (usize, usize) {
    let lo = ((el_range.0 / frame_period).round() as usize).max(1);
    let hi = ((el_range.1 / frame_period).round() as usize).max(lo);
    (lo, hi)
}

/// Picks a contiguous window of `len` frames uniformly among all windows
/// that fit inside one of `runs`. When no run is long enough, `len` is cut
/// to the longest run.
pub fn sample_window<R: Rng + ?Sized>(runs: &[Vec<usize>], len: usize, rng: &mut R) -> Vec<usize> {
    let longest = runs.iter().map(Vec::len).max().unwrap_or(0);
    if longest == 0 {
        return Vec::new();
    }
    let len = len.clamp(1, longest);
    let total: usize = runs
        .iter()
        .filter(|r| r.len() >= len)
        .map(|r| r.len() - len + 1)
        .sum();
    let mut pick = rng.random_range(0..total);
    for r in runs.iter().filter(|r| r.len() >= len) {
        let n = r.len() - len + 1;
        if pick < n {
            return r[pick..pick + len].to_vec();
        }
        pick -= n;
    }
    unreachable!("window index within total")
}

/// For each speaker, a contiguous single-speaker window whose length is
/// drawn uniformly from `el_range` (seconds). `None` flags a speaker with no
/// single-speaker frames; training skips its row.
pub fn sample_enrollment_runs<R: Rng + ?Sized>(
    labels: &LabelMatrix,
    el_range: (f64, f64),
    rng: &mut R,
) -> Vec<Option<Vec<usize>>> {
    let (lo, hi) = el_range_frames(el_range, labels.frame_period);
    (0..labels.num_speakers())
        .map(|s| {
            let frames = labels.single_speaker_frames(s);
            if frames.is_empty() {
                log::debug!("speaker {} has no single-speaker frames", labels.speakers[s]);
                return None;
            }
            let runs = continuous_segments(&IndexList::new(frames));
            let len = rng.random_range(lo..=hi);
            Some(sample_window(&runs, len, rng))
        })
        .collect()
}

/// Averaged enrollment vectors for every speaker (see
/// [`sample_enrollment_runs`]).
pub fn sample_enrollments<R: Rng + ?Sized>(
    labels: &LabelMatrix,
    emb: &FrameEmbeddings,
    el_range: (f64, f64),
    rng: &mut R,
) -> Result<Vec<Option<Vec<f64>>>> {
    if emb.frames() != labels.frames() {
        return Err(Error::dim(
            "sample_enrollments",
            format!("{} embedding frames vs {} label frames", emb.frames(), labels.frames()),
        ));
    }
    sample_enrollment_runs(labels, el_range, rng)
        .into_iter()
        .map(|run| run.map(|r| emb.average(&r)).transpose())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropMode {
    /// Each speaker enrollment is dropped independently.
    PerSpeaker,
    /// All speaker enrollments of an utterance are dropped together.
    AllSpeakers,
}

impl std::str::FromStr for DropMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_speaker" | "per-speaker" => Ok(Self::PerSpeaker),
            "all_speakers" | "all-speakers" | "all" => Ok(Self::AllSpeakers),
            other => Err(Error::Config(format!("unknown enrollment drop mode {other:?}"))),
        }
    }
}

/// Retention flags for `n` speaker enrollments; activity enrollments are
/// never dropped.
pub fn enrollment_dropout<R: Rng + ?Sized>(n: usize, p: f64, mode: DropMode, rng: &mut R) -> Vec<bool> {
    match mode {
        DropMode::PerSpeaker => (0..n).map(|_| rng.random::<f64>() >= p).collect(),
        DropMode::AllSpeakers => {
            let keep = rng.random::<f64>() >= p;
            vec![keep; n]
        }
    }
}
