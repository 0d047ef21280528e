//! Iterative enrollment decoding.

mod cluster;
mod oracle;
pub mod segments;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use cluster::{kmeans, spectral_cluster, MAX_CLUSTERS};
pub use oracle::{LogitNoise, OracleStub};
pub use segments::{continuous_segments, filter_segs, longest_seg, IndexList, SegmentList};

use crate::annotation::Annotation;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::nnet::{AedEend, FrameEmbeddings, PosteriorMatrix, ACTIVITY_ROWS, ROW_NON, ROW_OVL, ROW_SGL};
use crate::train::{sample_window, LabelMatrix};

/// How a speaker enrollment region is chosen from the unclaimed frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Strategy {
    /// First qualifying segment.
    Init,
    /// A random qualifying segment.
    Rand,
    /// Largest spectral cluster over all unclaimed frames.
    Sc,
    /// Largest spectral cluster inside the longest unclaimed segment.
    ScLocal,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::Init, Strategy::Rand, Strategy::Sc, Strategy::ScLocal];
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "init" => Ok(Self::Init),
            "rand" => Ok(Self::Rand),
            "sc" => Ok(Self::Sc),
            "sc-local" | "sc_local" | "sclocal" => Ok(Self::ScLocal),
            other => Err(Error::Config(format!("unknown decoding strategy {other:?}"))),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Init => "init",
            Self::Rand => "rand",
            Self::Sc => "sc",
            Self::ScLocal => "sc-local",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    /// Enrollment length in seconds.
    pub el: f64,
    /// Stop-decoding length in seconds.
    pub sdl: f64,
    pub threshold: f64,
    /// Decode exactly this many speakers when enough frames remain.
    pub max_speakers: Option<usize>,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Sc,
            el: 0.5,
            sdl: 1.0,
            threshold: 0.5,
            max_speakers: None,
            seed: 0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.el > 0.0) || !(self.sdl > 0.0) {
            return Err(Error::Config("el and sdl must be positive".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        Ok(())
    }
}

/// Seconds to a frame count, at least one frame.
pub fn seconds_to_frames(seconds: f64, frame_period: f64) -> usize {
    ((seconds / frame_period).round() as usize).max(1)
}

/// Anything that maps features to frame embeddings and scores enrollments
/// against them.
pub trait SpeakerModel {
    fn embed(&self, features: &FeatureMatrix) -> Result<FrameEmbeddings>;

    /// Posteriors for the activity rows followed by one row per speaker
    /// enrollment.
    fn infer(&self, emb: &FrameEmbeddings, speakers: &[Vec<f64>]) -> Result<PosteriorMatrix>;
}

impl SpeakerModel for AedEend {
    fn embed(&self, features: &FeatureMatrix) -> Result<FrameEmbeddings> {
        self.encode(features)
    }

    /// Uses the enhanced head when the model has an Enhancer.
    fn infer(&self, emb: &FrameEmbeddings, speakers: &[Vec<f64>]) -> Result<PosteriorMatrix> {
        let enroll = self.enrollment_set(speakers.to_vec())?;
        let (post, enhanced) = self.forward_from_embeddings(emb, &enroll, self.has_enhancer())?;
        Ok(enhanced.unwrap_or(post))
    }
}

/// Indices of row entries strictly above `threshold`, for every row.
pub fn binarize(post: &PosteriorMatrix, threshold: f64) -> Vec<IndexList> {
    let v = post.values();
    (0..v.rows())
        .map(|r| {
            IndexList::from_sorted(
                v.row(r)
                    .iter()
                    .enumerate()
                    .filter(|&(_, &p)| p > threshold)
                    .map(|(t, _)| t)
                    .collect(),
            )
            .expect("ascending by construction")
        })
        .collect()
}

/// Chooses `l_tmp` contiguous frames to enroll the next speaker.
///
/// `candidates` are the unclaimed segments of at least the enrollment
/// length (or just the longest one), `unclaimed` all unclaimed single-speaker
/// frames and `longest` the longest unclaimed segment.
#[allow(clippy::too_many_arguments)]
pub fn select_enrollment<R: Rng + ?Sized>(
    strategy: Strategy,
    unclaimed: &IndexList,
    candidates: &SegmentList,
    longest: &[usize],
    l_tmp: usize,
    emb: &FrameEmbeddings,
    seed: u64,
    rng: &mut R,
) -> Vec<usize> {
    match strategy {
        Strategy::Init => candidates[0][..l_tmp.min(candidates[0].len())].to_vec(),
        Strategy::Rand => {
            let run = &candidates[rng.random_range(0..candidates.len())];
            sample_window(std::slice::from_ref(run), l_tmp, rng)
        }
        Strategy::Sc | Strategy::ScLocal => {
            let pool: Vec<usize> = match strategy {
                Strategy::Sc => unclaimed.as_slice().to_vec(),
                _ => longest.to_vec(),
            };
            let items: Vec<(usize, Vec<f64>)> = pool.iter().map(|&t| (t, emb.frame(t).to_vec())).collect();
            let clusters = spectral_cluster(&items, seed);
            // largest cluster; the earliest one wins ties
            let mut best = &clusters[0];
            for c in &clusters[1..] {
                if c.len() > best.len() {
                    best = c;
                }
            }
            let runs = continuous_segments(best);
            let fitting = filter_segs(&runs, l_tmp);
            if fitting.is_empty() {
                log::debug!("largest cluster has no run of {l_tmp} frames; using its longest run");
                sample_window(&[longest_seg(&runs)], l_tmp, rng)
            } else {
                sample_window(&fitting, l_tmp, rng)
            }
        }
    }
}

/// One speaker-discovery iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceStep {
    pub iteration: usize,
    /// Unclaimed single-speaker frames before this step.
    pub unclaimed: usize,
    /// Length of the longest unclaimed segment.
    pub longest: usize,
    /// Enrollment frames chosen at this step.
    pub enrollment: Vec<usize>,
    pub speakers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    /// Active frames of each decoded speaker, from the final model pass.
    pub speakers: Vec<IndexList>,
    /// Non-speech, single-speaker and overlap frames from the final pass.
    pub activity: [IndexList; 3],
    /// Enrollment frames of each speaker.
    pub enrollments: Vec<Vec<usize>>,
    pub trace: Vec<TraceStep>,
    pub posteriors: PosteriorMatrix,
}

impl DecodeOutput {
    pub fn num_speakers(&self) -> usize {
        self.speakers.len()
    }

    pub fn to_annotation(&self, file_id: &str, frame_period: f64) -> Annotation {
        frames_to_annotation(file_id, &self.speakers, frame_period)
    }
}

fn finish(
    post: PosteriorMatrix,
    threshold: f64,
    enrollments: Vec<Vec<usize>>,
    trace: Vec<TraceStep>,
) -> DecodeOutput {
    let rows = binarize(&post, threshold);
    let mut it = rows.into_iter();
    let mut take = || it.next().unwrap_or_default();
    let activity = [take(), take(), take()];
    let speakers = it.collect();
    DecodeOutput {
        speakers,
        activity,
        enrollments,
        trace,
        posteriors: post,
    }
}

/// Discovers speakers one at a time: each step enrolls a new speaker from
/// single-speaker frames not yet claimed by a decoded speaker, then reruns
/// the model with all enrollments. Stops when the longest unclaimed segment
/// is shorter than the stop length (or, with `max_speakers`, when that many
/// speakers are decoded).
pub fn iterative_decode<M: SpeakerModel + ?Sized>(
    model: &M,
    features: &FeatureMatrix,
    cfg: &DecodeConfig,
) -> Result<DecodeOutput> {
    cfg.validate()?;
    let emb = model.embed(features)?;
    decode_embeddings(model, &emb, features.frame_period, cfg)
}

pub fn decode_embeddings<M: SpeakerModel + ?Sized>(
    model: &M,
    emb: &FrameEmbeddings,
    frame_period: f64,
    cfg: &DecodeConfig,
) -> Result<DecodeOutput> {
    cfg.validate()?;
    let frames = emb.frames();
    let el = seconds_to_frames(cfg.el, frame_period);
    let sdl = seconds_to_frames(cfg.sdl, frame_period);
    let cap = cfg.max_speakers.unwrap_or(frames.div_ceil(sdl));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut post = model.infer(emb, &[])?;
    let sgl = binarize(&post, cfg.threshold).swap_remove(ROW_SGL);
    let mut claimed = IndexList::default();
    let mut speakers: Vec<Vec<f64>> = Vec::new();
    let mut enrollments: Vec<Vec<usize>> = Vec::new();
    let mut trace = Vec::new();

    while speakers.len() < cap {
        let unclaimed = sgl.difference(&claimed);
        let segs = continuous_segments(&unclaimed);
        let longest = longest_seg(&segs);
        if longest.is_empty() || (cfg.max_speakers.is_none() && longest.len() < sdl) {
            break;
        }
        let mut candidates = filter_segs(&segs, el);
        if candidates.is_empty() {
            candidates.push(longest.clone());
        }
        let l_tmp = longest.len().min(el);
        let step_seed = cfg.seed.wrapping_add(speakers.len() as u64);
        let run = select_enrollment(cfg.strategy, &unclaimed, &candidates, &longest, l_tmp, emb, step_seed, &mut rng);
        speakers.push(emb.average(&run)?);
        post = model.infer(emb, &speakers)?;
        // frames of the latest pass plus every enrollment region so far
        let mut all: Vec<usize> = run.clone();
        enrollments.iter().for_each(|e: &Vec<usize>| all.extend(e));
        for row in binarize(&post, cfg.threshold).iter().skip(ACTIVITY_ROWS) {
            all.extend(row.as_slice());
        }
        claimed = IndexList::new(all);
        trace.push(TraceStep {
            iteration: trace.len(),
            unclaimed: unclaimed.len(),
            longest: longest.len(),
            enrollment: run.clone(),
            speakers: speakers.len(),
        });
        enrollments.push(run);
    }
    Ok(finish(post, cfg.threshold, enrollments, trace))
}

/// Decoding with enrollments taken from the reference: each speaker is
/// enrolled on a seeded contiguous single-speaker window of `el` seconds,
/// as during training.
pub fn gt_decode<M: SpeakerModel + ?Sized>(
    model: &M,
    features: &FeatureMatrix,
    labels: &LabelMatrix,
    el: f64,
    threshold: f64,
    seed: u64,
) -> Result<DecodeOutput> {
    let emb = model.embed(features)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let runs = crate::train::sample_enrollment_runs(labels, (el, el), &mut rng);
    let mut speakers = Vec::new();
    let mut enrollments = Vec::new();
    for run in runs.into_iter().flatten() {
        speakers.push(emb.average(&run)?);
        enrollments.push(run);
    }
    let post = model.infer(&emb, &speakers)?;
    Ok(finish(post, threshold, enrollments, Vec::new()))
}

/// Turns per-speaker frame sets into segments named `spk0`, `spk1`, ...
/// Frame `t` covers `[t·Δ, (t+1)·Δ)`.
pub fn frames_to_annotation(file_id: &str, speakers: &[IndexList], frame_period: f64) -> Annotation {
    let mut ann = Annotation::new(file_id);
    for (s, frames) in speakers.iter().enumerate() {
        for run in continuous_segments(frames) {
            let start = run[0] as f64 * frame_period;
            let end = (run[run.len() - 1] + 1) as f64 * frame_period;
            ann.push(format!("spk{s}"), start, end);
        }
    }
    ann.sort();
    ann
}

/// Per-type frame predictions: speech is the complement of non-speech.
pub fn speech_type_predictions(out: &DecodeOutput, frames: usize) -> [IndexList; 3] {
    let non = &out.activity[ROW_NON];
    let speech = IndexList::from_sorted((0..frames).filter(|&t| !non.contains(t)).collect()).expect("ascending");
    [speech, out.activity[ROW_SGL].clone(), out.activity[ROW_OVL].clone()]
}
