//! Conversation simulation: independent-timeline mixtures (SM) and
//! statistics-driven conversations (SC), with synthetic features.

mod stats;
mod synth;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use rayon::prelude::*;

pub use stats::{extract_stats, Histogram, SimStats, BIN_WIDTH};
pub use synth::SynthProfile;

use crate::annotation::Annotation;
use crate::corpus::Recording;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Sm,
    Sc,
}

impl FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sm" => Ok(Self::Sm),
            "sc" => Ok(Self::Sc),
            other => Err(Error::Config(format!("unknown simulation regime {other:?}"))),
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sm => "sm",
            Self::Sc => "sc",
        })
    }
}

/// Log-normal utterance durations truncated to `[min, max]` seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtterancePool {
    /// Mean of the log-duration.
    pub mu_log: f64,
    pub sigma_log: f64,
    pub min: f64,
    pub max: f64,
}

impl Default for UtterancePool {
    fn default() -> Self {
        Self {
            mu_log: 0.8,
            sigma_log: 0.6,
            min: 0.3,
            max: 10.0,
        }
    }
}

impl UtterancePool {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let d = LogNormal::new(self.mu_log, self.sigma_log).expect("valid log-normal");
        loop {
            let x = d.sample(rng);
            if (self.min..=self.max).contains(&x) {
                return x;
            }
        }
    }
}

/// Synthetic feature settings. Raw frames are stacked with `context`
/// neighbours per side and subsampled by `subsample`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureSpec {
    pub raw_dim: usize,
    pub raw_period: f64,
    pub context: usize,
    pub subsample: usize,
    pub noise: f64,
    /// Minimum angle between signatures, radians.
    pub min_angle: f64,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        Self {
            raw_dim: 23,
            raw_period: 0.01,
            context: 7,
            subsample: 10,
            noise: 0.05,
            min_angle: std::f64::consts::FRAC_PI_6,
        }
    }
}

impl FeatureSpec {
    pub fn frame_period(&self) -> f64 {
        self.raw_period * self.subsample as f64
    }

    pub fn output_dim(&self) -> usize {
        self.raw_dim * (2 * self.context + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub regime: Regime,
    pub n_speakers: usize,
    pub n_mixtures: usize,
    /// Mean pause between utterances of one speaker (SM).
    pub beta: f64,
    /// Turn statistics (SC).
    pub stats: Option<SimStats>,
    /// Utterance durations (SM).
    pub pool: UtterancePool,
    /// Utterances per speaker, inclusive range (SM).
    pub utterances: (usize, usize),
    /// Recording length in seconds (SC).
    pub duration: f64,
    /// Caps each SC utterance, in seconds.
    pub max_utterance: Option<f64>,
    pub features: FeatureSpec,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            regime: Regime::Sm,
            n_speakers: 2,
            n_mixtures: 1,
            beta: 2.0,
            stats: None,
            pool: UtterancePool::default(),
            utterances: (10, 20),
            duration: 60.0,
            max_utterance: None,
            features: FeatureSpec::default(),
            seed: 0,
        }
    }
}

impl SimConfig {
    /// `β` per speaker count in the simulated-mixture recipe (2 to 5
    /// speakers); 2 otherwise.
    pub fn default_beta(n_speakers: usize) -> f64 {
        match n_speakers {
            3 => 5.0,
            4 => 9.0,
            5 => 13.0,
            _ => 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_speakers == 0 {
            return Err(Error::Config("n_speakers must be at least 1".into()));
        }
        if self.regime == Regime::Sm && !(self.beta > 0.0) {
            return Err(Error::Config(format!("beta {} must be positive", self.beta)));
        }
        if self.regime == Regime::Sc {
            let st = self
                .stats
                .as_ref()
                .ok_or_else(|| Error::Config("SC simulation needs statistics".into()))?;
            if st.utterance.is_empty() {
                return Err(Error::Stats("utterance histogram is empty".into()));
            }
            if st.change_pause.is_empty() && st.same_pause.is_empty() && st.overlap.is_empty() {
                return Err(Error::Stats("no turn statistics".into()));
            }
            if !(self.duration > 0.0) {
                return Err(Error::Config("SC duration must be positive".into()));
            }
        }
        if self.utterances.0 == 0 || self.utterances.0 > self.utterances.1 {
            return Err(Error::Config("utterance count range must satisfy 1 ≤ lo ≤ hi".into()));
        }
        Ok(())
    }

    /// Independent generator for recording `index`.
    pub fn rng(&self, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        rng
    }
}

fn speaker_names(n: usize) -> Vec<String> {
    (0..n).map(|k| format!("spk{k}")).collect()
}

/// Rounds to the output frame grid.
fn snap(t: f64, grid: f64) -> f64 {
    (t / grid).round() * grid
}

/// Each speaker talks on an independent timeline: a pause with mean `β`
/// precedes every utterance.
pub fn simulate_sm_annotation<R: Rng + ?Sized>(cfg: &SimConfig, id: &str, rng: &mut R) -> Annotation {
    let grid = cfg.features.frame_period();
    let pause = Exp::new(1.0 / cfg.beta).expect("positive beta");
    let mut ann = Annotation::new(id);
    for name in speaker_names(cfg.n_speakers) {
        let n = rng.random_range(cfg.utterances.0..=cfg.utterances.1);
        let mut t = 0.0;
        for _ in 0..n {
            t += pause.sample(rng);
            let start = snap(t, grid);
            let end = snap(t + cfg.pool.sample(rng), grid).max(start + grid);
            ann.push(name.clone(), start, end);
            t = end;
        }
    }
    ann.sort();
    ann
}

/// A single conversation: the first turns visit every speaker once in
/// random order, later speakers are uniform. A change of speaker overlaps
/// the previous utterance with the corpus overlap proportion, otherwise it
/// follows a pause.
pub fn simulate_sc_annotation<R: Rng + ?Sized>(cfg: &SimConfig, id: &str, rng: &mut R) -> Result<Annotation> {
    let st = cfg
        .stats
        .as_ref()
        .ok_or_else(|| Error::Config("SC simulation needs statistics".into()))?;
    let grid = cfg.features.frame_period();
    let names = speaker_names(cfg.n_speakers);
    let mut first: Vec<usize> = (0..cfg.n_speakers).collect();
    first.shuffle(rng);
    let p_overlap = st.overlap_proportion();
    let change_pause = if st.change_pause.is_empty() { &st.same_pause } else { &st.change_pause };
    let same_pause = if st.same_pause.is_empty() { change_pause } else { &st.same_pause };

    let mut ann = Annotation::new(id);
    let mut prev: Option<(usize, f64, f64)> = None;
    let mut turn = 0;
    loop {
        let spk = if turn < first.len() {
            first[turn]
        } else {
            rng.random_range(0..cfg.n_speakers)
        };
        turn += 1;
        let mut dur = st.utterance.sample(rng).expect("non-empty utterance histogram");
        if let Some(cap) = cfg.max_utterance {
            dur = dur.min(cap);
        }
        let dur = snap(dur, grid).max(grid);
        let start = match prev {
            None => 0.0,
            Some((p, _, p_end)) if p == spk => p_end + snap(same_pause.sample(rng).unwrap_or(0.0), grid),
            Some((_, p_start, p_end)) => {
                if !st.overlap.is_empty() && rng.random::<f64>() < p_overlap {
                    let ov = snap(st.overlap.sample(rng).expect("non-empty"), grid);
                    // keep both utterances longer than the overlap
                    let cap = (p_end - p_start).min(dur) - grid;
                    p_end - ov.min(cap).max(0.0)
                } else {
                    p_end + snap(change_pause.sample(rng).unwrap_or(0.0), grid)
                }
            }
        };
        if start >= cfg.duration - grid / 2.0 && turn > cfg.n_speakers {
            break;
        }
        let end = start + dur;
        ann.push(names[spk].clone(), start, end);
        prev = Some((spk, start, end));
    }
    ann.sort();
    Ok(ann)
}

/// Synthetic features for an annotation: raw frames through
/// [`SynthProfile`], then stacking and subsampling.
pub fn synthesize<R: Rng + ?Sized>(
    ann: &Annotation,
    n_speakers: usize,
    spec: &FeatureSpec,
    rng: &mut R,
) -> Result<crate::features::FeatureMatrix> {
    let profile = SynthProfile::random(n_speakers, spec.raw_dim, spec.noise, spec.min_angle, rng);
    let out_frames = (ann.end_time() / spec.frame_period()).round() as usize;
    let raw_frames = (out_frames * spec.subsample).max(1);
    let raw = profile.render(ann, &speaker_names(n_speakers), raw_frames, spec.raw_period, rng)?;
    raw.stack_and_subsample(spec.context, spec.subsample)
}

/// Recording `index` of the corpus described by `cfg`.
pub fn simulate_one(cfg: &SimConfig, index: usize) -> Result<Recording> {
    cfg.validate()?;
    let id = format!("{}{}spk_{index:05}", cfg.regime, cfg.n_speakers);
    let mut rng = cfg.rng(index);
    let annotation = match cfg.regime {
        Regime::Sm => simulate_sm_annotation(cfg, &id, &mut rng),
        Regime::Sc => simulate_sc_annotation(cfg, &id, &mut rng)?,
    };
    let features = synthesize(&annotation, cfg.n_speakers, &cfg.features, &mut rng)?;
    Ok(Recording {
        id,
        features,
        annotation,
    })
}

/// All `n_mixtures` recordings, generated in parallel from independent
/// streams; the result does not depend on the thread count.
pub fn simulate_corpus(cfg: &SimConfig) -> Result<Vec<Recording>> {
    cfg.validate()?;
    (0..cfg.n_mixtures)
        .into_par_iter()
        .map(|i| simulate_one(cfg, i))
        .collect()
}

/// Annotations only, skipping feature synthesis.
pub fn simulate_annotations(cfg: &SimConfig) -> Result<Vec<Annotation>> {
    cfg.validate()?;
    (0..cfg.n_mixtures)
        .into_par_iter()
        .map(|i| {
            let id = format!("{}{}spk_{i:05}", cfg.regime, cfg.n_speakers);
            let mut rng = cfg.rng(i);
            match cfg.regime {
                Regime::Sm => Ok(simulate_sm_annotation(cfg, &id, &mut rng)),
                Regime::Sc => simulate_sc_annotation(cfg, &id, &mut rng),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ratio(anns: &[Annotation]) -> f64 {
        crate::corpus::corpus_report(anns.iter().map(|a| (a, a.end_time()))).overlap_pct
    }

    #[test]
    fn single_speaker_never_overlaps() {
        let cfg = SimConfig {
            n_speakers: 1,
            n_mixtures: 20,
            ..SimConfig::default()
        };
        assert_eq!(ratio(&simulate_annotations(&cfg).unwrap()), 0.0);
    }

    #[test]
    fn sc_has_every_speaker_and_is_reproducible() {
        let cfg = SimConfig {
            regime: Regime::Sc,
            n_speakers: 3,
            n_mixtures: 4,
            duration: 20.0,
            stats: Some(SimStats::conversational()),
            ..SimConfig::default()
        };
        let a = simulate_corpus(&cfg).unwrap();
        for r in &a {
            assert_eq!(r.annotation.speakers().len(), 3);
            assert_eq!(r.features.dim(), 345);
            assert!((r.features.frame_period - 0.1).abs() < 1e-12);
        }
        assert_eq!(a, simulate_corpus(&cfg).unwrap());
    }

    #[test]
    fn sc_requires_stats() {
        let cfg = SimConfig {
            regime: Regime::Sc,
            ..SimConfig::default()
        };
        assert!(matches!(simulate_one(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn boundaries_on_frame_grid() {
        let cfg = SimConfig {
            n_mixtures: 3,
            ..SimConfig::default()
        };
        for a in simulate_annotations(&cfg).unwrap() {
            for s in &a.segments {
                for t in [s.start, s.end] {
                    assert!((t * 10.0 - (t * 10.0).round()).abs() < 1e-9);
                }
            }
        }
    }
}
