use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};

use crate::annotation::Annotation;
use crate::error::{Error, Result};

/// Grid on which durations are histogrammed, in seconds.
pub const BIN_WIDTH: f64 = 0.01;

/// Empirical distribution of positive durations on a 10 ms grid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Histogram {
    counts: BTreeMap<u64, u64>,
    total: u64,
}

impl Histogram {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a duration, rounded to the grid (at least one bin).
    pub fn add(&mut self, seconds: f64) {
        let bin = ((seconds / BIN_WIDTH).round() as u64).max(1);
        *self.counts.entry(bin).or_insert(0) += 1;
        self.total += 1;
    }

    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Self {
        let mut h = Self::new();
        values.into_iter().for_each(|v| h.add(v));
        h
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// `(seconds, count)` pairs in increasing order.
    pub fn bins(&self) -> impl Iterator<Item = (f64, u64)> + '_ {
        self.counts.iter().map(|(&b, &c)| (b as f64 * BIN_WIDTH, c))
    }

    pub fn mean(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        self.bins().map(|(v, c)| v * c as f64).sum::<f64>() / self.total as f64
    }

    /// Draws a duration with probability proportional to its count.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<f64> {
        if self.total == 0 {
            return None;
        }
        let mut k = rng.random_range(0..self.total);
        for (v, c) in self.bins() {
            if k < c {
                return Some(v);
            }
            k -= c;
        }
        unreachable!("sample index below total")
    }
}

/// Turn-taking statistics of a conversational corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SimStats {
    /// Gaps between consecutive utterances of the same speaker.
    pub same_pause: Histogram,
    /// Gaps at speaker changes.
    pub change_pause: Histogram,
    /// Overlaps at speaker changes.
    pub overlap: Histogram,
    pub utterance: Histogram,
    /// Recordings per speaker count.
    pub speaker_counts: BTreeMap<usize, usize>,
    pub source: String,
}

impl SimStats {
    /// Share of speaker changes that overlap rather than pause.
    pub fn overlap_proportion(&self) -> f64 {
        let o = self.overlap.total();
        let p = self.change_pause.total();
        if o + p == 0 {
            0.0
        } else {
            o as f64 / (o + p) as f64
        }
    }

    /// Mean of all pauses, same-speaker and speaker-change.
    pub fn mean_pause(&self) -> f64 {
        let n = self.same_pause.total() + self.change_pause.total();
        if n == 0 {
            return 0.0;
        }
        (self.same_pause.mean() * self.same_pause.total() as f64
            + self.change_pause.mean() * self.change_pause.total() as f64)
            / n as f64
    }

    /// Built-in statistics resembling two-party telephone conversation,
    /// for simulation without a source corpus. Histograms are filled from a
    /// fixed-seed draw so they are identical on every call.
    pub fn conversational() -> Self {
        const N: usize = 2000;
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let utt = LogNormal::new(0.8, 0.6).expect("valid log-normal");
        let utterance = Histogram::from_values(
            std::iter::repeat_with(|| utt.sample(&mut rng))
                .filter(|d| (0.3..=10.0).contains(d))
                .take(N),
        );
        let mut exp = |mean: f64, offset: f64, n: usize| {
            let d = Exp::new(1.0 / mean).expect("positive rate");
            Histogram::from_values((0..n).map(|_| offset + d.sample(&mut rng)))
        };
        let same_pause = exp(0.8, 0.0, N);
        // speaker changes split evenly between pauses and overlaps
        let change_pause = exp(0.6, 0.0, N / 2);
        let overlap = exp(0.9, 0.1, N / 2);
        Self {
            same_pause,
            change_pause,
            overlap,
            utterance,
            speaker_counts: BTreeMap::from([(2, 1)]),
            source: "built-in conversational".into(),
        }
    }
}

/// Histograms turn-taking from a corpus. Utterances are taken in onset
/// order; the gap between each utterance and its predecessor is a pause
/// (same or changed speaker) when positive and an overlap when negative.
pub fn extract_stats(corpus: &[Annotation]) -> Result<SimStats> {
    let total: usize = corpus.iter().map(|a| a.segments.len()).sum();
    if total < 2 {
        return Err(Error::Stats(format!("need at least 2 segments, corpus has {total}")));
    }
    let mut st = SimStats {
        same_pause: Histogram::new(),
        change_pause: Histogram::new(),
        overlap: Histogram::new(),
        utterance: Histogram::new(),
        speaker_counts: BTreeMap::new(),
        source: format!("{} recordings", corpus.len()),
    };
    for ann in corpus {
        let mut segs: Vec<_> = ann.segments.iter().filter(|s| s.end > s.start).collect();
        segs.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.end.total_cmp(&b.end)));
        *st.speaker_counts.entry(ann.speakers().len()).or_insert(0) += 1;
        for s in &segs {
            st.utterance.add(s.duration());
        }
        for w in segs.windows(2) {
            let gap = w[1].start - w[0].end;
            if gap.abs() < BIN_WIDTH / 2.0 {
                continue;
            }
            match (w[0].speaker == w[1].speaker, gap > 0.0) {
                (true, true) => st.same_pause.add(gap),
                (false, true) => st.change_pause.add(gap),
                (false, false) => st.overlap.add(-gap),
                // a speaker overlapping itself is not a turn event
                (true, false) => {}
            }
        }
    }
    Ok(st)
}
