use std::collections::BTreeMap;

use serde::Serialize;

use super::assign::max_weight_assignment;
use crate::annotation::{merge_intervals, Annotation};
use crate::error::{Error, Result};

/// Error components in seconds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerResult {
    pub miss: f64,
    pub falarm: f64,
    pub confusion: f64,
    /// Scored reference speaker time.
    pub total_ref: f64,
    /// `(miss + falarm + confusion) / total_ref`.
    pub der: f64,
    /// Hypothesis speaker to reference speaker.
    pub mapping: BTreeMap<String, String>,
}

impl DerResult {
    fn from_parts(miss: f64, falarm: f64, confusion: f64, total_ref: f64, mapping: BTreeMap<String, String>) -> Self {
        Self {
            miss,
            falarm,
            confusion,
            total_ref,
            der: (miss + falarm + confusion) / total_ref,
            mapping,
        }
    }

    /// Corpus-level result: component seconds are summed before dividing.
    /// Mappings are dropped.
    pub fn aggregate<'a>(parts: impl IntoIterator<Item = &'a DerResult>) -> Result<DerResult> {
        let (mut m, mut f, mut c, mut t) = (0.0, 0.0, 0.0, 0.0);
        for p in parts {
            m += p.miss;
            f += p.falarm;
            c += p.confusion;
            t += p.total_ref;
        }
        if t <= 0.0 {
            return Err(Error::EmptyReference { falarm: f });
        }
        Ok(DerResult::from_parts(m, f, c, t, BTreeMap::new()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerOptions {
    /// Seconds excluded on each side of every reference boundary.
    pub collar: f64,
    /// Whether regions with two or more reference speakers are scored.
    pub score_overlap: bool,
}

impl Default for DerOptions {
    fn default() -> Self {
        Self {
            collar: 0.0,
            score_overlap: true,
        }
    }
}

/// Speakers with their merged intervals.
struct Tracks {
    names: Vec<String>,
    intervals: Vec<Vec<(f64, f64)>>,
}

impl Tracks {
    fn new(ann: &Annotation) -> Self {
        let names = ann.speakers();
        let intervals = names.iter().map(|n| ann.speaker_intervals(n)).collect();
        Self { names, intervals }
    }

    fn active_at(&self, t: f64) -> Vec<usize> {
        self.intervals
            .iter()
            .enumerate()
            .filter(|(_, iv)| {
                let k = iv.partition_point(|&(s, _)| s <= t);
                k > 0 && t < iv[k - 1].1
            })
            .map(|(i, _)| i)
            .collect()
    }

    fn boundaries(&self) -> impl Iterator<Item = f64> + '_ {
        self.intervals.iter().flatten().flat_map(|&(s, e)| [s, e])
    }
}

/// One piece of the timeline on which the active speaker sets are constant.
struct Piece {
    dur: f64,
    refs: Vec<usize>,
    hyps: Vec<usize>,
}

fn pieces(r: &Tracks, h: &Tracks, opts: &DerOptions) -> Vec<Piece> {
    let mut excluded: Vec<(f64, f64)> = if opts.collar > 0.0 {
        r.boundaries().map(|b| (b - opts.collar, b + opts.collar)).collect()
    } else {
        Vec::new()
    };
    let excluded = merge_intervals(&mut excluded);
    let mut cuts: Vec<f64> = r
        .boundaries()
        .chain(h.boundaries())
        .chain(excluded.iter().flat_map(|&(s, e)| [s, e]))
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut out = Vec::new();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let mid = 0.5 * (a + b);
        let k = excluded.partition_point(|&(s, _)| s <= mid);
        if k > 0 && mid < excluded[k - 1].1 {
            continue;
        }
        let refs = r.active_at(mid);
        if !opts.score_overlap && refs.len() >= 2 {
            continue;
        }
        let hyps = h.active_at(mid);
        if refs.is_empty() && hyps.is_empty() {
            continue;
        }
        out.push(Piece { dur: b - a, refs, hyps });
    }
    out
}

/// Jointly active time of every (hypothesis, reference) speaker pair.
fn overlap_matrix(pieces: &[Piece], n_hyp: usize, n_ref: usize) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; n_ref]; n_hyp];
    for p in pieces {
        for &h in &p.hyps {
            for &r in &p.refs {
                m[h][r] += p.dur;
            }
        }
    }
    m
}

/// Optimal hypothesis→reference mapping; pairs that never co-occur stay
/// unmapped.
fn optimal_mapping(overlap: &[Vec<f64>]) -> Vec<Option<usize>> {
    max_weight_assignment(overlap)
        .into_iter()
        .enumerate()
        .map(|(h, r)| r.filter(|&r| overlap[h][r] > 0.0))
        .collect()
}

/// Diarization error rate of `hyp` against `refr`.
///
/// Errors with [`Error::EmptyReference`] when no reference speech is scored.
pub fn der(refr: &Annotation, hyp: &Annotation, opts: &DerOptions) -> Result<DerResult> {
    let r = Tracks::new(refr);
    let h = Tracks::new(hyp);
    let pieces = pieces(&r, &h, opts);
    let overlap = overlap_matrix(&pieces, h.names.len(), r.names.len());
    let map = optimal_mapping(&overlap);
    let (mut miss, mut falarm, mut confusion, mut total) = (0.0, 0.0, 0.0, 0.0);
    for p in &pieces {
        let (nr, nh) = (p.refs.len() as f64, p.hyps.len() as f64);
        let correct = p
            .hyps
            .iter()
            .filter(|&&hs| map[hs].is_some_and(|rs| p.refs.contains(&rs)))
            .count() as f64;
        total += nr * p.dur;
        miss += (nr - nh).max(0.0) * p.dur;
        falarm += (nh - nr).max(0.0) * p.dur;
        confusion += (nr.min(nh) - correct) * p.dur;
    }
    if total <= 0.0 {
        return Err(Error::EmptyReference { falarm });
    }
    let mapping = map
        .iter()
        .enumerate()
        .filter_map(|(hs, rs)| rs.map(|rs| (h.names[hs].clone(), r.names[rs].clone())))
        .collect();
    Ok(DerResult::from_parts(miss, falarm, confusion, total, mapping))
}

/// Jaccard error rate in percent: the mean over reference speakers of
/// `1 − |ref ∩ hyp| / |ref ∪ hyp|` for the mapped hypothesis speaker
/// (mapping as for DER without collar), 100 for unmapped speakers.
pub fn jer(refr: &Annotation, hyp: &Annotation) -> Result<f64> {
    let res = der(refr, hyp, &DerOptions::default())?;
    let r = Tracks::new(refr);
    let h = Tracks::new(hyp);
    let mut sum = 0.0;
    for (ri, name) in r.names.iter().enumerate() {
        let mapped = res
            .mapping
            .iter()
            .find(|(_, rn)| *rn == name)
            .and_then(|(hn, _)| h.names.iter().position(|n| n == hn));
        sum += match mapped {
            Some(hi) => {
                let a = &r.intervals[ri];
                let b = &h.intervals[hi];
                let inter = intersection(a, b);
                let union = length(a) + length(b) - inter;
                1.0 - inter / union
            }
            None => 1.0,
        };
    }
    Ok(100.0 * sum / r.names.len() as f64)
}

fn length(iv: &[(f64, f64)]) -> f64 {
    iv.iter().map(|(s, e)| e - s).sum()
}

/// Total overlap of two sorted disjoint interval lists.
fn intersection(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let (mut i, mut j, mut acc) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        let lo = a[i].0.max(b[j].0);
        let hi = a[i].1.min(b[j].1);
        if hi > lo {
            acc += hi - lo;
        }
        if a[i].1 < b[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    acc
}
