use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::Serialize;

use super::der::{der, jer, DerOptions};
use super::{speaker_count_confusion, CountConfusion};
use crate::annotation::Annotation;
use crate::error::{Error, Result};

/// Scores of one recording, or of the corpus when `id` is `ALL`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileScore {
    pub id: String,
    pub miss: f64,
    pub falarm: f64,
    pub confusion: f64,
    pub total_ref: f64,
    /// Percent; `None` without reference speech.
    pub der: Option<f64>,
    /// Percent; `None` without reference speech.
    pub jer: Option<f64>,
    pub ref_speakers: usize,
    pub hyp_speakers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    pub files: Vec<FileScore>,
    pub total: FileScore,
    pub count: CountConfusion,
}

fn pct(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| 100.0 * num / den)
}

fn score_file(id: &str, refr: &Annotation, hyp: &Annotation, opts: &DerOptions) -> Result<FileScore> {
    let (miss, falarm, confusion, total_ref, jer_pct) = match der(refr, hyp, opts) {
        Ok(r) => (r.miss, r.falarm, r.confusion, r.total_ref, Some(jer(refr, hyp)?)),
        Err(Error::EmptyReference { falarm }) => (0.0, falarm, 0.0, 0.0, None),
        Err(e) => return Err(e),
    };
    Ok(FileScore {
        id: id.to_string(),
        miss,
        falarm,
        confusion,
        total_ref,
        der: pct(miss + falarm + confusion, total_ref),
        jer: jer_pct,
        ref_speakers: refr.speakers().len(),
        hyp_speakers: hyp.speakers().len(),
    })
}

/// Scores every file id present in either side; a missing side counts as
/// an empty annotation. Corpus DER sums component times over files and
/// corpus JER averages over all reference speakers.
pub fn score_corpus(refs: &[Annotation], hyps: &[Annotation], opts: &DerOptions) -> Result<ScoreReport> {
    let mut pairs: BTreeMap<&str, (Option<&Annotation>, Option<&Annotation>)> = BTreeMap::new();
    for a in refs {
        pairs.entry(a.file_id.as_str()).or_default().0 = Some(a);
    }
    for a in hyps {
        pairs.entry(a.file_id.as_str()).or_default().1 = Some(a);
    }
    let pairs: Vec<_> = pairs.into_iter().collect();
    let files: Vec<FileScore> = pairs
        .par_iter()
        .map(|(id, (r, h))| {
            let empty = Annotation::new(*id);
            score_file(id, r.unwrap_or(&empty), h.unwrap_or(&empty), opts)
        })
        .collect::<Result<_>>()?;
    let sum = |f: fn(&FileScore) -> f64| files.iter().map(f).sum::<f64>();
    let (miss, falarm, confusion, total_ref) = (
        sum(|f| f.miss),
        sum(|f| f.falarm),
        sum(|f| f.confusion),
        sum(|f| f.total_ref),
    );
    let ref_speakers: usize = files.iter().map(|f| f.ref_speakers).sum();
    let jer_weighted: f64 = files.iter().filter_map(|f| f.jer.map(|j| j * f.ref_speakers as f64)).sum();
    let total = FileScore {
        id: "ALL".into(),
        miss,
        falarm,
        confusion,
        total_ref,
        der: pct(miss + falarm + confusion, total_ref),
        jer: (ref_speakers > 0).then(|| jer_weighted / ref_speakers as f64),
        ref_speakers,
        hyp_speakers: files.iter().map(|f| f.hyp_speakers).sum(),
    };
    let counts: Vec<(usize, usize)> = files.iter().map(|f| (f.ref_speakers, f.hyp_speakers)).collect();
    Ok(ScoreReport {
        files,
        total,
        count: speaker_count_confusion(&counts),
    })
}

impl ScoreReport {
    /// One JSON object per file followed by the corpus line.
    pub fn json_lines(&self) -> String {
        self.files
            .iter()
            .chain(std::iter::once(&self.total))
            .map(|f| serde_json::to_string(f).expect("plain record serializes") + "\n")
            .collect()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"))
}

impl fmt::Display for ScoreReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<24} {:>9} {:>9} {:>9} {:>9} {:>8} {:>8} {:>5} {:>5}",
            "file", "miss(s)", "fa(s)", "conf(s)", "ref(s)", "DER(%)", "JER(%)", "#ref", "#hyp"
        )?;
        for r in self.files.iter().chain(std::iter::once(&self.total)) {
            writeln!(
                f,
                "{:<24} {:>9.3} {:>9.3} {:>9.3} {:>9.3} {:>8} {:>8} {:>5} {:>5}",
                r.id,
                r.miss,
                r.falarm,
                r.confusion,
                r.total_ref,
                opt(r.der),
                opt(r.jer),
                r.ref_speakers,
                r.hyp_speakers
            )?;
        }
        write!(f, "speaker count accuracy: {:.2} %", self.count.accuracy)
    }
}
