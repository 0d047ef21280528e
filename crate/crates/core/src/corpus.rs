//! Recordings and corpus-level statistics.

use std::fmt;

use serde::Serialize;

use crate::annotation::Annotation;
use crate::features::FeatureMatrix;

/// A feature sequence with its reference annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub id: String,
    pub features: FeatureMatrix,
    pub annotation: Annotation,
}

impl Recording {
    pub fn duration(&self) -> f64 {
        self.features.duration()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileReport {
    pub id: String,
    pub duration: f64,
    pub n_speakers: usize,
    /// Overlapped share of speech time, in percent.
    pub overlap_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusReport {
    pub files: Vec<FileReport>,
    pub total_hours: f64,
    /// Corpus overlap ratio (summed overlap time over summed speech time).
    pub overlap_pct: f64,
    pub speech_hours: f64,
}

/// Summarizes `(annotation, duration in seconds)` pairs.
pub fn corpus_report<'a>(items: impl IntoIterator<Item = (&'a Annotation, f64)>) -> CorpusReport {
    let (mut speech, mut overlap, mut total) = (0.0, 0.0, 0.0);
    let mut files = Vec::new();
    for (ann, duration) in items {
        let (s, o) = ann.coverage();
        speech += s;
        overlap += o;
        total += duration;
        files.push(FileReport {
            id: ann.file_id.clone(),
            duration,
            n_speakers: ann.speakers().len(),
            overlap_pct: 100.0 * ann.overlap_ratio(),
        });
    }
    CorpusReport {
        files,
        total_hours: total / 3600.0,
        overlap_pct: if speech > 0.0 { 100.0 * overlap / speech } else { 0.0 },
        speech_hours: speech / 3600.0,
    }
}

impl fmt::Display for CorpusReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<24} {:>10} {:>5} {:>8}", "file", "dur(s)", "#spk", "ovl(%)")?;
        for r in &self.files {
            writeln!(f, "{:<24} {:>10.2} {:>5} {:>8.2}", r.id, r.duration, r.n_speakers, r.overlap_pct)?;
        }
        writeln!(f, "files: {}", self.files.len())?;
        writeln!(f, "total duration: {:.4} h (speech {:.4} h)", self.total_hours, self.speech_hours)?;
        write!(f, "overlap ratio: {:.2} %", self.overlap_pct)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_ratio() {
        let mut a = Annotation::new("a");
        a.push("A", 0.0, 16.5);
        a.push("B", 13.5, 30.0);
        let r = corpus_report([(&a, 40.0)]);
        assert!((r.overlap_pct - 10.0).abs() < 1e-9);
        assert_eq!(r.files[0].n_speakers, 2);
        assert!((r.total_hours - 40.0 / 3600.0).abs() < 1e-12);
    }
}
