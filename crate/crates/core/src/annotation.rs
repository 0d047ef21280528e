//! Speaker segment annotations shared by references and hypotheses.

use std::collections::BTreeSet;

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub speaker: String,
    pub start: f64,
    pub end: f64,
}

impl Segment {
    pub fn new(speaker: impl Into<String>, start: f64, end: f64) -> Self {
        Self {
            speaker: speaker.into(),
            start,
            end,
        }
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Who spoke when in one recording. Segments may overlap.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Annotation {
    pub file_id: String,
    pub segments: Vec<Segment>,
}

impl Annotation {
    pub fn new(file_id: impl Into<String>) -> Self {
        Self {
            file_id: file_id.into(),
            segments: Vec::new(),
        }
    }

    pub fn with_segments(file_id: impl Into<String>, segments: Vec<Segment>) -> Self {
        Self {
            file_id: file_id.into(),
            segments,
        }
    }

    pub fn push(&mut self, speaker: impl Into<String>, start: f64, end: f64) {
        self.segments.push(Segment::new(speaker, start, end));
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Distinct speaker labels in sorted order.
    pub fn speakers(&self) -> Vec<String> {
        self.segments
            .iter()
            .map(|s| s.speaker.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn end_time(&self) -> f64 {
        self.segments.iter().map(|s| s.end).fold(0.0, f64::max)
    }

    /// Segments of one speaker, sorted and with touching or overlapping
    /// pieces merged.
    pub fn speaker_intervals(&self, speaker: &str) -> Vec<(f64, f64)> {
        let mut iv: Vec<(f64, f64)> = self
            .segments
            .iter()
            .filter(|s| s.speaker == speaker && s.end > s.start)
            .map(|s| (s.start, s.end))
            .collect();
        merge_intervals(&mut iv)
    }

    pub fn sort(&mut self) {
        self.segments.sort_by(|a, b| {
            a.start
                .total_cmp(&b.start)
                .then(a.end.total_cmp(&b.end))
                .then(a.speaker.cmp(&b.speaker))
        });
    }

    /// Seconds with at least one active speaker and with at least two.
    pub fn coverage(&self) -> (f64, f64) {
        let mut events: Vec<(f64, i32)> = self
            .segments
            .iter()
            .filter(|s| s.end > s.start)
            .flat_map(|s| [(s.start, 1), (s.end, -1)])
            .collect();
        events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let (mut speech, mut overlap, mut active, mut last) = (0.0, 0.0, 0, 0.0);
        for (t, d) in events {
            let dt = t - last;
            if active >= 1 {
                speech += dt;
            }
            if active >= 2 {
                overlap += dt;
            }
            active += d;
            last = t;
        }
        (speech, overlap)
    }

    /// Overlapped share of speech time; zero without speech.
    pub fn overlap_ratio(&self) -> f64 {
        let (speech, overlap) = self.coverage();
        if speech > 0.0 {
            overlap / speech
        } else {
            0.0
        }
    }

    /// Restricts to `[from, to)` and shifts times so that `from` becomes 0.
    pub fn window(&self, from: f64, to: f64) -> Annotation {
        let segments = self
            .segments
            .iter()
            .filter_map(|s| {
                let a = s.start.max(from);
                let b = s.end.min(to);
                (b > a).then(|| Segment::new(s.speaker.clone(), a - from, b - from))
            })
            .collect();
        Annotation::with_segments(self.file_id.clone(), segments)
    }
}

pub(crate) fn merge_intervals(iv: &mut [(f64, f64)]) -> Vec<(f64, f64)> {
    iv.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(iv.len());
    for &(s, e) in iv.iter() {
        match out.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => out.push((s, e)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intervals_merge_per_speaker() {
        let mut a = Annotation::new("f");
        a.push("A", 2.0, 3.0);
        a.push("A", 0.0, 1.0);
        a.push("A", 0.5, 1.5);
        a.push("B", 0.0, 9.0);
        assert_eq!(a.speaker_intervals("A"), vec![(0.0, 1.5), (2.0, 3.0)]);
        assert_eq!(a.speakers(), vec!["A", "B"]);
        assert_eq!(a.end_time(), 9.0);
    }

    #[test]
    fn coverage_cases() {
        let mut a = Annotation::new("f");
        a.push("A", 0.0, 2.0);
        assert_eq!(a.overlap_ratio(), 0.0);
        a.push("B", 0.0, 2.0);
        assert_eq!(a.overlap_ratio(), 1.0);
        let mut c = Annotation::new("g");
        c.push("A", 0.0, 16.5);
        c.push("B", 13.5, 30.0);
        assert_eq!(c.coverage(), (30.0, 3.0));
        assert!((c.overlap_ratio() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn window_clips_and_shifts() {
        let mut a = Annotation::new("f");
        a.push("A", 0.0, 4.0);
        a.push("B", 5.0, 6.0);
        let w = a.window(3.0, 5.5);
        assert_eq!(w.segments, vec![Segment::new("A", 0.0, 1.0), Segment::new("B", 2.0, 2.5)]);
    }
}
