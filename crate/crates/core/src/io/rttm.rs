use std::collections::BTreeMap;
use std::fmt::Write;

use crate::annotation::Annotation;
use crate::error::{Error, Result};

/// Parses RTTM text into annotations, one per file id, sorted by file id.
/// Only `SPEAKER` records are read; fields may be separated by any
/// whitespace.
pub fn parse(text: &str) -> Result<Vec<Annotation>> {
    let mut by_file: BTreeMap<String, Annotation> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.first() != Some(&"SPEAKER") {
            continue;
        }
        if fields.len() < 8 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected at least 8 fields, found {}", fields.len()),
            });
        }
        let num = |idx: usize, what: &str| -> Result<f64> {
            fields[idx]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    line: line_no,
                    msg: format!("bad {what} {:?}", fields[idx]),
                })
        };
        let onset = num(3, "onset")?;
        let dur = num(4, "duration")?;
        if onset < 0.0 || dur < 0.0 {
            return Err(Error::Parse {
                line: line_no,
                msg: "negative onset or duration".into(),
            });
        }
        let file = fields[1];
        by_file
            .entry(file.to_string())
            .or_insert_with(|| Annotation::new(file))
            .push(fields[7], onset, onset + dur);
    }
    Ok(by_file.into_values().collect())
}

/// RTTM text for annotations, records sorted by file id then onset, times
/// with three decimals. Segments that round to zero length are skipped.
pub fn emit<'a>(anns: impl IntoIterator<Item = &'a Annotation>) -> String {
    let mut recs: Vec<(&str, f64, f64, &str)> = anns
        .into_iter()
        .flat_map(|a| {
            a.segments
                .iter()
                .map(move |s| (a.file_id.as_str(), s.start, s.duration(), s.speaker.as_str()))
        })
        .collect();
    recs.sort_by(|a, b| {
        a.0.cmp(b.0)
            .then(a.1.total_cmp(&b.1))
            .then(a.2.total_cmp(&b.2))
            .then(a.3.cmp(b.3))
    });
    let mut out = String::new();
    for (file, onset, dur, spk) in recs {
        if (dur * 1000.0).round() <= 0.0 {
            continue;
        }
        writeln!(out, "SPEAKER {file} 1 {onset:.3} {dur:.3} <NA> <NA> {spk} <NA> <NA>").expect("write to string");
    }
    out
}
