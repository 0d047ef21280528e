//! On-disk formats: RTTM, binary feature files, checkpoints, `key=value`
//! configs and corpus directories.

mod binary;
mod config;
pub mod rttm;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

pub use binary::{
    decode_checkpoint, decode_features, encode_checkpoint, encode_features, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
    FEATURE_MAGIC, FEATURE_VERSION,
};
pub use config::parse_kv;

use crate::annotation::Annotation;
use crate::corpus::{corpus_report, Recording};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::nnet::AedEend;

pub const FEATURE_DIR: &str = "features";
pub const FEATURE_EXT: &str = "feat";
pub const RTTM_FILE: &str = "ref.rttm";
pub const MANIFEST_FILE: &str = "manifest.tsv";

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let name = path.file_name().ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let res = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = res {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<FeatureMatrix> {
    decode_features(&read_bytes(path)?)
}

pub fn write_features(path: &Path, f: &FeatureMatrix) -> Result<()> {
    write_atomic(path, &encode_features(f))
}

pub fn read_checkpoint(path: &Path) -> Result<AedEend> {
    decode_checkpoint(&read_bytes(path)?)
}

pub fn write_checkpoint(path: &Path, model: &AedEend) -> Result<()> {
    write_atomic(path, &encode_checkpoint(model))
}

pub fn read_rttm(path: &Path) -> Result<Vec<Annotation>> {
    rttm::parse(&read_text(path)?)
}

pub fn write_rttm<'a>(path: &Path, anns: impl IntoIterator<Item = &'a Annotation>) -> Result<()> {
    write_atomic(path, rttm::emit(anns).as_bytes())
}

pub fn read_kv(path: &Path) -> Result<Vec<(String, String)>> {
    parse_kv(&read_text(path)?)
}

/// Tab-separated manifest with header `id duration n_speakers overlap_pct`.
pub fn manifest_text(recs: &[Recording]) -> String {
    let report = corpus_report(recs.iter().map(|r| (&r.annotation, r.duration())));
    let mut out = String::from("id\tduration\tn_speakers\toverlap_pct\n");
    for f in &report.files {
        writeln!(out, "{}\t{:.3}\t{}\t{:.3}", f.id, f.duration, f.n_speakers, f.overlap_pct).expect("write to string");
    }
    out
}

fn feature_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(FEATURE_DIR).join(format!("{id}.{FEATURE_EXT}"))
}

/// Saves `features/<id>.feat`, `ref.rttm` and `manifest.tsv` under `dir`.
pub fn save_corpus(dir: &Path, recs: &[Recording]) -> Result<()> {
    let feat_dir = dir.join(FEATURE_DIR);
    fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
    for r in recs {
        write_features(&feature_path(dir, &r.id), &r.features)?;
    }
    write_rttm(&dir.join(RTTM_FILE), recs.iter().map(|r| &r.annotation))?;
    write_atomic(&dir.join(MANIFEST_FILE), manifest_text(recs).as_bytes())
}

/// Recording ids listed in the first column of the manifest.
fn manifest_ids(dir: &Path) -> Result<Vec<String>> {
    let text = read_text(&dir.join(MANIFEST_FILE))?;
    let mut ids = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let id = line.split('\t').next().unwrap_or("").trim();
        if id.is_empty() {
            if line.trim().is_empty() {
                continue;
            }
            return Err(Error::Parse {
                line: i + 1,
                msg: "missing recording id".into(),
            });
        }
        ids.push(id.to_string());
    }
    Ok(ids)
}

/// Loads a directory written by [`save_corpus`], in manifest order.
/// Recordings without reference segments get an empty annotation.
pub fn load_corpus(dir: &Path) -> Result<Vec<Recording>> {
    let ids = manifest_ids(dir)?;
    let rttm_path = dir.join(RTTM_FILE);
    let mut anns: BTreeMap<String, Annotation> = if rttm_path.exists() {
        read_rttm(&rttm_path)?.into_iter().map(|a| (a.file_id.clone(), a)).collect()
    } else {
        BTreeMap::new()
    };
    ids.into_iter()
        .map(|id| {
            let features = read_features(&feature_path(dir, &id))?;
            let annotation = anns.remove(&id).unwrap_or_else(|| Annotation::new(&id));
            Ok(Recording { id, features, annotation })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
        assert!(matches!(
            write_atomic(&dir.path().join("missing/x"), b""),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn corpus_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = Annotation::new("r1");
        a.push("s0", 0.0, 0.5);
        a.push("s1", 0.3, 0.9);
        let recs = vec![
            Recording {
                id: "r1".into(),
                features: FeatureMatrix::new(10, 2, (0..20).map(|i| i as f64 * 0.5).collect(), 0.1).unwrap(),
                annotation: a,
            },
            Recording {
                id: "r0".into(),
                features: FeatureMatrix::new(4, 2, vec![0.0; 8], 0.1).unwrap(),
                annotation: Annotation::new("r0"),
            },
        ];
        save_corpus(dir.path(), &recs).unwrap();
        let manifest = read_text(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert!(manifest.contains("r1\t1.000\t2\t"));
        let back = load_corpus(dir.path()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].id, "r1");
        assert_eq!(back[0].features, recs[0].features);
        assert_eq!(back[0].annotation.segments.len(), 2);
        assert!(back[1].annotation.segments.is_empty());
    }
}
