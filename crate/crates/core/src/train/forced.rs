//! The teacher-forced objective on a computation graph.

use rand::Rng;

use super::enroll::{enrollment_dropout, sample_enrollment_runs, DropMode};
use super::labels::LabelMatrix;
use crate::error::{Error, Result};
use crate::nnet::AedEend;
use crate::tensor::{Graph, Var};

/// Enrollment regions chosen for one training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Forcing {
    /// Per speaker, the frames averaged into its enrollment (`None` when the
    /// speaker has no single-speaker frames).
    pub runs: Vec<Option<Vec<usize>>>,
    /// Per speaker, whether the enrollment survived dropout.
    pub keep: Vec<bool>,
}

impl Forcing {
    /// Every speaker with a region, in label order, none dropped.
    pub fn all(runs: Vec<Option<Vec<usize>>>) -> Self {
        let keep = vec![true; runs.len()];
        Self { runs, keep }
    }

    /// Speakers that receive an enrollment and a loss row.
    pub fn active(&self) -> Vec<bool> {
        self.runs
            .iter()
            .zip(&self.keep)
            .map(|(r, &k)| k && r.as_ref().is_some_and(|r| !r.is_empty()))
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(
        labels: &LabelMatrix,
        el_range: (f64, f64),
        drop_p: f64,
        mode: DropMode,
        rng: &mut R,
    ) -> Self {
        let runs = sample_enrollment_runs(labels, el_range, rng);
        let keep = enrollment_dropout(runs.len(), drop_p, mode, rng);
        Self { runs, keep }
    }
}

/// Output of the teacher-forced forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForcedOutput<'g> {
    /// `L`, or `L + L_EE` with an Enhancer.
    pub loss: Var<'g>,
    /// Logits `A·Eᵀ` over the retained rows.
    pub logits: Var<'g>,
    pub enhanced_logits: Option<Var<'g>>,
}

/// Builds the training objective for features `x` (T×F) whose targets are
/// `labels`. Speaker enrollments average the encoder embeddings over the
/// regions in `forcing`; rows of dropped speakers are removed from both the
/// enrollments and the targets.
pub fn forced_loss<'g>(
    model: &AedEend,
    g: &'g Graph,
    x: Var<'g>,
    labels: &LabelMatrix,
    forcing: &Forcing,
) -> Result<ForcedOutput<'g>> {
    if forcing.runs.len() != labels.num_speakers() || forcing.keep.len() != labels.num_speakers() {
        return Err(Error::dim("forced_loss", "forcing must cover every label speaker"));
    }
    if x.rows() != labels.frames() {
        return Err(Error::dim(
            "forced_loss",
            format!("{} feature frames vs {} label frames", x.rows(), labels.frames()),
        ));
    }
    let emb = model.encode_var(g, x)?;
    let active = forcing.active();
    let mut rows = vec![model.activity_var(g)];
    for (s, run) in forcing.runs.iter().enumerate() {
        if active[s] {
            rows.push(emb.mean_rows(run.as_deref().expect("active speaker has a run"))?);
        }
    }
    let enroll = Var::concat_rows(&rows)?;
    let targets = labels.retain_speakers(&active);
    let attr = model.decode_var(g, enroll, emb)?;
    let logits = attr.matmul_t(emb)?;
    let mut loss = logits.bce_with_logits(targets.values())?;
    let enhanced_logits = if model.has_enhancer() {
        let enh = model.enhance_var(g, emb, attr)?;
        let z = attr.matmul_t(enh)?;
        loss = loss.add(z.bce_with_logits(targets.values())?)?;
        Some(z)
    } else {
        None
    };
    Ok(ForcedOutput {
        loss,
        logits,
        enhanced_logits,
    })
}
