//! Mini-batch optimization loops for pre-training and adaptation.

use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::enroll::{sample_enrollment_runs, DropMode};
use super::forced::{forced_loss, Forcing};
use super::labels::{build_labels, LabelMatrix};
use super::optim::{Adam, AdamConfig, ParamGrads, Schedule};
use crate::corpus::Recording;
use crate::decode::gt_decode;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::nnet::AedEend;
use crate::score::{der, DerOptions, DerResult};
use crate::tensor::{Gradients, Graph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Pretrain,
    Adapt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Chunk length in seconds.
    pub segment_len: f64,
    pub batch_size: usize,
    /// Enrollment length range in seconds.
    pub el_range: (f64, f64),
    pub enroll_drop_p: f64,
    pub drop_mode: DropMode,
    pub warmup_steps: usize,
    pub noam_factor: f64,
    pub epochs: usize,
    pub adapt_lr: f64,
    /// Stops after this many updates even mid-epoch.
    pub max_steps: Option<usize>,
    /// Global gradient-norm clip.
    pub grad_clip: Option<f64>,
    /// Enrollment length used for dev GT decoding.
    pub dev_el: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::pretrain()
    }
}

impl TrainConfig {
    pub fn pretrain() -> Self {
        Self {
            segment_len: 50.0,
            batch_size: 64,
            el_range: (1.0, 3.0),
            enroll_drop_p: 0.5,
            drop_mode: DropMode::PerSpeaker,
            warmup_steps: 200_000,
            noam_factor: 1.0,
            epochs: 100,
            adapt_lr: 1e-5,
            max_steps: None,
            grad_clip: Some(5.0),
            dev_el: 0.5,
            seed: 0,
        }
    }

    pub fn adapt() -> Self {
        Self {
            batch_size: 32,
            ..Self::pretrain()
        }
    }

    pub fn for_mode(mode: Mode) -> Self {
        match mode {
            Mode::Pretrain => Self::pretrain(),
            Mode::Adapt => Self::adapt(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.el_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Config(format!("enrollment range [{lo}, {hi}] is invalid")));
        }
        if !(0.0..=1.0).contains(&self.enroll_drop_p) {
            return Err(Error::Config(format!("drop probability {} outside [0, 1]", self.enroll_drop_p)));
        }
        if !(self.segment_len > 0.0) || self.batch_size == 0 {
            return Err(Error::Config("segment length and batch size must be positive".into()));
        }
        if self.warmup_steps == 0 || !(self.adapt_lr > 0.0) || !(self.noam_factor > 0.0) {
            return Err(Error::Config("warmup, learning rate and factor must be positive".into()));
        }
        Ok(())
    }

    /// Applies one `key=value` override; `Ok(false)` for unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
        }
        fn opt<T: FromStr>(key: &str, v: &str) -> Result<Option<T>> {
            if v == "none" {
                Ok(None)
            } else {
                num(key, v).map(Some)
            }
        }
        match key {
            "segment_len" => self.segment_len = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "el_min" => self.el_range.0 = num(key, value)?,
            "el_max" => self.el_range.1 = num(key, value)?,
            "enroll_drop_p" => self.enroll_drop_p = num(key, value)?,
            "drop_mode" => self.drop_mode = value.parse()?,
            "warmup_steps" => self.warmup_steps = num(key, value)?,
            "noam_factor" => self.noam_factor = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "adapt_lr" => self.adapt_lr = num(key, value)?,
            "max_steps" => self.max_steps = opt(key, value)?,
            "grad_clip" => self.grad_clip = opt(key, value)?,
            "dev_el" => self.dev_el = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn schedule(&self, mode: Mode, model_dim: usize) -> Schedule {
        match mode {
            Mode::Pretrain => Schedule::Noam {
                model_dim,
                warmup: self.warmup_steps,
                factor: self.noam_factor,
            },
            Mode::Adapt => Schedule::Constant(self.adapt_lr),
        }
    }
}

/// One training chunk with frame-aligned targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub features: FeatureMatrix,
    pub labels: LabelMatrix,
}

impl Example {
    /// Whole recording as one example, speakers in sorted-name order.
    pub fn from_recording(rec: &Recording) -> Result<Self> {
        let speakers = rec.annotation.speakers();
        let labels = build_labels(
            &rec.annotation,
            rec.features.frames(),
            rec.features.frame_period,
            &speakers,
        )?;
        Ok(Self {
            id: rec.id.clone(),
            features: rec.features.clone(),
            labels,
        })
    }
}

/// Cuts recordings into consecutive chunks of `segment_len` seconds; the
/// last chunk of a recording may be shorter.
pub fn chunk_recordings(recs: &[Recording], segment_len: f64) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for rec in recs {
        let period = rec.features.frame_period;
        let len = ((segment_len / period).round() as usize).max(1);
        let total = rec.features.frames();
        let mut from = 0;
        while from < total {
            let to = (from + len).min(total);
            let ann = rec.annotation.window(from as f64 * period, to as f64 * period);
            let speakers = ann.speakers();
            let labels = build_labels(&ann, to - from, period, &speakers)?;
            out.push(Example {
                id: format!("{}_{from:06}", rec.id),
                features: rec.features.slice_frames(from, to),
                labels,
            });
            from = to;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub dev_loss: Option<f64>,
    /// Percent, GT-decoded.
    pub dev_der: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TrainReport {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

/// Owns a model and its optimizer state across updates.
#[derive(Debug, Clone)]
pub struct Trainer {
    model: AedEend,
    cfg: TrainConfig,
    mode: Mode,
    schedule: Schedule,
    adam: Adam,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: AedEend, cfg: TrainConfig, mode: Mode) -> Result<Self> {
        cfg.validate()?;
        let schedule = cfg.schedule(mode, model.config().attn_dim);
        let adam_cfg = match mode {
            Mode::Pretrain => AdamConfig::NOAM,
            Mode::Adapt => AdamConfig::DEFAULT,
        };
        let adam = Adam::new(model.params(), adam_cfg);
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Self {
            model,
            cfg,
            mode,
            schedule,
            adam,
            rng,
        })
    }

    pub fn model(&self) -> &AedEend {
        &self.model
    }

    pub fn into_model(self) -> AedEend {
        self.model
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Updates applied so far.
    pub fn steps(&self) -> usize {
        self.adam.steps()
    }

    /// Learning rate the next update will use.
    pub fn next_lr(&self) -> f64 {
        self.schedule.lr(self.steps() + 1)
    }

    fn example_grads(&self, ex: &Example, seed: u64) -> Result<(f64, Gradients)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let forcing = Forcing::sample(
            &ex.labels,
            self.cfg.el_range,
            self.cfg.enroll_drop_p,
            self.cfg.drop_mode,
            &mut rng,
        );
        let g = Graph::training(rng.random());
        let x = g.constant(ex.features.tensor().clone());
        let out = forced_loss(&self.model, &g, x, &ex.labels, &forcing)?;
        let loss = out.loss.item();
        if !loss.is_finite() {
            return Err(Error::Numeric("training loss"));
        }
        Ok((loss, g.backward(out.loss)?))
    }

    /// One update on the mean loss of `batch`. Examples are processed in
    /// parallel and their gradients summed in batch order.
    pub fn step(&mut self, batch: &[&Example]) -> Result<(f64, f64)> {
        if batch.is_empty() {
            return Err(Error::Config("empty batch".into()));
        }
        let seeds: Vec<u64> = (0..batch.len()).map(|_| self.rng.random()).collect();
        let results: Vec<(f64, Gradients)> = batch
            .par_iter()
            .zip(seeds)
            .map(|(ex, seed)| self.example_grads(ex, seed))
            .collect::<Result<_>>()?;
        let w = 1.0 / batch.len() as f64;
        let mut grads = ParamGrads::new(self.model.params());
        let mut loss = 0.0;
        for (l, g) in &results {
            loss += w * l;
            grads.accumulate(g, w);
        }
        let lr = self.next_lr();
        let norm = self.adam.step(self.model.params_mut(), &grads, lr, self.cfg.grad_clip)?;
        Ok((loss, norm))
    }

    /// Mean teacher-forced loss with dropout off, no enrollment dropout and
    /// a fixed enrollment draw.
    pub fn eval_loss(&self, examples: &[Example]) -> Result<f64> {
        if examples.is_empty() {
            return Err(Error::Config("no evaluation examples".into()));
        }
        let losses: Vec<f64> = examples
            .par_iter()
            .enumerate()
            .map(|(i, ex)| {
                let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0xdef0);
                rng.set_stream(i as u64);
                let forcing = Forcing::all(sample_enrollment_runs(&ex.labels, self.cfg.el_range, &mut rng));
                let g = Graph::new();
                let x = g.constant(ex.features.tensor().clone());
                Ok(forced_loss(&self.model, &g, x, &ex.labels, &forcing)?.loss.item())
            })
            .collect::<Result<_>>()?;
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    }

    /// Corpus DER of GT-decoded recordings (collar 0, overlap scored).
    pub fn gt_der(&self, recs: &[Recording]) -> Result<DerResult> {
        let per: Vec<DerResult> = recs
            .par_iter()
            .map(|rec| {
                let ex = Example::from_recording(rec)?;
                let out = gt_decode(&self.model, &rec.features, &ex.labels, self.cfg.dev_el, 0.5, self.cfg.seed)?;
                let hyp = out.to_annotation(&rec.id, rec.features.frame_period);
                der(&rec.annotation, &hyp, &DerOptions::default())
            })
            .collect::<Result<_>>()?;
        DerResult::aggregate(per.iter())
    }

    /// Runs epochs of shuffled mini-batches over `train` chunks, evaluating
    /// on `dev` after each epoch. Each record is written to `log` as one
    /// JSON line.
    pub fn run(&mut self, train: &[Recording], dev: &[Recording], mut log: Option<&mut dyn Write>) -> Result<TrainReport> {
        let examples = chunk_recordings(train, self.cfg.segment_len)?;
        if examples.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        let dev_examples = chunk_recordings(dev, self.cfg.segment_len)?;
        let mut report = TrainReport::default();
        let mut order: Vec<usize> = (0..examples.len()).collect();
        'epochs: for epoch in 1..=self.cfg.epochs {
            order.shuffle(&mut self.rng);
            let mut epoch_loss = 0.0;
            let mut batches = 0;
            let mut last_lr = self.next_lr();
            for idx in order.chunks(self.cfg.batch_size) {
                if self.cfg.max_steps.is_some_and(|m| self.steps() >= m) {
                    break;
                }
                let batch: Vec<&Example> = idx.iter().map(|&i| &examples[i]).collect();
                last_lr = self.next_lr();
                let (loss, grad_norm) = self.step(&batch)?;
                epoch_loss += loss;
                batches += 1;
                let rec = StepRecord {
                    epoch,
                    step: self.steps(),
                    loss,
                    lr: last_lr,
                    grad_norm,
                };
                write_record(&mut log, &rec)?;
                report.steps.push(rec);
            }
            if batches == 0 {
                break;
            }
            let (dev_loss, dev_der) = if dev.is_empty() {
                (None, None)
            } else {
                (Some(self.eval_loss(&dev_examples)?), Some(100.0 * self.gt_der(dev)?.der))
            };
            let rec = EpochRecord {
                epoch,
                step: self.steps(),
                loss: epoch_loss / batches as f64,
                lr: last_lr,
                dev_loss,
                dev_der,
            };
            log::info!(
                "epoch {epoch} step {} loss {:.5} lr {:.3e} dev_der {:?}",
                rec.step,
                rec.loss,
                rec.lr,
                rec.dev_der
            );
            write_record(&mut log, &rec)?;
            report.epochs.push(rec);
            if self.cfg.max_steps.is_some_and(|m| self.steps() >= m) {
                break 'epochs;
            }
        }
        Ok(report)
    }
}

fn write_record<T: Serialize>(log: &mut Option<&mut dyn Write>, rec: &T) -> Result<()> {
    if let Some(w) = log.as_mut() {
        let line = serde_json::to_string(rec).expect("plain record serializes");
        writeln!(w, "{line}").map_err(|e| Error::io("metrics log", e))?;
    }
    Ok(())
}
