use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use eend::corpus::{corpus_report, Recording};
use eend::decode::{gt_decode, iterative_decode, DecodeConfig, Strategy};
use eend::io;
use eend::nnet::{AedEend, ModelConfig};
use eend::score::{score_corpus, DerOptions};
use eend::sim::{extract_stats, simulate_corpus, Regime, SimConfig, SimStats};
use eend::train::{Example, Mode, TrainConfig, Trainer};
use eend::Annotation;

/// End-to-end speaker diarization with attention-based enrollment decoding.
#[derive(Parser, Debug)]
#[command(name = "eend", version)]
struct Cli {
    /// Seed for simulation, training and decoding.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Flat `key=value` file overriding model and training defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a corpus directory of features and reference RTTM.
    Simulate(SimulateArgs),
    /// Pre-train a model with the warmup schedule.
    Train(TrainArgs),
    /// Fine-tune a checkpoint at a constant learning rate.
    Adapt(TrainArgs),
    /// Diarize features with a checkpoint and write RTTM.
    Infer(InferArgs),
    /// Score hypothesis RTTM against reference RTTM.
    Score(ScoreArgs),
    /// Print duration and overlap statistics of a corpus.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "sm")]
    regime: Regime,
    #[arg(long = "n-spk", default_value_t = 2)]
    n_spk: usize,
    #[arg(long, default_value_t = 10)]
    n_mixtures: usize,
    /// Mean pause in seconds (simulated mixtures); defaults per speaker count.
    #[arg(long)]
    beta: Option<f64>,
    /// Target duration in seconds (simulated conversations).
    #[arg(long, default_value_t = 60.0)]
    duration: f64,
    /// Reference RTTM whose turn-taking statistics drive conversations.
    #[arg(long)]
    stats_from: Option<PathBuf>,
    /// Feature noise standard deviation.
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training corpus directory.
    #[arg(long)]
    data: PathBuf,
    /// Development corpus directory evaluated after every epoch.
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Starting checkpoint (required for adapt).
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Metrics log, appended one JSON record per line.
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    model: PathBuf,
    /// Corpus directory or a single feature file.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "sc")]
    strategy: Strategy,
    /// Enrollment length in seconds.
    #[arg(long, default_value_t = 0.5)]
    el: f64,
    /// Stop-decoding length in seconds.
    #[arg(long, default_value_t = 1.0)]
    sdl: f64,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Decode exactly this many speakers.
    #[arg(long)]
    oracle_speakers: Option<usize>,
    /// Enroll from reference single-speaker regions instead of decoding.
    #[arg(long, hide = true)]
    gt_enroll: bool,
    /// Reference RTTM for --gt-enroll (defaults to the corpus ref.rttm).
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    /// Per-iteration decoding trace as JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    hyp: PathBuf,
    /// Seconds excluded around each reference boundary.
    #[arg(long, default_value_t = 0.0)]
    collar: f64,
    #[arg(long)]
    no_overlap_scoring: bool,
    /// Writes the table here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-file JSON lines.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Corpus directory.
    #[arg(long, conflicts_with = "rttm")]
    data: Option<PathBuf>,
    /// Plain RTTM; recording length is taken as the last segment end.
    #[arg(long)]
    rttm: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring thread pool")?;
    }
    let overrides = match &cli.config {
        Some(p) => io::read_kv(p)?,
        None => Vec::new(),
    };
    match cli.cmd {
        Command::Simulate(a) => simulate(a, cli.seed),
        Command::Train(a) => train(a, Mode::Pretrain, cli.seed, &overrides),
        Command::Adapt(a) => train(a, Mode::Adapt, cli.seed, &overrides),
        Command::Infer(a) => infer(a, cli.seed),
        Command::Score(a) => score(a),
        Command::Report(a) => report(a),
    }
}

fn simulate(a: SimulateArgs, seed: u64) -> Result<()> {
    let stats = match (&a.stats_from, a.regime) {
        (Some(p), _) => Some(extract_stats(&io::read_rttm(p)?)?),
        (None, Regime::Sc) => Some(SimStats::conversational()),
        (None, Regime::Sm) => None,
    };
    let mut cfg = SimConfig {
        regime: a.regime,
        n_speakers: a.n_spk,
        n_mixtures: a.n_mixtures,
        beta: a.beta.unwrap_or(SimConfig::default_beta(a.n_spk)),
        stats,
        duration: a.duration,
        seed,
        ..SimConfig::default()
    };
    if let Some(n) = a.noise {
        cfg.features.noise = n;
    }
    let recs = simulate_corpus(&cfg)?;
    io::save_corpus(&a.out, &recs)?;
    println!("{}", corpus_report(recs.iter().map(|r| (&r.annotation, r.duration()))));
    Ok(())
}

/// Applies overrides to the model and training configs; a key neither
/// accepts is an error.
fn apply_overrides(model: &mut ModelConfig, train: &mut TrainConfig, kv: &[(String, String)]) -> Result<()> {
    for (k, v) in kv {
        if !model.set(k, v)? && !train.set(k, v)? {
            bail!("unknown config key {k:?}");
        }
    }
    Ok(())
}

fn train(a: TrainArgs, mode: Mode, seed: u64, overrides: &[(String, String)]) -> Result<()> {
    let mut tcfg = TrainConfig::for_mode(mode);
    tcfg.seed = seed;
    let model = match &a.init {
        Some(p) => {
            let m = io::read_checkpoint(p)?;
            let mut mcfg = m.config().clone();
            apply_overrides(&mut mcfg, &mut tcfg, overrides)?;
            if &mcfg != m.config() {
                bail!("model configuration cannot change when starting from a checkpoint");
            }
            m
        }
        None if mode == Mode::Adapt => bail!("adapt requires --init"),
        None => {
            let mut mcfg = ModelConfig {
                init_seed: seed,
                ..ModelConfig::default()
            };
            apply_overrides(&mut mcfg, &mut tcfg, overrides)?;
            AedEend::new(mcfg)?
        }
    };
    if let Some(n) = a.max_steps {
        tcfg.max_steps = Some(n);
    }
    if let Some(n) = a.epochs {
        tcfg.epochs = n;
    }
    let data = io::load_corpus(&a.data)?;
    let dev = match &a.dev {
        Some(d) => io::load_corpus(d)?,
        None => Vec::new(),
    };
    let mut trainer = Trainer::new(model, tcfg, mode)?;
    let report = match &a.metrics {
        Some(p) => {
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .with_context(|| format!("opening {}", p.display()))?;
            trainer.run(&data, &dev, Some(&mut f))?
        }
        None => trainer.run(&data, &dev, None)?,
    };
    io::write_checkpoint(&a.out, trainer.model())?;
    if let Some(last) = report.epochs.last() {
        println!(
            "steps {} epochs {} final loss {:.5}{}",
            last.step,
            report.epochs.len(),
            last.loss,
            last.dev_der.map(|d| format!(" dev DER {d:.2} %")).unwrap_or_default()
        );
    }
    Ok(())
}

fn load_inputs(data: &Path) -> Result<Vec<Recording>> {
    if data.is_dir() {
        return Ok(io::load_corpus(data)?);
    }
    let id = data
        .file_stem()
        .and_then(|s| s.to_str())
        .context("feature file needs a UTF-8 name")?
        .to_string();
    Ok(vec![Recording {
        features: io::read_features(data)?,
        annotation: Annotation::new(&id),
        id,
    }])
}

fn infer(a: InferArgs, seed: u64) -> Result<()> {
    let model = io::read_checkpoint(&a.model)?;
    let mut recs = load_inputs(&a.data)?;
    if a.gt_enroll {
        let path = a.reference.clone().unwrap_or_else(|| a.data.join(io::RTTM_FILE));
        let refs = io::read_rttm(&path)?;
        for r in &mut recs {
            r.annotation = refs
                .iter()
                .find(|x| x.file_id == r.id)
                .cloned()
                .unwrap_or_else(|| Annotation::new(&r.id));
        }
    }
    let cfg = DecodeConfig {
        strategy: a.strategy,
        el: a.el,
        sdl: a.sdl,
        threshold: a.threshold,
        max_speakers: a.oracle_speakers,
        seed,
    };
    cfg.validate()?;
    let outs: Vec<_> = recs
        .par_iter()
        .map(|r| {
            if a.gt_enroll {
                let ex = Example::from_recording(r)?;
                gt_decode(&model, &r.features, &ex.labels, a.el, a.threshold, seed)
            } else {
                iterative_decode(&model, &r.features, &cfg)
            }
        })
        .collect::<eend::Result<_>>()?;
    let hyps: Vec<Annotation> = recs
        .iter()
        .zip(&outs)
        .map(|(r, o)| o.to_annotation(&r.id, r.features.frame_period))
        .collect();
    io::write_rttm(&a.out, &hyps)?;
    if let Some(p) = &a.trace {
        let mut text = String::new();
        for (r, o) in recs.iter().zip(&outs) {
            for step in &o.trace {
                let line = serde_json::json!({ "file": r.id, "step": step });
                text.push_str(&line.to_string());
                text.push('\n');
            }
        }
        io::write_atomic(p, text.as_bytes())?;
    }
    for (r, o) in recs.iter().zip(&outs) {
        log::info!("{}: {} speakers", r.id, o.num_speakers());
    }
    Ok(())
}

fn score(a: ScoreArgs) -> Result<()> {
    let refs = io::read_rttm(&a.reference)?;
    let hyps = io::read_rttm(&a.hyp)?;
    let opts = DerOptions {
        collar: a.collar,
        score_overlap: !a.no_overlap_scoring,
    };
    let rep = score_corpus(&refs, &hyps, &opts)?;
    let table = format!("{rep}\n");
    print!("{table}");
    if let Some(p) = &a.out {
        io::write_atomic(p, table.as_bytes())?;
    }
    if let Some(p) = &a.json {
        io::write_atomic(p, rep.json_lines().as_bytes())?;
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let items: Vec<(Annotation, f64)> = match (&a.data, &a.rttm) {
        (Some(d), _) => io::load_corpus(d)?
            .into_iter()
            .map(|r| {
                let dur = r.duration();
                (r.annotation, dur)
            })
            .collect(),
        (None, Some(p)) => io::read_rttm(p)?
            .into_iter()
            .map(|ann| {
                let dur = ann.end_time();
                (ann, dur)
            })
            .collect(),
        (None, None) => bail!("report needs --data or --rttm"),
    };
    let rep = corpus_report(items.iter().map(|(a, d)| (a, *d)));
    if a.json {
        println!("{}", serde_json::to_string_pretty(&rep)?);
    } else {
        println!("{rep}");
    }
    Ok(())
}
