//! `satpt`: one binary for the whole pipeline.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::{concatenate, Array2, Axis};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use satpt::augment::{append_specs, mix_batch, verify_spec, SWEEP_PROBABILITIES};
use satpt::corpus::{load_manifest, make_batch, synth_corpus, wav, write_manifest, Utterance, UtteranceDescriptor};
use satpt::dsp::{mfcc, read_features, write_features};
use satpt::encoder::{FrontEnd, MaskSet};
use satpt::probe::{fit_layer_weights, render_bars, speaker_separability, ProbeOptions, ProbeReport};
use satpt::pseudolabel::{
    assign, fit, pool_frames, read_labels, recluster_from_embeddings, write_kmeans, write_labels,
    KmeansOptions, LabelSource,
};
use satpt::rng::derive_seed;
use satpt::trainer::{
    desk_run, grad_check, init_state, layer_embeddings, load_checkpoint, mfcc_train_data, model_input,
    summarize, train, GradCheckOptions, Seeds, TrainConfig, TrainData, TrainOutputs, METRICS_FILE,
};

const RUN_MANIFEST: &str = "run.json";
const EVAL_SEED: u64 = 99;

#[derive(Parser, Debug)]
#[command(name = "satpt", version, about = "Speaker-aware self-supervised speech pre-training at desk scale")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct ConfigArgs {
    /// JSON training config; unspecified keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set losses.alpha=0.2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args, Debug, Clone, Default)]
struct SeedArgs {
    /// Base seed every named stream derives from.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    seed_data: Option<u64>,
    #[arg(long)]
    seed_model: Option<u64>,
    #[arg(long)]
    seed_mixing: Option<u64>,
    #[arg(long)]
    seed_masking: Option<u64>,
    #[arg(long)]
    seed_negatives: Option<u64>,
    #[arg(long)]
    seed_gumbel: Option<u64>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum FrontEndArg {
    Precomputed,
    Conv,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ProbeTarget {
    /// One example per utterance, classified by speaker tag.
    Speaker,
    /// One example per frame, classified by pseudo-label.
    Labels,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a tagged multi-speaker corpus (WAVs plus manifest).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        speakers: usize,
        #[arg(long, default_value_t = 16)]
        utterances: usize,
        /// Seconds per utterance.
        #[arg(long, default_value_t = 0.5)]
        duration: f64,
        #[arg(long, default_value_t = 16_000)]
        sample_rate: u32,
        #[command(flatten)]
        seeds: SeedArgs,
    },
    /// Extract MFCC feature dumps for every manifest entry.
    Mfcc {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// K-means over feature dumps; writes labels and the model.
    Cluster {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory written by `mfcc`.
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Cluster count; defaults to `encoder.num_classes`.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 1)]
        restarts: usize,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        seeds: SeedArgs,
    },
    /// Draw training batches, mix them and write the results for inspection.
    Mix {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        batches: usize,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        seeds: SeedArgs,
    },
    /// Pre-train the encoder; writes metrics, checkpoints and a summary.
    Pretrain {
        #[arg(long)]
        manifest: PathBuf,
        /// Label dump; computed from clean MFCCs when absent.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint directory (its config is used).
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many total steps.
        #[arg(long)]
        stop_at: Option<usize>,
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        seeds: SeedArgs,
    },
    /// Cluster a trained encoder's hidden states into new labels.
    Recluster {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Hidden state to cluster; defaults to the tap layer.
        #[arg(long)]
        layer: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 1)]
        restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Learn layer weights on a frozen checkpoint and report separability.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value_t = ProbeTarget::Speaker)]
        target: ProbeTarget,
        /// Label dump, for `--target labels`.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 0.05)]
        learning_rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every gradient on a tiny configuration.
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        coordinates: usize,
        #[arg(long, default_value_t = 1e-4)]
        step_size: f64,
        /// Only check parameters whose name starts with this prefix.
        #[arg(long)]
        only: Option<String>,
        #[arg(long, value_enum, default_value_t = FrontEndArg::Precomputed)]
        front_end: FrontEndArg,
        /// Fail when the max relative error reaches this value.
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pre-train at every mixing ratio on synthetic corpora and tabulate.
    SweepMix {
        #[arg(long)]
        out: PathBuf,
        /// Base seeds, one synthetic corpus and run set per seed.
        #[arg(long, value_delimiter = ',', default_values_t = vec![1u64, 2, 3])]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 8)]
        speakers: usize,
        #[arg(long, default_value_t = 16)]
        utterances: usize,
        #[arg(long, default_value_t = 0.5)]
        duration: f64,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

/// Provenance record written next to every command's artifacts.
#[derive(Debug, Serialize)]
struct RunManifest {
    command: String,
    config_hash: String,
    seeds: Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    tool_version: String,
    wall_time_secs: f64,
}

/// SHA-256 of the compact JSON form. `serde_json` objects keep keys sorted,
/// so equal configs hash equally on every platform.
fn config_hash(v: &Value) -> String {
    hex::encode(Sha256::digest(v.to_string().as_bytes()))
}

struct Run {
    command: &'static str,
    started: Instant,
    config: Value,
    seeds: Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run {
    fn new(command: &'static str) -> Self {
        Run {
            command,
            started: Instant::now(),
            config: Value::Null,
            seeds: Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn finish(self, out: Option<&Path>) -> Result<()> {
        let m = RunManifest {
            command: self.command.to_string(),
            config_hash: config_hash(&self.config),
            seeds: self.seeds,
            inputs: self.inputs,
            outputs: self.outputs,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_secs: self.started.elapsed().as_secs_f64(),
        };
        let text = serde_json::to_string_pretty(&m)?;
        match out {
            Some(dir) => fs::write(dir.join(RUN_MANIFEST), text + "\n")
                .with_context(|| format!("writing run manifest in {}", dir.display()))?,
            None => eprintln!("{}", serde_json::to_string(&m)?),
        }
        Ok(())
    }
}

fn resolve_config(args: &ConfigArgs, seeds: &SeedArgs) -> Result<TrainConfig> {
    let base = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            TrainConfig::from_json(&text)?
        }
        None => TrainConfig::default(),
    };
    let mut cfg = base.with_overrides(args.sets.iter().map(String::as_str))?;
    if let Some(s) = seeds.seed {
        cfg.seeds = Seeds::from_base(s);
    }
    for (name, v) in [
        ("data", seeds.seed_data),
        ("model", seeds.seed_model),
        ("mixing", seeds.seed_mixing),
        ("masking", seeds.seed_masking),
        ("negatives", seeds.seed_negatives),
        ("gumbel", seeds.seed_gumbel),
    ] {
        if let Some(v) = v {
            cfg.seeds.set(name, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_corpus(manifest: &Path) -> Result<Vec<Utterance<f64>>> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    load_manifest(manifest)?
        .iter()
        .map(|d| d.load(base).with_context(|| format!("loading audio for '{}'", d.id)))
        .collect()
}

fn speaker_tags(utts: &[Utterance<f64>]) -> Result<Vec<String>> {
    utts.iter()
        .map(|u| {
            u.speaker
                .clone()
                .with_context(|| format!("utterance '{}' has no speaker tag", u.id))
        })
        .collect()
}

fn cmd_synth(out: &Path, speakers: usize, utterances: usize, duration: f64, sample_rate: u32, seeds: &SeedArgs) -> Result<()> {
    let mut run = Run::new("synth");
    let cfg = resolve_config(&ConfigArgs::default(), seeds)?;
    let utts = synth_corpus::<f64>(speakers, utterances, duration, sample_rate, cfg.seeds.data)?;
    let audio = out.join("audio");
    create_dir(&audio)?;
    let mut entries = Vec::with_capacity(utts.len());
    for u in &utts {
        let rel = PathBuf::from("audio").join(format!("{}.wav", u.id));
        wav::write(&out.join(&rel), &u.waveform)?;
        entries.push(UtteranceDescriptor {
            id: u.id.clone(),
            audio_path: rel,
            speaker: u.speaker.clone(),
        });
    }
    let manifest = out.join("manifest.jsonl");
    write_manifest(&manifest, &entries)?;
    println!("wrote {} utterances from {speakers} speakers to {}", utts.len(), manifest.display());
    run.config = json!({"speakers": speakers, "utterances": utterances, "duration": duration, "sample_rate": sample_rate});
    run.seeds = json!({"data": cfg.seeds.data});
    run.outputs = vec![manifest, audio];
    run.finish(Some(out))
}

fn cmd_mfcc(manifest: &Path, out: &Path, config: &ConfigArgs) -> Result<()> {
    let mut run = Run::new("mfcc");
    let cfg = resolve_config(config, &SeedArgs::default())?;
    create_dir(out)?;
    let utts = load_corpus(manifest)?;
    for u in &utts {
        write_features(out, &mfcc(&u.id, &u.waveform, &cfg.mfcc)?)?;
    }
    println!("wrote {} feature dumps to {}", utts.len(), out.display());
    run.config = serde_json::to_value(&cfg.mfcc)?;
    run.inputs = vec![manifest.to_path_buf()];
    run.outputs = vec![out.to_path_buf()];
    run.finish(Some(out))
}

fn cmd_cluster(
    manifest: &Path,
    features: &Path,
    out: &Path,
    k: Option<usize>,
    restarts: usize,
    config: &ConfigArgs,
    seeds: &SeedArgs,
) -> Result<()> {
    let mut run = Run::new("cluster");
    let cfg = resolve_config(config, seeds)?;
    create_dir(out)?;
    let feats = load_manifest(manifest)?
        .iter()
        .map(|d| read_features::<f64>(features, &d.id))
        .collect::<satpt::Result<Vec<_>>>()?;
    let opts = KmeansOptions {
        k: k.unwrap_or(cfg.encoder.num_classes),
        restarts,
        seed: derive_seed(cfg.seeds.data, &[0xC1]),
        ..KmeansOptions::default()
    };
    let model = fit(&pool_frames(&feats)?, &opts)?;
    let labels = feats
        .iter()
        .map(|f| assign(&model, f, LabelSource::Mfcc))
        .collect::<satpt::Result<Vec<_>>>()?;
    let (lp, mp) = (out.join("labels.jsonl"), out.join("kmeans.bin"));
    write_labels(&lp, &labels)?;
    write_kmeans(&mp, &model)?;
    println!("k={} inertia={:.4} over {} utterances", opts.k, model.inertia, labels.len());
    run.config = serde_json::to_value(&opts)?;
    run.seeds = json!({"kmeans": opts.seed});
    run.inputs = vec![manifest.to_path_buf(), features.to_path_buf()];
    run.outputs = vec![lp, mp];
    run.finish(Some(out))
}

fn cmd_mix(manifest: &Path, out: &Path, batches: usize, config: &ConfigArgs, seeds: &SeedArgs) -> Result<()> {
    let mut run = Run::new("mix");
    let cfg = resolve_config(config, seeds)?;
    let utts = load_corpus(manifest)?;
    let audio = out.join("mixed");
    create_dir(&audio)?;
    let specs_path = out.join("specs.jsonl");
    if specs_path.exists() {
        fs::remove_file(&specs_path)?;
    }
    let mut mixed_count = 0;
    for i in 0..batches {
        let batch = make_batch(&utts, cfg.batch_size, cfg.utterance_length, derive_seed(cfg.seeds.data, &[i as u64]))?;
        let mixed = mix_batch(&batch, &cfg.mix, derive_seed(cfg.seeds.mixing, &[i as u64]))?;
        let report = verify_spec(&mixed);
        if !report.is_ok() {
            bail!("mixing invariant violated in batch {i}: {}", report.violations.join("; "));
        }
        for (b, u) in mixed.batch.utterances().iter().enumerate() {
            wav::write(&audio.join(format!("b{i:04}_{b:02}_{}.wav", u.id)), &u.waveform)?;
        }
        append_specs(&specs_path, i, &mixed.specs)?;
        mixed_count += mixed.specs.len();
    }
    println!(
        "mixed {mixed_count} of {} utterances at p={}; specs in {}",
        batches * cfg.batch_size,
        cfg.mix.probability,
        specs_path.display()
    );
    run.config = json!({"batch_size": cfg.batch_size, "utterance_length": cfg.utterance_length, "mix": cfg.mix});
    run.seeds = json!({"data": cfg.seeds.data, "mixing": cfg.seeds.mixing});
    run.inputs = vec![manifest.to_path_buf()];
    run.outputs = vec![audio, specs_path];
    run.finish(Some(out))
}

fn train_data(utts: Vec<Utterance<f64>>, labels: Option<&Path>, cfg: &TrainConfig) -> Result<TrainData<f64>> {
    match labels {
        Some(p) => Ok(TrainData::new(utts, read_labels(p)?)?),
        None => Ok(mfcc_train_data(utts, cfg)?),
    }
}

fn cmd_pretrain(
    manifest: &Path,
    labels: Option<&Path>,
    out: &Path,
    resume: Option<&Path>,
    stop_at: Option<usize>,
    config: &ConfigArgs,
    seeds: &SeedArgs,
) -> Result<()> {
    let mut run = Run::new("pretrain");
    let (cfg, state) = match resume {
        Some(dir) => {
            let (cfg, state) = load_checkpoint::<f64>(dir)?;
            (cfg, Some(state))
        }
        None => (resolve_config(config, seeds)?, None),
    };
    let data = train_data(load_corpus(manifest)?, labels, &cfg)?;
    let mut state = match state {
        Some(s) => s,
        None => init_state(&cfg, &data)?,
    };
    create_dir(out)?;
    fs::write(out.join("config.json"), serde_json::to_string_pretty(&cfg)? + "\n")?;
    train(&mut state, &cfg, &data, &TrainOutputs { out_dir: Some(out), stop_at })?;
    let summary = summarize(&state, &cfg, &data, EVAL_SEED)?;
    let sp = out.join("summary.json");
    fs::write(&sp, serde_json::to_string_pretty(&summary)? + "\n")?;
    println!(
        "{} steps; final total {:.4}; masked accuracy {:.3}; tap separability {:.3}",
        summary.steps, summary.final_total, summary.masked_accuracy, summary.tap_separability
    );
    run.config = serde_json::to_value(&cfg)?;
    run.seeds = serde_json::to_value(&cfg.seeds)?;
    run.inputs = std::iter::once(manifest)
        .chain(labels)
        .chain(resume)
        .map(Path::to_path_buf)
        .collect();
    run.outputs = vec![out.join(METRICS_FILE), out.join("checkpoint"), sp];
    run.finish(Some(out))
}

fn cmd_recluster(
    checkpoint: &Path,
    manifest: &Path,
    out: &Path,
    layer: Option<usize>,
    k: Option<usize>,
    restarts: usize,
    seed: u64,
) -> Result<()> {
    let mut run = Run::new("recluster");
    let (cfg, state) = load_checkpoint::<f64>(checkpoint)?;
    let utts = load_corpus(manifest)?;
    let inputs = utts
        .iter()
        .map(|u| model_input(&u.id, &u.waveform, &cfg, &state.norm))
        .collect::<satpt::Result<Vec<_>>>()?;
    let named: Vec<_> = utts.iter().zip(&inputs).map(|(u, x)| (u.id.as_str(), x.as_input())).collect();
    let layer = layer.unwrap_or(cfg.encoder.tap_layer);
    let opts = KmeansOptions {
        k: k.unwrap_or(cfg.encoder.num_classes),
        restarts,
        seed,
        ..KmeansOptions::default()
    };
    let (model, labels) = recluster_from_embeddings(&state.model.encoder, &named, layer, &opts)?;
    create_dir(out)?;
    let (lp, mp) = (out.join("labels.jsonl"), out.join("kmeans.bin"));
    write_labels(&lp, &labels)?;
    write_kmeans(&mp, &model)?;
    println!("layer {layer}: k={} inertia={:.4}", opts.k, model.inertia);
    run.config = json!({"layer": layer, "kmeans": opts});
    run.seeds = json!({"kmeans": seed});
    run.inputs = vec![checkpoint.to_path_buf(), manifest.to_path_buf()];
    run.outputs = vec![lp, mp];
    run.finish(Some(out))
}

#[allow(clippy::too_many_arguments)]
fn cmd_probe(
    checkpoint: &Path,
    manifest: &Path,
    target: ProbeTarget,
    labels: Option<&Path>,
    opts: ProbeOptions,
    out: Option<&Path>,
) -> Result<()> {
    let mut run = Run::new("probe");
    let (cfg, state) = load_checkpoint::<f64>(checkpoint)?;
    let utts = load_corpus(manifest)?;
    let inputs = utts
        .iter()
        .map(|u| model_input(&u.id, &u.waveform, &cfg, &state.norm))
        .collect::<satpt::Result<Vec<_>>>()?;
    let pooled = layer_embeddings(&state.model.encoder, &inputs)?;
    let speakers = speaker_tags(&utts).ok();
    let separability = match &speakers {
        Some(s) => pooled
            .iter()
            .map(|e| speaker_separability(e, s))
            .collect::<satpt::Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    let (layers, targets) = match target {
        ProbeTarget::Speaker => {
            let tags = speakers.context("speaker probing needs speaker tags in the manifest")?;
            let mut ids: Vec<&String> = tags.iter().collect();
            ids.sort();
            ids.dedup();
            let index: HashMap<&String, usize> = ids.into_iter().enumerate().map(|(i, s)| (s, i)).collect();
            (pooled, tags.iter().map(|s| index[s]).collect::<Vec<_>>())
        }
        ProbeTarget::Labels => {
            let path = labels.context("--target labels needs --labels")?;
            let by_id: HashMap<String, Vec<usize>> =
                read_labels(path)?.into_iter().map(|l| (l.id, l.labels)).collect();
            let enc = &state.model.encoder;
            let mut per_layer: Vec<Vec<Array2<f64>>> = vec![Vec::new(); cfg.encoder.num_hidden_states()];
            let mut targets = Vec::new();
            for (u, x) in utts.iter().zip(&inputs) {
                let z = by_id.get(&u.id).with_context(|| format!("no labels for '{}'", u.id))?;
                let t = enc.frames_for(x.as_input());
                let o = enc.forward(x.as_input(), &MaskSet::empty(t))?;
                let n = t.min(z.len());
                for (j, h) in o.hidden.iter().enumerate() {
                    per_layer[j].push(h.slice(ndarray::s![..n, ..]).to_owned());
                }
                targets.extend_from_slice(&z[..n]);
            }
            let layers = per_layer
                .iter()
                .map(|parts| {
                    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
                    concatenate(Axis(0), &views)
                })
                .collect::<std::result::Result<Vec<_>, _>>()?;
            (layers, targets)
        }
    };
    let result = fit_layer_weights(&layers, &targets, &opts)?;
    let report = ProbeReport::new(&result, separability);
    print!("{}", render_bars(&result.weights, 40));
    println!("task accuracy {:.3}", report.task_accuracy);
    if !report.separability.is_empty() {
        let s: Vec<String> = report.separability.iter().map(|v| format!("{v:.3}")).collect();
        println!("speaker separability per layer: {}", s.join(" "));
    }
    run.config = json!({"target": format!("{target:?}").to_lowercase(), "probe": opts});
    run.seeds = json!({"probe": opts.seed});
    run.inputs = std::iter::once(checkpoint)
        .chain(std::iter::once(manifest))
        .chain(labels)
        .map(Path::to_path_buf)
        .collect();
    if let Some(dir) = out {
        create_dir(dir)?;
        let rp = dir.join("probe.json");
        fs::write(&rp, serde_json::to_string_pretty(&report)? + "\n")?;
        run.outputs.push(rp);
    }
    run.finish(out)
}

fn cmd_gradcheck(opts: GradCheckOptions, tolerance: f64, out: Option<&Path>) -> Result<bool> {
    let mut run = Run::new("gradcheck");
    let report = grad_check(&opts)?;
    let ok = report.max_rel_error < tolerance;
    let brief = json!({
        "seed": report.seed,
        "coordinates": report.coordinates,
        "tensors": report.tensors,
        "loss": report.loss,
        "max_rel_error": report.max_rel_error,
        "worst": report.worst,
        "passed": ok,
    });
    println!("{}", serde_json::to_string_pretty(&brief)?);
    run.config = serde_json::to_value(&opts)?;
    run.seeds = json!({"gradcheck": opts.seed});
    if let Some(dir) = out {
        create_dir(dir)?;
        let rp = dir.join("gradcheck.json");
        fs::write(&rp, serde_json::to_string_pretty(&report)? + "\n")?;
        run.outputs.push(rp);
    }
    run.finish(out)?;
    Ok(ok)
}

#[derive(Serialize)]
struct SweepRow {
    seed: u64,
    #[serde(flatten)]
    summary: satpt::trainer::RunSummary,
}

fn cmd_sweep(out: &Path, seeds: &[u64], speakers: usize, utterances: usize, duration: f64, config: &ConfigArgs) -> Result<()> {
    let mut run = Run::new("sweep-mix");
    let base = resolve_config(config, &SeedArgs::default())?;
    create_dir(out)?;
    let mut rows = Vec::new();
    for &seed in seeds {
        let utts = synth_corpus::<f64>(speakers, utterances, duration, 16_000, seed)?;
        let seeded = TrainConfig {
            seeds: Seeds::from_base(seed),
            ..base.clone()
        };
        let data = mfcc_train_data(utts, &seeded)?;
        for p in SWEEP_PROBABILITIES {
            let mut cfg = seeded.clone();
            cfg.mix.probability = p;
            let dir = out.join(format!("p{p:.1}_seed{seed}"));
            let (_, summary) = desk_run(&cfg, &data, &TrainOutputs { out_dir: Some(&dir), stop_at: None }, EVAL_SEED)?;
            log::info!("seed {seed} p {p}: {summary:?}");
            rows.push(SweepRow { seed, summary });
        }
    }
    let table = out.join("sweep.jsonl");
    let mut text = String::new();
    for r in &rows {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    fs::write(&table, text)?;
    println!("{:>5} {:>5} {:>12} {:>10} {:>10} {:>10}", "p", "seed", "final_total", "mask_acc", "tap_sep", "ovl_sep");
    for r in &rows {
        let s = &r.summary;
        println!(
            "{:>5.1} {:>5} {:>12.4} {:>10.3} {:>10.3} {:>10.3}",
            s.mix_probability, r.seed, s.final_total, s.masked_accuracy, s.tap_separability, s.overlap_separability
        );
    }
    for p in SWEEP_PROBABILITIES {
        let sel: Vec<_> = rows.iter().filter(|r| r.summary.mix_probability == p).collect();
        let n = sel.len().max(1) as f64;
        println!(
            "{:>5.1} {:>5} {:>12.4} {:>10.3} {:>10.3} {:>10.3}",
            p,
            "mean",
            sel.iter().map(|r| r.summary.final_total).sum::<f64>() / n,
            sel.iter().map(|r| r.summary.masked_accuracy).sum::<f64>() / n,
            sel.iter().map(|r| r.summary.tap_separability).sum::<f64>() / n,
            sel.iter().map(|r| r.summary.overlap_separability).sum::<f64>() / n,
        );
    }
    run.config = json!({"train": base, "speakers": speakers, "utterances": utterances, "duration": duration});
    run.seeds = json!(seeds);
    run.outputs = vec![table];
    run.finish(Some(out))
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Synth {
            out,
            speakers,
            utterances,
            duration,
            sample_rate,
            seeds,
        } => cmd_synth(&out, speakers, utterances, duration, sample_rate, &seeds)?,
        Command::Mfcc { manifest, out, config } => cmd_mfcc(&manifest, &out, &config)?,
        Command::Cluster {
            manifest,
            features,
            out,
            k,
            restarts,
            config,
            seeds,
        } => cmd_cluster(&manifest, &features, &out, k, restarts, &config, &seeds)?,
        Command::Mix {
            manifest,
            out,
            batches,
            config,
            seeds,
        } => cmd_mix(&manifest, &out, batches, &config, &seeds)?,
        Command::Pretrain {
            manifest,
            labels,
            out,
            resume,
            stop_at,
            config,
            seeds,
        } => cmd_pretrain(&manifest, labels.as_deref(), &out, resume.as_deref(), stop_at, &config, &seeds)?,
        Command::Recluster {
            checkpoint,
            manifest,
            out,
            layer,
            k,
            restarts,
            seed,
        } => cmd_recluster(&checkpoint, &manifest, &out, layer, k, restarts, seed)?,
        Command::Probe {
            checkpoint,
            manifest,
            target,
            labels,
            steps,
            learning_rate,
            seed,
            out,
        } => cmd_probe(
            &checkpoint,
            &manifest,
            target,
            labels.as_deref(),
            ProbeOptions {
                steps,
                learning_rate,
                seed,
            },
            out.as_deref(),
        )?,
        Command::Gradcheck {
            seed,
            coordinates,
            step_size,
            only,
            front_end,
            tolerance,
            out,
        } => {
            let opts = GradCheckOptions {
                seed,
                coordinates,
                step_size,
                only,
                front_end: match front_end {
                    FrontEndArg::Precomputed => FrontEnd::Precomputed,
                    FrontEndArg::Conv => FrontEnd::Conv,
                },
                ..GradCheckOptions::default()
            };
            return cmd_gradcheck(opts, tolerance, out.as_deref());
        }
        Command::SweepMix {
            out,
            seeds,
            speakers,
            utterances,
            duration,
            config,
        } => cmd_sweep(&out, &seeds, speakers, utterances, duration, &config)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
