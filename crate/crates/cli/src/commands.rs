//! One function per subcommand. Each writes its artifacts under the output
//! directory and stamps them with the seed and config hash.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use typegraph::classifier::decide;
use typegraph::data::{encode_all, load_dataset, write_dataset, EncodedSample, Sample, TypeVocabulary, WordVocabulary};
use typegraph::diff::finite_diff_check;
use typegraph::labelgraph::TypeAdjacency;
use typegraph::metrics::pr_curve_csv;
use typegraph::model::EntityTyper;
use typegraph::synthetic::{small_model_config, toy_configs, toy_model, SyntheticConfig, SyntheticCorpus};
use typegraph::trainer::{config_hash, evaluate, fit, Checkpoint, TrainConfig};

use crate::config::{DataPaths, ExperimentConfig, Overrides};
use crate::error::{io_error, CliError};

type Result<T> = std::result::Result<T, CliError>;

/// Finite-difference step and pass bound of `gradcheck`.
const GRADCHECK_STEP: f64 = 1e-5;
const GRADCHECK_TOLERANCE: f64 = 1e-4;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_file(path, &(text + "\n"))
}

/// Seed and config hash, embedded in every artifact.
#[derive(Clone, Debug, Serialize)]
struct Stamp {
    seed: u64,
    config_hash: String,
}

/// Everything a config-driven run needs loaded once.
struct Workspace {
    cfg: ExperimentConfig,
    stamp: Stamp,
    tv: TypeVocabulary,
    train: Vec<Sample>,
    adjacency: TypeAdjacency,
}

impl Workspace {
    /// `command` names the effective-config file so runs sharing an output
    /// directory keep their own.
    fn open(command: &str, overrides: &Overrides) -> Result<Self> {
        let cfg = ExperimentConfig::resolve(overrides)?;
        let tv = TypeVocabulary::load(cfg.require("types", &cfg.data.types)?)?;
        let (train, report) = load_dataset(cfg.require("train", &cfg.data.train)?, &tv)?;
        if report.dropped_unknown_type > 0 {
            eprintln!("train: dropped {} samples with unknown types", report.dropped_unknown_type);
        }
        let adjacency = TypeAdjacency::from_samples(&train, &tv);
        create_dir(&cfg.output_dir)?;
        let stamp = Stamp {
            seed: cfg.seed(),
            config_hash: cfg.hash(),
        };
        let ws = Self {
            cfg,
            stamp,
            tv,
            train,
            adjacency,
        };
        write_json(&ws.out(&format!("effective_config.{command}.json")), &ws.cfg)?;
        Ok(ws)
    }

    fn out(&self, name: &str) -> PathBuf {
        self.cfg.output_dir.join(name)
    }

    fn words(&self) -> Result<WordVocabulary> {
        let d = &self.cfg.data;
        Ok(WordVocabulary::load(self.cfg.require("embeddings", &d.embeddings)?, d.embedding_dim)?)
    }

    fn model(&self, wv: &WordVocabulary) -> Result<EntityTyper<f64>> {
        Ok(EntityTyper::new(self.cfg.model.clone(), &self.tv, wv, self.adjacency.clone(), self.cfg.seed())?)
    }

    fn encode(&self, samples: &[Sample], wv: &WordVocabulary) -> Vec<EncodedSample> {
        encode_all(samples, wv, &self.tv, &self.cfg.model.limits)
    }

    fn split(&self, name: &str) -> Result<Vec<Sample>> {
        let d = &self.cfg.data;
        let path = match name {
            "train" => &d.train,
            "dev" => &d.dev,
            "test" => &d.test,
            other => return Err(CliError::Validation(format!("unknown split `{other}` (train|dev|test)"))),
        };
        self.load(self.cfg.require(name, path)?)
    }

    fn load(&self, path: &Path) -> Result<Vec<Sample>> {
        let (samples, report) = load_dataset(path, &self.tv)?;
        if report.dropped_unknown_type > 0 {
            eprintln!("{}: dropped {} samples with unknown types", path.display(), report.dropped_unknown_type);
        }
        Ok(samples)
    }

    /// Model built from the config with the checkpoint's parameters.
    fn restored(&self, checkpoint: Option<&Path>, force: bool, wv: &WordVocabulary) -> Result<EntityTyper<f64>> {
        let path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| self.out("checkpoint.json"));
        let ckpt = Checkpoint::load(&path)?;
        let mut model = self.model(wv)?;
        ckpt.apply(&mut model, force)?;
        Ok(model)
    }
}

pub fn build_graph(o: &Overrides) -> Result<()> {
    let ws = Workspace::open("build-graph", o)?;
    let a = &ws.adjacency;
    write_file(
        &ws.out("graph.tsv"),
        &format!("# seed={} config_hash={}\n{}", ws.stamp.seed, ws.stamp.config_hash, a.to_tsv()),
    )?;
    let stats = a.stats();
    write_json(
        &ws.out("graph_stats.json"),
        &json!({
            "seed": ws.stamp.seed,
            "config_hash": ws.stamp.config_hash,
            "graph_hash": a.fingerprint(),
            "nodes": stats.nodes,
            "edges": stats.edges,
            "degree_histogram": stats.degree_histogram,
        }),
    )?;
    println!("graph: {} types, {} edges -> {}", stats.nodes, stats.edges, ws.out("graph.tsv").display());
    Ok(())
}

pub fn train(o: &Overrides) -> Result<()> {
    let ws = Workspace::open("train", o)?;
    let wv = ws.words()?;
    let mut model = ws.model(&wv)?;
    let train = ws.encode(&ws.train, &wv);
    let dev = match &ws.cfg.data.dev {
        Some(p) => Some(ws.encode(&ws.load(p)?, &wv)),
        None => None,
    };
    let log_path = ws.out("train_log.jsonl");
    let mut log = fs::File::create(&log_path).map_err(|e| io_error(&log_path, e))?;
    let mut write_err = None;
    let outcome = fit(&mut model, &train, dev.as_deref(), &ws.cfg.train, |e| {
        let line = json!({
            "epoch": e.epoch,
            "loss": e.loss,
            "dev_f1": e.dev_f1,
            "seed": ws.stamp.seed,
            "config_hash": ws.stamp.config_hash,
        });
        eprintln!("epoch {:>3}  loss {:.5}  dev F1 {}", e.epoch, e.loss, e.dev_f1.map_or("-".into(), |f| format!("{f:.4}")));
        if let Err(err) = writeln!(log, "{line}") {
            write_err.get_or_insert(err);
        }
    })?;
    if let Some(e) = write_err {
        return Err(io_error(&log_path, e));
    }
    let ckpt = Checkpoint::from_model(&model, ws.cfg.to_value(), ws.stamp.seed);
    ckpt.save(ws.out("checkpoint.json"))?;
    write_json(
        &ws.out("train_summary.json"),
        &json!({
            "seed": ws.stamp.seed,
            "config_hash": ws.stamp.config_hash,
            "epochs_run": outcome.log.len(),
            "best_epoch": outcome.best_epoch,
            "best_dev_f1": outcome.best_dev_f1,
            "final_loss": outcome.log.last().map(|e| e.loss),
        }),
    )?;
    println!("checkpoint -> {}", ws.out("checkpoint.json").display());
    Ok(())
}

pub fn eval(o: &Overrides, checkpoint: Option<&Path>, split: &str) -> Result<()> {
    let ws = Workspace::open("eval", o)?;
    let wv = ws.words()?;
    let model = ws.restored(checkpoint, o.force, &wv)?;
    let samples = ws.encode(&ws.split(split)?, &wv);
    let report = evaluate(&model, &samples, ws.cfg.threshold, Some(&ws.adjacency), &ws.cfg.train)?;
    let path = ws.out(&format!("eval_{split}.json"));
    write_json(
        &path,
        &json!({
            "seed": ws.stamp.seed,
            "config_hash": ws.stamp.config_hash,
            "split": split,
            "report": report,
        }),
    )?;
    println!(
        "{split} @ {:.2}: P {:.4}  R {:.4}  F1 {:.4}  MRR {:.4}  best F1 {:.4} @ {:.2}",
        report.threshold, report.precision, report.recall, report.f1, report.mrr, report.best_f1, report.best_threshold
    );
    if let Some(c) = report.consistency_rate {
        println!("inconsistent-pair rate {c:.4}");
    }
    println!("report -> {}", path.display());
    Ok(())
}

pub fn predict(o: &Overrides, checkpoint: Option<&Path>, input: Option<&Path>, split: &str) -> Result<()> {
    let ws = Workspace::open("predict", o)?;
    let wv = ws.words()?;
    let model = ws.restored(checkpoint, o.force, &wv)?;
    let raw = match input {
        Some(p) => ws.load(p)?,
        None => ws.split(split)?,
    };
    let scores = model.score(&ws.encode(&raw, &wv), ws.cfg.train.eval_batch_size)?;
    let mut out = String::new();
    for (s, sc) in raw.iter().zip(&scores) {
        let pred = decide(sc, ws.cfg.threshold);
        let types: Vec<&str> = pred.chosen.iter().map(|&t| ws.tv.name(t)).collect();
        let probs: Vec<f64> = pred.chosen.iter().map(|&t| sc[t]).collect();
        let line = json!({
            "mention": s.mention_text(),
            "types": types,
            "scores": probs,
            "fallback": pred.fallback,
            "gold": s.gold_types,
            "threshold": ws.cfg.threshold,
            "seed": ws.stamp.seed,
            "config_hash": ws.stamp.config_hash,
        });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    let path = ws.out("predictions.jsonl");
    write_file(&path, &out)?;
    println!("{} predictions -> {}", raw.len(), path.display());
    Ok(())
}

pub fn pr_curve(o: &Overrides, checkpoint: Option<&Path>, split: &str) -> Result<()> {
    let ws = Workspace::open("pr-curve", o)?;
    let wv = ws.words()?;
    let model = ws.restored(checkpoint, o.force, &wv)?;
    let samples = ws.encode(&ws.split(split)?, &wv);
    let report = evaluate(&model, &samples, ws.cfg.threshold, None, &ws.cfg.train)?;
    let csv = format!(
        "# seed={} config_hash={}\n{}",
        ws.stamp.seed,
        ws.stamp.config_hash,
        pr_curve_csv(&report.pr_curve)
    );
    let path = ws.out(&format!("pr_curve_{split}.csv"));
    write_file(&path, &csv)?;
    println!("{} thresholds, best F1 {:.4} @ {:.2} -> {}", report.pr_curve.len(), report.best_f1, report.best_threshold, path.display());
    Ok(())
}

pub fn gradcheck(seed: u64, output_dir: Option<&Path>) -> Result<()> {
    let (model, samples) = toy_model::<f64>(seed)?;
    let batch = typegraph::data::Batch::all(&samples)?;
    let mut store = model.params().clone();
    let report = finite_diff_check(&mut store, GRADCHECK_STEP, |tape| model.eval_loss(tape, &batch))?;
    let worst = report.worst();
    let name = report.worst_param().map_or("-", |p| p.name.as_str());
    let pass = worst < GRADCHECK_TOLERANCE;
    if let Some(dir) = output_dir {
        create_dir(dir)?;
        let (corpus, model_cfg) = toy_configs(seed);
        let cfg = json!({ "seed": seed, "step": GRADCHECK_STEP, "tolerance": GRADCHECK_TOLERANCE, "corpus": corpus, "model": model_cfg });
        let hash = config_hash(&cfg);
        write_json(&dir.join("effective_config.gradcheck.json"), &cfg)?;
        write_json(
            &dir.join("gradcheck.json"),
            &json!({ "seed": seed, "config_hash": hash, "pass": pass, "worst_rel_err": worst, "worst_param": name, "report": report }),
        )?;
    }
    println!(
        "{} worst relative error {worst:.3e} ({name}) over {} parameters, seed {seed}",
        if pass { "PASS" } else { "FAIL" },
        report.params.len()
    );
    if pass {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("gradient check failed: {worst:.3e} >= {GRADCHECK_TOLERANCE:e}")))
    }
}

/// Writes a small seeded corpus and a ready-to-run config.
pub fn synth(dir: &Path, seed: u64, samples: usize) -> Result<()> {
    if samples < 4 {
        return Err(CliError::Validation("--samples must be at least 4".into()));
    }
    let corpus_cfg = SyntheticConfig { samples, seed, ..SyntheticConfig::default() };
    let corpus = SyntheticCorpus::generate(&corpus_cfg)?;
    create_dir(dir)?;
    write_file(&dir.join("types.tsv"), &corpus.types.to_tsv())?;
    let w = &corpus.words;
    let mut emb = String::new();
    // rows 0 and 1 are the unknown and padding rows, rebuilt on load
    for id in 2..w.len() {
        let v: Vec<String> = w.vector(id).iter().map(f64::to_string).collect();
        emb.push_str(&format!("{} {}\n", w.token(id), v.join(" ")));
    }
    write_file(&dir.join("embeddings.txt"), &emb)?;
    let n_train = samples / 2;
    let n_dev = samples / 4;
    let (train, rest) = corpus.samples.split_at(n_train);
    let (dev, test) = rest.split_at(n_dev);
    write_dataset(dir.join("train.jsonl"), train)?;
    write_dataset(dir.join("dev.jsonl"), dev)?;
    write_dataset(dir.join("test.jsonl"), test)?;
    let mut model = small_model_config();
    model.dropout_context = 0.0;
    model.dropout_mention = 0.0;
    model.dropout_feature = 0.0;
    let cfg = ExperimentConfig {
        data: DataPaths {
            types: Some("types.tsv".into()),
            embeddings: Some("embeddings.txt".into()),
            embedding_dim: corpus_cfg.word_dim,
            train: Some("train.jsonl".into()),
            dev: Some("dev.jsonl".into()),
            test: Some("test.jsonl".into()),
        },
        model,
        train: TrainConfig {
            learning_rate: 0.01,
            batch_size: 20,
            epochs: 30,
            seed,
            patience: None,
            ..TrainConfig::default()
        },
        threshold: 0.5,
        output_dir: "run".into(),
    };
    write_json(&dir.join("config.json"), &cfg)?;
    write_json(&dir.join("corpus.json"), &json!({ "seed": seed, "config_hash": config_hash(&serde_json::to_value(&corpus_cfg).expect("serializes")), "corpus": corpus_cfg }))?;
    println!(
        "{} types, {} train / {} dev / {} test samples -> {}",
        corpus.types.len(),
        train.len(),
        dev.len(),
        test.len(),
        dir.display()
    );
    Ok(())
}
