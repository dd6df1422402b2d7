//! The subcommands. Each writes its outputs into one directory and returns
//! what it wrote, so callers can check files without parsing stdout.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, Method};
use super::gradcheck::{run_suite, SuiteReport};
use crate::error::Result;
use crate::fewshot::Dataset;
use crate::meta::{
    evaluate_baseline, meta_test_dccdi, stage1_train, stage2_train, DccdiParams, EvalReport, Model, TraceRecord,
};

pub const EVAL_CSV_HEADER: &str = "method,way,shot,episodes,mean_acc,ci95,seed";
pub const ABLATE_CSV_HEADER: &str = "output_dim,method,way,shot,episodes,mean_acc,ci95,seed";

fn create_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

/// Files written by [`gen_data`].
#[derive(Clone, Debug)]
pub struct GenDataOutput {
    pub source: PathBuf,
    pub source_truth: PathBuf,
    pub target: PathBuf,
    pub target_truth: PathBuf,
}

/// Writes `source.jsonl`, `target.jsonl` and their ground-truth sidecars.
pub fn gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<GenDataOutput> {
    create_dir(out)?;
    let files = GenDataOutput {
        source: out.join("source.jsonl"),
        source_truth: out.join("source_truth.json"),
        target: out.join("target.jsonl"),
        target_truth: out.join("target_truth.json"),
    };
    let (ds, truth) = cfg.generate_source()?;
    ds.save(&files.source)?;
    truth.save_json(&files.source_truth)?;
    let (ds, truth) = cfg.generate_target()?;
    ds.save(&files.target)?;
    truth.save_json(&files.target_truth)?;
    Ok(files)
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub checkpoint: PathBuf,
    pub trace: PathBuf,
    pub model: Model,
    pub records: Vec<TraceRecord>,
}

/// Stage 1 then stage 2 on the source domain; writes `model.json` and
/// `trace.jsonl` (one record per episode, stage 1 first).
pub fn train(cfg: &ExperimentConfig, out: &Path) -> Result<TrainOutput> {
    let source = cfg.source_dataset()?;
    train_on(cfg, &source, out)
}

/// Both training stages from the configured initialization, without I/O.
pub fn fit(cfg: &ExperimentConfig, source: &Dataset) -> Result<(Model, Vec<TraceRecord>)> {
    let init = Model::new(&cfg.model, cfg.seed)?;
    let (m1, mut records) = stage1_train(&init, source, &cfg.stage1_params())?;
    let (model, t2) = stage2_train(&m1, source, &cfg.stage2_params())?;
    records.extend(t2);
    Ok((model, records))
}

pub fn train_on(cfg: &ExperimentConfig, source: &Dataset, out: &Path) -> Result<TrainOutput> {
    create_dir(out)?;
    let (model, records) = fit(cfg, source)?;

    let checkpoint = out.join("model.json");
    model.save_json(&checkpoint)?;
    let trace = out.join("trace.jsonl");
    let mut f = std::io::BufWriter::new(fs::File::create(&trace)?);
    for r in &records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(TrainOutput {
        checkpoint,
        trace,
        model,
        records,
    })
}

fn file_digest(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// Ties a report to the exact config and checkpoint that produced it.
fn run_fingerprint(cfg: &ExperimentConfig, checkpoint_digest: &str) -> String {
    let mut h = Sha256::new();
    h.update(cfg.fingerprint());
    h.update(checkpoint_digest);
    hex::encode(h.finalize())
}

pub fn evaluate_method(
    model: &Model,
    target: &Dataset,
    cfg: &ExperimentConfig,
    method: Method,
    shots: usize,
    dccdi: &DccdiParams,
) -> Result<EvalReport> {
    let p = cfg.eval_params(shots);
    match method.baseline() {
        Some(head) => evaluate_baseline(model, target, head, &p),
        None => {
            let d = DccdiParams {
                use_text: method == Method::Dccdi,
                ..dccdi.clone()
            };
            meta_test_dccdi(model, target, &p, &d)
        }
    }
}

fn csv_fields(r: &EvalReport) -> String {
    format!(
        "{},{},{},{},{:.6},{:.6},{}",
        r.method, r.way, r.shots, r.episodes, r.mean_accuracy, r.ci95, r.seed
    )
}

#[derive(Clone, Debug)]
pub struct EvalOutput {
    pub csv: PathBuf,
    pub json: PathBuf,
    pub reports: Vec<EvalReport>,
}

/// One row per (shot, method) in config order; writes `eval.csv` and
/// `eval.json`.
pub fn eval(cfg: &ExperimentConfig, checkpoint: &Path, out: &Path) -> Result<EvalOutput> {
    let model = Model::load_json(checkpoint)?;
    let target = cfg.target_dataset()?;
    create_dir(out)?;
    let fp = run_fingerprint(cfg, &file_digest(checkpoint)?);
    let mut reports = Vec::new();
    let mut csv = format!("{EVAL_CSV_HEADER}\n");
    for &shots in &cfg.eval.shots {
        for &method in &cfg.eval.methods {
            let r = evaluate_method(&model, &target, cfg, method, shots, &cfg.dccdi)?.with_fingerprint(fp.clone());
            writeln!(csv, "{}", csv_fields(&r)).expect("string write");
            reports.push(r);
        }
    }
    let files = EvalOutput {
        csv: out.join("eval.csv"),
        json: out.join("eval.json"),
        reports,
    };
    fs::write(&files.csv, csv)?;
    write_json(&files.json, &files.reports)?;
    Ok(files)
}

/// DCCDI at each output width in `dims` (and each configured shot); writes
/// `ablate.csv` and `ablate.json`.
pub fn ablate_dim(cfg: &ExperimentConfig, checkpoint: &Path, dims: &[usize], out: &Path) -> Result<EvalOutput> {
    let model = Model::load_json(checkpoint)?;
    let target = cfg.target_dataset()?;
    create_dir(out)?;
    let fp = run_fingerprint(cfg, &file_digest(checkpoint)?);
    let mut reports = Vec::new();
    let mut csv = format!("{ABLATE_CSV_HEADER}\n");
    for &shots in &cfg.eval.shots {
        for &d in dims {
            let params = DccdiParams {
                output_dim: d,
                ..cfg.dccdi.clone()
            };
            let r = evaluate_method(&model, &target, cfg, Method::Dccdi, shots, &params)?.with_fingerprint(fp.clone());
            writeln!(csv, "{d},{}", csv_fields(&r)).expect("string write");
            reports.push(r);
        }
    }
    let files = EvalOutput {
        csv: out.join("ablate.csv"),
        json: out.join("ablate.json"),
        reports,
    };
    fs::write(&files.csv, csv)?;
    write_json(&files.json, &files.reports)?;
    Ok(files)
}

/// Runs the finite-difference suite and writes `gradcheck.json`.
pub fn gradcheck(seed: u64, out: &Path) -> Result<(PathBuf, SuiteReport)> {
    let report = run_suite(seed)?;
    create_dir(out)?;
    let path = out.join("gradcheck.json");
    write_json(&path, &report)?;
    Ok((path, report))
}
