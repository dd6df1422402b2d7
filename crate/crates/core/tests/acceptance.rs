//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs as a plain binary (`harness = false`) so the lines
//! are always shown.

use std::collections::HashSet;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use dccdi::cca::{correlation_gradient, correlation_objective, linear_cca_oracle, train_dcca, DccaBlock, DccaShape};
use dccdi::cli::{self, cca_grid, ExperimentConfig, Method};
use dccdi::encoders::{Activation, Layer, MlpParams};
use dccdi::fewshot::{correlated_pair, episode_seed, gen_synth, sample_task, SynthConfig};
use dccdi::heads::prototypical_logits;
use dccdi::linalg::svd;
use dccdi::meta::{meta_test_dccdi, stage1_train, EvalReport, Model};
use dccdi::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(bool, String), String>;

const SEEDS: [u64; 3] = [0, 1, 2];

fn uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Closed-form DCCA gradient against fourth-order central differences on
/// the 100-instance grid.
fn gradient_correctness() -> Outcome {
    let t = Instant::now();
    let worst = cca_grid(2024, correlation_gradient).map_err(err)?;
    let secs = t.elapsed().as_secs_f64();
    Ok((
        worst < 1e-5 && secs < 60.0,
        format!("worst per-entry relative error {worst:.2e} (< 1e-5), {secs:.1}s (< 60s)"),
    ))
}

fn identity(d: usize) -> MlpParams {
    MlpParams::from_layers(vec![Layer {
        weight: Matrix::identity(d),
        bias: Matrix::zeros(1, d),
        activation: Activation::Linear,
    }])
    .unwrap()
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut worst, mut exact) = (0.0f64, true);
    for inst in 0..50 {
        let d = 2 + inst % 4;
        let n = 30 + 10 * (inst % 5);
        let r1 = [1e-4, 1e-3][inst % 2];
        let x = uniform(n, d, &mut rng);
        let y = x.matmul(&uniform(d, d, &mut rng)).map_err(err)?.add(&uniform(n, d, &mut rng)).map_err(err)?;
        for k in 1..=d {
            let block = DccaBlock::from_parts(identity(d), identity(d), r1, k).map_err(err)?;
            let value = block.correlation(&x, &y).map_err(err)?;
            let oracle = linear_cca_oracle(&x, &y, k, r1).map_err(err)?;
            let (_, stats) = correlation_objective(&x, &y, r1, k).map_err(err)?;
            worst = worst.max((value - oracle.total()).abs());
            for (a, b) in stats.singular_values.iter().zip(&oracle.correlations) {
                worst = worst.max((a - b).abs());
            }
            if k == d {
                let trace_norm: f64 = svd(&stats.t).map_err(err)?.s.iter().sum();
                exact &= value == trace_norm;
            }
        }
    }
    Ok((
        worst < 1e-10 && exact,
        format!("max deviation from linear CCA {worst:.1e} (< 1e-10); k = d equals trace norm exactly: {exact}"),
    ))
}

fn generator_fidelity() -> Outcome {
    let t = Instant::now();
    let mut worst = 0.0f64;
    for rho in [0.0, 0.5, 0.8, 0.9] {
        for seed in SEEDS {
            let cfg = SynthConfig {
                num_classes: 20,
                samples_per_class: 500,
                latent_dim: 3,
                visual_dim: 3,
                text_dim: 3,
                rho,
                visual_noise: 0.0,
                text_noise: 0.0,
                seed,
                bayes_samples: 0,
                ..SynthConfig::default()
            };
            let (ds, _) = gen_synth(&cfg).map_err(err)?;
            let idx: Vec<usize> = (0..ds.len()).collect();
            let lead = linear_cca_oracle(&ds.visual_matrix(&idx), &ds.text_matrix(&idx), 1, 0.0).map_err(err)?;
            worst = worst.max((lead.correlations[0] - rho).abs());
        }
    }
    let secs = t.elapsed().as_secs_f64();
    Ok((
        worst < 0.03 && secs < 60.0,
        format!("worst |leading correlation - rho| {worst:.4} (< 0.03) at N = 10000, {secs:.1}s (< 60s)"),
    ))
}

fn dcca_training() -> Outcome {
    let (mut worst_gap, mut min_rising) = (0.0f64, usize::MAX);
    for seed in 0..5u64 {
        let (x, y) = correlated_pair(1000, &[0.9, 0.5], seed).map_err(err)?;
        let oracle = linear_cca_oracle(&x, &y, 2, 1e-4).map_err(err)?.total();
        let shape = DccaShape {
            visual_in: 2,
            text_in: 2,
            hidden: vec![],
            output_dim: 2,
        };
        let block = DccaBlock::new(&shape, 1e-4, None, seed).map_err(err)?;
        let trace = train_dcca(&block, &x, &y, 20, 0.001).map_err(err)?;
        worst_gap = worst_gap.max(oracle - trace.correlations[20]);
        min_rising = min_rising.min(trace.correlations.windows(2).filter(|w| w[1] >= w[0]).count());
    }
    Ok((
        worst_gap <= 0.05 && min_rising >= 18,
        format!("worst gap to oracle {worst_gap:.4} (<= 0.05); fewest non-decreasing steps in a seed {min_rising}/20 (>= 18), 5 seeds"),
    ))
}

fn nearest_mean(support: &Matrix, labels: &[usize], way: usize, q: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for c in 0..way {
        let rows: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        let d: f64 = (0..support.cols())
            .map(|j| {
                let m = rows.iter().map(|&i| support[(i, j)]).sum::<f64>() / rows.len() as f64;
                (m - q[j]).powi(2)
            })
            .sum();
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

fn head_equivalence() -> Outcome {
    let (ds, _) = gen_synth(&SynthConfig {
        bayes_samples: 0,
        ..SynthConfig::default()
    })
    .map_err(err)?;
    let mut mismatched = 0;
    for i in 0..100 {
        let ep = sample_task(&ds, 5, 5, 15, episode_seed(99, i)).map_err(err)?;
        let (s, q, sl, ql) = (ep.support_visual(), ep.query_visual(), ep.support_labels(), ep.query_labels());
        let scores = prototypical_logits(&s, &sl, &q).map_err(err)?;
        let pred = scores.predictions();
        let head_acc = pred.iter().zip(&ql).filter(|(p, l)| p == l).count();
        let oracle_acc = (0..q.rows()).filter(|&r| nearest_mean(&s, &sl, 5, q.row(r)) == ql[r]).count();
        mismatched += usize::from(head_acc != oracle_acc);
    }
    Ok((mismatched == 0, format!("{mismatched}/100 episodes differ from the nearest-class-mean oracle")))
}

struct Trained {
    cfg: ExperimentConfig,
    model: Model,
}

fn train_seeds() -> Result<Vec<Trained>, String> {
    SEEDS
        .iter()
        .map(|&seed| {
            let cfg = ExperimentConfig {
                seed,
                ..ExperimentConfig::default()
            };
            let source = cfg.source_dataset().map_err(err)?;
            let (model, _) = cli::fit(&cfg, &source).map_err(err)?;
            Ok(Trained { cfg, model })
        })
        .collect()
}

/// Pools per-episode accuracies of the same method over seeds.
fn pooled(method: &str, parts: &[EvalReport]) -> EvalReport {
    let accs: Vec<f64> = parts.iter().flat_map(|r| r.accuracies.iter().copied()).collect();
    let p = ExperimentConfig::default().eval_params(parts[0].shots);
    EvalReport::new(method, &p, accs)
}

fn pct(r: &EvalReport) -> String {
    format!("{:.2}+-{:.2}", 100.0 * r.mean_accuracy, 100.0 * r.ci95)
}

fn directional(trained: &[Trained]) -> Outcome {
    let t = Instant::now();
    let methods = [
        Method::Dccdi,
        Method::DccdiNoText,
        Method::Prototypical,
        Method::Matching,
        Method::Relation,
    ];
    let mut informative: Vec<Vec<EvalReport>> = vec![Vec::new(); methods.len()];
    let mut blind: Vec<Vec<EvalReport>> = vec![Vec::new(); 2];
    for tr in trained {
        let target = tr.cfg.target_dataset().map_err(err)?;
        for (k, &m) in methods.iter().enumerate() {
            informative[k].push(cli::evaluate_method(&tr.model, &target, &tr.cfg, m, 5, &tr.cfg.dccdi).map_err(err)?);
        }
        let mut cfg0 = tr.cfg.clone();
        cfg0.data.target.text_informativeness = 0.0;
        let target0 = cfg0.target_dataset().map_err(err)?;
        for (k, &m) in methods[..2].iter().enumerate() {
            blind[k].push(cli::evaluate_method(&tr.model, &target0, &cfg0, m, 5, &cfg0.dccdi).map_err(err)?);
        }
    }
    let r: Vec<EvalReport> = methods.iter().zip(&informative).map(|(m, p)| pooled(m.name(), p)).collect();
    let (dccdi, no_text) = (&r[0], &r[1]);
    let best_base = r[2..].iter().max_by(|a, b| a.mean_accuracy.total_cmp(&b.mean_accuracy)).unwrap();
    let (d0, n0) = (pooled("dccdi", &blind[0]), pooled("dccdi-no-text", &blind[1]));
    let gap = dccdi.mean_accuracy - no_text.mean_accuracy;
    let secs = t.elapsed().as_secs_f64();
    let ok = dccdi.mean_accuracy > no_text.mean_accuracy
        && no_text.mean_accuracy > best_base.mean_accuracy
        && gap >= 0.03
        && !dccdi.overlaps(no_text)
        && d0.overlaps(&n0)
        && secs < 1800.0;
    let baselines: Vec<String> = r[2..].iter().map(|b| format!("{} {}", b.method, pct(b))).collect();
    Ok((
        ok,
        format!(
            "text 1.0: dccdi {} > no-text {} > best baseline {} (gap {:.2} points, >= 3, CIs disjoint: {}) [{}]; \
             text 0: dccdi {} vs no-text {} (CIs overlap: {}); {} episodes per method; {secs:.0}s (< 1800s)",
            pct(dccdi),
            pct(no_text),
            best_base.method,
            100.0 * gap,
            !dccdi.overlaps(no_text),
            baselines.join(", "),
            pct(&d0),
            pct(&n0),
            d0.overlaps(&n0),
            dccdi.episodes,
        ),
    ))
}

fn files_in(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn protocol_invariants(trained: &Trained) -> Outcome {
    let target = trained.cfg.target_dataset().map_err(err)?;
    let mut overlapping = 0;
    for i in 0..10_000 {
        let ep = sample_task(&target, 5, 5, 15, episode_seed(5, i)).map_err(err)?;
        let ids: HashSet<&str> = ep.support.iter().map(|s| s.id.as_str()).collect();
        overlapping += ep.query.iter().filter(|s| ids.contains(s.id.as_str())).count();
    }

    // frozen prefix: untouched by stage 1, and the model is unchanged by meta-test
    let bits = |m: &MlpParams| -> Vec<u64> {
        m.tensors().iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect()
    };
    let init = Model::new(&trained.cfg.model, 11).map_err(err)?;
    let source = trained.cfg.source_dataset().map_err(err)?;
    let mut p1 = trained.cfg.stage1_params();
    p1.episodes = 20;
    let (after, _) = stage1_train(&init, &source, &p1).map_err(err)?;
    let frozen_kept = bits(&init.split_trunk().0) == bits(&after.split_trunk().0)
        && bits(&init.split_trunk().1) != bits(&after.split_trunk().1);
    let before = serde_json::to_vec(&trained.model).map_err(err)?;
    let mut p = trained.cfg.eval_params(5);
    p.episodes = 20;
    meta_test_dccdi(&trained.model, &target, &p, &trained.cfg.dccdi).map_err(err)?;
    let model_kept = serde_json::to_vec(&trained.model).map_err(err)? == before;

    // every CLI command twice into separate directories
    let work = tempfile::tempdir().map_err(err)?;
    let config = "[stage1]\nepisodes = 20\n[stage2]\nepisodes = 10\n[eval]\nepisodes = 10\ndims = [10, 25]\n";
    std::fs::write(work.path().join("c.toml"), config).map_err(err)?;
    let mut stdout = Vec::new();
    for out in ["a", "b"] {
        let mut text = Vec::new();
        for cmd in ["gen-data", "train", "eval", "ablate-dim", "gradcheck"] {
            let o = Command::new(env!("CARGO_BIN_EXE_dccdi"))
                .args([cmd, "--config", "c.toml", "--out", out, "--seed", "4"])
                .current_dir(work.path())
                .output()
                .map_err(err)?;
            if !o.status.success() {
                return Err(format!("{cmd}: {}", String::from_utf8_lossy(&o.stderr)));
            }
            text.extend(o.stdout);
        }
        stdout.push(String::from_utf8_lossy(&text).replace("a/", "b/"));
    }
    let (fa, fb) = (files_in(&work.path().join("a")), files_in(&work.path().join("b")));
    let cli_same = fa == fb && stdout[0] == stdout[1] && fa.len() == 11;

    Ok((
        overlapping == 0 && frozen_kept && model_kept && cli_same,
        format!(
            "{overlapping} support/query overlaps in 10^4 episodes; frozen prefix bit-identical through stage 1: {frozen_kept}; \
             model unchanged by meta-test: {model_kept}; {} CLI output files byte-identical on rerun: {cli_same}",
            fa.len()
        ),
    ))
}

fn ablation(trained: &[Trained]) -> Outcome {
    let dims = [10, 15, 20, 25];
    let mut per_dim: Vec<Vec<EvalReport>> = vec![Vec::new(); dims.len()];
    let mut rows_ok = true;
    for tr in trained {
        let dir = tempfile::tempdir().map_err(err)?;
        let ckpt = dir.path().join("model.json");
        tr.model.save_json(&ckpt).map_err(err)?;
        let mut cfg = tr.cfg.clone();
        cfg.eval.episodes = 200;
        let out = cli::ablate_dim(&cfg, &ckpt, &dims, dir.path()).map_err(err)?;
        let csv = std::fs::read_to_string(&out.csv).map_err(err)?;
        rows_ok &= csv.lines().count() == 1 + dims.len() && out.reports.len() == dims.len();
        for (k, r) in out.reports.into_iter().enumerate() {
            per_dim[k].push(r);
        }
    }
    let latent = ExperimentConfig::default().data.target.latent_dim;
    let pooled: Vec<EvalReport> = per_dim.iter().map(|p| pooled("dccdi", p)).collect();
    let best = pooled.iter().map(|r| r.mean_accuracy).fold(f64::NEG_INFINITY, f64::max);
    let at_latent = pooled[dims.iter().position(|&d| d == latent).unwrap()].mean_accuracy;
    let cells: Vec<String> = dims.iter().zip(&pooled).map(|(d, r)| format!("d={d} {}", pct(r))).collect();
    Ok((
        rows_ok && best - at_latent <= 0.02,
        format!(
            "4 rows per run: {rows_ok}; {}; d = {latent} is {:.2} points below the best (<= 2); {} episodes per cell",
            cells.join(", "),
            100.0 * (best - at_latent),
            pooled[0].episodes
        ),
    ))
}

fn report(name: &str, t: Instant, outcome: Outcome) -> bool {
    let secs = t.elapsed().as_secs_f64();
    let (pass, detail) = match outcome {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    println!("{} {name}: {detail} [{secs:.1}s]", if pass { "PASS" } else { "FAIL" });
    pass
}

fn main() -> ExitCode {
    let mut all = true;
    type Criterion = fn() -> Outcome;
    let simple: [(&str, Criterion); 5] = [
        ("gradient-correctness", gradient_correctness),
        ("oracle-equivalence", oracle_equivalence),
        ("generator-fidelity", generator_fidelity),
        ("dcca-training", dcca_training),
        ("head-equivalence", head_equivalence),
    ];
    for (name, f) in simple {
        all &= report(name, Instant::now(), f());
    }
    let t = Instant::now();
    match train_seeds() {
        Ok(trained) => {
            println!("     trained {} models in {:.1}s", trained.len(), t.elapsed().as_secs_f64());
            all &= report("directional-ordering", Instant::now(), directional(&trained));
            all &= report("protocol-invariants", Instant::now(), protocol_invariants(&trained[0]));
            all &= report("ablation-mechanics", Instant::now(), ablation(&trained));
        }
        Err(e) => {
            for name in ["directional-ordering", "protocol-invariants", "ablation-mechanics"] {
                all &= report(name, t, Err(format!("training failed: {e}")));
            }
        }
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
