use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::episodic::{metric_loss, pseudo_split, HeadNodes, Split};
use super::model::Model;
use crate::autodiff::Graph;
use crate::cca::{train_dcca, DccaBlock, DccaShape, DEFAULT_DCCA_LR, DEFAULT_DCCA_STEPS, DEFAULT_R1};
use crate::encoders::{MlpParams, OptimizerState};
use crate::error::{Error, Result};
use crate::fewshot::{episode_seed, mix_seed, sample_task, Dataset, Episode};
use crate::heads::{
    ensemble_scores, graph_metric_scores, linear_graph, matching_logits, prototypical_logits, relation_scores,
    GnnParams, GnnShape, LinearHead, DEFAULT_ENSEMBLE_WEIGHT,
};
use crate::linalg::Matrix;

pub const DEFAULT_ADAPT_STEPS: usize = 50;
pub const DEFAULT_ADAPT_LR: f64 = 0.01;
pub const DEFAULT_OUTPUT_DIM: usize = 20;
pub const DEFAULT_TEXT_SCALE: f64 = 0.3;

/// Episode sampling and scheduling for an evaluation run.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalParams {
    pub episodes: usize,
    pub way: usize,
    pub shots: usize,
    pub queries: usize,
    pub seed: u64,
    /// Worker threads; results do not depend on it.
    pub threads: usize,
}

/// Accuracy summary of one evaluation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub way: usize,
    pub shots: usize,
    pub episodes: usize,
    pub seed: u64,
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    /// `1.96 * sd / sqrt(n)` with the sample standard deviation.
    pub ci95: f64,
    pub fingerprint: String,
}

impl EvalReport {
    pub fn new(method: impl Into<String>, p: &EvalParams, accuracies: Vec<f64>) -> Self {
        let n = accuracies.len() as f64;
        let mean = if accuracies.is_empty() {
            0.0
        } else {
            accuracies.iter().sum::<f64>() / n
        };
        let ci95 = if accuracies.len() < 2 {
            0.0
        } else {
            let var = accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0);
            1.96 * (var / n).sqrt()
        };
        Self {
            method: method.into(),
            way: p.way,
            shots: p.shots,
            episodes: accuracies.len(),
            seed: p.seed,
            accuracies,
            mean_accuracy: mean,
            ci95,
            fingerprint: String::new(),
        }
    }

    pub fn with_fingerprint(mut self, fingerprint: impl Into<String>) -> Self {
        self.fingerprint = fingerprint.into();
        self
    }

    /// The two 95% intervals share at least one point.
    pub fn overlaps(&self, other: &EvalReport) -> bool {
        (self.mean_accuracy - other.mean_accuracy).abs() <= self.ci95 + other.ci95
    }
}

/// Runs `f` on episodes `0..episodes`, each sampled from its own seed.
pub fn run_episodes<F>(ds: &Dataset, p: &EvalParams, f: F) -> Result<Vec<f64>>
where
    F: Fn(u64, &Episode) -> Result<f64> + Sync,
{
    let one = |i: usize| {
        let seed = episode_seed(p.seed, i as u64);
        let ep = sample_task(ds, p.way, p.shots, p.queries, seed)?;
        f(seed, &ep)
    };
    if p.threads <= 1 {
        return (0..p.episodes).map(one).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(p.threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| (0..p.episodes).into_par_iter().map(one).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineHead {
    Prototypical,
    Matching,
    Relation,
    GraphMetric,
}

impl BaselineHead {
    pub const ALL: [BaselineHead; 4] = [
        BaselineHead::Prototypical,
        BaselineHead::Matching,
        BaselineHead::Relation,
        BaselineHead::GraphMetric,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineHead::Prototypical => "prototypical",
            BaselineHead::Matching => "matching",
            BaselineHead::Relation => "relation",
            BaselineHead::GraphMetric => "graph-metric",
        }
    }
}

/// Visual-only evaluation with a fixed trunk and one head.
pub fn evaluate_baseline(model: &Model, target: &Dataset, head: BaselineHead, p: &EvalParams) -> Result<EvalReport> {
    let accs = run_episodes(target, p, |_, ep| {
        let s = model.embed(&ep.support_visual())?;
        let q = model.embed(&ep.query_visual())?;
        let ys = ep.support_labels();
        let scores = match head {
            BaselineHead::Prototypical => prototypical_logits(&s, &ys, &q)?,
            BaselineHead::Matching => matching_logits(&s, &ys, &q)?,
            BaselineHead::Relation => relation_scores(&s, &ys, &q, &model.relation)?,
            BaselineHead::GraphMetric => graph_metric_scores(&s, &ys, &q, &model.gnn)?,
        };
        Ok(scores.accuracy(&ep.query_labels()))
    })?;
    Ok(EvalReport::new(head.name(), p, accs))
}

/// How the text projection is joined to the visual features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FuseMode {
    /// `[trunk embedding, h(text)]`
    #[default]
    ConcatTextProj,
    /// `[g(trunk embedding), h(text)]`
    ConcatBothProj,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DccdiParams {
    /// Width `d` of the correlation projections.
    pub output_dim: usize,
    /// Hidden widths of both projection branches (tanh).
    pub hidden: Vec<usize>,
    pub r1: f64,
    /// Singular values summed by the objective; `None` means all `d`.
    pub top_k: Option<usize>,
    pub cca_steps: usize,
    pub cca_lr: f64,
    pub adapt_steps: usize,
    pub adapt_lr: f64,
    pub fuse_mode: FuseMode,
    /// Weight of the graph head in the score ensemble.
    pub ensemble_weight: f64,
    /// `false` skips the text branch entirely.
    pub use_text: bool,
    /// Rescale the text block so its centered spread is `text_scale` times
    /// the visual block's, which keeps its weight independent of `d`.
    /// Otherwise the projections are used as the DCCA branch emits them.
    pub rescale_text: bool,
    pub text_scale: f64,
}

impl Default for DccdiParams {
    fn default() -> Self {
        Self {
            output_dim: DEFAULT_OUTPUT_DIM,
            hidden: vec![],
            r1: DEFAULT_R1,
            top_k: None,
            cca_steps: DEFAULT_DCCA_STEPS,
            cca_lr: DEFAULT_DCCA_LR,
            adapt_steps: DEFAULT_ADAPT_STEPS,
            adapt_lr: DEFAULT_ADAPT_LR,
            fuse_mode: FuseMode::default(),
            ensemble_weight: DEFAULT_ENSEMBLE_WEIGHT,
            use_text: true,
            rescale_text: true,
            text_scale: DEFAULT_TEXT_SCALE,
        }
    }
}

/// Per-episode state of the meta-test protocol.
struct Fusion {
    /// Frozen text projections of support and query, or `None`.
    text: Option<(Matrix, Matrix)>,
    /// Fixed visual projection for [`FuseMode::ConcatBothProj`].
    visual_proj: Option<MlpParams>,
}

impl Fusion {
    fn prepare(model: &Model, ep: &Episode, p: &DccdiParams, seed: u64) -> Result<Self> {
        if !p.use_text {
            return Ok(Self {
                text: None,
                visual_proj: None,
            });
        }
        let ts = ep.support_text();
        let shape = DccaShape {
            visual_in: model.embed_dim(),
            text_in: ts.cols(),
            hidden: p.hidden.clone(),
            output_dim: p.output_dim,
        };
        let block = DccaBlock::new(&shape, p.r1, p.top_k, mix_seed(seed ^ 0xdcca))?;
        let es = model.embed(&ep.support_visual())?;
        let block = train_dcca(&block, &es, &ts, p.cca_steps, p.cca_lr)?.block;
        let (mut ps, mut pq) = (block.project_text(&ts)?, block.project_text(&ep.query_text())?);
        let visual_proj = (p.fuse_mode == FuseMode::ConcatBothProj).then_some(block.visual);
        if p.rescale_text {
            let w = p.text_scale;
            let vs = match &visual_proj {
                Some(v) => spread(&v.apply(&es)?),
                None => spread(&es),
            };
            let ts = spread(&ps);
            if ts > 0.0 {
                let f = w * vs / ts;
                ps = ps.scale(f);
                pq = pq.scale(f);
            }
        }
        Ok(Self {
            text: Some((ps, pq)),
            visual_proj,
        })
    }

    fn width(&self, emb: usize) -> usize {
        let v = self.visual_proj.as_ref().map_or(emb, MlpParams::out_dim);
        v + self.text.as_ref().map_or(0, |t| t.0.cols())
    }

    fn apply(&self, emb: &Matrix, text: Option<&Matrix>) -> Result<Matrix> {
        let v = match &self.visual_proj {
            Some(p) => p.apply(emb)?,
            None => emb.clone(),
        };
        match text {
            Some(t) => Matrix::concat_cols(&[&v, t]),
            None => Ok(v),
        }
    }
}

/// Root mean squared distance of rows from their centroid.
fn spread(m: &Matrix) -> f64 {
    let mu = m.column_means();
    let ss: f64 = (0..m.rows())
        .map(|i| m.row(i).iter().zip(&mu).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sum();
    (ss / m.rows().max(1) as f64).sqrt()
}

/// Graph head for the fused width: the meta-trained head with zero weights on
/// the text columns, or a fresh head when the visual side is projected too.
fn fused_gnn(model: &Model, fusion: &Fusion, way: usize, seed: u64) -> Result<GnnParams> {
    if way != model.way() {
        return Err(Error::InvalidArgument(format!(
            "graph head is built for {}-way tasks, got {way}-way",
            model.way()
        )));
    }
    let width = fusion.width(model.embed_dim());
    if fusion.visual_proj.is_some() {
        let g = &model.gnn;
        let shape = GnnShape {
            emb_dim: width,
            way,
            hidden: g.node[0].out_dim(),
            edge_hidden: g.edge[0].layers()[0].out_dim(),
            rounds: g.rounds(),
        };
        return GnnParams::new(&shape, mix_seed(seed ^ 0x6e6e));
    }
    model.gnn.widen_embedding(width - model.embed_dim())
}

/// Accuracy of one episode under the full protocol: fit the correlation
/// block on the support pairs, fuse, adapt the trunk suffix with the linear
/// and graph heads, then score queries with the ensemble.
pub fn dccdi_episode(model: &Model, ep: &Episode, p: &DccdiParams, seed: u64) -> Result<f64> {
    let way = ep.way();
    if ep.support.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: ep.support.len(),
        });
    }
    let fusion = Fusion::prepare(model, ep, p, seed)?;
    let (prefix, mut suffix) = model.split_trunk();
    let hs = prefix.apply(&ep.support_visual())?;
    let hq = prefix.apply(&ep.query_visual())?;
    let ys = ep.support_labels();
    let text_s = fusion.text.as_ref().map(|t| &t.0);
    let text_q = fusion.text.as_ref().map(|t| &t.1);

    let fused_s0 = fusion.apply(&suffix.apply(&hs)?, text_s)?;
    let mut linear = LinearHead::from_prototypes(&fused_s0, &ys, way)?;
    let mut gnn = fused_gnn(model, &fusion, way, seed)?;
    let width = fused_s0.cols();
    let (reference, pseudo) = pseudo_split(&ys, way)?;
    let yr: Vec<usize> = reference.iter().map(|&i| ys[i]).collect();
    let yp: Vec<usize> = pseudo.iter().map(|&i| ys[i]).collect();

    let mut opt = OptimizerState::sgd(p.adapt_lr);
    for step in 0..p.adapt_steps {
        let mut g = Graph::new();
        let sfx = suffix.attach(&mut g, true);
        let lin = linear.attach(&mut g, true);
        let gn = gnn.attach(&mut g, true);
        let x = g.input(hs.clone());
        let mut emb = sfx.forward(&mut g, x, hs.cols())?;
        if let Some(vp) = &fusion.visual_proj {
            let vn = vp.attach(&mut g, false);
            emb = vn.forward(&mut g, emb, model.embed_dim())?;
        }
        let fused = match text_s {
            Some(t) => {
                let ti = g.input(t.clone());
                g.concat_cols(&[emb, ti])
            }
            None => emb,
        };
        let z = linear_graph(&mut g, fused, lin);
        let l_lin = g.softmax_cross_entropy(z, &ys);
        let split = Split {
            reference: &reference,
            reference_labels: &yr,
            query: &pseudo,
            query_labels: &yp,
            way,
        };
        let l_gnn = metric_loss(
            &mut g,
            fused,
            width,
            &split,
            &HeadNodes {
                gnn: Some(&gn),
                relation: None,
            },
        )?;
        let loss = g.add(l_lin, l_gnn);
        let value = g.forward_scalar(loss)?;
        if !value.is_finite() {
            return Err(Error::Diverged { step });
        }
        g.backward(loss)?;
        let mut grads = sfx.grads(&g);
        grads.push(g.grad_or_zeros(lin.0));
        grads.push(g.grad_or_zeros(lin.1));
        grads.extend(gn.grads(&g));
        let mut tensors = suffix.tensors_mut();
        tensors.extend(linear.tensors_mut());
        tensors.extend(gnn.tensors_mut());
        opt.step(&mut tensors, &grads)?;
    }

    let fs = fusion.apply(&suffix.apply(&hs)?, text_s)?;
    let fq = fusion.apply(&suffix.apply(&hq)?, text_q)?;
    let lin_scores = linear.logits(&fq)?;
    let gnn_scores = graph_metric_scores(&fs, &ys, &fq, &gnn)?;
    let scores = ensemble_scores(&gnn_scores, &lin_scores, p.ensemble_weight)?;
    Ok(scores.accuracy(&ep.query_labels()))
}

/// Meta-test protocol over `p.episodes` target episodes. The model is only
/// read; each episode adapts its own copy of the trunk suffix and heads.
pub fn meta_test_dccdi(model: &Model, target: &Dataset, p: &EvalParams, d: &DccdiParams) -> Result<EvalReport> {
    let accs = run_episodes(target, p, |seed, ep| dccdi_episode(model, ep, d, seed))?;
    let method = if d.use_text { "dccdi" } else { "dccdi-no-text" };
    Ok(EvalReport::new(method, p, accs))
}
