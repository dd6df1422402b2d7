use serde::{Deserialize, Serialize};

use super::episodic::{metric_loss, pseudo_split, HeadNodes, MetaHead, Split};
use super::model::Model;
use crate::autodiff::{Graph, NodeId};
use crate::encoders::{MlpParams, OptimizerState};
use crate::error::{Error, Result};
use crate::fewshot::{episode_seed, mix_seed, sample_task, Dataset, Episode};
use crate::heads::{linear_graph, LinearHead};
use crate::linalg::Matrix;

pub const DEFAULT_INNER_STEPS: usize = 5;
pub const DEFAULT_INNER_LR: f64 = 0.01;
pub const DEFAULT_OUTER_LR: f64 = 0.001;

const STAGE2_SALT: u64 = 0x5354_4147_4532;

/// One line of a training trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TraceRecord {
    pub episode: usize,
    pub stage: u8,
    pub support_loss: f64,
    pub query_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage1Params {
    pub episodes: usize,
    pub way: usize,
    pub shots: usize,
    pub queries: usize,
    pub lr: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage2Params {
    pub episodes: usize,
    pub way: usize,
    pub shots: usize,
    pub queries: usize,
    pub inner_steps: usize,
    pub inner_lr: f64,
    pub outer_lr: f64,
    pub heads: Vec<MetaHead>,
    pub seed: u64,
}

/// Supervised warm-up of the adaptable trunk layers.
///
/// A linear classifier over all source classes (zero-initialized, discarded
/// afterwards) is trained with the trunk suffix by SGD on the support
/// cross-entropy of each episode. Query cross-entropy is only recorded.
pub fn stage1_train(model: &Model, source: &Dataset, p: &Stage1Params) -> Result<(Model, Vec<TraceRecord>)> {
    let classes = source.classes();
    let global = |label: usize| classes.binary_search(&label).expect("label from this dataset");
    let (prefix, mut suffix) = model.split_trunk();
    let mut classifier = LinearHead::zeros(model.embed_dim(), classes.len());
    let mut opt = OptimizerState::sgd(p.lr);
    let mut trace = Vec::with_capacity(p.episodes);

    for i in 0..p.episodes {
        let ep = sample_task(source, p.way, p.shots, p.queries, episode_seed(p.seed, i as u64))?;
        let ys: Vec<usize> = ep.support.iter().map(|s| global(s.label)).collect();
        let yq: Vec<usize> = ep.query.iter().map(|s| global(s.label)).collect();
        let hs = prefix.apply(&ep.support_visual())?;
        let hq = prefix.apply(&ep.query_visual())?;

        let mut g = Graph::new();
        let sfx = suffix.attach(&mut g, true);
        let head = classifier.attach(&mut g, true);
        let xs = g.input(hs.clone());
        let xq = g.input(hq);
        let es = sfx.forward(&mut g, xs, hs.cols())?;
        let eq = sfx.forward(&mut g, xq, hs.cols())?;
        let zs = linear_graph(&mut g, es, head);
        let zq = linear_graph(&mut g, eq, head);
        let ls = g.softmax_cross_entropy(zs, &ys);
        let lq = g.softmax_cross_entropy(zq, &yq);
        g.forward()?;
        let (support_loss, query_loss) = (g.value(ls)[(0, 0)], g.value(lq)[(0, 0)]);
        if !support_loss.is_finite() {
            return Err(Error::Diverged { step: i });
        }
        g.backward(ls)?;
        let mut grads = sfx.grads(&g);
        grads.push(g.grad_or_zeros(head.0));
        grads.push(g.grad_or_zeros(head.1));
        let mut tensors = suffix.tensors_mut();
        tensors.extend(classifier.tensors_mut());
        opt.step(&mut tensors, &grads)?;
        trace.push(TraceRecord {
            episode: i,
            stage: 1,
            support_loss,
            query_loss,
        });
    }
    let trunk = MlpParams::join(&prefix, &suffix)?;
    let out = Model::from_parts(trunk, model.frozen, model.gnn.clone(), model.relation.clone())?;
    debug_assert_eq!(out.split_trunk().0, model.split_trunk().0);
    Ok((out, trace))
}

/// Parameters updated in stage 2: the whole trunk plus the selected heads.
fn meta_tensors<'a>(m: &'a mut Model, heads: &[MetaHead]) -> Vec<&'a mut Matrix> {
    let mut t = m.trunk.tensors_mut();
    if heads.contains(&MetaHead::GraphMetric) {
        t.extend(m.gnn.tensors_mut());
    }
    if heads.contains(&MetaHead::Relation) {
        t.extend(m.relation.tensors_mut());
    }
    t
}

/// Records the episodic loss of `m` and returns `(loss, parameter ids)`.
/// With `query` unset, the loss is on a pseudo-query split of the support.
pub(crate) fn episode_graph(
    g: &mut Graph,
    m: &Model,
    heads: &[MetaHead],
    ep: &Episode,
    query: bool,
) -> Result<(NodeId, Vec<NodeId>)> {
    let way = ep.way();
    let ys = ep.support_labels();
    let trunk = m.trunk.attach(g, true);
    let gnn = heads.contains(&MetaHead::GraphMetric).then(|| m.gnn.attach(g, true));
    let rel = heads.contains(&MetaHead::Relation).then(|| m.relation.attach(g, true));
    let mut ids = trunk.param_ids();
    ids.extend(gnn.iter().flat_map(|n| n.param_ids()));
    ids.extend(rel.iter().flat_map(|n| n.param_ids()));
    let nodes = HeadNodes {
        gnn: gnn.as_ref(),
        relation: rel.as_ref(),
    };

    let loss = if query {
        let x = Matrix::concat_rows(&[&ep.support_visual(), &ep.query_visual()])?;
        let cols = x.cols();
        let xi = g.input(x);
        let emb = trunk.forward(g, xi, cols)?;
        let s: Vec<usize> = (0..ep.support.len()).collect();
        let q: Vec<usize> = (ep.support.len()..ep.support.len() + ep.query.len()).collect();
        let yq = ep.query_labels();
        let split = Split {
            reference: &s,
            reference_labels: &ys,
            query: &q,
            query_labels: &yq,
            way,
        };
        metric_loss(g, emb, m.embed_dim(), &split, &nodes)?
    } else {
        let x = ep.support_visual();
        let cols = x.cols();
        let xi = g.input(x);
        let emb = trunk.forward(g, xi, cols)?;
        let (r, q) = pseudo_split(&ys, way)?;
        let yr: Vec<usize> = r.iter().map(|&i| ys[i]).collect();
        let yq: Vec<usize> = q.iter().map(|&i| ys[i]).collect();
        let split = Split {
            reference: &r,
            reference_labels: &yr,
            query: &q,
            query_labels: &yq,
            way,
        };
        metric_loss(g, emb, m.embed_dim(), &split, &nodes)?
    };
    Ok((loss, ids))
}

fn loss_and_grads(m: &Model, heads: &[MetaHead], ep: &Episode, query: bool, step: usize) -> Result<(f64, Vec<Matrix>)> {
    let mut g = Graph::new();
    let (loss, ids) = episode_graph(&mut g, m, heads, ep, query)?;
    let value = g.forward_scalar(loss)?;
    if !value.is_finite() {
        return Err(Error::Diverged { step });
    }
    g.backward(loss)?;
    Ok((value, ids.into_iter().map(|id| g.grad_or_zeros(id)).collect()))
}

/// First-order MAML over the trunk and the selected metric heads.
///
/// Per episode the trainable parameters are cloned and adapted with
/// `inner_steps` SGD steps on a pseudo-query split of the support. The query
/// loss gradient at the adapted parameters is then applied to the original
/// parameters with RMSprop; no derivative of the adapted parameters with
/// respect to the originals is formed. Every trunk layer is trained here.
pub fn stage2_train(model: &Model, source: &Dataset, p: &Stage2Params) -> Result<(Model, Vec<TraceRecord>)> {
    if p.heads.is_empty() {
        return Err(Error::InvalidArgument("stage 2 needs at least one metric head".into()));
    }
    if p.way != model.way() && p.heads.contains(&MetaHead::GraphMetric) {
        return Err(Error::InvalidArgument(format!(
            "graph head is built for {}-way tasks, stage 2 samples {}-way",
            model.way(),
            p.way
        )));
    }
    let mut model = model.clone();
    let mut outer = OptimizerState::rmsprop(p.outer_lr);
    let mut trace = Vec::with_capacity(p.episodes);
    let base = mix_seed(p.seed ^ STAGE2_SALT);

    for i in 0..p.episodes {
        let ep = sample_task(source, p.way, p.shots, p.queries, episode_seed(base, i as u64))?;
        let mut fast = model.clone();
        let mut inner = OptimizerState::sgd(p.inner_lr);
        let mut support_loss = None;
        for _ in 0..p.inner_steps {
            let (l, grads) = loss_and_grads(&fast, &p.heads, &ep, false, i)?;
            support_loss.get_or_insert(l);
            inner.step(&mut meta_tensors(&mut fast, &p.heads), &grads)?;
        }
        let support_loss = match support_loss {
            Some(l) => l,
            None => {
                let mut g = Graph::new();
                let (loss, _) = episode_graph(&mut g, &fast, &p.heads, &ep, false)?;
                g.forward_scalar(loss)?
            }
        };
        let (query_loss, grads) = loss_and_grads(&fast, &p.heads, &ep, true, i)?;
        outer.step(&mut meta_tensors(&mut model, &p.heads), &grads)?;
        trace.push(TraceRecord {
            episode: i,
            stage: 2,
            support_loss,
            query_loss,
        });
    }
    Ok((model, trace))
}
