use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::encoders::MlpNodes;
use crate::error::{Error, Result};
use crate::heads::{gnn_graph, relation_graph, GnnNodes};

/// Parametric metric heads trained episodically alongside the trunk.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetaHead {
    GraphMetric,
    Relation,
}

/// Splits support rows into a labeled reference set and pseudo-queries: the
/// last row of every class becomes a pseudo-query. A class with a single row
/// keeps it in the reference set as well, so every class stays represented.
pub fn pseudo_split(labels: &[usize], way: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut last = vec![None; way];
    let mut count = vec![0usize; way];
    for (i, &l) in labels.iter().enumerate() {
        if l >= way {
            return Err(Error::InvalidArgument(format!("label {l} outside 0..{way}")));
        }
        last[l] = Some(i);
        count[l] += 1;
    }
    let mut queries = Vec::with_capacity(way);
    for (c, l) in last.iter().enumerate() {
        queries.push(l.ok_or_else(|| Error::InvalidArgument(format!("class {c} has no support rows")))?);
    }
    let reference = (0..labels.len())
        .filter(|&i| count[labels[i]] == 1 || !queries.contains(&i))
        .collect();
    Ok((reference, queries))
}

pub(crate) struct HeadNodes<'a> {
    pub gnn: Option<&'a GnnNodes>,
    pub relation: Option<&'a MlpNodes>,
}

/// Rows of an embedding node used as reference and query sets.
pub(crate) struct Split<'a> {
    pub reference: &'a [usize],
    pub reference_labels: &'a [usize],
    pub query: &'a [usize],
    pub query_labels: &'a [usize],
    pub way: usize,
}

/// Sum of the query cross-entropies of every head in `heads`.
pub(crate) fn metric_loss(g: &mut Graph, emb: NodeId, width: usize, split: &Split, heads: &HeadNodes) -> Result<NodeId> {
    let mut total: Option<NodeId> = None;
    let mut add = |g: &mut Graph, l: NodeId| {
        total = Some(match total {
            Some(t) => g.add(t, l),
            None => l,
        })
    };
    if let Some(gnn) = heads.gnn {
        let rows: Vec<usize> = split.reference.iter().chain(split.query).copied().collect();
        let all = g.gather_rows(emb, &rows);
        let out = gnn_graph(g, all, width, split.reference_labels, split.query.len(), gnn)?;
        let l = g.softmax_cross_entropy(out.logits, split.query_labels);
        add(g, l);
    }
    if let Some(rel) = heads.relation {
        let s = g.gather_rows(emb, split.reference);
        let q = g.gather_rows(emb, split.query);
        let logits = relation_graph(g, s, split.reference_labels, split.way, q, split.query.len(), rel)?;
        let l = g.softmax_cross_entropy(logits, split.query_labels);
        add(g, l);
    }
    total.ok_or_else(|| Error::InvalidArgument("no metric head selected".into()))
}
