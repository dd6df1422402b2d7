//! Few-shot classification heads and score ensembling.

mod gnn;
mod linear;
mod metric;
mod scores;

pub use gnn::{
    gnn_graph, graph_metric_scores, graph_metric_scores_with_adjacency, label_features, GnnNodes, GnnOutput,
    GnnParams, GnnShape, DEFAULT_GNN_EDGE_HIDDEN, DEFAULT_GNN_HIDDEN, DEFAULT_GNN_ROUNDS,
};
pub use linear::{linear_graph, linear_head_fit, linear_head_logits, LinearHead};
pub use metric::{
    class_mean_matrix, class_means, infer_way, matching_graph, matching_logits, one_hot, prototypical_graph,
    prototypical_logits, relation_graph, relation_scores,
};
pub use scores::{ensemble_scores, HeadScores, HeadTag, DEFAULT_ENSEMBLE_WEIGHT};
