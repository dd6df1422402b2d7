//! Regularized canonical correlation between two views: the trace-norm
//! objective, its closed-form gradient, a linear CCA reference and the deep
//! (two-network) trainer.

mod dcca;
mod objective;
mod oracle;

pub use dcca::{
    train_dcca, DccaBlock, DccaShape, DccaTrace, DEFAULT_DCCA_LR, DEFAULT_DCCA_STEPS, DEFAULT_R1,
};
pub use objective::{
    correlation_gradient, correlation_objective, covariance_matrices, CcaGradient, CcaStats,
    Covariances, NegCorrelationLoss, DEGENERATE_GAP,
};
pub use oracle::{linear_cca_oracle, pearson, LinearCca};
