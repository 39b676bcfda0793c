use crate::error::Result;
use crate::noise::RngState;
use crate::tree::{NodeEstimates, NodeWeights, TreeShape};

/// A randomized tree-aggregation release.
///
/// Mechanisms receive the exact subtree sums rather than raw leaf counts;
/// every mechanism in this crate reads the data only through them.
pub trait Mechanism: Sync {
    fn release(
        &self,
        tree: &TreeShape,
        weights: &NodeWeights,
        rng: &mut RngState,
    ) -> Result<NodeEstimates>;
}

impl<F> Mechanism for F
where
    F: Fn(&TreeShape, &NodeWeights, &mut RngState) -> Result<NodeEstimates> + Sync,
{
    fn release(
        &self,
        tree: &TreeShape,
        weights: &NodeWeights,
        rng: &mut RngState,
    ) -> Result<NodeEstimates> {
        self(tree, weights, rng)
    }
}

/// Returns the exact weights. Not private; a reference point for metrics.
#[derive(Debug, Clone, Copy, Default)]
pub struct Exact;

impl Mechanism for Exact {
    fn release(&self, _: &TreeShape, weights: &NodeWeights, _: &mut RngState) -> Result<NodeEstimates> {
        Ok(NodeEstimates::exact(weights))
    }
}
