//! Additive noise baselines: i.i.d. Laplace or Gaussian noise on every node.
//!
//! A single leaf change moves at most `d` node sums by one each, so the
//! workload's column norms are `d` (L1) and `sqrt(d)` (L2). Both baselines
//! scale by the tree's maximum depth for every node.

use crate::error::{check_positive, check_unit_open, Result};
use crate::ledger::PrivacyBudget;
use crate::mechanism::Mechanism;
use crate::noise::{Gaussian, Laplace, RngState};
use crate::tree::{aggregate_exact, LeafCounts, NodeEstimates, NodeWeights, TreeShape};

/// Per-node Laplace scale `d / eps`.
pub fn laplace_scale(depth: usize, eps: f64) -> Result<f64> {
    check_positive("eps", eps)?;
    Ok(depth as f64 / eps)
}

/// Per-node standard deviation `sqrt(2 ln(1.25/delta)) * sqrt(d) / eps`.
pub fn gaussian_sigma(depth: usize, eps: f64, delta: f64) -> Result<f64> {
    check_unit_open("eps", eps)?;
    check_unit_open("delta", delta)?;
    Ok((2.0 * (1.25 / delta).ln()).sqrt() * (depth as f64).sqrt() / eps)
}

/// Pure `eps`-DP Laplace release.
#[derive(Debug, Clone, Copy)]
pub struct LaplaceTree {
    pub eps: f64,
}

impl LaplaceTree {
    pub fn new(eps: f64) -> Result<Self> {
        check_positive("eps", eps)?;
        Ok(LaplaceTree { eps })
    }

    pub fn budget(&self) -> PrivacyBudget {
        PrivacyBudget {
            eps: self.eps,
            delta: 0.0,
        }
    }
}

impl Mechanism for LaplaceTree {
    fn release(&self, tree: &TreeShape, weights: &NodeWeights, rng: &mut RngState) -> Result<NodeEstimates> {
        let lap = Laplace::new(laplace_scale(tree.depth(), self.eps)?)?;
        Ok(add_noise(weights, || lap.sample(rng)))
    }
}

/// `(eps, delta)`-DP Gaussian release; requires `eps, delta` in (0, 1).
#[derive(Debug, Clone, Copy)]
pub struct GaussianTree {
    pub eps: f64,
    pub delta: f64,
}

impl GaussianTree {
    pub fn new(eps: f64, delta: f64) -> Result<Self> {
        gaussian_sigma(1, eps, delta)?;
        Ok(GaussianTree { eps, delta })
    }

    pub fn budget(&self) -> PrivacyBudget {
        PrivacyBudget {
            eps: self.eps,
            delta: self.delta,
        }
    }
}

impl Mechanism for GaussianTree {
    fn release(&self, tree: &TreeShape, weights: &NodeWeights, rng: &mut RngState) -> Result<NodeEstimates> {
        let g = Gaussian::new(gaussian_sigma(tree.depth(), self.eps, self.delta)?)?;
        Ok(add_noise(weights, || g.sample(rng)))
    }
}

fn add_noise(weights: &NodeWeights, mut noise: impl FnMut() -> f64) -> NodeEstimates {
    NodeEstimates::new(weights.as_slice().iter().map(|&w| w as f64 + noise()).collect())
}

pub fn laplace_tree(tree: &TreeShape, counts: &LeafCounts, eps: f64, rng: &mut RngState) -> Result<NodeEstimates> {
    let mech = LaplaceTree::new(eps)?;
    mech.release(tree, &aggregate_exact(tree, counts)?, rng)
}

pub fn gaussian_tree(
    tree: &TreeShape,
    counts: &LeafCounts,
    eps: f64,
    delta: f64,
    rng: &mut RngState,
) -> Result<NodeEstimates> {
    let mech = GaussianTree::new(eps, delta)?;
    mech.release(tree, &aggregate_exact(tree, counts)?, rng)
}
