//! Executable lower-bound constructions for the complete binary tree.
//!
//! The packing attack plants `D/2` on one leaf and decodes the leaf back
//! from a release by a randomized walk that trusts the comparison of each
//! child against `tau_max` with probability `kappa = 1 - 4 eta`. Any
//! `(alpha, eta)`-accurate mechanism lets the walk succeed with probability
//! at least `2^{-(d-1) H(4 eta)} / 4`.
//!
//! The witness computes the nuclear norm of `W o v u^T` for the binary tree
//! workload `W`, which lower-bounds its factorization norm and grows like
//! `sqrt(d)`.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{check_positive, Error, Result};
use crate::mechanism::Mechanism;
use crate::metrics::{wilson_interval, WILSON_Z};
use crate::noise::RngState;
use crate::tree::{aggregate_exact, LeafCounts, NodeEstimates, NodeId, TreeShape};

/// Largest depth accepted by [`nuclear_norm_bruteforce`].
pub const BRUTEFORCE_MAX_DEPTH: usize = 8;

/// Largest depth accepted by [`gamma2_witness_value`].
pub const WITNESS_MAX_DEPTH: usize = 60;

/// `H(x) = x log2(1/x) + (1-x) log2(1/(1-x))`, with `H(0) = H(1) = 0`.
pub fn binary_entropy(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::param("x", x, "must lie in [0, 1]"));
    }
    let term = |p: f64| if p == 0.0 { 0.0 } else { -p * p.log2() };
    Ok(term(x) + term(1.0 - x))
}

/// `(1/4) 2^{-(d-1) H(4 eta)}`.
pub fn attack_floor(depth: usize, eta: f64) -> Result<f64> {
    Ok(0.25 * 2f64.powf(-(depth as f64 - 1.0) * binary_entropy(4.0 * eta)?))
}

/// Copies needed by the median amplifier: `ceil(ln(4/kappa) / (2 (1/2 - eta)^2))`.
pub fn amplification_copies(eta: f64, kappa: f64) -> Result<usize> {
    if !(0.0..0.5).contains(&eta) {
        return Err(Error::param("eta", eta, "must lie in [0, 1/2)"));
    }
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(Error::param("kappa", kappa, "must lie in (0, 1]"));
    }
    Ok(((4.0 / kappa).ln() / (2.0 * (0.5 - eta).powi(2))).ceil().max(1.0) as usize)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub depth: usize,
    pub tau_max: f64,
    pub alpha: f64,
    pub eta: f64,
    /// Even planted mass `D = 2 ceil(tau_max / (1 - alpha))`.
    pub big_d: u64,
    /// Decoder trust `1 - 4 eta`.
    pub kappa: f64,
    pub trials: u64,
    /// Number of copies whose entry-wise median is decoded.
    pub copies: usize,
    /// Number of leaf indices to attack; all of them when `None`.
    pub sample_indices: Option<usize>,
}

impl AttackConfig {
    pub fn new(depth: usize, tau_max: f64, alpha: f64, eta: f64, trials: u64) -> Result<Self> {
        if depth == 0 {
            return Err(Error::param("depth", 0.0, "must be at least 1"));
        }
        check_positive("tau_max", tau_max)?;
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::param("alpha", alpha, "must lie in [0, 1)"));
        }
        if !(0.0..=0.125).contains(&eta) {
            return Err(Error::param("eta", eta, "must lie in [0, 1/8]"));
        }
        if trials == 0 {
            return Err(Error::param("trials", 0.0, "must be at least 1"));
        }
        let half = (tau_max / (1.0 - alpha)).ceil();
        if half >= (u64::MAX / 4) as f64 {
            return Err(Error::param("tau_max", tau_max, "planted mass overflows 64 bits"));
        }
        Ok(AttackConfig {
            depth,
            tau_max,
            alpha,
            eta,
            big_d: 2 * half as u64,
            kappa: 1.0 - 4.0 * eta,
            trials,
            copies: 1,
            sample_indices: None,
        })
    }

    pub fn with_copies(mut self, copies: usize) -> Result<Self> {
        if copies == 0 {
            return Err(Error::param("copies", 0.0, "must be at least 1"));
        }
        self.copies = copies;
        Ok(self)
    }

    pub fn with_sample(mut self, indices: usize) -> Result<Self> {
        if indices == 0 {
            return Err(Error::param("sample size", 0.0, "must be at least 1"));
        }
        self.sample_indices = Some(indices);
        Ok(self)
    }
}

/// Dataset with `D/2` on the `index`-th leaf (1-based, left to right) and
/// zero elsewhere.
pub fn packing_dataset(tree: &TreeShape, big_d: u64, index: usize) -> Result<LeafCounts> {
    if !big_d.is_multiple_of(2) {
        return Err(Error::param("D", big_d as f64, "must be even"));
    }
    let leaves = tree.leaves();
    if index == 0 || index > leaves.len() {
        return Err(Error::param("leaf index", index as f64, "out of range"));
    }
    let mut c = LeafCounts::zeros(tree);
    c.set(tree, leaves[index - 1], big_d / 2)?;
    Ok(c)
}

/// Walks from the root to a leaf and returns its 1-based index.
pub fn decode(tree: &TreeShape, estimates: &NodeEstimates, tau_max: f64, kappa: f64, rng: &mut RngState) -> Result<usize> {
    if !(0.0..=1.0).contains(&kappa) {
        return Err(Error::param("kappa", kappa, "must lie in [0, 1]"));
    }
    if estimates.len() != tree.len() {
        let u = tree.nodes().nth(estimates.len().min(tree.len() - 1)).unwrap_or(tree.root());
        return Err(Error::MissingEstimate(tree.name(u).to_owned()));
    }
    let mut u = tree.root();
    loop {
        let kids = tree.children(u);
        match kids.len() {
            0 => break,
            2 => {}
            _ => return Err(Error::NotBinary(tree.name(u).to_owned())),
        }
        let est = |v: NodeId| -> Result<bool> {
            let x = estimates.get(v);
            if x.is_nan() {
                return Err(Error::MissingEstimate(tree.name(v).to_owned()));
            }
            Ok(x >= tau_max)
        };
        let (hi0, hi1) = (est(kids[0])?, est(kids[1])?);
        u = if hi0 == hi1 {
            kids[rng.random_range(0..2)]
        } else {
            let (up, down) = if hi0 { (kids[0], kids[1]) } else { (kids[1], kids[0]) };
            if rng.open01() < kappa {
                up
            } else {
                down
            }
        };
    }
    let pos = tree.leaves().iter().position(|&l| l == u).expect("walk ends at a leaf");
    Ok(pos + 1)
}

/// Entry-wise median; the mean of the two middle values for even counts.
pub fn entrywise_median(copies: &[NodeEstimates]) -> Result<NodeEstimates> {
    let first = copies.first().ok_or(Error::Empty("copies"))?;
    let n = first.len();
    let mut col = vec![0.0; copies.len()];
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        for (slot, c) in col.iter_mut().zip(copies) {
            *slot = c.as_slice()[i];
        }
        col.sort_by(f64::total_cmp);
        let m = col.len();
        out.push(if m % 2 == 1 { col[m / 2] } else { 0.5 * (col[m / 2 - 1] + col[m / 2]) });
    }
    Ok(NodeEstimates::new(out))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexOutcome {
    /// 1-based leaf index.
    pub index: usize,
    pub successes: u64,
    pub trials: u64,
    pub rate: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackReport {
    pub outcomes: Vec<IndexOutcome>,
    /// `(1/4) 2^{-(d-1) H(4 eta)}`.
    pub floor: f64,
    pub big_d: u64,
    pub kappa: f64,
}

impl AttackReport {
    pub fn mean_rate(&self) -> f64 {
        let (s, n) = self
            .outcomes
            .iter()
            .fold((0, 0), |(s, n), o| (s + o.successes, n + o.trials));
        s as f64 / n as f64
    }

    pub fn min_rate(&self) -> f64 {
        self.outcomes.iter().map(|o| o.rate).fold(f64::INFINITY, f64::min)
    }
}

/// Success frequency of the decoder against `mech` on the complete binary
/// tree of depth `config.depth`. Index `i` uses `rng.derive(i)`, its trial
/// `t` uses a further `derive(t)`.
pub fn attack_success_rate<M: Mechanism + ?Sized>(mech: &M, config: &AttackConfig, rng: &RngState) -> Result<AttackReport> {
    let tree = TreeShape::complete_binary(config.depth)?;
    let n_leaves = tree.leaves().len();
    let indices: Vec<usize> = match config.sample_indices {
        Some(k) if k < n_leaves => {
            let mut picked = sample(&mut rng.derive(u64::MAX), n_leaves, k).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| i + 1).collect()
        }
        _ => (1..=n_leaves).collect(),
    };
    let mut outcomes = Vec::with_capacity(indices.len());
    for &index in &indices {
        let counts = packing_dataset(&tree, config.big_d, index)?;
        let weights = aggregate_exact(&tree, &counts)?;
        let stream = rng.derive(index as u64);
        let hits: Vec<Result<bool>> = (0..config.trials)
            .into_par_iter()
            .map(|t| {
                let mut r = stream.derive(t);
                let est = if config.copies == 1 {
                    mech.release(&tree, &weights, &mut r)?
                } else {
                    let runs = (0..config.copies)
                        .map(|_| mech.release(&tree, &weights, &mut r))
                        .collect::<Result<Vec<_>>>()?;
                    entrywise_median(&runs)?
                };
                Ok(decode(&tree, &est, config.tau_max, config.kappa, &mut r)? == index)
            })
            .collect();
        let mut successes = 0;
        for h in hits {
            successes += h? as u64;
        }
        let (lower, upper) = wilson_interval(successes, config.trials, WILSON_Z);
        outcomes.push(IndexOutcome {
            index,
            successes,
            trials: config.trials,
            rate: successes as f64 / config.trials as f64,
            lower,
            upper,
        });
    }
    Ok(AttackReport {
        outcomes,
        floor: attack_floor(config.depth, config.eta)?,
        big_d: config.big_d,
        kappa: config.kappa,
    })
}

/// Eigenvalues of `U^T U` for the witness, from the closed form.
///
/// With `n = 2^{d-1}` and `lambda = 1/(n d)`: the all-ones vector has
/// `lambda sum_{l=0}^{d-1} 2^{d-1-2l}`, and each of the `2^l` internal nodes
/// at depth `l` (0-based) contributes `lambda sum_{j=l+1}^{d-1} 2^{d-1-2j}`.
/// Returned as `(eigenvalue, multiplicity)` pairs.
pub fn gamma2_witness_spectrum(depth: usize) -> Result<Vec<(f64, u64)>> {
    if depth == 0 || depth > WITNESS_MAX_DEPTH {
        return Err(Error::DepthOutOfRange {
            depth,
            max: WITNESS_MAX_DEPTH,
        });
    }
    let d = depth as i32;
    let n = 2f64.powi(d - 1);
    let lambda = 1.0 / (n * depth as f64);
    let tail = |from: i32| -> f64 { (from..d).map(|j| 2f64.powi(d - 1 - 2 * j)).sum() };
    let mut spec = vec![(lambda * tail(0), 1u64)];
    for l in 0..d - 1 {
        spec.push((lambda * tail(l + 1), 1u64 << l));
    }
    let count: u64 = spec.iter().map(|&(_, m)| m).sum();
    assert_eq!(count, 1u64 << (d - 1), "witness eigenvectors must span R^n");
    Ok(spec)
}

/// `||W o v u^T||_*` for the binary tree workload of depth `d`.
pub fn gamma2_witness_value(depth: usize) -> Result<f64> {
    Ok(gamma2_witness_spectrum(depth)?
        .iter()
        .map(|&(e, m)| m as f64 * e.sqrt())
        .sum())
}

/// The same nuclear norm from the explicit matrix: square roots of the
/// eigenvalues of `U^T U`.
pub fn nuclear_norm_bruteforce(depth: usize) -> Result<f64> {
    if depth == 0 || depth > BRUTEFORCE_MAX_DEPTH {
        return Err(Error::DepthOutOfRange {
            depth,
            max: BRUTEFORCE_MAX_DEPTH,
        });
    }
    let tree = TreeShape::complete_binary(depth)?;
    let leaves = tree.leaves();
    let n = leaves.len();
    let u = 1.0 / (n as f64).sqrt();
    // U[i][j] = W[i][j] v_i u_j, with W[i][j] = 1 iff leaf j lies below node i.
    let rows: Vec<Vec<f64>> = tree
        .nodes()
        .map(|i| {
            let v = 1.0 / (2f64.powi(tree.depth_of(i) as i32 - 1) * depth as f64).sqrt();
            leaves
                .iter()
                .map(|&l| if tree.is_ancestor_or_self(i, l) { v * u } else { 0.0 })
                .collect()
        })
        .collect();
    let mut gram = DMatrix::<f64>::zeros(n, n);
    for row in &rows {
        for a in 0..n {
            if row[a] == 0.0 {
                continue;
            }
            for b in 0..n {
                gram[(a, b)] += row[a] * row[b];
            }
        }
    }
    Ok(gram.symmetric_eigenvalues().iter().map(|&e| e.max(0.0).sqrt()).sum())
}
