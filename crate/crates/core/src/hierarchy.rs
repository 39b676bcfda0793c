//! Additive-multiplicative estimation of subtree sums.
//!
//! The pipeline has four layers:
//!
//! * [`classify_tree`] labels each node ⊤ or ⊥ against one threshold, using a
//!   sparse-vector query per depth and truncated-Laplace tests on ⊤ levels.
//! * [`reduce_estimate`] runs classification over a geometric sequence of
//!   thresholds, from the largest down, and assigns each node the bound `M_i`
//!   of the level at which it first classifies ⊤.
//! * [`estimate`] privately bounds the root weight and builds the schedule.
//! * [`clamp_to_mrmse`] post-processes any estimate into a window around a
//!   fresh truncated-Laplace release so that the error is never above `2R`.
//!
//! Utility preconditions are checked and refused by default. Setting `force`
//! skips the checks; privacy does not depend on them.

use std::collections::HashSet;

use crate::error::{check_positive, check_unit_open, Error, Result};
use crate::ledger::{compose_basic, compose_parallel, PrivacyBudget};
use crate::mechanism::Mechanism;
use crate::noise::{trunc_lap_radius, RngState, TruncatedLaplace};
use crate::svt::{SvtAnswer, SvtParams, SvtSession};
use crate::tree::{aggregate_exact, LeafCounts, NodeEstimates, NodeId, NodeWeights, TreeShape};

/// Relative slack for schedule constraints that hold with equality.
const SCHEDULE_RTOL: f64 = 1e-9;

/// Hard cap on the number of schedule levels.
pub const MAX_LEVELS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    /// ⊥
    Bottom,
    /// ⊤
    Top,
}

/// One label per node, indexed by [`NodeId`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labels(Vec<Label>);

impl Labels {
    pub fn get(&self, u: NodeId) -> Label {
        self.0[u.index()]
    }

    pub fn is_top(&self, u: NodeId) -> bool {
        self.get(u) == Label::Top
    }

    pub fn as_slice(&self) -> &[Label] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count_top(&self) -> usize {
        self.0.iter().filter(|&&l| l == Label::Top).count()
    }
}

/// Parameters of one classification call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifyParams {
    /// Public upper bound `M` on the root weight.
    pub m_bound: f64,
    pub eta: f64,
    pub alpha: f64,
    pub tau: f64,
    pub eps: f64,
    pub delta: f64,
}

impl ClassifyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.m_bound.is_finite() && self.m_bound >= 0.0) {
            return Err(Error::param("M", self.m_bound, "must be finite and non-negative"));
        }
        check_unit_open("eta", self.eta)?;
        check_unit_open("alpha", self.alpha)?;
        check_positive("tau", self.tau)?;
        check_positive("eps", self.eps)?;
        check_unit_open("delta", self.delta)
    }

    /// `min(alpha, 1/2)`, the value every internal formula uses.
    pub fn effective_alpha(&self) -> f64 {
        self.alpha.min(0.5)
    }

    /// SVT cutoff `c = M / ((1 - alpha) tau)`.
    pub fn cutoff(&self) -> f64 {
        self.m_bound / ((1.0 - self.effective_alpha()) * self.tau)
    }

    /// SVT band `Delta = 16c/eps * ln(2d/eta)` for a tree of depth `d`.
    pub fn band(&self, depth: usize) -> f64 {
        16.0 * self.cutoff() / self.eps * (2.0 * depth as f64 / self.eta).ln()
    }

    /// Truncation radius `R = (2c/eps) ln(1 + c (e^{eps/2c} - 1) / delta)`.
    pub fn radius(&self) -> f64 {
        let c = self.cutoff();
        2.0 * c / self.eps * (c * (self.eps / (2.0 * c)).exp_m1() / self.delta).ln_1p()
    }

    /// Smallest `tau` for which the labels are correct with probability
    /// `1 - eta` on a tree of depth `d`.
    pub fn required_tau(&self, depth: usize) -> f64 {
        let a = self.effective_alpha();
        let svt = 48.0 * (2.0 * depth as f64 / self.eta).ln();
        let tl = 6.0 * ((self.eps / 2.0).exp_m1() / self.delta).ln_1p();
        (2.0 * self.m_bound / (a * self.eps)).sqrt() * svt.max(tl).sqrt()
    }

    pub fn budget(&self) -> PrivacyBudget {
        PrivacyBudget {
            eps: self.eps,
            delta: self.delta,
        }
    }
}

/// Labels every node of `tree`. `(eps, delta)`-DP in the leaf counts.
pub fn classify_tree(
    tree: &TreeShape,
    counts: &LeafCounts,
    params: &ClassifyParams,
    force: bool,
    rng: &mut RngState,
) -> Result<Labels> {
    params.validate()?;
    let weights = aggregate_exact(tree, counts)?;
    let mut labels = vec![Label::Bottom; tree.len()];
    classify_subtree(tree, weights.as_slice(), tree.root(), params, !force, rng, &mut labels)?;
    Ok(Labels(labels))
}

#[derive(Debug, Clone)]
pub struct ForestLabels {
    /// Labels per tree, in input order.
    pub labels: Vec<Labels>,
    pub budget: PrivacyBudget,
}

/// Classifies each tree of a node-disjoint forest with the same parameters.
/// The trees read disjoint leaves, so the budget is `(eps, delta)` overall.
pub fn classify_forest(
    forest: &[(&TreeShape, &LeafCounts)],
    params: &ClassifyParams,
    force: bool,
    rng: &mut RngState,
) -> Result<ForestLabels> {
    if forest.is_empty() {
        return Err(Error::Empty("forest"));
    }
    params.validate()?;
    let mut seen = HashSet::new();
    for (tree, _) in forest {
        for u in tree.nodes() {
            if !seen.insert(tree.name(u)) {
                return Err(Error::OverlappingForest(tree.name(u).to_owned()));
            }
        }
    }
    let mut labels = Vec::with_capacity(forest.len());
    for (tree, counts) in forest {
        labels.push(classify_tree(tree, counts, params, force, rng)?);
    }
    let budget = compose_parallel(&vec![params.budget(); forest.len()])?;
    Ok(ForestLabels { labels, budget })
}

/// Classifies the subtree rooted at `root`, overwriting its labels.
fn classify_subtree(
    tree: &TreeShape,
    weights: &[u64],
    root: NodeId,
    p: &ClassifyParams,
    check: bool,
    rng: &mut RngState,
    labels: &mut [Label],
) -> Result<()> {
    let nodes = tree.subtree(root);
    for &u in nodes {
        labels[u.index()] = Label::Bottom;
    }
    if p.m_bound < p.tau {
        return Ok(());
    }
    let base = tree.depth_of(root);
    let depth = nodes.iter().map(|&u| tree.depth_of(u) - base + 1).max().unwrap_or(1);
    if check {
        let required = p.required_tau(depth);
        if p.tau < required {
            return Err(Error::Precondition {
                what: "classification",
                required,
                actual: p.tau,
            });
        }
    }
    let mut levels = vec![Vec::new(); depth];
    for &u in nodes {
        levels[tree.depth_of(u) - base].push(u);
    }

    let c = p.cutoff();
    let radius = p.radius();
    let cut = p.tau - p.band(depth) - radius;
    let test_noise = TruncatedLaplace::new(2.0 * c / p.eps, radius)?;
    let mut svt = SvtSession::open(
        SvtParams {
            eta: p.eta,
            cutoff: c,
            tau: p.tau,
            eps: p.eps / 2.0,
            stream_len: depth,
        },
        rng,
    )?;

    for level in levels.iter().rev() {
        // Nodes already ⊤ were removed from this level by a deeper descendant.
        let query = level
            .iter()
            .filter(|u| labels[u.index()] == Label::Bottom)
            .map(|u| weights[u.index()])
            .max();
        let Some(f) = query else { continue };
        if svt.answer(f as f64, rng)? == SvtAnswer::Below {
            continue;
        }
        for &u in level {
            if labels[u.index()] == Label::Top {
                continue;
            }
            let noisy = weights[u.index()] as f64 + test_noise.sample(rng);
            if noisy >= cut {
                let mut v = u;
                // ⊤ is upward closed, so the walk stops at the first ⊤ ancestor.
                while labels[v.index()] == Label::Bottom {
                    labels[v.index()] = Label::Top;
                    match tree.parent(v) {
                        Some(p) if v != root => v = p,
                        _ => break,
                    }
                }
            }
        }
    }
    Ok(())
}

/// One level `i` of the threshold schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Level {
    /// Estimate `M_i` assigned to nodes that first classify ⊤ at this level.
    pub m: f64,
    pub tau: f64,
    /// Classification slack `alpha_i`.
    pub alpha: f64,
    pub eps: f64,
    pub delta: f64,
    pub eta: f64,
}

/// Geometric threshold schedule for [`reduce_estimate`].
///
/// With ratio `r = (1+a)(1-b)/(1+b)` and `b = a/(6+5a)`, level `i` has
/// `M_i = a tau_min r^i`, `tau_i = a tau_min r^{i-1} / (1+b)` and a budget
/// share proportional to `i r^{-(i-1)}`, normalized by
/// `C = sum_i i r^{-(i-1)} = (1 - 1/r)^{-2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleParams {
    pub alpha: f64,
    pub beta: f64,
    pub ratio: f64,
    pub normalizer: f64,
    /// Estimate for nodes that never classify ⊤.
    pub m0: f64,
    /// Root-weight bound `M` the schedule was built for.
    pub m_bound: f64,
    pub tau_min: f64,
    pub eta: f64,
    /// Depth of the tree the schedule targets.
    pub depth: usize,
    /// Levels `1..=ell`; `levels[i - 1]` is level `i`.
    pub levels: Vec<Level>,
}

/// `beta = alpha / (6 + 5 alpha)`.
pub fn schedule_beta(alpha: f64) -> f64 {
    alpha / (6.0 + 5.0 * alpha)
}

/// `r = (1 + alpha)(1 - beta) / (1 + beta)`, always above 1.
pub fn schedule_ratio(alpha: f64) -> f64 {
    let b = schedule_beta(alpha);
    (1.0 + alpha) * (1.0 - b) / (1.0 + b)
}

/// `C = (1 - 1/r)^{-2}`.
pub fn schedule_normalizer(alpha: f64) -> f64 {
    (1.0 - 1.0 / schedule_ratio(alpha)).powi(-2)
}

/// Smallest `tau_min` for which the schedule built by [`estimate`] with total
/// budget `(eps, delta)` meets every level's classification condition.
///
/// The binding level is `i = 1`, where the condition reads
/// `tau_min >= 24 (1+a)(1-b^2) C / (a b eps) * max{8 ln(4d/eta), ln(1 + 2(e^{eps/4} - 1)/delta)}`.
pub fn estimate_min_tau(alpha: f64, eps: f64, delta: f64, eta: f64, depth: usize) -> Result<f64> {
    check_unit_open("alpha", alpha)?;
    check_positive("eps", eps)?;
    check_unit_open("delta", delta)?;
    check_unit_open("eta", eta)?;
    let b = schedule_beta(alpha);
    let c = schedule_normalizer(alpha);
    let factor = 24.0 * (1.0 + alpha) * (1.0 - b * b) * c / (alpha * b * eps);
    let svt = 8.0 * (4.0 * depth as f64 / eta).ln();
    let tl = (2.0 * (eps / 4.0).exp_m1() / delta).ln_1p();
    Ok(factor * svt.max(tl))
}

fn approx_le(a: f64, b: f64) -> bool {
    a <= b + SCHEDULE_RTOL * b.abs().max(a.abs())
}

impl ScheduleParams {
    /// Builds the schedule for total budget `(eps, delta)`; the levels get
    /// `(eps/2, delta/2)` between them. Does not check `tau_min`.
    pub fn build(
        alpha: f64,
        eps: f64,
        delta: f64,
        eta: f64,
        tau_min: f64,
        m_bound: f64,
        depth: usize,
    ) -> Result<Self> {
        check_unit_open("alpha", alpha)?;
        check_positive("eps", eps)?;
        check_unit_open("delta", delta)?;
        check_unit_open("eta", eta)?;
        check_positive("tau_min", tau_min)?;
        if !(m_bound.is_finite() && m_bound >= 0.0) {
            return Err(Error::param("M", m_bound, "must be finite and non-negative"));
        }
        if depth == 0 {
            return Err(Error::param("depth", 0.0, "must be at least 1"));
        }
        let beta = schedule_beta(alpha);
        let ratio = schedule_ratio(alpha);
        let normalizer = schedule_normalizer(alpha);
        let m0 = alpha * tau_min;
        let span = (m_bound / m0).ln() / ratio.ln();
        let ell = if span.is_finite() && span > 1.0 { span.ceil() as usize } else { 1 };
        if ell > MAX_LEVELS {
            return Err(Error::ResourceCap {
                what: "schedule levels",
                requested: ell as u128,
                cap: MAX_LEVELS as u128,
            });
        }
        let levels = (1..=ell)
            .map(|i| {
                let shrink = i as f64 * ratio.powi(1 - i as i32) / (2.0 * normalizer);
                Level {
                    m: m0 * ratio.powi(i as i32),
                    tau: m0 / (1.0 + beta) * ratio.powi(i as i32 - 1),
                    alpha: beta,
                    eps: eps * shrink,
                    delta: delta * shrink,
                    eta: eta / 2f64.powi(i as i32),
                }
            })
            .collect();
        Ok(ScheduleParams {
            alpha,
            beta,
            ratio,
            normalizer,
            m0,
            m_bound,
            tau_min,
            eta,
            depth,
            levels,
        })
    }

    pub fn ell(&self) -> usize {
        self.levels.len()
    }

    /// Level `i` in `1..=ell`.
    pub fn level(&self, i: usize) -> &Level {
        &self.levels[i - 1]
    }

    /// Sum of the per-level budgets.
    pub fn budget(&self) -> PrivacyBudget {
        PrivacyBudget {
            eps: self.levels.iter().map(|l| l.eps).sum(),
            delta: self.levels.iter().map(|l| l.delta).sum(),
        }
    }

    /// Checks the five reduction constraints, numbered (1) to (5) in the
    /// [`Error::Schedule`] it returns.
    pub fn validate(&self) -> Result<()> {
        let fail = |equation, level, detail: String| Err(Error::Schedule { equation, level, detail });
        if self.levels.is_empty() {
            return fail(3, 0, "schedule has no levels".into());
        }
        for (k, l) in self.levels.iter().enumerate() {
            let p = ClassifyParams {
                m_bound: l.m,
                eta: l.eta,
                alpha: l.alpha,
                tau: l.tau,
                eps: l.eps,
                delta: l.delta,
            };
            let required = p.required_tau(self.depth);
            if !approx_le(required, l.tau) {
                return fail(1, k + 1, format!("tau_i = {} < {}", l.tau, required));
            }
        }
        let eta_sum: f64 = self.levels.iter().map(|l| l.eta).sum();
        if !approx_le(eta_sum, self.eta) {
            return fail(2, 0, format!("sum of eta_i = {eta_sum} > {}", self.eta));
        }
        let mut prev_m = self.m0;
        for (k, l) in self.levels.iter().enumerate() {
            if !approx_le((1.0 + l.alpha) * l.tau, prev_m) {
                return fail(3, k, format!("M_{k} = {prev_m} < (1 + alpha_{0}) tau_{0}", k + 1));
            }
            prev_m = l.m;
        }
        if !approx_le(self.m_bound, prev_m) {
            return fail(3, self.ell(), format!("M_ell = {prev_m} < M = {}", self.m_bound));
        }
        for (k, l) in self.levels.iter().enumerate() {
            let lo = (1.0 - l.alpha) * l.tau;
            let hi = (1.0 + self.alpha) * (1.0 - l.alpha) * l.tau;
            if !(approx_le(lo, l.m) && approx_le(l.m, hi)) {
                return fail(4, k + 1, format!("M_i = {} outside [{lo}, {hi}]", l.m));
            }
        }
        if !(self.m0 >= 0.0 && approx_le(self.m0, self.alpha * self.tau_min)) {
            return fail(5, 0, format!("M_0 = {} outside [0, alpha tau_min]", self.m0));
        }
        Ok(())
    }
}

/// Builds the schedule and refuses when `tau_min` is below [`estimate_min_tau`].
pub fn schedule_params(
    alpha: f64,
    eps: f64,
    delta: f64,
    eta: f64,
    tau_min: f64,
    m_bound: f64,
    depth: usize,
) -> Result<ScheduleParams> {
    let required = estimate_min_tau(alpha, eps, delta, eta, depth)?;
    if tau_min < required {
        return Err(Error::Precondition {
            what: "estimation",
            required,
            actual: tau_min,
        });
    }
    let s = ScheduleParams::build(alpha, eps, delta, eta, tau_min, m_bound, depth)?;
    s.validate()?;
    Ok(s)
}

/// Runs classification level by level and assigns every node one of
/// `M_0, ..., M_ell`. `(sum eps_i, sum delta_i)`-DP. The caller guarantees
/// that the root weight is at most `schedule.m_bound`.
pub fn reduce_estimate(
    tree: &TreeShape,
    counts: &LeafCounts,
    schedule: &ScheduleParams,
    force: bool,
    rng: &mut RngState,
) -> Result<NodeEstimates> {
    reduce_weights(tree, &aggregate_exact(tree, counts)?, schedule, force, rng)
}

fn reduce_weights(
    tree: &TreeShape,
    weights: &NodeWeights,
    schedule: &ScheduleParams,
    force: bool,
    rng: &mut RngState,
) -> Result<NodeEstimates> {
    if !force {
        schedule.validate()?;
    }
    let w = weights.as_slice();
    let mut out = NodeEstimates::filled(tree, f64::NAN);
    let mut labels = vec![Label::Bottom; tree.len()];
    let mut forest = vec![tree.root()];
    let mut next = Vec::new();
    for level in schedule.levels.iter().rev() {
        let params = ClassifyParams {
            m_bound: level.m,
            eta: level.eta,
            alpha: level.alpha,
            tau: level.tau,
            eps: level.eps,
            delta: level.delta,
        };
        next.clear();
        for &r in &forest {
            classify_subtree(tree, w, r, &params, false, rng, &mut labels)?;
            // ⊤ nodes are estimated now; maximal ⊥ subtrees move down a level.
            for &u in tree.subtree(r) {
                if labels[u.index()] == Label::Top {
                    out.set(u, level.m);
                } else if u == r || tree.parent(u).is_some_and(|p| labels[p.index()] == Label::Top) {
                    next.push(u);
                }
            }
        }
        std::mem::swap(&mut forest, &mut next);
    }
    for &r in &forest {
        for &u in tree.subtree(r) {
            out.set(u, schedule.m0);
        }
    }
    Ok(out)
}

/// Per-node thresholds `tau_u` with the accuracy target `(alpha, eta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracySpec {
    pub alpha: f64,
    pub eta: f64,
    thresholds: Vec<f64>,
    tau_min: f64,
    tau_max: f64,
}

impl AccuracySpec {
    pub fn uniform(tree: &TreeShape, alpha: f64, eta: f64, tau: f64) -> Result<Self> {
        Self::from_thresholds(alpha, eta, vec![tau; tree.len()])
    }

    /// `thresholds[u.index()]` is `tau_u`.
    pub fn from_thresholds(alpha: f64, eta: f64, thresholds: Vec<f64>) -> Result<Self> {
        check_unit_open("alpha", alpha)?;
        check_unit_open("eta", eta)?;
        if thresholds.is_empty() {
            return Err(Error::Empty("thresholds"));
        }
        let mut tau_min = f64::INFINITY;
        let mut tau_max = 0.0f64;
        for &t in &thresholds {
            if !(t.is_finite() && t >= 0.0) {
                return Err(Error::param("tau_u", t, "must be finite and non-negative"));
            }
            tau_min = tau_min.min(t);
            tau_max = tau_max.max(t);
        }
        Ok(AccuracySpec {
            alpha,
            eta,
            thresholds,
            tau_min,
            tau_max,
        })
    }

    pub fn threshold(&self, u: NodeId) -> f64 {
        self.thresholds[u.index()]
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn tau_min(&self) -> f64 {
        self.tau_min
    }

    pub fn tau_max(&self) -> f64 {
        self.tau_max
    }

    fn check_tree(&self, tree: &TreeShape) -> Result<()> {
        if self.thresholds.len() != tree.len() {
            return Err(Error::Config(format!(
                "{} thresholds for a tree of {} nodes",
                self.thresholds.len(),
                tree.len()
            )));
        }
        Ok(())
    }
}

/// Output of [`estimate`] together with the public intermediate values.
#[derive(Debug, Clone)]
pub struct EstimateRelease {
    pub estimates: NodeEstimates,
    /// Private upper bound on the root weight.
    pub m_bound: f64,
    pub schedule: ScheduleParams,
    pub budget: PrivacyBudget,
}

/// The full estimation mechanism with a fixed accuracy target.
#[derive(Debug, Clone)]
pub struct Estimator {
    pub spec: AccuracySpec,
    pub eps: f64,
    pub delta: f64,
    /// Skip the `tau_min` precondition. Privacy is unaffected.
    pub force: bool,
}

impl Estimator {
    pub fn new(spec: AccuracySpec, eps: f64, delta: f64) -> Result<Self> {
        check_positive("eps", eps)?;
        check_unit_open("delta", delta)?;
        if spec.tau_min() <= 0.0 {
            return Err(Error::param("tau_min", spec.tau_min(), "must be positive"));
        }
        Ok(Estimator {
            spec,
            eps,
            delta,
            force: false,
        })
    }

    pub fn forced(mut self, force: bool) -> Self {
        self.force = force;
        self
    }

    /// Minimum admissible `tau_min` for a tree of this depth.
    pub fn min_tau(&self, depth: usize) -> Result<f64> {
        estimate_min_tau(self.spec.alpha, self.eps, self.delta, self.spec.eta, depth)
    }

    pub fn release_full(&self, tree: &TreeShape, weights: &NodeWeights, rng: &mut RngState) -> Result<EstimateRelease> {
        self.spec.check_tree(tree)?;
        let (alpha, eta, tau_min) = (self.spec.alpha, self.spec.eta, self.spec.tau_min());
        let depth = tree.depth();
        if !self.force {
            let required = self.min_tau(depth)?;
            if tau_min < required {
                return Err(Error::Precondition {
                    what: "estimation",
                    required,
                    actual: tau_min,
                });
            }
        }
        let half = PrivacyBudget {
            eps: self.eps / 2.0,
            delta: self.delta / 2.0,
        };
        let radius = trunc_lap_radius(half.eps, half.delta)?;
        let noise = TruncatedLaplace::new(1.0 / half.eps, radius)?;
        // Noise is at least -R, so M never undercuts the root weight.
        let m_bound = weights.get(tree.root()) as f64 + radius + noise.sample(rng);
        let schedule = ScheduleParams::build(alpha, self.eps, self.delta, eta, tau_min, m_bound, depth)?;
        let estimates = reduce_weights(tree, weights, &schedule, self.force, rng)?;
        Ok(EstimateRelease {
            estimates,
            m_bound,
            schedule,
            budget: compose_basic(&[half, half])?,
        })
    }

    pub fn budget(&self) -> PrivacyBudget {
        PrivacyBudget {
            eps: self.eps,
            delta: self.delta,
        }
    }
}

impl Mechanism for Estimator {
    fn release(&self, tree: &TreeShape, weights: &NodeWeights, rng: &mut RngState) -> Result<NodeEstimates> {
        Ok(self.release_full(tree, weights, rng)?.estimates)
    }
}

/// `(eps, delta)`-DP estimation; refuses when `tau_min` is too small.
pub fn estimate(
    tree: &TreeShape,
    counts: &LeafCounts,
    spec: &AccuracySpec,
    eps: f64,
    delta: f64,
    rng: &mut RngState,
) -> Result<EstimateRelease> {
    Estimator::new(spec.clone(), eps, delta)?.release_full(tree, &aggregate_exact(tree, counts)?, rng)
}

#[derive(Debug, Clone)]
pub struct ClampRelease {
    pub estimates: NodeEstimates,
    /// Half-width `R` of every clamp window.
    pub radius: f64,
}

/// Clamp radius for a tree of depth `d`: truncated-Laplace radius at
/// `(eps/(2d), delta/(2d))`.
pub fn clamp_radius(depth: usize, eps: f64, delta: f64) -> Result<f64> {
    let k = 2.0 * depth as f64;
    trunc_lap_radius(eps / k, delta / k)
}

/// Clamps `raw` into `[w_u + z_u - R, w_u + z_u + R]` with fresh
/// `z_u ~ TruncLap(2d/eps, R)`. Combined with an `(eps/2, delta/2)`-DP `raw`,
/// the output is `(eps, delta)`-DP and `|out_u - w_u| <= min(|raw_u - w_u|, 2R)`.
pub fn clamp_to_mrmse(
    tree: &TreeShape,
    counts: &LeafCounts,
    raw: &NodeEstimates,
    eps: f64,
    delta: f64,
    rng: &mut RngState,
) -> Result<ClampRelease> {
    clamp_weights(tree, &aggregate_exact(tree, counts)?, raw, eps, delta, rng)
}

pub fn clamp_weights(
    tree: &TreeShape,
    weights: &NodeWeights,
    raw: &NodeEstimates,
    eps: f64,
    delta: f64,
    rng: &mut RngState,
) -> Result<ClampRelease> {
    check_positive("eps", eps)?;
    check_unit_open("delta", delta)?;
    if raw.len() != tree.len() {
        let missing = tree.nodes().nth(raw.len().min(tree.len())).unwrap_or(tree.root());
        return Err(Error::MissingEstimate(tree.name(missing).to_owned()));
    }
    if let Some(u) = tree.nodes().find(|&u| raw.get(u).is_nan()) {
        return Err(Error::MissingEstimate(tree.name(u).to_owned()));
    }
    let radius = clamp_radius(tree.depth(), eps, delta)?;
    let noise = TruncatedLaplace::new(2.0 * tree.depth() as f64 / eps, radius)?;
    let mut out = raw.clone();
    for u in tree.nodes() {
        let center = weights.get(u) as f64 + noise.sample(rng);
        out.set(u, raw.get(u).clamp(center - radius, center + radius));
    }
    Ok(ClampRelease {
        estimates: out,
        radius,
    })
}

/// Estimation at `(eps/2, delta/2)` followed by clamping; `(eps, delta)`-DP overall.
#[derive(Debug, Clone)]
pub struct ClampedEstimator {
    pub inner: Estimator,
    pub eps: f64,
    pub delta: f64,
}

impl ClampedEstimator {
    pub fn new(spec: AccuracySpec, eps: f64, delta: f64) -> Result<Self> {
        Ok(ClampedEstimator {
            inner: Estimator::new(spec, eps / 2.0, delta / 2.0)?,
            eps,
            delta,
        })
    }

    pub fn forced(mut self, force: bool) -> Self {
        self.inner.force = force;
        self
    }

    pub fn budget(&self) -> PrivacyBudget {
        PrivacyBudget {
            eps: self.eps,
            delta: self.delta,
        }
    }
}

impl Mechanism for ClampedEstimator {
    fn release(&self, tree: &TreeShape, weights: &NodeWeights, rng: &mut RngState) -> Result<NodeEstimates> {
        let raw = self.inner.release(tree, weights, rng)?;
        Ok(clamp_weights(tree, weights, &raw, self.eps, self.delta, rng)?.estimates)
    }
}
