//! Monte Carlo error metrics.
//!
//! * `RMSE_a(z~, z) = sqrt(E[max(|z~ - z| - a z, 0)^2])`, and its maximum over
//!   nodes and a declared input suite (the exact maximum over all inputs is
//!   not computable; the suite is an empirical probe).
//! * Per-node failure frequency of `|w~ - w| <= a max(w, tau_u)`.
//! * `REL_k(z~, z) = E|z~ - z| / max(z, k)`.
//!
//! Trial `t` of input `i` draws from `rng.derive(i).derive(t)`. Trials run in
//! fixed-size chunks in parallel and are merged in chunk order, so results do
//! not depend on the thread count.

use rayon::prelude::*;

use crate::error::{check_positive, Error, Result};
use crate::hierarchy::AccuracySpec;
use crate::mechanism::Mechanism;
use crate::noise::RngState;
use crate::tree::{aggregate_exact, LeafCounts, NodeId, NodeWeights, TreeShape};

const CHUNK: u64 = 64;
const BATCH: usize = 32;

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub stderr: f64,
}

/// Empirical failure frequency with a Wilson interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FailureRate {
    pub failures: u64,
    pub trials: u64,
    pub rate: f64,
    /// Wilson interval at [`WILSON_Z`] standard deviations.
    pub lower: f64,
    pub upper: f64,
}

/// Width of the Wilson interval used to flag nodes.
pub const WILSON_Z: f64 = 3.0;

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let center = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

impl FailureRate {
    pub fn new(failures: u64, trials: u64) -> Self {
        let (lower, upper) = wilson_interval(failures, trials, WILSON_Z);
        FailureRate {
            failures,
            trials,
            rate: if trials == 0 { 0.0 } else { failures as f64 / trials as f64 },
            lower,
            upper,
        }
    }

    /// The data are consistent with a true rate of at most `eta`.
    pub fn within(&self, eta: f64) -> bool {
        self.lower <= eta
    }
}

/// Residual `max(|est - truth| - alpha truth, 0)`.
pub fn alpha_residual(est: f64, truth: f64, alpha: f64) -> f64 {
    ((est - truth).abs() - alpha * truth).max(0.0)
}

fn mean_and_se(sum: f64, sum_sq: f64, n: u64) -> McEstimate {
    let n = n as f64;
    let mean = sum / n;
    let var = if n > 1.0 { ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
    McEstimate {
        value: mean,
        stderr: (var / n).sqrt(),
    }
}

/// `sqrt` of a mean estimate, with the delta-method standard error.
fn root_of(m: McEstimate) -> McEstimate {
    let value = m.value.max(0.0).sqrt();
    McEstimate {
        value,
        stderr: if value > 0.0 { m.stderr / (2.0 * value) } else { 0.0 },
    }
}

/// `RMSE_alpha` of stored samples against a true value.
pub fn rmse_alpha(samples: &[f64], truth: f64, alpha: f64) -> Result<McEstimate> {
    if samples.is_empty() {
        return Err(Error::Empty("samples"));
    }
    let (mut s, mut s2) = (0.0, 0.0);
    for &x in samples {
        let r2 = alpha_residual(x, truth, alpha).powi(2);
        s += r2;
        s2 += r2 * r2;
    }
    Ok(root_of(mean_and_se(s, s2, samples.len() as u64)))
}

/// `REL_kappa` of stored samples against a true value.
pub fn rel_kappa(samples: &[f64], truth: f64, kappa: f64) -> Result<McEstimate> {
    check_positive("kappa", kappa)?;
    if samples.is_empty() {
        return Err(Error::Empty("samples"));
    }
    let scale = truth.max(kappa);
    let (mut s, mut s2) = (0.0, 0.0);
    for &x in samples {
        let e = (x - truth).abs() / scale;
        s += e;
        s2 += e * e;
    }
    Ok(mean_and_se(s, s2, samples.len() as u64))
}

/// What to measure at every node.
#[derive(Debug, Clone, Copy)]
pub struct EvalOptions<'a> {
    pub alpha: f64,
    pub trials: u64,
    /// Thresholds for failure counting; skipped when absent.
    pub spec: Option<&'a AccuracySpec>,
    /// Smoothing factor for `REL_kappa`; skipped when absent.
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Acc {
    r2: f64,
    r4: f64,
    e2: f64,
    e4: f64,
    abs: f64,
    abs2: f64,
    fails: u64,
}

impl Acc {
    fn merge(&mut self, o: &Acc) {
        self.r2 += o.r2;
        self.r4 += o.r4;
        self.e2 += o.e2;
        self.e4 += o.e4;
        self.abs += o.abs;
        self.abs2 += o.abs2;
        self.fails += o.fails;
    }
}

/// Metrics for one node of one suite input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeStat {
    /// Position of the input in the suite.
    pub input: usize,
    pub node: NodeId,
    pub weight: u64,
    pub rmse_alpha: McEstimate,
    /// Plain RMSE, i.e. `RMSE_0`.
    pub rmse: McEstimate,
    pub failure: Option<FailureRate>,
    pub rel_kappa: Option<McEstimate>,
}

#[derive(Debug, Clone)]
pub struct ErrorReport {
    pub alpha: f64,
    pub trials: u64,
    pub nodes: Vec<NodeStat>,
}

impl ErrorReport {
    /// Largest per-node `RMSE_alpha`, with the node it came from.
    pub fn mrmse(&self) -> (McEstimate, &NodeStat) {
        let worst = self
            .nodes
            .iter()
            .max_by(|a, b| a.rmse_alpha.value.total_cmp(&b.rmse_alpha.value))
            .expect("reports are never empty");
        (worst.rmse_alpha, worst)
    }

    pub fn max_failure_rate(&self) -> Option<f64> {
        self.nodes.iter().filter_map(|s| s.failure.map(|f| f.rate)).reduce(f64::max)
    }

    /// Nodes whose failure frequency is significantly above `eta`.
    pub fn flagged(&self, eta: f64) -> Vec<&NodeStat> {
        self.nodes
            .iter()
            .filter(|s| s.failure.is_some_and(|f| !f.within(eta)))
            .collect()
    }
}

/// Runs `opts.trials` independent releases and summarizes every node.
pub fn evaluate<M: Mechanism + ?Sized>(
    mech: &M,
    tree: &TreeShape,
    counts: &LeafCounts,
    opts: &EvalOptions<'_>,
    rng: &RngState,
) -> Result<ErrorReport> {
    evaluate_input(mech, tree, &aggregate_exact(tree, counts)?, 0, opts, rng)
}

fn evaluate_input<M: Mechanism + ?Sized>(
    mech: &M,
    tree: &TreeShape,
    weights: &NodeWeights,
    input: usize,
    opts: &EvalOptions<'_>,
    rng: &RngState,
) -> Result<ErrorReport> {
    if opts.trials == 0 {
        return Err(Error::param("trials", 0.0, "must be at least 1"));
    }
    if !(opts.alpha.is_finite() && opts.alpha >= 0.0) {
        return Err(Error::param("alpha", opts.alpha, "must be finite and non-negative"));
    }
    if let Some(k) = opts.kappa {
        check_positive("kappa", k)?;
    }
    if let Some(spec) = opts.spec {
        if spec.thresholds().len() != tree.len() {
            return Err(Error::Config(format!(
                "{} thresholds for a tree of {} nodes",
                spec.thresholds().len(),
                tree.len()
            )));
        }
    }
    let n = tree.len();
    let truth: Vec<f64> = weights.as_slice().iter().map(|&w| w as f64).collect();
    let chunks = opts.trials.div_ceil(CHUNK);
    let mut total = vec![Acc::default(); n];

    let run_chunk = |k: u64| -> Result<Vec<Acc>> {
        let mut acc = vec![Acc::default(); n];
        for t in k * CHUNK..((k + 1) * CHUNK).min(opts.trials) {
            let est = mech.release(tree, weights, &mut rng.derive(t))?;
            if est.len() != n {
                let u = tree.nodes().nth(est.len().min(n - 1)).unwrap_or(tree.root());
                return Err(Error::MissingEstimate(tree.name(u).to_owned()));
            }
            for (i, (a, (&z, &x))) in acc.iter_mut().zip(truth.iter().zip(est.as_slice())).enumerate() {
                let e = (x - z).abs();
                let r2 = alpha_residual(x, z, opts.alpha).powi(2);
                a.r2 += r2;
                a.r4 += r2 * r2;
                a.e2 += e * e;
                a.e4 += e * e * e * e;
                a.abs += e;
                a.abs2 += e * e;
                if let Some(spec) = opts.spec {
                    a.fails += (e > spec.alpha * z.max(spec.thresholds()[i])) as u64;
                }
            }
        }
        Ok(acc)
    };

    let mut start = 0;
    while start < chunks {
        let end = (start + BATCH as u64).min(chunks);
        let parts: Vec<Result<Vec<Acc>>> = (start..end).into_par_iter().map(run_chunk).collect();
        for part in parts {
            for (t, a) in total.iter_mut().zip(&part?) {
                t.merge(a);
            }
        }
        start = end;
    }

    let trials = opts.trials;
    let nodes = tree
        .nodes()
        .zip(&total)
        .map(|(u, a)| NodeStat {
            input,
            node: u,
            weight: weights.get(u),
            rmse_alpha: root_of(mean_and_se(a.r2, a.r4, trials)),
            rmse: root_of(mean_and_se(a.e2, a.e4, trials)),
            failure: opts.spec.map(|_| FailureRate::new(a.fails, trials)),
            rel_kappa: opts.kappa.map(|k| {
                let s = weights.get(u) as f64;
                let m = mean_and_se(a.abs, a.abs2, trials);
                let scale = s.max(k);
                McEstimate {
                    value: m.value / scale,
                    stderr: m.stderr / scale,
                }
            }),
        })
        .collect();
    Ok(ErrorReport {
        alpha: opts.alpha,
        trials,
        nodes,
    })
}

/// `RMSE_alpha` at one node.
pub fn rmse_alpha_mc<M: Mechanism + ?Sized>(
    mech: &M,
    tree: &TreeShape,
    counts: &LeafCounts,
    node: &str,
    alpha: f64,
    trials: u64,
    rng: &RngState,
) -> Result<McEstimate> {
    let u = tree.resolve(node)?;
    let opts = EvalOptions {
        alpha,
        trials,
        spec: None,
        kappa: None,
    };
    Ok(evaluate(mech, tree, counts, &opts, rng)?.nodes[u.index()].rmse_alpha)
}

/// Per-node `RMSE_alpha` over every input of the suite; input `i` uses
/// `rng.derive(i)`.
pub fn mrmse_over_suite<M: Mechanism + ?Sized>(
    mech: &M,
    suite: &[(&TreeShape, &LeafCounts)],
    alpha: f64,
    trials: u64,
    rng: &RngState,
) -> Result<ErrorReport> {
    let opts = EvalOptions {
        alpha,
        trials,
        spec: None,
        kappa: None,
    };
    suite_report(mech, suite, &opts, rng)
}

/// Like [`mrmse_over_suite`] with every metric in `opts`. The thresholds in
/// `opts.spec`, if any, must fit every tree of the suite.
pub fn suite_report<M: Mechanism + ?Sized>(
    mech: &M,
    suite: &[(&TreeShape, &LeafCounts)],
    opts: &EvalOptions<'_>,
    rng: &RngState,
) -> Result<ErrorReport> {
    if suite.is_empty() {
        return Err(Error::Empty("input suite"));
    }
    let mut nodes = Vec::new();
    for (i, (tree, counts)) in suite.iter().enumerate() {
        let w = aggregate_exact(tree, counts)?;
        nodes.extend(evaluate_input(mech, tree, &w, i, opts, &rng.derive(i as u64))?.nodes);
    }
    Ok(ErrorReport {
        alpha: opts.alpha,
        trials: opts.trials,
        nodes,
    })
}

/// Per-node failure frequencies of `|w~ - w| <= alpha max(w, tau_u)`.
pub fn accuracy_check<M: Mechanism + ?Sized>(
    mech: &M,
    tree: &TreeShape,
    counts: &LeafCounts,
    spec: &AccuracySpec,
    trials: u64,
    rng: &RngState,
) -> Result<ErrorReport> {
    let opts = EvalOptions {
        alpha: spec.alpha,
        trials,
        spec: Some(spec),
        kappa: None,
    };
    evaluate(mech, tree, counts, &opts, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::LaplaceTree;
    use crate::mechanism::Exact;
    use crate::noise::Laplace;
    use crate::tree::NodeEstimates;
    use proptest::prelude::*;

    fn offset(by: f64) -> impl Fn(&TreeShape, &NodeWeights, &mut RngState) -> Result<NodeEstimates> + Sync {
        move |_: &TreeShape, w: &NodeWeights, _: &mut RngState| {
            Ok(NodeEstimates::new(w.as_slice().iter().map(|&x| x as f64 + by).collect()))
        }
    }

    fn lap_noise(b: f64) -> impl Fn(&TreeShape, &NodeWeights, &mut RngState) -> Result<NodeEstimates> + Sync {
        move |_: &TreeShape, w: &NodeWeights, rng: &mut RngState| {
            let lap = Laplace::new(b)?;
            Ok(NodeEstimates::new(w.as_slice().iter().map(|&x| x as f64 + lap.sample(rng)).collect()))
        }
    }

    #[test]
    fn identity_and_offset() {
        let t = TreeShape::complete_binary(3).unwrap();
        let c = LeafCounts::uniform(&t, 7);
        let rng = RngState::seed_from(1);
        for a in [0.0, 0.3, 1.0] {
            assert_eq!(rmse_alpha_mc(&Exact, &t, &c, "n5", a, 10, &rng).unwrap().value, 0.0);
        }
        let r = rmse_alpha_mc(&offset(5.0), &t, &c, "n1", 0.0, 10, &rng).unwrap();
        assert!((r.value - 5.0).abs() < 1e-12 && r.stderr < 1e-9);
        assert!(rmse_alpha_mc(&Exact, &t, &c, "zz", 0.0, 10, &rng).is_err());
        assert!(rmse_alpha_mc(&Exact, &t, &c, "n1", 0.0, 0, &rng).is_err());
    }

    #[test]
    fn laplace_rmse() {
        let t = TreeShape::complete_binary(2).unwrap();
        let c = LeafCounts::uniform(&t, 4);
        let r = rmse_alpha_mc(&lap_noise(3.0), &t, &c, "n2", 0.0, 200_000, &RngState::seed_from(2)).unwrap();
        let target = 2f64.sqrt() * 3.0;
        assert!((r.value - target).abs() < 4.0 * r.stderr, "{r:?}");
        assert!(r.stderr < 0.02);
    }

    #[test]
    fn suite_laplace_baseline() {
        let t = TreeShape::complete_binary(4).unwrap();
        let z = LeafCounts::zeros(&t);
        let rep = mrmse_over_suite(&LaplaceTree::new(1.0).unwrap(), &[(&t, &z)], 0.0, 20_000, &RngState::seed_from(3))
            .unwrap();
        let (m, _) = rep.mrmse();
        let target = 2f64.sqrt() * 4.0;
        // The max over 15 nodes sits a little above the common value.
        assert!(m.value > target - 3.0 * m.stderr && m.value < target + 5.0 * m.stderr, "{m:?}");
        assert!(mrmse_over_suite(&Exact, &[], 0.0, 1, &RngState::seed_from(3)).is_err());
    }

    #[test]
    fn all_zero_output_with_alpha_one() {
        let t = TreeShape::complete_binary(3).unwrap();
        let c = LeafCounts::uniform(&t, 9);
        let zero = |_: &TreeShape, w: &NodeWeights, _: &mut RngState| Ok(NodeEstimates::new(vec![0.0; w.len()]));
        let rep = mrmse_over_suite(&zero, &[(&t, &c)], 1.0, 5, &RngState::seed_from(4)).unwrap();
        assert_eq!(rep.mrmse().0.value, 0.0);
    }

    #[test]
    fn singleton_suite_matches_nodes_and_grows() {
        let t = TreeShape::complete_binary(3).unwrap();
        let small = TreeShape::complete_binary(2).unwrap();
        let c = LeafCounts::zeros(&t);
        let cs = LeafCounts::zeros(&small);
        let mech = LaplaceTree::new(1.0).unwrap();
        let rng = RngState::seed_from(5);
        let one = mrmse_over_suite(&mech, &[(&t, &c)], 0.2, 500, &rng).unwrap();
        let direct = evaluate(
            &mech,
            &t,
            &c,
            &EvalOptions {
                alpha: 0.2,
                trials: 500,
                spec: None,
                kappa: None,
            },
            &rng.derive(0),
        )
        .unwrap();
        let max_direct = direct.nodes.iter().map(|s| s.rmse_alpha.value).fold(0.0, f64::max);
        assert_eq!(one.mrmse().0.value, max_direct);
        let two = mrmse_over_suite(&mech, &[(&t, &c), (&small, &cs)], 0.2, 500, &rng).unwrap();
        assert!(two.mrmse().0.value >= one.mrmse().0.value);
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let t = TreeShape::complete_binary(5).unwrap();
        let c = LeafCounts::uniform(&t, 2);
        let mech = LaplaceTree::new(0.5).unwrap();
        let opts = EvalOptions {
            alpha: 0.1,
            trials: 1000,
            spec: None,
            kappa: Some(1.0),
        };
        let rng = RngState::seed_from(6);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| evaluate(&mech, &t, &c, &opts, &rng).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.nodes, b.nodes);
    }

    #[test]
    fn failure_rate_matches_laplace_tail() {
        let t = TreeShape::complete_binary(3).unwrap();
        let c = LeafCounts::uniform(&t, 10);
        let w = aggregate_exact(&t, &c).unwrap();
        let spec = AccuracySpec::uniform(&t, 0.5, 0.05, 15.0).unwrap();
        let b = 4.0;
        let trials = 40_000;
        let rep = accuracy_check(&lap_noise(b), &t, &c, &spec, trials, &RngState::seed_from(7)).unwrap();
        for s in &rep.nodes {
            let wu = w.get(s.node) as f64;
            let p = (-0.5 * wu.max(15.0) / b).exp();
            let f = s.failure.unwrap();
            let se = (p * (1.0 - p) / trials as f64).sqrt();
            assert!((f.rate - p).abs() < 4.0 * se + 1e-4, "{} {p}", f.rate);
            assert!(f.lower <= p && p <= f.upper);
        }
        let exact = accuracy_check(&Exact, &t, &c, &spec, 20, &RngState::seed_from(7)).unwrap();
        assert_eq!(exact.max_failure_rate(), Some(0.0));
        assert!(exact.flagged(0.0).is_empty());
    }

    #[test]
    fn wilson_reference_values() {
        // Closed form at k = 0: upper = z^2 / (n + z^2).
        let (lo, hi) = wilson_interval(0, 100, 3.0);
        assert_eq!(lo, 0.0);
        assert!((hi - 9.0 / 109.0).abs() < 1e-12);
        let (lo, hi) = wilson_interval(50, 100, 2.0);
        assert!((lo + hi - 1.0).abs() < 1e-12);
        assert!(lo < 0.5 && hi > 0.5);
        assert!(FailureRate::new(10, 100).within(0.05));
        assert!(!FailureRate::new(30, 100).within(0.05));
    }

    #[test]
    fn rel_kappa_values() {
        assert_eq!(rel_kappa(&[5.0, 5.0], 5.0, 1.0).unwrap().value, 0.0);
        assert!((rel_kappa(&[3.0], 0.0, 6.0).unwrap().value - 0.5).abs() < 1e-15);
        assert!(rel_kappa(&[3.0], 0.0, 0.0).is_err());
        assert!(rel_kappa(&[], 0.0, 1.0).is_err());
    }

    #[test]
    fn rel_kappa_bounded_by_rmse_alpha_on_fixtures() {
        let t = TreeShape::complete_binary(4).unwrap();
        let mech = LaplaceTree::new(1.0).unwrap();
        for (k, counts) in [LeafCounts::zeros(&t), LeafCounts::uniform(&t, 3), LeafCounts::uniform(&t, 50)]
            .iter()
            .enumerate()
        {
            for &(alpha, kappa) in &[(0.0, 1.0), (0.1, 5.0), (0.5, 20.0)] {
                let opts = EvalOptions {
                    alpha,
                    trials: 5000,
                    spec: None,
                    kappa: Some(kappa),
                };
                let rep = evaluate(&mech, &t, counts, &opts, &RngState::seed_from(k as u64)).unwrap();
                for s in &rep.nodes {
                    let rel = s.rel_kappa.unwrap().value;
                    let bound = 2f64.sqrt() * (s.rmse_alpha.value / kappa + alpha);
                    assert!(rel <= bound, "{rel} > {bound}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn rmse_alpha_monotone(xs in prop::collection::vec(-100.0..100.0f64, 1..50), truth in 0.0..50.0f64,
                               a in 0.0..1.0f64, b in 0.0..1.0f64) {
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assert!(rmse_alpha(&xs, truth, hi).unwrap().value <= rmse_alpha(&xs, truth, lo).unwrap().value);
            let plain = (xs.iter().map(|x| (x - truth).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
            prop_assert!((rmse_alpha(&xs, truth, 0.0).unwrap().value - plain).abs() < 1e-9 * plain.max(1.0));
        }

        #[test]
        fn rel_kappa_bounded_by_rmse_alpha_on_samples(xs in prop::collection::vec(0.0..100.0f64, 1..50), truth in 0.0..50.0f64,
                                          alpha in 0.0..1.0f64, kappa in 0.1..100.0f64) {
            let rel = rel_kappa(&xs, truth, kappa).unwrap().value;
            let r = rmse_alpha(&xs, truth, alpha).unwrap().value;
            prop_assert!(rel <= 2f64.sqrt() * (r / kappa + alpha) + 1e-12);
        }
    }
}
