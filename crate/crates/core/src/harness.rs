//! File formats, experiment configuration and CSV reporting.
//!
//! Input files are UTF-8, one record per line, two TAB-separated fields.
//! Blank lines and lines starting with `#` are skipped.
//!
//! * tree: `node_id<TAB>parent_id`, with `-` as the root's parent;
//! * counts: `leaf_id<TAB>count`, unlisted leaves are zero;
//! * thresholds: `node_id<TAB>tau`, unlisted nodes take a default;
//! * estimates: `node_id<TAB>value`.
//!
//! Every CSV file has the columns of [`Row`]. Files are written to
//! `<out>.tmp` and renamed into place, so a failed run leaves no output.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{GaussianTree, LaplaceTree};
use crate::error::{Error, Result};
use crate::hierarchy::{estimate_min_tau, AccuracySpec, ClampedEstimator, Estimator};
use crate::ledger::PrivacyBudget;
use crate::mechanism::Mechanism;
use crate::metrics::{suite_report, EvalOptions, ErrorReport};
use crate::noise::RngState;
use crate::tree::{LeafCounts, NodeEstimates, TreeShape};

/// Largest trial count accepted from configuration.
pub const MAX_TRIALS: u64 = 100_000_000;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

/// Non-comment lines as `(line number, first field, second field)`.
fn records(text: &str) -> impl Iterator<Item = Result<(usize, &str, &str)>> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            return None;
        }
        let mut fields = line.split('\t');
        let rec = match (fields.next(), fields.next(), fields.next()) {
            (Some(a), Some(b), None) if !a.trim().is_empty() && !b.trim().is_empty() => Ok((i + 1, a.trim(), b.trim())),
            _ => Err(Error::Malformed {
                line: i + 1,
                reason: "expected two non-empty TAB-separated fields".into(),
            }),
        };
        Some(rec)
    })
}

pub fn parse_tree(text: &str) -> Result<TreeShape> {
    let mut entries = Vec::new();
    for rec in records(text) {
        let (_, node, parent) = rec?;
        entries.push((node.to_owned(), (parent != "-").then(|| parent.to_owned())));
    }
    TreeShape::from_parents(entries)
}

pub fn load_tree(path: &Path) -> Result<TreeShape> {
    parse_tree(&read(path)?)
}

pub fn parse_counts(text: &str, tree: &TreeShape) -> Result<LeafCounts> {
    let mut counts = LeafCounts::zeros(tree);
    let mut seen = HashSet::new();
    for rec in records(text) {
        let (line, name, value) = rec?;
        let leaf = tree.resolve(name)?;
        let value: i128 = value.parse().map_err(|_| Error::Malformed {
            line,
            reason: format!("count `{value}` is not an integer"),
        })?;
        if value < 0 {
            return Err(Error::NegativeCount {
                leaf: name.to_owned(),
                value: value.max(i64::MIN as i128) as i64,
            });
        }
        let value = u64::try_from(value).map_err(|_| Error::Malformed {
            line,
            reason: "count exceeds 64 bits".into(),
        })?;
        if !seen.insert(leaf) {
            return Err(Error::Malformed {
                line,
                reason: format!("leaf `{name}` listed twice"),
            });
        }
        counts.set(tree, leaf, value)?;
    }
    Ok(counts)
}

pub fn load_counts(path: &Path, tree: &TreeShape) -> Result<LeafCounts> {
    parse_counts(&read(path)?, tree)
}

/// Per-node real values; unlisted nodes get `default`.
fn parse_node_values(text: &str, tree: &TreeShape, default: f64, what: &str) -> Result<Vec<f64>> {
    let mut values = vec![default; tree.len()];
    let mut seen = HashSet::new();
    for rec in records(text) {
        let (line, name, value) = rec?;
        let u = tree.resolve(name)?;
        let x: f64 = value.parse().map_err(|_| Error::Malformed {
            line,
            reason: format!("{what} `{value}` is not a number"),
        })?;
        if !x.is_finite() {
            return Err(Error::Malformed {
                line,
                reason: format!("{what} must be finite"),
            });
        }
        if !seen.insert(u) {
            return Err(Error::Malformed {
                line,
                reason: format!("node `{name}` listed twice"),
            });
        }
        values[u.index()] = x;
    }
    Ok(values)
}

/// Thresholds `tau_u`, indexed by node; unlisted nodes take `default` or,
/// without a default, are an error.
pub fn parse_thresholds(text: &str, tree: &TreeShape, default: Option<f64>) -> Result<Vec<f64>> {
    let values = parse_node_values(text, tree, default.unwrap_or(f64::NAN), "threshold")?;
    if let Some(u) = tree.nodes().find(|u| values[u.index()].is_nan()) {
        return Err(Error::Config(format!(
            "no threshold for node `{}` and no default tau",
            tree.name(u)
        )));
    }
    Ok(values)
}

pub fn load_thresholds(path: &Path, tree: &TreeShape, default: Option<f64>) -> Result<Vec<f64>> {
    parse_thresholds(&read(path)?, tree, default)
}

/// Raw estimates; unlisted nodes are NaN, which consumers reject by name.
pub fn parse_estimates(text: &str, tree: &TreeShape) -> Result<NodeEstimates> {
    Ok(NodeEstimates::new(parse_node_values(text, tree, f64::NAN, "estimate")?))
}

pub fn load_estimates(path: &Path, tree: &TreeShape) -> Result<NodeEstimates> {
    parse_estimates(&read(path)?, tree)
}

/// Named input datasets.
#[derive(Debug, Clone, PartialEq)]
pub enum Fixture {
    Zeros,
    /// The leftmost leaf holds `ceil(multiple * tau)`.
    HeavyLeaf(f64),
    /// Every leaf holds the value.
    Uniform(u64),
    File(PathBuf),
}

impl Fixture {
    /// Parses `zeros`, `heavy-leaf:<multiple of tau>`, `uniform:<count>` or `file:<path>`.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unknown fixture `{s}`"));
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        match (kind, arg) {
            ("zeros", None) => Ok(Fixture::Zeros),
            ("heavy-leaf", Some(a)) => {
                let m: f64 = a.parse().map_err(|_| bad())?;
                if !(m.is_finite() && m >= 0.0) {
                    return Err(bad());
                }
                Ok(Fixture::HeavyLeaf(m))
            }
            ("uniform", Some(a)) => Ok(Fixture::Uniform(a.parse().map_err(|_| bad())?)),
            ("file", Some(a)) if !a.is_empty() => Ok(Fixture::File(PathBuf::from(a))),
            _ => Err(bad()),
        }
    }

    /// Short name used inside metric names.
    pub fn label(&self) -> String {
        match self {
            Fixture::Zeros => "zeros".into(),
            Fixture::HeavyLeaf(m) => format!("heavy-leaf-{m}"),
            Fixture::Uniform(v) => format!("uniform-{v}"),
            Fixture::File(p) => format!(
                "file-{}",
                p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
            ),
        }
    }

    pub fn counts(&self, tree: &TreeShape, tau: f64) -> Result<LeafCounts> {
        match self {
            Fixture::Zeros => Ok(LeafCounts::zeros(tree)),
            Fixture::HeavyLeaf(m) => {
                let v = (m * tau).ceil();
                if v >= u64::MAX as f64 {
                    return Err(Error::param("heavy leaf", v, "exceeds 64 bits"));
                }
                let mut c = LeafCounts::zeros(tree);
                c.set(tree, tree.leaves()[0], v as u64)?;
                Ok(c)
            }
            Fixture::Uniform(v) => Ok(LeafCounts::uniform(tree, *v)),
            Fixture::File(p) => load_counts(p, tree),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MechanismKind {
    Laplace,
    Gaussian,
    Estimate,
    EstimateClamp,
}

impl MechanismKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "laplace" => Ok(MechanismKind::Laplace),
            "gaussian" => Ok(MechanismKind::Gaussian),
            "estimate" => Ok(MechanismKind::Estimate),
            "estimate+clamp" => Ok(MechanismKind::EstimateClamp),
            _ => Err(Error::Config(format!("unknown mechanism `{s}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MechanismKind::Laplace => "laplace",
            MechanismKind::Gaussian => "gaussian",
            MechanismKind::Estimate => "estimate",
            MechanismKind::EstimateClamp => "estimate+clamp",
        }
    }

    /// Stable stream key, independent of the order mechanisms are listed in.
    fn key(self) -> u64 {
        match self {
            MechanismKind::Laplace => 1,
            MechanismKind::Gaussian => 2,
            MechanismKind::Estimate => 3,
            MechanismKind::EstimateClamp => 4,
        }
    }

    /// Smallest uniform threshold meeting this mechanism's precondition.
    /// The baselines have none and report the estimator's value.
    pub fn auto_tau(self, alpha: f64, eps: f64, delta: f64, eta: f64, depth: usize) -> Result<f64> {
        match self {
            MechanismKind::EstimateClamp => estimate_min_tau(alpha, eps / 2.0, delta / 2.0, eta, depth),
            _ => estimate_min_tau(alpha, eps, delta, eta, depth),
        }
    }

    pub fn build(self, spec: &AccuracySpec, eps: f64, delta: f64, force: bool) -> Result<(Box<dyn Mechanism>, PrivacyBudget)> {
        Ok(match self {
            MechanismKind::Laplace => {
                let m = LaplaceTree::new(eps)?;
                let b = m.budget();
                (Box::new(m), b)
            }
            MechanismKind::Gaussian => {
                let m = GaussianTree::new(eps, delta)?;
                let b = m.budget();
                (Box::new(m), b)
            }
            MechanismKind::Estimate => {
                let m = Estimator::new(spec.clone(), eps, delta)?.forced(force);
                let b = m.budget();
                (Box::new(m), b)
            }
            MechanismKind::EstimateClamp => {
                let m = ClampedEstimator::new(spec.clone(), eps, delta)?.forced(force);
                let b = m.budget();
                (Box::new(m), b)
            }
        })
    }
}

/// One CSV record. Unused parameters are left empty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub node_id: String,
    pub metric: String,
    pub value: f64,
    pub stderr: Option<f64>,
    pub trials: u64,
    pub eps: Option<f64>,
    pub delta: Option<f64>,
    pub alpha: Option<f64>,
    pub eta: Option<f64>,
    pub seed: u64,
    pub d: usize,
}

/// Shared columns of a batch of rows.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RowContext {
    pub trials: u64,
    pub eps: Option<f64>,
    pub delta: Option<f64>,
    pub alpha: Option<f64>,
    pub eta: Option<f64>,
    pub seed: u64,
    pub d: usize,
}

impl RowContext {
    pub fn row(&self, node_id: impl Into<String>, metric: impl Into<String>, value: f64, stderr: Option<f64>) -> Row {
        Row {
            node_id: node_id.into(),
            metric: metric.into(),
            value,
            stderr,
            trials: self.trials,
            eps: self.eps,
            delta: self.delta,
            alpha: self.alpha,
            eta: self.eta,
            seed: self.seed,
            d: self.d,
        }
    }
}

/// Node id used on rows that summarize a whole tree or suite.
pub const SUMMARY_NODE: &str = "*";

/// Rows for a metrics report; `labels[i]` names suite input `i`.
pub fn report_rows(
    report: &ErrorReport,
    trees: &[&TreeShape],
    prefix: &str,
    labels: &[String],
    ctx: &RowContext,
    per_node: bool,
) -> Vec<Row> {
    let mut rows = Vec::new();
    for (i, label) in labels.iter().enumerate() {
        let stats: Vec<_> = report.nodes.iter().filter(|s| s.input == i).collect();
        let tree = trees[i.min(trees.len() - 1)];
        if per_node {
            for s in &stats {
                let name = tree.name(s.node);
                rows.push(ctx.row(name, format!("{prefix}.{label}.rmse_alpha"), s.rmse_alpha.value, Some(s.rmse_alpha.stderr)));
                if let Some(f) = s.failure {
                    let se = (f.rate * (1.0 - f.rate) / f.trials as f64).sqrt();
                    rows.push(ctx.row(name, format!("{prefix}.{label}.failure_rate"), f.rate, Some(se)));
                }
                if let Some(r) = s.rel_kappa {
                    rows.push(ctx.row(name, format!("{prefix}.{label}.rel_kappa"), r.value, Some(r.stderr)));
                }
            }
        }
        if let Some(worst) = stats.iter().max_by(|a, b| a.rmse_alpha.value.total_cmp(&b.rmse_alpha.value)) {
            rows.push(ctx.row(
                tree.name(worst.node),
                format!("{prefix}.{label}.mrmse_alpha"),
                worst.rmse_alpha.value,
                Some(worst.rmse_alpha.stderr),
            ));
        }
        let worst_fail = stats
            .iter()
            .filter_map(|s| s.failure.map(|f| (s, f)))
            .max_by(|a, b| a.1.rate.total_cmp(&b.1.rate));
        if let Some((s, f)) = worst_fail {
            let se = (f.rate * (1.0 - f.rate) / f.trials as f64).sqrt();
            rows.push(ctx.row(tree.name(s.node), format!("{prefix}.{label}.max_failure_rate"), f.rate, Some(se)));
        }
    }
    if labels.len() > 1 {
        let (m, s) = report.mrmse();
        let tree = trees[s.input.min(trees.len() - 1)];
        rows.push(ctx.row(tree.name(s.node), format!("{prefix}.suite.mrmse_alpha"), m.value, Some(m.stderr)));
    }
    rows
}

/// Writes `rows` as CSV with a header line.
pub fn write_csv<W: Write>(out: W, rows: &[Row]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Config(format!("csv: {e}")))?;
    }
    w.flush().map_err(|e| Error::Config(format!("csv: {e}")))?;
    Ok(())
}

/// Writes `rows` as CSV to `path` through a temporary sibling file.
pub fn write_csv_atomic(path: &Path, rows: &[Row]) -> Result<()> {
    write_atomic(path, |buf| write_csv(buf, rows))
}

/// Renders into memory, then writes `<path>.tmp` and renames it over `path`.
pub fn write_atomic(path: &Path, render: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    render(&mut buf)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let io = |source| Error::Io {
        path: path.to_owned(),
        source,
    };
    let result = fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(&buf)?;
            f.sync_all()
        })
        .and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(io(e));
    }
    Ok(())
}

/// Where the trees of an experiment come from: exactly one field is set.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeSource {
    /// Complete binary trees of these depths.
    pub depths: Option<Vec<usize>>,
    /// A tree file.
    pub file: Option<PathBuf>,
}

/// A `run` experiment, read from TOML.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Any of `laplace`, `gaussian`, `estimate`, `estimate+clamp`.
    pub mechanisms: Vec<String>,
    pub eps: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub alpha: f64,
    pub eta: f64,
    /// Uniform threshold; each mechanism's minimum when absent.
    pub tau: Option<f64>,
    /// Per-node thresholds overriding `tau` where listed.
    pub thresholds: Option<PathBuf>,
    /// Smoothing factor; the `rel_kappa` metric is reported when set.
    pub kappa: Option<f64>,
    pub trials: u64,
    pub seed: u64,
    pub out: PathBuf,
    /// Skip utility preconditions.
    #[serde(default)]
    pub force: bool,
    /// Emit one row per node and metric, not just the summaries.
    #[serde(default)]
    pub per_node: bool,
    pub tree: TreeSource,
    pub fixtures: Vec<String>,
}

fn default_delta() -> f64 {
    1e-6
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::parse(&read(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.out);
        if let Some(p) = cfg.thresholds.as_mut() {
            fix(p);
        }
        if let Some(p) = cfg.tree.file.as_mut() {
            fix(p);
        }
        for f in cfg.fixtures.iter_mut() {
            if let Some(rest) = f.strip_prefix("file:") {
                let p = Path::new(rest);
                if p.is_relative() {
                    *f = format!("file:{}", base.join(p).display());
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mechanisms.is_empty() {
            return Err(Error::Empty("mechanisms"));
        }
        if self.fixtures.is_empty() {
            return Err(Error::Empty("fixtures"));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::param("eps", self.eps, "must be positive and finite"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::param("delta", self.delta, "must lie in (0, 1)"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::param("alpha", self.alpha, "must lie in (0, 1)"));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::param("eta", self.eta, "must lie in (0, 1)"));
        }
        if let Some(t) = self.tau {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::param("tau", t, "must be positive and finite"));
            }
        }
        if self.trials == 0 {
            return Err(Error::param("trials", 0.0, "must be at least 1"));
        }
        if self.trials > MAX_TRIALS {
            return Err(Error::ResourceCap {
                what: "trials",
                requested: self.trials as u128,
                cap: MAX_TRIALS as u128,
            });
        }
        match (&self.tree.depths, &self.tree.file) {
            (Some(d), None) if !d.is_empty() => {}
            (None, Some(_)) => {}
            _ => return Err(Error::Config("tree needs exactly one of `depths` or `file`".into())),
        }
        for m in &self.mechanisms {
            MechanismKind::parse(m)?;
        }
        for f in &self.fixtures {
            Fixture::parse(f)?;
        }
        Ok(())
    }
}

/// Runs every mechanism on every tree and fixture and returns the rows.
///
/// Stream layout: tree `k` (in listed order), then mechanism key, then
/// fixture index, then trial.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<Row>> {
    cfg.validate()?;
    let kinds: Vec<MechanismKind> = cfg.mechanisms.iter().map(|m| MechanismKind::parse(m)).collect::<Result<_>>()?;
    let fixtures: Vec<Fixture> = cfg.fixtures.iter().map(|f| Fixture::parse(f)).collect::<Result<_>>()?;
    let trees: Vec<TreeShape> = match (&cfg.tree.depths, &cfg.tree.file) {
        (Some(depths), _) => depths.iter().map(|&d| TreeShape::complete_binary(d)).collect::<Result<_>>()?,
        (_, Some(path)) => vec![load_tree(path)?],
        _ => unreachable!("validated"),
    };
    let master = RngState::seed_from(cfg.seed);
    let labels: Vec<String> = fixtures.iter().map(Fixture::label).collect();
    let mut rows = Vec::new();
    for (k, tree) in trees.iter().enumerate() {
        let depth = tree.depth();
        let base_tau = match cfg.tau {
            Some(t) => t,
            None => estimate_min_tau(cfg.alpha, cfg.eps, cfg.delta, cfg.eta, depth)?,
        };
        let inputs: Vec<LeafCounts> = fixtures.iter().map(|f| f.counts(tree, base_tau)).collect::<Result<_>>()?;
        let suite: Vec<(&TreeShape, &LeafCounts)> = inputs.iter().map(|c| (tree, c)).collect();
        let tree_stream = master.derive(k as u64);
        for &kind in &kinds {
            let tau = match cfg.tau {
                Some(t) => t,
                None => kind.auto_tau(cfg.alpha, cfg.eps, cfg.delta, cfg.eta, depth)?,
            };
            let thresholds = match &cfg.thresholds {
                Some(p) => load_thresholds(p, tree, Some(tau))?,
                None => vec![tau; tree.len()],
            };
            let spec = AccuracySpec::from_thresholds(cfg.alpha, cfg.eta, thresholds)?;
            let (mech, budget) = kind.build(&spec, cfg.eps, cfg.delta, cfg.force)?;
            let ctx = RowContext {
                trials: cfg.trials,
                eps: Some(cfg.eps),
                delta: Some(cfg.delta),
                alpha: Some(cfg.alpha),
                eta: Some(cfg.eta),
                seed: cfg.seed,
                d: depth,
            };
            let opts = EvalOptions {
                alpha: cfg.alpha,
                trials: cfg.trials,
                spec: Some(&spec),
                kappa: cfg.kappa,
            };
            let report = suite_report(mech.as_ref(), &suite, &opts, &tree_stream.derive(kind.key()))?;
            let name = kind.name();
            rows.push(ctx.row(SUMMARY_NODE, format!("{name}.budget_eps"), budget.eps, None));
            rows.push(ctx.row(SUMMARY_NODE, format!("{name}.budget_delta"), budget.delta, None));
            rows.push(ctx.row(SUMMARY_NODE, format!("{name}.tau_min"), spec.tau_min(), None));
            if matches!(kind, MechanismKind::Estimate | MechanismKind::EstimateClamp) {
                let required = kind.auto_tau(cfg.alpha, cfg.eps, cfg.delta, cfg.eta, depth)?;
                rows.push(ctx.row(SUMMARY_NODE, format!("{name}.tau_required"), required, None));
                let met = spec.tau_min() >= required;
                rows.push(ctx.row(SUMMARY_NODE, format!("{name}.precondition_met"), met as u8 as f64, None));
            }
            let tree_refs = vec![tree; suite.len()];
            rows.extend(report_rows(&report, &tree_refs, name, &labels, &ctx, cfg.per_node));
        }
    }
    Ok(rows)
}
