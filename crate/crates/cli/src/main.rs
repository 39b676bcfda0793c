//! `dptree`: differentially private subtree sums from the command line.
//!
//! Every subcommand writes CSV rows with the columns of [`Row`] to `--out`
//! (atomically) or to stdout. Exit codes: 0 success, 2 input error,
//! 3 precondition refusal, 4 resource cap.

use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dptree_core::baselines::{GaussianTree, LaplaceTree};
use dptree_core::bounds::{attack_success_rate, gamma2_witness_value, nuclear_norm_bruteforce, AttackConfig, BRUTEFORCE_MAX_DEPTH};
use dptree_core::harness::{
    load_counts, load_estimates, load_thresholds, load_tree, run_experiment, write_csv, write_csv_atomic, ExperimentConfig,
    Fixture, MechanismKind, Row, RowContext, TreeSource, SUMMARY_NODE,
};
use dptree_core::hierarchy::{classify_tree, clamp_to_mrmse, estimate_min_tau, ClassifyParams, Estimator};
use dptree_core::mechanism::{Exact, Mechanism};
use dptree_core::tree::aggregate_exact;
use dptree_core::{AccuracySpec, Error, LeafCounts, Result, RngState, TreeShape};

#[derive(Parser)]
#[command(name = "dptree", version, about = "Differentially private subtree sums over rooted trees")]
struct Cli {
    /// Worker threads for Monte Carlo loops; all cores when absent.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact subtree sums.
    Aggregate {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// One pure-DP Laplace release.
    BaselineLaplace {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, allow_negative_numbers = true)]
        eps: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// One approximate-DP Gaussian release.
    BaselineGaussian {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        budget: BudgetArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Labels nodes as heavy (1) or light (0) against a single threshold.
    Classify {
        #[command(flatten)]
        input: InputArgs,
        /// Public upper bound on the root weight.
        #[arg(long)]
        m_bound: f64,
        #[arg(long, allow_negative_numbers = true)]
        tau: f64,
        #[arg(long, allow_negative_numbers = true)]
        alpha: f64,
        #[arg(long, allow_negative_numbers = true)]
        eta: f64,
        #[command(flatten)]
        budget: BudgetArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Skip the threshold precondition. Privacy is unaffected.
        #[arg(long)]
        force: bool,
        #[command(flatten)]
        out: OutArgs,
    },
    /// One release of the multiplicative-additive estimator.
    Estimate {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        spec: SpecArgs,
        #[command(flatten)]
        budget: BudgetArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        force: bool,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Clamps raw estimates into a window around noisy exact sums.
    Clamp {
        #[command(flatten)]
        input: InputArgs,
        /// Estimates file, `node_id<TAB>value`, one line per node.
        #[arg(long)]
        raw: PathBuf,
        #[command(flatten)]
        budget: BudgetArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Monte Carlo error metrics of one mechanism, per node.
    Metrics {
        #[arg(long, value_parser = parse_mechanism)]
        mechanism: MechanismKind,
        #[command(flatten)]
        tree: TreeArgs,
        /// Counts file; may be repeated.
        #[arg(long)]
        counts: Vec<PathBuf>,
        /// Fixture such as `zeros`, `heavy-leaf:10` or `uniform:3`; may be repeated.
        #[arg(long)]
        fixture: Vec<String>,
        #[command(flatten)]
        spec: OptSpecArgs,
        #[command(flatten)]
        budget: BudgetArgs,
        /// Smoothing factor for the relative error metric.
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long, default_value_t = 1000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        force: bool,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Packing-decoder attack on a complete binary tree.
    Attack {
        #[arg(long)]
        depth: usize,
        #[arg(long, value_enum, default_value_t = AttackTarget::Estimate)]
        mechanism: AttackTarget,
        #[arg(long, allow_negative_numbers = true)]
        alpha: f64,
        #[arg(long, allow_negative_numbers = true)]
        eta: f64,
        /// Uniform threshold; the estimator's minimum when absent.
        #[arg(long, allow_negative_numbers = true)]
        tau: Option<f64>,
        #[command(flatten)]
        budget: BudgetArgs,
        #[arg(long, default_value_t = 200)]
        trials: u64,
        /// Attack this many random leaves instead of all.
        #[arg(long)]
        sample: Option<usize>,
        /// Decode the entry-wise median of this many releases.
        #[arg(long, default_value_t = 1)]
        copies: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        force: bool,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Lower-bound witness for the factorization norm of the tree workload.
    Gamma2 {
        /// Depths, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        depth: Vec<usize>,
        /// Also compute the nuclear norm by eigendecomposition where feasible.
        #[arg(long)]
        bruteforce: bool,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Runs a TOML experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the output path of the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Generate {
    CompleteBinary,
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackTarget {
    Exact,
    Laplace,
    Gaussian,
    Estimate,
    #[value(name = "estimate+clamp")]
    EstimateClamp,
}

#[derive(Args)]
struct TreeArgs {
    /// Tree file, `node_id<TAB>parent_id` with `-` for the root.
    #[arg(long, conflicts_with = "depth")]
    tree: Option<PathBuf>,
    /// Depth of a generated tree.
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long, value_enum, default_value_t = Generate::CompleteBinary, requires = "depth")]
    generate: Generate,
}

impl TreeArgs {
    fn load(&self) -> Result<TreeShape> {
        match (&self.tree, self.depth, self.generate) {
            (Some(p), None, _) => load_tree(p),
            (None, Some(d), Generate::CompleteBinary) => TreeShape::complete_binary(d),
            _ => Err(Error::Config("one of --tree or --depth is required".into())),
        }
    }
}

#[derive(Args)]
struct InputArgs {
    #[command(flatten)]
    tree: TreeArgs,
    /// Counts file, `leaf_id<TAB>count`; unlisted leaves are zero.
    #[arg(long, conflicts_with = "fixture")]
    counts: Option<PathBuf>,
    /// Generated counts; `heavy-leaf:<m>` plants `m` times `--tau` (or `m`).
    #[arg(long)]
    fixture: Option<String>,
}

impl InputArgs {
    fn load(&self, tau: Option<f64>) -> Result<(TreeShape, LeafCounts)> {
        let tree = self.tree.load()?;
        let counts = match (&self.counts, &self.fixture) {
            (Some(p), _) => load_counts(p, &tree)?,
            (None, Some(f)) => Fixture::parse(f)?.counts(&tree, tau.unwrap_or(1.0))?,
            (None, None) => return Err(Error::Config("one of --counts or --fixture is required".into())),
        };
        Ok((tree, counts))
    }
}

#[derive(Args)]
struct BudgetArgs {
    #[arg(long, allow_negative_numbers = true)]
    eps: f64,
    #[arg(long, allow_negative_numbers = true, default_value_t = 1e-6)]
    delta: f64,
}

#[derive(Args)]
struct SpecArgs {
    #[arg(long, allow_negative_numbers = true)]
    alpha: f64,
    #[arg(long, allow_negative_numbers = true)]
    eta: f64,
    /// Uniform threshold, and the default for nodes missing from `--thresholds`.
    #[arg(long, allow_negative_numbers = true)]
    tau: Option<f64>,
    /// Thresholds file, `node_id<TAB>tau`.
    #[arg(long)]
    thresholds: Option<PathBuf>,
}

impl SpecArgs {
    fn build(&self, tree: &TreeShape) -> Result<AccuracySpec> {
        let thresholds = match (&self.thresholds, self.tau) {
            (Some(p), default) => load_thresholds(p, tree, default)?,
            (None, Some(t)) => vec![t; tree.len()],
            (None, None) => return Err(Error::Config("one of --tau or --thresholds is required".into())),
        };
        AccuracySpec::from_thresholds(self.alpha, self.eta, thresholds)
    }
}

#[derive(Args)]
struct OptSpecArgs {
    #[arg(long, allow_negative_numbers = true)]
    alpha: f64,
    #[arg(long, allow_negative_numbers = true)]
    eta: f64,
    /// Uniform threshold; the mechanism's minimum when absent.
    #[arg(long, allow_negative_numbers = true)]
    tau: Option<f64>,
    #[arg(long)]
    thresholds: Option<PathBuf>,
}

#[derive(Args)]
struct OutArgs {
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl OutArgs {
    fn emit(&self, rows: &[Row]) -> Result<()> {
        emit(self.out.as_deref(), rows)
    }
}

fn emit(out: Option<&Path>, rows: &[Row]) -> Result<()> {
    match out {
        Some(p) => write_csv_atomic(p, rows),
        None => write_csv(io::stdout().lock(), rows),
    }
}

fn parse_mechanism(s: &str) -> std::result::Result<MechanismKind, String> {
    MechanismKind::parse(s).map_err(|e| e.to_string())
}

fn estimate_rows(tree: &TreeShape, values: &[f64], ctx: &RowContext) -> Vec<Row> {
    tree.nodes()
        .map(|u| ctx.row(tree.name(u), "estimate", values[u.index()], None))
        .collect()
}

fn budget_rows(ctx: &RowContext, eps: f64, delta: f64) -> [Row; 2] {
    [
        ctx.row(SUMMARY_NODE, "budget_eps", eps, None),
        ctx.row(SUMMARY_NODE, "budget_delta", delta, None),
    ]
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::param("threads", 0.0, "must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Aggregate { input, out } => {
            let (tree, counts) = input.load(None)?;
            let w = aggregate_exact(&tree, &counts)?;
            let ctx = RowContext {
                d: tree.depth(),
                ..Default::default()
            };
            let rows: Vec<Row> = tree
                .nodes()
                .map(|u| ctx.row(tree.name(u), "weight", w.get(u) as f64, None))
                .collect();
            out.emit(&rows)
        }
        Command::BaselineLaplace { input, eps, seed, out } => {
            let (tree, counts) = input.load(None)?;
            let mech = LaplaceTree::new(eps)?;
            let est = mech.release(&tree, &aggregate_exact(&tree, &counts)?, &mut RngState::seed_from(seed))?;
            let ctx = RowContext {
                trials: 1,
                eps: Some(eps),
                delta: Some(0.0),
                seed,
                d: tree.depth(),
                ..Default::default()
            };
            let mut rows = estimate_rows(&tree, est.as_slice(), &ctx);
            rows.extend(budget_rows(&ctx, mech.budget().eps, mech.budget().delta));
            out.emit(&rows)
        }
        Command::BaselineGaussian { input, budget, seed, out } => {
            let (tree, counts) = input.load(None)?;
            let mech = GaussianTree::new(budget.eps, budget.delta)?;
            let est = mech.release(&tree, &aggregate_exact(&tree, &counts)?, &mut RngState::seed_from(seed))?;
            let ctx = RowContext {
                trials: 1,
                eps: Some(budget.eps),
                delta: Some(budget.delta),
                seed,
                d: tree.depth(),
                ..Default::default()
            };
            let mut rows = estimate_rows(&tree, est.as_slice(), &ctx);
            rows.extend(budget_rows(&ctx, mech.budget().eps, mech.budget().delta));
            out.emit(&rows)
        }
        Command::Classify {
            input,
            m_bound,
            tau,
            alpha,
            eta,
            budget,
            seed,
            force,
            out,
        } => {
            let (tree, counts) = input.load(Some(tau))?;
            let params = ClassifyParams {
                m_bound,
                eta,
                alpha,
                tau,
                eps: budget.eps,
                delta: budget.delta,
            };
            let labels = classify_tree(&tree, &counts, &params, force, &mut RngState::seed_from(seed))?;
            let ctx = RowContext {
                trials: 1,
                eps: Some(budget.eps),
                delta: Some(budget.delta),
                alpha: Some(alpha),
                eta: Some(eta),
                seed,
                d: tree.depth(),
            };
            let mut rows: Vec<Row> = tree
                .nodes()
                .map(|u| ctx.row(tree.name(u), "label", labels.is_top(u) as u8 as f64, None))
                .collect();
            rows.push(ctx.row(SUMMARY_NODE, "tau_required", params.required_tau(tree.depth()), None));
            rows.extend(budget_rows(&ctx, params.budget().eps, params.budget().delta));
            out.emit(&rows)
        }
        Command::Estimate {
            input,
            spec,
            budget,
            seed,
            force,
            out,
        } => {
            let (tree, counts) = input.load(spec.tau)?;
            let spec = spec.build(&tree)?;
            let required = estimate_min_tau(spec.alpha, budget.eps, budget.delta, spec.eta, tree.depth())?;
            let release = Estimator::new(spec.clone(), budget.eps, budget.delta)?.forced(force).release_full(
                &tree,
                &aggregate_exact(&tree, &counts)?,
                &mut RngState::seed_from(seed),
            )?;
            let ctx = RowContext {
                trials: 1,
                eps: Some(budget.eps),
                delta: Some(budget.delta),
                alpha: Some(spec.alpha),
                eta: Some(spec.eta),
                seed,
                d: tree.depth(),
            };
            let mut rows = estimate_rows(&tree, release.estimates.as_slice(), &ctx);
            rows.push(ctx.row(SUMMARY_NODE, "m_bound", release.m_bound, None));
            rows.push(ctx.row(SUMMARY_NODE, "levels", release.schedule.ell() as f64, None));
            rows.push(ctx.row(SUMMARY_NODE, "tau_required", required, None));
            rows.push(ctx.row(SUMMARY_NODE, "precondition_met", (spec.tau_min() >= required) as u8 as f64, None));
            rows.extend(budget_rows(&ctx, release.budget.eps, release.budget.delta));
            out.emit(&rows)
        }
        Command::Clamp {
            input,
            raw,
            budget,
            seed,
            out,
        } => {
            let (tree, counts) = input.load(None)?;
            let raw = load_estimates(&raw, &tree)?;
            let release = clamp_to_mrmse(&tree, &counts, &raw, budget.eps, budget.delta, &mut RngState::seed_from(seed))?;
            let ctx = RowContext {
                trials: 1,
                eps: Some(budget.eps),
                delta: Some(budget.delta),
                seed,
                d: tree.depth(),
                ..Default::default()
            };
            let mut rows = estimate_rows(&tree, release.estimates.as_slice(), &ctx);
            rows.push(ctx.row(SUMMARY_NODE, "radius", release.radius, None));
            out.emit(&rows)
        }
        Command::Metrics {
            mechanism,
            tree,
            counts,
            fixture,
            spec,
            budget,
            kappa,
            trials,
            seed,
            force,
            out,
        } => {
            let mut fixtures: Vec<String> = counts.iter().map(|p| format!("file:{}", p.display())).collect();
            fixtures.extend(fixture);
            let source = match (tree.tree, tree.depth) {
                (Some(file), None) => TreeSource {
                    depths: None,
                    file: Some(file),
                },
                (None, Some(d)) => TreeSource {
                    depths: Some(vec![d]),
                    file: None,
                },
                _ => return Err(Error::Config("one of --tree or --depth is required".into())),
            };
            let cfg = ExperimentConfig {
                mechanisms: vec![mechanism.name().to_owned()],
                eps: budget.eps,
                delta: budget.delta,
                alpha: spec.alpha,
                eta: spec.eta,
                tau: spec.tau,
                thresholds: spec.thresholds,
                kappa,
                trials,
                seed,
                out: out.out.clone().unwrap_or_default(),
                force,
                per_node: true,
                tree: source,
                fixtures,
            };
            out.emit(&run_experiment(&cfg)?)
        }
        Command::Attack {
            depth,
            mechanism,
            alpha,
            eta,
            tau,
            budget,
            trials,
            sample,
            copies,
            seed,
            force,
            out,
        } => {
            let tau = match tau {
                Some(t) => t,
                None => {
                    let kind = match mechanism {
                        AttackTarget::EstimateClamp => MechanismKind::EstimateClamp,
                        _ => MechanismKind::Estimate,
                    };
                    kind.auto_tau(alpha, budget.eps, budget.delta, eta.max(f64::MIN_POSITIVE), depth)?
                }
            };
            let mut config = AttackConfig::new(depth, tau, alpha, eta, trials)?.with_copies(copies)?;
            if let Some(k) = sample {
                config = config.with_sample(k)?;
            }
            let tree = TreeShape::complete_binary(depth)?;
            let mech: Box<dyn Mechanism> = match mechanism {
                AttackTarget::Exact => Box::new(Exact),
                AttackTarget::Laplace => MechanismKind::Laplace.build(&AccuracySpec::uniform(&tree, 0.5, 0.5, tau)?, budget.eps, budget.delta, force)?.0,
                AttackTarget::Gaussian => MechanismKind::Gaussian.build(&AccuracySpec::uniform(&tree, 0.5, 0.5, tau)?, budget.eps, budget.delta, force)?.0,
                AttackTarget::Estimate => MechanismKind::Estimate.build(&AccuracySpec::uniform(&tree, alpha, eta, tau)?, budget.eps, budget.delta, force)?.0,
                AttackTarget::EstimateClamp => {
                    MechanismKind::EstimateClamp.build(&AccuracySpec::uniform(&tree, alpha, eta, tau)?, budget.eps, budget.delta, force)?.0
                }
            };
            let report = attack_success_rate(mech.as_ref(), &config, &RngState::seed_from(seed))?;
            let ctx = RowContext {
                trials,
                eps: Some(budget.eps),
                delta: Some(budget.delta),
                alpha: Some(alpha),
                eta: Some(eta),
                seed,
                d: depth,
            };
            let leaves = tree.leaves();
            let mut rows: Vec<Row> = report
                .outcomes
                .iter()
                .map(|o| {
                    let se = (o.rate * (1.0 - o.rate) / o.trials as f64).sqrt();
                    ctx.row(tree.name(leaves[o.index - 1]), "success_rate", o.rate, Some(se))
                })
                .collect();
            let n: u64 = report.outcomes.iter().map(|o| o.trials).sum();
            let mean = report.mean_rate();
            rows.push(ctx.row(SUMMARY_NODE, "mean_success_rate", mean, Some((mean * (1.0 - mean) / n as f64).sqrt())));
            rows.push(ctx.row(SUMMARY_NODE, "min_success_rate", report.min_rate(), None));
            rows.push(ctx.row(SUMMARY_NODE, "floor", report.floor, None));
            rows.push(ctx.row(SUMMARY_NODE, "planted_mass", report.big_d as f64, None));
            rows.push(ctx.row(SUMMARY_NODE, "kappa", report.kappa, None));
            out.emit(&rows)
        }
        Command::Gamma2 { depth, bruteforce, out } => {
            let mut rows = Vec::new();
            for d in depth {
                let ctx = RowContext {
                    d,
                    ..Default::default()
                };
                rows.push(ctx.row(SUMMARY_NODE, "gamma2_witness", gamma2_witness_value(d)?, None));
                rows.push(ctx.row(SUMMARY_NODE, "sqrt_d", (d as f64).sqrt(), None));
                if bruteforce && d <= BRUTEFORCE_MAX_DEPTH {
                    rows.push(ctx.row(SUMMARY_NODE, "nuclear_bruteforce", nuclear_norm_bruteforce(d)?, None));
                }
            }
            out.emit(&rows)
        }
        Command::Run { config, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(o) = out {
                cfg.out = o;
            }
            let rows = run_experiment(&cfg)?;
            write_csv_atomic(&cfg.out, &rows)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            ExitCode::from(e.kind().exit_code() as u8)
        }
    }
}
