//! `allocatron`: separation-rank bounds, rank experiments, transition fits
//! and depth/width planning from the command line.
//!
//! Exit codes: 0 on success, 1 on a domain error, 2 on a usage error.

mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use allocatron_core::bounds::{self, Regime, ShallowWidth};
use allocatron_core::data;
use allocatron_core::exec::ExecMode;
use allocatron_core::fit::{self, FitResult, TransitionPoint};
use allocatron_core::lab::{self, GridSpec, IndexSets, LabReport, Partition};
use allocatron_core::model::{NetworkConfig, NetworkDocument, Theta};
use allocatron_core::planner::{self, ModelSpec};
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use report::{DomainError, Format, Report, UsageError};

#[derive(Parser)]
#[command(name = "allocatron", version, about = "Depth-to-width allocation toolkit for self-attention networks")]
struct Cli {
    /// Output format; machine formats keep full double precision.
    #[arg(long, value_enum, global = true, default_value_t = Format::Json)]
    format: Format,
    /// Write the machine output here and print a summary to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Separation-rank bounds for the regime of (L, d_x).
    Bounds(BoundsArgs),
    /// Regime of (L, d_x) relative to the depth threshold log3(d_x).
    Regime(RegimeArgs),
    /// Smallest shallow width whose upper bound reaches a deeper network's lower bound.
    EquivWidth(EquivArgs),
    /// Numerical rank experiments.
    #[command(subcommand)]
    Lab(LabCommand),
    /// Weighted log-linear fit of transition points.
    Fit(FitArgs),
    /// Estimate transition widths from loss sweeps.
    Transition(TransitionArgs),
    /// Recommend a depth and width for a parameter budget.
    Plan(PlanArgs),
    /// Compare an architecture with the transition curve.
    Audit(AuditArgs),
    /// Projection table for a roster of models.
    Table1(Table1Args),
    /// Transition size and its error per depth.
    Curve(CurveArgs),
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    depth: u32,
    #[arg(long)]
    width: u64,
    #[arg(long, default_value_t = 1)]
    heads: u64,
    /// Also report the residual-network bound for this sequence length.
    #[arg(long)]
    seq_len: Option<u64>,
}

#[derive(Args)]
struct RegimeArgs {
    #[arg(long)]
    depth: u32,
    #[arg(long)]
    width: u64,
}

#[derive(Args)]
struct EquivArgs {
    /// Depth of the deep network.
    #[arg(long)]
    depth: u32,
    /// Width of the deep network.
    #[arg(long)]
    width: u64,
    #[arg(long, default_value_t = 1)]
    heads: u64,
    #[arg(long)]
    shallow_depth: u32,
}

#[derive(Subcommand)]
enum LabCommand {
    /// Rank of (V Vᵀ)^{⊙λ} for the omega matrix V.
    Hadamard(HadamardArgs),
    /// Rank of a grid-tensor matricization of the network output.
    GridRank(GridRankArgs),
    /// Build the explicit assignment and check its sub-matrix.
    Assignment(AssignmentArgs),
}

#[derive(Args)]
struct HadamardArgs {
    #[arg(long)]
    dim: usize,
    #[arg(long)]
    lambda: u32,
    #[arg(long, default_value_t = lab::DEFAULT_OMEGA)]
    omega: f64,
    #[arg(long, default_value_t = lab::DEFAULT_REL_TOL)]
    tol: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum GridKind {
    /// Lemma sub-matrix on the assignment templates (needs odd d_a, L >= 3).
    Lemma,
    /// All assignments of random templates to both sides.
    Full,
}

#[derive(Args)]
struct GridRankArgs {
    #[arg(long)]
    depth: u32,
    #[arg(long)]
    width: usize,
    #[arg(long, default_value_t = 1)]
    heads: usize,
    #[arg(long, default_value_t = 4)]
    seq_len: usize,
    #[arg(long, value_enum, default_value_t = GridKind::Lemma)]
    grid: GridKind,
    /// Number of random templates for the full grid.
    #[arg(long, default_value_t = 3)]
    templates: usize,
    /// Output coordinate read at the anchor position.
    #[arg(long, default_value_t = 0)]
    output_index: usize,
    /// Evaluate every balanced partition with the anchor at position 0.
    #[arg(long)]
    all_partitions: bool,
    /// Real network document to use instead of seeded random weights.
    #[arg(long)]
    network: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = lab::DEFAULT_OMEGA)]
    omega: f64,
    #[arg(long, default_value_t = lab::DEFAULT_REL_TOL)]
    tol: f64,
}

#[derive(Args)]
struct AssignmentArgs {
    #[arg(long, default_value_t = 3)]
    depth: u32,
    #[arg(long, default_value_t = 5)]
    width: usize,
    #[arg(long, default_value_t = 1)]
    heads: usize,
    #[arg(long, default_value_t = 4)]
    seq_len: usize,
    #[arg(long, default_value_t = lab::DEFAULT_OMEGA)]
    omega: f64,
    #[arg(long, default_value_t = lab::DEFAULT_REL_TOL)]
    tol: f64,
}

#[derive(Args)]
struct FitArgs {
    /// Transition CSV (`depth,width,width_err`) or `bundled`.
    #[arg(long, default_value = "bundled")]
    transitions: String,
}

#[derive(Args)]
struct TransitionArgs {
    /// Loss CSV (`depth,width,test_loss,loss_std`).
    #[arg(long)]
    losses: PathBuf,
    #[arg(long, default_value_t = fit::DEFAULT_K_SIGMA)]
    k_sigma: f64,
    /// Compare only this shallow depth (requires --deep-depth).
    #[arg(long, requires = "deep_depth")]
    shallow_depth: Option<u32>,
    #[arg(long, requires = "shallow_depth")]
    deep_depth: Option<u32>,
}

#[derive(Args)]
struct FitSource {
    /// Fit JSON file, `published` (or `paper`) for the published coefficients, or `bundled`
    /// to refit the bundled transition points.
    #[arg(long, default_value = "published")]
    fit: String,
}

#[derive(Args)]
struct PlanArgs {
    /// Non-embedding parameter budget.
    #[arg(long)]
    params: f64,
    #[command(flatten)]
    fit: FitSource,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    depth: u32,
    #[arg(long)]
    width: u64,
    #[command(flatten)]
    fit: FitSource,
}

#[derive(Args)]
struct Table1Args {
    #[command(flatten)]
    fit: FitSource,
    /// Roster JSON (`[{name, params, depth, width}]`); defaults to the bundled one.
    #[arg(long)]
    roster: Option<PathBuf>,
}

#[derive(Args)]
struct CurveArgs {
    #[command(flatten)]
    fit: FitSource,
    #[arg(long, default_value_t = 1)]
    min_depth: u32,
    #[arg(long, default_value_t = 200)]
    max_depth: u32,
    #[arg(long, default_value_t = 1)]
    step: u32,
}

fn domain<E: std::fmt::Display>(module: &'static str, kind: &'static str) -> impl FnOnce(E) -> anyhow::Error {
    move |e| DomainError::new(module, kind, e.to_string()).into()
}

macro_rules! try_domain {
    ($module:literal, $expr:expr) => {
        $expr.map_err(|e| anyhow::Error::from(DomainError::new($module, e.kind(), e.to_string())))?
    };
}

fn load_fit(source: &str) -> Result<FitResult> {
    match source {
        "published" | "paper" => Ok(FitResult::published()),
        "bundled" => {
            let points = try_domain!("fit_engine", data::bundled_transitions());
            Ok(try_domain!("fit_engine", fit::weighted_linear_fit(&points)))
        }
        path => Ok(try_domain!("fit_engine", fit::read_fit_file(path.as_ref()))),
    }
}

fn load_transitions(source: &str) -> Result<Vec<TransitionPoint>> {
    Ok(match source {
        "bundled" => try_domain!("fit_engine", data::bundled_transitions()),
        path => try_domain!("fit_engine", fit::read_transitions_file(path.as_ref())),
    })
}

fn network_config(depth: u32, width: usize, heads: usize, seq_len: usize) -> Result<NetworkConfig> {
    Ok(try_domain!("core_model", NetworkConfig::new(depth, width, heads, seq_len)))
}

fn run_bounds(a: &BoundsArgs) -> Result<Report> {
    let b = try_domain!("bounds", bounds::regime_bounds(a.depth, a.width, a.heads));
    let mut text = format!(
        "regime {}\nlog3 lower bound {:.6} (raw {:.6})\nlog3 upper bound {:.6}\n",
        b.regime, b.log3_lower, b.raw_lower, b.log3_upper
    );
    match b.regime {
        Regime::DepthEfficiency => {
            if let Ok(e) = bounds::exact_count_log_deep(a.depth, a.width, a.heads) {
                text.push_str(&format!("log3 exact summand count {e:.6}\n"));
            }
        }
        _ => {
            if let Ok(e) = bounds::exact_count_log_wide(a.depth, a.width) {
                text.push_str(&format!("log3 exact summand count {e:.6}\n"));
            }
        }
    }
    if let Some(n) = a.seq_len {
        let r = try_domain!("bounds", bounds::residual_upper_bound(a.depth, a.width, n, a.heads));
        text.push_str(&format!("log3 residual-network upper bound {r:.6}\n"));
    }
    Ok(Report::json(serde_json::to_value(b)?, text))
}

fn run_regime(a: &RegimeArgs) -> Result<Report> {
    if a.depth == 0 || a.width == 0 {
        return Err(UsageError("--depth and --width must be positive".into()).into());
    }
    let regime = bounds::classify_regime(a.depth, a.width);
    let threshold = bounds::depth_threshold(a.width);
    let text = format!("L = {} vs log3(d_x) = {threshold:.6}: {regime}\n", a.depth);
    Ok(Report::json(
        json!({"depth": a.depth, "width": a.width, "threshold": threshold, "regime": regime}),
        text,
    ))
}

fn run_equiv(a: &EquivArgs) -> Result<Report> {
    let w = try_domain!(
        "bounds",
        bounds::min_equivalent_shallow_width(a.depth, a.width, a.heads, a.shallow_depth)
    );
    let (value, text) = match w {
        ShallowWidth::Finite(w) => (json!(w), format!("shallow width {w} at depth {}\n", a.shallow_depth)),
        ShallowWidth::Infinity => (
            json!("infinity"),
            format!("no width up to 2^64 suffices at depth {}\n", a.shallow_depth),
        ),
    };
    Ok(Report::json(
        json!({
            "deep_depth": a.depth,
            "deep_width": a.width,
            "heads": a.heads,
            "shallow_depth": a.shallow_depth,
            "width": value,
        }),
        text,
    ))
}

fn lab_text(r: &LabReport) -> String {
    let s: Vec<String> = r.singular_values.iter().take(12).map(|v| format!("{v:.3e}")).collect();
    format!(
        "measured rank {} (expected {}): {}\nsingular values {}{}\n",
        r.measured_rank,
        r.expected_rank,
        if r.pass { "pass" } else { "FAIL" },
        s.join(" "),
        if r.singular_values.len() > 12 { " ..." } else { "" }
    )
}

fn run_hadamard(a: &HadamardArgs) -> Result<Report> {
    let r = try_domain!("seprank_lab", lab::verify_hadamard_rank(a.dim, a.lambda, a.omega, a.tol));
    let report = LabReport {
        config: json!({"d": a.dim, "lambda": a.lambda, "omega": a.omega, "rel_tol": a.tol}),
        expected_rank: r.expected,
        measured_rank: r.rank,
        singular_values: r.singular_values,
        pass: r.pass,
        proportionality: None,
    };
    let text = lab_text(&report);
    Ok(Report::json(serde_json::to_value(report)?, text))
}

/// Omega matrix sized for the assignment on `cfg`.
fn assignment_v(cfg: &NetworkConfig, omega: f64) -> Result<(lab::OmegaMatrix, u32)> {
    if cfg.depth() < 3 || cfg.depth() > 8 {
        return Err(DomainError::new(
            "seprank_lab",
            "InvalidArgument",
            format!("assignment needs 3 <= L <= 8, got {}", cfg.depth()),
        )
        .into());
    }
    if cfg.head_dim().is_multiple_of(2) {
        return Err(DomainError::new(
            "seprank_lab",
            "InvalidArgument",
            format!("head dimension {} must be odd", cfg.head_dim()),
        )
        .into());
    }
    let lambda = 3u32.pow(cfg.depth() - 2);
    let d = (cfg.width() - cfg.heads()) / 2;
    Ok((try_domain!("seprank_lab", lab::build_omega_matrix(d, lambda, omega)), lambda))
}

fn run_assignment(a: &AssignmentArgs) -> Result<Report> {
    let cfg = network_config(a.depth, a.width, a.heads, a.seq_len)?;
    let (v, lambda) = assignment_v(&cfg, a.omega)?;
    let (grid, theta) = try_domain!("seprank_lab", lab::construct_assignment(&v.v, &cfg));
    let g = try_domain!("seprank_lab", lab::grid_matrix(&cfg, &theta, &grid, 0, ExecMode::default()));
    let s = try_domain!("seprank_lab", lab::singular_values(&g));
    let rank = lab::rank_from_singular_values(&s, a.tol);
    let p = try_domain!("seprank_lab", lab::proportionality(&g, &v.v, lambda));
    let expected = v.v.nrows();
    let report = LabReport {
        config: json!({
            "config": cfg,
            "omega": a.omega,
            "lambda": lambda,
            "templates": grid.templates.len(),
            "matrices": theta.matrix_count(),
            "rel_tol": a.tol,
        }),
        expected_rank: expected,
        measured_rank: rank,
        singular_values: s,
        pass: rank == expected && p.max_rel_deviation <= 1e-8,
        proportionality: Some(p),
    };
    let text = format!(
        "{}ratio to (VVᵀ)^⊙{lambda}: {:.6e}{:+.3e}i, max relative deviation {:.3e}\n",
        lab_text(&report),
        p.ratio_re,
        p.ratio_im,
        p.max_rel_deviation
    );
    Ok(Report::json(serde_json::to_value(report)?, text))
}

fn run_grid_rank(a: &GridRankArgs) -> Result<Report> {
    let cfg = network_config(a.depth, a.width, a.heads, a.seq_len)?;
    let theta = match &a.network {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let doc: NetworkDocument = serde_json::from_str(&text)
                .map_err(domain("core_model", "ShapeMismatch"))
                .with_context(|| format!("parsing {}", path.display()))?;
            let (doc_cfg, theta, _) = try_domain!("core_model", doc.decode());
            if doc_cfg.depth() != cfg.depth() || doc_cfg.width() != cfg.width() || doc_cfg.heads() != cfg.heads() {
                return Err(DomainError::new(
                    "core_model",
                    "ShapeMismatch",
                    "network document does not match --depth/--width/--heads".into(),
                )
                .into());
            }
            theta.to_complex()
        }
        None => Theta::seeded(&cfg, a.seed).to_complex(),
    };
    let (templates, expected) = match a.grid {
        GridKind::Lemma => {
            let (v, _) = assignment_v(&cfg, a.omega)?;
            let (grid, _) = try_domain!("seprank_lab", lab::construct_assignment(&v.v, &cfg));
            (grid.templates, Some(v.v.nrows()))
        }
        GridKind::Full => {
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed.wrapping_add(1));
            let t = (0..a.templates)
                .map(|_| DVector::from_fn(cfg.width(), |_, _| Complex64::new(rng.random_range(-1.0..1.0), 0.0)))
                .collect();
            (t, None)
        }
    };
    let index_sets = match a.grid {
        GridKind::Lemma => IndexSets::Lemma,
        GridKind::Full => IndexSets::Full,
    };
    let partitions = if a.all_partitions {
        try_domain!("seprank_lab", lab::enumerate_balanced_partitions(cfg.seq_len(), 0))
    } else {
        if cfg.seq_len() % 2 != 0 {
            return Err(DomainError::new("seprank_lab", "InvalidArgument", "N must be even".into()).into());
        }
        vec![Partition::contiguous(cfg.seq_len())]
    };
    let mut ranks = Vec::with_capacity(partitions.len());
    let mut spectrum = Vec::new();
    for partition in partitions {
        let grid = GridSpec {
            templates: templates.clone(),
            partition,
            anchor: 0,
            index_sets,
        };
        let s = try_domain!(
            "seprank_lab",
            lab::grid_spectrum(&cfg, &theta, &grid, a.output_index, ExecMode::default())
        );
        ranks.push(lab::rank_from_singular_values(&s, a.tol));
        if spectrum.is_empty() {
            spectrum = s;
        }
    }
    let measured = ranks[0];
    let consistent = ranks.iter().all(|r| *r == measured);
    let expected_rank = expected.unwrap_or(measured);
    let report = LabReport {
        config: json!({
            "config": cfg,
            "grid": match a.grid { GridKind::Lemma => "lemma", GridKind::Full => "full" },
            "templates": templates.len(),
            "output_index": a.output_index,
            "seed": a.seed,
            "partition_ranks": ranks,
            "rel_tol": a.tol,
        }),
        expected_rank,
        measured_rank: measured,
        singular_values: spectrum,
        // random weights may exceed the constructed rank; only a shortfall fails
        pass: consistent && measured >= expected_rank,
        proportionality: None,
    };
    let mut text = lab_text(&report);
    if ranks.len() > 1 {
        text.push_str(&format!("ranks over {} partitions: {:?}\n", ranks.len(), ranks));
    }
    Ok(Report::json(serde_json::to_value(report)?, text))
}

fn run_fit(a: &FitArgs) -> Result<Report> {
    let points = load_transitions(&a.transitions)?;
    let f = try_domain!("fit_engine", fit::weighted_linear_fit(&points));
    let text = format!(
        "log d_x = a + b L over {} points\na = {:.4} ± {:.4}\nb = {:.5} ± {:.5}\ncov(a, b) = {:.3e}\nchi2_red = {:.4}\nR^2 = {:.5}\n",
        points.len(),
        f.a,
        f.sigma_a(),
        f.b,
        f.sigma_b(),
        f.cov_ab,
        f.chi2_red,
        f.r2
    );
    Ok(Report::json(serde_json::to_value(f)?, text))
}

fn run_transition(a: &TransitionArgs) -> Result<Report> {
    let records = try_domain!("fit_engine", fit::read_losses_file(&a.losses));
    let groups = try_domain!("fit_engine", fit::group_by_depth(&records));
    let mut points = Vec::new();
    let mut text = String::new();
    match (a.shallow_depth, a.deep_depth) {
        (Some(s), Some(d)) => {
            let get = |l: u32| {
                groups.get(&l).ok_or_else(|| {
                    anyhow::Error::from(DomainError::new(
                        "fit_engine",
                        "InsufficientData",
                        format!("no records at depth {l}"),
                    ))
                })
            };
            let p = try_domain!("fit_engine", fit::estimate_transition(get(s)?, get(d)?, a.k_sigma));
            points.push(p);
        }
        _ => {
            let depths: Vec<u32> = groups.keys().copied().collect();
            for pair in depths.windows(2) {
                match fit::estimate_transition(&groups[&pair[0]], &groups[&pair[1]], a.k_sigma) {
                    Ok(p) => points.push(p),
                    Err(e) => text.push_str(&format!("depth {} vs {}: {e}\n", pair[0], pair[1])),
                }
            }
            if points.is_empty() {
                return Err(DomainError::new(
                    "fit_engine",
                    "NoTransition",
                    format!("no transition found between adjacent depths {depths:?}"),
                )
                .into());
            }
        }
    }
    for p in &points {
        text.push_str(&format!("depth {}: transition width {} ± {}\n", p.depth, p.width, p.width_err));
    }
    let mut csv = Vec::new();
    try_domain!("fit_engine", fit::write_transitions(&mut csv, &points));
    Ok(Report {
        json: json!({"k_sigma": a.k_sigma, "transitions": points}),
        csv: Some(String::from_utf8(csv)?),
        text,
    })
}

fn run_plan(a: &PlanArgs) -> Result<Report> {
    let f = load_fit(&a.fit.fit)?;
    let s = try_domain!("planner", planner::suggest_architecture(a.params, &f));
    let text = format!(
        "budget {:.4e}: depth {} (root {:.3}), width {:.0} from the budget or {:.0} from the fit\ntransition size at that depth {:.4e} ± {:.3e}\n",
        s.budget, s.optimal_depth, s.optimal_depth_raw, s.width_from_budget, s.width_from_fit, s.n_transition, s.dn
    );
    Ok(Report::json(serde_json::to_value(s)?, text))
}

fn run_audit(a: &AuditArgs) -> Result<Report> {
    let f = load_fit(&a.fit.fit)?;
    let v = try_domain!("planner", planner::audit_architecture(a.depth, a.width, &f));
    let text = format!(
        "{} parameters vs transition size {:.4e} ± {:.3e} at depth {}: margin {:.4}, {}\n",
        v.params, v.n_transition, v.dn, a.depth, v.margin, v.verdict
    );
    Ok(Report::json(serde_json::to_value(v)?, text))
}

fn run_table1(a: &Table1Args) -> Result<Report> {
    let f = load_fit(&a.fit.fit)?;
    let roster: Vec<ModelSpec> = match &a.roster {
        Some(path) => try_domain!("planner", planner::read_roster_file(path)),
        None => try_domain!("planner", data::bundled_roster()),
    };
    let rows = try_domain!("planner", planner::generate_table1(&f, &roster));
    let mut csv = Vec::new();
    try_domain!("planner", planner::write_table1_csv(&mut csv, &rows));
    Ok(Report {
        json: serde_json::to_value(&rows)?,
        csv: Some(String::from_utf8(csv)?),
        text: planner::format_table1_text(&rows),
    })
}

fn run_curve(a: &CurveArgs) -> Result<Report> {
    let f = load_fit(&a.fit.fit)?;
    let c = try_domain!(
        "planner",
        planner::emit_transition_curve(&f, a.min_depth, a.max_depth, a.step)
    );
    let mut csv = Vec::new();
    try_domain!("planner", planner::write_curve_csv(&mut csv, &c));
    let text = c
        .iter()
        .map(|p| format!("L={:>3}  N={:.4e}  dN={:.3e}\n", p.depth, p.n, p.dn))
        .collect();
    Ok(Report {
        json: serde_json::to_value(&c)?,
        csv: Some(String::from_utf8(csv)?),
        text,
    })
}

fn run(cli: &Cli) -> Result<Report> {
    match &cli.command {
        Command::Bounds(a) => run_bounds(a),
        Command::Regime(a) => run_regime(a),
        Command::EquivWidth(a) => run_equiv(a),
        Command::Lab(LabCommand::Hadamard(a)) => run_hadamard(a),
        Command::Lab(LabCommand::GridRank(a)) => run_grid_rank(a),
        Command::Lab(LabCommand::Assignment(a)) => run_assignment(a),
        Command::Fit(a) => run_fit(a),
        Command::Transition(a) => run_transition(a),
        Command::Plan(a) => run_plan(a),
        Command::Audit(a) => run_audit(a),
        Command::Table1(a) => run_table1(a),
        Command::Curve(a) => run_curve(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli).and_then(|r| r.emit(cli.format, cli.out.as_deref())) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report::exit_for(&e),
    }
}
