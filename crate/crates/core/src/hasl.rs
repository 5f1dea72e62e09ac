//! Target measures and their confidence-interval estimation.
//!
//! A measure is an expectation `E[Y]`, an acceptance probability `P`, or a
//! value distribution `PDF(Y, s, l, h)` / `CDF(Y, s, l, h)` over a support
//! `[l, h]` discretised into bins of width `s`. `Y` applies one of the path
//! operators `last`, `min`, `max`, `avg` to an arithmetic expression over
//! the automaton variables; `Y` written without an operator, or as
//! arithmetic around `last(...)`, means the value at acceptance.
//!
//! [`estimate_many`] samples synchronization runs — in parallel, but with
//! per-trajectory random streams derived from `(seed, index)` and an
//! index-ordered reduction, so a report depends only on the seed and the
//! policy, never on the worker count — until every requested measure's
//! Student-t confidence interval is narrow enough or the trajectory cap is
//! reached. Rejected trajectories count toward acceptance probabilities and
//! distribution denominators but contribute no expectation samples.

use std::collections::HashMap;
use std::fmt;
use std::time::Instant;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::expr::{parse_sum, BoundExpr, Env, Expr, ExprError, Lexer, Token};
use crate::gspn::GspnModel;
use crate::lha::{ArrayCounts, DeterminismViolation, Lha, LhaError};
use crate::rng::SimRng;
use crate::sync::{
    synchronize, AvgMode, EngineOptions, ResourceBudget, SyncError, SyncOutcome,
};

/// Path operator applied along one accepted run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathOp {
    Last,
    Min,
    Max,
    Avg,
}

impl PathOp {
    fn name(self) -> &'static str {
        match self {
            PathOp::Last => "last",
            PathOp::Min => "min",
            PathOp::Max => "max",
            PathOp::Avg => "avg",
        }
    }
}

/// `op(y)` with `y` an arithmetic expression over automaton variables.
#[derive(Debug, Clone, PartialEq)]
pub struct PathFormula {
    pub op: PathOp,
    pub expr: Expr,
}

impl fmt::Display for PathFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.op.name(), self.expr)
    }
}

/// A target measure.
#[derive(Debug, Clone, PartialEq)]
pub enum HaslExpression {
    Expectation(PathFormula),
    Probability,
    Pdf {
        formula: PathFormula,
        bin_width: f64,
        support_low: f64,
        support_high: f64,
    },
    Cdf {
        formula: PathFormula,
        bin_width: f64,
        support_low: f64,
        support_high: f64,
    },
}

impl fmt::Display for HaslExpression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HaslExpression::Expectation(y) => write!(f, "E[{y}]"),
            HaslExpression::Probability => write!(f, "P"),
            HaslExpression::Pdf {
                formula,
                bin_width,
                support_low,
                support_high,
            } => write!(f, "PDF({formula},{bin_width},{support_low},{support_high})"),
            HaslExpression::Cdf {
                formula,
                bin_width,
                support_low,
                support_high,
            } => write!(f, "CDF({formula},{bin_width},{support_low},{support_high})"),
        }
    }
}

/// Parse a measure: `E[...]`, `P`, `PDF(Y,s,l,h)`, `CDF(Y,s,l,h)`, or
/// `AVG(...)` as a synonym of `E[...]`.
pub fn parse_expression(text: &str) -> Result<HaslExpression, ExprError> {
    let mut lexer = Lexer::new(text);
    let head = lexer.next_token()?;
    let expr = match head {
        Token::Ident(name) if name == "E" || name == "AVG" => {
            let (open, close, what) = if name == "E" {
                (Token::LBracket, Token::RBracket, "`]`")
            } else {
                (Token::LParen, Token::RParen, "`)`")
            };
            lexer.expect(&open, "`[`")?;
            let formula = parse_path_formula(&mut lexer, &close)?;
            lexer.expect(&close, what)?;
            HaslExpression::Expectation(formula)
        }
        Token::Ident(name) if name == "P" => HaslExpression::Probability,
        Token::Ident(name) if name == "PDF" || name == "CDF" => {
            lexer.expect(&Token::LParen, "`(`")?;
            let formula = parse_path_formula(&mut lexer, &Token::Comma)?;
            lexer.expect(&Token::Comma, "`,`")?;
            let bin_width = parse_number(&mut lexer)?;
            lexer.expect(&Token::Comma, "`,`")?;
            let support_low = parse_number(&mut lexer)?;
            lexer.expect(&Token::Comma, "`,`")?;
            let support_high = parse_number(&mut lexer)?;
            lexer.expect(&Token::RParen, "`)`")?;
            if !(bin_width > 0.0) || !(support_low < support_high) {
                return Err(ExprError::Syntax {
                    pos: lexer.pos,
                    message: "need bin width > 0 and support low < high".into(),
                });
            }
            if name == "PDF" {
                HaslExpression::Pdf {
                    formula,
                    bin_width,
                    support_low,
                    support_high,
                }
            } else {
                HaslExpression::Cdf {
                    formula,
                    bin_width,
                    support_low,
                    support_high,
                }
            }
        }
        other => {
            return Err(ExprError::Syntax {
                pos: 0,
                message: format!("expected E[..], P, PDF(..) or CDF(..), found {other:?}"),
            })
        }
    };
    lexer.expect(&Token::End, "end of expression")?;
    Ok(expr)
}

fn parse_number(lexer: &mut Lexer) -> Result<f64, ExprError> {
    let pos = lexer.pos;
    match lexer.next_token()? {
        Token::Number(v) => Ok(v),
        Token::Minus => Ok(-parse_number(lexer)?),
        other => Err(ExprError::Syntax {
            pos,
            message: format!("expected a number, found {other:?}"),
        }),
    }
}

/// Parse `Y`: either a single `op(y)` application, or arithmetic in which
/// `last(...)` sub-terms and bare variables all denote acceptance-time
/// values (normalised to `last` of one combined expression).
fn parse_path_formula(lexer: &mut Lexer, terminator: &Token) -> Result<PathFormula, ExprError> {
    // A lone `op( y )` followed by the terminator is that operator.
    let saved = lexer.pos;
    if let Token::Ident(name) = lexer.next_token()? {
        if let Some(op) = path_op(&name) {
            if lexer.peek()? == Token::LParen {
                lexer.next_token()?;
                let inner = parse_sum(lexer)?;
                if lexer.peek()? == Token::RParen {
                    let save = lexer.pos;
                    lexer.next_token()?; // consume `)`
                    if &lexer.peek()? == terminator {
                        return Ok(PathFormula { op, expr: inner });
                    }
                    lexer.pos = save;
                }
            }
        }
    }
    lexer.pos = saved;

    // General case: arithmetic with `last(...)` calls inlined.
    let expr = parse_last_arithmetic(lexer)?;
    Ok(PathFormula {
        op: PathOp::Last,
        expr,
    })
}

fn path_op(name: &str) -> Option<PathOp> {
    match name {
        "last" => Some(PathOp::Last),
        "min" => Some(PathOp::Min),
        "max" => Some(PathOp::Max),
        "avg" => Some(PathOp::Avg),
        _ => None,
    }
}

fn parse_last_arithmetic(lexer: &mut Lexer) -> Result<Expr, ExprError> {
    let mut left = parse_last_product(lexer)?;
    loop {
        match lexer.peek()? {
            Token::Plus => {
                lexer.next_token()?;
                left = Expr::add(left, parse_last_product(lexer)?);
            }
            Token::Minus => {
                lexer.next_token()?;
                left = Expr::sub(left, parse_last_product(lexer)?);
            }
            _ => return Ok(left),
        }
    }
}

fn parse_last_product(lexer: &mut Lexer) -> Result<Expr, ExprError> {
    let mut left = parse_last_atom(lexer)?;
    loop {
        match lexer.peek()? {
            Token::Star => {
                lexer.next_token()?;
                left = Expr::mul(left, parse_last_atom(lexer)?);
            }
            Token::Slash => {
                lexer.next_token()?;
                left = Expr::div(left, parse_last_atom(lexer)?);
            }
            _ => return Ok(left),
        }
    }
}

fn parse_last_atom(lexer: &mut Lexer) -> Result<Expr, ExprError> {
    let pos = lexer.pos;
    match lexer.next_token()? {
        Token::Number(v) => Ok(Expr::Const(v)),
        Token::Ident(name) => {
            if lexer.peek()? == Token::LParen {
                let Some(op) = path_op(&name) else {
                    return Err(ExprError::Syntax {
                        pos,
                        message: format!("unknown function `{name}`"),
                    });
                };
                if op != PathOp::Last {
                    return Err(ExprError::Syntax {
                        pos,
                        message: format!(
                            "`{}` cannot be combined with arithmetic; only `last` can",
                            op.name()
                        ),
                    });
                }
                lexer.next_token()?;
                let inner = parse_sum(lexer)?;
                lexer.expect(&Token::RParen, "`)`")?;
                Ok(inner)
            } else {
                Ok(Expr::Ident(name))
            }
        }
        Token::Minus => Ok(Expr::Neg(Box::new(parse_last_atom(lexer)?))),
        Token::LParen => {
            let inner = parse_last_arithmetic(lexer)?;
            lexer.expect(&Token::RParen, "`)`")?;
            Ok(inner)
        }
        other => Err(ExprError::Syntax {
            pos,
            message: format!("expected expression, found {other:?}"),
        }),
    }
}

// ---------------------------------------------------------------------------
// Histograms

/// Bin classification over a discretised support.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinIndex {
    Bin(usize),
    BelowSupport,
    AboveSupport,
}

/// Number of bins covering `[low, high]` at the given width (rounded up).
pub fn bin_count(bin_width: f64, support_low: f64, support_high: f64) -> usize {
    ((support_high - support_low) / bin_width).ceil() as usize
}

/// Bin of a value: bin `k` covers `[low + k*s, low + (k+1)*s)`, with the
/// last bin closed above; out-of-support values land in overflow tallies.
pub fn bin_index(value: f64, bin_width: f64, support_low: f64, support_high: f64) -> BinIndex {
    if value < support_low {
        return BinIndex::BelowSupport;
    }
    if value > support_high {
        return BinIndex::AboveSupport;
    }
    let bins = bin_count(bin_width, support_low, support_high);
    let k = ((value - support_low) / bin_width).floor() as usize;
    BinIndex::Bin(k.min(bins.saturating_sub(1)))
}

/// Frequency histogram of acceptance-time values.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Histogram {
    pub bin_width: f64,
    pub support_low: f64,
    pub support_high: f64,
    /// Raw per-bin sample counts (never cumulative).
    pub counts: Vec<u64>,
    pub below_support: u64,
    pub above_support: u64,
    /// Per-bin frequency: counts divided by the total number of generated
    /// trajectories; cumulative when the measure is a CDF.
    pub frequencies: Vec<f64>,
    pub cumulative: bool,
}

impl Histogram {
    fn new(bin_width: f64, support_low: f64, support_high: f64, cumulative: bool) -> Histogram {
        Histogram {
            bin_width,
            support_low,
            support_high,
            counts: vec![0; bin_count(bin_width, support_low, support_high)],
            below_support: 0,
            above_support: 0,
            frequencies: Vec::new(),
            cumulative,
        }
    }

    fn record(&mut self, value: f64) {
        match bin_index(value, self.bin_width, self.support_low, self.support_high) {
            BinIndex::Bin(k) => self.counts[k] += 1,
            BinIndex::BelowSupport => self.below_support += 1,
            BinIndex::AboveSupport => self.above_support += 1,
        }
    }

    fn finalize(&mut self, total_generated: u64) {
        let denom = total_generated.max(1) as f64;
        let mut acc = 0.0;
        self.frequencies = self
            .counts
            .iter()
            .map(|&c| {
                let f = c as f64 / denom;
                if self.cumulative {
                    acc += f;
                    acc
                } else {
                    f
                }
            })
            .collect();
    }

    /// Total in-support mass plus overflow tallies.
    pub fn total_recorded(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.below_support + self.above_support
    }

    /// Index of the most populated bin.
    pub fn mode_bin(&self) -> Option<usize> {
        self.counts
            .iter()
            .enumerate()
            .max_by_key(|&(_, c)| *c)
            .map(|(k, _)| k)
    }

    /// CSV rendering: `bin_low,bin_high,frequency,count`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_low,bin_high,frequency,count\n");
        for (k, (&count, &freq)) in self.counts.iter().zip(&self.frequencies).enumerate() {
            let lo = self.support_low + k as f64 * self.bin_width;
            let hi = (lo + self.bin_width).min(self.support_high);
            out.push_str(&format!("{lo},{hi},{freq},{count}\n"));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Policy and report

/// Target half-width of the confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum IntervalWidth {
    /// Absolute half-width.
    Absolute(f64),
    /// Half-width as a fraction of the current point estimate.
    Relative(f64),
}

/// Sequential stopping policy.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CiPolicy {
    /// Confidence level in (0,1), e.g. 0.99.
    pub confidence_level: f64,
    pub target_width: IntervalWidth,
    /// Accepted samples required before stopping is considered.
    pub min_samples: u64,
    /// Cap on generated trajectories.
    pub max_samples: u64,
    /// The interval is checked once per batch of this many trajectories,
    /// which also bounds the stopping bias of per-sample peeking.
    pub batch: u64,
}

impl Default for CiPolicy {
    fn default() -> Self {
        CiPolicy {
            confidence_level: 0.99,
            target_width: IntervalWidth::Absolute(0.01),
            min_samples: 30,
            max_samples: 1_000_000,
            batch: 64,
        }
    }
}

/// Everything an estimation run needs besides the model, automaton and
/// measures.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub policy: CiPolicy,
    pub budget: ResourceBudget,
    pub avg_mode: AvgMode,
    pub seed: u64,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            policy: CiPolicy::default(),
            budget: ResourceBudget::default(),
            avg_mode: AvgMode::Time,
            seed: 0,
            workers: 1,
        }
    }
}

/// Point estimate with confidence interval for one measure.
#[derive(Debug, Clone, Serialize)]
pub struct EstimationReport {
    pub expression: String,
    pub point_estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub confidence_level: f64,
    /// Samples behind the estimate: accepted trajectories for expectations
    /// and distributions, all trajectories for probabilities.
    pub samples_used: u64,
    pub accepted_count: u64,
    pub rejected_count: u64,
    /// Accepted runs whose value was not finite (e.g. division by zero).
    pub discarded_count: u64,
    pub seed: u64,
    pub elapsed_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub histogram: Option<Histogram>,
}

/// Per-level frequency summary of one automaton counter array, averaged
/// over accepted runs.
#[derive(Debug, Clone, Serialize)]
pub struct ArraySummary {
    pub name: String,
    /// Raw tally sums per level across accepted runs.
    pub count_sums: Vec<u64>,
    pub overflow_sum: u64,
    /// Mean over accepted runs of each level's within-run frequency.
    pub frequency_means: Vec<f64>,
}

/// Result of one estimation run over a set of measures.
#[derive(Debug, Clone, Serialize)]
pub struct Estimation {
    pub reports: Vec<EstimationReport>,
    pub total_generated: u64,
    pub accepted_count: u64,
    pub rejected_count: u64,
    pub acceptance_rate: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub arrays: Vec<ArraySummary>,
}

impl Estimation {
    /// CSV of two peak-level arrays side by side:
    /// `level,frequency_max,frequency_min`.
    pub fn peak_levels_csv(&self) -> Option<String> {
        let lmax = self.arrays.iter().find(|a| a.name == "Lmax")?;
        let lmin = self.arrays.iter().find(|a| a.name == "Lmin")?;
        let mut out = String::from("level,frequency_max,frequency_min\n");
        let levels = lmax.frequency_means.len().max(lmin.frequency_means.len());
        for level in 0..levels {
            let fmax = lmax.frequency_means.get(level).copied().unwrap_or(0.0);
            let fmin = lmin.frequency_means.get(level).copied().unwrap_or(0.0);
            if fmax != 0.0 || fmin != 0.0 {
                out.push_str(&format!("{level},{fmax},{fmin}\n"));
            }
        }
        Some(out)
    }
}

/// Estimation failures.
#[derive(Debug, Error)]
pub enum EstimationError {
    #[error("automaton failed determinism validation: {0:?}")]
    Determinism(Vec<DeterminismViolation>),
    #[error(transparent)]
    Lha(#[from] LhaError),
    #[error(transparent)]
    Sync(#[from] SyncError),
    #[error("expression `{expr}`: {source}")]
    Expression { expr: String, source: ExprError },
    #[error(
        "no trajectory was accepted within {max_samples} samples; the automaton never reached a final location"
    )]
    NoAccepted { max_samples: u64 },
    #[error("confidence level must be in (0,1), got {0}")]
    BadConfidence(f64),
    #[error("min_samples must be at least 2")]
    BadMinSamples,
}

// ---------------------------------------------------------------------------
// Welford accumulation and Student-t intervals

#[derive(Debug, Clone, Copy, Default)]
struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn sample_variance(&self) -> f64 {
        if self.n > 1 {
            self.m2 / (self.n - 1) as f64
        } else {
            f64::INFINITY
        }
    }

    fn half_width(&self, confidence: f64) -> f64 {
        if self.n < 2 {
            return f64::INFINITY;
        }
        let t = student_t_quantile(confidence, (self.n - 1) as f64);
        t * (self.sample_variance() / self.n as f64).sqrt()
    }
}

fn student_t_quantile(confidence: f64, dof: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, dof).expect("valid t distribution");
    dist.inverse_cdf(1.0 - (1.0 - confidence) / 2.0)
}

// ---------------------------------------------------------------------------
// Estimation

enum MeasurePlan {
    Expectation { tracked: usize, op: PathOp },
    Probability,
    Distribution { tracked: usize, op: PathOp },
}

/// Value of a path formula on one accepted run, read from the engine's
/// on-the-fly accumulators for the `tracked`-th expression. A non-finite
/// result (e.g. a division by zero inside `y`) makes the estimator discard
/// the trajectory and count it separately.
pub fn evaluate_path(outcome: &SyncOutcome, tracked: usize, op: PathOp) -> f64 {
    let stats = &outcome.stats;
    match op {
        PathOp::Last => stats.tracked[tracked].last,
        PathOp::Min => stats.tracked[tracked].min,
        PathOp::Max => stats.tracked[tracked].max,
        PathOp::Avg => stats.tracked_average(tracked),
    }
}

struct TrajectorySample {
    accepted: bool,
    /// Per-tracked-expression (last, min, max, avg-relevant) values.
    values: Vec<f64>,
    arrays: Vec<ArrayCounts>,
}

/// Estimate one measure; see [`estimate_many`].
pub fn estimate(
    model: &GspnModel,
    lha: &Lha,
    expr: &HaslExpression,
    config: &RunConfig,
) -> Result<EstimationReport, EstimationError> {
    let estimation = estimate_many(model, lha, std::slice::from_ref(expr), config)?;
    Ok(estimation.reports.into_iter().next().expect("one report"))
}

/// Estimate several measures over one shared set of sampled trajectories.
pub fn estimate_many(
    model: &GspnModel,
    lha: &Lha,
    exprs: &[HaslExpression],
    config: &RunConfig,
) -> Result<Estimation, EstimationError> {
    let policy = &config.policy;
    if !(policy.confidence_level > 0.0 && policy.confidence_level < 1.0) {
        return Err(EstimationError::BadConfidence(policy.confidence_level));
    }
    if policy.min_samples < 2 {
        return Err(EstimationError::BadMinSamples);
    }
    let violations = lha.check_determinism();
    if !violations.is_empty() {
        return Err(EstimationError::Determinism(violations));
    }
    let bound = lha.bind(model, &[])?;

    // Bind each measure's expression over the automaton variables and give
    // the engine the list of expressions to accumulate along each run.
    let var_index: HashMap<String, usize> = lha
        .variables
        .iter()
        .enumerate()
        .map(|(i, v)| (v.clone(), i))
        .collect();
    let no_places = HashMap::new();
    let env = Env::with_vars(&no_places, &var_index);
    let mut tracked: Vec<BoundExpr> = Vec::new();
    let mut plans: Vec<MeasurePlan> = Vec::new();
    let mut histograms: Vec<Option<Histogram>> = Vec::new();
    for expr in exprs {
        let mut bind_formula = |f: &PathFormula| -> Result<usize, EstimationError> {
            let bound_expr = f
                .expr
                .bind(&env)
                .map_err(|source| EstimationError::Expression {
                    expr: expr.to_string(),
                    source,
                })?;
            tracked.push(bound_expr);
            Ok(tracked.len() - 1)
        };
        let plan = match expr {
            HaslExpression::Expectation(f) => MeasurePlan::Expectation {
                tracked: bind_formula(f)?,
                op: f.op,
            },
            HaslExpression::Probability => MeasurePlan::Probability,
            HaslExpression::Pdf {
                formula,
                bin_width,
                support_low,
                support_high,
            } => {
                histograms.push(Some(Histogram::new(
                    *bin_width,
                    *support_low,
                    *support_high,
                    false,
                )));
                MeasurePlan::Distribution {
                    tracked: bind_formula(formula)?,
                    op: formula.op,
                }
            }
            HaslExpression::Cdf {
                formula,
                bin_width,
                support_low,
                support_high,
            } => {
                histograms.push(Some(Histogram::new(
                    *bin_width,
                    *support_low,
                    *support_high,
                    true,
                )));
                MeasurePlan::Distribution {
                    tracked: bind_formula(formula)?,
                    op: formula.op,
                }
            }
        };
        if histograms.len() < plans.len() + 1 {
            histograms.push(None);
        }
        plans.push(plan);
    }

    let options = EngineOptions {
        budget: config.budget,
        avg_mode: config.avg_mode,
        tracked,
    };

    let keep_arrays = !lha.arrays.is_empty();
    let run_one = |index: u64| -> Result<TrajectorySample, SyncError> {
        let mut rng = SimRng::for_trajectory(config.seed, index);
        let outcome = synchronize(&bound, &mut rng, &options)?;
        let accepted = outcome.verdict.is_accepted();
        let values = plans
            .iter()
            .map(|plan| match plan {
                MeasurePlan::Expectation { tracked, op } => evaluate_path(&outcome, *tracked, *op),
                MeasurePlan::Probability => 0.0,
                MeasurePlan::Distribution { tracked, op } => {
                    evaluate_path(&outcome, *tracked, *op)
                }
            })
            .collect();
        let arrays = if keep_arrays && accepted {
            outcome.final_state.valuation.arrays
        } else {
            Vec::new()
        };
        Ok(TrajectorySample {
            accepted,
            values,
            arrays,
        })
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.max(1))
        .build()
        .expect("worker pool");

    let started = Instant::now();
    let mut accumulators: Vec<Welford> = vec![Welford::default(); plans.len()];
    let mut discarded: Vec<u64> = vec![0; plans.len()];
    let mut array_sums: Vec<(Vec<u64>, u64, Vec<f64>)> = lha
        .arrays
        .iter()
        .map(|a| (vec![0u64; a.bound], 0u64, vec![0.0; a.bound]))
        .collect();
    let mut array_runs = 0u64;
    let mut total = 0u64;
    let mut accepted_count = 0u64;

    'sampling: while total < policy.max_samples {
        let batch = policy.batch.min(policy.max_samples - total).max(1);
        let samples: Vec<TrajectorySample> = pool.install(|| {
            use rayon::prelude::*;
            (total..total + batch)
                .into_par_iter()
                .map(run_one)
                .collect::<Result<Vec<_>, _>>()
        })?;

        // Reduction in trajectory-index order keeps reports independent of
        // the worker count.
        for sample in samples {
            total += 1;
            if sample.accepted {
                accepted_count += 1;
            }
            for (i, plan) in plans.iter().enumerate() {
                match plan {
                    MeasurePlan::Probability => {
                        accumulators[i].push(if sample.accepted { 1.0 } else { 0.0 });
                    }
                    MeasurePlan::Expectation { .. } | MeasurePlan::Distribution { .. } => {
                        if sample.accepted {
                            let value = sample.values[i];
                            if value.is_finite() {
                                accumulators[i].push(value);
                                if let Some(h) = &mut histograms[i] {
                                    h.record(value);
                                }
                            } else {
                                discarded[i] += 1;
                            }
                        }
                    }
                }
            }
            if sample.accepted && keep_arrays {
                array_runs += 1;
                for (bank, (count_sums, overflow_sum, freq_sums)) in
                    sample.arrays.iter().zip(&mut array_sums)
                {
                    let run_total: u64 = bank.counts.iter().sum::<u64>() + bank.overflow;
                    for (k, &c) in bank.counts.iter().enumerate() {
                        count_sums[k] += c;
                        if run_total > 0 {
                            freq_sums[k] += c as f64 / run_total as f64;
                        }
                    }
                    *overflow_sum += bank.overflow;
                }
            }
        }


        if accepted_count >= policy.min_samples {
            let mut all_tight = true;
            for (i, plan) in plans.iter().enumerate() {
                let acc = &accumulators[i];
                let needed = match plan {
                    MeasurePlan::Probability => acc.n >= policy.min_samples,
                    _ => acc.n >= policy.min_samples,
                };
                let width_ok = {
                    let hw = acc.half_width(policy.confidence_level);
                    match policy.target_width {
                        IntervalWidth::Absolute(target) => hw <= target,
                        IntervalWidth::Relative(fraction) => {
                            hw <= fraction * acc.mean.abs().max(f64::MIN_POSITIVE)
                        }
                    }
                };
                if !(needed && width_ok) {
                    all_tight = false;
                    break;
                }
            }
            if all_tight {
                break 'sampling;
            }
        }
    }

    let rejected_count = total - accepted_count;
    let needs_accepted = plans
        .iter()
        .any(|p| !matches!(p, MeasurePlan::Probability));
    if needs_accepted && accepted_count == 0 {
        return Err(EstimationError::NoAccepted {
            max_samples: policy.max_samples,
        });
    }

    let elapsed = started.elapsed().as_secs_f64();
    let reports = plans
        .iter()
        .zip(exprs)
        .enumerate()
        .map(|(i, (plan, expr))| {
            let acc = &accumulators[i];
            let hw = acc.half_width(policy.confidence_level);
            let _ = plan;
            let histogram = histograms[i].clone().map(|mut h: Histogram| {
                h.finalize(total);
                h
            });
            EstimationReport {
                expression: expr.to_string(),
                point_estimate: acc.mean,
                ci_low: acc.mean - hw,
                ci_high: acc.mean + hw,
                confidence_level: policy.confidence_level,
                samples_used: acc.n,
                accepted_count,
                rejected_count,
                discarded_count: discarded[i],
                seed: config.seed,
                elapsed_seconds: elapsed,
                histogram,
            }
        })
        .collect();

    let arrays = lha
        .arrays
        .iter()
        .zip(array_sums)
        .map(|(decl, (count_sums, overflow_sum, freq_sums))| ArraySummary {
            name: decl.name.clone(),
            count_sums,
            overflow_sum,
            frequency_means: freq_sums
                .into_iter()
                .map(|s| s / array_runs.max(1) as f64)
                .collect(),
        })
        .collect();

    Ok(Estimation {
        reports,
        total_generated: total,
        accepted_count,
        rejected_count,
        acceptance_rate: accepted_count as f64 / total.max(1) as f64,
        arrays,
    })
}
