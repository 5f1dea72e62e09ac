//! Statistical model checking of stochastic Petri nets against linear
//! hybrid automata.
//!
//! The crate simulates timed trajectories of a [`gspn::GspnModel`],
//! synchronizes them with an [`lha::Lha`] acting as a trajectory selector and
//! on-the-fly measurer, and estimates target measures (expectations,
//! acceptance probabilities, value distributions) over the accepted runs
//! with sequential confidence-interval stopping.
//!
//! Two automaton families ship with the crate for analysing stochastic
//! oscillators: a period detector maintaining the running mean and
//! fluctuation of threshold-crossing periods, and a noise-filtered peak
//! detector recording the heights of separated local extrema. See
//! [`oscillation`]. The [`models`] module provides ready-made benchmark
//! nets.

pub mod expr;
pub mod gspn;
pub mod hasl;
pub mod lha;
pub mod models;
pub mod oscillation;
pub mod rng;
pub mod sync;

pub use expr::{parse_expr, Expr};
pub use gspn::{DelayLaw, GspnModel, StopCondition, TimedEvent, TransitionSpec};
pub use hasl::{
    estimate, estimate_many, parse_expression, CiPolicy, Estimation, EstimationReport,
    HaslExpression, IntervalWidth, RunConfig,
};
pub use lha::{counting_automaton, Lha, Valuation};
pub use models::{circadian, gene_expression, CircadianRates, GeneExpressionRates};
pub use oscillation::{
    build_aper, build_apeaks, classify_events, offline_peaks, offline_periods, EventPartition,
    PeaksParams, PeriodParams,
};
pub use rng::{RandomSource, SimRng};
pub use sync::{replay, synchronize, EngineOptions, ResourceBudget, SyncOutcome, Verdict};
