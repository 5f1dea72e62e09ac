//! Oscillation measurement: period-detector and peak-detector automata,
//! their online statistics, and offline reference oracles.
//!
//! # Period detection
//!
//! Two thresholds `L < H` partition the observed species' range into a low
//! region (`A <= L`), a mid region and a high region (`A >= H`). A period
//! starts and ends on entry into the low region, with at least one visit to
//! the high region in between. [`build_aper`] produces an automaton that
//! rides the trajectory through locations `low`/`mid`/`high`, counts period
//! closures, and maintains the running mean `tbar_p` and fluctuation
//! `s2_tp` (population variance) of the period durations through the online
//! updates [`update_mean`] and [`update_fluctuation`]. An initial transient
//! of length `init_t` is left unmeasured, and the first partially observed
//! period is always discarded. Acceptance happens after `n_periods`
//! closures.
//!
//! # Peak detection
//!
//! [`build_apeaks`] produces an automaton that commits a local extremum only
//! once the trajectory has moved at least `delta` away from it, filtering
//! fluctuations smaller than the chosen noise level. It needs the event set
//! partitioned by the sign of each transition's effect on the species
//! ([`classify_events`]). Committed peak heights accumulate into sums
//! (`Smax`, `Smin`), counters (`n_M`, `n_m`) and bounded per-level frequency
//! arrays (`Lmax`, `Lmin`). Acceptance happens after `n_peaks` committed
//! maxima.
//!
//! [`offline_periods`] and [`offline_peaks`] recompute both analyses by a
//! direct scan over a recorded `(time, value)` trace; the automata agree
//! with them exactly, which the test suite checks on randomized traces.

use thiserror::Error;

use crate::expr::Expr;
use crate::gspn::{GspnModel, SimError, StopCondition};
use crate::lha::{
    CmpOp, EdgeConstraintSpec, Lha, LhaBuilder, LhaError, Proposition, TriggerSpec, UpdateRhs,
};
use crate::rng::SimRng;

/// Parameters of the period-detector automaton.
#[derive(Debug, Clone)]
pub struct PeriodParams {
    /// Observed place name.
    pub species: String,
    /// Low threshold: the low region is `species <= low`.
    pub low: u64,
    /// High threshold: the high region is `species >= high`.
    pub high: u64,
    /// Transient filter: measurement starts this long after time zero.
    pub init_t: f64,
    /// Number of periods to detect before accepting.
    pub n_periods: u64,
}

/// Partition of the event set by the sign of each event's effect on the
/// observed species.
#[derive(Debug, Clone, Default)]
pub struct EventPartition {
    pub increasing: Vec<String>,
    pub decreasing: Vec<String>,
    pub neutral: Vec<String>,
}

impl EventPartition {
    pub fn alphabet(&self) -> Vec<String> {
        let mut all = self.increasing.clone();
        all.extend(self.decreasing.iter().cloned());
        all.extend(self.neutral.iter().cloned());
        all
    }
}

/// Parameters of the peak-detector automaton.
#[derive(Debug, Clone)]
pub struct PeaksParams {
    /// Observed place name.
    pub species: String,
    /// Noise level: an extremum is committed only after the trajectory has
    /// moved at least this far away from it.
    pub delta: u64,
    /// Transient filter duration.
    pub init_t: f64,
    /// Number of maxima to detect before accepting.
    pub n_peaks: u64,
    /// Event partition with respect to the observed species.
    pub partition: EventPartition,
    /// Capacity of the per-level frequency arrays; higher levels go to the
    /// overflow counter.
    pub level_bound: usize,
}

/// Parameter validation failures for the oscillation automata.
#[derive(Debug, Error)]
pub enum OscillationError {
    #[error("thresholds must satisfy low < high (got {low} >= {high})")]
    Thresholds { low: u64, high: u64 },
    #[error("the number of detected periods/peaks must be at least 1")]
    ZeroTarget,
    #[error("noise level delta must be at least 1")]
    ZeroDelta,
    #[error("event partition must be disjoint; `{0}` appears twice")]
    PartitionOverlap(String),
    #[error("unknown place `{0}`")]
    UnknownSpecies(String),
    #[error(transparent)]
    Lha(#[from] LhaError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

// ---------------------------------------------------------------------------
// Online statistics

/// Online mean update: fold one new sample into a running mean.
///
/// `prior_count` is the number of samples already in `mean`; the result is
/// the mean of `prior_count + 1` samples.
pub fn update_mean(mean: f64, sample: f64, prior_count: u64) -> f64 {
    let n = prior_count as f64;
    (mean * n + sample) / (n + 1.0)
}

/// Online fluctuation update: fold one new sample into the running
/// population variance.
///
/// `mean` is the mean *before* incorporating `sample`, and `new_count >= 2`
/// is the sample count *including* it. Iterating this update reproduces the
/// batch value `(1/n) * sum_i (x_i - mean_n)^2` up to rounding.
pub fn update_fluctuation(s2: f64, mean: f64, sample: f64, new_count: u64) -> f64 {
    debug_assert!(new_count >= 2);
    let n = new_count as f64;
    let new_mean = update_mean(mean, sample, new_count - 1);
    ((n - 1.0) * s2 + (sample - mean) * (sample - new_mean)) / n
}

// ---------------------------------------------------------------------------
// Automaton builders

fn cmp(lhs: Expr, op: CmpOp, rhs: Expr) -> (Expr, CmpOp, Expr) {
    (lhs, op, rhs)
}

fn guard(comparisons: Vec<(Expr, CmpOp, Expr)>) -> EdgeConstraintSpec {
    EdgeConstraintSpec { comparisons }
}

/// Build the period-detector automaton over the given event alphabet
/// (normally every transition of the observed model).
pub fn build_aper(params: &PeriodParams, events: Vec<String>) -> Result<Lha, OscillationError> {
    if params.low >= params.high {
        return Err(OscillationError::Thresholds {
            low: params.low,
            high: params.high,
        });
    }
    if params.n_periods == 0 {
        return Err(OscillationError::ZeroTarget);
    }
    let species = params.species.as_str();
    let low_c = || Expr::constant(params.low as f64);
    let high_c = || Expr::constant(params.high as f64);
    let n_target = || Expr::constant(params.n_periods as f64);
    let var = Expr::ident;
    let alphabet = events.clone();
    let all = || TriggerSpec::Events(alphabet.clone());
    let clocks = || vec![("t", Expr::constant(1.0)), ("t_p", Expr::constant(1.0))];

    let variables = ["t", "t_p", "n", "top", "tbar_p", "s2_tp"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut b = LhaBuilder::new(events, variables);

    b.location("init", Proposition::top(), clocks())
        .location(
            "settle",
            Proposition::new(vec![cmp(var(species), CmpOp::Gt, low_c())]),
            clocks(),
        )
        .location(
            "low",
            Proposition::new(vec![cmp(var(species), CmpOp::Le, low_c())]),
            clocks(),
        )
        .location(
            "mid",
            Proposition::new(vec![
                cmp(low_c(), CmpOp::Lt, var(species)),
                cmp(var(species), CmpOp::Lt, high_c()),
            ]),
            clocks(),
        )
        .location(
            "high",
            Proposition::new(vec![cmp(var(species), CmpOp::Ge, high_c())]),
            clocks(),
        )
        .location("end", Proposition::top(), clocks())
        .initial("init")
        .final_location("end");

    // Entering measurement: the first observed low interval is spurious, so
    // the period counter starts one below zero.
    let start_measuring = || {
        vec![
            ("n", UpdateRhs::Expr(Expr::constant(-1.0))),
            ("t", UpdateRhs::Expr(Expr::constant(0.0))),
            ("t_p", UpdateRhs::Expr(Expr::constant(0.0))),
        ]
    };

    // Transient filter: wait until `t >= init_t`, then place the automaton
    // according to the current region (`settle` stands for "not yet low").
    let after_transient = || guard(vec![cmp(var("t"), CmpOp::Ge, Expr::constant(params.init_t))]);
    b.edge("init", "init", all(), EdgeConstraintSpec::top(), vec![]);
    b.edge("init", "low", TriggerSpec::Autonomous, after_transient(), start_measuring());
    b.edge("init", "settle", TriggerSpec::Autonomous, after_transient(), vec![]);
    b.edge("settle", "settle", all(), EdgeConstraintSpec::top(), vec![]);
    b.edge("settle", "low", all(), EdgeConstraintSpec::top(), start_measuring());

    // Region-tracking edges. Entering `high` raises the `top` flag; entering
    // `low` with the flag raised closes a period.
    let set_top = || vec![("top", UpdateRhs::Expr(Expr::constant(1.0)))];
    b.edge("low", "low", all(), EdgeConstraintSpec::top(), vec![]);
    b.edge("low", "mid", all(), EdgeConstraintSpec::top(), vec![]);
    b.edge("low", "high", all(), EdgeConstraintSpec::top(), set_top());
    b.edge("mid", "mid", all(), EdgeConstraintSpec::top(), vec![]);
    b.edge("mid", "high", all(), EdgeConstraintSpec::top(), set_top());
    b.edge("high", "high", all(), EdgeConstraintSpec::top(), vec![]);
    b.edge("high", "mid", all(), EdgeConstraintSpec::top(), vec![]);

    // Four ways to (re)enter `low`, from `mid` and from `high` alike:
    //  - first closure after the spurious interval: reset the clocks;
    //  - closure of the first period: fold into the mean only;
    //  - closure of a later period: fold into mean and fluctuation;
    //  - return without having visited `high`: no bookkeeping.
    let mean_update = "(tbar_p * n + t_p) / (n + 1)";
    let fluct_update =
        "(n * s2_tp + (t_p - tbar_p) * (t_p - (tbar_p * n + t_p) / (n + 1))) / (n + 1)";
    let n_plus_one = || UpdateRhs::Expr(crate::expr::parse_expr("n + 1").unwrap());
    let reset = || UpdateRhs::Expr(Expr::constant(0.0));
    let top_is = |v: f64| cmp(var("top"), CmpOp::Eq, Expr::constant(v));
    for source in ["mid", "high"] {
        b.edge(
            source,
            "low",
            all(),
            guard(vec![cmp(var("n"), CmpOp::Eq, Expr::constant(-1.0)), top_is(1.0)]),
            vec![
                ("n", n_plus_one()),
                ("top", reset()),
                ("t", reset()),
                ("t_p", reset()),
            ],
        );
        b.edge(
            source,
            "low",
            all(),
            guard(vec![cmp(var("n"), CmpOp::Eq, Expr::constant(0.0)), top_is(1.0)]),
            vec![
                ("n", n_plus_one()),
                ("top", reset()),
                ("tbar_p", UpdateRhs::Expr(crate::expr::parse_expr(mean_update).unwrap())),
                ("t_p", reset()),
            ],
        );
        b.edge(
            source,
            "low",
            all(),
            guard(vec![
                cmp(var("n"), CmpOp::Ge, Expr::constant(1.0)),
                cmp(var("n"), CmpOp::Le, n_target()),
                top_is(1.0),
            ]),
            vec![
                ("n", n_plus_one()),
                ("top", reset()),
                ("tbar_p", UpdateRhs::Expr(crate::expr::parse_expr(mean_update).unwrap())),
                ("s2_tp", UpdateRhs::Expr(crate::expr::parse_expr(fluct_update).unwrap())),
                ("t_p", reset()),
            ],
        );
        b.edge(
            source,
            "low",
            all(),
            guard(vec![cmp(var("n"), CmpOp::Lt, n_target()), top_is(0.0)]),
            vec![],
        );
    }

    b.edge(
        "low",
        "end",
        TriggerSpec::Autonomous,
        guard(vec![cmp(var("n"), CmpOp::Eq, n_target())]),
        vec![],
    );

    Ok(b.build()?)
}

/// Build the peak-detector automaton.
pub fn build_apeaks(params: &PeaksParams) -> Result<Lha, OscillationError> {
    if params.delta == 0 {
        return Err(OscillationError::ZeroDelta);
    }
    if params.n_peaks == 0 {
        return Err(OscillationError::ZeroTarget);
    }
    let mut seen = std::collections::HashSet::new();
    for name in params.partition.alphabet() {
        if !seen.insert(name.clone()) {
            return Err(OscillationError::PartitionOverlap(name));
        }
    }

    let species = params.species.as_str();
    let var = Expr::ident;
    let delta = params.delta as f64;
    // Commit thresholds: the register against the current level +- delta.
    let above = || Expr::add(var(species), Expr::constant(delta));
    let below = || Expr::sub(var(species), Expr::constant(delta));

    let incr = params.partition.increasing.clone();
    let decr = params.partition.decreasing.clone();
    let neut = params.partition.neutral.clone();
    let alphabet = params.partition.alphabet();
    let all = TriggerSpec::Events(alphabet.clone());

    let variables = ["t", "x", "n_M", "n_m", "Smax", "Smin"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut b = LhaBuilder::new(alphabet, variables);
    b.array("Lmax", params.level_bound);
    b.array("Lmin", params.level_bound);

    let clock = || vec![("t", Expr::constant(1.0))];
    for name in ["init", "start", "max", "noisy_dec", "min", "noisy_inc", "end"] {
        b.location(name, Proposition::top(), clock());
    }
    b.initial("init").final_location("end");

    let track = || vec![("x", UpdateRhs::Expr(var(species)))];
    let commit_max = || {
        vec![
            ("Smax", UpdateRhs::Expr(crate::expr::parse_expr("Smax + x").unwrap())),
            ("n_M", UpdateRhs::Expr(crate::expr::parse_expr("n_M + 1").unwrap())),
            ("Lmax", UpdateRhs::Tally(var("x"))),
            ("x", UpdateRhs::Expr(var(species))),
        ]
    };
    let commit_min = || {
        vec![
            ("Smin", UpdateRhs::Expr(crate::expr::parse_expr("Smin + x").unwrap())),
            ("n_m", UpdateRhs::Expr(crate::expr::parse_expr("n_m + 1").unwrap())),
            ("Lmin", UpdateRhs::Tally(var("x"))),
            ("x", UpdateRhs::Expr(var(species))),
        ]
    };

    // Transient filter, then anchor the register on the current level.
    b.edge("init", "init", all, EdgeConstraintSpec::top(), vec![]);
    b.edge(
        "init",
        "start",
        TriggerSpec::Autonomous,
        guard(vec![cmp(var("t"), CmpOp::Ge, Expr::constant(params.init_t))]),
        vec![
            ("x", UpdateRhs::Expr(var(species))),
            ("t", UpdateRhs::Expr(Expr::constant(0.0))),
        ],
    );

    // One edge per (location, movement direction, threshold case). Neutral
    // events self-loop everywhere; empty event classes produce no edge.
    let mut edge = |src: &str,
                    dst: &str,
                    events: &Vec<String>,
                    g: EdgeConstraintSpec,
                    up: Vec<(&str, UpdateRhs)>| {
        if !events.is_empty() {
            b.edge(src, dst, TriggerSpec::Events(events.clone()), g, up);
        }
    };
    let top = EdgeConstraintSpec::top;

    edge("start", "start", &neut, top(), vec![]);
    edge("start", "max", &incr, top(), track());
    edge("start", "min", &decr, top(), track());

    // `max`: the register holds the running maximum since the last commit.
    edge("max", "max", &incr, top(), track());
    edge("max", "max", &neut, top(), vec![]);
    edge("max", "min", &decr, guard(vec![cmp(var("x"), CmpOp::Ge, above())]), commit_max());
    edge("max", "noisy_dec", &decr, guard(vec![cmp(var("x"), CmpOp::Lt, above())]), vec![]);

    // `noisy_dec`: below the candidate maximum, but not yet by delta.
    edge("noisy_dec", "noisy_dec", &neut, top(), vec![]);
    edge("noisy_dec", "min", &decr, guard(vec![cmp(var("x"), CmpOp::Ge, above())]), commit_max());
    edge("noisy_dec", "noisy_dec", &decr, guard(vec![cmp(var("x"), CmpOp::Lt, above())]), vec![]);
    edge("noisy_dec", "max", &incr, guard(vec![cmp(var("x"), CmpOp::Lt, var(species))]), track());
    edge("noisy_dec", "noisy_dec", &incr, guard(vec![cmp(var("x"), CmpOp::Ge, var(species))]), vec![]);

    // `min` and `noisy_inc`: the dual picture.
    edge("min", "min", &decr, top(), track());
    edge("min", "min", &neut, top(), vec![]);
    edge("min", "max", &incr, guard(vec![cmp(var("x"), CmpOp::Le, below())]), commit_min());
    edge("min", "noisy_inc", &incr, guard(vec![cmp(var("x"), CmpOp::Gt, below())]), vec![]);

    edge("noisy_inc", "noisy_inc", &neut, top(), vec![]);
    edge("noisy_inc", "max", &incr, guard(vec![cmp(var("x"), CmpOp::Le, below())]), commit_min());
    edge("noisy_inc", "noisy_inc", &incr, guard(vec![cmp(var("x"), CmpOp::Gt, below())]), vec![]);
    edge("noisy_inc", "min", &decr, guard(vec![cmp(var("x"), CmpOp::Gt, var(species))]), track());
    edge("noisy_inc", "noisy_inc", &decr, guard(vec![cmp(var("x"), CmpOp::Le, var(species))]), vec![]);

    // The n-th maximum is committed on an edge entering `min`.
    b.edge(
        "min",
        "end",
        TriggerSpec::Autonomous,
        guard(vec![cmp(
            var("n_M"),
            CmpOp::Eq,
            Expr::constant(params.n_peaks as f64),
        )]),
        vec![],
    );

    Ok(b.build()?)
}

/// Partition a model's transitions by the sign of their net effect on one
/// place.
pub fn classify_events(
    model: &GspnModel,
    species: &str,
) -> Result<EventPartition, OscillationError> {
    let place = model
        .place_index(species)
        .ok_or_else(|| OscillationError::UnknownSpecies(species.to_string()))?;
    let mut partition = EventPartition::default();
    for t in &model.transitions {
        let delta = t
            .delta
            .iter()
            .find(|&&(p, _)| p == place)
            .map(|&(_, d)| d)
            .unwrap_or(0);
        let bucket = match delta {
            d if d > 0 => &mut partition.increasing,
            d if d < 0 => &mut partition.decreasing,
            _ => &mut partition.neutral,
        };
        bucket.push(t.name.clone());
    }
    Ok(partition)
}

// ---------------------------------------------------------------------------
// Offline oracles

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Region {
    Low,
    Mid,
    High,
}

fn region(value: u64, low: u64, high: u64) -> Region {
    if value <= low {
        Region::Low
    } else if value >= high {
        Region::High
    } else {
        Region::Mid
    }
}

/// Period durations of a recorded `(time, value)` trace, by direct scan.
///
/// A period boundary is an entry into the low region preceded, since the
/// previous low entry, by an entry into the high region; the stretch before
/// the first boundary is discarded as incomplete. Durations are differences
/// of consecutive boundary times.
pub fn offline_periods(trace: &[(f64, u64)], low: u64, high: u64) -> Vec<f64> {
    offline_periods_from(trace, low, high, 0.0)
}

/// [`offline_periods`] with the measurement starting at `start_time`.
pub fn offline_periods_from(
    trace: &[(f64, u64)],
    low: u64,
    high: u64,
    start_time: f64,
) -> Vec<f64> {
    let boundaries = period_boundaries(trace, low, high, start_time);
    boundaries.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Value holding at `start_time` plus the entries from then on. Entries at
/// exactly `start_time` count as later changes, matching the automaton's
/// placement before same-instant events.
fn split_at_start(trace: &[(f64, u64)], start_time: f64) -> Option<(u64, &[(f64, u64)])> {
    let first = trace.first()?;
    let mut value = first.1;
    let mut idx = 0;
    for &(t, v) in trace {
        if t < start_time {
            value = v;
            idx += 1;
        } else {
            break;
        }
    }
    Some((value, &trace[idx..]))
}

/// Period boundary instants used by [`offline_periods_from`].
pub fn period_boundaries(
    trace: &[(f64, u64)],
    low: u64,
    high: u64,
    start_time: f64,
) -> Vec<f64> {
    let Some((initial, rest)) = split_at_start(trace, start_time) else {
        return Vec::new();
    };
    let mut boundaries = Vec::new();
    let mut current = region(initial, low, high);
    let mut low_visited = current == Region::Low;
    let mut armed = false;
    for &(t, v) in rest {
        let r = region(v, low, high);
        if r == current {
            continue;
        }
        match r {
            Region::High => {
                if low_visited {
                    armed = true;
                }
            }
            Region::Low => {
                if armed {
                    boundaries.push(t);
                }
                armed = false;
                low_visited = true;
            }
            Region::Mid => {}
        }
        current = r;
    }
    boundaries
}

/// One committed extremum, in commit order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeakCommit {
    Max(u64),
    Min(u64),
}

/// Noise-separated local maxima and minima of a recorded trace, by direct
/// scan: a candidate extremum is committed once the value has moved at
/// least `delta` away from it, and replaced whenever a more extreme value
/// appears before the move completes.
pub fn offline_peaks(trace: &[(f64, u64)], delta: u64) -> (Vec<u64>, Vec<u64>) {
    let commits = offline_peak_commits(trace, delta, 0.0);
    let mut maxima = Vec::new();
    let mut minima = Vec::new();
    for c in commits {
        match c {
            PeakCommit::Max(v) => maxima.push(v),
            PeakCommit::Min(v) => minima.push(v),
        }
    }
    (maxima, minima)
}

/// Ordered commit sequence underlying [`offline_peaks`].
pub fn offline_peak_commits(trace: &[(f64, u64)], delta: u64, start_time: f64) -> Vec<PeakCommit> {
    #[derive(PartialEq)]
    enum Mode {
        Undecided,
        TrackMax,
        TrackMin,
    }
    let Some((initial, rest)) = split_at_start(trace, start_time) else {
        return Vec::new();
    };
    let mut commits = Vec::new();
    let mut prev = initial;
    let mut mode = Mode::Undecided;
    let mut cand = 0u64;
    for &(_, w) in rest {
        if w == prev {
            continue;
        }
        let rising = w > prev;
        match mode {
            Mode::Undecided => {
                mode = if rising { Mode::TrackMax } else { Mode::TrackMin };
                cand = w;
            }
            Mode::TrackMax => {
                if rising {
                    if w > cand {
                        cand = w;
                    }
                } else if w + delta <= cand {
                    commits.push(PeakCommit::Max(cand));
                    mode = Mode::TrackMin;
                    cand = w;
                }
            }
            Mode::TrackMin => {
                if !rising {
                    if w < cand {
                        cand = w;
                    }
                } else if w >= cand + delta {
                    commits.push(PeakCommit::Min(cand));
                    mode = Mode::TrackMax;
                    cand = w;
                }
            }
        }
        prev = w;
    }
    commits
}

/// Project one place of an event stream into a `(time, value)` trace,
/// starting from the initial marking at time zero.
pub fn species_projection(
    initial_marking: &[u64],
    events: &[crate::gspn::TimedEvent],
    place: usize,
) -> Vec<(f64, u64)> {
    let mut out = Vec::with_capacity(events.len() + 1);
    out.push((0.0, initial_marking[place]));
    for e in events {
        out.push((e.time, e.marking_after[place]));
    }
    out
}

/// Parse a `time,value` CSV trace; `#` lines and a header row are skipped.
pub fn parse_value_trace(text: &str) -> Result<Vec<(f64, u64)>, String> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split(',');
        let (Some(t), Some(v)) = (parts.next(), parts.next()) else {
            return Err(format!("line {}: expected `time,value`", no + 1));
        };
        let Ok(t) = t.trim().parse::<f64>() else {
            if no == 0 {
                continue; // header row
            }
            return Err(format!("line {}: bad time `{t}`", no + 1));
        };
        let v = v
            .trim()
            .parse::<u64>()
            .map_err(|_| format!("line {}: bad value `{v}`", no + 1))?;
        out.push((t, v));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Pilot runs for parameter defaults

/// Species maxima observed over a handful of pilot trajectories.
#[derive(Debug, Clone, Copy)]
pub struct PilotSummary {
    /// Mean over trajectories of the per-trajectory maximum.
    pub mean_max: f64,
    /// Absolute maximum over all pilot trajectories.
    pub abs_max: u64,
}

/// Simulate `n_traces` trajectories up to `horizon` model time and record
/// the maxima of one species; used to pick `delta` and the level bound.
pub fn pilot_species_max(
    model: &GspnModel,
    species: &str,
    n_traces: u64,
    horizon: f64,
    seed: u64,
) -> Result<PilotSummary, OscillationError> {
    let place = model
        .place_index(species)
        .ok_or_else(|| OscillationError::UnknownSpecies(species.to_string()))?;
    let mut abs_max = 0u64;
    let mut sum_max = 0.0;
    for i in 0..n_traces {
        let rng = SimRng::for_trajectory(seed, i);
        let mut trace_max = model.initial_marking[place];
        for event in model.simulate(
            rng,
            StopCondition {
                max_events: None,
                max_time: Some(horizon),
            },
        ) {
            let event = event?;
            trace_max = trace_max.max(event.marking_after[place]);
        }
        abs_max = abs_max.max(trace_max);
        sum_max += trace_max as f64;
    }
    Ok(PilotSummary {
        mean_max: sum_max / n_traces.max(1) as f64,
        abs_max,
    })
}

/// Default noise level: a tenth of the average trajectory maximum.
pub fn default_delta(mean_max: f64) -> u64 {
    (0.1 * mean_max).ceil().max(1.0) as u64
}

/// Default level-array capacity: four times the observed absolute maximum.
pub fn default_level_bound(abs_max: u64) -> usize {
    ((4 * abs_max) as usize).max(16)
}
