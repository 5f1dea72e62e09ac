//! Execution of the product of a Petri net trajectory and an automaton.
//!
//! The engine interleaves two kinds of moves. Autonomous automaton edges
//! fire on their own as soon as their guard window opens, and take priority
//! over a net event scheduled at the same instant. Net events advance the
//! marking and must be captured by exactly one enabled synchronous edge,
//! whose guard and target invariant are checked against the marking the
//! event produced; an uncaptured event rejects the trajectory.
//!
//! A run ends accepted on entering a final location, and rejected on
//! deadlock, on an uncaptured event, or on budget exhaustion (so a
//! non-terminating synchronization is an observable outcome rather than a
//! hang). The same loop replays recorded traces, which is how the test
//! oracles compare automaton behaviour against offline recomputation.

use thiserror::Error;

use crate::expr::BoundExpr;
use crate::gspn::{Configuration, GspnModel, SimError, StepResult, TimedEvent};
use crate::lha::{BoundAutomaton, RuntimeFault, Valuation};
use crate::rng::RandomSource;

/// Per-trajectory resource limits.
#[derive(Debug, Clone, Copy)]
pub struct ResourceBudget {
    pub max_events: u64,
    pub max_model_time: f64,
}

impl Default for ResourceBudget {
    fn default() -> Self {
        ResourceBudget {
            max_events: 1_000_000_000,
            max_model_time: 1_000_000.0,
        }
    }
}

/// How `avg` statistics weight samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AvgMode {
    /// Weight each value by the model time it was held (default).
    #[default]
    Time,
    /// Plain mean over the values observed after each captured event.
    Event,
}

/// Engine configuration shared by all runs of one experiment.
#[derive(Debug, Clone, Default)]
pub struct EngineOptions {
    pub budget: ResourceBudget,
    pub avg_mode: AvgMode,
    /// Expressions over the automaton variables whose last/min/max/avg are
    /// accumulated along the run (the target measures of the experiment).
    pub tracked: Vec<BoundExpr>,
}

/// Why a trajectory was rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RejectReason {
    /// No initial location's invariant holds on the initial marking.
    NoInitialLocation,
    /// An event occurred that no enabled synchronous edge captures.
    NoSyncEdge(String),
    /// The net deadlocked before a final location was reached.
    Deadlock,
    /// A replayed trace ran out of events.
    TraceEnded,
    /// Budget exhaustion, kept distinct so non-termination is observable.
    BudgetEvents,
    BudgetTime,
}

/// Outcome classification of one synchronization run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Accepted,
    Rejected(RejectReason),
}

impl Verdict {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Verdict::Accepted)
    }
}

/// Product state: marking, automaton location, valuation, model time.
#[derive(Debug, Clone)]
pub struct SyncState {
    pub marking: Vec<u64>,
    pub location: String,
    pub valuation: Valuation,
    pub time: f64,
}

/// Running last/min/max/average accumulators for one quantity.
#[derive(Debug, Clone)]
pub struct RunningStats {
    pub last: f64,
    pub min: f64,
    pub max: f64,
    integral: f64,
    event_sum: f64,
    event_count: u64,
}

impl RunningStats {
    fn new(initial: f64) -> RunningStats {
        RunningStats {
            last: initial,
            min: initial,
            max: initial,
            integral: 0.0,
            event_sum: 0.0,
            event_count: 0,
        }
    }

    fn elapse_to(&mut self, new_value: f64, dt: f64) {
        // Values evolve linearly between discontinuities, so endpoint checks
        // and the trapezoid rule are exact segment-wise.
        self.integral += 0.5 * (self.last + new_value) * dt;
        self.jump_to(new_value);
    }

    fn jump_to(&mut self, new_value: f64) {
        self.last = new_value;
        if new_value < self.min {
            self.min = new_value;
        }
        if new_value > self.max {
            self.max = new_value;
        }
    }

    fn event_sample(&mut self, value: f64) {
        self.event_sum += value;
        self.event_count += 1;
    }

    /// Time-average over a run of the given duration.
    pub fn time_average(&self, duration: f64) -> f64 {
        if duration > 0.0 {
            self.integral / duration
        } else {
            self.last
        }
    }

    /// Mean over the per-event samples.
    pub fn event_average(&self) -> f64 {
        if self.event_count > 0 {
            self.event_sum / self.event_count as f64
        } else {
            self.last
        }
    }
}

/// Path statistics of one run: per-variable accumulators plus one
/// accumulator per tracked expression.
#[derive(Debug, Clone)]
pub struct PathStats {
    pub duration: f64,
    pub vars: Vec<RunningStats>,
    pub tracked: Vec<RunningStats>,
    pub avg_mode: AvgMode,
}

impl PathStats {
    /// Average of a tracked expression under the configured mode.
    pub fn tracked_average(&self, i: usize) -> f64 {
        match self.avg_mode {
            AvgMode::Time => self.tracked[i].time_average(self.duration),
            AvgMode::Event => self.tracked[i].event_average(),
        }
    }
}

/// Result of one synchronization run.
#[derive(Debug, Clone)]
pub struct SyncOutcome {
    pub verdict: Verdict,
    pub final_state: SyncState,
    pub stats: PathStats,
    pub event_count: u64,
}

/// Hard failures, as opposed to rejected trajectories.
#[derive(Debug, Error)]
pub enum SyncError {
    #[error(transparent)]
    Fault(#[from] RuntimeFault),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("trace event `{0}` is not a model transition or declared extra event")]
    UnknownTraceEvent(String),
    #[error("trace marking length {got} does not match model ({expected})")]
    TraceMarking { got: usize, expected: usize },
}

/// One automaton move, reported to observers.
pub struct MoveRecord<'a> {
    pub time: f64,
    /// Traversed edge index, `usize::MAX` for the initial placement.
    pub edge: usize,
    pub target: usize,
    pub before: &'a Valuation,
    pub after: &'a Valuation,
}

enum Source<'a, 'b> {
    Live {
        config: Configuration,
        model: &'a GspnModel,
        rng: &'b mut dyn RandomSource,
    },
    Recorded {
        marking: Vec<u64>,
        events: &'b [(usize, f64, &'b [u64])],
        pos: usize,
    },
}

impl<'a, 'b> Source<'a, 'b> {
    fn marking(&self) -> &[u64] {
        match self {
            Source::Live { config, .. } => &config.marking,
            Source::Recorded { marking, .. } => marking,
        }
    }

    fn next_time(&self) -> f64 {
        match self {
            Source::Live { config, .. } => config.next_event_time(),
            Source::Recorded { events, pos, .. } => events
                .get(*pos)
                .map(|&(_, t, _)| t)
                .unwrap_or(f64::INFINITY),
        }
    }

    fn exhausted_reason(&self) -> RejectReason {
        match self {
            Source::Live { .. } => RejectReason::Deadlock,
            Source::Recorded { .. } => RejectReason::TraceEnded,
        }
    }

    /// Fire the next event, returning its slot in the automaton event space.
    fn advance(&mut self) -> Result<usize, SyncError> {
        match self {
            Source::Live { config, model, rng } => match config.step(model, *rng)? {
                StepResult::Fired { transition, .. } => Ok(transition),
                StepResult::Deadlock => unreachable!("advance called with no pending event"),
            },
            Source::Recorded {
                marking,
                events,
                pos,
            } => {
                let (slot, _, after) = events[*pos];
                *pos += 1;
                marking.copy_from_slice(after);
                Ok(slot)
            }
        }
    }
}

struct Engine<'m, 'a> {
    bound: &'a BoundAutomaton<'m>,
    options: &'a EngineOptions,
    location: usize,
    valuation: Valuation,
    time: f64,
    stats: PathStats,
    events_used: u64,
    instant_moves: usize,
    instant_cap: usize,
}

impl<'m, 'a> Engine<'m, 'a> {
    fn new(
        bound: &'a BoundAutomaton<'m>,
        options: &'a EngineOptions,
        marking: &[u64],
    ) -> Option<Engine<'m, 'a>> {
        let location = bound.initial_location(marking)?;
        let valuation = Valuation::zero(bound.lha);
        let vars = valuation
            .values
            .iter()
            .map(|&v| RunningStats::new(v))
            .collect();
        let tracked = options
            .tracked
            .iter()
            .map(|e| RunningStats::new(e.eval(marking, &valuation.values)))
            .collect();
        Some(Engine {
            bound,
            options,
            location,
            valuation,
            time: 0.0,
            stats: PathStats {
                duration: 0.0,
                vars,
                tracked,
                avg_mode: options.avg_mode,
            },
            events_used: 0,
            instant_moves: 0,
            instant_cap: bound.location_count() * bound.location_count(),
        })
    }

    fn elapse(&mut self, marking: &[u64], dt: f64) {
        if dt > 0.0 {
            self.bound
                .elapse(self.location, marking, &mut self.valuation, dt);
            self.time += dt;
            self.stats.duration += dt;
            for (stat, &v) in self.stats.vars.iter_mut().zip(&self.valuation.values) {
                stat.elapse_to(v, dt);
            }
            for (stat, expr) in self.stats.tracked.iter_mut().zip(&self.options.tracked) {
                stat.elapse_to(expr.eval(marking, &self.valuation.values), dt);
            }
            self.instant_moves = 0;
        }
    }

    fn traverse(
        &mut self,
        edge: usize,
        marking: &[u64],
        observer: &mut Option<&mut dyn FnMut(MoveRecord)>,
    ) {
        let target = self.bound.edges[edge].target;
        if let Some(callback) = observer {
            let before = self.valuation.clone();
            self.bound.apply_update(edge, marking, &mut self.valuation);
            callback(MoveRecord {
                time: self.time,
                edge,
                target,
                before: &before,
                after: &self.valuation,
            });
        } else {
            self.bound.apply_update(edge, marking, &mut self.valuation);
        }
        self.location = target;
        for (stat, &v) in self.stats.vars.iter_mut().zip(&self.valuation.values) {
            stat.jump_to(v);
        }
        for (stat, expr) in self.stats.tracked.iter_mut().zip(&self.options.tracked) {
            stat.jump_to(expr.eval(marking, &self.valuation.values));
        }
    }

    fn event_sample(&mut self, marking: &[u64]) {
        for (stat, &v) in self.stats.vars.iter_mut().zip(&self.valuation.values) {
            stat.event_sample(v);
        }
        for (stat, expr) in self.stats.tracked.iter_mut().zip(&self.options.tracked) {
            stat.event_sample(expr.eval(marking, &self.valuation.values));
        }
    }

    fn next_autonomous(&self, marking: &[u64]) -> Result<Option<(f64, usize)>, SyncError> {
        Ok(self
            .bound
            .next_autonomous(self.location, marking, &self.valuation)?)
    }

    fn outcome(self, verdict: Verdict, marking: &[u64]) -> SyncOutcome {
        SyncOutcome {
            verdict,
            final_state: SyncState {
                marking: marking.to_vec(),
                location: self.bound.lha.locations[self.location].name.clone(),
                valuation: self.valuation,
                time: self.time,
            },
            stats: self.stats,
            event_count: self.events_used,
        }
    }
}

fn run(
    bound: &BoundAutomaton,
    mut source: Source,
    options: &EngineOptions,
    mut observer: Option<&mut dyn FnMut(MoveRecord)>,
) -> Result<SyncOutcome, SyncError> {
    let Some(mut engine) = Engine::new(bound, options, source.marking()) else {
        return Ok(rejected_at_init(bound, &source, options));
    };
    if let Some(callback) = observer.as_mut() {
        // Report the initial placement so location traces start populated.
        callback(MoveRecord {
            time: 0.0,
            edge: usize::MAX,
            target: engine.location,
            before: &engine.valuation,
            after: &engine.valuation,
        });
    }
    if bound.is_final(engine.location) {
        return Ok(engine.outcome(Verdict::Accepted, source.marking()));
    }
    let budget = options.budget;

    loop {
        // Autonomous moves take priority over events at the same instant.
        while let Some((d, edge)) = engine.next_autonomous(source.marking())? {
            let fire_at = engine.time + d;
            if fire_at > source.next_time() {
                break;
            }
            if fire_at > budget.max_model_time {
                return Ok(engine.outcome(
                    Verdict::Rejected(RejectReason::BudgetTime),
                    source.marking(),
                ));
            }
            if d == 0.0 {
                engine.instant_moves += 1;
                if engine.instant_moves > engine.instant_cap {
                    return Err(RuntimeFault::AutonomousChain(engine.instant_cap).into());
                }
            }
            engine.elapse(source.marking(), d);
            engine.traverse(edge, source.marking(), &mut observer);
            if bound.is_final(engine.location) {
                return Ok(engine.outcome(Verdict::Accepted, source.marking()));
            }
        }

        let t_next = source.next_time();
        if t_next.is_infinite() {
            let reason = source.exhausted_reason();
            return Ok(engine.outcome(Verdict::Rejected(reason), source.marking()));
        }
        if t_next > budget.max_model_time {
            return Ok(engine.outcome(
                Verdict::Rejected(RejectReason::BudgetTime),
                source.marking(),
            ));
        }
        if engine.events_used >= budget.max_events {
            return Ok(engine.outcome(
                Verdict::Rejected(RejectReason::BudgetEvents),
                source.marking(),
            ));
        }

        // Flows run under the pre-event marking up to the event instant.
        let dt = t_next - engine.time;
        engine.elapse(source.marking(), dt);
        engine.instant_moves = 0;
        let slot = source.advance()?;
        engine.events_used += 1;

        // Guard and target invariant are checked against the marking the
        // event produced.
        match bound.matching_sync_edge(
            engine.location,
            slot,
            source.marking(),
            &engine.valuation,
        )? {
            Some(edge) => {
                engine.traverse(edge, source.marking(), &mut observer);
                engine.event_sample(source.marking());
                if bound.is_final(engine.location) {
                    return Ok(engine.outcome(Verdict::Accepted, source.marking()));
                }
            }
            None => {
                let name = bound.event_name(slot).to_string();
                return Ok(engine.outcome(
                    Verdict::Rejected(RejectReason::NoSyncEdge(name)),
                    source.marking(),
                ));
            }
        }
    }
}

fn rejected_at_init(
    bound: &BoundAutomaton,
    source: &Source,
    options: &EngineOptions,
) -> SyncOutcome {
    let lha = bound.lha;
    let fallback = lha.initial.first().copied().unwrap_or(0);
    let valuation = Valuation::zero(lha);
    SyncOutcome {
        verdict: Verdict::Rejected(RejectReason::NoInitialLocation),
        final_state: SyncState {
            marking: source.marking().to_vec(),
            location: lha
                .locations
                .get(fallback)
                .map(|l| l.name.clone())
                .unwrap_or_default(),
            valuation: valuation.clone(),
            time: 0.0,
        },
        stats: PathStats {
            duration: 0.0,
            vars: valuation
                .values
                .iter()
                .map(|&v| RunningStats::new(v))
                .collect(),
            tracked: options
                .tracked
                .iter()
                .map(|e| RunningStats::new(e.eval(source.marking(), &valuation.values)))
                .collect(),
            avg_mode: options.avg_mode,
        },
        event_count: 0,
    }
}

/// Run one live synchronization from the model's initial marking.
pub fn synchronize(
    bound: &BoundAutomaton,
    rng: &mut dyn RandomSource,
    options: &EngineOptions,
) -> Result<SyncOutcome, SyncError> {
    synchronize_observed(bound, rng, options, None)
}

/// Like [`synchronize`], reporting every automaton move to an observer.
pub fn synchronize_observed(
    bound: &BoundAutomaton,
    rng: &mut dyn RandomSource,
    options: &EngineOptions,
    observer: Option<&mut dyn FnMut(MoveRecord)>,
) -> Result<SyncOutcome, SyncError> {
    let config = Configuration::initial_scheduled(bound.model, rng)?;
    let source = Source::Live {
        config,
        model: bound.model,
        rng,
    };
    run(bound, source, options, observer)
}

/// Deterministically re-run the decision procedure on a recorded event
/// stream. Returns the outcome and the visited `(time, location)` sequence.
pub fn replay(
    bound: &BoundAutomaton,
    initial_marking: &[u64],
    events: &[TimedEvent],
    options: &EngineOptions,
) -> Result<(SyncOutcome, Vec<(f64, String)>), SyncError> {
    let mut trace = Vec::new();
    let lha = bound.lha;
    let mut observer = |m: MoveRecord| {
        trace.push((m.time, lha.locations[m.target].name.clone()));
    };
    let outcome = replay_observed(bound, initial_marking, events, options, Some(&mut observer))?;
    Ok((outcome, trace))
}

/// Replay with a caller-supplied observer (used by equivalence tests).
pub fn replay_observed(
    bound: &BoundAutomaton,
    initial_marking: &[u64],
    events: &[TimedEvent],
    options: &EngineOptions,
    observer: Option<&mut dyn FnMut(MoveRecord)>,
) -> Result<SyncOutcome, SyncError> {
    let expected = bound.model.places.len();
    if initial_marking.len() != expected {
        return Err(SyncError::TraceMarking {
            got: initial_marking.len(),
            expected,
        });
    }
    let mut resolved = Vec::with_capacity(events.len());
    for e in events {
        let slot = bound
            .event_slot(&e.event)
            .ok_or_else(|| SyncError::UnknownTraceEvent(e.event.clone()))?;
        if e.marking_after.len() != expected {
            return Err(SyncError::TraceMarking {
                got: e.marking_after.len(),
                expected,
            });
        }
        resolved.push((slot, e.time, e.marking_after.as_slice()));
    }
    let source = Source::Recorded {
        marking: initial_marking.to_vec(),
        events: &resolved,
        pos: 0,
    };
    run(bound, source, options, observer)
}

// ---------------------------------------------------------------------------
// Trace record format: `time<TAB>event<TAB>marking-csv`, `#` lines ignored.

/// Render the trace header naming the marking columns.
pub fn trace_header(model: &GspnModel) -> String {
    format!("# time\tevent\t{}\n", model.places.join(","))
}

/// Render one trace line.
pub fn trace_line(event: &TimedEvent) -> String {
    let marking = event
        .marking_after
        .iter()
        .map(|c| c.to_string())
        .collect::<Vec<_>>()
        .join(",");
    format!("{}\t{}\t{}\n", event.time, event.event, marking)
}

/// Parse a trace file body produced by [`trace_line`].
pub fn parse_trace(text: &str) -> Result<Vec<TimedEvent>, SyncError> {
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(time), Some(event), Some(marking)) = (parts.next(), parts.next(), parts.next())
        else {
            return Err(SyncError::UnknownTraceEvent(format!(
                "malformed trace line `{line}`"
            )));
        };
        let time: f64 = time
            .parse()
            .map_err(|_| SyncError::UnknownTraceEvent(format!("bad time in `{line}`")))?;
        let marking_after = marking
            .split(',')
            .map(|c| c.trim().parse::<u64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| SyncError::UnknownTraceEvent(format!("bad marking in `{line}`")))?;
        out.push(TimedEvent {
            event: event.to_string(),
            time,
            marking_after,
        });
    }
    Ok(out)
}
