//! Stochastic Petri net models and their discrete-event simulation.
//!
//! A [`GspnModel`] is a marked Petri net whose transitions carry timed delay
//! laws and marking-dependent rate expressions. Simulation follows the usual
//! event-scheduling scheme: every enabled transition holds a scheduled firing
//! time, the earliest one fires, the marking is updated, and the schedule is
//! repaired for the transitions whose enabling or rate was touched.
//!
//! Scheduling policy:
//! - exponential transitions are resampled whenever a marking change alters
//!   their rate (memoryless race, matching CTMC semantics);
//! - deterministic and uniform transitions keep their scheduled time while
//!   they stay enabled, and draw a fresh delay when they fire or when they
//!   are re-enabled after being disabled;
//! - ties on the minimal scheduled time break by transition declaration
//!   order, which keeps replays exact.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{parse_expr, BoundExpr, Env, Expr, ExprError};
use crate::rng::RandomSource;

/// Delay distribution attached to a transition.
#[derive(Debug, Clone, PartialEq)]
pub enum DelayLaw {
    /// Exponential delay; the rate is the transition's rate expression
    /// evaluated on the current marking.
    Exponential,
    /// Fixed delay.
    Deterministic { duration: f64 },
    /// Uniform delay on `[lo, hi)`.
    Uniform { lo: f64, hi: f64 },
}

/// Transition description used to build a model; arcs reference place names.
#[derive(Debug, Clone)]
pub struct TransitionSpec {
    pub name: String,
    pub inputs: Vec<(String, u64)>,
    pub outputs: Vec<(String, u64)>,
    pub law: DelayLaw,
    pub rate: Expr,
}

/// Transition with arcs resolved to place indices.
#[derive(Debug, Clone)]
pub struct Transition {
    pub name: String,
    pub inputs: Vec<(usize, u64)>,
    pub outputs: Vec<(usize, u64)>,
    /// Net token change per place, zero entries omitted.
    pub delta: Vec<(usize, i64)>,
    pub law: DelayLaw,
    pub rate: BoundExpr,
    pub rate_text: String,
}

/// Linear marking equality kept for validation (e.g. conservation of a gene
/// between its free and bound form).
#[derive(Debug, Clone)]
pub struct MarkingInvariant {
    pub text: String,
    lhs: BoundExpr,
    rhs: BoundExpr,
}

/// A stochastic Petri net: the generator of a discrete-event stochastic
/// process over markings.
#[derive(Debug, Clone)]
pub struct GspnModel {
    pub places: Vec<String>,
    pub transitions: Vec<Transition>,
    pub initial_marking: Vec<u64>,
    pub invariants: Vec<MarkingInvariant>,
    place_index: HashMap<String, usize>,
    /// For each transition, the transitions whose enabling or rate may change
    /// when it fires (always includes the transition itself).
    affected: Vec<Vec<usize>>,
}

/// Model construction and validation failures.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("duplicate place name `{0}`")]
    DuplicatePlace(String),
    #[error("duplicate transition name `{0}`")]
    DuplicateTransition(String),
    #[error("transition `{transition}` references unknown place `{place}`")]
    UnknownPlace { transition: String, place: String },
    #[error("transition `{transition}`: arc multiplicity must be at least 1")]
    ZeroMultiplicity { transition: String },
    #[error("initial marking has {got} entries, model has {expected} places")]
    MarkingLength { got: usize, expected: usize },
    #[error("initial marking names unknown place `{0}`")]
    UnknownMarkingPlace(String),
    #[error("transition `{transition}`: {source}")]
    Rate {
        transition: String,
        source: ExprError,
    },
    #[error("transition `{transition}`: deterministic duration must be >= 0")]
    BadDuration { transition: String },
    #[error("transition `{transition}`: uniform law requires lo < hi")]
    BadUniform { transition: String },
    #[error("invariant `{text}`: {source}")]
    Invariant { text: String, source: ExprError },
    #[error("invariant `{0}` must be a single equality")]
    InvariantShape(String),
    #[error("model file: {0}")]
    File(String),
}

/// Runtime simulation failures.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("transition `{transition}` is enabled but its rate evaluates to {rate}")]
    NonpositiveRate { transition: String, rate: f64 },
    #[error("marking has {got} entries, model has {expected} places")]
    MarkingLength { got: usize, expected: usize },
}

impl GspnModel {
    pub fn new(
        places: Vec<String>,
        initial_marking: Vec<u64>,
        specs: Vec<TransitionSpec>,
        invariants: Vec<String>,
    ) -> Result<GspnModel, ModelError> {
        let mut place_index = HashMap::new();
        for (i, name) in places.iter().enumerate() {
            if place_index.insert(name.clone(), i).is_some() {
                return Err(ModelError::DuplicatePlace(name.clone()));
            }
        }
        if initial_marking.len() != places.len() {
            return Err(ModelError::MarkingLength {
                got: initial_marking.len(),
                expected: places.len(),
            });
        }

        let env = Env::places_only(&place_index);
        let mut seen = HashMap::new();
        let mut transitions = Vec::with_capacity(specs.len());
        for (t_idx, spec) in specs.into_iter().enumerate() {
            if seen.insert(spec.name.clone(), t_idx).is_some() {
                return Err(ModelError::DuplicateTransition(spec.name));
            }
            let resolve = |arcs: &[(String, u64)]| -> Result<Vec<(usize, u64)>, ModelError> {
                arcs.iter()
                    .map(|(place, mult)| {
                        if *mult == 0 {
                            return Err(ModelError::ZeroMultiplicity {
                                transition: spec.name.clone(),
                            });
                        }
                        place_index
                            .get(place)
                            .map(|&i| (i, *mult))
                            .ok_or_else(|| ModelError::UnknownPlace {
                                transition: spec.name.clone(),
                                place: place.clone(),
                            })
                    })
                    .collect()
            };
            let inputs = resolve(&spec.inputs)?;
            let outputs = resolve(&spec.outputs)?;
            match spec.law {
                DelayLaw::Deterministic { duration } if !(duration >= 0.0) => {
                    return Err(ModelError::BadDuration {
                        transition: spec.name,
                    })
                }
                DelayLaw::Uniform { lo, hi } if !(lo < hi) => {
                    return Err(ModelError::BadUniform {
                        transition: spec.name,
                    })
                }
                _ => {}
            }
            let rate = spec.rate.bind(&env).map_err(|source| ModelError::Rate {
                transition: spec.name.clone(),
                source,
            })?;

            let mut delta: BTreeMap<usize, i64> = BTreeMap::new();
            for &(p, m) in &inputs {
                *delta.entry(p).or_insert(0) -= m as i64;
            }
            for &(p, m) in &outputs {
                *delta.entry(p).or_insert(0) += m as i64;
            }
            delta.retain(|_, d| *d != 0);

            transitions.push(Transition {
                rate_text: spec.rate.to_string(),
                name: spec.name,
                inputs,
                outputs,
                delta: delta.into_iter().collect(),
                law: spec.law,
                rate,
            });
        }

        let parsed_invariants = invariants
            .into_iter()
            .map(|text| parse_invariant(&text, &place_index))
            .collect::<Result<Vec<_>, _>>()?;

        // dependents[p] = transitions whose enabling or rate reads place p
        let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); places.len()];
        for (t_idx, t) in transitions.iter().enumerate() {
            let mut watched: Vec<usize> = t.inputs.iter().map(|&(p, _)| p).collect();
            for name in rate_places(&t.rate) {
                watched.push(name);
            }
            watched.sort_unstable();
            watched.dedup();
            for p in watched {
                dependents[p].push(t_idx);
            }
        }
        let affected = transitions
            .iter()
            .enumerate()
            .map(|(t_idx, t)| {
                let mut set = vec![t_idx];
                for &(p, _) in &t.delta {
                    set.extend_from_slice(&dependents[p]);
                }
                set.sort_unstable();
                set.dedup();
                set
            })
            .collect();

        Ok(GspnModel {
            places,
            transitions,
            initial_marking,
            invariants: parsed_invariants,
            place_index,
            affected,
        })
    }

    pub fn place_index(&self, name: &str) -> Option<usize> {
        self.place_index.get(name).copied()
    }

    pub fn place_map(&self) -> &HashMap<String, usize> {
        &self.place_index
    }

    pub fn transition_index(&self, name: &str) -> Option<usize> {
        self.transitions.iter().position(|t| t.name == name)
    }

    pub fn transition_names(&self) -> Vec<String> {
        self.transitions.iter().map(|t| t.name.clone()).collect()
    }

    fn check_marking_len(&self, marking: &[u64]) -> Result<(), SimError> {
        if marking.len() != self.places.len() {
            return Err(SimError::MarkingLength {
                got: marking.len(),
                expected: self.places.len(),
            });
        }
        Ok(())
    }

    #[inline]
    fn is_enabled(&self, t: usize, marking: &[u64]) -> bool {
        self.transitions[t]
            .inputs
            .iter()
            .all(|&(p, m)| marking[p] >= m)
    }

    /// Names of the transitions enabled in the given marking.
    pub fn enabled_transitions(&self, marking: &[u64]) -> Result<Vec<&str>, SimError> {
        self.check_marking_len(marking)?;
        Ok(self
            .transitions
            .iter()
            .enumerate()
            .filter(|&(i, _)| self.is_enabled(i, marking))
            .map(|(_, t)| t.name.as_str())
            .collect())
    }

    /// Rate of an enabled transition on the given marking.
    pub fn evaluate_rate(&self, t: usize, marking: &[u64]) -> Result<f64, SimError> {
        let rate = self.transitions[t].rate.eval_marking(marking);
        if !(rate > 0.0) {
            return Err(SimError::NonpositiveRate {
                transition: self.transitions[t].name.clone(),
                rate,
            });
        }
        Ok(rate)
    }

    /// Check every declared marking equality; an empty report means all hold.
    pub fn validate_invariants(&self, marking: &[u64]) -> InvariantReport {
        let violations = self
            .invariants
            .iter()
            .filter(|inv| inv.lhs.eval_marking(marking) != inv.rhs.eval_marking(marking))
            .map(|inv| inv.text.clone())
            .collect();
        InvariantReport { violations }
    }

    /// Start a lazy trajectory from the initial marking at time zero.
    pub fn simulate<'a, R: RandomSource>(
        &'a self,
        rng: R,
        stop: StopCondition,
    ) -> Trajectory<'a, R> {
        Trajectory {
            model: self,
            config: Configuration::initial(self),
            rng,
            stop,
            events: 0,
            done: false,
            fresh: true,
        }
    }
}

fn rate_places(expr: &BoundExpr) -> Vec<usize> {
    fn walk(expr: &BoundExpr, out: &mut Vec<usize>) {
        match expr {
            BoundExpr::Const(_) => {}
            BoundExpr::Slot(crate::expr::Slot::Place(p)) => out.push(*p),
            BoundExpr::Slot(_) => {}
            BoundExpr::Add(a, b)
            | BoundExpr::Sub(a, b)
            | BoundExpr::Mul(a, b)
            | BoundExpr::Div(a, b) => {
                walk(a, out);
                walk(b, out);
            }
            BoundExpr::Neg(a) => walk(a, out),
        }
    }
    let mut out = Vec::new();
    walk(expr, &mut out);
    out
}

fn parse_invariant(
    text: &str,
    places: &HashMap<String, usize>,
) -> Result<MarkingInvariant, ModelError> {
    let parts: Vec<&str> = text.split('=').filter(|s| !s.is_empty()).collect();
    if parts.len() != 2 {
        return Err(ModelError::InvariantShape(text.to_string()));
    }
    let env = Env::places_only(places);
    let bind = |s: &str| -> Result<BoundExpr, ModelError> {
        parse_expr(s)
            .and_then(|e| e.bind(&env))
            .map_err(|source| ModelError::Invariant {
                text: text.to_string(),
                source,
            })
    };
    Ok(MarkingInvariant {
        text: text.to_string(),
        lhs: bind(parts[0])?,
        rhs: bind(parts[1])?,
    })
}

/// Result of checking declared invariants on one marking.
#[derive(Debug, Clone)]
pub struct InvariantReport {
    pub violations: Vec<String>,
}

impl InvariantReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Runtime state of one simulation: marking, clock, and the schedule mapping
/// each transition to its next firing time (`+inf` while disabled).
#[derive(Debug, Clone)]
pub struct Configuration {
    pub marking: Vec<u64>,
    pub time: f64,
    pub schedule: Vec<f64>,
    rate_cache: Vec<f64>,
}

/// What `step` produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepResult {
    Fired { transition: usize, time: f64 },
    Deadlock,
}

impl Configuration {
    /// Initial configuration with an empty schedule.
    pub fn initial(model: &GspnModel) -> Configuration {
        Configuration {
            marking: model.initial_marking.clone(),
            time: 0.0,
            schedule: vec![f64::INFINITY; model.transitions.len()],
            rate_cache: vec![f64::NAN; model.transitions.len()],
        }
    }

    /// Initial configuration with every enabled transition scheduled.
    pub fn initial_scheduled(
        model: &GspnModel,
        rng: &mut dyn RandomSource,
    ) -> Result<Configuration, SimError> {
        let mut config = Configuration::initial(model);
        config.fill_schedule(model, rng)?;
        Ok(config)
    }

    fn fill_schedule(
        &mut self,
        model: &GspnModel,
        rng: &mut dyn RandomSource,
    ) -> Result<(), SimError> {
        for t in 0..model.transitions.len() {
            if model.is_enabled(t, &self.marking) {
                self.reschedule(model, t, rng)?;
            }
        }
        Ok(())
    }

    fn reschedule(
        &mut self,
        model: &GspnModel,
        t: usize,
        rng: &mut dyn RandomSource,
    ) -> Result<(), SimError> {
        let delay = match model.transitions[t].law {
            DelayLaw::Exponential => {
                let rate = model.evaluate_rate(t, &self.marking)?;
                self.rate_cache[t] = rate;
                rng.sample_exp(rate)
            }
            DelayLaw::Deterministic { duration } => duration,
            DelayLaw::Uniform { lo, hi } => rng.sample_uniform(lo, hi),
        };
        self.schedule[t] = self.time + delay;
        Ok(())
    }

    /// Time of the next event, `+inf` on deadlock.
    pub fn next_event_time(&self) -> f64 {
        self.schedule.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Earliest scheduled transition; declaration order breaks ties.
    pub fn next_event(&self) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (t, &time) in self.schedule.iter().enumerate() {
            if time.is_finite() && best.map_or(true, |(_, bt)| time < bt) {
                best = Some((t, time));
            }
        }
        best
    }

    /// Fire the earliest scheduled transition and repair the schedule.
    pub fn step(
        &mut self,
        model: &GspnModel,
        rng: &mut dyn RandomSource,
    ) -> Result<StepResult, SimError> {
        let Some((fired, fire_time)) = self.next_event() else {
            return Ok(StepResult::Deadlock);
        };
        debug_assert!(fire_time >= self.time);
        for &(p, d) in &model.transitions[fired].delta {
            let current = self.marking[p] as i64;
            debug_assert!(current + d >= 0, "token count went negative");
            self.marking[p] = (current + d) as u64;
        }
        self.time = fire_time;

        for &t in &model.affected[fired] {
            let enabled = model.is_enabled(t, &self.marking);
            let was_scheduled = self.schedule[t].is_finite();
            if !enabled {
                self.schedule[t] = f64::INFINITY;
                self.rate_cache[t] = f64::NAN;
                continue;
            }
            if t == fired || !was_scheduled {
                self.reschedule(model, t, rng)?;
                continue;
            }
            // Still enabled and not the fired transition: exponential clocks
            // are redrawn only when their rate moved; other laws are kept.
            if let DelayLaw::Exponential = model.transitions[t].law {
                let rate = model.evaluate_rate(t, &self.marking)?;
                if rate != self.rate_cache[t] {
                    self.rate_cache[t] = rate;
                    self.schedule[t] = self.time + rng.sample_exp(rate);
                }
            }
        }
        Ok(StepResult::Fired {
            transition: fired,
            time: fire_time,
        })
    }
}

/// One fired event of a trajectory, with the marking it produced.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedEvent {
    pub event: String,
    pub time: f64,
    pub marking_after: Vec<u64>,
}

/// Caller-side bound on trajectory generation.
#[derive(Debug, Clone, Copy, Default)]
pub struct StopCondition {
    pub max_events: Option<u64>,
    pub max_time: Option<f64>,
}

/// Lazy event stream over one simulation run.
pub struct Trajectory<'a, R: RandomSource> {
    model: &'a GspnModel,
    config: Configuration,
    rng: R,
    stop: StopCondition,
    events: u64,
    done: bool,
    fresh: bool,
}

impl<'a, R: RandomSource> Trajectory<'a, R> {
    pub fn config(&self) -> &Configuration {
        &self.config
    }
}

impl<'a, R: RandomSource> Iterator for Trajectory<'a, R> {
    type Item = Result<TimedEvent, SimError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        if self.fresh {
            self.fresh = false;
            if let Err(e) = self.config.fill_schedule(self.model, &mut self.rng) {
                self.done = true;
                return Some(Err(e));
            }
        }
        if let Some(max) = self.stop.max_events {
            if self.events >= max {
                self.done = true;
                return None;
            }
        }
        if let Some(max_time) = self.stop.max_time {
            if self.config.next_event_time() > max_time {
                self.done = true;
                return None;
            }
        }
        match self.config.step(self.model, &mut self.rng) {
            Ok(StepResult::Fired { transition, time }) => {
                self.events += 1;
                Some(Ok(TimedEvent {
                    event: self.model.transitions[transition].name.clone(),
                    time,
                    marking_after: self.config.marking.clone(),
                }))
            }
            Ok(StepResult::Deadlock) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// File format

#[derive(Serialize, Deserialize)]
struct ModelFile {
    places: Vec<String>,
    initial_marking: BTreeMap<String, u64>,
    transitions: Vec<TransitionFile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    invariants: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct TransitionFile {
    name: String,
    #[serde(rename = "in", default, skip_serializing_if = "BTreeMap::is_empty")]
    inputs: BTreeMap<String, u64>,
    #[serde(rename = "out", default, skip_serializing_if = "BTreeMap::is_empty")]
    outputs: BTreeMap<String, u64>,
    law: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rate: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    duration: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hi: Option<f64>,
}

impl GspnModel {
    pub fn from_json(text: &str) -> Result<GspnModel, ModelError> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| ModelError::File(e.to_string()))?;
        let mut initial = vec![0u64; file.places.len()];
        let index: HashMap<&str, usize> = file
            .places
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        for (place, count) in &file.initial_marking {
            let Some(&i) = index.get(place.as_str()) else {
                return Err(ModelError::UnknownMarkingPlace(place.clone()));
            };
            initial[i] = *count;
        }
        let specs = file
            .transitions
            .into_iter()
            .map(|t| {
                let law = match t.law.as_str() {
                    "exp" => DelayLaw::Exponential,
                    "det" => DelayLaw::Deterministic {
                        duration: t.duration.unwrap_or(0.0),
                    },
                    "unif" => DelayLaw::Uniform {
                        lo: t.lo.unwrap_or(0.0),
                        hi: t.hi.unwrap_or(1.0),
                    },
                    other => {
                        return Err(ModelError::File(format!(
                            "transition `{}`: unknown law `{other}`",
                            t.name
                        )))
                    }
                };
                let rate = match &t.rate {
                    Some(text) => parse_expr(text).map_err(|source| ModelError::Rate {
                        transition: t.name.clone(),
                        source,
                    })?,
                    None => Expr::constant(1.0),
                };
                Ok(TransitionSpec {
                    name: t.name,
                    inputs: t.inputs.into_iter().collect(),
                    outputs: t.outputs.into_iter().collect(),
                    law,
                    rate,
                })
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        GspnModel::new(file.places, initial, specs, file.invariants)
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            places: self.places.clone(),
            initial_marking: self
                .places
                .iter()
                .zip(&self.initial_marking)
                .filter(|(_, &c)| c > 0)
                .map(|(n, &c)| (n.clone(), c))
                .collect(),
            transitions: self
                .transitions
                .iter()
                .map(|t| {
                    let (law, duration, lo, hi) = match t.law {
                        DelayLaw::Exponential => ("exp", None, None, None),
                        DelayLaw::Deterministic { duration } => {
                            ("det", Some(duration), None, None)
                        }
                        DelayLaw::Uniform { lo, hi } => ("unif", None, Some(lo), Some(hi)),
                    };
                    TransitionFile {
                        name: t.name.clone(),
                        inputs: t
                            .inputs
                            .iter()
                            .map(|&(p, m)| (self.places[p].clone(), m))
                            .collect(),
                        outputs: t
                            .outputs
                            .iter()
                            .map(|&(p, m)| (self.places[p].clone(), m))
                            .collect(),
                        law: law.to_string(),
                        rate: Some(t.rate_text.clone()),
                        duration,
                        lo,
                        hi,
                    }
                })
                .collect(),
            invariants: self.invariants.iter().map(|i| i.text.clone()).collect(),
        };
        serde_json::to_string_pretty(&file).expect("model serialization")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;

    /// Scripted source: returns queued delays from `sample_exp`.
    pub struct StubRng {
        pub delays: Vec<f64>,
        pub at: usize,
    }

    impl RandomSource for StubRng {
        fn next_uniform(&mut self) -> f64 {
            0.5
        }
        fn sample_exp(&mut self, _rate: f64) -> f64 {
            let d = self.delays[self.at % self.delays.len()];
            self.at += 1;
            d
        }
    }

    fn pure_death(tokens: u64) -> GspnModel {
        GspnModel::new(
            vec!["P".into()],
            vec![tokens],
            vec![TransitionSpec {
                name: "die".into(),
                inputs: vec![("P".into(), 1)],
                outputs: vec![],
                law: DelayLaw::Exponential,
                rate: parse_expr("2 * P").unwrap(),
            }],
            vec![],
        )
        .unwrap()
    }

    fn two_race(d1: f64, d2: f64) -> (GspnModel, StubRng) {
        let model = GspnModel::new(
            vec!["P".into()],
            vec![1],
            vec![
                TransitionSpec {
                    name: "a".into(),
                    inputs: vec![("P".into(), 1)],
                    outputs: vec![("P".into(), 1)],
                    law: DelayLaw::Exponential,
                    rate: parse_expr("1").unwrap(),
                },
                TransitionSpec {
                    name: "b".into(),
                    inputs: vec![("P".into(), 1)],
                    outputs: vec![("P".into(), 1)],
                    law: DelayLaw::Exponential,
                    rate: parse_expr("1").unwrap(),
                },
            ],
            vec![],
        )
        .unwrap();
        let rng = StubRng {
            delays: vec![d1, d2],
            at: 0,
        };
        (model, rng)
    }

    #[test]
    fn enabled_respects_input_arcs() {
        let model = pure_death(3);
        assert_eq!(model.enabled_transitions(&[3]).unwrap(), vec!["die"]);
        assert!(model.enabled_transitions(&[0]).unwrap().is_empty());
    }

    #[test]
    fn enabled_rejects_dimension_mismatch() {
        let model = pure_death(3);
        assert!(model.enabled_transitions(&[1, 2]).is_err());
    }

    #[test]
    fn rate_errors_name_the_transition() {
        let model = pure_death(3);
        // Rate 2*P with P = 0 evaluates to 0: model error.
        let err = model.evaluate_rate(0, &[0]).unwrap_err();
        assert!(err.to_string().contains("die"));
    }

    #[test]
    fn step_with_scripted_delay() {
        let model = pure_death(1);
        let mut rng = StubRng {
            delays: vec![0.3],
            at: 0,
        };
        let mut config = Configuration::initial_scheduled(&model, &mut rng).unwrap();
        let fired = config.step(&model, &mut rng).unwrap();
        assert_eq!(
            fired,
            StepResult::Fired {
                transition: 0,
                time: 0.3
            }
        );
        assert_eq!(config.marking, vec![0]);
        assert_eq!(config.step(&model, &mut rng).unwrap(), StepResult::Deadlock);
    }

    #[test]
    fn earliest_schedule_wins() {
        let (model, mut rng) = two_race(2.0, 1.0);
        let mut config = Configuration::initial_scheduled(&model, &mut rng).unwrap();
        // a scheduled at 2.0, b at 1.0
        match config.step(&model, &mut rng).unwrap() {
            StepResult::Fired { transition, time } => {
                assert_eq!(model.transitions[transition].name, "b");
                assert_eq!(time, 1.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ties_break_by_declaration_order() {
        let (model, mut rng) = two_race(1.0, 1.0);
        let mut config = Configuration::initial_scheduled(&model, &mut rng).unwrap();
        match config.step(&model, &mut rng).unwrap() {
            StepResult::Fired { transition, .. } => {
                assert_eq!(model.transitions[transition].name, "a");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn pure_death_fires_exactly_token_count() {
        let model = pure_death(3);
        let events: Vec<_> = model
            .simulate(SimRng::seed_from(1), StopCondition::default())
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(events.len(), 3);
        assert_eq!(events.last().unwrap().marking_after, vec![0]);
        let mut last = 0.0;
        for e in &events {
            assert!(e.time >= last);
            last = e.time;
        }
    }

    #[test]
    fn empty_model_yields_empty_trajectory() {
        let model = pure_death(0);
        let events: Vec<_> = model
            .simulate(SimRng::seed_from(1), StopCondition::default())
            .collect();
        assert!(events.is_empty());
    }

    #[test]
    fn fixed_seed_reproduces_trajectory() {
        let model = pure_death(50);
        let run = |seed| -> Vec<(String, f64)> {
            model
                .simulate(SimRng::seed_from(seed), StopCondition::default())
                .map(|e| e.map(|e| (e.event, e.time)))
                .collect::<Result<_, _>>()
                .unwrap()
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }

    #[test]
    fn first_event_time_mean_matches_exponential() {
        // Single always-on transition at rate 2; first firing ~ Exp(2).
        let model = GspnModel::new(
            vec!["P".into()],
            vec![1],
            vec![TransitionSpec {
                name: "fire".into(),
                inputs: vec![("P".into(), 1)],
                outputs: vec![("P".into(), 1)],
                law: DelayLaw::Exponential,
                rate: parse_expr("2").unwrap(),
            }],
            vec![],
        )
        .unwrap();
        let n = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for i in 0..n {
            let mut rng = SimRng::for_trajectory(77, i);
            let mut config = Configuration::initial_scheduled(&model, &mut rng).unwrap();
            match config.step(&model, &mut rng).unwrap() {
                StepResult::Fired { time, .. } => {
                    sum += time;
                    sumsq += time * time;
                }
                StepResult::Deadlock => unreachable!(),
            }
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        assert!(
            (mean - 0.5).abs() < 3.0 * se,
            "mean {mean}, se {se}, expected 0.5"
        );
    }

    #[test]
    fn invariant_check_reports_violations() {
        let model = GspnModel::new(
            vec!["DA".into(), "DAp".into()],
            vec![1, 0],
            vec![],
            vec!["DA + DAp = 1".into()],
        )
        .unwrap();
        assert!(model.validate_invariants(&[1, 0]).ok());
        let report = model.validate_invariants(&[1, 1]);
        assert_eq!(report.violations, vec!["DA + DAp = 1".to_string()]);
    }

    #[test]
    fn no_invariants_is_ok() {
        let model = pure_death(1);
        assert!(model.validate_invariants(&[1]).ok());
    }

    #[test]
    fn deterministic_clock_kept_while_enabled() {
        // det transition at duration 10 races an exp self-loop; the det clock
        // must not be reset by unrelated firings.
        let model = GspnModel::new(
            vec!["P".into(), "Q".into()],
            vec![1, 1],
            vec![
                TransitionSpec {
                    name: "noise".into(),
                    inputs: vec![("Q".into(), 1)],
                    outputs: vec![("Q".into(), 1)],
                    law: DelayLaw::Exponential,
                    rate: parse_expr("5").unwrap(),
                },
                TransitionSpec {
                    name: "slow".into(),
                    inputs: vec![("P".into(), 1)],
                    outputs: vec![],
                    law: DelayLaw::Deterministic { duration: 10.0 },
                    rate: parse_expr("1").unwrap(),
                },
            ],
            vec![],
        )
        .unwrap();
        let events: Vec<_> = model
            .simulate(
                SimRng::seed_from(3),
                StopCondition {
                    max_events: None,
                    max_time: Some(50.0),
                },
            )
            .collect::<Result<_, _>>()
            .unwrap();
        let slow = events.iter().find(|e| e.event == "slow").unwrap();
        assert_eq!(slow.time, 10.0);
    }

    #[test]
    fn model_json_round_trip() {
        let model = pure_death(3);
        let text = model.to_json();
        let back = GspnModel::from_json(&text).unwrap();
        assert_eq!(back.places, model.places);
        assert_eq!(back.initial_marking, model.initial_marking);
        assert_eq!(back.transitions.len(), model.transitions.len());
        assert_eq!(back.transitions[0].rate_text, model.transitions[0].rate_text);
    }
}
