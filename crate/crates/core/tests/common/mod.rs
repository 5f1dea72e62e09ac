//! Shared fixtures: a single-place pseudo-model for replaying synthetic
//! value traces, and generators of randomized staircase trajectories.
#![allow(dead_code)] // each test binary uses its own subset
//!
//! Event times are dyadic rationals (multiples of 1/8), so sums and
//! differences of timestamps are exact in doubles and automaton clocks can
//! be compared against offline recomputation without tolerances.

use haslmc::expr::Expr;
use haslmc::gspn::{DelayLaw, GspnModel, TimedEvent, TransitionSpec};
use haslmc::oscillation::EventPartition;
use haslmc::rng::{RandomSource, SimRng};

/// One-place model whose `up`/`down`/`noop` transitions exist only to give
/// replayed synthetic traces an event alphabet.
pub fn stair_model() -> GspnModel {
    let t = |name: &str| TransitionSpec {
        name: name.into(),
        inputs: vec![],
        outputs: vec![],
        law: DelayLaw::Exponential,
        rate: Expr::constant(1.0),
    };
    GspnModel::new(
        vec!["A".into()],
        vec![0],
        vec![t("up"), t("down"), t("noop")],
        vec![],
    )
    .unwrap()
}

/// Partition of the stair-model alphabet for the peak detector.
pub fn stair_partition() -> EventPartition {
    EventPartition {
        increasing: vec!["up".into()],
        decreasing: vec!["down".into()],
        neutral: vec!["noop".into()],
    }
}

/// Synthetic trace builder emitting labeled events at dyadic times.
pub struct TraceGen {
    rng: SimRng,
    pub time: f64,
    pub value: u64,
    pub events: Vec<TimedEvent>,
    pub initial: u64,
}

impl TraceGen {
    pub fn new(seed: u64, initial: u64) -> TraceGen {
        TraceGen {
            rng: SimRng::seed_from(seed),
            time: 0.0,
            value: initial,
            events: Vec::new(),
            initial,
        }
    }

    fn rand_below(&mut self, n: u64) -> u64 {
        (self.rng.next_uniform() * n as f64) as u64
    }

    /// Move to `new_value` after a random dyadic delay.
    pub fn step_to(&mut self, new_value: u64) {
        self.time += (1 + self.rand_below(24)) as f64 / 8.0;
        let event = match new_value.cmp(&self.value) {
            std::cmp::Ordering::Greater => "up",
            std::cmp::Ordering::Less => "down",
            std::cmp::Ordering::Equal => "noop",
        };
        self.value = new_value;
        self.events.push(TimedEvent {
            event: event.into(),
            time: self.time,
            marking_after: vec![new_value],
        });
    }

    /// Noisy climb to at least `target`: mostly upward unit-to-4 steps with
    /// occasional dips and plateaus.
    pub fn climb_to(&mut self, target: u64) {
        while self.value < target {
            let roll = self.rng.next_uniform();
            if roll < 0.15 && self.value > 0 {
                let dip = 1 + self.rand_below(2);
                self.step_to(self.value.saturating_sub(dip));
            } else if roll < 0.25 {
                self.step_to(self.value); // neutral event
            } else {
                let rise = 1 + self.rand_below(4);
                self.step_to(self.value + rise);
            }
        }
    }

    /// Noisy descent to at most `target`.
    pub fn fall_to(&mut self, target: u64) {
        while self.value > target {
            let roll = self.rng.next_uniform();
            if roll < 0.15 {
                let rise = 1 + self.rand_below(2);
                self.step_to(self.value + rise);
            } else if roll < 0.25 {
                self.step_to(self.value);
            } else {
                let drop = 1 + self.rand_below(4);
                self.step_to(self.value.saturating_sub(drop));
            }
        }
    }

    /// `(time, value)` projection including the initial state.
    pub fn projection(&self) -> Vec<(f64, u64)> {
        let mut out = vec![(0.0, self.initial)];
        for e in &self.events {
            out.push((e.time, e.marking_after[0]));
        }
        out
    }
}

/// A staircase guaranteed to visit the low region (`<= low`) and the high
/// region (`>= high`) at least `cycles` times each.
pub fn noisy_periodic_trace(seed: u64, low: u64, high: u64, cycles: u64) -> TraceGen {
    let mut gen = TraceGen::new(seed, seed % (high + 20));
    for _ in 0..cycles {
        gen.climb_to(high);
        gen.fall_to(low);
    }
    // trailing margin so the last boundary is not at the trace end
    gen.climb_to(high.min(low + 2));
    gen
}

/// A walk that never reaches the high region.
pub fn bounded_walk_trace(seed: u64, high: u64, steps: u64) -> TraceGen {
    let cap = high - 1;
    let mut gen = TraceGen::new(seed, seed % cap);
    for _ in 0..steps {
        let roll = gen.rng.next_uniform();
        let v = gen.value;
        if roll < 0.45 {
            gen.step_to((v + 1 + (roll * 7.0) as u64).min(cap));
        } else if roll < 0.9 {
            gen.step_to(v.saturating_sub(1 + ((roll - 0.45) * 7.0) as u64));
        } else {
            gen.step_to(v);
        }
    }
    gen
}

/// An unconstrained random walk with plateaus and multi-unit jumps.
pub fn random_walk_trace(seed: u64, steps: u64) -> TraceGen {
    let mut gen = TraceGen::new(seed, 30 + seed % 40);
    for _ in 0..steps {
        let roll = gen.rng.next_uniform();
        let v = gen.value;
        let jump = 1 + gen_below(&mut gen.rng, 6);
        if roll < 0.12 {
            gen.step_to(v); // neutral
        } else if roll < 0.56 {
            gen.step_to(v + jump);
        } else {
            gen.step_to(v.saturating_sub(jump));
        }
    }
    gen
}

fn gen_below(rng: &mut SimRng, n: u64) -> u64 {
    (rng.next_uniform() * n as f64) as u64
}
