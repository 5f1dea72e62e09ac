//! Synchronized linear hybrid automata.
//!
//! An [`Lha`] observes a Petri net trajectory: its locations carry invariants
//! (conjunctions of marking comparisons) and per-variable flows (marking
//! indicators), and its edges are either synchronous (triggered by named net
//! transitions) or autonomous (fired on their own as soon as their
//! left-closed linear constraint becomes satisfiable under the flows).
//!
//! Before use, an automaton must pass [`Lha::check_determinism`]:
//!
//! - all pairs of initial locations have mutually exclusive invariants;
//! - same-source synchronous edges sharing an event have mutually
//!   exclusive target invariants or mutually exclusive guards;
//! - likewise for pairs of autonomous edges from one location;
//! - no cycle consists of autonomous edges only.
//!
//! Exclusivity is decided syntactically and conservatively (interval
//! reasoning over single-quantity comparisons plus complement-operator
//! matching on structurally equal bounds); anything not provably disjoint is
//! reported as a violation.
//!
//! Updates are simultaneous assignments of arithmetic expressions over the
//! automaton variables and the marking. This is deliberately wider than
//! linear combinations: running statistics kept by the oscillation automata
//! need products and quotients of variables. Guards stay linear in the
//! variables so autonomous firing times have closed-form solutions.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{parse_sum, BoundExpr, Env, Expr, ExprError, Lexer, Token};
use crate::gspn::GspnModel;

/// Comparison operators usable in invariants and guards.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Lt,
    Gt,
    Le,
    Ge,
}

impl CmpOp {
    fn apply(self, a: f64, b: f64) -> bool {
        match self {
            CmpOp::Eq => a == b,
            CmpOp::Lt => a < b,
            CmpOp::Gt => a > b,
            CmpOp::Le => a <= b,
            CmpOp::Ge => a >= b,
        }
    }

    fn flip(self) -> CmpOp {
        match self {
            CmpOp::Eq => CmpOp::Eq,
            CmpOp::Lt => CmpOp::Gt,
            CmpOp::Gt => CmpOp::Lt,
            CmpOp::Le => CmpOp::Ge,
            CmpOp::Ge => CmpOp::Le,
        }
    }

    fn text(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Lt => "<",
            CmpOp::Gt => ">",
            CmpOp::Le => "<=",
            CmpOp::Ge => ">=",
        }
    }

    /// True when `v op b` and `v op2 b` cannot hold for the same `v`.
    fn disjoint_with(self, other: CmpOp) -> bool {
        use CmpOp::*;
        matches!(
            (self, other),
            (Lt, Ge) | (Ge, Lt) | (Lt, Gt) | (Gt, Lt) | (Lt, Eq) | (Eq, Lt) | (Le, Gt) | (Gt, Le)
                | (Eq, Gt)
                | (Gt, Eq)
        )
    }
}

/// Conjunction of comparisons between marking expressions; empty means true.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposition {
    pub comparisons: Vec<(Expr, CmpOp, Expr)>,
}

impl Proposition {
    pub fn top() -> Proposition {
        Proposition {
            comparisons: Vec::new(),
        }
    }

    pub fn new(comparisons: Vec<(Expr, CmpOp, Expr)>) -> Proposition {
        Proposition { comparisons }
    }

    pub fn to_text(&self) -> String {
        if self.comparisons.is_empty() {
            return "true".to_string();
        }
        self.comparisons
            .iter()
            .map(|(l, op, r)| format!("{l} {} {r}", op.text()))
            .collect::<Vec<_>>()
            .join(" && ")
    }
}

/// One inequality of an edge constraint, normalized to
/// `sum_i coeff_i * x_i  op  bound` with marking-only coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearAtom {
    pub terms: Vec<(usize, Expr)>,
    pub op: CmpOp,
    pub bound: Expr,
}

/// Conjunction of linear inequalities; empty means true.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeConstraint {
    pub atoms: Vec<LinearAtom>,
}

impl EdgeConstraint {
    pub fn top() -> EdgeConstraint {
        EdgeConstraint { atoms: Vec::new() }
    }

    /// True when every comparison is non-strict, so the satisfaction set in
    /// time is closed on the left and a minimal firing instant exists.
    pub fn is_left_closed(&self) -> bool {
        self.atoms
            .iter()
            .all(|a| matches!(a.op, CmpOp::Eq | CmpOp::Le | CmpOp::Ge))
    }
}

/// Edge trigger: a set of observed event names, or autonomous.
#[derive(Debug, Clone, PartialEq)]
pub enum Trigger {
    /// Fires on any of these events (indices into the alphabet).
    Sync(Vec<usize>),
    /// Fires on its own when the guard becomes satisfiable.
    Autonomous,
}

/// One assignment of an edge update.
#[derive(Debug, Clone, PartialEq)]
pub enum Assignment {
    /// `x := expr(variables, marking)`, evaluated against pre-update values.
    Var { var: usize, expr: Expr },
    /// Increment the level-indexed counter `array[index]`, where the index
    /// expression is rounded to the nearest integer. Out-of-bound levels are
    /// tallied in the array's overflow counter.
    ArrayTally { array: usize, index: Expr },
}

/// Simultaneous assignments; each variable assigned at most once.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Update {
    pub assignments: Vec<Assignment>,
}

/// Automaton edge.
#[derive(Debug, Clone)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub trigger: Trigger,
    pub guard: EdgeConstraint,
    pub update: Update,
}

/// Automaton location.
#[derive(Debug, Clone)]
pub struct Location {
    pub name: String,
    pub invariant: Proposition,
    /// Rate of change of each variable while the automaton sojourns here,
    /// one marking expression per variable.
    pub flows: Vec<Expr>,
}

/// Declaration of a bounded level-indexed counter bank.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayDecl {
    pub name: String,
    pub bound: usize,
}

/// A synchronized linear hybrid automaton over a named event alphabet.
#[derive(Debug, Clone)]
pub struct Lha {
    pub events: Vec<String>,
    pub variables: Vec<String>,
    pub arrays: Vec<ArrayDecl>,
    pub locations: Vec<Location>,
    pub initial: Vec<usize>,
    pub finals: Vec<usize>,
    pub edges: Vec<Edge>,
    var_index: HashMap<String, usize>,
}

/// Automaton construction/validation failures.
#[derive(Debug, Error)]
pub enum LhaError {
    #[error("duplicate name `{0}`")]
    DuplicateName(String),
    #[error("unknown location `{0}`")]
    UnknownLocation(String),
    #[error("unknown event `{0}`")]
    UnknownEvent(String),
    #[error("unknown variable or array `{0}`")]
    UnknownVariable(String),
    #[error("location `{location}`: {what} must not reference automaton variables")]
    MarkingOnly { location: String, what: String },
    #[error("autonomous edge {edge} from `{location}` has a strict comparison; autonomous guards must be left-closed")]
    NotLeftClosed { edge: usize, location: String },
    #[error("edge {edge}: variable `{var}` assigned more than once")]
    DoubleAssignment { edge: usize, var: String },
    #[error("expression error: {0}")]
    Expr(#[from] ExprError),
    #[error("automaton file: {0}")]
    File(String),
    #[error("automaton alphabet event `{event}` is not a model transition")]
    AlphabetMismatch { event: String },
    #[error("name `{0}` is both an automaton variable and a model place")]
    NameCollision(String),
    #[error("determinism violations: {0:?}")]
    Determinism(Vec<DeterminismViolation>),
}

/// Which determinism condition failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    /// Two initial locations may be simultaneously enterable.
    InitialDeterminism,
    /// Two synchronous edges may capture the same event.
    EventDeterminism,
    /// Two autonomous edges may fire at the same instant.
    AutonomousDeterminism,
    /// A cycle of autonomous edges exists.
    AutonomousLoop,
}

/// One reported determinism violation.
#[derive(Debug, Clone)]
pub struct DeterminismViolation {
    pub condition: Condition,
    pub detail: String,
}

impl Lha {
    /// Index of a variable name.
    pub fn var(&self, name: &str) -> Option<usize> {
        self.var_index.get(name).copied()
    }

    pub fn location_index(&self, name: &str) -> Option<usize> {
        self.locations.iter().position(|l| l.name == name)
    }

    pub fn array_index(&self, name: &str) -> Option<usize> {
        self.arrays.iter().position(|a| a.name == name)
    }

    /// Run the `c1`..`c4` checks; an empty report means the automaton is
    /// deterministic.
    pub fn check_determinism(&self) -> Vec<DeterminismViolation> {
        let mut out = Vec::new();

        // c1: initial locations pairwise exclusive
        for (i, &a) in self.initial.iter().enumerate() {
            for &b in &self.initial[i + 1..] {
                if !props_disjoint(&self.locations[a].invariant, &self.locations[b].invariant) {
                    out.push(DeterminismViolation {
                        condition: Condition::InitialDeterminism,
                        detail: format!(
                            "initial locations `{}` and `{}` are not provably exclusive",
                            self.locations[a].name, self.locations[b].name
                        ),
                    });
                }
            }
        }

        // c2/c3: same-source edge pairs
        for (i, e1) in self.edges.iter().enumerate() {
            for (j, e2) in self.edges.iter().enumerate().skip(i + 1) {
                if e1.source != e2.source {
                    continue;
                }
                let (condition, overlapping) = match (&e1.trigger, &e2.trigger) {
                    (Trigger::Sync(a), Trigger::Sync(b)) => (
                        Condition::EventDeterminism,
                        a.iter().any(|e| b.contains(e)),
                    ),
                    (Trigger::Autonomous, Trigger::Autonomous) => {
                        (Condition::AutonomousDeterminism, true)
                    }
                    _ => continue,
                };
                if !overlapping {
                    continue;
                }
                let targets_exclusive = props_disjoint(
                    &self.locations[e1.target].invariant,
                    &self.locations[e2.target].invariant,
                );
                let guards_exclusive = guards_disjoint(&e1.guard, &e2.guard);
                if !targets_exclusive && !guards_exclusive {
                    out.push(DeterminismViolation {
                        condition,
                        detail: format!(
                            "edges {i} and {j} from `{}` may be enabled together",
                            self.locations[e1.source].name
                        ),
                    });
                }
            }
        }

        // c4: the autonomous-only edge graph must be acyclic
        if let Some(cycle) = self.autonomous_cycle() {
            out.push(DeterminismViolation {
                condition: Condition::AutonomousLoop,
                detail: format!(
                    "autonomous cycle through {}",
                    cycle
                        .iter()
                        .map(|&l| self.locations[l].name.as_str())
                        .collect::<Vec<_>>()
                        .join(" -> ")
                ),
            });
        }

        out
    }

    fn autonomous_cycle(&self) -> Option<Vec<usize>> {
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); self.locations.len()];
        for e in &self.edges {
            if matches!(e.trigger, Trigger::Autonomous) {
                succ[e.source].push(e.target);
            }
        }
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut state = vec![0u8; self.locations.len()];
        let mut stack = Vec::new();
        fn dfs(
            node: usize,
            succ: &[Vec<usize>],
            state: &mut [u8],
            stack: &mut Vec<usize>,
        ) -> bool {
            state[node] = 1;
            stack.push(node);
            for &next in &succ[node] {
                if state[next] == 1 {
                    stack.push(next);
                    return true;
                }
                if state[next] == 0 && dfs(next, succ, state, stack) {
                    return true;
                }
            }
            stack.pop();
            state[node] = 2;
            false
        }
        for start in 0..self.locations.len() {
            if state[start] == 0 && dfs(start, &succ, &mut state, &mut stack) {
                return Some(stack);
            }
        }
        None
    }

    /// Resolve the automaton against a model: events map to transitions,
    /// marking identifiers to places. `extra_events` declares alphabet
    /// members that are not model transitions (used when replaying traces
    /// containing pseudo-events).
    pub fn bind<'a>(
        &'a self,
        model: &'a GspnModel,
        extra_events: &[String],
    ) -> Result<BoundAutomaton<'a>, LhaError> {
        for v in &self.variables {
            if model.place_index(v).is_some() {
                return Err(LhaError::NameCollision(v.clone()));
            }
        }
        // Event space: model transitions first, then extras.
        let mut event_slot: HashMap<&str, usize> = HashMap::new();
        for (i, t) in model.transitions.iter().enumerate() {
            event_slot.insert(t.name.as_str(), i);
        }
        for (k, name) in extra_events.iter().enumerate() {
            event_slot
                .entry(name.as_str())
                .or_insert(model.transitions.len() + k);
        }
        let n_slots = model.transitions.len() + extra_events.len();
        for name in &self.events {
            if !event_slot.contains_key(name.as_str()) {
                return Err(LhaError::AlphabetMismatch {
                    event: name.clone(),
                });
            }
        }

        let env = Env::with_vars(model.place_map(), &self.var_index);
        let bind_prop = |p: &Proposition| -> Result<Vec<(BoundExpr, CmpOp, BoundExpr)>, LhaError> {
            p.comparisons
                .iter()
                .map(|(l, op, r)| Ok((l.bind(&env)?, *op, r.bind(&env)?)))
                .collect()
        };

        let mut locations = Vec::with_capacity(self.locations.len());
        for loc in &self.locations {
            locations.push(BoundLocation {
                invariant: bind_prop(&loc.invariant)?,
                flows: loc
                    .flows
                    .iter()
                    .map(|f| f.bind(&env))
                    .collect::<Result<Vec<_>, _>>()?,
            });
        }

        let mut edges = Vec::with_capacity(self.edges.len());
        for edge in &self.edges {
            let mut captures = vec![false; n_slots];
            let autonomous = match &edge.trigger {
                Trigger::Sync(events) => {
                    for &e in events {
                        captures[event_slot[self.events[e].as_str()]] = true;
                    }
                    false
                }
                Trigger::Autonomous => true,
            };
            let guard = edge
                .guard
                .atoms
                .iter()
                .map(|atom| {
                    Ok(BoundAtom {
                        terms: atom
                            .terms
                            .iter()
                            .map(|(v, c)| Ok((*v, c.bind(&env)?)))
                            .collect::<Result<Vec<_>, LhaError>>()?,
                        op: atom.op,
                        bound: atom.bound.bind(&env)?,
                    })
                })
                .collect::<Result<Vec<_>, LhaError>>()?;
            let update = edge
                .update
                .assignments
                .iter()
                .map(|a| {
                    Ok(match a {
                        Assignment::Var { var, expr } => BoundAssignment::Var {
                            var: *var,
                            expr: expr.bind(&env)?,
                        },
                        Assignment::ArrayTally { array, index } => BoundAssignment::ArrayTally {
                            array: *array,
                            index: index.bind(&env)?,
                        },
                    })
                })
                .collect::<Result<Vec<_>, LhaError>>()?;
            edges.push(BoundEdge {
                source: edge.source,
                target: edge.target,
                autonomous,
                captures,
                guard,
                update,
            });
        }

        let mut sync_from: Vec<Vec<usize>> = vec![Vec::new(); self.locations.len()];
        let mut auto_from: Vec<Vec<usize>> = vec![Vec::new(); self.locations.len()];
        for (i, e) in edges.iter().enumerate() {
            if e.autonomous {
                auto_from[e.source].push(i);
            } else {
                sync_from[e.source].push(i);
            }
        }

        Ok(BoundAutomaton {
            lha: self,
            model,
            locations,
            edges,
            sync_from,
            auto_from,
            event_names: model
                .transitions
                .iter()
                .map(|t| t.name.clone())
                .chain(extra_events.iter().cloned())
                .collect(),
        })
    }
}

// ---------------------------------------------------------------------------
// Conservative exclusivity reasoning

#[derive(Debug, Clone, Copy)]
struct Interval {
    lo: f64,
    lo_closed: bool,
    hi: f64,
    hi_closed: bool,
}

impl Interval {
    fn full() -> Interval {
        Interval {
            lo: f64::NEG_INFINITY,
            lo_closed: false,
            hi: f64::INFINITY,
            hi_closed: false,
        }
    }

    fn restrict(&mut self, op: CmpOp, bound: f64) {
        match op {
            CmpOp::Eq => {
                self.restrict(CmpOp::Le, bound);
                self.restrict(CmpOp::Ge, bound);
            }
            CmpOp::Le => {
                if bound < self.hi {
                    self.hi = bound;
                    self.hi_closed = true;
                }
            }
            CmpOp::Lt => {
                if bound < self.hi || (bound == self.hi && self.hi_closed) {
                    self.hi = bound;
                    self.hi_closed = false;
                }
            }
            CmpOp::Ge => {
                if bound > self.lo {
                    self.lo = bound;
                    self.lo_closed = true;
                }
            }
            CmpOp::Gt => {
                if bound > self.lo || (bound == self.lo && self.lo_closed) {
                    self.lo = bound;
                    self.lo_closed = false;
                }
            }
        }
    }

    fn is_empty(&self) -> bool {
        self.lo > self.hi || (self.lo == self.hi && !(self.lo_closed && self.hi_closed))
    }

    fn disjoint(&self, other: &Interval) -> bool {
        if self.is_empty() || other.is_empty() {
            return true;
        }
        let gap_right = self.hi < other.lo
            || (self.hi == other.lo && !(self.hi_closed && other.lo_closed));
        let gap_left = other.hi < self.lo
            || (other.hi == self.lo && !(other.hi_closed && self.lo_closed));
        gap_right || gap_left
    }
}

fn expr_const(e: &Expr) -> Option<f64> {
    match e {
        Expr::Const(v) => Some(*v),
        Expr::Ident(_) => None,
        Expr::Add(a, b) => Some(expr_const(a)? + expr_const(b)?),
        Expr::Sub(a, b) => Some(expr_const(a)? - expr_const(b)?),
        Expr::Mul(a, b) => Some(expr_const(a)? * expr_const(b)?),
        Expr::Div(a, b) => Some(expr_const(a)? / expr_const(b)?),
        Expr::Neg(a) => Some(-expr_const(a)?),
    }
}

/// Per-identifier constant intervals plus symbolic (identifier, op, bound)
/// atoms for bounds that are not constant.
fn prop_shape(p: &Proposition) -> (HashMap<&str, Interval>, Vec<(&str, CmpOp, &Expr)>) {
    let mut intervals: HashMap<&str, Interval> = HashMap::new();
    let mut symbolic = Vec::new();
    for (lhs, op, rhs) in &p.comparisons {
        let (ident, op, bound) = match (lhs, rhs) {
            (Expr::Ident(name), _) => (name.as_str(), *op, rhs),
            (_, Expr::Ident(name)) => (name.as_str(), op.flip(), lhs),
            _ => continue,
        };
        match expr_const(bound) {
            Some(c) => intervals.entry(ident).or_insert(Interval::full()).restrict(op, c),
            None => symbolic.push((ident, op, bound)),
        }
    }
    (intervals, symbolic)
}

fn props_disjoint(a: &Proposition, b: &Proposition) -> bool {
    let (ia, sa) = prop_shape(a);
    let (ib, sb) = prop_shape(b);
    for (ident, interval_a) in &ia {
        if let Some(interval_b) = ib.get(ident) {
            if interval_a.disjoint(interval_b) {
                return true;
            }
        }
        if interval_a.is_empty() {
            return true;
        }
    }
    if ib.values().any(|i| i.is_empty()) {
        return true;
    }
    for (ident_a, op_a, bound_a) in &sa {
        for (ident_b, op_b, bound_b) in &sb {
            if ident_a == ident_b && bound_a == bound_b && op_a.disjoint_with(*op_b) {
                return true;
            }
        }
    }
    false
}

/// Single-variable view of a guard: constant intervals per variable plus
/// symbolic atoms `x op bound-expression` with unit coefficient.
fn guard_shape(g: &EdgeConstraint) -> Option<(HashMap<usize, Interval>, Vec<(usize, CmpOp, &Expr)>)> {
    let mut intervals: HashMap<usize, Interval> = HashMap::new();
    let mut symbolic = Vec::new();
    for atom in &g.atoms {
        if atom.terms.is_empty() {
            // constant comparison: if definitely false, the guard is
            // unsatisfiable and disjoint from everything
            if let Some(b) = expr_const(&atom.bound) {
                if !atom.op.apply(0.0, b) {
                    return None;
                }
            }
            continue;
        }
        if atom.terms.len() != 1 {
            continue;
        }
        let (var, coeff) = &atom.terms[0];
        let Some(c) = expr_const(coeff) else { continue };
        if c == 0.0 {
            continue;
        }
        let op = if c < 0.0 { atom.op.flip() } else { atom.op };
        match expr_const(&atom.bound) {
            Some(b) => intervals
                .entry(*var)
                .or_insert(Interval::full())
                .restrict(op, b / c),
            None => {
                if c == 1.0 {
                    symbolic.push((*var, op, &atom.bound));
                }
            }
        }
    }
    Some((intervals, symbolic))
}

fn guards_disjoint(a: &EdgeConstraint, b: &EdgeConstraint) -> bool {
    let Some((ia, sa)) = guard_shape(a) else {
        return true;
    };
    let Some((ib, sb)) = guard_shape(b) else {
        return true;
    };
    if ia.values().any(|i| i.is_empty()) || ib.values().any(|i| i.is_empty()) {
        return true;
    }
    for (var, interval_a) in &ia {
        if let Some(interval_b) = ib.get(var) {
            if interval_a.disjoint(interval_b) {
                return true;
            }
        }
    }
    for (var_a, op_a, bound_a) in &sa {
        for (var_b, op_b, bound_b) in &sb {
            if var_a == var_b && bound_a == bound_b && op_a.disjoint_with(*op_b) {
                return true;
            }
        }
    }
    false
}

// ---------------------------------------------------------------------------
// Bound (executable) form

#[derive(Debug, Clone)]
pub struct BoundLocation {
    invariant: Vec<(BoundExpr, CmpOp, BoundExpr)>,
    flows: Vec<BoundExpr>,
}

#[derive(Debug, Clone)]
pub struct BoundAtom {
    terms: Vec<(usize, BoundExpr)>,
    op: CmpOp,
    bound: BoundExpr,
}

#[derive(Debug, Clone)]
pub enum BoundAssignment {
    Var { var: usize, expr: BoundExpr },
    ArrayTally { array: usize, index: BoundExpr },
}

#[derive(Debug, Clone)]
pub struct BoundEdge {
    pub source: usize,
    pub target: usize,
    pub autonomous: bool,
    /// Indexed by event slot (model transitions, then extra events).
    captures: Vec<bool>,
    guard: Vec<BoundAtom>,
    update: Vec<BoundAssignment>,
}

/// Automaton resolved against a model, ready for synchronization.
pub struct BoundAutomaton<'a> {
    pub lha: &'a Lha,
    pub model: &'a GspnModel,
    locations: Vec<BoundLocation>,
    pub edges: Vec<BoundEdge>,
    sync_from: Vec<Vec<usize>>,
    auto_from: Vec<Vec<usize>>,
    event_names: Vec<String>,
}

/// Level-indexed counters with an overflow tally.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayCounts {
    pub counts: Vec<u64>,
    pub overflow: u64,
}

/// Values of the automaton variables (and arrays) during one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Valuation {
    pub values: Vec<f64>,
    pub arrays: Vec<ArrayCounts>,
}

impl Valuation {
    pub fn zero(lha: &Lha) -> Valuation {
        Valuation {
            values: vec![0.0; lha.variables.len()],
            arrays: lha
                .arrays
                .iter()
                .map(|a| ArrayCounts {
                    counts: vec![0; a.bound],
                    overflow: 0,
                })
                .collect(),
        }
    }
}

/// Runtime fault: the conservative determinism check was passed but two
/// edges still became enabled together, or a guard was malformed.
#[derive(Debug, Error)]
pub enum RuntimeFault {
    #[error("two autonomous edges enabled at the same instant from `{location}`")]
    AutonomousTie { location: String },
    #[error("events `{0}` matched by more than one synchronous edge")]
    SyncAmbiguity(String),
    #[error("autonomous chain exceeded {0} moves at one instant")]
    AutonomousChain(usize),
}

impl<'a> BoundAutomaton<'a> {
    pub fn location_count(&self) -> usize {
        self.lha.locations.len()
    }

    pub fn event_name(&self, slot: usize) -> &str {
        &self.event_names[slot]
    }

    pub fn event_slot(&self, name: &str) -> Option<usize> {
        self.event_names.iter().position(|n| n == name)
    }

    pub fn is_final(&self, loc: usize) -> bool {
        self.lha.finals.contains(&loc)
    }

    /// Does the marking satisfy the location's invariant?
    pub fn invariant_holds(&self, loc: usize, marking: &[u64]) -> bool {
        self.locations[loc]
            .invariant
            .iter()
            .all(|(l, op, r)| op.apply(l.eval_marking(marking), r.eval_marking(marking)))
    }

    /// Initial location whose invariant holds on the marking, if any.
    pub fn initial_location(&self, marking: &[u64]) -> Option<usize> {
        self.lha
            .initial
            .iter()
            .copied()
            .find(|&l| self.invariant_holds(l, marking))
    }

    /// Does the guard hold under `(marking, valuation)`?
    pub fn guard_holds(&self, edge: usize, marking: &[u64], v: &Valuation) -> bool {
        self.edges[edge].guard.iter().all(|atom| {
            let lhs: f64 = atom
                .terms
                .iter()
                .map(|(var, coeff)| coeff.eval_marking(marking) * v.values[*var])
                .sum();
            atom.op.apply(lhs, atom.bound.eval_marking(marking))
        })
    }

    /// Let time pass: every variable advances by its current flow times `dt`.
    pub fn elapse(&self, loc: usize, marking: &[u64], v: &mut Valuation, dt: f64) {
        debug_assert!(dt >= 0.0);
        if dt == 0.0 {
            return;
        }
        for (value, flow) in v.values.iter_mut().zip(&self.locations[loc].flows) {
            *value += flow.eval_marking(marking) * dt;
        }
    }

    /// Apply an edge update; assignments all read the pre-update valuation.
    pub fn apply_update(&self, edge: usize, marking: &[u64], v: &mut Valuation) {
        let update = &self.edges[edge].update;
        if update.is_empty() {
            return;
        }
        let mut staged: Vec<(usize, f64)> = Vec::with_capacity(update.len());
        for assignment in update {
            match assignment {
                BoundAssignment::Var { var, expr } => {
                    staged.push((*var, expr.eval(marking, &v.values)));
                }
                BoundAssignment::ArrayTally { array, index } => {
                    let level = index.eval(marking, &v.values).round();
                    let bank = &mut v.arrays[*array];
                    if level >= 0.0 && (level as usize) < bank.counts.len() {
                        bank.counts[level as usize] += 1;
                    } else {
                        bank.overflow += 1;
                    }
                }
            }
        }
        for (var, value) in staged {
            v.values[var] = value;
        }
    }

    /// Synchronous edges out of `loc` capturing `event_slot` that are enabled
    /// under the post-event marking. Determinism guarantees at most one.
    pub fn matching_sync_edge(
        &self,
        loc: usize,
        event_slot: usize,
        marking_after: &[u64],
        v: &Valuation,
    ) -> Result<Option<usize>, RuntimeFault> {
        let mut found = None;
        for &edge in &self.sync_from[loc] {
            let e = &self.edges[edge];
            if !e.captures[event_slot] {
                continue;
            }
            if !self.guard_holds(edge, marking_after, v) {
                continue;
            }
            if !self.invariant_holds(e.target, marking_after) {
                continue;
            }
            if found.is_some() {
                return Err(RuntimeFault::SyncAmbiguity(
                    self.event_names[event_slot].clone(),
                ));
            }
            found = Some(edge);
        }
        Ok(found)
    }

    /// Earliest delay `d >= 0` at which some autonomous edge out of `loc`
    /// can fire under the location's flows, together with that edge.
    ///
    /// Guards are linear in the variables, so each inequality is solved in
    /// closed form for `d`; the satisfaction set of the conjunction is a
    /// single closed interval and its minimum is the firing delay.
    pub fn next_autonomous(
        &self,
        loc: usize,
        marking: &[u64],
        v: &Valuation,
    ) -> Result<Option<(f64, usize)>, RuntimeFault> {
        let flows = &self.locations[loc].flows;
        let mut best: Option<(f64, usize)> = None;
        for &edge in &self.auto_from[loc] {
            let e = &self.edges[edge];
            // The marking cannot change before the next synchronization, so
            // a target invariant that fails now fails for every d.
            if !self.invariant_holds(e.target, marking) {
                continue;
            }
            let mut lo = 0.0_f64;
            let mut hi = f64::INFINITY;
            let mut feasible = true;
            for atom in &e.guard {
                let mut value = 0.0;
                let mut slope = 0.0;
                for (var, coeff) in &atom.terms {
                    let c = coeff.eval_marking(marking);
                    value += c * v.values[*var];
                    slope += c * flows[*var].eval_marking(marking);
                }
                let bound = atom.bound.eval_marking(marking);
                match atom.op {
                    CmpOp::Le => {
                        if slope > 0.0 {
                            hi = hi.min((bound - value) / slope);
                        } else if slope < 0.0 {
                            lo = lo.max((bound - value) / slope);
                        } else if !(value <= bound) {
                            feasible = false;
                        }
                    }
                    CmpOp::Ge => {
                        if slope > 0.0 {
                            lo = lo.max((bound - value) / slope);
                        } else if slope < 0.0 {
                            hi = hi.min((bound - value) / slope);
                        } else if !(value >= bound) {
                            feasible = false;
                        }
                    }
                    CmpOp::Eq => {
                        if slope == 0.0 {
                            if value != bound {
                                feasible = false;
                            }
                        } else {
                            let d = (bound - value) / slope;
                            lo = lo.max(d);
                            hi = hi.min(d);
                        }
                    }
                    // Rejected at validation; kept total for safety.
                    CmpOp::Lt | CmpOp::Gt => feasible = false,
                }
                if !feasible {
                    break;
                }
            }
            if !feasible || lo > hi {
                continue;
            }
            match best {
                Some((d, _)) if lo > d => {}
                Some((d, _)) if lo == d => {
                    return Err(RuntimeFault::AutonomousTie {
                        location: self.lha.locations[loc].name.clone(),
                    })
                }
                _ => best = Some((lo, edge)),
            }
        }
        Ok(best)
    }
}

// ---------------------------------------------------------------------------
// Builder

/// Name-based construction of an [`Lha`]; resolution and validation happen
/// in [`LhaBuilder::build`].
pub struct LhaBuilder {
    events: Vec<String>,
    variables: Vec<String>,
    arrays: Vec<ArrayDecl>,
    locations: Vec<(String, Proposition, Vec<(String, Expr)>)>,
    initial: Vec<String>,
    finals: Vec<String>,
    edges: Vec<(String, String, TriggerSpec, EdgeConstraintSpec, Vec<(String, UpdateRhs)>)>,
}

/// Trigger in builder form.
pub enum TriggerSpec {
    Events(Vec<String>),
    Autonomous,
}

/// Guard in builder form: raw comparisons, linearized during `build`.
pub struct EdgeConstraintSpec {
    pub comparisons: Vec<(Expr, CmpOp, Expr)>,
}

impl EdgeConstraintSpec {
    pub fn top() -> EdgeConstraintSpec {
        EdgeConstraintSpec {
            comparisons: Vec::new(),
        }
    }
}

/// Right-hand side of one update entry.
pub enum UpdateRhs {
    Expr(Expr),
    Tally(Expr),
}

impl LhaBuilder {
    pub fn new(events: Vec<String>, variables: Vec<String>) -> LhaBuilder {
        LhaBuilder {
            events,
            variables,
            arrays: Vec::new(),
            locations: Vec::new(),
            initial: Vec::new(),
            finals: Vec::new(),
            edges: Vec::new(),
        }
    }

    pub fn array(&mut self, name: &str, bound: usize) -> &mut Self {
        self.arrays.push(ArrayDecl {
            name: name.to_string(),
            bound,
        });
        self
    }

    pub fn location(
        &mut self,
        name: &str,
        invariant: Proposition,
        flows: Vec<(&str, Expr)>,
    ) -> &mut Self {
        self.locations.push((
            name.to_string(),
            invariant,
            flows
                .into_iter()
                .map(|(v, e)| (v.to_string(), e))
                .collect(),
        ));
        self
    }

    pub fn initial(&mut self, name: &str) -> &mut Self {
        self.initial.push(name.to_string());
        self
    }

    pub fn final_location(&mut self, name: &str) -> &mut Self {
        self.finals.push(name.to_string());
        self
    }

    pub fn edge(
        &mut self,
        source: &str,
        target: &str,
        trigger: TriggerSpec,
        guard: EdgeConstraintSpec,
        updates: Vec<(&str, UpdateRhs)>,
    ) -> &mut Self {
        self.edges.push((
            source.to_string(),
            target.to_string(),
            trigger,
            guard,
            updates
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
        ));
        self
    }

    pub fn build(self) -> Result<Lha, LhaError> {
        let LhaBuilder {
            events,
            variables,
            arrays,
            locations: location_specs,
            initial,
            finals,
            edges: edge_specs,
        } = self;
        let mut var_index = HashMap::new();
        for (i, v) in variables.iter().enumerate() {
            if var_index.insert(v.clone(), i).is_some() {
                return Err(LhaError::DuplicateName(v.clone()));
            }
        }
        let mut event_index = HashMap::new();
        for (i, e) in events.iter().enumerate() {
            if event_index.insert(e.clone(), i).is_some() {
                return Err(LhaError::DuplicateName(e.clone()));
            }
        }
        let mut array_index = HashMap::new();
        for (i, a) in arrays.iter().enumerate() {
            if array_index.insert(a.name.clone(), i).is_some() {
                return Err(LhaError::DuplicateName(a.name.clone()));
            }
        }

        let mut loc_index = HashMap::new();
        let mut locations = Vec::new();
        for (name, invariant, flow_pairs) in location_specs {
            if loc_index.insert(name.clone(), locations.len()).is_some() {
                return Err(LhaError::DuplicateName(name));
            }
            for (lhs, _, rhs) in &invariant.comparisons {
                for side in [lhs, rhs] {
                    if side.idents().iter().any(|i| var_index.contains_key(*i)) {
                        return Err(LhaError::MarkingOnly {
                            location: name.clone(),
                            what: "invariant".into(),
                        });
                    }
                }
            }
            let mut flows = vec![Expr::Const(0.0); variables.len()];
            for (var, expr) in flow_pairs {
                let Some(&vi) = var_index.get(&var) else {
                    return Err(LhaError::UnknownVariable(var));
                };
                if expr.idents().iter().any(|i| var_index.contains_key(*i)) {
                    return Err(LhaError::MarkingOnly {
                        location: name.clone(),
                        what: "flow".into(),
                    });
                }
                flows[vi] = expr;
            }
            locations.push(Location {
                name,
                invariant,
                flows,
            });
        }

        let resolve_loc = |name: &str| -> Result<usize, LhaError> {
            loc_index
                .get(name)
                .copied()
                .ok_or_else(|| LhaError::UnknownLocation(name.to_string()))
        };

        let mut edges = Vec::new();
        for (edge_no, (source, target, trigger, guard, updates)) in
            edge_specs.into_iter().enumerate()
        {
            let source = resolve_loc(&source)?;
            let target = resolve_loc(&target)?;
            let trigger = match trigger {
                TriggerSpec::Autonomous => Trigger::Autonomous,
                TriggerSpec::Events(names) => {
                    let mut ids = names
                        .iter()
                        .map(|n| {
                            event_index
                                .get(n)
                                .copied()
                                .ok_or_else(|| LhaError::UnknownEvent(n.clone()))
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    ids.sort_unstable();
                    ids.dedup();
                    Trigger::Sync(ids)
                }
            };
            let mut atoms = Vec::new();
            for (lhs, op, rhs) in guard.comparisons {
                atoms.push(normalize_comparison(&lhs, op, &rhs, &var_index)?);
            }
            let guard = EdgeConstraint { atoms };
            if matches!(trigger, Trigger::Autonomous) && !guard.is_left_closed() {
                return Err(LhaError::NotLeftClosed {
                    edge: edge_no,
                    location: locations[source].name.clone(),
                });
            }
            let mut assigned = HashSet::new();
            let mut assignments = Vec::new();
            for (name, rhs) in updates {
                match rhs {
                    UpdateRhs::Expr(expr) => {
                        let Some(&var) = var_index.get(&name) else {
                            return Err(LhaError::UnknownVariable(name));
                        };
                        if !assigned.insert(name.clone()) {
                            return Err(LhaError::DoubleAssignment {
                                edge: edge_no,
                                var: name,
                            });
                        }
                        assignments.push(Assignment::Var { var, expr });
                    }
                    UpdateRhs::Tally(index) => {
                        let Some(&array) = array_index.get(&name) else {
                            return Err(LhaError::UnknownVariable(name));
                        };
                        assignments.push(Assignment::ArrayTally { array, index });
                    }
                }
            }
            edges.push(Edge {
                source,
                target,
                trigger,
                guard,
                update: Update { assignments },
            });
        }

        let initial = initial
            .iter()
            .map(|n| resolve_loc(n))
            .collect::<Result<Vec<_>, _>>()?;
        let finals = finals
            .iter()
            .map(|n| resolve_loc(n))
            .collect::<Result<Vec<_>, _>>()?;

        Ok(Lha {
            events,
            variables,
            arrays,
            locations,
            initial,
            finals,
            edges,
            var_index,
        })
    }
}

/// Normalize `lhs op rhs` into a linear atom over the automaton variables.
fn normalize_comparison(
    lhs: &Expr,
    op: CmpOp,
    rhs: &Expr,
    vars: &HashMap<String, usize>,
) -> Result<LinearAtom, LhaError> {
    let l = linearize_expr(lhs, vars)?;
    let r = linearize_expr(rhs, vars)?;
    let mut terms: Vec<(usize, Expr)> = l.0;
    for (var, coeff) in r.0 {
        match terms.iter_mut().find(|(v, _)| *v == var) {
            Some((_, existing)) => {
                *existing = Expr::sub(existing.clone(), coeff);
            }
            None => terms.push((var, Expr::Neg(Box::new(coeff)))),
        }
    }
    let bound = sub_simplified(r.1, l.1);
    Ok(LinearAtom { terms, op, bound })
}

fn sub_simplified(a: Expr, b: Expr) -> Expr {
    if b == Expr::Const(0.0) {
        a
    } else if a == Expr::Const(0.0) {
        Expr::Neg(Box::new(b))
    } else {
        Expr::sub(a, b)
    }
}

/// Split an expression into variable terms and a marking-only remainder.
fn linearize_expr(
    expr: &Expr,
    vars: &HashMap<String, usize>,
) -> Result<(Vec<(usize, Expr)>, Expr), LhaError> {
    fn has_var(expr: &Expr, vars: &HashMap<String, usize>) -> bool {
        expr.idents().iter().any(|i| vars.contains_key(*i))
    }
    match expr {
        Expr::Ident(name) => match vars.get(name) {
            Some(&v) => Ok((vec![(v, Expr::Const(1.0))], Expr::Const(0.0))),
            None => Ok((Vec::new(), expr.clone())),
        },
        Expr::Const(_) => Ok((Vec::new(), expr.clone())),
        Expr::Neg(inner) => {
            let (mut terms, rem) = linearize_expr(inner, vars)?;
            for (_, c) in &mut terms {
                *c = Expr::Neg(Box::new(c.clone()));
            }
            Ok((terms, Expr::Neg(Box::new(rem))))
        }
        Expr::Add(a, b) | Expr::Sub(a, b) => {
            let negate = matches!(expr, Expr::Sub(_, _));
            let (mut terms, rem_a) = linearize_expr(a, vars)?;
            let (terms_b, rem_b) = linearize_expr(b, vars)?;
            for (var, coeff) in terms_b {
                let coeff = if negate {
                    Expr::Neg(Box::new(coeff))
                } else {
                    coeff
                };
                match terms.iter_mut().find(|(v, _)| *v == var) {
                    Some((_, existing)) => {
                        *existing = if negate {
                            Expr::sub(existing.clone(), match &coeff { Expr::Neg(inner) => inner.as_ref().clone(), other => other.clone() })
                        } else {
                            Expr::add(existing.clone(), coeff)
                        };
                    }
                    None => terms.push((var, coeff)),
                }
            }
            let rem = if negate {
                sub_simplified(rem_a, rem_b)
            } else if rem_a == Expr::Const(0.0) {
                rem_b
            } else if rem_b == Expr::Const(0.0) {
                rem_a
            } else {
                Expr::add(rem_a, rem_b)
            };
            Ok((terms, rem))
        }
        Expr::Mul(a, b) => {
            let (scalar, linear) = if !has_var(a, vars) {
                (a, b)
            } else if !has_var(b, vars) {
                (b, a)
            } else {
                return Err(LhaError::Expr(ExprError::NotLinear));
            };
            let (mut terms, rem) = linearize_expr(linear, vars)?;
            for (_, c) in &mut terms {
                *c = Expr::mul(scalar.as_ref().clone(), c.clone());
            }
            let rem = if rem == Expr::Const(0.0) {
                rem
            } else {
                Expr::mul(scalar.as_ref().clone(), rem)
            };
            Ok((terms, rem))
        }
        Expr::Div(a, b) => {
            if has_var(b, vars) {
                return Err(LhaError::Expr(ExprError::NotLinear));
            }
            let (mut terms, rem) = linearize_expr(a, vars)?;
            for (_, c) in &mut terms {
                *c = Expr::div(c.clone(), b.as_ref().clone());
            }
            let rem = if rem == Expr::Const(0.0) {
                rem
            } else {
                Expr::div(rem, b.as_ref().clone())
            };
            Ok((terms, rem))
        }
    }
}

// ---------------------------------------------------------------------------
// Text parsing for invariants, guards and updates

/// Parse a conjunction of comparisons: `a <= b && c = d`, or `true`.
pub fn parse_comparisons(input: &str) -> Result<Vec<(Expr, CmpOp, Expr)>, ExprError> {
    let trimmed = input.trim();
    if trimmed.is_empty() || trimmed == "true" {
        return Ok(Vec::new());
    }
    let mut lexer = Lexer::new(trimmed);
    let mut out = Vec::new();
    loop {
        let lhs = parse_sum(&mut lexer)?;
        let op = match lexer.next_token()? {
            Token::Le => CmpOp::Le,
            Token::Ge => CmpOp::Ge,
            Token::Lt => CmpOp::Lt,
            Token::Gt => CmpOp::Gt,
            Token::Eq => CmpOp::Eq,
            other => {
                return Err(ExprError::Syntax {
                    pos: lexer.pos,
                    message: format!("expected comparison operator, found {other:?}"),
                })
            }
        };
        let rhs = parse_sum(&mut lexer)?;
        out.push((lhs, op, rhs));
        match lexer.next_token()? {
            Token::AndAnd => continue,
            Token::End => return Ok(out),
            other => {
                return Err(ExprError::Syntax {
                    pos: lexer.pos,
                    message: format!("expected `&&` or end, found {other:?}"),
                })
            }
        }
    }
}

/// Parse one update right-hand side: an expression, or `count(expr)` for a
/// level-counter tally.
pub fn parse_update_rhs(input: &str) -> Result<UpdateRhs, ExprError> {
    let trimmed = input.trim();
    if let Some(rest) = trimmed.strip_prefix("count(") {
        if let Some(inner) = rest.strip_suffix(')') {
            return Ok(UpdateRhs::Tally(crate::expr::parse_expr(inner)?));
        }
    }
    Ok(UpdateRhs::Expr(crate::expr::parse_expr(trimmed)?))
}

// ---------------------------------------------------------------------------
// File format

#[derive(Serialize, Deserialize)]
struct LhaFile {
    events: Vec<String>,
    variables: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    arrays: Vec<ArrayFile>,
    locations: Vec<LocationFile>,
    initial: Vec<String>,
    #[serde(rename = "final")]
    finals: Vec<String>,
    edges: Vec<EdgeFile>,
}

#[derive(Serialize, Deserialize)]
struct ArrayFile {
    name: String,
    bound: usize,
}

#[derive(Serialize, Deserialize)]
struct LocationFile {
    name: String,
    #[serde(default = "default_true_text")]
    invariant: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    flow: BTreeMap<String, String>,
}

fn default_true_text() -> String {
    "true".to_string()
}

#[derive(Serialize, Deserialize)]
struct EdgeFile {
    src: String,
    dst: String,
    /// `"#"` for autonomous, `"*"` for the whole alphabet, or a list.
    sync: serde_json::Value,
    #[serde(default = "default_true_text")]
    guard: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    updates: BTreeMap<String, String>,
}

impl Lha {
    pub fn from_json(text: &str) -> Result<Lha, LhaError> {
        let file: LhaFile =
            serde_json::from_str(text).map_err(|e| LhaError::File(e.to_string()))?;
        let mut builder = LhaBuilder::new(file.events.clone(), file.variables.clone());
        for a in &file.arrays {
            builder.array(&a.name, a.bound);
        }
        for loc in &file.locations {
            let invariant = Proposition::new(parse_comparisons(&loc.invariant)?);
            let mut flows = Vec::new();
            for (var, text) in &loc.flow {
                flows.push((var.as_str(), crate::expr::parse_expr(text)?));
            }
            builder.location(&loc.name, invariant, flows);
        }
        for name in &file.initial {
            builder.initial(name);
        }
        for name in &file.finals {
            builder.final_location(name);
        }
        for edge in &file.edges {
            let trigger = match &edge.sync {
                serde_json::Value::String(s) if s == "#" => TriggerSpec::Autonomous,
                serde_json::Value::String(s) if s == "*" => {
                    TriggerSpec::Events(file.events.clone())
                }
                serde_json::Value::Array(items) => TriggerSpec::Events(
                    items
                        .iter()
                        .map(|v| {
                            v.as_str()
                                .map(str::to_string)
                                .ok_or_else(|| LhaError::File("sync entries must be strings".into()))
                        })
                        .collect::<Result<Vec<_>, _>>()?,
                ),
                other => {
                    return Err(LhaError::File(format!(
                        "bad sync field {other}; use \"#\", \"*\" or a list of events"
                    )))
                }
            };
            let guard = EdgeConstraintSpec {
                comparisons: parse_comparisons(&edge.guard)?,
            };
            let mut updates = Vec::new();
            for (k, v) in &edge.updates {
                updates.push((k.as_str(), parse_update_rhs(v)?));
            }
            builder.edge(&edge.src, &edge.dst, trigger, guard, updates);
        }
        builder.build()
    }

    pub fn to_json(&self) -> String {
        let file = LhaFile {
            events: self.events.clone(),
            variables: self.variables.clone(),
            arrays: self
                .arrays
                .iter()
                .map(|a| ArrayFile {
                    name: a.name.clone(),
                    bound: a.bound,
                })
                .collect(),
            locations: self
                .locations
                .iter()
                .map(|l| LocationFile {
                    name: l.name.clone(),
                    invariant: l.invariant.to_text(),
                    flow: self
                        .variables
                        .iter()
                        .zip(&l.flows)
                        .filter(|(_, f)| **f != Expr::Const(0.0))
                        .map(|(v, f)| (v.clone(), f.to_string()))
                        .collect(),
                })
                .collect(),
            initial: self.initial.iter().map(|&l| self.locations[l].name.clone()).collect(),
            finals: self.finals.iter().map(|&l| self.locations[l].name.clone()).collect(),
            edges: self
                .edges
                .iter()
                .map(|e| {
                    let sync = match &e.trigger {
                        Trigger::Autonomous => serde_json::Value::String("#".into()),
                        Trigger::Sync(ids) if ids.len() == self.events.len() => {
                            serde_json::Value::String("*".into())
                        }
                        Trigger::Sync(ids) => serde_json::Value::Array(
                            ids.iter()
                                .map(|&i| serde_json::Value::String(self.events[i].clone()))
                                .collect(),
                        ),
                    };
                    let guard = if e.guard.atoms.is_empty() {
                        "true".to_string()
                    } else {
                        e.guard
                            .atoms
                            .iter()
                            .map(|a| {
                                let mut lhs = String::new();
                                for (k, (var, coeff)) in a.terms.iter().enumerate() {
                                    if k > 0 {
                                        lhs.push_str(" + ");
                                    }
                                    if *coeff == Expr::Const(1.0) {
                                        lhs.push_str(&self.variables[*var]);
                                    } else {
                                        lhs.push_str(&format!(
                                            "({}) * {}",
                                            coeff, self.variables[*var]
                                        ));
                                    }
                                }
                                if a.terms.is_empty() {
                                    lhs.push('0');
                                }
                                format!("{lhs} {} {}", a.op.text(), a.bound)
                            })
                            .collect::<Vec<_>>()
                            .join(" && ")
                    };
                    let updates = e
                        .update
                        .assignments
                        .iter()
                        .map(|a| match a {
                            Assignment::Var { var, expr } => {
                                (self.variables[*var].clone(), expr.to_string())
                            }
                            Assignment::ArrayTally { array, index } => (
                                self.arrays[*array].name.clone(),
                                format!("count({index})"),
                            ),
                        })
                        .collect();
                    EdgeFile {
                        src: self.locations[e.source].name.clone(),
                        dst: self.locations[e.target].name.clone(),
                        sync,
                        guard,
                        updates,
                    }
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("automaton serialization")
    }
}

/// Automaton accepting once a chosen set of events has occurred `n` times:
/// a clock `t`, a counter `n`, and optionally a variable `a` tracking the
/// marking of one place on every step.
pub fn counting_automaton(
    alphabet: Vec<String>,
    counted: Vec<String>,
    n: u64,
    track: Option<(&str, &str)>,
) -> Result<Lha, LhaError> {
    let mut variables = vec!["t".to_string(), "n".to_string()];
    if let Some((var, _)) = track {
        variables.push(var.to_string());
    }
    let mut builder = LhaBuilder::new(alphabet.clone(), variables);
    builder
        .location("l0", Proposition::top(), vec![("t", Expr::constant(1.0))])
        .location("acc", Proposition::top(), vec![("t", Expr::constant(1.0))])
        .initial("l0")
        .final_location("acc");
    let below = EdgeConstraintSpec {
        comparisons: vec![(
            Expr::ident("n"),
            CmpOp::Lt,
            Expr::constant(n as f64),
        )],
    };
    let mut counted_updates = vec![(
        "n",
        UpdateRhs::Expr(Expr::add(Expr::ident("n"), Expr::constant(1.0))),
    )];
    if let Some((var, place)) = track {
        counted_updates.push((var, UpdateRhs::Expr(Expr::ident(place))));
    }
    builder.edge("l0", "l0", TriggerSpec::Events(counted.clone()), below, counted_updates);
    let rest: Vec<String> = alphabet
        .iter()
        .filter(|e| !counted.contains(e))
        .cloned()
        .collect();
    if !rest.is_empty() {
        let below = EdgeConstraintSpec {
            comparisons: vec![(
                Expr::ident("n"),
                CmpOp::Lt,
                Expr::constant(n as f64),
            )],
        };
        let updates = match track {
            Some((var, place)) => vec![(var, UpdateRhs::Expr(Expr::ident(place)))],
            None => vec![],
        };
        builder.edge("l0", "l0", TriggerSpec::Events(rest), below, updates);
    }
    builder.edge(
        "l0",
        "acc",
        TriggerSpec::Autonomous,
        EdgeConstraintSpec {
            comparisons: vec![(
                Expr::ident("n"),
                CmpOp::Eq,
                Expr::constant(n as f64),
            )],
        },
        vec![],
    );
    builder.build()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;
    use crate::gspn::{DelayLaw, GspnModel, TransitionSpec};

    fn toy_model(places: &[(&str, u64)]) -> GspnModel {
        GspnModel::new(
            places.iter().map(|(n, _)| n.to_string()).collect(),
            places.iter().map(|(_, c)| *c).collect(),
            vec![TransitionSpec {
                name: "ev".into(),
                inputs: vec![],
                outputs: vec![],
                law: DelayLaw::Exponential,
                rate: Expr::constant(1.0),
            }],
            vec![],
        )
        .unwrap()
    }

    fn comparisons(text: &str) -> Vec<(Expr, CmpOp, Expr)> {
        parse_comparisons(text).unwrap()
    }

    fn tiny_lha(guard: &str, flows: Vec<(&str, Expr)>) -> Lha {
        let mut builder = LhaBuilder::new(vec!["ev".into()], vec!["x".into(), "y".into()]);
        builder
            .location("l0", Proposition::top(), flows)
            .location("l1", Proposition::top(), vec![])
            .initial("l0")
            .final_location("l1")
            .edge(
                "l0",
                "l1",
                TriggerSpec::Autonomous,
                EdgeConstraintSpec {
                    comparisons: comparisons(guard),
                },
                vec![],
            );
        builder.build().unwrap()
    }

    #[test]
    fn invariant_boundaries_are_inclusive() {
        let model = toy_model(&[("A", 10)]);
        let mut builder = LhaBuilder::new(vec!["ev".into()], vec![]);
        builder
            .location(
                "geq",
                Proposition::new(comparisons("A >= 10")),
                vec![],
            )
            .location(
                "mid",
                Proposition::new(comparisons("1 < A && A < 1000")),
                vec![],
            )
            .location("any", Proposition::top(), vec![])
            .initial("geq");
        let lha = builder.build().unwrap();
        let bound = lha.bind(&model, &[]).unwrap();
        assert!(bound.invariant_holds(0, &[10]));
        assert!(!bound.invariant_holds(0, &[9]));
        assert!(bound.invariant_holds(1, &[500]));
        assert!(!bound.invariant_holds(1, &[1000]));
        assert!(bound.invariant_holds(2, &[0]));
    }

    #[test]
    fn constraint_satisfaction_examples() {
        let model = toy_model(&[("A", 0)]);
        // 2x + 3y <= 5 at (1, 1): 5 <= 5 holds
        let lha = tiny_lha("2 * x + 3 * y <= 5", vec![]);
        let bound = lha.bind(&model, &[]).unwrap();
        let mut v = Valuation::zero(&lha);
        v.values = vec![1.0, 1.0];
        assert!(bound.guard_holds(0, &[0], &v));
        v.values = vec![2.0, 1.0];
        assert!(!bound.guard_holds(0, &[0], &v));

        // equality n = N
        let lha = tiny_lha("x = 3", vec![]);
        let bound = lha.bind(&model, &[]).unwrap();
        let mut v = Valuation::zero(&lha);
        v.values = vec![3.0, 0.0];
        assert!(bound.guard_holds(0, &[0], &v));

        // A * x = 5 with A = 0 is false for every valuation
        let lha = tiny_lha("A * x = 5", vec![]);
        let bound = lha.bind(&model, &[]).unwrap();
        let mut v = Valuation::zero(&lha);
        v.values = vec![7.0, 0.0];
        assert!(!bound.guard_holds(0, &[0], &v));
    }

    #[test]
    fn updates_are_simultaneous() {
        let model = toy_model(&[("protA", 4)]);
        let mut builder = LhaBuilder::new(vec!["ev".into()], vec!["n".into(), "a".into()]);
        builder
            .location("l0", Proposition::top(), vec![])
            .initial("l0")
            .edge(
                "l0",
                "l0",
                TriggerSpec::Events(vec!["ev".into()]),
                EdgeConstraintSpec::top(),
                vec![
                    ("n", UpdateRhs::Expr(parse_expr("n + 1").unwrap())),
                    ("a", UpdateRhs::Expr(parse_expr("protA").unwrap())),
                ],
            )
            .edge(
                "l0",
                "l0",
                TriggerSpec::Events(vec![]),
                EdgeConstraintSpec::top(),
                vec![
                    ("n", UpdateRhs::Expr(parse_expr("a").unwrap())),
                    ("a", UpdateRhs::Expr(parse_expr("n").unwrap())),
                ],
            );
        let lha = builder.build().unwrap();
        let bound = lha.bind(&model, &[]).unwrap();
        let mut v = Valuation::zero(&lha);
        v.values = vec![2.0, 0.0];
        bound.apply_update(0, &[4], &mut v);
        assert_eq!(v.values, vec![3.0, 4.0]);

        // swap applied twice returns the original valuation
        let before = v.clone();
        bound.apply_update(1, &[4], &mut v);
        assert_eq!(v.values, vec![4.0, 3.0]);
        bound.apply_update(1, &[4], &mut v);
        assert_eq!(v, before);
    }

    #[test]
    fn elapse_follows_flows() {
        let model = toy_model(&[("A", 3), ("B", 4)]);
        let mut builder = LhaBuilder::new(vec!["ev".into()], vec!["t".into(), "k".into(), "z".into()]);
        builder
            .location(
                "l0",
                Proposition::top(),
                vec![
                    ("t", Expr::constant(1.0)),
                    ("z", parse_expr("1 * A + 2 * B").unwrap()),
                ],
            )
            .initial("l0");
        let lha = builder.build().unwrap();
        let bound = lha.bind(&model, &[]).unwrap();
        let mut v = Valuation::zero(&lha);
        bound.elapse(0, &[3, 4], &mut v, 2.5);
        assert_eq!(v.values[0], 2.5); // clock
        assert_eq!(v.values[1], 0.0); // counter, flow 0
        assert_eq!(v.values[2], (3.0 + 8.0) * 2.5);
        // additivity under an unchanged marking
        let mut w = Valuation::zero(&lha);
        bound.elapse(0, &[3, 4], &mut w, 1.0);
        bound.elapse(0, &[3, 4], &mut w, 1.5);
        assert_eq!(v, w);
    }

    #[test]
    fn next_autonomous_examples() {
        let model = toy_model(&[("A", 0)]);

        // guard x = 3 with x already 3 and zero flow: fires now
        let lha = tiny_lha("x = 3", vec![]);
        let bound = lha.bind(&model, &[]).unwrap();
        let mut v = Valuation::zero(&lha);
        v.values = vec![3.0, 0.0];
        let (d, _) = bound.next_autonomous(0, &[0], &v).unwrap().unwrap();
        assert_eq!(d, 0.0);

        // guard x >= 100 under flow 1 from 0: fires at 100
        let lha = tiny_lha("x >= 100", vec![("x", Expr::constant(1.0))]);
        let bound = lha.bind(&model, &[]).unwrap();
        let v = Valuation::zero(&lha);
        let (d, _) = bound.next_autonomous(0, &[0], &v).unwrap().unwrap();
        assert_eq!(d, 100.0);

        // guard x = 3 with x stuck at 2: never fires
        let lha = tiny_lha("x = 3", vec![]);
        let bound = lha.bind(&model, &[]).unwrap();
        let mut v = Valuation::zero(&lha);
        v.values = vec![2.0, 0.0];
        assert!(bound.next_autonomous(0, &[0], &v).unwrap().is_none());
    }

    #[test]
    fn next_autonomous_is_minimal() {
        // window [2, 5] for x starting at 0 with flow 1; must fire at 2
        let model = toy_model(&[("A", 0)]);
        let lha = tiny_lha("x >= 2 && x <= 5", vec![("x", Expr::constant(1.0))]);
        let bound = lha.bind(&model, &[]).unwrap();
        let v = Valuation::zero(&lha);
        let (d, _) = bound.next_autonomous(0, &[0], &v).unwrap().unwrap();
        assert_eq!(d, 2.0);
        // sampled probing: no earlier instant satisfies the guard
        for k in 0..20 {
            let probe = 1.9 * (k as f64) / 19.0;
            let mut w = Valuation::zero(&lha);
            bound.elapse(0, &[0], &mut w, probe);
            assert!(!bound.guard_holds(0, &[0], &w));
        }
    }

    #[test]
    fn strict_autonomous_guard_rejected() {
        let mut builder = LhaBuilder::new(vec!["ev".into()], vec!["x".into()]);
        builder
            .location("l0", Proposition::top(), vec![])
            .location("l1", Proposition::top(), vec![])
            .initial("l0")
            .edge(
                "l0",
                "l1",
                TriggerSpec::Autonomous,
                EdgeConstraintSpec {
                    comparisons: comparisons("x > 5"),
                },
                vec![],
            );
        assert!(matches!(
            builder.build(),
            Err(LhaError::NotLeftClosed { .. })
        ));
    }

    #[test]
    fn determinism_c1_two_unconstrained_initials() {
        let mut builder = LhaBuilder::new(vec!["ev".into()], vec![]);
        builder
            .location("a", Proposition::top(), vec![])
            .location("b", Proposition::top(), vec![])
            .initial("a")
            .initial("b");
        let lha = builder.build().unwrap();
        let violations = lha.check_determinism();
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].condition, Condition::InitialDeterminism);
    }

    #[test]
    fn determinism_c1_exclusive_invariants_pass() {
        let mut builder = LhaBuilder::new(vec!["ev".into()], vec![]);
        builder
            .location("a", Proposition::new(comparisons("A <= 2")), vec![])
            .location("b", Proposition::new(comparisons("A > 2")), vec![])
            .initial("a")
            .initial("b");
        let lha = builder.build().unwrap();
        assert!(lha.check_determinism().is_empty());
    }

    #[test]
    fn determinism_c2_overlapping_guards() {
        let mut builder = LhaBuilder::new(vec!["ev".into()], vec!["n".into()]);
        builder
            .location("l0", Proposition::top(), vec![])
            .location("l1", Proposition::top(), vec![])
            .location("l2", Proposition::top(), vec![])
            .initial("l0")
            .edge(
                "l0",
                "l1",
                TriggerSpec::Events(vec!["ev".into()]),
                EdgeConstraintSpec {
                    comparisons: comparisons("n >= 0"),
                },
                vec![],
            )
            .edge(
                "l0",
                "l2",
                TriggerSpec::Events(vec!["ev".into()]),
                EdgeConstraintSpec {
                    comparisons: comparisons("n <= 5"),
                },
                vec![],
            );
        let lha = builder.build().unwrap();
        let violations = lha.check_determinism();
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].condition, Condition::EventDeterminism);
    }

    #[test]
    fn determinism_c2_disjoint_symbolic_bounds_pass() {
        let mut builder = LhaBuilder::new(vec!["ev".into()], vec!["x".into()]);
        builder
            .location("l0", Proposition::top(), vec![])
            .location("l1", Proposition::top(), vec![])
            .location("l2", Proposition::top(), vec![])
            .initial("l0")
            .edge(
                "l0",
                "l1",
                TriggerSpec::Events(vec!["ev".into()]),
                EdgeConstraintSpec {
                    comparisons: comparisons("x >= A + 5"),
                },
                vec![],
            )
            .edge(
                "l0",
                "l2",
                TriggerSpec::Events(vec!["ev".into()]),
                EdgeConstraintSpec {
                    comparisons: comparisons("x < A + 5"),
                },
                vec![],
            );
        let lha = builder.build().unwrap();
        assert!(lha.check_determinism().is_empty());
    }

    #[test]
    fn determinism_c4_autonomous_self_loop() {
        let mut builder = LhaBuilder::new(vec!["ev".into()], vec![]);
        builder
            .location("l0", Proposition::top(), vec![])
            .initial("l0")
            .edge(
                "l0",
                "l0",
                TriggerSpec::Autonomous,
                EdgeConstraintSpec::top(),
                vec![],
            );
        let lha = builder.build().unwrap();
        let violations = lha.check_determinism();
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].condition, Condition::AutonomousLoop);
    }

    #[test]
    fn counting_automaton_is_deterministic() {
        let lha = counting_automaton(
            vec!["a".into(), "b".into()],
            vec!["a".into()],
            3,
            Some(("x", "P"))
        )
        .unwrap();
        assert!(lha.check_determinism().is_empty());
    }

    #[test]
    fn lha_json_round_trip() {
        let lha = counting_automaton(vec!["a".into(), "b".into()], vec!["a".into()], 3, None).unwrap();
        let text = lha.to_json();
        let back = Lha::from_json(&text).unwrap();
        assert_eq!(back.events, lha.events);
        assert_eq!(back.variables, lha.variables);
        assert_eq!(back.edges.len(), lha.edges.len());
        assert!(back.check_determinism().is_empty());
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn array_tally_clamps_and_counts_overflow() {
        let model = toy_model(&[("A", 0)]);
        let mut builder = LhaBuilder::new(vec!["ev".into()], vec!["x".into()]);
        builder.array("levels", 4);
        builder
            .location("l0", Proposition::top(), vec![])
            .initial("l0")
            .edge(
                "l0",
                "l0",
                TriggerSpec::Events(vec!["ev".into()]),
                EdgeConstraintSpec::top(),
                vec![("levels", UpdateRhs::Tally(Expr::ident("x")))],
            );
        let lha = builder.build().unwrap();
        let bound = lha.bind(&model, &[]).unwrap();
        let mut v = Valuation::zero(&lha);
        for x in [0.0, 3.0, 3.0, 9.0, -1.0] {
            v.values[0] = x;
            bound.apply_update(0, &[0], &mut v);
        }
        assert_eq!(v.arrays[0].counts, vec![1, 0, 0, 2]);
        assert_eq!(v.arrays[0].overflow, 2);
    }
}
