//! Built-in benchmark models.
//!
//! [`circadian`] is a two-gene activator/repressor network whose activator
//! and repressor populations oscillate with a roughly daily period under the
//! default rates. [`gene_expression`] is a five-transition toy net covering
//! activator binding, transcription, translation and mRNA degradation; it is
//! mostly useful for exercising the synchronization machinery.
//!
//! All transitions are exponential with mass-action rates; a unit volume is
//! assumed, so continuous rate constants serve directly as stochastic rates
//! and bimolecular propensities are plain products of counts.

use crate::expr::Expr;
use crate::gspn::{DelayLaw, GspnModel, TransitionSpec};

/// Rate constants of the circadian oscillator (units 1/h, or 1/(mol⋅h) for
/// the bimolecular ones).
#[derive(Debug, Clone, Copy)]
pub struct CircadianRates {
    /// Transcription of the activator gene, free / activator-bound.
    pub alpha_a: f64,
    pub alpha_a_bound: f64,
    /// Transcription of the repressor gene, free / activator-bound.
    pub alpha_r: f64,
    pub alpha_r_bound: f64,
    /// Translation of the two mRNAs.
    pub beta_a: f64,
    pub beta_r: f64,
    /// mRNA degradation.
    pub delta_ma: f64,
    pub delta_mr: f64,
    /// Protein degradation.
    pub delta_a: f64,
    pub delta_r: f64,
    /// Activator binding to the two gene promoters.
    pub gamma_a: f64,
    pub gamma_r: f64,
    /// Activator-repressor complex formation.
    pub gamma_c: f64,
    /// Activator unbinding from the two promoters.
    pub theta_a: f64,
    pub theta_r: f64,
}

impl Default for CircadianRates {
    fn default() -> Self {
        CircadianRates {
            alpha_a: 50.0,
            alpha_a_bound: 500.0,
            alpha_r: 0.01,
            alpha_r_bound: 50.0,
            beta_a: 50.0,
            beta_r: 5.0,
            delta_ma: 10.0,
            delta_mr: 0.5,
            delta_a: 1.0,
            delta_r: 0.2,
            gamma_a: 1.0,
            gamma_r: 1.0,
            gamma_c: 2.0,
            theta_a: 50.0,
            theta_r: 100.0,
        }
    }
}

impl CircadianRates {
    /// Set one rate by its field name (case-insensitive). Used by the CLI
    /// for parameter overrides and sweeps.
    pub fn set(&mut self, name: &str, value: f64) -> Result<(), String> {
        match name.to_ascii_lowercase().as_str() {
            "alpha_a" => self.alpha_a = value,
            "alpha_a_bound" => self.alpha_a_bound = value,
            "alpha_r" => self.alpha_r = value,
            "alpha_r_bound" => self.alpha_r_bound = value,
            "beta_a" => self.beta_a = value,
            "beta_r" => self.beta_r = value,
            "delta_ma" => self.delta_ma = value,
            "delta_mr" => self.delta_mr = value,
            "delta_a" => self.delta_a = value,
            "delta_r" => self.delta_r = value,
            "gamma_a" => self.gamma_a = value,
            "gamma_r" => self.gamma_r = value,
            "gamma_c" => self.gamma_c = value,
            "theta_a" => self.theta_a = value,
            "theta_r" => self.theta_r = value,
            other => return Err(format!("unknown circadian rate `{other}`")),
        }
        Ok(())
    }
}

fn mass_action(rate: f64, reactants: &[&str]) -> Expr {
    let mut expr = Expr::constant(rate);
    for r in reactants {
        expr = Expr::mul(expr, Expr::ident(*r));
    }
    expr
}

/// Two-gene activator/repressor oscillator.
///
/// Places: `DA`/`DAp` (activator gene, free/bound), `DR`/`DRp` (repressor
/// gene), `MA`/`MR` (mRNAs), `A` (activator), `R` (repressor), `C`
/// (activator-repressor complex). One copy of each gene, everything else
/// starts empty; each gene is conserved between its free and bound form.
pub fn circadian(rates: &CircadianRates) -> GspnModel {
    let places = ["DA", "DAp", "DR", "DRp", "MA", "MR", "A", "R", "C"]
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>();
    let arc = |place: &str, mult: u64| (place.to_string(), mult);
    let t = |name: &str, inputs: Vec<(String, u64)>, outputs: Vec<(String, u64)>, rate: Expr| {
        TransitionSpec {
            name: name.to_string(),
            inputs,
            outputs,
            law: DelayLaw::Exponential,
            rate,
        }
    };
    let transitions = vec![
        // activator binding/unbinding at both promoters
        t(
            "R1",
            vec![arc("A", 1), arc("DA", 1)],
            vec![arc("DAp", 1)],
            mass_action(rates.gamma_a, &["A", "DA"]),
        ),
        t(
            "R2",
            vec![arc("DAp", 1)],
            vec![arc("A", 1), arc("DA", 1)],
            mass_action(rates.theta_a, &["DAp"]),
        ),
        t(
            "R3",
            vec![arc("A", 1), arc("DR", 1)],
            vec![arc("DRp", 1)],
            mass_action(rates.gamma_r, &["A", "DR"]),
        ),
        t(
            "R4",
            vec![arc("DRp", 1)],
            vec![arc("DR", 1), arc("A", 1)],
            mass_action(rates.theta_r, &["DRp"]),
        ),
        // transcription (bound gene first, as the faster channel)
        t(
            "R5",
            vec![arc("DAp", 1)],
            vec![arc("MA", 1), arc("DAp", 1)],
            mass_action(rates.alpha_a_bound, &["DAp"]),
        ),
        t(
            "R6",
            vec![arc("DA", 1)],
            vec![arc("MA", 1), arc("DA", 1)],
            mass_action(rates.alpha_a, &["DA"]),
        ),
        t(
            "R7",
            vec![arc("DRp", 1)],
            vec![arc("MR", 1), arc("DRp", 1)],
            mass_action(rates.alpha_r_bound, &["DRp"]),
        ),
        t(
            "R8",
            vec![arc("DR", 1)],
            vec![arc("MR", 1), arc("DR", 1)],
            mass_action(rates.alpha_r, &["DR"]),
        ),
        // translation
        t(
            "R9",
            vec![arc("MA", 1)],
            vec![arc("MA", 1), arc("A", 1)],
            mass_action(rates.beta_a, &["MA"]),
        ),
        t(
            "R10",
            vec![arc("MR", 1)],
            vec![arc("MR", 1), arc("R", 1)],
            mass_action(rates.beta_r, &["MR"]),
        ),
        // complex formation and decay
        t(
            "R11",
            vec![arc("A", 1), arc("R", 1)],
            vec![arc("C", 1)],
            mass_action(rates.gamma_c, &["A", "R"]),
        ),
        t(
            "R12",
            vec![arc("C", 1)],
            vec![arc("R", 1)],
            mass_action(rates.delta_a, &["C"]),
        ),
        // degradation
        t(
            "R13",
            vec![arc("A", 1)],
            vec![],
            mass_action(rates.delta_a, &["A"]),
        ),
        t(
            "R14",
            vec![arc("R", 1)],
            vec![],
            mass_action(rates.delta_r, &["R"]),
        ),
        t(
            "R15",
            vec![arc("MA", 1)],
            vec![],
            mass_action(rates.delta_ma, &["MA"]),
        ),
        t(
            "R16",
            vec![arc("MR", 1)],
            vec![],
            mass_action(rates.delta_mr, &["MR"]),
        ),
    ];
    let mut initial = vec![0u64; places.len()];
    initial[0] = 1; // DA
    initial[2] = 1; // DR
    GspnModel::new(
        places,
        initial,
        transitions,
        vec!["DA + DAp = 1".into(), "DR + DRp = 1".into()],
    )
    .expect("circadian model is well-formed")
}

/// Rate constants of the gene-expression toy net. Every default is 1; the
/// net is structural scaffolding for tests rather than a calibrated model.
#[derive(Debug, Clone, Copy)]
pub struct GeneExpressionRates {
    pub bind: f64,
    pub unbind: f64,
    /// Transcription from the free and the activator-bound gene state.
    pub transc_free: f64,
    pub transc_bound: f64,
    pub translate: f64,
    pub degrade: f64,
}

impl Default for GeneExpressionRates {
    fn default() -> Self {
        GeneExpressionRates {
            bind: 1.0,
            unbind: 1.0,
            transc_free: 1.0,
            transc_bound: 1.0,
            translate: 1.0,
            degrade: 1.0,
        }
    }
}

/// Basic gene-expression steps: activator binding/unbinding, transcription,
/// mRNA degradation and translation.
///
/// Places in order: `protA`, `geneA`, `A_geneA`, `mrnA`, starting at
/// `(2, 1, 0, 0)`. Transcription is modelled as a single `transc` event
/// active in both gene states: its rate is `transc_free * geneA +
/// transc_bound * A_geneA`, positive in every reachable marking because the
/// gene is conserved between `geneA` and `A_geneA`.
pub fn gene_expression(rates: &GeneExpressionRates) -> GspnModel {
    let arc = |place: &str, mult: u64| (place.to_string(), mult);
    let transitions = vec![
        TransitionSpec {
            name: "bind".into(),
            inputs: vec![arc("protA", 1), arc("geneA", 1)],
            outputs: vec![arc("A_geneA", 1)],
            law: DelayLaw::Exponential,
            rate: mass_action(rates.bind, &["protA", "geneA"]),
        },
        TransitionSpec {
            name: "unbind".into(),
            inputs: vec![arc("A_geneA", 1)],
            outputs: vec![arc("protA", 1), arc("geneA", 1)],
            law: DelayLaw::Exponential,
            rate: mass_action(rates.unbind, &["A_geneA"]),
        },
        TransitionSpec {
            name: "transc".into(),
            inputs: vec![],
            outputs: vec![arc("mrnA", 1)],
            law: DelayLaw::Exponential,
            rate: Expr::add(
                mass_action(rates.transc_free, &["geneA"]),
                mass_action(rates.transc_bound, &["A_geneA"]),
            ),
        },
        TransitionSpec {
            name: "degrade".into(),
            inputs: vec![arc("mrnA", 1)],
            outputs: vec![],
            law: DelayLaw::Exponential,
            rate: mass_action(rates.degrade, &["mrnA"]),
        },
        TransitionSpec {
            name: "transl".into(),
            inputs: vec![arc("mrnA", 1)],
            outputs: vec![arc("mrnA", 1), arc("protA", 1)],
            law: DelayLaw::Exponential,
            rate: mass_action(rates.translate, &["mrnA"]),
        },
    ];
    GspnModel::new(
        ["protA", "geneA", "A_geneA", "mrnA"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        vec![2, 1, 0, 0],
        transitions,
        vec!["geneA + A_geneA = 1".into()],
    )
    .expect("gene expression model is well-formed")
}
