//! Estimator behaviour against analytic oracles: an always-enabled
//! exponential transition observed by an n-counting automaton yields
//! gamma-distributed acceptance times with known mean.

mod common;

use haslmc::expr::{parse_expr, Expr};
use haslmc::gspn::{DelayLaw, GspnModel, TransitionSpec};
use haslmc::hasl::{
    bin_index, estimate, estimate_many, parse_expression, BinIndex, CiPolicy, EstimationError,
    HaslExpression, IntervalWidth, PathOp, RunConfig,
};
use haslmc::lha::counting_automaton;
use haslmc::sync::ResourceBudget;

fn clock_model(rate: f64) -> GspnModel {
    GspnModel::new(
        vec!["P".into()],
        vec![0],
        vec![TransitionSpec {
            name: "fire".into(),
            inputs: vec![],
            outputs: vec![],
            law: DelayLaw::Exponential,
            rate: Expr::constant(rate),
        }],
        vec![],
    )
    .unwrap()
}

fn config(policy: CiPolicy, seed: u64, workers: usize) -> RunConfig {
    RunConfig {
        policy,
        budget: ResourceBudget::default(),
        avg_mode: Default::default(),
        seed,
        workers,
    }
}

#[test]
fn parses_the_usual_expressions() {
    let e = parse_expression("E[last(t)]").unwrap();
    assert_eq!(
        e,
        HaslExpression::Expectation(haslmc::hasl::PathFormula {
            op: PathOp::Last,
            expr: Expr::ident("t"),
        })
    );

    let e = parse_expression("PDF(last(t),0.1,0,10)").unwrap();
    match e {
        HaslExpression::Pdf {
            formula,
            bin_width,
            support_low,
            support_high,
        } => {
            assert_eq!(formula.op, PathOp::Last);
            assert_eq!((bin_width, support_low, support_high), (0.1, 0.0, 10.0));
        }
        other => panic!("unexpected {other:?}"),
    }

    // arithmetic around last() folds into one acceptance-time expression
    let e = parse_expression("E[last(Smax)/n_M]").unwrap();
    match e {
        HaslExpression::Expectation(f) => {
            assert_eq!(f.op, PathOp::Last);
            assert_eq!(f.expr, parse_expr("Smax / n_M").unwrap());
        }
        other => panic!("unexpected {other:?}"),
    }

    // bare variable under a distribution means last(variable)
    let e = parse_expression("PDF(tbar_p,0.1,0,50)").unwrap();
    match e {
        HaslExpression::Pdf { formula, .. } => {
            assert_eq!(formula.op, PathOp::Last);
            assert_eq!(formula.expr, Expr::ident("tbar_p"));
        }
        other => panic!("unexpected {other:?}"),
    }

    assert_eq!(parse_expression("P").unwrap(), HaslExpression::Probability);
    assert!(parse_expression("E[max(a)]").is_ok());
    assert!(parse_expression("AVG(max(a))").is_ok());
}

#[test]
fn parse_errors_carry_positions() {
    for bad in ["E[last(t)", "PDF(last(t),0,0,10)", "Q[last(t)]", "E[boom(t)]"] {
        let err = parse_expression(bad).unwrap_err();
        assert!(
            matches!(err, haslmc::expr::ExprError::Syntax { .. }),
            "{bad}: {err}"
        );
    }
}

#[test]
fn bin_index_conventions() {
    assert_eq!(bin_index(3.14, 0.1, 0.0, 10.0), BinIndex::Bin(31));
    assert_eq!(bin_index(0.0, 0.1, 0.0, 10.0), BinIndex::Bin(0));
    // the support's upper edge falls into the last (closed) bin
    assert_eq!(bin_index(10.0, 0.1, 0.0, 10.0), BinIndex::Bin(99));
    assert_eq!(bin_index(-0.01, 0.1, 0.0, 10.0), BinIndex::BelowSupport);
    assert_eq!(bin_index(10.01, 0.1, 0.0, 10.0), BinIndex::AboveSupport);
}

#[test]
fn erlang_mean_is_recovered() {
    // three exponential(2) firings: acceptance time has mean 3/2
    let model = clock_model(2.0);
    let lha = counting_automaton(vec!["fire".into()], vec!["fire".into()], 3, None).unwrap();
    let expr = parse_expression("E[last(t)]").unwrap();
    let policy = CiPolicy {
        confidence_level: 0.99,
        target_width: IntervalWidth::Absolute(0.02),
        min_samples: 30,
        max_samples: 200_000,
        batch: 64,
    };
    let report = estimate(&model, &lha, &expr, &config(policy, 11, 2)).unwrap();
    assert!(report.ci_high - report.point_estimate <= 0.02 + 1e-12);
    assert!(
        (report.point_estimate - 1.5).abs() < 0.05,
        "estimate {}",
        report.point_estimate
    );
    assert_eq!(report.rejected_count, 0);
}

#[test]
fn probability_of_certain_acceptance_is_exactly_one() {
    let model = clock_model(1.0);
    let lha = counting_automaton(vec!["fire".into()], vec!["fire".into()], 1, None).unwrap();
    let report = estimate(
        &model,
        &lha,
        &HaslExpression::Probability,
        &config(CiPolicy::default(), 3, 1),
    )
    .unwrap();
    assert_eq!(report.point_estimate, 1.0);
    assert_eq!(report.rejected_count, 0);
}

#[test]
fn never_accepting_automaton_is_an_estimation_failure() {
    let model = clock_model(1.0);
    let lha = counting_automaton(vec!["fire".into()], vec!["fire".into()], 1_000, None).unwrap();
    let policy = CiPolicy {
        max_samples: 10,
        ..CiPolicy::default()
    };
    let mut cfg = config(policy, 3, 1);
    cfg.budget = ResourceBudget {
        max_events: 50,
        max_model_time: f64::INFINITY,
    };
    let expr = parse_expression("E[last(t)]").unwrap();
    let err = estimate(&model, &lha, &expr, &cfg).unwrap_err();
    assert!(matches!(err, EstimationError::NoAccepted { .. }), "{err}");
}

#[test]
fn histogram_mass_plus_overflow_is_accepted_count() {
    let model = clock_model(2.0);
    let lha = counting_automaton(vec!["fire".into()], vec!["fire".into()], 2, None).unwrap();
    // narrow support so overflow genuinely occurs
    let expr = parse_expression("PDF(last(t),0.05,0,1.5)").unwrap();
    let policy = CiPolicy {
        target_width: IntervalWidth::Absolute(0.05),
        max_samples: 20_000,
        ..CiPolicy::default()
    };
    let report = estimate(&model, &lha, &expr, &config(policy, 8, 2)).unwrap();
    let h = report.histogram.expect("histogram present");
    assert_eq!(
        h.total_recorded(),
        report.accepted_count - report.discarded_count
    );
    assert!(h.above_support > 0, "support was chosen to overflow");
    // frequencies use the total-generated denominator
    let mass: f64 = h.frequencies.iter().sum();
    let expected = h.counts.iter().sum::<u64>() as f64 / report.accepted_count as f64;
    assert!((mass - expected).abs() < 1e-9);
}

#[test]
fn cdf_frequencies_are_cumulative() {
    let model = clock_model(2.0);
    let lha = counting_automaton(vec!["fire".into()], vec!["fire".into()], 2, None).unwrap();
    let expr = parse_expression("CDF(last(t),0.25,0,6)").unwrap();
    let policy = CiPolicy {
        target_width: IntervalWidth::Absolute(0.05),
        max_samples: 10_000,
        ..CiPolicy::default()
    };
    let report = estimate(&model, &lha, &expr, &config(policy, 8, 1)).unwrap();
    let h = report.histogram.unwrap();
    for pair in h.frequencies.windows(2) {
        assert!(pair[1] >= pair[0]);
    }
    assert!(h.frequencies.last().unwrap() <= &1.0);
}

#[test]
fn reports_do_not_depend_on_worker_count() {
    let model = clock_model(0.5);
    let lha = counting_automaton(vec!["fire".into()], vec!["fire".into()], 4, None).unwrap();
    let exprs = vec![
        parse_expression("E[last(t)]").unwrap(),
        parse_expression("PDF(last(t),0.5,0,20)").unwrap(),
        HaslExpression::Probability,
    ];
    let policy = CiPolicy {
        target_width: IntervalWidth::Relative(0.02),
        max_samples: 50_000,
        ..CiPolicy::default()
    };
    let a = estimate_many(&model, &lha, &exprs, &config(policy, 77, 1)).unwrap();
    let b = estimate_many(&model, &lha, &exprs, &config(policy, 77, 2)).unwrap();
    assert_eq!(a.total_generated, b.total_generated);
    for (ra, rb) in a.reports.iter().zip(&b.reports) {
        assert_eq!(ra.point_estimate, rb.point_estimate);
        assert_eq!(ra.ci_low, rb.ci_low);
        assert_eq!(ra.ci_high, rb.ci_high);
        assert_eq!(ra.samples_used, rb.samples_used);
        assert_eq!(ra.histogram, rb.histogram);
    }
}

#[test]
fn interval_covers_analytic_mean_across_erlang_family() {
    // 99% intervals over gamma(n, rate) acceptance times must cover the
    // analytic mean in at least 95 of 100 independent meta-runs
    for (n, rate) in [(1u64, 0.5f64), (2, 0.5), (5, 0.5), (1, 2.0), (2, 2.0), (5, 2.0)] {
        let model = clock_model(rate);
        let lha = counting_automaton(vec!["fire".into()], vec!["fire".into()], n, None).unwrap();
        let expr = parse_expression("E[last(t)]").unwrap();
        let truth = n as f64 / rate;
        let policy = CiPolicy {
            confidence_level: 0.99,
            target_width: IntervalWidth::Relative(0.05),
            min_samples: 30,
            max_samples: 100_000,
            batch: 64,
        };
        let mut covered = 0;
        for meta in 0..100u64 {
            let report = estimate(
                &model,
                &lha,
                &expr,
                &config(policy, 1_000 + meta * 7, 2),
            )
            .unwrap();
            if report.ci_low <= truth && truth <= report.ci_high {
                covered += 1;
            }
        }
        assert!(
            covered >= 95,
            "n={n} rate={rate}: only {covered}/100 intervals covered {truth}"
        );
    }
}

#[test]
fn min_avg_max_are_ordered_on_accepted_runs() {
    let model = clock_model(1.0);
    let lha = counting_automaton(vec!["fire".into()], vec!["fire".into()], 5, None).unwrap();
    let exprs = vec![
        parse_expression("E[min(t)]").unwrap(),
        parse_expression("E[avg(t)]").unwrap(),
        parse_expression("E[max(t)]").unwrap(),
    ];
    let policy = CiPolicy {
        target_width: IntervalWidth::Relative(0.05),
        max_samples: 20_000,
        ..CiPolicy::default()
    };
    let estimation = estimate_many(&model, &lha, &exprs, &config(policy, 5, 2)).unwrap();
    let min = estimation.reports[0].point_estimate;
    let avg = estimation.reports[1].point_estimate;
    let max = estimation.reports[2].point_estimate;
    assert!(min <= avg && avg <= max, "{min} {avg} {max}");
    // a clock from zero: min is 0, max is the acceptance time, whose
    // time-average is half of it
    assert_eq!(min, 0.0);
    assert!((avg - max / 2.0).abs() < 1e-9 * max);
}
