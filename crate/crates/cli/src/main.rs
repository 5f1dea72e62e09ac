//! Command-line front end: load a model and an automaton (from files or the
//! built-in library), estimate target measures, run parameter sweeps, and
//! dump raw trajectories.
//!
//! Exit codes are stable for scripting: 0 success, 2 usage errors,
//! 3 file/parse/validation errors, 4 estimation failures.

mod sources;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use haslmc::gspn::StopCondition;
use haslmc::hasl::{self, CiPolicy, Estimation, IntervalWidth, RunConfig};
use haslmc::rng::SimRng;
use haslmc::sync::{trace_header, trace_line, AvgMode, ResourceBudget};

use sources::{CliError, LhaSource, ModelSource};

#[derive(Parser)]
#[command(name = "haslmc", version, about = "Statistical model checking of stochastic Petri nets against hybrid-automaton monitors", long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate measures for one model/automaton pair.
    Run(RunArgs),
    /// Re-run one estimation per value of a swept parameter.
    Sweep(SweepArgs),
    /// Simulate one trajectory and write it as CSV and replayable TSV.
    Trace(TraceArgs),
    /// Write a model and/or automaton source out as JSON files.
    Export(ExportArgs),
}

#[derive(Args)]
struct EstimateArgs {
    /// Model source: a JSON file path, or `builtin:circadian[,rate=value...]`
    /// / `builtin:gene-expression[,rate=value...]`.
    #[arg(long)]
    model: String,

    /// Automaton source: a JSON file path, or one of
    /// `builtin:per,L=1,H=1000,initT=0,N=100[,species=A]`,
    /// `builtin:peaks,N=100[,species=A,delta=...,initT=...,bound=...]`,
    /// `builtin:count,events=a+b,N=3[,track=var:place]`.
    #[arg(long)]
    lha: String,

    /// Target measure, e.g. `E[last(tbar_p)]`, `P`,
    /// `PDF(tbar_p,0.1,0,50)`. May be given several times; all measures are
    /// then estimated over one shared set of trajectories.
    #[arg(long = "expr", required = true)]
    exprs: Vec<String>,

    /// Confidence level.
    #[arg(long, default_value_t = 0.99)]
    conf: f64,

    /// Target absolute confidence-interval half-width.
    #[arg(long, conflicts_with = "relwidth")]
    halfwidth: Option<f64>,

    /// Target half-width as a fraction of the point estimate.
    #[arg(long)]
    relwidth: Option<f64>,

    /// Accepted trajectories required before stopping is considered.
    #[arg(long, default_value_t = 30)]
    min_samples: u64,

    /// Cap on generated trajectories.
    #[arg(long, default_value_t = 1_000_000)]
    max_samples: u64,

    /// Trajectories per stopping-rule check.
    #[arg(long, default_value_t = 64)]
    batch: u64,

    /// Master seed; trajectory i uses a stream derived from (seed, i).
    #[arg(long, env = "OSC_SEED", default_value_t = 42)]
    seed: u64,

    /// Worker threads (the report does not depend on this).
    #[arg(long)]
    workers: Option<usize>,

    /// Per-trajectory event budget.
    #[arg(long, default_value_t = 1_000_000_000)]
    budget_events: u64,

    /// Per-trajectory model-time budget.
    #[arg(long, default_value_t = 1_000_000.0)]
    budget_time: f64,

    /// How avg(y) weights samples.
    #[arg(long, value_enum, default_value_t = AvgArg::Time)]
    avg_mode: AvgArg,

    /// Report destination (stdout when omitted). Histogram and peak-level
    /// CSVs are written next to it.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Report format.
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum AvgArg {
    Time,
    Event,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    estimate: EstimateArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    estimate: EstimateArgs,

    /// Swept parameter and values: `name=v1,v2,...`. The name must be a
    /// parameter of the chosen builtin model or automaton.
    #[arg(long)]
    sweep: String,
}

#[derive(Args)]
struct TraceArgs {
    /// Model source (as for `run`).
    #[arg(long)]
    model: String,

    /// Model-time horizon of the trajectory.
    #[arg(long)]
    horizon: f64,

    #[arg(long, env = "OSC_SEED", default_value_t = 42)]
    seed: u64,

    /// Per-species CSV time series destination.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Replayable TSV trace destination.
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    /// Model source to materialize.
    #[arg(long)]
    model: String,

    /// Automaton source to materialize (optional).
    #[arg(long)]
    lha: Option<String>,

    /// Output path for the model JSON.
    #[arg(long)]
    model_out: Option<PathBuf>,

    /// Output path for the automaton JSON.
    #[arg(long)]
    lha_out: Option<PathBuf>,

    /// Seed for pilot-based automaton defaults.
    #[arg(long, env = "OSC_SEED", default_value_t = 42)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Trace(args) => cmd_trace(args),
        Command::Export(args) => cmd_export(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn build_config(args: &EstimateArgs) -> RunConfig {
    let target_width = match (args.halfwidth, args.relwidth) {
        (Some(w), _) => IntervalWidth::Absolute(w),
        (None, Some(r)) => IntervalWidth::Relative(r),
        (None, None) => IntervalWidth::Absolute(0.01),
    };
    RunConfig {
        policy: CiPolicy {
            confidence_level: args.conf,
            target_width,
            min_samples: args.min_samples,
            max_samples: args.max_samples,
            batch: args.batch,
        },
        budget: ResourceBudget {
            max_events: args.budget_events,
            max_model_time: args.budget_time,
        },
        avg_mode: match args.avg_mode {
            AvgArg::Time => AvgMode::Time,
            AvgArg::Event => AvgMode::Event,
        },
        seed: args.seed,
        workers: args.workers.unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        }),
    }
}

fn estimate_once(args: &EstimateArgs, seed: u64) -> Result<Estimation, CliError> {
    let model_source = ModelSource::parse(&args.model)?;
    let model = model_source.load()?;
    let lha_source = LhaSource::parse(&args.lha)?;
    let lha = lha_source.build(&model, seed)?;
    let exprs = args
        .exprs
        .iter()
        .map(|text| {
            hasl::parse_expression(text)
                .map_err(|e| CliError::Input(format!("expression `{text}`: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut config = build_config(args);
    config.seed = seed;
    hasl::estimate_many(&model, &lha, &exprs, &config).map_err(CliError::from_estimation)
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let estimation = estimate_once(&args.estimate, args.estimate.seed)?;
    write_estimation(&args.estimate, &estimation)
}

fn write_estimation(args: &EstimateArgs, estimation: &Estimation) -> Result<(), CliError> {
    let body = match args.format {
        FormatArg::Json => {
            serde_json::to_string_pretty(estimation).expect("report serialization") + "\n"
        }
        FormatArg::Csv => {
            let mut out =
                String::from("expression,estimate,ci_low,ci_high,samples,accepted,rejected\n");
            for r in &estimation.reports {
                out.push_str(&format!(
                    "\"{}\",{},{},{},{},{},{}\n",
                    r.expression,
                    r.point_estimate,
                    r.ci_low,
                    r.ci_high,
                    r.samples_used,
                    r.accepted_count,
                    r.rejected_count
                ));
            }
            out
        }
    };
    match &args.out {
        None => print!("{body}"),
        Some(path) => {
            write_file(path, &body)?;
            for (k, report) in estimation.reports.iter().enumerate() {
                if let Some(h) = &report.histogram {
                    let name = if estimation.reports.len() == 1 {
                        sibling(path, "hist.csv")
                    } else {
                        sibling(path, &format!("hist{k}.csv"))
                    };
                    write_file(&name, &h.to_csv())?;
                }
            }
            if let Some(csv) = estimation.peak_levels_csv() {
                write_file(&sibling(path, "peaks.csv"), &csv)?;
            }
        }
    }
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "report".into());
    path.with_file_name(format!("{stem}_{suffix}"))
}

fn write_file(path: &Path, body: &str) -> Result<(), CliError> {
    std::fs::write(path, body)
        .map_err(|e| CliError::Input(format!("writing {}: {e}", path.display())))
}

fn cmd_sweep(args: SweepArgs) -> Result<(), CliError> {
    let (param, values) = parse_sweep(&args.sweep)?;
    // The parameter must belong to the chosen model or automaton.
    let model_side = ModelSource::parse(&args.estimate.model)?.accepts_param(&param);
    let lha_side = LhaSource::parse(&args.estimate.lha)?.accepts_param(&param);
    if !model_side && !lha_side {
        return Err(CliError::Usage(format!(
            "swept parameter `{param}` is neither a model nor an automaton parameter"
        )));
    }

    let mut rows = String::new();
    let single = args.estimate.exprs.len() == 1;
    rows.push_str(if single {
        "param,estimate,ci_low,ci_high\n"
    } else {
        "param,expression,estimate,ci_low,ci_high\n"
    });
    for (i, value) in values.iter().enumerate() {
        let mut point = args.estimate.clone_with_override(&param, *value, model_side);
        // constant per-point seed offsetting keeps points independent
        let seed = args.estimate.seed.wrapping_add(1_000_003 * i as u64);
        point.seed = seed;
        let estimation = estimate_once(&point, seed)?;
        for r in &estimation.reports {
            if single {
                rows.push_str(&format!(
                    "{},{},{},{}\n",
                    value, r.point_estimate, r.ci_low, r.ci_high
                ));
            } else {
                rows.push_str(&format!(
                    "{},\"{}\",{},{},{}\n",
                    value, r.expression, r.point_estimate, r.ci_low, r.ci_high
                ));
            }
        }
    }
    match &args.estimate.out {
        None => print!("{rows}"),
        Some(path) => write_file(path, &rows)?,
    }
    Ok(())
}

fn parse_sweep(text: &str) -> Result<(String, Vec<f64>), CliError> {
    let Some((name, list)) = text.split_once('=') else {
        return Err(CliError::Usage(format!(
            "--sweep expects `name=v1,v2,...`, got `{text}`"
        )));
    };
    let values = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("bad sweep value `{s}`")))
        })
        .collect::<Result<Vec<f64>, _>>()?;
    if values.is_empty() {
        return Err(CliError::Usage("empty sweep value list".into()));
    }
    Ok((name.trim().to_string(), values))
}

impl EstimateArgs {
    /// Copy of the args with `param=value` appended to the model or the
    /// automaton source.
    fn clone_with_override(&self, param: &str, value: f64, model_side: bool) -> EstimateArgs {
        let mut out = EstimateArgs {
            model: self.model.clone(),
            lha: self.lha.clone(),
            exprs: self.exprs.clone(),
            conf: self.conf,
            halfwidth: self.halfwidth,
            relwidth: self.relwidth,
            min_samples: self.min_samples,
            max_samples: self.max_samples,
            batch: self.batch,
            seed: self.seed,
            workers: self.workers,
            budget_events: self.budget_events,
            budget_time: self.budget_time,
            avg_mode: self.avg_mode,
            out: self.out.clone(),
            format: self.format,
        };
        if model_side {
            out.model = format!("{},{}={}", self.model, param, value);
        } else {
            out.lha = format!("{},{}={}", self.lha, param, value);
        }
        out
    }
}

fn cmd_export(args: ExportArgs) -> Result<(), CliError> {
    let model = ModelSource::parse(&args.model)?.load()?;
    if let Some(path) = &args.model_out {
        write_file(path, &model.to_json())?;
    }
    if let Some(lha_spec) = &args.lha {
        let lha = LhaSource::parse(lha_spec)?.build(&model, args.seed)?;
        if let Some(path) = &args.lha_out {
            write_file(path, &lha.to_json())?;
        }
    }
    Ok(())
}

fn cmd_trace(args: TraceArgs) -> Result<(), CliError> {
    if args.horizon < 0.0 {
        return Err(CliError::Usage("horizon must be nonnegative".into()));
    }
    let model = ModelSource::parse(&args.model)?.load()?;

    let mut csv = String::from("time,");
    csv.push_str(&model.places.join(","));
    csv.push('\n');
    let marking_row = |time: f64, marking: &[u64]| {
        let mut row = time.to_string();
        for c in marking {
            row.push(',');
            row.push_str(&c.to_string());
        }
        row.push('\n');
        row
    };
    if args.horizon > 0.0 {
        csv.push_str(&marking_row(0.0, &model.initial_marking));
    }

    let mut tsv = trace_header(&model);
    let mut deadlocked = false;
    let mut iter = model.simulate(SimRng::seed_from(args.seed), StopCondition::default());
    while args.horizon > 0.0 {
        match iter.next() {
            Some(Ok(event)) => {
                if event.time > args.horizon {
                    break; // horizon reached
                }
                csv.push_str(&marking_row(event.time, &event.marking_after));
                tsv.push_str(&trace_line(&event));
            }
            Some(Err(e)) => return Err(CliError::Input(e.to_string())),
            None => {
                deadlocked = true; // schedule ran empty before the horizon
                break;
            }
        }
    }
    if deadlocked {
        tsv.push_str("# deadlock\n");
        csv.push_str("# deadlock\n");
    }

    match &args.out {
        None => print!("{csv}"),
        Some(path) => write_file(path, &csv)?,
    }
    if let Some(path) = &args.trace_out {
        write_file(path, &tsv)?;
    }
    Ok(())
}
