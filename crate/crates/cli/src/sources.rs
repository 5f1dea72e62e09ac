//! Parsing of `--model` and `--lha` sources: JSON file paths or `builtin:`
//! descriptors with `key=value` parameters.

use haslmc::gspn::GspnModel;
use haslmc::lha::{counting_automaton, Lha};
use haslmc::models::{circadian, gene_expression, CircadianRates, GeneExpressionRates};
use haslmc::oscillation::{
    build_apeaks, build_aper, classify_events, default_delta, default_level_bound,
    pilot_species_max, PeaksParams, PeriodParams,
};

/// CLI failure with its exit code class.
#[derive(Debug)]
pub enum CliError {
    /// Bad invocation (exit 2).
    Usage(String),
    /// File, parse or validation problem (exit 3).
    Input(String),
    /// The estimation itself failed (exit 4).
    Estimation(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Input(_) => 3,
            CliError::Estimation(_) => 4,
        }
    }

    pub fn from_estimation(e: haslmc::hasl::EstimationError) -> CliError {
        use haslmc::hasl::EstimationError as E;
        match e {
            E::NoAccepted { .. } => CliError::Estimation(e.to_string()),
            E::Sync(inner) => CliError::Estimation(inner.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Input(m) | CliError::Estimation(m) => write!(f, "{m}"),
        }
    }
}

fn split_builtin(spec: &str) -> Option<(String, Vec<(String, String)>)> {
    let rest = spec.strip_prefix("builtin:")?;
    let mut parts = rest.split(',');
    let name = parts.next().unwrap_or("").trim().to_string();
    let params = parts
        .filter(|p| !p.trim().is_empty())
        .map(|p| match p.split_once('=') {
            Some((k, v)) => (k.trim().to_string(), v.trim().to_string()),
            None => (p.trim().to_string(), String::new()),
        })
        .collect();
    Some((name, params))
}

fn parse_f64(key: &str, value: &str) -> Result<f64, CliError> {
    value
        .parse::<f64>()
        .map_err(|_| CliError::Usage(format!("parameter `{key}`: bad number `{value}`")))
}

fn parse_u64(key: &str, value: &str) -> Result<u64, CliError> {
    let v = parse_f64(key, value)?;
    if v < 0.0 || v.fract() != 0.0 {
        return Err(CliError::Usage(format!(
            "parameter `{key}` must be a nonnegative integer, got `{value}`"
        )));
    }
    Ok(v as u64)
}

/// A `--model` argument.
pub enum ModelSource {
    Circadian(Vec<(String, String)>),
    GeneExpression(Vec<(String, String)>),
    File(String),
}

impl ModelSource {
    pub fn parse(spec: &str) -> Result<ModelSource, CliError> {
        match split_builtin(spec) {
            Some((name, params)) => match name.as_str() {
                "circadian" => Ok(ModelSource::Circadian(params)),
                "gene-expression" | "gene_expression" | "gene" => {
                    Ok(ModelSource::GeneExpression(params))
                }
                other => Err(CliError::Usage(format!(
                    "unknown builtin model `{other}` (have: circadian, gene-expression)"
                ))),
            },
            None => Ok(ModelSource::File(spec.to_string())),
        }
    }

    /// Is `param` a legal override for this source (used to route sweeps)?
    pub fn accepts_param(&self, param: &str) -> bool {
        match self {
            ModelSource::Circadian(_) => CircadianRates::default().set(param, 1.0).is_ok(),
            ModelSource::GeneExpression(_) => set_gene_rate(
                &mut GeneExpressionRates::default(),
                param,
                1.0,
            )
            .is_ok(),
            ModelSource::File(_) => false,
        }
    }

    pub fn load(&self) -> Result<GspnModel, CliError> {
        match self {
            ModelSource::Circadian(params) => {
                let mut rates = CircadianRates::default();
                for (k, v) in params {
                    let value = parse_f64(k, v)?;
                    rates
                        .set(k, value)
                        .map_err(CliError::Usage)?;
                }
                Ok(circadian(&rates))
            }
            ModelSource::GeneExpression(params) => {
                let mut rates = GeneExpressionRates::default();
                for (k, v) in params {
                    let value = parse_f64(k, v)?;
                    set_gene_rate(&mut rates, k, value).map_err(CliError::Usage)?;
                }
                Ok(gene_expression(&rates))
            }
            ModelSource::File(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Input(format!("reading {path}: {e}")))?;
                GspnModel::from_json(&text)
                    .map_err(|e| CliError::Input(format!("model {path}: {e}")))
            }
        }
    }
}

fn set_gene_rate(rates: &mut GeneExpressionRates, name: &str, value: f64) -> Result<(), String> {
    match name.to_ascii_lowercase().as_str() {
        "bind" => rates.bind = value,
        "unbind" => rates.unbind = value,
        "transc_free" => rates.transc_free = value,
        "transc_bound" => rates.transc_bound = value,
        "translate" => rates.translate = value,
        "degrade" => rates.degrade = value,
        other => return Err(format!("unknown gene-expression rate `{other}`")),
    }
    Ok(())
}

/// A `--lha` argument.
pub enum LhaSource {
    Period(Vec<(String, String)>),
    Peaks(Vec<(String, String)>),
    Count(Vec<(String, String)>),
    File(String),
}

impl LhaSource {
    pub fn parse(spec: &str) -> Result<LhaSource, CliError> {
        match split_builtin(spec) {
            Some((name, params)) => match name.as_str() {
                "per" | "period" => Ok(LhaSource::Period(params)),
                "peaks" => Ok(LhaSource::Peaks(params)),
                "count" => Ok(LhaSource::Count(params)),
                other => Err(CliError::Usage(format!(
                    "unknown builtin automaton `{other}` (have: per, peaks, count)"
                ))),
            },
            None => Ok(LhaSource::File(spec.to_string())),
        }
    }

    pub fn accepts_param(&self, param: &str) -> bool {
        let known: &[&str] = match self {
            LhaSource::Period(_) => &["l", "h", "low", "high", "initt", "init_t", "n"],
            LhaSource::Peaks(_) => &[
                "delta",
                "n",
                "initt",
                "init_t",
                "bound",
                "pilot_horizon",
                "pilot_traces",
            ],
            LhaSource::Count(_) => &["n"],
            LhaSource::File(_) => &[],
        };
        known.contains(&param.to_ascii_lowercase().as_str())
    }

    /// Build the automaton; pilot-based defaults derive from the model.
    pub fn build(&self, model: &GspnModel, seed: u64) -> Result<Lha, CliError> {
        match self {
            LhaSource::Period(params) => {
                let mut p = PeriodParams {
                    species: "A".into(),
                    low: 1,
                    high: 1000,
                    init_t: 0.0,
                    n_periods: 100,
                };
                for (k, v) in params {
                    match k.to_ascii_lowercase().as_str() {
                        "species" => p.species = v.clone(),
                        "l" | "low" => p.low = parse_u64(k, v)?,
                        "h" | "high" => p.high = parse_u64(k, v)?,
                        "initt" | "init_t" => p.init_t = parse_f64(k, v)?,
                        "n" => p.n_periods = parse_u64(k, v)?,
                        other => {
                            return Err(CliError::Usage(format!(
                                "unknown period-automaton parameter `{other}`"
                            )))
                        }
                    }
                }
                ensure_place(model, &p.species)?;
                build_aper(&p, model.transition_names())
                    .map_err(|e| CliError::Input(e.to_string()))
            }
            LhaSource::Peaks(params) => {
                let mut species = "A".to_string();
                let mut delta: Option<u64> = None;
                let mut init_t = 0.0;
                let mut n_peaks = 100u64;
                let mut bound: Option<usize> = None;
                let mut pilot_horizon = 150.0;
                let mut pilot_traces = 8u64;
                for (k, v) in params {
                    match k.to_ascii_lowercase().as_str() {
                        "species" => species = v.clone(),
                        "delta" => delta = Some(parse_u64(k, v)?),
                        "initt" | "init_t" => init_t = parse_f64(k, v)?,
                        "n" => n_peaks = parse_u64(k, v)?,
                        "bound" => bound = Some(parse_u64(k, v)? as usize),
                        "pilot_horizon" => pilot_horizon = parse_f64(k, v)?,
                        "pilot_traces" => pilot_traces = parse_u64(k, v)?,
                        other => {
                            return Err(CliError::Usage(format!(
                                "unknown peaks-automaton parameter `{other}`"
                            )))
                        }
                    }
                }
                ensure_place(model, &species)?;
                let (delta, bound) = match (delta, bound) {
                    (Some(d), Some(b)) => (d, b),
                    (d, b) => {
                        // pilot run fills in whatever was not given
                        let pilot =
                            pilot_species_max(model, &species, pilot_traces, pilot_horizon, seed)
                                .map_err(|e| CliError::Input(e.to_string()))?;
                        (
                            d.unwrap_or_else(|| default_delta(pilot.mean_max)),
                            b.unwrap_or_else(|| default_level_bound(pilot.abs_max)),
                        )
                    }
                };
                let partition = classify_events(model, &species)
                    .map_err(|e| CliError::Input(e.to_string()))?;
                let p = PeaksParams {
                    species,
                    delta,
                    init_t,
                    n_peaks,
                    partition,
                    level_bound: bound,
                };
                build_apeaks(&p).map_err(|e| CliError::Input(e.to_string()))
            }
            LhaSource::Count(params) => {
                let mut counted: Vec<String> = Vec::new();
                let mut n = 1u64;
                let mut track: Option<(String, String)> = None;
                for (k, v) in params {
                    match k.to_ascii_lowercase().as_str() {
                        "events" => {
                            counted = v.split('+').map(|s| s.trim().to_string()).collect()
                        }
                        "n" => n = parse_u64(k, v)?,
                        "track" => {
                            let Some((var, place)) = v.split_once(':') else {
                                return Err(CliError::Usage(
                                    "track expects `var:place`".into(),
                                ));
                            };
                            track = Some((var.to_string(), place.to_string()));
                        }
                        other => {
                            return Err(CliError::Usage(format!(
                                "unknown count-automaton parameter `{other}`"
                            )))
                        }
                    }
                }
                if counted.is_empty() {
                    counted = model.transition_names();
                }
                for event in &counted {
                    if model.transition_index(event).is_none() {
                        return Err(CliError::Usage(format!(
                            "counted event `{event}` is not a model transition"
                        )));
                    }
                }
                let track_ref = track.as_ref().map(|(a, b)| (a.as_str(), b.as_str()));
                counting_automaton(model.transition_names(), counted, n, track_ref)
                    .map_err(|e| CliError::Input(e.to_string()))
            }
            LhaSource::File(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Input(format!("reading {path}: {e}")))?;
                Lha::from_json(&text)
                    .map_err(|e| CliError::Input(format!("automaton {path}: {e}")))
            }
        }
    }
}

fn ensure_place(model: &GspnModel, species: &str) -> Result<(), CliError> {
    if model.place_index(species).is_none() {
        return Err(CliError::Usage(format!(
            "observed species `{species}` is not a place of the model"
        )));
    }
    Ok(())
}
