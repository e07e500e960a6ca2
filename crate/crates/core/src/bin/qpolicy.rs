//! Command-line front end: fit rules, evaluate values, run inference, and
//! drive the simulation benchmarks from a TOML config, emitting JSON
//! reports.

use clap::{Parser, Subcommand};
use qpolicy::dataio::{read_dynamic_csv, read_static_csv, DynamicSchema, StaticSchema};
use qpolicy::dynamic::fit_dynamic_with;
use qpolicy::inference::{
    m_out_of_n_bootstrap, perturb_bootstrap, Bandwidth, SmoothConfig, WeightLaw,
};
use qpolicy::policy::{
    fit_static_with, CensoringModel, IndexRule, SearchConfig,
};
use qpolicy::simgen::{
    mc_experiment, truth_dynamic, truth_static, Example, McOptions, Method, TruthParams,
};
use qpolicy::survival::{GcConfig, KernelKind, KernelSpec};
use qpolicy::value::QuantileSpec;
use qpolicy::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::time::Instant;

const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(
    name = "qpolicy",
    version,
    about = "Quantile-optimal individualized decision rules from censored data"
)]
struct Cli {
    /// TOML configuration file.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Master seed override (applies to search, bootstrap, simulation).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (results are identical for any value).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Write the JSON report here instead of stdout.
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, PartialEq)]
enum Command {
    /// Fit a one-stage quantile-optimal rule.
    Fit,
    /// Fit a two-stage dynamic regime.
    FitDynamic,
    /// Evaluate the quantile value of a fixed rule (no search).
    Value,
    /// Smoothed estimation and bootstrap confidence intervals.
    Infer {
        /// CI miscoverage level (e.g. 0.10 for a 90% interval).
        #[arg(long)]
        alpha: Option<f64>,
        /// Bootstrap replicates.
        #[arg(long)]
        bootstrap: Option<usize>,
        /// "plugin", "cv", or a fixed positive bandwidth.
        #[arg(long)]
        bandwidth: Option<String>,
        /// "smoothed" (perturbation bootstrap) or "mn" (m-out-of-n).
        #[arg(long)]
        method: Option<String>,
        /// Subsample size for the m-out-of-n bootstrap.
        #[arg(long)]
        m: Option<usize>,
    },
    /// Monte Carlo bias/SD experiment on a benchmark generator.
    Simulate,
    /// Brute-force population truth for a benchmark generator.
    Truth,
}

impl Command {
    fn section(&self) -> &'static str {
        match self {
            Command::Fit => "fit",
            Command::FitDynamic => "fit_dynamic",
            Command::Value => "value",
            Command::Infer { .. } => "infer",
            Command::Simulate => "simulate",
            Command::Truth => "truth",
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataSection {
    path: PathBuf,
    x: Vec<String>,
    a: String,
    y: String,
    delta: String,
    pscore: Option<String>,
    default_pscore: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DynamicDataSection {
    path: PathBuf,
    x1: Vec<String>,
    d1: String,
    z: String,
    x2: Vec<String>,
    d2: String,
    y: String,
    delta: String,
    s: f64,
    pi1: f64,
    pi2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CensoringSection {
    #[serde(default = "default_model")]
    model: String,
    cov_index: Option<usize>,
    kernel: Option<String>,
    bandwidth: Option<f64>,
    #[serde(default = "default_floor")]
    floor: f64,
    #[serde(default)]
    left_limit_weights: bool,
    /// Artificial-censoring cutoff M.
    cutoff: Option<f64>,
}

fn default_model() -> String {
    "km".to_string()
}

fn default_floor() -> f64 {
    0.01
}

impl Default for CensoringSection {
    fn default() -> Self {
        CensoringSection {
            model: default_model(),
            cov_index: None,
            kernel: None,
            bandwidth: None,
            floor: default_floor(),
            left_limit_weights: false,
            cutoff: None,
        }
    }
}

impl CensoringSection {
    fn model(&self) -> Result<CensoringModel> {
        match self.model.as_str() {
            "km" => Ok(CensoringModel::Km),
            "ignore" => Ok(CensoringModel::Ignore),
            "local-km" => {
                let kind = match self.kernel.as_deref().unwrap_or("gaussian-density") {
                    "gaussian-density" => KernelKind::GaussianDensity,
                    "normal-cdf" => KernelKind::NormalCdf,
                    other => {
                        return Err(Error::validation(format!(
                            "censoring.kernel: unknown kernel '{other}'"
                        )))
                    }
                };
                let bandwidth = self.bandwidth.ok_or_else(|| {
                    Error::validation("censoring.bandwidth required for local-km")
                })?;
                Ok(CensoringModel::LocalKm {
                    cov_index: self.cov_index.unwrap_or(0),
                    kernel: KernelSpec::new(kind, bandwidth)?,
                })
            }
            other => Err(Error::validation(format!(
                "censoring.model: expected km, local-km, or ignore, got '{other}'"
            ))),
        }
    }

    fn gc(&self) -> GcConfig {
        GcConfig {
            left_limit_weights: self.left_limit_weights,
            floor: self.floor,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuantileSection {
    tau: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FitSection {
    /// Stage-2 feature indices for fit-dynamic.
    stage2_features: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleSection {
    sign: i8,
    tail: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct InferSection {
    method: String,
    alpha: f64,
    bootstrap: usize,
    /// "plugin", "cv", or a positive number.
    bandwidth: toml::Value,
    cv_grid: Option<Vec<f64>>,
    folds: usize,
    weight_law: String,
    /// Subsample size for the m-out-of-n method.
    m: Option<usize>,
}

impl Default for InferSection {
    fn default() -> Self {
        InferSection {
            method: "smoothed".into(),
            alpha: 0.10,
            bootstrap: 200,
            bandwidth: toml::Value::String("plugin".into()),
            cv_grid: None,
            folds: 5,
            weight_law: "exponential-mean1".into(),
            m: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SimulateSection {
    example: String,
    tau: f64,
    n: usize,
    reps: usize,
    method: String,
    target_censoring: Option<f64>,
    local_km_bandwidth: Option<f64>,
    cutoff: Option<f64>,
    stage2_features: Option<Vec<usize>>,
    truth_sign: Option<i8>,
    truth_coefficients: Option<Vec<f64>>,
    truth_sign2: Option<i8>,
    truth_coefficients2: Option<Vec<f64>>,
    truth_q: Option<f64>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            example: "ex1".into(),
            tau: 0.5,
            n: 500,
            reps: 10,
            method: "new".into(),
            target_censoring: None,
            local_km_bandwidth: None,
            cutoff: None,
            stage2_features: None,
            truth_sign: None,
            truth_coefficients: None,
            truth_sign2: None,
            truth_coefficients2: None,
            truth_q: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TruthSection {
    example: String,
    tau: f64,
    n_mc: usize,
    bounds: (f64, f64),
    coarse_step: f64,
    refine_step: f64,
    seed: u64,
}

impl Default for TruthSection {
    fn default() -> Self {
        TruthSection {
            example: "ex1".into(),
            tau: 0.5,
            n_mc: 1_000_000,
            bounds: (-4.0, 4.0),
            coarse_step: 0.05,
            refine_step: 0.005,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct Config {
    data: Option<DataSection>,
    dynamic_data: Option<DynamicDataSection>,
    quantile: Option<QuantileSection>,
    search: Option<SearchConfig>,
    censoring: Option<CensoringSection>,
    fit: Option<FitSection>,
    fit_dynamic: Option<FitSection>,
    value: Option<RuleSection>,
    infer: Option<InferSection>,
    simulate: Option<SimulateSection>,
    truth: Option<TruthSection>,
}

impl Config {
    fn command_sections(&self) -> Vec<&'static str> {
        let mut present = Vec::new();
        if self.fit.is_some() {
            present.push("fit");
        }
        if self.fit_dynamic.is_some() {
            present.push("fit_dynamic");
        }
        if self.value.is_some() {
            present.push("value");
        }
        if self.infer.is_some() {
            present.push("infer");
        }
        if self.simulate.is_some() {
            present.push("simulate");
        }
        if self.truth.is_some() {
            present.push("truth");
        }
        present
    }

    fn validate(&self, command: &Command) -> Result<()> {
        let mut problems = Vec::new();
        let present = self.command_sections();
        if present.len() > 1 {
            problems.push(format!(
                "config must contain exactly one command section; found [{}]",
                present.join(", ")
            ));
        }
        if let Some(only) = present.first() {
            if present.len() == 1 && *only != command.section() {
                problems.push(format!(
                    "config section [{only}] does not match command '{}'",
                    command.section()
                ));
            }
        }
        match command {
            Command::Fit | Command::Value | Command::Infer { .. } => {
                if let Some(d) = &self.data {
                    if !d.path.exists() {
                        problems.push(format!("data.path does not exist: {}", d.path.display()));
                    }
                } else {
                    problems.push("missing [data] section".into());
                }
                if self.quantile.is_none() {
                    problems.push("missing [quantile] section".into());
                }
            }
            Command::FitDynamic => {
                if let Some(d) = &self.dynamic_data {
                    if !d.path.exists() {
                        problems.push(format!(
                            "dynamic_data.path does not exist: {}",
                            d.path.display()
                        ));
                    }
                } else {
                    problems.push("missing [dynamic_data] section".into());
                }
                if self.quantile.is_none() {
                    problems.push("missing [quantile] section".into());
                }
            }
            Command::Simulate | Command::Truth => {}
        }
        if *command == Command::Value && self.value.is_none() {
            problems.push("missing [value] section with the rule coefficients".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::validation(problems.join("; ")))
        }
    }
}

fn parse_example(name: &str) -> Result<Example> {
    match name {
        "ex1" => Ok(Example::Ex1),
        "ex2" => Ok(Example::Ex2),
        "ex3a" => Ok(Example::Ex3a),
        "ex3b" => Ok(Example::Ex3b),
        "ex3c" => Ok(Example::Ex3c),
        other => Err(Error::validation(format!(
            "unknown example '{other}' (expected ex1, ex2, ex3a, ex3b, ex3c)"
        ))),
    }
}

#[derive(Serialize)]
struct Envelope<R: Serialize> {
    schema_version: u32,
    library_version: &'static str,
    command: &'static str,
    config: Config,
    elapsed_seconds: f64,
    report: R,
}

fn emit<R: Serialize>(
    cli_out: &Option<PathBuf>,
    command: &'static str,
    config: &Config,
    started: Instant,
    report: R,
) -> Result<()> {
    let envelope = Envelope {
        schema_version: SCHEMA_VERSION,
        library_version: env!("CARGO_PKG_VERSION"),
        command,
        config: config.clone(),
        elapsed_seconds: started.elapsed().as_secs_f64(),
        report,
    };
    let json = serde_json::to_string_pretty(&envelope)
        .map_err(|e| Error::fit(format!("report serialization failed: {e}")))?;
    match cli_out {
        Some(path) => std::fs::write(path, json)?,
        None => println!("{json}"),
    }
    Ok(())
}

fn load_static(data: &DataSection) -> Result<qpolicy::dataio::StaticDataset> {
    let schema = StaticSchema {
        x: data.x.clone(),
        a: data.a.clone(),
        y: data.y.clone(),
        delta: data.delta.clone(),
        pscore: data.pscore.clone(),
    };
    read_static_csv(&data.path, &schema, data.default_pscore)
}

fn load_dynamic(data: &DynamicDataSection) -> Result<qpolicy::dataio::DynamicDataset> {
    let schema = DynamicSchema {
        x1: data.x1.clone(),
        d1: data.d1.clone(),
        z: data.z.clone(),
        x2: data.x2.clone(),
        d2: data.d2.clone(),
        y: data.y.clone(),
        delta: data.delta.clone(),
    };
    read_dynamic_csv(&data.path, data.s, data.pi1, data.pi2, &schema)
}

fn run(cli: &Cli) -> Result<()> {
    let started = Instant::now();
    let config: Config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            toml::from_str(&text).map_err(|e| Error::validation(format!("config parse: {e}")))?
        }
        None => Config::default(),
    };
    config.validate(&cli.command)?;
    let mut search = config.search.clone().unwrap_or_default();
    if let Some(seed) = cli.seed {
        search.seed = seed;
    }
    let censoring = config.censoring.clone().unwrap_or_default();
    let gc_cfg = censoring.gc();

    match &cli.command {
        Command::Fit => {
            let ds = load_static(config.data.as_ref().unwrap())?;
            let spec = QuantileSpec::new(config.quantile.as_ref().unwrap().tau)?;
            let report = fit_static_with(
                &ds,
                spec,
                &search,
                censoring.cutoff,
                &censoring.model()?,
                &gc_cfg,
            )?;
            eprintln!(
                "fit: sign {} tail {:?} value {:.4} n_effective {} censoring {:.3}",
                report.rule.sign,
                report.rule.tail,
                report.value,
                report.n_effective,
                report.censoring_rate
            );
            emit(&cli.out, "fit", &config, started, report)
        }
        Command::FitDynamic => {
            let ds = load_dynamic(config.dynamic_data.as_ref().unwrap())?;
            let spec = QuantileSpec::new(config.quantile.as_ref().unwrap().tau)?;
            let feats = config
                .fit_dynamic
                .as_ref()
                .and_then(|f| f.stage2_features.clone());
            let report = fit_dynamic_with(
                &ds,
                spec,
                &search,
                censoring.cutoff,
                feats.as_deref(),
                &gc_cfg,
                false,
            )?;
            eprintln!(
                "fit-dynamic: stage1 ({}, {:?}) stage2 ({}, {:?}) value {:.4}",
                report.rule.stage1.sign,
                report.rule.stage1.tail,
                report.rule.stage2.sign,
                report.rule.stage2.tail,
                report.value
            );
            emit(&cli.out, "fit-dynamic", &config, started, report)
        }
        Command::Value => {
            let ds = load_static(config.data.as_ref().unwrap())?;
            let spec = QuantileSpec::new(config.quantile.as_ref().unwrap().tau)?;
            let rule_cfg = config.value.as_ref().unwrap();
            let rule = IndexRule::new(rule_cfg.sign, rule_cfg.tail.clone())?;
            let q = qpolicy::policy::value_at_rule(
                &ds,
                &rule,
                spec,
                censoring.cutoff,
                &censoring.model()?,
                &gc_cfg,
            )?;
            eprintln!("value: {q:.4}");
            #[derive(Serialize)]
            struct ValueReport {
                rule: IndexRule,
                q_hat: f64,
            }
            emit(&cli.out, "value", &config, started, ValueReport { rule, q_hat: q })
        }
        Command::Infer {
            alpha,
            bootstrap,
            bandwidth,
            method,
            m,
        } => {
            let ds = load_static(config.data.as_ref().unwrap())?;
            let spec = QuantileSpec::new(config.quantile.as_ref().unwrap().tau)?;
            let mut section = config.infer.clone().unwrap_or_default();
            if let Some(a) = alpha {
                section.alpha = *a;
            }
            if let Some(b) = bootstrap {
                section.bootstrap = *b;
            }
            if let Some(h) = bandwidth {
                section.bandwidth = match h.parse::<f64>() {
                    Ok(v) => toml::Value::Float(v),
                    Err(_) => toml::Value::String(h.clone()),
                };
            }
            if let Some(meth) = method {
                section.method = meth.clone();
            }
            if m.is_some() {
                section.m = *m;
            }
            let prior = fit_static_with(
                &ds,
                spec,
                &search,
                censoring.cutoff,
                &censoring.model()?,
                &gc_cfg,
            )?;
            match section.method.as_str() {
                "smoothed" => {
                    let bandwidth = match &section.bandwidth {
                        toml::Value::String(s) if s == "plugin" => Bandwidth::Plugin,
                        toml::Value::String(s) if s == "cv" => Bandwidth::Cv,
                        toml::Value::Float(h) => Bandwidth::Fixed(*h),
                        toml::Value::Integer(h) => Bandwidth::Fixed(*h as f64),
                        other => {
                            return Err(Error::validation(format!(
                                "infer.bandwidth: expected 'plugin', 'cv', or a number, got {other}"
                            )))
                        }
                    };
                    let weight_law = match section.weight_law.as_str() {
                        "exponential-mean1" => WeightLaw::ExponentialMean1,
                        "two-point-mean1-var1" => WeightLaw::TwoPointMean1Var1,
                        other => {
                            return Err(Error::validation(format!(
                                "infer.weight_law: unknown law '{other}'"
                            )))
                        }
                    };
                    let smooth = SmoothConfig {
                        bandwidth,
                        cv_grid: section.cv_grid.clone(),
                        folds: section.folds,
                        bootstrap_reps: section.bootstrap,
                        weight_law,
                        alpha: section.alpha,
                        seed: search.seed,
                        search: search.clone(),
                    };
                    let report = perturb_bootstrap(&ds, spec, &prior, &smooth)?;
                    eprintln!(
                        "infer (smoothed): beta_bar {:?} bandwidth {:.4} ci {:?}",
                        report.beta_bar_tail, report.bandwidth_used, report.ci
                    );
                    emit(&cli.out, "infer", &config, started, report)
                }
                "mn" => {
                    let report = m_out_of_n_bootstrap(
                        &ds,
                        spec,
                        &search,
                        section.m,
                        section.bootstrap,
                        section.alpha,
                        search.seed,
                    )?;
                    eprintln!(
                        "infer (m-out-of-n): beta_hat {:?} m {} ci {:?}",
                        report.beta_hat_tail, report.m, report.ci
                    );
                    emit(&cli.out, "infer", &config, started, report)
                }
                other => Err(Error::validation(format!(
                    "infer.method: expected smoothed or mn, got '{other}'"
                ))),
            }
        }
        Command::Simulate => {
            let section = config.simulate.clone().unwrap_or_default();
            let example = parse_example(&section.example)?;
            let method = match section.method.as_str() {
                "new" => Method::New,
                "naive" => Method::Naive,
                other => {
                    return Err(Error::validation(format!(
                        "simulate.method: expected new or naive, got '{other}'"
                    )))
                }
            };
            let truth = TruthParams {
                sign: section.truth_sign.ok_or_else(|| {
                    Error::validation(
                        "simulate.truth_sign missing: supply truth_* values or run `truth` first",
                    )
                })?,
                coefficients: section.truth_coefficients.clone().ok_or_else(|| {
                    Error::validation("simulate.truth_coefficients missing")
                })?,
                sign2: section.truth_sign2,
                coefficients2: section.truth_coefficients2.clone(),
                q: section
                    .truth_q
                    .ok_or_else(|| Error::validation("simulate.truth_q missing"))?,
            };
            let opts = McOptions {
                search: search.clone(),
                local_km_bandwidth: section.local_km_bandwidth,
                target_censoring: section.target_censoring,
                cutoff: section.cutoff,
                stage2_features: section.stage2_features.clone(),
            };
            let summary = mc_experiment(
                example,
                section.tau,
                section.n,
                section.reps,
                method,
                search.seed,
                &truth,
                &opts,
            )?;
            // CSV rows on stdout for table assembly; JSON carries everything
            println!("rep,sign,coefficients,sign2,coefficients2,q,censoring_rate");
            for row in &summary.rows {
                println!(
                    "{},{},{},{},{},{},{}",
                    row.rep,
                    row.sign,
                    row.coefficients
                        .iter()
                        .map(|v| v.to_string())
                        .collect::<Vec<_>>()
                        .join(";"),
                    row.sign2.map_or(String::new(), |s| s.to_string()),
                    row.coefficients2.as_ref().map_or(String::new(), |c| c
                        .iter()
                        .map(|v| v.to_string())
                        .collect::<Vec<_>>()
                        .join(";")),
                    row.q,
                    row.censoring_rate
                );
            }
            eprintln!(
                "simulate: bias {:?} sd {:?} q_bias {:.4} q_sd {:.4} sign_errors {:.3}",
                summary.bias, summary.sd, summary.q_bias, summary.q_sd, summary.sign_error_rate
            );
            emit(&cli.out, "simulate", &config, started, summary)
        }
        Command::Truth => {
            let mut section = config.truth.clone().unwrap_or_default();
            if let Some(seed) = cli.seed {
                section.seed = seed;
            }
            let example = parse_example(&section.example)?;
            if example.is_dynamic() {
                let t = truth_dynamic(
                    example,
                    section.tau,
                    section.n_mc,
                    section.seed,
                    section.coarse_step,
                    section.refine_step,
                )?;
                eprintln!(
                    "truth: beta ({}, {:.3}) zeta ({}, {:.3}) q {:.4}",
                    t.beta_sign, t.beta2, t.zeta_sign, t.zeta2, t.q
                );
                emit(&cli.out, "truth", &config, started, t)
            } else {
                let t = truth_static(
                    example,
                    section.tau,
                    section.n_mc,
                    section.seed,
                    section.bounds,
                    section.coarse_step,
                    section.refine_step,
                )?;
                eprintln!("truth: sign {} tail {:?} q {:.4}", t.rule.sign, t.rule.tail, t.q);
                emit(&cli.out, "truth", &config, started, t)
            }
        }
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Parse(_)
        | Error::Validation(_)
        | Error::Parameter(_)
        | Error::Io(_)
        | Error::Csv(_) => 2,
        Error::Fit(_) | Error::EmptyEffectiveSample | Error::KernelSupport => 1,
    }
}

fn main() {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: could not configure thread pool: {e}");
            std::process::exit(2);
        }
    }
    if let Err(err) = run(&cli) {
        eprintln!("error: {err}");
        std::process::exit(exit_code(&err));
    }
}
