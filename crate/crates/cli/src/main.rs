use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::{Deserialize, Serialize};
use serde_json::json;

use dvs_core::io::{load_data, standardize_shards, write_dataset_binary, write_dataset_csv, LoadOptions};
use dvs_core::lasso::Lambda;
use dvs_core::metrics::{run_campaign, write_reports_csv, BaselineD, CampaignConfig, Method};
use dvs_core::shard_net::worker_timeout_from_env;
use dvs_core::{
    generate, screen, ClusterSpec, DihtConfig, DvsError, Family, LassoConfig, MarginalMethod, Scenario, ScenarioSpec,
    ScreenConfig, Sparsity, Transport,
};

const SCHEMA: &str = "dvs-result-v1";

#[derive(Parser)]
#[command(name = "dvs", version, about = "Distributed variable screening for GLMs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a simulated, pre-sharded dataset with its truth file.
    Simulate(SimulateArgs),
    /// Screen covariates on a sharded dataset.
    Screen(ScreenArgs),
    /// Run a Monte Carlo campaign and write a metrics table.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DataFormat {
    Csv,
    Bin,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum FamilyArg {
    Gaussian,
    Logistic,
    Poisson,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Gaussian => Family::Gaussian,
            FamilyArg::Logistic => Family::Bernoulli,
            FamilyArg::Poisson => Family::Poisson,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum TransportArg {
    Inprocess,
    Tcp,
}

impl From<TransportArg> for Transport {
    fn from(t: TransportArg) -> Self {
        match t {
            TransportArg::Inprocess => Transport::InProcess,
            TransportArg::Tcp => Transport::Tcp,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Dvs,
    Pearson,
    Kendall,
    Sirs,
    Dcor,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Dvs => Method::Dvs,
            MethodArg::Pearson => Method::Marginal(MarginalMethod::Pearson),
            MethodArg::Kendall => Method::Marginal(MarginalMethod::Kendall),
            MethodArg::Sirs => Method::Marginal(MarginalMethod::Sirs),
            MethodArg::Dcor => Method::Marginal(MarginalMethod::Dcor),
        }
    }
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    s.parse().map_err(|e: DvsError| e.to_string())
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario label: 1.1, 1.2, 2.1, 2.2, 3.1 or 3.2.
    #[arg(long = "example", visible_alias = "scenario", value_parser = parse_scenario)]
    example: Scenario,
    #[arg(long = "N")]
    n_total: usize,
    #[arg(long)]
    p: usize,
    #[arg(long)]
    m: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

impl ScenarioArgs {
    fn spec(&self) -> ScenarioSpec {
        ScenarioSpec {
            scenario: self.example,
            n_total: self.n_total,
            p: self.p,
            m: self.m,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: DataFormat,
}

/// Screening parameters shared by flags and `--config` files.
#[derive(Args, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct ScreenParams {
    /// Shard directory, binary cache, or a single CSV (split with --m).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Number of machines when splitting a single CSV.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, value_enum)]
    family: Option<FamilyArg>,
    /// Lasso penalty: a number, or "auto" for c*sqrt(ln p / n).
    #[arg(long)]
    lambda: Option<String>,
    /// Constant c of the automatic penalty.
    #[arg(long)]
    lambda_c: Option<f64>,
    /// Fixed sparsity level.
    #[arg(long, conflicts_with = "k_max")]
    k: Option<usize>,
    /// Upper end of the EBIC scan (default min(p, 50)).
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Initial DIHT step scale (doubled whenever descent fails).
    #[arg(long)]
    vartheta0: Option<f64>,
    /// Skip one header line in every CSV.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    header: Option<bool>,
    #[arg(long)]
    shuffle_seed: Option<u64>,
    /// Center and scale covariates with pooled moments (default on).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    standardize: Option<bool>,
    #[arg(long, value_enum)]
    transport: Option<TransportArg>,
}

impl ScreenParams {
    fn overlay(self, base: ScreenParams) -> ScreenParams {
        ScreenParams {
            data: self.data.or(base.data),
            m: self.m.or(base.m),
            family: self.family.or(base.family),
            lambda: self.lambda.or(base.lambda),
            lambda_c: self.lambda_c.or(base.lambda_c),
            k: self.k.or(if self.k_max.is_some() { None } else { base.k }),
            k_max: self.k_max.or(if self.k.is_some() { None } else { base.k_max }),
            epsilon: self.epsilon.or(base.epsilon),
            max_iter: self.max_iter.or(base.max_iter),
            vartheta0: self.vartheta0.or(base.vartheta0),
            header: self.header.or(base.header),
            shuffle_seed: self.shuffle_seed.or(base.shuffle_seed),
            standardize: self.standardize.or(base.standardize),
            transport: self.transport.or(base.transport),
        }
    }

    fn lasso(&self) -> Result<LassoConfig, CliError> {
        let lambda = match self.lambda.as_deref() {
            None | Some("auto") => Lambda::Auto { c: self.lambda_c.unwrap_or(1.0) },
            Some(v) => Lambda::Fixed(
                v.parse()
                    .map_err(|_| CliError::usage(format!("--lambda must be a number or 'auto', got '{v}'")))?,
            ),
        };
        Ok(LassoConfig { lambda, ..LassoConfig::default() })
    }

    fn screen_config(&self) -> Result<ScreenConfig, CliError> {
        let defaults = DihtConfig::default();
        Ok(ScreenConfig {
            lasso: self.lasso()?,
            sparsity: match self.k {
                Some(k) => Sparsity::Fixed(k),
                None => Sparsity::Scan { k_max: self.k_max },
            },
            diht: DihtConfig {
                epsilon: self.epsilon.unwrap_or(defaults.epsilon),
                max_iter: self.max_iter.unwrap_or(defaults.max_iter),
                vartheta0: self.vartheta0.unwrap_or(defaults.vartheta0),
                ..defaults
            },
        })
    }
}

#[derive(Args)]
struct ScreenArgs {
    #[command(flatten)]
    params: ScreenParams,
    /// JSON config file (a previous result JSON is accepted too); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Same as --standardize false.
    #[arg(long, conflicts_with = "standardize")]
    no_standardize: bool,
    /// Write the per-iteration log as JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Worker threads (default: logical cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Result JSON path (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long = "T", default_value_t = 100)]
    replications: usize,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "dvs,pearson,kendall,sirs,dcor")]
    methods: Vec<MethodArg>,
    /// Baseline model size: an integer, or "auto" for both ceil(N/ln N) and the DVS size.
    #[arg(long, default_value = "auto")]
    baseline_d: String,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    lambda_c: Option<f64>,
    #[arg(long, conflicts_with = "k_max")]
    k: Option<usize>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    vartheta0: Option<f64>,
    #[arg(long, value_enum, default_value = "inprocess")]
    transport: TransportArg,
    #[arg(long)]
    jobs: Option<usize>,
    /// Keep every replication's selected set in the JSON output.
    #[arg(long)]
    keep_sets: bool,
    /// CSV table path (default: stdout); a JSON copy is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(message: String) -> Self {
        Self { code: 2, message }
    }
}

impl From<DvsError> for CliError {
    fn from(e: DvsError) -> Self {
        let code = match e {
            DvsError::Config(_) | DvsError::InvalidArgument(_) => 2,
            DvsError::Io(_) => 3,
            DvsError::DataValidation { .. } | DvsError::Shape { .. } => 4,
            _ => 1,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        DvsError::Io(e).into()
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self { code: 3, message: format!("JSON: {e}") }
    }
}

fn set_jobs(jobs: Option<usize>) {
    if let Some(n) = jobs.filter(|&n| n > 0) {
        // fails only if a pool was already built, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn write_output(path: Option<&Path>, body: &str) -> Result<(), CliError> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(p, body)?;
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(body.as_bytes())?;
        }
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let spec = args.scenario.spec();
    let data = generate(&spec)?;
    match args.format {
        DataFormat::Csv => write_dataset_csv(&args.out, &data)?,
        DataFormat::Bin => write_dataset_binary(&args.out, &data)?,
    }
    info!("wrote {} shards to {}", data.shards.len(), args.out.display());
    Ok(())
}

/// Reads `--config`; a result JSON contributes its embedded `config` object.
fn load_config(path: &Path) -> Result<ScreenParams, CliError> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let inner = match value.get("schema") {
        Some(s) if s == SCHEMA => value.get("config").cloned().unwrap_or_default(),
        _ => value,
    };
    serde_json::from_value(inner).map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))
}

fn cmd_screen(args: ScreenArgs) -> Result<(), CliError> {
    set_jobs(args.jobs);
    let base = match &args.config {
        Some(p) => load_config(p)?,
        None => ScreenParams::default(),
    };
    let mut flags = args.params;
    if args.no_standardize {
        flags.standardize = Some(false);
    }
    let params = flags.overlay(base);
    let data_path = params
        .data
        .clone()
        .ok_or_else(|| CliError::usage("--data is required".into()))?;
    let cfg = params.screen_config()?;

    let opts = LoadOptions {
        header: params.header.unwrap_or(false),
        m: params.m,
        shuffle_seed: params.shuffle_seed,
        family: params.family.map(Family::from),
    };
    let loaded = load_data(&data_path, &opts)?;
    let family = match (params.family, loaded.family) {
        (Some(f), _) => Family::from(f),
        (None, Some(f)) => f,
        (None, None) => return Err(CliError::usage("--family is required for CSV data".into())),
    };
    for s in &loaded.shards {
        s.validate_for(family)?;
    }
    let m = loaded.shards.len();
    let standardize = params.standardize.unwrap_or(true);
    let (shards, standardization) = if standardize {
        let (s, st) = standardize_shards(loaded.shards, family)?;
        (s, Some(st))
    } else {
        (loaded.shards, None)
    };
    let transport = params.transport.map(Transport::from).unwrap_or_default();
    let cluster = ClusterSpec::new(shards, transport)?.with_timeout(worker_timeout_from_env());
    let (n_total, p) = (cluster.total_observations(), cluster.p());

    let result = screen(&cluster, family, &cfg)?;
    let run = &result.run;
    if let Some(path) = &args.trace {
        run.log.write_json_lines(BufWriter::new(File::create(path)?))?;
    }

    let coefficients: Vec<serde_json::Value> = run
        .support
        .iter()
        .map(|&j| {
            let v = run.beta.values()[j];
            let original = standardization.as_ref().map_or(v, |st| v / st.scale[j]);
            json!({ "index": j + 1, "value": original, "standardized_value": v })
        })
        .collect();
    let ebic_trace = run.ebic_trace.as_ref().map(|t| {
        t.records
            .iter()
            .map(|r| {
                json!({
                    "k": r.k,
                    "ebic": r.ebic,
                    "surrogate_loss": r.surrogate_loss,
                    "support": r.support.iter().map(|j| j + 1).collect::<Vec<_>>(),
                    "iterations": r.iterations,
                    "converged": r.converged,
                })
            })
            .collect::<Vec<_>>()
    });

    let mut resolved = params.clone();
    resolved.family = Some(match family {
        Family::Gaussian => FamilyArg::Gaussian,
        Family::Bernoulli => FamilyArg::Logistic,
        Family::Poisson => FamilyArg::Poisson,
    });
    resolved.standardize = Some(standardize);
    resolved.m = Some(m);
    let doc = json!({
        "schema": SCHEMA,
        "config": resolved,
        "family": family,
        "N": n_total,
        "p": p,
        "m": m,
        "support": run.support.iter().map(|j| j + 1).collect::<Vec<_>>(),
        "coefficients": coefficients,
        "k": run.k,
        "ebic_trace": ebic_trace,
        "surrogate_loss": run.surrogate_loss,
        "iterations": run.iterations,
        "converged": run.converged,
        "doubling_events": run.log.doublings,
        "communication": run.communication,
        "lasso": {
            "lambda": result.lasso.lambda,
            "iterations": result.lasso.iterations,
            "converged": result.lasso.converged,
            "nonzeros": result.lasso.beta.nnz(),
        },
        "standardization": standardization,
        "timings_ms": result.timings,
    });
    write_output(args.out.as_deref(), &(serde_json::to_string_pretty(&doc)? + "\n"))
}

fn cmd_bench(args: BenchArgs) -> Result<(), CliError> {
    let spec = args.scenario.spec();
    let baseline_d = match args.baseline_d.as_str() {
        "auto" => BaselineD::Both,
        v => BaselineD::Fixed(
            v.parse()
                .map_err(|_| CliError::usage(format!("--baseline-d must be an integer or 'auto', got '{v}'")))?,
        ),
    };
    let params = ScreenParams {
        lambda: args.lambda.clone(),
        lambda_c: args.lambda_c,
        k: args.k,
        k_max: args.k_max,
        epsilon: args.epsilon,
        max_iter: args.max_iter,
        vartheta0: args.vartheta0,
        ..Default::default()
    };
    let mut methods: Vec<Method> = Vec::new();
    for m in &args.methods {
        let m = Method::from(*m);
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    let cfg = CampaignConfig {
        baseline_d,
        screen: params.screen_config()?,
        transport: args.transport.into(),
        jobs: args.jobs.unwrap_or(0),
        retain_sets: args.keep_sets,
        ..CampaignConfig::new(spec, methods, args.replications)
    };
    let reports = run_campaign(&cfg)?;

    let mut csv = Vec::new();
    write_reports_csv(&reports, &mut csv)?;
    let csv = String::from_utf8(csv).expect("CSV output is UTF-8");
    write_output(args.out.as_deref(), &csv)?;
    if let Some(out) = &args.out {
        let doc = json!({ "campaign": cfg, "reports": reports });
        fs::write(out.with_extension("json"), serde_json::to_string_pretty(&doc)? + "\n")?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Screen(a) => cmd_screen(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
