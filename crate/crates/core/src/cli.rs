//! Command-line front end.
//!
//! `simulate` runs a Monte Carlo experiment from a TOML configuration,
//! `estimate` applies the estimators to one sample file, and `validate`
//! checks a configuration without running it.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 I/O failure,
//! 4 estimation failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bootstrap::{bootstrap_estimates, estimate_sample, BootConfig};
use crate::config::{canonical_toml, config_hash, load_config, section};
use crate::error::{Error, Result};
use crate::estimators::EstimateSet;
use crate::likelihood::{FitMethod, FitOptions};
use crate::quadrature::{QuadratureRule, DEFAULT_NODES};
use crate::sample_file::{parse_sample, write_sample};
use crate::simulation::{
    bootstrap_seed, fmt_f64, fmt_opt, kind_label, render_table, run_monte_carlo, write_metrics_csv,
    write_replicate_csv,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_ESTIMATION: i32 = 4;

/// Exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => EXIT_IO,
        Error::Config { .. }
        | Error::Parse { .. }
        | Error::InvalidArgument(_)
        | Error::Json(_)
        | Error::Unsupported(_) => EXIT_INPUT,
        Error::NonIdentifiable(_)
        | Error::Diverged { .. }
        | Error::UndefinedEstimate(_)
        | Error::DegenerateWorld(_) => EXIT_ESTIMATION,
    }
}

#[derive(Debug, Parser)]
#[command(name = "linktrace", version, about = "Link-tracing estimation for hidden populations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a Monte Carlo experiment and write its result files.
    Simulate(SimulateArgs),
    /// Estimate sizes, totals and means from one sample file.
    Estimate(EstimateArgs),
    /// Check a configuration and print its resolved form.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML run configuration.
    pub config: PathBuf,
    /// Directory for the result files (created if missing).
    #[arg(long, short)]
    pub out: PathBuf,
    /// Override a configuration key, e.g. `--set n=15 --set population.kind=II`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Worker threads for replicates.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Also write every realized sample under `samples/`.
    #[arg(long)]
    pub persist_samples: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Unconditional,
    Conditional,
}

impl From<MethodArg> for FitMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Unconditional => FitMethod::Unconditional,
            MethodArg::Conditional => FitMethod::Conditional,
        }
    }
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Sample file.
    pub sample: PathBuf,
    /// Fitting method; defaults to the first method of `--config`, else unconditional.
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Run configuration supplying `fit`, `bootstrap` and `quadrature_nodes`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Bootstrap replicates.
    #[arg(long, conflicts_with = "no_bootstrap")]
    pub bootstrap: Option<usize>,
    /// Skip the bootstrap.
    #[arg(long)]
    pub no_bootstrap: bool,
    /// Bootstrap seed; defaults to the sample file's `seed` line, else 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Quadrature nodes.
    #[arg(long)]
    pub nodes: Option<usize>,
    /// Also write the estimates as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Worker threads for the bootstrap.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    pub config: PathBuf,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

/// Parses arguments and runs a command, returning the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let outcome = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Validate(a) => cmd_validate(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(Error::invalid("--threads must be at least 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::invalid(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Record of a `simulate` run, written as `manifest.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config_path: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub overrides: Vec<String>,
    pub threads: Option<usize>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub outputs: BTreeMap<String, String>,
    /// Resolved configuration; rerunning it reproduces every output.
    pub config: String,
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path).map(BufWriter::new).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<i32> {
    let config = load_config(&args.config, &args.set)?;
    let started = unix_now();
    let out = with_pool(args.threads, || run_monte_carlo(&config, args.persist_samples))??;

    fs::create_dir_all(&args.out)?;
    let mut outputs = BTreeMap::new();
    let replicates = args.out.join("replicates.csv");
    write_replicate_csv(&out.records, create(&replicates)?)?;
    outputs.insert("replicates".to_string(), replicates.display().to_string());

    let metrics = args.out.join("metrics.csv");
    write_metrics_csv(&out.report, create(&metrics)?)?;
    outputs.insert("metrics".to_string(), metrics.display().to_string());

    let table = args.out.join("table.txt");
    let mut t = create(&table)?;
    t.write_all(render_table(&out.report).as_bytes())?;
    t.flush()?;
    outputs.insert("table".to_string(), table.display().to_string());

    if args.persist_samples {
        let dir = args.out.join("samples");
        fs::create_dir_all(&dir)?;
        for (i, sample) in &out.samples {
            let path = dir.join(format!("replicate_{i:05}.txt"));
            fs::write(&path, write_sample(sample, Some(bootstrap_seed(config.master_seed, *i))))?;
        }
        outputs.insert("samples".to_string(), dir.display().to_string());
    }

    let manifest_path = args.out.join("manifest.json");
    let manifest = RunManifest {
        tool: "linktrace".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_path: args.config.display().to_string(),
        config_hash: config_hash(&config),
        master_seed: config.master_seed,
        overrides: args.set.clone(),
        threads: args.threads,
        started_unix: started,
        finished_unix: unix_now(),
        outputs,
        config: canonical_toml(&config),
    };
    let mut m = create(&manifest_path)?;
    serde_json::to_writer_pretty(&mut m, &manifest)?;
    m.write_all(b"\n")?;
    m.flush()?;
    eprintln!(
        "{} replicates, {} records -> {}",
        config.r,
        out.records.len(),
        args.out.display()
    );
    Ok(EXIT_OK)
}

pub fn cmd_validate(args: &ValidateArgs) -> Result<i32> {
    let config = load_config(&args.config, &args.set)?;
    print!("{}", canonical_toml(&config));
    eprintln!("config_hash {}", config_hash(&config));
    Ok(EXIT_OK)
}

/// Settings `estimate` takes from a run configuration.
struct EstimateSettings {
    method: FitMethod,
    fit: FitOptions,
    nodes: usize,
    bootstrap: Option<BootConfig>,
}

fn estimate_settings(args: &EstimateArgs) -> Result<EstimateSettings> {
    let mut s = EstimateSettings {
        method: FitMethod::Unconditional,
        fit: FitOptions::default(),
        nodes: DEFAULT_NODES,
        bootstrap: Some(BootConfig::default()),
    };
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)?;
        let table: toml::Table = toml::from_str(&text).map_err(|e| Error::config("<file>", e.message()))?;
        s.fit = section(&table, "fit")?;
        s.fit.validate().map_err(|e| Error::config("fit", e.to_string()))?;
        s.bootstrap = match table.get("bootstrap") {
            Some(_) => Some(section(&table, "bootstrap")?),
            None => None,
        };
        let methods: Vec<FitMethod> = section(&table, "methods")?;
        if let Some(&m) = methods.first() {
            s.method = m;
        }
        if table.contains_key("quadrature_nodes") {
            s.nodes = section(&table, "quadrature_nodes")?;
        }
    }
    if let Some(m) = args.method {
        s.method = m.into();
    }
    if let Some(q) = args.nodes {
        s.nodes = q;
    }
    if args.no_bootstrap || args.bootstrap == Some(0) {
        s.bootstrap = None;
    } else if let Some(b) = args.bootstrap {
        s.bootstrap.get_or_insert_with(BootConfig::default).b = b;
    }
    if let Some(b) = &s.bootstrap {
        b.validate()?;
    }
    Ok(s)
}

/// Column order of the `estimate` CSV.
pub const ESTIMATE_HEADER: [&str; 11] = [
    "method",
    "parameter",
    "value",
    "sd",
    "ci_lower",
    "ci_upper",
    "ci_kind",
    "ci_sd",
    "ci_flag",
    "failure",
    "boot_failures",
];

pub fn write_estimate_csv<W: Write>(set: &EstimateSet, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(ESTIMATE_HEADER).map_err(csv_err)?;
    for e in &set.estimates {
        let (lo, hi, kind, ci_sd, flag) = match &e.ci {
            Some(c) => (
                fmt_f64(c.lower),
                fmt_f64(c.upper),
                kind_label(c.kind).to_string(),
                fmt_f64(c.sd_used),
                c.flag.clone().unwrap_or_default(),
            ),
            None => Default::default(),
        };
        w.write_record([
            set.method.tag().to_string(),
            e.key.to_string(),
            fmt_opt(e.value),
            fmt_opt(e.sd),
            lo,
            hi,
            kind,
            ci_sd,
            flag,
            e.failure.clone().unwrap_or_default(),
            set.boot_failures.map(|b| b.to_string()).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Four significant digits.
fn sig4(v: f64) -> String {
    if !v.is_finite() || v == 0.0 {
        return format!("{v}");
    }
    let mag = v.abs().log10().floor() as i32;
    if !(-4..=8).contains(&mag) {
        return format!("{v:.3e}");
    }
    format!("{v:.*}", (3 - mag).max(0) as usize)
}

fn opt4(v: Option<f64>) -> String {
    v.map(sig4).unwrap_or_else(|| "-".into())
}

/// Aligned text rendering of an estimate set.
pub fn render_estimates(set: &EstimateSet) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<10} {:<11} {:>12} {:>10} {:>12} {:>12}  note",
        "method", "parameter", "estimate", "sd", "ci_lower", "ci_upper"
    );
    for e in &set.estimates {
        let (lo, hi) = match &e.ci {
            Some(c) => (sig4(c.lower), sig4(c.upper)),
            None => ("-".into(), "-".into()),
        };
        let mut note = match &e.failure {
            Some(f) => format!("missing: {f}"),
            None => String::new(),
        };
        if let Some(flag) = e.ci.as_ref().and_then(|c| c.flag.as_ref()) {
            note.push_str(flag);
        }
        let line = format!(
            "{:<10} {:<11} {:>12} {:>10} {:>12} {:>12}  {}",
            set.method.tag(),
            e.key.to_string(),
            opt4(e.value),
            opt4(e.sd),
            lo,
            hi,
            note
        );
        let _ = writeln!(s, "{}", line.trim_end());
    }
    s
}

pub fn cmd_estimate(args: &EstimateArgs) -> Result<i32> {
    let settings = estimate_settings(args)?;
    let text = fs::read_to_string(&args.sample)?;
    let file = parse_sample(&text)?;
    let sample = &file.sample;
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let rule = QuadratureRule::new(settings.nodes).map_err(|e| Error::config("quadrature_nodes", e.to_string()))?;
    let geom = sample.geometry()?;

    let (f1, f2, mut set) = estimate_sample(sample, &geom, &rule, &settings.fit, settings.method);
    if let (Some(boot), Ok(fit1)) = (&settings.bootstrap, &f1) {
        let boot = *boot;
        let done = with_pool(args.threads, || {
            bootstrap_estimates(sample, fit1, f2.as_ref().ok(), &set, &geom, &rule, &settings.fit, &boot, seed)
        })?;
        match done {
            Ok(s) => set = s,
            Err(e) => eprintln!("warning: bootstrap skipped: {e}"),
        }
    }

    println!(
        "sample: n = {}, N = {}, m = {}, r1 = {}, r2 = {}, response {}",
        sample.n(),
        sample.n_frame,
        sample.m_total(),
        sample.r1(),
        sample.r2(),
        sample.response.label()
    );
    match &settings.bootstrap {
        Some(b) => println!(
            "method {}, q = {}, bootstrap B = {} (seed {seed}, failures {})",
            settings.method.tag(),
            settings.nodes,
            b.b,
            set.boot_failures.map(|f| f.to_string()).unwrap_or_else(|| "-".into())
        ),
        None => println!("method {}, q = {}, no bootstrap", settings.method.tag(), settings.nodes),
    }
    if set.variance_unreliable {
        println!("warning: more than half of the bootstrap replicates failed; variances are unreliable");
    }
    for (label, fit) in [("U1", &f1), ("U2", &f2)] {
        match fit {
            Ok(f) => println!(
                "fit {label}: tau = {}, sigma = {}, iterations {}",
                sig4(f.tau_hat),
                sig4(f.sigma_hat.abs()),
                f.iterations
            ),
            Err(e) => println!("fit {label}: {e}"),
        }
    }
    println!();
    print!("{}", render_estimates(&set));

    if let Some(path) = &args.csv {
        write_estimate_csv(&set, create(path)?)?;
    }
    match f1 {
        Ok(_) => Ok(EXIT_OK),
        Err(e) => {
            eprintln!("error: U1 fit failed: {e}");
            Ok(EXIT_ESTIMATION)
        }
    }
}
