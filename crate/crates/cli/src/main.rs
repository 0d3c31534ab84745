use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};

use aadmm::admm::{run_variant, RunRecord, RunStatus, Termination, TraceLevel};
use aadmm::bench::{
    emit_outputs, render_table, run_benchmark_with, trace_file_name, BenchConfig, BenchRow, BenchVariant, OutputFormat,
};
use aadmm::generate::{generate, Family, InstanceSpec};
use aadmm::io::{
    read_certificate, read_file, read_instance, verify_certificate, write_certificate, write_file, write_instance,
    CertificateFile, InstanceFile,
};
use aadmm::IoError;

const OUT_DIR_ENV: &str = "AADMM_OUT_DIR";

const EXIT_ERROR: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "aadmm", version, about = "Adaptive proximal ADMM: instance generation, solving and benchmarks")]
struct Cli {
    /// Directory for outputs given as relative paths. Precedence: this flag,
    /// then the bench config's `output.dir`, then `AADMM_OUT_DIR`.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write generated instances as JSON.
    Gen(GenArgs),
    /// Solve one instance with one variant.
    Solve(SolveArgs),
    /// Run a benchmark grid from a TOML config.
    Bench(BenchArgs),
    /// Re-check a certificate against an instance.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_parser = parse_family)]
    family: Family,
    #[arg(long = "blocks", short = 'B')]
    blocks: usize,
    #[arg(long, default_value_t = 1)]
    nbar: usize,
    #[arg(long, short = 'l')]
    l: usize,
    #[arg(long, default_value_t = 100.0)]
    omega: f64,
    /// One file per seed.
    #[arg(long = "seed", required = true, num_args = 1..)]
    seeds: Vec<u64>,
    /// Output file; only valid with a single seed.
    #[arg(long, short = 'o')]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    instance: PathBuf,
    #[arg(long, default_value = "A-ADMM-Adapt")]
    variant: BenchVariant,
    #[arg(long, default_value_t = 1e-5)]
    rho: f64,
    #[arg(long, default_value_t = 1e-5)]
    eta: f64,
    /// Compare tolerances against unscaled residuals.
    #[arg(long)]
    absolute: bool,
    #[arg(long, default_value_t = 500_000)]
    iter_cap: usize,
    #[arg(long, default_value_t = 100.0)]
    lambda0: f64,
    /// JSON-lines sweep trace; `-` writes to stdout.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Include per-block records in the trace.
    #[arg(long)]
    trace_blocks: bool,
    #[arg(long)]
    certificate: Option<PathBuf>,
}

/// Flags override the corresponding config-file values.
#[derive(Args)]
struct BenchArgs {
    config: PathBuf,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long = "seed", num_args = 1..)]
    seeds: Vec<u64>,
    #[arg(long = "variant", num_args = 1..)]
    variants: Vec<BenchVariant>,
    #[arg(long)]
    iter_cap: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    trace: bool,
    #[arg(long)]
    json: Option<PathBuf>,
    /// Print the table only; write no files.
    #[arg(long)]
    no_files: bool,
}

#[derive(Args)]
struct VerifyArgs {
    instance: PathBuf,
    certificate: PathBuf,
}

fn parse_family(s: &str) -> Result<Family, String> {
    s.parse().map_err(|e: aadmm::GenerateError| e.to_string())
}

enum Failure {
    Config(String),
    Run(String),
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Config(_) | IoError::Schema { .. } | IoError::Toml(_) => Failure::Config(e.to_string()),
            _ => Failure::Run(e.to_string()),
        }
    }
}

fn resolve(out_dir: Option<&Path>, path: &Path) -> PathBuf {
    match out_dir {
        Some(dir) if path.is_relative() => dir.join(path),
        _ => path.to_path_buf(),
    }
}

fn env_out_dir() -> Option<PathBuf> {
    std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

fn cmd_gen(args: GenArgs, out_dir: Option<&Path>) -> Result<(), Failure> {
    if args.output.is_some() && args.seeds.len() > 1 {
        return Err(Failure::Config("--output needs exactly one --seed".into()));
    }
    for &seed in &args.seeds {
        let spec = InstanceSpec::new(args.family, args.blocks, args.nbar, args.l, args.omega, seed);
        let inst = generate(&spec).map_err(|e| Failure::Config(e.to_string()))?;
        let name = args.output.clone().unwrap_or_else(|| {
            PathBuf::from(format!(
                "{}_w{}_{}x{}x{}_s{}.json",
                spec.family, spec.omega, spec.blocks, spec.nbar, spec.l, seed
            ))
        });
        let path = resolve(out_dir, &name);
        write_instance(&path, &InstanceFile::from_generated(&inst))?;
        println!("{}", path.display());
    }
    Ok(())
}

fn write_trace(path: &Path, rec: &RunRecord) -> Result<(), Failure> {
    let mut buf = Vec::new();
    for r in &rec.trace {
        serde_json::to_writer(&mut buf, r).map_err(|e| Failure::Run(e.to_string()))?;
        buf.push(b'\n');
    }
    if path == Path::new("-") {
        std::io::stdout().write_all(&buf).map_err(|e| Failure::Run(e.to_string()))?;
        Ok(())
    } else {
        Ok(write_file(path, &buf)?)
    }
}

fn cmd_solve(args: SolveArgs, out_dir: Option<&Path>) -> Result<RunStatus, Failure> {
    let inst = read_instance(&args.instance)?;
    let x0 = inst.start();
    let bench = BenchConfig {
        schema: aadmm::io::BENCH_SCHEMA.into(),
        grid: Vec::new(),
        seeds: Vec::new(),
        variants: vec![args.variant],
        rho: args.rho,
        eta: args.eta,
        termination: if args.absolute {
            Termination::Absolute
        } else {
            Termination::Relative
        },
        iter_cap: args.iter_cap,
        lambda0: args.lambda0,
        threads: 1,
        trace: args.trace.is_some(),
        output: Default::default(),
    };
    let mut cfg = bench.solver_config(args.variant);
    if args.trace_blocks {
        cfg.trace = TraceLevel::Blocks;
    }
    let rec = run_variant(&inst.problem, &x0, args.variant.variant, &cfg);
    if let Some(path) = &args.trace {
        let path = if path == Path::new("-") {
            path.clone()
        } else {
            resolve(out_dir, path)
        };
        write_trace(&path, &rec)?;
    }
    if let Some(path) = &args.certificate {
        if let Some(file) = CertificateFile::from_run(&rec, &cfg) {
            write_certificate(&resolve(out_dir, path), &file)?;
        }
    }
    let summary = serde_json::json!({
        "variant": args.variant.to_string(),
        "status": rec.status.as_str(),
        "iters": rec.iters,
        "mults": rec.mults,
        "time_s": rec.wall_time,
        "objective": rec.objective,
        "penalty_final": rec.penalty_final,
        "outer_calls": rec.outer_calls,
        "certificate_verified": rec.certificate_verified,
        "error": rec.error,
    });
    if args.trace.as_deref() != Some(Path::new("-")) {
        println!("{summary}");
    } else {
        eprintln!("{summary}");
    }
    if rec.status == RunStatus::Error {
        return Err(Failure::Run(rec.error.unwrap_or_default()));
    }
    Ok(rec.status)
}

fn cmd_bench(args: BenchArgs, out_dir: Option<&Path>) -> Result<bool, Failure> {
    let text = read_file(&args.config)?;
    let mut cfg: BenchConfig = toml::from_str(&text).map_err(|e| Failure::Config(e.to_string()))?;
    if let Some(t) = args.threads {
        cfg.threads = t;
    }
    if !args.seeds.is_empty() {
        cfg.seeds = args.seeds;
    }
    if !args.variants.is_empty() {
        cfg.variants = args.variants;
    }
    if let Some(c) = args.iter_cap {
        cfg.iter_cap = c;
    }
    if let Some(r) = args.rho {
        cfg.rho = r;
    }
    if let Some(e) = args.eta {
        cfg.eta = e;
    }
    cfg.trace |= args.trace;
    if let Some(j) = args.json {
        cfg.output.json = Some(j);
    }
    cfg.validate()?;

    let dir = out_dir
        .map(Path::to_path_buf)
        .or(cfg.output.dir.clone())
        .or_else(env_out_dir);
    let trace_dir = dir.clone().unwrap_or_default().join("traces");
    let trace_errors: Mutex<Vec<String>> = Mutex::new(Vec::new());
    let sink = |row: &BenchRow, rec: &RunRecord| {
        let path = trace_dir.join(trace_file_name(row));
        if let Err(Failure::Run(e) | Failure::Config(e)) = write_trace(&path, rec) {
            trace_errors.lock().expect("trace error list").push(e);
        }
    };
    let rows = run_benchmark_with(&cfg, if cfg.trace && !args.no_files { Some(&sink) } else { None })?;
    if let Some(e) = trace_errors.into_inner().expect("trace error list").first() {
        return Err(Failure::Run(e.clone()));
    }

    print!("{}", render_table(&rows));
    if !args.no_files {
        let place = |name: &Path| match &dir {
            Some(d) if name.is_relative() => d.join(name),
            _ => name.to_path_buf(),
        };
        let csv = place(cfg.output.csv.as_deref().unwrap_or(Path::new("results.csv")));
        let table = place(cfg.output.table.as_deref().unwrap_or(Path::new("results.txt")));
        emit_outputs(&rows, OutputFormat::Csv, &csv)?;
        emit_outputs(&rows, OutputFormat::Table, &table)?;
        if let Some(json) = &cfg.output.json {
            emit_outputs(&rows, OutputFormat::Json, &place(json))?;
        }
        eprintln!("wrote {}", csv.display());
    }
    Ok(rows.iter().all(|r| r.status != RunStatus::Error))
}

fn cmd_verify(args: VerifyArgs) -> Result<bool, Failure> {
    let inst = read_instance(&args.instance)?;
    let cert = read_certificate(&args.certificate)?;
    let report = verify_certificate(&inst.problem, &cert)?;
    println!("{}", serde_json::to_string(&report).map_err(|e| Failure::Run(e.to_string()))?);
    Ok(report.passed())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let flag_dir = cli.out_dir.as_deref();
    let default_dir = cli.out_dir.clone().or_else(env_out_dir);
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a, default_dir.as_deref()).map(|_| true),
        Command::Solve(a) => cmd_solve(a, default_dir.as_deref()).map(|_| true),
        Command::Bench(a) => cmd_bench(a, flag_dir),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_ERROR),
        Err(Failure::Config(msg)) => {
            eprintln!("invalid configuration: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
