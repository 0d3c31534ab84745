//! Benchmark grid runner and its CSV, text-table and JSON outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admm::{run_variant, RunRecord, RunStatus, SolverConfig, StepsizeMode, Termination, TraceLevel, Variant};
use crate::error::IoError;
use crate::generate::{generate, Family, GeneratedInstance, InstanceSpec};
use crate::io::{write_file, BENCH_SCHEMA};

pub const RESULTS_SCHEMA: &str = "aadmm.results.v1";

pub const CSV_HEADER: [&str; 13] = [
    "family",
    "omega",
    "B",
    "nbar",
    "l",
    "seed",
    "variant",
    "status",
    "iters",
    "mults",
    "time_s",
    "objective",
    "penalty_final",
];

/// Index of `time_s` in [`CSV_HEADER`].
pub const TIME_COLUMN: usize = 10;

/// Outer driver paired with a stepsize rule, e.g. `A-ADMM-Adapt`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BenchVariant {
    pub variant: Variant,
    pub adaptive: bool,
}

impl BenchVariant {
    pub const ALL: [BenchVariant; 6] = [
        BenchVariant::new(Variant::AAdmm, true),
        BenchVariant::new(Variant::AAdmm, false),
        BenchVariant::new(Variant::PenaltyOnly, true),
        BenchVariant::new(Variant::PenaltyOnly, false),
        BenchVariant::new(Variant::VanillaAdmm, true),
        BenchVariant::new(Variant::VanillaAdmm, false),
    ];

    pub const fn new(variant: Variant, adaptive: bool) -> Self {
        Self { variant, adaptive }
    }

    pub fn stepsize(self, lambda0: f64) -> StepsizeMode {
        if self.adaptive {
            StepsizeMode::Adaptive { lambda0 }
        } else {
            StepsizeMode::Constant
        }
    }
}

impl std::fmt::Display for BenchVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mode = if self.adaptive { "Adapt" } else { "Const" };
        write!(f, "{}-{}", self.variant.name(), mode)
    }
}

impl FromStr for BenchVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        let (head, mode) = lower
            .rsplit_once('-')
            .ok_or_else(|| format!("variant {s:?} is not of the form <driver>-<adapt|const>"))?;
        let variant = match head {
            "a-admm" => Variant::AAdmm,
            "penalty" => Variant::PenaltyOnly,
            "v-admm" => Variant::VanillaAdmm,
            _ => return Err(format!("unknown driver in variant {s:?}")),
        };
        let adaptive = match mode {
            "adapt" => true,
            "const" => false,
            _ => return Err(format!("unknown stepsize rule in variant {s:?}")),
        };
        Ok(Self { variant, adaptive })
    }
}

impl Serialize for BenchVariant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BenchVariant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One family with its `omega` values and `(B, nbar, l)` triples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridEntry {
    pub family: Family,
    pub omega: Vec<f64>,
    pub sizes: Vec<[usize; 3]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Relative file names below resolve against this directory.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub table: Option<PathBuf>,
    #[serde(default)]
    pub json: Option<PathBuf>,
}

fn default_tol() -> f64 {
    1e-5
}

fn default_iter_cap() -> usize {
    500_000
}

fn default_lambda0() -> f64 {
    100.0
}

fn default_threads() -> usize {
    1
}

fn default_termination() -> Termination {
    Termination::Relative
}

fn default_variants() -> Vec<BenchVariant> {
    BenchVariant::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub schema: String,
    pub grid: Vec<GridEntry>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_variants")]
    pub variants: Vec<BenchVariant>,
    #[serde(default = "default_tol")]
    pub rho: f64,
    #[serde(default = "default_tol")]
    pub eta: f64,
    #[serde(default = "default_termination")]
    pub termination: Termination,
    #[serde(default = "default_iter_cap")]
    pub iter_cap: usize,
    #[serde(default = "default_lambda0")]
    pub lambda0: f64,
    /// Worker threads; 0 lets the pool pick.
    #[serde(default = "default_threads")]
    pub threads: usize,
    /// Write one JSON-lines sweep trace per row.
    #[serde(default)]
    pub trace: bool,
    #[serde(default)]
    pub output: OutputConfig,
}

impl BenchConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, IoError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), IoError> {
        let bad = |msg: String| Err(IoError::Config(msg));
        if self.schema != BENCH_SCHEMA {
            return Err(IoError::Schema {
                found: self.schema.clone(),
                expected: BENCH_SCHEMA.into(),
            });
        }
        if self.grid.is_empty() {
            return bad("grid is empty".into());
        }
        if self.seeds.is_empty() {
            return bad("no seeds".into());
        }
        if self.variants.is_empty() {
            return bad("no variants selected".into());
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) || !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad(format!("tolerances must be positive, got rho={} eta={}", self.rho, self.eta));
        }
        if self.iter_cap == 0 {
            return bad("iter_cap must be at least 1".into());
        }
        if !(self.lambda0 > 0.0 && self.lambda0.is_finite()) {
            return bad(format!("lambda0 must be positive, got {}", self.lambda0));
        }
        for entry in &self.grid {
            if entry.omega.is_empty() || entry.sizes.is_empty() {
                return bad(format!("{} grid needs at least one omega and one size", entry.family));
            }
            for &omega in &entry.omega {
                for &[b, nbar, l] in &entry.sizes {
                    InstanceSpec::new(entry.family, b, nbar, l, omega, 0)
                        .validate()
                        .map_err(|e| IoError::Config(e.to_string()))?;
                }
            }
        }
        Ok(())
    }

    /// Instances in grid order: family entry, then omega, then size, then
    /// seed.
    pub fn instances(&self) -> Vec<InstanceSpec> {
        let mut out = Vec::new();
        for entry in &self.grid {
            for &omega in &entry.omega {
                for &[b, nbar, l] in &entry.sizes {
                    for &seed in &self.seeds {
                        out.push(InstanceSpec::new(entry.family, b, nbar, l, omega, seed));
                    }
                }
            }
        }
        out
    }

    pub fn solver_config(&self, v: BenchVariant) -> SolverConfig {
        SolverConfig {
            rho: self.rho,
            eta: self.eta,
            iter_cap: self.iter_cap,
            termination: self.termination,
            trace: if self.trace { TraceLevel::Sweeps } else { TraceLevel::Off },
            ..SolverConfig::benchmark_defaults(v.variant, v.stepsize(self.lambda0))
        }
    }

    pub fn output_path(&self, name: &Path, default_dir: Option<&Path>) -> PathBuf {
        match self.output.dir.as_deref().or(default_dir) {
            Some(dir) if name.is_relative() => dir.join(name),
            _ => name.to_path_buf(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub family: Family,
    pub omega: f64,
    #[serde(rename = "B")]
    pub blocks: usize,
    pub nbar: usize,
    pub l: usize,
    pub seed: u64,
    pub variant: BenchVariant,
    pub status: RunStatus,
    pub iters: usize,
    pub mults: usize,
    pub time_s: f64,
    pub objective: f64,
    pub penalty_final: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl BenchRow {
    fn from_record(spec: &InstanceSpec, variant: BenchVariant, rec: &RunRecord) -> Self {
        Self {
            family: spec.family,
            omega: spec.omega,
            blocks: spec.blocks,
            nbar: spec.nbar,
            l: spec.l,
            seed: spec.seed,
            variant,
            status: rec.status,
            iters: rec.iters,
            mults: rec.mults,
            time_s: rec.wall_time,
            objective: rec.objective,
            penalty_final: rec.penalty_final,
            error: rec.error.clone(),
        }
    }

    fn failed(spec: &InstanceSpec, variant: BenchVariant, error: String) -> Self {
        Self {
            family: spec.family,
            omega: spec.omega,
            blocks: spec.blocks,
            nbar: spec.nbar,
            l: spec.l,
            seed: spec.seed,
            variant,
            status: RunStatus::Error,
            iters: 0,
            mults: 0,
            time_s: 0.0,
            objective: f64::NAN,
            penalty_final: f64::NAN,
            error: Some(error),
        }
    }

    pub fn size_label(&self) -> String {
        format!("({}, {}, {})", self.blocks, self.nbar, self.l)
    }
}

/// Called once per row with the sweep trace, when tracing is on.
pub type TraceSink<'a> = dyn Fn(&BenchRow, &RunRecord) + Sync + 'a;

/// Every `(instance, variant)` pair in grid order. Rows run in parallel on a
/// pool of `config.threads` workers; each solve is single-threaded, so row
/// content does not depend on the thread count.
pub fn run_benchmark(config: &BenchConfig) -> Result<Vec<BenchRow>, IoError> {
    run_benchmark_with(config, None)
}

pub fn run_benchmark_with(config: &BenchConfig, sink: Option<&TraceSink<'_>>) -> Result<Vec<BenchRow>, IoError> {
    config.validate()?;
    let specs = config.instances();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| IoError::Config(format!("thread pool: {e}")))?;
    let rows = pool.install(|| {
        let instances: Vec<Result<GeneratedInstance, String>> =
            specs.par_iter().map(|s| generate(s).map_err(|e| e.to_string())).collect();
        let jobs: Vec<(usize, BenchVariant)> = (0..specs.len())
            .flat_map(|i| config.variants.iter().map(move |&v| (i, v)))
            .collect();
        jobs.par_iter()
            .map(|&(i, v)| match &instances[i] {
                Err(e) => BenchRow::failed(&specs[i], v, e.clone()),
                Ok(inst) => {
                    let cfg = config.solver_config(v);
                    let rec = run_variant(&inst.problem, &inst.x0, v.variant, &cfg);
                    let row = BenchRow::from_record(&specs[i], v, &rec);
                    if let Some(sink) = sink {
                        sink(&row, &rec);
                    }
                    row
                }
            })
            .collect()
    });
    Ok(rows)
}

/// Scientific notation with three decimals and a signed two-digit exponent,
/// e.g. `-9.431e+04`.
pub fn format_sci(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let s = format!("{x:.3e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}

fn format_omega(x: f64) -> String {
    format!("{x}")
}

fn csv_record(row: &BenchRow) -> [String; 13] {
    [
        row.family.to_string(),
        format_omega(row.omega),
        row.blocks.to_string(),
        row.nbar.to_string(),
        row.l.to_string(),
        row.seed.to_string(),
        row.variant.to_string(),
        row.status.as_str().to_string(),
        row.iters.to_string(),
        row.mults.to_string(),
        format!("{:.3}", row.time_s),
        format_sci(row.objective),
        format_sci(row.penalty_final),
    ]
}

pub fn write_csv<W: std::io::Write>(rows: &[BenchRow], out: W) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for row in rows {
        w.write_record(csv_record(row))?;
    }
    w.flush().map_err(|source| IoError::Io {
        path: "<csv>".into(),
        source,
    })?;
    Ok(())
}

pub fn csv_string(rows: &[BenchRow]) -> Result<String, IoError> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

fn parse_status(s: &str) -> Result<RunStatus, String> {
    match s {
        "converged" => Ok(RunStatus::Converged),
        "itercap" => Ok(RunStatus::IterCap),
        "error" => Ok(RunStatus::Error),
        _ => Err(format!("unknown status {s:?}")),
    }
}

/// Parses CSV written by [`write_csv`]. Error messages are not stored in the
/// CSV, so parsed rows carry `error: None`.
pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<BenchRow>, IoError> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(IoError::Config(format!("unexpected CSV header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or_default();
        let err = |what: &str, e: String| IoError::Config(format!("row {}: {what}: {e}", line + 1));
        let int = |i: usize| field(i).parse::<usize>().map_err(|e| err(CSV_HEADER[i], e.to_string()));
        let float = |i: usize| field(i).parse::<f64>().map_err(|e| err(CSV_HEADER[i], e.to_string()));
        rows.push(BenchRow {
            family: field(0).parse().map_err(|e: crate::error::GenerateError| err("family", e.to_string()))?,
            omega: float(1)?,
            blocks: int(2)?,
            nbar: int(3)?,
            l: int(4)?,
            seed: field(5).parse().map_err(|e: std::num::ParseIntError| err("seed", e.to_string()))?,
            variant: field(6).parse().map_err(|e| err("variant", e))?,
            status: parse_status(field(7)).map_err(|e| err("status", e))?,
            iters: int(8)?,
            mults: int(9)?,
            time_s: float(10)?,
            objective: float(11)?,
            penalty_final: float(12)?,
            error: None,
        });
    }
    Ok(rows)
}

/// Aligned text tables, one per `(omega, family)` group, with one line per
/// instance and `Iter`/`Time`/`Obj` columns per variant. Runs that hit the
/// sweep cap show `*` as their iteration count.
pub fn render_table(rows: &[BenchRow]) -> String {
    let mut variants: Vec<BenchVariant> = Vec::new();
    let mut groups: Vec<((u64, Family), Vec<&BenchRow>)> = Vec::new();
    for row in rows {
        if !variants.contains(&row.variant) {
            variants.push(row.variant);
        }
        let key = (row.omega.to_bits(), row.family);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, g)) => g.push(row),
            None => groups.push((key, vec![row])),
        }
    }

    let mut out = String::new();
    for ((omega_bits, family), group) in &groups {
        let _ = writeln!(out, "{family}, omega = {}", format_omega(f64::from_bits(*omega_bits)));
        let mut lines: BTreeMap<usize, (String, u64, BTreeMap<usize, &BenchRow>)> = BTreeMap::new();
        let mut order: Vec<(usize, usize, usize, u64)> = Vec::new();
        for row in group {
            let key = (row.blocks, row.nbar, row.l, row.seed);
            let idx = match order.iter().position(|k| *k == key) {
                Some(i) => i,
                None => {
                    order.push(key);
                    order.len() - 1
                }
            };
            let vidx = variants.iter().position(|v| *v == row.variant).expect("variant seen");
            lines
                .entry(idx)
                .or_insert_with(|| (row.size_label(), row.seed, BTreeMap::new()))
                .2
                .insert(vidx, row);
        }

        let mut header = vec!["(B, nbar, l)".to_string(), "seed".to_string()];
        for v in &variants {
            header.push(format!("{v} Iter"));
            header.push("Time".into());
            header.push("Obj".into());
        }
        let mut table: Vec<Vec<String>> = vec![header];
        for (label, seed, cells) in lines.values() {
            let mut line = vec![label.clone(), seed.to_string()];
            for vidx in 0..variants.len() {
                match cells.get(&vidx) {
                    None => line.extend(["-".to_string(), "-".to_string(), "-".to_string()]),
                    Some(row) => {
                        let iters = match row.status {
                            RunStatus::Converged => row.iters.to_string(),
                            RunStatus::IterCap => "*".into(),
                            RunStatus::Error => "error".into(),
                        };
                        line.push(iters);
                        line.push(format!("{:.3}", row.time_s));
                        line.push(format_sci(row.objective));
                    }
                }
            }
            table.push(line);
        }
        let ncols = table[0].len();
        let widths: Vec<usize> = (0..ncols)
            .map(|j| table.iter().map(|l| l[j].len()).max().unwrap_or(0))
            .collect();
        for line in &table {
            let cells: Vec<String> = line
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(j, (c, w))| if j < 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out.push('\n');
    }
    if rows.iter().any(|r| r.status == RunStatus::IterCap) {
        out.push_str("* sweep cap reached before the tolerances were met\n");
    }
    out
}

#[derive(Serialize)]
struct ResultsDocument<'a> {
    schema: &'static str,
    rows: &'a [BenchRow],
}

/// JSON document of all rows. Non-finite floats become `null`.
pub fn results_json(rows: &[BenchRow]) -> Result<String, IoError> {
    let mut s = serde_json::to_string_pretty(&ResultsDocument {
        schema: RESULTS_SCHEMA,
        rows,
    })?;
    s.push('\n');
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Table,
    Json,
}

pub fn emit_outputs(rows: &[BenchRow], format: OutputFormat, path: &Path) -> Result<(), IoError> {
    if rows.is_empty() {
        return Err(IoError::Config("no rows to write".into()));
    }
    let bytes = match format {
        OutputFormat::Csv => csv_string(rows)?.into_bytes(),
        OutputFormat::Table => render_table(rows).into_bytes(),
        OutputFormat::Json => results_json(rows)?.into_bytes(),
    };
    write_file(path, &bytes)
}

/// Trace file name for a row, unique within one benchmark.
pub fn trace_file_name(row: &BenchRow) -> String {
    format!(
        "{}_w{}_{}x{}x{}_s{}_{}.jsonl",
        row.family,
        format_omega(row.omega),
        row.blocks,
        row.nbar,
        row.l,
        row.seed,
        row.variant.to_string().to_ascii_lowercase()
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(variants: &str) -> String {
        format!(
            r#"
schema = "aadmm.bench.v1"
seeds = [1]
variants = {variants}
iter_cap = 20000

[[grid]]
family = "dqp"
omega = [10.0]
sizes = [[2, 3, 2]]
"#
        )
    }

    #[test]
    fn sci_format() {
        assert_eq!(format_sci(-94310.0), "-9.431e+04");
        assert_eq!(format_sci(1.5e-7), "1.500e-07");
        assert_eq!(format_sci(0.0), "0.000e+00");
        assert_eq!(format_sci(1e100), "1.000e+100");
        assert_eq!(format_sci(f64::NAN), "nan");
    }

    #[test]
    fn variant_names_round_trip() {
        for v in BenchVariant::ALL {
            assert_eq!(v.to_string().parse::<BenchVariant>().unwrap(), v);
        }
        assert_eq!("a-admm-adapt".parse::<BenchVariant>().unwrap(), BenchVariant::ALL[0]);
        assert!("a-admm".parse::<BenchVariant>().is_err());
        assert!("x-admm-adapt".parse::<BenchVariant>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(BenchConfig::from_toml_str(&config(r#"["A-ADMM-Adapt"]"#)).is_ok());
        assert!(matches!(BenchConfig::from_toml_str(&config("[]")), Err(IoError::Config(_))));
        let cfg = BenchConfig::from_toml_str(&config(r#"["A-ADMM-Adapt"]"#).replace("omega = [10.0]", "omega = [-1.0]"));
        assert!(cfg.is_err());
        let cfg = config(r#"["A-ADMM-Adapt"]"#).replace("bench.v1", "bench.v2");
        assert!(matches!(BenchConfig::from_toml_str(&cfg), Err(IoError::Schema { .. })));
        let defaults = BenchConfig::from_toml_str(&config(r#"["A-ADMM-Adapt"]"#).replace("variants = [\"A-ADMM-Adapt\"]\n", ""));
        assert_eq!(defaults.unwrap().variants.len(), 6);
    }

    #[test]
    fn one_instance_two_variants() {
        let cfg = BenchConfig::from_toml_str(&config(r#"["A-ADMM-Adapt", "A-ADMM-Const"]"#)).unwrap();
        let rows = run_benchmark(&cfg).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.status == RunStatus::Converged), "{rows:?}");
        let text = csv_string(&rows).unwrap();
        assert!(text.starts_with("family,omega,B,nbar,l,seed,variant,status,iters,mults,time_s,objective,penalty_final\n"));
        let back = read_csv(text.as_bytes()).unwrap();
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!((a.family, a.blocks, a.nbar, a.l, a.seed), (b.family, b.blocks, b.nbar, b.l, b.seed));
            assert_eq!((a.variant, a.status, a.iters, a.mults), (b.variant, b.status, b.iters, b.mults));
            assert_eq!(a.omega, b.omega);
        }
    }

    #[test]
    fn itercap_renders_star() {
        let cfg = BenchConfig::from_toml_str(&config(r#"["Penalty-Adapt"]"#).replace("20000", "3")).unwrap();
        let rows = run_benchmark(&cfg).unwrap();
        assert_eq!(rows[0].status, RunStatus::IterCap);
        assert!(rows[0].iters <= 3);
        let table = render_table(&rows);
        let line = table.lines().nth(2).unwrap();
        assert!(line.split_whitespace().any(|c| c == "*"), "{table}");
        assert!(csv_string(&rows).unwrap().contains(",itercap,"));
    }

    #[test]
    fn empty_rows_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_outputs(&[], OutputFormat::Csv, &dir.path().join("x.csv")).is_err());
        assert!(!dir.path().join("x.csv").exists());
    }
}
