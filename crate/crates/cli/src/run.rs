//! Executes a parsed command and assembles the report document.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use log::info;
use nalgebra::{DMatrix, DVector};
use scboot::simulation::{delta_seed, rejection_rate, validate_deltas};
use scboot::{
    loocv_select, mv_select, BandwidthGrid, BandwidthRule, Case, ContrastMatrix, CrfInference, Dataset, Experiment,
    KernelId, LocalEstimator, LossSpec, Perturbation, ShapeConstraint, SimTest, TableRow, TestConfig, TestReport,
};
use serde::{Deserialize, Serialize};

use crate::args::{Cli, Command, ContrastArgs, DataArgs, FitArgs, InferenceArgs, SimulateArgs};
use crate::error::{CliError, CliResult};
use crate::ingest::{ingest_csv, Schema};

/// Data-driven bandwidth choices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSummary {
    pub b: f64,
    pub b_candidates: Vec<f64>,
    pub b_scores: Vec<Option<f64>>,
    pub c: f64,
    pub c_candidates: Vec<f64>,
    pub c_ise: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum RunResult {
    Test(TestReport),
    Bandwidth(BandwidthSummary),
    Simulation { rows: Vec<TableRow> },
}

/// Structured output of one invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// The command exactly as parsed; rerunning it reproduces `result`.
    pub config: Command,
    pub coefficients: Vec<String>,
    pub elapsed_ms: u64,
    pub result: RunResult,
}

impl ReportDocument {
    /// Appends the document as one JSON line.
    pub fn append_to(&self, path: &Path) -> CliResult<()> {
        let wrap = |source| CliError::Write { path: path.to_path_buf(), source };
        let line = serde_json::to_string(self).map_err(|e| CliError::Config(e.to_string()))?;
        let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(wrap)?;
        writeln!(file, "{line}").map_err(wrap)
    }

    /// One-paragraph human-readable summary.
    pub fn summary(&self) -> String {
        match &self.result {
            RunResult::Test(r) => format!(
                "{} on n = {} (b = {:.4}, c = {:.4}, range [{}, {}], B = {})\n  statistic {:.4}  critical value {:.4} at alpha = {}  p-value {:.4}\n  {}",
                r.kind,
                r.n,
                r.b,
                r.c,
                r.trim.lower,
                r.trim.upper,
                r.bootstrap_reps,
                r.statistic,
                r.critical_value,
                r.alpha,
                r.p_value,
                if r.reject { "reject the null hypothesis" } else { "do not reject the null hypothesis" }
            ),
            RunResult::Bandwidth(s) => format!("b = {:.5} (cross-validation)\nc = {:.5} (minimum volatility)", s.b, s.c),
            RunResult::Simulation { rows } => {
                let mut out = String::from("case  n  loss  test  delta  alpha  reps  rate  se");
                for r in rows {
                    out.push_str(&format!(
                        "\n{}  {}  {}  {}  {}  {}  {}  {:.4}  {:.4}",
                        r.case, r.n, r.loss, r.test, r.delta, r.alpha, r.reps, r.rate, r.se
                    ));
                }
                out
            }
        }
    }
}

/// `squared`, `quantile:0.5`, `huber:1.345`, `expectile:0.3`, `lq:1.5`.
pub fn parse_loss(text: &str) -> CliResult<LossSpec> {
    let (name, param) = match text.split_once(':') {
        Some((n, p)) => {
            let v = p.trim().parse::<f64>().map_err(|_| CliError::Config(format!("bad loss parameter in '{text}'")))?;
            (n.trim(), Some(v))
        }
        None => (text.trim(), None),
    };
    let need = |v: Option<f64>| v.ok_or_else(|| CliError::Config(format!("loss '{name}' needs a parameter, e.g. {name}:0.5")));
    let loss = match name {
        "squared" | "l2" => LossSpec::Squared,
        "quantile" => LossSpec::Quantile { tau: need(param)? },
        "huber" => LossSpec::Huber { threshold: need(param)? },
        "expectile" => LossSpec::Expectile { alpha: need(param)? },
        "lq" => LossSpec::Lq { q: need(param)? },
        other => return Err(CliError::Config(format!("unknown loss '{other}'"))),
    };
    loss.validate()?;
    Ok(loss)
}

pub fn parse_kernel(text: &str) -> CliResult<KernelId> {
    match text {
        "epanechnikov" => Ok(KernelId::Epanechnikov),
        "quartic" | "biweight" => Ok(KernelId::Quartic),
        other => Err(CliError::Config(format!("unknown kernel '{other}'"))),
    }
}

fn estimator(fit: &FitArgs) -> CliResult<LocalEstimator> {
    Ok(LocalEstimator::new(parse_loss(&fit.loss)?, parse_kernel(&fit.kernel)?)?)
}

fn schema(data: &DataArgs) -> Schema {
    Schema {
        response: data.response.clone(),
        covariates: data.covariates.clone(),
        time: data.time.clone(),
        intercept: !data.no_intercept,
    }
}

/// Builds the contrast from `--contrast` rows or `--col` names; defaults to
/// all coefficients.
pub fn resolve_contrast(args: &ContrastArgs, names: &[String]) -> CliResult<ContrastMatrix> {
    let p = names.len();
    if let Some(text) = &args.contrast {
        let rows: Vec<Vec<f64>> = text
            .split(';')
            .map(|row| {
                row.split(',')
                    .map(|v| v.trim().parse::<f64>().map_err(|_| CliError::Config(format!("bad contrast entry '{v}'"))))
                    .collect()
            })
            .collect::<CliResult<_>>()?;
        if rows.iter().any(|r| r.len() != p) {
            return Err(CliError::Config(format!("each contrast row needs {p} entries")));
        }
        let m = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        return Ok(ContrastMatrix::new(m)?);
    }
    if args.cols.is_empty() {
        return Ok(ContrastMatrix::identity(p));
    }
    let index = |name: &str| -> CliResult<usize> {
        if let Some(k) = names.iter().position(|n| n == name) {
            return Ok(k);
        }
        if let Some(k) = name.strip_prefix("beta").and_then(|s| s.parse::<usize>().ok()) {
            if k < p {
                return Ok(k);
            }
        }
        Err(CliError::Config(format!("unknown coefficient '{name}'; available: {}", names.join(", "))))
    };
    let cols = args.cols.iter().map(|c| index(c)).collect::<CliResult<Vec<_>>>()?;
    let m = DMatrix::from_fn(cols.len(), p, |i, j| if cols[i] == j { 1.0 } else { 0.0 });
    Ok(ContrastMatrix::new(m)?)
}

fn parse_positive(text: &str, what: &str) -> CliResult<f64> {
    match text.parse::<f64>() {
        Ok(v) if v > 0.0 => Ok(v),
        _ => Err(CliError::Config(format!("{what} must be positive, got '{text}'"))),
    }
}

fn resolve_bandwidths(
    data: &Dataset,
    est: &LocalEstimator,
    contrast: &ContrastMatrix,
    b: &str,
    c: &str,
) -> CliResult<(f64, f64)> {
    let b = match b {
        "auto" => loocv_select(data, est, &BandwidthGrid::loocv_default(data.n())?)?.chosen,
        v => parse_positive(v, "b")?,
    };
    let c = match c {
        "auto" => mv_select(data, est, contrast, &BandwidthGrid::mv_default(data.n())?, 5)?.chosen,
        "half" => 0.5 * b,
        v => parse_positive(v, "c")?,
    };
    info!("bandwidths b = {b:.5}, c = {c:.5}");
    Ok((b, c))
}

struct Prepared {
    inference: CrfInference,
    names: Vec<String>,
}

fn prepare(data_args: &DataArgs, fit: &FitArgs, inf: &InferenceArgs) -> CliResult<Prepared> {
    let schema = schema(data_args);
    let data = ingest_csv(&data_args.input, &schema)?;
    let names = schema.coefficient_names();
    let est = estimator(fit)?;
    let contrast = resolve_contrast(&inf.contrast, &names)?;
    let (b, c) = resolve_bandwidths(&data, &est, &contrast, &inf.b, &inf.c)?;
    let config = TestConfig {
        loss: est.loss,
        kernel: est.kernel,
        contrast,
        b,
        c,
        bootstrap_reps: inf.bootstrap,
        alpha: inf.alpha,
        seed: inf.seed,
    };
    Ok(Prepared { inference: CrfInference::prepare(&data, &config)?, names })
}

/// Reads reference values `f(t_i)` (one column per contrast row) and
/// interpolates linearly between grid points.
fn reference_from_file(path: &Path, n: usize, s: usize) -> CliResult<Vec<DVector<f64>>> {
    let file = std::fs::File::open(path).map_err(|source| CliError::Open { path: path.to_path_buf(), source })?;
    let mut reader = csv::Reader::from_reader(file);
    let mut rows = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Parse { row: k + 1, message: e.to_string() })?;
        if rec.len() != s {
            return Err(CliError::Parse { row: k + 1, message: format!("expected {s} columns, found {}", rec.len()) });
        }
        let values = rec
            .iter()
            .map(|v| {
                v.trim().parse::<f64>().map_err(|_| CliError::NonNumeric {
                    row: k + 1,
                    column: "reference".into(),
                    value: v.to_string(),
                })
            })
            .collect::<CliResult<Vec<f64>>>()?;
        rows.push(DVector::from_vec(values));
    }
    if rows.len() != n {
        return Err(CliError::Config(format!("reference file has {} rows, data has {n}", rows.len())));
    }
    Ok(rows)
}

fn interpolate_grid(rows: &[DVector<f64>], t: f64) -> DVector<f64> {
    let n = rows.len();
    let x = (t * n as f64).clamp(1.0, n as f64);
    let lo = (x.floor() as usize).clamp(1, n);
    let hi = (lo + 1).min(n);
    let w = x - lo as f64;
    &rows[lo - 1] * (1.0 - w) + &rows[hi - 1] * w
}

fn family_degree(name: &str) -> CliResult<usize> {
    match name {
        "constant" => Ok(0),
        "linear" => Ok(1),
        "quadratic" => Ok(2),
        "cubic" => Ok(3),
        other => Err(CliError::Config(format!("unknown family '{other}'"))),
    }
}

/// `eft`, `constancy`, `linearity`, `polyQ`, `qt-SHAPE`.
pub fn parse_sim_test(text: &str) -> CliResult<SimTest> {
    Ok(match text {
        "eft" => SimTest::Eft,
        "constancy" => SimTest::Poly { degree: 0 },
        "linearity" => SimTest::Poly { degree: 1 },
        t if t.starts_with("poly") => SimTest::Poly {
            degree: t[4..].parse().map_err(|_| CliError::Config(format!("bad polynomial degree in '{t}'")))?,
        },
        t if t.starts_with("qt-") => SimTest::Qt { shape: ShapeConstraint::parse(&t[3..])? },
        other => return Err(CliError::Config(format!("unknown table '{other}'"))),
    })
}

/// The experiment described by `simulate` arguments.
pub fn experiment(args: &SimulateArgs) -> CliResult<Experiment> {
    let case: Case = args.case.parse()?;
    let perturbation: Perturbation = args.perturbation.parse()?;
    let bandwidth = match args.bandwidth.as_str() {
        "auto" => BandwidthRule::LoocvMv { factor: args.factor },
        "half" => BandwidthRule::LoocvHalf { factor: args.factor },
        pair => {
            let (b, c) = pair
                .split_once(',')
                .ok_or_else(|| CliError::Config(format!("bandwidth must be auto, half or B,C; got '{pair}'")))?;
            BandwidthRule::Fixed { b: parse_positive(b.trim(), "b")?, c: parse_positive(c.trim(), "c")? }
        }
    };
    let alpha = *args.alphas.first().ok_or_else(|| CliError::Config("no significance level given".into()))?;
    if args.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
        return Err(CliError::Config("levels must lie in (0, 1)".into()));
    }
    if args.reps == 0 {
        return Err(CliError::Config("need at least one replication".into()));
    }
    Ok(Experiment {
        case,
        n: args.n,
        perturbation,
        loss: parse_loss(&args.fit.loss)?,
        kernel: parse_kernel(&args.fit.kernel)?,
        test: parse_sim_test(&args.test)?,
        contrast: if args.joint { Some(ContrastMatrix::identity(3)) } else { None },
        bandwidth,
        bootstrap_reps: args.bootstrap,
        alpha,
    })
}

/// Rejection table for `simulate`; rows ordered by delta, then level.
pub fn simulation_rows(args: &SimulateArgs) -> CliResult<Vec<TableRow>> {
    let exp = experiment(args)?;
    validate_deltas(&args.deltas)?;
    let mut rows = Vec::new();
    for (k, &delta) in args.deltas.iter().enumerate() {
        let reports = exp.reports(delta, args.reps, delta_seed(args.seed, k))?;
        for &alpha in &args.alphas {
            rows.push(TableRow::new(&exp, delta, alpha, &rejection_rate(&reports, alpha)));
        }
    }
    Ok(rows)
}

/// Writes rows as CSV.
pub fn write_table(path: &Path, rows: &[TableRow]) -> CliResult<()> {
    let wrap = |e: csv::Error| CliError::Write { path: path.to_path_buf(), source: e.into() };
    let mut w = csv::Writer::from_path(path).map_err(wrap)?;
    for row in rows {
        w.serialize(row).map_err(wrap)?;
    }
    w.flush().map_err(|source| CliError::Write { path: path.to_path_buf(), source })
}

/// Runs one command. Nothing is written to disk here.
pub fn execute(command: &Command) -> CliResult<ReportDocument> {
    let start = Instant::now();
    let (coefficients, result) = match command {
        Command::Eft(a) => {
            let prep = prepare(&a.data, &a.fit, &a.inference)?;
            let s = prep.inference.crf().dim();
            let report = match (&a.reference_file, a.value.is_empty()) {
                (Some(path), true) => {
                    let rows = reference_from_file(path, prep.inference.crf().n(), s)?;
                    prep.inference.eft_function(|t| interpolate_grid(&rows, t))?
                }
                (None, false) => {
                    if a.value.len() != s {
                        return Err(CliError::Config(format!("--value needs {s} entries, one per contrast row")));
                    }
                    let v = DVector::from_vec(a.value.clone());
                    prep.inference.eft_function(|_| v.clone())?
                }
                _ => return Err(CliError::Config("give exactly one of --value or --reference-file".into())),
            };
            (prep.names, RunResult::Test(report))
        }
        Command::Loft(a) => {
            let degree = family_degree(&a.family)?;
            let prep = prepare(&a.data, &a.fit, &a.inference)?;
            (prep.names, RunResult::Test(prep.inference.polynomial(degree)?))
        }
        Command::Poly(a) => {
            let prep = prepare(&a.data, &a.fit, &a.inference)?;
            (prep.names, RunResult::Test(prep.inference.polynomial(a.degree)?))
        }
        Command::Qt(a) => {
            let shape = ShapeConstraint::parse(&a.shape)?;
            let prep = prepare(&a.data, &a.fit, &a.inference)?;
            (prep.names, RunResult::Test(prep.inference.qt(shape)?))
        }
        Command::Bandwidth(a) => {
            let schema = schema(&a.data);
            let data = ingest_csv(&a.data.input, &schema)?;
            let names = schema.coefficient_names();
            let est = estimator(&a.fit)?;
            let contrast = resolve_contrast(&a.contrast, &names)?;
            let cv = loocv_select(&data, &est, &BandwidthGrid::loocv_default(data.n())?)?;
            let mv = mv_select(&data, &est, &contrast, &BandwidthGrid::mv_default(data.n())?, a.window)?;
            let summary = BandwidthSummary {
                b: cv.chosen,
                b_candidates: cv.candidates,
                b_scores: cv.scores,
                c: mv.chosen,
                c_candidates: mv.candidates,
                c_ise: mv.ise,
            };
            (names, RunResult::Bandwidth(summary))
        }
        Command::Simulate(a) => {
            let names = vec!["intercept".into(), "x1".into(), "x2".into()];
            (names, RunResult::Simulation { rows: simulation_rows(a)? })
        }
    };
    Ok(ReportDocument {
        tool: "scboot".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.name().into(),
        config: command.clone(),
        coefficients,
        elapsed_ms: start.elapsed().as_millis() as u64,
        result,
    })
}

/// Runs the command and writes the requested outputs.
pub fn run(cli: &Cli) -> CliResult<ReportDocument> {
    let doc = execute(&cli.command)?;
    if let (Command::Simulate(a), RunResult::Simulation { rows }) = (&cli.command, &doc.result) {
        if let Some(path) = &a.output {
            write_table(path, rows)?;
        }
    }
    if let Some(path) = &cli.report {
        doc.append_to(path)?;
    }
    Ok(doc)
}
