//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for input problems (I/O, parse, validation,
//! unknown names, measurement errors), 2 when an analysis fails to solve.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use thiserror::Error;

use crate::devices::{CcciiParams, RxSpec, SourceWave};
use crate::experiments::{self, Experiment, ExperimentError, ReportRow};
use crate::measure::{self, MeasureError, Measurement};
use crate::netlist::{
    parse_netlist, parse_value, validate, Directive, ElementValue, NetlistDocument, NetlistError,
};
use crate::solver::{self, NewtonOptions, SolveError, StartPolicy, Waveform};

#[derive(Debug, Parser)]
#[command(
    name = "convsim",
    version,
    about = "MNA simulator with a behavioral CCCII model"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Csv)]
    pub format: OutputFormat,
    /// Write output to a file instead of standard output.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Emit `time,value` pairs for one node instead of the measurements.
    #[arg(long, global = true, value_name = "NODE")]
    pub dump_waveform: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the analyses and measurements of a netlist file.
    Run { file: PathBuf },
    /// Run a named reproduction experiment (fig6, fig7, fig8, table2, ferri, ideal, all).
    Experiment { name: String },
    /// Sweep one parameter of a netlist file or single-circuit experiment.
    Sweep {
        base: String,
        /// Element name (`R2`), `<element>.<key>` (`XCC.IB`) or a conveyor key (`IB`).
        #[arg(long)]
        param: String,
        #[arg(long, value_parser = parse_number)]
        from: f64,
        #[arg(long, value_parser = parse_number)]
        to: f64,
        #[arg(long)]
        points: usize,
        /// Logarithmic spacing.
        #[arg(long)]
        log: bool,
    },
}

fn parse_number(s: &str) -> Result<f64, String> {
    parse_value(s).ok_or_else(|| format!("invalid number `{s}`"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Csv,
    Table,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub format: OutputFormat,
    pub out: Option<PathBuf>,
    pub dump_waveform: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            format: OutputFormat::Csv,
            out: None,
            dump_waveform: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSpec {
    pub from: f64,
    pub to: f64,
    pub points: usize,
    pub log: bool,
}

impl SweepSpec {
    pub fn values(&self) -> Result<Vec<f64>, CliError> {
        if self.points < 2 {
            return Err(CliError::Usage("a sweep needs at least 2 points".into()));
        }
        if self.log && !(self.from > 0.0 && self.to > 0.0) {
            return Err(CliError::Usage("log sweeps need positive bounds".into()));
        }
        let last = (self.points - 1) as f64;
        Ok((0..self.points)
            .map(|i| {
                if i == self.points - 1 {
                    return self.to;
                }
                let f = i as f64 / last;
                if self.log {
                    self.from * (self.to / self.from).powf(f)
                } else {
                    self.from + (self.to - self.from) * f
                }
            })
            .collect())
    }
}

/// One output row: `name,param,value,metric,result,unit`.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub param: String,
    pub value: String,
    pub metric: String,
    pub result: String,
    pub unit: String,
}

impl Record {
    fn new(name: &str, metric: impl Into<String>, result: impl ToString, unit: &str) -> Self {
        Self {
            name: name.to_string(),
            param: String::new(),
            value: String::new(),
            metric: metric.into(),
            result: result.to_string(),
            unit: unit.to_string(),
        }
    }

    fn fields(&self) -> [&str; 6] {
        [
            &self.name,
            &self.param,
            &self.value,
            &self.metric,
            &self.result,
            &self.unit,
        ]
    }
}

pub const HEADER: [&str; 6] = ["name", "param", "value", "metric", "result", "unit"];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {source}", line = .source.line().map_or(String::new(), |l| l.to_string()))]
    Parse {
        path: String,
        #[source]
        source: NetlistError,
    },
    #[error("{path}: {source}")]
    Validate {
        path: String,
        #[source]
        source: NetlistError,
    },
    #[error("{path}: {analysis} analysis failed: {source}")]
    Solve {
        path: String,
        analysis: String,
        #[source]
        source: SolveError,
    },
    #[error("{path}: {measure}: {source}")]
    Measure {
        path: String,
        measure: String,
        #[source]
        source: MeasureError,
    },
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("parameter `{param}`: {reason}")]
    InvalidParameterValue { param: String, reason: String },
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Solve { .. } => 2,
            CliError::Experiment(ExperimentError::Solve(_)) => 2,
            _ => 1,
        }
    }
}

/// Output of one command before it is written anywhere.
#[derive(Debug, Clone, PartialEq)]
pub enum Output {
    Records(Vec<Record>),
    Trace { node: String, waveform: Waveform },
}

/// Results of executing one netlist document.
struct Execution {
    records: Vec<Record>,
    waveform: Waveform,
}

fn execute_doc(doc: &NetlistDocument, name: &str, path: &str) -> Result<Execution, CliError> {
    let circuit = validate(doc).map_err(|source| CliError::Validate {
        path: path.into(),
        source,
    })?;
    let opts = NewtonOptions::default();
    let mut records = Vec::new();
    let mut tran = None;
    let mut op = None;
    let has_analysis = doc
        .directives
        .iter()
        .any(|d| matches!(d, Directive::Op | Directive::Tran { .. }));
    let solve_err = |analysis: &str| {
        let analysis = analysis.to_string();
        let path = path.to_string();
        move |source| CliError::Solve {
            path,
            analysis,
            source,
        }
    };
    let run_op = |records: &mut Vec<Record>| -> Result<Waveform, CliError> {
        let w = solver::solve_at(&circuit, &[0.0], &opts, StartPolicy::Cold)
            .map_err(solve_err(".op"))?;
        for (node, v) in circuit.node_names().iter().zip(&w.solutions[0].voltages) {
            records.push(Record::new(name, format!("v({node})"), v, "V"));
        }
        Ok(w)
    };
    for d in &doc.directives {
        match d {
            Directive::Op => op = Some(run_op(&mut records)?),
            Directive::Tran { tstep, tstop } => {
                tran = Some(
                    solver::transient(&circuit, *tstep, *tstop, &opts)
                        .map_err(solve_err(".tran"))?,
                )
            }
            Directive::Measure(_) => {}
        }
    }
    if !has_analysis {
        op = Some(run_op(&mut records)?);
    }
    let waveform = tran.or(op).expect("at least one analysis ran");
    for spec in doc.measures() {
        let m = measure::evaluate(&waveform, spec).map_err(|source| CliError::Measure {
            path: path.into(),
            measure: spec.label(),
            source,
        })?;
        match m {
            Measurement::Vpp { value, .. } => {
                records.push(Record::new(name, spec.label(), value, "V"))
            }
            Measurement::GainPp { value, .. } => {
                records.push(Record::new(name, spec.label(), value, ""))
            }
            Measurement::Power { stats, .. } => {
                records.push(Record::new(name, "power_avg", stats.average, "W"));
                records.push(Record::new(name, "power_peak", stats.peak, "W"));
            }
        }
    }
    Ok(Execution { records, waveform })
}

fn read_netlist(path: &Path) -> Result<NetlistDocument, CliError> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: shown.clone(),
        source,
    })?;
    parse_netlist(&text).map_err(|source| CliError::Parse {
        path: shown,
        source,
    })
}

fn doc_name(doc: &NetlistDocument, path: &Path) -> String {
    doc.title.clone().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "netlist".into())
    })
}

fn trace_output(node: &str, waveform: Waveform) -> Result<Output, CliError> {
    if waveform.node_trace(node).is_none() {
        return Err(CliError::Usage(format!(
            "unknown node `{node}` for waveform dump"
        )));
    }
    Ok(Output::Trace {
        node: node.to_string(),
        waveform,
    })
}

pub fn file_output(path: &Path, config: &RunConfig) -> Result<Output, CliError> {
    let doc = read_netlist(path)?;
    let exec = execute_doc(&doc, &doc_name(&doc, path), &path.display().to_string())?;
    match &config.dump_waveform {
        Some(node) => trace_output(node, exec.waveform),
        None => Ok(Output::Records(exec.records)),
    }
}

pub fn experiment_output(name: &str, config: &RunConfig) -> Result<Output, CliError> {
    let selected: Vec<Experiment> = if name.eq_ignore_ascii_case("all") {
        Experiment::ALL.to_vec()
    } else {
        vec![name.parse()?]
    };
    if let Some(node) = &config.dump_waveform {
        let [single] = selected[..] else {
            return Err(CliError::Usage(
                "--dump-waveform needs a single-circuit experiment".into(),
            ));
        };
        let doc = single.netlist()?.ok_or_else(|| {
            CliError::Usage(format!(
                "experiment `{}` has no single circuit to dump",
                single.name()
            ))
        })?;
        let circuit = validate(&doc).map_err(ExperimentError::from)?;
        return trace_output(node, experiments::simulate(&circuit)?);
    }
    let report = experiments::run_experiments(&selected)?;
    Ok(Output::Records(
        report.rows.iter().flat_map(report_records).collect(),
    ))
}

fn report_records(row: &ReportRow) -> Vec<Record> {
    let n = row.name.as_str();
    let mut out = vec![
        Record::new(n, "r1", row.r1, "ohm"),
        Record::new(n, "r2", row.r2, "ohm"),
        Record::new(n, "rx", row.rx, "ohm"),
        Record::new(n, "level", row.level.number(), ""),
        Record::new(n, "vin_pp", row.vin_pp, "V"),
        Record::new(n, "vpp_out", row.measured_vpp_out, "V"),
        Record::new(n, "predicted_vpp_out", row.predicted_vpp_out, "V"),
    ];
    if let (Some(reference), Some(dev)) = (row.reference_vpp_out, row.deviation()) {
        out.push(Record::new(n, "reference_vpp_out", reference, "V"));
        out.push(Record::new(n, "deviation", dev, ""));
    }
    if let Some(t) = row.tuning {
        out.push(Record::new(n, "case", t.label, ""));
        out.push(Record::new(n, "predicted_gain", t.predicted_gain, ""));
        out.push(Record::new(n, "behavior", t.behavior, ""));
        out.push(Record::new(
            n,
            "simulated_behavior",
            row.simulated_behavior(),
            "",
        ));
    }
    out
}

const CONVEYOR_KEYS: [&str; 5] = ["RX", "IB", "BETA", "VDD", "VSS"];

/// Set a sweepable parameter on a document.
pub fn set_param(doc: &mut NetlistDocument, param: &str, value: f64) -> Result<(), CliError> {
    let unknown = || CliError::UnknownParameter(param.to_string());
    let invalid = |reason: String| CliError::InvalidParameterValue {
        param: param.to_string(),
        reason,
    };
    let (element, key) = if let Some((e, k)) = param.split_once('.') {
        (e.to_string(), Some(k.to_ascii_uppercase()))
    } else if doc.element(param).is_some() {
        (param.to_string(), None)
    } else if CONVEYOR_KEYS.contains(&param.to_ascii_uppercase().as_str()) {
        let mut conveyors = doc
            .elements
            .iter()
            .filter(|e| matches!(e.value, ElementValue::Cccii(_)));
        match (conveyors.next(), conveyors.next()) {
            (Some(e), None) => (e.name.clone(), Some(param.to_ascii_uppercase())),
            _ => return Err(unknown()),
        }
    } else {
        return Err(unknown());
    };
    let decl = doc.element_mut(&element).ok_or_else(unknown)?;
    match (&mut decl.value, key.as_deref()) {
        (ElementValue::Resistor(r), None) => {
            if !(value > 0.0) {
                return Err(invalid(format!("resistance must be positive, got {value}")));
            }
            *r = value;
        }
        (ElementValue::VSource(w) | ElementValue::ISource(w), None) => match w {
            SourceWave::Dc(v) => *v = value,
            SourceWave::Sin { amplitude, .. } => *amplitude = value,
        },
        (ElementValue::Cccii(p), key) => {
            *p = set_conveyor_param(p, key.unwrap_or("RX"), value).map_err(|e| match e {
                None => unknown(),
                Some(reason) => invalid(reason),
            })?;
        }
        _ => return Err(unknown()),
    }
    Ok(())
}

fn set_conveyor_param(
    p: &CcciiParams,
    key: &str,
    value: f64,
) -> Result<CcciiParams, Option<String>> {
    let rx = match (key, p.rx_spec()) {
        ("RX", _) => RxSpec::Explicit(value),
        ("IB", RxSpec::Bias { beta_n, .. }) => RxSpec::Bias { i_b: value, beta_n },
        ("BETA", RxSpec::Bias { i_b, .. }) => RxSpec::Bias { i_b, beta_n: value },
        ("IB" | "BETA", RxSpec::Explicit(_)) => {
            return Err(Some(
                "conveyor has an explicit RX; give IB and BETA in the netlist".into(),
            ))
        }
        ("VDD", _) => {
            return p
                .with_rails(value, p.vss())
                .map_err(|e| Some(e.to_string()))
        }
        ("VSS", _) => {
            return p
                .with_rails(p.vdd(), value)
                .map_err(|e| Some(e.to_string()))
        }
        _ => return Err(None),
    };
    p.with_rx(rx).map_err(|e| Some(e.to_string()))
}

pub fn sweep_output(
    base: &str,
    param: &str,
    sweep: &SweepSpec,
    config: &RunConfig,
) -> Result<Output, CliError> {
    if config.dump_waveform.is_some() {
        return Err(CliError::Usage(
            "--dump-waveform is not supported for sweeps".into(),
        ));
    }
    let path = Path::new(base);
    let (doc, name) = if path.is_file() {
        let doc = read_netlist(path)?;
        let name = doc_name(&doc, path);
        (doc, name)
    } else {
        let exp: Experiment = base.parse().map_err(|_| {
            CliError::Usage(format!(
                "`{base}` is neither a netlist file nor an experiment name"
            ))
        })?;
        let doc = exp.netlist()?.ok_or_else(|| {
            CliError::Usage(format!(
                "experiment `{base}` has no single circuit to sweep"
            ))
        })?;
        (doc, exp.name().to_string())
    };
    let values = sweep.values()?;
    // resolve once up front so a bad key fails before any solve
    set_param(&mut doc.clone(), param, values[0])?;
    let rows: Result<Vec<Vec<Record>>, CliError> = values
        .par_iter()
        .map(|&v| {
            let mut point = doc.clone();
            set_param(&mut point, param, v)?;
            let exec = execute_doc(&point, &name, base)?;
            Ok(exec
                .records
                .into_iter()
                .map(|mut r| {
                    r.param = param.to_string();
                    r.value = v.to_string();
                    r
                })
                .collect())
        })
        .collect();
    Ok(Output::Records(rows?.into_iter().flatten().collect()))
}

pub fn render(output: &Output, format: OutputFormat, w: &mut dyn Write) -> io::Result<()> {
    match output {
        Output::Trace { node, waveform } => {
            let mut csv = csv::Writer::from_writer(w);
            csv.write_record(["time", "value"])?;
            let trace = waveform.node_trace(node).unwrap_or_default();
            for (t, v) in waveform.times.iter().zip(trace) {
                csv.write_record([t.to_string(), v.to_string()])?;
            }
            csv.flush()
        }
        Output::Records(records) => match format {
            OutputFormat::Csv => {
                let mut csv = csv::Writer::from_writer(w);
                csv.write_record(HEADER)?;
                for r in records {
                    csv.write_record(r.fields())?;
                }
                csv.flush()
            }
            OutputFormat::Table => {
                let mut widths = HEADER.map(str::len);
                for r in records {
                    for (wd, f) in widths.iter_mut().zip(r.fields()) {
                        *wd = (*wd).max(f.len());
                    }
                }
                let line = |fields: [&str; 6]| {
                    let cells: Vec<String> = fields
                        .iter()
                        .zip(widths)
                        .map(|(f, wd)| format!("{f:<wd$}"))
                        .collect();
                    cells.join("  ").trim_end().to_string()
                };
                writeln!(w, "{}", line(HEADER))?;
                for r in records {
                    writeln!(w, "{}", line(r.fields()))?;
                }
                Ok(())
            }
        },
    }
}

fn finish(
    result: Result<Output, CliError>,
    config: &RunConfig,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> i32 {
    let output = match result {
        Ok(o) => o,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return e.exit_code();
        }
    };
    let written = match &config.out {
        Some(path) => File::create(path).and_then(|mut f| render(&output, config.format, &mut f)),
        None => render(&output, config.format, stdout),
    };
    match written {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: writing output: {e}");
            1
        }
    }
}

pub fn run_file(
    path: &Path,
    config: &RunConfig,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> i32 {
    finish(file_output(path, config), config, stdout, stderr)
}

pub fn run_experiment(
    name: &str,
    config: &RunConfig,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> i32 {
    finish(experiment_output(name, config), config, stdout, stderr)
}

pub fn run_sweep(
    base: &str,
    param: &str,
    sweep: &SweepSpec,
    config: &RunConfig,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> i32 {
    finish(
        sweep_output(base, param, sweep, config),
        config,
        stdout,
        stderr,
    )
}

/// Parse arguments and dispatch. Usage errors exit with 1.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = if e.use_stderr() {
                write!(stderr, "{}", e.render())
            } else {
                write!(stdout, "{}", e.render())
            };
            return code;
        }
    };
    let config = RunConfig {
        format: cli.format,
        out: cli.out,
        dump_waveform: cli.dump_waveform,
    };
    match cli.command {
        Command::Run { file } => run_file(&file, &config, stdout, stderr),
        Command::Experiment { name } => run_experiment(&name, &config, stdout, stderr),
        Command::Sweep {
            base,
            param,
            from,
            to,
            points,
            log,
        } => {
            let spec = SweepSpec {
                from,
                to,
                points,
                log,
            };
            run_sweep(&base, &param, &spec, &config, stdout, stderr)
        }
    }
}
