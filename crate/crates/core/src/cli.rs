//! Command-line entry points.

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::audit::{audit_lambda, AuditInput, ExplicitSets};
use crate::config::Config;
use crate::conformal::Thresholds;
use crate::data::{load_dataset, load_dataset_with_probs, save_dataset, Dataset, Format, GraphStructure, Metric, Split};
use crate::error::{Error, Result};
use crate::gcp::{evaluate_batchgcp, fit_batchgcp};
use crate::metrics::{evaluate_sets, Estimate, ThresholdSets};
use crate::report::{
    emit, slice_rows, slice_table, to_csv, to_json, AuditReport, Baseline, CompareReport, CompareRow, EvaluateReport,
    GcpSide, OutputFormat, RunReport, SetEvaluation,
};
use crate::scores::{compute_scores, ScoreTable};
use crate::search::{search, Engine};
use crate::synth::generate;

#[derive(Debug, Parser)]
#[command(name = "cfair", version, about = "Fairness-constrained thresholds for conformal prediction sets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset from the `[synth]` config section.
    Synth(CommonArgs),
    /// Search for the smallest fair threshold and evaluate it on the test split.
    Calibrate(CommonArgs),
    /// Check a threshold or explicit prediction sets against the criterion.
    Audit(CommonArgs),
    /// Report test-split coverage, efficiency and disparity of a threshold
    /// or explicit prediction sets.
    Evaluate(CommonArgs),
    /// Run the threshold search and the group-offset baseline side by side.
    CompareGcp(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML or JSON run configuration; defaults apply if omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset file (CSV or JSON, chosen by extension).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Separate probabilities file joined to `--data` by id.
    #[arg(long)]
    pub probs: Option<PathBuf>,
    /// Edge list `u,v`; for `synth`, where to write the generated graph.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Precomputed score table `id,s_0,..`.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Explicit prediction sets `item_id,labels` (audit, evaluate).
    #[arg(long)]
    pub sets: Option<PathBuf>,
    /// Threshold to audit or evaluate: one value, or one per class separated by commas.
    #[arg(long, value_delimiter = ',')]
    pub lambda: Option<Vec<f64>>,
    /// Output path; stdout if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output format, json or csv. Reports default to json; `synth`
    /// defaults to the extension of `--out`.
    #[arg(long)]
    pub format: Option<String>,
    /// Also write the computed score table here.
    #[arg(long)]
    pub scores_out: Option<PathBuf>,
    /// Also write the prediction sets at the chosen threshold here.
    #[arg(long)]
    pub sets_out: Option<PathBuf>,
}

/// Outcome mapped to the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    /// No satisfying threshold, or a failed audit.
    Unsatisfied,
}

impl Outcome {
    pub fn code(self) -> u8 {
        match self {
            Outcome::Ok => 0,
            Outcome::Unsatisfied => 2,
        }
    }

    fn from_bool(ok: bool) -> Self {
        if ok {
            Outcome::Ok
        } else {
            Outcome::Unsatisfied
        }
    }
}

pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Calibrate(a) => cmd_calibrate(&a),
        Command::Audit(a) => cmd_audit(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::CompareGcp(a) => cmd_compare_gcp(&a),
    }
}

fn load_config(args: &CommonArgs) -> Result<Config> {
    match &args.config {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn load_data(args: &CommonArgs, cfg: &Config) -> Result<Dataset> {
    let path = args.data.as_ref().ok_or_else(|| Error::Config("--data is required".into()))?;
    let format = Format::from_path(path);
    let mut ds = match &args.probs {
        Some(p) => load_dataset_with_probs(path, p, format)?,
        None => load_dataset(path, format)?,
    };
    if let Some(g) = &args.graph {
        let graph = GraphStructure::load_edge_list(g, ds.len())?;
        ds = ds.with_graph(graph)?;
    }
    let mode = cfg.group_mode(&ds)?;
    ds = ds.with_group_mode(mode)?;
    if ds.items().iter().all(|it| it.split.is_none()) {
        ds = crate::data::stratified_split(ds, cfg.splits, cfg.seed)?;
    } else if !ds.is_fully_split() {
        return Err(Error::Validation("some labeled items have a split tag and others do not".into()));
    }
    Ok(ds)
}

fn load_scores(args: &CommonArgs, cfg: &Config, ds: &Dataset) -> Result<ScoreTable> {
    let table = match &args.scores {
        Some(p) => ScoreTable::load_csv(ds, p)?,
        None => compute_scores(ds, &cfg.score_params())?,
    };
    if let Some(p) = &args.scores_out {
        table.save_csv(ds, p)?;
    }
    Ok(table)
}

fn output_format(args: &CommonArgs) -> Result<OutputFormat> {
    args.format.as_deref().unwrap_or("json").parse()
}

fn elapsed_ms(start: Instant) -> u64 {
    start.elapsed().as_millis() as u64
}

pub fn cmd_synth(args: &CommonArgs) -> Result<Outcome> {
    let cfg = load_config(args)?;
    let out = args.out.as_ref().ok_or_else(|| Error::Config("synth needs --out".into()))?;
    let format = match &args.format {
        Some(f) => f.parse()?,
        None => Format::from_path(out),
    };
    let ds = generate(&cfg.synth)?;
    save_dataset(&ds, out, format)?;
    if let (Some(path), Some(graph)) = (&args.graph, ds.graph()) {
        graph.save_edge_list(path)?;
    }
    log::info!("wrote {} items to {}", ds.len(), out.display());
    Ok(Outcome::Ok)
}

fn calibrate_report(args: &CommonArgs, cfg: &Config, ds: &Dataset, table: &ScoreTable, start: Instant) -> Result<RunReport> {
    let spec = cfg.spec(ds.num_classes())?;
    let result = search(table, ds, &spec, cfg.lambda_grid.as_deref(), cfg.search)?;
    let chosen = result.thresholds_or_qhat();
    let test = SetEvaluation::compute(ds, &spec, Split::Test, &ThresholdSets { table, thresholds: &chosen })?;
    let q = Thresholds::Global(result.q_hat);
    let baseline = Baseline {
        lambda: result.q_hat,
        calibration: Engine::new(table, ds, &spec)?.evaluate(&q),
        test: SetEvaluation::compute(ds, &spec, Split::Test, &ThresholdSets { table, thresholds: &q })?,
    };
    if let Some(p) = &args.sets_out {
        ExplicitSets::from_thresholds(table, &chosen).save_csv(ds, p)?;
    }
    let rows = slice_table(&result.report.slices, &test.report.slices);
    Ok(RunReport {
        command: "calibrate".into(),
        config: cfg.clone(),
        spec,
        result,
        test,
        baseline,
        table: rows,
        wall_time_ms: elapsed_ms(start),
    })
}

pub fn cmd_calibrate(args: &CommonArgs) -> Result<Outcome> {
    let start = Instant::now();
    let cfg = load_config(args)?;
    let ds = load_data(args, &cfg)?;
    let table = load_scores(args, &cfg, &ds)?;
    let report = calibrate_report(args, &cfg, &ds, &table, start)?;
    let bytes = match output_format(args)? {
        OutputFormat::Json => to_json(&report)?,
        OutputFormat::Csv => to_csv(&report.table)?,
    };
    emit(args.out.as_deref(), &bytes)?;
    Ok(Outcome::from_bool(report.result.satisfied()))
}

fn parse_thresholds(values: &[f64], k: usize) -> Result<Thresholds> {
    match values.len() {
        1 => Ok(Thresholds::Global(values[0])),
        n if n == k => Ok(Thresholds::Classwise(values.to_vec())),
        n => Err(Error::Config(format!("--lambda needs 1 or {k} values, got {n}"))),
    }
}

pub fn cmd_audit(args: &CommonArgs) -> Result<Outcome> {
    let start = Instant::now();
    let cfg = load_config(args)?;
    let ds = load_audit_data(args, &cfg)?;
    let spec = cfg.spec(ds.num_classes())?;
    let verdict = match (&args.sets, &args.lambda) {
        (Some(p), None) => {
            let sets = ExplicitSets::load_csv(&ds, p)?;
            audit_lambda(&ds, &AuditInput::Sets(&sets), &spec)?
        }
        (None, Some(l)) => {
            let table = load_scores(args, &cfg, &ds)?;
            let thresholds = parse_thresholds(l, ds.num_classes())?;
            audit_lambda(&ds, &AuditInput::Threshold { table: &table, thresholds }, &spec)?
        }
        _ => return Err(Error::Config("audit needs exactly one of --sets or --lambda".into())),
    };
    let pass = verdict.pass;
    let bytes = match output_format(args)? {
        OutputFormat::Json => to_json(&AuditReport {
            command: "audit".into(),
            config: cfg,
            verdict,
            wall_time_ms: elapsed_ms(start),
        })?,
        OutputFormat::Csv => to_csv(&slice_rows(&verdict.report))?,
    };
    emit(args.out.as_deref(), &bytes)?;
    Ok(Outcome::from_bool(pass))
}

/// Descriptive only: exits 0 whether or not the criterion holds on test.
pub fn cmd_evaluate(args: &CommonArgs) -> Result<Outcome> {
    let start = Instant::now();
    let cfg = load_config(args)?;
    let ds = load_data(args, &cfg)?;
    let spec = cfg.spec(ds.num_classes())?;
    let (thresholds, test) = match (&args.sets, &args.lambda) {
        (Some(p), None) => {
            let sets = ExplicitSets::load_csv(&ds, p)?;
            (None, SetEvaluation::compute(&ds, &spec, Split::Test, &sets)?)
        }
        (None, Some(l)) => {
            let table = load_scores(args, &cfg, &ds)?;
            let thresholds = parse_thresholds(l, ds.num_classes())?;
            let test = SetEvaluation::compute(&ds, &spec, Split::Test, &ThresholdSets { table: &table, thresholds: &thresholds })?;
            (Some(thresholds), test)
        }
        _ => return Err(Error::Config("evaluate needs exactly one of --sets or --lambda".into())),
    };
    let bytes = match output_format(args)? {
        OutputFormat::Json => to_json(&EvaluateReport {
            command: "evaluate".into(),
            config: cfg,
            spec,
            thresholds,
            test,
            wall_time_ms: elapsed_ms(start),
        })?,
        OutputFormat::Csv => to_csv(&slice_rows(&test.report))?,
    };
    emit(args.out.as_deref(), &bytes)?;
    Ok(Outcome::Ok)
}

/// Audit data keeps its own split tags (or none); it is never re-split.
fn load_audit_data(args: &CommonArgs, cfg: &Config) -> Result<Dataset> {
    let path = args.data.as_ref().ok_or_else(|| Error::Config("--data is required".into()))?;
    let format = Format::from_path(path);
    let mut ds = match &args.probs {
        Some(p) => load_dataset_with_probs(path, p, format)?,
        None => load_dataset(path, format)?,
    };
    if let Some(g) = &args.graph {
        let graph = GraphStructure::load_edge_list(g, ds.len())?;
        ds = ds.with_graph(graph)?;
    }
    let mode = cfg.group_mode(&ds)?;
    ds.with_group_mode(mode)
}

pub fn cmd_compare_gcp(args: &CommonArgs) -> Result<Outcome> {
    let start = Instant::now();
    let cfg = load_config(args)?;
    let ds = load_data(args, &cfg)?;
    let table = load_scores(args, &cfg, &ds)?;
    let cf = calibrate_report(args, &cfg, &ds, &table, start)?;
    let spec = cf.spec.clone();
    let model = fit_batchgcp(&table, &ds, cfg.alpha, cfg.gcp.overlapping)?;
    let gcp_test = evaluate_batchgcp(&model, &table, &ds, &spec, Split::Test)?;
    let satisfied = cf.result.satisfied();
    let chosen = cf.result.thresholds_or_qhat();
    let test_items = ds.split_indices(Split::Test);
    let cf_dp = evaluate_sets(
        &ds,
        &spec.with_metric(Metric::DemographicParity),
        &test_items,
        &ThresholdSets { table: &table, thresholds: &chosen },
        Estimate::Empirical,
    )?
    .worst_disparity;
    let rows = [
        CompareRow {
            method: "cf".into(),
            marginal_coverage: cf.test.marginal_coverage,
            efficiency: cf.test.efficiency,
            worst_disparity: cf.test.worst_disparity,
            demographic_parity_disparity: cf_dp,
            disparate_impact_ratio: cf.test.disparate_impact_ratio,
        },
        CompareRow {
            method: "batchgcp".into(),
            marginal_coverage: gcp_test.marginal_coverage,
            efficiency: gcp_test.efficiency,
            worst_disparity: gcp_test.report.worst_disparity,
            demographic_parity_disparity: gcp_test.demographic_parity_disparity,
            disparate_impact_ratio: gcp_test.disparate_impact_ratio,
        },
    ];
    let bytes = match output_format(args)? {
        OutputFormat::Json => to_json(&CompareReport {
            command: "compare-gcp".into(),
            config: cfg,
            spec,
            cf,
            gcp: GcpSide { model, test: gcp_test },
            wall_time_ms: elapsed_ms(start),
        })?,
        OutputFormat::Csv => to_csv(&rows)?,
    };
    emit(args.out.as_deref(), &bytes)?;
    Ok(Outcome::from_bool(satisfied))
}

/// Parse arguments, run, and print errors; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(o) => o.code(),
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
