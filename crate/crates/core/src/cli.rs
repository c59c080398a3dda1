//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 for usage or input errors, 1 for internal
//! failures such as unwritable outputs.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::fusion::{maxfusion_fold, FusionConfig};
use crate::mxft;
use crate::pgm;
use crate::sim::{self, RunReport, Scenario, Strategy};
use crate::stats::{channel_std_map, correlation_map, normalize_std, StatsConfig};
use crate::tensor::{FeatureMap, SpatialMap};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "maxfusion",
    version,
    about = "Training-free multi-branch feature fusion"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write σ, σ̂ and (for two inputs) ρ maps of MXFT tensors.
    Stats {
        #[arg(required = true, num_args = 1..=2)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "./out")]
        out: PathBuf,
    },
    /// Fuse two or more MXFT tensors.
    Fuse {
        #[arg(required = true, num_args = 2..)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.7, allow_hyphen_values = true)]
        delta: f64,
        #[arg(long)]
        no_renorm: bool,
        #[arg(long, default_value = "./out")]
        out: PathBuf,
    },
    /// Run the toy sampler once.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// maxfusion, naive, max_select, single(<b>) or unconditional.
        #[arg(long)]
        strategy: Option<String>,
    },
    /// Sweep the correlation threshold.
    Ablate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Comma-separated thresholds, e.g. "-1,0,0.5,0.7,1".
        #[arg(long, allow_hyphen_values = true)]
        deltas: String,
    },
    /// Run every strategy on identical noise.
    Compare {
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
}

#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// Named preset: contradictory, complementary or three_way.
    #[arg(long, conflicts_with = "scenario")]
    preset: Option<String>,
    /// JSON scenario file.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, allow_hyphen_values = true)]
    delta: Option<f64>,
    #[arg(long)]
    no_renorm: bool,
    /// Guidance weight override.
    #[arg(long, allow_hyphen_values = true)]
    guidance: Option<f64>,
    #[arg(long, default_value = "./out")]
    out: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Internal(String),
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn internal(msg: impl Into<String>) -> CliError {
    CliError::Internal(msg.into())
}

/// Rounds to 9 significant digits so printed values stay stable.
pub fn round_sig(x: f64) -> f64 {
    format!("{x:.8e}").parse().unwrap_or(x)
}

pub fn fmt_num(x: f64) -> String {
    format!("{}", round_sig(x))
}

fn num(x: f64) -> Value {
    json!(round_sig(x))
}

fn nums(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| num(x)).collect())
}

fn load_input(path: &Path) -> CliResult<FeatureMap> {
    mxft::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write_out<F>(path: &Path, body: F) -> CliResult<()>
where
    F: FnOnce(&mut BufWriter<File>) -> crate::Result<()>,
{
    let fail = |e: &dyn std::fmt::Display| internal(format!("{}: {e}", path.display()));
    let mut out = BufWriter::new(File::create(path).map_err(|e| fail(&e))?);
    body(&mut out).map_err(|e| fail(&e))?;
    out.flush().map_err(|e| fail(&e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    write_out(path, |w| Ok(w.write_all(text.as_bytes())?))
}

fn make_out_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| internal(format!("{}: {e}", dir.display())))
}

fn save_tensor(dir: &Path, name: &str, map: &FeatureMap) -> CliResult<()> {
    write_out(&dir.join(name), |w| mxft::write_tensor(map, w).map(|_| ()))
}

fn save_spatial(dir: &Path, name: &str, map: &SpatialMap) -> CliResult<()> {
    write_out(&dir.join(name), |w| mxft::write_spatial(map, w).map(|_| ()))
}

fn save_pgm(dir: &Path, name: &str, map: &SpatialMap) -> CliResult<()> {
    write_out(&dir.join(name), |w| pgm::write_map(map, w))
}

fn cmd_stats(inputs: &[PathBuf], out: &Path) -> CliResult<Value> {
    let maps = inputs
        .iter()
        .map(|p| load_input(p))
        .collect::<CliResult<Vec<_>>>()?;
    if maps.len() == 2 && maps[0].shape() != maps[1].shape() {
        return Err(usage(format!(
            "shape mismatch: {} is {:?}, {} is {:?}",
            inputs[0].display(),
            maps[0].shape(),
            inputs[1].display(),
            maps[1].shape()
        )));
    }
    make_out_dir(out)?;
    let cfg = StatsConfig::default();
    let mut sigma_means = Vec::new();
    for (i, f) in maps.iter().enumerate() {
        let suffix = if maps.len() == 1 {
            String::new()
        } else {
            format!("_{i}")
        };
        let sigma = channel_std_map(f);
        let sigma_hat = normalize_std(&sigma, &cfg);
        save_spatial(out, &format!("sigma{suffix}.mxft"), &sigma)?;
        save_spatial(out, &format!("sigma_hat{suffix}.mxft"), &sigma_hat)?;
        save_pgm(out, &format!("sigma_hat{suffix}.pgm"), &sigma_hat)?;
        sigma_means.push(sigma.mean());
    }
    let mut summary = json!({
        "inputs": maps.len(),
        "shape": [maps[0].channels(), maps[0].height(), maps[0].width()],
        "sigma_mean": nums(&sigma_means),
    });
    if let [a, b] = maps.as_slice() {
        let rho = correlation_map(a, b, &cfg).map_err(|e| usage(e.to_string()))?;
        save_spatial(out, "rho.mxft", &rho)?;
        save_pgm(out, "rho.pgm", &rho)?;
        summary["rho_mean"] = num(rho.mean());
    }
    Ok(summary)
}

fn cmd_fuse(inputs: &[PathBuf], delta: f64, no_renorm: bool, out: &Path) -> CliResult<Value> {
    if inputs.len() < 2 {
        return Err(usage("fuse needs at least two inputs"));
    }
    if !delta.is_finite() {
        return Err(usage("--delta must be finite"));
    }
    let maps = inputs
        .iter()
        .map(|p| load_input(p))
        .collect::<CliResult<Vec<_>>>()?;
    for (p, m) in inputs.iter().zip(&maps).skip(1) {
        if m.shape() != maps[0].shape() {
            return Err(usage(format!(
                "shape mismatch: {} is {:?}, {} is {:?}",
                inputs[0].display(),
                maps[0].shape(),
                p.display(),
                m.shape()
            )));
        }
    }
    let cfg = FusionConfig {
        delta,
        renormalize: !no_renorm,
        ..FusionConfig::default()
    };
    let fold = maxfusion_fold(&maps, &cfg).map_err(|e| usage(e.to_string()))?;

    make_out_dir(out)?;
    save_tensor(out, "f_eff.mxft", &fold.f_eff)?;
    let (_, h, w) = fold.f_eff.shape();
    let tags: Vec<f32> = fold
        .steps
        .iter()
        .flat_map(|s| s.selection.entries().iter().map(|e| e.tag()))
        .collect();
    let selection =
        FeatureMap::new(fold.steps.len(), h, w, tags).map_err(|e| internal(e.to_string()))?;
    save_tensor(out, "selection.mxft", &selection)?;
    let last = &fold.steps.last().expect("at least one step").selection;
    write_out(&out.join("selection.pgm"), |w| {
        pgm::write_selection(last, w)
    })?;
    for (i, u) in fold.updated.iter().enumerate() {
        save_tensor(out, &format!("branch_{i}_unmerged.mxft"), u)?;
    }

    Ok(json!({
        "branches": maps.len(),
        "delta": num(delta),
        "renormalize": !no_renorm,
        "averaged_fraction": num(fold.averaged_fraction()),
        "win_fraction": nums(&fold.win_fractions()),
    }))
}

fn load_scenario(args: &ScenarioArgs) -> CliResult<Scenario> {
    let mut scenario = match (&args.scenario, &args.preset) {
        (Some(path), _) => {
            let text =
                fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            Scenario::from_json(&text)
                .map_err(|e| usage(format!("{}: invalid scenario JSON: {e}", path.display())))?
        }
        (None, Some(name)) => Scenario::preset(name).map_err(|e| usage(e.to_string()))?,
        (None, None) => Scenario::preset("contradictory").expect("built-in preset"),
    };
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    if let Some(delta) = args.delta {
        scenario.fusion.delta = delta;
    }
    if args.no_renorm {
        scenario.fusion.renormalize = false;
    }
    if let Some(g) = args.guidance {
        scenario.guidance_weight = g;
    }
    Ok(scenario)
}

fn validate(scenario: &Scenario) -> CliResult<()> {
    scenario
        .validate()
        .map_err(|e| usage(format!("invalid scenario: {e}")))
}

fn run_sample(scenario: &Scenario) -> CliResult<RunReport> {
    sim::sample(scenario).map_err(|e| internal(e.to_string()))
}

const CSV_HEADER: [&str; 6] = [
    "strategy",
    "delta",
    "branch",
    "mse",
    "averaged_fraction",
    "seed",
];

struct MetricsRow<'a> {
    label: &'a str,
    delta: Option<f64>,
    mse: &'a [f64],
    averaged_fraction: f64,
    seed: u64,
}

fn write_metrics(path: &Path, rows: &[MetricsRow<'_>]) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| internal(e.to_string());
    w.write_record(CSV_HEADER).map_err(fail)?;
    for row in rows {
        for (b, mse) in row.mse.iter().enumerate() {
            w.write_record([
                row.label.to_string(),
                row.delta.map(fmt_num).unwrap_or_default(),
                b.to_string(),
                fmt_num(*mse),
                fmt_num(row.averaged_fraction),
                row.seed.to_string(),
            ])
            .map_err(fail)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| internal(e.to_string()))?;
    write_out(path, |out| Ok(out.write_all(&bytes)?))
}

fn fusion_delta(scenario: &Scenario) -> Option<f64> {
    matches!(scenario.strategy, Strategy::Maxfusion).then_some(scenario.fusion.delta)
}

fn trace_lines(report: &RunReport) -> String {
    let mut text = String::new();
    for step in &report.steps {
        let line = json!({
            "t": step.t,
            "averaged_fraction": num(step.averaged_fraction),
            "win_fraction": nums(&step.win_fraction),
            "unmerged_mean_std": nums(&step.unmerged_mean_std),
        });
        writeln!(text, "{line}").expect("write to string");
    }
    text
}

fn cmd_simulate(args: &ScenarioArgs, strategy: Option<&str>) -> CliResult<Value> {
    let mut scenario = load_scenario(args)?;
    if let Some(s) = strategy {
        scenario.strategy = s.parse().map_err(|e: crate::Error| usage(e.to_string()))?;
    }
    validate(&scenario)?;
    let report = run_sample(&scenario)?;

    let out = &args.out;
    make_out_dir(out)?;
    save_spatial(out, "sample.mxft", &report.sample)?;
    save_pgm(out, "sample.pgm", &report.sample)?;
    let label = scenario.strategy.to_string();
    write_metrics(
        &out.join("metrics.csv"),
        &[MetricsRow {
            label: &label,
            delta: fusion_delta(&scenario),
            mse: &report.mse,
            averaged_fraction: report.averaged_fraction(),
            seed: report.seed,
        }],
    )?;
    write_text(&out.join("trace.jsonl"), &trace_lines(&report))?;
    let echo = serde_json::to_string_pretty(&scenario).map_err(|e| internal(e.to_string()))?;
    write_text(&out.join("scenario.json"), &(echo + "\n"))?;

    Ok(json!({
        "strategy": label,
        "seed": report.seed,
        "mse": nums(&report.mse),
        "averaged_fraction": num(report.averaged_fraction()),
        "elapsed_ms": report.elapsed.as_millis() as u64,
    }))
}

/// Parses a comma-separated threshold list.
pub fn parse_deltas(text: &str) -> std::result::Result<Vec<f64>, String> {
    let deltas = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(format!("malformed delta {s:?}")),
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if deltas.is_empty() {
        return Err("empty delta list".into());
    }
    Ok(deltas)
}

fn cmd_ablate(args: &ScenarioArgs, deltas: &str) -> CliResult<Value> {
    let deltas = parse_deltas(deltas).map_err(usage)?;
    let scenario = load_scenario(args)?;
    validate(&scenario)?;
    let ablation = sim::run_ablation(&scenario, &deltas).map_err(|e| internal(e.to_string()))?;

    make_out_dir(&args.out)?;
    let rows: Vec<MetricsRow<'_>> = ablation
        .rows
        .iter()
        .map(|r| MetricsRow {
            label: "maxfusion",
            delta: Some(r.delta),
            mse: &r.mse,
            averaged_fraction: r.averaged_fraction,
            seed: r.seed,
        })
        .collect();
    write_metrics(&args.out.join("metrics.csv"), &rows)?;
    if !ablation.monotone {
        eprintln!("warning: averaged fraction is not non-increasing in delta");
    }
    Ok(json!({
        "deltas": nums(&deltas),
        "averaged_fraction": nums(&ablation.rows.iter().map(|r| r.averaged_fraction).collect::<Vec<_>>()),
        "monotone": ablation.monotone,
    }))
}

fn markdown_table(arms: &[sim::Arm], branches: usize) -> String {
    let mut md = String::from("| strategy | delta |");
    for b in 0..branches {
        write!(md, " mse[{b}] |").unwrap();
    }
    md.push_str(" max mse | averaged |\n|---|---|");
    for _ in 0..branches {
        md.push_str("---|");
    }
    md.push_str("---|---|\n");
    for arm in arms {
        write!(
            md,
            "| {} | {} |",
            arm.label,
            arm.delta.map(fmt_num).unwrap_or_else(|| "-".into())
        )
        .unwrap();
        for m in &arm.report.mse {
            write!(md, " {} |", fmt_num(*m)).unwrap();
        }
        writeln!(
            md,
            " {} | {} |",
            fmt_num(arm.report.max_mse()),
            fmt_num(arm.report.averaged_fraction())
        )
        .unwrap();
    }
    md
}

fn cmd_compare(args: &ScenarioArgs) -> CliResult<Value> {
    let scenario = load_scenario(args)?;
    validate(&scenario)?;
    let arms = sim::compare_strategies(&scenario).map_err(|e| internal(e.to_string()))?;

    make_out_dir(&args.out)?;
    let rows: Vec<MetricsRow<'_>> = arms
        .iter()
        .map(|a| MetricsRow {
            label: &a.label,
            delta: a.delta,
            mse: &a.report.mse,
            averaged_fraction: a.report.averaged_fraction(),
            seed: a.report.seed,
        })
        .collect();
    write_metrics(&args.out.join("metrics.csv"), &rows)?;
    write_text(
        &args.out.join("compare.md"),
        &markdown_table(&arms, scenario.branches.len()),
    )?;

    let mut summary = serde_json::Map::new();
    for arm in &arms {
        summary.insert(arm.label.clone(), nums(&arm.report.mse));
    }
    Ok(json!({ "seed": scenario.seed, "mse": summary }))
}

fn dispatch(cli: &Cli) -> CliResult<Value> {
    match &cli.command {
        Command::Stats { inputs, out } => cmd_stats(inputs, out),
        Command::Fuse {
            inputs,
            delta,
            no_renorm,
            out,
        } => cmd_fuse(inputs, *delta, *no_renorm, out),
        Command::Simulate { scenario, strategy } => cmd_simulate(scenario, strategy.as_deref()),
        Command::Ablate { scenario, deltas } => cmd_ablate(scenario, deltas),
        Command::Compare { scenario } => cmd_compare(scenario),
    }
}

/// Parses `args` (including the program name) and runs one subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(summary) => {
            let mut stdout = io::stdout().lock();
            if writeln!(stdout, "{summary}").is_err() {
                return EXIT_INTERNAL;
            }
            EXIT_OK
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            EXIT_INTERNAL
        }
    }
}

pub fn main() -> i32 {
    run(std::env::args_os())
}
