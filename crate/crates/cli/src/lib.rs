//! `churnscope` command-line front end.
//!
//! Exit codes: 0 on success (and no regression for `diff`), 1 when `diff`
//! finds a regression, 2 on usage or data errors.

mod table;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use churnscope::report_io::canonical::{fixed6, quantize};
use churnscope::{
    default_cost_model, diff_reports, parse_report, parse_verdict, rank_with, run_workload,
    serialize_report, serialize_verdict, ChurnReport, CostModel, DeltaStatus, MarkerChurn, RankKey,
    RankOptions, RecorderConfig, RegressionVerdict, ReportMeta, Session, Thresholds, TieBreak,
    Variant, Workload, WorkloadSpec,
};
use clap::{Parser, Subcommand, ValueEnum};

use table::Table;

pub const EXIT_OK: u8 = 0;
pub const EXIT_REGRESSION: u8 = 1;
pub const EXIT_ERROR: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "churnscope",
    version,
    about = "Allocator churn reports and build-to-build regression checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KeyArg {
    Rel,
    Abs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TieArg {
    Bytes,
    Calls,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a synthetic workload and write its churn report.
    Run {
        #[arg(long)]
        workload: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        scale: u32,
        #[arg(long, default_value = "baseline")]
        variant: String,
        /// Weight override file (keys malloc, calloc, realloc, free, model_version).
        #[arg(long)]
        cost_model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "local")]
        build_id: String,
        /// Pin created_at to this many seconds after the Unix epoch.
        #[arg(long)]
        epoch: Option<i64>,
        #[arg(long)]
        color: bool,
    },
    /// Print a report as a table.
    Show {
        report: PathBuf,
        /// Also list each thread's contribution under its phase.
        #[arg(long)]
        per_thread: bool,
        #[arg(long)]
        color: bool,
    },
    /// Compare a candidate report against a baseline.
    Diff {
        baseline: PathBuf,
        candidate: PathBuf,
        #[arg(long, default_value_t = Thresholds::default().rel)]
        rel_threshold: f64,
        #[arg(long, default_value_t = Thresholds::default().abs_floor)]
        abs_floor: f64,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        #[arg(long)]
        color: bool,
    },
    /// Re-rank a JSON verdict produced by `diff --format json`.
    Rank {
        verdict: PathBuf,
        #[arg(long, value_enum, default_value_t = KeyArg::Rel)]
        key: KeyArg,
        #[arg(long, value_enum, default_value_t = TieArg::Bytes)]
        tie_break: TieArg,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        #[arg(long)]
        color: bool,
    },
}

/// A failure that ends the command with exit code 2.
#[derive(Debug)]
struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

/// Runs the CLI with `args` (including the program name) and returns the
/// exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Run {
            workload,
            seed,
            scale,
            variant,
            cost_model,
            out: path,
            build_id,
            epoch,
            color,
        } => cmd_run(
            RunArgs {
                workload,
                seed,
                scale,
                variant,
                cost_model,
                path,
                build_id,
                epoch,
                color,
            },
            out,
        ),
        Command::Show {
            report,
            per_thread,
            color,
        } => cmd_show(&report, per_thread, color, out),
        Command::Diff {
            baseline,
            candidate,
            rel_threshold,
            abs_floor,
            format,
            color,
        } => cmd_diff(
            &baseline,
            &candidate,
            Thresholds {
                rel: rel_threshold,
                abs_floor,
            },
            format,
            color,
            out,
        ),
        Command::Rank {
            verdict,
            key,
            tie_break,
            format,
            color,
        } => cmd_rank(&verdict, key, tie_break, format, color, out),
    };
    match result {
        Ok(code) => code,
        Err(Failure(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_ERROR
        }
    }
}

struct RunArgs {
    workload: String,
    seed: u64,
    scale: u32,
    variant: String,
    cost_model: Option<PathBuf>,
    path: PathBuf,
    build_id: String,
    epoch: Option<i64>,
    color: bool,
}

fn cmd_run(a: RunArgs, out: &mut dyn Write) -> Result<u8, Failure> {
    let workload: Workload = a
        .workload
        .parse()
        .map_err(|e| Failure(format!("invalid value for --workload: {e}")))?;
    let variant: Variant = a
        .variant
        .parse()
        .map_err(|e| Failure(format!("invalid value for --variant: {e}")))?;
    let spec = WorkloadSpec::new(workload, a.seed, a.scale, variant);
    if spec.scale == 0 {
        return Err(Failure(
            "invalid value for --scale: must be at least 1".into(),
        ));
    }
    let model: CostModel = match &a.cost_model {
        Some(path) => CostModel::load(path)
            .map_err(|e| Failure(format!("--cost-model {}: {e}", path.display())))?,
        None => default_cost_model(),
    };
    let session = Session::new(model, RecorderConfig::from_env()?)?;
    let meta = ReportMeta::at_epoch(a.build_id, a.epoch.unwrap_or_else(now_epoch));
    let report = run_workload(&spec, session, meta)?;
    fs::write(&a.path, serialize_report(&report))
        .map_err(|e| Failure(format!("cannot write {}: {e}", a.path.display())))?;
    out.write_all(summary(&report, false, a.color).as_bytes())?;
    Ok(EXIT_OK)
}

fn load_report(path: &Path) -> Result<ChurnReport, Failure> {
    let doc = fs::read_to_string(path).map_err(|e| Failure(format!("{}: {e}", path.display())))?;
    parse_report(&doc).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn churn_cells(label: String, c: &MarkerChurn) -> Vec<String> {
    vec![
        label,
        fixed6(c.cost),
        c.total_calls().to_string(),
        c.bytes_allocated.to_string(),
        c.bytes_freed.to_string(),
    ]
}

fn bold(on: bool, s: &str) -> String {
    if on {
        format!("\x1b[1m{s}\x1b[0m")
    } else {
        s.to_owned()
    }
}

/// Phase rows, optional per-thread rows, and a totals row.
fn summary(report: &ChurnReport, per_thread: bool, color: bool) -> String {
    let mut t = Table::new(["phase", "cost", "calls", "bytes_alloc", "bytes_freed"]);
    for (name, merged) in &report.merged {
        t.row(churn_cells(name.clone(), merged));
        if per_thread {
            for part in report.per_thread.iter().filter(|p| &p.name == name) {
                let tid = part.thread_id.map_or_else(String::new, |t| t.to_string());
                t.row(churn_cells(format!("  {tid}"), part));
            }
        }
    }
    t.row(churn_cells("TOTAL".into(), &report.totals()));
    t.render_with(|row, _, c| bold(color && row == usize::MAX, c))
}

fn cmd_show(
    path: &Path,
    per_thread: bool,
    color: bool,
    out: &mut dyn Write,
) -> Result<u8, Failure> {
    let report = load_report(path)?;
    writeln!(
        out,
        "build {}  created {}  model {}",
        report.meta.build_id,
        report.meta.created_at.format("%Y-%m-%dT%H:%M:%SZ"),
        report.cost_model.model_version()
    )?;
    out.write_all(summary(&report, per_thread, color).as_bytes())?;
    if report.anomalies.total() > 0 || report.outstanding.blocks > 0 {
        writeln!(
            out,
            "anomalies {}  outstanding blocks {} ({} bytes)",
            report.anomalies.total(),
            report.outstanding.blocks,
            report.outstanding.bytes
        )?;
    }
    Ok(EXIT_OK)
}

fn status_color(status: DeltaStatus) -> &'static str {
    match status {
        DeltaStatus::Regression => "\x1b[31m",
        DeltaStatus::Improvement => "\x1b[32m",
        DeltaStatus::NewPhase => "\x1b[33m",
        DeltaStatus::Neutral | DeltaStatus::RemovedPhase => "",
    }
}

fn verdict_text(v: &RegressionVerdict, color: bool) -> String {
    let mut t = Table::new([
        "#",
        "phase",
        "status",
        "baseline",
        "candidate",
        "delta",
        "rel",
    ])
    .numeric_from(3);
    for (i, e) in v.entries.iter().enumerate() {
        t.row([
            (i + 1).to_string(),
            e.phase.clone(),
            e.status.as_str().to_owned(),
            e.baseline.as_ref().map_or("-".into(), |c| fixed6(c.cost)),
            e.candidate.as_ref().map_or("-".into(), |c| fixed6(c.cost)),
            fixed6(e.cost_delta_abs),
            e.cost_delta_rel
                .map_or("n/a".into(), |r| format!("{:+.2}%", r * 100.0)),
        ]);
    }
    t.render_with(|row, col, c| {
        if !color {
            return c.to_owned();
        }
        if row == usize::MAX {
            return bold(true, c);
        }
        let code = status_color(v.entries[row].status);
        if col == 2 && !code.is_empty() {
            format!("{code}{c}\x1b[0m")
        } else {
            c.to_owned()
        }
    })
}

fn cmd_diff(
    baseline: &Path,
    candidate: &Path,
    thresholds: Thresholds,
    format: Format,
    color: bool,
    out: &mut dyn Write,
) -> Result<u8, Failure> {
    let base = load_report(baseline)?;
    let cand = load_report(candidate)?;
    let verdict = diff_reports(&base, &cand, thresholds)?;
    match format {
        Format::Json => out.write_all(serialize_verdict(&verdict).as_bytes())?,
        Format::Text => {
            out.write_all(verdict_text(&verdict, color).as_bytes())?;
            let regressions = verdict
                .entries
                .iter()
                .filter(|e| e.status == DeltaStatus::Regression)
                .count();
            writeln!(
                out,
                "{} regression(s); thresholds rel {} abs_floor {}",
                regressions,
                fixed6(quantize(thresholds.rel)),
                fixed6(quantize(thresholds.abs_floor))
            )?;
        }
    }
    Ok(if verdict.regression {
        EXIT_REGRESSION
    } else {
        EXIT_OK
    })
}

fn cmd_rank(
    path: &Path,
    key: KeyArg,
    tie_break: TieArg,
    format: Format,
    color: bool,
    out: &mut dyn Write,
) -> Result<u8, Failure> {
    let doc = fs::read_to_string(path).map_err(|e| Failure(format!("{}: {e}", path.display())))?;
    let mut verdict =
        parse_verdict(&doc).map_err(|e| Failure(format!("{}: {e}", path.display())))?;
    let opts = RankOptions {
        key: match key {
            KeyArg::Rel => RankKey::Relative,
            KeyArg::Abs => RankKey::Absolute,
        },
        tie_break: match tie_break {
            TieArg::Bytes => TieBreak::Bytes,
            TieArg::Calls => TieBreak::Calls,
        },
    };
    verdict.entries = rank_with(&verdict.entries, opts);
    match format {
        Format::Json => out.write_all(serialize_verdict(&verdict).as_bytes())?,
        Format::Text if verdict.entries.is_empty() => {}
        Format::Text => out.write_all(verdict_text(&verdict, color).as_bytes())?,
    }
    Ok(EXIT_OK)
}

fn now_epoch() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs() as i64)
}
