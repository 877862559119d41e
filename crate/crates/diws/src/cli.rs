use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use diws_core::metrics::DisturbanceBudget;
use diws_core::searchspace::subnet_forward;
use diws_core::trainer::Mode;
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::csv_io::{write_dataset, write_ktau_series, write_pd_matrix};
use crate::error::{HarnessError, Result};
use crate::experiments::{self, check_suites, compare_pd, experiment_archs, gt_scratch, gt_tau_run, tracked_run};
use crate::record::{pd_matrix_json, run_record_json, to_text};

#[derive(Debug, Parser)]
#[command(name = "diws", version, about = "Disturbance-immune weight-sharing experiments")]
pub struct Cli {
    /// JSON experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the training seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the supernet update mode.
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Di,
    Standard,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Full search run; writes run_record.json.
    Train,
    /// Sequential training under both modes; writes pd_di.csv,
    /// pd_standard.csv and compare_pd.json.
    ComparePd,
    /// Interval rank correlation of tracked architectures; writes ktau.csv.
    Ktau,
    /// Inherited versus standalone ranking; writes gt_tau.json.
    GtTau,
    /// Bound and convergence suites; writes check.json, exits 3 on failure.
    Check,
    /// Writes the configured dataset to data.csv.
    GenData,
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| HarnessError::io(path, e))
}

fn resolve(cli: &Cli) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    if let Some(mode) = cli.mode {
        cfg.train.mode = match mode {
            ModeArg::Di => Mode::Di,
            ModeArg::Standard => Mode::Standard,
        };
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    let out = cfg.out_dir.clone();
    fs::create_dir_all(&out).map_err(|e| HarnessError::io(&out, e))?;
    Ok((cfg, out))
}

/// Runs one subcommand; progress lines go to `log`.
pub fn execute(cli: &Cli, log: &mut dyn Write) -> Result<()> {
    let (cfg, out) = resolve(cli)?;
    let t = &cfg.train;
    let m = &cfg.metrics;
    match cli.command {
        Command::Check => {
            let instances = check_suites(t.seed)?;
            let failed = instances.iter().filter(|i| !i.holds).count();
            let report: Vec<_> = instances
                .iter()
                .map(|i| json!({ "suite": i.suite, "index": i.index, "holds": i.holds, "detail": i.detail }))
                .collect();
            write(&out, "check.json", &to_text(&json!({ "seed": t.seed, "failed": failed, "instances": report })))?;
            for suite in ["output_change_bound", "gradient_descent_rate", "projected_descent"] {
                let of: Vec<_> = instances.iter().filter(|i| i.suite == suite).collect();
                let ok = of.iter().filter(|i| i.holds).count();
                writeln!(log, "{suite}: {ok}/{} hold", of.len()).ok();
            }
            if failed > 0 {
                return Err(HarnessError::CheckFailed(failed));
            }
        }
        Command::GenData => {
            let ds = cfg.dataset.load()?;
            write(&out, "data.csv", &write_dataset(&ds))?;
            writeln!(log, "wrote {} samples of dimension {}", ds.len(), ds.dim()).ok();
        }
        Command::Train => {
            let ds = cfg.dataset.load()?;
            let record = diws_core::trainer::run(t, &ds)?;
            write(&out, "run_record.json", &to_text(&run_record_json(&record, &cfg, None)))?;
            let best = record.final_policy.argmax_arch();
            writeln!(log, "most likely architecture: {best}").ok();
        }
        Command::ComparePd => {
            let ds = cfg.dataset.load()?;
            let cmp = compare_pd(t, &ds, m.pd_archs, m.pd_steps_per_arch)?;
            write(&out, "pd_di.csv", &write_pd_matrix(&cmp.di))?;
            write(&out, "pd_standard.csv", &write_pd_matrix(&cmp.standard))?;
            let (train, val) = experiments::train_val_split(t, &ds)?;
            let budget = DisturbanceBudget::new(m.gamma)?;
            let archs = experiment_archs(&t.cell, m.pd_archs, t.seed)?;
            let mut summary = serde_json::Map::new();
            for (mode, matrix) in [(Mode::Di, &cmp.di), (Mode::Standard, &cmp.standard)] {
                let mut changes = BTreeMap::new();
                for interval in 1..matrix.len() {
                    changes.insert(interval.to_string(), matrix.performance_change(interval)?);
                }
                let exceed = budget_fraction(&cfg, mode, &archs, &train, &val, &budget)?;
                summary.insert(
                    mode.name().to_string(),
                    json!({
                        "mean_row_change": matrix.mean_row_change(),
                        "performance_change": changes,
                        "first_arch_output_exceeding_gamma": exceed,
                        "pd_matrix": pd_matrix_json(matrix),
                    }),
                );
                writeln!(log, "{}: mean row change {}", mode.name(), matrix.mean_row_change()).ok();
            }
            let doc = json!({ "seed": t.seed, "gamma": m.gamma, "modes": summary });
            write(&out, "compare_pd.json", &to_text(&doc))?;
        }
        Command::Ktau => {
            let ds = cfg.dataset.load()?;
            let (_, trace) = tracked_run(t, &ds, m.tracked_archs)?;
            let series = trace.ktau_series(m.ktau_interval)?;
            write(&out, "ktau.csv", &write_ktau_series(&series))?;
            writeln!(
                log,
                "mean ktau at interval {}: {}",
                m.ktau_interval,
                experiments::mean(series.iter().map(|s| s.1))
            )
            .ok();
        }
        Command::GtTau => {
            let ds = cfg.dataset.load()?;
            let archs = experiment_archs(&t.cell, m.gt_archs, t.seed)?;
            let scratch = gt_scratch(t, &ds, &archs, &m.scratch)?;
            let (_, report) = gt_tau_run(t, &ds, &archs, scratch)?;
            let doc = json!({
                "seed": t.seed,
                "mode": t.mode.name(),
                "archs": report.archs,
                "ws_accs": report.ws_accs,
                "scratch_accs": report.scratch_accs,
                "tau": report.tau,
            });
            write(&out, "gt_tau.json", &to_text(&doc))?;
            writeln!(log, "gt-tau ({}): {}", t.mode.name(), report.tau).ok();
        }
    }
    Ok(())
}

/// Fraction of validation samples whose first-architecture logits move by
/// more than gamma between the end of its own training and the end of the
/// sequence.
fn budget_fraction(
    cfg: &ExperimentConfig,
    mode: Mode,
    archs: &[diws_core::searchspace::ArchEncoding],
    train: &diws_core::data::Dataset,
    val: &diws_core::data::Dataset,
    budget: &DisturbanceBudget,
) -> Result<f64> {
    let t = &cfg.train;
    let pd = experiments::pd_config(t, mode, cfg.metrics.pd_steps_per_arch);
    let (after_first, after_all) = diws_core::metrics::sequential_stores(archs, &t.cell, &pd, train)?;
    let before = subnet_forward(&archs[0], &val.samples, &after_first)?.logits;
    let after = subnet_forward(&archs[0], &val.samples, &after_all)?.logits;
    Ok(budget.fraction_exceeding(&before, &after)?)
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            e.print().ok();
            return code;
        }
    };
    let stdout = std::io::stdout();
    match execute(&cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
