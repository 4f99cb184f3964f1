//! Subcommand implementations. Each returns whether every unit of work
//! succeeded; hard errors (bad input, I/O) are returned as `Err`.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use log::info;
use rayon::prelude::*;
use serde::Serialize;
use ui_rkd::rkd::{
    binned_means, covariate_smoothness, density_kink_check, spell_data, trim_percentiles, Bandwidth, DensityCheck,
    Method, RkdSpec, SpellOutcome, COVARIATE_NAMES,
};
use ui_rkd::schedule::{KinkSide, Policy, Regime, WageConversion};
use ui_rkd::synth::{read_dataset, simulate_range, summarize, write_dataset, SpellRecord, WageBand};
use ui_rkd::welfare::{calibrate_formula, calibrate_from_fits, inputs_from_fits, WelfareInputs};

use crate::args::{CalibrateArgs, DiagnoseArgs, EstimateArgs, ReportArgs, SimulateArgs};
use crate::config::{RunConfig, SCHEMA_VERSION};
use crate::grid::{expand, plain, run_task, CellResult, Overrides};
use crate::output::{
    fits_rows, manifest_path, welfare_rows, write_atomic, write_csv, write_json, CalibrationFile, CalibrationRow,
    ErrorManifest, Failure, FitsFile, FITS_HEADER, WELFARE_HEADER,
};

/// Spells per parallel simulation chunk.
const SIM_CHUNK: u64 = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    /// Outputs were written but some cells failed.
    CellFailures,
}

pub struct RunContext {
    pub config: RunConfig,
    pub pool: rayon::ThreadPool,
}

impl RunContext {
    pub fn new(config: RunConfig, jobs: Option<usize>) -> anyhow::Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.unwrap_or(0)).build()?;
        Ok(RunContext { config, pool })
    }

    fn data_path(&self, flag: &Option<PathBuf>) -> anyhow::Result<PathBuf> {
        flag.clone()
            .or_else(|| self.config.io.data.clone())
            .context("no dataset given: pass --data or set io.data")
    }

    fn out_path(&self, flag: &Option<PathBuf>) -> anyhow::Result<PathBuf> {
        flag.clone().or_else(|| self.config.io.out.clone()).context("no output given: pass --out or set io.out")
    }
}

fn load_records(path: &Path) -> anyhow::Result<Vec<SpellRecord>> {
    let records = read_dataset(path).with_context(|| format!("reading dataset {}", path.display()))?;
    info!("read {} spells from {}", records.len(), path.display());
    Ok(records)
}

pub fn simulate(ctx: &RunContext, args: &SimulateArgs) -> anyhow::Result<Status> {
    let out = ctx.out_path(&args.out)?;
    let mut cfg = ctx.config.sim_config();
    if let Some(n) = args.n {
        cfg.n_workers = n;
    }
    cfg.validate()?;
    let policy = ctx.config.policy()?;
    let model = &ctx.config.model;
    let chunks: Vec<std::ops::Range<u64>> =
        (0..cfg.n_workers).step_by(SIM_CHUNK as usize).map(|s| s..(s + SIM_CHUNK).min(cfg.n_workers)).collect();
    info!("simulating {} spells in {} chunks", cfg.n_workers, chunks.len());
    let parts: Vec<Vec<SpellRecord>> = ctx.pool.install(|| {
        chunks.par_iter().map(|ids| simulate_range(&cfg, &policy, model, ids.clone())).collect::<Result<_, _>>()
    })?;
    let records: Vec<SpellRecord> = parts.into_iter().flatten().collect();
    write_atomic(&out, |w| Ok(write_dataset(&records, w)?))?;
    print_summary(&records, &policy, &ctx.config.conversion()?)?;
    Ok(Status::Success)
}

fn print_summary(records: &[SpellRecord], policy: &Policy, conv: &WageConversion) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{:<6} {:<16} {:>8} {:>10} {:>8} {:>10} {:>10} {:>10}", "regime", "band", "n", "gross_wage", "age", "ui_months", "ui_paid", "censored")?;
    for row in summarize(records, policy, conv) {
        if row.n == 0 {
            continue;
        }
        let regime = row.regime.map_or("all", Regime::as_str);
        let band = match row.band {
            WageBand::All => "all",
            WageBand::BelowLowKink => "below_low_kink",
            WageBand::BetweenKinks => "between_kinks",
            WageBand::AboveHighKink => "above_high_kink",
        };
        writeln!(
            out,
            "{regime:<6} {band:<16} {:>8} {:>10.1} {:>8.1} {:>10.2} {:>10.1} {:>10.3}",
            row.n, row.gross_ref_wage, row.age, row.ui_months_collected, row.total_ui_paid, row.censored
        )?;
    }
    Ok(())
}

pub fn estimate(ctx: &RunContext, args: &EstimateArgs) -> anyhow::Result<Status> {
    let data = ctx.data_path(&args.data)?;
    let out = ctx.out_path(&args.out)?;
    let overrides = Overrides {
        kink: args.kink,
        regime: args.regime,
        bandwidth: args.bandwidth,
        poly: args.poly.map(usize::from),
        controls: args.controls,
        method: args.method,
    };
    let tasks = expand(&ctx.config.estimation, &overrides)?;
    let policy = ctx.config.policy()?;
    let conv = ctx.config.conversion()?;
    let records = load_records(&data)?;
    info!("running {} estimation cells", tasks.len());
    let cells: Vec<CellResult> =
        ctx.pool.install(|| tasks.par_iter().map(|t| run_task(t, &records, &policy, &conv)).collect());
    write_json(&out, &FitsFile::new(cells.clone()))?;
    let failures: Vec<Failure> = cells
        .iter()
        .filter(|c| !c.ok)
        .map(|c| Failure {
            label: c.label.clone(),
            outcome: c.outcome.as_str().to_string(),
            error: c.error.clone().unwrap_or_default(),
        })
        .collect();
    finish(&out, failures)
}

/// Writes the error manifest when needed and maps failures to a status.
fn finish(out: &Path, failures: Vec<Failure>) -> anyhow::Result<Status> {
    let manifest = manifest_path(out);
    if failures.is_empty() {
        if manifest.exists() {
            std::fs::remove_file(&manifest).with_context(|| format!("removing stale {}", manifest.display()))?;
        }
        return Ok(Status::Success);
    }
    for f in &failures {
        log::warn!("cell `{}` ({}) failed: {}", f.label, f.outcome, f.error);
    }
    write_json(&manifest, &ErrorManifest { schema_version: SCHEMA_VERSION, failures })?;
    Ok(Status::CellFailures)
}

/// Pairs the log-wage and total-UI fits of each label, in order of first
/// appearance.
pub fn calibration_rows(cells: &[CellResult], delta: f64) -> Vec<CalibrationRow> {
    let mut labels: Vec<&str> = Vec::new();
    for c in cells {
        let relevant = matches!(c.outcome, SpellOutcome::LogReemploymentWage | SpellOutcome::TotalUiPaid);
        if relevant && !labels.contains(&c.label.as_str()) {
            labels.push(&c.label);
        }
    }
    labels
        .into_iter()
        .map(|label| {
            let find = |o: SpellOutcome| cells.iter().find(|c| c.label == label && c.outcome == o);
            let fit = |o: SpellOutcome| -> anyhow::Result<&ui_rkd::rkd::RkdFit> {
                let c = find(o).with_context(|| format!("no {} fit", o.as_str()))?;
                match (&c.fit, &c.error) {
                    (Some(f), _) if c.ok => Ok(f),
                    (_, e) => bail!("{} fit failed: {}", o.as_str(), e.as_deref().unwrap_or("unknown error")),
                }
            };
            let paired = fit(SpellOutcome::LogReemploymentWage).and_then(|w| {
                let u = fit(SpellOutcome::TotalUiPaid)?;
                Ok((inputs_from_fits(w, u, delta)?, calibrate_from_fits(w, u, delta)?))
            });
            match paired {
                Ok((inputs, result)) => CalibrationRow {
                    label: label.to_string(),
                    ok: true,
                    inputs: Some(inputs),
                    result: Some(result),
                    error: None,
                },
                Err(e) => CalibrationRow {
                    label: label.to_string(),
                    ok: false,
                    inputs: None,
                    result: None,
                    error: Some(format!("{e:#}")),
                },
            }
        })
        .collect()
}

pub fn calibrate(ctx: &RunContext, args: &CalibrateArgs) -> anyhow::Result<Status> {
    let delta = args.delta.unwrap_or(ctx.config.welfare.delta);
    let rows = match (&args.fits, args.eta, args.dr_db, args.r_over_b) {
        (Some(path), ..) => calibration_rows(&FitsFile::load(path)?.cells, delta),
        (None, Some(eta_wb), Some(dr_db), Some(r_over_b)) => {
            let inputs = WelfareInputs { eta_wb, dr_db, r_over_b, delta, ..WelfareInputs::default() };
            let result = calibrate_formula(&inputs)?;
            vec![CalibrationRow { label: "direct".into(), ok: true, inputs: Some(inputs), result: Some(result), error: None }]
        }
        _ => bail!("pass --fits, or all of --eta, --dr-db and --r-over-b"),
    };
    let file = CalibrationFile { schema_version: SCHEMA_VERSION, rows };
    write_json(&args.out, &file)?;
    write_csv(&args.out.with_extension("csv"), &WELFARE_HEADER, &welfare_rows(&file.rows))?;
    let failures = file
        .rows
        .iter()
        .filter(|r| !r.ok)
        .map(|r| Failure { label: r.label.clone(), outcome: "welfare".into(), error: r.error.clone().unwrap_or_default() })
        .collect();
    finish(&args.out, failures)
}

pub fn report(ctx: &RunContext, args: &ReportArgs) -> anyhow::Result<Status> {
    let fits = FitsFile::load(&args.fits)?;
    let rows = calibration_rows(&fits.cells, ctx.config.welfare.delta);
    write_csv(&args.out.join("fits.csv"), &FITS_HEADER, &fits_rows(&fits.cells))?;
    write_csv(&args.out.join("welfare.csv"), &WELFARE_HEADER, &welfare_rows(&rows))?;
    Ok(Status::Success)
}

#[derive(Debug, Serialize)]
struct SmoothnessResult {
    outcome: String,
    /// Kink in the outcome predicted from covariates.
    slope_change: Option<f64>,
    se: Option<f64>,
    n: Option<usize>,
    error: Option<String>,
}

#[derive(Debug, Serialize)]
struct KinkDiagnostics {
    regime: Regime,
    kink: KinkSide,
    kink_point: f64,
    density: Option<DensityCheck>,
    density_t: Option<f64>,
    density_error: Option<String>,
    covariate_smoothness: Vec<SmoothnessResult>,
}

#[derive(Debug, Serialize)]
struct DiagnosticsFile {
    schema_version: u32,
    bin_width: f64,
    window: f64,
    kinks: Vec<KinkDiagnostics>,
}

const BINNED_OUTCOMES: [SpellOutcome; 4] = [
    SpellOutcome::TotalUiPaid,
    SpellOutcome::UiMonthsCollected,
    SpellOutcome::NonemploymentMonths,
    SpellOutcome::LogReemploymentWage,
];

pub fn diagnose(ctx: &RunContext, args: &DiagnoseArgs) -> anyhow::Result<Status> {
    let data = ctx.data_path(&args.data)?;
    let d = &ctx.config.diagnose;
    let bin_width = args.bin_width.unwrap_or(d.bin_width);
    let policy = ctx.config.policy()?;
    let conv = ctx.config.conversion()?;
    let records = load_records(&data)?;
    let regimes: Vec<Regime> =
        [Regime::Pre, Regime::Post].into_iter().filter(|g| records.iter().any(|r| r.regime == *g)).collect();

    let mut ok = true;
    let bin_header = ["regime", "bin_center", "mean", "count"];
    let mut benefit_rows = Vec::new();
    for &regime in &regimes {
        let rule = policy.rule(regime);
        let anchor = rule.kink_locations(&conv).gross_high;
        let rs: Vec<&SpellRecord> = records.iter().filter(|r| r.regime == regime).collect();
        let x: Vec<f64> = rs.iter().map(|r| r.gross_ref_wage).collect();
        let b: Vec<f64> = rs.iter().map(|r| rule.initial_benefit(r.net_ref_wage)).collect::<Result<_, _>>()?;
        push_bins(&mut benefit_rows, regime, &binned_means(&x, &b, bin_width, anchor)?);
    }
    write_csv(&args.out.join("bins_initial_benefit.csv"), &bin_header, &benefit_rows)?;

    for outcome in BINNED_OUTCOMES {
        let mut rows = Vec::new();
        for &regime in &regimes {
            let anchor = policy.rule(regime).kink_locations(&conv).gross_high;
            let (data, _) = spell_data(&records, outcome, &policy, Some(regime), false)?;
            let (x, y) = if outcome.is_log() {
                let keep = trim_percentiles(&data.outcome, d.wage_trim.0, d.wage_trim.1)?;
                let pick = |v: &[f64]| v.iter().zip(&keep).filter(|(_, k)| **k).map(|(a, _)| *a).collect::<Vec<_>>();
                (pick(&data.running), pick(&data.outcome))
            } else {
                (data.running.clone(), data.outcome.clone())
            };
            push_bins(&mut rows, regime, &binned_means(&x, &y, bin_width, anchor)?);
        }
        write_csv(&args.out.join(format!("bins_{}.csv", outcome.as_str())), &bin_header, &rows)?;
    }

    let mut kinks = Vec::new();
    for &regime in &regimes {
        let locations = policy.rule(regime).kink_locations(&conv);
        let running: Vec<f64> = records.iter().filter(|r| r.regime == regime).map(|r| r.gross_ref_wage).collect();
        for side in [KinkSide::Low, KinkSide::High] {
            let kink_point = locations.gross(side);
            let (density, density_error) = match density_kink_check(&running, kink_point, bin_width, d.density_window) {
                Ok(c) => (Some(c), None),
                Err(e) => {
                    ok = false;
                    (None, Some(e.to_string()))
                }
            };
            let spec = RkdSpec::new(kink_point, Method::Sharp { slope_change: 1.0 }, Bandwidth::Fixed(d.density_window));
            let smooth = [SpellOutcome::TotalUiPaid, SpellOutcome::LogReemploymentWage]
                .into_iter()
                .map(|outcome| {
                    let fit = spell_data(&records, outcome, &policy, Some(regime), false)
                        .and_then(|(data, _)| covariate_smoothness(&data, &COVARIATE_NAMES, &spec));
                    match fit {
                        Ok(f) => SmoothnessResult {
                            outcome: outcome.as_str().into(),
                            slope_change: Some(f.nu1),
                            se: Some(f.se_nu1),
                            n: Some(f.n_used),
                            error: None,
                        },
                        Err(e) => {
                            ok = false;
                            SmoothnessResult { outcome: outcome.as_str().into(), slope_change: None, se: None, n: None, error: Some(e.to_string()) }
                        }
                    }
                })
                .collect();
            kinks.push(KinkDiagnostics {
                regime,
                kink: side,
                kink_point,
                density_t: density.map(|c| c.t_stat()),
                density,
                density_error,
                covariate_smoothness: smooth,
            });
        }
    }
    let file = DiagnosticsFile { schema_version: SCHEMA_VERSION, bin_width, window: d.density_window, kinks };
    write_json(&args.out.join("diagnostics.json"), &file)?;
    Ok(if ok { Status::Success } else { Status::CellFailures })
}

fn push_bins(rows: &mut Vec<Vec<String>>, regime: Regime, bins: &[ui_rkd::rkd::Bin]) {
    let regime = plain(&regime);
    rows.extend(bins.iter().map(|b| vec![regime.clone(), b.bin_center.to_string(), b.mean.to_string(), b.count.to_string()]));
}
