use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use evsuc::config::{LoadedConfig, RunConfig};
use evsuc::frequency::{mstg_curve, write_mstg_csv};
use evsuc::lp::{HighsBackend, SolverBackend};
use evsuc::rolling::{config_hash, simulate, Manifest, SimulationLedger};
use evsuc::study::{
    evaluate, expand, required_runs, summarize, validate_cases, with_benchmarks, Case, CaseResult,
    RunOutcome,
};
use evsuc::uc::NadirMode;
use evsuc::validation;
use evsuc::wind::{sample_wind_path, write_wind_csv};
use rayon::prelude::*;
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "evsuc",
    version,
    about = "Frequency-secured stochastic scheduling with EV fleets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rolling-horizon simulation of the configured system.
    Simulate(RunArgs),
    /// Case-study sweep over the axes in the `[sweep]` table.
    Sweep(RunArgs),
    /// Minimum system thermal generation curves.
    Mstg(CommonArgs),
    /// Analytic and oracle self-checks.
    Validate(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    days: Option<usize>,
    /// Single seed; overrides the configured seeds.
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Parallel simulations.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    nadir_mode: Option<NadirMode>,
    #[arg(long)]
    penalize_degradation: bool,
}

struct Run {
    loaded: LoadedConfig,
    days: usize,
    seeds: Vec<u64>,
    workers: usize,
    out: PathBuf,
}

impl RunArgs {
    fn resolve(&self) -> Result<Run> {
        let mut loaded = load(&self.common.config)?;
        let cfg = &mut loaded.config;
        if let Some(m) = self.nadir_mode {
            cfg.simulation.options.uc.nadir_mode = m;
        }
        if self.penalize_degradation {
            cfg.simulation.options.uc.penalize_degradation = true;
        }
        let seeds = match (&self.seed, &self.seeds) {
            (Some(s), _) => vec![*s],
            (None, Some(s)) => s.clone(),
            (None, None) => cfg.simulation.seeds.clone(),
        };
        if seeds.is_empty() {
            bail!("no seeds given");
        }
        let days = self.days.unwrap_or(cfg.simulation.days);
        if days == 0 {
            bail!("--days must be at least 1");
        }
        Ok(Run {
            days,
            seeds,
            workers: self.workers.max(1),
            out: self.common.out_dir.clone(),
            loaded,
        })
    }
}

fn load(path: &Path) -> Result<LoadedConfig> {
    RunConfig::load(path).with_context(|| format!("loading {}", path.display()))
}

fn backend() -> HighsBackend {
    HighsBackend::default()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    Ok(())
}

/// Hash of the merged configuration plus the command-line overrides that
/// change results.
fn run_hash(run: &Run) -> Result<String> {
    let options = toml::to_string(&run.loaded.config.simulation.options.uc)?;
    Ok(config_hash(&format!(
        "{}\n{options}\ndays={}",
        run.loaded.merged_text, run.days
    )))
}

fn write_manifest(run: &Run, max_gap: f64, wall_seconds: f64) -> Result<()> {
    #[derive(Serialize)]
    struct Full<'a> {
        #[serde(flatten)]
        manifest: Manifest,
        config_path: &'a str,
        wall_seconds: f64,
    }
    let b = backend();
    let manifest = Manifest {
        config_hash: run_hash(run)?,
        seeds: run.seeds.clone(),
        days: run.days,
        relative_gap: run.loaded.config.simulation.options.relative_gap,
        max_solver_gap: max_gap,
        version: env!("CARGO_PKG_VERSION").into(),
        backend: b.name().into(),
        created: chrono::Utc::now().to_rfc3339(),
    };
    write_json(
        &run.out.join("manifest.json"),
        &Full {
            manifest,
            config_path: &run.loaded.path.display().to_string(),
            wall_seconds,
        },
    )
}

fn simulate_case(run: &Run, case: &Case, seed: u64) -> RunOutcome {
    let cfg = &run.loaded.config;
    let (spec, options) = case.apply(&cfg.system, &cfg.simulation.options);
    log::info!("running {} seed {seed}", case.label());
    simulate(&spec, run.days, seed, &options, &backend()).map_err(|e| e.to_string())
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()?)
}

/// Ledger rows of several seeds with a leading `seed` column.
fn write_ledgers(path: &Path, ledgers: &[&SimulationLedger]) -> Result<()> {
    let mut out = fs::File::create(path)?;
    let mut header_written = false;
    for l in ledgers {
        let mut buf = Vec::new();
        l.write_csv(&mut buf)?;
        let text = String::from_utf8(buf)?;
        let mut lines = text.lines();
        if let Some(h) = lines.next() {
            if !header_written {
                writeln!(out, "seed,{h}")?;
                header_written = true;
            }
        }
        for line in lines {
            writeln!(out, "{},{line}", l.seed)?;
        }
    }
    Ok(())
}

fn cmd_simulate(args: &RunArgs) -> Result<bool> {
    let run = args.resolve()?;
    let plot = run.out.join("plotdata");
    fs::create_dir_all(&plot)?;
    let started = Instant::now();
    let case = Case::base(&run.loaded.config);
    let outcomes: Vec<RunOutcome> = pool(run.workers)?.install(|| {
        run.seeds
            .par_iter()
            .map(|&s| simulate_case(&run, &case, s))
            .collect()
    });

    #[derive(Serialize)]
    struct SeedSummary<'a> {
        seed: u64,
        steps: usize,
        totals: Option<&'a evsuc::rolling::LedgerTotals>,
        invariant_violations: Vec<String>,
        error: Option<String>,
    }
    let spec = &run.loaded.config.system;
    let mut ok = true;
    let mut summaries = Vec::new();
    let mut ledgers = Vec::new();
    for (&seed, o) in run.seeds.iter().zip(&outcomes) {
        match o {
            Ok(l) => {
                let bad = l.check_invariants(spec, 1e-6);
                ok &= bad.is_empty() && l.aborted.is_none();
                summaries.push(SeedSummary {
                    seed,
                    steps: l.rows.len(),
                    totals: Some(&l.totals),
                    invariant_violations: bad,
                    error: l.aborted.clone(),
                });
                ledgers.push(l);
            }
            Err(e) => {
                ok = false;
                summaries.push(SeedSummary {
                    seed,
                    steps: 0,
                    totals: None,
                    invariant_violations: vec![],
                    error: Some(e.clone()),
                });
            }
        }
    }
    write_ledgers(&run.out.join("results.csv"), &ledgers)?;
    for &seed in &run.seeds {
        let steps = run.days * 48 + 1;
        let path = sample_wind_path(&spec.wind, seed, steps)?;
        let f = fs::File::create(plot.join(format!("wind_seed{seed}.csv")))?;
        write_wind_csv(f, run.loaded.config.simulation.options.start, 0.5, &path)?;
    }
    for l in &ledgers {
        let mut w = csv::Writer::from_path(plot.join(format!("dispatch_seed{}.csv", l.seed)))?;
        w.write_record([
            "time",
            "demand_gw",
            "thermal_gw",
            "wind_used_gw",
            "wind_curtailed_gw",
            "ev_soc",
            "ev_charge_gw",
            "ev_discharge_gw",
            "efr_gw",
            "pfr_gw",
            "inertia_gws",
        ])?;
        for r in &l.rows {
            w.write_record([
                r.time.format("%Y-%m-%dT%H:%M:%S").to_string(),
                format!("{:.6}", r.demand_gw),
                format!("{:.6}", r.thermal_gw),
                format!("{:.6}", r.wind_used_gwh / 0.5),
                format!("{:.6}", r.wind_curtailed_gwh / 0.5),
                format!("{:.6}", r.ev_soc),
                format!("{:.6}", r.ev_charge_gw),
                format!("{:.6}", r.ev_discharge_gw),
                format!("{:.6}", r.efr_gw),
                format!("{:.6}", r.pfr_gw),
                format!("{:.6}", r.inertia_gws),
            ])?;
        }
        w.flush()?;
    }
    write_json(&run.out.join("summary.json"), &summaries)?;
    let max_gap = ledgers
        .iter()
        .map(|l| l.totals.max_solver_gap)
        .fold(0.0, f64::max);
    write_manifest(&run, max_gap, started.elapsed().as_secs_f64())?;
    Ok(ok)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

fn write_results_csv(path: &Path, results: &[CaseResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "case",
        "seed",
        "n_ev",
        "regime",
        "wind_gw",
        "battery_gw",
        "battery_gwh",
        "t_e",
        "t_p",
        "penalize_degradation",
        "ev_fr_enabled",
        "system_cost",
        "degradation_cost",
        "net_cost",
        "co2_t",
        "curtailment_gwh",
        "load_shed_gwh",
        "value_per_ev",
        "net_value_per_ev",
        "emissions_delta_per_ev",
        "error",
    ])?;
    for r in results {
        let c = &r.case;
        w.write_record([
            r.label.clone(),
            r.seed.to_string(),
            c.n_ev.to_string(),
            c.regime.to_string(),
            fmt_opt(c.wind_capacity),
            fmt_opt(c.battery.map(|b| b.power_gw)),
            fmt_opt(c.battery.map(|b| b.energy_gwh)),
            fmt_opt(c.fr_times.map(|t| t.0)),
            fmt_opt(c.fr_times.map(|t| t.1)),
            c.penalize_degradation.to_string(),
            c.ev_fr_enabled.to_string(),
            format!("{:.6}", r.totals.system_cost),
            format!("{:.6}", r.totals.degradation_cost),
            format!("{:.6}", r.totals.net_cost),
            format!("{:.6}", r.totals.co2_t),
            format!("{:.6}", r.curtailment_gwh),
            format!("{:.6}", r.totals.load_shed_gwh),
            fmt_opt(r.value_per_ev),
            fmt_opt(r.net_value_per_ev),
            fmt_opt(r.emissions_delta_per_ev),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Value, curtailment and emissions by penetration, one line per regime and
/// penetration.
fn write_penetration_plot(path: &Path, summaries: &[evsuc::study::CaseSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "case",
        "regime",
        "n_ev",
        "value_per_ev",
        "value_std_error",
        "net_value_per_ev",
        "curtailment_gwh",
        "emissions_delta_per_ev",
    ])?;
    let mut rows: Vec<_> = summaries.iter().collect();
    rows.sort_by(|a, b| {
        (a.case.regime.to_string(), a.case.n_ev).cmp(&(b.case.regime.to_string(), b.case.n_ev))
    });
    for s in rows {
        w.write_record([
            s.label.clone(),
            if s.case.n_ev == 0 {
                "none".into()
            } else {
                s.case.regime.to_string()
            },
            s.case.n_ev.to_string(),
            fmt_opt(s.value_per_ev.map(|e| e.mean)),
            fmt_opt(s.value_per_ev.map(|e| e.std_error)),
            fmt_opt(s.net_value_per_ev.map(|e| e.mean)),
            fmt_opt(s.curtailment_gwh.map(|e| e.mean)),
            fmt_opt(s.emissions_delta_per_ev.map(|e| e.mean)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_sweep(args: &RunArgs) -> Result<bool> {
    let run = args.resolve()?;
    let plot = run.out.join("plotdata");
    fs::create_dir_all(&plot)?;
    let started = Instant::now();
    let cases = with_benchmarks(&expand(&run.loaded.config));
    validate_cases(&run.loaded.config, &cases)?;
    let needed = required_runs(&cases, &run.seeds);
    log::info!("{} cases, {} simulations", cases.len(), needed.len());
    let outcomes: Vec<RunOutcome> = pool(run.workers)?.install(|| {
        needed
            .par_iter()
            .map(|(c, s)| simulate_case(&run, c, *s))
            .collect()
    });
    let runs: Vec<_> = needed.into_iter().zip(outcomes).collect();
    let results = evaluate(&cases, &run.seeds, &runs);
    let summaries = summarize(&results);
    write_results_csv(&run.out.join("results.csv"), &results)?;
    write_json(&run.out.join("summary.json"), &summaries)?;
    write_penetration_plot(&plot.join("value_by_penetration.csv"), &summaries)?;
    let max_gap = runs
        .iter()
        .filter_map(|(_, r)| r.as_ref().ok())
        .map(|l| l.totals.max_solver_gap)
        .fold(0.0, f64::max);
    write_manifest(&run, max_gap, started.elapsed().as_secs_f64())?;
    Ok(results.iter().all(|r| r.error.is_none()))
}

fn cmd_mstg(args: &CommonArgs) -> Result<bool> {
    let loaded = load(&args.config)?;
    let cfg = &loaded.config;
    let m = &cfg.mstg;
    let freq = &cfg.system.freq;
    let plot = args.out_dir.join("plotdata");
    fs::create_dir_all(&plot)?;
    let lo = m.fr_min.unwrap_or(0.0);
    let hi = m.fr_max.unwrap_or(4.0 * freq.p_l);
    if !(hi > lo) || m.points < 2 {
        bail!("mstg needs fr_max > fr_min and at least two points");
    }
    let grid: Vec<f64> = (0..m.points)
        .map(|i| lo + (hi - lo) * i as f64 / (m.points - 1) as f64)
        .collect();
    let mut all = csv::Writer::from_path(args.out_dir.join("results.csv"))?;
    all.write_record(["delivery_time_s", "fr_gw", "mstg_gw", "binding_constraint"])?;
    for &t in &m.delivery_times {
        let curve = mstg_curve(freq, m.avg_inertia_constant, m.msg_fraction, t, &grid)?;
        write_mstg_csv(
            fs::File::create(plot.join(format!("mstg_t{t}.csv")))?,
            &curve,
        )?;
        for p in &curve {
            all.write_record([
                t.to_string(),
                format!("{:.6}", p.fr),
                fmt_opt(p.mstg),
                p.binding.to_string(),
            ])?;
        }
    }
    all.flush()?;
    #[derive(Serialize)]
    struct Summary {
        config_hash: String,
        rocof_floor_gws: f64,
        rocof_floor_mstg_gw: f64,
        delivery_times: Vec<f64>,
    }
    let floor = evsuc::frequency::rocof_min_inertia(freq);
    write_json(
        &args.out_dir.join("summary.json"),
        &Summary {
            config_hash: config_hash(&loaded.merged_text),
            rocof_floor_gws: floor,
            rocof_floor_mstg_gw: m.msg_fraction * floor / m.avg_inertia_constant,
            delivery_times: m.delivery_times.clone(),
        },
    )?;
    Ok(true)
}

fn cmd_validate(args: &CommonArgs) -> Result<bool> {
    let loaded = load(&args.config)?;
    fs::create_dir_all(&args.out_dir)?;
    let checks = validation::run_all(&loaded.config, &backend());
    let mut w = csv::Writer::from_path(args.out_dir.join("results.csv"))?;
    w.write_record(["check", "status", "detail"])?;
    for c in &checks {
        println!(
            "{} {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
        w.write_record([
            c.name.as_str(),
            if c.passed { "pass" } else { "fail" },
            c.detail.as_str(),
        ])?;
    }
    w.flush()?;
    write_json(&args.out_dir.join("summary.json"), &checks)?;
    Ok(checks.iter().all(|c| c.passed))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Mstg(a) => cmd_mstg(a),
        Command::Validate(a) => cmd_validate(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("completed with failures; see the output directory");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
