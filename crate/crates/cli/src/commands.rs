use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use chrono::{Datelike, NaiveDate, Weekday};
use serde_json::{json, Value};
use volnet::constraints::{audit, audit_grids, limit_dplus, ViolationReport};
use volnet::data::{
    filter_quotes, group_by_day, load_quotes, prepare_points, split_day, write_points, write_quotes,
    write_rejections, ForwardTable, LoadReport, PreparedPoint, Quote, RejectRule,
};
use volnet::evaluation::{evaluate_day, rn_density, surface_grid, uniform_grid, EvalReport, FittedSurface};
use volnet::models::{Architecture, ModelDims, ModelFile, VolSurface};
use volnet::ssvi::{default_synth_params, fit_ssvi, synth_market, SynthSpec};
use volnet::training::{fit_day, GridRefresh, LrSchedule, TrainConfig, MIN_DAY_QUOTES, TRAIN_FRACTION};
use volnet::{DataBatch, HyperParams};

use crate::args::*;
use crate::manifest::Run;
use crate::UsageError;

const DATE_FMT: &str = "%Y-%m-%d";

pub fn load_config(path: Option<&Path>, run: &mut Run) -> Result<HyperParams> {
    let hp = match path {
        Some(p) => {
            let text = std::fs::read_to_string(run.input(p)).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<HyperParams>(&text)
                .map_err(|e| volnet::Error::Parse(format!("config {}: {e}", p.display())))?
        }
        None => HyperParams::default(),
    };
    hp.validate()?;
    Ok(hp)
}

fn read_model(path: &Path, run: &mut Run) -> Result<(ModelFile, FittedSurface)> {
    let file = ModelFile::read(run.input(path)).with_context(|| format!("reading model {}", path.display()))?;
    let surface = FittedSurface::from_file(&file)?;
    Ok((file, surface))
}

// ---------------------------------------------------------------- simulate

fn next_business_day(d: NaiveDate) -> NaiveDate {
    let mut next = d.succ_opt().expect("date in range");
    while matches!(next.weekday(), Weekday::Sat | Weekday::Sun) {
        next = next.succ_opt().expect("date in range");
    }
    next
}

pub fn simulate(args: &SimulateArgs, run: &mut Run) -> Result<()> {
    if args.days == 0 || args.quotes == 0 {
        return Err(UsageError("--days and --quotes must be positive".into()).into());
    }
    let params = default_synth_params();
    let mut quotes: Vec<Quote> = Vec::new();
    let mut truth = String::from("date,quote_id,m,tau,iv,iv_clean\n");
    let mut date = args.trade_date;
    if matches!(date.weekday(), Weekday::Sat | Weekday::Sun) {
        date = next_business_day(date);
    }
    for day in 0..args.days {
        let spec = SynthSpec {
            trade_date: date,
            spot: args.spot,
            rate: args.rate,
            maturity_days: args.maturities.clone(),
            n_quotes: args.quotes,
            noise_sd: args.noise,
            seed: run.seed.wrapping_add(day as u64),
        };
        let synth = synth_market(&params, &spec)?;
        let offset = quotes.len();
        for ((q, p), clean) in synth.quotes.into_iter().zip(&synth.points).zip(&synth.clean_vols) {
            let id = offset + q.id;
            truth.push_str(&format!("{},{},{},{},{},{}\n", date.format(DATE_FMT), id, p.m, p.tau, p.v, clean));
            quotes.push(Quote { id, ..q });
        }
        date = next_business_day(date);
    }
    let mut buf = Vec::new();
    write_quotes(&mut buf, &quotes)?;
    let stem = args.out.file_stem().and_then(|s| s.to_str()).unwrap_or("day").to_string();
    let quote_path = run.write(&args.out, buf)?;
    let sibling = |suffix: &str| args.out.with_file_name(format!("{stem}{suffix}"));
    run.write(sibling("_truth.csv"), truth)?;
    run.write(sibling("_ssvi.json"), params.to_file(json!({ "generator": "synth_market" })).to_json())?;
    run.config = json!({
        "quotes_per_day": args.quotes,
        "noise_sd": args.noise,
        "days": args.days,
        "trade_date": args.trade_date.format(DATE_FMT).to_string(),
        "spot": args.spot,
        "rate": args.rate,
        "maturity_days": args.maturities,
    });
    println!("wrote {} quotes to {}", quotes.len(), quote_path.display());
    Ok(())
}

// ---------------------------------------------------------------- pipeline

struct Pipeline {
    load: LoadReport,
    rejected: Vec<(Quote, RejectRule)>,
    failures: Vec<(usize, String)>,
    days: BTreeMap<NaiveDate, Vec<PreparedPoint>>,
}

fn run_pipeline(path: &Path, run: &mut Run) -> Result<Pipeline> {
    let load = load_quotes(run.input(path)).with_context(|| format!("loading quotes from {}", path.display()))?;
    // Forwards come from the raw quotes so that filtering twice is a no-op.
    let forwards = ForwardTable::estimate(&load.quotes);
    let filtered = filter_quotes(&load.quotes, &forwards);
    let prepared = prepare_points(&filtered.kept, &forwards);
    Ok(Pipeline {
        days: group_by_day(prepared.points),
        rejected: filtered.rejected,
        failures: prepared.failures,
        load,
    })
}

impl Pipeline {
    fn summary(&self) -> Value {
        let mut by_rule: BTreeMap<&str, usize> = BTreeMap::new();
        for (_, rule) in &self.rejected {
            *by_rule.entry(rule.tag()).or_default() += 1;
        }
        json!({
            "rows_loaded": self.load.quotes.len(),
            "row_errors": self.load.rejected.iter().map(|e| json!({ "line": e.line, "reason": e.reason })).collect::<Vec<_>>(),
            "rejected_by_rule": by_rule,
            "inversion_failures": self.failures.iter().map(|(id, why)| json!({ "quote_id": id, "reason": why })).collect::<Vec<_>>(),
            "days": self.days.iter().map(|(d, p)| json!({ "date": d.format(DATE_FMT).to_string(), "points": p.len() })).collect::<Vec<_>>(),
        })
    }

    fn write_reports(&self, run: &mut Run) -> Result<()> {
        let mut buf = Vec::new();
        let all: Vec<PreparedPoint> = self.days.values().flatten().cloned().collect();
        write_points(&mut buf, &all)?;
        run.write("points.csv", buf)?;
        let mut buf = Vec::new();
        write_rejections(&mut buf, &self.rejected)?;
        run.write("rejections.csv", buf)?;
        run.write("pipeline.json", serde_json::to_string_pretty(&self.summary())?)?;
        Ok(())
    }
}

// ---------------------------------------------------------------- fit

#[derive(Debug, Clone)]
struct FitPlan {
    arch: ArchArg,
    dims: ModelDims,
    hp: HyperParams,
    seed: u64,
    log_every: usize,
    grid_refresh: GridRefresh,
    lr_schedule: LrSchedule,
    wall_clock: bool,
}

impl FitPlan {
    fn network(&self) -> Option<Architecture> {
        match self.arch {
            ArchArg::Single => Some(Architecture::Single),
            ArchArg::Multi => Some(Architecture::Multi),
            ArchArg::Vanilla => Some(Architecture::Vanilla),
            ArchArg::Ssvi => None,
        }
    }

    fn tag(&self) -> &'static str {
        self.network().map_or(volnet::ssvi::SSVI_TAG, |a| a.tag())
    }

    fn snapshot(&self) -> Value {
        json!({
            "arch": self.tag(),
            "dims": self.network().map(|_| self.dims),
            "hyperparams": self.hp,
            "lr_schedule": self.lr_schedule,
            "grid_refresh": self.grid_refresh,
            "log_every": self.log_every,
            "wall_clock": self.wall_clock,
        })
    }
}

fn resolve_hp(args: &FitArgs, mut hp: HyperParams) -> HyperParams {
    if args.incomplete_constraints {
        hp = hp.without_constraints();
    }
    let set = |field: &mut f64, flag: Option<f64>| {
        if let Some(v) = flag {
            *field = v;
        }
    };
    set(&mut hp.alpha, args.alpha);
    set(&mut hp.beta, args.beta);
    set(&mut hp.gamma, args.gamma);
    set(&mut hp.delta, args.delta);
    set(&mut hp.eta, args.eta);
    set(&mut hp.rho, args.rho);
    set(&mut hp.omega, args.omega);
    set(&mut hp.learning_rate, args.lr);
    if let Some(n) = args.iters {
        hp.n_iterations = n;
    }
    hp
}

fn resolve_dims(args: &FitArgs) -> Result<ModelDims> {
    let dims = match args.arch {
        ArchArg::Multi => ModelDims::new(
            args.experts.unwrap_or(4),
            args.hidden.unwrap_or(8),
            args.gate_hidden.unwrap_or(5),
        )?,
        ArchArg::Single | ArchArg::Vanilla => {
            if args.experts.is_some() || args.gate_hidden.is_some() {
                return Err(UsageError("--I and --K only apply to --arch multi".into()).into());
            }
            ModelDims::single(args.hidden.unwrap_or(32))
        }
        ArchArg::Ssvi => ModelDims::single(1),
    };
    Ok(dims)
}

struct DayArtifacts {
    date: NaiveDate,
    model_json: String,
    trace_csv: Option<String>,
    summary: Value,
}

enum DayOutcome {
    Fitted(Box<DayArtifacts>),
    Skipped { date: NaiveDate, reason: String },
}

fn ids(points: &[PreparedPoint]) -> Vec<usize> {
    points.iter().map(|p| p.quote_id).collect()
}

fn fit_one(date: NaiveDate, points: &[PreparedPoint], plan: &FitPlan) -> volnet::Result<DayOutcome> {
    if points.len() < MIN_DAY_QUOTES {
        return Ok(DayOutcome::Skipped {
            date,
            reason: format!("{} usable quotes, need {MIN_DAY_QUOTES}", points.len()),
        });
    }
    let mut meta = json!({
        "date": date.format(DATE_FMT).to_string(),
        "seed": plan.seed,
        "config": plan.snapshot(),
    });
    let (model_json, trace_csv, train, test, extra, surface) = match plan.network() {
        Some(arch) => {
            let mut config = TrainConfig::new(arch, plan.dims, plan.hp, plan.seed);
            config.log_every = plan.log_every;
            config.grid_refresh = plan.grid_refresh;
            config.lr_schedule = plan.lr_schedule;
            config.wall_clock = plan.wall_clock;
            let day = fit_day(points, &config)?;
            let extra = json!({
                "best_iteration": day.fit.best_iteration,
                "best_loss": day.fit.best_loss.total,
                "final_loss": day.fit.final_loss.total,
            });
            meta["train_quote_ids"] = json!(ids(&day.train));
            meta["test_quote_ids"] = json!(ids(&day.test));
            meta["fit"] = extra.clone();
            let json = day.fit.model.to_json(meta);
            let csv = day.fit.trace.to_csv();
            (json, Some(csv), day.train, day.test, extra, FittedSurface::Network(day.fit.model))
        }
        None => {
            let (train, test) = split_day(points, TRAIN_FRACTION, plan.seed)?;
            let batch = DataBatch::from_triples(&train.iter().map(|p| (p.m, p.tau, p.v)).collect::<Vec<_>>())?;
            let fit = fit_ssvi(&batch, plan.seed)?;
            let extra = json!({ "mspe": fit.mspe });
            meta["train_quote_ids"] = json!(ids(&train));
            meta["test_quote_ids"] = json!(ids(&test));
            meta["fit"] = extra.clone();
            let json = fit.params.to_file(meta).to_json();
            (json, None, train, test, extra, FittedSurface::Ssvi(fit.params))
        }
    };
    let eval = evaluate_day(&surface, date, &train, &test)?;
    let summary = json!({
        "date": date.format(DATE_FMT).to_string(),
        "status": "fitted",
        "fit": extra,
        "eval": eval,
    });
    Ok(DayOutcome::Fitted(Box::new(DayArtifacts { date, model_json, trace_csv, summary })))
}

pub fn fit(args: &FitArgs, base_hp: HyperParams, run: &mut Run) -> Result<()> {
    let hp = resolve_hp(args, base_hp);
    hp.validate()?;
    let plan = FitPlan {
        arch: args.arch,
        dims: resolve_dims(args)?,
        hp,
        seed: run.seed,
        log_every: args.log_every,
        grid_refresh: match args.grid_refresh {
            RefreshArg::Once => GridRefresh::Once,
            RefreshArg::PerIteration => GridRefresh::PerIteration,
        },
        lr_schedule: if args.constant_lr {
            LrSchedule::Constant
        } else {
            LrSchedule::InverseTime { decay_steps: args.decay_steps }
        },
        wall_clock: args.wall_clock,
    };
    if let Some(arch) = plan.network() {
        plan.dims.validate_for(arch)?;
        let mut probe = TrainConfig::new(arch, plan.dims, plan.hp, plan.seed);
        probe.log_every = plan.log_every;
        probe.lr_schedule = plan.lr_schedule;
        probe.validate()?;
    }
    run.config = plan.snapshot();

    let pipeline = run_pipeline(&args.quotes, run)?;
    pipeline.write_reports(run)?;
    let wanted: HashSet<NaiveDate> = args.date.iter().copied().collect();
    let jobs: Vec<(NaiveDate, &[PreparedPoint])> = pipeline
        .days
        .iter()
        .filter(|(d, _)| wanted.is_empty() || wanted.contains(d))
        .map(|(d, p)| (*d, p.as_slice()))
        .collect();
    if jobs.is_empty() {
        return Err(volnet::Error::InsufficientData { needed: MIN_DAY_QUOTES, got: 0 })
            .context("no trading day with usable quotes");
    }

    let workers = (args.days_parallel as usize).min(jobs.len());
    let mut outcomes: Vec<Option<volnet::Result<DayOutcome>>> = (0..jobs.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let jobs = &jobs;
                let plan = &plan;
                s.spawn(move || {
                    (w..jobs.len())
                        .step_by(workers)
                        .map(|i| (i, fit_one(jobs[i].0, jobs[i].1, plan)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("fit worker panicked") {
                outcomes[i] = Some(r);
            }
        }
    });

    let mut summaries = Vec::new();
    let mut fitted = 0;
    for outcome in outcomes.into_iter().map(|o| o.expect("every day visited")) {
        match outcome? {
            DayOutcome::Fitted(day) => {
                let name = format!("{}_{}", day.date.format(DATE_FMT), plan.tag());
                let path = run.write(format!("{name}.json"), &day.model_json)?;
                if let Some(csv) = &day.trace_csv {
                    run.write(format!("{name}_trace.csv"), csv)?;
                }
                println!("{}: {}", day.date, path.display());
                summaries.push(day.summary);
                fitted += 1;
            }
            DayOutcome::Skipped { date, reason } => {
                eprintln!("skipping {date}: {reason}");
                summaries.push(json!({ "date": date.format(DATE_FMT).to_string(), "status": "skipped", "reason": reason }));
            }
        }
    }
    run.write(format!("fit_{}_summary.json", plan.tag()), serde_json::to_string_pretty(&summaries)?)?;
    if fitted == 0 {
        return Err(volnet::Error::InsufficientData { needed: MIN_DAY_QUOTES, got: 0 })
            .context("no trading day had enough usable quotes");
    }
    Ok(())
}

// ---------------------------------------------------------------- predict

fn read_points(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header = rdr.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| volnet::Error::Format(format!("{}: missing `{name}` column", path.display())))
    };
    let (im, it) = (col("m")?, col("tau")?);
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let num = |k: usize| {
            row.get(k)
                .unwrap_or("")
                .parse::<f64>()
                .map_err(|e| volnet::Error::Parse(format!("{} line {}: {e}", path.display(), i + 2)))
        };
        out.push((num(im)?, num(it)?));
    }
    Ok(out)
}

pub fn predict(args: &PredictArgs, run: &mut Run) -> Result<()> {
    let (_, surface) = read_model(&args.model, run)?;
    let rows: Vec<(f64, f64, f64)> = match &args.points {
        Some(p) => read_points(run.input(p).as_path())?
            .into_iter()
            .map(|(m, tau)| surface.vol(m, tau).map(|v| (m, tau, v)))
            .collect::<volnet::Result<_>>()?,
        None => {
            if args.n_m < 2 || args.n_tau < 2 || args.m_min >= args.m_max || args.tau_min >= args.tau_max {
                return Err(UsageError("grid needs n >= 2 and min < max on both axes".into()).into());
            }
            surface_grid(&surface, (args.m_min, args.m_max), (args.tau_min, args.tau_max), args.n_m, args.n_tau)?
        }
    };
    let mut csv = String::from("m,tau,iv\n");
    for (m, tau, v) in &rows {
        csv.push_str(&format!("{m},{tau},{v}\n"));
    }
    run.config = json!({ "model": args.model, "points": args.points, "n": rows.len() });
    let path = run.write(&args.out, csv)?;
    println!("wrote {} values to {}", rows.len(), path.display());
    Ok(())
}

// ---------------------------------------------------------------- evaluate

fn meta_ids(meta: &Value, key: &str) -> Option<Vec<usize>> {
    meta.get(key)?.as_array().map(|a| a.iter().filter_map(|v| v.as_u64()).map(|v| v as usize).collect())
}

/// Points in the order their ids were recorded, so sums match the fit's.
fn pick(points: &[PreparedPoint], ids: &[usize]) -> Vec<PreparedPoint> {
    let by_id: BTreeMap<usize, &PreparedPoint> = points.iter().map(|p| (p.quote_id, p)).collect();
    ids.iter().filter_map(|id| by_id.get(id).map(|p| (*p).clone())).collect()
}

pub fn evaluate(args: &EvaluateArgs, run: &mut Run) -> Result<()> {
    let pipeline = run_pipeline(&args.quotes, run)?;
    let mut days = Vec::new();
    let mut reports = Vec::new();
    for path in &args.model {
        let (file, surface) = read_model(path, run)?;
        let meta = &file.training_meta;
        let date = match meta.get("date").and_then(Value::as_str) {
            Some(s) => NaiveDate::parse_from_str(s, DATE_FMT)
                .map_err(|e| volnet::Error::Parse(format!("{}: training_meta.date: {e}", path.display())))?,
            None if pipeline.days.len() == 1 => *pipeline.days.keys().next().expect("one day"),
            None => {
                return Err(volnet::Error::Format(format!(
                    "{} has no training date and the quote file spans {} days",
                    path.display(),
                    pipeline.days.len()
                ))
                .into())
            }
        };
        let points = pipeline
            .days
            .get(&date)
            .ok_or(volnet::Error::InsufficientData { needed: 1, got: 0 })
            .with_context(|| format!("no usable quotes on {date}"))?;
        // Without a recorded split, every quote counts as in-sample.
        let (train, test): (Vec<PreparedPoint>, Vec<PreparedPoint>) =
            match (meta_ids(meta, "train_quote_ids"), meta_ids(meta, "test_quote_ids")) {
                (Some(tr), Some(te)) => (pick(points, &tr), pick(points, &te)),
                _ => (points.clone(), Vec::new()),
            };
        if train.is_empty() {
            return Err(anyhow!(volnet::Error::Format(format!(
                "{}: none of its training quotes are in {}",
                path.display(),
                args.quotes.display()
            ))));
        }
        days.push(evaluate_day(&surface, date, &train, &test)?);
        if args.grid_points > 0 {
            let (core, wings) = audit_grids::<f64>(args.grid_points, run.seed);
            reports.push(audit(&surface, &core, &wings)?);
        }
    }
    days.sort_by_key(|d| d.date);
    let violation = if reports.is_empty() { None } else { Some(ViolationReport::merge(&reports)?) };
    let report = EvalReport::from_days(days, violation)?;
    let mut csv = String::from("quarter,iv_mape_train,iv_mape_test,price_mape_train,price_mape_test\n");
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for q in &report.quarters {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            q.quarter,
            q.iv_mape_train,
            opt(q.iv_mape_test),
            q.price_mape_train,
            opt(q.price_mape_test)
        ));
    }
    run.config = json!({ "models": args.model, "grid_points": args.grid_points });
    run.write("eval_report.json", report.to_json())?;
    run.write("eval_quarters.csv", csv)?;
    println!(
        "IV MAPE train {:.4}% test {}; price MAPE train {:.4}% test {}",
        report.iv_mape_train,
        report.iv_mape_test.map_or("n/a".into(), |v| format!("{v:.4}%")),
        report.price_mape_train,
        report.price_mape_test.map_or("n/a".into(), |v| format!("{v:.4}%")),
    );
    Ok(())
}

// ---------------------------------------------------------------- check-arbitrage

pub fn check_arbitrage(args: &CheckArgs, run: &mut Run) -> Result<()> {
    let (_, surface) = read_model(&args.model, run)?;
    let (core, wings) = audit_grids::<f64>(args.grid_points as usize, run.seed);
    let report = audit(&surface, &core, &wings)?;
    let mut limits = Vec::new();
    for &days in &args.limit_days {
        let tau = days / volnet::data::DAYS_PER_YEAR;
        let check = limit_dplus(&surface, tau, args.limit_m_max)?;
        let last = check.path.last().map(|p| p.1);
        limits.push(json!({ "tau_days": days, "tau": tau, "passed": check.passed, "dplus_at_m_max": last }));
    }
    for c in &report.conditions {
        println!("{:<18} {:>6}/{:<6} violated  worst margin {:.6e}", c.name, c.n_violated, c.n_checked, c.worst_margin);
    }
    for l in &limits {
        println!("d+ limit at {} days: {}", l["tau_days"], if l["passed"] == true { "ok" } else { "FAILED" });
    }
    run.config = json!({ "model": args.model, "grid_points": args.grid_points, "limit_days": args.limit_days, "limit_m_max": args.limit_m_max });
    let out = json!({
        "model": surface.tag(),
        "grid_points": args.grid_points,
        "conditions": report.conditions,
        "limit_dplus": limits,
    });
    run.write("violations.json", serde_json::to_string_pretty(&out)?)?;
    Ok(())
}

// ---------------------------------------------------------------- density

pub fn density(args: &DensityArgs, run: &mut Run) -> Result<()> {
    let (_, surface) = read_model(&args.model, run)?;
    if args.tau_days.is_empty() {
        return Err(UsageError("--tau-days needs at least one maturity".into()).into());
    }
    let grid = uniform_grid(args.m_min, args.m_max, args.points);
    let mut csv = String::from("tau_days,tau,k,density\n");
    let mut summary = Vec::new();
    for &days in &args.tau_days {
        let tau = days / volnet::data::DAYS_PER_YEAR;
        let d = rn_density(&surface, tau, &grid)?;
        for (k, f) in &d.points {
            csv.push_str(&format!("{days},{tau},{k},{f}\n"));
        }
        let min = d.points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        println!("tau {days} days: integral {:.6}, min density {:.3e}", d.integral, min);
        summary.push(json!({ "tau_days": days, "tau": tau, "integral": d.integral, "min_density": min }));
    }
    run.config = json!({ "model": args.model, "tau_days": args.tau_days, "points": args.points, "m_range": [args.m_min, args.m_max] });
    run.write("density.csv", csv)?;
    run.write("density_summary.json", serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}
