use crate::args::{
    Cli, Command, CompressArgs, EstimateArgs, FisherArgs, FisherMode, Global, ModelAction, SimulateArgs, StopArgs,
};
use crate::manifest::{OutputDir, RunManifest};
use crate::{Failure, Outcome};
use jumpfisher::compression::{
    channels_only_fisher, partial_monitoring, sample_mean_fisher_compressed, times_only_fisher, CompressionMode,
    CompressionSpec, SampleMeanOptions,
};
use jumpfisher::config::{parse_assignments, ModelConfig};
use jumpfisher::estimation::{mean_waiting_time_estimator, mle_study, Interval};
use jumpfisher::model::{default_parameter, LindbladModel, BUILTIN_MODELS};
use jumpfisher::monitoring::{fisher_matrix, fisher_rate, gillespie_fisher, MonitorOptions};
use jumpfisher::parallel::Execution;
use jumpfisher::renewal::{check_renewal, fisher_bound, fisher_renewal, RenewalVerdict};
use jumpfisher::trajectory::{
    read_records_jsonl, simulate_ensemble, write_records_jsonl, Ensemble, GridSpec, MeasurementRecord, Stop,
};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};
use std::io::{BufReader, Write};
use std::path::Path;

/// Record length used by per-jump Monte Carlo estimates when none is given.
const DEFAULT_JUMPS: usize = 100;

/// Everything a data-producing command needs.
struct Run {
    command: &'static str,
    global: Global,
    config: ModelConfig,
    model: LindbladModel,
    exec: Execution,
    out: OutputDir,
}

impl Run {
    fn start(command: &'static str, global: Global) -> Outcome<Self> {
        let config = load_config(&global)?;
        let model = config.build()?;
        let exec = Execution::from_threads(global.threads);
        let out = OutputDir::create(&global.out_dir)?;
        log::info!("{command}: model {} with θ = {:?}", model.name(), model.theta());
        Ok(Self { command, global, config, model, exec, out })
    }

    fn seed(&self) -> u64 {
        self.global.seed
    }

    fn param(&self, requested: Option<&str>) -> String {
        match requested {
            Some(p) => p.to_string(),
            None if self.config.model == "custom" => self.model.param_names()[0].clone(),
            None => default_parameter(&self.config.model).to_string(),
        }
    }

    fn monitor_options(&self) -> MonitorOptions {
        MonitorOptions { execution: self.exec, ..MonitorOptions::default() }
    }

    fn finish<T: Serialize>(self, options: &T) -> Outcome<()> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            argv: std::env::args().skip(1).collect(),
            config: Some(to_value(&self.config)?),
            options: to_value(options)?,
            seed: self.global.seed,
            threads: self.global.threads,
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_s: 0.0,
            outputs: Vec::new(),
        };
        self.out.finish(manifest)
    }
}

pub fn run(cli: Cli) -> Outcome<()> {
    let Cli { global, command } = cli;
    match command {
        Command::Simulate(a) => simulate(Run::start("simulate", global)?, &a),
        Command::Fisher(a) => fisher(Run::start("fisher", global)?, &a),
        Command::Estimate(a) => estimate(Run::start("estimate", global)?, &a),
        Command::Compress(a) => compress(Run::start("compress", global)?, &a),
        Command::Model { action } => model_command(&global, action),
    }
}

fn load_config(global: &Global) -> Outcome<ModelConfig> {
    let mut config = match (&global.config, &global.model) {
        (Some(path), _) => ModelConfig::from_path(path).map_err(|e| Failure::Config(e.to_string()))?,
        (None, Some(name)) => ModelConfig::builtin(name),
        (None, None) => return Err(Failure::Config("no model given: pass --model NAME or --config FILE".into())),
    };
    let mut sets = Vec::new();
    for text in &global.sets {
        sets.extend(parse_assignments(text)?);
    }
    config.apply_overrides(&sets)?;
    Ok(config)
}

fn to_value<T: Serialize>(v: &T) -> Outcome<Value> {
    serde_json::to_value(v).map_err(|e| Failure::Numerical(e.to_string()))
}

fn stop_rule(args: &StopArgs) -> Outcome<Stop> {
    let stop = match (args.stop_jumps, args.stop_time) {
        (Some(n), None) => Stop::jumps(n),
        (None, Some(t)) => Stop::time(t),
        _ => return Err(Failure::Config("give exactly one of --stop-jumps or --stop-time".into())),
    };
    stop.validate()?;
    Ok(stop)
}

fn split_list(text: &str) -> Vec<&str> {
    text.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
}

fn parse_pair(text: &str, what: &str) -> Outcome<(String, String)> {
    match split_list(text).as_slice() {
        [a, b] => Ok((a.to_string(), b.to_string())),
        _ => Err(Failure::Config(format!("{what} must be two comma-separated values, got '{text}'"))),
    }
}

fn parse_interval(text: &str) -> Outcome<Interval> {
    let (lo, hi) = parse_pair(text, "--interval")?;
    let num = |s: &str| s.parse::<f64>().map_err(|_| Failure::Config(format!("'{s}' in --interval is not a number")));
    Ok(Interval::new(num(&lo)?, num(&hi)?)?)
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn simulate(mut run: Run, a: &SimulateArgs) -> Outcome<()> {
    let stop = stop_rule(&a.stop)?;
    let grid = GridSpec { points: a.grid_points, ..GridSpec::default() };
    let records = simulate_ensemble(&run.model, grid, stop, a.trajectories, run.seed(), run.exec)?;
    let labels = run.model.superops()?.labels;
    run.out.write("records.jsonl", |w| Ok(write_records_jsonl(w, &records, &labels)?))?;
    run.finish(a)
}

fn fisher(mut run: Run, a: &FisherArgs) -> Outcome<()> {
    let param = run.param(a.param.as_deref());
    let opts = MonitorOptions {
        time_points: a.time_points,
        keep_series: a.series,
        step: a.step,
        ..run.monitor_options()
    };
    let seed = run.seed();
    match a.mode {
        FisherMode::Renewal => {
            let report = renewal_report(&run.model, &param, a.stop.stop_jumps)?;
            run.out.write_json("fisher_renewal.json", &report)?;
        }
        FisherMode::Gillespie => {
            let est = gillespie_fisher(&run.model, &param, stop_rule(&a.stop)?, a.trajectories, seed, &opts)?;
            run.out.write("fisher.csv", |w| Ok(est.write_csv(w)?))?;
            if a.series {
                run.out.write("series.jsonl", |w| Ok(est.write_series_jsonl(w)?))?;
            }
        }
        FisherMode::Rate => {
            let horizon = a
                .stop
                .stop_time
                .ok_or_else(|| Failure::Config("the rate mode needs --stop-time as its horizon".into()))?;
            let est = fisher_rate(&run.model, &param, horizon, a.epochs, a.trajectories, seed, &opts)?;
            run.out.write("fisher_rate.csv", |w| Ok(est.write_csv(w)?))?;
            run.out.write_json(
                "fisher_rate_summary.json",
                &json!({
                    "parameter": param,
                    "long_time_average": est.long_time_average,
                    "long_time_stderr": est.long_time_stderr,
                    "trajectories": est.trajectories,
                }),
            )?;
        }
        FisherMode::Matrix => {
            let params = split_list(&param);
            let est = fisher_matrix(&run.model, &params, stop_rule(&a.stop)?, a.trajectories, seed, &opts)?;
            run.out.write_json(
                "fisher_matrix.json",
                &json!({
                    "params": est.params,
                    "matrix": rows(&est.matrix),
                    "stderr": rows(&est.stderr),
                    "trajectories": est.trajectories,
                    "min_eigenvalue": est.min_eigenvalue,
                    "clamped": est.clamped,
                }),
            )?;
        }
        FisherMode::Compressed => {
            let mode = a
                .compression
                .compression
                .as_deref()
                .ok_or_else(|| Failure::Config("the compressed mode needs --compression MODE".into()))?;
            let spec = compression_spec(mode, a.compression.retain.as_deref(), a.compression.efficiency.as_deref())?;
            spec.validate(&run.model)?;
            let stop = optional_stop(&a.stop)?;
            let info = compressed_information(&run.model, &param, &spec, stop, a.trajectories, seed, &opts)?;
            run.out.write_json("fisher_compressed.json", &json!({ "parameter": param, "mode": spec.mode, "compressed": info }))?;
        }
    }
    run.finish(a)
}

#[derive(Serialize)]
struct RenewalReport {
    model: String,
    parameter: String,
    per_jump: f64,
    channels: f64,
    times_given_channels: f64,
    /// `per_jump · N` when a record length is given.
    total: Option<f64>,
    jumps: Option<usize>,
    bound: f64,
    quadrature_error: f64,
    labels: Vec<String>,
    /// `p(k|q)` as rows `k`, columns `q`.
    transition: Vec<Vec<f64>>,
    stationary: Vec<f64>,
    normalization: Vec<f64>,
    contributions: Vec<Vec<f64>>,
}

fn renewal_report(model: &LindbladModel, param: &str, jumps: Option<usize>) -> Outcome<RenewalReport> {
    let structure = check_renewal(model)?.into_result()?;
    let r = fisher_renewal(&structure, param)?;
    let bound = fisher_bound(&structure, param)?;
    Ok(RenewalReport {
        model: model.name().to_string(),
        parameter: r.parameter.clone(),
        per_jump: r.per_jump,
        channels: r.channels,
        times_given_channels: r.times_given_channels,
        total: jumps.map(|n| r.per_jump * n as f64),
        jumps,
        bound,
        quadrature_error: r.quadrature_error,
        labels: r.chain.labels.clone(),
        transition: rows(&r.chain.transition),
        stationary: r.chain.stationary.iter().copied().collect(),
        normalization: r.normalization.clone(),
        contributions: rows(&r.contributions),
    })
}

fn compression_spec(mode: &str, retain: Option<&str>, efficiency: Option<&str>) -> Outcome<CompressionSpec> {
    let mut spec = CompressionSpec::new(mode.parse::<CompressionMode>()?);
    if spec.mode == CompressionMode::PartialMonitoring {
        spec.retained = retain.map(split_list).unwrap_or_default().into_iter().map(String::from).collect();
        spec.efficiencies = match efficiency {
            Some(text) => parse_assignments(text)?,
            None => Vec::new(),
        };
        if spec.retained.is_empty() && spec.efficiencies.is_empty() {
            return Err(Failure::Config("partial monitoring needs --retain or --efficiency".into()));
        }
    } else if retain.is_some() || efficiency.is_some() {
        return Err(Failure::Config("--retain and --efficiency apply only to partial-monitoring".into()));
    }
    Ok(spec)
}

fn optional_stop(args: &StopArgs) -> Outcome<Option<Stop>> {
    if args.stop_jumps.is_none() && args.stop_time.is_none() {
        Ok(None)
    } else {
        stop_rule(args).map(Some)
    }
}

/// An information value, either per jump or for whole records.
#[derive(Debug, Serialize)]
struct Information {
    quantity: &'static str,
    value: f64,
    stderr: f64,
    exact: bool,
}

impl Information {
    fn per_jump(value: f64, stderr: f64, exact: bool) -> Self {
        Self { quantity: "per_jump", value, stderr, exact }
    }

    fn total((value, stderr): (f64, f64)) -> Self {
        Self { quantity: "total", value, stderr, exact: false }
    }
}

fn is_per_jump(mode: CompressionMode) -> bool {
    matches!(mode, CompressionMode::ChannelsOnly | CompressionMode::SampleMean)
}

fn need_stop(stop: Option<Stop>, mode: CompressionMode) -> Outcome<Stop> {
    stop.ok_or_else(|| Failure::Config(format!("{mode:?} compression needs --stop-jumps or --stop-time")))
}

fn compressed_information(
    model: &LindbladModel,
    param: &str,
    spec: &CompressionSpec,
    stop: Option<Stop>,
    trajectories: usize,
    seed: u64,
    opts: &MonitorOptions,
) -> Outcome<Information> {
    let jumps = stop.and_then(|s| s.jumps).unwrap_or(DEFAULT_JUMPS);
    Ok(match spec.mode {
        CompressionMode::ChannelsOnly => {
            let r = channels_only_fisher(model, param, jumps, trajectories, seed, opts)?;
            let (v, s) = r.per_jump();
            Information::per_jump(v, s, matches!(r, jumpfisher::compression::ChannelsOnly::Exact { .. }))
        }
        CompressionMode::SampleMean => {
            let sm_opts = SampleMeanOptions { trajectories, seed, ..SampleMeanOptions::default() };
            let sm = sample_mean_fisher_compressed(model, param, opts, &sm_opts)?;
            Information::per_jump(sm.per_jump, 0.0, sm.exact)
        }
        CompressionMode::TimesOnly => {
            let stop = need_stop(stop, spec.mode)?;
            Information::total(times_only_fisher(model, param, stop, trajectories, seed, opts)?.last())
        }
        CompressionMode::PartialMonitoring => {
            let stop = need_stop(stop, spec.mode)?;
            let retained: Vec<&str> = spec.retained.iter().map(String::as_str).collect();
            let effs: Vec<(&str, f64)> = spec.efficiencies.iter().map(|(l, e)| (l.as_str(), *e)).collect();
            let watched = partial_monitoring(model, &retained, &effs)?;
            Information::total(gillespie_fisher(&watched, param, stop, trajectories, seed, opts)?.last())
        }
    })
}

/// Uncompressed information in the same units as the compressed value.
fn full_information(
    model: &LindbladModel,
    param: &str,
    mode: CompressionMode,
    stop: Option<Stop>,
    trajectories: usize,
    seed: u64,
    opts: &MonitorOptions,
) -> Outcome<Information> {
    if is_per_jump(mode) {
        if let RenewalVerdict::Renewal(s) = check_renewal(model)? {
            return Ok(Information::per_jump(fisher_renewal(&s, param)?.per_jump, 0.0, true));
        }
        let n = stop.and_then(|s| s.jumps).unwrap_or(DEFAULT_JUMPS);
        let (v, s) = gillespie_fisher(model, param, Stop::jumps(n), trajectories, seed, opts)?.last();
        return Ok(Information::per_jump(v / n as f64, s / n as f64, false));
    }
    let stop = need_stop(stop, mode)?;
    Ok(Information::total(gillespie_fisher(model, param, stop, trajectories, seed, opts)?.last()))
}

fn compress(mut run: Run, a: &CompressArgs) -> Outcome<()> {
    let param = run.param(a.param.as_deref());
    let spec = compression_spec(&a.mode, a.retain.as_deref(), a.efficiency.as_deref())?;
    spec.validate(&run.model)?;
    let stop = optional_stop(&a.stop)?;
    let opts = run.monitor_options();
    let seed = run.seed();
    let full = full_information(&run.model, &param, spec.mode, stop, a.trajectories, seed, &opts)?;
    let compressed = compressed_information(&run.model, &param, &spec, stop, a.trajectories, seed, &opts)?;
    let loss = full.value - compressed.value;
    let loss_stderr = full.stderr.hypot(compressed.stderr);
    run.out.write_json(
        "compression.json",
        &json!({
            "parameter": param,
            "mode": spec.mode,
            "retained": spec.retained,
            "efficiencies": spec.efficiencies,
            "full": full,
            "compressed": compressed,
            "loss": loss,
            "loss_stderr": loss_stderr,
        }),
    )?;
    run.finish(a)
}

fn read_records(path: &Path, labels: &[String]) -> Outcome<Vec<MeasurementRecord>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Failure::Config(format!("cannot open record file {}: {e}", path.display())))?;
    let records = read_records_jsonl(BufReader::new(file), labels)
        .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    if records.is_empty() {
        return Err(Failure::Config(format!("record file {} holds no records", path.display())));
    }
    Ok(records)
}

/// Stopping rule shared by all records, for the Cramér-Rao reference.
fn common_stop(records: &[MeasurementRecord]) -> Outcome<Stop> {
    let first = records[0].ensemble;
    let same = records.iter().all(|r| match (r.ensemble, first) {
        (Ensemble::Jumps(a), Ensemble::Jumps(b)) => a == b,
        (Ensemble::Time(a), Ensemble::Time(b)) => (a - b).abs() <= 1e-9 * b.abs().max(1.0),
        _ => false,
    });
    if !same {
        return Err(Failure::Config("records mix different stopping rules".into()));
    }
    Ok(match first {
        Ensemble::Jumps(n) => Stop::jumps(n),
        Ensemble::Time(t) => Stop::time(t),
    })
}

fn estimate(mut run: Run, a: &EstimateArgs) -> Outcome<()> {
    let param = run.param(a.param.as_deref());
    let interval = parse_interval(&a.interval)?;
    let labels = run.model.superops()?.labels;
    let seed = run.seed();
    let opts = run.monitor_options();
    let records = match &a.records {
        Some(path) => read_records(path, &labels)?,
        None => simulate_ensemble(&run.model, GridSpec::default(), stop_rule(&a.stop)?, a.trajectories, seed, run.exec)?,
    };
    let stop = common_stop(&records)?;
    let fisher = match (stop.jumps, check_renewal(&run.model)?) {
        (Some(n), RenewalVerdict::Renewal(s)) => fisher_renewal(&s, &param)?.per_jump * n as f64,
        _ => gillespie_fisher(&run.model, &param, stop, a.trajectories, seed, &opts)?.last().0,
    };
    let study = mle_study(&records, &run.model, &param, interval, a.tol, fisher, run.exec)?;
    log::info!("estimated {param}: mean {:.6}, variance {:.3e}, 1/F {:.3e}", study.mean, study.variance, study.cr_bound);
    run.out.write("estimates.csv", |w| Ok(study.write_csv(w)?))?;
    run.out.write("summary.json", |w| {
        study.write_summary_json(&mut *w)?;
        w.write_all(b"\n").map_err(|e| Failure::Config(e.to_string()))
    })?;
    if let Some(pair) = &a.mean_waiting {
        let (from, to) = parse_pair(pair, "--mean-waiting")?;
        let pooled = mean_waiting_time_estimator(&records, &run.model, &param, &from, &to, interval)?;
        let per_record: Vec<f64> = records
            .iter()
            .filter_map(|r| {
                mean_waiting_time_estimator(std::slice::from_ref(r), &run.model, &param, &from, &to, interval)
                    .ok()
                    .map(|e| e.estimate)
            })
            .collect();
        let n = per_record.len() as f64;
        let mean = per_record.iter().sum::<f64>() / n;
        let variance = per_record.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        run.out.write_json(
            "mean_waiting.json",
            &json!({
                "from": from,
                "to": to,
                "pooled": pooled,
                "per_record": {
                    "count": per_record.len(),
                    "skipped": records.len() - per_record.len(),
                    "mean": if per_record.is_empty() { None } else { Some(mean) },
                    "variance": if per_record.is_empty() { None } else { Some(variance) },
                },
                "mle_variance": study.variance,
            }),
        )?;
    }
    run.finish(a)
}

fn model_command(global: &Global, action: ModelAction) -> Outcome<()> {
    let mut stdout = std::io::stdout().lock();
    let text = match action {
        ModelAction::List => BUILTIN_MODELS.join("\n"),
        ModelAction::Describe { name } => {
            let config = match name {
                Some(name) => {
                    let g = Global { model: Some(name), config: None, ..global.clone() };
                    load_config(&g)?
                }
                None => load_config(global)?,
            };
            serde_json::to_string_pretty(&describe(&config)?).map_err(|e| Failure::Numerical(e.to_string()))?
        }
    };
    match writeln!(stdout, "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Failure::Config(e.to_string())),
        _ => Ok(()),
    }
}

fn describe(config: &ModelConfig) -> Outcome<Value> {
    let model = config.build()?;
    let params: Vec<Value> = model
        .param_names()
        .iter()
        .zip(model.theta())
        .map(|(n, v)| json!({ "name": n, "value": v }))
        .collect();
    let point = model.point_at(model.theta())?;
    let channels: Vec<Value> = point
        .channels
        .iter()
        .map(|c| json!({ "label": c.label, "monitored": c.monitored, "efficiency": c.efficiency }))
        .collect();
    let renewal = match check_renewal(&model)? {
        RenewalVerdict::Renewal(_) => json!({ "renewal": true }),
        RenewalVerdict::NotRenewal { channel, rank_ratio } => {
            json!({ "renewal": false, "channel": channel, "rank_ratio": rank_ratio })
        }
    };
    let default = if config.model == "custom" {
        model.param_names()[0].clone()
    } else {
        default_parameter(&config.model).to_string()
    };
    Ok(json!({
        "model": model.name(),
        "dim": model.dim(),
        "params": params,
        "channels": channels,
        "renewal": renewal,
        "default_parameter": default,
    }))
}
