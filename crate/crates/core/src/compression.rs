//! Fisher information of compressed records.
//!
//! Every compression is a function of the full record, so none of these
//! quantities may exceed the full-record information. Renewal models get
//! exact answers where they exist; everything else goes through the
//! monitoring-operator Monte Carlo.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, Superoperator, C64};
use crate::model::{InitialState, LindbladModel, MonitorSetting};
use crate::monitoring::{
    estimate_from_scores, gillespie_fisher_outcomes, init_monitor, resolve_params, FisherEstimate,
    GridKind, MonitorOptions, Outcomes,
};
use crate::parallel::map_indexed;
use crate::renewal::{check_renewal, fisher_renewal, sample_mean_fisher, RenewalVerdict, SampleMeanReport};
use crate::trajectory::{sample_channel, simulate_ensemble, RngStream, Stop};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompressionMode {
    ChannelsOnly,
    TimesOnly,
    SampleMean,
    PartialMonitoring,
}

impl std::str::FromStr for CompressionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "channels-only" => Ok(Self::ChannelsOnly),
            "times-only" => Ok(Self::TimesOnly),
            "sample-mean" => Ok(Self::SampleMean),
            "partial-monitoring" => Ok(Self::PartialMonitoring),
            other => Err(Error::Config(format!(
                "unknown compression mode '{other}' (expected channels-only, times-only, sample-mean or partial-monitoring)"
            ))),
        }
    }
}

/// What is kept of the record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompressionSpec {
    pub mode: CompressionMode,
    /// Channels still watched under partial monitoring.
    pub retained: Vec<String>,
    /// Per-channel detector efficiencies under partial monitoring.
    pub efficiencies: Vec<(String, f64)>,
}

impl CompressionSpec {
    pub fn new(mode: CompressionMode) -> Self {
        Self {
            mode,
            retained: Vec::new(),
            efficiencies: Vec::new(),
        }
    }

    /// Checks that retained channels are monitored in `model`.
    pub fn validate(&self, model: &LindbladModel) -> Result<()> {
        let labels = model.superops()?.labels;
        for r in self.retained.iter().chain(self.efficiencies.iter().map(|(l, _)| l)) {
            if !labels.contains(r) {
                return Err(Error::UnknownChannel(r.clone()));
            }
        }
        Ok(())
    }
}

/// Channels-only information per jump: exact for renewal models, Monte
/// Carlo over symbol sequences otherwise.
#[derive(Debug, Clone)]
pub enum ChannelsOnly {
    Exact { per_jump: f64 },
    MonteCarlo(FisherEstimate),
}

impl ChannelsOnly {
    /// `(value, stderr)` per jump; the Monte Carlo value uses the last grid point.
    pub fn per_jump(&self) -> (f64, f64) {
        match self {
            ChannelsOnly::Exact { per_jump } => (*per_jump, 0.0),
            ChannelsOnly::MonteCarlo(est) => {
                let (m, s) = est.last();
                let n = *est.grid.last().expect("non-empty grid");
                (m / n, s / n)
            }
        }
    }
}

/// Information in the sequence of channel labels alone.
///
/// `jumps` and `trajectories` set the Monte Carlo size for non-renewal
/// models and are ignored otherwise.
pub fn channels_only_fisher(
    model: &LindbladModel,
    param: &str,
    jumps: usize,
    trajectories: usize,
    seed: u64,
    opts: &MonitorOptions,
) -> Result<ChannelsOnly> {
    if model.superops()?.labels.len() < 2 {
        return Ok(ChannelsOnly::Exact { per_jump: 0.0 });
    }
    if let RenewalVerdict::Renewal(s) = check_renewal(model)? {
        return Ok(ChannelsOnly::Exact {
            per_jump: fisher_renewal(&s, param)?.channels,
        });
    }
    symbol_fisher(model, param, jumps, trajectories, seed, opts).map(ChannelsOnly::MonteCarlo)
}

/// Symbol maps `M_k = −𝒥_k ℒ₀⁻¹` at one parameter point.
fn symbol_maps(model: &LindbladModel, theta: &[f64]) -> Result<Vec<Superoperator>> {
    let s = model.superops_at(theta)?;
    let inv = s.nojump.inverse().ok_or(Error::DarkSubspace)?;
    Ok(s.jumps.iter().map(|j| j.compose(&inv).scale(-1.0)).collect())
}

/// Monitoring operator propagated through discrete symbol updates.
fn symbol_fisher(
    model: &LindbladModel,
    param: &str,
    jumps: usize,
    trajectories: usize,
    seed: u64,
    opts: &MonitorOptions,
) -> Result<FisherEstimate> {
    if trajectories < 2 || jumps == 0 {
        return Err(Error::Config("symbol Monte Carlo needs two trajectories and one jump".into()));
    }
    let params = resolve_params(model, &[param], opts.step)?;
    let (index, h) = params[0];
    let center = symbol_maps(model, model.theta())?;
    let plus = symbol_maps(model, &model.shifted(index, h))?;
    let minus = symbol_maps(model, &model.shifted(index, -h))?;
    let grid: Vec<f64> = (0..=jumps).map(|j| j as f64).collect();
    let scores = map_indexed(opts.execution, trajectories, |i| {
        let mut rng = RngStream::new(seed, i as u64).rng();
        let mut state = init_monitor(model, model.theta(), &params)?;
        let mut out = vec![state.scores()];
        for _ in 0..jumps {
            let weights: Vec<f64> = center.iter().map(|m| linalg::trace(&m.apply(&state.rho)).re).collect();
            let k = sample_channel(&weights, &mut rng)?;
            let a = center[k].apply(&state.rho);
            let w = linalg::trace(&a).re;
            if !(w > 1e-300) {
                return Err(Error::Underflow(w));
            }
            let da = (plus[k].apply(&state.rho) - minus[k].apply(&state.rho)) / C64::new(2.0 * h, 0.0);
            let xi = (da + center[k].apply(&state.xi[0])) / C64::new(w, 0.0);
            state.rho = linalg::hermitian_part(&(a / C64::new(w, 0.0)));
            state.xi = vec![xi];
            state.jumps_seen += 1;
            out.push(state.scores());
        }
        Ok(out)
    })?;
    Ok(estimate_from_scores(GridKind::Jumps, grid, &scores, 0, opts.keep_series))
}

/// Information in the click times alone, with every click updating through
/// the summed jump superoperator. Always Monte Carlo, since discarding labels
/// destroys the renewal property in general.
pub fn times_only_fisher(
    model: &LindbladModel,
    param: &str,
    stop: Stop,
    trajectories: usize,
    seed: u64,
    opts: &MonitorOptions,
) -> Result<FisherEstimate> {
    gillespie_fisher_outcomes(model, param, stop, trajectories, seed, opts, Outcomes::TimesOnly)
}

/// The model watched through a subset of channels at given efficiencies.
///
/// Channels outside `retained` become unmonitored; an empty `retained`
/// keeps the current monitored set. Listed efficiencies override the
/// current ones.
pub fn partial_monitoring(model: &LindbladModel, retained: &[&str], efficiencies: &[(&str, f64)]) -> Result<LindbladModel> {
    let point = model.point_at(model.theta())?;
    let mut settings = Vec::with_capacity(point.channels.len());
    for ch in &point.channels {
        let kept = if retained.is_empty() {
            ch.monitored
        } else {
            retained.contains(&ch.label.as_str())
        };
        let efficiency = efficiencies
            .iter()
            .find(|(l, _)| *l == ch.label)
            .map(|(_, e)| *e)
            .unwrap_or(ch.efficiency);
        settings.push(MonitorSetting {
            label: ch.label.clone(),
            efficiency,
            monitored: kept,
        });
    }
    for r in retained {
        if !point.channels.iter().any(|c| c.label == *r) {
            return Err(Error::UnknownChannel(r.to_string()));
        }
    }
    for (l, _) in efficiencies {
        if !point.channels.iter().any(|c| c.label == *l) {
            return Err(Error::UnknownChannel(l.to_string()));
        }
    }
    if !settings.iter().any(|s| s.monitored && s.efficiency > 0.0) {
        return Err(Error::Config("partial monitoring leaves nothing observable".into()));
    }
    model.with_monitor_settings(settings)
}

/// Options for the record-based sample-mean estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleMeanOptions {
    pub trajectories: usize,
    pub jumps: usize,
    /// Stop summing lag covariances after this many consecutive
    /// `|C_i| < threshold·σ²`.
    pub quiet_lags: usize,
    pub threshold: f64,
    pub max_lag: usize,
    pub seed: u64,
}

impl Default for SampleMeanOptions {
    fn default() -> Self {
        Self {
            trajectories: 200,
            jumps: 2000,
            quiet_lags: 10,
            threshold: 1e-3,
            max_lag: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleMeanEstimate {
    pub mean: f64,
    pub d_mean: f64,
    pub variance: f64,
    pub covariance_sum: f64,
    pub per_jump: f64,
    /// Number of lag covariances summed; zero for the exact renewal path.
    pub lags: usize,
    pub exact: bool,
}

impl From<SampleMeanReport> for SampleMeanEstimate {
    fn from(r: SampleMeanReport) -> Self {
        Self {
            mean: r.mean,
            d_mean: r.d_mean,
            variance: r.variance,
            covariance_sum: r.covariance_sum,
            per_jump: r.per_jump,
            lags: 0,
            exact: true,
        }
    }
}

/// Large-`N` information of the sample-mean waiting time.
///
/// Renewal models use exact moments. Otherwise `μ = 1/A` comes from the
/// steady-state activity and the variance and lag covariances from
/// simulated stationary records.
pub fn sample_mean_fisher_compressed(
    model: &LindbladModel,
    param: &str,
    opts: &MonitorOptions,
    sm: &SampleMeanOptions,
) -> Result<SampleMeanEstimate> {
    if let RenewalVerdict::Renewal(s) = check_renewal(model)? {
        return Ok(sample_mean_fisher(&s, param)?.into());
    }
    let index = model.param_index(param)?;
    let h = opts.step.unwrap_or_else(|| model.default_step(index));
    let mean_at = |theta: &[f64]| -> Result<f64> {
        let s = model.superops_at(theta)?;
        let rho = linalg::steady_state(&s.liouvillian)?;
        let a: f64 = s.activities(&rho).iter().sum();
        if !(a > 0.0) {
            return Err(Error::DarkSubspace);
        }
        Ok(1.0 / a)
    };
    let mean = mean_at(model.theta())?;
    let d_mean = (mean_at(&model.shifted(index, h))? - mean_at(&model.shifted(index, -h))?) / (2.0 * h);

    if sm.jumps < 3 || sm.trajectories == 0 {
        return Err(Error::Config("sample-mean estimate needs records of at least three jumps".into()));
    }
    let stationary = model.with_initial_state(InitialState::Fixed(model.steady_state()?))?;
    let records = simulate_ensemble(
        &stationary,
        opts.grid,
        Stop::jumps(sm.jumps),
        sm.trajectories,
        sm.seed,
        opts.execution,
    )?;
    // The first waiting time starts from the steady state, not from a click.
    let series: Vec<Vec<f64>> = records
        .iter()
        .map(|r| r.jumps[1..].iter().map(|j| j.tau).collect())
        .collect();
    let n: usize = series.iter().map(Vec::len).sum();
    let pooled = series.iter().flatten().sum::<f64>() / n as f64;
    let lag_cov = |lag: usize| -> f64 {
        let mut acc = 0.0;
        let mut count = 0usize;
        for s in &series {
            for i in 0..s.len().saturating_sub(lag) {
                acc += (s[i] - pooled) * (s[i + lag] - pooled);
                count += 1;
            }
        }
        acc / count.max(1) as f64
    };
    let variance = lag_cov(0);
    let max_lag = sm.max_lag.min(sm.jumps / 4).max(1);
    let mut covariance_sum = 0.0;
    let mut quiet = 0;
    let mut lags = 0;
    for lag in 1..=max_lag {
        let c = lag_cov(lag);
        covariance_sum += c;
        lags = lag;
        if c.abs() < sm.threshold * variance {
            quiet += 1;
            if quiet >= sm.quiet_lags {
                break;
            }
        } else {
            quiet = 0;
        }
    }
    let denom = variance + 2.0 * covariance_sum;
    if !(denom > 0.0) {
        return Err(Error::Numerical(format!("asymptotic variance {denom:.3e} is not positive")));
    }
    Ok(SampleMeanEstimate {
        mean,
        d_mean,
        variance,
        covariance_sum,
        per_jump: d_mean * d_mean / denom,
        lags,
        exact: false,
    })
}
