//! Monitoring-operator propagation along jump records.
//!
//! The monitoring operator `ξ = ∂_θρ̃ / tr ρ̃` is the θ-derivative of the
//! unnormalized conditional state, renormalized alongside it. Its trace is
//! the running score `∂_θ log P(record)`, so the Fisher information is
//! `E[(tr ξ)²]` over simulated records.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, C64};
use crate::model::LindbladModel;
use crate::parallel::{map_indexed, Execution};
use crate::renewal::information_density;
use crate::trajectory::{
    sample_channel, sample_waiting_time, Branch, Dynamics, GridSpec, MeasurementRecord, RngStream, Stop, WtdTable,
};

/// No-jump evolution, either tabulated or from fresh exponentials.
pub trait NoJump {
    fn propagate(&self, rho: &CMatrix, t: f64) -> Result<CMatrix>;
    fn dynamics(&self) -> &Dynamics;
}

impl NoJump for Branch {
    fn propagate(&self, rho: &CMatrix, t: f64) -> Result<CMatrix> {
        self.drift(rho, t)
    }
    fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }
}

impl NoJump for Dynamics {
    fn propagate(&self, rho: &CMatrix, t: f64) -> Result<CMatrix> {
        self.drift(rho, t)
    }
    fn dynamics(&self) -> &Dynamics {
        self
    }
}

/// Center dynamics and displaced pairs, one pair per tracked parameter.
pub struct Monitor<'a, N: NoJump> {
    pub center: &'a N,
    pub displaced: Vec<(&'a N, &'a N, f64)>,
}

impl<'a> Monitor<'a, Branch> {
    pub fn from_table(table: &'a WtdTable) -> Self {
        Self {
            center: table.center(),
            displaced: table.displaced().iter().map(|d| (&d.plus, &d.minus, d.step)).collect(),
        }
    }
}

/// Owned fresh-exponential dynamics at `θ` and `θ ± h_i`.
pub struct ReplayDynamics {
    center: Dynamics,
    displaced: Vec<(Dynamics, Dynamics, f64)>,
}

impl ReplayDynamics {
    pub fn new(model: &LindbladModel, theta: &[f64], params: &[(usize, f64)]) -> Result<Self> {
        let center = Dynamics::from_superops(&model.superops_at(theta)?);
        let mut displaced = Vec::new();
        for &(i, h) in params {
            let mut tp = theta.to_vec();
            tp[i] += h;
            let mut tm = theta.to_vec();
            tm[i] -= h;
            displaced.push((
                Dynamics::from_superops(&model.superops_at(&tp)?),
                Dynamics::from_superops(&model.superops_at(&tm)?),
                h,
            ));
        }
        Ok(Self { center, displaced })
    }

    pub fn monitor(&self) -> Monitor<'_, Dynamics> {
        Monitor {
            center: &self.center,
            displaced: self.displaced.iter().map(|(p, m, h)| (p, m, *h)).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MonitoringState {
    pub rho: CMatrix,
    /// One monitoring operator per tracked parameter.
    pub xi: Vec<CMatrix>,
    pub t: f64,
    pub jumps_seen: usize,
}

impl MonitoringState {
    pub fn trace_xi(&self, i: usize) -> f64 {
        linalg::trace(&self.xi[i]).re
    }

    pub fn scores(&self) -> Vec<f64> {
        (0..self.xi.len()).map(|i| self.trace_xi(i)).collect()
    }
}

/// `ρ = ρ₀(θ)`, `ξ_i = ∂_iρ₀(θ)` by central differences.
pub fn init_monitor(model: &LindbladModel, theta: &[f64], params: &[(usize, f64)]) -> Result<MonitoringState> {
    let rho = model.initial_state_at(theta)?;
    let mut xi = Vec::with_capacity(params.len());
    for &(i, h) in params {
        let d = rho.nrows();
        let x = match model.initial() {
            crate::model::InitialState::Fixed(_) => CMatrix::zeros(d, d),
            crate::model::InitialState::SteadyState => {
                let mut tp = theta.to_vec();
                tp[i] += h;
                let mut tm = theta.to_vec();
                tm[i] -= h;
                (model.initial_state_at(&tp)? - model.initial_state_at(&tm)?) / C64::new(2.0 * h, 0.0)
            }
        };
        xi.push(x);
    }
    Ok(MonitoringState { rho, xi, t: 0.0, jumps_seen: 0 })
}

fn normalize(a: CMatrix, w: f64) -> Result<CMatrix> {
    if !(w > 1e-300) {
        return Err(Error::Underflow(w));
    }
    Ok(a / C64::new(w, 0.0))
}

/// Applies `ρ ↦ Σ_{k∈group} 𝒥_k e^{ℒ₀τ} ρ` (or the bare drift when `group`
/// is `None`) to the state and all monitoring operators.
fn advance<N: NoJump>(
    state: &MonitoringState,
    tau: f64,
    group: Option<&[usize]>,
    mon: &Monitor<'_, N>,
) -> Result<MonitoringState> {
    let map = |n: &N, x: &CMatrix| -> Result<CMatrix> {
        let drifted = n.propagate(x, tau)?;
        Ok(match group {
            Some(g) => n.dynamics().jump(g, &drifted),
            None => drifted,
        })
    };
    let a = map(mon.center, &state.rho)?;
    let w = linalg::trace(&a).re;
    let mut xi = Vec::with_capacity(state.xi.len());
    for (i, (plus, minus, h)) in mon.displaced.iter().enumerate() {
        let da = (map(plus, &state.rho)? - map(minus, &state.rho)?) / C64::new(2.0 * h, 0.0);
        let b = map(mon.center, &state.xi[i])?;
        xi.push(normalize(da + b, w)?);
    }
    Ok(MonitoringState {
        rho: linalg::hermitian_part(&normalize(a, w)?),
        xi,
        t: state.t + tau,
        jumps_seen: state.jumps_seen + usize::from(group.is_some()),
    })
}

/// Update across one outcome: a delay `tau` followed by a click in any
/// channel of `group` (a single channel for full records).
pub fn step_monitor<N: NoJump>(
    state: &MonitoringState,
    tau: f64,
    group: &[usize],
    mon: &Monitor<'_, N>,
) -> Result<MonitoringState> {
    advance(state, tau, Some(group), mon)
}

/// State and monitoring operators after a click-free stretch `s`.
pub fn drift_monitor<N: NoJump>(state: &MonitoringState, s: f64, mon: &Monitor<'_, N>) -> Result<MonitoringState> {
    advance(state, s, None, mon)
}

/// How the monitor groups sampled clicks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcomes {
    /// Channel labels retained.
    Full,
    /// Only the click times are kept: every click updates with `Σ_k 𝒥_k`.
    TimesOnly,
}

/// Scores `tr ξ_i` of a given record, replayed with fresh exponentials.
pub fn replay_scores(
    model: &LindbladModel,
    theta: &[f64],
    record: &MeasurementRecord,
    params: &[(usize, f64)],
) -> Result<Vec<f64>> {
    let dynamics = ReplayDynamics::new(model, theta, params)?;
    let mon = dynamics.monitor();
    record.validate(mon.center.channels())?;
    let mut state = init_monitor(model, theta, params)?;
    for j in &record.jumps {
        state = step_monitor(&state, j.tau, &[j.channel], &mon)?;
    }
    if let Some(s) = record.final_stretch {
        state = drift_monitor(&state, s, &mon)?;
    }
    Ok(state.scores())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorOptions {
    pub grid: GridSpec,
    /// Points of the uniform time grid for t_f-ensemble curves.
    pub time_points: usize,
    /// Keep per-trajectory score series in the estimate.
    pub keep_series: bool,
    pub execution: Execution,
    /// Finite-difference step; defaults to `1e-4·max(1,|θ|)`.
    pub step: Option<f64>,
}

impl Default for MonitorOptions {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            time_points: 101,
            keep_series: false,
            execution: Execution::default(),
            step: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    Jumps,
    Time,
}

/// Monte Carlo estimate of `F = E[(tr ξ)²]` along a jump or time grid.
#[derive(Debug, Clone)]
pub struct FisherEstimate {
    pub kind: GridKind,
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    /// Mean and standard error of the score `tr ξ` itself (zero in expectation).
    pub score_mean: Vec<f64>,
    pub score_stderr: Vec<f64>,
    pub trajectories: usize,
    /// `tr ξ` per trajectory per grid point, when requested.
    pub series: Option<Vec<Vec<f64>>>,
}

impl FisherEstimate {
    pub fn last(&self) -> (f64, f64) {
        let i = self.mean.len() - 1;
        (self.mean[i], self.stderr[i])
    }

    /// CSV with columns `grid_value,mean_tr_xi_sq,stderr,M`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["grid_value", "mean_tr_xi_sq", "stderr", "M"])?;
        for i in 0..self.grid.len() {
            w.write_record(&[
                self.grid[i].to_string(),
                self.mean[i].to_string(),
                self.stderr[i].to_string(),
                self.trajectories.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// One JSON line per trajectory: `{"trajectory", "tr_xi": [...]}`.
    pub fn write_series_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            trajectory: usize,
            tr_xi: &'a [f64],
        }
        if let Some(series) = &self.series {
            for (i, s) in series.iter().enumerate() {
                serde_json::to_writer(&mut out, &Line { trajectory: i, tr_xi: s })?;
                out.write_all(b"\n")?;
            }
        }
        Ok(())
    }
}

pub(crate) fn mean_and_stderr(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

pub(crate) fn resolve_params(model: &LindbladModel, params: &[&str], step: Option<f64>) -> Result<Vec<(usize, f64)>> {
    if params.is_empty() {
        return Err(Error::Config("at least one parameter is required".into()));
    }
    params
        .iter()
        .map(|p| {
            let i = model.param_index(p)?;
            Ok((i, step.unwrap_or_else(|| model.central_step(i))))
        })
        .collect()
}

/// Grid for a stopping rule: jump indices `0..=N` or a uniform time grid.
fn grid_for(stop: Stop, time_points: usize) -> Result<(GridKind, Vec<f64>)> {
    stop.validate()?;
    match (stop.jumps, stop.time) {
        (Some(n), None) => Ok((GridKind::Jumps, (0..=n).map(|j| j as f64).collect())),
        (None, Some(tf)) => {
            let g = time_points.max(2);
            Ok((GridKind::Time, (0..g).map(|i| tf * i as f64 / (g - 1) as f64).collect()))
        }
        _ => Err(Error::Config("monitoring needs either a jump count or a final time, not both".into())),
    }
}

/// Scores `tr ξ_i` of one simulated trajectory on every grid point,
/// indexed `[grid][param]`.
fn trajectory_scores(
    model: &LindbladModel,
    table: &WtdTable,
    params: &[(usize, f64)],
    kind: GridKind,
    grid: &[f64],
    outcomes: Outcomes,
    stream: RngStream,
) -> Result<Vec<Vec<f64>>> {
    let mon = Monitor::from_table(table);
    let all: Vec<usize> = (0..table.labels().len()).collect();
    let mut rng = stream.rng();
    let mut state = init_monitor(model, model.theta(), params)?;
    let mut out = Vec::with_capacity(grid.len());
    out.push(state.scores());
    let group = |k: usize| -> Vec<usize> {
        match outcomes {
            Outcomes::Full => vec![k],
            Outcomes::TimesOnly => all.clone(),
        }
    };
    let dynamics = &table.center().dynamics;
    match kind {
        GridKind::Jumps => {
            while out.len() < grid.len() {
                let tau = sample_waiting_time(&state.rho, table, &mut rng)?;
                let drifted = table.center().drift(&state.rho, tau)?;
                let k = sample_channel(&dynamics.weights(&drifted), &mut rng)?;
                state = step_monitor(&state, tau, &group(k), &mon)?;
                out.push(state.scores());
            }
        }
        GridKind::Time => {
            let tf = *grid.last().expect("time grid is non-empty");
            let mut next = 1;
            loop {
                let tau = sample_waiting_time(&state.rho, table, &mut rng)?;
                let t_jump = state.t + tau;
                while next < grid.len() && grid[next] <= t_jump.min(tf) {
                    out.push(drift_monitor(&state, grid[next] - state.t, &mon)?.scores());
                    next += 1;
                }
                if t_jump > tf || next >= grid.len() {
                    break;
                }
                let drifted = table.center().drift(&state.rho, tau)?;
                let k = sample_channel(&dynamics.weights(&drifted), &mut rng)?;
                state = step_monitor(&state, tau, &group(k), &mon)?;
            }
        }
    }
    Ok(out)
}

/// Scores indexed `[trajectory][grid][param]`.
type Scores = Vec<Vec<Vec<f64>>>;

/// Scores for `trajectories` independent records.
pub(crate) fn ensemble_scores(
    model: &LindbladModel,
    params: &[(usize, f64)],
    stop: Stop,
    trajectories: usize,
    seed: u64,
    opts: &MonitorOptions,
    outcomes: Outcomes,
) -> Result<(GridKind, Vec<f64>, Scores)> {
    if trajectories < 2 {
        return Err(Error::Config("at least two trajectories are needed for an error bar".into()));
    }
    let (kind, grid) = grid_for(stop, opts.time_points)?;
    let table = WtdTable::with_derivatives(model, opts.grid, params)?;
    let scores = map_indexed(opts.execution, trajectories, |i| {
        trajectory_scores(model, &table, params, kind, &grid, outcomes, RngStream::new(seed, i as u64))
    })?;
    Ok((kind, grid, scores))
}

pub(crate) fn estimate_from_scores(
    kind: GridKind,
    grid: Vec<f64>,
    scores: &[Vec<Vec<f64>>],
    param: usize,
    keep_series: bool,
) -> FisherEstimate {
    let m = scores.len();
    let g = grid.len();
    let mut mean = Vec::with_capacity(g);
    let mut stderr = Vec::with_capacity(g);
    let mut score_mean = Vec::with_capacity(g);
    let mut score_stderr = Vec::with_capacity(g);
    for i in 0..g {
        let col = scores.iter().map(move |s| s[i][param]);
        let (a, b) = mean_and_stderr(col.clone().map(|x| x * x));
        let (c, d) = mean_and_stderr(col);
        mean.push(a);
        stderr.push(b);
        score_mean.push(c);
        score_stderr.push(d);
    }
    let series = keep_series.then(|| scores.iter().map(|s| s.iter().map(|v| v[param]).collect()).collect());
    FisherEstimate {
        kind,
        grid,
        mean,
        stderr,
        score_mean,
        score_stderr,
        trajectories: m,
        series,
    }
}

/// Gillespie-Fisher Monte Carlo: `E[(tr ξ)²]` over `trajectories`
/// simulated records, per jump (N-ensemble) or per time point
/// (t_f-ensemble).
pub fn gillespie_fisher(
    model: &LindbladModel,
    param: &str,
    stop: Stop,
    trajectories: usize,
    seed: u64,
    opts: &MonitorOptions,
) -> Result<FisherEstimate> {
    gillespie_fisher_outcomes(model, param, stop, trajectories, seed, opts, Outcomes::Full)
}

pub fn gillespie_fisher_outcomes(
    model: &LindbladModel,
    param: &str,
    stop: Stop,
    trajectories: usize,
    seed: u64,
    opts: &MonitorOptions,
    outcomes: Outcomes,
) -> Result<FisherEstimate> {
    let params = resolve_params(model, &[param], opts.step)?;
    let (kind, grid, scores) = ensemble_scores(model, &params, stop, trajectories, seed, opts, outcomes)?;
    Ok(estimate_from_scores(kind, grid, &scores, 0, opts.keep_series))
}

/// Monte Carlo Fisher information matrix `E[tr ξ_i tr ξ_j]` at the end of
/// the records.
#[derive(Debug, Clone)]
pub struct FisherMatrixEstimate {
    pub params: Vec<String>,
    pub matrix: DMatrix<f64>,
    pub stderr: DMatrix<f64>,
    pub trajectories: usize,
    /// Smallest eigenvalue before clamping.
    pub min_eigenvalue: f64,
    pub clamped: bool,
}

pub fn fisher_matrix(
    model: &LindbladModel,
    params: &[&str],
    stop: Stop,
    trajectories: usize,
    seed: u64,
    opts: &MonitorOptions,
) -> Result<FisherMatrixEstimate> {
    let resolved = resolve_params(model, params, opts.step)?;
    let (_, grid, scores) = ensemble_scores(model, &resolved, stop, trajectories, seed, opts, Outcomes::Full)?;
    let last = grid.len() - 1;
    let p = params.len();
    let mut matrix = DMatrix::zeros(p, p);
    let mut stderr = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in i..p {
            let (m, s) = mean_and_stderr(scores.iter().map(|t| t[last][i] * t[last][j]));
            matrix[(i, j)] = m;
            matrix[(j, i)] = m;
            stderr[(i, j)] = s;
            stderr[(j, i)] = s;
        }
    }
    let eig = SymmetricEigen::new(matrix.clone());
    let min_eigenvalue = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut clamped = false;
    if min_eigenvalue < 0.0 {
        let tol = 3.0 * stderr.norm();
        if -min_eigenvalue > tol {
            return Err(Error::Numerical(format!(
                "Fisher matrix eigenvalue {min_eigenvalue:.3e} is below the Monte Carlo tolerance -{tol:.3e}"
            )));
        }
        let vals = eig.eigenvalues.map(|v| v.max(0.0));
        let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
        matrix = (&rebuilt + rebuilt.transpose()) * 0.5;
        clamped = true;
    }
    Ok(FisherMatrixEstimate {
        params: params.iter().map(|s| s.to_string()).collect(),
        matrix,
        stderr,
        trajectories,
        min_eigenvalue,
        clamped,
    })
}

/// Per-channel current `I_k = tr(𝒥_k ρ_c)` and its derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentSnapshot {
    pub currents: Vec<f64>,
    pub derivatives: Vec<f64>,
}

impl CurrentSnapshot {
    /// `Σ_k (∂I_k)²/I_k`, with vanishing channels guarded.
    pub fn information_rate(&self) -> Result<f64> {
        let mut total = 0.0;
        for (i, d) in self.currents.iter().zip(&self.derivatives) {
            total += information_density(*i, *d)?;
        }
        Ok(total)
    }
}

/// `∂I_k = tr[(∂𝒥_k)ρ_c] + tr[𝒥_k(ξ − ρ_c tr ξ)]` for the first tracked
/// parameter.
pub fn currents<N: NoJump>(state: &MonitoringState, mon: &Monitor<'_, N>) -> CurrentSnapshot {
    let center = mon.center.dynamics();
    let (plus, minus, h) = mon.displaced[0];
    let xi = &state.xi[0];
    let d_rho = xi - &state.rho * C64::new(linalg::trace(xi).re, 0.0);
    let kn = center.channels();
    let mut currents = Vec::with_capacity(kn);
    let mut derivatives = Vec::with_capacity(kn);
    for k in 0..kn {
        let g = [k];
        currents.push(linalg::trace(&center.jump(&g, &state.rho)).re);
        let dj = (linalg::trace(&plus.dynamics().jump(&g, &state.rho)).re
            - linalg::trace(&minus.dynamics().jump(&g, &state.rho)).re)
            / (2.0 * h);
        derivatives.push(dj + linalg::trace(&center.jump(&g, &d_rho)).re);
    }
    CurrentSnapshot { currents, derivatives }
}

#[derive(Debug, Clone)]
pub struct RateEstimate {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub trajectories: usize,
    /// Average over epochs in the second half of the horizon, with the
    /// standard error across trajectories.
    pub long_time_average: f64,
    pub long_time_stderr: f64,
}

impl RateEstimate {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["grid_value", "mean_rate", "stderr", "M"])?;
        for i in 0..self.times.len() {
            w.write_record(&[
                self.times[i].to_string(),
                self.mean[i].to_string(),
                self.stderr[i].to_string(),
                self.trajectories.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fisher information rate `dF/dt = Σ_k E[(∂I_k)²/I_k]` sampled on a
/// uniform grid of `epochs` times in `[0, horizon]`.
pub fn fisher_rate(
    model: &LindbladModel,
    param: &str,
    horizon: f64,
    epochs: usize,
    trajectories: usize,
    seed: u64,
    opts: &MonitorOptions,
) -> Result<RateEstimate> {
    if !(horizon > 0.0) || epochs < 2 || trajectories < 2 {
        return Err(Error::Config("rate estimation needs a positive horizon, two epochs and two trajectories".into()));
    }
    let params = resolve_params(model, &[param], opts.step)?;
    let table = WtdTable::with_derivatives(model, opts.grid, &params)?;
    let times: Vec<f64> = (0..epochs).map(|i| horizon * i as f64 / (epochs - 1) as f64).collect();
    let per_traj = map_indexed(opts.execution, trajectories, |i| {
        let mon = Monitor::from_table(&table);
        let mut rng = RngStream::new(seed, i as u64).rng();
        let mut state = init_monitor(model, model.theta(), &params)?;
        let mut out = Vec::with_capacity(epochs);
        let mut next = 0;
        let dynamics = &table.center().dynamics;
        loop {
            let tau = sample_waiting_time(&state.rho, &table, &mut rng)?;
            let t_jump = state.t + tau;
            while next < epochs && times[next] <= t_jump.min(horizon) {
                let snap = drift_monitor(&state, times[next] - state.t, &mon)?;
                out.push(currents(&snap, &mon).information_rate()?);
                next += 1;
            }
            if next >= epochs {
                break;
            }
            let drifted = table.center().drift(&state.rho, tau)?;
            let k = sample_channel(&dynamics.weights(&drifted), &mut rng)?;
            state = step_monitor(&state, tau, &[k], &mon)?;
        }
        Ok(out)
    })?;
    let mut mean = Vec::with_capacity(epochs);
    let mut stderr = Vec::with_capacity(epochs);
    for e in 0..epochs {
        let (m, s) = mean_and_stderr(per_traj.iter().map(|r| r[e]));
        mean.push(m);
        stderr.push(s);
    }
    let start = epochs / 2;
    let averages = per_traj
        .iter()
        .map(|r| r[start..].iter().sum::<f64>() / (epochs - start) as f64);
    let (long_time_average, long_time_stderr) = mean_and_stderr(averages);
    Ok(RateEstimate {
        times,
        mean,
        stderr,
        trajectories,
        long_time_average,
        long_time_stderr,
    })
}
