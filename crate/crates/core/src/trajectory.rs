//! Gillespie sampling of jump records and exact record probabilities.
//!
//! Waiting times are drawn by inverting the tabulated survival function
//! `S(t|ρ) = tr(e^{ℒ₀t}ρ)` with linear interpolation between grid points.
//! The conditional state is then propagated over the *exact* sampled delay:
//! the tabulated propagator at the grid point below `τ` is composed with a
//! short exponential over the residual.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, CVector, Superoperator, C64};
use crate::model::{LindbladModel, Superops};
use crate::parallel::{map_indexed, Execution};

const DARK_WEIGHT: f64 = 1e-14;
const TAIL_TARGET: f64 = 1e-8;

/// No-jump propagator over a fixed delay.
#[derive(Debug, Clone)]
pub enum Propagator {
    /// `ρ ↦ V ρ V^†`.
    Kraus(CMatrix),
    Super(Superoperator),
}

impl Propagator {
    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        match self {
            Propagator::Kraus(v) => v * rho * v.adjoint(),
            Propagator::Super(s) => s.apply(rho),
        }
    }

    /// `self` followed by `later`.
    fn then(&self, later: &Propagator) -> Propagator {
        match (self, later) {
            (Propagator::Kraus(a), Propagator::Kraus(b)) => Propagator::Kraus(b * a),
            (Propagator::Super(a), Propagator::Super(b)) => Propagator::Super(b.compose(a)),
            _ => unreachable!("propagators of one branch share a representation"),
        }
    }

    /// Survival functional: `tr(V ρ V^†) = Σ (V^†V)_{ij} ρ_{ji}`.
    fn survival_kernel(&self) -> SurvivalKernel {
        match self {
            Propagator::Kraus(v) => SurvivalKernel::Operator(v.adjoint() * v),
            Propagator::Super(s) => SurvivalKernel::Row(s.trace_row()),
        }
    }
}

#[derive(Debug, Clone)]
enum SurvivalKernel {
    Operator(CMatrix),
    Row(CVector),
}

impl SurvivalKernel {
    fn eval(&self, rho: &CMatrix) -> f64 {
        match self {
            SurvivalKernel::Operator(q) => q.component_mul(&rho.transpose()).sum().re,
            SurvivalKernel::Row(r) => r
                .iter()
                .zip(rho.as_slice())
                .fold(C64::new(0.0, 0.0), |acc, (a, b)| acc + a * b)
                .re,
        }
    }
}

/// Jump and no-jump dynamics at one parameter point.
#[derive(Debug, Clone)]
pub enum Dynamics {
    Kraus { generator: CMatrix, jumps: Vec<CMatrix> },
    Super { nojump: Superoperator, jumps: Vec<Superoperator> },
}

impl Dynamics {
    pub fn from_superops(s: &Superops) -> Self {
        match &s.kraus {
            Some(k) => Dynamics::Kraus {
                generator: &k.effective_hamiltonian * C64::new(0.0, -1.0),
                jumps: k.jump_operators.clone(),
            },
            None => Dynamics::Super {
                nojump: s.nojump.clone(),
                jumps: s.jumps.clone(),
            },
        }
    }

    /// Superoperator form even when the Kraus form is available.
    pub fn superoperator_form(s: &Superops) -> Self {
        Dynamics::Super {
            nojump: s.nojump.clone(),
            jumps: s.jumps.clone(),
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            Dynamics::Kraus { jumps, .. } => jumps.len(),
            Dynamics::Super { jumps, .. } => jumps.len(),
        }
    }

    pub fn propagator(&self, t: f64) -> Result<Propagator> {
        if t < 0.0 {
            return Err(Error::NegativeTime(t));
        }
        Ok(match self {
            Dynamics::Kraus { generator, .. } => Propagator::Kraus(linalg::expm(generator, t)),
            Dynamics::Super { nojump, .. } => Propagator::Super(linalg::propagator(nojump, t)?),
        })
    }

    /// Unnormalized no-jump evolution `e^{ℒ₀t}ρ`.
    pub fn drift(&self, rho: &CMatrix, t: f64) -> Result<CMatrix> {
        Ok(self.propagator(t)?.apply(rho))
    }

    /// `Σ_{k∈group} 𝒥_k ρ`.
    pub fn jump(&self, group: &[usize], rho: &CMatrix) -> CMatrix {
        let d = rho.nrows();
        let mut out = CMatrix::zeros(d, d);
        for &k in group {
            match self {
                Dynamics::Kraus { jumps, .. } => out += &jumps[k] * rho * jumps[k].adjoint(),
                Dynamics::Super { jumps, .. } => out += jumps[k].apply(rho),
            }
        }
        out
    }

    /// `tr(𝒥_k ρ)` for every channel.
    pub fn weights(&self, rho: &CMatrix) -> Vec<f64> {
        (0..self.channels())
            .map(|k| linalg::trace(&self.jump(&[k], rho)).re)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub points: usize,
    /// Table horizon; `None` picks `20/|Re λ_slow|` of the no-jump generator.
    pub t_max: Option<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { points: 2000, t_max: None }
    }
}

/// Tabulated propagators for one parameter point.
#[derive(Debug, Clone)]
pub struct Branch {
    pub dynamics: Dynamics,
    table: Vec<Propagator>,
    dt: f64,
}

impl Branch {
    fn new(dynamics: Dynamics, points: usize, dt: f64) -> Result<Self> {
        let step = dynamics.propagator(dt)?;
        let mut table = Vec::with_capacity(points);
        table.push(dynamics.propagator(0.0)?);
        for i in 1..points {
            let next = table[i - 1].then(&step);
            table.push(next);
        }
        Ok(Self { dynamics, table, dt })
    }

    fn t_max(&self) -> f64 {
        self.dt * (self.table.len() - 1) as f64
    }

    /// Exact `e^{ℒ₀t}` from the table entry below `t` and the residual.
    pub fn propagator(&self, t: f64) -> Result<Propagator> {
        if t < 0.0 {
            return Err(Error::NegativeTime(t));
        }
        let last = self.table.len() - 1;
        let i = ((t / self.dt).floor() as usize).min(last);
        let residual = t - i as f64 * self.dt;
        if residual <= 0.0 {
            return Ok(self.table[i].clone());
        }
        Ok(self.table[i].then(&self.dynamics.propagator(residual)?))
    }

    pub fn drift(&self, rho: &CMatrix, t: f64) -> Result<CMatrix> {
        Ok(self.propagator(t)?.apply(rho))
    }
}

/// Propagators displaced along one parameter.
#[derive(Debug, Clone)]
pub struct DisplacedBranches {
    pub index: usize,
    pub step: f64,
    pub plus: Branch,
    pub minus: Branch,
}

/// Grid of no-jump propagators with survival kernels, optionally with
/// displaced copies for derivative propagation.
#[derive(Debug, Clone)]
pub struct WtdTable {
    labels: Vec<String>,
    center: Branch,
    kernels: Vec<SurvivalKernel>,
    displaced: Vec<DisplacedBranches>,
}

fn slowest_decay(s: &Superops) -> Result<f64> {
    let slow = s
        .nojump
        .eigenvalues()
        .iter()
        .map(|z| z.re.abs())
        .fold(f64::INFINITY, f64::min);
    if !(slow > 1e-12) {
        return Err(Error::DarkSubspace);
    }
    Ok(slow)
}

/// Worst-case survival over all states: largest eigenvalue of the survival
/// kernel (Kraus form) or a bound from the trace row (superoperator form).
fn worst_survival(kernel: &SurvivalKernel, dim: usize) -> f64 {
    match kernel {
        SurvivalKernel::Operator(q) => linalg::hermitian_eigenvalues(&linalg::hermitian_part(q))
            .last()
            .copied()
            .unwrap_or(0.0),
        SurvivalKernel::Row(r) => {
            let m = CMatrix::from_column_slice(dim, dim, r.as_slice()).transpose();
            linalg::hermitian_eigenvalues(&linalg::hermitian_part(&m))
                .last()
                .copied()
                .unwrap_or(0.0)
        }
    }
}

impl WtdTable {
    pub fn new(model: &LindbladModel, spec: GridSpec) -> Result<Self> {
        Self::with_derivatives(model, spec, &[])
    }

    /// Tables at the model's θ plus displaced tables for each `(index, step)`.
    pub fn with_derivatives(model: &LindbladModel, spec: GridSpec, params: &[(usize, f64)]) -> Result<Self> {
        Self::at_theta(model, model.theta(), spec, params)
    }

    pub fn at_theta(model: &LindbladModel, theta: &[f64], spec: GridSpec, params: &[(usize, f64)]) -> Result<Self> {
        if spec.points < 2 {
            return Err(Error::Config("a waiting-time grid needs at least two points".into()));
        }
        let superops = model.superops_at(theta)?;
        let mut t_max = match spec.t_max {
            Some(t) if t > 0.0 => t,
            Some(t) => return Err(Error::Config(format!("grid horizon {t} must be positive"))),
            None => 20.0 / slowest_decay(&superops)?,
        };
        let dynamics = Dynamics::from_superops(&superops);
        let mut doubled = false;
        let center = loop {
            let dt = t_max / (spec.points - 1) as f64;
            let branch = Branch::new(dynamics.clone(), spec.points, dt)?;
            let tail = worst_survival(&branch.table[spec.points - 1].survival_kernel(), superops.dim);
            if tail < TAIL_TARGET {
                break branch;
            }
            if doubled {
                return Err(Error::TableOverflow(format!(
                    "survival {tail:.3e} at t_max = {t_max:.4} after one doubling"
                )));
            }
            log::debug!("survival {tail:.3e} at t_max = {t_max:.4}; doubling the grid horizon");
            t_max *= 2.0;
            doubled = true;
        };
        let kernels = center.table.iter().map(Propagator::survival_kernel).collect();
        let mut displaced = Vec::new();
        for &(index, step) in params {
            if !(step > 0.0) {
                return Err(Error::InvalidParameter(format!("displacement {step} must be positive")));
            }
            let mut tp = theta.to_vec();
            tp[index] += step;
            let mut tm = theta.to_vec();
            tm[index] -= step;
            let sp = model.superops_at(&tp)?;
            let sm = model.superops_at(&tm)?;
            let plus = Branch::new(Dynamics::from_superops(&sp), spec.points, center.dt)?;
            let minus = Branch::new(Dynamics::from_superops(&sm), spec.points, center.dt)?;
            if plus.dynamics.channels() != center.dynamics.channels() || minus.dynamics.channels() != center.dynamics.channels() {
                return Err(Error::Numerical("displaced model changed the monitored channels".into()));
            }
            displaced.push(DisplacedBranches { index, step, plus, minus });
        }
        Ok(Self {
            labels: superops.labels.clone(),
            center,
            kernels,
            displaced,
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn center(&self) -> &Branch {
        &self.center
    }

    pub fn displaced(&self) -> &[DisplacedBranches] {
        &self.displaced
    }

    pub fn points(&self) -> usize {
        self.center.table.len()
    }

    pub fn dt(&self) -> f64 {
        self.center.dt
    }

    pub fn t_max(&self) -> f64 {
        self.center.t_max()
    }

    /// Tabulated `e^{ℒ₀ T_i}` (the identity at `i = 0`).
    pub fn propagator_at(&self, i: usize) -> &Propagator {
        &self.center.table[i]
    }

    /// `S(T_i | ρ)` on the whole grid.
    pub fn survival_curve(&self, rho: &CMatrix) -> Vec<f64> {
        self.kernels.iter().map(|k| k.eval(rho)).collect()
    }

    fn survival(&self, i: usize, rho: &CMatrix) -> f64 {
        self.kernels[i].eval(rho)
    }

    /// Delay with `S(τ|ρ) = u` on the tabulated, linearly interpolated
    /// survival; `None` when the survival at `t_max` is still above `u`.
    fn invert_survival(&self, rho: &CMatrix, u: f64) -> Option<f64> {
        let n = self.points();
        if self.survival(n - 1, rho) > u {
            return None;
        }
        // Smallest i with S_i <= u; S_0 = tr ρ >= u.
        let (mut lo, mut hi) = (0usize, n - 1);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.survival(mid, rho) <= u {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let s_lo = self.survival(lo, rho);
        let s_hi = self.survival(hi, rho);
        let frac = if s_lo > s_hi { ((s_lo - u) / (s_lo - s_hi)).clamp(0.0, 1.0) } else { 0.0 };
        Some((lo as f64 + frac) * self.dt())
    }
}

/// Counter-based stream: the same `(seed, index)` always yields the same
/// random sequence, independent of thread scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    pub seed: u64,
    pub index: u64,
}

impl RngStream {
    pub fn new(seed: u64, index: u64) -> Self {
        Self { seed, index }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.index);
        rng
    }
}

/// Uniform draw in `(0, 1]`.
fn unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

/// Waiting time drawn from `W(τ|ρ) = tr[𝒥 e^{ℒ₀τ}ρ]` for normalized `ρ`.
pub fn sample_waiting_time<R: Rng + ?Sized>(rho: &CMatrix, table: &WtdTable, rng: &mut R) -> Result<f64> {
    waiting_time_from_uniform(rho, table, unit(rng))
}

/// Inverse-CDF step for a given uniform `u ∈ (0, 1]`. Draws past the grid
/// continue on a second window started from the state at `t_max`; a draw
/// past that as well is an error.
pub fn waiting_time_from_uniform(rho: &CMatrix, table: &WtdTable, u: f64) -> Result<f64> {
    if let Some(t) = table.invert_survival(rho, u) {
        return Ok(t);
    }
    let t_max = table.t_max();
    let tail = table.center.table[table.points() - 1].apply(rho);
    let s = linalg::trace(&tail).re;
    if !(s > 0.0) {
        return Err(Error::TableOverflow(format!("draw u = {u:.3e} beyond t_max = {t_max:.4}")));
    }
    let renorm = tail / C64::new(s, 0.0);
    match table.invert_survival(&renorm, u / s) {
        Some(t) => Ok(t_max + t),
        None => Err(Error::TableOverflow(format!(
            "draw u = {u:.3e} beyond 2·t_max = {:.4} (survival there {:.3e})",
            2.0 * t_max,
            s * table.survival(table.points() - 1, &renorm)
        ))),
    }
}

/// Categorical draw over channel weights.
pub fn sample_channel<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Result<usize> {
    let total: f64 = weights.iter().map(|w| w.max(0.0)).sum();
    if !(total >= DARK_WEIGHT) {
        return Err(Error::NumericallyDark);
    }
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (k, w) in weights.iter().enumerate() {
        if *w <= 0.0 {
            continue;
        }
        acc += w;
        last = k;
        if target < acc {
            return Ok(k);
        }
    }
    Ok(last)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub tau: f64,
    pub channel: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ensemble {
    /// Stop after a fixed number of jumps.
    Jumps(usize),
    /// Stop at a fixed final time.
    Time(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stop {
    pub jumps: Option<usize>,
    pub time: Option<f64>,
}

impl Stop {
    pub fn jumps(n: usize) -> Self {
        Self { jumps: Some(n), time: None }
    }

    pub fn time(t: f64) -> Self {
        Self { jumps: None, time: Some(t) }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.jumps, self.time) {
            (None, None) => Err(Error::Config("a stopping rule needs a jump count or a final time".into())),
            (_, Some(t)) if !(t >= 0.0) => Err(Error::Config(format!("final time {t} must be non-negative"))),
            _ => Ok(()),
        }
    }

    fn ensemble(&self) -> Ensemble {
        match self.time {
            Some(t) => Ensemble::Time(t),
            None => Ensemble::Jumps(self.jumps.unwrap_or(0)),
        }
    }
}

/// An ordered list of `(τ_i, k_i)`; t_f-ensemble records also carry the
/// final no-jump stretch.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    pub trajectory: u64,
    pub seed: u64,
    pub jumps: Vec<Jump>,
    pub final_stretch: Option<f64>,
    pub ensemble: Ensemble,
}

impl MeasurementRecord {
    pub fn new(jumps: Vec<Jump>, ensemble: Ensemble, final_stretch: Option<f64>) -> Self {
        Self { trajectory: 0, seed: 0, jumps, final_stretch, ensemble }
    }

    pub fn len(&self) -> usize {
        self.jumps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jumps.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.jumps.iter().map(|j| j.tau).sum::<f64>() + self.final_stretch.unwrap_or(0.0)
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        for j in &self.jumps {
            if !(j.tau >= 0.0) || !j.tau.is_finite() {
                return Err(Error::InvalidParameter(format!("waiting time {} is not a valid delay", j.tau)));
            }
            if j.channel >= channels {
                return Err(Error::UnknownChannel(format!("index {}", j.channel)));
            }
        }
        if let Some(s) = self.final_stretch {
            if !(s >= 0.0) {
                return Err(Error::InvalidParameter(format!("final stretch {s} is negative")));
            }
        }
        Ok(())
    }
}

/// Conditional state after each step, when requested.
pub type StateLog = Vec<CMatrix>;

/// One Gillespie trajectory from the normalized state `rho0`.
pub fn simulate_record<R: Rng + ?Sized>(
    table: &WtdTable,
    rho0: &CMatrix,
    stop: Stop,
    rng: &mut R,
    mut log: Option<&mut StateLog>,
) -> Result<MeasurementRecord> {
    stop.validate()?;
    let dyns = &table.center.dynamics;
    let mut rho = rho0.clone();
    let mut elapsed = 0.0;
    let mut jumps = Vec::new();
    if let Some(l) = log.as_deref_mut() {
        l.push(rho.clone());
    }
    loop {
        if stop.jumps.is_some_and(|n| jumps.len() >= n) {
            break;
        }
        let tau = sample_waiting_time(&rho, table, rng)?;
        if let Some(tf) = stop.time {
            if elapsed + tau > tf {
                return Ok(MeasurementRecord {
                    trajectory: 0,
                    seed: 0,
                    jumps,
                    final_stretch: Some(tf - elapsed),
                    ensemble: stop.ensemble(),
                });
            }
        }
        let drifted = table.center.drift(&rho, tau)?;
        let weights = dyns.weights(&drifted);
        let k = sample_channel(&weights, rng)?;
        let next = dyns.jump(&[k], &drifted);
        let norm = linalg::trace(&next).re;
        if !(norm > 1e-300) {
            return Err(Error::Underflow(norm));
        }
        rho = next / C64::new(norm, 0.0);
        elapsed += tau;
        jumps.push(Jump { tau, channel: k });
        if let Some(l) = log.as_deref_mut() {
            l.push(rho.clone());
        }
    }
    let final_stretch = stop.time.map(|tf| (tf - elapsed).max(0.0));
    Ok(MeasurementRecord {
        trajectory: 0,
        seed: 0,
        jumps,
        final_stretch,
        ensemble: stop.ensemble(),
    })
}

/// `count` independent records; trajectory `i` uses stream `(seed, i)`.
pub fn simulate_ensemble(
    model: &LindbladModel,
    spec: GridSpec,
    stop: Stop,
    count: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<MeasurementRecord>> {
    stop.validate()?;
    let table = WtdTable::new(model, spec)?;
    let rho0 = model.initial_state_at(model.theta())?;
    map_indexed(exec, count, |i| {
        let stream = RngStream::new(seed, i as u64);
        let mut rng = stream.rng();
        let mut rec = simulate_record(&table, &rho0, stop, &mut rng, None)?;
        rec.trajectory = i as u64;
        rec.seed = seed;
        Ok(rec)
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordProbability {
    pub log: f64,
}

impl RecordProbability {
    pub fn value(&self) -> f64 {
        self.log.exp()
    }
}

/// `tr{𝒥_{k_N} e^{ℒ₀τ_N} ··· 𝒥_{k_1} e^{ℒ₀τ_1} ρ₀}` (times the final
/// survival factor for t_f records), accumulated as a sum of log-traces of
/// renormalized states. Uses fresh superoperator exponentials, independent
/// of any table.
pub fn record_probability(model: &LindbladModel, record: &MeasurementRecord, rho0: &CMatrix) -> Result<RecordProbability> {
    record_probability_at(model, model.theta(), record, rho0)
}

pub fn record_probability_at(
    model: &LindbladModel,
    theta: &[f64],
    record: &MeasurementRecord,
    rho0: &CMatrix,
) -> Result<RecordProbability> {
    let superops = model.superops_at(theta)?;
    let dyns = Dynamics::superoperator_form(&superops);
    record.validate(dyns.channels())?;
    let mut rho = rho0.clone();
    let mut log = 0.0;
    for j in &record.jumps {
        let next = dyns.jump(&[j.channel], &dyns.drift(&rho, j.tau)?);
        let tr = linalg::trace(&next).re;
        if !(tr > 0.0) {
            return Ok(RecordProbability { log: f64::NEG_INFINITY });
        }
        log += tr.ln();
        rho = next / C64::new(tr, 0.0);
    }
    if let Some(s) = record.final_stretch {
        let tr = linalg::trace(&dyns.drift(&rho, s)?).re;
        if !(tr > 0.0) {
            return Ok(RecordProbability { log: f64::NEG_INFINITY });
        }
        log += tr.ln();
    }
    Ok(RecordProbability { log })
}

#[derive(Serialize, Deserialize)]
struct JumpLine {
    tau: f64,
    channel: String,
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    trajectory: u64,
    seed: u64,
    jumps: Vec<JumpLine>,
    final_stretch: Option<f64>,
}

/// One JSON object per line:
/// `{"trajectory", "seed", "jumps": [{"tau", "channel"}], "final_stretch"}`.
pub fn write_records_jsonl<W: Write>(mut out: W, records: &[MeasurementRecord], labels: &[String]) -> Result<()> {
    for r in records {
        let line = RecordLine {
            trajectory: r.trajectory,
            seed: r.seed,
            jumps: r
                .jumps
                .iter()
                .map(|j| JumpLine { tau: j.tau, channel: labels[j.channel].clone() })
                .collect(),
            final_stretch: r.final_stretch,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads records written by [`write_records_jsonl`]. Records without a final
/// stretch are tagged as N-ensemble records of their own length.
pub fn read_records_jsonl<R: BufRead>(input: R, labels: &[String]) -> Result<Vec<MeasurementRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: RecordLine = serde_json::from_str(&line)
            .map_err(|e| Error::Config(format!("record line {}: {e}", lineno + 1)))?;
        let mut jumps = Vec::with_capacity(parsed.jumps.len());
        for j in parsed.jumps {
            let channel = labels
                .iter()
                .position(|l| *l == j.channel)
                .ok_or_else(|| Error::UnknownChannel(format!("{} (record line {})", j.channel, lineno + 1)))?;
            jumps.push(Jump { tau: j.tau, channel });
        }
        let ensemble = match parsed.final_stretch {
            Some(s) => Ensemble::Time(jumps.iter().map(|j| j.tau).sum::<f64>() + s),
            None => Ensemble::Jumps(jumps.len()),
        };
        let rec = MeasurementRecord {
            trajectory: parsed.trajectory,
            seed: parsed.seed,
            jumps,
            final_stretch: parsed.final_stretch,
            ensemble,
        };
        rec.validate(labels.len())?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, ops, projector};
    use crate::model::{qubit_thermometer, InitialState, JumpChannel, ModelPoint};
    use approx::assert_relative_eq;

    fn pure_decay(gamma: f64) -> LindbladModel {
        LindbladModel::new(
            "pure-decay",
            2,
            &["gamma"],
            vec![gamma],
            InitialState::Fixed(projector(&ops::excited())),
            |t| {
                Ok(ModelPoint {
                    hamiltonian: CMatrix::zeros(2, 2),
                    channels: vec![JumpChannel::monitored("decay", ops::sigma_minus() * c(t[0].sqrt()))],
                })
            },
        )
        .unwrap()
    }

    fn excited() -> CMatrix {
        projector(&ops::excited())
    }

    #[test]
    fn grid_basics() {
        // Pure decay has a non-decaying ground state; give the horizon explicitly.
        let m = pure_decay(1.0);
        assert!(matches!(WtdTable::new(&m, GridSpec::default()), Err(Error::DarkSubspace)));
        let table = WtdTable::new(&m, GridSpec { points: 2001, t_max: Some(20.0) });
        // Survival of |g⟩ never decays, so the worst-case tail check fails.
        assert!(matches!(table, Err(Error::TableOverflow(_))));
    }

    fn thermometer_table() -> (LindbladModel, WtdTable) {
        let m = qubit_thermometer(1.0, 0.0, 1.0, 1.5).unwrap();
        let t = WtdTable::new(&m, GridSpec::default()).unwrap();
        (m, t)
    }

    #[test]
    fn table_starts_at_identity_and_decays() {
        let (_, table) = thermometer_table();
        let rho = projector(&ops::ground());
        let s = table.survival_curve(&rho);
        assert_relative_eq!(s[0], 1.0, epsilon = 1e-14);
        assert!(*s.last().unwrap() < 1e-8);
        assert!(s.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        match table.propagator_at(0) {
            Propagator::Kraus(v) => assert!(linalg::max_abs(&(v - CMatrix::identity(2, 2))) < 1e-15),
            Propagator::Super(_) => panic!("thermometer should use the Kraus form"),
        }
    }

    #[test]
    fn inverse_cdf_median_and_boundary() {
        let (_, table) = thermometer_table();
        // From |g⟩ only absorption fires, at rate γn̄ = 1.5.
        let rho = projector(&ops::ground());
        let tau = waiting_time_from_uniform(&rho, &table, 0.5).unwrap();
        assert_relative_eq!(tau, 2.0_f64.ln() / 1.5, max_relative = 1e-4);
        let tiny = waiting_time_from_uniform(&rho, &table, 1.0 - 1e-12).unwrap();
        assert!((0.0..1e-8).contains(&tiny));
    }

    #[test]
    fn extension_window_and_overflow() {
        let (_, table) = thermometer_table();
        let rho = projector(&ops::ground());
        let s_end = *table.survival_curve(&rho).last().unwrap();
        let t = waiting_time_from_uniform(&rho, &table, s_end * 0.5).unwrap();
        assert!(t > table.t_max());
        assert!(matches!(
            waiting_time_from_uniform(&rho, &table, s_end * s_end * 1e-3),
            Err(Error::TableOverflow(_))
        ));
    }

    #[test]
    fn exact_residual_propagation() {
        let (m, table) = thermometer_table();
        let s = m.superops().unwrap();
        let rho = projector(&ops::ground());
        for t in [0.0, 0.0123, 0.5, 3.3333, table.t_max() + 0.7] {
            let a = table.center().drift(&rho, t).unwrap();
            let b = linalg::propagator(&s.nojump, t).unwrap().apply(&rho);
            assert!(linalg::max_abs(&(a - b)) < 1e-12, "t = {t}");
        }
    }

    #[test]
    fn channel_sampler() {
        let mut rng = RngStream::new(1, 0).rng();
        assert_eq!(sample_channel(&[0.3], &mut rng).unwrap(), 0);
        assert!(matches!(sample_channel(&[1e-16, 0.0], &mut rng), Err(Error::NumericallyDark)));
        let n = 100_000;
        let hits = (0..n).filter(|_| sample_channel(&[0.25, 0.75], &mut rng).unwrap() == 0).count();
        let sd = (n as f64 * 0.25 * 0.75).sqrt();
        assert!((hits as f64 - 0.25 * n as f64).abs() < 3.0 * sd);
    }

    #[test]
    fn ground_state_jumps_up() {
        let (_, table) = thermometer_table();
        let drifted = table.center().drift(&projector(&ops::ground()), 0.4).unwrap();
        let w = table.center().dynamics.weights(&drifted);
        assert!(w[1].abs() < 1e-15);
        let mut rng = RngStream::new(3, 0).rng();
        for _ in 0..100 {
            assert_eq!(sample_channel(&w, &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let (m, _) = thermometer_table();
        let a = simulate_ensemble(&m, GridSpec::default(), Stop::jumps(20), 4, 9, Execution::Sequential).unwrap();
        let b = simulate_ensemble(&m, GridSpec::default(), Stop::jumps(20), 4, 9, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].jumps, a[1].jumps);
    }

    #[test]
    fn time_ensemble_shorter_than_first_wait_is_empty() {
        let (_, table) = thermometer_table();
        let mut rng = RngStream::new(5, 0).rng();
        let rec = simulate_record(&table, &projector(&ops::ground()), Stop::time(1e-9), &mut rng, None).unwrap();
        assert!(rec.is_empty());
        assert_eq!(rec.final_stretch, Some(1e-9));
    }

    #[test]
    fn record_probability_closed_forms() {
        let m = pure_decay(1.3);
        let empty = MeasurementRecord::new(vec![], Ensemble::Jumps(0), None);
        assert_eq!(record_probability(&m, &empty, &excited()).unwrap().log, 0.0);
        let one = MeasurementRecord::new(vec![Jump { tau: 0.7, channel: 0 }], Ensemble::Jumps(1), None);
        let p = record_probability(&m, &one, &excited()).unwrap().value();
        assert_relative_eq!(p, 1.3 * (-1.3 * 0.7_f64).exp(), max_relative = 1e-12);

        let (g, n) = (1.0, 1.5);
        let th = qubit_thermometer(1.0, 0.0, g, n).unwrap();
        let rec = MeasurementRecord::new(
            vec![Jump { tau: 0.4, channel: 0 }, Jump { tau: 1.1, channel: 1 }],
            Ensemble::Jumps(2),
            None,
        );
        let p = record_probability(&th, &rec, &projector(&ops::ground())).unwrap().value();
        let exact = g * g * n * (n + 1.0) * (-g * n * 0.4_f64).exp() * (-g * (n + 1.0) * 1.1_f64).exp();
        assert_relative_eq!(p, exact, max_relative = 1e-12);
    }

    #[test]
    fn jsonl_round_trip() {
        let (m, _) = thermometer_table();
        let recs = simulate_ensemble(&m, GridSpec::default(), Stop::time(5.0), 3, 2, Execution::Sequential).unwrap();
        let labels = m.superops().unwrap().labels;
        let mut buf = Vec::new();
        write_records_jsonl(&mut buf, &recs, &labels).unwrap();
        let back = read_records_jsonl(std::io::Cursor::new(buf), &labels).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in recs.iter().zip(&back) {
            assert_eq!(a.jumps, b.jumps);
            assert_eq!(a.final_stretch, b.final_stretch);
        }
        assert!(read_records_jsonl(std::io::Cursor::new(b"{\"oops\":1}\n".to_vec()), &labels).is_err());
    }
}
