//! Point estimators on measurement records.
//!
//! The maximum-likelihood estimate is the `θ̃` at which the replayed
//! monitoring operator becomes traceless. For renewal models the
//! log-likelihood can also be written directly as a sum over consecutive
//! waiting-time densities, and a cheap moment estimator inverts the mean
//! waiting time between a fixed pair of channels.

use std::io::Write;

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::brent::{BrentOpt, BrentRoot};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::LindbladModel;
use crate::monitoring::replay_scores;
use crate::parallel::{map_indexed, Execution};
use crate::renewal::{check_renewal, transition_moments, wtd_matrix, RenewalStructure};
use crate::trajectory::{record_probability_at, MeasurementRecord};

const BUDGET: u64 = 200;
const FLAT_SCORE: f64 = 1e-12;

/// Closed search interval for a scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Config(format!("invalid search interval [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        (self.lo..=self.hi).contains(&x)
    }

    /// Default tolerance `1e-6·width`.
    pub fn default_tol(&self) -> f64 {
        1e-6 * self.width()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// Interior stationary point of the likelihood.
    Interior,
    /// The likelihood peaks at an interval endpoint; `theta_hat` is that endpoint.
    Boundary,
    /// `tr ξ` vanishes identically: the record carries no information.
    Flat,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimationResult {
    pub theta_hat: f64,
    pub interval: Interval,
    pub verdict: Verdict,
    pub iterations: u64,
    /// `tr ξ` at `theta_hat`.
    pub final_score: f64,
    /// Log-probability of the record at `theta_hat`.
    pub loglik: f64,
}

impl EstimationResult {
    /// The estimate, or `None` for a boundary verdict.
    pub fn estimate(&self) -> Option<f64> {
        (self.verdict != Verdict::Boundary).then_some(self.theta_hat)
    }
}

fn to_argmin(e: Error) -> argmin::core::Error {
    argmin::core::Error::from(e)
}

fn from_argmin(e: argmin::core::Error) -> Error {
    match e.downcast::<Error>() {
        Ok(inner) => inner,
        Err(other) => Error::Estimation(other.to_string()),
    }
}

struct Objective<F: Fn(f64) -> Result<f64>> {
    f: F,
    square: bool,
}

impl<F: Fn(f64) -> Result<f64>> CostFunction for Objective<F> {
    type Param = f64;
    type Output = f64;

    fn cost(&self, x: &f64) -> std::result::Result<f64, argmin::core::Error> {
        let v = (self.f)(*x).map_err(to_argmin)?;
        Ok(if self.square { v * v } else { v })
    }
}

/// Root of `f` in a sign-changing bracket; returns `(root, iterations)`.
fn brent_root<F: Fn(f64) -> Result<f64>>(f: F, iv: Interval, tol: f64) -> Result<(f64, u64)> {
    let res = Executor::new(Objective { f, square: false }, BrentRoot::new(iv.lo, iv.hi, tol))
        .configure(|s| s.param(iv.hi).max_iters(BUDGET - 2))
        .run()
        .map_err(from_argmin)?;
    let state = res.state();
    Ok((*state.get_best_param().unwrap_or(&iv.hi), state.get_iter()))
}

/// Minimizer of `f` (or `f²`) on the interval; returns `(x, iterations)`.
fn brent_min<F: Fn(f64) -> Result<f64>>(f: F, square: bool, iv: Interval, tol: f64) -> Result<(f64, u64)> {
    let solver = BrentOpt::new(iv.lo, iv.hi).set_tolerance(f64::EPSILON.sqrt(), tol / 3.0);
    let res = Executor::new(Objective { f, square }, solver)
        .configure(|s| s.max_iters(BUDGET - 2))
        .run()
        .map_err(from_argmin)?;
    let state = res.state();
    let x = *state
        .get_best_param()
        .ok_or_else(|| Error::Estimation("minimizer returned no point".into()))?;
    Ok((x, state.get_iter()))
}

fn record_loglik(model: &LindbladModel, theta: &[f64], record: &MeasurementRecord) -> Result<f64> {
    let rho0 = model.initial_state_at(theta)?;
    Ok(record_probability_at(model, theta, record, &rho0)?.log)
}

/// Maximum-likelihood estimate of `param` from one record, by driving the
/// replayed `tr ξ` to zero inside `interval`.
///
/// A sign change of the score between the endpoints is refined by Brent
/// root finding. Without one, `(tr ξ)²` is minimized, and a minimum at an
/// endpoint yields a boundary verdict.
pub fn mle_monitoring(
    record: &MeasurementRecord,
    model: &LindbladModel,
    param: &str,
    interval: Interval,
    tol: Option<f64>,
) -> Result<EstimationResult> {
    let index = model.param_index(param)?;
    let tol = tol.unwrap_or_else(|| interval.default_tol());
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tolerance {tol} must be positive")));
    }
    let theta_at = |x: f64| {
        let mut th = model.theta().to_vec();
        th[index] = x;
        th
    };
    let score = |x: f64| -> Result<f64> {
        let step = 1e-5 * x.abs().max(1.0);
        Ok(replay_scores(model, &theta_at(x), record, &[(index, step)])?[0])
    };
    let finish = |x: f64, verdict: Verdict, iterations: u64| -> Result<EstimationResult> {
        Ok(EstimationResult {
            theta_hat: x,
            interval,
            verdict,
            iterations,
            final_score: score(x)?,
            loglik: record_loglik(model, &theta_at(x), record)?,
        })
    };

    let s_lo = score(interval.lo)?;
    let s_hi = score(interval.hi)?;
    let mid = 0.5 * (interval.lo + interval.hi);
    if s_lo.abs() < FLAT_SCORE && s_hi.abs() < FLAT_SCORE && score(mid)?.abs() < FLAT_SCORE {
        log::warn!("flat likelihood: tr ξ vanishes across [{}, {}]", interval.lo, interval.hi);
        return finish(mid, Verdict::Flat, 0);
    }
    if s_lo > 0.0 && s_hi < 0.0 {
        let (x, it) = brent_root(score, interval, tol)?;
        return finish(x, Verdict::Interior, it);
    }
    if s_lo == 0.0 || s_hi == 0.0 {
        let x = if s_lo == 0.0 { interval.lo } else { interval.hi };
        return finish(x, Verdict::Boundary, 0);
    }
    if s_lo < 0.0 && s_hi > 0.0 {
        // The score crosses upward: a likelihood minimum inside, so the
        // maximum sits on the better endpoint.
        let l_lo = record_loglik(model, &theta_at(interval.lo), record)?;
        let l_hi = record_loglik(model, &theta_at(interval.hi), record)?;
        let x = if l_lo >= l_hi { interval.lo } else { interval.hi };
        return finish(x, Verdict::Boundary, 0);
    }
    let (x, it) = brent_min(score, true, interval, tol)?;
    let verdict = if x - interval.lo <= 10.0 * tol || interval.hi - x <= 10.0 * tol {
        Verdict::Boundary
    } else {
        Verdict::Interior
    };
    let x = match verdict {
        Verdict::Boundary if (x - interval.lo) < (interval.hi - x) => interval.lo,
        Verdict::Boundary => interval.hi,
        _ => x,
    };
    finish(x, verdict, it)
}

fn renewal_at(model: &LindbladModel, theta: &[f64]) -> Result<RenewalStructure> {
    check_renewal(&model.with_theta(theta.to_vec())?)?.into_result()
}

/// Renewal log-likelihood `Σ_{j≥2} log W(τ_j, k_j | k_{j−1})` at `theta`.
///
/// The first waiting time depends on the preparation and is dropped. A
/// transition of zero density gives `−∞`.
pub fn loglik_renewal(model: &LindbladModel, record: &MeasurementRecord, theta: &[f64]) -> Result<f64> {
    if record.len() < 2 {
        return Err(Error::Estimation("renewal log-likelihood needs at least two jumps".into()));
    }
    let structure = renewal_at(model, theta)?;
    record.validate(structure.labels().len())?;
    let mut total = 0.0;
    for (j, pair) in record.jumps.windows(2).enumerate() {
        let w = wtd_matrix(&structure, pair[1].tau)?[(pair[1].channel, pair[0].channel)];
        if !(w > 0.0) {
            log::warn!(
                "jump {} ({} after {}) has zero density at θ = {:?}",
                j + 2,
                structure.labels()[pair[1].channel],
                structure.labels()[pair[0].channel],
                theta
            );
            return Ok(f64::NEG_INFINITY);
        }
        total += w.ln();
    }
    Ok(total)
}

/// Direct maximization of [`loglik_renewal`] over `interval`.
pub fn mle_renewal(
    record: &MeasurementRecord,
    model: &LindbladModel,
    param: &str,
    interval: Interval,
    tol: Option<f64>,
) -> Result<EstimationResult> {
    let index = model.param_index(param)?;
    let tol = tol.unwrap_or_else(|| interval.default_tol());
    let theta_at = |x: f64| {
        let mut th = model.theta().to_vec();
        th[index] = x;
        th
    };
    let neg = |x: f64| -> Result<f64> {
        let l = loglik_renewal(model, record, &theta_at(x))?;
        Ok(if l.is_finite() { -l } else { f64::MAX })
    };
    let (x, it) = brent_min(neg, false, interval, tol)?;
    let verdict = if x - interval.lo <= 10.0 * tol || interval.hi - x <= 10.0 * tol {
        Verdict::Boundary
    } else {
        Verdict::Interior
    };
    let step = 1e-5 * x.abs().max(1.0);
    let score = (loglik_renewal(model, record, &theta_at(x + step))?
        - loglik_renewal(model, record, &theta_at(x - step))?)
        / (2.0 * step);
    Ok(EstimationResult {
        theta_hat: x,
        interval,
        verdict,
        iterations: it,
        final_score: score,
        loglik: loglik_renewal(model, record, &theta_at(x))?,
    })
}

/// Stationary-free conditional mean waiting time `⟨τ⟩_{q→k}`.
pub fn conditional_mean_waiting_time(structure: &RenewalStructure, from: usize, to: usize) -> Result<f64> {
    let (p, m1) = transition_moments(structure)?;
    let prob = p[(to, from)];
    if !(prob > 0.0) {
        return Err(Error::Estimation(format!(
            "transition {} → {} never happens",
            structure.labels()[from],
            structure.labels()[to]
        )));
    }
    Ok(m1[(to, from)] / prob)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanWaitingEstimate {
    pub estimate: f64,
    pub empirical_mean: f64,
    pub pairs: usize,
    pub iterations: u64,
    /// Set when the sample is too small for a meaningful variance.
    pub warning: Option<String>,
}

/// Moment estimator: the `θ` whose conditional mean waiting time between
/// channels `from → to` equals the empirical mean over all such pairs in
/// `records`.
pub fn mean_waiting_time_estimator(
    records: &[MeasurementRecord],
    model: &LindbladModel,
    param: &str,
    from: &str,
    to: &str,
    interval: Interval,
) -> Result<MeanWaitingEstimate> {
    let index = model.param_index(param)?;
    let structure = renewal_at(model, model.theta())?;
    let q = structure.channel_index(from)?;
    let k = structure.channel_index(to)?;
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for rec in records {
        rec.validate(structure.labels().len())?;
        for pair in rec.jumps.windows(2) {
            if pair[0].channel == q && pair[1].channel == k {
                sum += pair[1].tau;
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        return Err(Error::Estimation(format!("no {from} → {to} pair in the records")));
    }
    let empirical_mean = sum / pairs as f64;
    let warning = (pairs < 2).then(|| {
        let msg = format!("only {pairs} {from} → {to} pair observed; the estimate has a large variance");
        log::warn!("{msg}");
        msg
    });
    let target = |x: f64| -> Result<f64> {
        let mut th = model.theta().to_vec();
        th[index] = x;
        Ok(conditional_mean_waiting_time(&renewal_at(model, &th)?, q, k)? - empirical_mean)
    };
    let f_lo = target(interval.lo)?;
    let f_hi = target(interval.hi)?;
    if f_lo * f_hi > 0.0 {
        return Err(Error::Estimation(format!(
            "empirical mean {empirical_mean:.6} lies outside the range [{:.6}, {:.6}] of ⟨τ⟩ over the interval",
            (f_lo + empirical_mean).min(f_hi + empirical_mean),
            (f_lo + empirical_mean).max(f_hi + empirical_mean)
        )));
    }
    let (estimate, iterations) = brent_root(target, interval, interval.default_tol())?;
    Ok(MeanWaitingEstimate {
        estimate,
        empirical_mean,
        pairs,
        iterations,
        warning,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub record_id: u64,
    pub theta_hat: f64,
    pub loglik: f64,
    pub iterations: u64,
    pub verdict: Verdict,
}

/// Spread of estimates across records compared with the Cramér-Rao bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleStudy {
    pub true_theta: f64,
    pub rows: Vec<StudyRow>,
    pub mean: f64,
    /// Population variance, so that `mse = variance + bias²` exactly.
    pub variance: f64,
    pub mse: f64,
    /// `1/F` for the record length studied.
    pub cr_bound: f64,
    pub boundary_hits: usize,
}

#[derive(Serialize)]
struct Summary {
    mean: f64,
    variance: f64,
    mse: f64,
    cr_bound: f64,
}

impl EnsembleStudy {
    pub fn from_rows(true_theta: f64, rows: Vec<StudyRow>, fisher: f64) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Estimation("no estimates to summarize".into()));
        }
        let n = rows.len() as f64;
        let mean = rows.iter().map(|r| r.theta_hat).sum::<f64>() / n;
        let variance = rows.iter().map(|r| (r.theta_hat - mean).powi(2)).sum::<f64>() / n;
        let mse = rows.iter().map(|r| (r.theta_hat - true_theta).powi(2)).sum::<f64>() / n;
        let boundary_hits = rows.iter().filter(|r| r.verdict == Verdict::Boundary).count();
        Ok(Self {
            true_theta,
            rows,
            mean,
            variance,
            mse,
            cr_bound: if fisher > 0.0 { 1.0 / fisher } else { f64::INFINITY },
            boundary_hits,
        })
    }

    pub fn bias(&self) -> f64 {
        self.mean - self.true_theta
    }

    /// CSV with columns `record_id,theta_hat,loglik,iterations`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["record_id", "theta_hat", "loglik", "iterations"])?;
        for r in &self.rows {
            w.write_record(&[
                r.record_id.to_string(),
                r.theta_hat.to_string(),
                r.loglik.to_string(),
                r.iterations.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// JSON object `{mean, variance, mse, cr_bound}`.
    pub fn write_summary_json<W: Write>(&self, out: W) -> Result<()> {
        let s = Summary {
            mean: self.mean,
            variance: self.variance,
            mse: self.mse,
            cr_bound: self.cr_bound,
        };
        serde_json::to_writer_pretty(out, &s)?;
        Ok(())
    }
}

/// Monitoring-operator MLE on every record, in parallel, summarized against
/// the Fisher information `fisher` of one record.
pub fn mle_study(
    records: &[MeasurementRecord],
    model: &LindbladModel,
    param: &str,
    interval: Interval,
    tol: Option<f64>,
    fisher: f64,
    exec: Execution,
) -> Result<EnsembleStudy> {
    let true_theta = model.param(param)?;
    let rows = map_indexed(exec, records.len(), |i| {
        let r = mle_monitoring(&records[i], model, param, interval, tol)?;
        Ok(StudyRow {
            record_id: records[i].trajectory,
            theta_hat: r.theta_hat,
            loglik: r.loglik,
            iterations: r.iterations,
            verdict: r.verdict,
        })
    })?;
    EnsembleStudy::from_rows(true_theta, rows, fisher)
}
