//! Analytic Fisher information of renewal jump processes.
//!
//! A monitored process is renewal when every monitored jump operator has
//! rank one, `L_k = c_k |μ_k⟩⟨ν_k|`: each click then resets the system to the
//! pure state `σ_k = |μ_k⟩⟨μ_k|`, and a record is a Markov chain of channel
//! labels decorated with conditionally independent waiting times.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, projector, CMatrix, CVector, Superoperator, C64};
use crate::model::{LindbladModel, Superops};
use crate::quadrature::{self, QuadOptions};

const RANK_TOL: f64 = 1e-10;
const W_FLOOR: f64 = 1e-14;
const TAIL_DECAYS: f64 = 40.0;
const SINGULAR_DENSITY: f64 = 1e8;

/// Rank-one factorization of one monitored channel.
#[derive(Debug, Clone)]
pub struct RenewalChannel {
    pub label: String,
    /// `c_k` (real, non-negative); zero for a channel that never fires.
    pub coefficient: f64,
    pub post_jump: CVector,
    pub pre_jump: CVector,
    pub reset: CMatrix,
    pub efficiency: f64,
}

#[derive(Debug, Clone)]
pub struct RenewalStructure {
    model: LindbladModel,
    superops: Superops,
    channels: Vec<RenewalChannel>,
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum RenewalVerdict {
    Renewal(RenewalStructure),
    NotRenewal {
        channel: String,
        /// Second over first singular value of the offending operator.
        rank_ratio: f64,
    },
}

impl RenewalVerdict {
    pub fn is_renewal(&self) -> bool {
        matches!(self, RenewalVerdict::Renewal(_))
    }

    pub fn into_result(self) -> Result<RenewalStructure> {
        match self {
            RenewalVerdict::Renewal(s) => Ok(s),
            RenewalVerdict::NotRenewal { channel, rank_ratio } => Err(Error::NotRenewal(format!(
                "jump operator '{channel}' has rank above one (σ₂/σ₁ = {rank_ratio:.3e})"
            ))),
        }
    }
}

fn factorize(label: &str, op: &CMatrix, efficiency: f64) -> std::result::Result<RenewalChannel, f64> {
    let svd = op.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^†");
    let s = &svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let (i0, s0) = (order[0], s[order[0]]);
    let s1 = order.get(1).map_or(0.0, |&i| s[i]);
    if s0 > 0.0 && s1 > RANK_TOL * s0 {
        return Err(s1 / s0);
    }
    let mu: CVector = u.column(i0).into_owned();
    let nu: CVector = v_t.row(i0).adjoint();
    Ok(RenewalChannel {
        label: label.to_string(),
        coefficient: s0,
        reset: projector(&mu),
        post_jump: mu,
        pre_jump: nu,
        efficiency,
    })
}

fn channels_at(model: &LindbladModel, theta: &[f64]) -> Result<std::result::Result<Vec<RenewalChannel>, (String, f64)>> {
    let point = model.point_at(theta)?;
    let mut out = Vec::new();
    for ch in point.channels.iter().filter(|ch| ch.monitored) {
        match factorize(&ch.label, &ch.operator, ch.efficiency) {
            Ok(rc) => out.push(rc),
            Err(ratio) => return Ok(Err((ch.label.clone(), ratio))),
        }
    }
    Ok(Ok(out))
}

/// Rank-one test on every monitored channel at the model's current θ.
pub fn check_renewal(model: &LindbladModel) -> Result<RenewalVerdict> {
    let superops = model.superops()?;
    match channels_at(model, model.theta())? {
        Ok(channels) => Ok(RenewalVerdict::Renewal(RenewalStructure {
            model: model.clone(),
            superops,
            channels,
        })),
        Err((channel, rank_ratio)) => Ok(RenewalVerdict::NotRenewal { channel, rank_ratio }),
    }
}

impl RenewalStructure {
    pub fn model(&self) -> &LindbladModel {
        &self.model
    }

    pub fn superops(&self) -> &Superops {
        &self.superops
    }

    pub fn channels(&self) -> &[RenewalChannel] {
        &self.channels
    }

    pub fn labels(&self) -> &[String] {
        &self.superops.labels
    }

    pub fn channel_index(&self, label: &str) -> Result<usize> {
        self.superops.channel_index(label)
    }

    pub fn effective_hamiltonian(&self) -> Option<&CMatrix> {
        self.superops.kraus.as_ref().map(|k| &k.effective_hamiltonian)
    }
}

/// Precomputed pieces for evaluating all `W(τ,k|q)` at one parameter point.
struct WtdEval {
    nojump: CMatrix,
    rows: Vec<CVector>,
    sources: Vec<CVector>,
}

impl WtdEval {
    fn new(superops: &Superops, resets: &[CMatrix]) -> Self {
        let trace_row = Superoperator::identity(superops.dim).trace_row();
        let rows = superops
            .jumps
            .iter()
            .map(|j| (trace_row.transpose() * j.matrix()).transpose())
            .collect();
        let sources = resets
            .iter()
            .map(|s| CVector::from_column_slice(s.as_slice()))
            .collect();
        Self {
            nojump: superops.nojump.matrix().clone(),
            rows,
            sources,
        }
    }

    fn at_model(model: &LindbladModel, theta: &[f64]) -> Result<Self> {
        let superops = model.superops_at(theta)?;
        let channels = channels_at(model, theta)?
            .map_err(|(c, _)| Error::NotRenewal(format!("channel '{c}' loses rank one at displaced θ")))?;
        let resets: Vec<CMatrix> = channels.into_iter().map(|c| c.reset).collect();
        Ok(Self::new(&superops, &resets))
    }

    /// `W[k, q]` at delay `tau`.
    fn eval(&self, tau: f64) -> DMatrix<f64> {
        let k = self.rows.len();
        let prop = if tau == 0.0 {
            CMatrix::identity(self.nojump.nrows(), self.nojump.ncols())
        } else {
            (&self.nojump * C64::new(tau, 0.0)).exp()
        };
        let mut w = DMatrix::zeros(k, k);
        for (q, src) in self.sources.iter().enumerate() {
            let evolved = &prop * src;
            for (kk, row) in self.rows.iter().enumerate() {
                w[(kk, q)] = row.dot(&evolved).re;
            }
        }
        w
    }

    fn inverse(&self) -> Result<CMatrix> {
        self.nojump.clone().try_inverse().ok_or(Error::DarkSubspace)
    }

    /// `(P, M1, M2)` with `P[k,q] = ∫W`, `M1 = ∫τW`, `M2 = ∫τ²W`, from powers
    /// of `ℒ₀⁻¹`.
    fn moments(&self) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let inv = self.inverse()?;
        let k = self.rows.len();
        let mut p = DMatrix::zeros(k, k);
        let mut m1 = DMatrix::zeros(k, k);
        let mut m2 = DMatrix::zeros(k, k);
        for (q, src) in self.sources.iter().enumerate() {
            let x1 = &inv * src;
            let x2 = &inv * &x1;
            let x3 = &inv * &x2;
            for (kk, row) in self.rows.iter().enumerate() {
                p[(kk, q)] = -row.dot(&x1).re;
                m1[(kk, q)] = row.dot(&x2).re;
                m2[(kk, q)] = -2.0 * row.dot(&x3).re;
            }
        }
        Ok((p, m1, m2))
    }
}

/// Waiting-time density `tr{𝒥_k e^{ℒ₀τ} σ_q}`.
pub fn wtd(structure: &RenewalStructure, tau: f64, k: usize, q: usize) -> Result<f64> {
    Ok(wtd_matrix(structure, tau)?[(k, q)])
}

/// All `W(τ,k|q)` at once, indexed `[k, q]`.
pub fn wtd_matrix(structure: &RenewalStructure, tau: f64) -> Result<DMatrix<f64>> {
    if tau < 0.0 {
        return Err(Error::NegativeTime(tau));
    }
    let resets: Vec<CMatrix> = structure.channels.iter().map(|c| c.reset.clone()).collect();
    Ok(WtdEval::new(&structure.superops, &resets).eval(tau))
}

/// Amplitude form `|c_k ⟨ν_k| e^{-iH_e τ} |μ_q⟩|²`, available when every
/// channel is monitored with unit efficiency.
pub fn wtd_amplitude(structure: &RenewalStructure, tau: f64, k: usize, q: usize) -> Result<f64> {
    if tau < 0.0 {
        return Err(Error::NegativeTime(tau));
    }
    let he = structure.effective_hamiltonian().ok_or_else(|| {
        Error::InvalidParameter("amplitude form needs every channel monitored at unit efficiency".into())
    })?;
    let v = linalg::expm(&(he * C64::new(0.0, -1.0)), tau);
    let ck = &structure.channels[k];
    let mq = &structure.channels[q];
    let amp = ck.pre_jump.dotc(&(&v * &mq.post_jump)) * ck.coefficient;
    Ok(amp.norm_sqr())
}

/// Slowest decay rate `min |Re λ|` of `ℒ₀` and largest oscillation `max |Im λ|`.
fn spectral_scales(nojump: &Superoperator) -> Result<(f64, f64)> {
    let eig = nojump.eigenvalues();
    let slow = eig.iter().map(|z| z.re.abs()).fold(f64::INFINITY, f64::min);
    let fast_im = eig.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    if !(slow > 1e-10) {
        return Err(Error::Unnormalizable(format!(
            "no-jump generator has a non-decaying mode (|Re λ| = {slow:.3e})"
        )));
    }
    Ok((slow, fast_im))
}

/// Markov chain of jump channels.
#[derive(Debug, Clone)]
pub struct ChannelChain {
    pub labels: Vec<String>,
    /// `p(k|q)`, indexed `[k, q]`; columns sum to one.
    pub transition: DMatrix<f64>,
    /// Stationary channel distribution (Perron vector of `transition`).
    pub stationary: DVector<f64>,
    /// Per-channel steady-state activity `tr(𝒥_k ρ_ss)`, when the model has a
    /// unique steady state.
    pub activities: Option<Vec<f64>>,
}

impl ChannelChain {
    pub fn total_activity(&self) -> Option<f64> {
        self.activities.as_ref().map(|a| a.iter().sum())
    }
}

/// Normalized stationary vector of a column-stochastic matrix.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = p.nrows();
    let mut a = DMatrix::zeros(n + 1, n);
    let mut b = DVector::zeros(n + 1);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = p[(i, j)] - if i == j { 1.0 } else { 0.0 };
        }
        a[(n, i)] = 1.0;
    }
    b[n] = 1.0;
    let svd = a.svd(true, true);
    let smin = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    if smin < 1e-12 {
        return Err(Error::Numerical("channel chain is reducible: stationary law not unique".into()));
    }
    let x = svd
        .solve(&b, 1e-14)
        .map_err(|e| Error::Numerical(format!("stationary solve failed: {e}")))?;
    Ok(x)
}

fn chain_from(eval: &WtdEval) -> Result<DMatrix<f64>> {
    Ok(eval.moments()?.0)
}

pub fn channel_chain(structure: &RenewalStructure) -> Result<ChannelChain> {
    let resets: Vec<CMatrix> = structure.channels.iter().map(|c| c.reset.clone()).collect();
    let eval = WtdEval::new(&structure.superops, &resets);
    let transition = chain_from(&eval)?;
    for q in 0..transition.ncols() {
        let s: f64 = transition.column(q).sum();
        if (s - 1.0).abs() > 1e-8 {
            return Err(Error::Unnormalizable(format!(
                "jump probabilities after channel {} sum to {s}",
                structure.superops.labels[q]
            )));
        }
    }
    let stationary = stationary_distribution(&transition)?;
    let activities = linalg::steady_state(&structure.superops.liouvillian)
        .ok()
        .map(|rho| structure.superops.activities(&rho));
    if let Some(act) = &activities {
        let total: f64 = act.iter().sum();
        for (k, a) in act.iter().enumerate() {
            let diff = (a / total - stationary[k]).abs();
            if diff > 1e-8 {
                return Err(Error::Numerical(format!(
                    "stationary channel law disagrees with activities by {diff:.3e}"
                )));
            }
        }
    }
    Ok(ChannelChain {
        labels: structure.superops.labels.clone(),
        transition,
        stationary,
        activities,
    })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RenewalOptions {
    /// Finite-difference step; defaults to the model's `1e-4·max(1,|θ|)`.
    pub step: Option<f64>,
    pub quadrature: QuadOptions,
}

/// Five-point derivative stencil around one parameter.
struct Stencil {
    center: WtdEval,
    // θ-2h, θ-h, θ+h, θ+2h
    shifted: [WtdEval; 4],
    step: f64,
}

const OFFSETS: [f64; 4] = [-2.0, -1.0, 1.0, 2.0];
const WEIGHTS: [f64; 4] = [1.0, -8.0, 8.0, -1.0];

impl Stencil {
    fn new(model: &LindbladModel, index: usize, step: f64) -> Result<Self> {
        let at = |o: f64| WtdEval::at_model(model, &model.shifted(index, o * step));
        Ok(Self {
            center: WtdEval::at_model(model, model.theta())?,
            shifted: [at(OFFSETS[0])?, at(OFFSETS[1])?, at(OFFSETS[2])?, at(OFFSETS[3])?],
            step,
        })
    }

    fn derivative<T, F>(&self, f: F) -> Result<DMatrix<f64>>
    where
        F: Fn(&WtdEval) -> Result<T>,
        T: Into<DMatrix<f64>>,
    {
        let mut acc: Option<DMatrix<f64>> = None;
        for (ev, w) in self.shifted.iter().zip(WEIGHTS) {
            let v: DMatrix<f64> = f(ev)?.into();
            acc = Some(match acc {
                None => v * w,
                Some(a) => a + v * w,
            });
        }
        Ok(acc.expect("four stencil points") / (12.0 * self.step))
    }
}

fn resolve_param(model: &LindbladModel, param: &str, step: Option<f64>) -> Result<(usize, f64)> {
    let index = model.param_index(param)?;
    let step = step.unwrap_or_else(|| model.default_step(index));
    if !(step > 0.0) {
        return Err(Error::InvalidParameter(format!("step {step} must be positive")));
    }
    Ok((index, step))
}

/// `(∂W)²/W` with the vanishing-support guard.
///
/// Below [`W_FLOOR`] the computed `W` is rounding noise and may even be
/// negative, so the ratio is taken against the floor instead. This keeps the
/// integrand continuous and bounded near isolated zeros of an oscillating
/// density. A ratio past [`SINGULAR_DENSITY`] means `∂W` escapes the
/// support, which is flagged as infinite information.
pub(crate) fn information_density(w: f64, dw: f64) -> Result<f64> {
    if w < W_FLOOR {
        let ratio = dw * dw / W_FLOOR;
        if !(ratio < SINGULAR_DENSITY) {
            return Err(Error::InfiniteInformation(format!(
                "density {w:.3e} vanishes while its derivative is {dw:.3e}"
            )));
        }
        return Ok(ratio);
    }
    Ok(dw * dw / w)
}

#[derive(Debug, Clone)]
pub struct RenewalFisherReport {
    pub parameter: String,
    /// `F/N`.
    pub per_jump: f64,
    /// Information in the channel sequence alone, per jump.
    pub channels: f64,
    /// Information in the time tags given the channels, per jump.
    pub times_given_channels: f64,
    /// `p_q ∫(∂W)²/W dτ`, indexed `[k, q]`.
    pub contributions: DMatrix<f64>,
    pub quadrature_error: f64,
    pub chain: ChannelChain,
    /// `Σ_k ∫ W(τ,k|q) dτ` per source channel.
    pub normalization: Vec<f64>,
}

pub fn fisher_renewal(structure: &RenewalStructure, param: &str) -> Result<RenewalFisherReport> {
    fisher_renewal_with(structure, param, RenewalOptions::default())
}

/// Per-jump Fisher information of a renewal process by adaptive quadrature
/// of `Σ_{k,q} p_q ∫(∂_θW)²/W dτ`, split into channel and time parts.
pub fn fisher_renewal_with(
    structure: &RenewalStructure,
    param: &str,
    opts: RenewalOptions,
) -> Result<RenewalFisherReport> {
    let model = &structure.model;
    let (index, step) = resolve_param(model, param, opts.step)?;
    let stencil = Stencil::new(model, index, step)?;
    let chain = channel_chain(structure)?;
    let kn = chain.labels.len();
    let p = &chain.transition;
    let dp = stencil.derivative(chain_from)?;
    let pq = &chain.stationary;

    let mut f_ch = 0.0;
    for q in 0..kn {
        for k in 0..kn {
            f_ch += pq[q] * information_density(p[(k, q)], dp[(k, q)])?;
        }
    }
    let dlogp = DMatrix::from_fn(kn, kn, |k, q| {
        if p[(k, q)] < W_FLOOR {
            0.0
        } else {
            dp[(k, q)] / p[(k, q)]
        }
    });

    let (slow, osc) = spectral_scales(&structure.superops.nojump)?;
    let t_max = TAIL_DECAYS / slow;
    let pieces = ((t_max * osc / std::f64::consts::PI).ceil() as usize).clamp(16, 4096);
    let block = kn * kn;
    let integrand = |tau: f64| -> Result<Vec<f64>> {
        let w = stencil.center.eval(tau);
        let dw = stencil.derivative(|ev| Ok::<_, Error>(ev.eval(tau)))?;
        let mut out = vec![0.0; 3 * block];
        for k in 0..kn {
            for q in 0..kn {
                let i = k * kn + q;
                out[i] = w[(k, q)];
                out[block + i] = information_density(w[(k, q)], dw[(k, q)])?;
                let resid = dw[(k, q)] - w[(k, q)] * dlogp[(k, q)];
                out[2 * block + i] = information_density(w[(k, q)], resid)?;
            }
        }
        Ok(out)
    };
    let quad = quadrature::integrate(integrand, 0.0, t_max, pieces, opts.quadrature)?;

    let mut normalization = vec![0.0; kn];
    let mut contributions = DMatrix::zeros(kn, kn);
    let mut f_times = 0.0;
    let mut err = 0.0;
    for k in 0..kn {
        for q in 0..kn {
            let i = k * kn + q;
            normalization[q] += quad.value[i];
            contributions[(k, q)] = pq[q] * quad.value[block + i];
            f_times += pq[q] * quad.value[2 * block + i];
            err += pq[q] * quad.error[block + i];
        }
    }
    for (q, n) in normalization.iter().enumerate() {
        if (n - 1.0).abs() > 1e-8 {
            return Err(Error::Unnormalizable(format!(
                "waiting times after '{}' integrate to {n}",
                chain.labels[q]
            )));
        }
    }
    let per_jump = contributions.sum();
    Ok(RenewalFisherReport {
        parameter: param.to_string(),
        per_jump,
        channels: f_ch,
        times_given_channels: f_times,
        contributions,
        quadrature_error: err,
        chain,
        normalization,
    })
}

/// Cauchy–Schwarz lower bound on `F/N` from the conditional means and
/// variances of the waiting times.
pub fn fisher_bound(structure: &RenewalStructure, param: &str) -> Result<f64> {
    let model = &structure.model;
    let (index, step) = resolve_param(model, param, None)?;
    let stencil = Stencil::new(model, index, step)?;
    let chain = channel_chain(structure)?;
    let kn = chain.labels.len();
    let (p, m1, m2) = stencil.center.moments()?;
    let dp = stencil.derivative(chain_from)?;
    let mean = |ev: &WtdEval| -> Result<DMatrix<f64>> {
        let (p, m1, _) = ev.moments()?;
        Ok(DMatrix::from_fn(kn, kn, |k, q| {
            if p[(k, q)] < W_FLOOR {
                0.0
            } else {
                m1[(k, q)] / p[(k, q)]
            }
        }))
    };
    let dmu = stencil.derivative(mean)?;
    let mut bound = 0.0;
    for q in 0..kn {
        for k in 0..kn {
            let pkq = p[(k, q)];
            bound += chain.stationary[q] * information_density(pkq, dp[(k, q)])?;
            if pkq < W_FLOOR {
                continue;
            }
            let mu = m1[(k, q)] / pkq;
            let var = m2[(k, q)] / pkq - mu * mu;
            if !(var > 1e-300) {
                return Err(Error::Numerical(format!(
                    "waiting time for {}→{} has zero variance",
                    chain.labels[q], chain.labels[k]
                )));
            }
            bound += chain.stationary[q] * pkq * dmu[(k, q)].powi(2) / var;
        }
    }
    Ok(bound)
}

#[derive(Debug, Clone)]
pub struct SampleMeanReport {
    /// Stationary mean waiting time between consecutive jumps.
    pub mean: f64,
    pub d_mean: f64,
    pub variance: f64,
    /// `Σ_{i≥1} C_i`, the summed lag covariances of consecutive waiting times.
    pub covariance_sum: f64,
    /// `F_T/N = (∂μ)² / (σ² + 2ΣC_i)`.
    pub per_jump: f64,
}

impl SampleMeanReport {
    pub fn fisher(&self, jumps: usize) -> f64 {
        self.per_jump * jumps as f64
    }
}

#[allow(clippy::type_complexity)]
fn chain_mean(ev: &WtdEval) -> Result<(f64, DVector<f64>, DVector<f64>, DMatrix<f64>, f64)> {
    let (p, m1, m2) = ev.moments()?;
    let kn = p.nrows();
    let stat = stationary_distribution(&p)?;
    let a = DVector::from_fn(kn, |q, _| m1.column(q).sum());
    let b = &m1 * &stat;
    let mean = a.dot(&stat);
    let second: f64 = (0..kn).map(|q| stat[q] * m2.column(q).sum()).sum();
    Ok((mean, a, b, p, second))
}

/// Transition probabilities `P[k,q] = ∫W(τ,k|q)dτ` and first moments
/// `M1[k,q] = ∫τW(τ,k|q)dτ`.
pub fn transition_moments(structure: &RenewalStructure) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let resets: Vec<CMatrix> = structure.channels.iter().map(|c| c.reset.clone()).collect();
    let (p, m1, _) = WtdEval::new(&structure.superops, &resets).moments()?;
    Ok((p, m1))
}

/// Fisher information of the sample-mean waiting time for large `N`, with
/// exact lag covariances from the channel chain.
pub fn sample_mean_fisher(structure: &RenewalStructure, param: &str) -> Result<SampleMeanReport> {
    let model = &structure.model;
    let (index, step) = resolve_param(model, param, None)?;
    let stencil = Stencil::new(model, index, step)?;
    let (mean, a, b, p, second) = chain_mean(&stencil.center)?;
    let d_mean = stencil.derivative(|ev| chain_mean(ev).map(|m| DMatrix::from_element(1, 1, m.0)))?[(0, 0)];
    let variance = second - mean * mean;
    let kn = p.nrows();
    let stat = stationary_distribution(&p)?;
    let pi = &stat * DVector::from_element(kn, 1.0).transpose();
    let z = (DMatrix::identity(kn, kn) - &p + &pi)
        .try_inverse()
        .ok_or_else(|| Error::Numerical("fundamental matrix of the channel chain is singular".into()))?;
    let covariance_sum = a.dot(&((z - pi) * b));
    let denom = variance + 2.0 * covariance_sum;
    if !(denom > 0.0) {
        return Err(Error::Numerical(format!("asymptotic variance {denom:.3e} is not positive")));
    }
    Ok(SampleMeanReport {
        mean,
        d_mean,
        variance,
        covariance_sum,
        per_jump: d_mean * d_mean / denom,
    })
}

#[derive(Debug, Clone)]
pub struct ClassicalFisher {
    pub per_jump: f64,
    pub channels: f64,
    pub times_given_channels: f64,
    pub activity: f64,
    pub stationary: DVector<f64>,
}

fn validate_rates(r: &DMatrix<f64>) -> Result<()> {
    if r.nrows() != r.ncols() {
        return Err(Error::NotSquare { rows: r.nrows(), cols: r.ncols() });
    }
    for j in 0..r.nrows() {
        for i in 0..r.ncols() {
            let v = r[(j, i)];
            if i == j && v != 0.0 {
                return Err(Error::InvalidParameter("rate matrix must have a zero diagonal".into()));
            }
            if v < 0.0 || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("rate {v} from {i} to {j} is invalid")));
            }
        }
    }
    Ok(())
}

/// Stationary law of the classical master equation with rates `R[j, i]`
/// (from `i` to `j`).
pub fn classical_stationary(r: &DMatrix<f64>) -> Result<DVector<f64>> {
    validate_rates(r)?;
    let n = r.nrows();
    let mut g = r.clone();
    for i in 0..n {
        g[(i, i)] = -r.column(i).sum();
    }
    let mut a = DMatrix::zeros(n + 1, n);
    a.view_mut((0, 0), (n, n)).copy_from(&g);
    for i in 0..n {
        a[(n, i)] = 1.0;
    }
    let mut b = DVector::zeros(n + 1);
    b[n] = 1.0;
    let svd = a.svd(true, true);
    let smin = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    if smin < 1e-12 {
        return Err(Error::InvalidParameter("rate matrix is not ergodic".into()));
    }
    svd.solve(&b, 1e-14)
        .map_err(|e| Error::Numerical(format!("stationary solve failed: {e}")))
}

/// Per-jump Fisher information of a classical jump process with rate matrix
/// `rates(θ)`.
pub fn fisher_classical_me<F>(rates: F, theta: f64, step: f64) -> Result<ClassicalFisher>
where
    F: Fn(f64) -> Result<DMatrix<f64>>,
{
    let r = rates(theta)?;
    let stat = classical_stationary(&r)?;
    let n = r.nrows();
    let mut dr = DMatrix::zeros(n, n);
    for (o, w) in OFFSETS.iter().zip(WEIGHTS) {
        let ri = rates(theta + o * step)?;
        validate_rates(&ri)?;
        dr += ri * w;
    }
    dr /= 12.0 * step;
    let escape = DVector::from_fn(n, |i, _| r.column(i).sum());
    let d_escape = DVector::from_fn(n, |i, _| dr.column(i).sum());
    let activity = escape.dot(&stat);
    let mut full = 0.0;
    let mut times = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                full += stat[i] * information_density(r[(j, i)], dr[(j, i)])?;
            }
        }
        times += stat[i] * information_density(escape[i], d_escape[i])?;
    }
    Ok(ClassicalFisher {
        per_jump: full / activity,
        channels: (full - times) / activity,
        times_given_channels: times / activity,
        activity,
        stationary: stat,
    })
}

/// Pauli rates of the undriven thermometer: state 0 is `|e⟩`, state 1 is `|g⟩`.
pub fn thermometer_pauli_rates(gamma: f64, nbar: f64) -> Result<DMatrix<f64>> {
    if gamma <= 0.0 || nbar < 0.0 {
        return Err(Error::InvalidParameter(format!("gamma {gamma}, nbar {nbar}")));
    }
    Ok(DMatrix::from_row_slice(2, 2, &[0.0, gamma * nbar, gamma * (nbar + 1.0), 0.0]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, ops};
    use crate::model::{
        coupled_qubits, qubit_thermometer, resonant_fluorescence, CoupledQubitParams, InitialState,
        JumpChannel, ModelPoint,
    };
    use approx::assert_relative_eq;

    fn structure(model: &LindbladModel) -> RenewalStructure {
        check_renewal(model).unwrap().into_result().unwrap()
    }

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

    #[test]
    fn rank_one_factorization_of_decay() {
        let s = structure(&pure_decay(2.0));
        let ch = &s.channels()[0];
        assert_relative_eq!(ch.coefficient, 2.0_f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(ch.post_jump[1].norm(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(ch.pre_jump[0].norm(), 1.0, epsilon = 1e-12);
        let trace_sq = (&ch.reset * &ch.reset).trace().re;
        assert_relative_eq!(trace_sq, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn sigma_x_and_coupled_qubits_are_not_renewal() {
        let m = LindbladModel::new("x", 2, &["t"], vec![1.0], InitialState::SteadyState, |_| {
            Ok(ModelPoint {
                hamiltonian: CMatrix::zeros(2, 2),
                channels: vec![JumpChannel::monitored("x", ops::sigma_x())],
            })
        })
        .unwrap();
        assert!(!check_renewal(&m).unwrap().is_renewal());
        let cq = coupled_qubits(CoupledQubitParams::default()).unwrap();
        match check_renewal(&cq).unwrap() {
            RenewalVerdict::NotRenewal { rank_ratio, .. } => assert_relative_eq!(rank_ratio, 1.0, epsilon = 1e-12),
            _ => panic!("coupled qubits should not be renewal"),
        }
        assert!(check_renewal(&cq).unwrap().into_result().is_err());
    }

    #[test]
    fn thermometer_is_renewal() {
        assert!(check_renewal(&qubit_thermometer(1.0, 1.0, 1.0, 1.5).unwrap()).unwrap().is_renewal());
    }

    #[test]
    fn undriven_thermometer_waiting_times() {
        let s = structure(&qubit_thermometer(1.0, 0.0, 1.0, 1.5).unwrap());
        let (plus, minus) = (s.channel_index("plus").unwrap(), s.channel_index("minus").unwrap());
        assert_relative_eq!(wtd(&s, 0.0, plus, minus).unwrap(), 1.5, epsilon = 1e-12);
        for tau in [0.0, 0.3, 1.0, 4.0] {
            assert_relative_eq!(wtd(&s, tau, plus, minus).unwrap(), 1.5 * (-1.5 * tau).exp(), epsilon = 1e-12);
            assert!(wtd(&s, tau, plus, plus).unwrap().abs() < 1e-15);
        }
        let chain = channel_chain(&s).unwrap();
        assert_relative_eq!(chain.transition[(plus, minus)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(chain.transition[(minus, plus)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(chain.stationary[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn amplitude_path_matches_superoperator_path() {
        let s = structure(&qubit_thermometer(0.7, 1.3, 0.9, 1.5).unwrap());
        for tau in [0.0, 0.2, 1.1, 3.7] {
            for k in 0..2 {
                for q in 0..2 {
                    let a = wtd(&s, tau, k, q).unwrap();
                    let b = wtd_amplitude(&s, tau, k, q).unwrap();
                    assert!((a - b).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn chain_routes_agree_and_single_channel_is_trivial() {
        let s = structure(&qubit_thermometer(1.0, 1.0, 1.0, 1.5).unwrap());
        let chain = channel_chain(&s).unwrap();
        let act = chain.activities.clone().unwrap();
        let total: f64 = act.iter().sum();
        for (k, a) in act.iter().enumerate() {
            assert!((a / total - chain.stationary[k]).abs() < 1e-8);
            assert!((chain.transition.column(k).sum() - 1.0).abs() < 1e-10);
        }
        let fl = channel_chain(&structure(&resonant_fluorescence(1.0, 1.0).unwrap())).unwrap();
        assert_relative_eq!(fl.transition[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(fl.stationary[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn fluorescence_matches_closed_form() {
        let s = structure(&resonant_fluorescence(1.0, 1.0).unwrap());
        let r = fisher_renewal(&s, "Omega").unwrap();
        assert_relative_eq!(r.per_jump, 12.0, max_relative = 1e-6);
        assert!(r.channels.abs() < 1e-12);
    }

    #[test]
    fn parameter_free_direction_gives_zero() {
        let flat = LindbladModel::new("flat", 2, &["theta"], vec![0.3], InitialState::SteadyState, |_| {
            Ok(ModelPoint {
                hamiltonian: ops::sigma_x(),
                channels: vec![JumpChannel::monitored("e", ops::sigma_minus())],
            })
        })
        .unwrap();
        let r = fisher_renewal(&structure(&flat), "theta").unwrap();
        assert!(r.per_jump.abs() < 1e-20);
        assert!(r.channels.abs() < 1e-20);
        assert!(r.times_given_channels.abs() < 1e-20);
        assert!(fisher_bound(&structure(&flat), "theta").unwrap().abs() < 1e-20);
    }

    #[test]
    fn decomposition_law_on_driven_thermometer() {
        let s = structure(&qubit_thermometer(1.0, 1.0, 1.0, 1.5).unwrap());
        let r = fisher_renewal(&s, "nbar").unwrap();
        assert_relative_eq!(r.per_jump, r.channels + r.times_given_channels, max_relative = 1e-7);
        assert!(r.channels > 0.0 && r.channels < r.per_jump);
        let bound = fisher_bound(&s, "nbar").unwrap();
        assert!(bound <= r.per_jump + 1e-10 && bound >= r.channels);
    }

    #[test]
    fn classical_two_state_closed_form() {
        let rates = |a: f64| Ok(DMatrix::from_row_slice(2, 2, &[0.0, 3.0, a, 0.0]));
        let f = fisher_classical_me(rates, 2.0, 1e-4).unwrap();
        assert_relative_eq!(f.per_jump, 0.125, epsilon = 1e-10);
        let flat = fisher_classical_me(|_| Ok(DMatrix::from_row_slice(2, 2, &[0.0, 3.0, 2.0, 0.0])), 1.0, 1e-4).unwrap();
        assert_eq!(flat.per_jump, 0.0);
        assert_eq!(flat.channels, 0.0);
        assert_eq!(flat.times_given_channels, 0.0);
    }

    #[test]
    fn classical_flags_singular_rates() {
        let rates = |a: f64| Ok(DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, a - 1.0, 1.0, 1.0, 0.0]));
        assert!(matches!(
            fisher_classical_me(rates, 1.0, 1e-4),
            Err(Error::InfiniteInformation(_)) | Err(Error::InvalidParameter(_))
        ));
        let reducible = |_a: f64| Ok(DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 0.0]));
        assert!(fisher_classical_me(reducible, 1.0, 1e-4).is_err());
    }

    /// One-level Poisson clicker: exponential waiting times of rate γ.
    fn poisson(gamma: f64) -> LindbladModel {
        LindbladModel::new(
            "poisson",
            1,
            &["gamma"],
            vec![gamma],
            InitialState::Fixed(CMatrix::identity(1, 1)),
            |t| {
                Ok(ModelPoint {
                    hamiltonian: CMatrix::zeros(1, 1),
                    channels: vec![JumpChannel::monitored("click", CMatrix::identity(1, 1) * c(t[0].sqrt()))],
                })
            },
        )
        .unwrap()
    }

    #[test]
    fn sample_mean_of_exponential_waiting_times_is_efficient() {
        let s = structure(&poisson(1.7));
        let r = sample_mean_fisher(&s, "gamma").unwrap();
        assert_relative_eq!(r.per_jump, 1.0 / 1.7_f64.powi(2), max_relative = 1e-9);
        assert!(r.covariance_sum.abs() < 1e-14);
        let full = fisher_renewal(&s, "gamma").unwrap();
        assert_relative_eq!(full.per_jump, r.per_jump, max_relative = 1e-8);
    }

    #[test]
    fn dark_subspace_is_rejected() {
        // Undriven decay: |g⟩ never leaves, so no second jump ever comes.
        let s = structure(&pure_decay(1.0));
        assert!(channel_chain(&s).is_err());
        assert!(fisher_renewal(&s, "gamma").is_err());
    }
}
