use jumpfisher::linalg::{self, c, ops, projector, CMatrix, C64};
use jumpfisher::model::{qubit_thermometer, resonant_fluorescence, InitialState, LindbladModel};
use jumpfisher::parallel::Execution;
use jumpfisher::renewal::{channel_chain, check_renewal};
use jumpfisher::trajectory::{
    sample_channel, sample_waiting_time, simulate_ensemble, simulate_record, GridSpec, RngStream, Stop,
    WtdTable,
};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Non-Hermitian Hamiltonian of the model at its current parameters, built
/// directly from the Hamiltonian and the jump operators.
fn h_eff(model: &LindbladModel) -> (CMatrix, Vec<CMatrix>) {
    let point = model.point_at(model.theta()).unwrap();
    let ops: Vec<CMatrix> = point.channels.iter().map(|ch| ch.operator.clone()).collect();
    let mut h = point.hamiltonian.clone();
    for l in &ops {
        h -= linalg::dagger(l) * l * C64::new(0.0, 0.5);
    }
    (h, ops)
}

/// `‖L_k e^{-i H_e τ} ψ‖²` via a dense matrix exponential.
fn wtd_oracle(h: &CMatrix, ops: &[CMatrix], psi: &linalg::CVector, tau: f64, k: usize) -> f64 {
    let u = (h * C64::new(0.0, -tau)).exp();
    (&ops[k] * (u * psi)).norm_squared()
}

fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

fn ks_exponential(samples: &mut [f64], rate: f64) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let cdf = 1.0 - (-rate * x).exp();
            (cdf - i as f64 / n).abs().max(((i + 1) as f64 / n - cdf).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn decay_from_excited_state_is_exponential() {
    // Without drive, |e⟩ can only emit, so its waiting time is exponential
    // with rate γ(n̄+1).
    let m = qubit_thermometer(1.0, 0.0, 1.0, 0.5).unwrap();
    let table = WtdTable::new(&m, GridSpec::default()).unwrap();
    let rho = projector(&ops::excited());
    let mut rng = RngStream::new(11, 0).rng();
    let mut taus: Vec<f64> = (0..10_000).map(|_| sample_waiting_time(&rho, &table, &mut rng).unwrap()).collect();
    let d = ks_exponential(&mut taus, 1.5);
    // Critical value of the Kolmogorov distribution at p = 0.01.
    assert!(d * (taus.len() as f64).sqrt() < 1.628, "KS statistic {d}");
}

#[test]
fn ground_state_wait_has_mean_inverse_absorption_rate() {
    let (gamma, nbar) = (1.0, 1.5);
    let m = qubit_thermometer(1.0, 0.0, gamma, nbar).unwrap();
    let table = WtdTable::new(&m, GridSpec::default()).unwrap();
    let rho = projector(&ops::ground());
    let mut rng = RngStream::new(5, 0).rng();
    let n = 100_000;
    let taus: Vec<f64> = (0..n).map(|_| sample_waiting_time(&rho, &table, &mut rng).unwrap()).collect();
    let mean = taus.iter().sum::<f64>() / n as f64;
    let expected = 1.0 / (gamma * nbar);
    // Exponential: standard deviation equals the mean.
    let se = expected / (n as f64).sqrt();
    assert!((mean - expected).abs() < 4.0 * se, "mean {mean} vs {expected}");
}

#[test]
fn channel_frequencies_follow_weights() {
    let mut rng = RngStream::new(3, 7).rng();
    let n = 100_000;
    let hits = (0..n).filter(|_| sample_channel(&[0.25, 0.75], &mut rng).unwrap() == 1).count();
    let p = hits as f64 / n as f64;
    let se = (0.75 * 0.25 / n as f64).sqrt();
    assert!((p - 0.75).abs() < 4.0 * se, "frequency {p}");
    assert!(sample_channel(&[0.0, 0.0], &mut rng).is_err());
}

#[test]
fn undriven_thermometer_alternates_channels() {
    let m = qubit_thermometer(1.0, 0.0, 1.0, 1.5).unwrap();
    let recs = simulate_ensemble(&m, GridSpec::default(), Stop::jumps(200), 20, 9, Execution::Sequential).unwrap();
    for r in &recs {
        assert!(r.jumps.windows(2).all(|w| w[0].channel != w[1].channel));
    }
}

#[test]
fn waiting_time_histograms_match_distribution() {
    let m = qubit_thermometer(1.0, 1.0, 1.0, 1.5).unwrap();
    let recs = simulate_ensemble(&m, GridSpec::default(), Stop::jumps(5_000), 20, 21, Execution::default()).unwrap();
    let s = check_renewal(&m).unwrap().into_result().unwrap();
    let (h, ops) = h_eff(&m);
    let edges = [0.0, 0.2, 0.4, 0.7, 1.0, 1.5, 2.0, 3.0, 5.0, 40.0];
    let bins = edges.len() - 1;
    let channels = 2;

    // counts[q][k * bins + b]
    let mut counts = vec![vec![0usize; channels * bins]; channels];
    for r in &recs {
        for w in r.jumps.windows(2) {
            let q = w[0].channel;
            let (tau, k) = (w[1].tau, w[1].channel);
            let b = edges[1..].iter().position(|&e| tau < e).unwrap_or(bins - 1);
            counts[q][k * bins + b] += 1;
        }
    }

    let mut chi2 = 0.0;
    let mut dof = 0;
    for (q, row) in counts.iter().enumerate() {
        let psi = &s.channels()[q].post_jump;
        let total: usize = row.iter().sum();
        let mut mass = 0.0;
        for k in 0..channels {
            for b in 0..bins {
                let p = simpson(|t| wtd_oracle(&h, &ops, psi, t, k), edges[b], edges[b + 1], 400);
                mass += p;
                let expected = p * total as f64;
                let observed = row[k * bins + b] as f64;
                chi2 += (observed - expected).powi(2) / expected;
            }
        }
        assert!((mass - 1.0).abs() < 1e-6, "distribution after channel {q} has mass {mass}");
        dof += channels * bins - 1;
    }
    let p = 1.0 - ChiSquared::new(dof as f64).unwrap().cdf(chi2);
    assert!(p > 1e-3, "chi-square {chi2} on {dof} dof, p = {p}");
}

#[test]
fn activity_converges_to_steady_state_value() {
    let m = qubit_thermometer(1.0, 1.0, 1.0, 1.5).unwrap();
    let s = check_renewal(&m).unwrap().into_result().unwrap();
    let activity = channel_chain(&s).unwrap().total_activity().unwrap();
    let tf = 200.0;
    let recs = simulate_ensemble(&m, GridSpec::default(), Stop::time(tf), 200, 4, Execution::default()).unwrap();
    let rates: Vec<f64> = recs.iter().map(|r| r.len() as f64 / tf).collect();
    let n = rates.len() as f64;
    let mean = rates.iter().sum::<f64>() / n;
    let var = rates.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    assert!((mean - activity).abs() < 4.0 * se, "rate {mean} ± {se} vs activity {activity}");
    for r in &recs {
        assert!((r.duration() - tf).abs() < 1e-9);
    }
}

#[test]
fn conditional_states_stay_normalized() {
    let m = resonant_fluorescence(1.3, 0.7).unwrap();
    let table = WtdTable::new(&m, GridSpec::default()).unwrap();
    let rho0 = m.initial_state_at(m.theta()).unwrap();
    let mut rng = RngStream::new(2, 0).rng();
    let mut log = Vec::new();
    simulate_record(&table, &rho0, Stop::jumps(300), &mut rng, Some(&mut log)).unwrap();
    assert_eq!(log.len(), 301);
    for rho in &log {
        assert!((linalg::trace(rho).re - 1.0).abs() < 1e-9);
        assert!(linalg::hermiticity_deviation(rho) < 1e-12);
        assert!(linalg::hermitian_eigenvalues(rho)[0] > -1e-12);
    }
}

#[test]
fn post_jump_state_of_fluorescence_is_ground() {
    let m = resonant_fluorescence(1.0, 1.0).unwrap();
    let table = WtdTable::new(&m, GridSpec::default()).unwrap();
    let rho0 = projector(&ops::excited());
    let mut rng = RngStream::new(8, 1).rng();
    let mut log = Vec::new();
    simulate_record(&table, &rho0, Stop::jumps(10), &mut rng, Some(&mut log)).unwrap();
    let g = projector(&ops::ground());
    for rho in &log[1..] {
        assert!(linalg::max_abs(&(rho - &g)) < 1e-12);
    }
}

#[test]
fn ensembles_do_not_depend_on_execution() {
    let m = qubit_thermometer(1.0, 1.0, 1.0, 1.5).unwrap();
    let run = |exec| simulate_ensemble(&m, GridSpec::default(), Stop::jumps(50), 64, 77, exec).unwrap();
    let seq = run(Execution::Sequential);
    assert_eq!(seq, run(Execution::Parallel));
    assert_eq!(seq, run(Execution::ParallelWith { threads: 3 }));
    let other = simulate_ensemble(&m, GridSpec::default(), Stop::jumps(50), 64, 78, Execution::Sequential).unwrap();
    assert_ne!(seq, other);
}

#[test]
fn fixed_initial_state_is_used() {
    let m = qubit_thermometer(1.0, 0.0, 1.0, 1.5)
        .unwrap()
        .with_initial_state(InitialState::Fixed(projector(&ops::excited()) * c(1.0)))
        .unwrap();
    let recs = simulate_ensemble(&m, GridSpec::default(), Stop::jumps(1), 50, 1, Execution::Sequential).unwrap();
    // Only emission ("minus", index 1) can fire first from |e⟩.
    assert!(recs.iter().all(|r| r.jumps[0].channel == 1));
}
