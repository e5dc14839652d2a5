//! Dense complex linear algebra and superoperator construction.
//!
//! Density matrices are vectorized by column stacking: entry `(i, j)` of a
//! `d x d` matrix lands at position `j * d + i` of the vector. With this
//! convention `vec(A X B) = (B^T ⊗ A) vec(X)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const I: C64 = C64::new(0.0, 1.0);

/// Tolerances for structural checks (Hermiticity, trace, positivity) and
/// for propagation identities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub structural: f64,
    pub propagation: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            structural: 1e-10,
            propagation: 1e-9,
        }
    }
}

pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

pub fn identity(d: usize) -> CMatrix {
    CMatrix::identity(d, d)
}

pub fn dagger(m: &CMatrix) -> CMatrix {
    m.adjoint()
}

pub fn trace(m: &CMatrix) -> C64 {
    m.trace()
}

pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b - b * a
}

pub fn anticommutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b + b * a
}

/// Largest entrywise deviation `|m - m^†|`.
pub fn hermiticity_deviation(m: &CMatrix) -> f64 {
    let adj = m.adjoint();
    m.iter()
        .zip(adj.iter())
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max)
}

pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * c(0.5)
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn ensure_square(m: &CMatrix) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(m.nrows())
}

pub fn ensure_hermitian(m: &CMatrix, what: &str, tol: f64) -> Result<()> {
    ensure_square(m)?;
    let deviation = hermiticity_deviation(m);
    if deviation > tol {
        return Err(Error::NotHermitian {
            what: what.to_string(),
            deviation,
        });
    }
    Ok(())
}

/// Real eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let eig = SymmetricEigen::new(hermitian_part(m));
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    vals
}

/// Eigenvalues of a general square matrix from its complex Schur form.
///
/// The QR iteration is capped and its deflation threshold relaxed step by
/// step: at machine precision it can crawl for minutes on strongly
/// degenerate spectra, which no-jump generators of symmetric models have.
pub fn schur_eigenvalues(m: &CMatrix) -> Vec<C64> {
    let n = m.nrows();
    for eps in [1e-14, 1e-12, 1e-10] {
        if let Some(schur) = m.clone().try_schur(eps, 200 * n.max(1)) {
            let (_, t) = schur.unpack();
            return (0..n).map(|i| t[(i, i)]).collect();
        }
    }
    let (_, t) = m.clone().schur().unpack();
    (0..n).map(|i| t[(i, i)]).collect()
}

/// Checks Hermiticity, unit trace and positivity of a density matrix.
pub fn validate_density(rho: &CMatrix, tol: f64) -> Result<()> {
    ensure_hermitian(rho, "density matrix", tol)?;
    let tr = trace(rho);
    if (tr - c(1.0)).norm() > tol {
        return Err(Error::InvalidState(format!("trace {tr} differs from 1")));
    }
    let min = hermitian_eigenvalues(rho).first().copied().unwrap_or(0.0);
    if min < -tol {
        return Err(Error::InvalidState(format!("negative eigenvalue {min:e}")));
    }
    Ok(())
}

/// Projector `|ψ⟩⟨ψ|` of a normalized copy of `psi`.
pub fn projector(psi: &CVector) -> CMatrix {
    let n = psi.norm();
    let v = psi / c(n);
    &v * v.adjoint()
}

/// Column-stacking vectorization.
pub fn vectorize(m: &CMatrix) -> Result<CVector> {
    ensure_square(m)?;
    Ok(CVector::from_column_slice(m.as_slice()))
}

/// Inverse of [`vectorize`]; the vector length must be a perfect square.
pub fn devectorize(v: &CVector) -> Result<CMatrix> {
    let d = (v.len() as f64).sqrt().round() as usize;
    if d * d != v.len() {
        return Err(Error::DimensionMismatch {
            expected: d * d,
            found: v.len(),
        });
    }
    Ok(CMatrix::from_column_slice(d, d, v.as_slice()))
}

/// Linear map on column-vectorized `d x d` operators.
#[derive(Debug, Clone, PartialEq)]
pub struct Superoperator {
    dim: usize,
    matrix: CMatrix,
}

impl Superoperator {
    pub fn from_matrix(dim: usize, matrix: CMatrix) -> Result<Self> {
        if matrix.nrows() != dim * dim || matrix.ncols() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: matrix.nrows(),
            });
        }
        Ok(Self { dim, matrix })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            matrix: CMatrix::zeros(dim * dim, dim * dim),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            matrix: CMatrix::identity(dim * dim, dim * dim),
        }
    }

    /// The map `X ↦ A X B`.
    pub fn sandwich(a: &CMatrix, b: &CMatrix) -> Self {
        let dim = a.nrows();
        Self {
            dim,
            matrix: b.transpose().kronecker(a),
        }
    }

    /// The map `X ↦ L X L^†`.
    pub fn conjugation(l: &CMatrix) -> Self {
        Self::sandwich(l, &l.adjoint())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        let v = CVector::from_column_slice(rho.as_slice());
        let out = &self.matrix * v;
        CMatrix::from_column_slice(self.dim, self.dim, out.as_slice())
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Superoperator) -> Superoperator {
        Superoperator {
            dim: self.dim,
            matrix: &self.matrix * &other.matrix,
        }
    }

    pub fn add(&self, other: &Superoperator) -> Superoperator {
        Superoperator {
            dim: self.dim,
            matrix: &self.matrix + &other.matrix,
        }
    }

    pub fn sub(&self, other: &Superoperator) -> Superoperator {
        Superoperator {
            dim: self.dim,
            matrix: &self.matrix - &other.matrix,
        }
    }

    pub fn scale(&self, s: f64) -> Superoperator {
        Superoperator {
            dim: self.dim,
            matrix: &self.matrix * c(s),
        }
    }

    /// Row `vec(1)^† S`: the functional `X ↦ tr(S X)`.
    pub fn trace_row(&self) -> CVector {
        let d = self.dim;
        let mut row = CVector::zeros(d * d);
        for col in 0..d * d {
            let mut acc = C64::new(0.0, 0.0);
            for i in 0..d {
                acc += self.matrix[(i * d + i, col)];
            }
            row[col] = acc;
        }
        row
    }

    /// Largest entry of the trace row; zero for a trace-preserving map.
    pub fn trace_defect(&self) -> f64 {
        self.trace_row().iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_trace_preserving(&self, tol: f64) -> bool {
        self.trace_defect() <= tol
    }

    /// Eigenvalues of the `d² x d²` matrix (Schur form diagonal).
    pub fn eigenvalues(&self) -> Vec<C64> {
        schur_eigenvalues(&self.matrix)
    }

    pub fn inverse(&self) -> Option<Superoperator> {
        self.matrix.clone().try_inverse().map(|matrix| Superoperator {
            dim: self.dim,
            matrix,
        })
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.matrix)
    }
}

/// `ρ ↦ L ρ L^† - ½{L^†L, ρ}`.
pub fn dissipator(l: &CMatrix) -> Superoperator {
    let d = l.nrows();
    let id = identity(d);
    let ldl = l.adjoint() * l;
    let jump = Superoperator::conjugation(l);
    let left = Superoperator::sandwich(&ldl, &id);
    let right = Superoperator::sandwich(&id, &ldl);
    jump.sub(&left.add(&right).scale(0.5))
}

/// `ρ ↦ -i[H, ρ]`.
pub fn hamiltonian_part(h: &CMatrix) -> Superoperator {
    let d = h.nrows();
    let id = identity(d);
    let left = Superoperator::sandwich(h, &id);
    let right = Superoperator::sandwich(&id, h);
    let m = (left.matrix - right.matrix) * (-I);
    Superoperator { dim: d, matrix: m }
}

/// Jump superoperator `ρ ↦ η L ρ L^†`.
pub fn jump_superoperator(l: &CMatrix, efficiency: f64) -> Superoperator {
    Superoperator::conjugation(l).scale(efficiency)
}

/// Liouvillian `-i[H,ρ] + Σ_k D[L_k]ρ`; rates are absorbed into the `L_k`.
pub fn build_liouvillian(h: &CMatrix, jumps: &[CMatrix], tol: f64) -> Result<Superoperator> {
    let d = ensure_square(h)?;
    ensure_hermitian(h, "Hamiltonian", tol)?;
    let mut total = hamiltonian_part(h);
    for l in jumps {
        let dl = ensure_square(l)?;
        if dl != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: dl,
            });
        }
        total = total.add(&dissipator(l));
    }
    Ok(total)
}

/// `ℒ₀ = ℒ - Σ_k 𝒥_k` over the supplied (monitored) jump superoperators.
pub fn nojump_generator(liouvillian: &Superoperator, monitored: &[Superoperator]) -> Superoperator {
    monitored
        .iter()
        .fold(liouvillian.clone(), |acc, j| acc.sub(j))
}

/// Non-Hermitian effective Hamiltonian `H - (i/2) Σ_k L_k^† L_k`.
pub fn effective_hamiltonian(h: &CMatrix, jumps: &[CMatrix]) -> CMatrix {
    let mut he = h.clone();
    for l in jumps {
        he -= (l.adjoint() * l) * (I * 0.5);
    }
    he
}

/// Matrix exponential `e^{G t}` of a superoperator generator.
pub fn propagator(generator: &Superoperator, t: f64) -> Result<Superoperator> {
    if t < 0.0 {
        return Err(Error::NegativeTime(t));
    }
    if t == 0.0 {
        return Ok(Superoperator::identity(generator.dim));
    }
    Ok(Superoperator {
        dim: generator.dim,
        matrix: (&generator.matrix * c(t)).exp(),
    })
}

/// `e^{A t}` for a plain square matrix.
pub fn expm(a: &CMatrix, t: f64) -> CMatrix {
    if t == 0.0 {
        return identity(a.nrows());
    }
    (a * c(t)).exp()
}

/// Unique steady state of a trace-preserving Liouvillian.
///
/// The zero eigenvalue is located from the Schur spectrum; more than one
/// eigenvalue below `1e-9` in modulus is reported as an ambiguity. The null
/// vector itself comes from the smallest singular triple, then Hermitized
/// and normalized.
pub fn steady_state(l: &Superoperator) -> Result<CMatrix> {
    const NULL_THRESHOLD: f64 = 1e-9;
    let tol = Tolerances::default();
    if !l.is_trace_preserving(1e-8) {
        return Err(Error::NoSteadyState(format!(
            "generator is not trace preserving (defect {:.3e})",
            l.trace_defect()
        )));
    }
    let eigen = l.eigenvalues();
    let count = eigen.iter().filter(|z| z.norm() < NULL_THRESHOLD).count();
    if count > 1 {
        return Err(Error::AmbiguousSteadyState {
            count,
            threshold: NULL_THRESHOLD,
        });
    }
    let svd = l.matrix.clone().svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::NoSteadyState("SVD failed".into()))?;
    let (idx, smin) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, s)| (i, *s))
        .ok_or_else(|| Error::NoSteadyState("empty generator".into()))?;
    if smin > 1e-6 * l.max_abs().max(1.0) {
        return Err(Error::NoSteadyState(format!(
            "smallest singular value {smin:.3e}"
        )));
    }
    let null: CVector = v_t.row(idx).adjoint();
    let rho = devectorize(&null)?;
    let tr = trace(&rho);
    if tr.norm() < 1e-14 {
        return Err(Error::NoSteadyState("null vector is traceless".into()));
    }
    let rho = hermitian_part(&(rho / tr));
    let residual = max_abs(&l.apply(&rho));
    if residual > tol.propagation {
        return Err(Error::NoSteadyState(format!("residual {residual:.3e}")));
    }
    validate_density(&rho, tol.structural.max(1e-9))?;
    Ok(rho)
}

/// `f(A)` for Hermitian `A`, applied to eigenvalues in the eigenbasis.
///
/// Eigenvalues within `1e-12` of zero are passed to `f` as exactly zero so
/// that functions with a removable singularity there (e.g. `sin(c√x)/√x`)
/// can return their limit.
pub fn operator_function<F>(a: &CMatrix, f: F) -> Result<CMatrix>
where
    F: Fn(f64) -> C64,
{
    ensure_hermitian(a, "operator-function argument", 1e-10)?;
    let eig = SymmetricEigen::new(hermitian_part(a));
    let vecs = eig.eigenvectors;
    let n = a.nrows();
    let mut diag = CMatrix::zeros(n, n);
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        let x = if lam.abs() < 1e-12 { 0.0 } else { lam };
        diag[(i, i)] = f(x);
    }
    Ok(&vecs * diag * vecs.adjoint())
}

/// Pauli and ladder operators used by the built-in models.
pub mod ops {
    use super::*;

    /// Qubit basis ordering: index 0 = |e⟩, index 1 = |g⟩.
    pub fn sigma_z() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[c(1.0), c(0.0), c(0.0), c(-1.0)])
    }

    pub fn sigma_x() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)])
    }

    /// `σ₊ = |e⟩⟨g|`.
    pub fn sigma_plus() -> CMatrix {
        CMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(0.0), c(0.0)])
    }

    /// `σ₋ = |g⟩⟨e|`.
    pub fn sigma_minus() -> CMatrix {
        sigma_plus().transpose()
    }

    pub fn excited() -> CVector {
        CVector::from_column_slice(&[c(1.0), c(0.0)])
    }

    pub fn ground() -> CVector {
        CVector::from_column_slice(&[c(0.0), c(1.0)])
    }

    /// Truncated annihilation operator on `n` Fock levels.
    pub fn annihilation(n: usize) -> CMatrix {
        let mut a = CMatrix::zeros(n, n);
        for k in 1..n {
            a[(k - 1, k)] = c((k as f64).sqrt());
        }
        a
    }

    pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
        a.kronecker(b)
    }
}

#[cfg(test)]
mod tests {
    use super::ops::*;
    use super::*;
    use approx::assert_relative_eq;

    fn random_density(d: usize, seed: u64) -> CMatrix {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = CMatrix::from_fn(d, d, |_, _| {
            C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        let rho = &g * g.adjoint();
        let tr = trace(&rho);
        rho / tr
    }

    #[test]
    fn vectorize_identity_and_basis_element() {
        let v = vectorize(&identity(2)).unwrap();
        assert_eq!(v.as_slice(), &[c(1.0), c(0.0), c(0.0), c(1.0)]);
        assert_eq!(devectorize(&v).unwrap(), identity(2));

        let zero = CMatrix::zeros(3, 3);
        assert!(vectorize(&zero).unwrap().iter().all(|z| z.norm() == 0.0));

        // |0⟩⟨1| sits at row 0, column 1 → index 1 * 2 + 0 = 2.
        let mut e01 = CMatrix::zeros(2, 2);
        e01[(0, 1)] = c(1.0);
        let v = vectorize(&e01).unwrap();
        let nonzero: Vec<usize> = (0..4).filter(|&i| v[i].norm() > 0.0).collect();
        assert_eq!(nonzero, vec![2]);
    }

    #[test]
    fn vectorize_rejects_non_square() {
        let m = CMatrix::zeros(2, 3);
        assert!(matches!(vectorize(&m), Err(Error::NotSquare { .. })));
    }

    #[test]
    fn sandwich_matches_direct_product() {
        let a = random_density(3, 1) * C64::new(0.3, 1.1);
        let b = random_density(3, 2);
        let x = random_density(3, 3);
        let s = Superoperator::sandwich(&a, &b);
        let direct = &a * &x * &b;
        assert!(max_abs(&(s.apply(&x) - direct)) < 1e-14);
    }

    #[test]
    fn liouvillian_pure_decay() {
        let gamma = 0.7_f64;
        let l = sigma_minus() * c(gamma.sqrt());
        let lv = build_liouvillian(&CMatrix::zeros(2, 2), &[l], 1e-10).unwrap();
        let rho = projector(&excited());
        let out = lv.apply(&rho);
        let expected = (projector(&ground()) - projector(&excited())) * c(gamma);
        assert!(max_abs(&(out - expected)) < 1e-12);
    }

    #[test]
    fn liouvillian_matches_entrywise_formula() {
        let h = hermitian_part(&(random_density(3, 4) * C64::new(1.0, 0.5)));
        let l1 = random_density(3, 5) * C64::new(0.2, -0.7);
        let l2 = random_density(3, 6) * C64::new(1.3, 0.0);
        let lv = build_liouvillian(&h, &[l1.clone(), l2.clone()], 1e-10).unwrap();
        let rho = random_density(3, 7);
        let mut expected = commutator(&h, &rho) * (-I);
        for l in [&l1, &l2] {
            let ldl = l.adjoint() * l;
            expected += l * &rho * l.adjoint() - anticommutator(&ldl, &rho) * c(0.5);
        }
        assert!(max_abs(&(lv.apply(&rho) - expected)) < 1e-12);
    }

    #[test]
    fn liouvillian_errors() {
        let h = sigma_plus();
        assert!(matches!(
            build_liouvillian(&h, &[], 1e-10),
            Err(Error::NotHermitian { .. })
        ));
        let l = CMatrix::zeros(3, 3);
        assert!(matches!(
            build_liouvillian(&sigma_z(), &[l], 1e-10),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn eigenprojector_is_stationary_under_unitary() {
        let h = sigma_z() * c(0.8);
        let lv = build_liouvillian(&h, &[], 1e-10).unwrap();
        assert!(max_abs(&lv.apply(&projector(&excited()))) < 1e-15);
    }

    #[test]
    fn propagator_basics() {
        let g = Superoperator::from_matrix(
            1,
            CMatrix::from_row_slice(1, 1, &[c(-1.0)]),
        )
        .unwrap();
        let p = propagator(&g, 0.0).unwrap();
        assert_eq!(p.matrix()[(0, 0)], c(1.0));
        assert!(matches!(propagator(&g, -1.0), Err(Error::NegativeTime(_))));

        let diag = CMatrix::from_row_slice(2, 2, &[c(-1.0), c(0.0), c(0.0), c(-2.0)]);
        let e = expm(&diag, 1.0);
        assert_relative_eq!(e[(0, 0)].re, (-1.0f64).exp(), epsilon = 1e-14);
        assert_relative_eq!(e[(1, 1)].re, (-2.0f64).exp(), epsilon = 1e-14);
        assert!(e[(0, 1)].norm() < 1e-15);
    }

    #[test]
    fn pure_decay_survival_is_exponential() {
        let gamma = 1.3_f64;
        let l = sigma_minus() * c(gamma.sqrt());
        let lv = build_liouvillian(&CMatrix::zeros(2, 2), std::slice::from_ref(&l), 1e-10).unwrap();
        let l0 = nojump_generator(&lv, &[jump_superoperator(&l, 1.0)]);
        for &t in &[0.1, 0.5, 2.0, 5.0] {
            let s = trace(&propagator(&l0, t).unwrap().apply(&projector(&excited()))).re;
            assert_relative_eq!(s, (-gamma * t).exp(), max_relative = 1e-12);
        }
    }

    #[test]
    fn semigroup_property() {
        let h = hermitian_part(&(random_density(3, 10) * c(2.0)));
        let l = random_density(3, 11) * C64::new(0.5, 0.5);
        let lv = build_liouvillian(&h, &[l], 1e-10).unwrap();
        let a = propagator(&lv, 0.7).unwrap();
        let b = propagator(&lv, 1.9).unwrap();
        let ab = propagator(&lv, 2.6).unwrap();
        assert!(max_abs(&(a.compose(&b).matrix - ab.matrix)) < 1e-9);
    }

    #[test]
    fn steady_state_of_pure_decay_is_ground() {
        let l = sigma_minus();
        let lv = build_liouvillian(&(sigma_z() * c(0.5)), &[l], 1e-10).unwrap();
        let rho = steady_state(&lv).unwrap();
        assert!(max_abs(&(rho - projector(&ground()))) < 1e-10);
    }

    #[test]
    fn steady_state_detailed_balance() {
        // Pauli chain g ⇄ e with rates γn̄ (up) and γ(n̄+1) (down).
        let (gamma, nbar) = (1.0_f64, 1.5_f64);
        let up = sigma_plus() * c((gamma * nbar).sqrt());
        let down = sigma_minus() * c((gamma * (nbar + 1.0)).sqrt());
        let lv = build_liouvillian(&(sigma_z() * c(0.5)), &[up, down], 1e-10).unwrap();
        let rho = steady_state(&lv).unwrap();
        assert_relative_eq!(rho[(0, 0)].re, nbar / (2.0 * nbar + 1.0), epsilon = 1e-10);
        assert!(rho[(0, 1)].norm() < 1e-10);
    }

    #[test]
    fn steady_state_ambiguous_for_unitary_dynamics() {
        let lv = build_liouvillian(&sigma_x(), &[], 1e-10).unwrap();
        assert!(matches!(
            steady_state(&lv),
            Err(Error::AmbiguousSteadyState { .. })
        ));
    }

    #[test]
    fn operator_function_cases() {
        let d12 = CMatrix::from_row_slice(2, 2, &[c(1.0), c(0.0), c(0.0), c(2.0)]);
        let out = operator_function(&d12, c).unwrap();
        assert!(max_abs(&(out - &d12)) < 1e-14);

        let zero = CMatrix::zeros(3, 3);
        let out = operator_function(&zero, |x| c(x.cos())).unwrap();
        assert!(max_abs(&(out - identity(3))) < 1e-14);

        let d = CMatrix::from_diagonal(&CVector::from_column_slice(&[c(0.0), c(1.0), c(4.0)]));
        let out = operator_function(&d, |x| c(x.sqrt())).unwrap();
        let expected =
            CMatrix::from_diagonal(&CVector::from_column_slice(&[c(0.0), c(1.0), c(2.0)]));
        assert!(max_abs(&(out - expected)) < 1e-14);

        assert!(matches!(
            operator_function(&sigma_plus(), c),
            Err(Error::NotHermitian { .. })
        ));
    }

    #[test]
    fn validate_density_rejects_bad_states() {
        assert!(validate_density(&projector(&excited()), 1e-10).is_ok());
        assert!(validate_density(&(identity(2) * c(0.7)), 1e-10).is_err());
        let neg = CMatrix::from_row_slice(2, 2, &[c(1.2), c(0.0), c(0.0), c(-0.2)]);
        assert!(validate_density(&neg, 1e-10).is_err());
    }

    proptest::proptest! {
        #[test]
        fn vectorize_roundtrip(entries in proptest::collection::vec(-1.0f64..1.0, 18)) {
            let m = CMatrix::from_fn(3, 3, |i, j| C64::new(entries[i * 3 + j], entries[9 + i * 3 + j]));
            let back = devectorize(&vectorize(&m).unwrap()).unwrap();
            proptest::prop_assert_eq!(back, m);
        }

        #[test]
        fn liouvillian_preserves_trace_and_hermiticity(seed in 0u64..500) {
            let h = hermitian_part(&(random_density(3, seed) * c(3.0)));
            let l1 = random_density(3, seed + 1000) * C64::new(0.4, 0.9);
            let l2 = random_density(3, seed + 2000) * C64::new(-1.1, 0.2);
            let lv = build_liouvillian(&h, &[l1, l2], 1e-10).unwrap();
            let rho = random_density(3, seed + 3000);
            proptest::prop_assert!(trace(&lv.apply(&rho)).norm() < 1e-10);
            proptest::prop_assert!(lv.is_trace_preserving(1e-10));
            let evolved = propagator(&lv, 1.5).unwrap().apply(&rho);
            proptest::prop_assert!(hermiticity_deviation(&evolved) < 1e-10);
            proptest::prop_assert!(hermitian_eigenvalues(&evolved)[0] > -1e-8);
        }
    }
}
