//! Second-order mechanical models `M q'' + D q' + K q + Θ (f_nl(q, q') - e(t)) = 0`.
//!
//! Matrices are dense. The nonlinear force is supplied through the
//! [`NonlinearForce`] trait together with its Jacobians, and the external
//! excitation is a sum of cosines, each tied to one base frequency.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nonlinear force value and its partial Jacobians at one state.
#[derive(Debug, Clone)]
pub struct NonlinearEval {
    pub force: DVector<f64>,
    pub d_q: DMatrix<f64>,
    pub d_qdot: DMatrix<f64>,
}

impl NonlinearEval {
    pub fn zeros(n: usize) -> Self {
        Self {
            force: DVector::zeros(n),
            d_q: DMatrix::zeros(n, n),
            d_qdot: DMatrix::zeros(n, n),
        }
    }
}

/// A nonlinear restoring/dissipative force `f_nl(q, q')`.
///
/// Implementations must be pure: the integrator calls them concurrently
/// from several worker threads.
pub trait NonlinearForce: Send + Sync + fmt::Debug {
    fn evaluate(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> NonlinearEval;

    /// Whether the force depends on velocity at all. Lets the integrator
    /// skip the velocity-Jacobian products.
    fn velocity_dependent(&self) -> bool {
        true
    }
}

/// Cubic springs `α δ³` on a set of connections. A connection `(i, None)`
/// ties DOF `i` to ground, `(i, Some(j))` measures `δ = q_j - q_i`.
#[derive(Debug, Clone)]
pub struct CubicSprings {
    pub n: usize,
    pub alpha: f64,
    pub links: Vec<(usize, Option<usize>)>,
}

impl NonlinearForce for CubicSprings {
    fn evaluate(&self, q: &DVector<f64>, _qdot: &DVector<f64>) -> NonlinearEval {
        let mut out = NonlinearEval::zeros(self.n);
        for &(i, other) in &self.links {
            match other {
                None => {
                    let x = q[i];
                    out.force[i] += self.alpha * x * x * x;
                    out.d_q[(i, i)] += 3.0 * self.alpha * x * x;
                }
                Some(j) => {
                    // spring force pulls i towards j with magnitude α δ³
                    let delta = q[j] - q[i];
                    let f = self.alpha * delta * delta * delta;
                    let k = 3.0 * self.alpha * delta * delta;
                    out.force[i] -= f;
                    out.force[j] += f;
                    out.d_q[(i, i)] += k;
                    out.d_q[(i, j)] -= k;
                    out.d_q[(j, i)] -= k;
                    out.d_q[(j, j)] += k;
                }
            }
        }
        out
    }

    fn velocity_dependent(&self) -> bool {
        false
    }
}

/// Single-DOF van der Pol–Duffing nonlinearity `μ q² q' + α q³`.
#[derive(Debug, Clone)]
pub struct VanDerPolForce {
    pub mu: f64,
    pub alpha: f64,
}

impl NonlinearForce for VanDerPolForce {
    fn evaluate(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> NonlinearEval {
        let (x, v) = (q[0], qdot[0]);
        let mut out = NonlinearEval::zeros(1);
        out.force[0] = self.mu * x * x * v + self.alpha * x * x * x;
        out.d_q[(0, 0)] = 2.0 * self.mu * x * v + 3.0 * self.alpha * x * x;
        out.d_qdot[(0, 0)] = self.mu * x * x;
        out
    }
}

/// One cosine excitation `amplitude · cos(ω_frequency · t)`.
///
/// `frequency` is the zero-based index into the base-frequency vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcingTerm {
    pub amplitude: DVector<f64>,
    pub frequency: usize,
}

/// Scalar excitation used by the model builders: amplitude applied at a
/// single DOF and the zero-based base-frequency index it rides on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Excitation {
    pub amplitude: f64,
    pub frequency: usize,
}

impl Excitation {
    pub fn new(amplitude: f64, frequency: usize) -> Self {
        Self {
            amplitude,
            frequency,
        }
    }
}

#[derive(Clone)]
pub struct SecondOrderModel {
    n: usize,
    mass: DMatrix<f64>,
    damping: DMatrix<f64>,
    stiffness: DMatrix<f64>,
    force_distribution: DMatrix<f64>,
    nonlinear: Option<Arc<dyn NonlinearForce>>,
    forcing: Vec<ForcingTerm>,
    mass_factor: Cholesky<f64, Dyn>,
}

impl fmt::Debug for SecondOrderModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SecondOrderModel")
            .field("n", &self.n)
            .field("nonlinear", &self.nonlinear)
            .field("forcing", &self.forcing.len())
            .finish()
    }
}

impl SecondOrderModel {
    /// Linear, unforced model. The mass matrix must be symmetric positive
    /// definite.
    pub fn new(
        mass: DMatrix<f64>,
        damping: DMatrix<f64>,
        stiffness: DMatrix<f64>,
    ) -> Result<Self> {
        let n = mass.nrows();
        if n == 0 {
            return Err(Error::InvalidModel("model needs at least one DOF".into()));
        }
        for (name, m) in [("mass", &mass), ("damping", &damping), ("stiffness", &stiffness)] {
            if m.shape() != (n, n) {
                return Err(Error::DimensionMismatch(format!(
                    "{name} matrix is {}x{}, expected {n}x{n}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        let asym = (&mass - mass.transpose()).amax();
        if asym > 1e-12 * mass.amax().max(1.0) {
            return Err(Error::InvalidModel("mass matrix is not symmetric".into()));
        }
        let mass_factor = Cholesky::new(mass.clone())
            .ok_or_else(|| Error::InvalidModel("mass matrix is not positive definite".into()))?;
        Ok(Self {
            n,
            mass,
            damping,
            stiffness,
            force_distribution: DMatrix::identity(n, n),
            nonlinear: None,
            forcing: Vec::new(),
            mass_factor,
        })
    }

    pub fn with_nonlinear(mut self, force: Arc<dyn NonlinearForce>) -> Self {
        self.nonlinear = Some(force);
        self
    }

    pub fn with_force_distribution(mut self, theta: DMatrix<f64>) -> Result<Self> {
        if theta.shape() != (self.n, self.n) {
            return Err(Error::DimensionMismatch(
                "force distribution must be n x n".into(),
            ));
        }
        self.force_distribution = theta;
        Ok(self)
    }

    pub fn with_forcing(mut self, term: ForcingTerm) -> Result<Self> {
        if term.amplitude.len() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "forcing amplitude has length {}, model has {} DOFs",
                term.amplitude.len(),
                self.n
            )));
        }
        self.forcing.push(term);
        Ok(self)
    }

    pub fn dofs(&self) -> usize {
        self.n
    }

    pub fn mass(&self) -> &DMatrix<f64> {
        &self.mass
    }

    pub fn damping(&self) -> &DMatrix<f64> {
        &self.damping
    }

    pub fn stiffness(&self) -> &DMatrix<f64> {
        &self.stiffness
    }

    pub fn force_distribution(&self) -> &DMatrix<f64> {
        &self.force_distribution
    }

    pub fn forcing(&self) -> &[ForcingTerm] {
        &self.forcing
    }

    pub fn is_linear(&self) -> bool {
        self.nonlinear.is_none()
    }

    pub fn velocity_dependent(&self) -> bool {
        self.nonlinear
            .as_ref()
            .is_some_and(|f| f.velocity_dependent())
    }

    /// Highest base-frequency index used by the forcing plus one, i.e. the
    /// smallest admissible `e`.
    pub fn forced_frequencies(&self) -> usize {
        self.forcing
            .iter()
            .map(|t| t.frequency + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn nonlinear_force(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> NonlinearEval {
        match &self.nonlinear {
            Some(f) => f.evaluate(q, qdot),
            None => NonlinearEval::zeros(self.n),
        }
    }

    /// External excitation `e` for the given phase of each base frequency
    /// (before the force distribution is applied).
    pub fn excitation(&self, phases: &[f64]) -> DVector<f64> {
        let mut e = DVector::zeros(self.n);
        for term in &self.forcing {
            e.axpy(phases[term.frequency].cos(), &term.amplitude, 1.0);
        }
        e
    }

    /// Derivative of the excitation with respect to the phase of base
    /// frequency `index`.
    pub fn excitation_phase_derivative(&self, phases: &[f64], index: usize) -> DVector<f64> {
        let mut e = DVector::zeros(self.n);
        for term in self.forcing.iter().filter(|t| t.frequency == index) {
            e.axpy(-phases[index].sin(), &term.amplitude, 1.0);
        }
        e
    }

    pub fn solve_mass(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.mass_factor.solve(rhs)
    }

    /// First-order right-hand side `x' = f(x, t)` with `x = [q; q']` and
    /// phases `ω_i t` for the excitation.
    pub fn evaluate_rhs(&self, x: &DVector<f64>, t: f64, omega: &[f64]) -> Result<DVector<f64>> {
        let n = self.n;
        if x.len() != 2 * n {
            return Err(Error::DimensionMismatch(format!(
                "state has length {}, expected {}",
                x.len(),
                2 * n
            )));
        }
        if omega.len() < self.forced_frequencies() {
            return Err(Error::DimensionMismatch(
                "not enough base frequencies for the forcing".into(),
            ));
        }
        let q = x.rows(0, n).into_owned();
        let v = x.rows(n, n).into_owned();
        let phases: Vec<f64> = omega.iter().map(|w| w * t).collect();
        let nl = self.nonlinear_force(&q, &v);
        let load = &self.force_distribution * (self.excitation(&phases) - nl.force)
            - &self.damping * &v
            - &self.stiffness * &q;
        let acc = self.solve_mass(&load);
        let mut out = DVector::zeros(2 * n);
        out.rows_mut(0, n).copy_from(&v);
        out.rows_mut(n, n).copy_from(&acc);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotFinite("model right-hand side".into()));
        }
        Ok(out)
    }

    /// Worst relative deviation between the analytic nonlinear Jacobians and
    /// central finite differences over the given `(q, q')` points.
    pub fn check_nonlinear_jacobian(&self, points: &[(DVector<f64>, DVector<f64>)]) -> f64 {
        let n = self.n;
        let mut worst: f64 = 0.0;
        for (q, v) in points {
            let analytic = self.nonlinear_force(q, v);
            let mut fd_q = DMatrix::zeros(n, n);
            let mut fd_v = DMatrix::zeros(n, n);
            for j in 0..n {
                let h = 1e-6 * q[j].abs().max(1.0);
                let (mut qp, mut qm) = (q.clone(), q.clone());
                qp[j] += h;
                qm[j] -= h;
                let col = (self.nonlinear_force(&qp, v).force
                    - self.nonlinear_force(&qm, v).force)
                    / (2.0 * h);
                fd_q.set_column(j, &col);
                let h = 1e-6 * v[j].abs().max(1.0);
                let (mut vp, mut vm) = (v.clone(), v.clone());
                vp[j] += h;
                vm[j] -= h;
                let col = (self.nonlinear_force(q, &vp).force
                    - self.nonlinear_force(q, &vm).force)
                    / (2.0 * h);
                fd_v.set_column(j, &col);
            }
            for (an, fd) in [(&analytic.d_q, &fd_q), (&analytic.d_qdot, &fd_v)] {
                let scale = an.norm().max(1e-3);
                worst = worst.max((an - fd).norm() / scale);
            }
        }
        worst
    }
}

/// Base frequencies `[ω_1, …, ω_d]`; the first `forced` of them are the
/// excitation frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyVector {
    omega: Vec<f64>,
    forced: usize,
}

impl FrequencyVector {
    pub fn new(omega: Vec<f64>, forced: usize) -> Result<Self> {
        if omega.is_empty() {
            return Err(Error::Config("at least one base frequency is required".into()));
        }
        if forced > omega.len() {
            return Err(Error::Config(format!(
                "{forced} forced frequencies but only {} base frequencies",
                omega.len()
            )));
        }
        let f = Self { omega, forced };
        f.check_base()?;
        Ok(f)
    }

    fn check_base(&self) -> Result<()> {
        if !(self.omega[0] > 0.0) || !self.omega.iter().all(|w| w.is_finite()) {
            return Err(Error::Config(format!(
                "base frequency must be positive and finite, got {:?}",
                self.omega
            )));
        }
        Ok(())
    }

    /// Torus dimension `d`.
    pub fn dim(&self) -> usize {
        self.omega.len()
    }

    /// Number of excitation frequencies `e`.
    pub fn forced(&self) -> usize {
        self.forced
    }

    pub fn base(&self) -> f64 {
        self.omega[0]
    }

    pub fn values(&self) -> &[f64] {
        &self.omega
    }

    pub fn get(&self, i: usize) -> f64 {
        self.omega[i]
    }

    pub fn set(&mut self, i: usize, value: f64) -> Result<()> {
        let old = self.omega[i];
        self.omega[i] = value;
        if let Err(e) = self.check_base() {
            self.omega[i] = old;
            return Err(e);
        }
        Ok(())
    }

    /// Rotation numbers `ρ_j = ω_j / ω_1`, j = 2…d.
    pub fn rho(&self) -> Vec<f64> {
        self.omega[1..].iter().map(|w| w / self.omega[0]).collect()
    }

    /// Base period `T_1 = 2π / ω_1`.
    pub fn period(&self) -> f64 {
        std::f64::consts::TAU / self.omega[0]
    }
}

fn scalar_forcing(n: usize, dof: usize, list: &[Excitation]) -> Vec<ForcingTerm> {
    list.iter()
        .map(|x| {
            let mut amplitude = DVector::zeros(n);
            amplitude[dof] = x.amplitude;
            ForcingTerm {
                amplitude,
                frequency: x.frequency,
            }
        })
        .collect()
}

/// Single-DOF Duffing oscillator `q'' + c q' + k q + α q³ = Σ f cos(ω t)`.
pub fn make_duffing(k: f64, c: f64, alpha: f64, forcing: &[Excitation]) -> Result<SecondOrderModel> {
    if !(k > 0.0) {
        return Err(Error::InvalidModel(format!("stiffness must be positive, got {k}")));
    }
    if !(c >= 0.0) {
        return Err(Error::InvalidModel(format!("damping must be non-negative, got {c}")));
    }
    let mut model = SecondOrderModel::new(
        DMatrix::identity(1, 1),
        DMatrix::from_element(1, 1, c),
        DMatrix::from_element(1, 1, k),
    )?;
    if alpha != 0.0 {
        model = model.with_nonlinear(Arc::new(CubicSprings {
            n: 1,
            alpha,
            links: vec![(0, None)],
        }));
    }
    for term in scalar_forcing(1, 0, forcing) {
        model = model.with_forcing(term)?;
    }
    Ok(model)
}

/// Fixed-fixed chain of `n` unit masses with linear springs `k`, cubic
/// springs `α` on the same links and Rayleigh damping `D = c K`. Forcing
/// acts on DOF `forced_dof`, or the middle node when `None`.
pub fn make_cubic_chain(
    n: usize,
    k: f64,
    c: f64,
    alpha: f64,
    forcing: &[Excitation],
    forced_dof: Option<usize>,
) -> Result<SecondOrderModel> {
    if n == 0 {
        return Err(Error::InvalidModel("chain needs at least one mass".into()));
    }
    if !(k > 0.0) {
        return Err(Error::InvalidModel(format!("stiffness must be positive, got {k}")));
    }
    let dof = forced_dof.unwrap_or(n / 2);
    if dof >= n {
        return Err(Error::InvalidModel(format!("forced DOF {dof} outside chain of {n}")));
    }
    let mut links = vec![(0, None)];
    links.extend((0..n - 1).map(|i| (i, Some(i + 1))));
    links.push((n - 1, None));

    let mut stiff = DMatrix::zeros(n, n);
    for &(i, other) in &links {
        stiff[(i, i)] += k;
        if let Some(j) = other {
            stiff[(j, j)] += k;
            stiff[(i, j)] -= k;
            stiff[(j, i)] -= k;
        }
    }
    let mut model = SecondOrderModel::new(DMatrix::identity(n, n), &stiff * c, stiff)?;
    if alpha != 0.0 {
        model = model.with_nonlinear(Arc::new(CubicSprings { n, alpha, links }));
    }
    for term in scalar_forcing(n, dof, forcing) {
        model = model.with_forcing(term)?;
    }
    Ok(model)
}

/// Forced van der Pol–Duffing oscillator
/// `q'' - μ (1 - q²) q' + k q + α q³ = Σ f cos(ω t)`.
///
/// Self-excited, so it carries an intrinsic frequency next to the forcing
/// ones; used for tori with released frequencies.
pub fn make_van_der_pol(mu: f64, k: f64, alpha: f64, forcing: &[Excitation]) -> Result<SecondOrderModel> {
    if !(k > 0.0) {
        return Err(Error::InvalidModel(format!("stiffness must be positive, got {k}")));
    }
    let mut model = SecondOrderModel::new(
        DMatrix::identity(1, 1),
        DMatrix::from_element(1, 1, -mu),
        DMatrix::from_element(1, 1, k),
    )?
    .with_nonlinear(Arc::new(VanDerPolForce { mu, alpha }));
    for term in scalar_forcing(1, 0, forcing) {
        model = model.with_forcing(term)?;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    macro_rules! assert_close {
        ($a:expr, $b:expr, $tol:expr) => {{
            let (a, b): (f64, f64) = ($a, $b);
            assert!((a - b).abs() <= $tol, "{} vs {} (tol {})", a, b, $tol);
        }};
    }

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    #[test]
    fn linear_duffing_has_no_nonlinear_force() {
        let m = make_duffing(1.0, 0.0, 0.0, &[]).unwrap();
        assert!(m.is_linear());
        assert_eq!(m.nonlinear_force(&v(&[2.0]), &v(&[0.0])).force[0], 0.0);
    }

    #[test]
    fn duffing_force_and_jacobian() {
        let m = make_duffing(1.0, 0.05, 1.0, &[]).unwrap();
        let nl = m.nonlinear_force(&v(&[2.0]), &v(&[5.0]));
        assert_eq!(nl.force[0], 8.0);
        assert_eq!(nl.d_q[(0, 0)], 12.0);
        assert_eq!(nl.d_qdot[(0, 0)], 0.0);
        let err = m.check_nonlinear_jacobian(&[(v(&[0.7]), v(&[0.0]))]);
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(make_duffing(0.0, 0.1, 1.0, &[]).is_err());
        assert!(make_duffing(-1.0, 0.1, 1.0, &[]).is_err());
        assert!(make_cubic_chain(0, 1.0, 0.0, 0.0, &[], None).is_err());
        let bad = SecondOrderModel::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]),
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
        );
        assert!(matches!(bad, Err(Error::InvalidModel(_))));
    }

    #[test]
    fn chain_of_one_is_a_duffing_oscillator() {
        let chain = make_cubic_chain(1, 1.5, 0.02, 0.3, &[Excitation::new(0.2, 0)], None).unwrap();
        let duff = make_duffing(3.0, 0.06, 0.6, &[Excitation::new(0.2, 0)]).unwrap();
        for x in [-1.3, 0.0, 0.4, 2.0] {
            let a = chain.nonlinear_force(&v(&[x]), &v(&[0.0]));
            let b = duff.nonlinear_force(&v(&[x]), &v(&[0.0]));
            assert_close!(a.force[0], b.force[0], 1e-14);
            assert_close!(a.d_q[(0, 0)], b.d_q[(0, 0)], 1e-14);
        }
        assert_eq!(chain.stiffness(), duff.stiffness());
        assert_close!(chain.damping()[(0, 0)], duff.damping()[(0, 0)], 1e-15);
    }

    #[test]
    fn chain_stiffness_is_tridiagonal() {
        let k = 2.5;
        let m = make_cubic_chain(3, k, 0.0, 0.0, &[], None).unwrap();
        let expected = DMatrix::from_row_slice(
            3,
            3,
            &[2.0 * k, -k, 0.0, -k, 2.0 * k, -k, 0.0, -k, 2.0 * k],
        );
        assert_eq!(m.stiffness(), &expected);
    }

    #[test]
    fn chain_nonlinear_jacobian_is_symmetric_and_banded() {
        let n = 50;
        let m = make_cubic_chain(n, 1.0, 0.01, 0.7, &[], None).unwrap();
        let q = DVector::from_fn(n, |i, _| (0.37 * i as f64).sin());
        let nl = m.nonlinear_force(&q, &DVector::zeros(n));
        for i in 0..n {
            for j in 0..n {
                assert_close!(nl.d_q[(i, j)], nl.d_q[(j, i)], 1e-14);
                if i.abs_diff(j) > 1 {
                    assert_eq!(nl.d_q[(i, j)], 0.0);
                }
            }
        }
        assert!(m.check_nonlinear_jacobian(&[(q, DVector::zeros(n))]) < 1e-6);
    }

    #[test]
    fn linear_chain_frequencies_match_eigenvalues() {
        // fixed-fixed chain of unit masses: ω_j² = 2k (1 - cos(jπ/(n+1)))
        let (n, k) = (6, 1.7);
        let m = make_cubic_chain(n, k, 0.0, 0.0, &[], None).unwrap();
        let minv_k = m.mass().clone().try_inverse().unwrap() * m.stiffness();
        let mut eig: Vec<f64> = minv_k.symmetric_eigenvalues().iter().copied().collect();
        eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (j, lam) in eig.iter().enumerate() {
            let theta = (j + 1) as f64 * std::f64::consts::PI / (n + 1) as f64;
            assert_close!(*lam, 2.0 * k * (1.0 - theta.cos()), 1e-10);
        }
    }

    #[test]
    fn rhs_examples() {
        let lin = make_duffing(1.0, 0.0, 0.0, &[]).unwrap();
        let r = lin.evaluate_rhs(&v(&[1.0, 0.0]), 3.7, &[1.0]).unwrap();
        assert_eq!(r.as_slice(), &[0.0, -1.0]);
        let k = 1.3;
        let duff = make_duffing(k, 0.0, 1.0, &[]).unwrap();
        let r = duff.evaluate_rhs(&v(&[1.0, 0.0]), 0.0, &[1.0]).unwrap();
        assert_close!(r[1], -k - 1.0, 1e-14);
        assert!(duff.evaluate_rhs(&v(&[1.0]), 0.0, &[1.0]).is_err());
    }

    #[test]
    fn excitation_uses_per_frequency_phase() {
        let m = make_duffing(1.0, 0.0, 0.0, &[Excitation::new(2.0, 0), Excitation::new(0.5, 1)]).unwrap();
        let e = m.excitation(&[0.0, std::f64::consts::PI]);
        assert_close!(e[0], 2.0 - 0.5, 1e-14);
        let de = m.excitation_phase_derivative(&[0.3, 0.2], 1);
        assert_close!(de[0], -0.5 * 0.2f64.sin(), 1e-15);
        assert_eq!(m.forced_frequencies(), 2);
    }

    #[test]
    fn frequency_vector_recomputes_rho() {
        let mut f = FrequencyVector::new(vec![2.0, 1.0, 3.0], 2).unwrap();
        assert_eq!(f.rho(), vec![0.5, 1.5]);
        f.set(0, 4.0).unwrap();
        assert_eq!(f.rho(), vec![0.25, 0.75]);
        assert!(f.set(0, -1.0).is_err());
        assert_eq!(f.base(), 4.0);
        assert!(FrequencyVector::new(vec![1.0], 2).is_err());
        assert!(FrequencyVector::new(vec![0.0], 0).is_err());
    }

    #[test]
    fn van_der_pol_jacobian_matches_fd() {
        let m = make_van_der_pol(0.3, 1.0, 0.1, &[]).unwrap();
        let pts: Vec<_> = (0..20)
            .map(|i| {
                let x = -2.0 + 0.21 * i as f64;
                (v(&[x]), v(&[1.5 - 0.13 * i as f64]))
            })
            .collect();
        assert!(m.check_nonlinear_jacobian(&pts) < 1e-6);
    }
}
