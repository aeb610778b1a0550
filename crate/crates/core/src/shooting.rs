//! Shooting residual on the Fourier coefficients of the torus section and
//! its analytic Jacobian.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::continuation::{newton_solve, Constraints, NewtonOutcome, ShootingSystem};
use crate::error::{Error, Result};
use crate::harmonics::{HarmonicScheme, SchemeDescriptor};
use crate::integrator::{integrate_batch, newmark_record, TrajectoryBatchResult, WorkerPool};
use crate::model::{FrequencyVector, SecondOrderModel};

pub const SNAPSHOT_VERSION: u32 = 1;

/// Unknowns of the shooting problem: section coefficients `Z(0)` in
/// state-major layout (`index = state · Ũ + coefficient`) plus the base
/// frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusCoefficients {
    pub z0: DVector<f64>,
    pub freq: FrequencyVector,
}

impl TorusCoefficients {
    pub fn new(z0: DVector<f64>, freq: FrequencyVector, scheme: &HarmonicScheme) -> Result<Self> {
        let u = scheme.coefficients();
        if z0.len() % (2 * u) != 0 || z0.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "{} coefficients is not a multiple of 2·Ũ = {}",
                z0.len(),
                2 * u
            )));
        }
        if scheme.torus_dim() != freq.dim() {
            return Err(Error::DimensionMismatch(format!(
                "scheme describes a {}-torus but {} base frequencies were given",
                scheme.torus_dim(),
                freq.dim()
            )));
        }
        Ok(Self { z0, freq })
    }

    pub fn zeros(n: usize, freq: FrequencyVector, scheme: &HarmonicScheme) -> Result<Self> {
        Self::new(DVector::zeros(2 * n * scheme.coefficients()), freq, scheme)
    }

    /// Section state `[q; u]` at `φ̃`.
    pub fn section_state(&self, scheme: &HarmonicScheme, phi: &[f64]) -> DVector<f64> {
        scheme.evaluate(&self.z0, phi)
    }
}

/// Everything produced by one pass of the shooting pipeline.
#[derive(Debug, Clone)]
pub struct ShootingEvaluation {
    pub residual: DVector<f64>,
    pub z_end: DVector<f64>,
    pub z_end_rotated: DVector<f64>,
    pub jac_z0: DMatrix<f64>,
    /// `∂R/∂ω_i` for every base frequency, one column each.
    pub jac_omega: DMatrix<f64>,
    pub batch: TrajectoryBatchResult,
}

fn check_dimensions(model: &SecondOrderModel, coeffs: &TorusCoefficients, scheme: &HarmonicScheme) -> Result<()> {
    let want = 2 * model.dofs() * scheme.coefficients();
    if coeffs.z0.len() != want {
        return Err(Error::DimensionMismatch(format!(
            "coefficient vector has length {}, the model and scheme need {want}",
            coeffs.z0.len()
        )));
    }
    if scheme.torus_dim() != coeffs.freq.dim() {
        return Err(Error::DimensionMismatch(format!(
            "scheme describes a {}-torus but {} base frequencies were given",
            scheme.torus_dim(),
            coeffs.freq.dim()
        )));
    }
    Ok(())
}

/// Run the pipeline: sample the section, integrate every sample over one
/// base period, transform back, rotate, and compare.
pub fn evaluate(
    model: &SecondOrderModel,
    coeffs: &TorusCoefficients,
    scheme: &HarmonicScheme,
    steps: usize,
    pool: &WorkerPool,
) -> Result<ShootingEvaluation> {
    check_dimensions(model, coeffs, scheme)?;
    let freq = &coeffs.freq;
    let states = 2 * model.dofs();
    let u = scheme.coefficients();
    let samples = scheme.samples();

    let section = scheme.to_samples(&coeffs.z0);
    let batch = integrate_batch(model, &section, freq, scheme, steps, pool)?;
    let z_end = scheme.to_coefficients(&batch.terminal);
    let rot = scheme.rotation(&freq.rho());
    let z_end_rotated = scheme.apply_blockwise(&rot, &z_end);
    let residual = &z_end_rotated - &coeffs.z0;

    // ∂R/∂Z(0): block (a, b) is R Γ⁻¹ diag_s(Ψ_s[a, b]) Γ, minus identity on
    // the diagonal blocks
    let rg = &rot * scheme.gamma_inv();
    let gamma = scheme.gamma();
    let mut jac_z0 = DMatrix::zeros(states * u, states * u);
    let mut scaled = rg.clone();
    for a in 0..states {
        for b in 0..states {
            let mut any = false;
            for s in 0..samples {
                let w = batch.psi[s][(a, b)];
                any |= w != 0.0;
                scaled.column_mut(s).copy_from(&(rg.column(s) * w));
            }
            if any {
                let block = &scaled * gamma;
                jac_z0.view_mut((a * u, b * u), (u, u)).copy_from(&block);
            }
        }
    }
    for i in 0..states * u {
        jac_z0[(i, i)] -= 1.0;
    }

    let d = freq.dim();
    let rho = freq.rho();
    let w1 = freq.base();
    let mut jac_omega = DMatrix::zeros(states * u, d);
    for i in 0..d {
        let direct = if i == 0 {
            let mut v = batch.d_omega1.clone();
            for (j, dr) in batch.d_rho.iter().enumerate() {
                v.axpy(-rho[j] / w1, dr, 1.0);
            }
            Some(v)
        } else {
            batch.d_rho.get(i - 1).map(|dr| dr / w1)
        };
        let mut col = scheme.apply_blockwise(&scheme.rotation_derivative(freq, i), &z_end);
        if let Some(v) = direct {
            col += scheme.apply_blockwise(&rg, &v);
        }
        jac_omega.set_column(i, &col);
    }

    Ok(ShootingEvaluation {
        residual,
        z_end,
        z_end_rotated,
        jac_z0,
        jac_omega,
        batch,
    })
}

/// Worst relative column error between the analytic Jacobian (coefficient
/// and frequency columns) and central finite differences with step `h`.
pub fn jacobian_fd_check(
    model: &SecondOrderModel,
    coeffs: &TorusCoefficients,
    scheme: &HarmonicScheme,
    steps: usize,
    h: f64,
    pool: &WorkerPool,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {h}")));
    }
    let base = evaluate(model, coeffs, scheme, steps, pool)?;
    let residual = |c: &TorusCoefficients| -> Result<DVector<f64>> {
        Ok(evaluate(model, c, scheme, steps, pool)?.residual)
    };
    let column_error = |an: DVector<f64>, fd: DVector<f64>| {
        let scale = an.norm().max(fd.norm()).max(1e-6);
        (an - fd).norm() / scale
    };
    let mut worst: f64 = 0.0;
    for c in 0..coeffs.z0.len() {
        let step = h * coeffs.z0[c].abs().max(1.0);
        let mut plus = coeffs.clone();
        plus.z0[c] += step;
        let mut minus = coeffs.clone();
        minus.z0[c] -= step;
        let fd = (residual(&plus)? - residual(&minus)?) / (2.0 * step);
        worst = worst.max(column_error(base.jac_z0.column(c).into_owned(), fd));
    }
    for i in 0..coeffs.freq.dim() {
        let w = coeffs.freq.get(i);
        let step = h * w.abs().max(1.0);
        let mut plus = coeffs.clone();
        plus.freq.set(i, w + step)?;
        let mut minus = coeffs.clone();
        minus.freq.set(i, w - step)?;
        let fd = (residual(&plus)? - residual(&minus)?) / (2.0 * step);
        worst = worst.max(column_error(base.jac_omega.column(i).into_owned(), fd));
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Convergence threshold on `‖R‖₂`, scaled by `max(1, ‖Z(0)‖₂)`.
    pub epsilon: f64,
    pub max_iterations: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-8,
            max_iterations: 20,
        }
    }
}

/// Converged coefficients plus the Newton history.
#[derive(Debug, Clone)]
pub struct CorrectedTorus {
    pub coeffs: TorusCoefficients,
    pub iterations: usize,
    pub residual_norm: f64,
    pub history: Vec<f64>,
    pub evaluation: ShootingEvaluation,
}

/// Newton correction of `coeffs` at fixed forcing frequencies. The released
/// frequencies and the phase/ratio conditions come from `constraints`.
pub fn newton_correct(
    model: &SecondOrderModel,
    coeffs: &TorusCoefficients,
    scheme: &HarmonicScheme,
    steps: usize,
    constraints: &Constraints,
    options: NewtonOptions,
    pool: &WorkerPool,
) -> Result<CorrectedTorus> {
    check_dimensions(model, coeffs, scheme)?;
    let mut system = ShootingSystem::new(
        model.clone(),
        scheme,
        steps,
        coeffs.freq.clone(),
        constraints.clone(),
        pool,
    )?
    .with_epsilon(options.epsilon);
    let chi = system.chi_from(coeffs);
    let p = coeffs.freq.base();
    let NewtonOutcome {
        chi,
        iterations,
        residual_norm,
        history,
        ..
    } = newton_solve(&mut system, &chi, p, options.max_iterations)?;
    let coeffs = system.coefficients(&chi, p)?;
    let evaluation = system
        .take_last_evaluation()
        .expect("converged Newton solve leaves an evaluation behind");
    Ok(CorrectedTorus {
        coeffs,
        iterations,
        residual_norm,
        history,
        evaluation,
    })
}

/// Reloadable solution file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub version: u32,
    pub scheme: SchemeDescriptor,
    pub dofs: usize,
    pub z0: Vec<f64>,
    pub omega: Vec<f64>,
    pub forced: usize,
    pub residual_norm: f64,
    pub parameter: Option<f64>,
}

impl Snapshot {
    pub fn new(
        coeffs: &TorusCoefficients,
        scheme: &HarmonicScheme,
        residual_norm: f64,
        parameter: Option<f64>,
    ) -> Self {
        Self {
            version: SNAPSHOT_VERSION,
            scheme: scheme.descriptor(),
            dofs: coeffs.z0.len() / (2 * scheme.coefficients()),
            z0: coeffs.z0.iter().copied().collect(),
            omega: coeffs.freq.values().to_vec(),
            forced: coeffs.freq.forced(),
            residual_norm,
            parameter,
        }
    }

    pub fn restore(&self) -> Result<(HarmonicScheme, TorusCoefficients)> {
        if self.version != SNAPSHOT_VERSION {
            return Err(Error::Config(format!(
                "snapshot version {} is not supported (expected {SNAPSHOT_VERSION})",
                self.version
            )));
        }
        let scheme = HarmonicScheme::from_descriptor(&self.scheme)?;
        let freq = FrequencyVector::new(self.omega.clone(), self.forced)?;
        let coeffs = TorusCoefficients::new(DVector::from_vec(self.z0.clone()), freq, &scheme)?;
        if coeffs.z0.len() != 2 * self.dofs * scheme.coefficients() {
            return Err(Error::DimensionMismatch("snapshot coefficient count does not match its DOFs".into()));
        }
        Ok((scheme, coeffs))
    }
}

/// The full torus `z(φ_1, φ̃)`: recorded trajectories of every grid sample,
/// fitted in `φ̃` at each Newmark node and interpolated in `φ_1` with cubic
/// Hermite polynomials.
#[derive(Debug, Clone)]
pub struct TorusSurface {
    scheme: HarmonicScheme,
    freq: FrequencyVector,
    n: usize,
    steps: usize,
    /// Per node: Ũ × 3n matrix with columns for q, u and q''.
    nodes: Vec<DMatrix<f64>>,
}

impl TorusSurface {
    pub fn new(
        model: &SecondOrderModel,
        coeffs: &TorusCoefficients,
        scheme: &HarmonicScheme,
        steps: usize,
        pool: &WorkerPool,
    ) -> Result<Self> {
        check_dimensions(model, coeffs, scheme)?;
        let n = model.dofs();
        let samples = scheme.samples();
        let section = scheme.to_samples(&coeffs.z0);
        let runs = pool.map(samples, |s| {
            let z0 = crate::integrator::sample_state(&section, samples, s);
            newmark_record(model, &z0, &coeffs.freq, &scheme.sample_point(s), steps)
        });
        let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
        let mut nodes = Vec::with_capacity(steps + 1);
        let mut values = DMatrix::zeros(samples, 3 * n);
        for k in 0..=steps {
            for (s, run) in runs.iter().enumerate() {
                for i in 0..n {
                    values[(s, i)] = run.q[k][i];
                    values[(s, n + i)] = run.u[k][i];
                    values[(s, 2 * n + i)] = run.a[k][i];
                }
            }
            nodes.push(scheme.gamma_inv() * &values);
        }
        Ok(Self {
            scheme: scheme.clone(),
            freq: coeffs.freq.clone(),
            n,
            steps,
            nodes,
        })
    }

    pub fn frequencies(&self) -> &FrequencyVector {
        &self.freq
    }

    pub fn dofs(&self) -> usize {
        self.n
    }

    /// `(q, u)` at hyper-time `(φ_1, φ̃)` with `φ_1 ∈ [0, 2π]`.
    pub fn state(&self, phi1: f64, phi: &[f64]) -> (DVector<f64>, DVector<f64>) {
        let n = self.n;
        let h = TAU / self.steps as f64;
        let x = (phi1 / h).clamp(0.0, self.steps as f64);
        let k = (x.floor() as usize).min(self.steps - 1);
        let t = x - k as f64;
        let basis = self.scheme.basis(phi);
        let left = self.nodes[k].tr_mul(&basis);
        let right = self.nodes[k + 1].tr_mul(&basis);
        let (h00, h10, h01, h11) = (
            (1.0 + 2.0 * t) * (1.0 - t) * (1.0 - t),
            t * (1.0 - t) * (1.0 - t),
            t * t * (3.0 - 2.0 * t),
            t * t * (t - 1.0),
        );
        let q = DVector::from_fn(n, |i, _| {
            h00 * left[i] + h10 * h * left[n + i] + h01 * right[i] + h11 * h * right[n + i]
        });
        let u = DVector::from_fn(n, |i, _| {
            h00 * left[n + i]
                + h10 * h * left[2 * n + i]
                + h01 * right[n + i]
                + h11 * h * right[2 * n + i]
        });
        (q, u)
    }

    /// Hyper-time image of physical time `t`: `φ_1 = ω_1 t mod 2π` and
    /// `φ_j = (ω_j t - ρ_j φ_1) mod 2π`.
    pub fn hyper_time(&self, t: f64) -> (f64, Vec<f64>) {
        let phi1 = (self.freq.base() * t).rem_euclid(TAU);
        let rho = self.freq.rho();
        let phi = self.freq.values()[1..]
            .iter()
            .zip(&rho)
            .map(|(w, r)| (w * t - r * phi1).rem_euclid(TAU))
            .collect();
        (phi1, phi)
    }

    /// Physical state `[q; q̇]` of the torus trajectory passing through
    /// `φ = 0` at `t = 0`.
    pub fn physical_state(&self, t: f64) -> DVector<f64> {
        let (phi1, phi) = self.hyper_time(t);
        let (q, u) = self.state(phi1, &phi);
        let mut x = DVector::zeros(2 * self.n);
        x.rows_mut(0, self.n).copy_from(&q);
        x.rows_mut(self.n, self.n).copy_from(&(u * self.freq.base()));
        x
    }

    /// Displacement of DOF `dof` on the angle torus `τ`, where
    /// `τ_1 = φ_1` and `τ_j = φ_j + ρ_j φ_1`.
    pub fn displacement_on_angles(&self, tau: &[f64], dof: usize) -> f64 {
        let phi1 = tau[0].rem_euclid(TAU);
        let rho = self.freq.rho();
        let phi: Vec<f64> = tau[1..]
            .iter()
            .zip(&rho)
            .map(|(t, r)| (t - r * phi1).rem_euclid(TAU))
            .collect();
        self.state(phi1, &phi).0[dof]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_duffing, Excitation};

    #[test]
    fn zero_solution_of_unforced_linear_model() {
        let model = make_duffing(1.0, 0.1, 0.0, &[]).unwrap();
        let scheme = HarmonicScheme::new(vec![vec![0, 1]], None).unwrap();
        let f = FrequencyVector::new(vec![1.0, 0.3], 0).unwrap();
        let c = TorusCoefficients::zeros(1, f, &scheme).unwrap();
        let ev = evaluate(&model, &c, &scheme, 64, &WorkerPool::serial()).unwrap();
        assert_eq!(ev.residual.amax(), 0.0);
    }

    #[test]
    fn periodic_case_is_plain_shooting() {
        let model = make_duffing(1.0, 0.1, 1.0, &[Excitation::new(0.3, 0)]).unwrap();
        let scheme = HarmonicScheme::periodic();
        let f = FrequencyVector::new(vec![1.2], 1).unwrap();
        let z0 = DVector::from_row_slice(&[0.2, -0.1]);
        let c = TorusCoefficients::new(z0.clone(), f.clone(), &scheme).unwrap();
        let ev = evaluate(&model, &c, &scheme, 128, &WorkerPool::serial()).unwrap();
        let direct = crate::integrator::newmark_integrate(&model, &z0, &f, &[], 128).unwrap();
        assert_eq!(ev.residual, &direct.end - &z0);
        assert_eq!(ev.z_end, ev.z_end_rotated);
        assert!((&ev.jac_z0 - (&direct.psi - DMatrix::identity(2, 2))).amax() < 1e-15);
    }

    #[test]
    fn rotated_end_matches_shifted_reconstruction() {
        let model = make_duffing(1.0, 0.1, 1.0, &[Excitation::new(0.3, 0)]).unwrap();
        let scheme = HarmonicScheme::new(vec![vec![0, 1, 2]], None).unwrap();
        let f = FrequencyVector::new(vec![1.2, 0.77], 1).unwrap();
        let z0 = DVector::from_fn(2 * scheme.coefficients(), |i, _| 0.05 * (i as f64 + 1.0).cos());
        let c = TorusCoefficients::new(z0, f.clone(), &scheme).unwrap();
        let ev = evaluate(&model, &c, &scheme, 64, &WorkerPool::serial()).unwrap();
        let rho = f.rho();
        for phi in [0.1, 1.7, 4.0] {
            let a = scheme.evaluate(&ev.z_end_rotated, &[phi]);
            let b = scheme.evaluate(&ev.z_end, &[phi - TAU * rho[0]]);
            assert!((a - b).amax() < 1e-12);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let model = make_duffing(1.0, 0.1, 1.0, &[Excitation::new(0.3, 0), Excitation::new(0.2, 1)])
            .unwrap();
        let scheme = HarmonicScheme::new(vec![vec![0, 1]], None).unwrap();
        let f = FrequencyVector::new(vec![1.3, 0.9], 2).unwrap();
        let z0 = DVector::from_fn(2 * scheme.coefficients(), |i, _| 0.1 * (i as f64 * 0.7).sin());
        let c = TorusCoefficients::new(z0, f, &scheme).unwrap();
        let err = jacobian_fd_check(&model, &c, &scheme, 128, 1e-6, &WorkerPool::serial()).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn snapshot_round_trip() {
        let scheme = HarmonicScheme::new(vec![vec![0, 1, 3]], Some(vec![8])).unwrap();
        let f = FrequencyVector::new(vec![1.0, 0.7], 1).unwrap();
        let c = TorusCoefficients::new(DVector::from_fn(10, |i, _| i as f64), f, &scheme).unwrap();
        let snap = Snapshot::new(&c, &scheme, 1e-9, Some(2.0));
        let (s2, c2) = snap.restore().unwrap();
        assert_eq!(c2, c);
        assert_eq!(s2.descriptor(), scheme.descriptor());
        let mut bad = snap.clone();
        bad.version = 99;
        assert!(bad.restore().is_err());
    }
}
