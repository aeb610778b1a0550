//! Self-checks of the numerical building blocks, run by `qptorus check`.

use std::f64::consts::TAU;
use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::continuation::phase_condition_rows;
use crate::error::Result;
use crate::harmonics::{rotation_matrix, HarmonicScheme, KMatrix};
use crate::integrator::WorkerPool;
use crate::model::{make_cubic_chain, make_duffing, Excitation, FrequencyVector};
use crate::oracle::linear_quasiperiodic_response;
use crate::registry::{ModelSpec, MODEL_NAMES};
use crate::shooting::{evaluate, jacobian_fd_check, newton_correct, NewtonOptions, TorusCoefficients};
use crate::continuation::Constraints;

pub type RotationFn = fn(&[f64], &KMatrix) -> DMatrix<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {:<28} {}", self.name, self.detail)
    }
}

#[derive(Clone)]
pub struct CheckOptions {
    /// Worker counts compared by the determinism check.
    pub workers: Vec<usize>,
    /// Rotation operator under test; replaceable for fault injection.
    pub rotation: RotationFn,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            workers: vec![1, 2, 4],
            rotation: rotation_matrix,
        }
    }
}

/// Rotation operator with the sine blocks transposed; the shift identity
/// must catch it.
pub fn flipped_rotation(rho: &[f64], k: &KMatrix) -> DMatrix<f64> {
    rotation_matrix(rho, k).transpose()
}

// fixed pseudo-random points in [0, 1)
fn points(count: usize, salt: usize) -> Vec<f64> {
    (0..count)
        .map(|i| (((i + 1) * 7919 + salt * 104729) as f64 * 0.618_033_988_749_895).fract())
        .collect()
}

fn outcome(name: &str, value: Result<f64>, limit: f64) -> CheckResult {
    match value {
        Ok(v) => CheckResult {
            name: name.into(),
            passed: v.is_finite() && v < limit,
            detail: format!("{v:.3e} (limit {limit:.0e})"),
        },
        Err(e) => CheckResult {
            name: name.into(),
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn transform_round_trip() -> Result<f64> {
    let mut worst: f64 = 0.0;
    for mags in [vec![vec![0, 1, 2]], vec![vec![0, 1, 3], vec![0, 2]], vec![vec![0, 1], vec![0, 1]]] {
        let s = HarmonicScheme::new(mags, None)?;
        let u = s.coefficients();
        worst = worst.max((s.gamma_inv() * s.gamma() - DMatrix::identity(u, u)).amax());
    }
    Ok(worst)
}

fn rotation_shift(rotation: RotationFn) -> Result<f64> {
    let s = HarmonicScheme::new(vec![vec![0, 1, 2], vec![0, 1]], None)?;
    let u = s.coefficients();
    let r = points(30, 1);
    let mut worst: f64 = 0.0;
    for i in 0..10 {
        let rho = [r[3 * i] * 2.0 - 1.0, r[3 * i + 1]];
        let phi = [TAU * r[3 * i + 2], TAU * r[(3 * i + 5) % 30]];
        let rot = rotation(&rho, s.k_matrix());
        worst = worst.max((&rot * rot.transpose() - DMatrix::identity(u, u)).amax());
        let shifted = [phi[0] - TAU * rho[0], phi[1] - TAU * rho[1]];
        let lhs = s.basis(&shifted).transpose();
        let rhs = s.basis(&phi).transpose() * &rot;
        worst = worst.max((lhs - rhs).amax());
    }
    Ok(worst)
}

fn rotation_derivative_fd() -> Result<f64> {
    let s = HarmonicScheme::new(vec![vec![0, 1, 3], vec![0, 2]], None)?;
    let freq = FrequencyVector::new(vec![1.7, 1.1, 0.6], 3)?;
    let mut worst: f64 = 0.0;
    for i in 0..3 {
        let h = 1e-6 * freq.get(i);
        let mut plus = freq.clone();
        plus.set(i, freq.get(i) + h)?;
        let mut minus = freq.clone();
        minus.set(i, freq.get(i) - h)?;
        let fd = (s.rotation(&plus.rho()) - s.rotation(&minus.rho())) / (2.0 * h);
        let an = s.rotation_derivative(&freq, i);
        worst = worst.max((an - &fd).amax() / fd.amax().max(1e-6));
    }
    Ok(worst)
}

fn model_jacobians() -> Result<f64> {
    let mut worst: f64 = 0.0;
    for name in MODEL_NAMES {
        let m = ModelSpec::new(name).build()?;
        let n = m.dofs();
        let r = points(40 * n, 2);
        let pts: Vec<_> = (0..20)
            .map(|k| {
                let q = DVector::from_fn(n, |i, _| 2.0 * r[2 * n * k + i] - 1.0);
                let v = DVector::from_fn(n, |i, _| 2.0 * r[2 * n * k + n + i] - 1.0);
                (q, v)
            })
            .collect();
        worst = worst.max(m.check_nonlinear_jacobian(&pts));
    }
    Ok(worst)
}

fn small_duffing_torus() -> Result<(crate::SecondOrderModel, HarmonicScheme, TorusCoefficients)> {
    let model = make_duffing(1.0, 0.1, 1.0, &[Excitation::new(0.2, 0), Excitation::new(0.2, 1)])?;
    let scheme = HarmonicScheme::new(vec![vec![0, 1, 2]], None)?;
    let freq = FrequencyVector::new(vec![2.0, 2.0 / 2f64.sqrt()], 2)?;
    let u = scheme.coefficients();
    let mut z0 = DVector::zeros(2 * u);
    z0[0] = -0.07;
    z0[1] = -0.11;
    z0[2] = 0.03;
    z0[u] = 0.05;
    z0[u + 2] = 0.02;
    let coeffs = TorusCoefficients::new(z0, freq, &scheme)?;
    Ok((model, scheme, coeffs))
}

fn shooting_jacobian() -> Result<f64> {
    let (model, scheme, coeffs) = small_duffing_torus()?;
    jacobian_fd_check(&model, &coeffs, &scheme, 128, 1e-6, &WorkerPool::serial())
}

/// A constant torus must give a flagged all-zero phase row.
fn phase_degeneracy() -> Result<f64> {
    let model = make_duffing(1.0, 0.1, 1.0, &[])?;
    let scheme = HarmonicScheme::new(vec![vec![0, 1]], None)?;
    let freq = FrequencyVector::new(vec![1.0, 0.6], 0)?;
    let u = scheme.coefficients();
    let mut z0 = DVector::zeros(2 * u);
    z0[0] = 0.4;
    let coeffs = TorusCoefficients::new(z0, freq, &scheme)?;
    let rows = phase_condition_rows(&model, &coeffs, &scheme, &[1]);
    Ok(if rows.degenerate == [true] { rows.rows.amax() } else { f64::INFINITY })
}

/// Converged linear torus against the closed-form response.
fn linear_oracle() -> Result<f64> {
    let model = make_cubic_chain(2, 1.0, 0.02, 0.0, &[Excitation::new(0.3, 0), Excitation::new(0.2, 1)], Some(0))?;
    let scheme = HarmonicScheme::new(vec![vec![0, 1]], None)?;
    let freq = FrequencyVector::new(vec![0.8, 0.8 / 2f64.sqrt()], 2)?;
    let exact = linear_quasiperiodic_response(&model, &freq, &scheme)?;
    let seed = TorusCoefficients::zeros(2, freq.clone(), &scheme)?;
    let solved = newton_correct(
        &model,
        &seed,
        &scheme,
        4096,
        &Constraints::fixed(&freq),
        NewtonOptions::default(),
        &WorkerPool::serial(),
    )?;
    Ok((&solved.coeffs.z0 - &exact.z0).amax() / exact.z0.amax())
}

/// Bitwise agreement of residual and Jacobian across worker counts.
fn determinism(workers: &[usize]) -> Result<f64> {
    let (model, scheme, coeffs) = small_duffing_torus()?;
    let mut reference = None;
    let mut worst: f64 = 0.0;
    for &w in workers {
        let pool = WorkerPool::new(w)?;
        let ev = evaluate(&model, &coeffs, &scheme, 64, &pool)?;
        match &reference {
            None => reference = Some(ev),
            Some(r) => {
                let same = r.residual == ev.residual && r.jac_z0 == ev.jac_z0 && r.jac_omega == ev.jac_omega;
                if !same {
                    worst = worst.max((&r.residual - &ev.residual).amax()).max(f64::MIN_POSITIVE);
                }
            }
        }
    }
    Ok(worst)
}

/// Run the whole suite.
pub fn run_checks(options: &CheckOptions) -> Vec<CheckResult> {
    vec![
        outcome("transform round trip", transform_round_trip(), 1e-12),
        outcome("rotation shift identity", rotation_shift(options.rotation), 1e-12),
        outcome("rotation derivative", rotation_derivative_fd(), 1e-6),
        outcome("model jacobians", model_jacobians(), 1e-6),
        outcome("shooting jacobian", shooting_jacobian(), 1e-5),
        outcome("phase row degeneracy", phase_degeneracy(), 1e-300),
        outcome("linear oracle", linear_oracle(), 1e-5),
        outcome("worker determinism", determinism(&options.workers), 1e-300),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shift_check_catches_flipped_rotation() {
        assert!(rotation_shift(rotation_matrix).unwrap() < 1e-12);
        assert!(rotation_shift(flipped_rotation).unwrap() > 1e-3);
    }

    #[test]
    fn cheap_checks_pass() {
        assert!(transform_round_trip().unwrap() < 1e-12);
        assert!(rotation_derivative_fd().unwrap() < 1e-6);
        assert!(model_jacobians().unwrap() < 1e-6);
        assert_eq!(phase_degeneracy().unwrap(), 0.0);
    }
}
