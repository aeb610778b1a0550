//! Lyapunov exponents of a converged torus from the per-sample transition
//! matrices, and Floquet exponents for periodic orbits.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harmonics::HarmonicScheme;
use crate::integrator::TrajectoryBatchResult;
use crate::model::FrequencyVector;

/// One-period transition matrix `Ψ(φ̃)` in `(q, q̇)` coordinates as a
/// trigonometric polynomial over the section.
#[derive(Debug, Clone)]
pub struct TransitionField {
    scheme: HarmonicScheme,
    states: usize,
    /// Ũ × (2n)² coefficients, one column per matrix entry (row-major).
    coefficients: DMatrix<f64>,
}

/// Change `(q, u)` sensitivities to `(q, q̇)` with `q̇ = ω_1 u`.
pub fn to_physical(psi: &DMatrix<f64>, omega1: f64) -> DMatrix<f64> {
    let n = psi.nrows() / 2;
    let mut out = psi.clone();
    out.view_mut((0, n), (n, n)).scale_mut(1.0 / omega1);
    out.view_mut((n, 0), (n, n)).scale_mut(omega1);
    out
}

impl TransitionField {
    pub fn from_batch(batch: &TrajectoryBatchResult, freq: &FrequencyVector, scheme: &HarmonicScheme) -> Result<Self> {
        if batch.psi.len() != scheme.samples() {
            return Err(Error::DimensionMismatch(format!(
                "{} transition blocks for {} samples",
                batch.psi.len(),
                scheme.samples()
            )));
        }
        let blocks: Vec<DMatrix<f64>> = batch.psi.iter().map(|p| to_physical(p, freq.base())).collect();
        Self::from_samples(&blocks, scheme)
    }

    /// Fit a field through matrices given at every grid sample.
    pub fn from_samples(blocks: &[DMatrix<f64>], scheme: &HarmonicScheme) -> Result<Self> {
        let states = blocks
            .first()
            .map(|b| b.nrows())
            .ok_or_else(|| Error::DimensionMismatch("no transition blocks".into()))?;
        let mut values = DMatrix::zeros(blocks.len(), states * states);
        for (s, b) in blocks.iter().enumerate() {
            for i in 0..states {
                for j in 0..states {
                    values[(s, i * states + j)] = b[(i, j)];
                }
            }
        }
        Ok(Self {
            scheme: scheme.clone(),
            states,
            coefficients: scheme.gamma_inv() * values,
        })
    }

    /// Field that equals `matrix` everywhere.
    pub fn constant(matrix: &DMatrix<f64>, scheme: &HarmonicScheme) -> Self {
        let blocks = vec![matrix.clone(); scheme.samples()];
        Self::from_samples(&blocks, scheme).expect("non-empty block list")
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn evaluate(&self, phi: &[f64]) -> DMatrix<f64> {
        let entries = self.coefficients.tr_mul(&self.scheme.basis(phi));
        DMatrix::from_row_slice(self.states, self.states, entries.as_slice())
    }

    /// Largest entrywise deviation between the field and a reference set of
    /// matrices at given points, relative to the largest entry.
    pub fn deviation(&self, points: &[(Vec<f64>, DMatrix<f64>)]) -> f64 {
        points
            .iter()
            .map(|(phi, m)| (self.evaluate(phi) - m).amax() / m.amax().max(1e-300))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityClass {
    Stable,
    Marginal,
    Unstable,
}

impl std::fmt::Display for StabilityClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Stable => "stable",
            Self::Marginal => "marginal",
            Self::Unstable => "unstable",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// First-order exponents, sorted descending.
    pub exponents: Vec<f64>,
    pub periods: usize,
    /// Running estimates (unsorted, in QR order) after each
    /// re-orthonormalization, with the time they refer to.
    pub history: Vec<(f64, Vec<f64>)>,
    /// Exponents expected to be zero by symmetry (one per unknown base
    /// frequency); the ones closest to zero are left out of the
    /// classification.
    pub neutral: usize,
    pub band: f64,
    pub class: StabilityClass,
}

impl StabilityReport {
    fn classify(exponents: Vec<f64>, neutral: usize, band: f64) -> (Vec<f64>, StabilityClass) {
        let mut sorted = exponents;
        sorted.sort_by(|a, b| b.total_cmp(a));
        let mut by_size: Vec<f64> = sorted.clone();
        by_size.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
        let rest = &by_size[neutral.min(by_size.len())..];
        let lead = rest.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let class = if rest.is_empty() || lead.abs() < band {
            StabilityClass::Marginal
        } else if lead < 0.0 {
            StabilityClass::Stable
        } else {
            StabilityClass::Unstable
        };
        (sorted, class)
    }

    pub fn is_stable(&self) -> bool {
        self.class == StabilityClass::Stable
    }

    pub fn leading(&self, count: usize) -> Vec<f64> {
        self.exponents.iter().take(count).copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovOptions {
    pub periods: usize,
    /// Re-orthonormalize every this many periods.
    pub interval: usize,
    /// Relative band: `|σ| < band · ω_1` counts as zero.
    pub band: f64,
}

impl Default for LyapunovOptions {
    fn default() -> Self {
        Self {
            periods: 500,
            interval: 1,
            band: 1e-3,
        }
    }
}

/// Lyapunov exponents by chaining the field over `periods` base periods:
/// period `i` starts at section point `2π (i-1) ρ`. Volumes come from the
/// diagonal of repeated QR factorizations.
pub fn lyapunov_exponents(
    field: &TransitionField,
    freq: &FrequencyVector,
    options: LyapunovOptions,
) -> Result<StabilityReport> {
    if options.periods < 10 {
        return Err(Error::Config(format!(
            "at least 10 periods are needed for Lyapunov exponents, got {}",
            options.periods
        )));
    }
    let interval = options.interval.max(1);
    let m = field.states();
    let t1 = freq.period();
    let rho = freq.rho();
    let mut basis = DMatrix::<f64>::identity(m, m);
    let mut sums = vec![0.0; m];
    let mut history = Vec::new();
    for i in 1..=options.periods {
        let phi: Vec<f64> = rho.iter().map(|r| (TAU * (i - 1) as f64 * r).rem_euclid(TAU)).collect();
        basis = field.evaluate(&phi) * basis;
        if i % interval == 0 || i == options.periods {
            let qr = basis.clone().qr();
            let r = qr.r();
            let mut q = qr.q();
            for h in 0..m {
                let diag = r[(h, h)];
                if !diag.is_finite() {
                    return Err(Error::NotFinite("Lyapunov volume".into()));
                }
                sums[h] += diag.abs().ln();
                if diag < 0.0 {
                    let mut col = q.column_mut(h);
                    col.neg_mut();
                }
            }
            basis = q;
            let t = i as f64 * t1;
            history.push((t, sums.iter().map(|s| s / t).collect()));
        }
    }
    let t = options.periods as f64 * t1;
    let exponents: Vec<f64> = sums.iter().map(|s| s / t).collect();
    if exponents.iter().any(|x| !x.is_finite()) {
        return Err(Error::NotFinite("Lyapunov exponents".into()));
    }
    let neutral = freq.dim() - freq.forced();
    let band = options.band * freq.base();
    let (exponents, class) = StabilityReport::classify(exponents, neutral, band);
    Ok(StabilityReport {
        exponents,
        periods: options.periods,
        history,
        neutral,
        band,
        class,
    })
}

/// Floquet exponents `ln|μ| / T_1` of a single monodromy matrix.
pub fn floquet(monodromy: &DMatrix<f64>, freq: &FrequencyVector, band: f64) -> Result<StabilityReport> {
    let eig = monodromy.complex_eigenvalues();
    let t1 = freq.period();
    let exponents: Vec<f64> = eig.iter().map(|mu| mu.norm().ln() / t1).collect();
    if exponents.iter().any(|x| x.is_nan()) {
        return Err(Error::NotFinite("Floquet multipliers".into()));
    }
    let neutral = freq.dim() - freq.forced();
    let band = band * freq.base();
    let (exponents, class) = StabilityReport::classify(exponents, neutral, band);
    Ok(StabilityReport {
        exponents,
        periods: 1,
        history: Vec::new(),
        neutral,
        band,
        class,
    })
}

/// Stability of a converged solution from its trajectory batch: Floquet
/// multipliers for periodic orbits, Lyapunov exponents otherwise.
pub fn analyze(
    batch: &TrajectoryBatchResult,
    freq: &FrequencyVector,
    scheme: &HarmonicScheme,
    options: LyapunovOptions,
) -> Result<StabilityReport> {
    if scheme.torus_dim() == 1 {
        floquet(&batch.psi[0], freq, options.band)
    } else {
        let field = TransitionField::from_batch(batch, freq, scheme)?;
        lyapunov_exponents(&field, freq, options)
    }
}
