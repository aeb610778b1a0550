//! Harmonic sets, sample grids and the discrete transforms between Fourier
//! coefficients and grid samples of the initial `(d-1)`-torus.
//!
//! Coefficient ordering is `[1, cos(k̃_1·φ), sin(k̃_1·φ), …, cos(k̃_L·φ), sin(k̃_L·φ)]`
//! with the `k̃_l` taken row by row from [`build_k_matrix`]. That ordering is
//! part of the snapshot file format; [`ORDERING_TAG`] versions it.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FrequencyVector;

pub const ORDERING_TAG: &str = "kmatrix-recursive/v1";

/// Harmonic index matrix: one row per retained harmonic vector `k̃_l`
/// (length `d-1`), terminated by the all-zero row of the constant term.
pub type KMatrix = Vec<Vec<i64>>;

fn validate_magnitudes(lists: &[Vec<u32>]) -> Result<()> {
    for (j, list) in lists.iter().enumerate() {
        let label = j + 2;
        if list.first() != Some(&0) {
            return Err(Error::InvalidScheme(format!(
                "harmonic magnitudes K_{label} must start with 0, got {list:?}"
            )));
        }
        let mut seen = list[1..].to_vec();
        if seen.iter().any(|&k| k == 0) {
            return Err(Error::InvalidScheme(format!(
                "K_{label} entries after the leading 0 must be positive, got {list:?}"
            )));
        }
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidScheme(format!(
                "K_{label} contains duplicate magnitudes: {list:?}"
            )));
        }
    }
    Ok(())
}

/// Build the harmonic index matrix `K̃^d` from the magnitude lists
/// `K_j = [0, k_j…]`, j = 2…d.
///
/// For `d = 2` the rows are the positive magnitudes followed by zero. For
/// larger `d` the matrix grows recursively: first the "mixed" rows pairing
/// every nonzero row of `K̃^{d-1}` with a negative `-k_d`, then every row of
/// `K̃^{d-1}` paired with each of `[k_d; 0]`.
pub fn build_k_matrix(lists: &[Vec<u32>]) -> Result<KMatrix> {
    validate_magnitudes(lists)?;
    if lists.is_empty() {
        return Ok(vec![Vec::new()]);
    }
    let mut acc: KMatrix = lists[0][1..]
        .iter()
        .map(|&k| vec![k as i64])
        .chain(std::iter::once(vec![0]))
        .collect();
    for list in &lists[1..] {
        let new: Vec<i64> = list[1..].iter().map(|&k| k as i64).collect();
        let nonzero = &acc[..acc.len() - 1];
        let mut next = Vec::with_capacity(new.len() * nonzero.len() + (new.len() + 1) * acc.len());
        for &k in &new {
            for row in nonzero {
                let mut r = row.clone();
                r.push(-k);
                next.push(r);
            }
        }
        for k in new.iter().copied().chain(std::iter::once(0)) {
            for row in &acc {
                let mut r = row.clone();
                r.push(k);
                next.push(r);
            }
        }
        acc = next;
    }
    Ok(acc)
}

/// Number of coefficients `Ũ` for a harmonic index matrix.
pub fn coefficient_count(k_matrix: &KMatrix) -> usize {
    2 * (k_matrix.len() - 1) + 1
}

/// Tensor sample grid, one column per sample `φ̃_s`. The first angle varies
/// fastest.
pub fn sample_grid(sample_counts: &[usize]) -> DMatrix<f64> {
    let total: usize = sample_counts.iter().product();
    let mut grid = DMatrix::zeros(sample_counts.len(), total);
    for s in 0..total {
        let mut rest = s;
        for (j, &count) in sample_counts.iter().enumerate() {
            grid[(j, s)] = TAU * (rest % count) as f64 / count as f64;
            rest /= count;
        }
    }
    grid
}

/// Sample grid for a harmonic set, checking `S_j ≥ 2 H_j + 1`.
pub fn build_sample_grid(lists: &[Vec<u32>], sample_counts: &[usize]) -> Result<DMatrix<f64>> {
    validate_magnitudes(lists)?;
    if lists.len() != sample_counts.len() {
        return Err(Error::InvalidScheme(format!(
            "{} harmonic lists but {} sample counts",
            lists.len(),
            sample_counts.len()
        )));
    }
    for (j, (list, &count)) in lists.iter().zip(sample_counts).enumerate() {
        let highest = *list.iter().max().unwrap() as usize;
        if count < 2 * highest + 1 {
            return Err(Error::InvalidScheme(format!(
                "S_{} = {count} violates the Nyquist condition: the highest harmonic is {highest}, \
                 so at least {} samples are needed",
                j + 2,
                2 * highest + 1
            )));
        }
    }
    Ok(sample_grid(sample_counts))
}

/// Default sample count: smallest power of two ≥ `2H + 2`.
pub fn default_sample_count(highest: u32) -> usize {
    (2 * highest as usize + 2).next_power_of_two()
}

/// Row vector of basis functions `H(k̃, φ̃)`.
pub fn basis(k_matrix: &KMatrix, phi: &[f64]) -> DVector<f64> {
    let mut h = DVector::zeros(coefficient_count(k_matrix));
    h[0] = 1.0;
    for (l, row) in k_matrix[..k_matrix.len() - 1].iter().enumerate() {
        let arg: f64 = row.iter().zip(phi).map(|(&k, &p)| k as f64 * p).sum();
        h[2 * l + 1] = arg.cos();
        h[2 * l + 2] = arg.sin();
    }
    h
}

/// Inverse transform `Γ` (samples × coefficients) and forward transform
/// `Γ⁻¹` (coefficients × samples).
pub fn build_dft_matrices(k_matrix: &KMatrix, grid: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let samples = grid.ncols();
    let u = coefficient_count(k_matrix);
    let mut gamma = DMatrix::zeros(samples, u);
    for s in 0..samples {
        let phi: Vec<f64> = grid.column(s).iter().copied().collect();
        gamma.set_row(s, &basis(k_matrix, &phi).transpose());
    }
    let mut gamma_inv = gamma.transpose() * (2.0 / samples as f64);
    gamma_inv.row_mut(0).scale_mut(0.5);
    (gamma, gamma_inv)
}

fn dot(row: &[i64], v: &[f64]) -> f64 {
    row.iter().zip(v).map(|(&k, &x)| k as f64 * x).sum()
}

/// Rotation operator `R(ρ)` with `H(φ̃ - 2πρ) = H(φ̃) R(ρ)`.
pub fn rotation_matrix(rho: &[f64], k_matrix: &KMatrix) -> DMatrix<f64> {
    let u = coefficient_count(k_matrix);
    let mut r = DMatrix::zeros(u, u);
    r[(0, 0)] = 1.0;
    for (l, row) in k_matrix[..k_matrix.len() - 1].iter().enumerate() {
        let theta = TAU * dot(row, rho);
        let (s, c) = theta.sin_cos();
        let i = 2 * l + 1;
        r[(i, i)] = c;
        r[(i, i + 1)] = -s;
        r[(i + 1, i)] = s;
        r[(i + 1, i + 1)] = c;
    }
    r
}

/// Derivative of `R(ρ(ω))` with respect to base frequency `index`
/// (zero-based, 0 is `ω_1`), holding the other frequencies fixed.
///
/// With `θ_l = 2π k̃_l·ρ`, `∂θ_l/∂ω_1 = -2π k̃_l·ρ / ω_1` and
/// `∂θ_l/∂ω_i = 2π k_{i,l} / ω_1`.
pub fn rotation_derivative(freq: &FrequencyVector, k_matrix: &KMatrix, index: usize) -> DMatrix<f64> {
    let rho = freq.rho();
    let w1 = freq.base();
    let u = coefficient_count(k_matrix);
    let mut out = DMatrix::zeros(u, u);
    for (l, row) in k_matrix[..k_matrix.len() - 1].iter().enumerate() {
        let k_rho = dot(row, &rho);
        let dtheta = if index == 0 {
            -TAU * k_rho / w1
        } else {
            TAU * row[index - 1] as f64 / w1
        };
        let (s, c) = (TAU * k_rho).sin_cos();
        let i = 2 * l + 1;
        // d/dθ [c -s; s c] = [-s -c; c -s]
        out[(i, i)] = -s * dtheta;
        out[(i, i + 1)] = -c * dtheta;
        out[(i + 1, i)] = c * dtheta;
        out[(i + 1, i + 1)] = -s * dtheta;
    }
    out
}

/// Spectral derivative `∇_{φ_i}` for angle `index` (zero-based base
/// frequency index, so `index ≥ 1`): maps the coefficients of `z` to those
/// of `∂z/∂φ_i`.
pub fn phase_gradient(k_matrix: &KMatrix, index: usize) -> DMatrix<f64> {
    assert!(index >= 1, "phase gradient is defined for φ_2…φ_d only");
    let u = coefficient_count(k_matrix);
    let mut out = DMatrix::zeros(u, u);
    for (l, row) in k_matrix[..k_matrix.len() - 1].iter().enumerate() {
        let k = row[index - 1] as f64;
        let i = 2 * l + 1;
        out[(i, i + 1)] = k;
        out[(i + 1, i)] = -k;
    }
    out
}

/// Serializable description of a scheme, embedded in snapshot files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeDescriptor {
    pub magnitudes: Vec<Vec<u32>>,
    pub sample_counts: Vec<usize>,
    pub ordering: String,
}

/// All constant matrices for one harmonic truncation. Immutable once built.
#[derive(Debug, Clone)]
pub struct HarmonicScheme {
    magnitudes: Vec<Vec<u32>>,
    sample_counts: Vec<usize>,
    k_matrix: KMatrix,
    grid: DMatrix<f64>,
    gamma: DMatrix<f64>,
    gamma_inv: DMatrix<f64>,
    nabla: Vec<DMatrix<f64>>,
}

impl HarmonicScheme {
    /// Scheme for a `d`-torus with `d - 1 = magnitudes.len()`. Missing
    /// sample counts fall back to [`default_sample_count`].
    pub fn new(magnitudes: Vec<Vec<u32>>, sample_counts: Option<Vec<usize>>) -> Result<Self> {
        validate_magnitudes(&magnitudes)?;
        let sample_counts = sample_counts.unwrap_or_else(|| {
            magnitudes
                .iter()
                .map(|k| default_sample_count(*k.iter().max().unwrap()))
                .collect()
        });
        let k_matrix = build_k_matrix(&magnitudes)?;
        let grid = build_sample_grid(&magnitudes, &sample_counts)?;
        let (gamma, gamma_inv) = build_dft_matrices(&k_matrix, &grid);
        let nabla = (1..=magnitudes.len())
            .map(|i| phase_gradient(&k_matrix, i))
            .collect();
        Ok(Self {
            magnitudes,
            sample_counts,
            k_matrix,
            grid,
            gamma,
            gamma_inv,
            nabla,
        })
    }

    /// Degenerate scheme for periodic solutions (`d = 1`): one coefficient
    /// per state, one trajectory.
    pub fn periodic() -> Self {
        Self::new(Vec::new(), Some(Vec::new())).expect("empty scheme is valid")
    }

    pub fn from_descriptor(desc: &SchemeDescriptor) -> Result<Self> {
        if desc.ordering != ORDERING_TAG {
            return Err(Error::InvalidScheme(format!(
                "unsupported coefficient ordering '{}', expected '{ORDERING_TAG}'",
                desc.ordering
            )));
        }
        Self::new(desc.magnitudes.clone(), Some(desc.sample_counts.clone()))
    }

    pub fn descriptor(&self) -> SchemeDescriptor {
        SchemeDescriptor {
            magnitudes: self.magnitudes.clone(),
            sample_counts: self.sample_counts.clone(),
            ordering: ORDERING_TAG.to_string(),
        }
    }

    /// Torus dimension `d`.
    pub fn torus_dim(&self) -> usize {
        self.magnitudes.len() + 1
    }

    /// Number of coefficients per state, `Ũ`.
    pub fn coefficients(&self) -> usize {
        self.gamma.ncols()
    }

    /// Number of trajectories, `S̃`.
    pub fn samples(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn magnitudes(&self) -> &[Vec<u32>] {
        &self.magnitudes
    }

    pub fn sample_counts(&self) -> &[usize] {
        &self.sample_counts
    }

    pub fn k_matrix(&self) -> &KMatrix {
        &self.k_matrix
    }

    pub fn grid(&self) -> &DMatrix<f64> {
        &self.grid
    }

    pub fn sample_point(&self, s: usize) -> Vec<f64> {
        self.grid.column(s).iter().copied().collect()
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn gamma_inv(&self) -> &DMatrix<f64> {
        &self.gamma_inv
    }

    /// `∇_{φ_i}` for zero-based base-frequency index `i ≥ 1`.
    pub fn nabla(&self, index: usize) -> &DMatrix<f64> {
        &self.nabla[index - 1]
    }

    pub fn basis(&self, phi: &[f64]) -> DVector<f64> {
        basis(&self.k_matrix, phi)
    }

    pub fn rotation(&self, rho: &[f64]) -> DMatrix<f64> {
        rotation_matrix(rho, &self.k_matrix)
    }

    pub fn rotation_derivative(&self, freq: &FrequencyVector, index: usize) -> DMatrix<f64> {
        rotation_derivative(freq, &self.k_matrix, index)
    }

    /// Position of the coefficient pair for the harmonic `±k̃`, returned as
    /// (cosine slot, sign of the sine slot).
    pub fn harmonic_slot(&self, k: &[i64]) -> Option<(usize, f64)> {
        self.k_matrix[..self.k_matrix.len() - 1]
            .iter()
            .enumerate()
            .find_map(|(l, row)| {
                if row.as_slice() == k {
                    Some((2 * l + 1, 1.0))
                } else if row.iter().zip(k).all(|(a, b)| *a == -b) {
                    Some((2 * l + 1, -1.0))
                } else {
                    None
                }
            })
    }

    /// Apply a per-state coefficient operator `I_{2n} ⊗ A` to a state-major
    /// coefficient vector.
    pub fn apply_blockwise(&self, op: &DMatrix<f64>, coeffs: &DVector<f64>) -> DVector<f64> {
        let (rows, cols) = op.shape();
        let states = coeffs.len() / cols;
        let mut out = DVector::zeros(states * rows);
        for i in 0..states {
            let block = op * coeffs.rows(i * cols, cols);
            out.rows_mut(i * rows, rows).copy_from(&block);
        }
        out
    }

    /// Samples `z̄ = (I ⊗ Γ) Z` in state-major layout.
    pub fn to_samples(&self, coeffs: &DVector<f64>) -> DVector<f64> {
        self.apply_blockwise(&self.gamma, coeffs)
    }

    /// Coefficients `Z = (I ⊗ Γ⁻¹) z̄`.
    pub fn to_coefficients(&self, samples: &DVector<f64>) -> DVector<f64> {
        self.apply_blockwise(&self.gamma_inv, samples)
    }

    /// Evaluate all states of a coefficient vector at one point `φ̃`.
    pub fn evaluate(&self, coeffs: &DVector<f64>, phi: &[f64]) -> DVector<f64> {
        let h = self.basis(phi);
        let u = self.coefficients();
        DVector::from_fn(coeffs.len() / u, |i, _| h.dot(&coeffs.rows(i * u, u)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn k_matrix_single_direction() {
        assert_eq!(build_k_matrix(&[vec![0, 1, 3]]).unwrap(), vec![vec![1], vec![3], vec![0]]);
        assert_eq!(build_k_matrix(&[vec![0, 1]]).unwrap(), vec![vec![1], vec![0]]);
        let s = HarmonicScheme::new(vec![vec![0, 1, 3]], None).unwrap();
        assert_eq!(s.coefficients(), 5);
    }

    #[test]
    fn k_matrix_two_directions() {
        let k = build_k_matrix(&[vec![0, 1], vec![0, 1]]).unwrap();
        assert_eq!(k, vec![vec![1, -1], vec![1, 1], vec![0, 1], vec![1, 0], vec![0, 0]]);
        assert_eq!(coefficient_count(&k), 9);
    }

    #[test]
    fn k_matrix_three_directions_counts() {
        let lists = vec![vec![0, 1, 3], vec![0, 1, 3], vec![0, 1, 3]];
        let k = build_k_matrix(&lists).unwrap();
        assert_eq!(coefficient_count(&k), 125);
        assert_eq!(k.last().unwrap(), &vec![0, 0, 0]);
        // no harmonic appears twice, not even with flipped sign
        for (a, ra) in k.iter().enumerate() {
            for rb in &k[a + 1..] {
                assert_ne!(ra, rb);
                let neg: Vec<i64> = rb.iter().map(|x| -x).collect();
                assert_ne!(ra, &neg);
            }
        }
    }

    #[test]
    fn k_matrix_rejects_bad_lists() {
        assert!(build_k_matrix(&[vec![0, 1, 1]]).is_err());
        assert!(build_k_matrix(&[vec![1, 2]]).is_err());
        assert!(build_k_matrix(&[vec![0, 0, 2]]).is_err());
    }

    #[test]
    fn sample_grids() {
        let g = sample_grid(&[4]);
        assert_eq!(g.ncols(), 4);
        for (s, want) in [0.0, PI / 2.0, PI, 1.5 * PI].iter().enumerate() {
            assert!((g[(0, s)] - want).abs() < 1e-15);
        }
        let g = sample_grid(&[2, 2]);
        let cols: Vec<(f64, f64)> = (0..4).map(|s| (g[(0, s)], g[(1, s)])).collect();
        assert_eq!(cols, vec![(0.0, 0.0), (PI, 0.0), (0.0, PI), (PI, PI)]);
    }

    #[test]
    fn nyquist_violation_is_reported() {
        let err = build_sample_grid(&[vec![0, 1, 3]], &[6]).unwrap_err();
        assert!(err.to_string().contains("Nyquist"), "{err}");
        assert!(build_sample_grid(&[vec![0, 1, 3]], &[7]).is_ok());
    }

    #[test]
    fn default_counts_are_powers_of_two() {
        assert_eq!(default_sample_count(1), 4);
        assert_eq!(default_sample_count(3), 8);
        assert_eq!(default_sample_count(7), 16);
        assert_eq!(default_sample_count(8), 32);
    }

    #[test]
    fn dft_matrices_single_harmonic() {
        let s = HarmonicScheme::new(vec![vec![0, 1]], Some(vec![4])).unwrap();
        let want = DMatrix::from_row_slice(
            4,
            3,
            &[1.0, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0, -1.0, 0.0, 1.0, 0.0, -1.0],
        );
        assert!((s.gamma() - &want).amax() < 1e-15);
        let id = s.gamma_inv() * s.gamma();
        assert!((id - DMatrix::identity(3, 3)).amax() < 1e-14);
    }

    #[test]
    fn periodic_scheme_is_trivial() {
        let s = HarmonicScheme::periodic();
        assert_eq!(s.torus_dim(), 1);
        assert_eq!(s.coefficients(), 1);
        assert_eq!(s.samples(), 1);
        assert_eq!(s.gamma()[(0, 0)], 1.0);
        assert_eq!(s.rotation(&[]), DMatrix::identity(1, 1));
    }

    #[test]
    fn rotation_examples() {
        let k = build_k_matrix(&[vec![0, 1]]).unwrap();
        assert!((rotation_matrix(&[3.0], &k) - DMatrix::identity(3, 3)).amax() < 1e-14);
        let r = rotation_matrix(&[0.25], &k);
        let want = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0]);
        assert!((r - want).amax() < 1e-15);
    }

    #[test]
    fn rotation_derivative_examples() {
        let k = build_k_matrix(&[vec![0, 1]]).unwrap();
        // ρ = 0 → no dependence on ω_1
        let f = FrequencyVector::new(vec![2.0, 0.0], 1).unwrap();
        assert_eq!(rotation_derivative(&f, &k, 0).amax(), 0.0);

        // ρ_2 = 1/4, ω_1 = 2: θ = π/2 and ∂θ/∂ω_2 = 2π/ω_1 = π, so the
        // block is π · d/dθ[c -s; s c] = π [-1 0; 0 -1].
        let f = FrequencyVector::new(vec![2.0, 0.5], 1).unwrap();
        let d = rotation_derivative(&f, &k, 1);
        let want = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, -PI, 0.0, 0.0, 0.0, -PI]);
        assert!((d - want).amax() < 1e-14);
    }

    #[test]
    fn rotation_derivative_matches_central_differences() {
        let k = build_k_matrix(&[vec![0, 1, 2], vec![0, 1]]).unwrap();
        let f = FrequencyVector::new(vec![1.3, 0.91, 0.47], 2).unwrap();
        for index in 0..3 {
            let h = 1e-6;
            let mut fp = f.clone();
            fp.set(index, f.get(index) + h).unwrap();
            let mut fm = f.clone();
            fm.set(index, f.get(index) - h).unwrap();
            let fd = (rotation_matrix(&fp.rho(), &k) - rotation_matrix(&fm.rho(), &k)) / (2.0 * h);
            let an = rotation_derivative(&f, &k, index);
            let rel = (&an - &fd).norm() / an.norm();
            assert!(rel < 1e-7, "index {index}: {rel}");
        }
    }

    #[test]
    fn phase_gradient_examples() {
        let k = build_k_matrix(&[vec![0, 1]]).unwrap();
        let g = phase_gradient(&k, 1);
        let want = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, -1.0, 0.0]);
        assert_eq!(g, want);
        let d = &g * DVector::from_row_slice(&[0.0, 1.0, 0.0]);
        assert_eq!(d.as_slice(), &[0.0, 0.0, -1.0]);
    }

    #[test]
    fn phase_gradient_matches_sampled_difference() {
        let s = HarmonicScheme::new(vec![vec![0, 1, 2], vec![0, 1]], None).unwrap();
        let z = DVector::from_fn(s.coefficients(), |i, _| ((i * 7 + 3) % 11) as f64 / 11.0 - 0.4);
        let phi = [0.7, 2.1];
        for index in 1..=2 {
            let dz = s.nabla(index) * &z;
            let exact = s.basis(&phi).dot(&dz);
            let mut errs = Vec::new();
            for h in [1e-2, 5e-3] {
                let mut p = phi;
                p[index - 1] += h;
                let mut m = phi;
                m[index - 1] -= h;
                let fd = (s.basis(&p).dot(&z) - s.basis(&m).dot(&z)) / (2.0 * h);
                errs.push((fd - exact).abs());
            }
            // second order: halving h quarters the error
            assert!(errs[1] < errs[0] / 3.5, "{errs:?}");
            assert!(errs[0] < 1e-3);
        }
    }

    fn scheme_strategy() -> impl Strategy<Value = HarmonicScheme> {
        let list = prop::collection::btree_set(1u32..=7, 1..4)
            .prop_map(|set| std::iter::once(0).chain(set).collect::<Vec<u32>>());
        prop::collection::vec(list, 1..=2)
            .prop_map(|lists| HarmonicScheme::new(lists, None).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn transforms_round_trip(s in scheme_strategy(), seed in 0u64..1000) {
            let id = s.gamma_inv() * s.gamma();
            prop_assert!((id - DMatrix::identity(s.coefficients(), s.coefficients())).amax() < 1e-12);
            let z = DVector::from_fn(2 * s.coefficients(), |i, _| ((i as u64 * 31 + seed) % 17) as f64 - 8.0);
            let back = s.to_coefficients(&s.to_samples(&z));
            prop_assert!((back - z).amax() < 1e-11);
            prop_assert_eq!(s.k_matrix().len(), (s.coefficients() - 1) / 2 + 1);
        }

        #[test]
        fn rotation_shift_identity(
            s in scheme_strategy(),
            rho in prop::collection::vec(-2.0f64..2.0, 2),
            phi in prop::collection::vec(0.0f64..TAU, 2),
        ) {
            let d1 = s.torus_dim() - 1;
            let (rho, phi) = (&rho[..d1], &phi[..d1]);
            let r = s.rotation(rho);
            let u = s.coefficients();
            prop_assert!((&r * r.transpose() - DMatrix::identity(u, u)).amax() < 1e-12);
            let shifted: Vec<f64> = phi.iter().zip(rho).map(|(p, q)| p - TAU * q).collect();
            let lhs = s.basis(&shifted).transpose();
            let rhs = s.basis(phi).transpose() * &r;
            prop_assert!((lhs - rhs).amax() < 1e-12);
        }

        #[test]
        fn nabla_is_skew(s in scheme_strategy()) {
            for i in 1..s.torus_dim() {
                let g = s.nabla(i);
                prop_assert_eq!(g.transpose(), -g);
                let sq = g * g;
                prop_assert!(sq.symmetric_eigenvalues().iter().all(|&l| l <= 1e-12));
            }
        }
    }
}
