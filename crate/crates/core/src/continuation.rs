//! Predictor–corrector continuation in one parameter, phase and frequency
//! conditions for the released base frequencies, and the shooting system
//! that ties them to the torus residual.

use std::sync::Arc;

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::harmonics::HarmonicScheme;
use crate::integrator::{sample_state, WorkerPool};
use crate::model::{FrequencyVector, SecondOrderModel};
use crate::shooting::{evaluate, ShootingEvaluation, TorusCoefficients};

/// Residual and Jacobians of `F(χ, p) = 0` at one point.
#[derive(Debug, Clone)]
pub struct Linearization {
    pub residual: DVector<f64>,
    pub jac_chi: DMatrix<f64>,
    pub jac_p: DVector<f64>,
}

/// A square nonlinear system `F(χ, p) = 0` in unknowns `χ` and one
/// parameter `p`.
pub trait ContinuationSystem {
    fn dim(&self) -> usize;

    fn linearize(&mut self, chi: &DVector<f64>, p: f64) -> Result<Linearization>;

    /// Convergence threshold on `‖F‖₂` near `χ`.
    fn tolerance(&self, chi: &DVector<f64>) -> f64;

    /// Called once for every accepted branch point, right after the
    /// linearization at that point.
    fn accept(&mut self, _point: &SolutionPoint) -> Result<()> {
        Ok(())
    }
}

fn solve_square(a: DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let x = a
        .lu()
        .solve(b)
        .ok_or_else(|| Error::RankDeficient(format!("{what} is singular")))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::RankDeficient(format!("{what} is numerically singular")));
    }
    Ok(x)
}

fn bordered(lin: &Linearization, row: &DVector<f64>) -> DMatrix<f64> {
    let m = lin.residual.len();
    let mut a = DMatrix::zeros(m + 1, m + 1);
    a.view_mut((0, 0), (m, m)).copy_from(&lin.jac_chi);
    a.view_mut((0, m), (m, 1)).copy_from(&lin.jac_p);
    a.view_mut((m, 0), (1, m + 1)).copy_from(&row.transpose());
    a
}

/// Unit tangent of the solution curve at `lin`, oriented along `previous`.
///
/// Solves `[F_χ F_p; previousᵀ] τ = [0; 1]`. The bootstrap convention is
/// `previous = (0, …, 0, ±1)`.
pub fn tangent_predict(lin: &Linearization, previous: &DVector<f64>) -> Result<DVector<f64>> {
    let m = lin.residual.len();
    if previous.len() != m + 1 {
        return Err(Error::DimensionMismatch(format!(
            "previous tangent has length {}, expected {}",
            previous.len(),
            m + 1
        )));
    }
    let mut rhs = DVector::zeros(m + 1);
    rhs[m] = 1.0;
    let tau = solve_square(bordered(lin, previous), &rhs, "tangent system")?;
    Ok(tau.normalize())
}

/// Tangent rescaled so that its parameter component is exactly ±1, or
/// `None` at a fold.
pub fn parameter_scaled(tangent: &DVector<f64>) -> Option<DVector<f64>> {
    let dp = tangent[tangent.len() - 1];
    (dp.abs() > 1e-12 * tangent.norm()).then(|| tangent / dp.abs())
}

pub fn bootstrap_tangent(dim: usize, direction: f64) -> DVector<f64> {
    let mut t = DVector::zeros(dim + 1);
    t[dim] = direction.signum();
    t
}

/// Result of a corrector run.
#[derive(Debug, Clone)]
pub struct Corrected {
    pub chi: DVector<f64>,
    pub p: f64,
    pub iterations: usize,
    pub residual_norm: f64,
    pub linearization: Linearization,
    /// Largest `|tangentᵀ δ|` over the corrections taken.
    pub orthogonality: f64,
}

/// Newton iterations on `[F(χ, p); tᵀ(x - x_pred)] = 0`, so every
/// correction is orthogonal to the predictor tangent.
pub fn orthogonal_correct<S: ContinuationSystem + ?Sized>(
    system: &mut S,
    chi: &DVector<f64>,
    p: f64,
    tangent: &DVector<f64>,
    max_iterations: usize,
) -> Result<Corrected> {
    let m = chi.len();
    let mut x = DVector::zeros(m + 1);
    x.rows_mut(0, m).copy_from(chi);
    x[m] = p;
    let mut orthogonality: f64 = 0.0;
    let mut iterations = 0;
    loop {
        let chi = x.rows(0, m).into_owned();
        let lin = system.linearize(&chi, x[m])?;
        let norm = lin.residual.norm();
        if !norm.is_finite() {
            return Err(Error::NotFinite("corrector residual".into()));
        }
        if norm < system.tolerance(&chi) {
            return Ok(Corrected {
                chi,
                p: x[m],
                iterations,
                residual_norm: norm,
                linearization: lin,
                orthogonality,
            });
        }
        if iterations == max_iterations {
            return Err(Error::NonConvergence {
                iterations,
                residual: norm,
            });
        }
        let mut rhs = DVector::zeros(m + 1);
        rhs.rows_mut(0, m).copy_from(&(-&lin.residual));
        let delta = solve_square(bordered(&lin, tangent), &rhs, "corrector system")?;
        orthogonality = orthogonality.max(tangent.dot(&delta).abs());
        x += delta;
        iterations += 1;
    }
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub chi: DVector<f64>,
    /// Residual evaluations at accepted iterates, including the final one.
    pub iterations: usize,
    pub residual_norm: f64,
    pub history: Vec<f64>,
    pub linearization: Linearization,
}

/// Damped Newton at fixed parameter: a step is halved up to four times
/// while the residual norm does not decrease.
pub fn newton_solve<S: ContinuationSystem + ?Sized>(
    system: &mut S,
    chi: &DVector<f64>,
    p: f64,
    max_iterations: usize,
) -> Result<NewtonOutcome> {
    let mut chi = chi.clone();
    let mut lin = system.linearize(&chi, p)?;
    let mut history = Vec::new();
    for iteration in 1..=max_iterations {
        let norm = lin.residual.norm();
        if !norm.is_finite() {
            return Err(Error::NotFinite("Newton residual".into()));
        }
        history.push(norm);
        if norm < system.tolerance(&chi) {
            return Ok(NewtonOutcome {
                chi,
                iterations: iteration,
                residual_norm: norm,
                history,
                linearization: lin,
            });
        }
        let delta = solve_square(lin.jac_chi.clone(), &(-&lin.residual), "Newton system")?;
        let mut lambda = 1.0;
        let mut halvings = 0;
        loop {
            let trial = &chi + &delta * lambda;
            let attempt = system.linearize(&trial, p);
            let accept = match &attempt {
                Ok(t) => t.residual.norm() < norm || halvings == 4,
                Err(e) => {
                    if halvings == 4 || !e.is_numerical() {
                        return Err(attempt.unwrap_err());
                    }
                    false
                }
            };
            if accept {
                chi = trial;
                lin = attempt?;
                break;
            }
            lambda *= 0.5;
            halvings += 1;
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iterations,
        residual: lin.residual.norm(),
    })
}

/// Step control and stopping rules for [`run_branch`].
#[derive(Debug, Clone, PartialEq)]
pub struct BranchConfig {
    pub p_min: f64,
    pub p_max: f64,
    /// Initial direction of travel in `p` (sign only).
    pub direction: f64,
    pub initial_step: f64,
    pub min_step: f64,
    pub max_step: f64,
    pub grow: f64,
    pub shrink: f64,
    pub fast_iterations: usize,
    pub slow_iterations: usize,
    pub max_retries: usize,
    pub max_points: usize,
    pub corrector_iterations: usize,
}

impl Default for BranchConfig {
    fn default() -> Self {
        Self {
            p_min: f64::NEG_INFINITY,
            p_max: f64::INFINITY,
            direction: 1.0,
            initial_step: 0.05,
            min_step: 1e-6,
            max_step: 0.5,
            grow: 1.3,
            shrink: 0.5,
            fast_iterations: 3,
            slow_iterations: 8,
            max_retries: 5,
            max_points: 100,
            corrector_iterations: 12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolutionPoint {
    pub chi: DVector<f64>,
    pub p: f64,
    /// Unit tangent in `(χ, p)`.
    pub tangent: DVector<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub step: f64,
    pub orthogonality: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    EmptyRange,
    RangeExit,
    MaxPoints,
    StepUnderflow,
    CorrectorFailure(String),
}

#[derive(Debug, Clone)]
pub struct Branch {
    pub points: Vec<SolutionPoint>,
    pub termination: Termination,
}

impl Branch {
    /// Indices `i` where the parameter direction flips between points
    /// `i - 1` and `i`.
    pub fn folds(&self) -> Vec<usize> {
        let sign = |p: &SolutionPoint| p.tangent[p.tangent.len() - 1].signum();
        (1..self.points.len())
            .filter(|&i| sign(&self.points[i]) != sign(&self.points[i - 1]))
            .collect()
    }
}

/// Trace a branch from `seed`. A seed that fails to converge is an error;
/// failures further along end the branch with a [`Termination`] reason.
pub fn run_branch<S: ContinuationSystem + ?Sized>(
    system: &mut S,
    seed: &DVector<f64>,
    p: f64,
    config: &BranchConfig,
) -> Result<Branch> {
    if !(config.p_min < config.p_max) {
        return Ok(Branch {
            points: Vec::new(),
            termination: Termination::EmptyRange,
        });
    }
    let first = newton_solve(system, seed, p, config.corrector_iterations)?;
    let mut lin = first.linearization;
    let mut previous = bootstrap_tangent(system.dim(), config.direction);
    let tangent = tangent_predict(&lin, &previous)?;
    let point = SolutionPoint {
        chi: first.chi,
        p,
        tangent,
        residual_norm: first.residual_norm,
        iterations: first.iterations,
        step: 0.0,
        orthogonality: 0.0,
    };
    system.accept(&point)?;
    let mut points = vec![point];
    let mut step = config.initial_step.clamp(config.min_step, config.max_step);

    let termination = loop {
        if points.len() >= config.max_points {
            break Termination::MaxPoints;
        }
        let last = points.last().unwrap();
        let tangent = match tangent_predict(&lin, &previous) {
            Ok(t) => t,
            Err(e) => break Termination::CorrectorFailure(e.to_string()),
        };
        let m = last.chi.len();
        let mut outcome = None;
        let mut failure = String::new();
        for _ in 0..=config.max_retries {
            let predicted = &last.chi + tangent.rows(0, m) * step;
            let p_pred = last.p + tangent[m] * step;
            match orthogonal_correct(system, &predicted, p_pred, &tangent, config.corrector_iterations) {
                Ok(c) => {
                    outcome = Some(c);
                    break;
                }
                Err(e) => failure = e.to_string(),
            }
            step *= config.shrink;
            if step < config.min_step {
                break;
            }
        }
        let Some(c) = outcome else {
            break if step < config.min_step {
                Termination::StepUnderflow
            } else {
                Termination::CorrectorFailure(failure)
            };
        };
        if c.p < config.p_min || c.p > config.p_max {
            break Termination::RangeExit;
        }
        let used = step;
        if c.iterations <= config.fast_iterations {
            step *= config.grow;
        } else if c.iterations > config.slow_iterations {
            step *= config.shrink;
        }
        step = step.clamp(config.min_step, config.max_step);
        // tangent at the new point, oriented along the one just used
        let new_tangent = match tangent_predict(&c.linearization, &tangent) {
            Ok(t) => t,
            Err(e) => break Termination::CorrectorFailure(e.to_string()),
        };
        let point = SolutionPoint {
            chi: c.chi,
            p: c.p,
            tangent: new_tangent,
            residual_norm: c.residual_norm,
            iterations: c.iterations,
            step: used,
            orthogonality: c.orthogonality,
        };
        if let Err(e) = system.accept(&point) {
            break Termination::CorrectorFailure(e.to_string());
        }
        previous = tangent;
        lin = c.linearization;
        points.push(point);
    };
    Ok(Branch {
        points,
        termination,
    })
}

/// Which equations fill the dimension deficit of the shooting residual.
///
/// Indices are zero-based base-frequency indices (0 is `ω_1`).
#[derive(Debug, Clone, PartialEq)]
pub struct Constraints {
    /// Base frequencies that are unknowns.
    pub released: Vec<usize>,
    /// Phase conditions; index 0 uses the flow direction, `i ≥ 1` the
    /// derivative along `φ_{i+1}`.
    pub phase: Vec<usize>,
    /// Conditions `ω_i - ρ_i ω_1 = 0` as `(i, ρ_i)`.
    pub ratios: Vec<(usize, f64)>,
}

/// The three ways of closing the system, by what is forced and what is
/// continued.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeficitCase {
    /// Forced system continued in `ω_1`; the other forcing frequencies
    /// follow by fixed ratios.
    ForcingFrequency,
    /// Forced system continued in a model parameter.
    ModelParameter,
    /// Autonomous system: every base frequency is unknown.
    Autonomous,
}

impl Constraints {
    /// Constraints for a case, with ratio targets taken from `freq`.
    pub fn for_case(case: DeficitCase, freq: &FrequencyVector) -> Result<Self> {
        let (d, e) = (freq.dim(), freq.forced());
        let rho = freq.rho();
        match case {
            DeficitCase::ForcingFrequency => {
                if e == 0 {
                    return Err(Error::Config(
                        "continuation in the forcing frequency needs a forced system (e > 0)".into(),
                    ));
                }
                Ok(Self {
                    released: (1..d).collect(),
                    phase: (e..d).collect(),
                    ratios: (1..e).map(|i| (i, rho[i - 1])).collect(),
                })
            }
            DeficitCase::ModelParameter => {
                if e == 0 {
                    return Err(Error::Config(
                        "an unforced system must use the autonomous configuration".into(),
                    ));
                }
                Ok(Self {
                    released: (e..d).collect(),
                    phase: (e..d).collect(),
                    ratios: Vec::new(),
                })
            }
            DeficitCase::Autonomous => {
                if e != 0 {
                    return Err(Error::Config(format!(
                        "the autonomous configuration requires e = 0, got e = {e}"
                    )));
                }
                Ok(Self {
                    released: (0..d).collect(),
                    phase: (0..d).collect(),
                    ratios: Vec::new(),
                })
            }
        }
    }

    /// Constraints for a single solve at fixed forcing frequencies.
    pub fn fixed(freq: &FrequencyVector) -> Self {
        let case = if freq.forced() == 0 {
            DeficitCase::Autonomous
        } else {
            DeficitCase::ModelParameter
        };
        Self::for_case(case, freq).expect("case matches the forcing")
    }

    pub fn count(&self) -> usize {
        self.phase.len() + self.ratios.len()
    }
}

/// Phase-condition rows, each normalized to unit length. A row that
/// vanishes (e.g. a torus without dependence on that angle) is left at zero
/// and flagged.
#[derive(Debug, Clone)]
pub struct PhaseRows {
    pub rows: DMatrix<f64>,
    pub degenerate: Vec<bool>,
}

/// Build phase-condition rows at `coeffs`.
pub fn phase_condition_rows(
    model: &SecondOrderModel,
    coeffs: &TorusCoefficients,
    scheme: &HarmonicScheme,
    indices: &[usize],
) -> PhaseRows {
    let len = coeffs.z0.len();
    let mut rows = DMatrix::zeros(indices.len(), len);
    let mut degenerate = Vec::with_capacity(indices.len());
    for (r, &i) in indices.iter().enumerate() {
        let row = if i == 0 {
            flow_direction(model, coeffs, scheme)
        } else {
            scheme.apply_blockwise(scheme.nabla(i), &coeffs.z0)
        };
        let norm = row.norm();
        let flat = !(norm > 1e-14 * coeffs.z0.norm().max(1.0));
        if !flat {
            rows.set_row(r, &(row / norm).transpose());
        }
        degenerate.push(flat);
    }
    PhaseRows { rows, degenerate }
}

/// Coefficients of `∂z/∂φ_1` at the section, from the equation of motion
/// sampled on the grid.
fn flow_direction(model: &SecondOrderModel, coeffs: &TorusCoefficients, scheme: &HarmonicScheme) -> DVector<f64> {
    let n = model.dofs();
    let samples = scheme.samples();
    let w = coeffs.freq.base();
    let section = scheme.to_samples(&coeffs.z0);
    let mut deriv = DVector::zeros(2 * n * samples);
    let mass_w = model.mass() * (w * w);
    let lu = mass_w.lu();
    for s in 0..samples {
        let z = sample_state(&section, samples, s);
        let q = z.rows(0, n).into_owned();
        let u = z.rows(n, n).into_owned();
        let phi = scheme.sample_point(s);
        let phases: Vec<f64> = (0..model.forced_frequencies())
            .map(|j| if j == 0 { 0.0 } else { phi[j - 1] })
            .collect();
        let nl = model.nonlinear_force(&q, &(&u * w));
        let rhs = model.force_distribution() * (model.excitation(&phases) - nl.force)
            - model.damping() * &u * w
            - model.stiffness() * &q;
        let a = lu.solve(&rhs).unwrap_or_else(|| DVector::zeros(n));
        for i in 0..n {
            deriv[i * samples + s] = u[i];
            deriv[(n + i) * samples + s] = a[i];
        }
    }
    scheme.to_coefficients(&deriv)
}

/// Rows of `ω_i - ρ_i ω_1 = 0` over the full frequency vector.
pub fn frequency_condition_rows(dim: usize, ratios: &[(usize, f64)]) -> DMatrix<f64> {
    let mut rows = DMatrix::zeros(ratios.len(), dim);
    for (r, &(i, rho)) in ratios.iter().enumerate() {
        rows[(r, 0)] = -rho;
        rows[(r, i)] = 1.0;
    }
    rows
}

pub type ModelFactory = Arc<dyn Fn(f64) -> Result<SecondOrderModel> + Send + Sync>;

/// Shooting residual closed by phase and frequency conditions, as a
/// continuation system in `χ = [Z(0); released ω]`.
///
/// Without a model factory the parameter is `ω_1`; with one it is the
/// factory argument and `ω_1` stays at its template value unless released.
pub struct ShootingSystem<'a> {
    model: SecondOrderModel,
    model_parameter: Option<f64>,
    factory: Option<ModelFactory>,
    scheme: &'a HarmonicScheme,
    steps: usize,
    template: FrequencyVector,
    constraints: Constraints,
    pool: &'a WorkerPool,
    epsilon: f64,
    fd_step: f64,
    last: Option<(ShootingEvaluation, TorusCoefficients)>,
}

impl<'a> ShootingSystem<'a> {
    pub fn new(
        model: SecondOrderModel,
        scheme: &'a HarmonicScheme,
        steps: usize,
        template: FrequencyVector,
        constraints: Constraints,
        pool: &'a WorkerPool,
    ) -> Result<Self> {
        if scheme.torus_dim() != template.dim() {
            return Err(Error::DimensionMismatch(format!(
                "scheme describes a {}-torus but {} base frequencies were given",
                scheme.torus_dim(),
                template.dim()
            )));
        }
        let d = template.dim();
        if constraints.released.iter().chain(&constraints.phase).any(|&i| i >= d)
            || constraints.ratios.iter().any(|&(i, _)| i == 0 || i >= d)
        {
            return Err(Error::Config("constraint index outside the frequency vector".into()));
        }
        if constraints.count() != constraints.released.len() {
            return Err(Error::Config(format!(
                "{} released frequencies but {} phase/ratio conditions",
                constraints.released.len(),
                constraints.count()
            )));
        }
        Ok(Self {
            model,
            model_parameter: None,
            factory: None,
            scheme,
            steps,
            template,
            constraints,
            pool,
            epsilon: 1e-8,
            fd_step: 1e-6,
            last: None,
        })
    }

    /// Continue in a model parameter; `factory(p)` builds the model.
    pub fn with_model_parameter(mut self, factory: ModelFactory) -> Self {
        self.factory = Some(factory);
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn constraints(&self) -> &Constraints {
        &self.constraints
    }

    pub fn scheme(&self) -> &HarmonicScheme {
        self.scheme
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn pool(&self) -> &WorkerPool {
        self.pool
    }

    fn coefficient_len(&self) -> usize {
        2 * self.model.dofs() * self.scheme.coefficients()
    }

    pub fn chi_from(&self, coeffs: &TorusCoefficients) -> DVector<f64> {
        let len = coeffs.z0.len();
        let mut chi = DVector::zeros(len + self.constraints.released.len());
        chi.rows_mut(0, len).copy_from(&coeffs.z0);
        for (k, &i) in self.constraints.released.iter().enumerate() {
            chi[len + k] = coeffs.freq.get(i);
        }
        chi
    }

    pub fn frequencies(&self, chi: &DVector<f64>, p: f64) -> Result<FrequencyVector> {
        let mut f = self.template.clone();
        if self.factory.is_none() && !self.constraints.released.contains(&0) {
            f.set(0, p)?;
        }
        let len = self.coefficient_len();
        for (k, &i) in self.constraints.released.iter().enumerate() {
            f.set(i, chi[len + k])?;
        }
        Ok(f)
    }

    pub fn coefficients(&self, chi: &DVector<f64>, p: f64) -> Result<TorusCoefficients> {
        let len = self.coefficient_len();
        TorusCoefficients::new(chi.rows(0, len).into_owned(), self.frequencies(chi, p)?, self.scheme)
    }

    /// Model at parameter `p`.
    pub fn model_at(&mut self, p: f64) -> Result<&SecondOrderModel> {
        if let Some(factory) = &self.factory {
            if self.model_parameter != Some(p) {
                self.model = factory(p)?;
                self.model_parameter = Some(p);
            }
        }
        Ok(&self.model)
    }

    /// Evaluation and coefficients of the latest linearization.
    pub fn last_evaluation(&self) -> Option<&(ShootingEvaluation, TorusCoefficients)> {
        self.last.as_ref()
    }

    pub fn take_last_evaluation(&mut self) -> Option<ShootingEvaluation> {
        self.last.take().map(|(e, _)| e)
    }

    fn residual_at(&mut self, coeffs: &TorusCoefficients, p: f64) -> Result<DVector<f64>> {
        let (scheme, steps, pool) = (self.scheme, self.steps, self.pool);
        let model = self.model_at(p)?;
        Ok(evaluate(model, coeffs, scheme, steps, pool)?.residual)
    }
}

impl ContinuationSystem for ShootingSystem<'_> {
    fn dim(&self) -> usize {
        self.coefficient_len() + self.constraints.released.len()
    }

    fn linearize(&mut self, chi: &DVector<f64>, p: f64) -> Result<Linearization> {
        let coeffs = self.coefficients(chi, p)?;
        let (scheme, steps, pool) = (self.scheme, self.steps, self.pool);
        let ev = evaluate(self.model_at(p)?, &coeffs, scheme, steps, pool)?;
        let len = self.coefficient_len();
        let dim = self.dim();
        let released = &self.constraints.released;
        let d = coeffs.freq.dim();

        let mut residual = DVector::zeros(dim);
        let mut jac_chi = DMatrix::zeros(dim, dim);
        let mut jac_p = DVector::zeros(dim);
        residual.rows_mut(0, len).copy_from(&ev.residual);
        jac_chi.view_mut((0, 0), (len, len)).copy_from(&ev.jac_z0);
        for (k, &i) in released.iter().enumerate() {
            jac_chi.view_mut((0, len + k), (len, 1)).copy_from(&ev.jac_omega.column(i));
        }

        let phase = phase_condition_rows(&self.model, &coeffs, scheme, &self.constraints.phase);
        let mut r = len;
        for row in phase.rows.row_iter() {
            jac_chi.view_mut((r, 0), (1, len)).copy_from(&row);
            r += 1;
        }

        let omega_is_parameter = self.factory.is_none();
        let freq_rows = frequency_condition_rows(d, &self.constraints.ratios);
        let omega = DVector::from_row_slice(coeffs.freq.values());
        for row in freq_rows.row_iter() {
            residual[r] = row.dot(&omega.transpose());
            for (k, &i) in released.iter().enumerate() {
                jac_chi[(r, len + k)] = row[i];
            }
            if omega_is_parameter && !released.contains(&0) {
                jac_p[r] = row[0];
            }
            r += 1;
        }

        if omega_is_parameter {
            if !released.contains(&0) {
                jac_p.rows_mut(0, len).copy_from(&ev.jac_omega.column(0));
            }
        } else {
            let h = self.fd_step * p.abs().max(1.0);
            let plus = self.residual_at(&coeffs, p + h)?;
            let minus = self.residual_at(&coeffs, p - h)?;
            jac_p.rows_mut(0, len).copy_from(&((plus - minus) / (2.0 * h)));
            self.model_at(p)?;
        }
        self.last = Some((ev, coeffs));
        Ok(Linearization {
            residual,
            jac_chi,
            jac_p,
        })
    }

    fn tolerance(&self, chi: &DVector<f64>) -> f64 {
        let len = self.coefficient_len();
        self.epsilon * chi.rows(0, len).norm().max(1.0)
    }
}

/// Seed for a quasi-periodic branch emanating from a periodic orbit that
/// loses stability through a complex pair of Floquet multipliers.
///
/// `periodic` holds the `d = 1` section state and `monodromy` the matching
/// 2n × 2n block. The seed lifts the orbit onto `scheme` (which must
/// contain the first harmonic in `φ_2`) and adds `amplitude · Re(v e^{iφ_2})`
/// along the unit eigenvector `v`; `ω_2 = θ ω_1 / 2π` with `θ` the
/// multiplier's angle.
pub fn neimark_sacker_seed(
    periodic: &TorusCoefficients,
    monodromy: &DMatrix<f64>,
    scheme: &HarmonicScheme,
    amplitude: f64,
) -> Result<TorusCoefficients> {
    if scheme.torus_dim() != 2 {
        return Err(Error::InvalidScheme("the seed needs a 2-torus scheme".into()));
    }
    let (cos_slot, sin_sign) = scheme
        .harmonic_slot(&[1])
        .ok_or_else(|| Error::InvalidScheme("the scheme must contain harmonic 1".into()))?;
    let states = periodic.z0.len();
    let eig = monodromy.complex_eigenvalues();
    let (mu, _) = eig
        .iter()
        .enumerate()
        .filter(|(_, m)| m.im > 1e-10)
        .map(|(i, m)| (*m, i))
        .max_by(|a, b| a.0.norm().total_cmp(&b.0.norm()))
        .ok_or_else(|| Error::Config("monodromy matrix has no complex multiplier pair".into()))?;
    let v = complex_eigenvector(monodromy, mu)?;
    let theta = mu.arg();
    let w1 = periodic.freq.base();
    let freq = FrequencyVector::new(vec![w1, theta * w1 / std::f64::consts::TAU], periodic.freq.forced())?;
    let u = scheme.coefficients();
    let mut z0 = DVector::zeros(states * u);
    for i in 0..states {
        z0[i * u] = periodic.z0[i];
        z0[i * u + cos_slot] = amplitude * v[i].re;
        z0[i * u + cos_slot + 1] = -amplitude * v[i].im * sin_sign;
    }
    TorusCoefficients::new(z0, freq, scheme)
}

/// Unit eigenvector for a (simple) eigenvalue by inverse iteration.
fn complex_eigenvector(a: &DMatrix<f64>, mu: Complex<f64>) -> Result<DVector<Complex<f64>>> {
    let n = a.nrows();
    let shift = mu + Complex::new(1e-10 * mu.norm().max(1.0), 0.0);
    let shifted = a.map(|x| Complex::new(x, 0.0)) - DMatrix::from_diagonal_element(n, n, shift);
    let lu = shifted.lu();
    let mut v = DVector::from_element(n, Complex::new(1.0, 0.5));
    for _ in 0..4 {
        v = lu
            .solve(&v)
            .ok_or_else(|| Error::Singular("shifted monodromy matrix".into()))?;
        let norm = v.norm();
        v /= Complex::new(norm, 0.0);
    }
    // fix the phase so the largest component is real and positive
    let (imax, _) = v
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
        .unwrap();
    let phase = v[imax] / Complex::new(v[imax].norm(), 0.0);
    Ok(v.map(|c| c / phase))
}
