//! Average-acceleration Newmark integration of the trajectory bundle over
//! one base period, with exact sensitivities.
//!
//! Trajectories are written in the first hyper-time `φ_1 ∈ [0, 2π]`, so the
//! equation of motion reads
//! `ω_1² M q'' + ω_1 D q' + K q + Θ (f_nl(q, ω_1 q') - e) = 0` with primes
//! denoting `d/dφ_1`. The internal velocity `u = q'` converts to physical
//! velocity as `ω_1 u`. Excitation phases are `φ_1` for the first base
//! frequency and `φ̃_j + ρ_j φ_1` for the others.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::harmonics::HarmonicScheme;
use crate::model::{FrequencyVector, SecondOrderModel};

/// Inner Newton settings for the implicit step equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewmarkOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for NewmarkOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-10,
            max_iterations: 25,
        }
    }
}

/// Result of integrating one trajectory over `φ_1 ∈ [0, 2π]`.
#[derive(Debug, Clone)]
pub struct SampleTrajectory {
    /// Terminal state `[q; u]`.
    pub end: DVector<f64>,
    /// `∂ end / ∂ start`, 2n × 2n, in `(q, u)` coordinates.
    pub psi: DMatrix<f64>,
    /// `∂ end / ∂ω_1` with the rotation numbers held fixed.
    pub d_omega1: DVector<f64>,
    /// `∂ end / ∂ρ_j` for each forced base frequency `j ≥ 2`.
    pub d_rho: Vec<DVector<f64>>,
    /// Total inner Newton iterations over all steps.
    pub iterations: usize,
    /// Largest converged step residual relative to its scale.
    pub worst_residual: f64,
    /// Largest `|q_i|` over all nodes, per DOF.
    pub peak: DVector<f64>,
}

/// Node values of a recorded trajectory, `φ_1 = k · 2π / steps`.
#[derive(Debug, Clone)]
pub struct RecordedTrajectory {
    pub q: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub a: Vec<DVector<f64>>,
}

struct Forcing<'a> {
    model: &'a SecondOrderModel,
    phi_tilde: &'a [f64],
    rho: Vec<f64>,
    forced: usize,
}

impl Forcing<'_> {
    fn phases(&self, phi1: f64) -> Vec<f64> {
        (0..self.forced)
            .map(|j| {
                if j == 0 {
                    phi1
                } else {
                    self.phi_tilde[j - 1] + self.rho[j - 1] * phi1
                }
            })
            .collect()
    }

    /// Θ e at `φ_1`.
    fn load(&self, phi1: f64) -> DVector<f64> {
        self.model.force_distribution() * self.model.excitation(&self.phases(phi1))
    }

    /// `∂(Θ e)/∂ρ_j` at `φ_1`, for forced index `j ≥ 1`.
    fn load_rho(&self, phi1: f64, j: usize) -> DVector<f64> {
        self.model.force_distribution()
            * self.model.excitation_phase_derivative(&self.phases(phi1), j)
            * phi1
    }
}

struct Integration {
    end_q: DVector<f64>,
    end_u: DVector<f64>,
    sens: Option<(DMatrix<f64>, DMatrix<f64>)>,
    record: Option<RecordedTrajectory>,
    iterations: usize,
    worst_residual: f64,
    peak: DVector<f64>,
}

fn check_inputs(
    model: &SecondOrderModel,
    z0: &DVector<f64>,
    freq: &FrequencyVector,
    phi_tilde: &[f64],
    steps: usize,
) -> Result<()> {
    let n = model.dofs();
    if z0.len() != 2 * n {
        return Err(Error::DimensionMismatch(format!(
            "initial state has length {}, expected {}",
            z0.len(),
            2 * n
        )));
    }
    if steps < 2 {
        return Err(Error::Config(format!("at least 2 steps per period required, got {steps}")));
    }
    if model.forced_frequencies() > freq.forced() {
        return Err(Error::Config(format!(
            "model forcing uses {} base frequencies but only {} are declared forced",
            model.forced_frequencies(),
            freq.forced()
        )));
    }
    if phi_tilde.len() + 1 != freq.dim() {
        return Err(Error::DimensionMismatch(format!(
            "section point has {} angles, torus dimension is {}",
            phi_tilde.len(),
            freq.dim()
        )));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run(
    model: &SecondOrderModel,
    z0: &DVector<f64>,
    freq: &FrequencyVector,
    phi_tilde: &[f64],
    steps: usize,
    options: NewmarkOptions,
    sample: usize,
    with_sensitivities: bool,
    with_record: bool,
) -> Result<Integration> {
    check_inputs(model, z0, freq, phi_tilde, steps)?;
    let n = model.dofs();
    let w = freq.base();
    let forcing = Forcing {
        model,
        phi_tilde,
        rho: freq.rho(),
        forced: model.forced_frequencies(),
    };
    let extra_rho = forcing.forced.saturating_sub(1);
    let cols = 2 * n + 1 + extra_rho;
    let theta = model.force_distribution();
    let mass_w = model.mass() * (w * w);
    let damp_w = model.damping() * w;

    let h = TAU / steps as f64;
    let c0 = 4.0 / (h * h);
    let c1 = 4.0 / h;
    let c2 = 2.0 / h;

    let mut q = z0.rows(0, n).into_owned();
    let mut u = z0.rows(n, n).into_owned();

    // initial acceleration from the equation of motion at φ_1 = 0
    let nl = model.nonlinear_force(&q, &(&u * w));
    let rhs0 = forcing.load(0.0) - theta * &nl.force - &damp_w * &u - model.stiffness() * &q;
    let mass_lu = mass_w.clone().lu();
    let mut a = mass_lu
        .solve(&rhs0)
        .ok_or_else(|| Error::Singular("mass matrix".into()))?;

    let mut sens = if with_sensitivities {
        let mut sq = DMatrix::zeros(n, cols);
        let mut su = DMatrix::zeros(n, cols);
        let mut sa_rhs = DMatrix::zeros(n, cols);
        for i in 0..n {
            sq[(i, i)] = 1.0;
            su[(i, n + i)] = 1.0;
        }
        // ω_1² M A_0 = -(K + Θ F_q) Q_0 - ω_1 (D + Θ F_v) U_0 - ∂G/∂ω_1
        let kq = model.stiffness() + theta * &nl.d_q;
        let cv = &damp_w + theta * &nl.d_qdot * w;
        sa_rhs.columns_mut(0, n).copy_from(&(-kq));
        sa_rhs.columns_mut(n, n).copy_from(&(-cv));
        let dw = model.mass() * &a * (2.0 * w) + model.damping() * &u + theta * &nl.d_qdot * &u;
        sa_rhs.set_column(2 * n, &(-dw));
        let sa = mass_lu
            .solve(&sa_rhs)
            .ok_or_else(|| Error::Singular("mass matrix".into()))?;
        Some((sq, su, sa))
    } else {
        None
    };

    let mut record = with_record.then(|| RecordedTrajectory {
        q: vec![q.clone()],
        u: vec![u.clone()],
        a: vec![a.clone()],
    });

    let linear_part = &mass_w * c0 + &damp_w * c2 + model.stiffness();
    let velocity_dependent = model.velocity_dependent();
    let nonlinear = !model.is_linear();
    let mut total_iterations = 0;
    let mut worst: f64 = 0.0;
    let mut peak = q.abs();

    for k in 0..steps {
        let phi_next = (k + 1) as f64 * h;
        let load = forcing.load(phi_next);
        // terms of a' and u' that do not depend on q'
        let a_base = -(&u * c1) - &a;
        let u_base = -&u;
        let mut qn = &q + &u * h + &a * (0.5 * h * h);

        let hist = &mass_w * (&a_base - &q * c0) + &damp_w * (&u_base - &q * c2);
        let scale = 1.0 + load.norm() + hist.norm() + (model.stiffness() * &q).norm();
        let mut converged = false;
        let mut residual_norm = f64::INFINITY;
        let mut nl_eval = None;
        let mut iterations = 0;
        while iterations < options.max_iterations {
            let an = (&qn - &q) * c0 + &a_base;
            let un = (&qn - &q) * c2 + &u_base;
            let nl = model.nonlinear_force(&qn, &(&un * w));
            let g = &mass_w * &an + &damp_w * &un + model.stiffness() * &qn + theta * &nl.force
                - &load;
            residual_norm = g.norm();
            if !residual_norm.is_finite() {
                return Err(Error::NotFinite(format!("Newmark step {k} of sample {sample}")));
            }
            if residual_norm <= options.tolerance * scale && iterations > 0 {
                converged = true;
                nl_eval = Some(nl);
                break;
            }
            let mut jac = linear_part.clone();
            if nonlinear {
                jac += theta * &nl.d_q;
                if velocity_dependent {
                    jac += theta * &nl.d_qdot * (w * c2);
                }
            }
            let delta = jac
                .lu()
                .solve(&(-g))
                .ok_or_else(|| Error::Singular(format!("effective matrix at step {k}")))?;
            qn += &delta;
            iterations += 1;
        }
        if !converged {
            return Err(Error::StepFailure {
                sample,
                step: k,
                iterations,
                residual: residual_norm,
            });
        }
        total_iterations += iterations;
        worst = worst.max(residual_norm / scale);
        let nl = nl_eval.unwrap();

        let an = (&qn - &q) * c0 + &a_base;
        let un = (&qn - &q) * c2 + &u_base;

        if let Some((sq, su, sa)) = sens.as_mut() {
            let cv = &damp_w + theta * &nl.d_qdot * w;
            let mut jac = &linear_part + theta * &nl.d_q;
            if velocity_dependent {
                jac += theta * &nl.d_qdot * (w * c2);
            }
            let mut rhs = &mass_w * (&*sq * c0 + &*su * c1 + &*sa) + &cv * (&*sq * c2 + &*su);
            let dw = model.mass() * &an * (2.0 * w) + model.damping() * &un + theta * &nl.d_qdot * &un;
            let mut col = rhs.column_mut(2 * n);
            col -= &dw;
            for j in 1..=extra_rho {
                let mut col = rhs.column_mut(2 * n + j);
                col += forcing.load_rho(phi_next, j);
            }
            let sq_next = jac
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Singular(format!("effective matrix at step {k}")))?;
            let dq = &sq_next - &*sq;
            let su_next = &dq * c2 - &*su;
            let sa_next = &dq * c0 - &*su * c1 - &*sa;
            *sq = sq_next;
            *su = su_next;
            *sa = sa_next;
        }

        q = qn;
        u = un;
        a = an;
        for i in 0..n {
            peak[i] = peak[i].max(q[i].abs());
        }
        if let Some(rec) = record.as_mut() {
            rec.q.push(q.clone());
            rec.u.push(u.clone());
            rec.a.push(a.clone());
        }
    }

    Ok(Integration {
        end_q: q,
        end_u: u,
        sens: sens.map(|(sq, su, _)| (sq, su)),
        record,
        iterations: total_iterations,
        worst_residual: worst,
        peak,
    })
}

/// Integrate one trajectory from `z0 = [q_0; u_0]` over one base period.
pub fn newmark_integrate(
    model: &SecondOrderModel,
    z0: &DVector<f64>,
    freq: &FrequencyVector,
    phi_tilde: &[f64],
    steps: usize,
) -> Result<SampleTrajectory> {
    integrate_sample(model, z0, freq, phi_tilde, steps, NewmarkOptions::default(), 0)
}

pub fn integrate_sample(
    model: &SecondOrderModel,
    z0: &DVector<f64>,
    freq: &FrequencyVector,
    phi_tilde: &[f64],
    steps: usize,
    options: NewmarkOptions,
    sample: usize,
) -> Result<SampleTrajectory> {
    let out = run(model, z0, freq, phi_tilde, steps, options, sample, true, false)?;
    let n = model.dofs();
    let (sq, su) = out.sens.unwrap();
    let mut end = DVector::zeros(2 * n);
    end.rows_mut(0, n).copy_from(&out.end_q);
    end.rows_mut(n, n).copy_from(&out.end_u);
    let column = |c: usize| {
        let mut v = DVector::zeros(2 * n);
        v.rows_mut(0, n).copy_from(&sq.column(c));
        v.rows_mut(n, n).copy_from(&su.column(c));
        v
    };
    let mut psi = DMatrix::zeros(2 * n, 2 * n);
    for c in 0..2 * n {
        psi.set_column(c, &column(c));
    }
    let d_rho = (2 * n + 1..sq.ncols()).map(column).collect();
    Ok(SampleTrajectory {
        end,
        psi,
        d_omega1: column(2 * n),
        d_rho,
        iterations: out.iterations,
        worst_residual: out.worst_residual,
        peak: out.peak,
    })
}

/// Integrate without sensitivities and keep every node.
pub fn newmark_record(
    model: &SecondOrderModel,
    z0: &DVector<f64>,
    freq: &FrequencyVector,
    phi_tilde: &[f64],
    steps: usize,
) -> Result<RecordedTrajectory> {
    let out = run(
        model,
        z0,
        freq,
        phi_tilde,
        steps,
        NewmarkOptions::default(),
        0,
        false,
        true,
    )?;
    Ok(out.record.unwrap())
}

/// Fixed-size worker pool for the trajectory batch.
#[derive(Debug)]
pub struct WorkerPool {
    workers: usize,
    pool: Option<rayon::ThreadPool>,
}

impl WorkerPool {
    pub fn new(workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(Error::Config("worker count must be at least 1".into()));
        }
        let pool = if workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Self { workers, pool })
    }

    pub fn serial() -> Self {
        Self {
            workers: 1,
            pool: None,
        }
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// Evaluate `f(0..count)`; results come back in index order.
    pub fn map<T, F>(&self, count: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match &self.pool {
            Some(pool) => pool.install(|| (0..count).into_par_iter().map(&f).collect()),
            None => (0..count).map(f).collect(),
        }
    }
}

/// Terminal states and sensitivities of the whole trajectory bundle, all in
/// state-major layout (`index = state · S̃ + sample`).
#[derive(Debug, Clone)]
pub struct TrajectoryBatchResult {
    pub samples: usize,
    pub terminal: DVector<f64>,
    pub psi: Vec<DMatrix<f64>>,
    pub d_omega1: DVector<f64>,
    pub d_rho: Vec<DVector<f64>>,
    pub iterations: Vec<usize>,
    pub worst_residual: Vec<f64>,
    pub peak: DVector<f64>,
}

/// Gather sample `s` of a state-major vector.
pub fn sample_state(v: &DVector<f64>, samples: usize, s: usize) -> DVector<f64> {
    DVector::from_fn(v.len() / samples, |i, _| v[i * samples + s])
}

fn scatter(target: &mut DVector<f64>, samples: usize, s: usize, value: &DVector<f64>) {
    for (i, x) in value.iter().enumerate() {
        target[i * samples + s] = *x;
    }
}

/// Integrate every grid sample of the section in parallel.
pub fn integrate_batch(
    model: &SecondOrderModel,
    section: &DVector<f64>,
    freq: &FrequencyVector,
    scheme: &HarmonicScheme,
    steps: usize,
    pool: &WorkerPool,
) -> Result<TrajectoryBatchResult> {
    let samples = scheme.samples();
    let n = model.dofs();
    if section.len() != 2 * n * samples {
        return Err(Error::DimensionMismatch(format!(
            "sampled section has length {}, expected {}",
            section.len(),
            2 * n * samples
        )));
    }
    if scheme.torus_dim() != freq.dim() {
        return Err(Error::DimensionMismatch(format!(
            "scheme describes a {}-torus but {} base frequencies were given",
            scheme.torus_dim(),
            freq.dim()
        )));
    }
    let results = pool.map(samples, |s| {
        let z0 = sample_state(section, samples, s);
        let phi = scheme.sample_point(s);
        integrate_sample(model, &z0, freq, &phi, steps, NewmarkOptions::default(), s)
    });
    let mut out = TrajectoryBatchResult {
        samples,
        terminal: DVector::zeros(2 * n * samples),
        psi: Vec::with_capacity(samples),
        d_omega1: DVector::zeros(2 * n * samples),
        d_rho: Vec::new(),
        iterations: Vec::with_capacity(samples),
        worst_residual: Vec::with_capacity(samples),
        peak: DVector::zeros(n),
    };
    for (s, r) in results.into_iter().enumerate() {
        let traj = r?;
        if s == 0 {
            out.d_rho = vec![DVector::zeros(2 * n * samples); traj.d_rho.len()];
        }
        scatter(&mut out.terminal, samples, s, &traj.end);
        scatter(&mut out.d_omega1, samples, s, &traj.d_omega1);
        for (j, d) in traj.d_rho.iter().enumerate() {
            scatter(&mut out.d_rho[j], samples, s, d);
        }
        for i in 0..n {
            out.peak[i] = out.peak[i].max(traj.peak[i]);
        }
        out.psi.push(traj.psi);
        out.iterations.push(traj.iterations);
        out.worst_residual.push(traj.worst_residual);
    }
    Ok(out)
}
