//! Independent reference computations: an adaptive Dormand–Prince
//! integrator on the first-order form, closed-form linear responses,
//! classical periodic shooting, and spectra of time series and tori.
//!
//! Nothing here goes through the Newmark path; only the model itself is
//! shared.

use std::f64::consts::TAU;
use std::io::{self, Write};

use nalgebra::{Complex, DMatrix, DVector};
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::harmonics::HarmonicScheme;
use crate::model::{FrequencyVector, SecondOrderModel};
use crate::shooting::{TorusCoefficients, TorusSurface};

/// Dense solution of `x' = f(x, t)`; node derivatives are kept for cubic
/// Hermite interpolation.
#[derive(Debug, Clone)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub derivatives: Vec<DVector<f64>>,
    pub rtol: f64,
    pub atol: f64,
}

impl TimeSeries {
    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// State at `t` (clamped to the covered span).
    pub fn interpolate(&self, t: f64) -> DVector<f64> {
        let t = t.clamp(self.start(), self.end());
        let k = match self.times.binary_search_by(|x| x.total_cmp(&t)) {
            Ok(i) => return self.states[i].clone(),
            Err(i) => i.max(1) - 1,
        };
        let k = k.min(self.times.len() - 2);
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        &self.states[k] * h00
            + &self.derivatives[k] * (h10 * h)
            + &self.states[k + 1] * h01
            + &self.derivatives[k + 1] * (h11 * h)
    }

    /// Component `index` on a uniform grid `t0 + k·dt`, k < count.
    pub fn resample(&self, index: usize, t0: f64, dt: f64, count: usize) -> Vec<f64> {
        (0..count).map(|k| self.interpolate(t0 + k as f64 * dt)[index]).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let m = self.states[0].len();
        write!(out, "t")?;
        for i in 0..m {
            write!(out, ",x{i}")?;
        }
        writeln!(out)?;
        for (t, x) in self.times.iter().zip(&self.states) {
            write!(out, "{t:e}")?;
            for v in x.iter() {
                write!(out, ",{v:e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
// difference between the 5th- and 4th-order weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Adaptive Dormand–Prince 5(4) integration of a general right-hand side.
pub fn integrate_rhs<F>(rhs: F, x0: &DVector<f64>, span: (f64, f64), rtol: f64, atol: f64) -> Result<TimeSeries>
where
    F: Fn(&DVector<f64>, f64) -> Result<DVector<f64>>,
{
    if !(rtol > 0.0 && atol > 0.0) {
        return Err(Error::Config(format!("tolerances must be positive (rtol {rtol}, atol {atol})")));
    }
    let (t0, t1) = span;
    if !(t1 > t0) {
        return Err(Error::Config(format!("empty time span [{t0}, {t1}]")));
    }
    let scale = |a: &DVector<f64>, b: &DVector<f64>, i: usize| atol + rtol * a[i].abs().max(b[i].abs());
    let mut t = t0;
    let mut x = x0.clone();
    let mut f = rhs(&x, t)?;
    let mut series = TimeSeries {
        times: vec![t],
        states: vec![x.clone()],
        derivatives: vec![f.clone()],
        rtol,
        atol,
    };
    let m = x.len();
    let d0 = (0..m).map(|i| (x[i] / scale(&x, &x, i)).powi(2)).sum::<f64>().sqrt();
    let d1 = (0..m).map(|i| (f[i] / scale(&x, &x, i)).powi(2)).sum::<f64>().sqrt();
    let mut h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h = h.min(t1 - t0);
    let mut rejected = false;
    let mut k: Vec<DVector<f64>> = vec![DVector::zeros(m); 7];
    while t < t1 {
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(Error::StepUnderflow { time: t });
        }
        let last = t + h >= t1;
        if last {
            h = t1 - t;
        }
        k[0] = f.clone();
        for s in 1..7 {
            let mut y = x.clone();
            for (j, kj) in k.iter().enumerate().take(s) {
                if A[s][j] != 0.0 {
                    y.axpy(h * A[s][j], kj, 1.0);
                }
            }
            k[s] = rhs(&y, t + C[s] * h)?;
            if s == 6 {
                // stage 7 is evaluated at the new solution itself
                let err = (0..m)
                    .map(|i| {
                        let e: f64 = (0..7).map(|j| E[j] * k[j][i]).sum::<f64>() * h;
                        (e / scale(&x, &y, i)).powi(2)
                    })
                    .sum::<f64>()
                    / m as f64;
                let err = err.sqrt();
                if !err.is_finite() {
                    return Err(Error::NotFinite("Runge-Kutta step".into()));
                }
                if err <= 1.0 {
                    t = if last { t1 } else { t + h };
                    x = y;
                    f = k[6].clone();
                    series.times.push(t);
                    series.states.push(x.clone());
                    series.derivatives.push(f.clone());
                    let mut fac = 0.9 * err.max(1e-10).powf(-0.2);
                    fac = fac.clamp(0.2, if rejected { 1.0 } else { 5.0 });
                    h *= fac;
                    rejected = false;
                } else {
                    h *= (0.9 * err.powf(-0.2)).max(0.2);
                    rejected = true;
                }
            }
        }
    }
    Ok(series)
}

/// Integrate the model's first-order form from `x0 = [q; q̇]` with the
/// excitation phases `ω_i t`.
pub fn time_integrate(
    model: &SecondOrderModel,
    x0: &DVector<f64>,
    span: (f64, f64),
    omega: &[f64],
    rtol: f64,
    atol: f64,
) -> Result<TimeSeries> {
    integrate_rhs(|x, t| model.evaluate_rhs(x, t, omega), x0, span, rtol, atol)
}

/// Largest state error between the torus trajectory through `φ = 0` at
/// `t = 0` and the series, over series nodes with `t ≥ transient_skip`.
pub fn compare_torus_to_timeseries(surface: &TorusSurface, series: &TimeSeries, transient_skip: f64) -> f64 {
    series
        .times
        .iter()
        .zip(&series.states)
        .filter(|(t, _)| **t >= transient_skip)
        .map(|(t, x)| (surface.physical_state(*t) - x).amax())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Peak {
    pub frequency: f64,
    pub amplitude: f64,
}

/// One-sided amplitude spectrum, frequencies in rad per unit time.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub frequencies: Vec<f64>,
    pub amplitudes: Vec<f64>,
    /// Bin width of the unpadded record, `2π / (N Δt)`.
    pub resolution: f64,
}

impl Spectrum {
    /// Local maxima above `relative_floor` times the largest amplitude.
    ///
    /// Maxima that fit under the sidelobe skirt of a stronger peak are
    /// dropped. Hann sidelobes fall off roughly as `0.027 (2.5/m)³` at `m`
    /// bins; the skirt used here is twice that.
    pub fn peaks(&self, relative_floor: f64) -> Vec<Peak> {
        let top = self.amplitudes.iter().copied().fold(0.0, f64::max);
        if top <= 1e-14 {
            return Vec::new();
        }
        let a = &self.amplitudes;
        let maxima: Vec<Peak> = (1..a.len().saturating_sub(1))
            .filter(|&i| a[i] > a[i - 1] && a[i] >= a[i + 1])
            .map(|i| Peak {
                frequency: self.frequencies[i],
                amplitude: a[i],
            })
            .collect();
        let skirt = |o: &Peak, p: &Peak| {
            let m = ((o.frequency - p.frequency).abs() / self.resolution).max(1.0);
            o.amplitude > p.amplitude && p.amplitude <= o.amplitude * 0.83 / (m * m * m)
        };
        maxima
            .iter()
            .filter(|p| p.amplitude >= relative_floor * top)
            .filter(|p| !maxima.iter().any(|o| skirt(o, p)))
            .cloned()
            .collect()
    }

    /// Largest amplitude within `width` of `frequency`.
    pub fn amplitude_near(&self, frequency: f64, width: f64) -> f64 {
        self.frequencies
            .iter()
            .zip(&self.amplitudes)
            .filter(|(f, _)| (**f - frequency).abs() <= width)
            .map(|(_, a)| *a)
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "frequency,amplitude")?;
        for (f, a) in self.frequencies.iter().zip(&self.amplitudes) {
            writeln!(out, "{f:e},{a:e}")?;
        }
        Ok(())
    }
}

/// Hann-windowed FFT amplitude spectrum of uniformly sampled data, zero
/// padded by `padding` (rounded up to a power of two). Amplitudes are
/// normalized so that a pure cosine of amplitude `A` peaks at `A`.
pub fn spectrum(signal: &[f64], dt: f64, padding: usize) -> Spectrum {
    let n = signal.len();
    let len = (n * padding.max(1)).next_power_of_two();
    let window: Vec<f64> = (0..n)
        .map(|k| 0.5 - 0.5 * (TAU * k as f64 / (n - 1).max(1) as f64).cos())
        .collect();
    let gain: f64 = window.iter().sum();
    let mut buffer: Vec<Complex<f64>> = signal
        .iter()
        .zip(&window)
        .map(|(x, w)| Complex::new(x * w, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(len)
        .collect();
    FftPlanner::new().plan_fft_forward(len).process(&mut buffer);
    let half = len / 2 + 1;
    let df = TAU / (len as f64 * dt);
    Spectrum {
        resolution: TAU / (n.max(1) as f64 * dt),
        frequencies: (0..half).map(|k| k as f64 * df).collect(),
        amplitudes: buffer[..half]
            .iter()
            .enumerate()
            .map(|(k, c)| c.norm() * if k == 0 { 1.0 } else { 2.0 } / gain.max(1e-300))
            .collect(),
    }
}

/// Steady-state response of a linear model as torus coefficients: one
/// complex frequency-response solve per forcing term, placed in the first
/// harmonic of the matching angle (or the constant term for `ω_1`).
pub fn linear_quasiperiodic_response(
    model: &SecondOrderModel,
    freq: &FrequencyVector,
    scheme: &HarmonicScheme,
) -> Result<TorusCoefficients> {
    if !model.is_linear() {
        return Err(Error::Config("closed-form response needs a linear model".into()));
    }
    let n = model.dofs();
    let u = scheme.coefficients();
    let w1 = freq.base();
    let mut z0 = DVector::zeros(2 * n * u);
    let to_complex = |m: &DMatrix<f64>| m.map(|x| Complex::new(x, 0.0));
    for term in model.forcing() {
        let j = term.frequency;
        if j >= freq.dim() {
            return Err(Error::Config(format!("forcing uses base frequency {} of {}", j + 1, freq.dim())));
        }
        let w = freq.get(j);
        let dynamic = to_complex(&(model.stiffness() - model.mass() * (w * w)))
            + to_complex(model.damping()) * Complex::new(0.0, w);
        let load = (model.force_distribution() * &term.amplitude).map(|x| Complex::new(x, 0.0));
        let x = dynamic
            .clone()
            .lu()
            .solve(&load)
            .filter(|x| x.iter().all(|c| c.re.is_finite() && c.im.is_finite()))
            .ok_or(Error::Resonance { frequency: w })?;
        // guard against near-singular solves that LU lets through
        let check = (&dynamic * &x - &load).norm();
        if check > 1e-8 * load.norm().max(1e-300) {
            return Err(Error::Resonance { frequency: w });
        }
        // u = q̇ / ω_1
        let v = x.map(|c| c * Complex::new(0.0, w / w1));
        if j == 0 {
            for i in 0..n {
                z0[i * u] += x[i].re;
                z0[(n + i) * u] += v[i].re;
            }
        } else {
            let mut k = vec![0i64; freq.dim() - 1];
            k[j - 1] = 1;
            let (slot, sign) = scheme.harmonic_slot(&k).ok_or_else(|| {
                Error::InvalidScheme(format!("harmonic set lacks the first harmonic of angle {}", j + 1))
            })?;
            // Re(X e^{iφ}) = Re X cos φ - Im X sin φ
            for i in 0..n {
                z0[i * u + slot] += x[i].re;
                z0[i * u + slot + 1] -= sign * x[i].im;
                z0[(n + i) * u + slot] += v[i].re;
                z0[(n + i) * u + slot + 1] -= sign * v[i].im;
            }
        }
    }
    TorusCoefficients::new(z0, freq.clone(), scheme)
}

/// Periodic orbit found by classical shooting on the first-order form.
#[derive(Debug, Clone)]
pub struct PeriodicOrbit {
    /// State `[q; q̇]` at `t = 0`.
    pub x0: DVector<f64>,
    pub omega: f64,
    /// Finite-difference monodromy matrix.
    pub monodromy: DMatrix<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Newton on `x(T) - x(0) = 0` for a system forced at `ω_1` only, with
/// `T = 2π/ω_1` and Runge–Kutta integration at tolerance `rtol`.
pub fn classical_periodic_shooting(
    model: &SecondOrderModel,
    omega: f64,
    guess: &DVector<f64>,
    rtol: f64,
    max_iterations: usize,
) -> Result<PeriodicOrbit> {
    if model.forced_frequencies() > 1 {
        return Err(Error::Config("classical shooting handles a single forcing frequency".into()));
    }
    let period = TAU / omega;
    let flow = |x: &DVector<f64>| -> Result<DVector<f64>> {
        let s = time_integrate(model, x, (0.0, period), &[omega], rtol, rtol * 1e-2)?;
        Ok(s.states.last().unwrap().clone())
    };
    let m = guess.len();
    let mut x = guess.clone();
    for iteration in 1..=max_iterations {
        let end = flow(&x)?;
        let residual = &end - &x;
        let mut jac = DMatrix::zeros(m, m);
        for c in 0..m {
            let h = 1e-5 * x[c].abs().max(1.0);
            let mut xp = x.clone();
            xp[c] += h;
            let mut xm = x.clone();
            xm[c] -= h;
            jac.set_column(c, &((flow(&xp)? - flow(&xm)?) / (2.0 * h)));
        }
        let norm = residual.norm();
        if norm < 1e-10 * x.norm().max(1.0) {
            return Ok(PeriodicOrbit {
                x0: x,
                omega,
                monodromy: jac,
                iterations: iteration,
                residual: norm,
            });
        }
        let system = &jac - DMatrix::identity(m, m);
        let delta = system
            .lu()
            .solve(&(-residual))
            .ok_or_else(|| Error::Singular("classical shooting Jacobian".into()))?;
        x += delta;
    }
    Err(Error::NonConvergence {
        iterations: max_iterations,
        residual: (flow(&x)? - &x).norm(),
    })
}

impl PeriodicOrbit {
    /// Largest `|q_dof|` over one period.
    pub fn peak(&self, model: &SecondOrderModel, dof: usize, rtol: f64) -> Result<f64> {
        let period = TAU / self.omega;
        let s = time_integrate(model, &self.x0, (0.0, period), &[self.omega], rtol, rtol * 1e-2)?;
        let dt = period / 2048.0;
        Ok(s.resample(dof, 0.0, dt, 2049).iter().fold(0.0, |a, b| a.max(b.abs())))
    }
}

/// A Fourier component of a torus seen as a time signal: frequency
/// `|k·ω|` and amplitude `2|c_k|`.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusHarmonic {
    pub k: Vec<i64>,
    pub frequency: f64,
    pub amplitude: f64,
}

/// Fourier content of displacement `dof` on the angle torus
/// `τ ∈ [0, 2π)²`, for `|k_1| ≤ max_k1`, `|k_2| ≤ max_k2`, from an
/// `n1 × n2` sample grid.
pub fn torus_harmonics(
    surface: &TorusSurface,
    dof: usize,
    max_k1: i64,
    max_k2: i64,
    n1: usize,
    n2: usize,
) -> Result<Vec<TorusHarmonic>> {
    let freq = surface.frequencies();
    if freq.dim() != 2 {
        return Err(Error::Config("torus harmonics are computed for 2-tori".into()));
    }
    let mut grid = DMatrix::zeros(n1, n2);
    for a in 0..n1 {
        for b in 0..n2 {
            let tau = [TAU * a as f64 / n1 as f64, TAU * b as f64 / n2 as f64];
            grid[(a, b)] = surface.displacement_on_angles(&tau, dof);
        }
    }
    let (w1, w2) = (freq.get(0), freq.get(1));
    let mut out = Vec::new();
    for k1 in -max_k1..=max_k1 {
        for k2 in -max_k2..=max_k2 {
            let f = k1 as f64 * w1 + k2 as f64 * w2;
            let keep = f > 1e-12 || (f.abs() <= 1e-12 && k1 == 0 && k2 == 0);
            if !keep {
                continue;
            }
            let mut c = Complex::new(0.0, 0.0);
            for a in 0..n1 {
                for b in 0..n2 {
                    let arg = TAU * (k1 as f64 * a as f64 / n1 as f64 + k2 as f64 * b as f64 / n2 as f64);
                    c += Complex::from_polar(grid[(a, b)], -arg);
                }
            }
            c /= (n1 * n2) as f64;
            let amplitude = if k1 == 0 && k2 == 0 { c.norm() } else { 2.0 * c.norm() };
            out.push(TorusHarmonic {
                k: vec![k1, k2],
                frequency: f,
                amplitude,
            });
        }
    }
    Ok(out)
}
