use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::Context;
use nalgebra::DVector;
use qptorus::continuation::{
    run_branch, BranchConfig, Constraints, ContinuationSystem, Linearization, ShootingSystem, SolutionPoint,
    Termination,
};
use qptorus::harmonics::HarmonicScheme;
use qptorus::integrator::WorkerPool;
use qptorus::oracle::linear_quasiperiodic_response;
use qptorus::shooting::{evaluate, newton_correct, Snapshot, TorusCoefficients};
use qptorus::stability::{analyze, LyapunovOptions, StabilityReport};
use qptorus::validation::{flipped_rotation, run_checks, CheckOptions};
use qptorus::{FrequencyVector, SecondOrderModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{ConfigError, RunConfig, SeedSource};

/// Numerical failure detected by the driver itself (exit status 2).
#[derive(Debug)]
pub struct NumericalFailure(pub String);

impl std::fmt::Display for NumericalFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericalFailure {}

/// Shortest text that reads back as the same `f64`, in exponent form
/// outside `[1e-4, 1e6)`.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || (1e-4..1e6).contains(&a) || !x.is_finite() {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

fn output_dir(config: &RunConfig, override_dir: Option<&Path>) -> anyhow::Result<PathBuf> {
    let dir = override_dir.map(Path::to_path_buf).unwrap_or_else(|| config.run.output.clone());
    fs::create_dir_all(&dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

/// Overrides given on the command line.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub output: Option<PathBuf>,
    pub workers: Option<usize>,
}

fn prepare(path: &Path, overrides: &Overrides) -> anyhow::Result<(RunConfig, PathBuf)> {
    let mut config = RunConfig::load(path)?;
    if let Some(w) = overrides.workers {
        config.run.workers = w;
    }
    if let Some(o) = &overrides.output {
        config.run.output = o.clone();
    }
    config.validate()?;
    let dir = output_dir(&config, None)?;
    config.write_resolved(&dir)?;
    Ok((config, dir))
}

fn linear_part(model: &SecondOrderModel) -> anyhow::Result<SecondOrderModel> {
    let mut linear = SecondOrderModel::new(model.mass().clone(), model.damping().clone(), model.stiffness().clone())?
        .with_force_distribution(model.force_distribution().clone())?;
    for term in model.forcing() {
        linear = linear.with_forcing(term.clone())?;
    }
    Ok(linear)
}

/// Model at the snapshot's parameter value when it carries one.
fn model_for(config: &RunConfig, parameter: Option<f64>) -> anyhow::Result<SecondOrderModel> {
    match (&config.continuation, parameter) {
        (Some(c), Some(p)) if c.parameter != "omega1" => Ok(config
            .model
            .build_with(&c.parameter, p)
            .map_err(|e| ConfigError(e.to_string()))?),
        _ => config.build_model(),
    }
}

fn load_snapshot(path: &Path) -> anyhow::Result<Snapshot> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read snapshot {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text).map_err(|e| ConfigError(format!("malformed snapshot {}: {e}", path.display())))?)
}

fn restore(snapshot: &Snapshot, scheme: &HarmonicScheme) -> anyhow::Result<TorusCoefficients> {
    let (stored, coeffs) = snapshot.restore().map_err(|e| ConfigError(e.to_string()))?;
    if stored.descriptor() != scheme.descriptor() {
        anyhow::bail!(ConfigError("snapshot harmonic scheme differs from the configured one".into()));
    }
    Ok(coeffs)
}

/// Initial coefficients and, for snapshot seeds, the stored parameter.
fn seed(
    config: &RunConfig,
    model: &SecondOrderModel,
    scheme: &HarmonicScheme,
    freq: &FrequencyVector,
) -> anyhow::Result<(TorusCoefficients, Option<f64>)> {
    let (mut coeffs, parameter) = match config.solve.seed {
        SeedSource::Zero => (TorusCoefficients::zeros(model.dofs(), freq.clone(), scheme)?, None),
        SeedSource::Linear => (linear_quasiperiodic_response(&linear_part(model)?, freq, scheme)?, None),
        SeedSource::Snapshot => {
            let snapshot = load_snapshot(config.solve.snapshot.as_ref().unwrap())?;
            (restore(&snapshot, scheme)?, snapshot.parameter)
        }
    };
    let u = scheme.coefficients();
    let n = model.dofs();
    for t in &config.solve.terms {
        let row = (if t.rate { n } else { 0 } + t.dof) * u;
        if t.harmonic.iter().all(|&k| k == 0) {
            coeffs.z0[row] += t.cos;
        } else {
            let (slot, sign) = scheme.harmonic_slot(&t.harmonic).expect("validated");
            coeffs.z0[row + slot] += t.cos;
            coeffs.z0[row + slot + 1] += sign * t.sin;
        }
    }
    if config.solve.perturbation > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.run.seed);
        let a = config.solve.perturbation;
        for z in coeffs.z0.iter_mut() {
            *z += rng.random_range(-a..a);
        }
    }
    Ok((coeffs, parameter))
}

fn constraints(config: &RunConfig, freq: &FrequencyVector) -> anyhow::Result<Constraints> {
    Ok(match &config.continuation {
        Some(c) => Constraints::for_case(c.case, freq)?,
        None => Constraints::fixed(freq),
    })
}

fn write_snapshot(path: &Path, snapshot: &Snapshot) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(snapshot)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn solve(config_path: &Path, overrides: &Overrides) -> anyhow::Result<()> {
    let (config, dir) = prepare(config_path, overrides)?;
    let scheme = config.scheme()?;
    let freq = config.frequencies()?;
    let (seed_coeffs, parameter) = seed(&config, &config.build_model()?, &scheme, &freq)?;
    let model = model_for(&config, parameter)?;
    let pool = WorkerPool::new(config.run.workers)?;
    let solved = newton_correct(
        &model,
        &seed_coeffs,
        &scheme,
        config.torus.steps,
        &constraints(&config, &seed_coeffs.freq)?,
        config.newton(),
        &pool,
    )?;
    let mut log = String::from("iteration,residual_norm\n");
    for (i, r) in solved.history.iter().enumerate() {
        log.push_str(&format!("{},{}\n", i + 1, num(*r)));
    }
    fs::write(dir.join("convergence.csv"), log)?;
    write_snapshot(
        &dir.join("snapshot.json"),
        &Snapshot::new(&solved.coeffs, &scheme, solved.residual_norm, parameter),
    )?;
    println!(
        "converged in {} iterations, |R| = {:e}, omega = {:?}",
        solved.iterations,
        solved.residual_norm,
        solved.coeffs.freq.values()
    );
    let peaks: Vec<f64> = solved.evaluation.batch.peak.iter().copied().collect();
    println!("peak displacement per DOF: {peaks:?}");
    println!("wrote {}", dir.display());
    Ok(())
}

/// Shooting system that records amplitude and stability at every accepted
/// point.
struct Recorder<'a> {
    inner: ShootingSystem<'a>,
    dof: usize,
    stability: Option<LyapunovOptions>,
    records: Vec<(f64, Option<StabilityReport>)>,
}

impl ContinuationSystem for Recorder<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn linearize(&mut self, chi: &DVector<f64>, p: f64) -> qptorus::Result<Linearization> {
        self.inner.linearize(chi, p)
    }

    fn tolerance(&self, chi: &DVector<f64>) -> f64 {
        self.inner.tolerance(chi)
    }

    fn accept(&mut self, _point: &SolutionPoint) -> qptorus::Result<()> {
        let (ev, coeffs) = self
            .inner
            .last_evaluation()
            .ok_or_else(|| qptorus::Error::Config("accepted point without an evaluation".into()))?;
        let amplitude = ev.batch.peak[self.dof];
        let report = match self.stability {
            Some(options) => Some(analyze(&ev.batch, &coeffs.freq, self.inner.scheme(), options)?),
            None => None,
        };
        self.records.push((amplitude, report));
        Ok(())
    }
}

#[derive(Serialize)]
struct BranchPointRecord {
    p: f64,
    omega: Vec<f64>,
    amplitude: f64,
    residual_norm: f64,
    iterations: usize,
    tangent: Vec<f64>,
    stability: Option<String>,
    exponents: Option<Vec<f64>>,
    snapshot: Snapshot,
}

#[derive(Serialize)]
struct BranchFile {
    parameter: String,
    termination: String,
    folds: Vec<usize>,
    points: Vec<BranchPointRecord>,
}

fn termination_text(t: &Termination) -> String {
    match t {
        Termination::CorrectorFailure(msg) => format!("corrector failure: {msg}"),
        other => format!("{other:?}"),
    }
}

pub fn continue_branch(config_path: &Path, overrides: &Overrides) -> anyhow::Result<()> {
    let (config, dir) = prepare(config_path, overrides)?;
    let cont = config
        .continuation
        .clone()
        .ok_or_else(|| ConfigError("continue needs a [continuation] section".into()))?;
    let branch_config: BranchConfig = config.branch_config()?;
    let scheme = config.scheme()?;
    let freq = config.frequencies()?;
    let by_omega = cont.parameter == "omega1";
    let (coeffs, stored) = seed(&config, &config.build_model()?, &scheme, &freq)?;
    let p0 = if by_omega {
        coeffs.freq.base()
    } else {
        stored.or(cont.start).map_or_else(|| config.model.param(&cont.parameter), Ok)?
    };
    let model = if by_omega {
        config.build_model()?
    } else {
        config.model.build_with(&cont.parameter, p0)?
    };
    let pool = WorkerPool::new(config.run.workers)?;
    let cons = Constraints::for_case(cont.case, &coeffs.freq)?;
    let mut inner = ShootingSystem::new(model, &scheme, config.torus.steps, coeffs.freq.clone(), cons, &pool)?
        .with_epsilon(config.solve.epsilon);
    if !by_omega {
        let spec = config.model.clone();
        let name = cont.parameter.clone();
        inner = inner.with_model_parameter(Arc::new(move |p| spec.build_with(&name, p)));
    }
    let chi = inner.chi_from(&coeffs);
    let mut system = Recorder {
        inner,
        dof: cont.amplitude_dof,
        stability: config.stability.enabled.then(|| config.lyapunov()),
        records: Vec::new(),
    };
    let branch = run_branch(&mut system, &chi, p0, &branch_config)?;

    let d = coeffs.freq.dim();
    let mut csv = String::from("p");
    for i in 1..=d {
        csv.push_str(&format!(",omega_{i}"));
    }
    csv.push_str(",amplitude,residual_norm,iterations,stability,sigma_1,sigma_2,sigma_3\n");
    let mut points = Vec::new();
    for (pt, (amplitude, report)) in branch.points.iter().zip(&system.records) {
        let c = system.inner.coefficients(&pt.chi, pt.p)?;
        csv.push_str(&num(pt.p));
        for w in c.freq.values() {
            csv.push_str(&format!(",{}", num(*w)));
        }
        csv.push_str(&format!(",{},{},{}", num(*amplitude), num(pt.residual_norm), pt.iterations));
        match report {
            Some(r) => {
                csv.push_str(&format!(",{}", r.class));
                let lead = r.leading(3);
                for k in 0..3 {
                    match lead.get(k) {
                        Some(s) => csv.push_str(&format!(",{}", num(*s))),
                        None => csv.push(','),
                    }
                }
            }
            None => csv.push_str(",,,,"),
        }
        csv.push('\n');
        points.push(BranchPointRecord {
            p: pt.p,
            omega: c.freq.values().to_vec(),
            amplitude: *amplitude,
            residual_norm: pt.residual_norm,
            iterations: pt.iterations,
            tangent: pt.tangent.iter().copied().collect(),
            stability: report.as_ref().map(|r| r.class.to_string()),
            exponents: report.as_ref().map(|r| r.exponents.clone()),
            snapshot: Snapshot::new(&c, &scheme, pt.residual_norm, (!by_omega).then_some(pt.p)),
        });
    }
    fs::write(dir.join("branch.csv"), csv)?;
    let file = BranchFile {
        parameter: cont.parameter.clone(),
        termination: termination_text(&branch.termination),
        folds: branch.folds(),
        points,
    };
    fs::write(dir.join("branch.json"), serde_json::to_string_pretty(&file)?)?;
    println!(
        "{} points, termination: {}, folds at {:?}",
        branch.points.len(),
        file.termination,
        file.folds
    );
    println!("wrote {}", dir.display());
    Ok(())
}

pub fn stability(config_path: &Path, snapshot_path: &Path, overrides: &Overrides) -> anyhow::Result<()> {
    let (config, dir) = prepare(config_path, overrides)?;
    let scheme = config.scheme()?;
    let snapshot = load_snapshot(snapshot_path)?;
    let coeffs = restore(&snapshot, &scheme)?;
    let model = model_for(&config, snapshot.parameter)?;
    if model.dofs() != snapshot.dofs {
        anyhow::bail!(ConfigError(format!(
            "snapshot has {} DOFs, model has {}",
            snapshot.dofs,
            model.dofs()
        )));
    }
    let pool = WorkerPool::new(config.run.workers)?;
    let ev = evaluate(&model, &coeffs, &scheme, config.torus.steps, &pool)?;
    let report = analyze(&ev.batch, &coeffs.freq, &scheme, config.lyapunov())?;
    if report.exponents.iter().any(|s| !s.is_finite()) {
        anyhow::bail!(NumericalFailure("non-finite Lyapunov exponent".into()));
    }
    let mut csv = String::from("index,exponent\n");
    for (i, s) in report.exponents.iter().enumerate() {
        csv.push_str(&format!("{},{}\n", i + 1, num(*s)));
    }
    fs::write(dir.join("stability.csv"), csv)?;
    let mut history = fs::File::create(dir.join("lyapunov_history.csv"))?;
    write!(history, "t")?;
    for i in 1..=report.exponents.len() {
        write!(history, ",sigma_{i}")?;
    }
    writeln!(history)?;
    for (t, values) in &report.history {
        write!(history, "{}", num(*t))?;
        for v in values {
            write!(history, ",{}", num(*v))?;
        }
        writeln!(history)?;
    }
    println!(
        "{} (shooting residual {:e}); exponents {:?}; {} neutral excluded, band {:e}",
        report.class,
        ev.residual.norm(),
        report.exponents,
        report.neutral,
        report.band
    );
    println!("wrote {}", dir.display());
    Ok(())
}

pub fn check(workers: Vec<usize>, fault: Option<&str>) -> anyhow::Result<()> {
    let mut options = CheckOptions::default();
    if !workers.is_empty() {
        if workers.contains(&0) {
            anyhow::bail!(ConfigError("worker counts must be positive".into()));
        }
        options.workers = workers;
    }
    match fault {
        None => {}
        Some("rotation-sign") => options.rotation = flipped_rotation,
        Some(other) => anyhow::bail!(ConfigError(format!("unknown fault '{other}' (known: rotation-sign)"))),
    }
    let results = run_checks(&options);
    for r in &results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        anyhow::bail!(NumericalFailure(format!("{failed} of {} checks failed", results.len())));
    }
    println!("all {} checks passed", results.len());
    Ok(())
}

pub fn bench(config_path: &Path, workers: &[usize], repeats: usize, overrides: &Overrides) -> anyhow::Result<()> {
    if workers.is_empty() || workers.contains(&0) || repeats == 0 {
        anyhow::bail!(ConfigError("bench needs positive worker counts and repeats".into()));
    }
    let (config, dir) = prepare(config_path, overrides)?;
    let scheme = config.scheme()?;
    let freq = config.frequencies()?;
    let model = config.build_model()?;
    let (coeffs, _) = seed(&config, &model, &scheme, &freq)?;
    let mut rows = Vec::new();
    let mut reference = None;
    for &w in workers {
        let pool = WorkerPool::new(w)?;
        let mut best = f64::INFINITY;
        let mut identical = true;
        for _ in 0..repeats {
            let start = Instant::now();
            let ev = evaluate(&model, &coeffs, &scheme, config.torus.steps, &pool)?;
            best = best.min(start.elapsed().as_secs_f64());
            match &reference {
                None => reference = Some(ev),
                Some(r) => {
                    identical &= r.residual == ev.residual && r.jac_z0 == ev.jac_z0 && r.jac_omega == ev.jac_omega
                }
            }
        }
        rows.push((w, best, identical));
    }
    let base = rows[0].1 * rows[0].0 as f64;
    let mut csv = String::from("workers,seconds,speedup,efficiency,identical\n");
    println!("{:>8} {:>12} {:>9} {:>11} identical", "workers", "seconds", "speedup", "efficiency");
    for (w, t, same) in &rows {
        // speedup relative to one worker, extrapolated when the list does not start at 1
        let speedup = base / t;
        let efficiency = speedup / *w as f64;
        csv.push_str(&format!("{w},{},{},{},{same}\n", num(*t), num(speedup), num(efficiency)));
        println!("{w:>8} {t:>12.4} {speedup:>9.3} {efficiency:>11.3} {same}");
    }
    fs::write(dir.join("bench.csv"), csv)?;
    println!(
        "{} samples x {} steps, {} DOFs; wrote {}",
        scheme.samples(),
        config.torus.steps,
        model.dofs(),
        dir.display()
    );
    Ok(())
}
