//! Reference solutions, error norms and convergence-order studies.
//!
//! Linear references are `exp(T A) eta` from a dense matrix exponential.
//! Semilinear references use a fine Strang composition whose linear
//! half-steps are exact exponentials; a second run at half the step gives a
//! Richardson accuracy estimate.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::assembly::{assemble_split, SparseOperator, SplitOperator};
use crate::config::ExperimentConfig;
use crate::domain::{sample_coefficients, CoefficientField, Grid};
use crate::error::{Error, Result};
use crate::nonlinear::Potential;
use crate::partition::Partition;
use crate::schemes::{integrate, SchemeConfig, SchemeKind};
use crate::solver::{FactorCache, SolverOptions};

/// Largest node count handled by the dense reference path.
pub const DENSE_LIMIT: usize = 4096;

/// Fine-step references use at most `h_min / FINE_STEP_RATIO`.
pub const FINE_STEP_RATIO: usize = 64;

/// The reference error must be this many times smaller than the coarsest
/// scheme error.
pub const REFERENCE_MARGIN: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceMethod {
    DenseExpm,
    FineStep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution {
    pub u_ref: Vec<f64>,
    pub method: ReferenceMethod,
    /// Estimated max-norm error of `u_ref`.
    pub accuracy: f64,
    pub t: f64,
}

const THETA: [(f64, usize); 4] = [
    (1.495_585_217_958_292e-2, 3),
    (2.539_398_330_063_230e-1, 5),
    (9.504_178_996_162_932e-1, 7),
    (2.097_847_961_257_068, 9),
];
const THETA_13: f64 = 5.371_920_351_148_152;

const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const B9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const B13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn pade_solve(u: DMatrix<f64>, v: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = &v + &u;
    (v - u).lu().solve(&p).ok_or(Error::SingularSystem { column: 0 })
}

fn pade_low(a: &DMatrix<f64>, b: &[f64]) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let a2 = a * a;
    let mut pow = DMatrix::<f64>::identity(n, n);
    let mut u = DMatrix::<f64>::zeros(n, n);
    let mut v = DMatrix::<f64>::zeros(n, n);
    for j in 0..b.len() / 2 {
        if j > 0 {
            pow = &pow * &a2;
        }
        v += &pow * b[2 * j];
        u += &pow * b[2 * j + 1];
    }
    pade_solve(a * u, v)
}

fn pade13(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let b = &B13;
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * b[13] + &a4 * b[11] + &a2 * b[9];
    let u = a * (&a6 * inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1]);
    let inner_v = &a6 * b[12] + &a4 * b[10] + &a2 * b[8];
    let v = &a6 * inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];
    pade_solve(u, v)
}

/// Matrix exponential by scaling and squaring with diagonal Pade
/// approximants of degree 3 to 13.
///
/// ```
/// use nalgebra::DMatrix;
/// let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
/// let e = ddsplit::harness::expm(&a).unwrap();
/// assert!((e[(0, 0)] - 1f64.cos()).abs() < 1e-15);
/// assert!((e[(0, 1)] - 1f64.sin()).abs() < 1e-15);
/// ```
pub fn expm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::InvalidArgument("expm needs a square matrix".into()));
    }
    let norm = one_norm(a);
    if !norm.is_finite() {
        return Err(Error::InvalidArgument("expm input is not finite".into()));
    }
    for (theta, degree) in THETA {
        if norm <= theta {
            let b: &[f64] = match degree {
                3 => &B3,
                5 => &B5,
                7 => &B7,
                _ => &B9,
            };
            return pade_low(a, b);
        }
    }
    let s = if norm > THETA_13 {
        (norm / THETA_13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let scaled = a * 2f64.powi(-s);
    let mut r = pade13(&scaled)?;
    for _ in 0..s {
        r = &r * &r;
    }
    Ok(r)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn dense_of(a: &SparseOperator) -> Result<DMatrix<f64>> {
    if a.size() > DENSE_LIMIT {
        return Err(Error::TooLargeForDense { nodes: a.size() });
    }
    Ok(a.to_dense())
}

/// `exp(T A) eta`. The accuracy estimate is the max-norm gap to
/// `exp(T/2 A)^2 eta`.
pub fn reference_linear(a: &SparseOperator, eta: &[f64], t: f64) -> Result<ReferenceSolution> {
    if eta.len() != a.size() {
        return Err(Error::InvalidArgument("initial data length differs from operator size".into()));
    }
    let dense = dense_of(a)?;
    let eta_v = DVector::from_column_slice(eta);
    let full = expm(&(&dense * t))?;
    let half = expm(&(&dense * (0.5 * t)))?;
    let u_ref: Vec<f64> = (&full * &eta_v).iter().copied().collect();
    let twice: Vec<f64> = (&half * (&half * &eta_v)).iter().copied().collect();
    Ok(ReferenceSolution {
        accuracy: max_abs_diff(&u_ref, &twice),
        u_ref,
        method: ReferenceMethod::DenseExpm,
        t,
    })
}

fn strang(half: &DMatrix<f64>, potential: &Potential, eta: &[f64], h: f64, steps: usize) -> Vec<f64> {
    let mut u = DVector::from_column_slice(eta);
    for _ in 0..steps {
        let mut v = half * &u;
        for x in v.iter_mut() {
            let mid = *x + 0.5 * h * potential.eval_scalar(*x);
            *x += h * potential.eval_scalar(mid);
        }
        u = half * v;
    }
    u.iter().copied().collect()
}

/// Fine-step reference for `u' = A u + F(u)` at time `t`, with step at most
/// `h_min / 64`. Without a potential this is [`reference_linear`].
pub fn reference_semilinear(
    a: &SparseOperator,
    potential: Option<&Potential>,
    eta: &[f64],
    t: f64,
    h_min: f64,
) -> Result<ReferenceSolution> {
    let Some(potential) = potential else {
        return reference_linear(a, eta, t);
    };
    if eta.len() != a.size() {
        return Err(Error::InvalidArgument("initial data length differs from operator size".into()));
    }
    if !(h_min > 0.0 && t > 0.0) {
        return Err(Error::InvalidArgument("need positive final time and step".into()));
    }
    let dense = dense_of(a)?;
    let steps = (t / (h_min / FINE_STEP_RATIO as f64)).ceil() as usize;
    let h = t / steps as f64;
    let half = expm(&(&dense * (0.5 * h)))?;
    let quarter = expm(&(&dense * (0.25 * h)))?;
    let coarse = strang(&half, potential, eta, h, steps);
    let fine = strang(&quarter, potential, eta, 0.5 * h, 2 * steps);
    if fine.iter().any(|x| !x.is_finite()) {
        return Err(Error::Diverged { step: 2 * steps });
    }
    // second order: the fine error is about a third of the gap
    let accuracy = max_abs_diff(&coarse, &fine) / 3.0;
    Ok(ReferenceSolution {
        u_ref: fine,
        method: ReferenceMethod::FineStep,
        accuracy,
        t,
    })
}

/// Discrete L2 norm of `u - u_ref` with cell-volume weights.
///
/// ```
/// use ddsplit::domain::{build_grid, BoundaryKind};
/// let g = build_grid(1, &[1.0], &[11], BoundaryKind::Neumann).unwrap();
/// let e = ddsplit::harness::error_norm(&vec![0.5; 11], &vec![0.0; 11], &g);
/// assert!((e - 0.5).abs() < 1e-15);
/// ```
pub fn error_norm(u: &[f64], u_ref: &[f64], grid: &Grid) -> f64 {
    assert_eq!(u.len(), u_ref.len(), "error_norm needs equal lengths");
    u.iter()
        .zip(u_ref)
        .enumerate()
        .map(|(i, (a, b))| (a - b) * (a - b) * grid.cell_volume(i))
        .sum::<f64>()
        .sqrt()
}

fn check_errors(pairs: &[(f64, f64)]) -> Result<()> {
    if let Some((h, e)) = pairs.iter().find(|(h, e)| !(*e > 0.0 && e.is_finite() && *h > 0.0)) {
        return Err(Error::DegenerateErrors(format!("error {e} at h = {h}")));
    }
    Ok(())
}

/// Least-squares slope of `log(error)` against `log(h)`.
///
/// ```
/// let p = ddsplit::harness::convergence_order(&[(0.1, 0.1), (0.05, 0.025), (0.025, 0.00625)]).unwrap();
/// assert!((p - 2.0).abs() < 1e-12);
/// ```
pub fn convergence_order(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 (h, error) pairs, got {}",
            pairs.len()
        )));
    }
    check_errors(pairs)?;
    let n = pairs.len() as f64;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateErrors("all step sizes are equal".into()));
    }
    Ok(sxy / sxx)
}

/// Order between consecutive levels; `None` for the first.
pub fn running_orders(pairs: &[(f64, f64)]) -> Vec<Option<f64>> {
    (0..pairs.len())
        .map(|i| {
            (i > 0).then(|| {
                let (h0, e0) = pairs[i - 1];
                let (h1, e1) = pairs[i];
                (e0 / e1).ln() / (h0 / h1).ln()
            })
        })
        .collect()
}

/// Everything a run needs that does not depend on the scheme.
#[derive(Debug, Clone)]
pub struct Problem {
    pub grid: Grid,
    pub coeff: CoefficientField,
    pub partition: Partition,
    pub split: SplitOperator,
    pub eta: Vec<f64>,
    pub potential: Option<Potential>,
}

impl Problem {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let grid = cfg.problem.grid()?;
        let coeff = sample_coefficients(&grid, &cfg.problem.coefficients)?;
        let partition = cfg.cover.build(&grid)?;
        let split = assemble_split(&grid, &coeff, &partition);
        let eta = cfg.problem.initial_preset().sample(&grid, cfg.seed).eta;
        let potential = cfg.nonlinearity.potential()?;
        Ok(Problem {
            grid,
            coeff,
            partition,
            split,
            eta,
            potential,
        })
    }

    /// Reference at the final time of the sweep in `cfg.scheme`.
    pub fn reference(&self, cfg: &ExperimentConfig) -> Result<ReferenceSolution> {
        let sweep = cfg.scheme.sweep();
        let h_min = sweep.last().map_or(cfg.scheme.h, |s| s.0);
        reference_semilinear(
            &self.split.full,
            self.potential.as_ref(),
            &self.eta,
            cfg.scheme.final_time(),
            h_min,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub h: f64,
    pub m: usize,
    pub error: f64,
    pub order_running: Option<f64>,
    pub walltime_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub scheme: SchemeKind,
    pub q: usize,
    pub delta: f64,
    pub rows: Vec<SweepRow>,
    /// Least-squares order over all levels, when there are at least three.
    pub observed_order: Option<f64>,
    pub reference_method: ReferenceMethod,
    pub reference_accuracy: f64,
    pub config: ExperimentConfig,
}

impl ExperimentResult {
    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| (r.h, r.error)).collect()
    }
}

pub fn scheme_config(cfg: &ExperimentConfig, kind: SchemeKind, h: f64, m: usize) -> SchemeConfig {
    SchemeConfig {
        kind,
        h,
        m,
        strict_restriction: cfg.scheme.strict,
        part_order: cfg.scheme.order.clone(),
    }
}

/// Runs the step sweep of `cfg` with scheme `kind` against `reference`.
pub fn run_sweep(
    problem: &Problem,
    reference: &ReferenceSolution,
    kind: SchemeKind,
    cfg: &ExperimentConfig,
    solver: &SolverOptions,
    cache: &FactorCache,
) -> Result<ExperimentResult> {
    let mut rows = Vec::new();
    for (h, m) in cfg.scheme.sweep() {
        let sc = scheme_config(cfg, kind, h, m);
        let start = Instant::now();
        let traj = integrate(&sc, &problem.split, problem.potential.as_ref(), &problem.eta, solver, cache)?;
        let walltime_s = start.elapsed().as_secs_f64();
        let error = error_norm(&traj.final_state.u, &reference.u_ref, &problem.grid);
        log::info!("{kind} h = {h:e} m = {m}: error {error:e} ({walltime_s:.3} s)");
        rows.push(SweepRow {
            h,
            m,
            error,
            order_running: None,
            walltime_s,
        });
    }
    let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.h, r.error)).collect();
    for (row, o) in rows.iter_mut().zip(running_orders(&pairs)) {
        row.order_running = o;
    }
    let coarsest = pairs.iter().map(|p| p.1).fold(0.0, f64::max);
    let volume: f64 = problem.grid.extents().iter().product();
    let ref_l2 = reference.accuracy * volume.sqrt();
    if ref_l2 * REFERENCE_MARGIN > coarsest {
        return Err(Error::AccuracyNotReached {
            estimate: ref_l2,
            required: coarsest / REFERENCE_MARGIN,
        });
    }
    let observed_order = if pairs.len() >= 3 {
        Some(convergence_order(&pairs)?)
    } else {
        None
    };
    Ok(ExperimentResult {
        scheme: kind,
        q: problem.split.q(),
        delta: problem.partition.delta,
        rows,
        observed_order,
        reference_method: reference.method,
        reference_accuracy: reference.accuracy,
        config: cfg.clone(),
    })
}

/// Builds the problem, computes the reference and runs the sweep of
/// `cfg.scheme.kind`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let problem = Problem::from_config(cfg)?;
    let reference = problem.reference(cfg)?;
    run_sweep(&problem, &reference, cfg.scheme.kind, cfg, &cfg.solver, &FactorCache::new())
}

/// One sweep per scheme, all against the same reference solution.
pub fn run_orders(cfg: &ExperimentConfig, kinds: &[SchemeKind]) -> Result<Vec<ExperimentResult>> {
    if kinds.is_empty() {
        return Err(Error::validation("schemes", "scheme list is empty"));
    }
    let problem = Problem::from_config(cfg)?;
    let reference = problem.reference(cfg)?;
    let cache = FactorCache::new();
    kinds
        .iter()
        .map(|&k| run_sweep(&problem, &reference, k, cfg, &cfg.solver, &cache))
        .collect()
}

pub const CSV_HEADER: [&str; 8] = ["scheme", "q", "delta", "h", "m", "error", "order_running", "walltime_s"];

/// One CSV row per step size of every result.
pub fn write_csv(results: &[ExperimentResult], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in results {
        for row in &r.rows {
            w.write_record([
                r.scheme.name().to_string(),
                r.q.to_string(),
                r.delta.to_string(),
                format!("{:e}", row.h),
                row.m.to_string(),
                format!("{:e}", row.error),
                row.order_running.map(|o| format!("{o:.6}")).unwrap_or_default(),
                format!("{:.6}", row.walltime_s),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble_full;
    use crate::domain::{build_grid, BoundaryKind, CoefficientPreset};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn laplacian_1d(n: usize, bc: BoundaryKind) -> (Grid, SparseOperator) {
        let g = build_grid(1, &[1.0], &[n], bc).unwrap();
        let c = sample_coefficients(&g, &CoefficientPreset::default()).unwrap();
        let a = assemble_full(&g, &c);
        (g, a)
    }

    #[test]
    fn expm_trivial_cases() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -1.0]));
        let e = expm(&a).unwrap();
        assert!((e[(0, 0)] - (-1f64).exp()).abs() < 1e-15);
        assert_eq!(e[(0, 1)], 0.0);
        let z = expm(&DMatrix::zeros(3, 3)).unwrap();
        assert_eq!(z, DMatrix::identity(3, 3));
    }

    #[test]
    fn expm_matches_eigendecomposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for scale in [1e-3, 0.1, 0.5, 1.5, 4.0, 50.0] {
            let b = DMatrix::from_fn(6, 6, |_, _| rng.gen_range(-1.0..1.0));
            let a = (&b + b.transpose()) * (0.5 * scale);
            let eig = a.clone().symmetric_eigen();
            let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::exp));
            let oracle = &eig.eigenvectors * d * eig.eigenvectors.transpose();
            let e = expm(&a).unwrap();
            let rel = (&e - &oracle).abs().max() / oracle.abs().max();
            assert!(rel < 1e-12, "scale {scale}: {rel}");
        }
    }

    #[test]
    fn reference_sine_mode_decay() {
        let n = 31;
        let (g, a) = laplacian_1d(n, BoundaryKind::Dirichlet);
        let dx = g.spacing(0);
        let eta: Vec<f64> = (0..n).map(|i| (std::f64::consts::PI * g.node_coord(0, i)).sin()).collect();
        let t = 0.05;
        let r = reference_linear(&a, &eta, t).unwrap();
        // eigenvalue from a dense symmetric eigendecomposition
        let eig = a.to_dense().symmetric_eigen();
        let mu = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mu_formula = -(2.0 / (dx * dx)) * (1.0 - (std::f64::consts::PI * dx).cos());
        assert!((mu - mu_formula).abs() < 1e-9 * mu.abs());
        for (u, e) in r.u_ref.iter().zip(&eta) {
            assert!((u - (t * mu).exp() * e).abs() < 1e-12);
        }
    }

    #[test]
    fn reference_halving_consistency() {
        let (_, a) = laplacian_1d(63, BoundaryKind::Neumann);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let eta: Vec<f64> = (0..63).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = reference_linear(&a, &eta, 0.25).unwrap();
        let scale = r.u_ref.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(r.accuracy <= 1e-11 * scale);
    }

    #[test]
    fn reference_trivial_cases() {
        let a = SparseOperator::from_dense(&[vec![-1.0, 0.0], vec![0.0, -1.0]]).unwrap();
        let r = reference_linear(&a, &[2.0, -3.0], 1.0).unwrap();
        assert!((r.u_ref[0] - 2.0 * (-1f64).exp()).abs() < 1e-15);
        let z = SparseOperator::zeros(3);
        assert_eq!(reference_linear(&z, &[1.0, 2.0, 3.0], 5.0).unwrap().u_ref, vec![1.0, 2.0, 3.0]);
        let big = SparseOperator::zeros(DENSE_LIMIT + 1);
        assert!(matches!(
            reference_linear(&big, &vec![0.0; DENSE_LIMIT + 1], 1.0),
            Err(Error::TooLargeForDense { .. })
        ));
    }

    #[test]
    fn semilinear_reference_stationary_and_linear() {
        let (_, a) = laplacian_1d(17, BoundaryKind::Neumann);
        let p = Potential::new(3).unwrap();
        let r = reference_semilinear(&a, Some(&p), &[1.0; 17], 0.5, 0.01).unwrap();
        assert!(r.u_ref.iter().all(|u| (u - 1.0).abs() < 1e-12));
        let eta: Vec<f64> = (0..17).map(|i| (i as f64 * 0.3).cos()).collect();
        let lin = reference_linear(&a, &eta, 0.5).unwrap();
        let none = reference_semilinear(&a, None, &eta, 0.5, 0.01).unwrap();
        assert!(max_abs_diff(&lin.u_ref, &none.u_ref) <= 1e-10);
    }

    /// Backward Euler on the full system with Newton per step, Richardson
    /// extrapolated from two tiny step sizes.
    fn backward_euler_oracle(a: &DMatrix<f64>, p: &Potential, eta: &[f64], t: f64, steps: usize) -> Vec<f64> {
        let n = eta.len();
        let h = t / steps as f64;
        let mut u = DVector::from_column_slice(eta);
        for _ in 0..steps {
            let mut w = u.clone();
            for _ in 0..30 {
                let fw = w.map(|x| p.eval_scalar(x));
                let res = &w - a * &w * h - fw * h - &u;
                if res.amax() < 1e-15 {
                    break;
                }
                let dfw = w.map(|x| 1.0 - 3.0 * x * x);
                let jac = DMatrix::identity(n, n) - a * h - DMatrix::from_diagonal(&dfw) * h;
                w -= jac.lu().solve(&res).unwrap();
            }
            u = w;
        }
        u.iter().copied().collect()
    }

    #[test]
    fn semilinear_reference_matches_backward_euler_oracle() {
        let n = 7;
        let (g, a) = laplacian_1d(n, BoundaryKind::Dirichlet);
        let p = Potential::new(3).unwrap();
        let eta: Vec<f64> = (0..n).map(|i| 0.9 * (std::f64::consts::PI * g.node_coord(0, i)).sin()).collect();
        let t = 0.02;
        let r = reference_semilinear(&a, Some(&p), &eta, t, 1e-3).unwrap();
        let dense = a.to_dense();
        let coarse = backward_euler_oracle(&dense, &p, &eta, t, 10_000);
        let fine = backward_euler_oracle(&dense, &p, &eta, t, 20_000);
        let oracle: Vec<f64> = coarse.iter().zip(&fine).map(|(c, f)| 2.0 * f - c).collect();
        let gap = max_abs_diff(&r.u_ref, &oracle);
        assert!(gap < 1e-7, "gap {gap}");
    }

    #[test]
    fn error_norm_examples() {
        let g = build_grid(2, &[1.0, 1.0], &[9, 9], BoundaryKind::Neumann).unwrap();
        let n = g.node_count();
        let u = vec![0.25; n];
        assert_eq!(error_norm(&u, &u, &g), 0.0);
        assert!((error_norm(&u, &vec![0.0; n], &g) - 0.25).abs() < 1e-15);

        // compensated summation oracle
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for i in 0..n {
            let term = (a[i] - b[i]).powi(2) * g.cell_volume(i) - comp;
            let next = sum + term;
            comp = (next - sum) - term;
            sum = next;
        }
        assert!((error_norm(&a, &b, &g) - sum.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn order_examples() {
        let o = convergence_order(&[(0.1, 0.1), (0.05, 0.05), (0.025, 0.025)]).unwrap();
        assert!((o - 1.0).abs() < 1e-12);
        assert!(matches!(
            convergence_order(&[(0.1, 0.1), (0.05, 0.0), (0.025, 0.025)]),
            Err(Error::DegenerateErrors(_))
        ));
        assert!(convergence_order(&[(0.1, f64::NAN), (0.05, 1.0), (0.025, 0.5)]).is_err());
        assert!(convergence_order(&[(0.1, 0.1), (0.05, 0.05)]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let pairs: Vec<(f64, f64)> = (0..5)
                .map(|l| {
                    let h = 0.1 / (1 << l) as f64;
                    (h, 3.0 * h * (1.0 + rng.gen_range(-0.05..0.05)))
                })
                .collect();
            let o = convergence_order(&pairs).unwrap();
            assert!((0.9..=1.1).contains(&o), "{o}");
        }
    }

    #[test]
    fn running_orders_first_is_none() {
        let r = running_orders(&[(0.1, 0.4), (0.05, 0.1)]);
        assert_eq!(r[0], None);
        assert!((r[1].unwrap() - 2.0).abs() < 1e-12);
    }
}
