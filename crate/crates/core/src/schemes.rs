//! Time-stepping operators `S_h` built from part resolvents.
//!
//! | kind | step | resolvent scale |
//! |------|------|-----------------|
//! | additive | `(1/q) sum_k (I - hq A_k)^{-1}` | `h q` |
//! | Douglas-Rachford | `(I - h A_2)^{-1} (I - h A_1)^{-1} (I + h^2 A_1 A_2)` | `h` |
//! | Peaceman-Rachford | `(I - h/2 A_2)^{-1} (I + h/2 A_1) (I - h/2 A_1)^{-1} (I + h/2 A_2)` | `h/2` |
//! | fractional-step CN | mean of the forward and backward sweeps of `(I - h/2 A_k)^{-1} (I + h/2 A_k)` | `h/2` |
//!
//! The semilinear variants live in [`crate::nonlinear`].

use std::sync::Arc;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{SparseOperator, SplitOperator};
use crate::error::{Error, Result};
use crate::nonlinear::{step_semilinear_explicit_f, step_semilinear_implicit_f, Potential};
use crate::solver::{FactorCache, ResolventFactor, SolverOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchemeKind {
    AdditiveFirstOrder,
    DouglasRachford,
    PeacemanRachford,
    FractionalStepCN,
    SemilinearImplicitF,
    SemilinearExplicitF,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 6] = [
        SchemeKind::AdditiveFirstOrder,
        SchemeKind::DouglasRachford,
        SchemeKind::PeacemanRachford,
        SchemeKind::FractionalStepCN,
        SchemeKind::SemilinearImplicitF,
        SchemeKind::SemilinearExplicitF,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::AdditiveFirstOrder => "AdditiveFirstOrder",
            SchemeKind::DouglasRachford => "DouglasRachford",
            SchemeKind::PeacemanRachford => "PeacemanRachford",
            SchemeKind::FractionalStepCN => "FractionalStepCN",
            SchemeKind::SemilinearImplicitF => "SemilinearImplicitF",
            SchemeKind::SemilinearExplicitF => "SemilinearExplicitF",
        }
    }

    /// Accepts the full names and the short forms `Additive`, `DR`, `PR`,
    /// `FSCN`, `ImplicitF`, `ExplicitF` (case-insensitive).
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim().to_ascii_lowercase();
        let kind = match s.as_str() {
            "additive" | "additivefirstorder" => SchemeKind::AdditiveFirstOrder,
            "dr" | "douglasrachford" => SchemeKind::DouglasRachford,
            "pr" | "peacemanrachford" => SchemeKind::PeacemanRachford,
            "fscn" | "fractionalstepcn" => SchemeKind::FractionalStepCN,
            "implicitf" | "semilinearimplicitf" => SchemeKind::SemilinearImplicitF,
            "explicitf" | "semilinearexplicitf" => SchemeKind::SemilinearExplicitF,
            _ => return None,
        };
        Some(kind)
    }

    /// Expected convergence order for smooth solutions.
    pub fn order(self) -> usize {
        match self {
            SchemeKind::PeacemanRachford | SchemeKind::FractionalStepCN => 2,
            _ => 1,
        }
    }

    /// ADI schemes are only defined for two parts.
    pub fn requires_two_parts(self) -> bool {
        matches!(self, SchemeKind::DouglasRachford | SchemeKind::PeacemanRachford)
    }

    pub fn is_semilinear(self) -> bool {
        matches!(self, SchemeKind::SemilinearImplicitF | SchemeKind::SemilinearExplicitF)
    }

    /// Scale `tau` of the resolvents `(I - tau A_k)^{-1}` for step `h`.
    pub fn resolvent_scale(self, h: f64, q: usize) -> f64 {
        match self {
            SchemeKind::AdditiveFirstOrder | SchemeKind::SemilinearImplicitF | SchemeKind::SemilinearExplicitF => {
                h * q as f64
            }
            SchemeKind::DouglasRachford => h,
            SchemeKind::PeacemanRachford | SchemeKind::FractionalStepCN => 0.5 * h,
        }
    }
}

impl std::fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeConfig {
    pub kind: SchemeKind,
    pub h: f64,
    pub m: usize,
    pub strict_restriction: bool,
    /// Permutation applied to the parts before stepping. `None` keeps the
    /// partition's colour order.
    pub part_order: Option<Vec<usize>>,
}

impl SchemeConfig {
    pub fn new(kind: SchemeKind, h: f64, m: usize) -> Self {
        SchemeConfig {
            kind,
            h,
            m,
            strict_restriction: true,
            part_order: None,
        }
    }

    pub fn final_time(&self) -> f64 {
        self.h * self.m as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub u: Vec<f64>,
    pub t: f64,
}

impl State {
    pub fn new(u: Vec<f64>) -> Self {
        State { u, t: 0.0 }
    }
}

/// Evaluates the step-size hypothesis of `config.kind` for part shifts
/// `m_parts` and nonlinear shift `m_f`.
///
/// Returns `Ok(None)` when it holds, `Ok(Some(reason))` for a violation in
/// lax mode, and `StepRestrictionViolated` in strict mode.
pub fn check_restriction(config: &SchemeConfig, m_parts: &[f64], m_f: Option<f64>) -> Result<Option<String>> {
    let h = config.h;
    let q = m_parts.len() as f64;
    let m = m_parts.iter().copied().fold(0.0, f64::max);
    let violation = match config.kind {
        SchemeKind::AdditiveFirstOrder | SchemeKind::SemilinearExplicitF => {
            let v = h * q * m;
            (v > 0.5).then(|| format!("h q M = {v} exceeds 1/2 (additive step restriction)"))
        }
        SchemeKind::SemilinearImplicitF => {
            let v = h * q * m;
            let vf = h * m_f.unwrap_or(0.0);
            if v > 0.5 {
                Some(format!("h q M = {v} exceeds 1/2 (additive step restriction)"))
            } else if vf > 0.5 {
                Some(format!("h M[F] = {vf} exceeds 1/2 (nonlinear resolvent restriction)"))
            } else {
                None
            }
        }
        SchemeKind::DouglasRachford | SchemeKind::PeacemanRachford => {
            let v = h * m;
            (v > 0.5).then(|| format!("h max(M[A_1], M[A_2]) = {v} exceeds 1/2 (ADI step restriction)"))
        }
        SchemeKind::FractionalStepCN => {
            let v = h * m;
            (v > 1.0).then(|| format!("h M = {v} exceeds 1 (fractional-step Crank-Nicolson restriction)"))
        }
    };
    match violation {
        None => Ok(None),
        Some(msg) if config.strict_restriction => Err(Error::StepRestrictionViolated(msg)),
        Some(msg) => {
            warn!("{msg}; continuing in lax mode");
            Ok(Some(msg))
        }
    }
}

fn axpy_into(u: &[f64], a: f64, x: &[f64]) -> Vec<f64> {
    u.iter().zip(x).map(|(ui, xi)| ui + a * xi).collect()
}

/// Additive step `(1/q) sum_k (I - hq A_k)^{-1} u`. `factors[k]` must be
/// built with `tau = h q`.
pub fn step_additive(state: &State, h: f64, factors: &[Arc<ResolventFactor>]) -> Result<State> {
    let q = factors.len();
    let solves = factors
        .par_iter()
        .map(|f| f.solve(&state.u))
        .collect::<Result<Vec<_>>>()?;
    let inv_q = 1.0 / q as f64;
    let mut u = vec![0.0; state.u.len()];
    for s in &solves {
        for (ui, si) in u.iter_mut().zip(s) {
            *ui += si;
        }
    }
    if q > 1 {
        for ui in &mut u {
            *ui *= inv_q;
        }
    }
    Ok(State { u, t: state.t + h })
}

/// Douglas-Rachford step. Factors built with `tau = h`.
pub fn step_douglas_rachford(
    state: &State,
    h: f64,
    a1: &SparseOperator,
    a2: &SparseOperator,
    f1: &ResolventFactor,
    f2: &ResolventFactor,
) -> Result<State> {
    let a12u = a1.apply(&a2.apply(&state.u));
    let w = axpy_into(&state.u, h * h, &a12u);
    let w = f1.solve(&w)?;
    let u = f2.solve(&w)?;
    Ok(State { u, t: state.t + h })
}

/// Peaceman-Rachford step. Factors built with `tau = h / 2`.
pub fn step_peaceman_rachford(
    state: &State,
    h: f64,
    a1: &SparseOperator,
    a2: &SparseOperator,
    f1: &ResolventFactor,
    f2: &ResolventFactor,
) -> Result<State> {
    let half = 0.5 * h;
    let w = axpy_into(&state.u, half, &a2.apply(&state.u));
    let w = f1.solve(&w)?;
    let w = axpy_into(&w, half, &a1.apply(&w));
    let u = f2.solve(&w)?;
    Ok(State { u, t: state.t + h })
}

fn cayley_sweep<'a>(
    u: &[f64],
    half: f64,
    order: impl Iterator<Item = (&'a Arc<SparseOperator>, &'a Arc<ResolventFactor>)>,
) -> Result<Vec<f64>> {
    let mut v = u.to_vec();
    for (a, f) in order {
        let w = axpy_into(&v, half, &a.apply(&v));
        v = f.solve(&w)?;
    }
    Ok(v)
}

/// Fractional-step Crank-Nicolson step. Factors built with `tau = h / 2`.
pub fn step_fscn(
    state: &State,
    h: f64,
    parts: &[Arc<SparseOperator>],
    factors: &[Arc<ResolventFactor>],
) -> Result<State> {
    let half = 0.5 * h;
    let (fwd, bwd) = rayon::join(
        || cayley_sweep(&state.u, half, parts.iter().zip(factors)),
        || cayley_sweep(&state.u, half, parts.iter().zip(factors).rev()),
    );
    let (fwd, bwd) = (fwd?, bwd?);
    let u = fwd.iter().zip(&bwd).map(|(a, b)| 0.5 * (a + b)).collect();
    Ok(State { u, t: state.t + h })
}

/// A scheme bound to its operators and prebuilt factors.
#[derive(Debug, Clone)]
pub struct Stepper {
    kind: SchemeKind,
    h: f64,
    parts: Vec<Arc<SparseOperator>>,
    factors: Vec<Arc<ResolventFactor>>,
    potential: Option<Potential>,
}

impl Stepper {
    /// Checks the step restriction and builds (or fetches) the factors.
    pub fn new(
        config: &SchemeConfig,
        split: &SplitOperator,
        potential: Option<&Potential>,
        solver: &SolverOptions,
        cache: &FactorCache,
    ) -> Result<Self> {
        let q = split.q();
        if !(config.h > 0.0 && config.h.is_finite()) {
            return Err(Error::InvalidArgument(format!("step size must be positive, got {}", config.h)));
        }
        if config.kind.requires_two_parts() && q != 2 {
            return Err(Error::InvalidArgument(format!(
                "{} needs exactly two parts, got {q}",
                config.kind
            )));
        }
        if potential.is_some() && !config.kind.is_semilinear() {
            return Err(Error::InvalidArgument(format!(
                "{} is a linear scheme; a nonlinearity needs a semilinear scheme",
                config.kind
            )));
        }
        let parts: Vec<Arc<SparseOperator>> = match &config.part_order {
            None => split.parts.clone(),
            Some(order) => {
                let mut seen = vec![false; q];
                for &k in order {
                    if k >= q || std::mem::replace(&mut seen[k], true) {
                        return Err(Error::InvalidArgument(format!(
                            "part order {order:?} is not a permutation of 0..{q}"
                        )));
                    }
                }
                if order.len() != q {
                    return Err(Error::InvalidArgument(format!(
                        "part order {order:?} is not a permutation of 0..{q}"
                    )));
                }
                order.iter().map(|&k| Arc::clone(&split.parts[k])).collect()
            }
        };
        let m_parts: Vec<f64> = parts.iter().map(|p| p.shift()).collect();
        check_restriction(config, &m_parts, potential.map(|p| p.m_f()))?;
        let tau = config.kind.resolvent_scale(config.h, q);
        let factors = parts
            .iter()
            .map(|p| cache.get_or_factorize(p, tau, solver))
            .collect::<Result<Vec<_>>>()?;
        Ok(Stepper {
            kind: config.kind,
            h: config.h,
            parts,
            factors,
            potential: potential.cloned(),
        })
    }

    pub fn kind(&self) -> SchemeKind {
        self.kind
    }

    pub fn step(&self, state: &State) -> Result<State> {
        let h = self.h;
        match self.kind {
            SchemeKind::AdditiveFirstOrder => step_additive(state, h, &self.factors),
            SchemeKind::DouglasRachford => step_douglas_rachford(
                state,
                h,
                &self.parts[0],
                &self.parts[1],
                &self.factors[0],
                &self.factors[1],
            ),
            SchemeKind::PeacemanRachford => step_peaceman_rachford(
                state,
                h,
                &self.parts[0],
                &self.parts[1],
                &self.factors[0],
                &self.factors[1],
            ),
            SchemeKind::FractionalStepCN => step_fscn(state, h, &self.parts, &self.factors),
            SchemeKind::SemilinearImplicitF => match &self.potential {
                Some(p) => step_semilinear_implicit_f(state, h, &self.factors, p),
                None => step_additive(state, h, &self.factors),
            },
            SchemeKind::SemilinearExplicitF => match &self.potential {
                Some(p) => step_semilinear_explicit_f(state, h, &self.factors, p),
                None => step_additive(state, h, &self.factors),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub final_state: State,
    /// Euclidean norm of the state after each step, starting with `eta`.
    pub norms: Vec<f64>,
    pub max_norm: f64,
    /// Every state, when requested.
    pub states: Option<Vec<Vec<f64>>>,
}

pub fn euclidean_norm(u: &[f64]) -> f64 {
    u.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Applies `config.m` steps to `eta`.
pub fn integrate(
    config: &SchemeConfig,
    split: &SplitOperator,
    potential: Option<&Potential>,
    eta: &[f64],
    solver: &SolverOptions,
    cache: &FactorCache,
) -> Result<Trajectory> {
    integrate_with(config, split, potential, eta, solver, cache, false)
}

pub fn integrate_with(
    config: &SchemeConfig,
    split: &SplitOperator,
    potential: Option<&Potential>,
    eta: &[f64],
    solver: &SolverOptions,
    cache: &FactorCache,
    keep_states: bool,
) -> Result<Trajectory> {
    if eta.len() != split.size() {
        return Err(Error::InvalidArgument(format!(
            "initial data has {} entries, operator has {} rows",
            eta.len(),
            split.size()
        )));
    }
    let mut state = State::new(eta.to_vec());
    let mut norms = vec![euclidean_norm(eta)];
    let mut states = keep_states.then(|| vec![eta.to_vec()]);
    if config.m == 0 {
        return Ok(Trajectory {
            final_state: state,
            max_norm: norms[0],
            norms,
            states,
        });
    }
    let stepper = Stepper::new(config, split, potential, solver, cache)?;
    for step in 1..=config.m {
        state = stepper.step(&state)?;
        if state.u.iter().any(|x| !x.is_finite()) {
            return Err(Error::Diverged { step });
        }
        norms.push(euclidean_norm(&state.u));
        if let Some(s) = states.as_mut() {
            s.push(state.u.clone());
        }
    }
    let max_norm = norms.iter().copied().fold(0.0, f64::max);
    Ok(Trajectory {
        final_state: state,
        norms,
        max_norm,
        states,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::factorize;

    fn scalar(a: f64) -> Arc<SparseOperator> {
        Arc::new(SparseOperator::from_dense(&[vec![a]]).unwrap())
    }

    fn fac(a: &Arc<SparseOperator>, tau: f64) -> Arc<ResolventFactor> {
        Arc::new(factorize(a, tau, &SolverOptions::default()).unwrap())
    }

    #[test]
    fn restriction_examples() {
        let mut c = SchemeConfig::new(SchemeKind::AdditiveFirstOrder, 0.2, 5);
        assert_eq!(check_restriction(&c, &[0.0; 4], None).unwrap(), None);
        assert!(matches!(
            check_restriction(&c, &[1.0; 4], None),
            Err(Error::StepRestrictionViolated(_))
        ));
        c.strict_restriction = false;
        assert!(check_restriction(&c, &[1.0; 4], None).unwrap().is_some());
        let c = SchemeConfig::new(SchemeKind::FractionalStepCN, 0.9, 1);
        assert_eq!(check_restriction(&c, &[1.0, 1.0], None).unwrap(), None);
        let c = SchemeConfig::new(SchemeKind::FractionalStepCN, 1.1, 1);
        assert!(check_restriction(&c, &[1.0, 1.0], None).is_err());
        let c = SchemeConfig::new(SchemeKind::SemilinearImplicitF, 0.6, 1);
        assert!(check_restriction(&c, &[0.0], Some(1.0)).is_err());
        let c = SchemeConfig::new(SchemeKind::SemilinearExplicitF, 0.6, 1);
        assert_eq!(check_restriction(&c, &[0.0], Some(1.0)).unwrap(), None);
        let c = SchemeConfig::new(SchemeKind::DouglasRachford, 0.3, 1);
        assert!(check_restriction(&c, &[2.0, 0.0], None).is_err());
    }

    #[test]
    fn scalar_additive() {
        let a = scalar(-0.5);
        let f = fac(&a, 0.2);
        let s = step_additive(&State::new(vec![1.0]), 0.1, &[Arc::clone(&f), f]).unwrap();
        assert!((s.u[0] - 1.0 / 1.1).abs() < 1e-15);
        assert!((s.t - 0.1).abs() < 1e-15);
    }

    #[test]
    fn scalar_douglas_rachford() {
        let a = scalar(-1.0);
        let f = fac(&a, 0.1);
        let s = step_douglas_rachford(&State::new(vec![1.0]), 0.1, &a, &a, &f, &f).unwrap();
        assert!((s.u[0] - 1.01 / 1.21).abs() < 1e-15);
        assert!((s.u[0] - 0.834_710_7).abs() < 1e-7);
    }

    #[test]
    fn scalar_peaceman_rachford_and_fscn() {
        let a = scalar(-1.0);
        let f = fac(&a, 0.05);
        let expect = (0.95_f64 / 1.05).powi(2);
        let s = step_peaceman_rachford(&State::new(vec![1.0]), 0.1, &a, &a, &f, &f).unwrap();
        assert!((s.u[0] - expect).abs() < 1e-15);
        assert!((s.u[0] - 0.818_594_1).abs() < 1e-7);
        let parts = vec![Arc::clone(&a), Arc::clone(&a)];
        let s = step_fscn(&State::new(vec![1.0]), 0.1, &parts, &[Arc::clone(&f), f]).unwrap();
        assert!((s.u[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn zero_parts_are_identity() {
        let z = scalar(0.0);
        let f = fac(&z, 0.1);
        let u = State::new(vec![0.7]);
        assert_eq!(step_douglas_rachford(&u, 0.1, &z, &z, &f, &f).unwrap().u, vec![0.7]);
        assert_eq!(step_peaceman_rachford(&u, 0.1, &z, &z, &f, &f).unwrap().u, vec![0.7]);
    }

    #[test]
    fn commuting_diagonal_sweeps_agree() {
        // Cayley factors -1/2 and -3/4 are dyadic, so both orders round identically
        let a1 = Arc::new(SparseOperator::from_dense(&[vec![-12.0, 0.0], vec![0.0, -28.0]]).unwrap());
        let a2 = Arc::new(SparseOperator::from_dense(&[vec![-28.0, 0.0], vec![0.0, -12.0]]).unwrap());
        let parts = vec![Arc::clone(&a1), Arc::clone(&a2)];
        let factors = vec![fac(&a1, 0.25), fac(&a2, 0.25)];
        let u = [0.375, -1.25];
        let fwd = cayley_sweep(&u, 0.25, parts.iter().zip(&factors)).unwrap();
        let bwd = cayley_sweep(&u, 0.25, parts.iter().zip(&factors).rev()).unwrap();
        assert_eq!(fwd, bwd);
    }

    #[test]
    fn integrate_zero_steps_returns_eta() {
        let split = SplitOperator::from_parts(
            SparseOperator::from_dense(&[vec![-1.0]]).unwrap(),
            vec![SparseOperator::from_dense(&[vec![-1.0]]).unwrap()],
        )
        .unwrap();
        let c = SchemeConfig::new(SchemeKind::AdditiveFirstOrder, 0.1, 0);
        let t = integrate(&c, &split, None, &[2.0], &SolverOptions::default(), &FactorCache::new()).unwrap();
        assert_eq!(t.final_state.u, vec![2.0]);
        assert_eq!(t.norms, vec![2.0]);
    }

    #[test]
    fn adi_needs_two_parts() {
        let split = SplitOperator::from_parts(
            SparseOperator::from_dense(&[vec![-1.0]]).unwrap(),
            vec![SparseOperator::from_dense(&[vec![-1.0]]).unwrap()],
        )
        .unwrap();
        let c = SchemeConfig::new(SchemeKind::DouglasRachford, 0.1, 3);
        assert!(integrate(&c, &split, None, &[1.0], &SolverOptions::default(), &FactorCache::new()).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        // lax mode with an anti-dissipative part blows up
        let split = SplitOperator::from_parts(
            SparseOperator::from_dense(&[vec![0.0]]).unwrap(),
            vec![SparseOperator::from_dense(&[vec![-1e300]]).unwrap(), SparseOperator::from_dense(&[vec![1e300]]).unwrap()],
        )
        .unwrap();
        let mut c = SchemeConfig::new(SchemeKind::FractionalStepCN, 1.0, 50);
        c.strict_restriction = false;
        let r = integrate(&c, &split, None, &[1.0], &SolverOptions::default(), &FactorCache::new());
        assert!(r.is_err());
    }

    #[test]
    fn scheme_names_round_trip() {
        for k in SchemeKind::ALL {
            assert_eq!(SchemeKind::parse(k.name()), Some(k));
        }
        assert_eq!(SchemeKind::parse("fscn"), Some(SchemeKind::FractionalStepCN));
        assert_eq!(SchemeKind::parse("Additive"), Some(SchemeKind::AdditiveFirstOrder));
        assert_eq!(SchemeKind::parse("nope"), None);
    }
}
