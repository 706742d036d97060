//! The polynomial potential `F v = v - v^p` and the semilinear steps
//! `(I - hF)^{-1} S_add` (implicit `F`) and `S_add (I + hF)` (explicit `F`).

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schemes::{step_additive, State};
use crate::solver::ResolventFactor;

const NEWTON_MAX_ITER: usize = 50;
const NEWTON_TOL: f64 = 1e-13;

/// `F v = v - v^p` with `p` odd and at least 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Potential {
    p: u32,
}

impl Potential {
    pub fn new(p: u32) -> Result<Self> {
        if p < 3 || p % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "potential exponent must be odd and at least 3, got {p}"
            )));
        }
        Ok(Potential { p })
    }

    pub fn p(&self) -> u32 {
        self.p
    }

    /// Dissipativity shift of `F`: `(Fv - Fw, v - w) <= |v - w|^2`.
    pub fn m_f(&self) -> f64 {
        1.0
    }

    /// Lipschitz constant of `F` on `[-r, r]`, namely `max(1, p r^{p-1} - 1)`.
    pub fn lipschitz_on(&self, r: f64) -> f64 {
        let r = r.abs();
        (self.p as f64 * r.powi(self.p as i32 - 1) - 1.0).max(1.0)
    }

    #[inline]
    pub fn eval_scalar(&self, v: f64) -> f64 {
        v - v.powi(self.p as i32)
    }

    /// Solves `w - h F(w) = v` for a scalar `v`.
    ///
    /// Newton from `w = v` on `g(w) = (1 - h) w + h w^p - v`; `g` is strictly
    /// increasing for `h <= 1/2`, and a bisection step replaces any Newton
    /// iterate leaving the current bracket.
    pub fn resolve_scalar(&self, v: f64, h: f64) -> Result<f64> {
        if h == 0.0 {
            return Ok(v);
        }
        let p = self.p as i32;
        let g = |w: f64| (1.0 - h) * w + h * w.powi(p) - v;
        let dg = |w: f64| (1.0 - h) + h * self.p as f64 * w.powi(p - 1);
        let tol = NEWTON_TOL * v.abs().max(1.0);
        let mut lo = v.min(-v.abs() - 1.0);
        let mut hi = v.max(v.abs() + 1.0);
        let mut w = v;
        for _ in 0..NEWTON_MAX_ITER {
            let gw = g(w);
            if gw.abs() <= tol {
                return Ok(w);
            }
            if gw > 0.0 {
                hi = hi.min(w);
            } else {
                lo = lo.max(w);
            }
            let d = dg(w);
            let newton = w - gw / d;
            w = if d > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
        }
        if g(w).abs() <= tol {
            Ok(w)
        } else {
            Err(Error::NewtonFailed { value: v })
        }
    }
}

/// Pointwise `v_i - v_i^p`.
pub fn eval_f(v: &[f64], potential: &Potential) -> Vec<f64> {
    v.iter().map(|&x| potential.eval_scalar(x)).collect()
}

/// Pointwise `(I - hF)^{-1} v`.
pub fn resolve_f(v: &[f64], h: f64, potential: &Potential) -> Result<Vec<f64>> {
    v.par_iter().map(|&x| potential.resolve_scalar(x, h)).collect()
}

/// Additive linear substep followed by the nonlinear resolvent. `factors`
/// are built with `tau = h q`.
pub fn step_semilinear_implicit_f(
    state: &State,
    h: f64,
    factors: &[Arc<ResolventFactor>],
    potential: &Potential,
) -> Result<State> {
    let lin = step_additive(state, h, factors)?;
    Ok(State {
        u: resolve_f(&lin.u, h, potential)?,
        t: lin.t,
    })
}

/// Explicit nonlinear increment `u + h F(u)` followed by the additive linear
/// substep.
pub fn step_semilinear_explicit_f(
    state: &State,
    h: f64,
    factors: &[Arc<ResolventFactor>],
    potential: &Potential,
) -> Result<State> {
    let u: Vec<f64> = state.u.iter().map(|&x| x + h * potential.eval_scalar(x)).collect();
    step_additive(&State { u, t: state.t }, h, factors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::SparseOperator;
    use crate::solver::{factorize, SolverOptions};
    use proptest::prelude::*;

    fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if f(m) > 0.0 {
                b = m;
            } else {
                a = m;
            }
        }
        0.5 * (a + b)
    }

    fn cubic() -> Potential {
        Potential::new(3).unwrap()
    }

    fn scalar_factor(a: f64, tau: f64) -> Arc<ResolventFactor> {
        let op = Arc::new(SparseOperator::from_dense(&[vec![a]]).unwrap());
        Arc::new(factorize(&op, tau, &SolverOptions::default()).unwrap())
    }

    #[test]
    fn exponent_validation() {
        assert!(Potential::new(2).is_err());
        assert!(Potential::new(1).is_err());
        assert!(Potential::new(5).is_ok());
    }

    #[test]
    fn eval_examples() {
        let f = eval_f(&[0.0, 1.0, 2.0, -1.0], &cubic());
        assert_eq!(f, vec![0.0, 0.0, -6.0, 0.0]);
    }

    #[test]
    fn resolve_examples() {
        let p = cubic();
        assert_eq!(p.resolve_scalar(0.37, 0.0).unwrap(), 0.37);
        for h in [0.01, 0.1, 0.3, 0.5] {
            assert!((p.resolve_scalar(1.0, h).unwrap() - 1.0).abs() < 1e-15);
        }
        let oracle = bisect(|w| 0.9 * w + 0.1 * w * w * w - 2.0, 1.0, 2.0);
        let w = p.resolve_scalar(2.0, 0.1).unwrap();
        assert!((w - oracle).abs() < 1e-12);
        assert!((w - 1.687_903_5).abs() < 1e-7);
    }

    #[test]
    fn resolve_large_values() {
        let p = Potential::new(7).unwrap();
        for v in [1e3, -1e3, 50.0] {
            let w = p.resolve_scalar(v, 0.5).unwrap();
            let r = w - 0.5 * p.eval_scalar(w) - v;
            assert!(r.abs() <= 1e-12 * v.abs());
        }
    }

    #[test]
    fn implicit_step_examples() {
        let p = cubic();
        let s = step_semilinear_implicit_f(&State::new(vec![1.0]), 0.1, &[scalar_factor(0.0, 0.1)], &p).unwrap();
        assert!((s.u[0] - 1.0).abs() < 1e-15);
        let s = step_semilinear_implicit_f(&State::new(vec![1.0]), 0.1, &[scalar_factor(-1.0, 0.1)], &p).unwrap();
        let oracle = bisect(|w| 0.9 * w + 0.1 * w * w * w - 1.0 / 1.1, 0.0, 1.0);
        assert!((s.u[0] - oracle).abs() < 1e-12);
    }

    #[test]
    fn explicit_step_examples() {
        let p = cubic();
        let s = step_semilinear_explicit_f(&State::new(vec![2.0]), 0.1, &[scalar_factor(0.0, 0.1)], &p).unwrap();
        assert!((s.u[0] - 1.4).abs() < 1e-15);
        let s = step_semilinear_explicit_f(&State::new(vec![1.0]), 0.1, &[scalar_factor(-1.0, 0.1)], &p).unwrap();
        assert!((s.u[0] - 1.0 / 1.1).abs() < 1e-15);
    }

    #[test]
    fn roots_of_f_reduce_to_additive() {
        let p = cubic();
        let f = [scalar_factor(0.0, 0.2), scalar_factor(0.0, 0.2)];
        for r in [0.0, 1.0, -1.0] {
            let st = State::new(vec![r; 1]);
            let add = step_additive(&st, 0.1, &f).unwrap();
            let imp = step_semilinear_implicit_f(&st, 0.1, &f, &p).unwrap();
            let exp = step_semilinear_explicit_f(&st, 0.1, &f, &p).unwrap();
            assert_eq!(add.u, imp.u);
            assert_eq!(add.u, exp.u);
        }
    }

    proptest! {
        #[test]
        fn resolve_residual(v in prop::collection::vec(-3.0f64..3.0, 1..40), h in 0.0f64..0.5) {
            let p = cubic();
            let w = resolve_f(&v, h, &p).unwrap();
            let vmax = v.iter().fold(1.0f64, |m, x| m.max(x.abs()));
            for (wi, vi) in w.iter().zip(&v) {
                let r = wi - h * p.eval_scalar(*wi) - vi;
                prop_assert!(r.abs() <= 1e-12 * vmax);
            }
        }

        #[test]
        fn resolve_shift_bound(
            pairs in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..40),
            h in 0.0f64..0.5,
        ) {
            let p = Potential::new(5).unwrap();
            let u: Vec<f64> = pairs.iter().map(|x| x.0).collect();
            let v: Vec<f64> = pairs.iter().map(|x| x.1).collect();
            let ru = resolve_f(&u, h, &p).unwrap();
            let rv = resolve_f(&v, h, &p).unwrap();
            let d_out: f64 = ru.iter().zip(&rv).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let d_in: f64 = u.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            prop_assert!(d_out <= d_in / (1.0 - h * p.m_f()) * (1.0 + 1e-12) + 1e-14);
        }
    }
}
