//! Domain-decomposition operator splitting for linear and semilinear
//! diffusion-advection-reaction equations.
//!
//! The spatial operator `A` of a finite-difference discretization is split
//! with a partition of unity `{chi_k}` into weighted parts
//! `A_k v = div(chi_k lambda grad v) - chi_k rho . grad v - chi_k sigma v`
//! so that `A = sum_k A_k`. Each part only acts on one (possibly
//! disconnected) subdomain, and the time integrators in [`schemes`] only ever
//! invert `I - tau A_k`, which decouples into independent subdomain solves.
//!
//! Modules, bottom-up:
//!
//! * [`domain`]: grids, coefficient fields, initial data
//! * [`partition`]: stripe and block partitions of unity
//! * [`assembly`]: sparse `A` and `A_k`
//! * [`solver`]: resolvents `(I - tau A_k)^{-1}` per subdomain component
//! * [`schemes`]: additive, Douglas-Rachford, Peaceman-Rachford and
//!   fractional-step Crank-Nicolson steps
//! * [`nonlinear`]: the potential `F v = v - v^p` and semilinear steps
//! * [`harness`]: reference solutions, error norms and order studies
//! * [`config`] and [`cli`]: the `ddsplit` command line front end
//!
//! A guide with worked examples lives in the `book/` directory of the
//! repository; its code listings run as doctests.

pub mod assembly;
pub mod cli;
pub mod config;
pub mod domain;
pub mod error;
pub mod harness;
pub mod nonlinear;
pub mod partition;
pub mod schemes;
pub mod solver;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/partitions.md")]
    mod partitions {}
    #[doc = include_str!("../../../book/src/splitting.md")]
    mod splitting {}
    #[doc = include_str!("../../../book/src/schemes.md")]
    mod schemes {}
    #[doc = include_str!("../../../book/src/semilinear.md")]
    mod semilinear {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
