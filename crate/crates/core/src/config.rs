//! Experiment configuration files (JSON).
//!
//! ```json
//! {
//!   "problem": { "dim": 1, "n": 127, "bc": "Dirichlet",
//!                "coefficients": { "preset": "constant", "lambda": 1.0 } },
//!   "cover":   { "kind": "stripes", "counts": [4], "delta": 0.15 },
//!   "scheme":  { "kind": "PeacemanRachford", "h": 0.03125, "m": 8 }
//! }
//! ```
//!
//! The step sweep starts at `scheme.h` with `scheme.m` steps and halves `h`
//! (doubling `m`) `scheme.levels - 1` times, so every run ends at
//! `T = h m`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::{build_grid, BoundaryKind, CoefficientPreset, Grid, InitialPreset};
use crate::error::{Error, Result};
use crate::nonlinear::Potential;
use crate::partition::{CoverKind, CoverSpec};
use crate::schemes::SchemeKind;
use crate::solver::SolverOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub cover: CoverSpec,
    pub scheme: SchemeSection,
    #[serde(default)]
    pub nonlinearity: NonlinearityConfig,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub seed: u64,
}

/// Either one value for every dimension or one per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerDim<T> {
    Uniform(T),
    Each(Vec<T>),
}

impl<T: Copy> PerDim<T> {
    pub fn expand(&self, dim: usize) -> Vec<T> {
        match self {
            PerDim::Uniform(v) => vec![*v; dim],
            PerDim::Each(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub dim: usize,
    #[serde(default = "unit_extent")]
    pub extents: PerDim<f64>,
    pub n: PerDim<usize>,
    #[serde(default = "dirichlet")]
    pub bc: BoundaryKind,
    #[serde(default)]
    pub coefficients: CoefficientPreset,
    /// Defaults to the lowest sine mode (Dirichlet) or cosine mode (Neumann).
    #[serde(default)]
    pub initial: Option<InitialPreset>,
}

fn unit_extent() -> PerDim<f64> {
    PerDim::Uniform(1.0)
}

fn dirichlet() -> BoundaryKind {
    BoundaryKind::Dirichlet
}

impl ProblemConfig {
    pub fn grid(&self) -> Result<Grid> {
        build_grid(
            self.dim,
            &self.extents.expand(self.dim),
            &self.n.expand(self.dim),
            self.bc,
        )
    }

    pub fn initial_preset(&self) -> InitialPreset {
        self.initial.clone().unwrap_or(match self.bc {
            BoundaryKind::Dirichlet => InitialPreset::SineModes { amplitude: 1.0 },
            BoundaryKind::Neumann => InitialPreset::CosineModes { amplitude: 1.0 },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSection {
    pub kind: SchemeKind,
    /// Coarsest step size.
    pub h: f64,
    /// Step count at the coarsest level.
    pub m: usize,
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default = "yes")]
    pub strict: bool,
    #[serde(default)]
    pub order: Option<Vec<usize>>,
}

fn default_levels() -> usize {
    5
}

fn yes() -> bool {
    true
}

impl SchemeSection {
    pub fn final_time(&self) -> f64 {
        self.h * self.m as f64
    }

    /// `(h, m)` for every level, coarsest first.
    pub fn sweep(&self) -> Vec<(f64, usize)> {
        (0..self.levels)
            .map(|l| (self.h / (1u64 << l) as f64, self.m << l))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NonlinearityKind {
    #[default]
    None,
    Potential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearityConfig {
    #[serde(default)]
    pub kind: NonlinearityKind,
    #[serde(default = "default_p")]
    pub p: u32,
}

fn default_p() -> u32 {
    3
}

impl Default for NonlinearityConfig {
    fn default() -> Self {
        NonlinearityConfig {
            kind: NonlinearityKind::None,
            p: default_p(),
        }
    }
}

impl NonlinearityConfig {
    pub fn potential(&self) -> Result<Option<Potential>> {
        match self.kind {
            NonlinearityKind::None => Ok(None),
            NonlinearityKind::Potential => Potential::new(self.p)
                .map(Some)
                .map_err(|e| Error::validation("nonlinearity.p", e.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub csv: Option<PathBuf>,
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}

/// Parses and validates a config document.
///
/// ```
/// let cfg = ddsplit::config::parse_config_str(r#"{
///     "problem": { "dim": 1, "n": 31 },
///     "cover": { "kind": "stripes", "counts": [4], "delta": 0.1 },
///     "scheme": { "kind": "AdditiveFirstOrder", "h": 0.01, "m": 10 }
/// }"#).unwrap();
/// assert!(cfg.scheme.strict);
/// assert_eq!(cfg.scheme.levels, 5);
/// ```
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
        key: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    validate(&cfg)?;
    Ok(cfg)
}

/// Checks every constraint that does not need assembled operators.
pub fn validate(cfg: &ExperimentConfig) -> Result<()> {
    let p = &cfg.problem;
    if p.dim != 1 && p.dim != 2 {
        return Err(Error::validation("problem.dim", format!("must be 1 or 2, got {}", p.dim)));
    }
    let extents = p.extents.expand(p.dim);
    if extents.len() != p.dim {
        return Err(Error::validation("problem.extents", format!("expected {} values", p.dim)));
    }
    if extents.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        return Err(Error::validation("problem.extents", "extents must be positive"));
    }
    let n = p.n.expand(p.dim);
    if n.len() != p.dim {
        return Err(Error::validation("problem.n", format!("expected {} values", p.dim)));
    }
    if n.iter().any(|&k| k < 3) {
        return Err(Error::validation("problem.n", "need at least 3 nodes per dimension"));
    }
    if let Some(crate::domain::InitialPreset::Indicator { lo, hi, .. }) = &p.initial {
        if lo >= hi {
            return Err(Error::validation("problem.initial", "indicator needs lo < hi"));
        }
    }

    let c = &cfg.cover;
    if c.kind != CoverKind::Single && !(c.delta > 0.0 && c.delta.is_finite()) {
        return Err(Error::validation("cover.delta", format!("must be positive, got {}", c.delta)));
    }
    if c.kind == CoverKind::Stripes {
        if c.counts.len() != 1 {
            return Err(Error::validation("cover.counts", "stripes take one stripe count"));
        }
        if matches!(c.colors, Some(q) if q < 1) {
            return Err(Error::validation("cover.colors", "need at least one colour"));
        }
    }
    if c.kind == CoverKind::Blocks && p.dim != 2 {
        return Err(Error::validation("cover.kind", "blocks need a two-dimensional problem"));
    }

    let s = &cfg.scheme;
    if !(s.h > 0.0 && s.h.is_finite()) {
        return Err(Error::validation("scheme.h", format!("must be positive, got {}", s.h)));
    }
    if s.m == 0 {
        return Err(Error::validation("scheme.m", "need at least one step"));
    }
    if s.levels == 0 || s.levels > 20 {
        return Err(Error::validation("scheme.levels", "must be between 1 and 20"));
    }
    let q = c.q();
    if s.kind.requires_two_parts() && q != 2 {
        return Err(Error::validation(
            "scheme.kind",
            format!("{} is only defined for two operators, cover gives q = {q}", s.kind),
        ));
    }
    if let Some(order) = &s.order {
        let mut sorted = order.clone();
        sorted.sort_unstable();
        if sorted != (0..q).collect::<Vec<_>>() {
            return Err(Error::validation(
                "scheme.order",
                format!("must be a permutation of 0..{q}, got {order:?}"),
            ));
        }
    }

    let potential = cfg.nonlinearity.potential()?;
    if potential.is_some() && !s.kind.is_semilinear() {
        return Err(Error::validation(
            "nonlinearity.kind",
            format!("{} is linear; use SemilinearImplicitF or SemilinearExplicitF", s.kind),
        ));
    }

    if !(cfg.solver.tol > 0.0) {
        return Err(Error::validation("solver.tol", "must be positive"));
    }
    if cfg.solver.max_iter == 0 {
        return Err(Error::validation("solver.max_iter", "must be positive"));
    }

    // grid and partition construction catch the remaining geometric issues
    let grid = p.grid().map_err(|e| Error::validation("problem", e.to_string()))?;
    c.build(&grid).map_err(|e| match e {
        Error::Validation { .. } => e,
        other => Error::validation("cover", other.to_string()),
    })?;
    Ok(())
}
