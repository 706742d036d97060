//! Structured grids, coefficient fields and initial data for the model problem
//!
//! ```text
//! du/dt = div(lambda grad u) - rho . grad u - sigma u   in a box [0,L1] x [0,L2]
//! ```
//!
//! with homogeneous Dirichlet or Neumann boundary conditions.
//!
//! Nodes are numbered lexicographically with the x index running fastest.
//! Faces are grouped per dimension: a face of dimension `d` sits halfway
//! between two nodes that are neighbours along axis `d`. Its position along
//! `d` is `(f + 1/2) * dx_d` for face index `f` under both boundary kinds.
//!
//! * Dirichlet grids store interior nodes only (`dx = L / (n + 1)`, node `i`
//!   at `(i + 1) dx`). Each grid line has `n + 1` faces; faces `0` and `n`
//!   touch the eliminated boundary nodes.
//! * Neumann grids store the boundary nodes too (`dx = L / (n - 1)`, node `i`
//!   at `i dx`). Each grid line has `n - 1` faces, all interior.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryKind {
    Dirichlet,
    Neumann,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    extents: Vec<f64>,
    n: Vec<usize>,
    spacing: Vec<f64>,
    bc: BoundaryKind,
}

/// Builds a uniform grid on `[0, extents[0]] x [0, extents[1]]`.
///
/// ```
/// use ddsplit::domain::{build_grid, BoundaryKind};
/// let g = build_grid(1, &[1.0], &[9], BoundaryKind::Dirichlet).unwrap();
/// assert_eq!(g.node_count(), 9);
/// assert!((g.spacing(0) - 0.1).abs() < 1e-15);
/// ```
pub fn build_grid(
    dim: usize,
    extents: &[f64],
    n_per_dim: &[usize],
    bc: BoundaryKind,
) -> Result<Grid> {
    if dim != 1 && dim != 2 {
        return Err(Error::InvalidGrid(format!("dim must be 1 or 2, got {dim}")));
    }
    if extents.len() != dim || n_per_dim.len() != dim {
        return Err(Error::InvalidGrid(format!(
            "expected {dim} extents and node counts, got {} and {}",
            extents.len(),
            n_per_dim.len()
        )));
    }
    for d in 0..dim {
        if n_per_dim[d] < 3 {
            return Err(Error::InvalidGrid(format!(
                "need at least 3 nodes per dimension, got {} along axis {d}",
                n_per_dim[d]
            )));
        }
        if !(extents[d] > 0.0 && extents[d].is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "extent along axis {d} must be positive, got {}",
                extents[d]
            )));
        }
    }
    let spacing = (0..dim)
        .map(|d| match bc {
            BoundaryKind::Dirichlet => extents[d] / (n_per_dim[d] + 1) as f64,
            BoundaryKind::Neumann => extents[d] / (n_per_dim[d] - 1) as f64,
        })
        .collect();
    Ok(Grid {
        dim,
        extents: extents.to_vec(),
        n: n_per_dim.to_vec(),
        spacing,
        bc,
    })
}

impl Grid {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bc(&self) -> BoundaryKind {
        self.bc
    }

    pub fn extent(&self, d: usize) -> f64 {
        self.extents[d]
    }

    pub fn extents(&self) -> &[f64] {
        &self.extents
    }

    /// Stored nodes along axis `d`.
    pub fn n(&self, d: usize) -> usize {
        self.n[d]
    }

    pub fn spacing(&self, d: usize) -> f64 {
        self.spacing[d]
    }

    pub fn node_count(&self) -> usize {
        self.n.iter().product()
    }

    /// Linear node index of a multi-index.
    pub fn node_index(&self, idx: [usize; 2]) -> usize {
        match self.dim {
            1 => idx[0],
            _ => idx[1] * self.n[0] + idx[0],
        }
    }

    pub fn node_multi(&self, node: usize) -> [usize; 2] {
        match self.dim {
            1 => [node, 0],
            _ => [node % self.n[0], node / self.n[0]],
        }
    }

    /// Position of node `i` along axis `d`.
    pub fn node_coord(&self, d: usize, i: usize) -> f64 {
        match self.bc {
            BoundaryKind::Dirichlet => (i + 1) as f64 * self.spacing[d],
            BoundaryKind::Neumann => i as f64 * self.spacing[d],
        }
    }

    pub fn node_position(&self, node: usize) -> [f64; 2] {
        let m = self.node_multi(node);
        let mut x = [0.0; 2];
        for d in 0..self.dim {
            x[d] = self.node_coord(d, m[d]);
        }
        x
    }

    /// Faces along one grid line of axis `d`.
    pub fn faces_per_line(&self, d: usize) -> usize {
        match self.bc {
            BoundaryKind::Dirichlet => self.n[d] + 1,
            BoundaryKind::Neumann => self.n[d] - 1,
        }
    }

    /// Total number of faces normal to axis `d`.
    pub fn face_count(&self, d: usize) -> usize {
        (0..self.dim)
            .map(|e| if e == d { self.faces_per_line(d) } else { self.n[e] })
            .product()
    }

    /// Linear index of the face normal to axis `d`. `idx[d]` is the face
    /// index along the line, the other entry is a node index.
    pub fn face_index(&self, d: usize, idx: [usize; 2]) -> usize {
        if self.dim == 1 {
            return idx[0];
        }
        let nx = if d == 0 { self.faces_per_line(0) } else { self.n[0] };
        idx[1] * nx + idx[0]
    }

    pub fn face_multi(&self, d: usize, face: usize) -> [usize; 2] {
        if self.dim == 1 {
            return [face, 0];
        }
        let nx = if d == 0 { self.faces_per_line(0) } else { self.n[0] };
        [face % nx, face / nx]
    }

    /// Along-axis coordinate of face `f`.
    pub fn face_coord(&self, d: usize, f: usize) -> f64 {
        (f as f64 + 0.5) * self.spacing[d]
    }

    pub fn face_position(&self, d: usize, face: usize) -> [f64; 2] {
        let m = self.face_multi(d, face);
        let mut x = [0.0; 2];
        for e in 0..self.dim {
            x[e] = if e == d {
                self.face_coord(e, m[e])
            } else {
                self.node_coord(e, m[e])
            };
        }
        x
    }

    /// The stored nodes on either side of a face (`None` for an eliminated
    /// Dirichlet boundary node).
    pub fn face_nodes(&self, d: usize, face: usize) -> (Option<usize>, Option<usize>) {
        let m = self.face_multi(d, face);
        let f = m[d];
        let (lo, hi) = match self.bc {
            BoundaryKind::Dirichlet => (f.checked_sub(1), (f < self.n[d]).then_some(f)),
            BoundaryKind::Neumann => (Some(f), Some(f + 1)),
        };
        let to_node = |k: usize| {
            let mut idx = m;
            idx[d] = k;
            self.node_index(idx)
        };
        (lo.map(to_node), hi.map(to_node))
    }

    /// Face between node `i` and its neighbour at `i - 1` (`upper = false`)
    /// or `i + 1` (`upper = true`) along axis `d`, if that face exists.
    pub fn node_face(&self, d: usize, node: usize, upper: bool) -> Option<usize> {
        let m = self.node_multi(node);
        let i = m[d];
        let f = match (self.bc, upper) {
            (BoundaryKind::Dirichlet, false) => Some(i),
            (BoundaryKind::Dirichlet, true) => Some(i + 1),
            (BoundaryKind::Neumann, false) => i.checked_sub(1),
            (BoundaryKind::Neumann, true) => (i + 1 < self.n[d]).then_some(i),
        }?;
        let mut idx = m;
        idx[d] = f;
        Some(self.face_index(d, idx))
    }

    /// Stored neighbour of `node` along axis `d`.
    pub fn neighbor(&self, d: usize, node: usize, upper: bool) -> Option<usize> {
        let mut m = self.node_multi(node);
        if upper {
            if m[d] + 1 >= self.n[d] {
                return None;
            }
            m[d] += 1;
        } else {
            m[d] = m[d].checked_sub(1)?;
        }
        Some(self.node_index(m))
    }

    /// Quadrature weight of each node for the discrete L2 norm. Dirichlet
    /// nodes own a full cell; Neumann boundary nodes own half a cell per
    /// boundary axis so the weights sum to the box volume.
    pub fn cell_volume(&self, node: usize) -> f64 {
        let m = self.node_multi(node);
        (0..self.dim)
            .map(|d| {
                let h = self.spacing[d];
                match self.bc {
                    BoundaryKind::Neumann if m[d] == 0 || m[d] + 1 == self.n[d] => 0.5 * h,
                    _ => h,
                }
            })
            .product()
    }
}

/// Pointwise description of lambda, rho and sigma.
pub trait Coefficients {
    fn lambda(&self, x: [f64; 2]) -> f64;
    fn rho(&self, x: [f64; 2], d: usize) -> f64;
    fn sigma(&self, x: [f64; 2]) -> f64;
}

/// Coefficient presets addressable from config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CoefficientPreset {
    /// Constant scalar diffusion, advection vector and reaction.
    Constant {
        #[serde(default = "one")]
        lambda: f64,
        #[serde(default)]
        rho: Vec<f64>,
        #[serde(default)]
        sigma: f64,
    },
    /// `lambda = lambda (1 + lambda_amp sin(2 pi x) cos(2 pi y))`,
    /// `rho_d = rho_amp cos(pi x_d)`, `sigma = sigma + sigma_amp sin(pi x_0)`.
    SmoothTrig {
        #[serde(default = "one")]
        lambda: f64,
        #[serde(default)]
        lambda_amp: f64,
        #[serde(default)]
        rho_amp: f64,
        #[serde(default)]
        sigma: f64,
        #[serde(default)]
        sigma_amp: f64,
    },
    /// Constant diffusion with advection `(speed, 0)`.
    AdvectionX {
        #[serde(default = "one")]
        lambda: f64,
        speed: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl Default for CoefficientPreset {
    fn default() -> Self {
        CoefficientPreset::Constant {
            lambda: 1.0,
            rho: Vec::new(),
            sigma: 0.0,
        }
    }
}

impl Coefficients for CoefficientPreset {
    fn lambda(&self, x: [f64; 2]) -> f64 {
        match self {
            CoefficientPreset::Constant { lambda, .. } => *lambda,
            CoefficientPreset::AdvectionX { lambda, .. } => *lambda,
            CoefficientPreset::SmoothTrig {
                lambda, lambda_amp, ..
            } => lambda * (1.0 + lambda_amp * (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).cos()),
        }
    }

    fn rho(&self, x: [f64; 2], d: usize) -> f64 {
        match self {
            CoefficientPreset::Constant { rho, .. } => rho.get(d).copied().unwrap_or(0.0),
            CoefficientPreset::AdvectionX { speed, .. } => {
                if d == 0 {
                    *speed
                } else {
                    0.0
                }
            }
            CoefficientPreset::SmoothTrig { rho_amp, .. } => rho_amp * (PI * x[d]).cos(),
        }
    }

    fn sigma(&self, x: [f64; 2]) -> f64 {
        match self {
            CoefficientPreset::Constant { sigma, .. } => *sigma,
            CoefficientPreset::AdvectionX { .. } => 0.0,
            CoefficientPreset::SmoothTrig {
                sigma, sigma_amp, ..
            } => sigma + sigma_amp * (PI * x[0]).sin(),
        }
    }
}

/// Sampled coefficients together with the constants that control the
/// dissipativity shift.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    /// Diffusion per dimension, one value per face.
    pub lambda_faces: Vec<Vec<f64>>,
    /// Advection component per dimension, one value per node.
    pub rho_nodes: Vec<Vec<f64>>,
    pub sigma_nodes: Vec<f64>,
    pub lambda0: f64,
    pub psq: f64,
    pub sigma0: f64,
}

impl CoefficientField {
    /// Builds a field from already sampled arrays, computing the constants.
    pub fn from_samples(
        lambda_faces: Vec<Vec<f64>>,
        rho_nodes: Vec<Vec<f64>>,
        sigma_nodes: Vec<f64>,
    ) -> Result<Self> {
        for (d, faces) in lambda_faces.iter().enumerate() {
            if let Some((face, &value)) = faces
                .iter()
                .enumerate()
                .find(|(_, &v)| !(v > 0.0 && v.is_finite()))
            {
                return Err(Error::Ellipticity { dim: d, face, value });
            }
        }
        let (lambda0, psq, sigma0) = constants(&lambda_faces, &rho_nodes, &sigma_nodes);
        Ok(CoefficientField {
            lambda_faces,
            rho_nodes,
            sigma_nodes,
            lambda0,
            psq,
            sigma0,
        })
    }

    /// Recomputes `(lambda0, psq, sigma0)` from the stored samples.
    pub fn recompute_constants(&self) -> (f64, f64, f64) {
        constants(&self.lambda_faces, &self.rho_nodes, &self.sigma_nodes)
    }

    pub fn has_advection(&self) -> bool {
        self.rho_nodes.iter().flatten().any(|&r| r != 0.0)
    }
}

fn constants(lambda_faces: &[Vec<f64>], rho_nodes: &[Vec<f64>], sigma_nodes: &[f64]) -> (f64, f64, f64) {
    let lambda0 = lambda_faces
        .iter()
        .flatten()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let psq = rho_nodes
        .iter()
        .map(|r| {
            let m = r.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            m * m
        })
        .sum();
    let sigma0 = sigma_nodes.iter().copied().fold(f64::INFINITY, f64::min);
    (lambda0, psq, if sigma0.is_finite() { sigma0 } else { 0.0 })
}

/// Samples lambda at face midpoints and rho, sigma at nodes.
pub fn sample_coefficients(grid: &Grid, spec: &impl Coefficients) -> Result<CoefficientField> {
    let dim = grid.dim();
    let lambda_faces = (0..dim)
        .map(|d| {
            (0..grid.face_count(d))
                .map(|f| spec.lambda(grid.face_position(d, f)))
                .collect()
        })
        .collect();
    let positions: Vec<[f64; 2]> = (0..grid.node_count()).map(|i| grid.node_position(i)).collect();
    let rho_nodes = (0..dim)
        .map(|d| positions.iter().map(|&x| spec.rho(x, d)).collect())
        .collect();
    let sigma_nodes = positions.iter().map(|&x| spec.sigma(x)).collect();
    CoefficientField::from_samples(lambda_faces, rho_nodes, sigma_nodes)
}

/// `max{0, P^2 / (2 lambda0) - sigma0}`: the shift constant bounding the
/// dissipativity of the full operator and of every weighted part.
pub fn dissipativity_shift(coeff: &CoefficientField) -> f64 {
    shift_from_constants(coeff.lambda0, coeff.psq, coeff.sigma0)
}

pub fn shift_from_constants(lambda0: f64, psq: f64, sigma0: f64) -> f64 {
    (psq / (2.0 * lambda0) - sigma0).max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialData {
    pub eta: Vec<f64>,
}

impl InitialData {
    pub fn new(grid: &Grid, eta: Vec<f64>) -> Result<Self> {
        if eta.len() != grid.node_count() {
            return Err(Error::InvalidArgument(format!(
                "initial data has {} entries, grid has {} nodes",
                eta.len(),
                grid.node_count()
            )));
        }
        Ok(InitialData { eta })
    }
}

/// Initial data presets addressable from config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialPreset {
    /// `amplitude * prod_d sin(pi x_d / L_d)`.
    SineModes {
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// `amplitude * prod_d cos(pi x_d / L_d)`.
    CosineModes {
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// `value` on the box `[lo, hi]^dim`, zero elsewhere.
    Indicator {
        lo: f64,
        hi: f64,
        #[serde(default = "one")]
        value: f64,
    },
    /// Uniform samples in `[-amplitude, amplitude]` from the run seed.
    Random {
        #[serde(default = "one")]
        amplitude: f64,
    },
}

impl InitialPreset {
    pub fn sample(&self, grid: &Grid, seed: u64) -> InitialData {
        let dim = grid.dim();
        let eta = match self {
            InitialPreset::SineModes { amplitude } => (0..grid.node_count())
                .map(|i| {
                    let x = grid.node_position(i);
                    amplitude * (0..dim).map(|d| (PI * x[d] / grid.extent(d)).sin()).product::<f64>()
                })
                .collect(),
            InitialPreset::CosineModes { amplitude } => (0..grid.node_count())
                .map(|i| {
                    let x = grid.node_position(i);
                    amplitude * (0..dim).map(|d| (PI * x[d] / grid.extent(d)).cos()).product::<f64>()
                })
                .collect(),
            InitialPreset::Indicator { lo, hi, value } => (0..grid.node_count())
                .map(|i| {
                    let x = grid.node_position(i);
                    if (0..dim).all(|d| x[d] >= *lo && x[d] <= *hi) {
                        *value
                    } else {
                        0.0
                    }
                })
                .collect(),
            InitialPreset::Random { amplitude } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..grid.node_count())
                    .map(|_| amplitude * rng.gen_range(-1.0..=1.0))
                    .collect()
            }
        };
        InitialData { eta }
    }
}
