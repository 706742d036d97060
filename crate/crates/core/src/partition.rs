//! Partitions of unity over overlapping stripe and block covers.
//!
//! Every weight is a closed-form trapezoid profile (or a tensor product of
//! two) evaluated directly at nodes and at face midpoints. Adjacent pieces
//! share the same ramp argument, so `1 - r(t)` and `r(t)` are summed and the
//! partition of unity holds to a single rounding at every sample point.
//!
//! A ramp of width `delta` is centred on each interface between two pieces;
//! pieces touching the boundary of the box extend to it without a ramp.

use serde::{Deserialize, Serialize};

use crate::domain::Grid;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ramp {
    #[default]
    Linear,
    CubicSmoothstep,
}

impl Ramp {
    /// Rising ramp on `[0, 1]`.
    pub fn eval(self, t: f64) -> f64 {
        let t = t.clamp(0.0, 1.0);
        match self {
            Ramp::Linear => t,
            Ramp::CubicSmoothstep => t * t * (3.0 - 2.0 * t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoverKind {
    /// A single weight identically equal to one.
    Single,
    Stripes,
    Blocks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverSpec {
    pub kind: CoverKind,
    /// Pieces per dimension; stripes use the first entry only.
    #[serde(default)]
    pub counts: Vec<usize>,
    #[serde(default)]
    pub delta: f64,
    #[serde(default)]
    pub ramp: Ramp,
    /// Stripe colours. Defaults to 2.
    #[serde(default)]
    pub colors: Option<usize>,
}

impl CoverSpec {
    pub fn build(&self, grid: &Grid) -> Result<Partition> {
        match self.kind {
            CoverKind::Single => Ok(identity_partition(grid)),
            CoverKind::Stripes => {
                let n = *self.counts.first().ok_or_else(|| {
                    Error::validation("cover.counts", "stripes need a stripe count")
                })?;
                build_stripes_colored(grid, n, self.colors.unwrap_or(2), self.delta, self.ramp)
            }
            CoverKind::Blocks => {
                let counts = match self.counts.as_slice() {
                    [c] => [*c, *c],
                    [cx, cy] => [*cx, *cy],
                    _ => {
                        return Err(Error::validation(
                            "cover.counts",
                            "blocks need one or two block counts",
                        ))
                    }
                };
                build_blocks(grid, counts, self.delta, self.ramp)
            }
        }
    }

    /// Number of weights the cover produces.
    pub fn q(&self) -> usize {
        match self.kind {
            CoverKind::Single => 1,
            CoverKind::Stripes => self.colors.unwrap_or(2),
            CoverKind::Blocks => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub q: usize,
    /// `chi_nodes[k][node]`
    pub chi_nodes: Vec<Vec<f64>>,
    /// `chi_faces[k][d][face]`
    pub chi_faces: Vec<Vec<Vec<f64>>>,
    /// Nodes where `chi_k > 0`, ascending.
    pub supports: Vec<Vec<usize>>,
    /// Disjoint pieces of each support, one per stripe or block.
    pub components: Vec<Vec<Vec<usize>>>,
    pub delta: f64,
}

/// Piecewise trapezoid profiles along one axis of length `length` split
/// into `pieces` equal intervals.
#[derive(Debug, Clone, Copy)]
struct Profiles {
    length: f64,
    pieces: usize,
    delta: f64,
    ramp: Ramp,
}

impl Profiles {
    fn interface(&self, j: usize) -> f64 {
        j as f64 * self.length / self.pieces as f64
    }

    /// Profile of piece `p` at `x`.
    fn eval(&self, p: usize, x: f64) -> f64 {
        let half = 0.5 * self.delta;
        if p > 0 {
            let c = self.interface(p);
            if x < c + half {
                if x <= c - half {
                    return 0.0;
                }
                return self.ramp.eval((x - (c - half)) / self.delta);
            }
        }
        if p + 1 < self.pieces {
            let c = self.interface(p + 1);
            if x > c - half {
                if x >= c + half {
                    return 0.0;
                }
                return 1.0 - self.ramp.eval((x - (c - half)) / self.delta);
            }
        }
        1.0
    }
}

fn check_delta(length: f64, pieces: usize, delta: f64, what: &str) -> Result<()> {
    let width = length / pieces as f64;
    if !(delta > 0.0) {
        return Err(Error::InvalidPartition(format!("overlap width must be positive, got {delta}")));
    }
    if delta >= width {
        return Err(Error::InvalidPartition(format!(
            "overlap width {delta} must be smaller than the {what} width {width}"
        )));
    }
    Ok(())
}

/// The trivial partition `chi_1 = 1`.
pub fn identity_partition(grid: &Grid) -> Partition {
    let n = grid.node_count();
    Partition {
        q: 1,
        chi_nodes: vec![vec![1.0; n]],
        chi_faces: vec![(0..grid.dim()).map(|d| vec![1.0; grid.face_count(d)]).collect()],
        supports: vec![(0..n).collect()],
        components: vec![vec![(0..n).collect()]],
        delta: 0.0,
    }
}

/// Two-colour overlapping stripes along the x axis.
///
/// ```
/// use ddsplit::domain::{build_grid, BoundaryKind};
/// use ddsplit::partition::{build_stripes, Ramp};
/// let g = build_grid(1, &[1.0], &[99], BoundaryKind::Dirichlet).unwrap();
/// let p = build_stripes(&g, 4, 0.1, Ramp::Linear).unwrap();
/// assert_eq!(p.q, 2);
/// assert_eq!(p.components[0].len(), 2);
/// ```
pub fn build_stripes(grid: &Grid, n_stripes: usize, delta: f64, ramp: Ramp) -> Result<Partition> {
    build_stripes_colored(grid, n_stripes, 2, delta, ramp)
}

/// Stripes coloured cyclically with `q` colours.
pub fn build_stripes_colored(
    grid: &Grid,
    n_stripes: usize,
    q: usize,
    delta: f64,
    ramp: Ramp,
) -> Result<Partition> {
    if q < 2 {
        return Err(Error::InvalidPartition(format!("stripes need at least 2 colours, got {q}")));
    }
    if n_stripes < q {
        return Err(Error::InvalidPartition(format!(
            "{n_stripes} stripes cannot carry {q} colours"
        )));
    }
    check_delta(grid.extent(0), n_stripes, delta, "stripe")?;
    let prof = Profiles {
        length: grid.extent(0),
        pieces: n_stripes,
        delta,
        ramp,
    };
    let pieces: Vec<(usize, Box<dyn Fn([f64; 2]) -> f64>)> = (0..n_stripes)
        .map(|p| {
            let f: Box<dyn Fn([f64; 2]) -> f64> = Box::new(move |x: [f64; 2]| prof.eval(p, x[0]));
            (p % q, f)
        })
        .collect();
    Ok(assemble(grid, q, delta, &pieces))
}

/// Four-colour overlapping blocks on a 2D grid.
pub fn build_blocks(grid: &Grid, blocks_per_dim: [usize; 2], delta: f64, ramp: Ramp) -> Result<Partition> {
    if grid.dim() != 2 {
        return Err(Error::InvalidPartition("blocks need a 2D grid".into()));
    }
    if blocks_per_dim.iter().any(|&b| b < 2) {
        return Err(Error::InvalidPartition(format!(
            "need at least 2 blocks per dimension, got {blocks_per_dim:?}"
        )));
    }
    let profs: Vec<Profiles> = (0..2)
        .map(|d| {
            check_delta(grid.extent(d), blocks_per_dim[d], delta, "block")?;
            Ok(Profiles {
                length: grid.extent(d),
                pieces: blocks_per_dim[d],
                delta,
                ramp,
            })
        })
        .collect::<Result<_>>()?;
    let (px, py) = (profs[0], profs[1]);
    let mut pieces: Vec<(usize, Box<dyn Fn([f64; 2]) -> f64>)> = Vec::new();
    for j in 0..blocks_per_dim[1] {
        for i in 0..blocks_per_dim[0] {
            let color = (i % 2) + 2 * (j % 2);
            pieces.push((color, Box::new(move |x: [f64; 2]| px.eval(i, x[0]) * py.eval(j, x[1]))));
        }
    }
    Ok(assemble(grid, 4, delta, &pieces))
}

type Piece = (usize, Box<dyn Fn([f64; 2]) -> f64>);

fn assemble(grid: &Grid, q: usize, delta: f64, pieces: &[Piece]) -> Partition {
    let n = grid.node_count();
    let dim = grid.dim();
    let mut chi_nodes = vec![vec![0.0; n]; q];
    let mut chi_faces: Vec<Vec<Vec<f64>>> =
        vec![(0..dim).map(|d| vec![0.0; grid.face_count(d)]).collect(); q];
    let mut components: Vec<Vec<Vec<usize>>> = vec![Vec::new(); q];
    for (color, f) in pieces {
        let mut comp = Vec::new();
        for node in 0..n {
            let w = f(grid.node_position(node));
            if w > 0.0 {
                chi_nodes[*color][node] += w;
                comp.push(node);
            }
        }
        for d in 0..dim {
            for face in 0..grid.face_count(d) {
                chi_faces[*color][d][face] += f(grid.face_position(d, face));
            }
        }
        if !comp.is_empty() {
            components[*color].push(comp);
        }
    }
    let supports = chi_nodes
        .iter()
        .map(|chi| (0..n).filter(|&i| chi[i] > 0.0).collect())
        .collect();
    Partition {
        q,
        chi_nodes,
        chi_faces,
        supports,
        components,
        delta,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionReport {
    /// Largest `|sum_k chi_k - 1|` over nodes and faces.
    pub max_sum_deviation: f64,
    pub bounds_violations: usize,
    pub support_violations: usize,
    pub adjacency_violations: usize,
    /// `delta` below two grid spacings: ramps are barely resolved.
    pub under_resolved: bool,
    pub pass: bool,
}

/// Checks the partition of unity conditions, support masks and the
/// separation of same-colour components.
pub fn verify_partition(partition: &Partition, grid: &Grid, tol: f64) -> PartitionReport {
    let n = grid.node_count();
    let dim = grid.dim();
    let q = partition.q;
    let mut max_dev = 0.0_f64;
    let mut bounds = 0;
    let mut support = 0;
    let mut adjacency = 0;

    for i in 0..n {
        let s: f64 = (0..q).map(|k| partition.chi_nodes[k][i]).sum();
        max_dev = max_dev.max((s - 1.0).abs());
    }
    for d in 0..dim {
        for f in 0..grid.face_count(d) {
            let s: f64 = (0..q).map(|k| partition.chi_faces[k][d][f]).sum();
            max_dev = max_dev.max((s - 1.0).abs());
        }
    }

    for k in 0..q {
        let in_support = mask(n, &partition.supports[k]);
        for (i, &w) in partition.chi_nodes[k].iter().enumerate() {
            if !(-tol..=1.0 + tol).contains(&w) {
                bounds += 1;
            }
            if w > 0.0 && !in_support[i] {
                support += 1;
            }
        }
        for d in 0..dim {
            for (f, &w) in partition.chi_faces[k][d].iter().enumerate() {
                if !(-tol..=1.0 + tol).contains(&w) {
                    bounds += 1;
                }
                if w > 0.0 {
                    let (a, b) = grid.face_nodes(d, f);
                    let touches = [a, b].iter().flatten().any(|&i| in_support[i]);
                    if !touches {
                        support += 1;
                    }
                }
            }
        }

        // component ids; every support node belongs to exactly one component
        let mut owner = vec![usize::MAX; n];
        for (c, comp) in partition.components[k].iter().enumerate() {
            for &i in comp {
                if owner[i] != usize::MAX {
                    adjacency += 1;
                }
                owner[i] = c;
            }
        }
        for &i in &partition.supports[k] {
            if owner[i] == usize::MAX {
                support += 1;
            }
        }
        for i in 0..n {
            if owner[i] == usize::MAX {
                continue;
            }
            for d in 0..dim {
                if let Some(j) = grid.neighbor(d, i, true) {
                    if owner[j] != usize::MAX && owner[j] != owner[i] {
                        adjacency += 1;
                    }
                }
            }
        }
    }

    let min_dx = (0..dim).map(|d| grid.spacing(d)).fold(f64::INFINITY, f64::min);
    let under_resolved = q > 1 && partition.delta < 2.0 * min_dx;
    let pass = max_dev <= tol && bounds == 0 && support == 0 && adjacency == 0;
    PartitionReport {
        max_sum_deviation: max_dev,
        bounds_violations: bounds,
        support_violations: support,
        adjacency_violations: adjacency,
        under_resolved,
        pass,
    }
}

pub(crate) fn mask(n: usize, idx: &[usize]) -> Vec<bool> {
    let mut m = vec![false; n];
    for &i in idx {
        m[i] = true;
    }
    m
}
