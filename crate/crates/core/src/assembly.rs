//! Finite-difference assembly of the full operator `A` and of the weighted
//! parts `A_k` with `A = sum_k A_k`.
//!
//! Diffusion uses the flux form
//! `(1/dx^2) [l_{i+1/2} (v_{i+1} - v_i) - l_{i-1/2} (v_i - v_{i-1})]` with
//! `l` sampled at faces; advection is centred and reaction is nodal. Part
//! `k` multiplies each face coefficient by the face weight and each nodal
//! coefficient by the nodal weight. Since the weights sum to one at faces
//! and nodes, the parts add up to the full operator up to rounding of each
//! entry.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::{dissipativity_shift, BoundaryKind, CoefficientField, Grid};
use crate::error::{Error, Result};
use crate::partition::Partition;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Square sparse matrix in compressed row layout acting on nodal vectors.
#[derive(Debug, Clone)]
pub struct SparseOperator {
    id: u64,
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    active: Vec<bool>,
    active_nodes: Vec<usize>,
    symmetric: bool,
    shift: f64,
}

impl PartialEq for SparseOperator {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
            && self.row_ptr == other.row_ptr
            && self.col_idx == other.col_idx
            && self.values == other.values
            && self.active == other.active
    }
}

impl SparseOperator {
    fn from_rows(rows: Vec<BTreeMap<usize, f64>>, active: Vec<bool>, symmetric: bool, shift: f64) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for (i, row) in rows.into_iter().enumerate() {
            if active[i] {
                for (c, v) in row {
                    if v != 0.0 {
                        col_idx.push(c);
                        values.push(v);
                    }
                }
            }
            row_ptr.push(col_idx.len());
        }
        let active_nodes = (0..n).filter(|&i| active[i]).collect();
        SparseOperator {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            n,
            row_ptr,
            col_idx,
            values,
            active,
            active_nodes,
            symmetric,
            shift,
        }
    }

    /// Operator from `(row, col, value)` triplets; duplicates are summed.
    /// Active nodes are the rows holding a nonzero entry. The shift estimate
    /// is a Gershgorin bound on the symmetric part.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut rows = vec![BTreeMap::new(); n];
        for &(r, c, v) in triplets {
            if r >= n || c >= n {
                return Err(Error::InvalidArgument(format!("triplet ({r}, {c}) outside {n}x{n}")));
            }
            *rows[r].entry(c).or_insert(0.0) += v;
        }
        let active: Vec<bool> = rows.iter().map(|r| r.values().any(|&v| v != 0.0)).collect();
        let symmetric = (0..n).all(|i| {
            rows[i]
                .iter()
                .all(|(&j, &v)| rows[j].get(&i).copied().unwrap_or(0.0) == v)
        });
        // Gershgorin discs of (A + A^T) / 2
        let mut disc = vec![0.0; n];
        for (i, row) in rows.iter().enumerate() {
            for (&j, &v) in row {
                if j == i {
                    disc[i] += v;
                } else {
                    disc[i] += 0.5 * v.abs();
                    disc[j] += 0.5 * v.abs();
                }
            }
        }
        let shift = disc.into_iter().fold(0.0_f64, f64::max);
        Ok(Self::from_rows(rows, active, symmetric, shift))
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut t = Vec::new();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n {
                return Err(Error::InvalidArgument("dense operator must be square".into()));
            }
            for (j, &v) in r.iter().enumerate() {
                if v != 0.0 {
                    t.push((i, j, v));
                }
            }
        }
        Self::from_triplets(n, &t)
    }

    pub fn zeros(n: usize) -> Self {
        Self::from_rows(vec![BTreeMap::new(); n], vec![false; n], true, 0.0)
    }

    /// Process-unique identity, used to key factorization caches.
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn active_nodes(&self) -> &[usize] {
        &self.active_nodes
    }

    pub fn is_active(&self, node: usize) -> bool {
        self.active[node]
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// Dissipativity shift estimate `M` with `(Av, v) <= M |v|^2`.
    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// Entries of row `i` as `(col, value)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.apply_into(x, &mut y);
        y
    }

    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        assert_eq!(y.len(), self.n);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            *yi = s;
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] += v;
            }
        }
        m
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Largest absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row(i).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Writes one `row col value` line per stored entry.
    pub fn write_triplets(&self, mut out: impl Write) -> Result<()> {
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                writeln!(out, "{i} {j} {v:.17e}")?;
            }
        }
        Ok(())
    }
}

/// The full operator and its weighted parts.
#[derive(Debug, Clone)]
pub struct SplitOperator {
    pub full: Arc<SparseOperator>,
    pub parts: Vec<Arc<SparseOperator>>,
}

impl SplitOperator {
    pub fn from_parts(full: SparseOperator, parts: Vec<SparseOperator>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("split operator needs at least one part".into()));
        }
        if parts.iter().any(|p| p.size() != full.size()) {
            return Err(Error::InvalidArgument("part sizes differ from the full operator".into()));
        }
        Ok(SplitOperator {
            full: Arc::new(full),
            parts: parts.into_iter().map(Arc::new).collect(),
        })
    }

    pub fn q(&self) -> usize {
        self.parts.len()
    }

    pub fn size(&self) -> usize {
        self.full.size()
    }

    /// Largest `|A - sum_k A_k|` entry and the largest `|A|` entry.
    pub fn entrywise_defect(&self) -> (f64, f64) {
        let n = self.size();
        let mut worst = 0.0_f64;
        for i in 0..n {
            let mut acc: BTreeMap<usize, f64> = self.full.row(i).collect();
            for p in &self.parts {
                for (j, v) in p.row(i) {
                    *acc.entry(j).or_insert(0.0) -= v;
                }
            }
            for v in acc.values() {
                worst = worst.max(v.abs());
            }
        }
        (worst, self.full.max_abs_entry())
    }
}

/// Nodal and face weights applied to one part.
struct Weights<'a> {
    nodes: &'a [f64],
    faces: &'a [Vec<f64>],
}

/// Assembles `A v = div(lambda grad v) - rho . grad v - sigma v`.
///
/// ```
/// use ddsplit::domain::{build_grid, sample_coefficients, BoundaryKind, CoefficientPreset};
/// use ddsplit::assembly::assemble_full;
/// let g = build_grid(1, &[1.0], &[3], BoundaryKind::Dirichlet).unwrap();
/// let c = sample_coefficients(&g, &CoefficientPreset::default()).unwrap();
/// let a = assemble_full(&g, &c);
/// assert_eq!(a.get(1, 0), 16.0);
/// assert_eq!(a.get(1, 1), -32.0);
/// ```
pub fn assemble_full(grid: &Grid, coeff: &CoefficientField) -> SparseOperator {
    assemble(grid, coeff, None)
}

/// Assembles the full operator and one weighted part per partition colour.
pub fn assemble_split(grid: &Grid, coeff: &CoefficientField, partition: &Partition) -> SplitOperator {
    let full = assemble_full(grid, coeff);
    let parts = (0..partition.q)
        .map(|k| {
            Arc::new(assemble(
                grid,
                coeff,
                Some(Weights {
                    nodes: &partition.chi_nodes[k],
                    faces: &partition.chi_faces[k],
                }),
            ))
        })
        .collect();
    SplitOperator {
        full: Arc::new(full),
        parts,
    }
}

fn assemble(grid: &Grid, coeff: &CoefficientField, weights: Option<Weights<'_>>) -> SparseOperator {
    let n = grid.node_count();
    let dim = grid.dim();
    let neumann = grid.bc() == BoundaryKind::Neumann;
    let node_w = |i: usize| weights.as_ref().map_or(1.0, |w| w.nodes[i]);
    let face_w = |d: usize, f: usize| weights.as_ref().map_or(1.0, |w| w.faces[d][f]);

    let mut rows = vec![BTreeMap::new(); n];
    let mut active = vec![weights.is_none(); n];
    for (i, row) in rows.iter_mut().enumerate() {
        let wi = node_w(i);
        let mut diag = 0.0;
        let mut touched = wi > 0.0;
        for d in 0..dim {
            let dx = grid.spacing(d);
            let inv_dx2 = 1.0 / (dx * dx);
            for upper in [false, true] {
                if let Some(f) = grid.node_face(d, i, upper) {
                    let wf = face_w(d, f);
                    touched |= wf > 0.0;
                    let c = (wf * coeff.lambda_faces[d][f]) * inv_dx2;
                    diag -= c;
                    if let Some(j) = grid.neighbor(d, i, upper) {
                        *row.entry(j).or_insert(0.0) += c;
                    }
                }
            }

            let r = wi * coeff.rho_nodes[d][i];
            if r != 0.0 {
                let lo = grid.neighbor(d, i, false);
                let hi = grid.neighbor(d, i, true);
                match (lo, hi) {
                    (None, Some(j)) if neumann => {
                        let c = r / dx;
                        *row.entry(j).or_insert(0.0) -= c;
                        diag += c;
                    }
                    (Some(j), None) if neumann => {
                        let c = r / dx;
                        *row.entry(j).or_insert(0.0) += c;
                        diag -= c;
                    }
                    _ => {
                        let c = r / (2.0 * dx);
                        if let Some(j) = hi {
                            *row.entry(j).or_insert(0.0) -= c;
                        }
                        if let Some(j) = lo {
                            *row.entry(j).or_insert(0.0) += c;
                        }
                    }
                }
            }
        }
        diag -= wi * coeff.sigma_nodes[i];
        *row.entry(i).or_insert(0.0) += diag;
        active[i] |= touched;
    }
    let symmetric = !coeff.has_advection();
    SparseOperator::from_rows(rows, active, symmetric, dissipativity_shift(coeff))
}

/// Largest scaled defect `|A v - sum_k A_k v|_inf / (|A|_inf |v|_inf)` over
/// seeded random probes. The operator norm in the denominator makes the
/// value independent of the mesh width, so it sits at a few multiples of
/// machine epsilon for an exact partition of unity.
pub fn splitting_defect(split: &SplitOperator, n_probes: usize, seed: u64) -> Result<f64> {
    if n_probes == 0 {
        return Err(Error::InvalidArgument("need at least one probe".into()));
    }
    let n = split.size();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = split.full.norm_inf();
    if scale == 0.0 {
        return Ok(0.0);
    }
    let mut worst = 0.0_f64;
    let mut tmp = vec![0.0; n];
    for _ in 0..n_probes {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let mut diff = split.full.apply(&v);
        for p in &split.parts {
            p.apply_into(&v, &mut tmp);
            for (d, t) in diff.iter_mut().zip(&tmp) {
                *d -= t;
            }
        }
        let vmax = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        let dmax = diff.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        if vmax > 0.0 {
            worst = worst.max(dmax / (scale * vmax));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{build_grid, sample_coefficients, CoefficientPreset};
    use crate::partition::{build_blocks, build_stripes, identity_partition, Ramp};

    fn constant(lambda: f64, rho: Vec<f64>, sigma: f64) -> CoefficientPreset {
        CoefficientPreset::Constant { lambda, rho, sigma }
    }

    #[test]
    fn laplacian_1d_stencil() {
        let g = build_grid(1, &[1.0], &[3], BoundaryKind::Dirichlet).unwrap();
        let c = sample_coefficients(&g, &constant(1.0, vec![], 0.0)).unwrap();
        let a = assemble_full(&g, &c).to_dense();
        let expect = DMatrix::from_row_slice(3, 3, &[-32.0, 16.0, 0.0, 16.0, -32.0, 16.0, 0.0, 16.0, -32.0]);
        assert_eq!(a, expect);

        let c = sample_coefficients(&g, &constant(1.0, vec![], 1.0)).unwrap();
        let b = assemble_full(&g, &c).to_dense();
        assert_eq!(b, expect - DMatrix::identity(3, 3));
    }

    #[test]
    fn identity_partition_reproduces_full() {
        let g = build_grid(2, &[1.0, 1.0], &[7, 7], BoundaryKind::Neumann).unwrap();
        let spec = CoefficientPreset::SmoothTrig {
            lambda: 1.0,
            lambda_amp: 0.3,
            rho_amp: 1.5,
            sigma: 0.2,
            sigma_amp: 0.1,
        };
        let c = sample_coefficients(&g, &spec).unwrap();
        let s = assemble_split(&g, &c, &identity_partition(&g));
        assert_eq!(*s.parts[0], *s.full);
        assert_eq!(splitting_defect(&s, 5, 1).unwrap(), 0.0);
    }

    #[test]
    fn parts_sum_to_full() {
        let eps = f64::EPSILON;
        for bc in [BoundaryKind::Dirichlet, BoundaryKind::Neumann] {
            let g = build_grid(2, &[1.0, 1.0], &[21, 21], bc).unwrap();
            let c = sample_coefficients(&g, &constant(1.3, vec![1.0, -0.5], 0.7)).unwrap();
            let p = build_blocks(&g, [4, 4], 0.2, Ramp::Linear).unwrap();
            let s = assemble_split(&g, &c, &p);
            let (defect, scale) = s.entrywise_defect();
            assert!(defect <= 8.0 * 4.0 * eps * scale, "{defect} vs {scale}");
            assert!(splitting_defect(&s, 10, 7).unwrap() <= 1e-13);
            for part in &s.parts {
                assert!(part.active_nodes().len() < g.node_count());
            }
        }
    }

    #[test]
    fn inactive_rows_vanish_and_stencil_is_local() {
        let g = build_grid(1, &[1.0], &[63], BoundaryKind::Dirichlet).unwrap();
        let c = sample_coefficients(&g, &constant(1.0, vec![2.0], 1.0)).unwrap();
        let p = build_stripes(&g, 4, 0.1, Ramp::Linear).unwrap();
        let s = assemble_split(&g, &c, &p);
        for (k, part) in s.parts.iter().enumerate() {
            for i in 0..g.node_count() {
                let cols: Vec<usize> = part.row(i).map(|(j, _)| j).collect();
                assert!(cols.iter().all(|&j| j.abs_diff(i) <= 1));
                let stencil_outside = [i.checked_sub(1), Some(i), Some(i + 1)]
                    .iter()
                    .flatten()
                    .filter(|&&j| j < g.node_count())
                    .all(|&j| p.chi_nodes[k][j] == 0.0);
                if stencil_outside {
                    assert!(cols.is_empty(), "row {i} of part {k}");
                }
                if !part.is_active(i) {
                    assert!(cols.is_empty());
                }
            }
        }
    }

    #[test]
    fn perturbed_partition_gives_visible_defect() {
        let g = build_grid(1, &[1.0], &[63], BoundaryKind::Dirichlet).unwrap();
        let c = sample_coefficients(&g, &constant(1.0, vec![], 0.0)).unwrap();
        let mut p = build_stripes(&g, 2, 0.2, Ramp::Linear).unwrap();
        p.chi_nodes[0][20] += 1e-3;
        // also perturb the face to the right of node 20
        p.chi_faces[0][0][21] += 1e-3;
        let s = assemble_split(&g, &c, &p);
        let d = splitting_defect(&s, 10, 3).unwrap();
        assert!(d >= 1e-4, "defect {d}");
    }

    #[test]
    fn pure_diffusion_parts_are_negative_semidefinite() {
        let g = build_grid(2, &[1.0, 1.0], &[15, 15], BoundaryKind::Neumann).unwrap();
        let c = sample_coefficients(&g, &constant(1.0, vec![], 0.0)).unwrap();
        let p = build_blocks(&g, [3, 3], 0.15, Ramp::CubicSmoothstep).unwrap();
        let s = assemble_split(&g, &c, &p);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for part in &s.parts {
            assert!(part.is_symmetric());
            for _ in 0..20 {
                let v: Vec<f64> = (0..g.node_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let av = part.apply(&v);
                let q: f64 = av.iter().zip(&v).map(|(a, b)| a * b).sum();
                assert!(q <= 1e-10, "{q}");
            }
        }
    }

    #[test]
    fn triplet_dump() {
        let a = SparseOperator::from_triplets(2, &[(0, 0, -1.0), (1, 0, 0.5), (1, 1, -2.0)]).unwrap();
        let mut buf = Vec::new();
        a.write_triplets(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("1 0 5.0"));
        assert!(!a.is_symmetric());
    }

    #[test]
    fn zero_operator_has_no_active_nodes() {
        let z = SparseOperator::zeros(4);
        assert!(z.active_nodes().is_empty());
        assert_eq!(z.apply(&[1.0; 4]), vec![0.0; 4]);
    }
}
