//! Resolvent solves `w = (I - tau A_k)^{-1} r`.
//!
//! Rows of `A_k` outside its active nodes are zero, so those entries of `w`
//! are copied from `r`. The remaining nodes split into connected components
//! of the matrix graph; each component is factorized and solved on its own,
//! with couplings to passive nodes moved to the right-hand side.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::SparseOperator;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverBackend {
    /// Banded LU with partial pivoting per component.
    #[default]
    Direct,
    /// Jacobi-preconditioned BiCGSTAB per component.
    Iterative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOptions {
    #[serde(default)]
    pub backend: SolverBackend,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_tol() -> f64 {
    1e-11
}

fn default_max_iter() -> usize {
    10_000
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            backend: SolverBackend::Direct,
            tol: default_tol(),
            max_iter: default_max_iter(),
        }
    }
}

/// Caps the global worker pool at `DDSPLIT_THREADS` when set. Returns the
/// cap that was applied.
pub fn init_threads_from_env() -> Option<usize> {
    let n = std::env::var("DDSPLIT_THREADS").ok()?.parse::<usize>().ok()?;
    let n = n.max(1);
    // fails only if the pool was already built, in which case it stays as is
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Some(n)
}

/// LU factors of a banded matrix with partial pivoting. Row `i` is stored
/// over columns `i - kl ..= i + kl + ku` to leave room for pivoting fill.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
    piv: Vec<usize>,
}

impl BandedLu {
    #[inline]
    fn at(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    /// Factorizes the `n x n` matrix given by `entries(i)` (columns within
    /// `i - kl ..= i + ku`).
    pub fn factorize(
        n: usize,
        kl: usize,
        ku: usize,
        entries: impl Fn(usize, &mut dyn FnMut(usize, f64)),
    ) -> Result<Self> {
        let width = 2 * kl + ku + 1;
        let mut lu = BandedLu {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
            piv: vec![0; n],
        };
        for i in 0..n {
            entries(i, &mut |j, v| {
                debug_assert!(j + kl >= i && j <= i + ku);
                let p = lu.at(i, j);
                lu.data[p] += v;
            });
        }
        let span = kl + ku;
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + span).min(n - 1);
            let mut p = k;
            let mut best = lu.data[lu.at(k, k)].abs();
            for i in k + 1..=last_row {
                let v = lu.data[lu.at(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 {
                return Err(Error::SingularSystem { column: k });
            }
            lu.piv[k] = p;
            if p != k {
                for j in k..=last_col {
                    let (a, b) = (lu.at(k, j), lu.at(p, j));
                    lu.data.swap(a, b);
                }
            }
            let pivot = lu.data[lu.at(k, k)];
            for i in k + 1..=last_row {
                let ik = lu.at(i, k);
                let l = lu.data[ik] / pivot;
                lu.data[ik] = l;
                if l != 0.0 {
                    for j in k + 1..=last_col {
                        let kj = lu.data[lu.at(k, j)];
                        let ij = lu.at(i, j);
                        lu.data[ij] -= l * kj;
                    }
                }
            }
        }
        Ok(lu)
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for i in k + 1..=(k + self.kl).min(n - 1) {
                    b[i] -= self.data[self.at(i, k)] * bk;
                }
            }
        }
        let span = self.kl + self.ku;
        for i in (0..n).rev() {
            let mut s = b[i];
            for j in i + 1..=(i + span).min(n - 1) {
                s -= self.data[self.at(i, j)] * b[j];
            }
            b[i] = s / self.data[self.at(i, i)];
        }
    }
}

/// Local compressed-row matrix of one component.
#[derive(Debug, Clone)]
struct LocalMatrix {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    diag: Vec<f64>,
}

impl LocalMatrix {
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            *yi = s;
        }
    }
}

/// Jacobi-preconditioned BiCGSTAB for `M x = b`, relative residual `tol`.
fn bicgstab(m: &LocalMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = b.len();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let norm = |a: &[f64]| dot(a, a).sqrt();
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let inv_d: Vec<f64> = m.diag.iter().map(|&d| if d != 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut r = b.to_vec();
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut res = 1.0;
    for _ in 0..max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
            y[i] = inv_d[i] * p[i];
        }
        m.apply(&y, &mut v);
        alpha = rho / dot(&r_hat, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm(&s) / bnorm <= tol {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            return Ok(x);
        }
        for i in 0..n {
            z[i] = inv_d[i] * s[i];
        }
        m.apply(&z, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        res = norm(&r) / bnorm;
        if res <= tol {
            return Ok(x);
        }
        if omega == 0.0 {
            break;
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: res,
    })
}

#[derive(Debug, Clone)]
enum ComponentSolver {
    Direct(BandedLu),
    Iterative(LocalMatrix),
}

#[derive(Debug, Clone)]
struct Component {
    /// Global node indices, ascending.
    nodes: Vec<usize>,
    /// `(local row, global passive column, tau * a_ij)`
    coupling: Vec<(usize, usize, f64)>,
    solver: ComponentSolver,
}

/// Factorized resolvent `(I - tau A)^{-1}` of one operator.
#[derive(Debug, Clone)]
pub struct ResolventFactor {
    tau: f64,
    op: Arc<SparseOperator>,
    components: Vec<Component>,
    options: SolverOptions,
}

/// Factorizes `I - tau A`, one factorization per connected component of the
/// active nodes.
///
/// ```
/// use std::sync::Arc;
/// use ddsplit::assembly::SparseOperator;
/// use ddsplit::solver::{factorize, SolverOptions};
/// let a = Arc::new(SparseOperator::from_dense(&[vec![-1.0]]).unwrap());
/// let f = factorize(&a, 0.1, &SolverOptions::default()).unwrap();
/// let w = f.solve(&[1.1]).unwrap();
/// assert!((w[0] - 1.0).abs() < 1e-15);
/// ```
pub fn factorize(op: &Arc<SparseOperator>, tau: f64, options: &SolverOptions) -> Result<ResolventFactor> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::InvalidArgument(format!("step scale must be nonnegative, got {tau}")));
    }
    if tau * op.shift() >= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "tau * M = {} must stay below 1 for the resolvent to exist",
            tau * op.shift()
        )));
    }
    let groups = components_of(op);
    let components = groups
        .into_par_iter()
        .map(|nodes| build_component(op, tau, nodes, options))
        .collect::<Result<Vec<_>>>()?;
    Ok(ResolventFactor {
        tau,
        op: Arc::clone(op),
        components,
        options: *options,
    })
}

/// Connected components of the active nodes under the (symmetrized) matrix
/// graph.
fn components_of(op: &SparseOperator) -> Vec<Vec<usize>> {
    let n = op.size();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &i in op.active_nodes() {
        for (j, _) in op.row(i) {
            if op.is_active(j) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for &i in op.active_nodes() {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    out.sort_by_key(|g| g[0]);
    out
}

fn build_component(
    op: &SparseOperator,
    tau: f64,
    nodes: Vec<usize>,
    options: &SolverOptions,
) -> Result<Component> {
    let local: HashMap<usize, usize> = nodes.iter().enumerate().map(|(l, &g)| (g, l)).collect();
    let m = nodes.len();
    let mut row_ptr = vec![0];
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    let mut diag = vec![0.0; m];
    let mut coupling = Vec::new();
    let (mut kl, mut ku) = (0usize, 0usize);
    for (li, &gi) in nodes.iter().enumerate() {
        let mut has_diag = false;
        for (gj, a) in op.row(gi) {
            if let Some(&lj) = local.get(&gj) {
                let v = if lj == li { 1.0 - tau * a } else { -tau * a };
                if lj == li {
                    has_diag = true;
                    diag[li] = v;
                }
                cols.push(lj);
                vals.push(v);
                if lj < li {
                    kl = kl.max(li - lj);
                } else {
                    ku = ku.max(lj - li);
                }
            } else {
                coupling.push((li, gj, tau * a));
            }
        }
        if !has_diag {
            cols.push(li);
            vals.push(1.0);
            diag[li] = 1.0;
        }
        row_ptr.push(cols.len());
    }
    let matrix = LocalMatrix {
        row_ptr,
        cols,
        vals,
        diag,
    };
    let solver = match options.backend {
        SolverBackend::Direct => {
            let lu = BandedLu::factorize(m, kl, ku, |i, push| {
                for k in matrix.row_ptr[i]..matrix.row_ptr[i + 1] {
                    push(matrix.cols[k], matrix.vals[k]);
                }
            })?;
            ComponentSolver::Direct(lu)
        }
        SolverBackend::Iterative => ComponentSolver::Iterative(matrix),
    };
    Ok(Component {
        nodes,
        coupling,
        solver,
    })
}

impl ResolventFactor {
    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn operator(&self) -> &Arc<SparseOperator> {
        &self.op
    }

    pub fn component_count(&self) -> usize {
        self.components.len()
    }

    /// Node lists of the independent components.
    pub fn components(&self) -> impl Iterator<Item = &[usize]> {
        self.components.iter().map(|c| c.nodes.as_slice())
    }

    /// Solves `(I - tau A) w = rhs`, components in parallel.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let locals = self
            .components
            .par_iter()
            .map(|c| self.solve_component(c, rhs))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.scatter(rhs, locals))
    }

    /// Same as [`solve`](Self::solve) but visits components sequentially in
    /// the given order.
    pub fn solve_ordered(&self, rhs: &[f64], order: &[usize]) -> Result<Vec<f64>> {
        let mut locals: Vec<Option<Vec<f64>>> = vec![None; self.components.len()];
        for &c in order {
            locals[c] = Some(self.solve_component(&self.components[c], rhs)?);
        }
        let locals = locals
            .into_iter()
            .map(|l| l.ok_or_else(|| Error::InvalidArgument("order must list every component".into())))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.scatter(rhs, locals))
    }

    fn scatter(&self, rhs: &[f64], locals: Vec<Vec<f64>>) -> Vec<f64> {
        let mut w = rhs.to_vec();
        for (c, x) in self.components.iter().zip(locals) {
            for (&g, v) in c.nodes.iter().zip(x) {
                w[g] = v;
            }
        }
        w
    }

    fn solve_component(&self, c: &Component, rhs: &[f64]) -> Result<Vec<f64>> {
        let mut b: Vec<f64> = c.nodes.iter().map(|&g| rhs[g]).collect();
        for &(li, gj, ta) in &c.coupling {
            b[li] += ta * rhs[gj];
        }
        match &c.solver {
            ComponentSolver::Direct(lu) => {
                lu.solve_in_place(&mut b);
                Ok(b)
            }
            ComponentSolver::Iterative(m) => bicgstab(m, &b, self.options.tol, self.options.max_iter),
        }
    }

    /// `|(I - tau A) w - rhs|_inf`.
    pub fn residual(&self, w: &[f64], rhs: &[f64]) -> f64 {
        let aw = self.op.apply(w);
        w.iter()
            .zip(&aw)
            .zip(rhs)
            .map(|((wi, ai), ri)| (wi - self.tau * ai - ri).abs())
            .fold(0.0, f64::max)
    }
}

/// Factorizations keyed by operator identity and the exact bits of `tau`.
#[derive(Debug, Default)]
pub struct FactorCache {
    entries: Mutex<HashMap<(u64, u64), Arc<ResolventFactor>>>,
}

impl FactorCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_factorize(
        &self,
        op: &Arc<SparseOperator>,
        tau: f64,
        options: &SolverOptions,
    ) -> Result<Arc<ResolventFactor>> {
        let key = (op.id(), tau.to_bits());
        if let Some(f) = self.entries.lock().unwrap().get(&key) {
            return Ok(Arc::clone(f));
        }
        let f = Arc::new(factorize(op, tau, options)?);
        self.entries.lock().unwrap().insert(key, Arc::clone(&f));
        Ok(f)
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_full, assemble_split};
    use crate::domain::{build_grid, sample_coefficients, BoundaryKind, CoefficientPreset};
    use crate::partition::{build_blocks, build_stripes, Ramp};
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_oracle(op: &SparseOperator, tau: f64, rhs: &[f64]) -> Vec<f64> {
        let n = op.size();
        let m = DMatrix::identity(n, n) - op.to_dense() * tau;
        m.lu().solve(&DVector::from_column_slice(rhs)).unwrap().as_slice().to_vec()
    }

    fn norm2(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn banded_lu_matches_dense_with_pivoting() {
        // zero on the diagonal forces a row swap
        let rows = [[0.0, 2.0, 0.0, 0.0], [1.0, 1.0, 3.0, 0.0], [0.0, 4.0, 1.0, 1.0], [0.0, 0.0, 1.0, 5.0]];
        let lu = BandedLu::factorize(4, 1, 1, |i, push| {
            for j in i.saturating_sub(1)..=(i + 1).min(3) {
                push(j, rows[i][j]);
            }
        })
        .unwrap();
        let mut b = vec![1.0, 2.0, 3.0, 4.0];
        lu.solve_in_place(&mut b);
        let m = DMatrix::from_fn(4, 4, |i, j| rows[i][j]);
        let x = m.lu().solve(&DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0])).unwrap();
        for i in 0..4 {
            assert!((b[i] - x[i]).abs() < 1e-14);
        }
        assert!(matches!(
            BandedLu::factorize(2, 1, 1, |_, _| {}),
            Err(Error::SingularSystem { column: 0 })
        ));
    }

    #[test]
    fn laplacian_resolvent_matches_dense() {
        let g = build_grid(1, &[1.0], &[3], BoundaryKind::Dirichlet).unwrap();
        let c = sample_coefficients(&g, &CoefficientPreset::default()).unwrap();
        let a = Arc::new(assemble_full(&g, &c));
        let f = factorize(&a, 0.01, &SolverOptions::default()).unwrap();
        let w = f.solve(&[1.0, 1.0, 1.0]).unwrap();
        let x = dense_oracle(&a, 0.01, &[1.0, 1.0, 1.0]);
        for i in 0..3 {
            assert!((w[i] - x[i]).abs() < 1e-12);
        }
        assert_eq!(f.solve(&[0.0; 3]).unwrap(), vec![0.0; 3]);
    }

    fn split_2d(adv: bool) -> crate::assembly::SplitOperator {
        let g = build_grid(2, &[1.0, 1.0], &[17, 17], BoundaryKind::Dirichlet).unwrap();
        let rho = if adv { vec![3.0, -1.0] } else { vec![] };
        let c = sample_coefficients(
            &g,
            &CoefficientPreset::Constant {
                lambda: 1.0,
                rho,
                sigma: 0.0,
            },
        )
        .unwrap();
        let p = build_blocks(&g, [4, 4], 0.15, Ramp::Linear).unwrap();
        assemble_split(&g, &c, &p)
    }

    #[test]
    fn part_resolvents_match_dense_and_keep_passive_nodes() {
        let s = split_2d(true);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for backend in [SolverBackend::Direct, SolverBackend::Iterative] {
            let opts = SolverOptions {
                backend,
                ..Default::default()
            };
            for part in &s.parts {
                let f = factorize(part, 0.02, &opts).unwrap();
                assert_eq!(f.component_count(), 4);
                let rhs: Vec<f64> = (0..s.size()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let w = f.solve(&rhs).unwrap();
                let x = dense_oracle(part, 0.02, &rhs);
                let scale = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                for i in 0..s.size() {
                    assert!((w[i] - x[i]).abs() <= 1e-10 * scale, "{backend:?}");
                    if !part.is_active(i) {
                        assert_eq!(w[i], rhs[i]);
                    }
                }
                let rmax = rhs.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                assert!(f.residual(&w, &rhs) <= 1e-10 * rmax);
            }
        }
    }

    #[test]
    fn pure_diffusion_resolvent_is_nonexpansive() {
        let s = split_2d(false);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for part in s.parts.iter().chain(std::iter::once(&s.full)) {
            let f = factorize(part, 0.05, &SolverOptions::default()).unwrap();
            for _ in 0..100 {
                let w: Vec<f64> = (0..s.size()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                assert!(norm2(&f.solve(&w).unwrap()) <= norm2(&w) * (1.0 + 1e-14));
            }
        }
    }

    #[test]
    fn shifted_resolvent_bound() {
        let s = split_2d(true);
        let m = s.full.shift();
        assert_eq!(m, 5.0);
        let tau = 0.5 / m;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for part in s.parts.iter().chain(std::iter::once(&s.full)) {
            let f = factorize(part, tau, &SolverOptions::default()).unwrap();
            for _ in 0..50 {
                let w: Vec<f64> = (0..s.size()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                assert!(norm2(&f.solve(&w).unwrap()) <= norm2(&w) / (1.0 - tau * m));
            }
        }
    }

    #[test]
    fn component_order_does_not_matter() {
        let g = build_grid(1, &[1.0], &[127], BoundaryKind::Dirichlet).unwrap();
        let c = sample_coefficients(&g, &CoefficientPreset::default()).unwrap();
        let p = build_stripes(&g, 8, 0.05, Ramp::Linear).unwrap();
        let s = assemble_split(&g, &c, &p);
        let f = factorize(&s.parts[0], 0.01, &SolverOptions::default()).unwrap();
        assert_eq!(f.component_count(), 4);
        let rhs: Vec<f64> = (0..127).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = f.solve(&rhs).unwrap();
        let b = f.solve_ordered(&rhs, &[3, 1, 0, 2]).unwrap();
        let c2 = f.solve_ordered(&rhs, &[0, 1, 2, 3]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c2);
    }

    #[test]
    fn shift_precondition() {
        let a = Arc::new(SparseOperator::from_dense(&[vec![2.0]]).unwrap());
        assert_eq!(a.shift(), 2.0);
        assert!(factorize(&a, 0.5, &SolverOptions::default()).is_err());
        let f = factorize(&a, 0.25, &SolverOptions::default()).unwrap();
        assert!((f.solve(&[1.0]).unwrap()[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn cache_reuses_factors() {
        let a = Arc::new(SparseOperator::from_dense(&[vec![-1.0]]).unwrap());
        let b = Arc::new(SparseOperator::from_dense(&[vec![-1.0]]).unwrap());
        let cache = FactorCache::new();
        let opts = SolverOptions::default();
        let f1 = cache.get_or_factorize(&a, 0.1, &opts).unwrap();
        let f2 = cache.get_or_factorize(&a, 0.1, &opts).unwrap();
        assert!(Arc::ptr_eq(&f1, &f2));
        cache.get_or_factorize(&a, 0.2, &opts).unwrap();
        cache.get_or_factorize(&b, 0.1, &opts).unwrap();
        assert_eq!(cache.len(), 3);
    }
}
