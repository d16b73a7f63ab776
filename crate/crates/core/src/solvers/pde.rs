//! Minimization of `Σ_c W_c |∇u(c)|^p` over the free nodes of a grid.
//!
//! `W_c` already includes the cell volume. For `p = 2` the minimizer solves
//! a weighted graph Laplacian, handled by Jacobi-preconditioned conjugate
//! gradients. Other exponents start from the quadratic solution and run
//! preconditioned nonlinear conjugate gradients (Polak–Ribière+) with an
//! Armijo line search.
//!
//! Free nodes not connected to any fixed node through positively weighted
//! gradients are left out of the solve and pinned afterwards to the mean of
//! their solved neighbours; the energy does not see them.

use crate::discretize::{cell_gradient, norm_pow, Grid};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    /// Final relative residual (`p = 2`) or relative gradient norm.
    pub residual: f64,
    pub converged: bool,
    pub unknowns: usize,
}

pub(crate) struct Problem<'a> {
    pub grid: &'a Grid,
    /// `(cell, W_c)` for cells with `W_c > 0`.
    pub cells: Vec<(usize, f64)>,
    pub broken: Option<&'a [bool]>,
    pub free: &'a [bool],
    pub p: f64,
    pub tol: f64,
    pub max_iter: Option<usize>,
}

struct UnionFind(Vec<u32>);

impl UnionFind {
    fn find(&mut self, mut i: u32) -> u32 {
        while self.0[i as usize] != i {
            let up = self.0[self.0[i as usize] as usize];
            self.0[i as usize] = up;
            i = up;
        }
        i
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb) as usize] = ra.min(rb);
        }
    }
}

/// Quadratic system on the anchored free nodes, in CSR form.
struct Laplacian {
    unknown_nodes: Vec<usize>,
    diag: Vec<f64>,
    row_start: Vec<usize>,
    col: Vec<u32>,
    coef: Vec<f64>,
    rhs: Vec<f64>,
}

impl Laplacian {
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..x.len() {
            let mut s = self.diag[i] * x[i];
            for e in self.row_start[i]..self.row_start[i + 1] {
                s -= self.coef[e] * x[self.col[e] as usize];
            }
            y[i] = s;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Problem<'_> {
    /// Edges `(a, b, c)` with `c = W/h²` from every unbroken forward
    /// difference of an active cell touching a free node.
    fn edges(&self) -> Vec<(usize, usize, f64)> {
        let g = self.grid;
        let inv_h2 = 1.0 / (g.h * g.h);
        let mut out = Vec::with_capacity(self.cells.len() * g.n);
        for &(c, w) in &self.cells {
            let base = g.cell_base_node(c);
            for k in 0..g.n {
                if self.broken.is_some_and(|b| b[base * g.n + k]) {
                    continue;
                }
                let other = base + g.node_stride(k);
                if self.free[base] || self.free[other] {
                    out.push((base, other, w * inv_h2));
                }
            }
        }
        out
    }

    /// Solve in place; `u` holds the fixed values and the initial guess.
    pub fn solve(&self, u: &mut [f64]) -> SolveStats {
        self.solve_reporting(u).0
    }

    /// As [`Problem::solve`], also returning the floating free nodes.
    pub fn solve_reporting(&self, u: &mut [f64]) -> (SolveStats, Vec<usize>) {
        let g = self.grid;
        let edges = self.edges();
        let nodes = g.num_nodes();

        let mut uf = UnionFind((0..nodes as u32).collect());
        let mut anchored_root = vec![false; nodes];
        for &(a, b, _) in &edges {
            if self.free[a] && self.free[b] {
                uf.union(a as u32, b as u32);
            }
        }
        for &(a, b, _) in &edges {
            if self.free[a] != self.free[b] {
                let f = if self.free[a] { a } else { b };
                let r = uf.find(f as u32) as usize;
                anchored_root[r] = true;
            }
        }
        let mut index = vec![u32::MAX; nodes];
        let mut unknown_nodes = Vec::new();
        let mut floating = Vec::new();
        for a in (0..nodes).filter(|&a| self.free[a]) {
            if anchored_root[uf.find(a as u32) as usize] {
                index[a] = unknown_nodes.len() as u32;
                unknown_nodes.push(a);
            } else {
                floating.push(a);
            }
        }

        let lap = self.assemble(&edges, &index, unknown_nodes, u);
        let mut stats = self.conjugate_gradient(&lap, u);
        if self.p != 2.0 && !lap.unknown_nodes.is_empty() {
            stats = self.nonlinear(&lap, u, stats);
        }
        self.pin_floating(&mut uf, &floating, u);
        (stats, floating)
    }

    fn assemble(&self, edges: &[(usize, usize, f64)], index: &[u32], unknown_nodes: Vec<usize>, u: &[f64]) -> Laplacian {
        let count = unknown_nodes.len();
        let mut diag = vec![0.0; count];
        let mut rhs = vec![0.0; count];
        let mut degree = vec![0usize; count + 1];
        for &(a, b, c) in edges {
            let (ia, ib) = (index[a], index[b]);
            if ia != u32::MAX {
                diag[ia as usize] += c;
                if ib != u32::MAX {
                    degree[ia as usize + 1] += 1;
                } else if !self.free[b] {
                    rhs[ia as usize] += c * u[b];
                }
            }
            if ib != u32::MAX {
                diag[ib as usize] += c;
                if ia != u32::MAX {
                    degree[ib as usize + 1] += 1;
                } else if !self.free[a] {
                    rhs[ib as usize] += c * u[a];
                }
            }
        }
        for i in 0..count {
            degree[i + 1] += degree[i];
        }
        let row_start = degree.clone();
        let mut fill = degree;
        let mut col = vec![0u32; row_start[count]];
        let mut coef = vec![0.0; row_start[count]];
        for &(a, b, c) in edges {
            let (ia, ib) = (index[a], index[b]);
            if ia != u32::MAX && ib != u32::MAX {
                col[fill[ia as usize]] = ib;
                coef[fill[ia as usize]] = c;
                fill[ia as usize] += 1;
                col[fill[ib as usize]] = ia;
                coef[fill[ib as usize]] = c;
                fill[ib as usize] += 1;
            }
        }
        Laplacian {
            unknown_nodes,
            diag,
            row_start,
            col,
            coef,
            rhs,
        }
    }

    fn max_iter(&self, unknowns: usize) -> usize {
        self.max_iter
            .unwrap_or_else(|| ((50.0 * (unknowns as f64).sqrt()).ceil() as usize).max(50))
    }

    fn conjugate_gradient(&self, lap: &Laplacian, u: &mut [f64]) -> SolveStats {
        let count = lap.unknown_nodes.len();
        let mut stats = SolveStats {
            iterations: 0,
            residual: 0.0,
            converged: true,
            unknowns: count,
        };
        if count == 0 {
            return stats;
        }
        let mut x: Vec<f64> = lap.unknown_nodes.iter().map(|&a| u[a]).collect();
        let mut ax = vec![0.0; count];
        lap.apply(&x, &mut ax);
        let mut r: Vec<f64> = lap.rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let r0 = dot(&r, &r).sqrt();
        let scale = {
            let b = dot(&lap.rhs, &lap.rhs).sqrt();
            if b > 0.0 {
                b
            } else {
                r0
            }
        };
        if r0 == 0.0 || scale == 0.0 {
            return stats;
        }
        let mut z: Vec<f64> = r.iter().zip(&lap.diag).map(|(r, d)| r / d).collect();
        let mut d = z.clone();
        let mut rz = dot(&r, &z);
        let mut ad = vec![0.0; count];
        let limit = self.max_iter(count);
        let mut rel = r0 / scale;
        stats.converged = rel <= self.tol;
        while !stats.converged && stats.iterations < limit {
            lap.apply(&d, &mut ad);
            let dad = dot(&d, &ad);
            if !(dad > 0.0) {
                break;
            }
            let alpha = rz / dad;
            for i in 0..count {
                x[i] += alpha * d[i];
                r[i] -= alpha * ad[i];
            }
            stats.iterations += 1;
            rel = dot(&r, &r).sqrt() / scale;
            if rel <= self.tol {
                stats.converged = true;
                break;
            }
            for i in 0..count {
                z[i] = r[i] / lap.diag[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..count {
                d[i] = z[i] + beta * d[i];
            }
        }
        stats.residual = rel;
        for (i, &a) in lap.unknown_nodes.iter().enumerate() {
            u[a] = x[i];
        }
        stats
    }

    fn energy(&self, u: &[f64]) -> f64 {
        self.cells
            .iter()
            .map(|&(c, w)| w * norm_pow(&cell_gradient(self.grid, u, c, self.broken), self.p))
            .sum()
    }

    fn gradient(&self, u: &[f64], out: &mut [f64]) {
        let g = self.grid;
        out.iter_mut().for_each(|v| *v = 0.0);
        for &(c, w) in &self.cells {
            let grad = cell_gradient(g, u, c, self.broken);
            let s = grad[0] * grad[0] + grad[1] * grad[1] + grad[2] * grad[2];
            if s == 0.0 {
                continue;
            }
            let factor = w * self.p * s.powf(0.5 * self.p - 1.0) / g.h;
            let base = g.cell_base_node(c);
            for k in 0..g.n {
                if grad[k] != 0.0 {
                    out[base + g.node_stride(k)] += factor * grad[k];
                    out[base] -= factor * grad[k];
                }
            }
        }
    }

    fn nonlinear(&self, lap: &Laplacian, u: &mut [f64], linear: SolveStats) -> SolveStats {
        let nodes = &lap.unknown_nodes;
        let count = nodes.len();
        let limit = self.max_iter(count);
        let mut full_grad = vec![0.0; u.len()];
        let gather = |full: &[f64]| -> Vec<f64> { nodes.iter().map(|&a| full[a]).collect() };

        let mut e = self.energy(u);
        self.gradient(u, &mut full_grad);
        let mut gr = gather(&full_grad);
        let g0 = dot(&gr, &gr).sqrt();
        let mut stats = SolveStats {
            iterations: linear.iterations,
            residual: 0.0,
            converged: true,
            unknowns: count,
        };
        if g0 == 0.0 {
            return stats;
        }
        let mut z: Vec<f64> = gr.iter().zip(&lap.diag).map(|(g, d)| g / d).collect();
        let mut dir: Vec<f64> = z.iter().map(|v| -v).collect();
        let mut alpha = 1.0;
        let mut quiet = 0;
        let mut trial = u.to_vec();
        stats.converged = false;
        let mut steps = 0;
        while steps < limit {
            let mut slope = dot(&gr, &dir);
            if !(slope < 0.0) {
                dir = z.iter().map(|v| -v).collect();
                slope = dot(&gr, &dir);
                if !(slope < 0.0) {
                    stats.converged = true;
                    break;
                }
            }
            let mut accepted = None;
            let mut a = alpha;
            for _ in 0..60 {
                for (i, &node) in nodes.iter().enumerate() {
                    trial[node] = u[node] + a * dir[i];
                }
                let et = self.energy(&trial);
                if et <= e + 1e-4 * a * slope {
                    accepted = Some(et);
                    break;
                }
                a *= 0.5;
            }
            let Some(e_new) = accepted else {
                stats.converged = true;
                break;
            };
            for &node in nodes {
                u[node] = trial[node];
            }
            steps += 1;
            let decrease = (e - e_new) / e.abs().max(f64::MIN_POSITIVE);
            e = e_new;
            alpha = (2.0 * a).min(1e6);
            quiet = if decrease < self.tol { quiet + 1 } else { 0 };
            self.gradient(u, &mut full_grad);
            let g_new = gather(&full_grad);
            let z_new: Vec<f64> = g_new.iter().zip(&lap.diag).map(|(g, d)| g / d).collect();
            let denom = dot(&z, &gr);
            let beta = if denom > 0.0 {
                ((dot(&z_new, &g_new) - dot(&z_new, &gr)) / denom).max(0.0)
            } else {
                0.0
            };
            for i in 0..count {
                dir[i] = -z_new[i] + beta * dir[i];
            }
            gr = g_new;
            z = z_new;
            stats.residual = dot(&gr, &gr).sqrt() / g0;
            if quiet >= 10 || stats.residual <= self.tol {
                stats.converged = true;
                break;
            }
        }
        stats.iterations += steps;
        stats
    }

    fn pin_floating(&self, uf: &mut UnionFind, floating: &[usize], u: &mut [f64]) {
        if floating.is_empty() {
            return;
        }
        let g = self.grid;
        let mut sums: std::collections::BTreeMap<u32, (f64, usize)> = Default::default();
        let is_floating: std::collections::HashSet<usize> = floating.iter().copied().collect();
        for &a in floating {
            let root = uf.find(a as u32);
            let entry = sums.entry(root).or_insert((0.0, 0));
            for b in g.node_neighbors(a) {
                if !is_floating.contains(&b) {
                    entry.0 += u[b];
                    entry.1 += 1;
                }
            }
        }
        for &a in floating {
            let root = uf.find(a as u32);
            let (s, k) = sums[&root];
            if k > 0 {
                u[a] = s / k as f64;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn problem<'a>(grid: &'a Grid, free: &'a [bool], p: f64) -> Problem<'a> {
        let w = grid.cell_volume();
        Problem {
            grid,
            cells: (0..grid.num_cells()).map(|c| (c, w)).collect(),
            broken: None,
            free,
            p,
            tol: 1e-12,
            max_iter: None,
        }
    }

    #[test]
    fn affine_data_is_reproduced() {
        let grid = Grid::from_cells(2, 10, 0.1, 1, vec![0.0, 0.0]).unwrap();
        let free: Vec<bool> = (0..grid.num_nodes()).map(|a| !grid.is_frame_node(a)).collect();
        for p in [2.0, 1.5, 3.0] {
            let exact: Vec<f64> = (0..grid.num_nodes())
                .map(|a| {
                    let x = grid.node_position(a);
                    0.7 * x[0] - 0.2 * x[1]
                })
                .collect();
            let mut u: Vec<f64> = exact.iter().zip(&free).map(|(v, f)| if *f { 0.0 } else { *v }).collect();
            problem(&grid, &free, p).solve(&mut u);
            for (a, b) in u.iter().zip(&exact) {
                assert_relative_eq!(a, b, epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn isolated_node_is_pinned_to_neighbour_mean() {
        let grid = Grid::from_cells(2, 4, 1.0, 1, vec![0.0, 0.0]).unwrap();
        let centre = grid.node_index(&[2, 2]);
        let mut free = vec![false; grid.num_nodes()];
        free[centre] = true;
        let mut pr = problem(&grid, &free, 2.0);
        pr.cells.retain(|&(c, _)| !grid.node_cells(centre).contains(&c));
        let mut u: Vec<f64> = (0..grid.num_nodes()).map(|a| a as f64).collect();
        u[centre] = 0.0;
        let stats = pr.solve(&mut u);
        assert_eq!(stats.unknowns, 0);
        let nb = grid.node_neighbors(centre);
        let mean = nb.iter().map(|&b| b as f64).sum::<f64>() / nb.len() as f64;
        assert_eq!(u[centre], mean);
    }
}
