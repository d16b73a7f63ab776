//! Exhaustive and dense-linear-algebra reference solvers for small grids.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{solve_partition, solve_surface_cell, solve_volume_cell, CellProblemResult, Diagnostics, Minimizer};
use crate::discretize::{
    cell_pairs, surface_energy_with, volume_energy, Coefficient, Grid, LabelField, Masks, ScalarField, SurfaceIntegrand, VolumeIntegrand,
};
use crate::{Error, Result};

pub const MAX_BRUTE_FORCE_CELLS: usize = 20;
pub const MAX_DENSE_NODES: usize = 400;

/// Minimize the surface energy by enumerating every labelling of the cells
/// whose entry in `fixed` is `None`.
pub fn brute_force_surface(masks: &Masks, s: &SurfaceIntegrand, fixed: &[Option<u8>]) -> Result<CellProblemResult> {
    let start = std::time::Instant::now();
    s.validate(masks)?;
    let grid = &masks.grid;
    if fixed.len() != grid.num_cells() {
        return Err(Error::GridMismatch("fixed labels do not match the grid".into()));
    }
    let free: Vec<usize> = (0..fixed.len()).filter(|&c| fixed[c].is_none()).collect();
    if free.len() > MAX_BRUTE_FORCE_CELLS {
        return Err(Error::Size {
            what: "free cells for exhaustive search",
            count: free.len(),
            limit: MAX_BRUTE_FORCE_CELLS,
        });
    }
    let pairs = cell_pairs(grid);
    let mut labels = LabelField {
        labels: fixed.iter().map(|l| l.unwrap_or(0)).collect(),
    };
    let mut slot = vec![usize::MAX; grid.num_cells()];
    for (i, &c) in free.iter().enumerate() {
        slot[c] = i;
    }
    // pairs touching each free cell, with their weights
    let mut touching: Vec<Vec<(usize, f64)>> = vec![Vec::new(); free.len()];
    for p in &pairs {
        let w = s.pair_weight(masks, p);
        let (a, b) = (p.a as usize, p.b as usize);
        if slot[a] != usize::MAX {
            touching[slot[a]].push((b, w));
        }
        if slot[b] != usize::MAX && a != b {
            touching[slot[b]].push((a, w));
        }
    }

    // Gray-code walk with an incrementally updated energy; candidates within
    // a relative tolerance of the running best are re-evaluated exactly
    let mut running = surface_energy_with(&labels, s, masks, &pairs)?;
    let scale = pairs.iter().map(|p| s.pair_weight(masks, p)).sum::<f64>().max(f64::MIN_POSITIVE);
    let slack = 1e-9 * scale;
    let mut best_fast = running;
    let mut best_exact = running;
    let mut best = labels.clone();
    for step in 1u64..(1u64 << free.len()) {
        let i = step.trailing_zeros() as usize;
        let c = free[i];
        let old = labels.labels[c];
        let mut delta = 0.0;
        for &(o, w) in &touching[i] {
            let before = labels.labels[o] != old;
            delta += if before { -w } else { w };
        }
        labels.labels[c] = 1 - old;
        running += delta;
        if running <= best_fast + slack {
            best_fast = best_fast.min(running);
            let exact = surface_energy_with(&labels, s, masks, &pairs)?;
            if exact < best_exact {
                best_exact = exact;
                best = labels.clone();
            }
        }
    }
    Ok(CellProblemResult {
        energy: best_exact,
        normalized_energy: best_exact,
        minimizer: Minimizer::Labels(best),
        diagnostics: Diagnostics {
            iterations: 1usize << free.len(),
            residual: 0.0,
            converged: true,
            unknowns: free.len(),
            wall_time_s: start.elapsed().as_secs_f64(),
            exact: true,
        },
    })
}

/// Quadratic cell problem with affine frame data, solved by assembling the
/// dense Hessian cell by cell and applying its pseudo-inverse.
pub fn brute_force_volume(masks: &Masks, q: &VolumeIntegrand, xi: &[f64]) -> Result<CellProblemResult> {
    let start = std::time::Instant::now();
    if q.p != 2.0 {
        return Err(Error::Exponent(q.p));
    }
    q.validate(masks)?;
    let grid = &masks.grid;
    if xi.len() != grid.n {
        return Err(Error::Parameter("gradient dimension mismatch".into()));
    }
    let data = ScalarField::affine(grid, xi);
    let free: Vec<usize> = (0..grid.num_nodes()).filter(|&a| !masks.frame_nodes[a]).collect();
    if free.len() > MAX_DENSE_NODES {
        return Err(Error::Size {
            what: "free nodes for the dense solve",
            count: free.len(),
            limit: MAX_DENSE_NODES,
        });
    }
    let mut slot = vec![usize::MAX; grid.num_nodes()];
    for (i, &a) in free.iter().enumerate() {
        slot[a] = i;
    }
    let k = free.len();
    let mut hess = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DVector::<f64>::zeros(k);
    let vol = grid.cell_volume();
    for c in 0..grid.num_cells() {
        let w = q.cell_weight(masks, c) * vol;
        let base = grid.cell_base_node(c);
        for axis in 0..grid.n {
            // row of the difference operator: (e_top − e_base) / h
            let row = [(base, -1.0 / grid.h), (base + grid.node_stride(axis), 1.0 / grid.h)];
            for &(i, ri) in &row {
                if slot[i] == usize::MAX {
                    continue;
                }
                for &(j, rj) in &row {
                    if slot[j] == usize::MAX {
                        rhs[slot[i]] -= w * ri * rj * data.values[j];
                    } else {
                        hess[(slot[i], slot[j])] += w * ri * rj;
                    }
                }
            }
        }
    }
    let svd = hess.svd(true, true);
    let eps = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    let x = svd.solve(&rhs, eps).map_err(|e| Error::Parameter(e.to_string()))?;
    let mut u = data;
    for (i, &a) in free.iter().enumerate() {
        u.values[a] = x[i];
    }
    let energy = volume_energy(&u, q, masks)?;
    Ok(CellProblemResult {
        energy,
        normalized_energy: energy / grid.t.powi(grid.n as i32),
        minimizer: Minimizer::Scalar(u),
        diagnostics: Diagnostics {
            iterations: 1,
            residual: 0.0,
            converged: true,
            unknowns: k,
            wall_time_s: start.elapsed().as_secs_f64(),
            exact: true,
        },
    })
}

/// One solver-versus-reference comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleComparison {
    pub instance: usize,
    pub n: usize,
    pub unknowns: usize,
    pub solver_energy: f64,
    pub oracle_energy: f64,
    pub relative_difference: f64,
    pub passed: bool,
}

fn random_masks(rng: &mut ChaCha8Rng, n: usize, m: usize, hole_prob: f64) -> Result<Masks> {
    let h = 1.0 / m as f64;
    let mut masks = Masks::plain(Grid::from_cells(n, m, h, 1, vec![0.0; n])?);
    for c in 0..masks.grid.num_cells() {
        if !masks.frame_cells[c] && rng.gen_bool(hole_prob) {
            masks.hole_cells[c] = true;
        }
    }
    Ok(masks)
}

/// Min-cut against exhaustive search on `count` random instances: 4×4
/// interior cells in 2D, 2×2×2 in 3D, random coefficients in `[c3, c4]`,
/// random hole cells and hole weights, and either random frame labels or a
/// random half-space datum. Passes only on bitwise-equal energies.
pub fn surface_oracle_battery(count: usize, seed: u64, c3: f64, c4: f64) -> Result<Vec<OracleComparison>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for instance in 0..count {
        let n = if rng.gen_bool(0.75) { 2 } else { 3 };
        let m = if n == 2 { 6 } else { 4 };
        let hole_prob = rng.gen_range(0.0..0.6);
        let masks = random_masks(&mut rng, n, m, hole_prob)?;
        let cells = masks.grid.num_cells();
        let coefficient = Coefficient::PerCell((0..cells).map(|_| rng.gen_range(c3..=c4)).collect());
        let s = SurfaceIntegrand::new(coefficient, rng.gen_range(0.0..=1.0));
        let (solver_energy, fixed) = if rng.gen_bool(0.5) {
            let fixed: Vec<Option<u8>> = (0..cells).map(|c| masks.frame_cells[c].then(|| rng.gen_range(0..=1u8))).collect();
            let pairs = cell_pairs(&masks.grid);
            let (labels, _) = solve_partition(&masks, &s, &fixed, &pairs)?;
            (surface_energy_with(&labels, &s, &masks, &pairs)?, fixed)
        } else {
            let nu: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.3..0.7)).collect();
            let r = solve_surface_cell(&masks, &s, &nu, Some(&x))?;
            let datum = LabelField::half_space(&masks.grid, &x, &nu);
            let fixed = (0..cells).map(|c| masks.frame_cells[c].then_some(datum.labels[c])).collect();
            (r.energy, fixed)
        };
        let oracle = brute_force_surface(&masks, &s, &fixed)?;
        let diff = (solver_energy - oracle.energy).abs();
        out.push(OracleComparison {
            instance,
            n,
            unknowns: oracle.diagnostics.unknowns,
            solver_energy,
            oracle_energy: oracle.energy,
            relative_difference: diff / oracle.energy.abs().max(f64::MIN_POSITIVE),
            passed: solver_energy == oracle.energy,
        });
    }
    Ok(out)
}

/// Conjugate gradients against the dense solve on `count` random quadratic
/// instances with at most [`MAX_DENSE_NODES`] free nodes, random
/// coefficients in `[c1, c2]`, hole cells, hole weights (zero included) and
/// gradients. Passes on relative energy agreement within `rel_tol`.
pub fn volume_oracle_battery(count: usize, seed: u64, c1: f64, c2: f64, rel_tol: f64) -> Result<Vec<OracleComparison>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for instance in 0..count {
        let n = if rng.gen_bool(0.75) { 2 } else { 3 };
        let m = if n == 2 { rng.gen_range(5..=21) } else { rng.gen_range(4..=8) };
        let hole_prob = rng.gen_range(0.0..0.5);
        let masks = random_masks(&mut rng, n, m, hole_prob)?;
        let cells = masks.grid.num_cells();
        let coefficient = Coefficient::PerCell((0..cells).map(|_| rng.gen_range(c1..=c2)).collect());
        let hole_weight = if rng.gen_bool(0.25) { 0.0 } else { rng.gen_range(0.0..=1.0) };
        let q = VolumeIntegrand::new(2.0, coefficient, hole_weight);
        let xi: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let solved = solve_volume_cell(&masks, &q, &xi, 1e-13)?;
        let oracle = brute_force_volume(&masks, &q, &xi)?;
        let diff = (solved.energy - oracle.energy).abs();
        let rel = diff / oracle.energy.abs().max(f64::MIN_POSITIVE);
        out.push(OracleComparison {
            instance,
            n,
            unknowns: oracle.diagnostics.unknowns,
            solver_energy: solved.energy,
            oracle_energy: oracle.energy,
            relative_difference: rel,
            passed: rel <= rel_tol || diff <= f64::MIN_POSITIVE,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_batteries_agree() {
        let s = surface_oracle_battery(40, 11, 0.5, 2.0).unwrap();
        assert!(s.iter().all(|c| c.passed), "{:?}", s.iter().find(|c| !c.passed));
        assert!(s.iter().all(|c| c.unknowns <= 16));
        let v = volume_oracle_battery(10, 11, 0.5, 2.0, 1e-8).unwrap();
        assert!(v.iter().all(|c| c.passed), "{:?}", v.iter().find(|c| !c.passed));
        assert!(v.iter().all(|c| c.unknowns <= MAX_DENSE_NODES));
    }
}
