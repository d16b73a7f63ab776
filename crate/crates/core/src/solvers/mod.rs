//! Cell-problem solvers.
//!
//! Every reported energy is recomputed from the returned minimizer with the
//! energy functions of [`crate::discretize`], so results from different
//! solvers on the same instance are compared along one rounding path.

pub mod maxflow;
pub mod oracle;
pub(crate) mod pde;

use serde::{Deserialize, Serialize};

pub use maxflow::{FlowGraph, MaxFlowResult};
pub use oracle::{brute_force_surface, brute_force_volume, surface_oracle_battery, volume_oracle_battery, OracleComparison};
pub use pde::SolveStats;

use crate::discretize::{
    cell_pairs, surface_energy_with, volume_energy, CellPair, Coefficient, Grid, LabelField, Masks, ScalarField, SurfaceIntegrand,
    VolumeIntegrand,
};
use crate::{Error, Result};

/// Largest node count a solve will allocate for.
pub const MAX_NODES: usize = 1 << 26;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Minimizer {
    Scalar(ScalarField),
    Labels(LabelField),
}

impl Minimizer {
    pub fn as_scalar(&self) -> Option<&ScalarField> {
        match self {
            Minimizer::Scalar(u) => Some(u),
            Minimizer::Labels(_) => None,
        }
    }

    pub fn as_labels(&self) -> Option<&LabelField> {
        match self {
            Minimizer::Labels(u) => Some(u),
            Minimizer::Scalar(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    pub unknowns: usize,
    pub wall_time_s: f64,
    /// Combinatorially exact (min-cut or exhaustive) rather than iterative.
    pub exact: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellProblemResult {
    pub minimizer: Minimizer,
    pub energy: f64,
    /// Energy divided by `t^n` (volume) or by the area of the datum plane
    /// inside the window as measured by [`flat_reference_energy`] (surface).
    pub normalized_energy: f64,
    pub diagnostics: Diagnostics,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub tol: f64,
    /// Defaults to `50·√(unknowns)`.
    pub max_iter: Option<usize>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: None }
    }
}

fn check_size(masks: &Masks) -> Result<()> {
    let count = masks.grid.num_nodes();
    if count > MAX_NODES {
        return Err(Error::Size {
            what: "grid nodes",
            count,
            limit: MAX_NODES,
        });
    }
    Ok(())
}

fn check_direction(masks: &Masks, v: &[f64], what: &str) -> Result<()> {
    if v.len() != masks.grid.n || v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Parameter(format!("{what} must have {} finite components", masks.grid.n)));
    }
    Ok(())
}

/// Minimize the volume energy over fields equal to `ℓ_ξ` on the frame.
pub fn solve_volume_cell(masks: &Masks, q: &VolumeIntegrand, xi: &[f64], tol: f64) -> Result<CellProblemResult> {
    solve_volume_cell_from(masks, q, xi, &SolveOptions { tol, max_iter: None }, None)
}

/// As [`solve_volume_cell`], warm-started from `initial` (whose frame
/// values are replaced by the data). The returned energy never exceeds the
/// energy of `initial` or of `ℓ_ξ`.
pub fn solve_volume_cell_from(
    masks: &Masks,
    q: &VolumeIntegrand,
    xi: &[f64],
    opts: &SolveOptions,
    initial: Option<&ScalarField>,
) -> Result<CellProblemResult> {
    let start = std::time::Instant::now();
    if !(q.p > 1.0 && q.p.is_finite()) {
        return Err(Error::Exponent(q.p));
    }
    q.validate(masks)?;
    check_direction(masks, xi, "ξ")?;
    check_size(masks)?;
    if !(opts.tol > 0.0) {
        return Err(Error::Parameter(format!("tolerance must be positive, got {}", opts.tol)));
    }
    let grid = &masks.grid;
    let data = ScalarField::affine(grid, xi);
    let mut start_field = data.clone();
    if let Some(init) = initial {
        if init.values.len() != grid.num_nodes() {
            return Err(Error::GridMismatch("initial field does not match the grid".into()));
        }
        for a in 0..grid.num_nodes() {
            if !masks.frame_nodes[a] {
                start_field.values[a] = init.values[a];
            }
        }
    }
    let free: Vec<bool> = masks.frame_nodes.iter().map(|f| !f).collect();
    let vol = grid.cell_volume();
    let cells: Vec<(usize, f64)> = (0..grid.num_cells())
        .map(|c| (c, q.cell_weight(masks, c) * vol))
        .filter(|&(_, w)| w > 0.0)
        .collect();

    let mut u = start_field.clone();
    let stats = if q.p == 2.0 {
        pde::Problem {
            grid,
            cells,
            broken: None,
            free: &free,
            p: 2.0,
            tol: opts.tol,
            max_iter: opts.max_iter,
        }
        .solve(&mut u.values)
    } else {
        // quadratic warm start, then keep whichever start is better
        let mut quad = start_field.clone();
        let s2 = pde::Problem {
            grid,
            cells: cells.clone(),
            broken: None,
            free: &free,
            p: 2.0,
            tol: opts.tol,
            max_iter: opts.max_iter,
        }
        .solve(&mut quad.values);
        if volume_energy(&quad, q, masks)? <= volume_energy(&start_field, q, masks)? {
            u = quad;
        }
        let mut s = pde::Problem {
            grid,
            cells,
            broken: None,
            free: &free,
            p: q.p,
            tol: opts.tol,
            max_iter: opts.max_iter,
        }
        .solve(&mut u.values);
        s.iterations += s2.iterations;
        s
    };

    let mut best = u;
    let mut energy = volume_energy(&best, q, masks)?;
    for candidate in [Some(&start_field), Some(&data)].into_iter().flatten() {
        let e = volume_energy(candidate, q, masks)?;
        if e < energy {
            energy = e;
            best = candidate.clone();
        }
    }
    Ok(CellProblemResult {
        normalized_energy: energy / grid.t.powi(grid.n as i32),
        energy,
        minimizer: Minimizer::Scalar(best),
        diagnostics: Diagnostics {
            iterations: stats.iterations,
            residual: stats.residual,
            converged: stats.converged,
            unknowns: stats.unknowns,
            wall_time_s: start.elapsed().as_secs_f64(),
            exact: false,
        },
    })
}

/// Minimum cut of the surface energy over the cells whose entry in `fixed`
/// is `None`; fixed cells keep their label. Returns the labels and the
/// max-flow value.
pub fn solve_partition(
    masks: &Masks,
    s: &SurfaceIntegrand,
    fixed: &[Option<u8>],
    pairs: &[CellPair],
) -> Result<(LabelField, MaxFlowResult)> {
    let grid = &masks.grid;
    if fixed.len() != grid.num_cells() {
        return Err(Error::GridMismatch("fixed labels do not match the grid".into()));
    }
    let mut slot = vec![u32::MAX; grid.num_cells()];
    let mut free_count = 0usize;
    for (c, f) in fixed.iter().enumerate() {
        if f.is_none() {
            slot[c] = free_count as u32;
            free_count += 1;
        }
    }
    let (src, sink) = (free_count, free_count + 1);
    let mut graph = FlowGraph::new(free_count + 2);
    let mut to_source = vec![0.0; free_count];
    let mut to_sink = vec![0.0; free_count];
    for p in pairs {
        let w = s.pair_weight(masks, p);
        if w == 0.0 {
            continue;
        }
        let (a, b) = (p.a as usize, p.b as usize);
        match (slot[a] != u32::MAX, slot[b] != u32::MAX) {
            (true, true) => graph.add_edge(slot[a] as usize, slot[b] as usize, w, w),
            (true, false) | (false, true) => {
                let (free_cell, other) = if slot[a] != u32::MAX { (a, b) } else { (b, a) };
                let i = slot[free_cell] as usize;
                if fixed[other] == Some(1) {
                    to_source[i] += w;
                } else {
                    to_sink[i] += w;
                }
            }
            (false, false) => {}
        }
    }
    for i in 0..free_count {
        if to_source[i] > 0.0 {
            graph.add_edge(src, i, to_source[i], 0.0);
        }
        if to_sink[i] > 0.0 {
            graph.add_edge(i, sink, to_sink[i], 0.0);
        }
    }
    let flow = graph.max_flow(src, sink);
    let labels = (0..grid.num_cells())
        .map(|c| match fixed[c] {
            Some(l) => l,
            None => u8::from(flow.source_side[slot[c] as usize]),
        })
        .collect();
    Ok((LabelField { labels }, flow))
}

/// Energy of the datum `u_{x,1,ν}` in the hole-free medium with unit
/// coefficient: the discrete area of the datum plane inside the window.
///
/// Surface cell problems are normalized by this rather than by the exact
/// section area, which removes the direction-dependent bias of the
/// discrete perimeter and keeps the datum itself a competitor of value
/// exactly `g`.
pub fn flat_reference_energy(grid: &Grid, x: &[f64], nu: &[f64], pairs: &[CellPair]) -> f64 {
    let datum = LabelField::half_space(grid, x, nu);
    let unit = SurfaceIntegrand::new(Coefficient::Constant(1.0), 1.0);
    surface_energy_with(&datum, &unit, &Masks::plain(grid.clone()), pairs).expect("plain masks match the grid")
}

/// Minimize the surface energy over labellings equal to the half-space
/// datum `u_{x,1,ν}` on the frame; `x` defaults to the window centre.
pub fn solve_surface_cell(masks: &Masks, s: &SurfaceIntegrand, nu: &[f64], x_datum: Option<&[f64]>) -> Result<CellProblemResult> {
    solve_surface_cell_from(masks, s, nu, x_datum, &[])
}

/// As [`solve_surface_cell`]; additionally returns the best of
/// `competitors` (with frame labels replaced by the datum) if one of them
/// has lower energy than the cut.
pub fn solve_surface_cell_from(
    masks: &Masks,
    s: &SurfaceIntegrand,
    nu: &[f64],
    x_datum: Option<&[f64]>,
    competitors: &[&LabelField],
) -> Result<CellProblemResult> {
    let start = std::time::Instant::now();
    s.validate(masks)?;
    check_direction(masks, nu, "ν")?;
    if nu.iter().all(|v| *v == 0.0) {
        return Err(Error::Parameter("ν must be nonzero".into()));
    }
    check_size(masks)?;
    let grid = &masks.grid;
    let centre: Vec<f64> = grid.origin.iter().map(|o| o + 0.5 * grid.t).collect();
    let x = x_datum.unwrap_or(&centre);
    check_direction(masks, x, "x")?;
    let datum = LabelField::half_space(grid, x, nu);
    let fixed: Vec<Option<u8>> = (0..grid.num_cells())
        .map(|c| masks.frame_cells[c].then_some(datum.labels[c]))
        .collect();
    let pairs = cell_pairs(grid);
    let (labels, flow) = solve_partition(masks, s, &fixed, &pairs)?;

    let mut best = labels;
    let mut energy = surface_energy_with(&best, s, masks, &pairs)?;
    for comp in competitors {
        if comp.labels.len() != grid.num_cells() {
            return Err(Error::GridMismatch("competitor does not match the grid".into()));
        }
        let mut cand = (*comp).clone();
        for c in 0..grid.num_cells() {
            if let Some(l) = fixed[c] {
                cand.labels[c] = l;
            }
        }
        let e = surface_energy_with(&cand, s, masks, &pairs)?;
        if e < energy {
            energy = e;
            best = cand;
        }
    }
    let reference = flat_reference_energy(grid, x, nu, &pairs);
    Ok(CellProblemResult {
        normalized_energy: if reference > 0.0 { energy / reference } else { f64::NAN },
        energy,
        minimizer: Minimizer::Labels(best),
        diagnostics: Diagnostics {
            iterations: 1,
            residual: (flow.flow_value - flow.cut_capacity).abs() / flow.cut_capacity.max(f64::MIN_POSITIVE),
            converged: true,
            unknowns: fixed.iter().filter(|f| f.is_none()).count(),
            wall_time_s: start.elapsed().as_secs_f64(),
            exact: true,
        },
    })
}
