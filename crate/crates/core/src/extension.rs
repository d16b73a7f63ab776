//! Extension of fields from a perforated window into its holes.
//!
//! Each hole is filled independently from the data on its δ-annulus.
//! Thick balls (`r ≥ δ`) are processed annulus by annulus down a dyadic
//! radius schedule; thin balls in one step.
//!
//! - Sobolev values get a discrete p-harmonic fill.
//! - Partitions get a min-cut fill whose jump mass near each step sphere
//!   decides between a constant fill inside a jump-free sphere, the min-cut
//!   labels themselves, or the constant 0.
//! - SBV fields combine the two: the partition fill of the jump components
//!   decides the jump edges inside the hole, then values are filled with
//!   those edges broken.
//!
//! Balls whose δ-dilation leaves the window get the constant fill 0
//! (clamped to the data range).

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretize::{
    cell_gradient, cell_pairs, msp_energy, norm_pow, rasterize, CellPair, Grid, LabelField, Masks, Region, SbvField, ScalarField, NO_BALL,
};
use crate::geometry::{BallInclusion, PerforatedGeometry};
use crate::solvers::pde::Problem;
use crate::solvers::FlowGraph;
use crate::{Error, Result};

/// Radii `r·q^{1−i}` for `i = 0..=N_δ` with `q = 1 + δ/r_*`, and the
/// terminal radius `r_δ = r·q^{−N_δ} < δ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DyadicSchedule {
    pub n_delta: usize,
    pub radii: Vec<f64>,
    pub r_delta: f64,
    pub ratio: f64,
}

/// One fill step: the data outside `r_in` is reflected across the sphere
/// of radius `r_in`, jump mass is measured in the shell of half-width `s`,
/// and sites at radius `≥ commit_from` are frozen afterwards.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FillStep {
    pub r_in: f64,
    pub s: f64,
    pub commit_from: f64,
}

impl DyadicSchedule {
    /// Thin balls (`r < δ`) have no annuli.
    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    /// Fill steps for a ball of radius `r`.
    pub fn steps(&self, r: f64) -> Vec<FillStep> {
        if self.is_empty() {
            return vec![FillStep {
                r_in: r,
                s: r,
                commit_from: 0.0,
            }];
        }
        let n = self.n_delta;
        let inner = |j: usize| if j <= n { self.radii[j] } else { self.r_delta };
        let mut steps: Vec<FillStep> = (1..=n)
            .map(|j| FillStep {
                r_in: self.radii[j],
                s: self.radii[j - 1] - self.radii[j],
                commit_from: inner(j + 1),
            })
            .collect();
        steps.push(FillStep {
            r_in: self.r_delta,
            s: self.r_delta,
            commit_from: 0.0,
        });
        steps
    }
}

/// `N_δ = ⌊ln(r_*/δ) / ln(1 + δ/r_*)⌋ + 1`.
pub fn n_delta(delta: f64, r_star: f64) -> usize {
    ((r_star / delta).ln() / (1.0 + delta / r_star).ln()).floor() as usize + 1
}

pub fn dyadic_schedule(r: f64, delta: f64, r_star: f64) -> Result<DyadicSchedule> {
    if !(r > 0.0 && delta > 0.0 && r_star > 0.0) || !(r < r_star) {
        return Err(Error::Parameter(format!(
            "schedule needs 0 < r < r_* and δ > 0, got r = {r}, δ = {delta}, r_* = {r_star}"
        )));
    }
    let ratio = 1.0 + delta / r_star;
    if r < delta {
        return Ok(DyadicSchedule {
            n_delta: 0,
            radii: Vec::new(),
            r_delta: r,
            ratio,
        });
    }
    let n = n_delta(delta, r_star);
    let radii = (0..=n).map(|i| r * ratio.powi(1 - i as i32)).collect();
    Ok(DyadicSchedule {
        n_delta: n,
        radii,
        r_delta: r * ratio.powi(-(n as i32)),
        ratio,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// Nothing to fill.
    Trivial,
    /// Constant fill of a ball touching the window boundary.
    Boundary,
    CleanSphere,
    MinCut,
    Fallback,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Trivial => "trivial",
            Branch::Boundary => "boundary",
            Branch::CleanSphere => "clean_sphere",
            Branch::MinCut => "min_cut",
            Branch::Fallback => "fallback",
        }
    }
}

/// Threshold on `J / s^{n−1}` below which the small-jump branch is taken.
/// Calibrated with [`calibrate_gamma`] on single planar cuts: the largest
/// threshold under which at least 95% of the accepted cuts admit a
/// jump-free sphere.
pub const DEFAULT_GAMMA_2D: f64 = 3.9;
pub const DEFAULT_GAMMA_3D: f64 = 10.5;

pub fn default_gamma(n: usize) -> f64 {
    if n == 2 {
        DEFAULT_GAMMA_2D
    } else {
        DEFAULT_GAMMA_3D
    }
}

/// Sites near one ball, positions relative to its centre.
struct Local {
    global: Vec<usize>,
    pos: Vec<[f64; 3]>,
    rho: Vec<f64>,
    /// `(a, b, weight, edge slot)`; the slot is only meaningful for nodes.
    edges: Vec<(u32, u32, f64, usize)>,
}

fn bounding_indices(grid: &Grid, centre: &[f64], radius: f64, cells: bool) -> Vec<usize> {
    let n = grid.n;
    let (shift, top) = if cells { (0.5, grid.m - 1) } else { (0.0, grid.m) };
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for k in 0..n {
        let a = ((centre[k] - radius - grid.origin[k]) / grid.h - shift).floor() - 1.0;
        let b = ((centre[k] + radius - grid.origin[k]) / grid.h - shift).ceil() + 1.0;
        lo[k] = a.max(0.0) as usize;
        hi[k] = (b.max(0.0) as usize).min(top);
        if a > top as f64 {
            return Vec::new();
        }
    }
    let mut out = Vec::new();
    let mut idx = lo;
    loop {
        out.push(if cells {
            grid.cell_index(&idx[..n])
        } else {
            grid.node_index(&idx[..n])
        });
        let mut k = 0;
        while k < n {
            if idx[k] < hi[k] {
                idx[k] += 1;
                break;
            }
            idx[k] = lo[k];
            k += 1;
        }
        if k == n {
            return out;
        }
    }
}

fn relative(p: [f64; 3], centre: &[f64], n: usize) -> ([f64; 3], f64) {
    let mut d = [0.0; 3];
    for k in 0..n {
        d[k] = p[k] - centre[k];
    }
    (d, (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt())
}

impl Local {
    fn from_sites(grid: &Grid, centre: &[f64], radius: f64, cells: bool, include: impl Fn(usize) -> bool) -> (Self, Vec<u32>) {
        let mut local = Local {
            global: Vec::new(),
            pos: Vec::new(),
            rho: Vec::new(),
            edges: Vec::new(),
        };
        let mut map = Vec::new();
        for site in bounding_indices(grid, centre, radius, cells) {
            let p = if cells { grid.cell_center(site) } else { grid.node_position(site) };
            let (d, rho) = relative(p, centre, grid.n);
            if rho < radius && include(site) {
                map.push((site, local.global.len() as u32));
                local.global.push(site);
                local.pos.push(d);
                local.rho.push(rho);
            }
        }
        let total = if cells { grid.num_cells() } else { grid.num_nodes() };
        let mut index = vec![u32::MAX; 0];
        index.resize(total, u32::MAX);
        for (site, i) in map {
            index[site] = i;
        }
        (local, index)
    }

    fn cells(grid: &Grid, pairs: &[CellPair], offsets: &[usize], centre: &[f64], radius: f64, include: impl Fn(usize) -> bool) -> Self {
        let (mut local, index) = Self::from_sites(grid, centre, radius, true, include);
        for i in 0..local.global.len() {
            let c = local.global[i];
            for p in &pairs[offsets[c]..offsets[c + 1]] {
                let j = index[p.b as usize];
                if j != u32::MAX {
                    local.edges.push((i as u32, j, p.sigma, usize::MAX));
                }
            }
        }
        local
    }

    fn nodes(grid: &Grid, centre: &[f64], radius: f64, include: impl Fn(usize) -> bool) -> Self {
        let (mut local, index) = Self::from_sites(grid, centre, radius, false, include);
        for i in 0..local.global.len() {
            let a = local.global[i];
            for k in 0..grid.n {
                if !grid.edge_exists(a, k) {
                    continue;
                }
                let j = index[a + grid.node_stride(k)];
                if j != u32::MAX {
                    local.edges.push((i as u32, j, grid.edge_facet_area(a, k), a * grid.n + k));
                }
            }
        }
        local
    }

    fn midpoint_rho(&self, a: usize, b: usize) -> f64 {
        let (p, q) = (self.pos[a], self.pos[b]);
        let m = [(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0, (p[2] + q[2]) / 2.0];
        (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt()
    }

    fn cut_mass(&self, labels: &[u8], keep: impl Fn(usize, usize) -> bool) -> f64 {
        self.edges
            .iter()
            .filter(|&&(a, b, _, _)| labels[a as usize] != labels[b as usize] && keep(a as usize, b as usize))
            .map(|e| e.2)
            .sum()
    }
}

/// Per-call record of a partition fill.
#[derive(Clone, Copy, Debug, PartialEq)]
struct FillTrace {
    branch: Branch,
    /// `J / s^{n−1}` of the first step.
    first_jump_ratio: f64,
    /// Whether the first step found a jump-free sphere.
    first_clean: bool,
}

/// Label of the nearest known site to the reflection of each problem site
/// across the sphere of radius `r_in`.
fn reflect_labels(local: &Local, labels: &[u8], known: &[bool], problem: &[usize], step: &FillStep) -> Vec<u8> {
    let ring: Vec<usize> = (0..local.global.len())
        .filter(|&i| known[i] && local.rho[i] >= step.r_in && local.rho[i] < step.r_in + step.s)
        .collect();
    problem
        .iter()
        .map(|&i| {
            let rho = local.rho[i];
            if ring.is_empty() || rho == 0.0 || rho < step.r_in - step.s {
                return 0;
            }
            let f = (2.0 * step.r_in - rho) / rho;
            let y = [local.pos[i][0] * f, local.pos[i][1] * f, local.pos[i][2] * f];
            let mut best = (f64::INFINITY, 0u8);
            for &j in &ring {
                let p = local.pos[j];
                let d = (p[0] - y[0]).powi(2) + (p[1] - y[1]).powi(2) + (p[2] - y[2]).powi(2);
                if d < best.0 {
                    best = (d, labels[j]);
                }
            }
            best.1
        })
        .collect()
}

fn min_cut_labels(local: &Local, labels: &[u8], known: &[bool], problem: &[usize]) -> Vec<u8> {
    let mut slot = vec![u32::MAX; local.global.len()];
    for (k, &i) in problem.iter().enumerate() {
        slot[i] = k as u32;
    }
    let count = problem.len();
    let (src, sink) = (count, count + 1);
    let mut graph = FlowGraph::new(count + 2);
    let mut to_source = vec![0.0; count];
    let mut to_sink = vec![0.0; count];
    for &(a, b, w, _) in &local.edges {
        let (a, b) = (a as usize, b as usize);
        match (slot[a] != u32::MAX, slot[b] != u32::MAX) {
            (true, true) => graph.add_edge(slot[a] as usize, slot[b] as usize, w, w),
            (true, false) if known[b] => {
                if labels[b] == 1 {
                    to_source[slot[a] as usize] += w
                } else {
                    to_sink[slot[a] as usize] += w
                }
            }
            (false, true) if known[a] => {
                if labels[a] == 1 {
                    to_source[slot[b] as usize] += w
                } else {
                    to_sink[slot[b] as usize] += w
                }
            }
            _ => {}
        }
    }
    for k in 0..count {
        if to_source[k] > 0.0 {
            graph.add_edge(src, k, to_source[k], 0.0);
        }
        if to_sink[k] > 0.0 {
            graph.add_edge(k, sink, to_sink[k], 0.0);
        }
    }
    let flow = graph.max_flow(src, sink);
    (0..count).map(|k| u8::from(flow.source_side[k])).collect()
}

/// Radius in `(r_in − s/3, r_in + s/3)` whose sphere no jump crosses and
/// inside which every known label is the same; returns that label.
fn clean_sphere(local: &Local, labels: &[u8], known: &[bool], step: &FillStep, h: f64) -> Option<u8> {
    let lo = step.r_in - step.s / 3.0;
    let hi = step.r_in + step.s / 3.0;
    let mut k = 1;
    loop {
        let radius = lo + k as f64 * h / 4.0;
        if radius >= hi {
            return None;
        }
        k += 1;
        let mut label: Option<u8> = None;
        let mut clean = true;
        for &(a, b, _, _) in &local.edges {
            let (a, b) = (a as usize, b as usize);
            let (inner, outer) = if local.rho[a] <= local.rho[b] { (a, b) } else { (b, a) };
            if !(local.rho[inner] < radius && radius <= local.rho[outer]) {
                continue;
            }
            if labels[inner] != labels[outer] || label.is_some_and(|c| c != labels[inner]) {
                clean = false;
                break;
            }
            label = Some(labels[inner]);
        }
        let Some(c) = label else { continue };
        if clean && (0..local.global.len()).all(|i| !known[i] || local.rho[i] >= radius || labels[i] == c) {
            return Some(c);
        }
    }
}

/// Fill the unknown sites of `local` step by step.
fn partition_fill(local: &Local, labels: &mut [u8], known: &mut [bool], steps: &[FillStep], gamma: f64, n: usize, h: f64) -> FillTrace {
    let mut trace = FillTrace {
        branch: Branch::Trivial,
        first_jump_ratio: 0.0,
        first_clean: false,
    };
    for (index, step) in steps.iter().enumerate() {
        let problem: Vec<usize> = (0..local.global.len()).filter(|&i| !known[i]).collect();
        if problem.is_empty() {
            break;
        }
        let reflected = reflect_labels(local, labels, known, &problem, step);
        let cut = min_cut_labels(local, labels, known, &problem);
        let energy_with = |fill: &[u8], labels: &mut [u8]| {
            for (k, &i) in problem.iter().enumerate() {
                labels[i] = fill[k];
            }
            local.cut_mass(labels, |_, _| true)
        };
        let e_reflected = energy_with(&reflected, labels);
        let e_cut = energy_with(&cut, labels);
        if e_reflected < e_cut {
            energy_with(&reflected, labels);
        }

        let shell = |a: usize, b: usize| {
            let r = local.midpoint_rho(a, b);
            r >= step.r_in - step.s && r < step.r_in + step.s
        };
        let jump = local.cut_mass(labels, shell);
        let ratio = jump / step.s.powi(n as i32 - 1);
        let small = ratio <= gamma;
        let clean = if small { clean_sphere(local, labels, known, step, h) } else { None };
        if index == 0 {
            trace.first_jump_ratio = ratio;
            trace.first_clean = clean.is_some() || (!small && clean_sphere(local, labels, known, step, h).is_some());
        }
        if !small {
            for &i in &problem {
                labels[i] = 0;
                known[i] = true;
            }
            trace.branch = Branch::Fallback;
            return trace;
        }
        if let Some(c) = clean {
            for &i in &problem {
                labels[i] = c;
                known[i] = true;
            }
            trace.branch = Branch::CleanSphere;
            return trace;
        }
        trace.branch = Branch::MinCut;
        for &i in &problem {
            if local.rho[i] >= step.commit_from {
                known[i] = true;
            }
        }
    }
    trace
}

fn pair_offsets(grid: &Grid, pairs: &[CellPair]) -> Vec<usize> {
    let mut offsets = vec![0usize; grid.num_cells() + 1];
    for p in pairs {
        offsets[p.a as usize + 1] += 1;
    }
    for c in 0..grid.num_cells() {
        offsets[c + 1] += offsets[c];
    }
    offsets
}

fn ball_of(g: &PerforatedGeometry, index: usize) -> Result<&BallInclusion> {
    g.balls
        .get(index)
        .ok_or_else(|| Error::Parameter(format!("ball {index} out of range ({} balls)", g.balls.len())))
}

fn check_masks(g: &PerforatedGeometry, masks: &Masks) -> Result<()> {
    if !(masks.grid.h < g.delta / 2.0) {
        return Err(Error::Resolution {
            h: masks.grid.h,
            delta: g.delta,
        });
    }
    if masks.grid.n != g.n || masks.annulus_cells.len() != g.balls.len() {
        return Err(Error::GridMismatch("masks were not rasterized from this geometry".into()));
    }
    Ok(())
}

fn schedule_for(g: &PerforatedGeometry, ball: &BallInclusion) -> Result<DyadicSchedule> {
    dyadic_schedule(ball.radius, g.delta, g.r_star)
}

fn local_radius(ball: &BallInclusion, delta: f64, steps: &[FillStep], h: f64) -> f64 {
    steps.iter().map(|s| s.r_in + s.s).fold(ball.radius + delta, f64::max) + 2.0 * h
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionFill {
    pub labels: LabelField,
    pub branch: Branch,
    /// Jump mass on pairs touching the filled cells.
    pub added_jump: f64,
    /// Jump mass on pairs of known cells touching the annulus.
    pub annulus_jump: f64,
}

/// Fill the hole cells of ball `ball` given the labels on every other cell.
pub fn extend_partition_ball(u: &LabelField, g: &PerforatedGeometry, ball: usize, masks: &Masks, gamma: f64) -> Result<PartitionFill> {
    check_masks(g, masks)?;
    let grid = &masks.grid;
    if u.labels.len() != grid.num_cells() {
        return Err(Error::GridMismatch("labels do not match the grid".into()));
    }
    let b = ball_of(g, ball)?;
    let schedule = schedule_for(g, b)?;
    let steps = schedule.steps(b.radius);
    let pairs = cell_pairs(grid);
    let offsets = pair_offsets(grid, &pairs);
    let is_unknown = |c: usize| masks.hole_cells[c] && masks.hole_ball[c] == ball as u32;
    let local = Local::cells(grid, &pairs, &offsets, &b.center, local_radius(b, g.delta, &steps, grid.h), |c| {
        !masks.hole_cells[c] || is_unknown(c)
    });
    let mut labels: Vec<u8> = local.global.iter().map(|&c| u.labels[c]).collect();
    let mut known: Vec<bool> = local.global.iter().map(|&c| !is_unknown(c)).collect();
    let initially_known = known.clone();
    let trace = partition_fill(&local, &mut labels, &mut known, &steps, gamma, grid.n, grid.h);

    let mut out = u.clone();
    for (i, &c) in local.global.iter().enumerate() {
        out.labels[c] = labels[i];
    }
    let annulus = |i: usize| local.rho[i] > b.radius && local.rho[i] < b.radius + g.delta;
    let added_jump = local.cut_mass(&labels, |a, c| !initially_known[a] || !initially_known[c]);
    let annulus_jump = local.cut_mass(&labels, |a, c| {
        initially_known[a] && initially_known[c] && (annulus(a) || annulus(c))
    });
    Ok(PartitionFill {
        labels: out,
        branch: if local.global.iter().any(|&c| is_unknown(c)) {
            trace.branch
        } else {
            Branch::Trivial
        },
        added_jump,
        annulus_jump,
    })
}

/// Ball owning each node whose cells are all hole cells of that ball.
pub fn hole_node_owner(masks: &Masks) -> Vec<u32> {
    let grid = &masks.grid;
    (0..grid.num_nodes())
        .map(|a| {
            let cells = grid.node_cells(a);
            let first = cells.first().map_or(NO_BALL, |&c| masks.hole_ball[c]);
            if first != NO_BALL && cells.iter().all(|&c| masks.hole_cells[c] && masks.hole_ball[c] == first) {
                first
            } else {
                NO_BALL
            }
        })
        .collect()
}

/// p-harmonic fill of `free`, re-solved on the remaining interior after
/// each schedule step. Returns the solver iterations and the free nodes
/// that no fixed node reaches.
fn dyadic_value_fill(
    grid: &Grid,
    u: &mut [f64],
    free: &[usize],
    centre: &[f64],
    steps: &[FillStep],
    broken: Option<&[bool]>,
    p: f64,
    tol: f64,
) -> (usize, Vec<usize>) {
    let vol = grid.cell_volume();
    let rho = |a: usize| relative(grid.node_position(a), centre, grid.n).1;
    let mut remaining = free.to_vec();
    let mut floating = Vec::new();
    let mut iterations = 0;
    let mut mask = vec![false; grid.num_nodes()];
    for (index, step) in steps.iter().enumerate() {
        if remaining.is_empty() {
            break;
        }
        for &a in &remaining {
            mask[a] = true;
        }
        let mut cells: Vec<usize> = remaining.iter().flat_map(|&a| grid.node_cells(a)).collect();
        cells.sort_unstable();
        cells.dedup();
        let problem = Problem {
            grid,
            cells: cells.into_iter().map(|c| (c, vol)).collect(),
            broken,
            free: &mask,
            p,
            tol,
            max_iter: None,
        };
        let (stats, lost) = problem.solve_reporting(u);
        iterations += stats.iterations;
        for &a in &remaining {
            mask[a] = false;
        }
        if index == 0 && !lost.is_empty() {
            remaining.retain(|a| lost.binary_search(a).is_err());
            floating = lost;
        }
        remaining.retain(|&a| rho(a) < step.commit_from);
    }
    (iterations, floating)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SobolevFill {
    pub field: ScalarField,
    /// Bulk energy of the cells touching the filled nodes.
    pub fill_energy: f64,
    /// Bulk energy of the annulus cells.
    pub annulus_energy: f64,
    /// `fill_energy / annulus_energy` when the latter is positive.
    pub constant: Option<f64>,
    pub iterations: usize,
}

fn bulk_energy(grid: &Grid, u: &[f64], cells: &[usize], p: f64, broken: Option<&[bool]>) -> f64 {
    cells
        .iter()
        .map(|&c| norm_pow(&cell_gradient(grid, u, c, broken), p) * grid.cell_volume())
        .sum()
}

/// Discrete p-harmonic fill of the hole nodes of ball `ball` from the
/// values everywhere else; the result is clamped to the range of the
/// values it is attached to.
pub fn extend_sobolev_ball(u: &ScalarField, g: &PerforatedGeometry, ball: usize, masks: &Masks, p: f64) -> Result<SobolevFill> {
    check_masks(g, masks)?;
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::Exponent(p));
    }
    let grid = &masks.grid;
    if u.values.len() != grid.num_nodes() {
        return Err(Error::GridMismatch("field does not match the grid".into()));
    }
    let b = ball_of(g, ball)?;
    if masks.annulus_cells[ball].is_empty() {
        return Err(Error::Resolution { h: grid.h, delta: g.delta });
    }
    let owner = hole_node_owner(masks);
    let free: Vec<usize> = (0..grid.num_nodes()).filter(|&a| owner[a] == ball as u32).collect();
    let mut out = u.clone();
    let steps = schedule_for(g, b)?.steps(b.radius);
    let (lo, hi, mean) = trace_range(grid, &out.values, &free, |a| owner[a] == NO_BALL || owner[a] != ball as u32);
    for &a in &free {
        out.values[a] = mean;
    }
    let (iterations, _) = dyadic_value_fill(grid, &mut out.values, &free, &b.center, &steps, None, p, 1e-12);
    for &a in &free {
        out.values[a] = out.values[a].clamp(lo, hi);
    }
    let mut active: Vec<usize> = free.iter().flat_map(|&a| grid.node_cells(a)).collect();
    active.sort_unstable();
    active.dedup();
    let fill_energy = bulk_energy(grid, &out.values, &active, p, None);
    let annulus_energy = bulk_energy(grid, &out.values, &masks.annulus_cells[ball], p, None);
    Ok(SobolevFill {
        field: out,
        fill_energy,
        annulus_energy,
        constant: (annulus_energy > 0.0).then(|| fill_energy / annulus_energy),
        iterations,
    })
}

/// Range and mean of the known neighbours of `free`.
fn trace_range(grid: &Grid, values: &[f64], free: &[usize], known: impl Fn(usize) -> bool) -> (f64, f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let (mut sum, mut count) = (0.0, 0usize);
    for &a in free {
        for c in grid.node_cells(a) {
            let base = grid.cell_base_node(c);
            for mask in 0..(1usize << grid.n) {
                let mut node = base;
                for k in 0..grid.n {
                    if mask & (1 << k) != 0 {
                        node += grid.node_stride(k);
                    }
                }
                if known(node) {
                    lo = lo.min(values[node]);
                    hi = hi.max(values[node]);
                    sum += values[node];
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return (0.0, 0.0, 0.0);
    }
    (lo, hi, sum / count as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtensionOptions {
    pub p: f64,
    /// Small-jump threshold; defaults to [`default_gamma`].
    pub gamma: Option<f64>,
    pub tol: f64,
}

impl Default for ExtensionOptions {
    fn default() -> Self {
        Self {
            p: 2.0,
            gamma: None,
            tol: 1e-12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtensionReport {
    /// `MS^p` of the input outside the holes.
    pub energy_before: f64,
    /// `MS^p` of the output on the whole window.
    pub energy_after: f64,
    /// `MS^p` of the output away from the frame.
    pub energy_after_interior: f64,
    /// `(E_after / |A|) / (E_before / |A ∖ K|)`: energy densities compared,
    /// so that an affine field has ratio 1.
    pub ratio: f64,
    /// `E_after / (E_before + boundary_term)`.
    pub raw_ratio: f64,
    /// `H^{n−1}(∂A) = 2n·t^{n−1}` when some ball touches the boundary.
    pub boundary_term: f64,
    /// Largest relative change of `ratio` under the homotheties tried.
    pub homothety_check: Option<f64>,
    pub branches: Vec<Branch>,
}

impl ExtensionReport {
    /// Most severe branch taken by any ball.
    pub fn branch(&self) -> Branch {
        self.branches.iter().copied().max().unwrap_or(Branch::Trivial)
    }

    /// `(E_after − boundary_term) / E_before`, undefined when `E_before = 0`.
    pub fn constant(&self) -> Option<f64> {
        (self.energy_before > 0.0).then(|| (self.energy_after - self.boundary_term) / self.energy_before)
    }
}

struct BallLabels {
    flags: Vec<(usize, bool)>,
    same_label_mean: Vec<(u8, f64)>,
    node_labels: Vec<(usize, u8)>,
    branch: Branch,
}

/// Binary labels of the known nodes: the largest component of the
/// non-jumping edges is 0, all others 1.
fn component_labels(local: &Local, known: &[bool], jump: impl Fn(usize) -> bool) -> Vec<u8> {
    let count = local.global.len();
    let mut parent: Vec<usize> = (0..count).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for &(a, b, _, slot) in &local.edges {
        let (a, b) = (a as usize, b as usize);
        if known[a] && known[b] && !jump(slot) {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    let mut size = vec![0usize; count];
    for i in (0..count).filter(|&i| known[i]) {
        let r = find(&mut parent, i);
        size[r] += 1;
    }
    let largest = (0..count).max_by(|&a, &b| size[a].cmp(&size[b]).then(b.cmp(&a))).unwrap_or(0);
    (0..count)
        .map(|i| u8::from(!(known[i] && find(&mut parent, i) == largest)))
        .collect()
}

/// Fill every hole of the window. Values on nodes of non-hole cells and
/// jump flags on edges of non-hole cells are copied from `u` unchanged.
pub fn extend_sbv_domain(
    u: &SbvField,
    g: &PerforatedGeometry,
    masks: &Masks,
    opts: &ExtensionOptions,
) -> Result<(SbvField, ExtensionReport)> {
    check_masks(g, masks)?;
    let p = opts.p;
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::Exponent(p));
    }
    let grid = &masks.grid;
    if u.values.len() != grid.num_nodes() || u.jump_edges.len() != grid.num_edge_slots() {
        return Err(Error::GridMismatch("field does not match the grid".into()));
    }
    let gamma = opts.gamma.unwrap_or_else(|| default_gamma(grid.n));
    let owner = hole_node_owner(masks);
    let known_node = |a: usize| owner[a] == NO_BALL;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for a in (0..grid.num_nodes()).filter(|&a| known_node(a)) {
        if !u.values[a].is_finite() {
            return Err(Error::Parameter(format!("input value at node {a} is not finite")));
        }
        lo = lo.min(u.values[a]);
        hi = hi.max(u.values[a]);
    }
    if lo > hi {
        return Err(Error::Parameter("field has no values outside the holes".into()));
    }
    let mut free_of: Vec<Vec<usize>> = vec![Vec::new(); g.balls.len()];
    for a in 0..grid.num_nodes() {
        if owner[a] != NO_BALL {
            free_of[owner[a] as usize].push(a);
        }
    }
    let mut out = u.clone();
    for slot in 0..grid.num_edge_slots() {
        let (a, k) = (slot / grid.n, slot % grid.n);
        if grid.edge_exists(a, k) && masks.hole_edge(a, k) {
            out.jump_edges[slot] = false;
        }
    }
    for a in (0..grid.num_nodes()).filter(|&a| !known_node(a)) {
        out.values[a] = 0.0f64.clamp(lo, hi);
    }

    let schedules: Vec<DyadicSchedule> = g.balls.iter().map(|b| schedule_for(g, b)).collect::<Result<_>>()?;
    let interior: Vec<usize> = (0..g.balls.len())
        .filter(|&i| !masks.boundary_ball_flags[i] && !free_of[i].is_empty())
        .collect();

    // labels and jump edges of interior balls
    let labelled: Vec<(usize, BallLabels)> = interior
        .par_iter()
        .map(|&i| {
            let b = &g.balls[i];
            let steps = schedules[i].steps(b.radius);
            let local = Local::nodes(grid, &b.center, local_radius(b, g.delta, &steps, grid.h), |a| {
                known_node(a) || owner[a] == i as u32
            });
            let mut known: Vec<bool> = local.global.iter().map(|&a| known_node(a)).collect();
            let jump = |slot: usize| {
                let (a, k) = (slot / grid.n, slot % grid.n);
                u.jump_edges[slot] || masks.hole_edge(a, k)
            };
            let mut labels = component_labels(&local, &known, jump);
            let trace = partition_fill(&local, &mut labels, &mut known, &steps, gamma, grid.n, grid.h);
            let flags = local
                .edges
                .iter()
                .filter(|e| {
                    let (a, k) = (e.3 / grid.n, e.3 % grid.n);
                    masks.hole_edge(a, k)
                })
                .map(|&(a, b, _, slot)| (slot, labels[a as usize] != labels[b as usize]))
                .collect();
            let mut means = Vec::new();
            for l in [0u8, 1] {
                let vals: Vec<f64> = (0..local.global.len())
                    .filter(|&j| known_node(local.global[j]) && labels[j] == l && local.rho[j] < b.radius + g.delta)
                    .map(|j| u.values[local.global[j]])
                    .collect();
                if !vals.is_empty() {
                    means.push((l, vals.iter().sum::<f64>() / vals.len() as f64));
                }
            }
            let node_labels = (0..local.global.len())
                .filter(|&j| !known_node(local.global[j]))
                .map(|j| (local.global[j], labels[j]))
                .collect();
            (
                i,
                BallLabels {
                    flags,
                    same_label_mean: means,
                    node_labels,
                    branch: trace.branch,
                },
            )
        })
        .collect();
    for (_, bl) in &labelled {
        for &(slot, f) in &bl.flags {
            out.jump_edges[slot] = f;
        }
    }

    // values of interior balls, filled with the new jump edges broken
    let broken = out.jump_edges.clone();
    let base_values = out.values.clone();
    let patches: Vec<Vec<(usize, f64)>> = labelled
        .par_iter()
        .map(|(i, bl)| {
            let b = &g.balls[*i];
            let free = &free_of[*i];
            let steps = schedules[*i].steps(b.radius);
            let mut values = base_values.clone();
            let (_, _, mean) = trace_range(grid, &values, free, known_node);
            for &a in free {
                values[a] = mean;
            }
            let (_, floating) = dyadic_value_fill(grid, &mut values, free, &b.center, &steps, Some(&broken), p, opts.tol);
            let label_of: std::collections::HashMap<usize, u8> = bl.node_labels.iter().copied().collect();
            for a in floating {
                let l = label_of.get(&a).copied().unwrap_or(0);
                let m = bl
                    .same_label_mean
                    .iter()
                    .find(|(k, _)| *k == l)
                    .or(bl.same_label_mean.first())
                    .map_or(mean, |x| x.1);
                values[a] = m;
            }
            free.iter().map(|&a| (a, values[a].clamp(lo, hi))).collect()
        })
        .collect();
    for patch in patches {
        for (a, v) in patch {
            out.values[a] = v;
        }
    }

    // boundary balls: constant fill, jumps wherever the values disagree
    let mut branches: Vec<Branch> = labelled.iter().map(|(_, bl)| bl.branch).collect();
    let touches_boundary = (0..g.balls.len()).any(|i| masks.boundary_ball_flags[i] && !free_of[i].is_empty());
    for i in (0..g.balls.len()).filter(|&i| masks.boundary_ball_flags[i] && !free_of[i].is_empty()) {
        branches.push(Branch::Boundary);
        for &a in &free_of[i] {
            for k in 0..grid.n {
                let s = grid.node_stride(k);
                let idx = grid.node_multi(a);
                if idx[k] < grid.m && masks.hole_edge(a, k) {
                    out.jump_edges[a * grid.n + k] = out.values[a] != out.values[a + s];
                }
                if idx[k] > 0 && masks.hole_edge(a - s, k) {
                    out.jump_edges[(a - s) * grid.n + k] = out.values[a] != out.values[a - s];
                }
            }
        }
    }

    let energy_before = msp_energy(u, p, masks, Region::NonHole)?;
    let energy_after = msp_energy(&out, p, masks, Region::All)?;
    let energy_after_interior = msp_energy(&out, p, masks, Region::Interior)?;
    let volume = grid.t.powi(grid.n as i32);
    let outside = (grid.num_cells() - masks.hole_cell_count()) as f64 * grid.cell_volume();
    let boundary_term = if touches_boundary {
        2.0 * grid.n as f64 * grid.t.powi(grid.n as i32 - 1)
    } else {
        0.0
    };
    let ratio = if energy_before > 0.0 {
        (energy_after / volume) / (energy_before / outside)
    } else if energy_after == 0.0 {
        1.0
    } else {
        f64::INFINITY
    };
    let denom = energy_before + boundary_term;
    let report = ExtensionReport {
        energy_before,
        energy_after,
        energy_after_interior,
        ratio,
        raw_ratio: if denom > 0.0 { energy_after / denom } else { 1.0 },
        boundary_term,
        homothety_check: None,
        branches,
    };
    Ok((out, report))
}

/// Synthetic input fields for extension experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldSpec {
    Constant {
        value: f64,
    },
    Affine {
        xi: Vec<f64>,
    },
    /// Random affine part plus a sine wave plus a jump of random height
    /// across a plane through a random ball centre.
    Mixed {
        amplitude: f64,
        jump: f64,
    },
}

/// Sample `spec` on the nodes; hole nodes are set to NaN and carry no
/// information.
pub fn synthetic_field(masks: &Masks, g: &PerforatedGeometry, spec: &FieldSpec, seed: u64) -> SbvField {
    let grid = &masks.grid;
    let n = grid.n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut field = SbvField::from_scalar(grid, ScalarField::constant(grid, 0.0));
    let pos = |a: usize| grid.node_position(a);
    match spec {
        FieldSpec::Constant { value } => field.values.iter_mut().for_each(|v| *v = *value),
        FieldSpec::Affine { xi } => field.values = ScalarField::affine(grid, xi).values,
        FieldSpec::Mixed { amplitude, jump } => {
            let xi: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let k: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..3.0) * std::f64::consts::TAU / grid.t).collect();
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let height = jump * rng.gen_range(0.5..1.5);
            let centre: Vec<f64> = if g.balls.is_empty() {
                (0..n).map(|k| grid.origin[k] + 0.5 * grid.t).collect()
            } else {
                g.balls[rng.gen_range(0..g.balls.len())].center.clone()
            };
            let mut nu: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = nu.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            nu.iter_mut().for_each(|v| *v /= norm);
            let side = |a: usize| {
                let x = pos(a);
                (0..n).map(|j| (x[j] - centre[j]) * nu[j]).sum::<f64>() > 0.0
            };
            for a in 0..grid.num_nodes() {
                let x = pos(a);
                let lin: f64 = (0..n).map(|j| xi[j] * x[j]).sum();
                let arg: f64 = (0..n).map(|j| k[j] * x[j]).sum::<f64>() + phase;
                field.values[a] = lin + amplitude * arg.sin() + if side(a) { height } else { 0.0 };
            }
            for a in 0..grid.num_nodes() {
                for j in 0..n {
                    if grid.edge_exists(a, j) && side(a) != side(a + grid.node_stride(j)) {
                        field.jump_edges[a * n + j] = true;
                    }
                }
            }
        }
    }
    let owner = hole_node_owner(masks);
    for a in 0..grid.num_nodes() {
        if owner[a] != NO_BALL {
            field.values[a] = f64::NAN;
        }
    }
    for slot in 0..grid.num_edge_slots() {
        let (a, j) = (slot / n, slot % n);
        if grid.edge_exists(a, j) && masks.hole_edge(a, j) {
            field.jump_edges[slot] = false;
        }
    }
    field
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtensionInstance {
    pub id: usize,
    pub geometry: PerforatedGeometry,
    pub h: f64,
    pub field: FieldSpec,
    pub field_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchRow {
    pub instance_id: usize,
    pub ratio: f64,
    pub branch: Branch,
    pub lambda_check: f64,
}

/// Extend one instance, then its homothetic copies: geometry and grid
/// scaled by λ, values by `λ^{(p−1)/p}` so that `MS^p` scales like
/// `λ^{n−1}`. `homothety_check` records the largest relative change of the
/// ratio.
pub fn run_extension_instance(
    inst: &ExtensionInstance,
    lambdas: &[f64],
    opts: &ExtensionOptions,
) -> Result<(SbvField, SbvField, ExtensionReport)> {
    let masks = rasterize(&inst.geometry, inst.h, 1)?;
    let input = synthetic_field(&masks, &inst.geometry, &inst.field, inst.field_seed);
    let (output, mut report) = extend_sbv_domain(&input, &inst.geometry, &masks, opts)?;
    let mut worst: f64 = 0.0;
    for &lambda in lambdas {
        let g = inst.geometry.scaled(lambda);
        let scaled_masks = rasterize(&g, inst.h * lambda, 1)?;
        let factor = lambda.powf((opts.p - 1.0) / opts.p);
        let scaled = SbvField {
            values: input.values.iter().map(|v| v * factor).collect(),
            jump_edges: input.jump_edges.clone(),
        };
        let (_, r) = extend_sbv_domain(&scaled, &g, &scaled_masks, opts)?;
        let change = if report.ratio == r.ratio {
            0.0
        } else {
            (r.ratio - report.ratio).abs() / report.ratio.abs()
        };
        worst = worst.max(change);
    }
    if !lambdas.is_empty() {
        report.homothety_check = Some(worst);
    }
    Ok((input, output, report))
}

/// Run a batch in parallel; rows come back in input order.
pub fn run_extension_batch(
    instances: &[ExtensionInstance],
    lambdas: &[f64],
    opts: &ExtensionOptions,
) -> Result<Vec<(ExtensionReport, BatchRow)>> {
    instances
        .par_iter()
        .map(|inst| {
            let (_, _, report) = run_extension_instance(inst, lambdas, opts)?;
            let row = BatchRow {
                instance_id: inst.id,
                ratio: report.ratio,
                branch: report.branch(),
                lambda_check: report.homothety_check.unwrap_or(0.0),
            };
            Ok((report, row))
        })
        .collect()
}

pub fn write_batch_csv(rows: &[BatchRow], mut w: impl Write) -> Result<()> {
    writeln!(w, "instance_id,ratio,branch,lambda_check")?;
    for r in rows {
        writeln!(w, "{},{:e},{},{:e}", r.instance_id, r.ratio, r.branch.as_str(), r.lambda_check)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantSummary {
    pub max: f64,
    pub mean: f64,
    pub median: f64,
    pub used: usize,
    pub skipped: usize,
}

/// Largest `(E_after − boundary_term)/E_before` over a batch of at least
/// ten reports, skipping those with `E_before = 0`.
pub fn empirical_extension_constant(reports: &[ExtensionReport]) -> Result<ConstantSummary> {
    if reports.len() < 10 {
        return Err(Error::Parameter(format!("need at least 10 instances, got {}", reports.len())));
    }
    let mut values: Vec<f64> = reports.iter().filter_map(ExtensionReport::constant).collect();
    let skipped = reports.len() - values.len();
    if values.is_empty() {
        return Err(Error::DegenerateBatch(format!(
            "all {skipped} instances have zero energy before extension"
        )));
    }
    values.sort_by(f64::total_cmp);
    let used = values.len();
    let median = if used % 2 == 1 {
        values[used / 2]
    } else {
        0.5 * (values[used / 2 - 1] + values[used / 2])
    };
    Ok(ConstantSummary {
        max: values[used - 1],
        mean: values.iter().sum::<f64>() / used as f64,
        median,
        used,
        skipped,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaCalibration {
    pub gamma: f64,
    /// Fraction of accepted cuts admitting a jump-free sphere.
    pub success_rate: f64,
    pub accepted: usize,
    pub samples: usize,
}

/// Calibrate the small-jump threshold on planar cuts of a thin ball at
/// random offsets and directions: returns the largest threshold on
/// `J/s^{n−1}` such that at least 95% of the cuts below it admit a
/// jump-free sphere.
pub fn calibrate_gamma(n: usize, samples: usize, seed: u64) -> Result<GammaCalibration> {
    let (r, delta, h) = if n == 2 { (0.2, 0.25, 1.0 / 64.0) } else { (0.2, 0.25, 1.0 / 24.0) };
    let centre = vec![0.5; n];
    let g = PerforatedGeometry {
        n,
        t: 1.0,
        origin: vec![0.0; n],
        delta,
        r_star: 0.45,
        balls: vec![BallInclusion::new(centre.clone(), r)],
        seed_record: crate::geometry::RealizationSeed::new(seed, crate::geometry::Generator::Empty),
    };
    let masks = rasterize(&g, h, 1)?;
    let grid = &masks.grid;
    let pairs = cell_pairs(grid);
    let offsets = pair_offsets(grid, &pairs);
    let steps = schedule_for(&g, &g.balls[0])?.steps(r);
    let local = Local::cells(grid, &pairs, &offsets, &centre, local_radius(&g.balls[0], delta, &steps, h), |_| {
        true
    });
    let unknown: Vec<bool> = local.global.iter().map(|&c| masks.hole_cells[c]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut results: Vec<(f64, bool)> = (0..samples)
        .map(|_| {
            let mut nu: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = nu.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            nu.iter_mut().for_each(|v| *v /= norm);
            let offset = rng.gen_range(0.0..2.0 * r);
            let x: Vec<f64> = (0..n).map(|k| centre[k] + offset * nu[k]).collect();
            let datum = LabelField::half_space(grid, &x, &nu);
            let mut labels: Vec<u8> = local.global.iter().map(|&c| datum.labels[c]).collect();
            let mut known: Vec<bool> = unknown.iter().map(|u| !u).collect();
            let trace = partition_fill(&local, &mut labels, &mut known, &steps, f64::INFINITY, n, h);
            (trace.first_jump_ratio, trace.first_clean)
        })
        .collect();
    results.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best = (0.0, 1.0, 0usize);
    let mut ok = 0usize;
    for (i, &(ratio, clean)) in results.iter().enumerate() {
        ok += usize::from(clean);
        let rate = ok as f64 / (i + 1) as f64;
        let next_differs = results.get(i + 1).is_none_or(|r| r.0 > ratio);
        if rate >= 0.95 && next_differs {
            best = (ratio, rate, i + 1);
        }
    }
    Ok(GammaCalibration {
        gamma: best.0,
        success_rate: best.1,
        accepted: best.2,
        samples,
    })
}
