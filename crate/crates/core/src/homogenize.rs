//! t- and k-ladders of cell problems over seeded realizations, and the
//! structural checks on the resulting effective densities.
//!
//! For every `(t, seed)` the geometry is generated once and the k-values
//! are solved in order of decreasing hole weight, each solve warm-started
//! from the previous minimizer and never returning more than that
//! minimizer's energy under the new weights. Since the energy is a sum of
//! terms each nondecreasing in the hole weight, evaluated in a fixed order,
//! the ladder is monotone in k exactly, in floating point.

use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretize::{cell_pairs, rasterize, Grid, LabelField, ScalarField, SurfaceIntegrand, VolumeIntegrand};
use crate::geometry::{plane_section_area, DomainParams, RealizationSeed, Window};
use crate::solvers::{flat_reference_energy, solve_surface_cell_from, solve_volume_cell_from, Minimizer, SolveOptions};
use crate::{Error, Result};

/// Perturbation level of the holes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KValue {
    /// Hole weight `1/k`.
    Finite(f64),
    /// Hole weight 0: the energy lives outside the holes only.
    Infinite,
    /// Hole weight `δ/t`, vanishing along the t-ladder.
    Soft,
}

impl KValue {
    pub fn hole_weight(self, delta: f64, t: f64) -> f64 {
        match self {
            KValue::Finite(k) => 1.0 / k,
            KValue::Infinite => 0.0,
            KValue::Soft => delta / t,
        }
    }

    pub fn default_ladder() -> Vec<KValue> {
        vec![
            KValue::Finite(1.0),
            KValue::Finite(2.0),
            KValue::Finite(4.0),
            KValue::Finite(8.0),
            KValue::Infinite,
        ]
    }
}

impl fmt::Display for KValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KValue::Finite(k) => write!(f, "{k}"),
            KValue::Infinite => write!(f, "inf"),
            KValue::Soft => write!(f, "soft"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Volume,
    Surface,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadderConfig {
    pub generator: RealizationSeed,
    pub domain: DomainParams,
    /// Window sides, increasing.
    pub t_values: Vec<f64>,
    pub k_values: Vec<KValue>,
    pub seeds: Vec<u64>,
    /// Cell size as a fraction of δ.
    pub h_over_delta: f64,
    pub frame_width: usize,
    pub tol: f64,
    /// Lower corner of every window.
    pub window_origin: Vec<f64>,
}

impl LadderConfig {
    /// t ∈ {8, 16, 32}δ, h = δ/4, the default k-ladder and seeds `0..16`.
    pub fn defaults(generator: RealizationSeed, domain: DomainParams) -> Self {
        let d = domain.delta;
        Self {
            generator,
            t_values: vec![8.0 * d, 16.0 * d, 32.0 * d],
            k_values: KValue::default_ladder(),
            seeds: (0..16).collect(),
            h_over_delta: 0.25,
            frame_width: 1,
            tol: 1e-8,
            window_origin: vec![0.0; domain.n],
            domain,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        if self.t_values.is_empty() || self.t_values.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Parameter("t ladder must be nonempty and strictly increasing".into()));
        }
        if self.k_values.is_empty() || self.seeds.is_empty() {
            return Err(Error::Parameter("k ladder and seeds must be nonempty".into()));
        }
        if self.k_values.iter().any(|k| matches!(k, KValue::Finite(v) if !(*v >= 1.0))) {
            return Err(Error::Parameter("finite k values must be ≥ 1".into()));
        }
        if !(self.h_over_delta > 0.0 && self.h_over_delta < 0.5) {
            return Err(Error::Resolution {
                h: self.h_over_delta * self.domain.delta,
                delta: self.domain.delta,
            });
        }
        if self.window_origin.len() != self.domain.n {
            return Err(Error::Parameter("window origin dimension mismatch".into()));
        }
        Ok(())
    }

    fn window(&self, t: f64) -> Window {
        Window::shifted(self.domain.n, t, self.window_origin.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadderEntry {
    pub t: f64,
    pub k: KValue,
    pub seed: u64,
    pub normalized_energy: f64,
    pub energy: f64,
    /// Normalized energy of the boundary datum itself (`ℓ_ξ` or the flat
    /// cut), an upper bound for the entry.
    pub competitor: f64,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    pub exact: bool,
    /// Whether the geometry has holes crossing the datum plane (surface).
    pub holes_on_datum: bool,
    pub holes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadderResult {
    pub kind: Kind,
    /// ξ or ν.
    pub param: Vec<f64>,
    pub t_values: Vec<f64>,
    pub k_values: Vec<KValue>,
    pub seeds: Vec<u64>,
    /// Ordered by t, then seed, then k as configured.
    pub entries: Vec<LadderEntry>,
    /// Seed means, indexed `[t][k]`.
    pub means: Vec<Vec<f64>>,
    pub std_errors: Vec<Vec<f64>>,
    /// `|mean(t_{i+1}) − mean(t_i)|`, indexed `[k][i]`.
    pub cauchy_gaps: Vec<Vec<f64>>,
    /// Surface ladders: discrete over exact area of the datum plane in the
    /// window, minus one, per t. The anisotropy of the discrete perimeter
    /// that the normalization removes.
    pub metrication: Vec<f64>,
    pub warnings: Vec<String>,
}

impl LadderResult {
    pub fn entry(&self, t_index: usize, seed_index: usize, k_index: usize) -> &LadderEntry {
        let nk = self.k_values.len();
        &self.entries[(t_index * self.seeds.len() + seed_index) * nk + k_index]
    }

    pub fn k_index(&self, k: KValue) -> Option<usize> {
        self.k_values.iter().position(|&v| v == k)
    }
}

/// Indices of `k_values` in order of decreasing hole weight.
fn solve_order(k_values: &[KValue], delta: f64, t: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..k_values.len()).collect();
    order.sort_by(|&a, &b| k_values[b].hole_weight(delta, t).total_cmp(&k_values[a].hole_weight(delta, t)));
    order
}

fn check_monotone(entries: &[LadderEntry], order: &[usize], t: f64, seed: u64) -> Result<()> {
    for w in order.windows(2) {
        let (a, b) = (&entries[w[0]], &entries[w[1]]);
        if !(b.energy <= a.energy) {
            return Err(Error::Monotonicity {
                t,
                seed,
                detail: format!("k = {} gives {} > {} at k = {}", b.k, b.energy, a.energy, a.k),
            });
        }
    }
    Ok(())
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn assemble(kind: Kind, param: Vec<f64>, cfg: &LadderConfig, blocks: Vec<Vec<LadderEntry>>) -> LadderResult {
    let nk = cfg.k_values.len();
    let ns = cfg.seeds.len();
    let mut means = Vec::new();
    let mut std_errors = Vec::new();
    for ti in 0..cfg.t_values.len() {
        let mut row_m = Vec::new();
        let mut row_s = Vec::new();
        for ki in 0..nk {
            let vals: Vec<f64> = (0..ns).map(|si| blocks[ti * ns + si][ki].normalized_energy).collect();
            let (m, s) = mean_and_se(&vals);
            row_m.push(m);
            row_s.push(s);
        }
        means.push(row_m);
        std_errors.push(row_s);
    }
    let cauchy_gaps: Vec<Vec<f64>> = (0..nk)
        .map(|ki| means.windows(2).map(|w| (w[1][ki] - w[0][ki]).abs()).collect())
        .collect();
    let mut warnings = Vec::new();
    for (ki, gaps) in cauchy_gaps.iter().enumerate() {
        if gaps.len() >= 2 && gaps[gaps.len() - 1] > gaps[gaps.len() - 2] {
            warnings.push(format!(
                "Cauchy gap grew over the last doubling for k = {}: {} -> {}",
                cfg.k_values[ki],
                gaps[gaps.len() - 2],
                gaps[gaps.len() - 1]
            ));
        }
    }
    for e in blocks.iter().flatten().filter(|e| !e.converged) {
        warnings.push(format!(
            "solver did not converge at t = {}, k = {}, seed = {} (residual {})",
            e.t, e.k, e.seed, e.residual
        ));
    }
    LadderResult {
        kind,
        param,
        t_values: cfg.t_values.clone(),
        k_values: cfg.k_values.clone(),
        seeds: cfg.seeds.clone(),
        entries: blocks.into_iter().flatten().collect(),
        means,
        std_errors,
        cauchy_gaps,
        metrication: Vec::new(),
        warnings,
    }
}

fn grid_of(cfg: &LadderConfig) -> Vec<(usize, f64, u64)> {
    let mut jobs = Vec::new();
    for (ti, &t) in cfg.t_values.iter().enumerate() {
        for &seed in &cfg.seeds {
            jobs.push((ti, t, seed));
        }
    }
    jobs
}

/// Normalized minima `m(ℓ_ξ, Q_t)/t^n` over the configured ladders.
pub fn estimate_fhom(cfg: &LadderConfig, q: &VolumeIntegrand, xi: &[f64]) -> Result<LadderResult> {
    cfg.validate()?;
    if xi.len() != cfg.domain.n {
        return Err(Error::Parameter("ξ dimension mismatch".into()));
    }
    let delta = cfg.domain.delta;
    let blocks: Vec<Vec<LadderEntry>> = grid_of(cfg)
        .into_par_iter()
        .map(|(_, t, seed)| -> Result<Vec<LadderEntry>> {
            let g = cfg.generator.with_seed(seed).generate(&cfg.domain, &cfg.window(t))?;
            let masks = rasterize(&g, cfg.h_over_delta * delta, cfg.frame_width)?;
            let opts = SolveOptions {
                tol: cfg.tol,
                max_iter: None,
            };
            let affine = ScalarField::affine(&masks.grid, xi);
            let mut slots: Vec<Option<LadderEntry>> = vec![None; cfg.k_values.len()];
            let order = solve_order(&cfg.k_values, delta, t);
            let mut previous: Option<ScalarField> = None;
            for &ki in &order {
                let k = cfg.k_values[ki];
                let qk = q.with_hole_weight(k.hole_weight(delta, t));
                let r = solve_volume_cell_from(&masks, &qk, xi, &opts, previous.as_ref())?;
                let volume = masks.grid.t.powi(masks.grid.n as i32);
                let competitor = crate::discretize::volume_energy(&affine, &qk, &masks)? / volume;
                slots[ki] = Some(LadderEntry {
                    t,
                    k,
                    seed,
                    normalized_energy: r.normalized_energy,
                    energy: r.energy,
                    competitor,
                    iterations: r.diagnostics.iterations,
                    residual: r.diagnostics.residual,
                    converged: r.diagnostics.converged,
                    exact: false,
                    holes_on_datum: false,
                    holes: g.balls.len(),
                });
                if let Minimizer::Scalar(u) = r.minimizer {
                    previous = Some(u);
                }
            }
            let entries: Vec<LadderEntry> = slots.into_iter().map(|e| e.expect("every k solved")).collect();
            check_monotone(&entries, &order, t, seed)?;
            Ok(entries)
        })
        .collect::<Result<_>>()?;
    Ok(assemble(Kind::Volume, xi.to_vec(), cfg, blocks))
}

/// Normalized min-cut values `m(u_{x,1,ν}, Q_t)` per discrete area of the
/// datum plane inside the window, with `x` the window centre.
pub fn estimate_ghom(cfg: &LadderConfig, s: &SurfaceIntegrand, nu: &[f64]) -> Result<LadderResult> {
    cfg.validate()?;
    if nu.len() != cfg.domain.n || nu.iter().all(|v| *v == 0.0) {
        return Err(Error::Parameter("ν must be a nonzero vector of the right dimension".into()));
    }
    let delta = cfg.domain.delta;
    let blocks: Vec<Vec<LadderEntry>> = grid_of(cfg)
        .into_par_iter()
        .map(|(_, t, seed)| -> Result<Vec<LadderEntry>> {
            let g = cfg.generator.with_seed(seed).generate(&cfg.domain, &cfg.window(t))?;
            let masks = rasterize(&g, cfg.h_over_delta * delta, cfg.frame_width)?;
            let grid = &masks.grid;
            let centre: Vec<f64> = grid.origin.iter().map(|o| o + 0.5 * grid.t).collect();
            let datum = LabelField::half_space(grid, &centre, nu);
            let norm = nu.iter().map(|v| v * v).sum::<f64>().sqrt();
            let holes_on_datum = g.balls.iter().any(|b| {
                let d: f64 = (0..grid.n).map(|k| (b.center[k] - centre[k]) * nu[k]).sum::<f64>() / norm;
                d.abs() < b.radius
            });
            let reference = flat_reference_energy(grid, &centre, nu, &cell_pairs(grid));
            let mut slots: Vec<Option<LadderEntry>> = vec![None; cfg.k_values.len()];
            let order = solve_order(&cfg.k_values, delta, t);
            let mut previous: Option<LabelField> = None;
            for &ki in &order {
                let k = cfg.k_values[ki];
                let sk = s.with_hole_weight(k.hole_weight(delta, t));
                let competitors: Vec<&LabelField> = previous.iter().collect();
                let r = solve_surface_cell_from(&masks, &sk, nu, Some(&centre), &competitors)?;
                let competitor = crate::discretize::surface_energy(&datum, &sk, &masks)? / reference;
                slots[ki] = Some(LadderEntry {
                    t,
                    k,
                    seed,
                    normalized_energy: r.normalized_energy,
                    energy: r.energy,
                    competitor,
                    iterations: r.diagnostics.iterations,
                    residual: r.diagnostics.residual,
                    converged: r.diagnostics.converged,
                    exact: true,
                    holes_on_datum,
                    holes: g.balls.len(),
                });
                if let Minimizer::Labels(u) = r.minimizer {
                    previous = Some(u);
                }
            }
            let entries: Vec<LadderEntry> = slots.into_iter().map(|e| e.expect("every k solved")).collect();
            check_monotone(&entries, &order, t, seed)?;
            Ok(entries)
        })
        .collect::<Result<_>>()?;
    let mut result = assemble(Kind::Surface, nu.to_vec(), cfg, blocks);
    result.metrication = cfg
        .t_values
        .iter()
        .map(|&t| -> Result<f64> {
            let grid = Grid::new(
                cfg.domain.n,
                t,
                cfg.h_over_delta * delta,
                cfg.frame_width,
                cfg.window_origin.clone(),
            )?;
            let centre: Vec<f64> = grid.origin.iter().map(|o| o + 0.5 * grid.t).collect();
            let exact = plane_section_area(&grid.origin, grid.t, &centre, nu);
            Ok(flat_reference_energy(&grid, &centre, nu, &cell_pairs(&grid)) / exact - 1.0)
        })
        .collect::<Result<_>>()?;
    Ok(result)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMode {
    HoleMasked,
    KExtrapolated,
    Soft,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomEstimate {
    pub kind: Kind,
    pub param: Vec<f64>,
    pub value: f64,
    /// Standard error over seeds.
    pub dispersion: f64,
    pub t_max: f64,
    pub k_max: KValue,
    pub n_seeds: usize,
    pub mode: EstimateMode,
    /// `mean_k − mean_∞` at `t_max` for each finite k.
    pub gaps: Vec<(f64, f64)>,
    /// Largest of `gaps`.
    pub perturbation_gap: f64,
}

/// The hole-masked column at the largest t, after re-checking that every
/// `(t, seed)` row of the ladder is monotone in k.
pub fn k_extrapolate(ladder: &LadderResult) -> Result<HomEstimate> {
    let inf = ladder
        .k_index(KValue::Infinite)
        .ok_or_else(|| Error::Parameter("ladder has no hole-masked column".into()))?;
    let mut finite: Vec<(usize, f64)> = ladder
        .k_values
        .iter()
        .enumerate()
        .filter_map(|(i, k)| match k {
            KValue::Finite(v) => Some((i, *v)),
            _ => None,
        })
        .collect();
    finite.sort_by(|a, b| a.1.total_cmp(&b.1));
    for ti in 0..ladder.t_values.len() {
        for si in 0..ladder.seeds.len() {
            let mut chain: Vec<usize> = finite.iter().map(|f| f.0).collect();
            chain.push(inf);
            for w in chain.windows(2) {
                let (a, b) = (ladder.entry(ti, si, w[0]), ladder.entry(ti, si, w[1]));
                if !(b.normalized_energy <= a.normalized_energy) {
                    return Err(Error::Monotonicity {
                        t: a.t,
                        seed: a.seed,
                        detail: format!("k = {} gives {} > {} at k = {}", b.k, b.normalized_energy, a.normalized_energy, a.k),
                    });
                }
            }
        }
    }
    let last = ladder.t_values.len() - 1;
    let value = ladder.means[last][inf];
    let gaps: Vec<(f64, f64)> = finite.iter().map(|&(i, k)| (k, ladder.means[last][i] - value)).collect();
    Ok(HomEstimate {
        kind: ladder.kind,
        param: ladder.param.clone(),
        value,
        dispersion: ladder.std_errors[last][inf],
        t_max: ladder.t_values[last],
        k_max: KValue::Infinite,
        n_seeds: ladder.seeds.len(),
        mode: if finite.is_empty() {
            EstimateMode::HoleMasked
        } else {
            EstimateMode::KExtrapolated
        },
        perturbation_gap: gaps.iter().map(|g| g.1).fold(0.0, f64::max),
        gaps,
    })
}

/// The soft-weight column at the largest t.
pub fn soft_estimate(ladder: &LadderResult) -> Result<HomEstimate> {
    let soft = ladder
        .k_index(KValue::Soft)
        .ok_or_else(|| Error::Parameter("ladder has no soft column".into()))?;
    let last = ladder.t_values.len() - 1;
    Ok(HomEstimate {
        kind: ladder.kind,
        param: ladder.param.clone(),
        value: ladder.means[last][soft],
        dispersion: ladder.std_errors[last][soft],
        t_max: ladder.t_values[last],
        k_max: KValue::Soft,
        n_seeds: ladder.seeds.len(),
        mode: EstimateMode::Soft,
        gaps: Vec::new(),
        perturbation_gap: 0.0,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub value: f64,
    pub upper: f64,
    pub positive: bool,
    pub below_upper: bool,
    /// `ξ = 0`: both sides vanish and nothing is checked.
    pub skipped: bool,
}

impl BoundsReport {
    pub fn passed(&self) -> bool {
        self.skipped || (self.positive && self.below_upper)
    }
}

/// `0 < f_hom(ξ) ≤ c2(1 + |ξ|^p)` or `0 < g_hom(ν) ≤ c4`.
pub fn check_bounds(est: &HomEstimate, c_upper: f64, p: f64) -> BoundsReport {
    let (upper, skipped) = match est.kind {
        Kind::Volume => {
            let norm = est.param.iter().map(|v| v * v).sum::<f64>().sqrt();
            (c_upper * (1.0 + norm.powf(p)), norm == 0.0)
        }
        Kind::Surface => (c_upper, false),
    };
    BoundsReport {
        value: est.value,
        upper,
        positive: est.value > 0.0,
        below_upper: est.value <= upper,
        skipped,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FhomSample {
    pub xi: Vec<f64>,
    pub value: f64,
    pub dispersion: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    /// Largest `f(mid) − (f(a) + f(b))/2` over collinear midpoint triples.
    pub worst_violation: f64,
    /// Twice the largest dispersion among the triple achieving it.
    pub tolerance: f64,
    pub triples: usize,
    /// `|f(ξ₁) − f(ξ₂)| / ((1 + |ξ₁|^{p−1} + |ξ₂|^{p−1})|ξ₁ − ξ₂|)` per pair.
    pub lipschitz_ratios: Vec<f64>,
    pub max_lipschitz_ratio: f64,
}

impl ConvexityReport {
    pub fn convex(&self) -> bool {
        self.worst_violation <= self.tolerance
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Midpoint convexity and Lipschitz ratios of sampled `f_hom` values.
pub fn check_convexity_fhom(samples: &[FhomSample], p: f64) -> Result<ConvexityReport> {
    if samples.len() < 3 {
        return Err(Error::Parameter("need at least 3 samples".into()));
    }
    let mut worst = f64::NEG_INFINITY;
    let mut tolerance = 0.0;
    let mut triples = 0;
    for a in samples {
        for b in samples {
            if std::ptr::eq(a, b) {
                continue;
            }
            let mid: Vec<f64> = a.xi.iter().zip(&b.xi).map(|(x, y)| 0.5 * (x + y)).collect();
            let scale = norm(&a.xi).max(norm(&b.xi)).max(1.0);
            let Some(m) = samples
                .iter()
                .find(|s| s.xi.iter().zip(&mid).all(|(x, y)| (x - y).abs() <= 1e-12 * scale))
            else {
                continue;
            };
            triples += 1;
            let violation = m.value - 0.5 * (a.value + b.value);
            if violation > worst {
                worst = violation;
                tolerance = 2.0 * a.dispersion.max(b.dispersion).max(m.dispersion);
            }
        }
    }
    if triples == 0 {
        return Err(Error::Parameter("no collinear midpoint triple among the samples".into()));
    }
    let mut ratios = Vec::new();
    for (i, a) in samples.iter().enumerate() {
        for b in &samples[i + 1..] {
            let diff: Vec<f64> = a.xi.iter().zip(&b.xi).map(|(x, y)| x - y).collect();
            let d = norm(&diff);
            if d == 0.0 {
                continue;
            }
            let weight = 1.0 + norm(&a.xi).powf(p - 1.0) + norm(&b.xi).powf(p - 1.0);
            ratios.push((a.value - b.value).abs() / (weight * d));
        }
    }
    Ok(ConvexityReport {
        worst_violation: worst,
        tolerance,
        triples,
        max_lipschitz_ratio: ratios.iter().copied().fold(0.0, f64::max),
        lipschitz_ratios: ratios,
    })
}

fn format_param(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(":")
}

/// Columns `kind,param,t,k,seed,normalized_energy,iterations,exact_flag`;
/// floats in shortest round-trip form.
pub fn write_ladder_csv(ladder: &LadderResult, mut w: impl Write) -> Result<()> {
    writeln!(w, "kind,param,t,k,seed,normalized_energy,iterations,exact_flag")?;
    let kind = match ladder.kind {
        Kind::Volume => "volume",
        Kind::Surface => "surface",
    };
    let param = format_param(&ladder.param);
    for e in &ladder.entries {
        writeln!(
            w,
            "{kind},{param},{},{},{},{},{},{}",
            e.t, e.k, e.seed, e.normalized_energy, e.iterations, e.exact
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::Coefficient;
    use crate::geometry::Generator;

    fn lattice_config(seeds: Vec<u64>) -> LadderConfig {
        let generator = RealizationSeed::new(
            0,
            Generator::BernoulliLattice {
                spacing: 1.0,
                radius: 0.2,
                occupation_prob: 1.0,
            },
        );
        let mut cfg = LadderConfig::defaults(generator, DomainParams::new(2, 0.25, 0.45));
        cfg.t_values = vec![2.0, 4.0];
        cfg.seeds = seeds;
        cfg
    }

    #[test]
    fn k_ladder_is_monotone_and_below_the_affine_competitor() {
        let cfg = lattice_config(vec![0, 1]);
        let q = VolumeIntegrand::new(2.0, Coefficient::Constant(1.0), 1.0);
        let ladder = estimate_fhom(&cfg, &q, &[1.0, 0.0]).unwrap();
        let est = k_extrapolate(&ladder).unwrap();
        assert!(est.value < 1.0 && est.value > 0.0, "{est:?}");
        for e in &ladder.entries {
            assert!(e.normalized_energy <= e.competitor);
        }
        let gaps: Vec<f64> = est.gaps.iter().map(|g| g.1).collect();
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    }

    #[test]
    fn surface_ladder_with_holes_on_the_plane_is_below_one() {
        let cfg = lattice_config(vec![3]);
        let s = SurfaceIntegrand::new(Coefficient::Constant(1.0), 1.0);
        // horizontal datum through the lattice row at height t/2 − 0.5
        let ladder = estimate_ghom(&cfg, &s, &[0.0, 1.0]).unwrap();
        let est = k_extrapolate(&ladder).unwrap();
        assert!(est.value <= 1.0);
        assert!(ladder.metrication.iter().all(|m| m.abs() <= 1e-12));
        let csv = {
            let mut buf = Vec::new();
            write_ladder_csv(&ladder, &mut buf).unwrap();
            String::from_utf8(buf).unwrap()
        };
        assert_eq!(csv.lines().count(), 1 + ladder.entries.len());
        assert!(csv.lines().nth(1).unwrap().starts_with("surface,0:1,2,1,3,"));
    }

    #[test]
    fn convexity_of_the_square_norm() {
        let samples: Vec<FhomSample> = [0.0, 1.0, 2.0]
            .iter()
            .map(|&x| FhomSample {
                xi: vec![x, 0.0],
                value: x * x,
                dispersion: 0.0,
            })
            .collect();
        let r = check_convexity_fhom(&samples, 2.0).unwrap();
        assert!(r.convex());
        assert_eq!(r.triples, 2);
        assert!(r.worst_violation <= 0.0);
    }

    #[test]
    fn bounds_skip_zero_gradient() {
        let est = HomEstimate {
            kind: Kind::Volume,
            param: vec![0.0, 0.0],
            value: 0.0,
            dispersion: 0.0,
            t_max: 1.0,
            k_max: KValue::Infinite,
            n_seeds: 1,
            mode: EstimateMode::HoleMasked,
            gaps: vec![],
            perturbation_gap: 0.0,
        };
        assert!(check_bounds(&est, 1.0, 2.0).passed());
        let mut e1 = est.clone();
        e1.param = vec![1.0, 0.0];
        e1.value = 1.0;
        let r = check_bounds(&e1, 1.0, 2.0);
        assert!(r.passed() && r.upper == 2.0);
    }
}
