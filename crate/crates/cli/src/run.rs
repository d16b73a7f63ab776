//! Experiment execution. Every kind computes its artifacts in memory first,
//! so a failing run leaves no files behind.

use perfhom::discretize::{Coefficient, SurfaceIntegrand, VolumeIntegrand};
use perfhom::extension::{
    empirical_extension_constant, run_extension_batch, write_batch_csv, ConstantSummary, ExtensionInstance, ExtensionOptions,
};
use perfhom::geometry::{ball_volume, density_lower_bound, empirical_density, Generator, RealizationSeed, Window};
use perfhom::homogenize::{
    check_bounds, check_convexity_fhom, estimate_fhom, estimate_ghom, k_extrapolate, soft_estimate, write_ladder_csv, BoundsReport,
    ConvexityReport, FhomSample, HomEstimate, LadderResult,
};
use perfhom::solvers::{surface_oracle_battery, volume_oracle_battery, OracleComparison};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, ExperimentKind, HoleWeightMode};
use crate::CliError;

/// Named file contents produced by a run.
pub struct Outputs {
    pub files: Vec<(String, Vec<u8>)>,
    pub warnings: Vec<String>,
    /// False when an oracle comparison failed.
    pub passed: bool,
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut s = serde_json::to_vec_pretty(value).map_err(perfhom::Error::from)?;
    s.push(b'\n');
    Ok(s)
}

fn csv_bytes(ladder: &LadderResult) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write_ladder_csv(ladder, &mut buf)?;
    Ok(buf)
}

/// Run `cfg` (already resolved and validated) on the current rayon pool.
pub fn execute(cfg: &ExperimentConfig) -> Result<Outputs, CliError> {
    match cfg.kind {
        ExperimentKind::Fhom => run_fhom(cfg),
        ExperimentKind::Ghom => run_ghom(cfg),
        ExperimentKind::ExtensionBattery => run_extension(cfg),
        ExperimentKind::DensityStudy => run_density(cfg),
        ExperimentKind::OracleSuite => run_oracle(cfg),
    }
}

fn estimate(cfg: &ExperimentConfig, ladder: &LadderResult) -> Result<HomEstimate, CliError> {
    Ok(match cfg.hole_weight_mode {
        HoleWeightMode::Soft => soft_estimate(ladder)?,
        _ => k_extrapolate(ladder)?,
    })
}

#[derive(Serialize)]
struct LadderSummary {
    estimate: HomEstimate,
    bounds: BoundsReport,
    means: Vec<Vec<f64>>,
    std_errors: Vec<Vec<f64>>,
    cauchy_gaps: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    metrication: Vec<f64>,
    /// Entries above the energy of their own boundary datum; always 0.
    competitor_violations: usize,
}

#[derive(Serialize)]
struct HomSummary {
    kind: ExperimentKind,
    ladders: Vec<LadderSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    convexity: Option<ConvexityReport>,
}

fn ladder_summary(cfg: &ExperimentConfig, ladder: &LadderResult, c_upper: f64) -> Result<LadderSummary, CliError> {
    let estimate = estimate(cfg, ladder)?;
    let bounds = check_bounds(&estimate, c_upper, cfg.p);
    Ok(LadderSummary {
        bounds,
        estimate,
        means: ladder.means.clone(),
        std_errors: ladder.std_errors.clone(),
        cauchy_gaps: ladder.cauchy_gaps.clone(),
        metrication: ladder.metrication.clone(),
        competitor_violations: ladder.entries.iter().filter(|e| !(e.normalized_energy <= e.competitor)).count(),
    })
}

fn run_fhom(cfg: &ExperimentConfig) -> Result<Outputs, CliError> {
    let ladder_cfg = cfg.ladder();
    let q = VolumeIntegrand::new(cfg.p, Coefficient::Constant(cfg.a), 1.0);
    let mut files = Vec::new();
    let mut warnings = Vec::new();
    let mut summaries = Vec::new();
    for (i, xi) in cfg.xi.iter().enumerate() {
        let ladder = estimate_fhom(&ladder_cfg, &q, xi)?;
        files.push((format!("fhom_ladder_{i}.csv"), csv_bytes(&ladder)?));
        warnings.extend(ladder.warnings.iter().map(|w| format!("xi {xi:?}: {w}")));
        summaries.push(ladder_summary(cfg, &ladder, cfg.c2)?);
    }
    let samples: Vec<FhomSample> = summaries
        .iter()
        .map(|s| FhomSample {
            xi: s.estimate.param.clone(),
            value: s.estimate.value,
            dispersion: s.estimate.dispersion,
        })
        .collect();
    let convexity = check_convexity_fhom(&samples, cfg.p).ok();
    if let Some(c) = &convexity {
        if !c.convex() {
            warnings.push(format!(
                "midpoint convexity violated by {} (tolerance {})",
                c.worst_violation, c.tolerance
            ));
        }
    }
    let summary = HomSummary {
        kind: cfg.kind,
        ladders: summaries,
        convexity,
    };
    files.push(("summary.json".into(), json_bytes(&summary)?));
    Ok(Outputs {
        files,
        warnings,
        passed: true,
    })
}

fn run_ghom(cfg: &ExperimentConfig) -> Result<Outputs, CliError> {
    let ladder_cfg = cfg.ladder();
    let s = SurfaceIntegrand::new(Coefficient::Constant(cfg.g), 1.0);
    let mut files = Vec::new();
    let mut warnings = Vec::new();
    let mut summaries = Vec::new();
    for (i, nu) in cfg.nu.iter().enumerate() {
        let ladder = estimate_ghom(&ladder_cfg, &s, nu)?;
        files.push((format!("ghom_ladder_{i}.csv"), csv_bytes(&ladder)?));
        warnings.extend(ladder.warnings.iter().map(|w| format!("nu {nu:?}: {w}")));
        summaries.push(ladder_summary(cfg, &ladder, cfg.c4)?);
    }
    let summary = HomSummary {
        kind: cfg.kind,
        ladders: summaries,
        convexity: None,
    };
    files.push(("summary.json".into(), json_bytes(&summary)?));
    Ok(Outputs {
        files,
        warnings,
        passed: true,
    })
}

#[derive(Serialize)]
struct ExtensionSummary {
    instances: usize,
    max_ratio: f64,
    max_homothety_change: f64,
    constant: Option<ConstantSummary>,
    branches: Vec<(String, usize)>,
}

fn run_extension(cfg: &ExperimentConfig) -> Result<Outputs, CliError> {
    let domain = cfg.domain();
    let t = cfg.extension.t_over_delta * cfg.delta;
    let window = Window::shifted(cfg.n, t, cfg.window_origin.clone());
    let fields = &cfg.extension.fields;
    let instances: Vec<ExtensionInstance> = cfg
        .seeds
        .par_iter()
        .enumerate()
        .map(|(id, &seed)| -> Result<ExtensionInstance, CliError> {
            Ok(ExtensionInstance {
                id,
                geometry: RealizationSeed::new(seed, cfg.generator.clone()).generate(&domain, &window)?,
                h: cfg.h_over_delta * cfg.delta,
                field: fields[id % fields.len()].clone(),
                field_seed: seed,
            })
        })
        .collect::<Result<_, _>>()?;
    let opts = ExtensionOptions {
        p: cfg.p,
        gamma: cfg.extension.gamma,
        tol: 1e-12,
    };
    let batch = run_extension_batch(&instances, &cfg.extension.lambdas, &opts)?;
    let (reports, rows): (Vec<_>, Vec<_>) = batch.into_iter().unzip();
    let mut csv = Vec::new();
    write_batch_csv(&rows, &mut csv)?;
    let mut warnings = Vec::new();
    let constant = match empirical_extension_constant(&reports) {
        Ok(c) => Some(c),
        Err(e) => {
            warnings.push(format!("extension constant not estimated: {e}"));
            None
        }
    };
    let mut branches: Vec<(String, usize)> = Vec::new();
    for r in &rows {
        let name = r.branch.as_str().to_string();
        match branches.iter_mut().find(|b| b.0 == name) {
            Some(b) => b.1 += 1,
            None => branches.push((name, 1)),
        }
    }
    branches.sort();
    let summary = ExtensionSummary {
        instances: rows.len(),
        max_ratio: rows.iter().map(|r| r.ratio).fold(f64::NEG_INFINITY, f64::max),
        max_homothety_change: rows.iter().map(|r| r.lambda_check).fold(0.0, f64::max),
        constant,
        branches,
    };
    Ok(Outputs {
        files: vec![("extension.csv".into(), csv), ("summary.json".into(), json_bytes(&summary)?)],
        warnings,
        passed: true,
    })
}

#[derive(Serialize)]
struct DensitySummary {
    seeds: usize,
    mean: f64,
    std_error: f64,
    /// Expected hole-free fraction for a Bernoulli lattice whose window is a
    /// union of lattice cells.
    expected: Option<f64>,
    min_lower_bound: f64,
    bound_violations: usize,
}

fn run_density(cfg: &ExperimentConfig) -> Result<Outputs, CliError> {
    let domain = cfg.domain();
    let t = cfg.t_over_delta.last().copied().unwrap_or(8.0) * cfg.delta;
    let window = Window::shifted(cfg.n, t, cfg.window_origin.clone());
    let rows: Vec<(u64, f64, f64)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| -> Result<(u64, f64, f64), CliError> {
            let g = RealizationSeed::new(seed, cfg.generator.clone()).generate(&domain, &window)?;
            Ok((seed, empirical_density(&g), density_lower_bound(&g).value))
        })
        .collect::<Result<_, _>>()?;
    let mut csv = String::from("seed,empirical_density,lower_bound\n");
    for (seed, d, lb) in &rows {
        csv.push_str(&format!("{seed},{d},{lb}\n"));
    }
    let k = rows.len() as f64;
    let mean = rows.iter().map(|r| r.1).sum::<f64>() / k;
    let var = if rows.len() > 1 {
        rows.iter().map(|r| (r.1 - mean).powi(2)).sum::<f64>() / (k - 1.0)
    } else {
        0.0
    };
    let expected = match cfg.generator {
        Generator::BernoulliLattice {
            spacing,
            radius,
            occupation_prob,
        } => Some(1.0 - occupation_prob * ball_volume(cfg.n, radius) / spacing.powi(cfg.n as i32)),
        Generator::Empty => Some(1.0),
        Generator::HardcoreRejection { .. } => None,
    };
    let summary = DensitySummary {
        seeds: rows.len(),
        mean,
        std_error: (var / k).sqrt(),
        expected,
        min_lower_bound: rows.iter().map(|r| r.2).fold(f64::INFINITY, f64::min),
        bound_violations: rows.iter().filter(|r| !(r.2 > 0.0 && r.2 <= r.1 + 1e-6)).count(),
    };
    let mut warnings = Vec::new();
    if summary.bound_violations > 0 {
        warnings.push(format!("{} geometries violate 0 < bound ≤ density", summary.bound_violations));
    }
    Ok(Outputs {
        files: vec![
            ("density.csv".into(), csv.into_bytes()),
            ("summary.json".into(), json_bytes(&summary)?),
        ],
        warnings,
        passed: true,
    })
}

#[derive(Serialize)]
struct OracleSummary {
    surface_instances: usize,
    surface_failures: usize,
    volume_instances: usize,
    volume_failures: usize,
    worst_volume_relative_difference: f64,
}

fn oracle_csv(rows: &[OracleComparison]) -> Vec<u8> {
    let mut s = String::from("instance,n,unknowns,solver_energy,oracle_energy,relative_difference,passed\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.instance, r.n, r.unknowns, r.solver_energy, r.oracle_energy, r.relative_difference, r.passed
        ));
    }
    s.into_bytes()
}

fn run_oracle(cfg: &ExperimentConfig) -> Result<Outputs, CliError> {
    let o = &cfg.oracle;
    let surface = surface_oracle_battery(o.surface_instances, o.seed, cfg.c3, cfg.c4)?;
    let volume = volume_oracle_battery(o.volume_instances, o.seed, cfg.c1, cfg.c2, o.volume_rel_tol)?;
    let summary = OracleSummary {
        surface_instances: surface.len(),
        surface_failures: surface.iter().filter(|c| !c.passed).count(),
        volume_instances: volume.len(),
        volume_failures: volume.iter().filter(|c| !c.passed).count(),
        worst_volume_relative_difference: volume.iter().map(|c| c.relative_difference).fold(0.0, f64::max),
    };
    let passed = summary.surface_failures == 0 && summary.volume_failures == 0;
    let mut warnings = Vec::new();
    if !passed {
        warnings.push(format!(
            "oracle failures: {} surface, {} volume",
            summary.surface_failures, summary.volume_failures
        ));
    }
    Ok(Outputs {
        files: vec![
            ("oracle_surface.csv".into(), oracle_csv(&surface)),
            ("oracle_volume.csv".into(), oracle_csv(&volume)),
            ("summary.json".into(), json_bytes(&summary)?),
        ],
        warnings,
        passed,
    })
}
