//! Acceptance battery. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::time::{Duration, Instant};

use perfhom::discretize::{Coefficient, SurfaceIntegrand, VolumeIntegrand};
use perfhom::extension::{dyadic_schedule, n_delta, run_extension_instance, ExtensionInstance, ExtensionOptions, FieldSpec};
use perfhom::geometry::{density_lower_bound, empirical_density, DomainParams, Generator, PerforatedGeometry, RealizationSeed, Window};
use perfhom::homogenize::{estimate_fhom, estimate_ghom, KValue, LadderConfig, LadderResult};
use perfhom::solvers::{surface_oracle_battery, volume_oracle_battery};
use perfhom_cli::{prepare, replay, run, ExperimentConfig, Overrides};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

const DELTA: f64 = 0.25;
const R_STAR: f64 = 0.45;

fn domain() -> DomainParams {
    DomainParams::new(2, DELTA, R_STAR)
}

fn within(limit: Duration, elapsed: Duration) -> bool {
    elapsed <= limit
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let rows = surface_oracle_battery(200, 2024, 0.5, 2.0).expect("battery runs");
    let failures = rows.iter().filter(|r| !r.passed).count();
    let max_free = rows.iter().map(|r| r.unknowns).max().unwrap_or(0);
    let elapsed = start.elapsed();
    outcome(
        failures == 0 && max_free <= 16 && rows.len() == 200 && within(Duration::from_secs(60), elapsed),
        format!(
            "{} instances, {failures} unequal, at most {max_free} free cells, {elapsed:.2?}",
            rows.len()
        ),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let rows = volume_oracle_battery(50, 2024, 0.5, 2.0, 1e-8).expect("battery runs");
    let failures = rows.iter().filter(|r| !r.passed).count();
    let worst = rows.iter().map(|r| r.relative_difference).fold(0.0, f64::max);
    let max_free = rows.iter().map(|r| r.unknowns).max().unwrap_or(0);
    let elapsed = start.elapsed();
    outcome(
        failures == 0 && max_free <= 400 && within(Duration::from_secs(60), elapsed),
        format!(
            "{} instances, worst relative difference {worst:.2e}, at most {max_free} free nodes, {elapsed:.2?}",
            rows.len()
        ),
    )
}

fn ladder(generator: Generator, n: usize, t_values: Vec<f64>, seeds: Vec<u64>, origin: Vec<f64>) -> LadderConfig {
    let mut cfg = LadderConfig::defaults(RealizationSeed::new(0, generator), DomainParams::new(n, DELTA, R_STAR));
    cfg.t_values = t_values;
    cfg.seeds = seeds;
    cfg.window_origin = origin;
    cfg
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut worst_f: f64 = 0.0;
    let mut worst_g: f64 = 0.0;
    let mut entries = 0;
    for n in [2, 3] {
        let t = if n == 2 {
            vec![8.0 * DELTA, 16.0 * DELTA]
        } else {
            vec![4.0 * DELTA, 8.0 * DELTA]
        };
        let cfg = ladder(Generator::Empty, n, t, vec![0, 1], vec![0.0; n]);
        let q = VolumeIntegrand::new(2.0, Coefficient::Constant(1.0), 1.0);
        let xis: Vec<Vec<f64>> = if n == 2 {
            vec![vec![1.0, 0.0], vec![0.6, -0.8], vec![2.0, 3.0]]
        } else {
            vec![vec![1.0, 0.0, 0.0], vec![1.0, -2.0, 0.5]]
        };
        for xi in &xis {
            let expected: f64 = xi.iter().map(|v| v * v).sum();
            let r = estimate_fhom(&cfg, &q, xi).expect("ladder runs");
            for e in &r.entries {
                worst_f = worst_f.max((e.normalized_energy - expected).abs() / expected.max(1.0));
                entries += 1;
            }
        }
        let s = SurfaceIntegrand::new(Coefficient::Constant(1.0), 1.0);
        for axis in 0..n {
            for sign in [1.0, -1.0] {
                let mut nu = vec![0.0; n];
                nu[axis] = sign;
                let r = estimate_ghom(&cfg, &s, &nu).expect("ladder runs");
                for e in &r.entries {
                    worst_g = worst_g.max((e.normalized_energy - 1.0).abs());
                    entries += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst_f <= 1e-10 && worst_g <= 1e-12,
        format!("{entries} entries, worst f_hom deviation {worst_f:.2e}, worst g_hom deviation {worst_g:.2e}, {elapsed:.2?}"),
    )
}

/// The ladders shared by criteria 4, 5 and 10: three generators, windows
/// whose datum plane passes through lattice rows.
struct Runs {
    volume: Vec<(String, Vec<f64>, LadderResult)>,
    surface: Vec<(String, Vec<f64>, LadderResult)>,
    elapsed: Duration,
}

fn generators() -> Vec<(String, Generator)> {
    vec![
        (
            "bernoulli-0.5".into(),
            Generator::BernoulliLattice {
                spacing: 1.0,
                radius: 0.2,
                occupation_prob: 0.5,
            },
        ),
        (
            "bernoulli-1.0".into(),
            Generator::BernoulliLattice {
                spacing: 1.0,
                radius: 0.24,
                occupation_prob: 1.0,
            },
        ),
        (
            "hardcore".into(),
            Generator::HardcoreRejection {
                intensity: 0.8,
                r_min: 0.1,
                r_max: 0.4,
            },
        ),
    ]
}

fn shared_runs() -> Runs {
    let start = Instant::now();
    let mut volume = Vec::new();
    let mut surface = Vec::new();
    for (name, gen) in generators() {
        let cfg = ladder(gen, 2, vec![8.0 * DELTA, 16.0 * DELTA], (0..8).collect(), vec![0.0, -0.5]);
        let q = VolumeIntegrand::new(2.0, Coefficient::Constant(1.0), 1.0);
        for xi in [vec![1.0, 0.0], vec![0.5, -1.5]] {
            let r = estimate_fhom(&cfg, &q, &xi).expect("no monotonicity violation");
            volume.push((name.clone(), xi, r));
        }
        let s = SurfaceIntegrand::new(Coefficient::Constant(1.0), 1.0);
        for nu in [vec![0.0, 1.0], vec![1.0, 2.0]] {
            let r = estimate_ghom(&cfg, &s, &nu).expect("no monotonicity violation");
            surface.push((name.clone(), nu, r));
        }
    }
    Runs {
        volume,
        surface,
        elapsed: start.elapsed(),
    }
}

fn all_ladders(runs: &Runs) -> impl Iterator<Item = &(String, Vec<f64>, LadderResult)> {
    runs.volume.iter().chain(runs.surface.iter())
}

fn criterion_4(runs: &Runs) -> Outcome {
    let mut checked = 0;
    let mut violations = Vec::new();
    for (name, param, l) in all_ladders(runs) {
        let inf = l.k_index(KValue::Infinite).expect("hole-masked column");
        let order: Vec<usize> = [1.0, 2.0, 4.0, 8.0]
            .iter()
            .map(|&k| l.k_index(KValue::Finite(k)).expect("finite column"))
            .chain(std::iter::once(inf))
            .collect();
        for ti in 0..l.t_values.len() {
            for si in 0..l.seeds.len() {
                for w in order.windows(2) {
                    let (a, b) = (l.entry(ti, si, w[0]).energy, l.entry(ti, si, w[1]).energy);
                    checked += 1;
                    if b > a {
                        violations.push(format!("{name} {param:?} t={} seed={}", l.t_values[ti], l.seeds[si]));
                    }
                }
                for &k in &order {
                    checked += 1;
                    if l.entry(ti, si, k).energy < l.entry(ti, si, inf).energy {
                        violations.push(format!("{name} {param:?} below hole-masked"));
                    }
                }
            }
        }
    }
    outcome(
        violations.is_empty() && within(Duration::from_secs(600), runs.elapsed),
        format!(
            "{} ladders, {checked} comparisons, {} violations, {:.2?}",
            runs.volume.len() + runs.surface.len(),
            violations.len(),
            runs.elapsed
        ),
    )
}

fn criterion_5(runs: &Runs) -> Outcome {
    let (c2, c4, p) = (1.0, 1.0, 2.0);
    let mut bad = Vec::new();
    let mut checked = 0;
    for (name, xi, l) in &runs.volume {
        let upper = c2 * (1.0 + xi.iter().map(|v| v * v).sum::<f64>().sqrt().powf(p));
        for e in &l.entries {
            checked += 1;
            if !(e.normalized_energy > 0.0 && e.normalized_energy <= upper && e.normalized_energy <= e.competitor) {
                bad.push(format!(
                    "{name} {xi:?} t={} k={} seed={}: {}",
                    e.t, e.k, e.seed, e.normalized_energy
                ));
            }
        }
    }
    for (name, nu, l) in &runs.surface {
        for e in &l.entries {
            checked += 1;
            if !(e.normalized_energy > 0.0 && e.normalized_energy <= c4 && e.normalized_energy <= e.competitor) {
                bad.push(format!(
                    "{name} {nu:?} t={} k={} seed={}: {:e}",
                    e.t,
                    e.k,
                    e.seed,
                    e.normalized_energy - c4
                ));
            }
        }
    }
    let detail = format!(
        "{checked} entries, {} outside bounds{}",
        bad.len(),
        bad.first().map(|b| format!(" (first: {b})")).unwrap_or_default()
    );
    outcome(bad.is_empty(), detail)
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let gen = Generator::HardcoreRejection {
        intensity: 0.8,
        r_min: 0.1,
        r_max: 0.4,
    };
    let cfg = ladder(gen, 2, vec![8.0 * DELTA], (0..4).collect(), vec![0.0, 0.0]);
    let s = SurfaceIntegrand::new(Coefficient::Constant(1.0), 1.0);
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    for i in 0..8 {
        let angle = std::f64::consts::PI * i as f64 / 8.0 + 0.1;
        let nu = vec![angle.cos(), angle.sin()];
        let minus: Vec<f64> = nu.iter().map(|v| -v).collect();
        let (a, b) = (
            estimate_ghom(&cfg, &s, &nu).expect("ladder runs"),
            estimate_ghom(&cfg, &s, &minus).expect("ladder runs"),
        );
        for (x, y) in a.entries.iter().zip(&b.entries) {
            compared += 1;
            worst = worst.max((x.normalized_energy - y.normalized_energy).abs());
        }
    }
    outcome(
        worst <= 1e-12,
        format!(
            "8 directions, {compared} per-seed pairs, worst difference {worst:.2e}, {:.2?}",
            start.elapsed()
        ),
    )
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let opts = ExtensionOptions::default();
    let mut e1_bad = 0;
    let mut e3_bad = 0;
    let mut nonfinite = 0;
    let mut max_ratio: f64 = 0.0;
    let mut worst_homothety: f64 = 0.0;
    for id in 0..50 {
        let gen = if id % 2 == 0 {
            Generator::HardcoreRejection {
                intensity: rng.gen_range(0.3..1.0),
                r_min: 0.08,
                r_max: 0.42,
            }
        } else {
            Generator::BernoulliLattice {
                spacing: 1.0,
                radius: rng.gen_range(0.1..0.25),
                occupation_prob: 0.7,
            }
        };
        let t = 12.0 * DELTA;
        let g = RealizationSeed::new(rng.gen(), gen)
            .generate(&domain(), &Window::at_origin(2, t))
            .expect("geometry");
        let field = match id % 3 {
            0 => FieldSpec::Mixed { amplitude: 0.3, jump: 1.0 },
            1 => FieldSpec::Affine {
                xi: vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            },
            _ => FieldSpec::Mixed { amplitude: 0.0, jump: 2.0 },
        };
        let inst = ExtensionInstance {
            id,
            geometry: g,
            h: DELTA / 4.0,
            field,
            field_seed: rng.gen(),
        };
        let (input, output, report) = run_extension_instance(&inst, &[0.5, 2.0], &opts).expect("extension runs");
        let known: Vec<f64> = input.values.iter().copied().filter(|v| !v.is_nan()).collect();
        let lo = known.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = known.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (a, b) in input.values.iter().zip(&output.values) {
            if !a.is_nan() && a.to_bits() != b.to_bits() {
                e1_bad += 1;
            }
            if !(lo <= *b && *b <= hi) {
                e3_bad += 1;
            }
        }
        if !report.ratio.is_finite() {
            nonfinite += 1;
        } else {
            max_ratio = max_ratio.max(report.ratio);
        }
        worst_homothety = worst_homothety.max(report.homothety_check.unwrap_or(f64::INFINITY));
    }
    let elapsed = start.elapsed();
    outcome(
        e1_bad == 0 && e3_bad == 0 && nonfinite == 0 && worst_homothety <= 1e-8 && within(Duration::from_secs(300), elapsed),
        format!(
            "50 instances, E1 mismatches {e1_bad}, E3 escapes {e3_bad}, max ratio {max_ratio:.4}, worst homothety change {worst_homothety:.2e}, {elapsed:.2?}"
        ),
    )
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut bad = 0;
    for _ in 0..10_000 {
        let delta: f64 = rng.gen_range(0.01..1.0);
        let r_star: f64 = delta * rng.gen_range(1.01..50.0);
        let r = rng.gen_range(delta..r_star);
        let q = 1.0 + delta / r_star;
        let closed = ((r_star / delta).ln() / q.ln()).floor() as usize + 1;
        // independent count: first N with r_* q^{-N} < δ
        let mut count = 0;
        let mut x = r_star;
        while x >= delta {
            x /= q;
            count += 1;
        }
        let s = dyadic_schedule(r, delta, r_star).expect("valid schedule");
        if n_delta(delta, r_star) != closed || s.n_delta != closed || count != closed || !(s.r_delta < delta) {
            bad += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        bad == 0 && within(Duration::from_secs(1), elapsed),
        format!("10000 triples, {bad} mismatches, {elapsed:.2?}"),
    )
}

fn criterion_9() -> Outcome {
    let start = Instant::now();
    let mut bad = 0;
    let gens = generators();
    for i in 0..100u64 {
        let (_, gen) = &gens[i as usize % gens.len()];
        let g: PerforatedGeometry = RealizationSeed::new(i, gen.clone())
            .generate(&domain(), &Window::at_origin(2, 4.0 + (i % 5) as f64))
            .expect("geometry");
        let b = density_lower_bound(&g).value;
        if !(b > 0.0 && b <= empirical_density(&g) + 1e-6) {
            bad += 1;
        }
    }
    let p = 0.5;
    let lattice = Generator::BernoulliLattice {
        spacing: 1.0,
        radius: 0.2,
        occupation_prob: p,
    };
    let d: Vec<f64> = (0..32)
        .map(|s| {
            empirical_density(
                &RealizationSeed::new(s, lattice.clone())
                    .generate(&domain(), &Window::at_origin(2, 8.0))
                    .unwrap(),
            )
        })
        .collect();
    let mean = d.iter().sum::<f64>() / 32.0;
    let se = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 31.0 / 32.0).sqrt();
    let expected = 1.0 - p * std::f64::consts::PI * 0.04;
    let z = (mean - expected).abs() / se;
    let elapsed = start.elapsed();
    outcome(
        bad == 0 && z <= 3.0 && within(Duration::from_secs(60), elapsed),
        format!("100 geometries, {bad} bound failures; lattice mean {mean:.5} vs {expected:.5}, {z:.2} standard errors, {elapsed:.2?}"),
    )
}

fn criterion_10(runs: &Runs) -> Outcome {
    let h = DELTA / 4.0;
    let mut bad = Vec::new();
    let mut strict = 0;
    let mut checked = 0;
    for (name, xi, l) in &runs.volume {
        let inf = l.k_index(KValue::Infinite).unwrap();
        let target: f64 = xi.iter().map(|v| v * v).sum();
        for ti in 0..l.t_values.len() {
            for si in 0..l.seeds.len() {
                let e = l.entry(ti, si, inf);
                checked += 1;
                if e.holes > 0 && !(e.normalized_energy < target) {
                    bad.push(format!("{name} {xi:?} seed {}", e.seed));
                }
            }
        }
    }
    for (name, nu, l) in &runs.surface {
        let inf = l.k_index(KValue::Infinite).unwrap();
        let norm = nu.iter().map(|v| v * v).sum::<f64>().sqrt();
        for ti in 0..l.t_values.len() {
            for si in 0..l.seeds.len() {
                let e = l.entry(ti, si, inf);
                checked += 1;
                // a hole straddles the plane by more than a cell diagonal
                let t = l.t_values[ti];
                let g = RealizationSeed::new(e.seed, generators().into_iter().find(|g| &g.0 == name).unwrap().1)
                    .generate(&domain(), &Window::shifted(2, t, vec![0.0, -0.5]))
                    .unwrap();
                let centre = [0.5 * t, -0.5 + 0.5 * t];
                let straddles = g.balls.iter().any(|b| {
                    let d = ((b.center[0] - centre[0]) * nu[0] + (b.center[1] - centre[1]) * nu[1]) / norm;
                    let inside = b.center.iter().all(|c| *c > b.radius && *c < t - b.radius - 0.5);
                    inside && d.abs() < b.radius - 2.0 * h
                });
                if !(e.normalized_energy <= 1.0) || (straddles && !(e.normalized_energy < 1.0)) {
                    bad.push(format!("{name} {nu:?} seed {}: {}", e.seed, e.normalized_energy));
                }
                strict += usize::from(straddles);
            }
        }
    }
    outcome(
        bad.is_empty(),
        format!(
            "{checked} hole-masked entries, {strict} with a straddling hole, {} failures{}",
            bad.len(),
            bad.first().map(|b| format!(" (first: {b})")).unwrap_or_default()
        ),
    )
}

fn criterion_11() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().expect("temp dir");
    let configs = [
        r#"{"kind": "fhom", "t_over_delta": [8, 16], "xi": [[1, 0], [1, 1], [0, 2]]}"#,
        r#"{"kind": "ghom", "t_over_delta": [8, 16], "nu": [[1, 0], [1, 1]], "hole_weight_mode": "soft"}"#,
        r#"{"kind": "extension_battery"}"#,
        r#"{"kind": "density_study"}"#,
        r#"{"kind": "oracle_suite", "oracle": {"surface_instances": 20, "volume_instances": 5}}"#,
    ];
    let mut drift = 0;
    let mut artifacts = 0;
    for (i, text) in configs.iter().enumerate() {
        let overrides = Overrides {
            out: Some(tmp.path().join(format!("run{i}"))),
            seeds: Some((0..10).collect()),
            parallel: None,
        };
        let cfg = prepare(ExperimentConfig::from_json(text).expect("config parses"), &overrides).expect("config valid");
        let m = run(&cfg).expect("run succeeds");
        artifacts += m.artifacts.len();
        let report = replay(&tmp.path().join(format!("run{i}")).join(perfhom_cli::MANIFEST_NAME), Some(2)).expect("replay runs");
        drift += report.drift_count();
    }
    outcome(
        drift == 0,
        format!(
            "{} manifests, {artifacts} artifacts, {drift} drifting, {:.2?}",
            configs.len(),
            start.elapsed()
        ),
    )
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "min-cut oracle equivalence", criterion_1()),
        (2, "volume oracle equivalence", criterion_2()),
        (3, "trivial-medium homogenization", criterion_3()),
    ];
    let runs = shared_runs();
    results.push((4, "k-monotonicity", criterion_4(&runs)));
    results.push((5, "bounds", criterion_5(&runs)));
    results.push((6, "g_hom symmetry", criterion_6()));
    results.push((7, "extension contract", criterion_7()));
    results.push((8, "dyadic schedule closed form", criterion_8()));
    results.push((9, "density positivity", criterion_9()));
    results.push((10, "perforation effect direction", criterion_10(&runs)));
    results.push((11, "reproducibility", criterion_11()));
    let mut failed = 0;
    for (id, name, o) in &results {
        println!(
            "{} criterion {id:>2} ({name}): {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.passed);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
