use perfhom::discretize::{Coefficient, SurfaceIntegrand, VolumeIntegrand};
use perfhom::geometry::{DomainParams, Generator, RealizationSeed};
use perfhom::homogenize::{
    check_bounds, check_convexity_fhom, estimate_fhom, estimate_ghom, k_extrapolate, soft_estimate, FhomSample, KValue, LadderConfig,
};
use perfhom::Error;

fn full_lattice() -> LadderConfig {
    let gen = Generator::BernoulliLattice {
        spacing: 1.0,
        radius: 0.2,
        occupation_prob: 1.0,
    };
    let mut cfg = LadderConfig::defaults(RealizationSeed::new(0, gen), DomainParams::new(2, 0.25, 0.45));
    cfg.t_values = vec![2.0, 4.0];
    cfg.seeds = vec![0, 1];
    cfg
}

fn unit_volume() -> VolumeIntegrand {
    VolumeIntegrand::new(2.0, Coefficient::Constant(1.0), 1.0)
}

#[test]
fn non_monotone_ladder_is_fatal() {
    let cfg = full_lattice();
    let mut ladder = estimate_fhom(&cfg, &unit_volume(), &[1.0, 0.0]).unwrap();
    assert!(k_extrapolate(&ladder).is_ok());
    let inf = ladder.k_index(KValue::Infinite).unwrap();
    ladder.entries[inf].normalized_energy = ladder.entries[0].normalized_energy * 1.5;
    match k_extrapolate(&ladder) {
        Err(Error::Monotonicity { t, seed, .. }) => assert_eq!((t, seed), (2.0, 0)),
        other => panic!("expected a monotonicity error, got {other:?}"),
    }
}

#[test]
fn soft_weight_sits_inside_the_ladder() {
    let mut cfg = full_lattice();
    cfg.k_values = vec![KValue::Finite(1.0), KValue::Soft, KValue::Infinite];
    let ladder = estimate_ghom(&cfg, &SurfaceIntegrand::new(Coefficient::Constant(1.0), 1.0), &[1.0, 1.0]).unwrap();
    for ti in 0..2 {
        for si in 0..2 {
            let e = |k| ladder.entry(ti, si, k).normalized_energy;
            assert!(e(2) <= e(1) && e(1) <= e(0));
        }
    }
    let soft = soft_estimate(&ladder).unwrap();
    let masked = k_extrapolate(&ladder).unwrap();
    assert!(masked.value <= soft.value);
    assert!(check_bounds(&soft, 1.0, 2.0).passed());
}

/// The full lattice is periodic: shifting the window by a lattice vector
/// leaves every entry unchanged.
#[test]
fn lattice_shift_leaves_entries_unchanged() {
    let base = full_lattice();
    let mut shifted = base.clone();
    shifted.window_origin = vec![1.0, -2.0];
    for xi in [[1.0, 0.0], [0.3, 0.9]] {
        let a = estimate_fhom(&base, &unit_volume(), &xi).unwrap();
        let b = estimate_fhom(&shifted, &unit_volume(), &xi).unwrap();
        for (x, y) in a.entries.iter().zip(&b.entries) {
            assert!((x.normalized_energy - y.normalized_energy).abs() <= 1e-12, "{x:?} {y:?}");
        }
    }
    let s = SurfaceIntegrand::new(Coefficient::Constant(1.0), 1.0);
    let a = estimate_ghom(&base, &s, &[0.0, 1.0]).unwrap();
    let b = estimate_ghom(&shifted, &s, &[0.0, 1.0]).unwrap();
    for (x, y) in a.entries.iter().zip(&b.entries) {
        assert_eq!(x.normalized_energy, y.normalized_energy);
    }
}

#[test]
fn lattice_fhom_is_convex_and_two_homogeneous() {
    let cfg = full_lattice();
    let samples: Vec<FhomSample> = [[0.5, 0.0], [1.0, 0.0], [1.5, 0.0], [1.0, 0.5], [1.0, -0.5]]
        .iter()
        .map(|xi| {
            let est = k_extrapolate(&estimate_fhom(&cfg, &unit_volume(), xi).unwrap()).unwrap();
            FhomSample {
                xi: xi.to_vec(),
                value: est.value,
                dispersion: est.dispersion,
            }
        })
        .collect();
    let report = check_convexity_fhom(&samples, 2.0).unwrap();
    assert!(report.convex(), "{report:?}");
    assert!(report.triples >= 2);
    // quadratic cell problems scale with |ξ|²
    assert!((samples[2].value - 9.0 * samples[0].value).abs() <= 1e-8 * samples[2].value);
}

#[test]
fn empty_medium_ghom_is_one_in_every_direction() {
    let mut cfg = full_lattice();
    cfg.generator = RealizationSeed::new(0, Generator::Empty);
    cfg.seeds = vec![0];
    let s = SurfaceIntegrand::new(Coefficient::Constant(1.0), 1.0);
    for nu in [[1.0, 0.3], [-0.2, 1.0], [1.0, 1.0]] {
        let ladder = estimate_ghom(&cfg, &s, &nu).unwrap();
        assert!(
            ladder.metrication.iter().all(|m| m.abs() > 1e-3 && m.abs() < 0.09),
            "{:?}",
            ladder.metrication
        );
        assert_eq!(k_extrapolate(&ladder).unwrap().value, 1.0);
    }
}
