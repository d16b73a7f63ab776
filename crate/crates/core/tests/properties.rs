use perfhom::discretize::{
    cell_pairs, msp_parts, rasterize, surface_energy, volume_energy, Coefficient, ExactSum, Grid, LabelField, Masks, Region, SbvField,
    ScalarField, SurfaceIntegrand, VolumeIntegrand,
};
use perfhom::extension::{dyadic_schedule, extend_sbv_domain, synthetic_field, ExtensionOptions, FieldSpec};
use perfhom::geometry::{plane_section_area, DomainParams, Generator, RealizationSeed, Window};
use perfhom::solvers::{flat_reference_energy, FlowGraph};
use proptest::prelude::*;

fn random_masks(n: usize, m: usize, holes: &[bool]) -> Masks {
    let mut masks = Masks::plain(Grid::from_cells(n, m, 1.0 / m as f64, 1, vec![0.0; n]).unwrap());
    for c in 0..masks.grid.num_cells() {
        masks.hole_cells[c] = !masks.frame_cells[c] && holes[c % holes.len()];
    }
    masks
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Terms `k·2^-40` sum exactly in `i128`; the conversion rounds once.
    #[test]
    fn exact_sum_matches_integer_oracle(terms in proptest::collection::vec(0u64..(1 << 52), 1..200), order in any::<u64>()) {
        let scale = 2f64.powi(-40);
        let exact: i128 = terms.iter().map(|&k| k as i128).sum();
        let expected = exact as f64 * scale;
        let mut shuffled = terms.clone();
        let len = shuffled.len();
        shuffled.rotate_left((order as usize) % len);
        shuffled.reverse();
        for list in [&terms, &shuffled] {
            let mut s = ExactSum::default();
            for &k in list.iter() {
                s.add(k as f64 * scale);
            }
            prop_assert_eq!(s.value(), expected);
        }
    }

    #[test]
    fn surface_energy_is_symmetric_under_relabelling(
        labels in proptest::collection::vec(0u8..2, 64),
        holes in proptest::collection::vec(any::<bool>(), 7),
        w in 0.0f64..1.0,
    ) {
        let masks = random_masks(2, 8, &holes);
        let s = SurfaceIntegrand::new(Coefficient::Constant(1.3), w);
        let u = LabelField { labels };
        prop_assert_eq!(surface_energy(&u, &s, &masks).unwrap(), surface_energy(&u.complement(), &s, &masks).unwrap());
    }

    #[test]
    fn energies_are_monotone_in_the_hole_weight(
        values in proptest::collection::vec(-2.0f64..2.0, 81),
        labels in proptest::collection::vec(0u8..2, 64),
        holes in proptest::collection::vec(any::<bool>(), 5),
        w1 in 0.0f64..1.0,
        w2 in 0.0f64..1.0,
    ) {
        let masks = random_masks(2, 8, &holes);
        let (lo, hi) = (w1.min(w2), w1.max(w2));
        let u = ScalarField { values };
        let q = VolumeIntegrand::new(2.5, Coefficient::Constant(0.7), 1.0);
        prop_assert!(volume_energy(&u, &q.with_hole_weight(lo), &masks).unwrap() <= volume_energy(&u, &q.with_hole_weight(hi), &masks).unwrap());
        let l = LabelField { labels };
        let s = SurfaceIntegrand::new(Coefficient::Constant(1.0), 1.0);
        prop_assert!(surface_energy(&l, &s.with_hole_weight(lo), &masks).unwrap() <= surface_energy(&l, &s.with_hole_weight(hi), &masks).unwrap());
    }

    /// Without jumps the bulk of `MS^p` is the volume energy with unit
    /// coefficient.
    #[test]
    fn msp_bulk_matches_volume_energy(values in proptest::collection::vec(-3.0f64..3.0, 125), p in 1.2f64..4.0) {
        let masks = random_masks(3, 4, &[false]);
        let u = ScalarField { values };
        let q = VolumeIntegrand::new(p, Coefficient::Constant(1.0), 1.0);
        let (bulk, jump) = msp_parts(&SbvField::from_scalar(&masks.grid, u.clone()), p, &masks, Region::All).unwrap();
        let vol = volume_energy(&u, &q, &masks).unwrap();
        prop_assert_eq!(jump, 0.0);
        prop_assert!((bulk - vol).abs() <= 1e-12 * vol.max(1e-300));
    }

    /// Max-flow value against the minimum over all s–t cuts.
    #[test]
    fn max_flow_equals_brute_force_min_cut(caps in proptest::collection::vec((0usize..8, 0usize..8, 0u32..20), 1..30)) {
        let nodes = 8;
        let mut g = FlowGraph::new(nodes);
        for &(u, v, c) in &caps {
            if u != v {
                g.add_edge(u, v, c as f64, 0.0);
            }
        }
        let r = g.max_flow(0, nodes - 1);
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << nodes) {
            if mask & 1 == 0 || mask & (1 << (nodes - 1)) != 0 {
                continue;
            }
            let cut: f64 = caps
                .iter()
                .filter(|&&(u, v, _)| u != v && mask & (1 << u) != 0 && mask & (1 << v) == 0)
                .map(|&(_, _, c)| c as f64)
                .sum();
            best = best.min(cut);
        }
        prop_assert_eq!(r.flow_value, best);
        prop_assert_eq!(r.cut_capacity, best);
        prop_assert!(r.source_side[0] && !r.source_side[nodes - 1]);
    }

    #[test]
    fn schedule_is_geometric_and_ends_below_delta(delta in 0.01f64..1.0, a in 1.05f64..20.0, b in 0.0f64..1.0) {
        let r_star = delta * a;
        let r = delta + b * (r_star - delta) * 0.999;
        let s = dyadic_schedule(r, delta, r_star).unwrap();
        prop_assert!(s.r_delta < delta);
        prop_assert_eq!(s.radii.len(), s.n_delta + 1);
        for w in s.radii.windows(2) {
            prop_assert!((w[0] / w[1] - s.ratio).abs() <= 1e-12 * s.ratio);
        }
        let steps = s.steps(r);
        prop_assert_eq!(steps.len(), s.n_delta + 1);
        prop_assert!(steps.windows(2).all(|w| w[1].r_in < w[0].r_in && w[0].commit_from == w[1].r_in));
        prop_assert_eq!(steps.last().unwrap().commit_from, 0.0);
    }

    /// Discrete flat area against the exact section area: the 8-neighbour
    /// perimeter is within its metrication error of the truth.
    #[test]
    fn flat_reference_is_close_to_the_section_area(angle in 0.0f64..std::f64::consts::TAU, off in -0.2f64..0.2) {
        let grid = Grid::from_cells(2, 64, 1.0 / 64.0, 1, vec![0.0, 0.0]).unwrap();
        let nu = [angle.cos(), angle.sin()];
        let x = [0.5 + off, 0.5 - off];
        let exact = plane_section_area(&grid.origin, grid.t, &x, &nu);
        let discrete = flat_reference_energy(&grid, &x, &nu, &cell_pairs(&grid));
        prop_assert!((discrete / exact - 1.0).abs() < 0.09, "{} vs {}", discrete, exact);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Values outside the holes are untouched and the output stays in the
    /// input range.
    #[test]
    fn extension_keeps_data_and_range(seed in 0u64..1000, jump in 0.0f64..2.0) {
        let domain = DomainParams::new(2, 0.25, 0.45);
        let gen = Generator::HardcoreRejection { intensity: 1.0, r_min: 0.08, r_max: 0.4 };
        let g = RealizationSeed::new(seed, gen).generate(&domain, &Window::at_origin(2, 2.5)).unwrap();
        let masks = rasterize(&g, 0.0625, 1).unwrap();
        let u = synthetic_field(&masks, &g, &FieldSpec::Mixed { amplitude: 0.4, jump }, seed);
        let (out, report) = extend_sbv_domain(&u, &g, &masks, &ExtensionOptions::default()).unwrap();
        let known: Vec<f64> = u.values.iter().copied().filter(|v| !v.is_nan()).collect();
        let lo = known.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = known.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (a, b) in u.values.iter().zip(&out.values) {
            if !a.is_nan() {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            prop_assert!(lo <= *b && *b <= hi);
        }
        prop_assert!(report.ratio.is_finite());
    }
}
