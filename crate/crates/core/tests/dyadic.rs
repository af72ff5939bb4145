use std::collections::BTreeSet;

use dunkl_sparse::dyadic::{
    build_bundle, build_dyadic_system, containing_cube, from_nets, scale_range, verify_dyadic_properties,
    verify_sparse, FamilyCube, SparseFamily, DEFAULT_INFLATION_CAP, INNER_FLOOR,
};
use dunkl_sparse::measure::{build_grid, BallSpec, GridParams, Metric, WeightedGrid};
use dunkl_sparse::reflection::{catalog, RootSystem};
use proptest::prelude::*;

fn unit_line(res: usize) -> WeightedGrid {
    build_grid(&GridParams::cube(1, 0.0, 1.0, res), &RootSystem::trivial(1)).unwrap()
}

#[test]
fn standard_midpoints_give_standard_intervals() {
    let res = 64;
    let g = unit_line(res);
    let (k_min, k_max) = (0, 4);
    // Grid point just left of each dyadic midpoint; all centers shift by the same half cell.
    let nets: Vec<Vec<usize>> = (k_min..=k_max)
        .map(|k| {
            let per = res >> k;
            (0..1usize << k).map(|j| j * per + per / 2 - 1).collect()
        })
        .collect();
    let s = from_nets(&g, 0.5, k_min, nets, 0).unwrap();
    for (l, level) in s.levels.iter().enumerate() {
        let per = res >> l;
        let mut got: Vec<BTreeSet<usize>> = level.iter().map(|c| c.members.iter().copied().collect()).collect();
        got.sort();
        let oracle: Vec<BTreeSet<usize>> = (0..1usize << l).map(|j| (j * per..(j + 1) * per).collect()).collect();
        assert_eq!(got, oracle, "level {l}");
    }
    let rep = verify_dyadic_properties(&s, &g);
    assert!(rep.all_pass());
    assert!(rep.inner_constant >= 1.0 / 6.0, "{}", rep.inner_constant);
    assert!((rep.doubling_largest_child - 2.0).abs() < 1e-12);
}

#[test]
fn lebesgue_net_example() {
    let g = unit_line(64);
    let s = build_dyadic_system(&g, 0.5, 1, 1, 9).unwrap();
    let centers: Vec<usize> = s.levels[0].iter().map(|c| c.center).collect();
    assert!((2..=3).contains(&centers.len()));
    assert_eq!(build_dyadic_system(&g, 0.5, -1, -1, 3).unwrap().levels[0].len(), 1);
}

#[test]
fn every_catalog_system_passes_in_two_dimensions() {
    for (key, kappa) in [("trivial:2", vec![]), ("a1xa1", vec![1.0, 1.0]), ("b2", vec![1.0, 0.5]), ("i2:3", vec![1.0])] {
        let mut p = GridParams::cube(2, -1.0, 1.0, 32);
        p.clip_radius = (key == "i2:3").then_some(1.0);
        let g = build_grid(&p, &catalog(key, &kappa).unwrap()).unwrap();
        let (k0, k1) = scale_range(&g, 0.5).unwrap();
        let s = build_dyadic_system(&g, 0.5, k0, k1, 4).unwrap();
        let rep = verify_dyadic_properties(&s, &g);
        assert!(rep.all_pass(), "{key}: {rep:?}");
        assert!(rep.inner_constant >= INNER_FLOOR);
        if !g.has_exact_mirrors() {
            continue;
        }
        // Cubes are unions of orbits.
        for l in 0..s.num_levels() {
            for q in 0..g.len() {
                for e in 0..g.group.order() {
                    if let Some(m) = g.mirror(e, q) {
                        assert_eq!(s.cube_of(l, q), s.cube_of(l, m), "{key} level {l}");
                    }
                }
            }
        }
    }
}

#[test]
fn containing_cubes_on_lebesgue_bundle() {
    use rand::{Rng, SeedableRng};
    let g = build_grid(&GridParams::cube(1, -1.0, 1.0, 256), &RootSystem::trivial(1)).unwrap();
    let (k0, k1) = scale_range(&g, 0.5).unwrap();
    let bundle = build_bundle(&g, 0.5, k0, k1, 1, 3).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let c = rng.gen_range(-1.0..1.0);
        let r = (rng.gen_range((0.02f64).ln()..(1.5f64).ln())).exp();
        let hit = containing_cube(&g, &bundle, &BallSpec::new(vec![c], r, Metric::Dunkl).unwrap(), DEFAULT_INFLATION_CAP)
            .unwrap();
        let cube = bundle.cube(hit.cube);
        let members = g.ball_members(&BallSpec::new(vec![c], r, Metric::Dunkl).unwrap());
        assert!(members.iter().all(|m| cube.members.contains(m)));
        worst = worst.max(hit.inflation);
    }
    assert!(worst <= 12.0, "{worst}");
    let all = containing_cube(&g, &bundle, &BallSpec::new(vec![0.0], 5.0, Metric::Dunkl).unwrap(), 32.0).unwrap();
    assert_eq!(all.cube.level, 0);
}

#[test]
fn doubling_constant_stable_under_refinement() {
    let rs = catalog("a1", &[1.0]).unwrap();
    let mut cs = Vec::new();
    for res in [128, 256] {
        let g = build_grid(&GridParams::cube(1, -1.0, 1.0, res), &rs).unwrap();
        let (k0, k1) = scale_range(&g, 0.5).unwrap();
        cs.push(build_bundle(&g, 0.5, k0, k1, 1, 3).unwrap().doubling_constant());
    }
    assert!(cs[1] / cs[0] <= 2.0 && cs[0] / cs[1] <= 2.0, "{cs:?}");
}

#[test]
fn sparse_family_overlap_rules() {
    let g = unit_line(16);
    let all: Vec<usize> = (0..16).collect();
    let q = |members: Vec<usize>, witness: Vec<usize>| FamilyCube {
        cube: dunkl_sparse::dyadic::CubeRef { system: 0, level: 0, index: 0 },
        measure: g.measure_of(&members),
        members,
        witness,
    };
    let one = SparseFamily { cubes: vec![q(all.clone(), all.clone())], theta: 1.0, overlap_bound: 1 };
    assert!(verify_sparse(&one, &g).ok);
    let two = SparseFamily {
        cubes: vec![q(all.clone(), (0..8).collect()), q((0..8).collect(), (0..8).collect())],
        theta: 0.5,
        overlap_bound: 1,
    };
    let c = verify_sparse(&two, &g);
    assert!(!c.ok && c.max_overlap == 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn random_seeds_build_valid_nested_systems(seed in any::<u64>(), res in prop::sample::select(vec![48usize, 64, 96])) {
        let g = build_grid(&GridParams::cube(1, -1.0, 1.0, res), &catalog("a1", &[0.5]).unwrap()).unwrap();
        let (k0, k1) = scale_range(&g, 0.5).unwrap();
        let s = build_dyadic_system(&g, 0.5, k0, k1, seed).unwrap();
        prop_assert!(verify_dyadic_properties(&s, &g).all_pass());
        for l in 1..s.num_levels() {
            for (i, c) in s.levels[l].iter().enumerate() {
                let parent = &s.levels[l - 1][c.parent.unwrap()];
                prop_assert!(parent.children.contains(&i));
                prop_assert!(c.members.iter().all(|m| parent.members.contains(m)));
            }
            let total: usize = s.levels[l].iter().map(|c| c.members.len()).sum();
            prop_assert_eq!(total, g.len());
        }
        let again = build_dyadic_system(&g, 0.5, k0, k1, seed).unwrap();
        prop_assert_eq!(again.levels, s.levels);
    }
}
