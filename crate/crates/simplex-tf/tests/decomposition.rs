use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simplex_tf::decomp::{
    model_form_scale1, nested_p_universe, remainder_constant, select_maximal_intervals, stopping_time,
    summation_envelope, taylor_split_tree, toy_model_form, EtaProfile, SpatialSet, StoppingConfig, StoppingInputs,
    Theta, DEFAULT_TOY_DECAY,
};
use simplex_tf::experiments::{random_input, InputFamily};
use simplex_tf::grid::{conjugate_exponent, hl_maximal, lp_norm, power_sum, GridSpec};
use simplex_tf::martingale::{cell_square_function, distribution_function};
use simplex_tf::tiles::{
    build_trees, check_strongly_disjoint, covering_cube, is_sparse, random_rank1_universe, single_scale_universe,
    sparse_split, tree_members, Cube, DyadicInterval, Shift, Tile, TileConfig, TriTile, UniverseParams, Q,
};

/// Threefold dilate `[c - 3|w|/2, c + 3|w|/2)` in exact arithmetic.
fn dilate3(w: &DyadicInterval) -> (Q, Q) {
    let half = w.len() * Q::new(3, 2);
    (w.center() - half, w.center() + half)
}

/// `P <= P'`: strict time inclusion and `3 omega_{P'}` inside `3 omega_P`, or equality.
fn below(p: &Tile, top: &Tile) -> bool {
    let ((pl, pr), (tl, tr)) = (dilate3(&p.freq), dilate3(&top.freq));
    p == top
        || (p.time.left() >= top.time.left()
            && p.time.right() <= top.time.right()
            && p.time != top.time
            && tl >= pl
            && tr <= pr)
}

#[test]
fn top_enumeration_matches_exhaustive_trees() {
    let cfg = TileConfig::default();
    for seed in 0..20u64 {
        let u = random_rank1_universe(seed, &UniverseParams { size: 50, ..Default::default() }, &cfg);
        assert!(u.len() <= 50);
        for j in 1..=3 {
            for top in &u {
                let exhaustive: Vec<TriTile> =
                    u.iter().filter(|p| below(&p.component(j), &top.component(j))).copied().collect();
                assert_eq!(tree_members(&u, top, j), exhaustive);
            }
            let trees = build_trees(&u, j);
            let mut covered: Vec<TriTile> = trees.iter().flat_map(|t| t.members.iter().copied()).collect();
            covered.sort();
            let mut sorted = u.clone();
            sorted.sort();
            assert_eq!(covered, sorted, "trees partition the universe");
            assert!(trees.iter().all(|t| t.is_valid() && t.members.contains(&t.top)));
        }
    }
}

#[test]
fn maximal_intervals_obey_the_averaging_bound() {
    let spec = GridSpec::new(2048, 64.0).unwrap();
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = SpatialSet::random_union(spec, &mut rng, 8, 0.3).indicator();
        let l1 = lp_norm(&f, 1.0).unwrap();
        for n in 0..8 {
            let total: f64 = select_maximal_intervals(&f, 2f64.powi(-n)).unwrap().iter().map(DyadicInterval::len_f64).sum();
            // Disjoint intervals with average at least 2^-n: the constant is one.
            assert!(total <= 2f64.powi(n) * l1 * (1.0 + 1e-12), "seed {seed}, n {n}");
        }
    }
}

#[test]
fn maximal_function_weak_type_constant() {
    let spec = GridSpec::new(1024, 64.0).unwrap();
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = SpatialSet::random_union(spec, &mut rng, 1 + seed as usize % 6, 0.2);
        let m = hl_maximal(&e.indicator());
        for i in 1..=40 {
            let lambda = i as f64 / 40.0;
            let level = m.samples().iter().filter(|z| z.re >= lambda).count() as f64 * spec.dx();
            worst = worst.max(level * lambda / e.measure());
        }
    }
    assert!(worst <= 6.0, "C_w = {worst}");
}

#[test]
fn covering_cubes_for_random_boxes() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = Q::from_integer(0);
    for _ in 0..100 {
        let dim = rng.gen_range(1..=3);
        let lo: Vec<Q> = (0..dim).map(|_| Q::new(rng.gen_range(0..64 * 1024), 1024)).collect();
        let side = Q::new(rng.gen_range(16..4096), 1024);
        let cube = covering_cube(&lo, side).unwrap();
        for (a, x) in lo.iter().enumerate() {
            let iv = cube.axis(a);
            let margin = iv.len() * Q::new(3, 20);
            assert!(iv.left() + margin <= *x && *x + side <= iv.right() - margin);
        }
        let ratio = cube.axis(0).len() / side;
        worst = worst.max(ratio);
    }
    // The smallest admissible scale gives side(Q') < 2 / 0.7 * side * 2, which is below 5.46.
    assert!(worst < Q::new(546, 100), "{worst}");
}

#[test]
fn sparse_split_of_random_cube_families() {
    let cfg = TileConfig::default();
    let shifts = vec![Shift::Zero, Shift::Third];
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cubes: Vec<Cube> = (0..200)
            .map(|_| Cube { scale: rng.gen_range(0..4), pos: vec![rng.gen_range(0..1 << 16), rng.gen_range(0..1 << 16)], shifts: shifts.clone() })
            .collect();
        let families = sparse_split(&cubes, &cfg).unwrap();
        assert!(families.len() <= 64, "{} subfamilies", families.len());
        assert!(families.iter().all(|f| is_sparse(f, &cfg)));
        assert_eq!(families.iter().map(Vec::len).sum::<usize>(), cubes.len());
    }
}

#[test]
fn stopping_time_families_are_strongly_disjoint() {
    let spec = GridSpec::new(2048, 64.0).unwrap();
    let cfg = StoppingConfig::default();
    for seed in 0..8u64 {
        let u = random_rank1_universe(seed, &UniverseParams { size: 150, ..Default::default() }, &cfg.tiles);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 50);
        let e = [0; 4].map(|_| SpatialSet::random_union(spec, &mut rng, 6, 0.4));
        let d = stopping_time(&u, &StoppingInputs::from_sets(e), &cfg).unwrap();
        for fam in d.families() {
            let trees: Vec<_> = fam.trees.iter().map(|t| t.tree.clone()).collect();
            assert!(check_strongly_disjoint(&trees, d.tree_type));
        }
        let mut sorted = u.clone();
        sorted.sort();
        assert_eq!(d.recombined(), sorted);
    }
}

#[test]
fn unit_scale_buckets_recombine_and_sit_under_the_envelope() {
    let spec = GridSpec::new(2048, 64.0).unwrap();
    let shifts = [Shift::Zero, Shift::Third, Shift::TwoThirds];
    let u = single_scale_universe(0, 32, 0, 4, 4, shifts).unwrap();
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e: Vec<SpatialSet> = (0..3).map(|_| SpatialSet::random_union(spec, &mut rng, 5, 0.3)).collect();
        let form = model_form_scale1(&u, &e[0].indicator(), &e[1].indicator(), &e[2].indicator()).unwrap();
        assert!((form.bucket_sum() - form.total).norm() <= 1e-10 * form.total.norm().max(1e-300));
        let buckets: BTreeMap<[i32; 3], f64> = form.buckets.iter().map(|(k, v)| (*k, v.norm())).collect();
        let env = summation_envelope(&buckets, Theta::near_corner(0.05), [e[0].measure(), e[1].measure(), e[2].measure()], 1.0).unwrap();
        assert!(env.ratio() >= 1.0, "seed {seed}: ratio {}", env.ratio());
    }
}

#[test]
fn toy_tail_is_the_boundary_layer_of_the_weight() {
    let spec = GridSpec::new(2048, 64.0).unwrap();
    let shifts = [Shift::Zero, Shift::Third, Shift::TwoThirds];
    let q = single_scale_universe(2, 16, 0, 16, 16, shifts).unwrap();
    let p = nested_p_universe(&q, 2, shifts, 2);
    for seed in 0..2u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fs: Vec<_> = (0..4).map(|_| SpatialSet::random_union(spec, &mut rng, 6, 0.4).indicator()).collect();
        let mut previous = 1.0;
        for decay in [4, DEFAULT_TOY_DECAY, 12] {
            let toy = toy_model_form(&q, &p, 2, [&fs[0], &fs[1], &fs[2], &fs[3]], decay).unwrap();
            assert!(toy.pairs > 0 && toy.full > 0.0);
            // Mass of (1 + t)^-N outside an interval, relative to inside: 2 / (N - 1).
            let layer = 2.0 / (decay as f64 + 1.0);
            let tail = toy.tail_fraction();
            assert!(tail < previous && tail >= 0.5 * layer && tail <= 1.5 * layer, "N = {decay}: tail {tail}");
            previous = tail;
            let buckets: Vec<f64> = toy.by_distance.values().copied().collect();
            for w in buckets.windows(2) {
                assert!(w[1] <= 2f64.powi(2 - decay) * w[0], "N = {decay}: {buckets:?}");
            }
        }
    }
}

#[test]
fn remainder_constant_at_scale_gap_three() {
    let spec = GridSpec::new(2048, 64.0).unwrap();
    let z = Shift::Zero;
    let iv = |j: i32, k: i64| DyadicInterval::new(j, k, z).unwrap();
    let mut constant = 0.0f64;
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q: Vec<TriTile> = (0..4).map(|k| TriTile::new(iv(2, k), [iv(-2, 6 + seed as i64), iv(-2, 10), iv(-2, 14)]).unwrap()).collect();
        let p = nested_p_universe(&q, 3, [z; 3], 1);
        let fs: Vec<_> = (0..4).map(|_| SpatialSet::random_union(spec, &mut rng, 6, 0.4).indicator()).collect();
        for tree in build_trees(&q, 1) {
            let split = taylor_split_tree(&tree, &p, [&fs[0], &fs[1], &fs[2], &fs[3]], EtaProfile::Bump, 32, 4).unwrap();
            assert!(split.defect() <= split.tail_bound + 64.0 * f64::EPSILON * split.unsplit.norm());
            constant = constant.max(remainder_constant(&split.coefficients, 4));
        }
    }
    assert!(constant > 0.0 && constant <= 1e3, "C = {constant}");
}

#[test]
fn cell_square_function_preserves_l2() {
    let spec = GridSpec::new(256, 16.0).unwrap();
    let q = conjugate_exponent(4.0);
    for seed in 0..9u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_input(InputFamily::ALL[seed as usize % 3], spec, &mut rng);
        let profile = distribution_function(&f, q).unwrap();
        let kept = simplex_tf::martingale::cell_project(&f, &profile.freqs);
        for level in [0, 3, 6] {
            let sq = cell_square_function(&f, &profile, level).unwrap();
            let (a, b) = (power_sum(&sq, 2.0).sqrt(), power_sum(&kept, 2.0).sqrt());
            assert!((a - b).abs() <= 1e-10 * b, "seed {seed}, level {level}");
        }
    }
}
