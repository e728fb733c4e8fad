mod common;

use common::{brute_force_warp, random_iuv, rng, synthetic};
use dwnet::correspondence::{build_part_index, coarse_warp, downsample_grid, match_order, uv_distance2, KdTree, UvPoint};
use dwnet::warp::{identity_grid, to_normalized, to_relative};
use dwnet::IuvMap;
use proptest::prelude::*;
use rand::Rng;

fn warp_of(source: &IuvMap<f64>, driving: &IuvMap<f64>) -> dwnet::correspondence::CorrespondenceResult<f64> {
    coarse_warp(&build_part_index(source, 24), driving).unwrap()
}

/// IUV map whose part-1 pixels carry distinct UVs that encode position.
fn unique_uv_map(h: usize, w: usize, region: impl Fn(usize, usize) -> bool) -> IuvMap<f64> {
    let mut m = IuvMap::background(h, w);
    for y in 0..h {
        for x in 0..w {
            if region(y, x) {
                m.set(y, x, 1, x as f64 / w as f64, y as f64 / h as f64);
            }
        }
    }
    m
}

#[test]
fn index_lists_points_per_part() {
    let mut m = IuvMap::<f64>::background(3, 3);
    m.set(0, 0, 2, 0.1, 0.2);
    m.set(2, 1, 2, 0.3, 0.4);
    m.set(1, 1, 5, 0.5, 0.6);
    let idx = build_part_index(&m, 24);
    assert_eq!(idx.n_parts(), 24);
    assert_eq!(idx.source_size(), (3, 3));
    let p2: Vec<(u32, u32)> = idx.part(2).iter().map(|p| (p.x, p.y)).collect();
    assert_eq!(p2.len(), 2);
    assert!(p2.contains(&(0, 0)) && p2.contains(&(1, 2)));
    assert_eq!(idx.part(5).len(), 1);
    assert!(idx.part(1).is_empty() && idx.part(0).is_empty() && idx.part(25).is_empty());
}

#[test]
fn tree_matches_linear_scan_on_1000_points() {
    let mut r = rng(11);
    let points: Vec<UvPoint> = (0..1000)
        .map(|i| UvPoint {
            u: r.random_range(0..40) as f64 / 40.0,
            v: r.random::<f64>(),
            x: i % 37,
            y: i / 37,
        })
        .collect();
    let tree = KdTree::build(points.clone());
    for _ in 0..2000 {
        let (u, v) = (r.random_range(-0.2..1.2), r.random_range(-0.2..1.2));
        let best = points
            .iter()
            .map(|p| (uv_distance2(u, v, p), p))
            .min_by(|a, b| match_order(*a, *b))
            .unwrap();
        let (got, d) = tree.nearest(u, v).unwrap();
        assert_eq!((got, d), (best.1, best.0));
    }
    assert!(KdTree::build(Vec::new()).nearest(0.5, 0.5).is_none());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn kd_tree_warp_is_bit_identical_to_brute_force(
        seed in any::<u64>(), sh in 1usize..20, sw in 1usize..20, dh in 1usize..20, dw in 1usize..20,
        parts in 1u8..4, coarse in any::<bool>(),
    ) {
        let mut r = rng(seed);
        let src = random_iuv(sh, sw, parts, coarse, &mut r);
        let drv = random_iuv(dh, dw, parts, coarse, &mut r);
        let got = warp_of(&src, &drv);
        let (grid, matched) = brute_force_warp(&src, &drv);
        prop_assert_eq!(&got.matched, &matched);
        let same = got.grid.as_map().data().iter().zip(grid.as_map().data()).all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same);
    }

    #[test]
    fn self_correspondence_is_identity_on_foreground(seed in any::<u64>(), h in 1usize..24, w in 1usize..24) {
        let m = random_iuv(h, w, 3, false, &mut rng(seed));
        let res = warp_of(&m, &m);
        let id = identity_grid::<f64>(h, w).unwrap();
        prop_assert_eq!(&res.grid, &id);
        for k in 0..h * w {
            prop_assert_eq!(res.matched[k], m.parts()[k] != 0);
            prop_assert_eq!(res.match_distance[k], 0.0);
        }
    }

    #[test]
    fn matches_stay_within_their_part(seed in any::<u64>(), h in 2usize..16, w in 2usize..16) {
        let mut r = rng(seed);
        let src = random_iuv(h, w, 4, true, &mut r);
        let drv = random_iuv(h, w, 4, true, &mut r);
        let res = warp_of(&src, &drv);
        for y in 0..h {
            for x in 0..w {
                if !res.matched[y * w + x] {
                    continue;
                }
                let (gx, gy) = res.grid.get(y, x);
                let (sx, sy) = ((gx + 1.0) / 2.0 * (w - 1) as f64, (gy + 1.0) / 2.0 * (h - 1) as f64);
                prop_assert_eq!(src.part(sy.round() as usize, sx.round() as usize), drv.part(y, x));
            }
        }
    }

    #[test]
    fn coarse_warp_is_deterministic(seed in any::<u64>()) {
        let mut r = rng(seed);
        let src = random_iuv(17, 13, 3, true, &mut r);
        let drv = random_iuv(11, 19, 3, true, &mut r);
        prop_assert_eq!(warp_of(&src, &drv), warp_of(&src, &drv));
    }
}

#[test]
fn translated_body_maps_back_by_the_shift() {
    let inside = |y: usize, x: usize| (2..6).contains(&y) && (1..5).contains(&x);
    let src = unique_uv_map(8, 8, inside);
    let (dx, dy) = (2usize, 1usize);
    let mut drv = IuvMap::background(8, 8);
    for y in 0..8 {
        for x in 0..8 {
            if y >= dy && x >= dx && inside(y - dy, x - dx) {
                let (u, v) = src.uv(y - dy, x - dx);
                drv.set(y, x, 1, u, v);
            }
        }
    }
    let res = warp_of(&src, &drv);
    for y in 0..8 {
        for x in 0..8 {
            let (gx, gy) = res.grid.get(y, x);
            if drv.part(y, x) == 1 {
                assert_eq!((gx, gy), (to_normalized((x - dx) as f64, 8), to_normalized((y - dy) as f64, 8)));
            } else {
                assert!(!res.matched[y * 8 + x]);
                assert_eq!((gx, gy), (to_normalized(x as f64, 8), to_normalized(y as f64, 8)));
            }
        }
    }
}

#[test]
fn part_missing_from_source_stays_unmatched() {
    let src = unique_uv_map(6, 6, |y, _| y < 3);
    let mut drv = src.clone();
    drv.set(4, 4, 7, 0.5, 0.5);
    drv.set(5, 0, 7, 0.1, 0.9);
    let res = warp_of(&src, &drv);
    assert_eq!(res.matched_count(), src.foreground_count());
    assert!(!res.matched[4 * 6 + 4] && !res.matched[5 * 6]);
    assert_eq!(res.grid.get(4, 4), (to_normalized(4.0, 6), to_normalized(4.0, 6)));
}

#[test]
fn downsampled_identity_is_identity() {
    let m = unique_uv_map(256, 256, |y, x| (y + x) % 3 != 0);
    let res = warp_of(&m, &m);
    let low = downsample_grid(&res, 64, 64).unwrap();
    assert!(low.grid.max_abs_diff(&identity_grid(64, 64).unwrap()).unwrap() < 1e-12);
}

#[test]
fn downsampling_keeps_a_constant_shift() {
    let (dx, dy) = (0.125, -0.0625);
    let grid = dwnet::WarpGrid::from_fn(64, 64, |y, x| (to_normalized(x as f64, 64) + dx, to_normalized(y as f64, 64) + dy));
    let res = dwnet::correspondence::CorrespondenceResult {
        grid,
        matched: vec![true; 64 * 64],
        match_distance: vec![0.0; 64 * 64],
    };
    let low = to_relative(&downsample_grid(&res, 16, 16).unwrap().grid);
    assert!(low.as_map().plane(0).iter().all(|v| (v - dx).abs() < 1e-12));
    assert!(low.as_map().plane(1).iter().all(|v| (v - dy).abs() < 1e-12));
    assert!(downsample_grid(&res, 65, 16).is_err());
    assert!(downsample_grid(&res, 0, 16).is_err());
}

#[test]
fn downsampled_grid_is_within_one_cell_of_direct_low_resolution_warp() {
    let seq = synthetic(128, 4, 21);
    let s = &seq.sample.source;
    for d in &seq.sample.driving {
        let full = warp_of(&s.iuv, &d.iuv);
        let down = downsample_grid(&full, 32, 32).unwrap();
        let direct = warp_of(&s.iuv.subsample(32, 32).unwrap(), &d.iuv.subsample(32, 32).unwrap());
        let cell = 2.0 / 31.0;
        let (mut near, mut total) = (0, 0);
        for k in 0..32 * 32 {
            if !(down.matched[k] && direct.matched[k]) {
                continue;
            }
            let (a, b) = (down.grid.as_map().data(), direct.grid.as_map().data());
            let off = ((a[k] - b[k]).abs()).max((a[1024 + k] - b[1024 + k]).abs());
            total += 1;
            if off <= cell + 1e-9 {
                near += 1;
            }
        }
        assert!(total > 50);
        assert_eq!(near, total, "{near}/{total} within one cell");
    }
}
