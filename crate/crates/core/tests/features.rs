mod common;

use common::{circular_conv_magnitude, naive_idft2, rng};
use mlgface::features::*;
use mlgface::filterbank::{build_filter_bank, FilterParams};
use mlgface::normalize::elliptical_mask;
use mlgface::raster::{Mask, Raster};
use proptest::prelude::*;
use rand::Rng;

fn small_params(rng: &mut impl Rng, n: usize) -> FilterParams {
    FilterParams {
        lambda0: rng.random_range(2.0..5.0),
        s_lambda: rng.random_range(1.2..2.0),
        beta: rng.random_range(0.5..2.0),
        n_scales: 2,
        n_orients: rng.random_range(1..5),
        s_theta: rng.random_range(0.8..2.0),
        width: n,
        height: n,
    }
}

fn random_raster(rng: &mut impl Rng, w: usize, h: usize) -> Raster {
    Raster::from_fn(w, h, |_, _| rng.random_range(0.0..255.0))
}

#[test]
fn fft_path_matches_direct_convolution() {
    let mut r = rng(11);
    let n = 16;
    let mut worst: f64 = 0.0;
    for _case in 0..100 {
        let params = small_params(&mut r, n);
        let bank = build_filter_bank(params).unwrap();
        let img = random_raster(&mut r, n, n);
        let stack = filter_magnitudes(&img, &bank, &Mask::full(n, n)).unwrap();
        let o = r.random_range(0..params.n_orients);
        let s = r.random_range(0..params.n_scales);
        let kernel = naive_idft2(bank.filter(o, s).data(), n, n);
        let want = circular_conv_magnitude(img.data(), &kernel, n, n);
        for (a, b) in stack.get(o, s).data().iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst < 1e-6, "max abs deviation {worst}");
}

#[test]
fn impulse_response_is_kernel_magnitude() {
    let n = 16;
    let bank = build_filter_bank(small_params(&mut rng(3), n)).unwrap();
    let img = Raster::from_fn(n, n, |x, y| if (x, y) == (0, 0) { 1.0 } else { 0.0 });
    let stack = filter_magnitudes(&img, &bank, &Mask::full(n, n)).unwrap();
    let kernel = naive_idft2(bank.filter(0, 1).data(), n, n);
    for (v, (re, im)) in stack.get(0, 1).data().iter().zip(kernel) {
        assert!((v - re.hypot(im)).abs() < 1e-9);
    }
}

#[test]
fn symmetric_filters_give_real_responses() {
    let bank = build_filter_bank(FilterParams::default()).unwrap();
    let img = random_raster(&mut rng(5), 128, 128);
    let mf = MagnitudeFilter::new(&bank);
    let spec = mf.spectrum(&img).unwrap();
    for o in 0..6 {
        let resp = mf.response(&spec, o, 0);
        let peak = resp.iter().map(|c| c.re.abs()).fold(0.0, f64::max);
        assert!(resp.iter().all(|c| c.im.abs() <= 1e-9 * peak.max(1.0)));
    }
}

#[test]
fn parseval_energy() {
    let n = 16;
    let mut r = rng(8);
    let bank = build_filter_bank(small_params(&mut r, n)).unwrap();
    let img = random_raster(&mut r, n, n);
    let mf = MagnitudeFilter::new(&bank);
    let spec = mf.spectrum(&img).unwrap();
    let resp = mf.response(&spec, 0, 0);
    let spatial: f64 = resp.iter().map(|c| c.norm_sqr()).sum();
    let freq: f64 = spec
        .iter()
        .zip(bank.filter(0, 0).data())
        .map(|(c, g)| c.norm_sqr() * g * g)
        .sum::<f64>()
        / (n * n) as f64;
    assert!((spatial - freq).abs() <= 1e-9 * freq.max(1.0));
}

#[test]
fn zero_image_zero_stack() {
    let bank = build_filter_bank(FilterParams::default()).unwrap();
    let stack = filter_magnitudes(&Raster::zeros(128, 128), &bank, &elliptical_mask()).unwrap();
    assert!(stack
        .rasters()
        .iter()
        .all(|g| g.data().iter().all(|&v| v == 0.0)));
}

#[test]
fn masked_pixels_are_zero() {
    let bank = build_filter_bank(FilterParams::default()).unwrap();
    let mask = elliptical_mask();
    let img = random_raster(&mut rng(2), 128, 128);
    let stack = filter_magnitudes(&img, &bank, &mask).unwrap();
    for g in stack.rasters() {
        for (v, &keep) in g.data().iter().zip(mask.bits()) {
            if !keep {
                assert_eq!(*v, 0.0);
            }
        }
    }
}

#[test]
fn shape_mismatch_rejected() {
    let bank = build_filter_bank(FilterParams::default()).unwrap();
    assert!(filter_magnitudes(&Raster::zeros(64, 128), &bank, &Mask::full(64, 128)).is_err());
}

// Brute-force window scan written against the definition.
fn scan_oracle(mag: &Raster, mask: &Mask, win: usize, step: usize) -> Vec<Location> {
    let (w, h) = mag.dims();
    let mut out: Vec<Location> = Vec::new();
    let mut oy = 0;
    while oy < h {
        let mut ox = 0;
        while ox < w {
            let mut best: Option<(f64, usize, usize)> = None;
            for y in oy..(oy + win).min(h) {
                for x in ox..(ox + win).min(w) {
                    if mask.get(x, y) && best.is_none_or(|(b, _, _)| mag.get(x, y) > b) {
                        best = Some((mag.get(x, y), x, y));
                    }
                }
            }
            if let Some((_, x, y)) = best {
                let loc = Location { x, y };
                if !out.contains(&loc) {
                    out.push(loc);
                }
            }
            ox += step;
        }
        oy += step;
    }
    out
}

fn stack_of(rasters: Vec<Raster>, ns: usize) -> MagnitudeStack {
    let no = rasters.len() / ns;
    MagnitudeStack::new(no, ns, rasters).unwrap()
}

#[test]
fn toy_raster_hand_maxima() {
    let mut mag = Raster::zeros(8, 8);
    mag.set(1, 2, 5.0);
    mag.set(6, 1, 4.0);
    mag.set(5, 6, 3.0);
    mag.set(2, 7, 9.0);
    mag.set(3, 3, 9.0);
    let stack = stack_of(vec![mag.clone()], 1);
    let geom = WindowGeometry {
        width: 4,
        height: 4,
        step: 4,
    };
    let locs = select_locations(&stack, &Mask::full(8, 8), geom).unwrap();
    let want = vec![
        Location { x: 3, y: 3 },
        Location { x: 6, y: 1 },
        Location { x: 2, y: 7 },
        Location { x: 5, y: 6 },
    ];
    assert_eq!(locs.per_orient[0], want);
    assert_eq!(
        locs.per_orient[0],
        scan_oracle(&mag, &Mask::full(8, 8), 4, 4)
    );
}

#[test]
fn overlapping_windows_deduplicate() {
    let mut mag = Raster::zeros(8, 8);
    mag.set(4, 4, 1.0);
    let stack = stack_of(vec![mag.clone()], 1);
    let geom = WindowGeometry {
        width: 4,
        height: 4,
        step: 2,
    };
    let locs = select_locations(&stack, &Mask::full(8, 8), geom).unwrap();
    assert_eq!(
        locs.per_orient[0],
        scan_oracle(&mag, &Mask::full(8, 8), 4, 2)
    );
    assert_eq!(
        locs.per_orient[0]
            .iter()
            .filter(|l| **l == Location { x: 4, y: 4 })
            .count(),
        1
    );
}

#[test]
fn full_mask_gives_1024_windows() {
    let stack = stack_of(vec![Raster::filled(128, 128, 1.0); 6], 1);
    let locs = select_locations(&stack, &Mask::full(128, 128), WindowGeometry::default()).unwrap();
    assert!(locs.per_orient.iter().all(|l| l.len() == 1024));
}

#[test]
fn elliptical_mask_gives_821_windows() {
    let bank = build_filter_bank(FilterParams::default()).unwrap();
    let mask = elliptical_mask();
    let img = random_raster(&mut rng(21), 128, 128);
    let stack = filter_magnitudes(&img, &bank, &mask).unwrap();
    let locs = select_locations(&stack, &mask, WindowGeometry::default()).unwrap();
    assert!(locs.per_orient.iter().all(|l| l.len() == 821));
    let fv = extract_features(&stack, &locs).unwrap();
    assert_eq!(fv.len(), 19704);
    assert_eq!(
        WindowGeometry::default()
            .occupied_windows(&mask)
            .unwrap()
            .len(),
        821
    );
}

#[test]
fn window_larger_than_raster_rejected() {
    let stack = stack_of(vec![Raster::zeros(4, 4)], 1);
    let geom = WindowGeometry {
        width: 5,
        height: 2,
        step: 2,
    };
    assert!(select_locations(&stack, &Mask::full(4, 4), geom).is_err());
}

#[test]
fn gather_matches_direct_indexing() {
    let mut r = rng(4);
    for _ in 0..20 {
        let (no, ns) = (r.random_range(1..4), r.random_range(1..5));
        let rasters: Vec<Raster> = (0..no * ns)
            .map(|_| random_raster(&mut r, 16, 16))
            .collect();
        let stack = stack_of(rasters.clone(), ns);
        let per_orient: Vec<Vec<Location>> = (0..no)
            .map(|_| {
                (0..r.random_range(0..10))
                    .map(|_| Location {
                        x: r.random_range(0..16),
                        y: r.random_range(0..16),
                    })
                    .collect()
            })
            .collect();
        let locs = FeatureLocationSet {
            geometry: WindowGeometry::default(),
            per_orient: per_orient.clone(),
        };
        let fv = extract_features(&stack, &locs).unwrap();
        let mut want = Vec::new();
        for (o, list) in per_orient.iter().enumerate() {
            for l in list {
                for s in 0..ns {
                    want.push(rasters[o * ns + s].data()[l.y * 16 + l.x]);
                }
            }
        }
        assert_eq!(fv.values(), &want[..]);
    }
}

#[test]
fn gather_all_ones_and_single_location() {
    let stack = stack_of(vec![Raster::filled(8, 8, 1.0); 8], 4);
    let locs = select_locations(&stack, &Mask::full(8, 8), WindowGeometry::default()).unwrap();
    let fv = extract_features(&stack, &locs).unwrap();
    assert_eq!(fv.len(), 4 * locs.total());
    assert!(fv.values().iter().all(|&v| v == 1.0));

    let rasters: Vec<Raster> = (0..4)
        .map(|s| Raster::filled(8, 8, s as f64 + 0.5))
        .collect();
    let stack = stack_of(rasters, 4);
    let one = FeatureLocationSet {
        geometry: WindowGeometry::default(),
        per_orient: vec![vec![Location { x: 2, y: 5 }]],
    };
    assert_eq!(
        extract_features(&stack, &one).unwrap().values(),
        &[0.5, 1.5, 2.5, 3.5]
    );
    let bad = FeatureLocationSet {
        geometry: WindowGeometry::default(),
        per_orient: vec![vec![Location { x: 8, y: 0 }]],
    };
    assert!(extract_features(&stack, &bad).is_err());
}

#[test]
fn extraction_deterministic() {
    let bank = build_filter_bank(FilterParams::default()).unwrap();
    let mask = elliptical_mask();
    let img = random_raster(&mut rng(31), 128, 128);
    let run = || {
        let stack = filter_magnitudes(&img, &bank, &mask).unwrap();
        let locs = select_locations(&stack, &mask, WindowGeometry::default()).unwrap();
        extract_features(&stack, &locs).unwrap()
    };
    let a: Vec<u64> = run().values().iter().map(|v| v.to_bits()).collect();
    let b: Vec<u64> = run().values().iter().map(|v| v.to_bits()).collect();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn selection_matches_scan(seed in any::<u64>(), win in 1usize..6, step in 1usize..6, w in 6usize..14, h in 6usize..14) {
        let mut r = rng(seed);
        let mag = Raster::from_fn(w, h, |_, _| r.random_range(0..4) as f64);
        let mask = Mask::from_fn(w, h, |_, _| r.random_bool(0.7));
        let stack = stack_of(vec![mag.clone()], 1);
        let geom = WindowGeometry { width: win, height: win, step };
        let locs = select_locations(&stack, &mask, geom).unwrap();
        prop_assert_eq!(&locs.per_orient[0], &scan_oracle(&mag, &mask, win, step));
        prop_assert!(locs.per_orient[0].iter().all(|l| mask.get(l.x, l.y)));
    }
}
