use ifss_core::metrics::{confusion_counts, evaluate, hausdorff_asd, surface_error_map, volume_mm3};
use ifss_core::volume::{MaskVolume, Spacing};
use ndarray::Array3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::{oracle_directed, oracle_hd_asd, oracle_surface, random_mask};

#[test]
fn all_pairs_oracle_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let dims = (rng.random_range(1..=16), rng.random_range(1..=16), rng.random_range(1..=16));
        let s = [rng.random_range(0.2..3.0), rng.random_range(0.2..3.0), rng.random_range(0.2..3.0)];
        let spacing = Spacing::new(s[0], s[1], s[2]).unwrap();
        let p = random_mask(&mut rng, dims);
        let g = random_mask(&mut rng, dims);
        let expected = oracle_hd_asd(&p, &g, s);
        let pm = MaskVolume::new(p, spacing).unwrap();
        let gm = MaskVolume::new(g, spacing).unwrap();
        assert_eq!(hausdorff_asd(&pm, &gm, spacing).unwrap(), expected);

        let c = confusion_counts(&pm, &gm).unwrap();
        let d = c.dice();
        assert!((c.iou() - d / (2.0 - d)).abs() <= 1e-9);

        let map = surface_error_map(&pm, &gm, spacing).unwrap();
        let map_max = map.iter().map(|m| m.1).fold(0.0, f64::max);
        let directed = oracle_directed(&oracle_surface(pm.data()), &oracle_surface(gm.data()), s);
        assert_eq!(map_max, directed.iter().copied().fold(0.0, f64::max));
    }
}

fn small_mask() -> impl Strategy<Value = Array3<u8>> {
    (1usize..7, 1usize..7, 1usize..7, any::<u64>()).prop_map(|(d, h, w, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        random_mask(&mut rng, (d, h, w))
    })
}

fn pad(m: &Array3<u8>, dims: (usize, usize, usize), off: (usize, usize, usize)) -> Array3<u8> {
    let mut out = Array3::zeros(dims);
    for ((z, y, x), &v) in m.indexed_iter() {
        out[[z + off.0, y + off.1, x + off.2]] = v;
    }
    out
}

fn mv(a: Array3<u8>, s: Spacing) -> MaskVolume {
    MaskVolume::new(a, s).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distances_are_symmetric(seed in any::<u64>(), s in (0.2f64..3.0, 0.2f64..3.0, 0.2f64..3.0)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sp = Spacing::new(s.0, s.1, s.2).unwrap();
        let a = mv(random_mask(&mut rng, (8, 9, 10)), sp);
        let b = mv(random_mask(&mut rng, (8, 9, 10)), sp);
        let (h1, a1) = hausdorff_asd(&a, &b, sp).unwrap();
        let (h2, a2) = hausdorff_asd(&b, &a, sp).unwrap();
        prop_assert_eq!(h1, h2);
        prop_assert!((a1 - a2).abs() <= 1e-12 * a1.max(1.0));
    }

    #[test]
    fn joint_translation_changes_nothing(p in small_mask(), off in (1usize..5, 1usize..5, 1usize..5)) {
        let sp = Spacing::new(0.7, 1.1, 0.4).unwrap();
        let g = p.mapv(|v| 1 - v);
        prop_assume!(g.iter().any(|&v| v != 0));
        let (d, h, w) = p.dim();
        // Both placements keep a background margin so no voxel touches the
        // volume border, where surface membership would change.
        let big = (d + 5, h + 5, w + 5);
        let at = |o| evaluate(&mv(pad(&p, big, o), sp), &mv(pad(&g, big, o), sp), sp).unwrap();
        prop_assert_eq!(at((1, 1, 1)), at(off));
    }

    #[test]
    fn spacing_scales_distances_and_volumes(seed in any::<u64>(), k in -3i32..4) {
        // Powers of two keep the scaling exact in floating point.
        let f = 2f64.powi(k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_mask(&mut rng, (6, 7, 8));
        let b = random_mask(&mut rng, (6, 7, 8));
        let s1 = Spacing::new(0.6, 1.3, 0.9).unwrap();
        let s2 = s1.scaled(f);
        let (h1, a1) = hausdorff_asd(&mv(a.clone(), s1), &mv(b.clone(), s1), s1).unwrap();
        let (h2, a2) = hausdorff_asd(&mv(a.clone(), s2), &mv(b.clone(), s2), s2).unwrap();
        prop_assert_eq!(h2, h1 * f);
        prop_assert_eq!(a2, a1 * f);
        prop_assert_eq!(volume_mm3(&mv(a.clone(), s2), s2), volume_mm3(&mv(a, s1), s1) * f * f * f);
    }
}
