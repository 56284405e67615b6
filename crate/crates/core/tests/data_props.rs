use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ddet::data::{
    bicubic_resize_to, degrade, gaussian_blur, gaussian_kernel, random_shift, sample_patch_coords, sample_patches,
    synthetic_image, synthetic_pairs, DegradeConfig,
};
use ddet::Tensor;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gaussian_kernel_is_normalized(sigma in 0.1f64..4.0) {
        let radius = (3.0 * sigma).ceil() as usize;
        let k = gaussian_kernel(sigma, radius);
        prop_assert_eq!(k.len(), 2 * radius + 1);
        prop_assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..radius {
            prop_assert_eq!(k[i], k[2 * radius - i]);
        }
    }

    #[test]
    fn blur_preserves_constants_and_mass(v in 0.0f64..1.0, sigma in 0.3f64..3.0, h in 1usize..20, w in 1usize..20, seed in any::<u64>()) {
        let radius = (3.0 * sigma).ceil() as usize;
        let c = Tensor::<f64>::full([1, 3, h, w], v);
        prop_assert!(gaussian_blur(&c, sigma, radius).unwrap().max_abs_diff(&c).unwrap() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::<f64>::uniform([1, 1, h, w], 0.0, 1.0, &mut rng);
        let y = gaussian_blur(&x, sigma, radius).unwrap();
        prop_assert!((y.sum() - x.sum()).abs() < 1e-9 * x.sum().max(1.0));
    }

    #[test]
    fn bicubic_keeps_range_and_constants(v in 0.0f64..1.0, h in 2usize..24, w in 2usize..24, oh in 1usize..40, ow in 1usize..40, seed in any::<u64>()) {
        let c = Tensor::<f64>::full([1, 3, h, w], v);
        let r = bicubic_resize_to(&c, oh, ow).unwrap();
        prop_assert_eq!(r.shape(), [1, 3, oh, ow]);
        prop_assert!(r.data().iter().all(|x| (x - v).abs() < 1e-12));
        let img = synthetic_image(h, w, seed).cast::<f64>();
        let r = bicubic_resize_to(&img, oh, ow).unwrap();
        prop_assert!(r.data().iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn shift_composes_with_integer_offsets(seed in any::<u64>(), dx in -3i32..4, dy in -3i32..4) {
        let img = synthetic_image(16, 16, seed);
        let s = random_shift(&img, dx as f64, dy as f64);
        for y in 4..12 {
            for x in 4..12 {
                let sy = (y as i32 - dy) as usize;
                let sx = (x as i32 - dx) as usize;
                prop_assert!((s.at(0, 1, y, x) - img.at(0, 1, sy, sx)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn degrade_stays_in_unit_range(seed in any::<u64>(), scale in 2u32..5, shift in 0.0f64..1.5) {
        let hr = synthetic_image(32, 28, seed);
        let cfg = DegradeConfig { shift_max: shift, seed, ..DegradeConfig::for_scale(scale) };
        let pair = degrade(&hr, &cfg, "p").unwrap();
        prop_assert_eq!(pair.lr.shape(), hr.shape());
        prop_assert!(pair.lr.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    /// Cropping after the shift equals shifting then cropping, away from borders.
    #[test]
    fn patches_are_aligned_with_shift(seed in any::<u64>(), dx in -0.75f64..0.75, dy in -0.75f64..0.75) {
        let img = synthetic_image(40, 40, seed);
        let full = random_shift(&img, dx, dy);
        let crop_first = random_shift(&img.crop(8, 12, 16, 16).unwrap(), dx, dy);
        let crop_after = full.crop(8, 12, 16, 16).unwrap();
        let inner_a = crop_first.crop(2, 2, 12, 12).unwrap();
        let inner_b = crop_after.crop(2, 2, 12, 12).unwrap();
        prop_assert!(inner_a.max_abs_diff(&inner_b).unwrap() < 1e-6);
    }

    #[test]
    fn patch_sampling_is_seeded(seed in any::<u64>(), count in 1usize..6) {
        let pairs = synthetic_pairs(3, 24, &DegradeConfig::default(), 1).unwrap();
        let a = sample_patch_coords(&pairs, 8, count, seed).unwrap();
        prop_assert_eq!(&a, &sample_patch_coords(&pairs, 8, count, seed).unwrap());
        let patches = sample_patches(&pairs, 8, count, seed).unwrap();
        for (c, p) in a.iter().zip(&patches) {
            prop_assert_eq!(&p.hr, &pairs[c.pair].hr.crop(c.y, c.x, 8, 8).unwrap());
            prop_assert_eq!(&p.lr, &pairs[c.pair].lr.crop(c.y, c.x, 8, 8).unwrap());
        }
    }
}

#[test]
fn patch_size_must_be_multiple_of_four() {
    let pairs = synthetic_pairs(1, 16, &DegradeConfig::default(), 0).unwrap();
    assert!(sample_patches(&pairs, 6, 1, 0).is_err());
}

#[test]
fn heavier_degradation_lowers_psnr() {
    use ddet::metrics::{psnr, PsnrMode};
    let hr = synthetic_image(64, 64, 11);
    let db = |s: u32| {
        let cfg = DegradeConfig { shift_max: 0.0, ..DegradeConfig::for_scale(s) };
        psnr(&degrade(&hr, &cfg, "x").unwrap().lr, &hr, PsnrMode::Rgb).unwrap().value()
    };
    assert!(db(4) < db(2));
}
