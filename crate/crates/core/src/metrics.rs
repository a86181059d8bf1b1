//! Image fidelity metrics.

use image::Rgb32FImage;

use crate::error::{ensure, Result};
use crate::imaging::Mask;

/// Mean squared error over the masked pixels and all three channels.
pub fn mse(rendered: &Rgb32FImage, reference: &Rgb32FImage, mask: &Mask) -> Result<f64> {
    ensure!(
        rendered.dimensions() == reference.dimensions() && mask.dimensions() == rendered.dimensions(),
        "image {:?}, reference {:?} and mask {:?} differ in size",
        rendered.dimensions(),
        reference.dimensions(),
        mask.dimensions()
    );
    let n = mask.count_valid();
    ensure!(n > 0, "PSNR mask selects no pixels");
    let mut sum = 0.0;
    for ((a, b), valid) in rendered.pixels().zip(reference.pixels()).zip(mask.as_slice()) {
        if *valid {
            for c in 0..3 {
                let d = a.0[c] as f64 - b.0[c] as f64;
                sum += d * d;
            }
        }
    }
    Ok(sum / (3 * n) as f64)
}

/// Peak signal-to-noise ratio in dB for channels in `[0, 1]`; identical
/// images give `+inf`.
pub fn psnr(rendered: &Rgb32FImage, reference: &Rgb32FImage, mask: &Mask) -> Result<f64> {
    let e = mse(rendered, reference, mask)?;
    Ok(if e == 0.0 { f64::INFINITY } else { -10.0 * e.log10() })
}

/// Mean absolute difference over all pixels and channels.
pub fn mean_abs_diff(a: &Rgb32FImage, b: &Rgb32FImage) -> Result<f64> {
    ensure!(a.dimensions() == b.dimensions(), "images differ in size");
    let n = a.as_raw().len();
    ensure!(n > 0, "images are empty");
    Ok(a.as_raw()
        .iter()
        .zip(b.as_raw())
        .map(|(x, y)| (x - y).abs() as f64)
        .sum::<f64>()
        / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_is_infinite() {
        let a = Rgb32FImage::from_pixel(4, 2, image::Rgb([0.2, 0.4, 0.6]));
        assert_eq!(psnr(&a, &a, &Mask::filled(4, 2, true)).unwrap(), f64::INFINITY);
    }

    #[test]
    fn offset_of_a_tenth_is_20db() {
        let a = Rgb32FImage::from_pixel(4, 2, image::Rgb([0.2, 0.4, 0.6]));
        let b = Rgb32FImage::from_pixel(4, 2, image::Rgb([0.3, 0.5, 0.7]));
        let p = psnr(&a, &b, &Mask::filled(4, 2, true)).unwrap();
        assert!((p - 20.0).abs() < 1e-5, "{p}");
    }

    #[test]
    fn masked_random_pair_matches_direct_mse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (w, h) = (13, 7);
        let a = Rgb32FImage::from_fn(w, h, |_, _| image::Rgb([rng.random(), rng.random(), rng.random()]));
        let b = Rgb32FImage::from_fn(w, h, |_, _| image::Rgb([rng.random(), rng.random(), rng.random()]));
        let bits: Vec<bool> = (0..w * h).map(|_| rng.random_bool(0.6)).collect();
        let mask = Mask::from_vec(w, h, bits.clone()).unwrap();
        let (mut s, mut n) = (0.0f64, 0usize);
        for (i, keep) in bits.iter().enumerate() {
            if *keep {
                let (x, y) = (i as u32 % w, i as u32 / w);
                for c in 0..3 {
                    let d = a.get_pixel(x, y).0[c] as f64 - b.get_pixel(x, y).0[c] as f64;
                    s += d * d;
                    n += 1;
                }
            }
        }
        let expect = 10.0 * (1.0 / (s / n as f64)).log10();
        assert!((psnr(&a, &b, &mask).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn rejects_empty_mask_and_size_mismatch() {
        let a = Rgb32FImage::new(4, 2);
        assert!(psnr(&a, &a, &Mask::filled(4, 2, false)).is_err());
        assert!(psnr(&a, &Rgb32FImage::new(2, 1), &Mask::filled(4, 2, true)).is_err());
    }
}
