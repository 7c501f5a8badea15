use super::Image;
use crate::error::{Error, Result};
use crate::real::Real;

/// Mean squared error over all `C * H * W` samples, accumulated in 64-bit.
pub fn mse<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    a.tensor().expect_same_shape(b.tensor(), "mse")?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// Peak signal-to-noise ratio in dB. Identical images yield `f64::INFINITY`.
pub fn psnr<T: Real>(a: &Image<T>, b: &Image<T>, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::contract(format!("psnr peak must be positive, got {peak}")));
    }
    let err = mse(a, b)?;
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / err).log10())
}

/// Renders a PSNR value for reports; the zero-error sentinel prints as `inf`.
pub fn format_psnr(db: f64) -> String {
    if db.is_infinite() && db > 0.0 {
        "inf".to_string()
    } else {
        format!("{db:.4}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn identical_images_are_infinite() {
        let a = Image::<f32>::filled(3, 4, 4, 0.3).unwrap();
        let db = psnr(&a, &a, 1.0).unwrap();
        assert!(db.is_infinite() && db > 0.0);
        assert!(db > 1e300);
        assert_eq!(format_psnr(db), "inf");
    }

    #[test]
    fn uniform_error_of_a_tenth_is_twenty_db() {
        let a = Image::<f64>::filled(3, 4, 4, 0.5).unwrap();
        let b = a.map(|v| v + 0.1);
        let db = psnr(&a, &b, 1.0).unwrap();
        assert!((db - 20.0).abs() < 1e-9, "{db}");
    }

    #[test]
    fn random_pair_matches_direct_recomputation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let a = Image::<f32>::from_vec(1, 4, 4, (0..16).map(|_| rng.gen()).collect()).unwrap();
        let b = Image::<f32>::from_vec(1, 4, 4, (0..16).map(|_| rng.gen()).collect()).unwrap();
        let mut acc = 0.0f64;
        for i in 0..16 {
            let d = a.data()[i] as f64 - b.data()[i] as f64;
            acc += d * d;
        }
        let oracle = 10.0 * (1.0 / (acc / 16.0)).log10();
        assert!((psnr(&a, &b, 1.0).unwrap() - oracle).abs() <= 1e-9);
        assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = Image::<f32>::filled(3, 4, 4, 0.3).unwrap();
        let b = Image::<f32>::filled(3, 4, 5, 0.3).unwrap();
        assert!(psnr(&a, &b, 1.0).is_err());
        assert!(psnr(&a, &a, 0.0).is_err());
    }
}
