//! Image similarity metrics on the 0..255 grayscale scale: MSE, PSNR and
//! windowed SSIM, plus the per-image report used by translation evaluation.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::SensorImage;

/// SSIM constants: 11x11 Gaussian window (sigma 1.5), k1 = 0.01, k2 = 0.03,
/// dynamic range 255.
#[derive(Debug, Clone)]
pub struct SsimParams {
    pub window_size: usize,
    pub window_sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams { window_size: 11, window_sigma: 1.5, k1: 0.01, k2: 0.03, dynamic_range: 255.0 }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    /// Normalized 2-D Gaussian window, weights sum to 1.
    pub fn window(&self) -> Array2<f64> {
        let n = self.window_size;
        let c = (n as f64 - 1.0) / 2.0;
        let mut w = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                let dy = i as f64 - c;
                let dx = j as f64 - c;
                w[[i, j]] =
                    (-(dx * dx + dy * dy) / (2.0 * self.window_sigma * self.window_sigma)).exp();
            }
        }
        let sum = w.sum();
        w /= sum;
        w
    }
}

fn check_dims(a: &SensorImage, b: &SensorImage) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch(a.width, a.height, b.width, b.height));
    }
    Ok(())
}

/// Mean squared error over grayscale pixels, 0..255 scale.
pub fn mse(a: &SensorImage, b: &SensorImage) -> Result<f64> {
    check_dims(a, b)?;
    let ga = a.to_gray();
    let gb = b.to_gray();
    let n = ga.len() as f64;
    Ok(ga
        .iter()
        .zip(gb.iter())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        / n)
}

/// Peak signal-to-noise ratio in dB; +inf for identical images.
pub fn psnr(a: &SensorImage, b: &SensorImage) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0 * 255.0 / mse).log10()
    }
}

/// Mean SSIM over sliding Gaussian windows on grayscale images.
pub fn ssim(a: &SensorImage, b: &SensorImage, params: &SsimParams) -> Result<f64> {
    check_dims(a, b)?;
    let n = params.window_size;
    if a.width < n || a.height < n {
        return Err(Error::ImageTooSmall(a.width, a.height, n));
    }
    let ga = a.to_gray();
    let gb = b.to_gray();
    Ok(ssim_gray(&ga, &gb, params))
}

pub(crate) fn ssim_gray(ga: &Array2<f64>, gb: &Array2<f64>, params: &SsimParams) -> f64 {
    let n = params.window_size;
    let w = params.window();
    let (c1, c2) = (params.c1(), params.c2());
    let (rows, cols) = ga.dim();
    let mut total = 0.0;
    let mut count = 0usize;
    for y in 0..=rows - n {
        for x in 0..=cols - n {
            let mut mu_a = 0.0;
            let mut mu_b = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let wv = w[[i, j]];
                    mu_a += wv * ga[[y + i, x + j]];
                    mu_b += wv * gb[[y + i, x + j]];
                }
            }
            let mut var_a = 0.0;
            let mut var_b = 0.0;
            let mut cov = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let wv = w[[i, j]];
                    let da = ga[[y + i, x + j]] - mu_a;
                    let db = gb[[y + i, x + j]] - mu_b;
                    var_a += wv * da * da;
                    var_b += wv * db * db;
                    cov += wv * da * db;
                }
            }
            let num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
            let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
            total += num / den;
            count += 1;
        }
    }
    total / count as f64
}

/// PSNR above this level counts as extremely high similarity in reports.
pub const HIGH_SIMILARITY_PSNR_DB: f64 = 40.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub id: u64,
    pub mse: f64,
    /// Capped at 999 dB so identical images stay JSON-representable.
    pub psnr_db: f64,
    pub ssim: f64,
    pub high_similarity: bool,
}

/// Per-image and aggregate MSE/PSNR/SSIM triples. Means are arithmetic
/// means of the per-image values, never metrics of mean images.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_image: Vec<ImageMetrics>,
    pub mean_mse: f64,
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
    pub n: usize,
}

impl MetricReport {
    pub fn from_pairs<'a, I>(pairs: I, params: &SsimParams) -> Result<MetricReport>
    where
        I: IntoIterator<Item = (u64, &'a SensorImage, &'a SensorImage)>,
    {
        let mut per_image = Vec::new();
        for (id, a, b) in pairs {
            let m = mse(a, b)?;
            let p = psnr_from_mse(m).min(999.0);
            let s = ssim(a, b, params)?;
            per_image.push(ImageMetrics {
                id,
                mse: m,
                psnr_db: p,
                ssim: s,
                high_similarity: p > HIGH_SIMILARITY_PSNR_DB,
            });
        }
        let n = per_image.len();
        let nf = n.max(1) as f64;
        Ok(MetricReport {
            mean_mse: per_image.iter().map(|m| m.mse).sum::<f64>() / nf,
            mean_psnr_db: per_image.iter().map(|m| m.psnr_db).sum::<f64>() / nf,
            mean_ssim: per_image.iter().map(|m| m.ssim).sum::<f64>() / nf,
            per_image,
            n,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::RenderStyle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn img(w: usize, h: usize, mut f: impl FnMut(usize, usize) -> (u8, u8, u8)) -> SensorImage {
        let mut pixels = Vec::with_capacity(3 * w * h);
        for y in 0..h {
            for x in 0..w {
                let (r, g, b) = f(x, y);
                pixels.extend_from_slice(&[r, g, b]);
            }
        }
        SensorImage { width: w, height: h, pixels, style: RenderStyle::ViTac }
    }

    fn random_img(w: usize, h: usize, seed: u64) -> SensorImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        img(w, h, |_, _| (rng.gen(), rng.gen(), rng.gen()))
    }

    #[test]
    fn mse_identical_zero_psnr_infinite() {
        let a = random_img(16, 16, 1);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert!(psnr(&a, &a).unwrap().is_infinite());
    }

    #[test]
    fn mse_constant_shift() {
        let a = img(8, 8, |_, _| (100, 100, 100));
        let b = img(8, 8, |_, _| (103, 103, 103));
        assert!((mse(&a, &b).unwrap() - 9.0).abs() < 1e-9);
    }

    #[test]
    fn mse_matches_nested_loop_oracle() {
        let a = random_img(4, 4, 2);
        let b = random_img(4, 4, 3);
        let ga = a.to_gray();
        let gb = b.to_gray();
        let mut acc = 0.0;
        for y in 0..4 {
            for x in 0..4 {
                let d = ga[[y, x]] - gb[[y, x]];
                acc += d * d;
            }
        }
        assert!((mse(&a, &b).unwrap() - acc / 16.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_reference_points() {
        assert!((psnr_from_mse(0.0405) - 62.06).abs() < 0.01);
        assert!((psnr_from_mse(650.25) - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_identity_with_mse() {
        for seed in 0..20 {
            let a = random_img(12, 9, seed);
            let b = random_img(12, 9, seed + 100);
            let m = mse(&a, &b).unwrap();
            let p = psnr(&a, &b).unwrap();
            assert!(((p - 10.0 * (255.0f64 * 255.0 / m).log10()) / p).abs() < 1e-9);
        }
    }

    #[test]
    fn ssim_identical_is_one_exactly() {
        let a = random_img(32, 32, 7);
        assert_eq!(ssim(&a, &a, &SsimParams::default()).unwrap(), 1.0);
    }

    #[test]
    fn ssim_constant_images_closed_form() {
        let a = img(16, 16, |_, _| (0, 0, 0));
        let b = img(16, 16, |_, _| (255, 255, 255));
        let p = SsimParams::default();
        let expect = p.c1() / (255.0 * 255.0 + p.c1());
        let got = ssim(&a, &b, &p).unwrap();
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
        assert!((got - 1.0e-4).abs() < 1e-5);
    }

    /// Naive per-window reference implementation.
    fn ssim_oracle(a: &SensorImage, b: &SensorImage, p: &SsimParams) -> f64 {
        let ga = a.to_gray();
        let gb = b.to_gray();
        let n = p.window_size;
        let w = p.window();
        let mut vals = Vec::new();
        for y in 0..=a.height - n {
            for x in 0..=a.width - n {
                let mut mu_a = 0.0;
                let mut mu_b = 0.0;
                let mut ea2 = 0.0;
                let mut eb2 = 0.0;
                let mut eab = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        let wv = w[[i, j]];
                        let va = ga[[y + i, x + j]];
                        let vb = gb[[y + i, x + j]];
                        mu_a += wv * va;
                        mu_b += wv * vb;
                        ea2 += wv * va * va;
                        eb2 += wv * vb * vb;
                        eab += wv * va * vb;
                    }
                }
                let var_a = ea2 - mu_a * mu_a;
                let var_b = eb2 - mu_b * mu_b;
                let cov = eab - mu_a * mu_b;
                vals.push(
                    ((2.0 * mu_a * mu_b + p.c1()) * (2.0 * cov + p.c2()))
                        / ((mu_a * mu_a + mu_b * mu_b + p.c1()) * (var_a + var_b + p.c2())),
                );
            }
        }
        vals.iter().sum::<f64>() / vals.len() as f64
    }

    #[test]
    fn ssim_matches_bruteforce_oracle() {
        let p = SsimParams::default();
        for seed in 0..5 {
            let a = random_img(32, 32, seed);
            let b = random_img(32, 32, seed + 50);
            let fast = ssim(&a, &b, &p).unwrap();
            let slow = ssim_oracle(&a, &b, &p);
            assert!((fast - slow).abs() < 1e-9, "{fast} vs {slow}");
        }
    }

    #[test]
    fn metrics_symmetric_and_bounded() {
        let p = SsimParams::default();
        for seed in 0..10 {
            let a = random_img(16, 20, seed);
            let b = random_img(16, 20, seed + 31);
            assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
            let sab = ssim(&a, &b, &p).unwrap();
            // symmetric up to floating-point association order
            assert!((sab - ssim(&b, &a, &p).unwrap()).abs() < 1e-12);
            assert!((-1.0..=1.0).contains(&sab));
            assert!(sab < 1.0, "distinct random images must not reach 1");
        }
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let a = random_img(8, 8, 1);
        let b = random_img(9, 8, 1);
        assert!(mse(&a, &b).is_err());
        assert!(ssim(&a, &random_img(8, 8, 2), &SsimParams { window_size: 11, ..Default::default() }).is_err());
    }

    #[test]
    fn report_means_are_per_image_means() {
        let p = SsimParams::default();
        let a1 = random_img(16, 16, 1);
        let b1 = random_img(16, 16, 2);
        let a2 = random_img(16, 16, 3);
        let b2 = random_img(16, 16, 4);
        let rep =
            MetricReport::from_pairs([(0, &a1, &b1), (1, &a2, &b2)], &p).unwrap();
        assert_eq!(rep.n, 2);
        let mm = (rep.per_image[0].mse + rep.per_image[1].mse) / 2.0;
        assert!((rep.mean_mse - mm).abs() < 1e-12);
        let mp = (rep.per_image[0].psnr_db + rep.per_image[1].psnr_db) / 2.0;
        assert!((rep.mean_psnr_db - mp).abs() < 1e-12);
    }
}
