//! Image quality metrics: PSNR with a fixed cap for exact matches, and
//! windowed SSIM with an analytic gradient so it can serve as a loss.

use crate::error::{Error, Result};
use crate::render::Frame;

/// Reported PSNR for a zero-error pair; also the ceiling for near-zero MSE.
pub const PSNR_CAP: f64 = 99.0;

const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn check_shapes(a: &Frame, b: &Frame) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::ShapeMismatch {
            context: "metric frame shape",
            expected: b.rgb.len(),
            actual: a.rgb.len(),
        });
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB over the RGB channels, dynamic range 1.
/// Identical frames report the 99 dB cap.
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    check_shapes(a, b)?;
    if a.rgb.is_empty() {
        return Err(Error::invalid("psnr over an empty frame"));
    }
    let mse = a
        .rgb
        .iter()
        .zip(&b.rgb)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.rgb.len() as f64;
    if mse <= 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

fn gaussian_window() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let c = (WINDOW as f64 - 1.0) / 2.0;
    let mut total = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-((i as f64 - c) * (i as f64 - c)) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
        total += *v;
    }
    for v in k.iter_mut() {
        *v /= total;
    }
    k
}

/// Separable valid-region convolution with the 1D window.
fn conv_valid(plane: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let vw = w - WINDOW + 1;
    let vh = h - WINDOW + 1;
    let mut tmp = vec![0.0; vw * h];
    for y in 0..h {
        for cx in 0..vw {
            let mut acc = 0.0;
            for (u, &kv) in k.iter().enumerate() {
                acc += kv * plane[y * w + cx + u];
            }
            tmp[y * vw + cx] = acc;
        }
    }
    let mut out = vec![0.0; vw * vh];
    for cy in 0..vh {
        for cx in 0..vw {
            let mut acc = 0.0;
            for (v, &kv) in k.iter().enumerate() {
                acc += kv * tmp[(cy + v) * vw + cx];
            }
            out[cy * vw + cx] = acc;
        }
    }
    out
}

/// Adjoint of [`conv_valid`]: scatters window-level gradients back onto the
/// full plane.
fn conv_adjoint(field: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let vw = w - WINDOW + 1;
    let vh = h - WINDOW + 1;
    let mut tmp = vec![0.0; vw * h];
    for cy in 0..vh {
        for cx in 0..vw {
            let g = field[cy * vw + cx];
            if g == 0.0 {
                continue;
            }
            for (v, &kv) in k.iter().enumerate() {
                tmp[(cy + v) * vw + cx] += kv * g;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for cx in 0..vw {
            let g = tmp[y * vw + cx];
            if g == 0.0 {
                continue;
            }
            for (u, &kv) in k.iter().enumerate() {
                out[y * w + cx + u] += kv * g;
            }
        }
    }
    out
}

/// Mean SSIM of one channel plane pair; optionally accumulates
/// d(mean SSIM)/d a into `grad_a`.
fn ssim_plane(a: &[f64], b: &[f64], w: usize, h: usize, grad_a: Option<&mut [f64]>) -> f64 {
    let k = gaussian_window();
    let vw = w - WINDOW + 1;
    let vh = h - WINDOW + 1;
    let positions = (vw * vh) as f64;
    let c1 = K1 * K1;
    let c2 = K2 * K2;

    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let mu_a = conv_valid(a, w, h, &k);
    let mu_b = conv_valid(b, w, h, &k);
    let m_aa = conv_valid(&aa, w, h, &k);
    let m_bb = conv_valid(&bb, w, h, &k);
    let m_ab = conv_valid(&ab, w, h, &k);

    let mut total = 0.0;
    let mut g_mu = grad_a.is_some().then(|| vec![0.0; vw * vh]);
    let mut g_maa = grad_a.is_some().then(|| vec![0.0; vw * vh]);
    let mut g_mab = grad_a.is_some().then(|| vec![0.0; vw * vh]);
    for p in 0..vw * vh {
        let (ua, ub) = (mu_a[p], mu_b[p]);
        let var_a = m_aa[p] - ua * ua;
        let var_b = m_bb[p] - ub * ub;
        let cov = m_ab[p] - ua * ub;
        let a1 = 2.0 * ua * ub + c1;
        let a2 = 2.0 * cov + c2;
        let b1 = ua * ua + ub * ub + c1;
        let b2 = var_a + var_b + c2;
        let s = (a1 * a2) / (b1 * b2);
        total += s;
        if let (Some(gm), Some(gaa), Some(gab)) = (g_mu.as_mut(), g_maa.as_mut(), g_mab.as_mut()) {
            let inv = 1.0 / (b1 * b2);
            let ds_dmaa = -s / b2;
            let ds_dmab = 2.0 * a1 * inv;
            let ds_dmua = 2.0 * ub * (a2 - a1) * inv - 2.0 * ua * s / b1 + 2.0 * ua * s / b2;
            gm[p] = ds_dmua / positions;
            gaa[p] = ds_dmaa / positions;
            gab[p] = ds_dmab / positions;
        }
    }
    if let (Some(out), Some(gm), Some(gaa), Some(gab)) = (grad_a, g_mu, g_maa, g_mab) {
        let back_mu = conv_adjoint(&gm, w, h, &k);
        let back_aa = conv_adjoint(&gaa, w, h, &k);
        let back_ab = conv_adjoint(&gab, w, h, &k);
        for i in 0..w * h {
            out[i] += back_mu[i] + 2.0 * a[i] * back_aa[i] + b[i] * back_ab[i];
        }
    }
    total / positions
}

fn split_channels(f: &Frame) -> [Vec<f64>; 3] {
    let n = f.width * f.height;
    let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for (c, channel) in out.iter_mut().enumerate() {
        for (px, v) in channel.iter_mut().enumerate() {
            *v = f.rgb[px * 3 + c];
        }
    }
    out
}

/// Mean structural similarity over channels and window positions, with an
/// 11x11 Gaussian window (sigma 1.5) and dynamic range 1.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    check_shapes(a, b)?;
    if a.width < WINDOW || a.height < WINDOW {
        return Err(Error::invalid(format!(
            "ssim needs frames at least {WINDOW}x{WINDOW}, got {}x{}",
            a.width, a.height
        )));
    }
    let pa = split_channels(a);
    let pb = split_channels(b);
    let mut total = 0.0;
    for c in 0..3 {
        total += ssim_plane(&pa[c], &pb[c], a.width, a.height, None);
    }
    Ok(total / 3.0)
}

/// SSIM plus d(SSIM)/d(a.rgb), laid out like the frame's RGB buffer.
pub fn ssim_with_gradient(a: &Frame, b: &Frame) -> Result<(f64, Vec<f64>)> {
    check_shapes(a, b)?;
    if a.width < WINDOW || a.height < WINDOW {
        return Err(Error::invalid(format!(
            "ssim needs frames at least {WINDOW}x{WINDOW}, got {}x{}",
            a.width, a.height
        )));
    }
    let pa = split_channels(a);
    let pb = split_channels(b);
    let n = a.width * a.height;
    let mut total = 0.0;
    let mut grad = vec![0.0; n * 3];
    for c in 0..3 {
        let mut plane_grad = vec![0.0; n];
        total += ssim_plane(&pa[c], &pb[c], a.width, a.height, Some(&mut plane_grad));
        for px in 0..n {
            grad[px * 3 + c] = plane_grad[px] / 3.0;
        }
    }
    Ok((total / 3.0, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::seeded_rng;
    use rand::Rng;

    fn noise_frame(w: usize, h: usize, seed: u64) -> Frame {
        let mut rng = seeded_rng(seed);
        let mut f = Frame::new(w, h);
        for v in f.rgb.iter_mut() {
            *v = rng.random_range(0.0..1.0);
        }
        f
    }

    #[test]
    fn psnr_examples() {
        let a = noise_frame(8, 8, 1);
        assert_eq!(psnr(&a, &a).unwrap(), 99.0);

        // A uniform 0.1 offset makes MSE exactly 0.01.
        let mut b = a.clone();
        for v in b.rgb.iter_mut() {
            *v += 0.1;
        }
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);

        let black = Frame::new(8, 8);
        let white = Frame::filled(8, 8, nalgebra::Vector3::new(1.0, 1.0, 1.0));
        assert!(psnr(&black, &white).unwrap().abs() < 1e-9);

        assert!(psnr(&a, &Frame::new(4, 4)).is_err());
    }

    #[test]
    fn psnr_monotone_in_mse() {
        let a = noise_frame(8, 8, 2);
        let mut last = f64::INFINITY;
        for shift in [0.01, 0.05, 0.1, 0.2, 0.4] {
            let mut b = a.clone();
            for v in b.rgb.iter_mut() {
                *v += shift;
            }
            let p = psnr(&a, &b).unwrap();
            assert!(p < last, "psnr should fall as error grows");
            last = p;
        }
    }

    #[test]
    fn ssim_self_is_one() {
        for seed in [3, 4, 5] {
            let a = noise_frame(16, 13, seed);
            assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ssim_rejects_small_frames() {
        let a = noise_frame(10, 16, 6);
        assert!(ssim(&a, &a).is_err());
    }

    /// Naive per-window SSIM, written directly from the definition as an
    /// independent check on the separable implementation.
    fn ssim_naive(a: &Frame, b: &Frame) -> f64 {
        let mut k = [0.0f64; 11];
        let mut total_k = 0.0;
        for (i, v) in k.iter_mut().enumerate() {
            *v = (-((i as f64 - 5.0).powi(2)) / 4.5).exp();
            total_k += *v;
        }
        for v in k.iter_mut() {
            *v /= total_k;
        }
        let (w, h) = (a.width, a.height);
        let mut acc = 0.0;
        let mut count = 0usize;
        for c in 0..3 {
            for cy in 0..h - 10 {
                for cx in 0..w - 10 {
                    let mut ua = 0.0;
                    let mut ub = 0.0;
                    let mut aa = 0.0;
                    let mut bb = 0.0;
                    let mut ab = 0.0;
                    for v in 0..11 {
                        for u in 0..11 {
                            let wgt = k[v] * k[u];
                            let pa = a.rgb[((cy + v) * w + cx + u) * 3 + c];
                            let pb = b.rgb[((cy + v) * w + cx + u) * 3 + c];
                            ua += wgt * pa;
                            ub += wgt * pb;
                            aa += wgt * pa * pa;
                            bb += wgt * pb * pb;
                            ab += wgt * pa * pb;
                        }
                    }
                    let (va, vb, cov) = (aa - ua * ua, bb - ub * ub, ab - ua * ub);
                    let c1 = 0.01f64.powi(2);
                    let c2 = 0.03f64.powi(2);
                    acc += ((2.0 * ua * ub + c1) * (2.0 * cov + c2))
                        / ((ua * ua + ub * ub + c1) * (va + vb + c2));
                    count += 1;
                }
            }
        }
        acc / count as f64
    }

    #[test]
    fn ssim_matches_naive_reference() {
        let a = noise_frame(20, 16, 7);
        let mut b = a.clone();
        for v in b.rgb.iter_mut() {
            *v += 0.1;
        }
        let fast = ssim(&a, &b).unwrap();
        let slow = ssim_naive(&a, &b);
        assert!((fast - slow).abs() < 1e-4, "{fast} vs {slow}");

        let c = noise_frame(20, 16, 8);
        let fast = ssim(&a, &c).unwrap();
        let slow = ssim_naive(&a, &c);
        assert!((fast - slow).abs() < 1e-4, "{fast} vs {slow}");
    }

    #[test]
    fn uncorrelated_noise_scores_low() {
        let a = noise_frame(64, 64, 9);
        let b = noise_frame(64, 64, 10);
        assert!(ssim(&a, &b).unwrap() < 0.2);
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let mut a = noise_frame(14, 12, 11);
        let b = noise_frame(14, 12, 12);
        let (_, grad) = ssim_with_gradient(&a, &b).unwrap();
        let h = 1e-5;
        for &i in &[0, 40, 113, 14 * 12 * 3 - 1] {
            a.rgb[i] += h;
            let up = ssim(&a, &b).unwrap();
            a.rgb[i] -= 2.0 * h;
            let down = ssim(&a, &b).unwrap();
            a.rgb[i] += h;
            let fd = (up - down) / (2.0 * h);
            assert!(
                (grad[i] - fd).abs() < 1e-6 * fd.abs().max(1.0),
                "component {i}: {} vs {fd}",
                grad[i]
            );
        }
    }
}
