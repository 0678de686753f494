//! Structural similarity with the original 11x11 Gaussian window (sigma 1.5,
//! K1 = 0.01, K2 = 0.03, dynamic range 1), computed per channel and averaged
//! over channels and positions. Windows that stick out of the image are
//! truncated with renormalized weights, which also covers images smaller
//! than the window. `dssim = (1 - ssim) / 2`.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;

const RADIUS: usize = 5; // 11x11 window
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn gaussian_taps() -> [f64; 2 * RADIUS + 1] {
    let mut taps = [0.0; 2 * RADIUS + 1];
    let mut sum = 0.0;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - RADIUS as f64;
        *t = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
        sum += *t;
    }
    for t in taps.iter_mut() {
        *t /= sum;
    }
    taps
}

/// One separable pass along x then y with per-position renormalization of
/// truncated taps.
fn blur(src: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let r = RADIUS as isize;
    let mut tmp = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for j in -r..=r {
                let xx = x as isize + j;
                if xx < 0 || xx >= w as isize {
                    continue;
                }
                let t = taps[(j + r) as usize];
                acc += t * src[y * w + xx as usize];
                wsum += t;
            }
            tmp[y * w + x] = acc / wsum;
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            let mut wsum = 0.0;
            for j in -r..=r {
                let yy = y as isize + j;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                let t = taps[(j + r) as usize];
                acc += t * tmp[yy as usize * w + x];
                wsum += t;
            }
            out[y * w + x] = acc / wsum;
        }
    }
    out
}

pub fn ssim<T: Scalar>(x: &Image<T>, y: &Image<T>) -> Result<f64> {
    if x.height() != y.height() || x.width() != y.width() {
        return Err(Error::shape(format!(
            "ssim: {}x{} vs {}x{}",
            x.height(),
            x.width(),
            y.height(),
            y.width()
        )));
    }
    let (h, w) = (x.height(), x.width());
    let taps = gaussian_taps();
    let mut total = 0.0;
    for c in 0..3 {
        let xc: Vec<f64> = (0..h * w)
            .map(|i| x.get(i / w, i % w, c).as_f64())
            .collect();
        let yc: Vec<f64> = (0..h * w)
            .map(|i| y.get(i / w, i % w, c).as_f64())
            .collect();
        let xx: Vec<f64> = xc.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = yc.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = xc.iter().zip(&yc).map(|(a, b)| a * b).collect();

        let mu_x = blur(&xc, h, w, &taps);
        let mu_y = blur(&yc, h, w, &taps);
        let e_xx = blur(&xx, h, w, &taps);
        let e_yy = blur(&yy, h, w, &taps);
        let e_xy = blur(&xy, h, w, &taps);

        for i in 0..h * w {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let sx = e_xx[i] - mx * mx;
            let sy = e_yy[i] - my * my;
            let sxy = e_xy[i] - mx * my;
            let num = (2.0 * mx * my + C1) * (2.0 * sxy + C2);
            let den = (mx * mx + my * my + C1) * (sx + sy + C2);
            total += num / den;
        }
    }
    Ok(total / (3 * h * w) as f64)
}

/// Structural dissimilarity in `[0, 1]`.
pub fn dssim<T: Scalar>(x: &Image<T>, y: &Image<T>) -> Result<f64> {
    Ok((1.0 - ssim(x, y)?) / 2.0)
}
