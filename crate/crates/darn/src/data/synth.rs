//! Synthetic dense ground truth: piecewise-constant albedo (random colored
//! rectangles over a background) times smooth shading (a few radial or
//! linear lobes mapped into [0.2, 1.0]).
//!
//! Frames of one scene share the albedo layout and differ in shading, so a
//! scene split actually withholds unseen layouts.

#![allow(clippy::needless_range_loop)]

use super::{recompose, Sample};
use crate::image::Image;
use crate::rng;
use crate::scalar::Scalar;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShadingMode {
    Gray,
    Colored,
}

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub n_rects: usize,
    pub n_lobes: usize,
    pub shading_mode: ShadingMode,
    /// Upper bound on the per-pixel forward difference of the shading field.
    pub grad_cap: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_rects: 12,
            n_lobes: 3,
            shading_mode: ShadingMode::Gray,
            grad_cap: 0.08,
        }
    }
}

fn albedo_field<T: Scalar>(rng: &mut ChaCha8Rng, h: usize, w: usize, n_rects: usize) -> Image<T> {
    let mut img = Image::zeros(h, w);
    let bg: [f64; 3] = [
        rng.gen_range(0.1..0.9),
        rng.gen_range(0.1..0.9),
        rng.gen_range(0.1..0.9),
    ];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                img.set(y, x, c, T::of_f64(bg[c]));
            }
        }
    }
    for _ in 0..n_rects {
        let y0 = rng.gen_range(0..h);
        let y1 = rng.gen_range(0..h);
        let x0 = rng.gen_range(0..w);
        let x1 = rng.gen_range(0..w);
        let (y0, y1) = (y0.min(y1), y0.max(y1) + 1);
        let (x0, x1) = (x0.min(x1), x0.max(x1) + 1);
        let color: [f64; 3] = [
            rng.gen_range(0.1..0.9),
            rng.gen_range(0.1..0.9),
            rng.gen_range(0.1..0.9),
        ];
        for y in y0..y1 {
            for x in x0..x1 {
                for c in 0..3 {
                    img.set(y, x, c, T::of_f64(color[c]));
                }
            }
        }
    }
    img
}

struct Lobe {
    radial: bool,
    cy: f64,
    cx: f64,
    sigma: f64,
    theta: f64,
    amp: [f64; 3],
}

fn shading_field<T: Scalar>(
    rng: &mut ChaCha8Rng,
    h: usize,
    w: usize,
    cfg: &SynthConfig,
) -> Image<T> {
    let dim = h.max(w) as f64;
    let lobes: Vec<Lobe> = (0..cfg.n_lobes.max(1))
        .map(|_| {
            let base = rng.gen_range(-1.0..1.0);
            let chroma = match cfg.shading_mode {
                ShadingMode::Gray => [1.0, 1.0, 1.0],
                ShadingMode::Colored => [
                    rng.gen_range(0.8..1.0),
                    rng.gen_range(0.8..1.0),
                    rng.gen_range(0.8..1.0),
                ],
            };
            Lobe {
                radial: rng.gen_bool(0.5),
                cy: rng.gen_range(0.0..h as f64),
                cx: rng.gen_range(0.0..w as f64),
                sigma: rng.gen_range(0.3..0.8) * dim,
                theta: rng.gen_range(0.0..std::f64::consts::TAU),
                amp: [base * chroma[0], base * chroma[1], base * chroma[2]],
            }
        })
        .collect();

    let mut raw = vec![0.0f64; h * w * 3];
    for (i, v) in raw.iter_mut().enumerate() {
        let c = i % 3;
        let x = (i / 3) % w;
        let y = i / (3 * w);
        let (xf, yf) = (x as f64, y as f64);
        let mut acc = 0.0;
        for l in &lobes {
            if l.radial {
                let r2 = (xf - l.cx).powi(2) + (yf - l.cy).powi(2);
                acc += l.amp[c] * (-r2 / (2.0 * l.sigma * l.sigma)).exp();
            } else {
                acc += l.amp[c] * (xf * l.theta.cos() + yf * l.theta.sin()) / dim;
            }
        }
        *v = acc;
    }

    // Map into [0.2, 1.0].
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in &raw {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = hi - lo;
    let mut field: Vec<f64> = if span < 1e-12 {
        vec![0.6; raw.len()]
    } else {
        raw.iter().map(|&v| 0.2 + 0.8 * (v - lo) / span).collect()
    };

    // Enforce the smoothness cap by shrinking toward the mean; an affine
    // shrink scales every forward difference by the same factor.
    let mut gmax = 0.0f64;
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let i = (y * w + x) * 3 + c;
                if x + 1 < w {
                    gmax = gmax.max((field[i + 3] - field[i]).abs());
                }
                if y + 1 < h {
                    gmax = gmax.max((field[i + 3 * w] - field[i]).abs());
                }
            }
        }
    }
    if gmax > cfg.grad_cap {
        let mean = field.iter().sum::<f64>() / field.len() as f64;
        let k = cfg.grad_cap / gmax;
        for v in field.iter_mut() {
            *v = mean + (*v - mean) * k;
        }
    }

    Image::new(h, w, field.into_iter().map(T::of_f64).collect()).expect("consistent dims")
}

fn build_sample<T: Scalar>(
    id: String,
    scene: String,
    albedo: Image<T>,
    shading: Image<T>,
) -> Sample<T> {
    let (image, clips) = recompose(&albedo, &shading).expect("matching shapes");
    debug_assert_eq!(clips, 0, "albedo*shading stays within [0,1]");
    Sample {
        id,
        scene,
        image,
        albedo,
        shading,
    }
}

/// One self-contained sample, deterministic in `(seed, config)`.
pub fn synth_mondrian<T: Scalar>(seed: u64, h: usize, w: usize, cfg: &SynthConfig) -> Sample<T> {
    let mut rng_a = rng::stream(seed, &[0x5E, 0]);
    let mut rng_s = rng::stream(seed, &[0x5E, 1]);
    let albedo = albedo_field(&mut rng_a, h, w, cfg.n_rects);
    let shading = shading_field(&mut rng_s, h, w, cfg);
    build_sample(format!("m{seed:08}"), format!("m{seed:08}"), albedo, shading)
}

/// A dataset of `count` square samples grouped into scenes of
/// `frames_per_scene` frames. Frames of one scene share the albedo.
pub fn synth_dataset<T: Scalar>(
    seed: u64,
    count: usize,
    size: usize,
    frames_per_scene: usize,
    cfg: &SynthConfig,
) -> Vec<Sample<T>> {
    let fps = frames_per_scene.max(1);
    (0..count)
        .map(|i| {
            let scene_idx = (i / fps) as u64;
            let frame_idx = (i % fps) as u64;
            let mut rng_a = rng::stream(seed, &[0x5E, 2, scene_idx]);
            let mut rng_s = rng::stream(seed, &[0x5E, 3, scene_idx, frame_idx]);
            let albedo = albedo_field(&mut rng_a, size, size, cfg.n_rects);
            let shading = shading_field(&mut rng_s, size, size, cfg);
            build_sample(
                format!("scene_{scene_idx:03}_f{frame_idx:03}"),
                format!("scene_{scene_idx:03}"),
                albedo,
                shading,
            )
        })
        .collect()
}
