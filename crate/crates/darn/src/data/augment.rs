//! Deterministic geometric augmentation: uniform scale, rotation, horizontal
//! mirror, then a random crop placed fully inside the valid (in-support)
//! region. One transform is sampled per call and applied identically to
//! albedo and shading; the image is recomposed as `albedo * shading`
//! afterwards so interpolation cannot break the product invariant.

use super::{recompose, Sample};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng;
use crate::scalar::Scalar;
use rand::Rng;

#[derive(Clone, Debug)]
pub struct AugmentConfig {
    pub scale_min: f64,
    pub scale_max: f64,
    pub max_angle_deg: f64,
    pub mirror_prob: f64,
    /// Side of the square output crop.
    pub crop: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            scale_min: 0.8,
            scale_max: 1.2,
            max_angle_deg: 15.0,
            mirror_prob: 0.5,
            crop: 250,
        }
    }
}

/// Affine map from target coordinates to source coordinates.
struct InverseMap {
    // p_src = l * p_tgt + offset
    lxx: f64,
    lxy: f64,
    lyx: f64,
    lyy: f64,
    ox: f64,
    oy: f64,
}

impl InverseMap {
    fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.lxx * x + self.lxy * y + self.ox,
            self.lyx * x + self.lyy * y + self.oy,
        )
    }
}

fn bilinear<T: Scalar>(img: &Image<T>, xs: f64, ys: f64, c: usize) -> f64 {
    let (h, w) = (img.height() as isize, img.width() as isize);
    let x0f = xs.floor();
    let y0f = ys.floor();
    let tx = xs - x0f;
    let ty = ys - y0f;
    let clampx = |v: isize| v.clamp(0, w - 1) as usize;
    let clampy = |v: isize| v.clamp(0, h - 1) as usize;
    let (x0, x1) = (clampx(x0f as isize), clampx(x0f as isize + 1));
    let (y0, y1) = (clampy(y0f as isize), clampy(y0f as isize + 1));
    let v00 = img.get(y0, x0, c).as_f64();
    let v01 = img.get(y0, x1, c).as_f64();
    let v10 = img.get(y1, x0, c).as_f64();
    let v11 = img.get(y1, x1, c).as_f64();
    (v00 * (1.0 - tx) + v01 * tx) * (1.0 - ty) + (v10 * (1.0 - tx) + v11 * tx) * ty
}

/// Applies one randomly drawn transform. Errors when the crop cannot fit the
/// valid region of the scaled/rotated source.
pub fn augment<T: Scalar>(sample: &Sample<T>, seed: u64, cfg: &AugmentConfig) -> Result<Sample<T>> {
    let (h, w) = (sample.albedo.height(), sample.albedo.width());
    let s = cfg.crop;
    let mut r = rng::stream(seed, &[0xA06]);

    let u_scale: f64 = r.gen();
    let scale = cfg.scale_min + u_scale * (cfg.scale_max - cfg.scale_min);
    let u_angle: f64 = r.gen();
    let theta = (2.0 * u_angle - 1.0) * cfg.max_angle_deg.to_radians();
    let mirror = r.gen::<f64>() < cfg.mirror_prob;

    let ht = (scale * h as f64).round();
    let wt = (scale * w as f64).round();
    let (c_sx, c_sy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (c_tx, c_ty) = ((wt - 1.0) / 2.0, (ht - 1.0) / 2.0);

    // p_src = (1/scale) * R(-theta) * (M p_tgt + t_m - c_t) + c_s, where M
    // mirrors x when requested.
    let (cos, sin) = ((-theta).cos(), (-theta).sin());
    let m = if mirror { -1.0 } else { 1.0 };
    let t_mx = if mirror { wt - 1.0 } else { 0.0 };
    let inv = scale.recip();
    let map = InverseMap {
        lxx: inv * cos * m,
        lxy: inv * -sin,
        lyx: inv * sin * m,
        lyy: inv * cos,
        ox: inv * (cos * (t_mx - c_tx) - sin * (-c_ty)) + c_sx,
        oy: inv * (sin * (t_mx - c_tx) + cos * (-c_ty)) + c_sy,
    };

    // Crop origins o must keep all four crop corners inside the source
    // support: two interval constraints on (lx . o) and (ly . o).
    let span = (s - 1) as f64;
    let bounds = |lx: f64, ly: f64, off: f64, limit: f64| -> (f64, f64) {
        let hi = limit - off - span * (lx.max(0.0) + ly.max(0.0));
        let lo = -off - span * (lx.min(0.0) + ly.min(0.0));
        (lo, hi)
    };
    let (lo_x, hi_x) = bounds(map.lxx, map.lxy, map.ox, w as f64 - 1.0);
    let (lo_y, hi_y) = bounds(map.lyx, map.lyy, map.oy, h as f64 - 1.0);
    if lo_x > hi_x || lo_y > hi_y {
        let need = ((s as f64) * (theta.cos().abs() + theta.sin().abs()) / scale).ceil() as usize + 1;
        return Err(Error::CropTooSmall {
            crop: s,
            min_size: need,
        });
    }

    // Invert o from the two projections; prefer an integer origin so that
    // identity transforms produce exact sub-windows.
    let det = map.lxx * map.lyy - map.lxy * map.lyx;
    let solve = |t1: f64, t2: f64| -> (f64, f64) {
        (
            (map.lyy * t1 - map.lxy * t2) / det,
            (-map.lyx * t1 + map.lxx * t2) / det,
        )
    };
    let corners_ok = |ox: f64, oy: f64| -> bool {
        let eps = 1e-9;
        [(0.0, 0.0), (span, 0.0), (0.0, span), (span, span)]
            .iter()
            .all(|&(dx, dy)| {
                let (sx, sy) = map.apply(ox + dx, oy + dy);
                sx >= -eps && sx <= w as f64 - 1.0 + eps && sy >= -eps && sy <= h as f64 - 1.0 + eps
            })
    };
    let mut origin = None;
    let mut fallback = (0.0, 0.0);
    for attempt in 0..32 {
        let t1 = lo_x + r.gen::<f64>() * (hi_x - lo_x);
        let t2 = lo_y + r.gen::<f64>() * (hi_y - lo_y);
        let (ox, oy) = solve(t1, t2);
        if attempt == 0 {
            fallback = (ox, oy);
        }
        let (rx, ry) = (ox.round(), oy.round());
        if corners_ok(rx, ry) {
            origin = Some((rx, ry));
            break;
        }
    }
    let (ox, oy) = origin.unwrap_or(fallback);

    let mut albedo = Image::<T>::zeros(s, s);
    let mut shading = Image::<T>::zeros(s, s);
    for y in 0..s {
        for x in 0..s {
            let (sx, sy) = map.apply(ox + x as f64, oy + y as f64);
            for c in 0..3 {
                albedo.set(y, x, c, T::of_f64(bilinear(&sample.albedo, sx, sy, c)));
                shading.set(y, x, c, T::of_f64(bilinear(&sample.shading, sx, sy, c)));
            }
        }
    }
    let (image, _clips) = recompose(&albedo, &shading)?;
    Ok(Sample {
        id: sample.id.clone(),
        scene: sample.scene.clone(),
        image,
        albedo,
        shading,
    })
}
