//! Evaluation metrics: scale-invariant (si-MSE, si-LMSE, DSSIM) and
//! scale-aware (MSE, rs-MSE).
//!
//! All accumulation runs in double precision. The `||.||^2 / N` convention
//! folds the three channels into the norm and divides by the pixel count,
//! applied uniformly across every metric so methods stay comparable.

mod scale;
mod ssim;
#[cfg(test)]
mod tests;

pub use scale::{rs_mse, solve_relative_scale, RelativeScale};
pub use ssim::{dssim, ssim};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;

fn check_same<T: Scalar>(gt: &Image<T>, pred: &Image<T>) -> Result<()> {
    if gt.height() != pred.height() || gt.width() != pred.width() {
        return Err(Error::shape(format!(
            "metric inputs differ: {}x{} vs {}x{}",
            gt.height(),
            gt.width(),
            pred.height(),
            pred.width()
        )));
    }
    Ok(())
}

/// Closed-form minimizer of `||gt - alpha*pred||^2`.
pub fn optimal_scale<T: Scalar>(gt: &Image<T>, pred: &Image<T>) -> Result<f64> {
    check_same(gt, pred)?;
    let mut gp = 0.0;
    let mut pp = 0.0;
    for (&g, &p) in gt.data().iter().zip(pred.data()) {
        gp += g.as_f64() * p.as_f64();
        pp += p.as_f64() * p.as_f64();
    }
    if pp == 0.0 {
        return Err(Error::Degenerate("optimal scale of an all-zero prediction".into()));
    }
    Ok(gp / pp)
}

/// `||gt - alpha*pred||^2 / N` with the optimal alpha.
pub fn si_mse<T: Scalar>(gt: &Image<T>, pred: &Image<T>) -> Result<f64> {
    let alpha = optimal_scale(gt, pred)?;
    let mut acc = 0.0;
    for (&g, &p) in gt.data().iter().zip(pred.data()) {
        let r = g.as_f64() - alpha * p.as_f64();
        acc += r * r;
    }
    Ok(acc / gt.pixels() as f64)
}

/// Plain scale-sensitive `||gt - pred||^2 / N`.
pub fn mse<T: Scalar>(gt: &Image<T>, pred: &Image<T>) -> Result<f64> {
    check_same(gt, pred)?;
    let mut acc = 0.0;
    for (&g, &p) in gt.data().iter().zip(pred.data()) {
        let r = g.as_f64() - p.as_f64();
        acc += r * r;
    }
    Ok(acc / gt.pixels() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchWindow {
    pub y: usize,
    pub x: usize,
    pub side: usize,
}

fn axis_positions(extent: usize, side: usize, stride: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos + side <= extent {
        out.push(pos);
        pos += stride;
    }
    let flush = extent - side;
    if out.last() != Some(&flush) {
        out.push(flush);
    }
    out
}

/// Square windows with side 10% of the largest dimension (at least 1) and
/// 50% overlap, shifted flush at the far border so every pixel is covered.
pub fn patch_grid(h: usize, w: usize, ratio: f64, overlap: f64) -> Vec<PatchWindow> {
    let side = ((ratio * h.max(w) as f64).round() as usize)
        .max(1)
        .min(h.min(w));
    let stride = ((side as f64 * (1.0 - overlap)).floor() as usize).max(1);
    let ys = axis_positions(h, side, stride);
    let xs = axis_positions(w, side, stride);
    let mut out = Vec::with_capacity(ys.len() * xs.len());
    for &y in &ys {
        for &x in &xs {
            out.push(PatchWindow { y, x, side });
        }
    }
    out
}

/// Mean of per-window si-MSE with the scale fit independently per window.
/// A window whose prediction is identically zero contributes
/// `||gt_window||^2 / N_window` (alpha treated as 0).
pub fn si_lmse<T: Scalar>(gt: &Image<T>, pred: &Image<T>) -> Result<f64> {
    check_same(gt, pred)?;
    let windows = patch_grid(gt.height(), gt.width(), 0.1, 0.5);
    let mut total = 0.0;
    for win in &windows {
        let mut gp = 0.0;
        let mut pp = 0.0;
        let mut gg = 0.0;
        for y in win.y..win.y + win.side {
            for x in win.x..win.x + win.side {
                for c in 0..3 {
                    let g = gt.get(y, x, c).as_f64();
                    let p = pred.get(y, x, c).as_f64();
                    gp += g * p;
                    pp += p * p;
                    gg += g * g;
                }
            }
        }
        let n = (win.side * win.side) as f64;
        if pp == 0.0 {
            total += gg / n;
            continue;
        }
        let alpha = gp / pp;
        let mut acc = 0.0;
        for y in win.y..win.y + win.side {
            for x in win.x..win.x + win.side {
                for c in 0..3 {
                    let r = gt.get(y, x, c).as_f64() - alpha * pred.get(y, x, c).as_f64();
                    acc += r * r;
                }
            }
        }
        total += acc / n;
    }
    Ok(total / windows.len() as f64)
}

/// Albedo/shading values of one two-sided metric family.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TwoSided {
    pub albedo: f64,
    pub shading: f64,
}

impl TwoSided {
    pub fn average(&self) -> f64 {
        (self.albedo + self.shading) / 2.0
    }
}

/// All five metric families for one prediction pair.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricValues {
    pub si_mse: TwoSided,
    pub si_lmse: TwoSided,
    pub dssim: TwoSided,
    pub mse: TwoSided,
    pub rs_mse: f64,
}

#[derive(Clone, Debug)]
pub struct ImageRow {
    pub id: String,
    pub values: MetricValues,
}

/// Per-image rows plus their per-cell mean.
#[derive(Clone, Debug)]
pub struct MetricsReport {
    pub rows: Vec<ImageRow>,
    pub aggregate: MetricValues,
    pub count: usize,
}

fn cell_mean(values: &[MetricValues]) -> MetricValues {
    let n = values.len().max(1) as f64;
    let mut acc = MetricValues::default();
    for v in values {
        acc.si_mse.albedo += v.si_mse.albedo;
        acc.si_mse.shading += v.si_mse.shading;
        acc.si_lmse.albedo += v.si_lmse.albedo;
        acc.si_lmse.shading += v.si_lmse.shading;
        acc.dssim.albedo += v.dssim.albedo;
        acc.dssim.shading += v.dssim.shading;
        acc.mse.albedo += v.mse.albedo;
        acc.mse.shading += v.mse.shading;
        acc.rs_mse += v.rs_mse;
    }
    acc.si_mse.albedo /= n;
    acc.si_mse.shading /= n;
    acc.si_lmse.albedo /= n;
    acc.si_lmse.shading /= n;
    acc.dssim.albedo /= n;
    acc.dssim.shading /= n;
    acc.mse.albedo /= n;
    acc.mse.shading /= n;
    acc.rs_mse /= n;
    acc
}

impl MetricsReport {
    pub fn from_rows(rows: Vec<ImageRow>) -> Self {
        let values: Vec<MetricValues> = rows.iter().map(|r| r.values).collect();
        MetricsReport {
            aggregate: cell_mean(&values),
            count: rows.len(),
            rows,
        }
    }

    /// Double cross-validation: the aggregate is the per-cell mean of the
    /// two fold aggregates.
    pub fn merge_folds(a: &MetricsReport, b: &MetricsReport) -> MetricsReport {
        let mut rows = a.rows.clone();
        rows.extend(b.rows.iter().cloned());
        MetricsReport {
            aggregate: cell_mean(&[a.aggregate, b.aggregate]),
            count: a.count + b.count,
            rows,
        }
    }

    /// One row per image plus an `aggregate` row. Table-convention columns
    /// are x100 at two decimals; `raw_*` columns keep full precision.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "image_id,si_mse_A,si_mse_S,si_lmse_A,si_lmse_S,dssim_A,dssim_S,mse_A,mse_S,rs_mse,\
             raw_si_mse_A,raw_si_mse_S,raw_si_lmse_A,raw_si_lmse_S,raw_dssim_A,raw_dssim_S,\
             raw_mse_A,raw_mse_S,raw_rs_mse\n",
        );
        let mut push_row = |id: &str, v: &MetricValues| {
            let t = |x: f64| format!("{:.2}", x * 100.0);
            let r = |x: f64| format!("{x:?}");
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                id,
                t(v.si_mse.albedo),
                t(v.si_mse.shading),
                t(v.si_lmse.albedo),
                t(v.si_lmse.shading),
                t(v.dssim.albedo),
                t(v.dssim.shading),
                t(v.mse.albedo),
                t(v.mse.shading),
                t(v.rs_mse),
                r(v.si_mse.albedo),
                r(v.si_mse.shading),
                r(v.si_lmse.albedo),
                r(v.si_lmse.shading),
                r(v.dssim.albedo),
                r(v.dssim.shading),
                r(v.mse.albedo),
                r(v.mse.shading),
                r(v.rs_mse),
            ));
        };
        for row in &self.rows {
            push_row(&row.id, &row.values);
        }
        push_row("aggregate", &self.aggregate);
        out
    }
}

/// Runs the whole suite for one prediction pair.
pub fn evaluate_pair<T: Scalar>(
    id: &str,
    gt_albedo: &Image<T>,
    gt_shading: &Image<T>,
    pred_albedo: &Image<T>,
    pred_shading: &Image<T>,
) -> Result<ImageRow> {
    let values = MetricValues {
        si_mse: TwoSided {
            albedo: si_mse(gt_albedo, pred_albedo)?,
            shading: si_mse(gt_shading, pred_shading)?,
        },
        si_lmse: TwoSided {
            albedo: si_lmse(gt_albedo, pred_albedo)?,
            shading: si_lmse(gt_shading, pred_shading)?,
        },
        dssim: TwoSided {
            albedo: dssim(gt_albedo, pred_albedo)?,
            shading: dssim(gt_shading, pred_shading)?,
        },
        mse: TwoSided {
            albedo: mse(gt_albedo, pred_albedo)?,
            shading: mse(gt_shading, pred_shading)?,
        },
        rs_mse: rs_mse(gt_albedo, pred_albedo, gt_shading, pred_shading)?,
    };
    Ok(ImageRow {
        id: id.to_string(),
        values,
    })
}

/// Which component a constant baseline holds fixed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstantBaseline {
    ShadingConstant,
    AlbedoConstant,
}

impl ConstantBaseline {
    pub fn name(self) -> &'static str {
        match self {
            ConstantBaseline::ShadingConstant => "shading_constant",
            ConstantBaseline::AlbedoConstant => "albedo_constant",
        }
    }
}

/// The reference floor: predicts one component as its per-image mean and the
/// other as the input divided by that constant, then runs the full suite.
pub fn baseline_constant<T: Scalar>(
    kind: ConstantBaseline,
    samples: &[Sample<T>],
) -> Result<MetricsReport> {
    let mut rows = Vec::with_capacity(samples.len());
    for s in samples {
        let gt_c = match kind {
            ConstantBaseline::ShadingConstant => &s.shading,
            ConstantBaseline::AlbedoConstant => &s.albedo,
        };
        let mean =
            gt_c.data().iter().map(|v| v.as_f64()).sum::<f64>() / gt_c.data().len() as f64;
        if mean <= 0.0 {
            return Err(Error::Degenerate(format!(
                "constant baseline: component mean {mean} in sample {}",
                s.id
            )));
        }
        let (h, w) = (s.image.height(), s.image.width());
        let constant = Image::<T>::full(h, w, T::of_f64(mean));
        let divided = Image::<T>::new(
            h,
            w,
            s.image
                .data()
                .iter()
                .map(|v| T::of_f64(v.as_f64() / mean))
                .collect(),
        )?;
        let (pred_albedo, pred_shading) = match kind {
            ConstantBaseline::ShadingConstant => (divided, constant),
            ConstantBaseline::AlbedoConstant => (constant, divided),
        };
        rows.push(evaluate_pair(
            &s.id,
            &s.albedo,
            &s.shading,
            &pred_albedo,
            &pred_shading,
        )?);
    }
    Ok(MetricsReport::from_rows(rows))
}
