use super::*;
use crate::data::{synth_mondrian, SynthConfig};
use crate::rng;
use rand::Rng;

fn rand_image(seed: u64, h: usize, w: usize, lo: f64, hi: f64) -> Image<f64> {
    let mut r = rng::stream(seed, &[0x3E7]);
    Image::new(h, w, (0..h * w * 3).map(|_| r.gen_range(lo..hi)).collect()).unwrap()
}

fn scale_image(img: &Image<f64>, k: f64) -> Image<f64> {
    Image::new(
        img.height(),
        img.width(),
        img.data().iter().map(|&v| v * k).collect(),
    )
    .unwrap()
}

/// Brute-force si-MSE: sweep alpha densely, keep the best residual.
fn si_mse_sweep(gt: &Image<f64>, pred: &Image<f64>, lo: f64, hi: f64, step: f64) -> (f64, f64) {
    let mut best = (f64::INFINITY, lo);
    let mut alpha = lo;
    while alpha <= hi {
        let mut acc = 0.0;
        for (&g, &p) in gt.data().iter().zip(pred.data()) {
            let r = g - alpha * p;
            acc += r * r;
        }
        let v = acc / gt.pixels() as f64;
        if v < best.0 {
            best = (v, alpha);
        }
        alpha += step;
    }
    (best.1, best.0)
}

#[test]
fn optimal_scale_recovers_known_factors() {
    let gt = rand_image(1, 4, 4, 0.1, 1.0);
    let half = scale_image(&gt, 0.5);
    assert!((optimal_scale(&gt, &half).unwrap() - 2.0).abs() < 1e-12);
    assert!((optimal_scale(&gt, &gt).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn optimal_scale_matches_dense_sweep() {
    for seed in 0..5 {
        let gt = rand_image(10 + seed, 2, 2, -1.0, 1.0);
        let pred = rand_image(20 + seed, 2, 2, -1.0, 1.0);
        let alpha = optimal_scale(&gt, &pred).unwrap();
        let (alpha_sweep, _) = si_mse_sweep(&gt, &pred, -10.0, 10.0, 1e-4);
        assert!(
            (alpha - alpha_sweep).abs() < 1e-3,
            "seed {seed}: {alpha} vs swept {alpha_sweep}"
        );
    }
}

#[test]
fn optimal_scale_degenerate_prediction_is_error() {
    let gt = rand_image(2, 3, 3, 0.0, 1.0);
    let zero = Image::<f64>::zeros(3, 3);
    assert!(matches!(
        optimal_scale(&gt, &zero),
        Err(Error::Degenerate(_))
    ));
}

#[test]
fn si_mse_is_scale_invariant() {
    let gt = rand_image(3, 8, 8, 0.0, 1.0);
    let pred = rand_image(4, 8, 8, 0.1, 1.0);
    let base = si_mse(&gt, &pred).unwrap();
    assert!(base > 0.0);
    for k in [0.5, 2.0, 10.0] {
        let scaled = si_mse(&gt, &scale_image(&pred, k)).unwrap();
        let rel = (scaled - base).abs() / base;
        assert!(rel < 1e-10, "k={k}: rel drift {rel}");
    }
    assert!(si_mse(&gt, &gt).unwrap() < 1e-25);
    assert!(si_mse(&gt, &scale_image(&gt, 3.0)).unwrap() < 1e-20);
}

#[test]
fn si_mse_matches_dense_sweep_value() {
    for seed in 0..5 {
        let gt = rand_image(30 + seed, 2, 1, 0.0, 1.0);
        let pred = rand_image(40 + seed, 2, 1, 0.1, 1.0);
        let closed = si_mse(&gt, &pred).unwrap();
        let (_, swept) = si_mse_sweep(&gt, &pred, -10.0, 10.0, 1e-4);
        assert!((closed - swept).abs() < 1e-6, "seed {seed}");
        assert!(closed <= swept + 1e-12, "closed form must not exceed sweep");
    }
}

#[test]
fn mse_convention_folds_channels() {
    let gt = Image::<f64>::full(4, 4, 0.5);
    let pred = scale_image(&gt, 2.0);
    // 0.25 squared error per channel, three channels folded, divided by pixels.
    assert!((mse(&gt, &pred).unwrap() - 0.75).abs() < 1e-12);
}

#[test]
fn mse_matches_loop_oracle_and_dominates_si_mse() {
    for seed in 0..20 {
        let gt = rand_image(50 + seed, 6, 5, 0.0, 1.0);
        let pred = rand_image(70 + seed, 6, 5, 0.0, 1.0);
        let m = mse(&gt, &pred).unwrap();
        let mut acc = 0.0;
        for (&g, &p) in gt.data().iter().zip(pred.data()) {
            acc += (g - p) * (g - p);
        }
        assert!((m - acc / 30.0).abs() < 1e-12);
        let s = si_mse(&gt, &pred).unwrap();
        assert!(m >= s - 1e-12, "seed {seed}: mse {m} < si_mse {s}");
    }
}

#[test]
fn patch_grid_square_image() {
    let windows = patch_grid(100, 100, 0.1, 0.5);
    assert_eq!(windows.len(), 361);
    assert!(windows.iter().all(|w| w.side == 10));
    assert_eq!(windows[0], PatchWindow { y: 0, x: 0, side: 10 });
    assert_eq!(windows.last().unwrap(), &PatchWindow { y: 90, x: 90, side: 10 });
}

#[test]
fn patch_grid_rectangular_image() {
    let windows = patch_grid(100, 80, 0.1, 0.5);
    // 19 rows along the 100 side, 15 columns along the 80 side.
    assert_eq!(windows.len(), 285);
}

#[test]
fn patch_grid_covers_every_pixel() {
    let mut r = rng::stream(5, &[0xC0]);
    for _ in 0..50 {
        let h = r.gen_range(10..200);
        let w = r.gen_range(10..200);
        let windows = patch_grid(h, w, 0.1, 0.5);
        let mut covered = vec![false; h * w];
        for win in &windows {
            for y in win.y..win.y + win.side {
                for x in win.x..win.x + win.side {
                    covered[y * w + x] = true;
                }
            }
        }
        assert!(covered.iter().all(|&c| c), "{h}x{w}: uncovered pixels");
    }
}

#[test]
fn si_lmse_zero_for_perfect_and_per_window_scales() {
    let gt = rand_image(6, 8, 8, 0.1, 1.0);
    assert!(si_lmse(&gt, &gt).unwrap() < 1e-25);

    // 8x8 gives 1x1 windows: an arbitrary positive per-pixel factor is
    // absorbed window by window.
    let mut r = rng::stream(7, &[0xD0]);
    let mut pred = gt.clone();
    for y in 0..8 {
        for x in 0..8 {
            let f = r.gen_range(0.3..3.0);
            for c in 0..3 {
                pred.set(y, x, c, gt.get(y, x, c) * f);
            }
        }
    }
    assert!(si_lmse(&gt, &pred).unwrap() < 1e-20);
    assert!(si_mse(&gt, &pred).unwrap() > 1e-4, "global fit cannot absorb it");
}

#[test]
fn si_lmse_matches_per_window_sweep_oracle() {
    for seed in 0..5 {
        let gt = rand_image(80 + seed, 8, 8, 0.0, 1.0);
        let pred = rand_image(90 + seed, 8, 8, 0.1, 1.0);
        let fast = si_lmse(&gt, &pred).unwrap();

        let windows = patch_grid(8, 8, 0.1, 0.5);
        let mut total = 0.0;
        for win in &windows {
            let mut gt_w = Vec::new();
            let mut pred_w = Vec::new();
            for y in win.y..win.y + win.side {
                for x in win.x..win.x + win.side {
                    for c in 0..3 {
                        gt_w.push(gt.get(y, x, c));
                        pred_w.push(pred.get(y, x, c));
                    }
                }
            }
            let mut best = f64::INFINITY;
            let mut alpha = -10.0;
            while alpha <= 10.0 {
                let acc: f64 = gt_w
                    .iter()
                    .zip(&pred_w)
                    .map(|(&g, &p)| (g - alpha * p) * (g - alpha * p))
                    .sum();
                best = best.min(acc / (win.side * win.side) as f64);
                alpha += 1e-4;
            }
            total += best;
        }
        let swept = total / windows.len() as f64;
        assert!((fast - swept).abs() < 1e-6, "seed {seed}: {fast} vs {swept}");
    }
}

#[test]
fn ssim_of_identical_images_is_one() {
    let x = rand_image(8, 16, 16, 0.0, 1.0);
    let s = ssim(&x, &x).unwrap();
    assert!((s - 1.0).abs() <= 1e-12, "ssim(X,X) = {s}");
    assert!(dssim(&x, &x).unwrap() <= 1e-12);
}

#[test]
fn ssim_constant_images_match_closed_form() {
    let (c1, c2) = (0.3, 0.7);
    let x = Image::<f64>::full(12, 12, c1);
    let y = Image::<f64>::full(12, 12, c2);
    let expect = (2.0 * c1 * c2 + 0.0001) / (c1 * c1 + c2 * c2 + 0.0001);
    let got = ssim(&x, &y).unwrap();
    assert!((got - expect).abs() < 1e-10, "{got} vs {expect}");
}

/// Direct 2-D windowed reference: no separability, explicit renormalized
/// weights, straight from the definition.
fn ssim_reference(x: &Image<f64>, y: &Image<f64>) -> f64 {
    let (h, w) = (x.height(), x.width());
    let (c1, c2) = (0.0001, 0.0009);
    let mut g = [0.0f64; 11];
    for (i, t) in g.iter_mut().enumerate() {
        let d = i as f64 - 5.0;
        *t = (-d * d / 4.5).exp();
    }
    let mut total = 0.0;
    for ch in 0..3 {
        for cy in 0..h {
            for cx in 0..w {
                let mut wsum = 0.0;
                let (mut mx, mut my) = (0.0, 0.0);
                for dy in -5i64..=5 {
                    for dx in -5i64..=5 {
                        let (yy, xx) = (cy as i64 + dy, cx as i64 + dx);
                        if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
                            continue;
                        }
                        let wgt = g[(dy + 5) as usize] * g[(dx + 5) as usize];
                        wsum += wgt;
                        mx += wgt * x.get(yy as usize, xx as usize, ch);
                        my += wgt * y.get(yy as usize, xx as usize, ch);
                    }
                }
                mx /= wsum;
                my /= wsum;
                let (mut sx, mut sy, mut sxy) = (0.0, 0.0, 0.0);
                for dy in -5i64..=5 {
                    for dx in -5i64..=5 {
                        let (yy, xx) = (cy as i64 + dy, cx as i64 + dx);
                        if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
                            continue;
                        }
                        let wgt = g[(dy + 5) as usize] * g[(dx + 5) as usize] / wsum;
                        let xv = x.get(yy as usize, xx as usize, ch);
                        let yv = y.get(yy as usize, xx as usize, ch);
                        sx += wgt * (xv - mx) * (xv - mx);
                        sy += wgt * (yv - my) * (yv - my);
                        sxy += wgt * (xv - mx) * (yv - my);
                    }
                }
                total += ((2.0 * mx * my + c1) * (2.0 * sxy + c2))
                    / ((mx * mx + my * my + c1) * (sx + sy + c2));
            }
        }
    }
    total / (3 * h * w) as f64
}

#[test]
fn ssim_matches_independent_reference() {
    for seed in 0..3 {
        let x = rand_image(200 + seed, 14, 11, 0.0, 1.0);
        let y = rand_image(300 + seed, 14, 11, 0.0, 1.0);
        let fast = ssim(&x, &y).unwrap();
        let refv = ssim_reference(&x, &y);
        assert!(
            (fast - refv).abs() < 1e-5,
            "seed {seed}: {fast} vs reference {refv}"
        );
    }
}

#[test]
fn dssim_is_symmetric() {
    let x = rand_image(9, 10, 10, 0.0, 1.0);
    let y = rand_image(19, 10, 10, 0.0, 1.0);
    let ab = dssim(&x, &y).unwrap();
    let ba = dssim(&y, &x).unwrap();
    assert!((ab - ba).abs() <= 1e-12);
}

#[test]
fn relative_scale_identity_and_known_shift() {
    let a = rand_image(21, 6, 6, 0.1, 0.9);
    let s = rand_image(22, 6, 6, 0.2, 1.0);
    let sol = solve_relative_scale(&a, &a, &s, &s).unwrap();
    assert!((sol.alpha - 1.0).abs() < 1e-6, "alpha {}", sol.alpha);
    assert!(!sol.at_bracket_edge);
    assert!(rs_mse(&a, &a, &s, &s).unwrap() <= 1e-12);

    // Predictions off by a joint relative factor of 2 are fully recovered.
    let pred_a = scale_image(&a, 0.5);
    let pred_s = scale_image(&s, 2.0);
    let sol = solve_relative_scale(&a, &pred_a, &s, &pred_s).unwrap();
    assert!((sol.alpha - 2.0).abs() < 1e-6, "alpha {}", sol.alpha);
    assert!(rs_mse(&a, &pred_a, &s, &pred_s).unwrap() <= 1e-10);
}

#[test]
fn rs_mse_zero_cases_across_alphas() {
    let a = rand_image(23, 5, 7, 0.1, 0.9);
    let s = rand_image(24, 5, 7, 0.2, 1.0);
    for alpha in [0.5, 1.0, 3.0] {
        let pred_a = scale_image(&a, alpha);
        let pred_s = scale_image(&s, 1.0 / alpha);
        let v = rs_mse(&a, &pred_a, &s, &pred_s).unwrap();
        assert!(v <= 1e-10, "alpha {alpha}: rs_mse {v}");
    }
}

#[test]
fn rs_mse_is_invariant_to_joint_relative_rescale() {
    let a = rand_image(25, 6, 6, 0.1, 0.9);
    let s = rand_image(26, 6, 6, 0.2, 1.0);
    let pred_a = rand_image(27, 6, 6, 0.1, 0.9);
    let pred_s = rand_image(28, 6, 6, 0.2, 1.0);
    let base = rs_mse(&a, &pred_a, &s, &pred_s).unwrap();
    for gamma in [0.25, 4.0] {
        let v = rs_mse(&a, &scale_image(&pred_a, gamma), &s, &scale_image(&pred_s, 1.0 / gamma))
            .unwrap();
        assert!((v - base).abs() <= 1e-8, "gamma {gamma}: {v} vs {base}");
    }
}

#[test]
fn rs_mse_penalizes_joint_scaling_of_both_components() {
    let a = rand_image(29, 6, 6, 0.1, 0.9);
    let s = rand_image(31, 6, 6, 0.2, 1.0);
    // Scaling BOTH up violates the product; no relative alpha can fix it.
    let v = rs_mse(&a, &scale_image(&a, 2.0), &s, &scale_image(&s, 2.0)).unwrap();
    assert!(v > 1e-3, "inconsistent pair must be penalized, got {v}");
}

#[test]
fn relative_scale_matches_dense_sweep() {
    for seed in 0..5 {
        let a = rand_image(400 + seed, 4, 4, 0.0, 1.0);
        let s = rand_image(500 + seed, 4, 4, 0.1, 1.0);
        let pred_a = rand_image(600 + seed, 4, 4, 0.05, 1.0);
        let pred_s = rand_image(700 + seed, 4, 4, 0.1, 1.0);
        let solved = solve_relative_scale(&a, &pred_a, &s, &pred_s).unwrap().alpha;

        // Dense log-spaced sweep of the objective.
        let residual = |alpha: f64| -> f64 {
            let mut acc = 0.0;
            for (&g, &p) in a.data().iter().zip(pred_a.data()) {
                acc += (g - alpha * p) * (g - alpha * p);
            }
            for (&g, &p) in s.data().iter().zip(pred_s.data()) {
                acc += (g - p / alpha) * (g - p / alpha);
            }
            acc
        };
        let n = 1_000_000;
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..n {
            let t = -6.907755278982137 + 13.815510557964274 * i as f64 / (n - 1) as f64;
            let alpha = t.exp();
            let v = residual(alpha);
            if v < best.0 {
                best = (v, alpha);
            }
        }
        let rel = (solved - best.1).abs() / best.1;
        assert!(rel < 1e-4, "seed {seed}: solver {solved} vs sweep {}", best.1);
        assert!(residual(solved) <= best.0 + 1e-12);
    }
}

#[test]
fn rs_mse_degenerate_predictions_error() {
    let a = rand_image(32, 4, 4, 0.1, 1.0);
    let zero = Image::<f64>::zeros(4, 4);
    assert!(matches!(
        rs_mse(&a, &zero, &a, &a),
        Err(Error::Degenerate(_))
    ));
}

#[test]
fn baseline_on_constant_shading_data_scores_zero() {
    // Ground truth whose shading is exactly constant.
    let cfg = SynthConfig::default();
    let base = synth_mondrian::<f64>(77, 16, 16, &cfg);
    let shading = Image::<f64>::full(16, 16, 0.6);
    let (image, _) = crate::data::recompose(&base.albedo, &shading).unwrap();
    let sample = crate::data::Sample {
        id: "const".into(),
        scene: "const".into(),
        image,
        albedo: base.albedo.clone(),
        shading,
    };
    let report = baseline_constant(ConstantBaseline::ShadingConstant, &[sample]).unwrap();
    let v = &report.aggregate;
    for x in [
        v.si_mse.albedo,
        v.si_mse.shading,
        v.si_lmse.albedo,
        v.si_lmse.shading,
        v.dssim.albedo,
        v.dssim.shading,
        v.mse.albedo,
        v.mse.shading,
        v.rs_mse,
    ] {
        assert!(x.abs() <= 1e-12, "expected zero, got {x}");
    }
}

#[test]
fn baseline_report_schema_and_averages() {
    let cfg = SynthConfig::default();
    let samples: Vec<_> = (0..3)
        .map(|i| synth_mondrian::<f64>(100 + i, 16, 16, &cfg))
        .collect();
    for kind in [
        ConstantBaseline::ShadingConstant,
        ConstantBaseline::AlbedoConstant,
    ] {
        let report = baseline_constant(kind, &samples).unwrap();
        assert_eq!(report.count, 3);
        assert_eq!(report.rows.len(), 3);
        let v = &report.aggregate;
        assert!((v.si_mse.average() - (v.si_mse.albedo + v.si_mse.shading) / 2.0).abs() < 1e-15);
        assert!(v.si_mse.average() >= 0.0 && v.rs_mse >= 0.0);

        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 3 + 1);
        assert!(lines[0].starts_with("image_id,si_mse_A,si_mse_S"));
        assert_eq!(lines[0].split(',').count(), 19);
        assert!(lines.last().unwrap().starts_with("aggregate,"));
    }
}

#[test]
fn fold_merge_averages_aggregates() {
    let mk = |id: &str, x: f64| ImageRow {
        id: id.into(),
        values: MetricValues {
            si_mse: TwoSided { albedo: x, shading: 2.0 * x },
            si_lmse: TwoSided { albedo: x, shading: x },
            dssim: TwoSided { albedo: x, shading: x },
            mse: TwoSided { albedo: x, shading: x },
            rs_mse: 3.0 * x,
        },
    };
    let a = MetricsReport::from_rows(vec![mk("a1", 0.1), mk("a2", 0.3)]);
    let b = MetricsReport::from_rows(vec![mk("b1", 0.5)]);
    let merged = MetricsReport::merge_folds(&a, &b);
    assert_eq!(merged.count, 3);
    assert!((merged.aggregate.si_mse.albedo - (0.2 + 0.5) / 2.0).abs() < 1e-15);
    assert!((merged.aggregate.rs_mse - (3.0f64.mul_add(0.2, 0.0) + 1.5) / 2.0).abs() < 1e-12);
}
