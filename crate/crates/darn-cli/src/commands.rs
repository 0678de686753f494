//! Subcommand implementations. Everything runs in `f32`, the training
//! precision; metric accumulation happens in `f64` inside the library.

use crate::config::RunConfig;
use darn::data::{
    load_dataset, load_image, save_image_16, split_dataset, synth_dataset, write_dataset,
    write_split_file, Sample, SplitSpec,
};
use darn::metrics::{
    baseline_constant, evaluate_pair, ConstantBaseline, MetricsReport,
};
use darn::model::{decompose, load_checkpoint};
use darn::train::{evaluate, train};
use darn::{Error, Result};
use std::path::{Path, PathBuf};

pub fn synth(config: &RunConfig, out: &Path) -> Result<()> {
    let samples = synth_dataset::<f32>(
        config.seed()?,
        config.usize("synth.count")?,
        config.usize("synth.size")?,
        config.usize("synth.frames_per_scene")?,
        &config.synth_config()?,
    );
    std::fs::create_dir_all(out)?;
    write_dataset(out, &samples)?;
    config.write_resolved(out)?;
    println!(
        "wrote {} samples ({} scenes) to {}",
        samples.len(),
        samples.len().div_ceil(config.usize("synth.frames_per_scene")?.max(1)),
        out.display()
    );
    Ok(())
}

/// Samples plus (train, test) index lists.
type SplitSamples = (Vec<Sample<f32>>, Vec<usize>, Vec<usize>);

fn load_split(config: &RunConfig, data: &Path) -> Result<SplitSamples> {
    let samples = load_dataset::<f32>(data)?;
    let spec = SplitSpec {
        mode: config.split_mode()?,
        seed: config.seed()?,
        fraction: config.f64("data.fraction")?,
    };
    let (train_idx, test_idx) = split_dataset(&samples, &spec)?;
    Ok((samples, train_idx, test_idx))
}

fn write_splits(
    dir: &Path,
    samples: &[Sample<f32>],
    train_idx: &[usize],
    test_idx: &[usize],
) -> Result<()> {
    let ids = |idx: &[usize]| -> Vec<&str> { idx.iter().map(|&i| samples[i].id.as_str()).collect() };
    write_split_file(&dir.join("split_train.txt"), &ids(train_idx))?;
    write_split_file(&dir.join("split_test.txt"), &ids(test_idx))?;
    Ok(())
}

pub fn train_cmd(config: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let (samples, mut train_idx, mut test_idx) = load_split(config, data)?;
    if config.bool("data.swap_split")? {
        std::mem::swap(&mut train_idx, &mut test_idx);
    }
    std::fs::create_dir_all(out)?;
    config.write_resolved(out)?;
    write_splits(out, &samples, &train_idx, &test_idx)?;
    let train_set: Vec<Sample<f32>> = train_idx.iter().map(|&i| samples[i].clone()).collect();
    let outcome = train(&config.train_config()?, &train_set, Some(out), true)?;
    println!(
        "final checkpoint: {}",
        outcome
            .checkpoints
            .last()
            .map(|p| p.display().to_string())
            .unwrap_or_default()
    );
    Ok(())
}

pub fn eval_cmd(
    config: &RunConfig,
    data: &Path,
    checkpoint: &Path,
    checkpoint_b: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let (samples, train_idx, test_idx) = load_split(config, data)?;
    let folds = config.usize("eval.folds")?;
    let pick = |idx: &[usize]| -> Vec<Sample<f32>> { idx.iter().map(|&i| samples[i].clone()).collect() };

    let params_a = load_checkpoint::<f32>(checkpoint)?;
    let report = if folds == 2 {
        let Some(ckpt_b) = checkpoint_b else {
            return Err(Error::Config(
                "eval with eval.folds=2 needs --checkpoint-b (trained with data.swap_split=true)"
                    .into(),
            ));
        };
        let params_b = load_checkpoint::<f32>(ckpt_b)?;
        // Fold A scores the held-out test partition; fold B was trained on
        // it, so it scores the train partition.
        let fold_a = evaluate(&params_a, &pick(&test_idx))?;
        let fold_b = evaluate(&params_b, &pick(&train_idx))?;
        MetricsReport::merge_folds(&fold_a, &fold_b)
    } else {
        evaluate(&params_a, &pick(&test_idx))?
    };

    std::fs::create_dir_all(out)?;
    config.write_resolved(out)?;
    write_splits(out, &samples, &train_idx, &test_idx)?;
    let csv_path = out.join("metrics.csv");
    std::fs::write(&csv_path, report.to_csv())?;
    print_aggregate("model", &report);
    println!("wrote {}", csv_path.display());
    Ok(())
}

pub fn decompose_cmd(
    config: &RunConfig,
    checkpoint: &Path,
    input: &Path,
    out_dir: Option<&Path>,
) -> Result<()> {
    let params = load_checkpoint::<f32>(checkpoint)?;
    let image = load_image::<f32>(input)?;
    let pair = decompose(&params, &image)?;

    let err = pair.consistency_error(&image)?;
    if err > 1e-6 {
        return Err(Error::NonFinite(format!(
            "decomposition violates the product invariant: max |I - A*S| = {err}"
        )));
    }

    // Rescale the pair by one relative factor so both components fit the
    // unit range when possible; the product is preserved exactly.
    let max_a = pair.albedo.data().iter().cloned().fold(0.0f32, f32::max) as f64;
    let max_s = pair.shading.data().iter().cloned().fold(0.0f32, f32::max) as f64;
    let alpha = if max_a <= 1.0 && max_s <= 1.0 {
        1.0
    } else if max_s <= 1.0 / max_a.max(1e-12) {
        // Feasible: any alpha in [max_s, 1/max_a]; stay close to identity.
        1.0f64.clamp(max_s, 1.0 / max_a)
    } else {
        (max_s / max_a).sqrt()
    };
    let albedo = scale(&pair.albedo, alpha as f32);
    let shading = scale(&pair.shading, 1.0 / alpha as f32);

    let dir = out_dir
        .map(PathBuf::from)
        .or_else(|| input.parent().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    let stem = input
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image");
    let albedo_path = dir.join(format!("{stem}_albedo.png"));
    let shading_path = dir.join(format!("{stem}_shading.png"));
    let clips = save_image_16(&albedo_path, &albedo)? + save_image_16(&shading_path, &shading)?;
    if clips > 0 {
        eprintln!("warning: {clips} values fell outside [0,1] and were clipped");
    }
    config.write_resolved(&dir)?;
    println!("wrote {} and {}", albedo_path.display(), shading_path.display());
    Ok(())
}

fn scale(img: &darn::Image32, k: f32) -> darn::Image32 {
    let mut out = img.clone();
    for v in out.data_mut() {
        *v *= k;
    }
    out
}

pub fn metrics_cmd(config: &RunConfig, pred: &Path, gt: &Path, out_csv: &Path) -> Result<()> {
    let ids_in = |dir: &Path| -> Result<Vec<String>> {
        let mut ids = Vec::new();
        for entry in std::fs::read_dir(dir)
            .map_err(|e| Error::Data(format!("cannot read {}: {e}", dir.display())))?
        {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if let Some(id) = name.strip_suffix("_albedo.png") {
                ids.push(id.to_string());
            }
        }
        ids.sort();
        Ok(ids)
    };
    let pred_ids = ids_in(pred)?;
    let gt_ids = ids_in(gt)?;
    let ids: Vec<&String> = pred_ids.iter().filter(|id| gt_ids.contains(id)).collect();
    if ids.is_empty() {
        return Err(Error::Data(format!(
            "no common '<id>_albedo.png' files between {} and {}",
            pred.display(),
            gt.display()
        )));
    }

    let mut rows = Vec::new();
    for id in ids {
        let load4 = |dir: &Path, kind: &str| -> Result<darn::Image64> {
            load_image::<f64>(&dir.join(format!("{id}_{kind}.png")))
        };
        rows.push(evaluate_pair(
            id,
            &load4(gt, "albedo")?,
            &load4(gt, "shading")?,
            &load4(pred, "albedo")?,
            &load4(pred, "shading")?,
        )?);
    }
    let report = MetricsReport::from_rows(rows);
    if let Some(parent) = out_csv.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
            config.write_resolved(parent)?;
        }
    }
    std::fs::write(out_csv, report.to_csv())?;
    print_aggregate("predictions", &report);
    println!("wrote {}", out_csv.display());
    Ok(())
}

pub fn baselines_cmd(config: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let (samples, _train_idx, test_idx) = load_split(config, data)?;
    let test: Vec<Sample<f32>> = test_idx.iter().map(|&i| samples[i].clone()).collect();
    std::fs::create_dir_all(out)?;
    config.write_resolved(out)?;
    for kind in [
        ConstantBaseline::ShadingConstant,
        ConstantBaseline::AlbedoConstant,
    ] {
        let report = baseline_constant(kind, &test)?;
        let path = out.join(format!("baseline_{}.csv", kind.name()));
        std::fs::write(&path, report.to_csv())?;
        print_aggregate(kind.name(), &report);
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn print_aggregate(name: &str, report: &MetricsReport) {
    let v = &report.aggregate;
    println!(
        "{name}: n={} | si-MSE A {:.2} S {:.2} | si-LMSE A {:.2} S {:.2} | DSSIM A {:.2} S {:.2} | MSE A {:.2} S {:.2} | rs-MSE {:.2}  (x100)",
        report.count,
        v.si_mse.albedo * 100.0,
        v.si_mse.shading * 100.0,
        v.si_lmse.albedo * 100.0,
        v.si_lmse.shading * 100.0,
        v.dssim.albedo * 100.0,
        v.dssim.shading * 100.0,
        v.mse.albedo * 100.0,
        v.mse.shading * 100.0,
        v.rs_mse * 100.0,
    );
}
