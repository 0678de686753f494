//! Dataset handling: samples with dense ground truth, recomposition,
//! train/test splitting, synthetic generation, augmentation and PNG I/O.
//!
//! On disk a dataset is a tree of `<root>/<scene>/{clean,albedo,shading}/`
//! PNG files plus a `manifest.txt`; the loader recomposes `image = albedo *
//! shading` so every sample satisfies the product invariant in float even
//! though the files are quantized.

mod augment;
mod png_io;
mod synth;

pub use augment::{augment, AugmentConfig};
pub use png_io::{load_image, save_image_16, save_image_8};
pub use synth::{synth_dataset, synth_mondrian, ShadingMode, SynthConfig};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng;
use crate::scalar::Scalar;
use rand::seq::SliceRandom;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

/// One dense-ground-truth sample; `image = albedo * shading` elementwise.
#[derive(Clone, Debug)]
pub struct Sample<T> {
    pub id: String,
    pub scene: String,
    pub image: Image<T>,
    pub albedo: Image<T>,
    pub shading: Image<T>,
}

impl<T: Scalar> Sample<T> {
    pub fn cast<U: Scalar>(&self) -> Sample<U> {
        Sample {
            id: self.id.clone(),
            scene: self.scene.clone(),
            image: self.image.cast(),
            albedo: self.albedo.cast(),
            shading: self.shading.cast(),
        }
    }

    /// Largest deviation of `albedo * shading` from `image`.
    pub fn product_error(&self) -> T {
        self.albedo
            .product(&self.shading)
            .expect("matching shapes")
            .max_abs_diff(&self.image)
    }
}

/// Elementwise `albedo * shading`, clipped to `[0, 1]`; returns the clip
/// count alongside.
pub fn recompose<T: Scalar>(albedo: &Image<T>, shading: &Image<T>) -> Result<(Image<T>, usize)> {
    let mut image = albedo.product(shading)?;
    let mut clips = 0;
    for v in image.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
            clips += 1;
        } else if *v > T::one() {
            *v = T::one();
            clips += 1;
        }
    }
    Ok((image, clips))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitMode {
    /// Whole scenes go to one side; no scene appears in both partitions.
    Scene,
    /// Individual frames are assigned independently.
    Image,
}

impl SplitMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "scene" => Ok(SplitMode::Scene),
            "image" => Ok(SplitMode::Image),
            other => Err(Error::Config(format!(
                "split must be 'scene' or 'image', got '{other}'"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SplitMode::Scene => "scene",
            SplitMode::Image => "image",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub seed: u64,
    /// Fraction assigned to the train partition.
    pub fraction: f64,
}

impl SplitSpec {
    pub fn new(mode: SplitMode, seed: u64) -> Self {
        SplitSpec {
            mode,
            seed,
            fraction: 0.5,
        }
    }
}

/// Deterministic disjoint partition; returns `(train, test)` index lists in
/// ascending order.
pub fn split_dataset<T>(samples: &[Sample<T>], spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut rng = rng::stream(spec.seed, &[0x5917]);
    match spec.mode {
        SplitMode::Scene => {
            let scenes: BTreeSet<&str> = samples.iter().map(|s| s.scene.as_str()).collect();
            if scenes.len() < 2 {
                return Err(Error::Data(format!(
                    "scene split needs at least 2 scenes, found {}",
                    scenes.len()
                )));
            }
            let mut scenes: Vec<&str> = scenes.into_iter().collect();
            scenes.shuffle(&mut rng);
            let n_train = ((scenes.len() as f64) * spec.fraction).round() as usize;
            let train_scenes: BTreeSet<&str> = scenes[..n_train].iter().copied().collect();
            let mut train = Vec::new();
            let mut test = Vec::new();
            for (i, s) in samples.iter().enumerate() {
                if train_scenes.contains(s.scene.as_str()) {
                    train.push(i);
                } else {
                    test.push(i);
                }
            }
            Ok((train, test))
        }
        SplitMode::Image => {
            let mut idx: Vec<usize> = (0..samples.len()).collect();
            idx.shuffle(&mut rng);
            let n_train = ((samples.len() as f64) * spec.fraction).round() as usize;
            let mut train: Vec<usize> = idx[..n_train].to_vec();
            let mut test: Vec<usize> = idx[n_train..].to_vec();
            train.sort_unstable();
            test.sort_unstable();
            Ok((train, test))
        }
    }
}

/// Writes a dataset as `<root>/<scene>/{clean,albedo,shading}/<frame>.png`
/// (16-bit) plus `manifest.txt`.
pub fn write_dataset<T: Scalar>(root: &Path, samples: &[Sample<T>]) -> Result<()> {
    let mut manifest = String::new();
    for s in samples {
        let frame = s
            .id
            .strip_prefix(&format!("{}_", s.scene))
            .unwrap_or(&s.id)
            .to_string();
        let rel = |kind: &str| format!("{}/{}/{}.png", s.scene, kind, frame);
        for kind in ["clean", "albedo", "shading"] {
            std::fs::create_dir_all(root.join(&s.scene).join(kind))?;
        }
        save_image_16(&root.join(rel("albedo")), &s.albedo)?;
        save_image_16(&root.join(rel("shading")), &s.shading)?;
        save_image_16(&root.join(rel("clean")), &s.image)?;
        manifest.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            s.id,
            s.scene,
            rel("albedo"),
            rel("shading"),
            rel("clean"),
        ));
    }
    std::fs::write(root.join("manifest.txt"), manifest)?;
    Ok(())
}

/// Loads a dataset tree. Reads `manifest.txt` when present, otherwise scans
/// `<root>/<scene>/albedo/*.png` with siblings under `shading/`. The image
/// is recomposed from the ground-truth pair in either case.
pub fn load_dataset<T: Scalar>(root: &Path) -> Result<Vec<Sample<T>>> {
    let manifest = root.join("manifest.txt");
    let entries: Vec<(String, String, PathBuf, PathBuf)> = if manifest.exists() {
        let text = std::fs::read_to_string(&manifest)?;
        let mut out = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            if parts.len() < 4 {
                return Err(Error::Data(format!(
                    "manifest line {}: expected id, scene, albedo, shading",
                    ln + 1
                )));
            }
            out.push((
                parts[0].to_string(),
                parts[1].to_string(),
                root.join(parts[2]),
                root.join(parts[3]),
            ));
        }
        out
    } else {
        let mut out = Vec::new();
        let mut scenes: Vec<PathBuf> = std::fs::read_dir(root)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        scenes.sort();
        for scene_dir in scenes {
            let albedo_dir = scene_dir.join("albedo");
            if !albedo_dir.is_dir() {
                continue;
            }
            let scene = scene_dir
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or_default()
                .to_string();
            let mut frames: Vec<PathBuf> = std::fs::read_dir(&albedo_dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "png"))
                .collect();
            frames.sort();
            for albedo_path in frames {
                let frame = albedo_path
                    .file_stem()
                    .and_then(|n| n.to_str())
                    .unwrap_or_default()
                    .to_string();
                let shading_path = scene_dir.join("shading").join(format!("{frame}.png"));
                if !shading_path.exists() {
                    return Err(Error::Data(format!(
                        "missing shading for {}",
                        albedo_path.display()
                    )));
                }
                out.push((format!("{scene}_{frame}"), scene.clone(), albedo_path, shading_path));
            }
        }
        out
    };
    if entries.is_empty() {
        return Err(Error::Data(format!(
            "no samples found under {}",
            root.display()
        )));
    }

    let mut samples = Vec::with_capacity(entries.len());
    for (id, scene, albedo_path, shading_path) in entries {
        let albedo = load_image::<T>(&albedo_path)?;
        let shading = load_image::<T>(&shading_path)?;
        let (image, _clips) = recompose(&albedo, &shading)?;
        samples.push(Sample {
            id,
            scene,
            image,
            albedo,
            shading,
        });
    }
    Ok(samples)
}

/// Writes one id per line.
pub fn write_split_file(path: &Path, ids: &[&str]) -> Result<()> {
    let mut text = String::new();
    for id in ids {
        text.push_str(id);
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests;
