//! Run configuration: a flat `key = value` file with dotted sections,
//! overridable from the command line (flag wins over file, file wins over
//! the `DARN_SEED` environment variable, everything wins over defaults).
//! Unknown keys are errors, so typos cannot silently fall back to defaults.

use darn::data::{AugmentConfig, ShadingMode, SplitMode, SynthConfig};
use darn::model::{ArchConfig, TargetComponent};
use darn::train::TrainConfig;
use darn::{Error, Result};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Clone, Copy)]
enum Kind {
    U64,
    Usize,
    F64,
    Enum(&'static [&'static str]),
    UsizeList,
}

struct KeySpec {
    key: &'static str,
    kind: Kind,
    default: &'static str,
    help: &'static str,
}

/// Every recognized key with its default.
const SCHEMA: &[KeySpec] = &[
    KeySpec { key: "seed", kind: Kind::U64, default: "0", help: "master seed; DARN_SEED is the lowest-priority source" },
    KeySpec { key: "data.split", kind: Kind::Enum(&["scene", "image"]), default: "scene", help: "split mode" },
    KeySpec { key: "data.fraction", kind: Kind::F64, default: "0.8", help: "train fraction of the split" },
    KeySpec { key: "data.swap_split", kind: Kind::Enum(&["false", "true"]), default: "false", help: "train on the held-out partition (fold B of double cross-validation)" },
    KeySpec { key: "synth.count", kind: Kind::Usize, default: "250", help: "samples to synthesize" },
    KeySpec { key: "synth.size", kind: Kind::Usize, default: "32", help: "square image side" },
    KeySpec { key: "synth.frames_per_scene", kind: Kind::Usize, default: "10", help: "frames sharing one albedo layout" },
    KeySpec { key: "synth.rects", kind: Kind::Usize, default: "12", help: "albedo rectangles" },
    KeySpec { key: "synth.lobes", kind: Kind::Usize, default: "3", help: "shading lobes" },
    KeySpec { key: "synth.shading", kind: Kind::Enum(&["gray", "colored"]), default: "gray", help: "shading tint mode" },
    KeySpec { key: "synth.grad_cap", kind: Kind::F64, default: "0.08", help: "max per-pixel shading gradient" },
    KeySpec { key: "model.features", kind: Kind::Usize, default: "16", help: "residual trunk width" },
    KeySpec { key: "model.blocks", kind: Kind::Usize, default: "4", help: "residual block count" },
    KeySpec { key: "model.target", kind: Kind::Enum(&["shading", "albedo"]), default: "shading", help: "regressed component; the other is derived by division" },
    KeySpec { key: "model.disc_channels", kind: Kind::UsizeList, default: "16,32,64", help: "discriminator stage widths" },
    KeySpec { key: "model.disc_hidden", kind: Kind::Usize, default: "64", help: "discriminator head width" },
    KeySpec { key: "model.bn_eps", kind: Kind::F64, default: "1e-5", help: "batch-norm epsilon" },
    KeySpec { key: "model.bn_momentum", kind: Kind::F64, default: "0.9", help: "running-stat momentum" },
    KeySpec { key: "model.eps_div", kind: Kind::F64, default: "0.001", help: "positivity floor before division" },
    KeySpec { key: "train.iterations", kind: Kind::Usize, default: "2000", help: "optimizer iterations" },
    KeySpec { key: "train.batch_size", kind: Kind::Usize, default: "5", help: "samples per iteration" },
    KeySpec { key: "train.warmup", kind: Kind::Usize, default: "400", help: "iterations before the adversarial term engages" },
    KeySpec { key: "train.disc_per_gen", kind: Kind::Usize, default: "3", help: "discriminator updates per generator update" },
    KeySpec { key: "train.lambda", kind: Kind::F64, default: "1e-4", help: "adversarial loss weight" },
    KeySpec { key: "train.lr_start", kind: Kind::F64, default: "1e-4", help: "initial learning rate" },
    KeySpec { key: "train.lr_end", kind: Kind::F64, default: "1e-6", help: "final learning rate (log-linear decay)" },
    KeySpec { key: "train.crop", kind: Kind::Usize, default: "20", help: "training crop side; also the discriminator patch size" },
    KeySpec { key: "augment.scale_min", kind: Kind::F64, default: "0.8", help: "lower scale bound" },
    KeySpec { key: "augment.scale_max", kind: Kind::F64, default: "1.2", help: "upper scale bound" },
    KeySpec { key: "augment.max_angle", kind: Kind::F64, default: "15", help: "rotation bound in degrees" },
    KeySpec { key: "augment.mirror_prob", kind: Kind::F64, default: "0.5", help: "horizontal mirror probability" },
    KeySpec { key: "eval.folds", kind: Kind::Usize, default: "1", help: "1, or 2 for double cross-validation" },
];

fn spec_of(key: &str) -> Option<&'static KeySpec> {
    SCHEMA.iter().find(|s| s.key == key)
}

/// Resolves a flag name: either a full dotted key or an unambiguous last
/// segment (`--lambda` means `train.lambda`).
pub fn resolve_key(name: &str) -> Result<&'static str> {
    if let Some(s) = spec_of(name) {
        return Ok(s.key);
    }
    let matches: Vec<&KeySpec> = SCHEMA
        .iter()
        .filter(|s| s.key.rsplit('.').next() == Some(name))
        .collect();
    match matches.len() {
        1 => Ok(matches[0].key),
        0 => Err(Error::Config(format!("unknown config key '{name}'"))),
        _ => Err(Error::Config(format!(
            "ambiguous key '{name}': matches {}",
            matches
                .iter()
                .map(|s| s.key)
                .collect::<Vec<_>>()
                .join(", ")
        ))),
    }
}

fn validate(key: &str, value: &str, at: &str) -> Result<()> {
    let spec = spec_of(key).expect("validated keys come from the schema");
    let bad = |what: &str| {
        Err(Error::Config(format!(
            "key '{key}' {at}: expected {what}, got '{value}'"
        )))
    };
    match spec.kind {
        Kind::U64 => value.parse::<u64>().map(|_| ()).or_else(|_| bad("an unsigned integer")),
        Kind::Usize => value.parse::<usize>().map(|_| ()).or_else(|_| bad("an unsigned integer")),
        Kind::F64 => value.parse::<f64>().map(|_| ()).or_else(|_| bad("a number")),
        Kind::Enum(options) => {
            if options.contains(&value) {
                Ok(())
            } else {
                bad(&format!("one of {}", options.join("|")))
            }
        }
        Kind::UsizeList => {
            if !value.is_empty() && value.split(',').all(|v| v.trim().parse::<usize>().is_ok()) {
                Ok(())
            } else {
                bad("a comma-separated list of unsigned integers")
            }
        }
    }
}

/// The fully resolved configuration.
#[derive(Clone, Debug)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl RunConfig {
    /// Defaults, then `DARN_SEED`, then the file, then flag overrides.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
        let mut values: BTreeMap<&'static str, String> = SCHEMA
            .iter()
            .map(|s| (s.key, s.default.to_string()))
            .collect();
        if let Ok(env_seed) = std::env::var("DARN_SEED") {
            validate("seed", &env_seed, "(from DARN_SEED)")?;
            values.insert("seed", env_seed);
        }
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
            for (ln, raw) in text.lines().enumerate() {
                let line = raw.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let Some((k, v)) = line.split_once('=') else {
                    return Err(Error::Config(format!(
                        "{}:{}: expected 'key = value'",
                        path.display(),
                        ln + 1
                    )));
                };
                let (k, v) = (k.trim(), v.trim());
                let Some(spec) = spec_of(k) else {
                    return Err(Error::Config(format!(
                        "{}:{}: unknown key '{k}'",
                        path.display(),
                        ln + 1
                    )));
                };
                validate(spec.key, v, &format!("at {}:{}", path.display(), ln + 1))?;
                values.insert(spec.key, v.to_string());
            }
        }
        for (name, value) in overrides {
            let key = resolve_key(name)?;
            validate(key, value, "(from command line)")?;
            values.insert(key, value.clone());
        }
        let config = RunConfig { values };
        config.check_constraints()?;
        Ok(config)
    }

    fn check_constraints(&self) -> Result<()> {
        if self.f64("train.lr_end")? > self.f64("train.lr_start")? {
            return Err(Error::Config(
                "train.lr_end must not exceed train.lr_start".into(),
            ));
        }
        if self.f64("train.lambda")? < 0.0 {
            return Err(Error::Config("train.lambda must be >= 0".into()));
        }
        let fraction = self.f64("data.fraction")?;
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::Config("data.fraction must be in [0, 1]".into()));
        }
        let folds = self.usize("eval.folds")?;
        if folds != 1 && folds != 2 {
            return Err(Error::Config("eval.folds must be 1 or 2".into()));
        }
        Ok(())
    }

    fn raw(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::Config(format!("unknown config key '{key}'")))
    }

    pub fn u64(&self, key: &str) -> Result<u64> {
        self.raw(key)?
            .parse()
            .map_err(|_| Error::Config(format!("key '{key}' is not an unsigned integer")))
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.raw(key)?
            .parse()
            .map_err(|_| Error::Config(format!("key '{key}' is not an unsigned integer")))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        self.raw(key)?
            .parse()
            .map_err(|_| Error::Config(format!("key '{key}' is not a number")))
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        Ok(self.raw(key)? == "true")
    }

    pub fn usize_list(&self, key: &str) -> Result<Vec<usize>> {
        self.raw(key)?
            .split(',')
            .map(|v| {
                v.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("key '{key}' has a non-integer element")))
            })
            .collect()
    }

    pub fn seed(&self) -> Result<u64> {
        self.u64("seed")
    }

    pub fn split_mode(&self) -> Result<SplitMode> {
        SplitMode::parse(self.raw("data.split")?)
    }

    pub fn synth_config(&self) -> Result<SynthConfig> {
        Ok(SynthConfig {
            n_rects: self.usize("synth.rects")?,
            n_lobes: self.usize("synth.lobes")?,
            shading_mode: match self.raw("synth.shading")? {
                "colored" => ShadingMode::Colored,
                _ => ShadingMode::Gray,
            },
            grad_cap: self.f64("synth.grad_cap")?,
        })
    }

    pub fn arch_config(&self) -> Result<ArchConfig> {
        Ok(ArchConfig {
            features: self.usize("model.features")?,
            blocks: self.usize("model.blocks")?,
            target: TargetComponent::parse(self.raw("model.target")?)?,
            disc_channels: self.usize_list("model.disc_channels")?,
            disc_hidden: self.usize("model.disc_hidden")?,
            patch: self.usize("train.crop")?,
            bn_eps: self.f64("model.bn_eps")?,
            bn_momentum: self.f64("model.bn_momentum")?,
            eps_div: self.f64("model.eps_div")?,
        })
    }

    pub fn augment_config(&self) -> Result<AugmentConfig> {
        Ok(AugmentConfig {
            scale_min: self.f64("augment.scale_min")?,
            scale_max: self.f64("augment.scale_max")?,
            max_angle_deg: self.f64("augment.max_angle")?,
            mirror_prob: self.f64("augment.mirror_prob")?,
            crop: self.usize("train.crop")?,
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            iterations: self.usize("train.iterations")?,
            batch_size: self.usize("train.batch_size")?,
            warmup_iters: self.usize("train.warmup")?,
            disc_per_gen: self.usize("train.disc_per_gen")?,
            lambda: self.f64("train.lambda")?,
            lr_start: self.f64("train.lr_start")?,
            lr_end: self.f64("train.lr_end")?,
            seed: self.seed()?,
            arch: self.arch_config()?,
            augment: self.augment_config()?,
            split_mode: self.split_mode()?,
            split_fraction: self.f64("data.fraction")?,
        })
    }

    /// `key = value` lines for every key, reusable as a config file.
    pub fn dump(&self) -> String {
        let mut out = String::from("# fully resolved configuration\n");
        for (key, value) in &self.values {
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    /// Writes the resolved configuration next to a run's outputs so the run
    /// can be reproduced from that file alone.
    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("resolved_config.txt"), self.dump())?;
        Ok(())
    }
}

/// One help line per key.
pub fn schema_help() -> String {
    let mut out = String::new();
    for s in SCHEMA {
        let _ = writeln!(out, "  {:<24} default {:<10} {}", s.key, s.default, s.help);
    }
    out
}
