//! Adversarial training: warmup without the adversarial term, then an
//! alternation of discriminator and generator updates, with Adam, a
//! log-linear learning-rate decay and deterministic batching.

mod adam;

pub use adam::{Adam, AdamConfig, AdamPass};

use crate::array::Array;
use crate::data::{augment, AugmentConfig, Sample, SplitMode};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::loss::{
    adversarial_loss, data_loss, discriminator_loss, gradient_loss, total_loss, LossBreakdown,
};
use crate::metrics::{evaluate_pair, MetricsReport};
use crate::model::{
    decompose, discriminator_forward, generator_forward, save_checkpoint, ArchConfig,
    DiscriminatorParams, Mode, ModelParams,
};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor};
use rand::seq::SliceRandom;
use rand::RngCore;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub warmup_iters: usize,
    /// Discriminator updates per generator update after warmup.
    pub disc_per_gen: usize,
    pub lambda: f64,
    pub lr_start: f64,
    pub lr_end: f64,
    pub seed: u64,
    pub arch: ArchConfig,
    pub augment: AugmentConfig,
    /// Train-partition fraction used when the caller splits.
    pub split_mode: SplitMode,
    pub split_fraction: f64,
}

impl Default for TrainConfig {
    /// Desk-scale defaults; the loss weights and schedule constants are the
    /// full-scale ones.
    fn default() -> Self {
        let arch = ArchConfig::desk();
        TrainConfig {
            iterations: 2000,
            batch_size: 5,
            warmup_iters: 400,
            disc_per_gen: 3,
            lambda: 1e-4,
            lr_start: 1e-4,
            lr_end: 1e-6,
            seed: 0,
            augment: AugmentConfig {
                crop: arch.patch,
                ..Default::default()
            },
            arch,
            split_mode: SplitMode::Scene,
            split_fraction: 0.8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(Error::Config("iterations and batch_size must be positive".into()));
        }
        if self.lr_end > self.lr_start {
            return Err(Error::Config("lr_end must not exceed lr_start".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be >= 0".into()));
        }
        if self.augment.crop != self.arch.patch {
            return Err(Error::Config(format!(
                "crop size {} must match the discriminator patch size {}",
                self.augment.crop, self.arch.patch
            )));
        }
        if !(0.0..=1.0).contains(&self.split_fraction) {
            return Err(Error::Config("split fraction must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Log-linear interpolation from `lr_start` (first iteration) to `lr_end`
/// (last iteration).
pub fn lr_schedule(iter: usize, config: &TrainConfig) -> f64 {
    if config.iterations <= 1 {
        return config.lr_start;
    }
    let t = iter as f64 / (config.iterations - 1) as f64;
    config.lr_start * (config.lr_end / config.lr_start).powf(t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Warmup: the adversarial term is disabled and the discriminators rest.
    GeneratorOnly,
    DiscriminatorUpdate,
    GeneratorUpdate,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::GeneratorOnly => "warmup",
            Phase::DiscriminatorUpdate => "discriminator",
            Phase::GeneratorUpdate => "generator",
        }
    }
}

/// Warmup first, then cycles of `disc_per_gen` discriminator ticks followed
/// by one generator tick.
pub fn gan_schedule(iter: usize, config: &TrainConfig) -> Phase {
    if iter < config.warmup_iters {
        return Phase::GeneratorOnly;
    }
    let cycle = config.disc_per_gen + 1;
    if (iter - config.warmup_iters) % cycle < config.disc_per_gen {
        Phase::DiscriminatorUpdate
    } else {
        Phase::GeneratorUpdate
    }
}

/// Deterministic epoch-shuffled sample stream.
struct BatchStream {
    seed: u64,
    order: Vec<usize>,
    epoch: u64,
    pos: usize,
    batch: usize,
}

impl BatchStream {
    fn new(seed: u64, n: usize, batch: usize) -> Self {
        let mut s = BatchStream {
            seed,
            order: (0..n).collect(),
            epoch: 0,
            pos: 0,
            batch,
        };
        s.shuffle();
        s
    }

    fn shuffle(&mut self) {
        let mut r = rng::stream(self.seed, &[0xBA7C, self.epoch]);
        self.order.shuffle(&mut r);
    }

    fn next_batch(&mut self) -> Vec<usize> {
        if self.pos + self.batch > self.order.len() {
            self.epoch += 1;
            self.pos = 0;
            self.shuffle();
        }
        let out = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        out
    }
}

/// Stacks single-image CHW arrays into one `[B, 3, H, W]` batch.
fn batch_chw<T: Scalar>(images: &[&Image<T>]) -> Array<T> {
    let (h, w) = (images[0].height(), images[0].width());
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        data.extend_from_slice(img.to_chw().data());
    }
    Array::new(vec![images.len(), 3, h, w], data).expect("consistent dims")
}

pub struct TrainOutcome<T> {
    pub params: ModelParams<T>,
    /// Training log CSV (iteration, data, grad, adv, total, lr, phase).
    pub log: String,
    pub checkpoints: Vec<PathBuf>,
}

fn fmt_loss(v: f64) -> String {
    format!("{v:?}")
}

/// Runs the full schedule. When `out_dir` is given, periodic checkpoints
/// (every 10% of the run) plus the final one and the training log are
/// written there; on a numeric abort the last good checkpoint stays on disk.
pub fn train<T: Scalar>(
    config: &TrainConfig,
    samples: &[Sample<T>],
    out_dir: Option<&Path>,
    verbose: bool,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }

    let mut params = ModelParams::<T>::init(config.arch.clone(), config.seed);
    let mut opt_gen = Adam::<T>::new(AdamConfig::default());
    let mut opt_da = Adam::<T>::new(AdamConfig::default());
    let mut opt_ds = Adam::<T>::new(AdamConfig::default());
    let mut stream = BatchStream::new(config.seed, samples.len(), config.batch_size);
    let mut log = String::from("iteration,data,grad,adv,total,lr,phase\n");
    let mut checkpoints = Vec::new();
    let ckpt_every = (config.iterations / 10).max(1);
    let momentum = T::of_f64(config.arch.bn_momentum);
    let lambda = T::of_f64(config.lambda);

    let write_ckpt = |params: &ModelParams<T>,
                          name: String,
                          checkpoints: &mut Vec<PathBuf>|
     -> Result<()> {
        if let Some(dir) = out_dir {
            let path = dir.join(name);
            save_checkpoint(params, &path)?;
            checkpoints.push(path);
        }
        Ok(())
    };

    for iter in 0..config.iterations {
        let phase = gan_schedule(iter, config);
        let lr = T::of_f64(lr_schedule(iter, config));
        let batch = stream.next_batch();

        // One augmented crop per slot; identical coordinates feed the
        // input, the ground truth and the discriminators' real patches.
        let mut crops = Vec::with_capacity(batch.len());
        for (slot, &si) in batch.iter().enumerate() {
            let aug_seed = rng::stream(config.seed, &[0xC20F, iter as u64, slot as u64])
                .next_u64();
            crops.push(augment(&samples[si], aug_seed, &config.augment)?);
        }
        let inputs: Vec<&Image<T>> = crops.iter().map(|c| &c.image).collect();
        let gt_albedo: Vec<&Image<T>> = crops.iter().map(|c| &c.albedo).collect();
        let gt_shading: Vec<&Image<T>> = crops.iter().map(|c| &c.shading).collect();

        match phase {
            Phase::GeneratorOnly | Phase::GeneratorUpdate => {
                let disc_hash = params.discriminators_hash();
                let graph = Graph::<T>::with_div_floor(T::of_f64(config.arch.eps_div));
                let x = graph.constant(batch_chw(&inputs));
                let out = generator_forward(
                    &graph,
                    &params.generator,
                    &config.arch,
                    &x,
                    Mode::Train,
                    true,
                )?;
                let ga = graph.constant(batch_chw(&gt_albedo));
                let gs = graph.constant(batch_chw(&gt_shading));
                let data = data_loss(&out.albedo, &out.shading, &ga, &gs)?;
                let grad = gradient_loss(&out.albedo, &out.shading, &ga, &gs)?;

                let adv: Option<Tensor<T>> = if phase == Phase::GeneratorUpdate {
                    let da = discriminator_forward(
                        &graph,
                        &params.disc_albedo,
                        &config.arch,
                        &out.albedo,
                        false,
                    )?;
                    let ds = discriminator_forward(
                        &graph,
                        &params.disc_shading,
                        &config.arch,
                        &out.shading,
                        false,
                    )?;
                    Some(adversarial_loss(&da.prob, &ds.prob)?.value)
                } else {
                    None
                };
                let (total, breakdown) = total_loss(&data, &grad, adv.as_ref(), lambda)?;
                let total_value = breakdown.total.as_f64();
                if !total_value.is_finite() {
                    append_log(out_dir, &log)?;
                    return Err(Error::NonFinite(format!("generator loss at iteration {iter}")));
                }
                total.backward()?;
                let grads = out.bound.grad_arrays();
                let mut pass = opt_gen.begin(lr);
                let mut i = 0;
                params.generator.visit_mut(&mut |name, arr| {
                    pass.update(name, arr, &grads[i]);
                    i += 1;
                });
                pass.finish()?;
                params.generator.apply_bn_updates(&out.bn_updates, momentum);
                assert_eq!(
                    disc_hash,
                    params.discriminators_hash(),
                    "generator phase must not touch discriminators"
                );
                log_row(&mut log, iter, Some(&breakdown), total_value, lr.as_f64(), phase);
            }
            Phase::DiscriminatorUpdate => {
                let gen_hash = params.generator_hash();
                // Fakes come from a frozen generator pass; its batch-stat
                // updates are discarded so the generator stays untouched.
                let (fake_albedo, fake_shading) = {
                    let graph = Graph::<T>::with_div_floor(T::of_f64(config.arch.eps_div));
                    let x = graph.constant(batch_chw(&inputs));
                    let out = generator_forward(
                        &graph,
                        &params.generator,
                        &config.arch,
                        &x,
                        Mode::Train,
                        false,
                    )?;
                    (out.albedo.value(), out.shading.value())
                };

                let graph = Graph::<T>::with_div_floor(T::of_f64(config.arch.eps_div));
                let real_a = graph.constant(batch_chw(&gt_albedo));
                let real_s = graph.constant(batch_chw(&gt_shading));
                let fake_a = graph.constant(fake_albedo);
                let fake_s = graph.constant(fake_shading);
                let da = discriminator_forward(
                    &graph,
                    &params.disc_albedo,
                    &config.arch,
                    &real_a,
                    true,
                )?;
                let da_fake = crate::model::discriminator_apply(&config.arch, &da.bound, &fake_a)?;
                let ds = discriminator_forward(
                    &graph,
                    &params.disc_shading,
                    &config.arch,
                    &real_s,
                    true,
                )?;
                let ds_fake = crate::model::discriminator_apply(&config.arch, &ds.bound, &fake_s)?;
                let loss_a = discriminator_loss(&da.prob, &da_fake)?.value;
                let loss_s = discriminator_loss(&ds.prob, &ds_fake)?.value;
                let total = loss_a.add(&loss_s)?;
                let total_value = total.item()?.as_f64();
                if !total_value.is_finite() {
                    append_log(out_dir, &log)?;
                    return Err(Error::NonFinite(format!(
                        "discriminator loss at iteration {iter}"
                    )));
                }
                total.backward()?;
                update_discriminator(&mut opt_da, &mut params.disc_albedo, &da.bound, lr)?;
                update_discriminator(&mut opt_ds, &mut params.disc_shading, &ds.bound, lr)?;
                assert_eq!(
                    gen_hash,
                    params.generator_hash(),
                    "discriminator phase must not touch the generator"
                );
                log_row::<T>(&mut log, iter, None, total_value, lr.as_f64(), phase);
            }
        }

        if verbose && (iter + 1) % 100 == 0 {
            let last = log.lines().last().unwrap_or_default();
            println!("iter {}/{} {}", iter + 1, config.iterations, last);
        }
        if (iter + 1) % ckpt_every == 0 && iter + 1 < config.iterations {
            write_ckpt(&params, format!("checkpoint_{:06}.ckpt", iter + 1), &mut checkpoints)?;
        }
    }

    write_ckpt(&params, "checkpoint_final.ckpt".into(), &mut checkpoints)?;
    append_log(out_dir, &log)?;
    Ok(TrainOutcome {
        params,
        log,
        checkpoints,
    })
}

fn update_discriminator<T: Scalar>(
    opt: &mut Adam<T>,
    params: &mut DiscriminatorParams<T>,
    bound: &crate::model::BoundDiscriminator<T>,
    lr: T,
) -> Result<()> {
    let grads = bound.grad_arrays();
    let mut pass = opt.begin(lr);
    let mut i = 0;
    params.visit_mut("disc", &mut |name, arr| {
        pass.update(name, arr, &grads[i]);
        i += 1;
    });
    pass.finish()
}

fn log_row<T: Scalar>(
    log: &mut String,
    iter: usize,
    breakdown: Option<&LossBreakdown<T>>,
    total: f64,
    lr: f64,
    phase: Phase,
) {
    match breakdown {
        Some(b) => log.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            iter,
            fmt_loss(b.data.as_f64()),
            fmt_loss(b.grad.as_f64()),
            fmt_loss(b.adv.as_f64()),
            fmt_loss(total),
            fmt_loss(lr),
            phase.name()
        )),
        None => log.push_str(&format!(
            "{},,,,{},{},{}\n",
            iter,
            fmt_loss(total),
            fmt_loss(lr),
            phase.name()
        )),
    }
}

fn append_log(out_dir: Option<&Path>, log: &str) -> Result<()> {
    if let Some(dir) = out_dir {
        std::fs::write(dir.join("training_log.csv"), log)?;
    }
    Ok(())
}

/// Eval-mode decomposition of every sample, scored through the metric suite.
pub fn evaluate<T: Scalar>(params: &ModelParams<T>, samples: &[Sample<T>]) -> Result<MetricsReport> {
    let mut rows = Vec::with_capacity(samples.len());
    for s in samples {
        let pair = decompose(params, &s.image)?;
        rows.push(evaluate_pair(
            &s.id,
            &s.albedo,
            &s.shading,
            &pair.albedo,
            &pair.shading,
        )?);
    }
    Ok(MetricsReport::from_rows(rows))
}
