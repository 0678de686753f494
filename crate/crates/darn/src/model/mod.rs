//! The decomposition generator and the two component discriminators.
//!
//! The generator lifts the image to `F` channels, runs a stack of residual
//! blocks, projects back to 3 channels, maps the result through a shifted
//! softplus so it is strictly positive, and derives the second component by
//! elementwise division of the input. The returned pair therefore multiplies
//! back to the input exactly, for any parameter values.

mod checkpoint;
mod forward;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use forward::{
    decompose, discriminator_apply, discriminator_forward, generator_apply, generator_forward,
    residual_block, BoundAffine, BoundBlock, BoundBn, BoundConv, BoundDiscriminator,
    BoundGenerator, DiscriminatorOutput, GeneratorApplied, GeneratorOutput,
};

#[cfg(test)]
mod tests;

use crate::array::Array;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::{BatchStats, RunningStats};
use rand_chacha::ChaCha8Rng;

/// Which component the network regresses; the other is derived by division.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetComponent {
    Shading,
    Albedo,
}

impl TargetComponent {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "shading" => Ok(TargetComponent::Shading),
            "albedo" => Ok(TargetComponent::Albedo),
            other => Err(Error::Config(format!(
                "target must be 'shading' or 'albedo', got '{other}'"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TargetComponent::Shading => "shading",
            TargetComponent::Albedo => "albedo",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Network hyperparameters; stored in every checkpoint so a file is enough
/// to rebuild the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchConfig {
    /// Channel width of the residual trunk.
    pub features: usize,
    /// Residual block count.
    pub blocks: usize,
    pub target: TargetComponent,
    /// Channel widths of the discriminator conv stages.
    pub disc_channels: Vec<usize>,
    /// Hidden width of the discriminator head.
    pub disc_hidden: usize,
    /// Discriminator input size (the training crop size).
    pub patch: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    /// Positivity floor added after the softplus, and the smallest legal divisor.
    pub eps_div: f64,
}

impl Default for ArchConfig {
    /// Full-scale configuration: 64 features, 10 blocks.
    fn default() -> Self {
        ArchConfig {
            features: 64,
            blocks: 10,
            target: TargetComponent::Shading,
            disc_channels: vec![16, 32, 64],
            disc_hidden: 64,
            patch: 250,
            bn_eps: 1e-5,
            bn_momentum: 0.9,
            eps_div: 1e-3,
        }
    }
}

impl ArchConfig {
    /// Laptop-sized configuration used by the default pipeline.
    pub fn desk() -> Self {
        ArchConfig {
            features: 16,
            blocks: 4,
            patch: 20,
            ..Default::default()
        }
    }

    /// Flattened feature count entering the discriminator head.
    pub fn disc_flat_dim(&self) -> usize {
        let mut side = self.patch;
        for _ in &self.disc_channels {
            side = side.div_ceil(2);
        }
        side * side * self.disc_channels.last().copied().unwrap_or(3)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams<T> {
    pub weight: Array<T>, // [C_out, C_in, k, k]
    pub bias: Array<T>,   // [C_out]
}

#[derive(Clone, Debug, PartialEq)]
pub struct AffineParams<T> {
    pub weight: Array<T>, // [D_in, D_out]
    pub bias: Array<T>,   // [D_out]
}

#[derive(Clone, Debug, PartialEq)]
pub struct BnParams<T> {
    pub gamma: Array<T>,
    pub beta: Array<T>,
    pub stats: RunningStats<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams<T> {
    pub conv1: ConvParams<T>,
    pub bn1: BnParams<T>,
    pub conv2: ConvParams<T>,
    pub bn2: BnParams<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParams<T> {
    pub lift: ConvParams<T>,
    pub blocks: Vec<BlockParams<T>>,
    pub project: ConvParams<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorParams<T> {
    pub stages: Vec<ConvParams<T>>,
    pub fc1: AffineParams<T>,
    pub fc2: AffineParams<T>,
}

/// Everything learnable plus the batch-norm buffers, checkpointable.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub arch: ArchConfig,
    pub generator: GeneratorParams<T>,
    pub disc_albedo: DiscriminatorParams<T>,
    pub disc_shading: DiscriminatorParams<T>,
}

/// A coherent `(albedo, shading)` pair whose elementwise product reproduces
/// the source image up to float rounding.
#[derive(Clone, Debug)]
pub struct DecompositionPair<T> {
    pub albedo: Image<T>,
    pub shading: Image<T>,
}

impl<T: Scalar> DecompositionPair<T> {
    /// Largest deviation of `albedo * shading` from `input`.
    pub fn consistency_error(&self, input: &Image<T>) -> Result<T> {
        let recomposed = self.albedo.product(&self.shading)?;
        Ok(recomposed.max_abs_diff(input))
    }
}

fn conv_init<T: Scalar>(
    rng: &mut ChaCha8Rng,
    c_out: usize,
    c_in: usize,
    k: usize,
    gain: f64,
) -> ConvParams<T> {
    let fan_in = c_in * k * k;
    let std = gain * (2.0 / fan_in as f64).sqrt();
    let n = c_out * c_in * k * k;
    let data = (0..n).map(|_| T::of_f64(rng::normal(rng) * std)).collect();
    ConvParams {
        weight: Array::new(vec![c_out, c_in, k, k], data).expect("consistent dims"),
        bias: Array::zeros(vec![c_out]),
    }
}

/// Gain on the projection conv init. The division head turns raw-output
/// noise into huge quotients, so the regression head starts close to zero
/// and the network close to the identity decomposition.
const PROJECT_INIT_GAIN: f64 = 0.05;

fn affine_init<T: Scalar>(rng: &mut ChaCha8Rng, d_in: usize, d_out: usize) -> AffineParams<T> {
    let std = (2.0 / d_in as f64).sqrt();
    let data = (0..d_in * d_out)
        .map(|_| T::of_f64(rng::normal(rng) * std))
        .collect();
    AffineParams {
        weight: Array::new(vec![d_in, d_out], data).expect("consistent dims"),
        bias: Array::zeros(vec![d_out]),
    }
}

fn bn_init<T: Scalar>(channels: usize) -> BnParams<T> {
    BnParams {
        gamma: Array::full(vec![channels], T::one()),
        beta: Array::zeros(vec![channels]),
        stats: RunningStats::new(channels),
    }
}

impl<T: Scalar> GeneratorParams<T> {
    fn init(arch: &ArchConfig, rng: &mut ChaCha8Rng) -> Self {
        let f = arch.features;
        GeneratorParams {
            lift: conv_init(rng, f, 3, 3, 1.0),
            blocks: (0..arch.blocks)
                .map(|_| BlockParams {
                    conv1: conv_init(rng, f, f, 3, 1.0),
                    bn1: bn_init(f),
                    conv2: conv_init(rng, f, f, 3, 1.0),
                    bn2: bn_init(f),
                })
                .collect(),
            project: conv_init(rng, 3, f, 3, PROJECT_INIT_GAIN),
        }
    }

    /// Learnable arrays in canonical order: lift, then per block
    /// (conv1, bn1 affine, conv2, bn2 affine), then project. [`forward::BoundGenerator`]
    /// binds leaves in exactly this order.
    pub fn visit(&self, f: &mut impl FnMut(&str, &Array<T>)) {
        f("generator.lift.weight", &self.lift.weight);
        f("generator.lift.bias", &self.lift.bias);
        for (i, b) in self.blocks.iter().enumerate() {
            f(&format!("generator.block{i}.conv1.weight"), &b.conv1.weight);
            f(&format!("generator.block{i}.conv1.bias"), &b.conv1.bias);
            f(&format!("generator.block{i}.bn1.gamma"), &b.bn1.gamma);
            f(&format!("generator.block{i}.bn1.beta"), &b.bn1.beta);
            f(&format!("generator.block{i}.conv2.weight"), &b.conv2.weight);
            f(&format!("generator.block{i}.conv2.bias"), &b.conv2.bias);
            f(&format!("generator.block{i}.bn2.gamma"), &b.bn2.gamma);
            f(&format!("generator.block{i}.bn2.beta"), &b.bn2.beta);
        }
        f("generator.project.weight", &self.project.weight);
        f("generator.project.bias", &self.project.bias);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&str, &mut Array<T>)) {
        f("generator.lift.weight", &mut self.lift.weight);
        f("generator.lift.bias", &mut self.lift.bias);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            f(&format!("generator.block{i}.conv1.weight"), &mut b.conv1.weight);
            f(&format!("generator.block{i}.conv1.bias"), &mut b.conv1.bias);
            f(&format!("generator.block{i}.bn1.gamma"), &mut b.bn1.gamma);
            f(&format!("generator.block{i}.bn1.beta"), &mut b.bn1.beta);
            f(&format!("generator.block{i}.conv2.weight"), &mut b.conv2.weight);
            f(&format!("generator.block{i}.conv2.bias"), &mut b.conv2.bias);
            f(&format!("generator.block{i}.bn2.gamma"), &mut b.bn2.gamma);
            f(&format!("generator.block{i}.bn2.beta"), &mut b.bn2.beta);
        }
        f("generator.project.weight", &mut self.project.weight);
        f("generator.project.bias", &mut self.project.bias);
    }

    /// Fold one forward pass's batch statistics into the running stats.
    /// `updates` pairs with blocks in order (bn1 then bn2 per block).
    pub fn apply_bn_updates(&mut self, updates: &[BatchStats<T>], momentum: T) {
        assert_eq!(updates.len(), self.blocks.len() * 2, "one update per bn layer");
        for (i, block) in self.blocks.iter_mut().enumerate() {
            let u1 = &updates[2 * i];
            let u2 = &updates[2 * i + 1];
            block.bn1.stats.update(&u1.mean, &u1.var, momentum);
            block.bn2.stats.update(&u2.mean, &u2.var, momentum);
        }
    }

    /// True once every batch-norm layer has seen at least one train batch
    /// (or had its statistics loaded from a checkpoint).
    pub fn stats_ready(&self) -> bool {
        self.blocks
            .iter()
            .all(|b| b.bn1.stats.initialized && b.bn2.stats.initialized)
    }
}

impl<T: Scalar> DiscriminatorParams<T> {
    fn init(arch: &ArchConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut c_in = 3;
        let mut stages = Vec::new();
        for &c_out in &arch.disc_channels {
            stages.push(conv_init(rng, c_out, c_in, 3, 1.0));
            c_in = c_out;
        }
        DiscriminatorParams {
            stages,
            fc1: affine_init(rng, arch.disc_flat_dim(), arch.disc_hidden),
            fc2: affine_init(rng, arch.disc_hidden, 1),
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut impl FnMut(&str, &Array<T>)) {
        for (i, s) in self.stages.iter().enumerate() {
            f(&format!("{prefix}.stage{i}.weight"), &s.weight);
            f(&format!("{prefix}.stage{i}.bias"), &s.bias);
        }
        f(&format!("{prefix}.fc1.weight"), &self.fc1.weight);
        f(&format!("{prefix}.fc1.bias"), &self.fc1.bias);
        f(&format!("{prefix}.fc2.weight"), &self.fc2.weight);
        f(&format!("{prefix}.fc2.bias"), &self.fc2.bias);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(&str, &mut Array<T>)) {
        for (i, s) in self.stages.iter_mut().enumerate() {
            f(&format!("{prefix}.stage{i}.weight"), &mut s.weight);
            f(&format!("{prefix}.stage{i}.bias"), &mut s.bias);
        }
        f(&format!("{prefix}.fc1.weight"), &mut self.fc1.weight);
        f(&format!("{prefix}.fc1.bias"), &mut self.fc1.bias);
        f(&format!("{prefix}.fc2.weight"), &mut self.fc2.weight);
        f(&format!("{prefix}.fc2.bias"), &mut self.fc2.bias);
    }
}

impl<T: Scalar> ModelParams<T> {
    /// Fan-in-scaled normal initialization for convolutions and affine
    /// layers, batch-norm gamma=1/beta=0, deterministic in `seed`.
    pub fn init(arch: ArchConfig, seed: u64) -> Self {
        let mut gen_rng = rng::stream(seed, &[0x10, 0]);
        let mut da_rng = rng::stream(seed, &[0x10, 1]);
        let mut ds_rng = rng::stream(seed, &[0x10, 2]);
        ModelParams {
            generator: GeneratorParams::init(&arch, &mut gen_rng),
            disc_albedo: DiscriminatorParams::init(&arch, &mut da_rng),
            disc_shading: DiscriminatorParams::init(&arch, &mut ds_rng),
            arch,
        }
    }

    /// FNV-1a over the generator's learnable values and bn buffers; used to
    /// assert that discriminator phases leave the generator untouched.
    pub fn generator_hash(&self) -> u64 {
        let mut h = Fnv::new();
        self.generator.visit(&mut |_, a| h.eat_array(a));
        for b in &self.generator.blocks {
            for stats in [&b.bn1.stats, &b.bn2.stats] {
                h.eat_slice(&stats.mean);
                h.eat_slice(&stats.var);
                h.eat_byte(stats.initialized as u8);
            }
        }
        h.finish()
    }

    /// Hash of both discriminators' learnable values.
    pub fn discriminators_hash(&self) -> u64 {
        let mut h = Fnv::new();
        self.disc_albedo.visit("disc_albedo", &mut |_, a| h.eat_array(a));
        self.disc_shading.visit("disc_shading", &mut |_, a| h.eat_array(a));
        h.finish()
    }
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf29ce484222325)
    }
    fn eat_byte(&mut self, b: u8) {
        self.0 ^= b as u64;
        self.0 = self.0.wrapping_mul(0x100000001b3);
    }
    fn eat_slice<T: Scalar>(&mut self, s: &[T]) {
        let mut bytes = Vec::with_capacity(s.len() * T::BYTES);
        for &v in s {
            v.write_le(&mut bytes);
        }
        for b in bytes {
            self.eat_byte(b);
        }
    }
    fn eat_array<T: Scalar>(&mut self, a: &Array<T>) {
        self.eat_slice(a.data());
    }
    fn finish(&self) -> u64 {
        self.0
    }
}
