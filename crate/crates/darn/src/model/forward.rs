//! Graph construction for the generator and discriminators.

use super::{
    ArchConfig, BlockParams, DecompositionPair, DiscriminatorParams, GeneratorParams, Mode,
    ModelParams, TargetComponent,
};
use crate::array::Array;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;
use crate::tensor::{BatchStats, Graph, Tensor};

pub struct BoundConv<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub struct BoundAffine<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub struct BoundBn<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

pub struct BoundBlock<T: Scalar> {
    pub conv1: BoundConv<T>,
    pub bn1: BoundBn<T>,
    pub conv2: BoundConv<T>,
    pub bn2: BoundBn<T>,
}

/// Parameter leaves of one generator forward, in the same order as
/// [`GeneratorParams::visit`].
pub struct BoundGenerator<T: Scalar> {
    pub lift: BoundConv<T>,
    pub blocks: Vec<BoundBlock<T>>,
    pub project: BoundConv<T>,
}

pub struct BoundDiscriminator<T: Scalar> {
    pub stages: Vec<BoundConv<T>>,
    pub fc1: BoundAffine<T>,
    pub fc2: BoundAffine<T>,
}

fn bind_conv<T: Scalar>(g: &Graph<T>, p: &super::ConvParams<T>, trainable: bool) -> BoundConv<T> {
    BoundConv {
        weight: g.leaf(p.weight.clone(), trainable),
        bias: g.leaf(p.bias.clone(), trainable),
    }
}

fn bind_affine<T: Scalar>(
    g: &Graph<T>,
    p: &super::AffineParams<T>,
    trainable: bool,
) -> BoundAffine<T> {
    BoundAffine {
        weight: g.leaf(p.weight.clone(), trainable),
        bias: g.leaf(p.bias.clone(), trainable),
    }
}

fn bind_bn<T: Scalar>(g: &Graph<T>, p: &super::BnParams<T>, trainable: bool) -> BoundBn<T> {
    BoundBn {
        gamma: g.leaf(p.gamma.clone(), trainable),
        beta: g.leaf(p.beta.clone(), trainable),
    }
}

impl<T: Scalar> BoundBlock<T> {
    pub fn bind(g: &Graph<T>, params: &BlockParams<T>, trainable: bool) -> Self {
        BoundBlock {
            conv1: bind_conv(g, &params.conv1, trainable),
            bn1: bind_bn(g, &params.bn1, trainable),
            conv2: bind_conv(g, &params.conv2, trainable),
            bn2: bind_bn(g, &params.bn2, trainable),
        }
    }
}

impl<T: Scalar> BoundGenerator<T> {
    pub fn bind(g: &Graph<T>, params: &GeneratorParams<T>, trainable: bool) -> Self {
        BoundGenerator {
            lift: bind_conv(g, &params.lift, trainable),
            blocks: params
                .blocks
                .iter()
                .map(|b| BoundBlock::bind(g, b, trainable))
                .collect(),
            project: bind_conv(g, &params.project, trainable),
        }
    }

    /// Rebuilds the structure from leaves laid out as [`Self::ordered`]
    /// produces them: 2 lift, 8 per block, 2 project.
    pub fn from_ordered(blocks: usize, leaves: &[Tensor<T>]) -> Result<Self> {
        let expect = 4 + blocks * 8;
        if leaves.len() != expect {
            return Err(Error::shape(format!(
                "expected {expect} generator leaves, got {}",
                leaves.len()
            )));
        }
        let mut it = leaves.iter().cloned();
        let mut next = || it.next().expect("length checked");
        let lift = BoundConv {
            weight: next(),
            bias: next(),
        };
        let blocks = (0..blocks)
            .map(|_| BoundBlock {
                conv1: BoundConv {
                    weight: next(),
                    bias: next(),
                },
                bn1: BoundBn {
                    gamma: next(),
                    beta: next(),
                },
                conv2: BoundConv {
                    weight: next(),
                    bias: next(),
                },
                bn2: BoundBn {
                    gamma: next(),
                    beta: next(),
                },
            })
            .collect();
        Ok(BoundGenerator {
            lift,
            blocks,
            project: BoundConv {
                weight: next(),
                bias: next(),
            },
        })
    }

    /// Leaves in [`GeneratorParams::visit`] order.
    pub fn ordered(&self) -> Vec<&Tensor<T>> {
        let mut out = vec![&self.lift.weight, &self.lift.bias];
        for b in &self.blocks {
            out.push(&b.conv1.weight);
            out.push(&b.conv1.bias);
            out.push(&b.bn1.gamma);
            out.push(&b.bn1.beta);
            out.push(&b.conv2.weight);
            out.push(&b.conv2.bias);
            out.push(&b.bn2.gamma);
            out.push(&b.bn2.beta);
        }
        out.push(&self.project.weight);
        out.push(&self.project.bias);
        out
    }

    /// Accumulated gradient per leaf, zeros where backward never reached.
    pub fn grad_arrays(&self) -> Vec<Array<T>> {
        self.ordered()
            .into_iter()
            .map(|t| t.grad().unwrap_or_else(|| Array::zeros(t.shape())))
            .collect()
    }
}

impl<T: Scalar> BoundDiscriminator<T> {
    /// Rebuilds the structure from leaves in [`Self::ordered`] layout.
    pub fn from_ordered(stages: usize, leaves: &[Tensor<T>]) -> Result<Self> {
        let expect = stages * 2 + 4;
        if leaves.len() != expect {
            return Err(Error::shape(format!(
                "expected {expect} discriminator leaves, got {}",
                leaves.len()
            )));
        }
        let mut it = leaves.iter().cloned();
        let mut next = || it.next().expect("length checked");
        let stages = (0..stages)
            .map(|_| BoundConv {
                weight: next(),
                bias: next(),
            })
            .collect();
        Ok(BoundDiscriminator {
            stages,
            fc1: BoundAffine {
                weight: next(),
                bias: next(),
            },
            fc2: BoundAffine {
                weight: next(),
                bias: next(),
            },
        })
    }

    pub fn bind(g: &Graph<T>, params: &DiscriminatorParams<T>, trainable: bool) -> Self {
        BoundDiscriminator {
            stages: params
                .stages
                .iter()
                .map(|s| bind_conv(g, s, trainable))
                .collect(),
            fc1: bind_affine(g, &params.fc1, trainable),
            fc2: bind_affine(g, &params.fc2, trainable),
        }
    }

    /// Leaves in [`DiscriminatorParams::visit`] order.
    pub fn ordered(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for s in &self.stages {
            out.push(&s.weight);
            out.push(&s.bias);
        }
        out.push(&self.fc1.weight);
        out.push(&self.fc1.bias);
        out.push(&self.fc2.weight);
        out.push(&self.fc2.bias);
        out
    }

    pub fn grad_arrays(&self) -> Vec<Array<T>> {
        self.ordered()
            .into_iter()
            .map(|t| t.grad().unwrap_or_else(|| Array::zeros(t.shape())))
            .collect()
    }
}

/// One residual block: `relu(bn2(conv2(relu(bn1(conv1(x))))) + x)`, the skip
/// summed in before the final activation.
pub fn residual_block<T: Scalar>(
    x: &Tensor<T>,
    bound: &BoundBlock<T>,
    params: &BlockParams<T>,
    mode: Mode,
    arch: &ArchConfig,
) -> Result<(Tensor<T>, Vec<BatchStats<T>>)> {
    let eps = T::of_f64(arch.bn_eps);
    let mut updates = Vec::new();
    let y = x.conv2d(&bound.conv1.weight, &bound.conv1.bias, 1)?;
    let y = match mode {
        Mode::Train => {
            let (y, stats) = y.batch_norm_train(&bound.bn1.gamma, &bound.bn1.beta, eps)?;
            updates.push(stats);
            y
        }
        Mode::Eval => y.batch_norm_eval(&bound.bn1.gamma, &bound.bn1.beta, &params.bn1.stats, eps)?,
    };
    let y = y.relu();
    let y = y.conv2d(&bound.conv2.weight, &bound.conv2.bias, 1)?;
    let y = match mode {
        Mode::Train => {
            let (y, stats) = y.batch_norm_train(&bound.bn2.gamma, &bound.bn2.beta, eps)?;
            updates.push(stats);
            y
        }
        Mode::Eval => y.batch_norm_eval(&bound.bn2.gamma, &bound.bn2.beta, &params.bn2.stats, eps)?,
    };
    Ok((y.add(x)?.relu(), updates))
}

/// A generator forward pass over a `[B, 3, H, W]` batch.
pub struct GeneratorOutput<T: Scalar> {
    pub albedo: Tensor<T>,
    pub shading: Tensor<T>,
    /// Pre-positivity regression output.
    pub raw: Tensor<T>,
    pub bound: BoundGenerator<T>,
    /// One entry per batch-norm layer in train mode (bn1, bn2 per block).
    pub bn_updates: Vec<BatchStats<T>>,
}

/// Generator outputs built on a caller-supplied set of parameter leaves.
pub struct GeneratorApplied<T: Scalar> {
    pub albedo: Tensor<T>,
    pub shading: Tensor<T>,
    pub raw: Tensor<T>,
    pub bn_updates: Vec<BatchStats<T>>,
}

/// Runs the generator on an existing [`BoundGenerator`]. `params` supplies
/// the running statistics consulted in eval mode.
pub fn generator_apply<T: Scalar>(
    params: &GeneratorParams<T>,
    arch: &ArchConfig,
    bound: &BoundGenerator<T>,
    input: &Tensor<T>,
    mode: Mode,
) -> Result<GeneratorApplied<T>> {
    let shape = input.shape();
    if shape.len() != 4 || shape[1] != 3 {
        return Err(Error::shape(format!(
            "generator expects [B,3,H,W], got {shape:?}"
        )));
    }
    if shape[2] < 3 || shape[3] < 3 {
        return Err(Error::shape(format!(
            "generator needs spatial dims >= 3, got {}x{}",
            shape[2], shape[3]
        )));
    }
    if !input.value().is_finite() {
        return Err(Error::NonFinite("generator input".into()));
    }

    let mut bn_updates = Vec::new();
    let mut x = input.conv2d(&bound.lift.weight, &bound.lift.bias, 1)?;
    for (bb, bp) in bound.blocks.iter().zip(&params.blocks) {
        let (y, updates) = residual_block(&x, bb, bp, mode, arch)?;
        bn_updates.extend(updates);
        x = y;
    }
    let raw = x.conv2d(&bound.project.weight, &bound.project.bias, 1)?;

    // Positivity map, then the division head: the pair multiplies back to
    // the input by construction.
    let regressed = raw.softplus_shifted(T::of_f64(arch.eps_div));
    let derived = input.div(&regressed)?;
    let (albedo, shading) = match arch.target {
        TargetComponent::Shading => (derived, regressed),
        TargetComponent::Albedo => (regressed, derived),
    };
    Ok(GeneratorApplied {
        albedo,
        shading,
        raw,
        bn_updates,
    })
}

/// Binds fresh parameter leaves and runs the generator. `trainable` controls
/// whether those leaves receive gradients; the input never does.
pub fn generator_forward<T: Scalar>(
    graph: &Graph<T>,
    params: &GeneratorParams<T>,
    arch: &ArchConfig,
    input: &Tensor<T>,
    mode: Mode,
    trainable: bool,
) -> Result<GeneratorOutput<T>> {
    let bound = BoundGenerator::bind(graph, params, trainable);
    let applied = generator_apply(params, arch, &bound, input, mode)?;
    Ok(GeneratorOutput {
        albedo: applied.albedo,
        shading: applied.shading,
        raw: applied.raw,
        bound,
        bn_updates: applied.bn_updates,
    })
}

pub struct DiscriminatorOutput<T: Scalar> {
    /// `[B, 1]` probabilities in the open interval (0, 1).
    pub prob: Tensor<T>,
    pub bound: BoundDiscriminator<T>,
}

/// Runs a discriminator on an existing [`BoundDiscriminator`]. The patch
/// batch must be `[B, 3, P, P]` where `P` is the configured patch size.
pub fn discriminator_apply<T: Scalar>(
    arch: &ArchConfig,
    bound: &BoundDiscriminator<T>,
    patch: &Tensor<T>,
) -> Result<Tensor<T>> {
    let shape = patch.shape();
    if shape.len() != 4 || shape[1] != 3 || shape[2] != arch.patch || shape[3] != arch.patch {
        return Err(Error::shape(format!(
            "discriminator expects [B,3,{p},{p}], got {shape:?}",
            p = arch.patch
        )));
    }
    let mut x = patch.clone();
    for stage in &bound.stages {
        x = x.conv2d(&stage.weight, &stage.bias, 1)?.relu().max_pool2()?;
    }
    let flat = x.shape().iter().skip(1).product::<usize>();
    let x = x.reshape(vec![shape[0], flat])?;
    let x = x.affine(&bound.fc1.weight, &bound.fc1.bias)?.relu();
    let logits = x.affine(&bound.fc2.weight, &bound.fc2.bias)?;
    Ok(logits.sigmoid())
}

/// Binds fresh parameter leaves and runs the discriminator.
pub fn discriminator_forward<T: Scalar>(
    graph: &Graph<T>,
    params: &DiscriminatorParams<T>,
    arch: &ArchConfig,
    patch: &Tensor<T>,
    trainable: bool,
) -> Result<DiscriminatorOutput<T>> {
    let bound = BoundDiscriminator::bind(graph, params, trainable);
    let prob = discriminator_apply(arch, &bound, patch)?;
    Ok(DiscriminatorOutput { prob, bound })
}

/// Eval-mode decomposition of a single image.
pub fn decompose<T: Scalar>(
    params: &ModelParams<T>,
    input: &Image<T>,
) -> Result<DecompositionPair<T>> {
    if !input.is_finite() {
        return Err(Error::NonFinite("decompose input".into()));
    }
    let graph = Graph::<T>::with_div_floor(T::of_f64(params.arch.eps_div));
    let x = graph.constant(input.to_chw());
    let out = generator_forward(&graph, &params.generator, &params.arch, &x, Mode::Eval, false)?;
    Ok(DecompositionPair {
        albedo: Image::from_chw(&out.albedo.value())?,
        shading: Image::from_chw(&out.shading.value())?,
    })
}
