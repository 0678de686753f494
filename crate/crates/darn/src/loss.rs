//! Training losses.
//!
//! The generator minimizes `data + gradient + lambda * adversarial`: a
//! scale-sensitive L2 data term over both components, the same term over
//! forward-difference image gradients, and the negative log-likelihood of
//! fooling both discriminators. Each discriminator minimizes the usual
//! binary classification loss on ground-truth versus generated patches.
//!
//! Every squared norm is mean-reduced over all elements so the loss weights
//! and learning rate keep their meaning across crop sizes.

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Probabilities are clamped here before any `log`.
pub const PROB_FLOOR: f64 = 1e-7;

/// Per-term values of one generator loss evaluation.
#[derive(Clone, Copy, Debug)]
pub struct LossBreakdown<T> {
    pub data: T,
    pub grad: T,
    pub adv: T,
    pub total: T,
    pub lambda: T,
}

fn mean_sq_diff<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<Tensor<T>> {
    let d = pred.sub(gt)?;
    Ok(d.mul(&d)?.mean())
}

/// L2 data term over both components.
pub fn data_loss<T: Scalar>(
    pred_albedo: &Tensor<T>,
    pred_shading: &Tensor<T>,
    gt_albedo: &Tensor<T>,
    gt_shading: &Tensor<T>,
) -> Result<Tensor<T>> {
    mean_sq_diff(pred_albedo, gt_albedo)?.add(&mean_sq_diff(pred_shading, gt_shading)?)
}

/// Forward-difference image gradient `(dx, dy)`; the last column/row is zero.
pub fn image_gradient<T: Scalar>(c: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    Ok((c.diff_x()?, c.diff_y()?))
}

/// L2 term over the image gradients of both components; invariant to a
/// global constant offset in a prediction.
pub fn gradient_loss<T: Scalar>(
    pred_albedo: &Tensor<T>,
    pred_shading: &Tensor<T>,
    gt_albedo: &Tensor<T>,
    gt_shading: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (pa_x, pa_y) = image_gradient(pred_albedo)?;
    let (ps_x, ps_y) = image_gradient(pred_shading)?;
    let (ga_x, ga_y) = image_gradient(gt_albedo)?;
    let (gs_x, gs_y) = image_gradient(gt_shading)?;
    data_loss(&pa_x, &ps_x, &ga_x, &gs_x)?.add(&data_loss(&pa_y, &ps_y, &ga_y, &gs_y)?)
}

/// A loss value plus how many probabilities hit the clamp.
pub struct ClampedLoss<T: Scalar> {
    pub value: Tensor<T>,
    pub clamped: usize,
}

fn neg_log_mean<T: Scalar>(prob: &Tensor<T>) -> (Tensor<T>, usize) {
    let floor = T::of_f64(PROB_FLOOR);
    let clamped = prob
        .value()
        .data()
        .iter()
        .filter(|&&p| p < floor)
        .count();
    let v = prob.clamp_min(floor).log().mean().mul_scalar(-T::one());
    (v, clamped)
}

/// `-log(D_A(albedo) * D_S(shading))`, batch-meaned per discriminator. The
/// caller freezes the discriminator parameters; gradients reach the
/// generator through the patch inputs.
pub fn adversarial_loss<T: Scalar>(
    prob_albedo: &Tensor<T>,
    prob_shading: &Tensor<T>,
) -> Result<ClampedLoss<T>> {
    let (a, ca) = neg_log_mean(prob_albedo);
    let (s, cs) = neg_log_mean(prob_shading);
    Ok(ClampedLoss {
        value: a.add(&s)?,
        clamped: ca + cs,
    })
}

/// `-log D(real) - log(1 - D(fake))` for one discriminator. The fake batch
/// must be detached from the generator graph.
pub fn discriminator_loss<T: Scalar>(
    prob_real: &Tensor<T>,
    prob_fake: &Tensor<T>,
) -> Result<ClampedLoss<T>> {
    let (real_term, c_real) = neg_log_mean(prob_real);
    let one_minus_fake = prob_fake.mul_scalar(-T::one()).add_scalar(T::one());
    let (fake_term, c_fake) = neg_log_mean(&one_minus_fake);
    Ok(ClampedLoss {
        value: real_term.add(&fake_term)?,
        clamped: c_real + c_fake,
    })
}

/// Combines the terms: `total = data + grad + lambda * adv`. Passing no
/// adversarial term (warmup) or `lambda = 0` reduces to `data + grad`.
pub fn total_loss<T: Scalar>(
    data: &Tensor<T>,
    grad: &Tensor<T>,
    adv: Option<&Tensor<T>>,
    lambda: T,
) -> Result<(Tensor<T>, LossBreakdown<T>)> {
    let base = data.add(grad)?;
    let (total, adv_value) = match adv {
        Some(adv) => (base.add(&adv.mul_scalar(lambda))?, adv.item()?),
        None => (base, T::zero()),
    };
    let breakdown = LossBreakdown {
        data: data.item()?,
        grad: grad.item()?,
        adv: adv_value,
        total: total.item()?,
        lambda,
    };
    Ok((total, breakdown))
}
