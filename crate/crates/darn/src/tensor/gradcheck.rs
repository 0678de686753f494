//! Central finite-difference verification of analytic gradients.
//!
//! Runs in double precision regardless of the training precision. When a
//! check fails the inputs may sit next to a non-differentiable point (relu
//! kink, pool tie), so the harness resamples fresh inputs a bounded number
//! of times and reports how often it had to.

use crate::array::Array;
use crate::error::Result;
use crate::tensor::{Graph, Tensor};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Maximum accepted relative error.
    pub tolerance: f64,
    /// Absolute disagreement below this never fails a coordinate.
    pub abs_floor: f64,
    /// How many fresh input draws to try after a failed attempt.
    pub max_resamples: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-4,
            tolerance: 1e-4,
            abs_floor: 1e-6,
            max_resamples: 4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub pass: bool,
    pub resamples: usize,
}

/// Checks d(root)/d(input) for every coordinate of every input.
///
/// `sample(attempt)` produces the inputs for one attempt; `build` constructs
/// a scalar root from leaves inserted for those inputs. A coordinate fails
/// when the analytic/numeric disagreement exceeds both the absolute floor
/// and the relative tolerance.
pub fn finite_diff_check<S, B>(
    mut sample: S,
    build: B,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    S: FnMut(usize) -> Vec<Array<f64>>,
    B: Fn(&Graph<f64>, &[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let mut last_rel = f64::INFINITY;
    for attempt in 0..=cfg.max_resamples {
        let inputs = sample(attempt);
        let max_rel = attempt_once(&inputs, &build, cfg)?;
        if max_rel < cfg.tolerance {
            return Ok(GradCheckReport {
                max_rel_err: max_rel,
                pass: true,
                resamples: attempt,
            });
        }
        last_rel = max_rel;
    }
    Ok(GradCheckReport {
        max_rel_err: last_rel,
        pass: false,
        resamples: cfg.max_resamples,
    })
}

fn attempt_once<B>(inputs: &[Array<f64>], build: &B, cfg: &GradCheckConfig) -> Result<f64>
where
    B: Fn(&Graph<f64>, &[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    // Analytic gradients.
    let graph = Graph::<f64>::new();
    let leaves: Vec<Tensor<f64>> = inputs
        .iter()
        .map(|a| graph.leaf(a.clone(), true))
        .collect();
    let root = build(&graph, &leaves)?;
    root.backward()?;
    let analytic: Vec<Array<f64>> = leaves
        .iter()
        .map(|l| l.grad().unwrap_or_else(|| Array::zeros(l.shape())))
        .collect();

    let eval = |perturbed: &[Array<f64>]| -> Result<f64> {
        let g = Graph::<f64>::new();
        let ls: Vec<Tensor<f64>> = perturbed.iter().map(|a| g.leaf(a.clone(), false)).collect();
        build(&g, &ls)?.item()
    };

    let mut max_rel: f64 = 0.0;
    let mut work: Vec<Array<f64>> = inputs.to_vec();
    for (ai, arr) in inputs.iter().enumerate() {
        for ci in 0..arr.numel() {
            let orig = arr.data()[ci];
            work[ai].data_mut()[ci] = orig + cfg.step;
            let plus = eval(&work)?;
            work[ai].data_mut()[ci] = orig - cfg.step;
            let minus = eval(&work)?;
            work[ai].data_mut()[ci] = orig;

            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = analytic[ai].data()[ci];
            let abs_err = (a - numeric).abs();
            if abs_err < cfg.abs_floor {
                continue;
            }
            let rel = abs_err / a.abs().max(numeric.abs());
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}
