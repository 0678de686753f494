use super::*;
use crate::image::Image;
use crate::rng;
use crate::tensor::{finite_diff_check, Graph, GradCheckConfig};
use rand::Rng;

fn small_arch() -> ArchConfig {
    ArchConfig {
        features: 8,
        blocks: 2,
        disc_channels: vec![4, 8],
        disc_hidden: 8,
        patch: 8,
        ..ArchConfig::desk()
    }
}

fn rand_image(seed: u64, h: usize, w: usize) -> Image<f64> {
    let mut r = rng::stream(seed, &[0xB22]);
    let data = (0..h * w * 3).map(|_| r.gen_range(0.0..1.0)).collect();
    Image::new(h, w, data).unwrap()
}

#[test]
fn product_consistency_holds_for_random_params_f32() {
    for seed in 0..10 {
        let params = ModelParams::<f32>::init(small_arch(), seed);
        let input = rand_image(seed + 100, 12, 9).cast::<f32>();
        let graph = Graph::<f32>::new();
        let x = graph.constant(input.to_chw());
        let out = generator_forward(
            &graph,
            &params.generator,
            &params.arch,
            &x,
            Mode::Train,
            false,
        )
        .unwrap();
        let pair = DecompositionPair {
            albedo: Image::from_chw(&out.albedo.value()).unwrap(),
            shading: Image::from_chw(&out.shading.value()).unwrap(),
        };
        let err = pair.consistency_error(&input).unwrap();
        assert!(err <= 1e-6, "seed {seed}: consistency error {err}");
    }
}

#[test]
fn generator_is_fully_convolutional() {
    let params = ModelParams::<f64>::init(small_arch(), 3);
    let input = rand_image(42, 37, 53);
    let graph = Graph::<f64>::new();
    let x = graph.constant(input.to_chw());
    let out = generator_forward(
        &graph,
        &params.generator,
        &params.arch,
        &x,
        Mode::Train,
        false,
    )
    .unwrap();
    assert_eq!(out.albedo.shape(), vec![1, 3, 37, 53]);
    assert_eq!(out.shading.shape(), vec![1, 3, 37, 53]);
}

#[test]
fn regressed_component_stays_above_positivity_floor() {
    let arch = small_arch();
    for seed in 0..20 {
        let params = ModelParams::<f64>::init(arch.clone(), seed);
        let input = rand_image(seed + 500, 10, 10);
        let graph = Graph::<f64>::new();
        let x = graph.constant(input.to_chw());
        let out = generator_forward(
            &graph,
            &params.generator,
            &params.arch,
            &x,
            Mode::Train,
            false,
        )
        .unwrap();
        // target = shading by default
        let min = out
            .shading
            .value()
            .data()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        assert!(min >= arch.eps_div, "seed {seed}: min shading {min}");
    }
}

#[test]
fn target_modes_are_structurally_symmetric() {
    let mut arch_s = small_arch();
    arch_s.target = TargetComponent::Shading;
    let mut arch_a = small_arch();
    arch_a.target = TargetComponent::Albedo;

    let params = ModelParams::<f64>::init(arch_s.clone(), 9);
    let input = rand_image(9, 8, 8);

    let run = |arch: &ArchConfig| {
        let graph = Graph::<f64>::new();
        let x = graph.constant(input.to_chw());
        let out =
            generator_forward(&graph, &params.generator, arch, &x, Mode::Train, false).unwrap();
        (out.albedo.value(), out.shading.value())
    };
    let (albedo_s, shading_s) = run(&arch_s);
    let (albedo_a, shading_a) = run(&arch_a);
    // Same weights regress the same field; the target flag only decides
    // which side of the division it lands on.
    assert_eq!(shading_s.data(), albedo_a.data());
    assert_eq!(albedo_s.data(), shading_a.data());
}

#[test]
fn residual_block_with_zeroed_branch_is_relu_identity() {
    let arch = small_arch();
    let f = arch.features;
    let zero_branch = BlockParams::<f64> {
        conv1: ConvParams {
            weight: Array::zeros(vec![f, f, 3, 3]),
            bias: Array::zeros(vec![f]),
        },
        bn1: BnParams {
            gamma: Array::zeros(vec![f]),
            beta: Array::zeros(vec![f]),
            stats: crate::tensor::RunningStats::new(f),
        },
        conv2: ConvParams {
            weight: Array::zeros(vec![f, f, 3, 3]),
            bias: Array::zeros(vec![f]),
        },
        bn2: BnParams {
            gamma: Array::zeros(vec![f]),
            beta: Array::zeros(vec![f]),
            stats: crate::tensor::RunningStats::new(f),
        },
    };

    let graph = Graph::<f64>::new();
    let mut r = rng::stream(77, &[1]);
    let data: Vec<f64> = (0..f * 25).map(|_| r.gen_range(-1.0..1.0)).collect();
    let x = graph.leaf(Array::new(vec![1, f, 5, 5], data.clone()).unwrap(), true);
    let bound = BoundBlock::bind(&graph, &zero_branch, false);
    let (y, _) = residual_block(&x, &bound, &zero_branch, Mode::Train, &arch).unwrap();

    // Forward: relu(0 + x).
    for (out, input) in y.value().data().iter().zip(&data) {
        assert_eq!(*out, input.max(0.0));
    }

    // Jacobian-vector product equals the relu mask applied to the vector.
    let v: Vec<f64> = (0..f * 25).map(|_| r.gen_range(-1.0..1.0)).collect();
    let vt = graph.constant(Array::new(vec![1, f, 5, 5], v.clone()).unwrap());
    y.mul(&vt).unwrap().sum().backward().unwrap();
    let grad = x.grad().unwrap();
    for i in 0..data.len() {
        let expect = if data[i] > 0.0 { v[i] } else { 0.0 };
        assert_eq!(grad.data()[i], expect);
    }
}

#[test]
fn residual_block_gradients_pass_finite_difference() {
    let arch = ArchConfig {
        features: 4,
        ..small_arch()
    };
    let f = arch.features;
    let arch2 = arch.clone();
    let report = finite_diff_check(
        move |attempt| {
            let mut r = rng::stream(ort(attempt), &[0xBB]);
            let mut arr = |shape: Vec<usize>, lo: f64, hi: f64| {
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| r.gen_range(lo..hi)).collect();
                Array::new(shape, data).unwrap()
            };
            vec![
                arr(vec![1, f, 5, 5], -1.0, 1.0),
                arr(vec![f, f, 3, 3], -0.5, 0.5),
                arr(vec![f], -0.2, 0.2),
                arr(vec![f], 0.5, 1.5),
                arr(vec![f], -0.2, 0.2),
                arr(vec![f, f, 3, 3], -0.5, 0.5),
                arr(vec![f], -0.2, 0.2),
                arr(vec![f], 0.5, 1.5),
                arr(vec![f], -0.2, 0.2),
            ]
        },
        move |_, l| {
            let bound = BoundBlock {
                conv1: BoundConv {
                    weight: l[1].clone(),
                    bias: l[2].clone(),
                },
                bn1: BoundBn {
                    gamma: l[3].clone(),
                    beta: l[4].clone(),
                },
                conv2: BoundConv {
                    weight: l[5].clone(),
                    bias: l[6].clone(),
                },
                bn2: BoundBn {
                    gamma: l[7].clone(),
                    beta: l[8].clone(),
                },
            };
            let dummy = BlockParams::<f64> {
                conv1: ConvParams {
                    weight: Array::zeros(vec![1]),
                    bias: Array::zeros(vec![1]),
                },
                bn1: BnParams {
                    gamma: Array::zeros(vec![1]),
                    beta: Array::zeros(vec![1]),
                    stats: crate::tensor::RunningStats::new(1),
                },
                conv2: ConvParams {
                    weight: Array::zeros(vec![1]),
                    bias: Array::zeros(vec![1]),
                },
                bn2: BnParams {
                    gamma: Array::zeros(vec![1]),
                    beta: Array::zeros(vec![1]),
                    stats: crate::tensor::RunningStats::new(1),
                },
            };
            let (y, _) = residual_block(&l[0], &bound, &dummy, Mode::Train, &arch2)?;
            Ok(y.mul(&y)?.mean())
        },
        &GradCheckConfig::default(),
    )
    .unwrap();
    assert!(report.pass, "rel err {}", report.max_rel_err);
}

fn ort(attempt: usize) -> u64 {
    91 + attempt as u64 * 13
}

#[test]
fn positivity_map_examples() {
    let graph = Graph::<f64>::new();
    let eps = 1e-3;

    // raw = 0 maps to ln(2) + eps.
    let x = graph.constant(Array::scalar(0.0));
    let y = x.softplus_shifted(eps);
    assert!((y.item().unwrap() - (2.0f64.ln() + eps)).abs() < 1e-12);

    // Monotone lower bound for raw -> -inf.
    let x = graph.constant(Array::scalar(-40.0));
    let y = x.softplus_shifted(eps).item().unwrap();
    assert!(y >= eps && y < eps + 1e-12);

    // Strictly increasing over a dense scan of [-10, 10].
    let n = 2001;
    let raw: Vec<f64> = (0..n).map(|i| -10.0 + 0.01 * i as f64).collect();
    let x = graph.constant(Array::new(vec![n], raw).unwrap());
    let mapped = x.softplus_shifted(eps).value();
    for pair in mapped.data().windows(2) {
        assert!(pair[1] > pair[0], "not strictly increasing at {pair:?}");
    }
    assert!(mapped.data().iter().all(|&v| v >= eps));
}

#[test]
fn discriminator_outputs_probabilities() {
    let arch = small_arch();
    for seed in 0..100 {
        let params = ModelParams::<f64>::init(arch.clone(), seed);
        let mut r = rng::stream(seed, &[0xD15C]);
        let data: Vec<f64> = (0..3 * 64).map(|_| r.gen_range(0.0..1.0)).collect();
        let graph = Graph::<f64>::new();
        let patch = graph.constant(Array::new(vec![1, 3, 8, 8], data).unwrap());
        let out =
            discriminator_forward(&graph, &params.disc_albedo, &arch, &patch, false).unwrap();
        let p = out.prob.value().data()[0];
        assert!(p > 0.0 && p < 1.0, "seed {seed}: p = {p}");
    }
}

#[test]
fn discriminator_is_deterministic() {
    let arch = small_arch();
    let params = ModelParams::<f64>::init(arch.clone(), 4);
    let img = rand_image(8, 8, 8);
    let run = || {
        let graph = Graph::<f64>::new();
        let patch = graph.constant(img.to_chw());
        discriminator_forward(&graph, &params.disc_shading, &arch, &patch, false)
            .unwrap()
            .prob
            .value()
            .data()[0]
    };
    assert_eq!(run(), run());
}

#[test]
fn discriminator_wrong_patch_size_is_error() {
    let arch = small_arch();
    let params = ModelParams::<f64>::init(arch.clone(), 4);
    let graph = Graph::<f64>::new();
    let patch = graph.constant(Array::zeros(vec![1, 3, 9, 9]));
    assert!(discriminator_forward(&graph, &params.disc_albedo, &arch, &patch, false).is_err());
}

#[test]
fn discriminator_input_gradient_passes_finite_difference() {
    let arch = small_arch();
    let params = ModelParams::<f64>::init(arch.clone(), 21);
    let arch2 = arch.clone();
    let report = finite_diff_check(
        move |attempt| {
            let mut r = rng::stream(700 + attempt as u64, &[0xD]);
            let data = (0..3 * 64).map(|_| r.gen_range(0.0..1.0)).collect();
            vec![Array::new(vec![1, 3, 8, 8], data).unwrap()]
        },
        move |g, l| {
            let out = discriminator_forward(g, &params.disc_albedo, &arch2, &l[0], false)?;
            Ok(out.prob.mean())
        },
        &GradCheckConfig::default(),
    )
    .unwrap();
    assert!(report.pass, "rel err {}", report.max_rel_err);
}

#[test]
fn translation_equivariance_in_eval_mode() {
    let arch = small_arch();
    let mut params = ModelParams::<f64>::init(arch.clone(), 33);

    // One train pass to populate running statistics, then freeze.
    let base = rand_image(62, 30, 30);
    {
        let graph = Graph::<f64>::new();
        let x = graph.constant(crop(&base, 0, 0, 24).to_chw());
        let out = generator_forward(
            &graph,
            &params.generator,
            &params.arch,
            &x,
            Mode::Train,
            false,
        )
        .unwrap();
        let momentum = arch.bn_momentum;
        params
            .generator
            .apply_bn_updates(&out.bn_updates, momentum);
    }

    let run = |img: &Image<f64>| {
        let graph = Graph::<f64>::new();
        let x = graph.constant(img.to_chw());
        let out = generator_forward(
            &graph,
            &params.generator,
            &params.arch,
            &x,
            Mode::Eval,
            false,
        )
        .unwrap();
        Image::from_chw(&out.shading.value()).unwrap()
    };

    let (dy, dx) = (2usize, 3usize);
    let a = run(&crop(&base, 0, 0, 24));
    let b = run(&crop(&base, dy, dx, 24));

    // Receptive radius: lift + 2 convs per block + project.
    let r = 2 + 2 * arch.blocks;
    let mut checked = 0;
    for y in r..24 - r {
        for x in r..24 - r {
            let (sy, sx) = (y + dy, x + dx);
            if sy < r || sy >= 24 - r || sx < r || sx >= 24 - r {
                continue;
            }
            for c in 0..3 {
                let d = (a.get(sy, sx, c) - b.get(sy - dy, sx - dx, c)).abs();
                assert!(d < 1e-12, "interior mismatch {d} at {sy},{sx}");
                checked += 1;
            }
        }
    }
    assert!(checked > 0, "empty interior comparison region");
}

fn crop(img: &Image<f64>, y0: usize, x0: usize, size: usize) -> Image<f64> {
    let mut out = Image::zeros(size, size);
    for y in 0..size {
        for x in 0..size {
            for c in 0..3 {
                out.set(y, x, c, img.get(y0 + y, x0 + x, c));
            }
        }
    }
    out
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let arch = small_arch();
    let mut params = ModelParams::<f32>::init(arch, 55);
    // Dirty the bn stats so the buffers are non-trivial.
    let input = rand_image(56, 10, 10).cast::<f32>();
    let graph = Graph::<f32>::new();
    let x = graph.constant(input.to_chw());
    let out = generator_forward(
        &graph,
        &params.generator,
        &params.arch,
        &x,
        Mode::Train,
        false,
    )
    .unwrap();
    let momentum = params.arch.bn_momentum as f32;
    params.generator.apply_bn_updates(&out.bn_updates, momentum);

    let dir = std::env::temp_dir().join("darn_ckpt_test");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("round_trip.ckpt");
    save_checkpoint(&params, &path).unwrap();
    let loaded = load_checkpoint::<f32>(&path).unwrap();
    assert_eq!(params, loaded);

    // Saving the loaded params again reproduces the file byte for byte.
    let path2 = dir.join("round_trip_2.ckpt");
    save_checkpoint(&loaded, &path2).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
}

#[test]
fn checkpoint_rejects_wrong_dtype_and_garbage() {
    let params = ModelParams::<f32>::init(small_arch(), 56);
    let dir = std::env::temp_dir().join("darn_ckpt_test");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("dtype.ckpt");
    save_checkpoint(&params, &path).unwrap();
    assert!(load_checkpoint::<f64>(&path).is_err());

    let bad = dir.join("garbage.ckpt");
    std::fs::write(&bad, b"not a checkpoint").unwrap();
    assert!(load_checkpoint::<f32>(&bad).is_err());
}

#[test]
fn bound_generator_order_matches_visit_order() {
    let params = ModelParams::<f64>::init(small_arch(), 77);
    let graph = Graph::<f64>::new();
    let bound = BoundGenerator::bind(&graph, &params.generator, false);
    let mut visited = Vec::new();
    params.generator.visit(&mut |name, a| visited.push((name.to_string(), a.clone())));
    let ordered = bound.ordered();
    assert_eq!(visited.len(), ordered.len());
    for ((name, arr), tensor) in visited.iter().zip(&ordered) {
        assert_eq!(arr.data(), tensor.value().data(), "misaligned at {name}");
    }
}
