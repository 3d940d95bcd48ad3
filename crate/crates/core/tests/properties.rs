use proptest::prelude::*;

use proxynorm::diagnostics::{linear_best_fit, power_decomposition};
use proxynorm::ingest::{decode_raw, encode_raw, standardize_per_sample};
use proxynorm::layers::{normalize, Activation, Norm, NormKind};
use proxynorm::proxy::{inv_norm_cdf, pn_act, ProxyParams};
use proxynorm::randomnet::{build, forward, forward_streaming, RandomNetConfig};
use proxynorm::tensor::{sample, ActivationTensor, ChannelParams, Distribution, Rng, Shape};

fn tensor(max: (usize, usize, usize, usize)) -> impl Strategy<Value = ActivationTensor> {
    (2..=max.0, 1..=max.1, 1..=max.2, 1..=max.3, any::<u64>(), -2.0f64..2.0, 0.1f64..3.0).prop_map(
        |(n, h, w, c, seed, offset, scale)| {
            let mut rng = Rng::new(seed);
            let shape = Shape::new(n, h, w, c);
            let data = (0..shape.len()).map(|_| offset + scale * rng.standard_normal()).collect();
            ActivationTensor::new(shape, data).unwrap()
        },
    )
}

fn kinds(c: usize) -> Vec<NormKind> {
    let mut out = vec![NormKind::BatchNorm, NormKind::LayerNorm, NormKind::InstanceNorm];
    out.extend((1..=c).filter(|g| c.is_multiple_of(*g)).map(|groups| NormKind::GroupNorm { groups }));
    out
}

fn set_size(shape: Shape, kind: NormKind) -> usize {
    match kind {
        NormKind::BatchNorm => shape.n * shape.spatial(),
        NormKind::LayerNorm => shape.per_sample(),
        NormKind::InstanceNorm => shape.spatial(),
        NormKind::GroupNorm { groups } => shape.per_sample() / groups,
    }
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
}

fn mean_square(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn normalization_ignores_positive_scale(x in tensor((4, 4, 4, 6)), k in 0.01f64..100.0) {
        let xk = x.scaled(k).unwrap();
        for kind in kinds(x.shape().c) {
            if set_size(x.shape(), kind) < 2 {
                continue;
            }
            let a = normalize(&x, Norm::exact(kind)).unwrap();
            let b = normalize(&xk, Norm::exact(kind)).unwrap();
            prop_assert!(close(b.data(), a.data(), 1e-9), "{kind}");
        }
    }

    #[test]
    fn decomposition_is_complete(x in tensor((8, 8, 8, 16))) {
        let d = power_decomposition(&x).unwrap();
        for t in &d.per_channel {
            prop_assert!((t.sum_of_terms() - t.p_total).abs() <= 1e-9 * t.p_total);
        }
        let l = d.layer;
        prop_assert!((l.sum_of_terms() - l.p_total).abs() <= 1e-9 * l.p_total);
        prop_assert!(d.rho_ratio >= -1e-12 && d.rho_ratio <= 1.0 + 1e-12);
    }

    #[test]
    fn decomposition_scales_quadratically(x in tensor((4, 3, 3, 4)), k in -10.0f64..10.0) {
        prop_assume!(k.abs() > 1e-3);
        let a = power_decomposition(&x).unwrap().layer;
        let b = power_decomposition(&x.scaled(k).unwrap()).unwrap().layer;
        let k2 = k * k;
        for (u, v) in [(a.p_total, b.p_total), (a.p1, b.p1), (a.p2, b.p2), (a.p3, b.p3), (a.p4, b.p4)] {
            prop_assert!((v - k2 * u).abs() <= 1e-9 * k2 * (a.p_total));
        }
    }

    #[test]
    fn two_slope_is_positive_homogeneous(u in -50.0f64..50.0, k in 0.0f64..20.0, a_pos in -3.0f64..3.0, a_neg in -3.0f64..3.0) {
        let phi = Activation::TwoSlope { a_pos, a_neg };
        prop_assert!((phi.apply(k * u) - k * phi.apply(u)).abs() <= 1e-12 * (1.0 + (k * u).abs() * 3.0));
        prop_assert!(Activation::Relu.apply(k * u) == k * Activation::Relu.apply(u) || k * u == 0.0);
    }

    #[test]
    fn group_norm_limits(x in tensor((3, 3, 3, 6))) {
        let c = x.shape().c;
        prop_assume!(x.shape().spatial() >= 2);
        let gn_c = normalize(&x, Norm::exact(NormKind::GroupNorm { groups: c })).unwrap();
        let inorm = normalize(&x, Norm::exact(NormKind::InstanceNorm)).unwrap();
        prop_assert!(close(gn_c.data(), inorm.data(), 1e-12));
        let gn_1 = normalize(&x, Norm::exact(NormKind::GroupNorm { groups: 1 })).unwrap();
        let ln = normalize(&x, Norm::exact(NormKind::LayerNorm)).unwrap();
        prop_assert!(close(gn_1.data(), ln.data(), 1e-12));
    }

    #[test]
    fn group_norm_sets_have_unit_power(x in tensor((3, 3, 3, 8)), pick in 0usize..4) {
        let c = x.shape().c;
        let divisors: Vec<usize> = (1..=c).filter(|g| c % g == 0).collect();
        let groups = divisors[pick % divisors.len()];
        prop_assume!(x.shape().per_sample() / groups >= 2);
        let y = normalize(&x, Norm::exact(NormKind::GroupNorm { groups })).unwrap();
        for n in 0..y.shape().n {
            for g in 0..groups {
                let set: Vec<f64> = y.sample(n).iter().skip(g).step_by(groups).copied().collect();
                let m = set.iter().sum::<f64>() / set.len() as f64;
                prop_assert!(m.abs() < 1e-10);
                prop_assert!((mean_square(&set) - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn normalized_layer_has_unit_power(x in tensor((4, 3, 3, 6))) {
        for kind in kinds(x.shape().c) {
            if set_size(x.shape(), kind) < 2 {
                continue;
            }
            let y = normalize(&x, Norm::exact(kind)).unwrap();
            let d = power_decomposition(&y).unwrap();
            prop_assert!((d.layer.p_total - 1.0).abs() < 1e-9, "{kind}: {}", d.layer.p_total);
            if kind == NormKind::BatchNorm {
                prop_assert!(d.layer.p1 < 1e-20 && (d.rho_ratio - 1.0).abs() < 1e-12);
            }
            if kind == NormKind::InstanceNorm {
                for t in &d.per_channel {
                    prop_assert!(t.p1 < 1e-20 && t.p2 < 1e-20 && (t.p3 - 1.0).abs() < 1e-9 && t.p4 < 1e-18);
                }
            }
        }
    }

    #[test]
    fn constant_sign_channel_is_linear(x in tensor((3, 3, 3, 3)), a_pos in -3.0f64..3.0, a_neg in -3.0f64..3.0, negative in any::<bool>()) {
        let s = if negative { -1.0 } else { 1.0 };
        let y = ActivationTensor::new(x.shape(), x.data().iter().map(|v| s * v.abs()).collect()).unwrap();
        for phi in [Activation::TwoSlope { a_pos, a_neg }, Activation::Relu, Activation::Identity] {
            let fit = linear_best_fit(&y, phi);
            prop_assert_eq!(fit.residual_ratio, 0.0);
            prop_assert!(fit.channel_residual.iter().all(|&r| r == 0.0));
        }
    }

    #[test]
    fn raw_dump_round_trips(x in tensor((3, 4, 4, 3))) {
        let bytes = encode_raw(&x).unwrap();
        let back = decode_raw(&bytes, std::path::Path::new("mem")).unwrap();
        prop_assert_eq!(back.shape(), x.shape());
        prop_assert!(back.data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn standardization_is_idempotent(x in tensor((3, 4, 4, 3))) {
        prop_assume!(x.shape().per_sample() >= 2);
        let once = standardize_per_sample(&x).unwrap();
        let twice = standardize_per_sample(&once).unwrap();
        prop_assert!(close(twice.data(), once.data(), 1e-12));
        for n in 0..once.shape().n {
            prop_assert!((mean_square(once.sample(n)) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn truncated_draws_stay_in_support(seed in any::<u64>(), mean in -3.0f64..3.0, std in 0.01f64..4.0) {
        let d = Distribution::truncated_two_sigma(mean, std);
        let xs = sample(&d, &mut Rng::new(seed), 500).unwrap();
        prop_assert!(xs.iter().all(|&x| x >= mean - 2.0 * std && x <= mean + 2.0 * std));
    }

    #[test]
    fn sampling_is_deterministic(seed in any::<u64>(), stream in any::<u64>()) {
        let d = Distribution::normal(0.3, 1.7);
        let a = sample(&d, &mut Rng::with_stream(seed, stream), 64).unwrap();
        let b = sample(&d, &mut Rng::with_stream(seed, stream), 64).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn inv_norm_cdf_symmetric_and_monotone(k in 1u32..(1 << 20)) {
        let p = k as f64 / (1u64 << 21) as f64;
        let lo = inv_norm_cdf(p).unwrap();
        prop_assert_eq!(inv_norm_cdf(1.0 - p).unwrap(), -lo);
        let next = (k + 1) as f64 / (1u64 << 21) as f64;
        prop_assert!(inv_norm_cdf(next).unwrap() > lo);
    }

    #[test]
    fn pn_act_preserves_order(x in tensor((2, 3, 3, 1)), gamma in 0.1f64..3.0, beta in -1.0f64..1.0) {
        let params = ChannelParams::new(vec![gamma], vec![beta]).unwrap();
        for phi in [Activation::Relu, Activation::Identity, Activation::Swish] {
            let z = pn_act(&x, &params, phi, &ProxyParams::omitted(1)).unwrap();
            let f: Vec<f64> = x.data().iter().map(|&v| phi.apply(gamma * v + beta)).collect();
            for i in 0..f.len() {
                for j in 0..f.len() {
                    if f[i] < f[j] {
                        prop_assert!(z.data()[i] <= z.data()[j]);
                    }
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn forward_is_deterministic_and_streaming_agrees(seed in any::<u64>(), pn in any::<bool>(), ws in any::<bool>()) {
        let mut cfg = RandomNetConfig::uniform(3, 8, 3);
        cfg.seed = seed;
        cfg.use_pn = pn;
        cfg.use_ws = ws;
        let mut rng = Rng::new(seed);
        let batch = ActivationTensor::new(
            Shape::new(4, 4, 4, 3),
            (0..4 * 4 * 4 * 3).map(|_| rng.standard_normal()).collect(),
        )
        .unwrap();
        let net = build(&cfg).unwrap();
        let a = forward(&net, &batch).unwrap();
        let b = forward(&build(&cfg).unwrap(), &batch).unwrap();
        let c = forward_streaming(&cfg, &batch).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(&a, &c);
    }

    #[test]
    fn kernel_scale_leaves_post_norm_tensors(seed in any::<u64>(), layer in 0usize..3, k in 0.05f64..20.0) {
        for kind in [NormKind::BatchNorm, NormKind::LayerNorm, NormKind::InstanceNorm, NormKind::GroupNorm { groups: 4 }] {
            let mut cfg = RandomNetConfig::uniform(3, 8, 3);
            cfg.seed = seed;
            cfg.norm = Norm::exact(kind);
            let mut rng = Rng::new(seed ^ 1);
            let batch = ActivationTensor::new(
                Shape::new(4, 4, 4, 3),
                (0..4 * 4 * 4 * 3).map(|_| rng.standard_normal()).collect(),
            )
            .unwrap();
            let net = build(&cfg).unwrap();
            let mut scaled = net.clone();
            scaled.scale_kernel(layer, k).unwrap();
            let mut ys = Vec::new();
            proxynorm::randomnet::forward_visit(&net, &batch, &mut |_, t| ys.push(t.y.clone())).unwrap();
            let mut yk = Vec::new();
            proxynorm::randomnet::forward_visit(&scaled, &batch, &mut |_, t| yk.push(t.y.clone())).unwrap();
            for (a, b) in ys.iter().zip(&yk) {
                prop_assert!(close(b.data(), a.data(), 1e-9), "{kind}");
            }
        }
    }
}
