use proxynorm::config::RunConfig;
use proxynorm::layers::{Activation, Norm, NormKind};
use proxynorm::randomnet::{build, forward, forward_visit, RandomNetConfig};
use proxynorm::tensor::{ActivationTensor, Kernel, Rng, Shape};
use proxynorm::verify::map_seeds;
use proxynorm::{ingest, power_decomposition};

fn standardized_batch(shape: Shape, seed: u64) -> ActivationTensor {
    let mut rng = Rng::new(seed);
    let raw = ActivationTensor::new(shape, (0..shape.len()).map(|_| rng.standard_normal()).collect()).unwrap();
    ingest::standardize_per_sample(&raw).unwrap()
}

#[test]
fn identity_one_by_one_layer_keeps_rho() {
    let c = 4;
    let mut cfg = RandomNetConfig::uniform(1, c, c);
    cfg.kernel_sizes = vec![1];
    cfg.first_layer_stride = 1;
    cfg.phi = Activation::Identity;
    cfg.norm = Norm::exact(NormKind::LayerNorm);
    let mut net = build(&cfg).unwrap();
    let mut eye = vec![0.0; c * c];
    for i in 0..c {
        eye[i * c + i] = 1.0;
    }
    let batch = standardized_batch(Shape::new(16, 4, 4, c), 3);
    net.set_kernel(0, Kernel::new(1, 1, c, c, eye).unwrap()).unwrap();
    assert!(net.set_kernel(1, Kernel::new(1, 1, c, c, vec![0.0; c * c]).unwrap()).is_err());
    let traces = forward(&net, &batch).unwrap();
    let before = power_decomposition(&batch).unwrap().rho_ratio;
    assert!((traces[0].decomp_y.rho_ratio - before).abs() < 1e-6);
}

#[test]
fn batch_norm_never_collapses() {
    let mut cfg = RandomNetConfig::uniform(6, 16, 3);
    cfg.norm = Norm::exact(NormKind::BatchNorm);
    let traces = forward(&build(&cfg).unwrap(), &standardized_batch(Shape::new(8, 8, 8, 3), 1)).unwrap();
    for t in &traces {
        assert!((t.decomp_y.rho_ratio - 1.0).abs() < 1e-12, "{}", t.decomp_y.rho_ratio);
    }
}

#[test]
fn instance_norm_layers_are_pure_pixel_power() {
    let mut cfg = RandomNetConfig::uniform(6, 16, 3);
    cfg.norm = Norm::exact(NormKind::InstanceNorm);
    let traces = forward(&build(&cfg).unwrap(), &standardized_batch(Shape::new(8, 8, 8, 3), 2)).unwrap();
    for t in &traces {
        for p in &t.decomp_y.per_channel {
            assert!(p.p1.abs() <= 1e-9 && p.p2.abs() <= 1e-9 && (p.p3 - 1.0).abs() <= 1e-9 && p.p4.abs() <= 1e-9);
        }
    }
}

#[test]
fn visit_sees_every_layer_in_order() {
    let cfg = RandomNetConfig::uniform(4, 8, 3);
    let mut seen = Vec::new();
    forward_visit(&build(&cfg).unwrap(), &standardized_batch(Shape::new(4, 8, 8, 3), 6), &mut |l, t| {
        seen.push((l, t.y.shape()));
    })
    .unwrap();
    let layers: Vec<usize> = seen.iter().map(|s| s.0).collect();
    assert_eq!(layers, vec![1, 2, 3, 4]);
    assert_eq!(seen[0].1, Shape::new(4, 4, 4, 8));
}

/// Width 1024, depth 20, 20 seeds with proxy normalization after layer
/// norm; floor 0.8 against pilot values near 0.99.
#[test]
fn proxy_norm_keeps_wide_net_uncollapsed() {
    let mut suite = RunConfig::defaults().thm1().unwrap().suite;
    suite.net.use_pn = true;
    suite.net.norm = Norm::new(NormKind::LayerNorm, Norm::DEFAULT_EPS);
    assert_eq!((suite.net.widths[0], suite.net.depth, suite.seeds.len()), (1024, 20, 20));
    let minima = map_seeds(&suite.seeds, |seed| {
        let traces = suite.traces(seed)?;
        Ok(traces.iter().map(|t| t.decomp_y.rho_ratio).fold(f64::INFINITY, f64::min))
    })
    .unwrap();
    let ok = minima.iter().filter(|&&m| m >= 0.8).count();
    assert!(ok >= 19, "{ok}/20 seeds keep rho >= 0.8: {minima:?}");
}
