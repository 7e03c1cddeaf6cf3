use nsgen_core::grid::{embed_boundary_conditions, BoundarySpec, GridSpec, InputTensor};
use nsgen_core::nn::{expand_channels, expand_depth, pack_inputs, BlockOrigin, ModelConfig, UNet};
use nsgen_core::train::{gradient_check, GradCheckConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(a: usize, c: usize, seed: u64) -> UNet<f32> {
    UNet::new(ModelConfig::new(a, c).with_base_width(8).with_seed(seed)).unwrap()
}

fn noisy_inputs(a: usize, c: usize, n: usize, amp: f64, seed: u64) -> (Vec<f32>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = c * n * a * a;
    ((0..len).map(|_| rng.random_range(-amp..amp) as f32).collect(), n)
}

#[test]
fn output_matches_input_spatial_shape() {
    for a in [8, 16, 32] {
        let m = small(a, 3, 1);
        let (x, n) = noisy_inputs(a, 3, 2, 1.0, 2);
        let y = m.forward(&x, n).unwrap();
        assert_eq!(y.len(), 3 * n * a * a);
        let fields = m.to_fields(&y, n).unwrap();
        assert_eq!(fields.len(), 2);
        assert_eq!(fields[0].u.dim(), (a, a));
    }
}

#[test]
fn rejects_mismatched_inputs() {
    let m = small(16, 3, 1);
    let (x, _) = noisy_inputs(16, 3, 1, 1.0, 2);
    assert!(m.forward(&x[1..], 1).is_err());
    let g = GridSpec::square(32).unwrap();
    let t = embed_boundary_conditions(&BoundarySpec::cavity(0.2), &g, None).unwrap();
    assert!(m.predict(&t).is_err());
    let m4 = small(32, 4, 1);
    assert!(m4.predict(&t).is_err());
}

#[test]
fn predicted_ring_carries_the_imposed_values() {
    let m = small(16, 3, 3);
    let g = GridSpec::square(16).unwrap();
    let bc = BoundarySpec::cavity(0.4);
    let t = embed_boundary_conditions(&bc, &g, None).unwrap();
    let f = m.predict(&t).unwrap();
    for i in 0..16 {
        assert_eq!(f.u[[15, i]], 0.4);
        assert_eq!(f.u[[0, i]], 0.0);
        assert_eq!(f.v[[15, i]], 0.0);
    }
}

#[test]
fn zero_input_without_bias_gives_zero_output() {
    let cfg = ModelConfig {
        bias: false,
        ..ModelConfig::new(16, 3).with_base_width(8).with_seed(4)
    };
    let m = UNet::<f64>::new(cfg).unwrap();
    let y = m.forward(&vec![0.0; 3 * 16 * 16], 1).unwrap();
    assert!(y.iter().all(|&v| v == 0.0));
    let c = m.forward_train(&vec![0.0; 3 * 2 * 16 * 16], 2).unwrap();
    assert!(m.activation_signs(&c).iter().all(|&s| !s));
}

#[test]
fn inference_is_deterministic() {
    let m = small(32, 3, 5);
    let (x, n) = noisy_inputs(32, 3, 3, 1.0, 6);
    assert_eq!(m.forward(&x, n).unwrap(), m.forward(&x, n).unwrap());
    let twin = small(32, 3, 5);
    assert_eq!(twin.forward(&x, n).unwrap(), m.forward(&x, n).unwrap());
}

#[test]
fn inference_is_per_sample() {
    let m = small(16, 3, 7);
    let (x, n) = noisy_inputs(16, 3, 3, 1.0, 8);
    let y = m.forward(&x, n).unwrap();
    let plane = 16 * 16;
    let one: Vec<f32> = (0..3).flat_map(|c| x[(c * n + 1) * plane..][..plane].to_vec()).collect();
    let y1 = m.forward(&one, 1).unwrap();
    for c in 0..3 {
        assert_eq!(&y[(c * n + 1) * plane..][..plane], &y1[c * plane..][..plane]);
    }
}

#[test]
fn default_widths_at_both_sizes() {
    let m32 = UNet::<f32>::new(ModelConfig::new(32, 3)).unwrap();
    assert_eq!(m32.encoder().len(), 5);
    assert_eq!(m32.decoder().len(), 5);
    let m64 = UNet::<f32>::new(ModelConfig::new(64, 3)).unwrap();
    assert_eq!(m64.encoder().len(), 6);
    assert_eq!(m64.decoder().len(), 6);
    assert_eq!(m64.parameter_count(), m64.config().parameter_count());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn outputs_respect_channel_bounds(seed in 0u64..1000, amp in 0.1f64..100.0, train in any::<bool>()) {
        let m = small(16, 3, seed);
        let (x, n) = noisy_inputs(16, 3, 2, amp, seed + 1);
        let y = if train { m.forward_train(&x, n).unwrap().output } else { m.forward(&x, n).unwrap() };
        let plane = n * 16 * 16;
        let bounds = m.config().channel_scales;
        for (c, chunk) in y.chunks(plane).enumerate() {
            let top = chunk.iter().fold(0.0f32, |a, v| a.max(v.abs()));
            prop_assert!(top as f64 <= bounds[c], "channel {} reaches {}", c, top);
        }
    }

    #[test]
    fn zero_mask_channel_is_inert(seed in 0u64..1000) {
        let src = small(16, 3, seed);
        let dst = expand_channels(&src, 4).unwrap();
        let (x, n) = noisy_inputs(16, 3, 2, 1.0, seed + 2);
        let mut x4 = x.clone();
        x4.extend(std::iter::repeat(0.0).take(n * 16 * 16));
        prop_assert_eq!(src.forward(&x, n).unwrap(), dst.forward(&x4, n).unwrap());
    }
}

#[test]
fn expand_channels_contract() {
    let src = UNet::<f32>::new(ModelConfig::new(32, 3).with_seed(11)).unwrap();
    let dst = expand_channels(&src, 4).unwrap();
    assert_eq!(dst.parameter_count() - src.parameter_count(), 4 * 4 * 64);
    let g = GridSpec::square(32).unwrap();
    let bc = BoundarySpec::internal(0.2, 0.3);
    let t3 = embed_boundary_conditions(&bc, &g, None).unwrap();
    let t4 = InputTensor {
        channels: [t3.channels.clone(), vec![ndarray::Array2::zeros((32, 32))]].concat(),
        ..t3.clone()
    };
    let (x3, _) = pack_inputs::<f32>(&[&t3], src.config()).unwrap();
    let (x4, _) = pack_inputs::<f32>(&[&t4], dst.config()).unwrap();
    assert_eq!(src.forward(&x3, 1).unwrap(), dst.forward(&x4, 1).unwrap());
    assert!(expand_channels(&src, 5).is_err());
    assert!(expand_channels(&src, 3).is_err());
    assert!(expand_channels(&dst, 5).is_err());
}

#[test]
fn expand_depth_contract() {
    let src = UNet::<f32>::new(ModelConfig::new(32, 4).with_base_width(16).with_seed(12)).unwrap();
    let (dst, map) = expand_depth(&src, 64, None).unwrap();
    assert_eq!(dst.encoder().len(), 6);
    assert_eq!(dst.decoder().len(), 6);
    let fresh_enc = map.encoder.iter().filter(|o| **o == BlockOrigin::Fresh).count();
    let fresh_dec = map.decoder.iter().filter(|o| **o == BlockOrigin::Fresh).count();
    assert_eq!((fresh_enc, fresh_dec), (2, 2));
    for i in 0..4 {
        assert_eq!(map.encoder[i], BlockOrigin::Copied { from: format!("enc{i}") });
        let (s, d) = (src.encoder()[i], dst.encoder()[i]);
        for (si, di) in s.param_indices().into_iter().zip(d.param_indices()) {
            assert_eq!(src.params()[si].data, dst.params()[di].data);
            assert_eq!(src.params()[si].shape, dst.params()[di].shape);
        }
    }
    for j in 1..5 {
        assert_eq!(map.decoder[j + 1], BlockOrigin::Copied { from: format!("dec{j}") });
        let (s, d) = (src.decoder()[j], dst.decoder()[j + 1]);
        for (si, di) in s.param_indices().into_iter().zip(d.param_indices()) {
            assert_eq!(src.params()[si].data, dst.params()[di].data);
        }
    }
    assert!(expand_depth(&src, 128, None).is_err());
    assert!(expand_depth(&src, 48, None).is_err());
}

#[test]
fn expand_depth_at_default_width_refreshes_the_two_innermost_pairs() {
    let src = UNet::<f32>::new(ModelConfig::new(32, 4).with_seed(13)).unwrap();
    let (dst, map) = expand_depth(&src, 64, None).unwrap();
    assert_eq!(dst.encoder().len(), src.encoder().len() + 1);
    let copied = |v: &[BlockOrigin]| v.iter().filter(|o| **o != BlockOrigin::Fresh).count();
    assert_eq!(copied(&map.encoder), 4);
    assert_eq!(copied(&map.decoder), 4);
    assert_eq!(map.encoder[4], BlockOrigin::Fresh);
    assert_eq!(map.encoder[5], BlockOrigin::Fresh);
    assert_eq!(map.decoder[0], BlockOrigin::Fresh);
    assert_eq!(map.decoder[1], BlockOrigin::Fresh);
    let (full, _) = expand_depth(&src, 64, Some(5)).unwrap();
    assert_eq!(full.params()[full.encoder()[4].weight].data, src.params()[src.encoder()[4].weight].data);
}

#[test]
fn analytic_gradients_match_central_differences() {
    for seed in 0..4 {
        let cfg = GradCheckConfig {
            model_seed: seed,
            input_seed: seed,
            ..Default::default()
        };
        let r = gradient_check(&cfg).unwrap();
        assert_eq!(r.checked, cfg_params());
        assert!(r.kink_entries.is_empty(), "seed {seed}: {:?}", r.kink_entries);
        assert!(r.max_rel_error <= 1e-4, "seed {seed}: {:?}", r.worst);
    }
}

fn cfg_params() -> usize {
    ModelConfig::new(8, 3).with_base_width(4).parameter_count()
}

#[test]
fn kink_crossings_are_detected() {
    // A huge step moves many activations across zero.
    let cfg = GradCheckConfig {
        eps: 0.5,
        ..Default::default()
    };
    let r = gradient_check(&cfg).unwrap();
    assert!(!r.kink_entries.is_empty());
}
