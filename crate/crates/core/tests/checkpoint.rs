use std::fs;

use nsgen_core::checkpoint::{self, loss_digest, CheckpointMeta, MANIFEST_FILE, PARAMS_FILE};
use nsgen_core::data::{Recipe, StageId};
use nsgen_core::loss::{LossOptions, LossWeights};
use nsgen_core::nn::{expand_depth, ModelConfig, UNet};

fn meta() -> CheckpointMeta {
    CheckpointMeta {
        stage: Some(StageId::B2),
        epoch: 7,
        recipe: Some(Recipe::Coarse8),
        ranges: Some(StageId::B2.ranges()),
        weights: Some(LossWeights {
            lambda_1: 0.123456789,
            ..Default::default()
        }),
        loss_options: Some(LossOptions::default()),
        total_loss: Some(1.0 / 3.0),
        loss_history_digest: Some(loss_digest(&[3.0, 2.0, 1.0 / 3.0])),
        depth_mapping: None,
        source: Some("checkpoints/B1".into()),
        seed: Some(5),
    }
}

#[test]
fn round_trip_is_bit_exact() {
    let src = UNet::<f32>::new(ModelConfig::new(32, 4).with_base_width(8).with_seed(3)).unwrap();
    let (mut model, map) = expand_depth(&src, 64, None).unwrap();
    for (k, p) in model.params_mut().iter_mut().enumerate() {
        p.data[0] = f32::from_bits(0x3f80_0001 + k as u32);
    }
    model.params_mut()[1].trainable = false;
    let m = CheckpointMeta {
        depth_mapping: Some(map),
        ..meta()
    };
    let dir = tempfile::tempdir().unwrap();
    checkpoint::save(dir.path(), &model, &m).unwrap();
    let (back, m2) = checkpoint::load(dir.path()).unwrap();
    assert_eq!(m2, m);
    assert_eq!(back.config(), model.config());
    for (a, b) in back.params().iter().zip(model.params()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.trainable, b.trainable);
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.data), bits(&b.data));
    }
    let blob = fs::read(dir.path().join(PARAMS_FILE)).unwrap();
    assert_eq!(blob.len(), 4 * model.params().iter().map(|p| p.data.len()).sum::<usize>());
    let again = tempfile::tempdir().unwrap();
    checkpoint::save(again.path(), &back, &m2).unwrap();
    assert_eq!(blob, fs::read(again.path().join(PARAMS_FILE)).unwrap());
    assert_eq!(
        fs::read(dir.path().join(MANIFEST_FILE)).unwrap(),
        fs::read(again.path().join(MANIFEST_FILE)).unwrap()
    );
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let model = UNet::<f32>::new(ModelConfig::new(16, 3).with_base_width(4)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    assert!(checkpoint::load(dir.path()).is_err());
    checkpoint::save(dir.path(), &model, &meta()).unwrap();
    let blob = fs::read(dir.path().join(PARAMS_FILE)).unwrap();
    fs::write(dir.path().join(PARAMS_FILE), &blob[..blob.len() - 4]).unwrap();
    assert!(checkpoint::load(dir.path()).is_err());
    fs::write(dir.path().join(PARAMS_FILE), &blob).unwrap();
    let text = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
    fs::write(dir.path().join(MANIFEST_FILE), text.replace("\"format_version\": 1", "\"format_version\": 9")).unwrap();
    assert!(checkpoint::load(dir.path()).is_err());
}

#[test]
fn loss_digest_is_sha256_of_le_bytes() {
    assert_eq!(loss_digest(&[]), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    // sha256 of eight zero bytes
    assert_eq!(loss_digest(&[0.0]), "af5570f5a1810b7af78caf4bc70a660f0df51e42baf91d4de5b2328de0e83dfc");
    assert_ne!(loss_digest(&[1.0, 2.0]), loss_digest(&[2.0, 1.0]));
}
