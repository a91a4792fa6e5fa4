use std::fs;

use proptest::prelude::*;
use sofar::checkpoint::{self, CheckpointError};
use sofar::config::RunConfig;
use sofar::data::{self, DataError, CIFAR_RECORD, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
use sofar_core::arch::{toy_rf, Family, TransitionPlan};
use sofar_core::train::{Checkpoint, OptimizerConfig, OptimizerState, Phase, Schedule, TrainConfig};
use sofar_core::{Shape, Tensor};

fn idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    let mut b = IDX_IMAGES_MAGIC.to_be_bytes().to_vec();
    for d in [n, rows, cols] {
        b.extend(d.to_be_bytes());
    }
    b.extend_from_slice(pixels);
    b
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut b = IDX_LABELS_MAGIC.to_be_bytes().to_vec();
    b.extend((labels.len() as u32).to_be_bytes());
    b.extend_from_slice(labels);
    b
}

#[test]
fn cifar_file_round_trip_and_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.bin");
    let (images, labels) = data::synthesize(5, 10, 3);
    data::write_cifar(&path, &images, &labels).unwrap();
    let set = data::load_cifar(&path, 10).unwrap();
    assert_eq!(set.len(), 5);
    assert_eq!(set.labels(), labels.iter().map(|&l| u32::from(l)).collect::<Vec<_>>());
    let expect: Vec<f32> = images[2].iter().map(|&b| b as f32 / 127.5 - 1.0).collect();
    assert_eq!(set.image(2), &expect[..]);

    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..4 * CIFAR_RECORD + 17]).unwrap();
    match data::load_cifar(&path, 10) {
        Err(DataError::Truncated { records: 4, trailing: 17, .. }) => {}
        other => panic!("{other:?}"),
    }
    assert!(matches!(data::load_cifar(&dir.path().join("missing.bin"), 10), Err(DataError::Io { .. })));
}

#[test]
fn cifar_label_out_of_range() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.bin");
    let (images, _) = data::synthesize(2, 10, 0);
    data::write_cifar(&path, &images, &[1, 12]).unwrap();
    assert!(matches!(data::load_cifar(&path, 10), Err(DataError::Set(_))));
}

#[test]
fn idx_grayscale_fills_three_channels() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
    fs::write(&img, idx_images(2, 2, 2, &[0, 255, 51, 204, 10, 20, 30, 40])).unwrap();
    fs::write(&lab, idx_labels(&[3, 1])).unwrap();
    let set = data::load_idx(&img, &lab, 4).unwrap();
    assert_eq!(set.item_shape(), [3, 2, 2]);
    let first = set.image(0);
    assert_eq!(&first[..4], &[-1.0, 1.0, 51.0 / 127.5 - 1.0, 204.0 / 127.5 - 1.0]);
    assert_eq!(&first[..4], &first[4..8]);
    assert_eq!(&first[..4], &first[8..]);
    assert_eq!(set.labels(), &[3, 1]);

    fs::write(&lab, idx_labels(&[3])).unwrap();
    assert!(matches!(data::load_idx(&img, &lab, 4), Err(DataError::Malformed { .. })));
    fs::write(&lab, idx_images(1, 1, 1, &[0])).unwrap();
    assert!(matches!(data::load_idx(&img, &lab, 4), Err(DataError::BadMagic { found: IDX_IMAGES_MAGIC, .. })));
    fs::write(&img, idx_images(2, 2, 2, &[0; 5])).unwrap();
    fs::write(&lab, idx_labels(&[0, 0])).unwrap();
    assert!(matches!(data::load_idx(&img, &lab, 4), Err(DataError::Truncated { records: 1, .. })));
}

#[test]
fn data_dir_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let name = "sofar-fallback-test.bin";
    let (images, labels) = data::synthesize(1, 10, 0);
    data::write_cifar(&dir.path().join(name), &images, &labels).unwrap();
    std::env::set_var(data::DATA_DIR_VAR, dir.path());
    let set = data::load_cifar(std::path::Path::new(name), 10).unwrap();
    assert_eq!(set.len(), 1);
}

fn tensor(values: Vec<f32>) -> Tensor {
    let n = values.len();
    Tensor::from_vec(Shape::new(1, 1, 1, n), values).unwrap()
}

fn bits(c: &Checkpoint) -> Vec<u32> {
    let mut out = Vec::new();
    for (_, t) in &c.params {
        out.extend(t.data().iter().map(|v| v.to_bits()));
    }
    if let Some(o) = &c.optimizer {
        for v in o.first.iter().chain(&o.second) {
            out.extend(v.iter().map(|x| x.to_bits()));
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn checkpoint_round_trip_is_bit_exact(
        raw in prop::collection::vec(prop::collection::vec(any::<u32>(), 1..20), 1..6),
        epoch in 0usize..1000,
        step in any::<u64>(),
        adam in any::<bool>(),
        with_opt in any::<bool>(),
    ) {
        let params: Vec<(String, Tensor)> = raw
            .iter()
            .enumerate()
            .map(|(i, v)| (format!("layer{i}.w"), tensor(v.iter().map(|&b| f32::from_bits(b)).collect())))
            .collect();
        let slot = |k: u32| raw.iter().map(|v| v.iter().map(|&b| f32::from_bits(b.rotate_left(k))).collect()).collect::<Vec<Vec<f32>>>();
        let optimizer = with_opt.then(|| OptimizerState { step, first: slot(7), second: if adam { slot(13) } else { Vec::new() } });
        let ckpt = Checkpoint { arch: toy_rf(8, 10), phase: Phase::FinetuneBin, epoch, params, optimizer };

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.sofa");
        checkpoint::save(&path, &ckpt).unwrap();
        let back = checkpoint::load(&path).unwrap();
        prop_assert_eq!(bits(&back), bits(&ckpt));
        prop_assert_eq!(&back.arch, &ckpt.arch);
        prop_assert_eq!(back.epoch, epoch);
        prop_assert_eq!(back.optimizer.as_ref().map(|o| o.step), ckpt.optimizer.as_ref().map(|o| o.step));
        prop_assert_eq!(back.params.iter().map(|(n, t)| (n.clone(), t.shape())).collect::<Vec<_>>(),
                        ckpt.params.iter().map(|(n, t)| (n.clone(), t.shape())).collect::<Vec<_>>());
        prop_assert_eq!(checkpoint::encode(&back), fs::read(&path).unwrap());
    }

    #[test]
    fn config_round_trip_is_exact(
        lr in any::<f32>().prop_filter("finite", |x| x.is_finite()),
        momentum in 0.0f32..1.0,
        wd in 0.0f32..1e-2,
        epochs in 1usize..200,
        batch in 1usize..512,
        seed in 0..=i64::MAX as u64,
        reductions in prop::collection::vec(1.0f64..8.0, 1),
        limit in prop::option::of(1usize..5000),
        seconds in any::<bool>(),
    ) {
        let mut spec = toy_rf(8, 10);
        spec.family = Family::DRF;
        spec.transition = TransitionPlan::Reduction(reductions);
        let text = format!(
            "out_dir = \"o\"\nrecord_seconds = {seconds}\n[model]\nname = \"RF-c3d4 ResNet21(50)\"\n[data]\nformat = \"cifar_binary\"\ntrain = \"t.bin\"\n[train]\nphase = \"pretrain_fp\"\nepochs = 1\nbatch_size = 1\nseed = 0\noptimizer = {{ kind = \"adam\" }}\nschedule = {{ kind = \"constant\", lr = 0.1 }}\n"
        );
        let mut cfg = RunConfig::parse(&text).unwrap();
        cfg.model.name = None;
        cfg.model.spec = Some(spec);
        cfg.data.limit = limit;
        cfg.train = TrainConfig {
            phase: Phase::PretrainFp,
            optimizer: OptimizerConfig::SgdMomentum { momentum, weight_decay: wd },
            schedule: Schedule::Cosine { lr, final_lr: lr / 3.0 },
            epochs,
            batch_size: batch,
            seed,
            augment: seed % 2 == 0,
            recalibrate_norm: seed % 3 == 0,
        };
        let text = cfg.to_toml().unwrap();
        let back = RunConfig::parse(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_toml().unwrap(), text);
    }
}

#[test]
fn checkpoint_rejects_foreign_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.sofa");
    fs::write(&path, b"PK\x03\x04 not a checkpoint").unwrap();
    assert!(matches!(checkpoint::load(&path), Err(CheckpointError::BadMagic(_))));
    fs::write(&path, b"SOF").unwrap();
    assert!(matches!(checkpoint::load(&path), Err(CheckpointError::Truncated { .. })));
}
