mod common;

use std::path::Path;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stxpn::ingest::{
    export_instance_mask, import_instance_mask, load_checkpoint, load_dataset, load_masks, save_checkpoint, save_dataset,
    save_masks, Dataset, InstanceMask, MaskEncoding, Sample,
};
use stxpn::pointnet::{train_examples, training_examples, ArchitectureSpec, Batch, TrainConfig, Trainer};
use stxpn::synth::{generate_dataset, generate_indexed, generate_masks, DetectorNoise, SceneConfig};
use stxpn::{ClassTable, DetectionBox, Execution, InstanceLabeling, Rect};

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn resaving_a_loaded_dataset_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = SceneConfig::default();
    let ds = generate_dataset(&scene, &DetectorNoise::default(), 100, 21, "train", Execution::Parallel).unwrap();
    save_dataset(&ds, tmp.path().join("a")).unwrap();
    let loaded = load_dataset(tmp.path().join("a")).unwrap();
    assert_eq!(loaded, ds);
    save_dataset(&loaded, tmp.path().join("b")).unwrap();
    assert_eq!(read_all(&tmp.path().join("a")), read_all(&tmp.path().join("b")));
}

fn arbitrary_dataset(seed: u64, frames: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = ClassTable::cityscapes();
    let mut ds = Dataset::empty("train", classes);
    ds.seed = Some(seed);
    for f in 0..frames {
        let n = rng.random_range(0..15);
        let mut frame = common::random_frame(&mut rng, f as u64, n, 80, 40);
        for s in &mut frame.stixels {
            s.x = rng.random_range(-30.0..30.0);
            s.y = rng.random_range(-2.0..2.0);
            s.z = rng.random_range(1.0..80.0);
            s.label_conf = rng.random();
        }
        let detections = (0..rng.random_range(0..4))
            .map(|_| {
                let u = rng.random_range(0.0..70.0);
                let v = rng.random_range(0.0..30.0);
                let r = Rect::new(u, v, u + rng.random_range(0.5..10.0), v + rng.random_range(0.5..10.0));
                DetectionBox::from_rect(r, rng.random_range(0..8), rng.random())
            })
            .collect();
        let gt = InstanceLabeling::background(&frame);
        ds.samples.push(Sample { frame, detections, gt });
    }
    ds
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn arbitrary_datasets_round_trip(seed in any::<u64>(), frames in 0usize..5) {
        let tmp = tempfile::tempdir().unwrap();
        let ds = arbitrary_dataset(seed, frames);
        save_dataset(&ds, tmp.path()).unwrap();
        prop_assert_eq!(load_dataset(tmp.path()).unwrap(), ds);
    }

    #[test]
    fn masks_round_trip_in_every_encoding(w in 1usize..40, h in 1usize..30, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mask = InstanceMask::new(w, h);
        for v in 0..h {
            for u in 0..w {
                mask.set(u, v, rng.random());
            }
        }
        let tmp = tempfile::tempdir().unwrap();
        for enc in [MaskEncoding::Png16, MaskEncoding::Pgm, MaskEncoding::Text] {
            let path = tmp.path().join(format!("m.{}", enc.extension()));
            export_instance_mask(&mask, &path, enc).unwrap();
            prop_assert_eq!(&import_instance_mask(&path, enc).unwrap(), &mask);
        }
    }
}

#[test]
fn imported_synthetic_masks_match_the_generator() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = SceneConfig::default();
    let mut ds = generate_dataset(&scene, &DetectorNoise::default(), 6, 4, "train", Execution::Sequential).unwrap();
    let masks = generate_masks(&scene, 6, 4, Execution::Sequential);
    save_masks(&mut ds, tmp.path(), &masks, MaskEncoding::Png16).unwrap();
    save_dataset(&ds, tmp.path()).unwrap();
    let loaded = load_dataset(tmp.path()).unwrap();
    let imported = load_masks(&loaded, tmp.path()).unwrap();
    assert_eq!(imported, masks);
    for (i, mask) in imported.iter().enumerate() {
        let sf = generate_indexed(&scene, 4, i as u64);
        let rects = mask.bounding_rects();
        let counts = mask.pixel_counts();
        for obj in &sf.visible {
            assert_eq!(rects[&obj.code], obj.mask_rect);
            assert_eq!(counts[&obj.code], obj.visible_pixels);
        }
    }
}

fn small_training() -> (Vec<stxpn::pointnet::TrainingExample>, ArchitectureSpec, TrainConfig) {
    let ds = generate_dataset(&SceneConfig::default(), &DetectorNoise::default(), 8, 2, "train", Execution::Parallel).unwrap();
    let config = TrainConfig {
        epochs: 4,
        seed: 6,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let examples = training_examples(&ds, &Default::default(), config.keep_negatives, Execution::Parallel).unwrap();
    let arch = ArchitectureSpec::new(10, vec![16, 32, 64], vec![32, 16, 2], 1).unwrap();
    (examples, arch, config)
}

#[test]
fn checkpoint_reload_gives_identical_outputs() {
    let (examples, arch, config) = small_training();
    let (ckpt, _) = train_examples(&examples, &arch, &TrainConfig { epochs: 1, ..config }, |_| {}).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("m.ckpt");
    save_checkpoint(&ckpt, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.to_bytes(), ckpt.to_bytes());
    let batch = Batch::stack(examples.iter().map(|e| e.features.view())).unwrap();
    let a = ckpt.model().unwrap().logits(&batch).unwrap();
    let b = loaded.model().unwrap().logits(&batch).unwrap();
    assert_eq!(a, b);
}

#[test]
fn resumed_training_equals_uninterrupted_training() {
    let (examples, arch, config) = small_training();
    let (full, full_logs) = train_examples(&examples, &arch, &config, |_| {}).unwrap();

    let (half, half_logs) = train_examples(&examples, &arch, &TrainConfig { epochs: 2, ..config.clone() }, |_| {}).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("half.ckpt");
    save_checkpoint(&half, &path).unwrap();
    let mut trainer = Trainer::resume(&load_checkpoint(&path).unwrap(), config.clone()).unwrap();
    let mut logs = half_logs;
    while trainer.epoch < config.epochs {
        logs.push(trainer.run_epoch(&examples).unwrap());
    }
    assert_eq!(trainer.checkpoint().to_bytes(), full.to_bytes());
    let losses = |l: &[stxpn::pointnet::EpochLog]| l.iter().map(|e| e.mean_loss).collect::<Vec<_>>();
    assert_eq!(losses(&logs), losses(&full_logs));
}
