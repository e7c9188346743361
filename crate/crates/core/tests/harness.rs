use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use rgbdfuse::encoding::DepthEncoding;
use rgbdfuse::harness::{
    evaluate, generate_synthetic, make_splits, sweep_encodings, Dataset, DatasetManifest, HarnessError,
    MetricsReport, ModalityMode, PipelineConfig, Sample, SplitSpec, SyntheticSceneConfig,
};
use rgbdfuse::nn::TrainConfig;

fn scene(classes: usize, mode: ModalityMode) -> SyntheticSceneConfig {
    SyntheticSceneConfig { classes, instances: 2, frames: 2, side: 16, mode, ..Default::default() }
}

/// Samples keyed by (class, instance rank within class, frame rank).
fn by_slot(ds: &Dataset) -> BTreeMap<(usize, usize, usize), &Sample> {
    let mut ranks: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for s in ds.samples() {
        ranks.entry(s.class).or_default().insert(s.instance);
    }
    let mut frames: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut out = BTreeMap::new();
    for s in ds.samples() {
        let j = ranks[&s.class].iter().position(|&i| i == s.instance).unwrap();
        let f = frames.entry((s.class, j)).or_default();
        out.insert((s.class, j, *f), s);
        *f += 1;
    }
    out
}

#[test]
fn metrics_examples() {
    let perfect = evaluate((0..3).flat_map(|k| [(k, k), (k, k)]), 3).unwrap();
    assert_eq!(perfect.accuracy, 1.0);
    assert_eq!(perfect.per_class_recall, vec![Some(1.0); 3]);
    assert_eq!(perfect.confusion, vec![vec![2, 0, 0], vec![0, 2, 0], vec![0, 0, 2]]);

    let constant = evaluate([(0, 0), (0, 0), (1, 0), (1, 0)], 2).unwrap();
    assert_eq!(constant.accuracy, 0.5);
    assert_eq!(constant.per_class_recall, vec![Some(1.0), Some(0.0)]);

    let r = MetricsReport::from_confusion(vec![vec![5, 0, 0], vec![1, 3, 1], vec![0, 0, 5]]).unwrap();
    assert_eq!(r.per_class_recall, vec![Some(1.0), Some(0.6), Some(1.0)]);
    assert_eq!(r.accuracy, 13.0 / 15.0);

    let unseen = evaluate([(0, 0), (0, 1)], 3).unwrap();
    assert_eq!(unseen.per_class_recall[2], None);
    assert!(matches!(evaluate([], 2), Err(HarnessError::EmptyTestSet)));
    assert!(matches!(evaluate([(0, 4)], 2), Err(HarnessError::Data(_))));
}

#[test]
fn two_instances_two_splits_enumerate_both_leave_outs() {
    let labels: Vec<(usize, usize)> = (0..3).flat_map(|c| [(c, 2 * c), (c, 2 * c + 1)]).collect();
    let splits = make_splits(&labels, 3, 2, 11).unwrap();
    for c in 0..3 {
        let held: BTreeSet<usize> = splits.iter().map(|s| s.held_out[c]).collect();
        assert_eq!(held, BTreeSet::from([2 * c, 2 * c + 1]));
    }
    assert_eq!(splits, make_splits(&labels, 3, 2, 11).unwrap());
    let one_instance = [(0, 0), (0, 0), (1, 1), (1, 2)];
    assert!(matches!(
        make_splits(&one_instance, 2, 1, 0),
        Err(HarnessError::TooFewInstances { class: 0, found: 1 })
    ));
}

#[test]
fn complementary_scene_is_a_product_code() {
    let ds = generate_synthetic(&scene(4, ModalityMode::Complementary)).unwrap();
    let slots = by_slot(&ds);
    for j in 0..2 {
        for f in 0..2 {
            // classes 2s and 2s+1 share a shape, c and c+2 share a texture
            assert_eq!(slots[&(0, j, f)].depth, slots[&(1, j, f)].depth);
            assert_eq!(slots[&(2, j, f)].depth, slots[&(3, j, f)].depth);
            assert_eq!(slots[&(0, j, f)].rgb, slots[&(2, j, f)].rgb);
            assert_eq!(slots[&(1, j, f)].rgb, slots[&(3, j, f)].rgb);
        }
    }
    // the pair tells every class apart
    for (a, sa) in &slots {
        for (b, sb) in &slots {
            if a.0 != b.0 {
                assert!(sa.rgb != sb.rgb || sa.depth != sb.depth, "{a:?} vs {b:?}");
            }
        }
    }
}

#[test]
fn depth_only_scene_shares_texture_statistics() {
    let ds = generate_synthetic(&SyntheticSceneConfig { frames: 3, ..scene(2, ModalityMode::DepthOnly) }).unwrap();
    let mean_colour = |class: usize| {
        let mut sum = [0f64; 3];
        let mut n = 0.0;
        for s in ds.samples().iter().filter(|s| s.class == class) {
            for px in s.rgb.data().chunks_exact(3) {
                for c in 0..3 {
                    sum[c] += px[c] as f64;
                }
                n += 1.0;
            }
        }
        sum.map(|v| v / n)
    };
    let (a, b) = (mean_colour(0), mean_colour(1));
    for c in 0..3 {
        assert!((a[c] - b[c]).abs() < 40.0, "channel {c}: {a:?} vs {b:?}");
    }
}

#[test]
fn generation_is_deterministic_and_validated() {
    let cfg = scene(4, ModalityMode::Complementary);
    let a = generate_synthetic(&cfg).unwrap();
    let b = generate_synthetic(&cfg).unwrap();
    assert_eq!(a.samples(), b.samples());
    let c = generate_synthetic(&SyntheticSceneConfig { seed: 1, ..cfg.clone() }).unwrap();
    assert_ne!(a.samples(), c.samples());
    for bad in [
        SyntheticSceneConfig { classes: 1, ..cfg.clone() },
        SyntheticSceneConfig { instances: 1, ..cfg.clone() },
        SyntheticSceneConfig { classes: 5, ..cfg.clone() },
    ] {
        assert!(generate_synthetic(&bad).unwrap_err().is_config());
    }
}

#[test]
fn manifest_round_trip_with_stride() {
    let ds = generate_synthetic(&SyntheticSceneConfig { frames: 4, noisy: true, ..scene(4, ModalityMode::Complementary) }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    ds.save(dir.path()).unwrap();
    let manifest = DatasetManifest::read(&dir.path().join(DatasetManifest::FILE_NAME)).unwrap();
    assert_eq!(manifest.classes, ds.classes());
    assert_eq!(manifest.entries.len(), ds.len());
    let text = std::fs::read_to_string(dir.path().join(DatasetManifest::FILE_NAME)).unwrap();
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for key in ["rgb", "depth", "class", "instance"] {
        assert!(first.get(key).is_some(), "{key}");
    }

    let loaded = Dataset::load(&manifest, 1).unwrap();
    assert_eq!(loaded.samples(), ds.samples());
    let strided = Dataset::load(&manifest, 2).unwrap();
    assert_eq!(strided.len(), ds.len() / 2);
    assert!(Dataset::load(&manifest, 0).is_err());

    std::fs::remove_file(dir.path().join(&manifest.entries[3].depth)).unwrap();
    assert!(matches!(Dataset::load(&manifest, 1), Err(HarnessError::Image(_))));
}

#[test]
fn manifest_rejects_bad_labels() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("manifest.jsonl");
    std::fs::write(&path, "{\"rgb\":\"a.png\",\"depth\":\"b.png\",\"class\":0,\"instance\":0}\n{\"rgb\":\"c.png\",\"depth\":\"d.png\",\"class\":1,\"instance\":0}\n").unwrap();
    assert!(DatasetManifest::read(&path).is_err(), "instance 0 claimed by two classes");
    std::fs::write(&path, "not json\n").unwrap();
    assert!(DatasetManifest::read(&path).is_err());
}

#[test]
fn split_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let splits = vec![SplitSpec { held_out: vec![1, 2], seed: 4 }, SplitSpec { held_out: vec![0, 3], seed: 4 }];
    let path = dir.path().join("splits.json");
    SplitSpec::write_all(&splits, &path).unwrap();
    assert_eq!(SplitSpec::read_all(&path).unwrap(), splits);
    let single = dir.path().join("one.json");
    splits[0].write(&single).unwrap();
    assert_eq!(SplitSpec::read_all(&single).unwrap(), vec![splits[0].clone()]);
}

#[test]
fn jet_and_gray_both_solve_the_easy_depth_task() {
    let ds = generate_synthetic(&SyntheticSceneConfig {
        classes: 2,
        instances: 3,
        frames: 8,
        side: 32,
        mode: ModalityMode::DepthOnly,
        ..Default::default()
    })
    .unwrap();
    let split = make_splits(&ds.labels(), 2, 1, 0).unwrap().remove(0);
    let cfg = PipelineConfig {
        side: 32,
        crop: 28,
        stage1: TrainConfig::scaled(200, 32, 0.01, 0),
        ..Default::default()
    };
    let rows = sweep_encodings(&ds, &split, &cfg, &[DepthEncoding::Jet, DepthEncoding::Gray]).unwrap();
    assert_eq!(rows.len(), 2);
    for row in &rows {
        assert_eq!(row.accuracy, 1.0, "{}", row.encoding.name());
    }
}

proptest! {
    #[test]
    fn report_invariants(pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..200)) {
        let r = evaluate(pairs.iter().copied(), 4).unwrap();
        prop_assert_eq!(r.total(), pairs.len() as u64);
        let trace: u64 = (0..4).map(|k| r.confusion[k][k]).sum();
        prop_assert_eq!(r.accuracy, trace as f64 / pairs.len() as f64);
        for (k, recall) in r.per_class_recall.iter().enumerate() {
            prop_assert_eq!(recall.is_some(), r.support(k) > 0);
            if let Some(v) = recall {
                prop_assert!(v.is_finite() && (0.0..=1.0).contains(v));
            }
        }
    }

    #[test]
    fn balanced_accuracy_is_mean_recall(preds in proptest::collection::vec(0usize..3, 15)) {
        let pairs: Vec<_> = preds.iter().enumerate().map(|(i, &p)| (i % 3, p)).collect();
        let r = evaluate(pairs, 3).unwrap();
        let mean = r.per_class_recall.iter().map(|v| v.unwrap()).sum::<f64>() / 3.0;
        prop_assert!((r.accuracy - mean).abs() < 1e-12);
    }

    #[test]
    fn splits_keep_instances_on_one_side(
        per_class in proptest::collection::vec(2usize..5, 2..5),
        frames in 1usize..4,
        n in 1usize..4,
        seed in any::<u64>(),
    ) {
        let mut labels = Vec::new();
        let mut next = 0;
        for (c, &k) in per_class.iter().enumerate() {
            for _ in 0..k {
                labels.extend(std::iter::repeat_n((c, next), frames));
                next += 1;
            }
        }
        for split in make_splits(&labels, per_class.len(), n, seed).unwrap() {
            let (train, test) = split.partition(&labels);
            prop_assert_eq!(train.len() + test.len(), labels.len());
            let train_inst: BTreeSet<_> = train.iter().map(|&i| labels[i].1).collect();
            let test_inst: BTreeSet<_> = test.iter().map(|&i| labels[i].1).collect();
            prop_assert!(train_inst.is_disjoint(&test_inst));
            for c in 0..per_class.len() {
                prop_assert!(train.iter().any(|&i| labels[i].0 == c));
                prop_assert!(test.iter().any(|&i| labels[i].0 == c));
            }
        }
    }
}
