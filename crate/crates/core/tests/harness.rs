use pscc::harness::checkpoint::Checkpoint;
use pscc::harness::{
    evaluate_detection, evaluate_localization, infer_bytes, load_model, robustness, train, visualize_attention, DetectionMode,
    MemorySource, Precision, RunConfig, Trainer,
};
use pscc::image::RgbImage;
use pscc::model::ModelConfig;
use pscc::synth::{procedural_image, stream_rng, GenConfig, Generator, SourcePool};
use pscc::Error;

fn tiny() -> RunConfig {
    let mut c = RunConfig::desk();
    c.model = ModelConfig::micro().with_work_size(32);
    c.data.gen = GenConfig::default().with_size(32);
    c.train.batch_size = 4;
    c.train.per_epoch_per_class = 2;
    c.train.epochs = 2;
    c.train.validation_per_class = 2;
    c.train.precision = Precision::Double;
    c
}

fn data(c: &RunConfig, per_class: usize) -> MemorySource {
    let gen = Generator::new(c.data.gen.clone(), SourcePool::procedural(16, 32, 32, 3)).unwrap();
    MemorySource::generate(&gen, per_class).unwrap()
}

#[test]
fn same_seed_gives_identical_loss_curves() {
    let c = tiny();
    let d = data(&c, 5);
    let a = train(Trainer::<f64>::new(&c).unwrap(), &d, None, &mut ()).unwrap();
    let b = train(Trainer::<f64>::new(&c).unwrap(), &d, None, &mut ()).unwrap();
    assert_eq!(a.steps.len(), 4);
    assert_eq!(a.steps, b.steps);
    assert_eq!(a.last.store, b.last.store);
    assert_eq!(a.last.history.len(), 2);
    assert!(a.last.history.iter().all(|h| h.val_pixel_auc.is_some()));
}

#[test]
fn checkpoint_round_trip_is_lossless() {
    let c = tiny();
    let d = data(&c, 5);
    let mut c1 = c.clone();
    c1.train.epochs = 1;
    let first = train(Trainer::<f64>::new(&c1).unwrap(), &d, None, &mut ()).unwrap().last;

    let dir = tempfile::tempdir().unwrap();
    let p1 = dir.path().join("a.ckpt");
    let p2 = dir.path().join("b.ckpt");
    first.save(&p1).unwrap();
    let loaded = Checkpoint::<f64>::load(&p1).unwrap();
    assert_eq!(loaded, first);
    loaded.save(&p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());

    // Resuming reproduces the uninterrupted run bit for bit.
    let full = train(Trainer::<f64>::new(&c).unwrap(), &d, None, &mut ()).unwrap();
    let mut resumed = Trainer::from_checkpoint(loaded).unwrap();
    resumed.config.train.epochs = 2;
    let rest = train(resumed, &d, None, &mut ()).unwrap();
    assert_eq!(rest.steps[..], full.steps[2..]);
    assert_eq!(rest.last.store, full.last.store);
}

#[test]
fn tampered_checkpoint_is_rejected() {
    let c = tiny();
    let t = Trainer::<f64>::new(&c).unwrap();
    let mut bytes = t.checkpoint().encode();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    assert!(matches!(Checkpoint::<f64>::decode(&bytes), Err(Error::Checkpoint(_))));
    assert!(matches!(Checkpoint::<f64>::decode(&bytes[..10]), Err(Error::Checkpoint(_))));
}

#[test]
fn evaluation_leaves_the_model_untouched_and_reloads_exactly() {
    let c = tiny();
    let d = data(&c, 3);
    let t = Trainer::<f32>::new(&c).unwrap();
    let before = t.store.clone();
    let loc = evaluate_localization(&t.net, &t.store, &d, None, 0, 1).unwrap();
    let det = evaluate_detection(&t.net, &t.store, &d, DetectionMode::Head).unwrap();
    assert_eq!(t.store, before);
    assert_eq!(loc.images, 12);
    assert_eq!(loc.undefined_images, 3);
    assert!(det.image_auc.is_some() && det.tpr_at_1pct_fpr.is_some() && det.eer.is_some() && det.image_f1.is_some());

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.ckpt");
    t.checkpoint().save(&p).unwrap();
    let (net, store) = load_model::<f32>(&ModelConfig::w18(), &p).unwrap();
    assert_eq!(evaluate_localization(&net, &store, &d, None, 0, 1).unwrap(), loc);
}

#[test]
fn robustness_grid_has_ten_rows_in_order() {
    let c = tiny();
    let d = data(&c, 2);
    let t = Trainer::<f32>::new(&c).unwrap();
    let r = robustness(&t.net, &t.store, &d, "synthetic", 0, 1).unwrap();
    assert_eq!(r.rows.len(), 10);
    let table = r.to_table();
    let lines: Vec<&str> = table.lines().collect();
    assert!(lines[0].starts_with("# jpeg codec"));
    assert_eq!(lines[1].split(',').count(), 11);
    assert!(lines[1].contains("Resize 0.78x,Resize 0.25x"));
    assert!(lines[1].ends_with("Mixed,w/o distortion"));
    assert_eq!(lines[2].split(',').count(), 11);
}

#[test]
fn inference_returns_masks_at_input_size() {
    let c = tiny();
    let t = Trainer::<f32>::new(&c).unwrap();
    let img = procedural_image(512, 384, &mut stream_rng(0, 0, 0));
    let mut bytes = Vec::new();
    img.to_rgb8().write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png).unwrap();
    let p = infer_bytes(&t.net, &t.store, &bytes, 1).unwrap();
    assert_eq!((p.final_mask.width, p.final_mask.height), (512, 384));
    assert_eq!(p, infer_bytes(&t.net, &t.store, &bytes, 1).unwrap());
    assert!(matches!(infer_bytes(&t.net, &t.store, b"garbage", 1), Err(Error::Image(_))));
}

#[test]
fn attention_rows_are_distributions_on_the_block_grid() {
    let c = tiny();
    let t = Trainer::<f32>::new(&c).unwrap();
    let img = RgbImage::from_fn(40, 24, |x, y| [x as f32 / 40.0, y as f32 / 24.0, 0.3]);
    for scale in 1..=4 {
        let (maps, pair) = visualize_attention(&t.net, &t.store, &img, scale, &[(0, 0), (39, 23), (17, 9)], 0).unwrap();
        let work = c.model.work_sizes()[scale - 1];
        let r = c.model.sccm_ratios[scale - 1];
        for m in &maps {
            assert_eq!(m.response.values.len(), work * work / (r * r));
            assert!(m.response.values.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!((m.response.values.iter().sum::<f32>() - 1.0).abs() < 1e-4);
            assert_eq!((m.upsampled.width, m.upsampled.height), (40, 24));
        }
        assert_eq!(maps[0].row_index, 0);
        assert_eq!(maps[1].row_index, work * work / (r * r) - 1);
        assert_eq!(pair.x.width, work);
    }
    assert!(matches!(
        visualize_attention(&t.net, &t.store, &img, 1, &[(40, 0)], 0),
        Err(Error::Validation(_))
    ));
}

#[test]
fn micro_model_overfits_a_fixed_batch() {
    let mut c = tiny();
    c.train.precision = Precision::Single;
    let d = data(&c, 2);
    let batch: Vec<_> = d.iter().cloned().collect();
    assert_eq!(batch.len(), 8);
    let mut t = Trainer::<f32>::new(&c).unwrap();
    let initial = t.batch_loss(&batch).unwrap().total;
    for step in 0..200 {
        t.train_step(&batch, 1e-2 * 0.5f64.powi(step / 50)).unwrap();
    }
    let last = t.batch_loss(&batch).unwrap().total;
    assert!(last < 0.25 * initial, "loss {initial} -> {last}");
}
