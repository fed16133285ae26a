use std::time::Instant;

use elrcn_core::dataset::{synthesize_dataset, Dataset, SynthSpec};
use elrcn_core::elrcn::{prepare_sample, ElrcnConfig, ElrcnModel, PipelineConfig, PreparedSample, Variant};
use elrcn_core::nn::{grad_check, GradCheckOptions, Trainable};

fn dataset(seed: u64) -> Dataset {
    synthesize_dataset(&SynthSpec { n_subjects: 2, videos_per_subject: 3, ..Default::default() }, seed).unwrap()
}

fn prepared(ds: &Dataset) -> Vec<PreparedSample> {
    let cfg = PipelineConfig::default();
    ds.samples().iter().map(|s| prepare_sample(s, &cfg, true).unwrap()).collect()
}

fn model(variant: Variant, ds: &Dataset, prep: &[PreparedSample]) -> ElrcnModel {
    let mut m = ElrcnModel::new(ElrcnConfig::desk(variant), ds.taxonomy()).unwrap();
    m.fit_gray_mean(prep);
    m
}

#[test]
fn full_model_gradients() {
    let ds = dataset(1);
    let prep = prepared(&ds);
    for variant in [Variant::Se, Variant::Te] {
        let mut m = model(variant, &ds, &prep);
        let (inputs, labels, _) = m.samples_for(&prep[..1]).unwrap();
        let t = Instant::now();
        let opts = GradCheckOptions {
            tolerance: 1e-4,
            max_entries_per_tensor: Some(16),
            ..Default::default()
        };
        let r = grad_check(&mut m, &inputs[0], labels[0], &opts).unwrap();
        assert_eq!(inputs[0].len(), 9);
        assert!(r.passed(), "{variant:?}: {r:?}");
        assert!(r.checked > 10 * r.skipped_kinks, "{variant:?}: {r:?}");
        assert!(t.elapsed().as_secs() < 60);
    }
}

#[test]
fn feature_lengths_and_variant_checks() {
    let ds = dataset(2);
    let prep = prepared(&ds);
    let se = model(Variant::Se, &ds, &prep);
    let te = model(Variant::Te, &ds, &prep);
    let ef = &prep[0].enriched[0];
    assert_eq!(se.encode_frame_se(ef).unwrap().len(), 64);
    assert_eq!(te.encode_frame_te(ef).unwrap().len(), 192);
    assert!(se.encode_frame_te(ef).is_err());
    assert!(te.encode_frame_se(ef).is_err());
    assert_eq!(se.encode_frame_se(ef).unwrap(), se.encode_frame_se(&ef.clone()).unwrap());
    assert_eq!(se.ledger().encoder_inputs, vec![[32, 32, 5]]);
}

#[test]
fn te_replicates_strain_and_gray() {
    let ds = dataset(2);
    let prep = prepared(&ds);
    let te = model(Variant::Te, &ds, &prep);
    let t = te.frame_tensors(&prep[0].enriched[3]).unwrap();
    assert_eq!(t.len(), 3);
    for x in &t[1..] {
        assert_eq!(x.shape(), &[3, 32, 32]);
        assert_eq!(x.channel(0), x.channel(1));
        assert_eq!(x.channel(1), x.channel(2));
    }
    assert_eq!(t[1].channel(0), prep[0].enriched[3].strain.s.as_slice());
}

#[test]
fn zero_head_predicts_uniform() {
    let ds = dataset(3);
    let prep = prepared(&ds);
    let mut m = model(Variant::Se, &ds, &prep);
    let (inputs, _, _) = m.samples_for(&prep).unwrap();
    let (p, _) = m.predict_sequence(&inputs[0]).unwrap();
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9 && p.iter().all(|&v| v >= 0.0));
    m.head_mut().weight.fill(0.0);
    m.head_mut().bias.fill(0.0);
    let (p, c0) = m.predict_sequence(&inputs[0]).unwrap();
    assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    assert_eq!(c0, 0);
}

#[test]
fn checkpoint_round_trip_and_mismatch() {
    let ds = dataset(4);
    let prep = prepared(&ds);
    let mut m = model(Variant::Se, &ds, &prep);
    m.set_gray_mean(0.4321);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("se.ck");
    m.save(&path).unwrap();
    let back = ElrcnModel::load(&path).unwrap();
    assert_eq!(back, m);
    for (a, b) in back.params().iter().zip(m.params()) {
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    let mut cfg = ElrcnConfig::desk(Variant::Se);
    cfg.lstm_hidden = vec![16];
    let mut other = ElrcnModel::new(cfg, ds.taxonomy()).unwrap();
    let err = other.load_weights(&m.to_checkpoint()).unwrap_err().to_string();
    assert!(err.contains("lstm0.weight"), "{err}");

    // encoders load; recurrent and head parameters stay as they were
    let lstm_before = other.lstm().unwrap().clone();
    other.load_encoder_weights(&path).unwrap();
    assert_eq!(other.encoders(), m.encoders());
    assert_eq!(other.lstm().unwrap(), &lstm_before);

    let mut wide = ElrcnConfig::desk(Variant::Se);
    wide.encoder.fc_dims = vec![80];
    let mut wide = ElrcnModel::new(wide, ds.taxonomy()).unwrap();
    let err = wide.load_encoder_weights(&path).unwrap_err().to_string();
    assert!(err.contains("enc0.fc0.weight"), "{err}");
}

#[test]
fn single_encoder_checkpoint_seeds_all_te_streams() {
    let ds = dataset(4);
    let flow = ElrcnModel::new(ElrcnConfig::desk(Variant::Flow), ds.taxonomy()).unwrap();
    let mut te = ElrcnModel::new(ElrcnConfig::desk(Variant::Te), ds.taxonomy()).unwrap();
    te.load_encoder_checkpoint(&flow.to_checkpoint()).unwrap();
    for enc in te.encoders() {
        assert_eq!(enc, &flow.encoders()[0]);
    }
}

#[test]
fn overfit_single_sample_is_order_sensitive() {
    use elrcn_core::nn::{fit, AdamConfig, TrainConfig};
    let ds = dataset(5);
    let prep = prepared(&ds);
    let mut m = model(Variant::Se, &ds, &prep);
    let (inputs, labels, _) = m.samples_for(&prep[1..2]).unwrap();
    let cfg = TrainConfig {
        max_epochs: 200,
        patience: None,
        batch_size: 1,
        adam: AdamConfig { lr: 1e-3, ..Default::default() },
        ..Default::default()
    };
    fit(&mut m, &inputs, &labels, &cfg).unwrap();
    let (p, c) = m.predict_sequence(&inputs[0]).unwrap();
    assert_eq!(c, labels[0]);
    assert!(p[c] > 0.99, "{p:?}");
    let order: Vec<usize> = (0..9).rev().collect();
    let (q, _) = m.predict_sequence(&inputs[0].permuted(&order)).unwrap();
    let diff: f64 = p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum();
    assert!(diff > 1e-6, "{diff}");
}

/// Epochs until the mean training loss drops below `target`.
fn epochs_to_loss(m: &mut ElrcnModel, prep: &[PreparedSample], target: f64) -> usize {
    use elrcn_core::elrcn::Preset;
    use elrcn_core::nn::{fit_with, EpochControl};
    let mut cfg = Preset::Desk.train_config();
    cfg.max_epochs = 60;
    cfg.patience = None;
    let (x, y, _) = m.samples_for(prep).unwrap();
    let h = fit_with(m, &x, &y, &cfg, |_, loss, _| {
        if loss < target {
            EpochControl::Stop
        } else {
            EpochControl::Continue
        }
    })
    .unwrap();
    h.epochs()
}

#[test]
fn pretrained_encoder_converges_faster() {
    // encoder from a prior run on a different synthetic draw of the same task
    let prior = dataset(100);
    let prior_prep = prepared(&prior);
    let mut source = model(Variant::Se, &prior, &prior_prep);
    epochs_to_loss(&mut source, &prior_prep, 0.02);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pretrained.ck");
    source.save(&path).unwrap();

    for seed in 0..3 {
        let ds = dataset(seed);
        let prep = prepared(&ds);
        let mut cfg = ElrcnConfig::desk(Variant::Se);
        cfg.init_seed = seed + 7;
        let mut scratch = ElrcnModel::new(cfg.clone(), ds.taxonomy()).unwrap();
        scratch.fit_gray_mean(&prep);
        let mut tuned = ElrcnModel::new(cfg, ds.taxonomy()).unwrap();
        tuned.fit_gray_mean(&prep);
        tuned.load_encoder_weights(&path).unwrap();
        let from_scratch = epochs_to_loss(&mut scratch, &prep, 0.3);
        let fine_tuned = epochs_to_loss(&mut tuned, &prep, 0.3);
        assert!(fine_tuned < from_scratch, "seed {seed}: fine-tuned {fine_tuned} vs scratch {from_scratch}");
    }
}
