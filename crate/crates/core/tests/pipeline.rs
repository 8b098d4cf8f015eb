use satpt::augment::{append_specs, mix_batch, read_specs, verify_spec, MixConfig};
use satpt::corpus::{load_manifest, make_batch, synth_corpus, wav, write_manifest, UtteranceDescriptor};
use satpt::dsp::{mfcc, read_features, write_features, MfccConfig};
use satpt::pseudolabel::{
    assign, fit, pool_frames, read_kmeans, read_labels, recluster_from_embeddings, write_kmeans,
    write_labels, KmeansOptions, LabelSource,
};
use satpt::trainer::{init_state, model_input, train, TrainConfig, TrainData, TrainOutputs};

#[test]
fn corpus_survives_wav_and_manifest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let utts = synth_corpus::<f64>(2, 3, 0.1, 16_000, 1).unwrap();
    let mut entries = Vec::new();
    for u in &utts {
        let rel = format!("{}.wav", u.id);
        wav::write(&dir.path().join(&rel), &u.waveform).unwrap();
        entries.push(UtteranceDescriptor {
            id: u.id.clone(),
            audio_path: rel.into(),
            speaker: u.speaker.clone(),
        });
    }
    let manifest = dir.path().join("manifest.jsonl");
    write_manifest(&manifest, &entries).unwrap();
    let back = load_manifest(&manifest).unwrap();
    assert_eq!(back, entries);
    for (d, u) in back.iter().zip(&utts) {
        let loaded = d.load::<f64>(dir.path()).unwrap();
        assert_eq!(loaded.speaker, u.speaker);
        // PCM16 quantization error is at most half a step
        let worst = loaded
            .waveform
            .samples()
            .iter()
            .zip(u.waveform.samples())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 0.5 / 32767.0 + 1e-12, "{worst}");
    }
}

#[test]
fn features_labels_and_centers_round_trip_through_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let utts = synth_corpus::<f64>(2, 2, 0.1, 16_000, 2).unwrap();
    let cfg = MfccConfig::default();
    let feats: Vec<_> = utts.iter().map(|u| mfcc(&u.id, &u.waveform, &cfg).unwrap()).collect();
    for f in &feats {
        write_features(dir.path(), f).unwrap();
        let back = read_features::<f64>(dir.path(), &f.id).unwrap();
        assert_eq!(back.frames.dim(), f.frames.dim());
        let worst = (&back.frames - &f.frames).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = f.frames.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst <= scale * 1e-7);
    }
    let opts = KmeansOptions {
        k: 4,
        seed: 3,
        ..KmeansOptions::default()
    };
    let model = fit(&pool_frames(&feats).unwrap(), &opts).unwrap();
    let labels: Vec<_> = feats.iter().map(|f| assign(&model, f, LabelSource::Mfcc).unwrap()).collect();
    let lp = dir.path().join("labels.jsonl");
    write_labels(&lp, &labels).unwrap();
    assert_eq!(read_labels(&lp).unwrap(), labels);
    let mp = dir.path().join("kmeans.bin");
    write_kmeans(&mp, &model).unwrap();
    let m2 = read_kmeans::<f64>(&mp).unwrap();
    assert_eq!(m2.k(), 4);
    assert_eq!(m2.seed, opts.seed);
    // f32 centers still give the same assignments on these frames
    let again: Vec<_> = feats.iter().map(|f| assign(&m2, f, LabelSource::Mfcc).unwrap()).collect();
    assert_eq!(again, labels);
}

#[test]
fn mixing_specs_replay_from_the_dump() {
    let dir = tempfile::tempdir().unwrap();
    let utts = synth_corpus::<f64>(2, 3, 0.1, 16_000, 4).unwrap();
    let path = dir.path().join("specs.jsonl");
    let cfg = MixConfig {
        probability: 0.5,
        ..MixConfig::default()
    };
    let mut all = Vec::new();
    for i in 0..5 {
        let batch = make_batch(&utts, 4, 1200, i).unwrap();
        let mixed = mix_batch(&batch, &cfg, 100 + i).unwrap();
        assert!(verify_spec(&mixed).is_ok());
        append_specs(&path, i as usize, &mixed.specs).unwrap();
        all.push((i as usize, mixed.specs));
    }
    assert_eq!(read_specs(&path).unwrap(), all);
}

#[test]
fn second_iteration_labels_from_a_trained_encoder() {
    let utts = synth_corpus::<f64>(3, 3, 0.2, 16_000, 5).unwrap();
    let mut cfg = TrainConfig {
        steps: 5,
        batch_size: 4,
        utterance_length: 3200,
        ..TrainConfig::default()
    };
    cfg.encoder.model_dim = 16;
    cfg.encoder.num_layers = 2;
    cfg.encoder.num_heads = 2;
    cfg.encoder.tap_layer = 1;
    cfg.encoder.num_classes = 6;
    cfg.losses.num_negatives = 8;
    let feats: Vec<_> = utts.iter().map(|u| mfcc(&u.id, &u.waveform, &cfg.mfcc).unwrap()).collect();
    let km = fit(&pool_frames(&feats).unwrap(), &KmeansOptions { k: 6, ..KmeansOptions::default() }).unwrap();
    let labels: Vec<_> = feats.iter().map(|f| assign(&km, f, LabelSource::Mfcc).unwrap()).collect();
    let data = TrainData::new(utts.clone(), labels).unwrap();
    let mut st = init_state(&cfg, &data).unwrap();
    train(&mut st, &cfg, &data, &TrainOutputs::default()).unwrap();

    let inputs: Vec<_> = utts.iter().map(|u| model_input(&u.id, &u.waveform, &cfg, &st.norm).unwrap()).collect();
    let named: Vec<_> = utts.iter().zip(&inputs).map(|(u, x)| (u.id.as_str(), x.as_input())).collect();
    let (model, next) = recluster_from_embeddings(&st.model.encoder, &named, 1, &KmeansOptions { k: 6, ..KmeansOptions::default() }).unwrap();
    assert_eq!(model.dim(), 16);
    assert_eq!(next.len(), utts.len());
    for (l, f) in next.iter().zip(&feats) {
        assert_eq!(l.source, LabelSource::Embedding { layer: 1 });
        assert_eq!(l.len(), f.len());
    }
    // the new labels can drive another pass
    let data2 = TrainData::new(utts, next).unwrap();
    let mut st2 = init_state(&cfg, &data2).unwrap();
    train(&mut st2, &cfg, &data2, &TrainOutputs::default()).unwrap();
    assert_eq!(st2.metrics.len(), 5);
}
