use voxscreen::dsp::FeatureKind;
use voxscreen::metadata::{read_manifest_file, EncodingSchema};
use voxscreen::models::{ModelArtifact, ModelInput, ModelKind};
use voxscreen::pipeline::{self, dsp_config_for, FeatureStore, RunConfig, TrainingData};
use voxscreen::synth::{generate, write_corpus, SynthSpec};
use voxscreen::Error;

fn small_corpus(dir: &std::path::Path) -> Vec<voxscreen::ParticipantRecord> {
    let recs = generate(&SynthSpec {
        n_recordings: 24,
        duration_secs: 0.5,
        seed: 9,
        ..SynthSpec::default()
    });
    write_corpus(dir, &recs).unwrap();
    read_manifest_file(&dir.join("manifest.csv")).unwrap()
}

#[test]
fn corpus_round_trips_through_disk_and_feature_store() {
    let dir = tempfile::tempdir().unwrap();
    let records = small_corpus(dir.path());
    assert_eq!(records.len(), 24);
    let store = FeatureStore::new(dir.path().join("features"));
    let cfg = dsp_config_for(FeatureKind::Mfcc);
    let r = &records[3];
    let m = pipeline::extract_file(&dir.path().join(&r.audio_path), &r.sample_id, FeatureKind::Mfcc, &cfg).unwrap();
    assert_eq!((m.n_rows(), m.n_cols()), (48, 13));
    store.write(&r.sample_id, &m).unwrap();
    assert_eq!(store.read(FeatureKind::Mfcc, &r.sample_id).unwrap(), m);
    assert!(matches!(
        store.read(FeatureKind::LogMel, &r.sample_id),
        Err(Error::MissingFeatures(_))
    ));
}

#[test]
fn metadata_models_train_save_and_predict() {
    let dir = tempfile::tempdir().unwrap();
    let records = small_corpus(dir.path());
    let schema = EncodingSchema::fit(&records).unwrap();
    let rows: Vec<Vec<f64>> = records.iter().map(|r| schema.encode(r).unwrap().features).collect();
    let labels: Vec<u8> = records.iter().map(|r| r.label).collect();
    for kind in [ModelKind::LogReg, ModelKind::Svm] {
        let run = RunConfig::new(kind, 1);
        let (art, log) = pipeline::train(
            &run,
            TrainingData::Encoded {
                rows: &rows,
                labels: &labels,
                schema: &schema,
            },
        )
        .unwrap();
        assert!(log.is_empty());
        let path = dir.path().join(format!("{kind}.vxm"));
        art.save(&path).unwrap();
        let back = ModelArtifact::load(&path).unwrap();
        assert_eq!(back, art);
        assert_eq!(back.encoding.as_ref(), Some(&schema));
        let inputs: Vec<ModelInput> = rows.iter().map(|r| ModelInput::Encoded(r)).collect();
        let report = pipeline::evaluate(&back, "train", &inputs, &labels).unwrap();
        assert_eq!(report.n_samples, 24);
        assert!(report.auc().is_some());
    }
}

#[test]
fn audio_model_rejects_wrong_input() {
    let dir = tempfile::tempdir().unwrap();
    let records = small_corpus(dir.path());
    let schema = EncodingSchema::fit(&records).unwrap();
    let rows: Vec<Vec<f64>> = records.iter().map(|r| schema.encode(r).unwrap().features).collect();
    let labels: Vec<u8> = records.iter().map(|r| r.label).collect();
    let run = RunConfig::new(ModelKind::Lstm, 1);
    let err = pipeline::train(
        &run,
        TrainingData::Encoded {
            rows: &rows,
            labels: &labels,
            schema: &schema,
        },
    )
    .unwrap_err();
    assert!(err.to_string().contains("expects mfcc"), "{err}");
}
