use votelstm::config::RunConfig;
use votelstm::data_io::generate_synthetic;
use votelstm::pipeline::{PipelineModel, Scenario};

fn tiny_model() -> (PipelineModel, votelstm::data_io::AnnotatedCorpus) {
    let mut cfg = RunConfig::default();
    cfg.workers = 1;
    cfg.train.ensemble_size = 3;
    cfg.train.max_epochs = 3;
    cfg.train.hidden1 = 4;
    cfg.train.hidden2 = 3;
    cfg.embedding.dim = 8;
    cfg.relations.top_k = 4;
    let (train, dev, test) = generate_synthetic(&cfg.grammar().unwrap(), 5, 60, 20, 20).unwrap();
    let mut m = PipelineModel::for_training(&cfg, &train).unwrap();
    m.train_kphrases(&train, &dev).unwrap();
    m.train_relations(&train, &dev).unwrap();
    m.tune(&dev, None).unwrap();
    (m, test)
}

#[test]
fn saved_model_loads_identically() {
    let (m, test) = tiny_model();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.kprl");
    m.save(&path).unwrap();
    let back = PipelineModel::load(&path).unwrap();
    assert_eq!(back.schema, m.schema);
    assert_eq!(back.config, m.config);
    assert_eq!(back.encoder, m.encoder);
    assert_eq!(back.lexicon, m.lexicon);
    assert_eq!(back.tuning, m.tuning);
    assert_eq!(back.kphrases, m.kphrases);
    assert_eq!(back.relations, m.relations);
    assert_eq!(back, m);
    for s in [Scenario::Pipeline, Scenario::KeyPhrases, Scenario::Relations] {
        assert_eq!(back.predict(&test, s).unwrap(), m.predict(&test, s).unwrap());
    }
    let again = dir.path().join("again.kprl");
    back.save(&again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}
