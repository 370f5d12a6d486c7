//! Trains and scores the full pipeline on a generated corpus.
//!
//! ```text
//! cargo run --release --example synthetic_run -- [config.toml]
//! ```

use std::time::Instant;

use votelstm::config::RunConfig;
use votelstm::data_io::generate_synthetic;
use votelstm::eval::{score_task_a, score_task_b, score_pipeline};
use votelstm::pipeline::{PipelineModel, Scenario};

fn main() -> votelstm::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cfg = match std::env::args().nth(1) {
        Some(p) => RunConfig::load(p.as_ref())?,
        None => RunConfig::default(),
    };
    let s = &cfg.synth;
    let (train, dev, test) = generate_synthetic(&cfg.grammar()?, cfg.seed, s.n_train, s.n_dev, s.n_test)?;
    let mut model = PipelineModel::for_training(&cfg, &train)?;

    let t = Instant::now();
    model.train_kphrases(&train, &dev)?;
    println!("task A trained in {:.1}s", t.elapsed().as_secs_f64());
    let t = Instant::now();
    model.train_relations(&train, &dev)?;
    println!("task B trained in {:.1}s", t.elapsed().as_secs_f64());
    let t = Instant::now();
    let tuning = model.tune(&dev, None)?;
    println!("tuned in {:.1}s: {tuning:?}", t.elapsed().as_secs_f64());

    for (name, corpus) in [("dev", &dev), ("test", &test)] {
        let a = score_task_a(corpus, &model.predict(corpus, Scenario::KeyPhrases)?);
        let b = score_task_b(corpus, &model.predict(corpus, Scenario::Relations)?);
        let p = score_pipeline(corpus, &model.predict(corpus, Scenario::Pipeline)?);
        println!("{name} task_a {a}");
        println!("{name} task_b {b}");
        println!("{name} pipeline {p}");
    }
    if let Some(kp) = &model.kphrases {
        for c in kp.classes.iter().flatten() {
            let f1s: Vec<String> = c.ensemble.members.iter().map(|m| format!("{:.3}/{}", m.dev_f1, m.best_epoch)).collect();
            println!("class {} kept {} weight {}: {}", c.class_id, c.ensemble.kept_count(), c.weight, f1s.join(" "));
        }
    }
    if let Some(rm) = &model.relations {
        for e in &rm.ensembles {
            let f1s: Vec<String> = e.ensemble.members.iter().map(|m| format!("{:.3}/{}", m.dev_f1, m.best_epoch)).collect();
            println!(
                "relation {} p {:.3} f1 {:.3} active {}: {}",
                model.schema.relation_name(e.relation),
                e.dev_precision,
                e.dev_f1,
                e.active,
                f1s.join(" ")
            );
        }
    }
    Ok(())
}
