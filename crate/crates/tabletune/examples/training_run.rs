//! A complete self-training run with a scripted oracle model: two
//! iterations of candidate generation, permutation validation with
//! interleaved negatives, JSONL export, and simulated fine-tune
//! registration producing V1 and V2 model handles.
//!
//! ```bash
//! cargo run -p tabletune --example training_run
//! ```

use tabletune::model::script_gen::error_detection_oracle;
use tabletune::model::ModelRef;
use tabletune::pipeline::{Pipeline, PipelineConfig};
use tabletune::rng::SplitMix64;
use tabletune::table::load_corpus;
use tabletune::task::TaskFamily;

/// Write a small deterministic corpus so the example is self-contained.
fn write_corpus(dir: &std::path::Path) -> tabletune::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut rng = SplitMix64::new(2718);
    for t in 0..12 {
        let mut csv = String::from("name,score,tag\n");
        for r in 0..6 {
            csv.push_str(&format!(
                "item{t}_{r}_{},{}.5,tag{t}_{r}\n",
                rng.next_below(900),
                t * 100 + r
            ));
        }
        std::fs::write(dir.join(format!("table{t:02}.csv")), csv)?;
    }
    Ok(())
}

fn main() -> tabletune::Result<()> {
    let work = std::env::temp_dir().join("tabletune-example-training");
    let _ = std::fs::remove_dir_all(&work);
    let corpus_dir = work.join("corpus");
    write_corpus(&corpus_dir)?;

    // The oracle script answers the generative task with a planted error
    // per column and confirms it consistently during validation.
    let corpus = load_corpus(&corpus_dir)?;
    let script_path = work.join("oracle.json");
    error_detection_oracle(&corpus)?.write(&script_path)?;
    let base = ModelRef::scripted("oracle", &script_path);

    let mut cfg = PipelineConfig::new(
        TaskFamily::ErrorDetection,
        &corpus_dir,
        work.join("out"),
        base,
    );
    cfg.iterations = 2;
    cfg.step_size = 12;
    cfg.root_seed = 7;
    cfg.negatives_ratio = 1.0;

    let reports = Pipeline::new(cfg.clone())?.run()?;
    for report in &reports {
        println!(
            "iteration {}: candidates={} validated={} negatives={} train_g={} train_c={}",
            report.iteration,
            report.candidates,
            report.validated,
            report.negatives_validated,
            report.train_g_size,
            report.train_c_size,
        );
        println!(
            "  models after fine-tune: generator={} validator={}",
            report.new_models.m_g.id, report.new_models.m_c.id
        );
    }

    let sample = std::fs::read_to_string(cfg.out_dir.join("iter_1/train_g.jsonl"))?;
    println!("\nfirst exported training line:\n{}", sample.lines().next().unwrap_or(""));
    println!(
        "\nartifacts under {}: report.json, validation.jsonl, iter_*/train_*.jsonl",
        cfg.out_dir.display()
    );
    Ok(())
}
