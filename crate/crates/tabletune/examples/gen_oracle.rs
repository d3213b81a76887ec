//! Generate an oracle scripted-model file for a CSV corpus, ready to pass
//! to the CLI as `--model scripted:<path>`. The oracle invents a planted
//! error per column and confirms it consistently under permutation, so a
//! pipeline run against it validates every candidate.
//!
//! ```bash
//! cargo run -p tabletune --example gen_oracle -- <corpus-dir> <out.json> [task]
//! ```
//!
//! `task` is `error-detection` (default), `schema-matching`, or
//! `nl-to-code` (which also scripts the second-language answers and
//! brainstormed questions).

use tabletune::error::Error;
use tabletune::exec::{LANG_DSL, LANG_SQL};
use tabletune::model::script_gen;
use tabletune::table::load_corpus;

fn main() -> tabletune::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let (corpus_dir, out_path) = match (args.get(1), args.get(2)) {
        (Some(c), Some(o)) => (c.clone(), o.clone()),
        _ => {
            eprintln!("usage: gen_oracle <corpus-dir> <out.json> [task]");
            std::process::exit(64);
        }
    };
    let task = args.get(3).map(String::as_str).unwrap_or("error-detection");

    let corpus = load_corpus(std::path::Path::new(&corpus_dir))?;
    let script = match task {
        "error-detection" => script_gen::error_detection_oracle(&corpus)?,
        "schema-matching" => script_gen::schema_matching_oracle(&corpus)?,
        "nl-to-code" => script_gen::nl2code_oracle(&corpus, LANG_SQL, LANG_DSL)?,
        other => {
            return Err(Error::Config(format!(
                "unknown task '{other}' (expected error-detection, schema-matching, nl-to-code)"
            )))
        }
    };
    script.write(std::path::Path::new(&out_path))?;
    println!(
        "oracle script for {} ({} tables, {} entries) written to {out_path}",
        task,
        corpus.len(),
        script.entries.len()
    );
    Ok(())
}
