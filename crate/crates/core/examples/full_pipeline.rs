//! Every pipeline stage on the bundled fixture with the stub backend.
//! Artifacts go to `target/example-run` unless a directory is given.

use std::path::PathBuf;

use memprobe::pipeline::{Pipeline, RunManifest, Stage};

fn main() -> memprobe::Result<()> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| root.join("../../target/example-run"));
    let overrides = vec![("output_dir".to_owned(), out.display().to_string())];
    let manifest = RunManifest::load_with(&root.join("fixtures/tiny/run.manifest"), &overrides)?;
    let pipeline = Pipeline::new(manifest);
    for line in pipeline.validate()? {
        println!("{line}");
    }
    for stage in Stage::ALL {
        println!("{:<14} {:?}", stage.name(), pipeline.run(stage)?);
    }
    println!();
    print!("{}", std::fs::read_to_string(pipeline.layout().table3())?);
    Ok(())
}
