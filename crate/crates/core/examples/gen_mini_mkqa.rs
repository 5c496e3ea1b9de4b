//! Regenerates the mini-MKQA fixture.
//!
//! Usage: `cargo run --example gen_mini_mkqa [out_dir]` (default
//! `data/mini-mkqa` at the workspace root).

use std::path::PathBuf;

use xlrag::experiments::mini_mkqa;

fn main() -> std::io::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mini-mkqa"));
    let set = mini_mkqa::generate();
    if let Err(e) = mini_mkqa::verify(&set) {
        eprintln!("generated fixture is inconsistent: {e}");
        std::process::exit(1);
    }
    set.write(&out)?;
    println!("wrote {} documents, {} queries, {} dictionary entries to {}", set.documents.len(), set.queries.len(), set.dictionary.len(), out.display());
    Ok(())
}
