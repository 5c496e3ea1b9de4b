//! Rebuilds `data/langid/profiles.v1.tsv` from the seed sentences.
//!
//! cargo run --example build_profiles -- [seed-dir] [out-file]

use std::path::PathBuf;

use xlrag::evaluation::langid::{Profiles, DEFAULT_THRESHOLD, DEFAULT_TOP};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/langid");
    let mut args = std::env::args().skip(1);
    let seeds = args.next().map(PathBuf::from).unwrap_or_else(|| root.join("seed"));
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| root.join("profiles.v1.tsv"));
    let profiles = Profiles::build_from_seed_dir(&seeds, DEFAULT_TOP, DEFAULT_THRESHOLD)?;
    std::fs::write(&out, profiles.to_tsv())?;
    eprintln!("wrote {} ({} languages)", out.display(), profiles.languages().count());
    Ok(())
}
