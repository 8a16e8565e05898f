//! Generate a synthetic catalog directory.
//!
//! ```text
//! cargo run --example make_fixture -- <out-dir> [models] [prompts] [dim] [seed]
//! cargo run --release --example make_fixture -- /tmp/gemrec-full 200 90 768 0
//! ```
//!
//! The committed `fixtures/mini` catalog is `make_fixture fixtures/mini 12 6 16 7`.

use std::path::PathBuf;
use std::time::Instant;

use gemrec::catalog::summary_line;
use gemrec::synthetic::{generate, SyntheticConfig};

fn arg<T: std::str::FromStr>(args: &[String], i: usize, default: T) -> T {
    args.get(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> gemrec::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let out = PathBuf::from(args.get(1).map(String::as_str).unwrap_or("fixture"));
    let cfg = SyntheticConfig::new(
        arg(&args, 2, 12),
        arg(&args, 3, 6),
        arg(&args, 4, 16),
        arg(&args, 5, 7),
    );

    let start = Instant::now();
    let catalog = generate(&cfg)?;
    catalog.write_to_dir(&out)?;
    println!("{} -> {} ({:.2?})", summary_line(&catalog), out.display(), start.elapsed());
    Ok(())
}
