//! Times encoder forward passes as the stream doubles and prints the
//! benchmark CSV with the worst doubling ratio.
//!
//! `cargo run --release --example bench_scaling`

use todyformer::bench::{max_doubling_ratio, run, write_csv, BenchConfig};

fn main() -> todyformer::Result<()> {
    let cfg = BenchConfig {
        scales: vec![1 << 10, 1 << 11, 1 << 12, 1 << 13],
        reps: 3,
        ..BenchConfig::default()
    };
    let rows = run(&cfg)?;
    write_csv(std::io::stdout(), &rows)?;
    println!("max doubling ratio {:.2}", max_doubling_ratio(&rows));
    Ok(())
}
