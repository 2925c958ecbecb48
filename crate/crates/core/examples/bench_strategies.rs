//! Times the three gather strategies on the surround instance.
//!
//!     cargo run --release --example bench_strategies -- [iters] [workers]

use bevkernel::bench::{run_bench_synthetic, BenchConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let measured_iters = args.next().map(|s| s.parse()).transpose()?.unwrap_or(50);
    let workers = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1);
    let config = BenchConfig {
        measured_iters,
        workers,
        warmup_iters: 5,
        ..BenchConfig::default()
    };
    let report = run_bench_synthetic(&config)?;
    if !report.is_valid() {
        return Err(format!("strategies disagree: {:?}", report.first_difference).into());
    }
    println!("{} ({})", report.scope, report.environment);
    println!(
        "{:>7} {:>12} {:>12} {:>12}",
        "", "median ms", "min ms", "per second"
    );
    for r in &report.rows {
        println!(
            "{:>7} {:>12.3} {:>12.3} {:>12.1}",
            r.strategy,
            r.median_s * 1e3,
            r.min_s * 1e3,
            r.throughput_per_s
        );
    }
    Ok(())
}
