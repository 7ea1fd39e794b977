//! Sweeps the deformation level with untrained weights and prints the
//! benchmark table.

use deftrans::cli::{cmd_bench, RunConfig, SweepConfig};

fn main() -> deftrans::Result<()> {
    let out = std::env::temp_dir().join("deftrans-bench-example");
    let cfg = RunConfig {
        sweep: SweepConfig {
            values: vec![0.1, 0.3, 0.5],
            seeds_per_value: 2,
            points: 256,
            ..SweepConfig::default()
        },
        ..RunConfig::default()
    };
    let report = cmd_bench(&cfg, None, None, &out)?;
    print!("{}", report.to_csv());
    Ok(())
}
