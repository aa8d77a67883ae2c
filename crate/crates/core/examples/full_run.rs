// All experiments into one output tree, as the command line does.

use mbjcas::config_io::RootConfig;
use mbjcas::experiments::run_all;

pub fn run_example() -> mbjcas::Result<()> {
    let mut cfg = RootConfig::default();
    cfg.experiment.monte_carlo_runs = 3;
    let dir = tempfile::tempdir()?;
    for report in run_all(&cfg, dir.path())? {
        println!("{}: {} files, hash {}", report.experiment, report.files.len(), &report.config_hash[..12]);
        for (k, v) in &report.metrics {
            println!("  {k} = {v:.4}");
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> mbjcas::Result<()> {
    run_example()
}
