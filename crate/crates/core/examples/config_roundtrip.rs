// Loading, validating, hashing and saving configurations.

use mbjcas::config_io::{config_hash, load_config, parse_config, save_config};

pub fn run_example() -> mbjcas::Result<()> {
    let cfg = parse_config(r#"{ "combine": { "rho": 0.6, "method": 2 }, "experiment": { "seed": 11 } }"#)?;
    println!("rho {} method {} seed {}", cfg.combine.rho, cfg.combine.method, cfg.experiment.seed);
    println!("hash {}", config_hash(&cfg)?);

    match parse_config(r#"{ "combine": { "rho": 1.5 } }"#) {
        Err(e) => println!("rejected (exit code {}): {e}", e.exit_code()),
        Ok(_) => println!("unexpectedly accepted"),
    }

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("config.json");
    save_config(&cfg, &path)?;
    let back = load_config(&path)?;
    println!("saved and reloaded identical: {}", back == cfg);
    Ok(())
}

#[allow(dead_code)]
fn main() -> mbjcas::Result<()> {
    run_example()
}
