// One random twelve-scatterer scene through both sensing pipelines.

use mbjcas::config_io::RootConfig;
use mbjcas::experiments::{sensing_trial, SensingRig};

pub fn run_example() -> mbjcas::Result<()> {
    let cfg = RootConfig::default();
    let rig = SensingRig::new(&cfg)?;
    let carrier = cfg.scenario.carrier_hz;
    let (scenario, run, metrics) = sensing_trial(&rig, 0, true)?;
    println!("truth:");
    for p in &scenario.paths {
        println!("  {:6.2} m {:+6.2} m/s {:+6.2} deg", p.distance(), p.speed(carrier), p.aoa.to_degrees());
    }
    println!("compressive sensing:");
    for e in &run.cs.estimates {
        println!("  {:6.2} m {:+6.2} m/s {:+6.2} deg {:6.1} dB", e.distance, e.speed, e.aoa.to_degrees(), e.power_db);
    }
    println!(
        "detected {}/{}; RMS distance error CS {:.3} m, periodogram {:.3} m ({} peaks)",
        metrics.detected,
        metrics.scatterers,
        metrics.cs_rms_distance(),
        metrics.dft_rms_distance(),
        metrics.dft_estimates
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> mbjcas::Result<()> {
    run_example()
}
