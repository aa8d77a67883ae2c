// Communication plus scanning multibeams from both combining methods and the
// communication power each one keeps.

use mbjcas::array_geometry::magnitude_db;
use mbjcas::beamforming::CombineMethod;
use mbjcas::config_io::RootConfig;
use mbjcas::experiments::{comm_power_ratios, System};

pub fn run_example() -> mbjcas::Result<()> {
    let cfg = RootConfig::default();
    let system = System::new(&cfg)?;
    let comm_u = cfg.comm_direction_u();
    for m in [1, 2] {
        let method = CombineMethod::from_number(m)?;
        let beams = system.multibeams(method)?;
        let ratios = comm_power_ratios(&system, &beams, 5);
        println!("method {m}:");
        for ((w, &u), r) in beams.iter().zip(&system.schedule.directions).zip(&ratios) {
            println!(
                "  scan u = {u:+.2}: gain {:6.2} dB at comm, {:6.2} dB at scan, comm power ratio {r:.3}",
                magnitude_db(w.response_at(&system.array, comm_u).norm()),
                magnitude_db(w.response_at(&system.array, u).norm())
            );
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> mbjcas::Result<()> {
    run_example()
}
