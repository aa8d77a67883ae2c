// Multibeam versus time-division spectral efficiency.

use mbjcas::protocol::capacity_ratio;

pub fn run_example() -> mbjcas::Result<()> {
    println!("   a   snr_dB   C_MB   C_TD  ratio");
    for a in [0.25, 0.5, 0.75, 1.0] {
        for db in [0.0, 5.0, 10.0, 20.0] {
            let p = capacity_ratio(a, 10f64.powf(db / 10.0))?;
            println!("{a:5.2} {db:7.1} {:6.3} {:6.3} {:6.3}", p.c_mb, p.c_td, p.ratio);
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> mbjcas::Result<()> {
    run_example()
}
