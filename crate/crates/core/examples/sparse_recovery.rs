// MMV-OMP on an interpolated delay dictionary and Doppler from the lag-1
// correlation of the recovered rows.

use mbjcas::sensing::{build_dictionary, estimate_doppler, lambda_stats, mmv_omp, Combination, MmvProblem, OmpParams};
use mbjcas::C64;
use nalgebra::DMatrix;
use std::f64::consts::PI;

pub fn run_example() -> mbjcas::Result<()> {
    let (n, nd, n_r, ts) = (128, 12, 5, 1.6e-6);
    let dict = build_dictionary(n, 2)?;
    // two targets: (bin, amplitude, Doppler in Hz)
    let truth = [(20usize, 1.0, 1500.0), (37usize, 0.4, -2400.0)];
    let r = DMatrix::from_fn(n, nd, |k, d| {
        truth
            .iter()
            .map(|&(q, amp, f)| dict.entry(k, q) * C64::from_polar(amp, 2.0 * PI * f * (d * n_r) as f64 * ts))
            .sum::<C64>()
    });
    let problem = MmvProblem {
        r,
        combination: Combination::SensingSlots(0),
        slices: vec![(0, 0)],
        n_d: nd,
    };
    let sol = mmv_omp(&problem, &dict, &OmpParams::default())?;
    println!("support {:?}, residual trace {:?}", sol.support, sol.residual_history);
    for &(q, _, f) in &truth {
        let row = sol.row(q).expect("on-grid target is recovered");
        let st = lambda_stats(&row)?;
        println!(
            "bin {q} ({:.2} m): Doppler {:.1} Hz (true {f}), |lambda| {:.3}",
            dict.distance(q, 100e6),
            estimate_doppler(st.mean, n_r, ts)?,
            st.mean.norm()
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> mbjcas::Result<()> {
    run_example()
}
