// Scanning by displacing one reference beam along the equivalent-direction grid.

use mbjcas::array_geometry::{equivalent_response_matrix, equivalent_to_actual, ArrayConfig, DirectionGrid};
use mbjcas::beamforming::{displace, reference_subbeam, scan_schedule, IlsParams, WeightMatrix};

pub fn run_example() -> mbjcas::Result<()> {
    let array = ArrayConfig::new(16)?;
    let grid = DirectionGrid::full_view(160)?;
    let a = equivalent_response_matrix(&array, &grid);
    let reference = reference_subbeam(&array, &grid, 12, &WeightMatrix::identity(160), IlsParams::default())?;

    // eight directions over [-1, 1) with the middle left for communication
    let schedule = scan_schedule((-1.0, 1.0), &grid, 8, 0.0)?;
    for (&delta, &u) in schedule.deltas.iter().zip(&schedule.directions) {
        let w = displace(&reference, delta, &grid, &array);
        let pattern = a.apply(w.coeffs())?;
        let peak = (0..grid.num_points)
            .max_by(|&i, &j| pattern[i].norm().total_cmp(&pattern[j].norm()))
            .expect("non-empty grid");
        println!(
            "delta {delta:+4}: centre u = {u:+.3} ({:+6.2} deg), pattern peak at u = {:+.3}",
            equivalent_to_actual(u)?.to_degrees(),
            grid.u(peak)
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> mbjcas::Result<()> {
    run_example()
}
