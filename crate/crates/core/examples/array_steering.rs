// Steering vectors, the equivalent-direction grid and uniform-array patterns.

use mbjcas::array_geometry::{
    equivalent_response_matrix, half_power_beamwidth, half_power_width_u, magnitude_db, radiation_pattern,
    steering_vector, ArrayConfig, DirectionGrid,
};
use mbjcas::beamforming::BeamVector;

pub fn run_example() -> mbjcas::Result<()> {
    let array = ArrayConfig::new(16)?;
    let grid = DirectionGrid::for_array(&array);
    let a = equivalent_response_matrix(&array, &grid);

    let theta = 20f64.to_radians();
    let sv = steering_vector(&array, theta)?;
    println!("a(20 deg): first phases {:.3} {:.3} {:.3}", sv[0].arg(), sv[1].arg(), sv[2].arg());

    let w = BeamVector::steered(&array, theta.sin());
    let pattern = radiation_pattern(&w, &a)?;
    let (peak, mag) = pattern
        .iter()
        .enumerate()
        .map(|(q, x)| (q, x.norm()))
        .max_by(|x, y| x.1.total_cmp(&y.1))
        .expect("non-empty grid");
    println!(
        "steered beam peaks at u = {:.4} with {:.2} dB (matched gain sqrt(M) = {:.2} dB)",
        grid.u(peak),
        magnitude_db(mag),
        magnitude_db(4.0)
    );
    for m in [12, 16] {
        println!(
            "{m} elements: half-power beamwidth {:.5} rad, {:.4} in u",
            half_power_beamwidth(m)?,
            half_power_width_u(m)?
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> mbjcas::Result<()> {
    run_example()
}
