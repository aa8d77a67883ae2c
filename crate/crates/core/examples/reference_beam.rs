// Reference subbeam synthesis with two-step iterative least squares, with
// and without an exponential sidelobe weighting.

use mbjcas::array_geometry::{equivalent_response_matrix, radiation_pattern, ArrayConfig, DirectionGrid};
use mbjcas::beamforming::{
    ils_design, integrated_sidelobe_db, mainlobe_target, peak_sidelobe_db, uniform_pattern, IlsParams, PhaseVector,
    WeightMatrix,
};

pub fn run_example() -> mbjcas::Result<()> {
    let array = ArrayConfig::new(16)?;
    let grid = DirectionGrid::full_view(160)?;
    let a = equivalent_response_matrix(&array, &grid);
    let target = mainlobe_target(&array, &grid, 12)?;

    let conventional = uniform_pattern(&array, &grid, 12);
    println!(
        "12-element uniform: peak sidelobe {:.2} dB, integrated {:.2} dB",
        peak_sidelobe_db(&conventional),
        integrated_sidelobe_db(&conventional)
    );
    for (name, d) in [
        ("identity weights", WeightMatrix::identity(160)),
        ("exponential taper", WeightMatrix::exp_taper(160, 80, 15.0)?),
    ] {
        let out = ils_design(&a, &target, &d, &PhaseVector::ones(160), IlsParams::default())?;
        let mags: Vec<f64> = radiation_pattern(&out.w, &a)?.iter().map(|x| x.norm()).collect();
        println!(
            "ILS with {name}: {} iterations, final residual {:.4}, peak sidelobe {:.2} dB, integrated {:.2} dB",
            out.residual_history.len(),
            out.residual_history.last().copied().unwrap_or(f64::NAN),
            peak_sidelobe_db(&mags),
            integrated_sidelobe_db(&mags)
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> mbjcas::Result<()> {
    run_example()
}
