// Frequency-domain channel model checked against an explicit OFDM chain.

use mbjcas::array_geometry::ArrayConfig;
use mbjcas::beamforming::BeamVector;
use mbjcas::channel::{
    freq_channel_estimate, ofdm_demodulate, ofdm_modulate, qpsk, time_domain_receive, Multipath, OfdmParams,
    Scenario, SymbolTime,
};
use mbjcas::C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> mbjcas::Result<()> {
    let array = ArrayConfig::new(16)?;
    let ofdm = OfdmParams::default();
    let path = |samples: f64, amp: f64, u: f64| Multipath {
        amplitude: C64::new(amp, 0.0),
        delay: samples / ofdm.bandwidth_hz,
        doppler: 0.0,
        aod: f64::asin(u),
        aoa: f64::asin(u),
    };
    let scenario = Scenario {
        paths: vec![path(6.0, 1e-3, 0.1), path(20.0, 4e-4, -0.3)],
        tx_power_dbm: 20.0,
        noise_power_dbm: -84.0,
        pathloss_exponent: 4.0,
        carrier_hz: 24e9,
        rng_seed: 1,
    };
    let w = BeamVector::steered(&array, 0.0);
    let h = freq_channel_estimate(&scenario, &ofdm, &array, SymbolTime { packet: 0, symbol: 1 }, 0.0, &w, &w, None);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let symbols: Vec<C64> = (0..ofdm.subcarriers).map(|_| qpsk(&mut rng)).collect();
    let tx = ofdm_modulate(&symbols, ofdm.cp_samples())?;
    let rx = time_domain_receive(&scenario, &ofdm, &array, &tx, 0.0, &w, &w, None)?;
    let y = ofdm_demodulate(&rx.samples, ofdm.subcarriers, ofdm.cp_samples())?;
    let err = h
        .iter()
        .zip(y.iter().zip(&symbols))
        .map(|(h, (y, s))| (h - y / s).norm_sqr())
        .sum::<f64>()
        .sqrt()
        / h.norm();
    println!(
        "{} subcarriers, symbol {:.2} us, CP {} samples; frequency vs time domain relative error {err:.2e}",
        ofdm.subcarriers,
        ofdm.symbol_period() * 1e6,
        ofdm.cp_samples()
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> mbjcas::Result<()> {
    run_example()
}
