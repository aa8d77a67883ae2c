//! Multipath scenarios and OFDM channel measurements.
//!
//! Two routes produce the per-subcarrier channel estimate `h[n]`:
//! [`freq_channel_estimate`] evaluates the closed-form frequency-domain model
//! directly, while [`ofdm_modulate`] → [`time_domain_receive`] →
//! [`ofdm_demodulate`] runs the sampled time-domain chain. The two agree for
//! sample-aligned delays within the cyclic prefix and zero Doppler.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::array_geometry::ArrayConfig;
use crate::beamforming::BeamVector;
use crate::error::{Error, Result};
use crate::C64;

/// Propagation speed used throughout (m/s).
pub const SPEED_OF_LIGHT: f64 = 3e8;

/// One propagation path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Multipath {
    /// Complex amplitude (linear, relative to transmit amplitude).
    pub amplitude: C64,
    /// Delay in seconds.
    pub delay: f64,
    /// Doppler frequency in Hz.
    pub doppler: f64,
    /// Angle of departure, radians.
    pub aod: f64,
    /// Angle of arrival, radians.
    pub aoa: f64,
}

impl Multipath {
    /// Monostatic distance `c * tau / 2`.
    pub fn distance(&self) -> f64 {
        SPEED_OF_LIGHT * self.delay / 2.0
    }

    pub fn speed(&self, carrier_hz: f64) -> f64 {
        speed_from_doppler(self.doppler, carrier_hz)
    }
}

/// A set of paths plus the link budget they are observed under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub paths: Vec<Multipath>,
    pub tx_power_dbm: f64,
    pub noise_power_dbm: f64,
    pub pathloss_exponent: f64,
    pub carrier_hz: f64,
    pub rng_seed: u64,
}

impl Scenario {
    pub fn validate(&self, ofdm: &OfdmParams) -> Result<()> {
        if self.paths.is_empty() {
            return Err(Error::invalid("scenario.paths", "need at least one path"));
        }
        if !(self.pathloss_exponent > 0.0) {
            return Err(Error::invalid(
                "scenario.pathloss_exponent",
                format!("must be positive, got {}", self.pathloss_exponent),
            ));
        }
        if !(self.carrier_hz > 0.0) {
            return Err(Error::invalid("scenario.carrier_hz", "must be positive"));
        }
        let f0 = ofdm.subcarrier_spacing();
        for (i, p) in self.paths.iter().enumerate() {
            if !(p.delay >= 0.0 && p.delay < 1.0 / f0) {
                return Err(Error::invalid(
                    format!("scenario.paths[{i}].delay"),
                    format!("{} s outside the unambiguous range [0, {})", p.delay, 1.0 / f0),
                ));
            }
            if !(p.doppler.abs() < f0) {
                return Err(Error::invalid(
                    format!("scenario.paths[{i}].doppler"),
                    format!("|{}| Hz not below the subcarrier spacing", p.doppler),
                ));
            }
            for (name, ang) in [("aod", p.aod), ("aoa", p.aoa)] {
                if !(ang.abs() <= PI / 2.0) {
                    return Err(Error::invalid(
                        format!("scenario.paths[{i}].{name}"),
                        "outside [-90, 90] degrees",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn tx_power_mw(&self) -> f64 {
        dbm_to_mw(self.tx_power_dbm)
    }

    pub fn noise_power_mw(&self) -> f64 {
        dbm_to_mw(self.noise_power_dbm)
    }

    /// Largest path delay in the scenario.
    pub fn max_delay(&self) -> f64 {
        self.paths.iter().map(|p| p.delay).fold(0.0, f64::max)
    }
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

/// OFDM numerology.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OfdmParams {
    pub subcarriers: usize,
    pub bandwidth_hz: f64,
    /// Cyclic prefix duration in seconds.
    pub cp_duration: f64,
}

impl Default for OfdmParams {
    /// 128 subcarriers over 100 MHz with a quarter-symbol cyclic prefix.
    fn default() -> Self {
        Self {
            subcarriers: 128,
            bandwidth_hz: 100e6,
            cp_duration: 128.0 / (4.0 * 100e6),
        }
    }
}

impl OfdmParams {
    pub fn validate(&self) -> Result<()> {
        if self.subcarriers < 2 || !self.subcarriers.is_power_of_two() {
            return Err(Error::invalid(
                "ofdm.subcarriers",
                format!("must be a power of two >= 2, got {}", self.subcarriers),
            ));
        }
        if !(self.bandwidth_hz > 0.0) {
            return Err(Error::invalid("ofdm.bandwidth_hz", "must be positive"));
        }
        if !(self.cp_duration >= 0.0) {
            return Err(Error::invalid("ofdm.cp_duration", "must be nonnegative"));
        }
        Ok(())
    }

    /// `f_0 = B / N`
    pub fn subcarrier_spacing(&self) -> f64 {
        self.bandwidth_hz / self.subcarriers as f64
    }

    /// `T_s = N / B + T_p`
    pub fn symbol_period(&self) -> f64 {
        self.subcarriers as f64 / self.bandwidth_hz + self.cp_duration
    }

    pub fn cp_samples(&self) -> usize {
        (self.cp_duration * self.bandwidth_hz).round() as usize
    }

    pub fn sample_period(&self) -> f64 {
        1.0 / self.bandwidth_hz
    }
}

/// `f_D = v f_c / c`, with `c = 3e8`.
pub fn doppler_from_speed(speed_mps: f64, carrier_hz: f64) -> f64 {
    1e-8 * speed_mps * carrier_hz / 3.0
}

pub fn speed_from_doppler(doppler_hz: f64, carrier_hz: f64) -> f64 {
    doppler_hz * SPEED_OF_LIGHT / carrier_hz
}

/// Power gain `d^-exponent`, normalized to 1 at 1 m.
pub fn pathloss(distance_m: f64, exponent: f64) -> Result<f64> {
    if !(distance_m > 0.0) {
        return Err(Error::Domain(format!(
            "pathloss needs a positive distance, got {distance_m}"
        )));
    }
    Ok(distance_m.powf(-exponent))
}

/// Free-space power gain at 1 m, `(lambda / 4 pi)^2`.
pub fn reference_gain_1m(carrier_hz: f64) -> f64 {
    let lambda = SPEED_OF_LIGHT / carrier_hz;
    (lambda / (4.0 * PI)).powi(2)
}

/// Ranges for random point scatterers seen by monostatic active sensing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScattererRanges {
    pub count: usize,
    pub min_distance: f64,
    pub max_distance: f64,
    /// Angle range in radians.
    pub min_angle: f64,
    pub max_angle: f64,
    pub min_speed: f64,
    pub max_speed: f64,
    pub pathloss_exponent: f64,
}

impl ScattererRanges {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::invalid("scenario.generator.count", "need at least one scatterer"));
        }
        if !(self.min_distance > 0.0 && self.min_distance <= self.max_distance) {
            return Err(Error::invalid(
                "scenario.generator.distance",
                format!("need 0 < min <= max, got [{}, {}]", self.min_distance, self.max_distance),
            ));
        }
        if !(self.min_angle <= self.max_angle && self.min_angle.abs() <= PI / 2.0 && self.max_angle.abs() <= PI / 2.0) {
            return Err(Error::invalid("scenario.generator.angle", "need an ordered range within [-90, 90] degrees"));
        }
        if !(self.min_speed <= self.max_speed) {
            return Err(Error::invalid("scenario.generator.speed", "min above max"));
        }
        if !(self.pathloss_exponent > 0.0) {
            return Err(Error::invalid("scenario.generator.pathloss_exponent", "must be positive"));
        }
        Ok(())
    }
}

fn uniform(rng: &mut (impl Rng + ?Sized), lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Random point scatterers. Distances, angles and speeds are drawn
/// continuously; the amplitude follows the free-space reference at 1 m and
/// the exponent-law decay, with a uniform random phase.
pub fn generate_scatterers(rng: &mut impl Rng, ranges: &ScattererRanges, carrier_hz: f64) -> Result<Vec<Multipath>> {
    ranges.validate()?;
    let g0 = reference_gain_1m(carrier_hz);
    (0..ranges.count)
        .map(|_| {
            let distance = uniform(rng, ranges.min_distance, ranges.max_distance);
            let angle = uniform(rng, ranges.min_angle, ranges.max_angle);
            let speed = uniform(rng, ranges.min_speed, ranges.max_speed);
            let phase = uniform(rng, 0.0, 2.0 * PI);
            let power = g0 * pathloss(distance, ranges.pathloss_exponent)?;
            Ok(Multipath {
                amplitude: C64::from_polar(power.sqrt(), phase),
                delay: 2.0 * distance / SPEED_OF_LIGHT,
                doppler: doppler_from_speed(speed, carrier_hz),
                aod: angle,
                aoa: angle,
            })
        })
        .collect()
}

/// Parameters of the communication multipath channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommChannelSpec {
    /// Dominating line-of-sight direction (radians) at both ends.
    pub los_angle: f64,
    pub nlos_paths: usize,
    /// Total angular spread of all paths, radians.
    pub angular_spread: f64,
    /// Ratio of LOS power to the mean total NLOS power, dB.
    pub los_to_nlos_db: f64,
    /// NLOS excess delays are uniform in `[0, max_excess_delay)`.
    pub max_excess_delay: f64,
}

impl Default for CommChannelSpec {
    fn default() -> Self {
        Self {
            los_angle: 0.0,
            nlos_paths: 6,
            angular_spread: 33f64.to_radians(),
            los_to_nlos_db: 10.0,
            max_excess_delay: 0.2e-6,
        }
    }
}

/// Communication paths: a unit LOS path plus complex-Gaussian NLOS paths whose
/// mean total power sits `los_to_nlos_db` below it.
pub fn generate_comm_paths(rng: &mut impl Rng, spec: &CommChannelSpec) -> Vec<Multipath> {
    let mut paths = vec![Multipath {
        amplitude: C64::new(1.0, 0.0),
        delay: 0.0,
        doppler: 0.0,
        aod: spec.los_angle,
        aoa: spec.los_angle,
    }];
    if spec.nlos_paths == 0 {
        return paths;
    }
    let per_path = 10f64.powf(-spec.los_to_nlos_db / 10.0) / spec.nlos_paths as f64;
    let half = spec.angular_spread / 2.0;
    for _ in 0..spec.nlos_paths {
        paths.push(Multipath {
            amplitude: complex_gaussian(rng, per_path),
            delay: uniform(rng, 0.0, spec.max_excess_delay),
            doppler: 0.0,
            aod: spec.los_angle + uniform(rng, -half, half),
            aoa: spec.los_angle + uniform(rng, -half, half),
        });
    }
    paths
}

/// Circular complex Gaussian sample with variance `power`.
pub fn complex_gaussian(rng: &mut (impl Rng + ?Sized), power: f64) -> C64 {
    let s = (power / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re * s, im * s)
}

/// Unit-modulus QPSK symbol.
pub fn qpsk(rng: &mut (impl Rng + ?Sized)) -> C64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let re = if rng.random::<bool>() { s } else { -s };
    let im = if rng.random::<bool>() { s } else { -s };
    C64::new(re, im)
}

/// Received power of a multipath link averaged over subcarriers, with a
/// maximal-ratio-combining receive array: `mean_n || H_n w_t ||^2`.
pub fn mrc_received_power(paths: &[Multipath], ofdm: &OfdmParams, array: &ArrayConfig, w_t: &BeamVector) -> f64 {
    let f0 = ofdm.subcarrier_spacing();
    let gains: Vec<C64> = paths
        .iter()
        .map(|p| p.amplitude * w_t.response_at(array, p.aod.sin()))
        .collect();
    let responses: Vec<DVector<C64>> = paths.iter().map(|p| array.response_u(p.aoa.sin())).collect();
    let mut total = 0.0;
    let mut y = DVector::zeros(array.num_elements);
    for n in 0..ofdm.subcarriers {
        y.fill(C64::new(0.0, 0.0));
        for ((p, g), a) in paths.iter().zip(&gains).zip(&responses) {
            let rot = C64::from_polar(1.0, -2.0 * PI * n as f64 * p.delay * f0);
            y.axpy(*g * rot, a, C64::new(1.0, 0.0));
        }
        total += y.norm_squared();
    }
    total / ofdm.subcarriers as f64
}

/// Position of an OFDM symbol in the frame, used for the Doppler phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SymbolTime {
    /// Packet index, 0-based.
    pub packet: usize,
    /// Symbol index within the packet, 1-based.
    pub symbol: usize,
}

/// Effective complex gain `sqrt(P_t) b (w_t^T a(theta_t)) (w_r^T a(theta_r))` of each path.
pub fn path_gains(scenario: &Scenario, array: &ArrayConfig, w_t: &BeamVector, w_r: &BeamVector) -> Vec<C64> {
    let amp = scenario.tx_power_mw().sqrt();
    scenario
        .paths
        .iter()
        .map(|p| {
            let g_t = w_t.response_at(array, p.aod.sin());
            let g_r = w_r.response_at(array, p.aoa.sin());
            p.amplitude * g_t * g_r * amp
        })
        .collect()
}

/// Frequency-domain channel estimate at every subcarrier for one OFDM symbol.
///
/// With `rng` set, white Gaussian noise at the scenario noise power is added
/// on each subcarrier and divided by a random unit-modulus data symbol.
#[allow(clippy::too_many_arguments)]
pub fn freq_channel_estimate(
    scenario: &Scenario,
    ofdm: &OfdmParams,
    array: &ArrayConfig,
    at: SymbolTime,
    packet_period: f64,
    w_t: &BeamVector,
    w_r: &BeamVector,
    rng: Option<&mut dyn rand::RngCore>,
) -> DVector<C64> {
    let gains = path_gains(scenario, array, w_t, w_r);
    freq_estimate_from_gains(scenario, ofdm, &gains, at, packet_period, rng)
}

pub(crate) fn freq_estimate_from_gains(
    scenario: &Scenario,
    ofdm: &OfdmParams,
    gains: &[C64],
    at: SymbolTime,
    packet_period: f64,
    rng: Option<&mut dyn rand::RngCore>,
) -> DVector<C64> {
    let n = ofdm.subcarriers;
    let f0 = ofdm.subcarrier_spacing();
    let t = at.symbol as f64 * ofdm.symbol_period() + at.packet as f64 * packet_period;
    let mut h = DVector::zeros(n);
    for (p, g) in scenario.paths.iter().zip(gains) {
        let d = *g * C64::from_polar(1.0, 2.0 * PI * p.doppler * t);
        let step = C64::from_polar(1.0, -2.0 * PI * p.delay * f0);
        let mut rot = C64::new(1.0, 0.0);
        for hn in h.iter_mut() {
            *hn += d * rot;
            rot *= step;
        }
    }
    if let Some(rng) = rng {
        let sigma2 = scenario.noise_power_mw();
        for hn in h.iter_mut() {
            let z = complex_gaussian(rng, sigma2);
            let s = qpsk(rng);
            *hn += z / s;
        }
    }
    h
}

fn unitary_fft(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut planner = FftPlanner::new();
    if inverse {
        planner.plan_fft_inverse(len)
    } else {
        planner.plan_fft_forward(len)
    }
}

/// `s = F^H s~` (unitary DFT) with a cyclic prefix of `cp_samples` copied from the block tail.
pub fn ofdm_modulate(symbols: &[C64], cp_samples: usize) -> Result<Vec<C64>> {
    let n = symbols.len();
    if n == 0 || cp_samples > n {
        return Err(Error::DimensionMismatch {
            expected: n.max(cp_samples),
            actual: n,
        });
    }
    let mut block = symbols.to_vec();
    unitary_fft(n, true).process(&mut block);
    let scale = 1.0 / (n as f64).sqrt();
    block.iter_mut().for_each(|x| *x *= scale);
    let mut out = Vec::with_capacity(n + cp_samples);
    out.extend_from_slice(&block[n - cp_samples..]);
    out.extend_from_slice(&block);
    Ok(out)
}

/// Strips the cyclic prefix and applies the unitary DFT.
pub fn ofdm_demodulate(samples: &[C64], subcarriers: usize, cp_samples: usize) -> Result<Vec<C64>> {
    if samples.len() != subcarriers + cp_samples {
        return Err(Error::DimensionMismatch {
            expected: subcarriers + cp_samples,
            actual: samples.len(),
        });
    }
    let mut block = samples[cp_samples..].to_vec();
    unitary_fft(subcarriers, false).process(&mut block);
    let scale = 1.0 / (subcarriers as f64).sqrt();
    block.iter_mut().for_each(|x| *x *= scale);
    Ok(block)
}

#[derive(Debug, Clone)]
pub struct TimeDomainOutput {
    pub samples: Vec<C64>,
    /// Some path delay exceeds the cyclic prefix, so the frequency-domain model does not hold.
    pub exceeds_cp: bool,
}

/// Sampled receive signal for a transmitted burst `tx` (cyclic prefix included)
/// starting at time `t0`. Path delays must fall on the sample grid.
#[allow(clippy::too_many_arguments)]
pub fn time_domain_receive(
    scenario: &Scenario,
    ofdm: &OfdmParams,
    array: &ArrayConfig,
    tx: &[C64],
    t0: f64,
    w_t: &BeamVector,
    w_r: &BeamVector,
    rng: Option<&mut dyn rand::RngCore>,
) -> Result<TimeDomainOutput> {
    let ts = ofdm.sample_period();
    let gains = path_gains(scenario, array, w_t, w_r);
    let mut samples = vec![C64::new(0.0, 0.0); tx.len()];
    let mut exceeds_cp = false;
    for (p, g) in scenario.paths.iter().zip(&gains) {
        let lag_f = p.delay / ts;
        let lag = lag_f.round();
        if (lag_f - lag).abs() > 1e-6 {
            return Err(Error::Domain(format!(
                "delay {} s is not a whole number of samples",
                p.delay
            )));
        }
        let lag = lag as usize;
        if lag > ofdm.cp_samples() {
            exceeds_cp = true;
        }
        for i in lag..tx.len() {
            let t = t0 + i as f64 * ts;
            samples[i] += *g * C64::from_polar(1.0, 2.0 * PI * p.doppler * t) * tx[i - lag];
        }
    }
    if let Some(rng) = rng {
        let sigma2 = scenario.noise_power_mw();
        for y in samples.iter_mut() {
            *y += complex_gaussian(rng, sigma2);
        }
    }
    Ok(TimeDomainOutput {
        samples,
        exceeds_cp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_path(delay: f64, doppler: f64) -> Scenario {
        Scenario {
            paths: vec![Multipath {
                amplitude: C64::new(0.5, -0.2),
                delay,
                doppler,
                aod: 0.0,
                aoa: 0.0,
            }],
            tx_power_dbm: 0.0,
            noise_power_dbm: -90.0,
            pathloss_exponent: 4.0,
            carrier_hz: 24e9,
            rng_seed: 1,
        }
    }

    #[test]
    fn doppler_values() {
        assert_eq!(doppler_from_speed(0.0, 24e9), 0.0);
        assert!((doppler_from_speed(55.56, 24e9) - 4444.8).abs() < 1e-6);
        assert!((doppler_from_speed(40.0, 24e9) - 3200.0).abs() < 1e-9);
        assert!((speed_from_doppler(3200.0, 24e9) - 40.0).abs() < 1e-12);
    }

    #[test]
    fn pathloss_values() {
        let db = |x: f64| 10.0 * x.log10();
        let r2 = db(pathloss(2.0, 2.0).unwrap() / pathloss(1.0, 2.0).unwrap());
        assert!((r2 + 6.0206).abs() < 1e-3);
        let r4 = db(pathloss(2.0, 4.0).unwrap() / pathloss(1.0, 4.0).unwrap());
        assert!((r4 + 12.0412).abs() < 1e-3);
        assert!((db(pathloss(30.0, 4.0).unwrap()) + 59.0849).abs() < 1e-3);
        assert!(pathloss(0.0, 2.0).is_err());
        assert!(pathloss(-1.0, 2.0).is_err());
    }

    #[test]
    fn default_numerology() {
        let o = OfdmParams::default();
        assert!((o.symbol_period() - 1.6e-6).abs() < 1e-15);
        assert_eq!(o.cp_samples(), 32);
        assert!((o.subcarrier_spacing() - 781_250.0).abs() < 1e-6);
        o.validate().unwrap();
        let bad = OfdmParams {
            subcarriers: 100,
            ..o
        };
        assert!(bad.validate().is_err());
    }

    fn ranges(speed: (f64, f64)) -> ScattererRanges {
        ScattererRanges {
            count: 12,
            min_distance: 1.0,
            max_distance: 30.0,
            min_angle: (-60f64).to_radians(),
            max_angle: 60f64.to_radians(),
            min_speed: speed.0,
            max_speed: speed.1,
            pathloss_exponent: 4.0,
        }
    }

    #[test]
    fn scatterers_are_seed_deterministic() {
        let r = ranges((-40.0, 40.0));
        let a = generate_scatterers(&mut ChaCha8Rng::seed_from_u64(9), &r, 24e9).unwrap();
        let b = generate_scatterers(&mut ChaCha8Rng::seed_from_u64(9), &r, 24e9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 12);
        for p in &a {
            assert_eq!(p.aod, p.aoa);
            assert!(p.distance() >= 1.0 && p.distance() <= 30.0);
            assert!(p.speed(24e9).abs() <= 40.0 + 1e-9);
            let expected = reference_gain_1m(24e9) * pathloss(p.distance(), 4.0).unwrap();
            assert!((p.amplitude.norm_sqr() / expected - 1.0).abs() < 1e-9);
        }
        let c = generate_scatterers(&mut ChaCha8Rng::seed_from_u64(10), &r, 24e9).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn static_scatterers_have_no_doppler() {
        let r = ranges((0.0, 0.0));
        let a = generate_scatterers(&mut ChaCha8Rng::seed_from_u64(1), &r, 24e9).unwrap();
        assert!(a.iter().all(|p| p.doppler == 0.0));
    }

    #[test]
    fn flat_response_at_boresight() {
        let cfg = ArrayConfig::new(16).unwrap();
        let ofdm = OfdmParams::default();
        let sc = one_path(0.0, 0.0);
        let w = BeamVector::steered(&cfg, 0.0);
        let h = freq_channel_estimate(&sc, &ofdm, &cfg, SymbolTime { packet: 0, symbol: 1 }, 0.0, &w, &w, None);
        // matched transmit and receive beams each contribute sqrt(M)
        let expected = sc.paths[0].amplitude * 16.0;
        assert!(h.iter().all(|x| (x - expected).norm() < 1e-12));
    }

    #[test]
    fn integer_delay_gives_phase_ramp() {
        let cfg = ArrayConfig::new(4).unwrap();
        let ofdm = OfdmParams::default();
        let p = 5.0;
        let sc = one_path(p / ofdm.bandwidth_hz, 0.0);
        let w = BeamVector::steered(&cfg, 0.0);
        let h = freq_channel_estimate(&sc, &ofdm, &cfg, SymbolTime { packet: 0, symbol: 1 }, 0.0, &w, &w, None);
        for n in 0..ofdm.subcarriers {
            let ramp = C64::from_polar(1.0, -2.0 * PI * n as f64 * p / 128.0);
            assert!((h[n] / h[0] - ramp).norm() < 1e-9);
        }
    }

    #[test]
    fn doppler_phase_advance_between_symbols() {
        let cfg = ArrayConfig::new(8).unwrap();
        let ofdm = OfdmParams::default();
        let sc = one_path(20e-9, 2500.0);
        let w = BeamVector::steered(&cfg, 0.0);
        let at = |k| SymbolTime { packet: 0, symbol: k };
        let h1 = freq_channel_estimate(&sc, &ofdm, &cfg, at(2), 0.0, &w, &w, None);
        let h2 = freq_channel_estimate(&sc, &ofdm, &cfg, at(7), 0.0, &w, &w, None);
        let expected = 2.0 * PI * 2500.0 * 5.0 * ofdm.symbol_period();
        for n in 0..ofdm.subcarriers {
            assert!(((h2[n] / h1[n]).arg() - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn noise_has_configured_power() {
        let cfg = ArrayConfig::new(4).unwrap();
        let ofdm = OfdmParams {
            subcarriers: 4096,
            ..OfdmParams::default()
        };
        let mut sc = one_path(0.0, 0.0);
        sc.paths[0].amplitude = C64::new(0.0, 0.0);
        sc.noise_power_dbm = 0.0;
        let w = BeamVector::steered(&cfg, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = freq_channel_estimate(&sc, &ofdm, &cfg, SymbolTime { packet: 0, symbol: 1 }, 0.0, &w, &w, Some(&mut rng));
        let p = h.norm_squared() / 4096.0;
        assert!((p - 1.0).abs() < 0.1, "noise power {p}");
    }

    #[test]
    fn ofdm_round_trip_and_impulse() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s: Vec<C64> = (0..128).map(|_| qpsk(&mut rng)).collect();
        let tx = ofdm_modulate(&s, 32).unwrap();
        assert_eq!(tx.len(), 160);
        assert_eq!(&tx[..32], &tx[128..]);
        let back = ofdm_demodulate(&tx, 128, 32).unwrap();
        for (a, b) in s.iter().zip(&back) {
            assert!((a - b).norm() < 1e-12);
        }

        let mut impulse = vec![C64::new(0.0, 0.0); 16];
        impulse[0] = C64::new(1.0, 0.0);
        let t = ofdm_modulate(&impulse, 0).unwrap();
        assert!(t.iter().all(|x| (x - t[0]).norm() < 1e-15));
        assert!(ofdm_demodulate(&t, 16, 4).is_err());
    }

    #[test]
    fn cyclic_delay_gives_phase_ramp() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s: Vec<C64> = (0..64).map(|_| qpsk(&mut rng)).collect();
        let tx = ofdm_modulate(&s, 16).unwrap();
        let p = 3;
        let mut delayed = vec![C64::new(0.0, 0.0); tx.len()];
        delayed[p..].copy_from_slice(&tx[..tx.len() - p]);
        let rx = ofdm_demodulate(&delayed, 64, 16).unwrap();
        for n in 0..64 {
            let ramp = C64::from_polar(1.0, -2.0 * PI * (n * p) as f64 / 64.0);
            assert!((rx[n] / s[n] - ramp).norm() < 1e-12);
        }
    }

    #[test]
    fn time_domain_superposition() {
        let cfg = ArrayConfig::new(8).unwrap();
        let ofdm = OfdmParams::default();
        let w = BeamVector::steered(&cfg, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s: Vec<C64> = (0..128).map(|_| qpsk(&mut rng)).collect();
        let tx = ofdm_modulate(&s, 32).unwrap();

        let single = one_path(0.0, 0.0);
        let out = time_domain_receive(&single, &ofdm, &cfg, &tx, 0.0, &w, &w, None).unwrap();
        let g = single.paths[0].amplitude * 8.0;
        for (y, x) in out.samples.iter().zip(&tx) {
            assert!((y - g * x).norm() < 1e-12);
        }

        let mut pair = single.clone();
        let mut opposite = pair.paths[0];
        opposite.amplitude = -opposite.amplitude;
        pair.paths.push(opposite);
        let out = time_domain_receive(&pair, &ofdm, &cfg, &tx, 0.0, &w, &w, None).unwrap();
        assert!(out.samples.iter().all(|y| y.norm() < 1e-12));

        let late = one_path(40.0 / ofdm.bandwidth_hz, 0.0);
        assert!(time_domain_receive(&late, &ofdm, &cfg, &tx, 0.0, &w, &w, None).unwrap().exceeds_cp);
        let frac = one_path(2.5 / ofdm.bandwidth_hz, 0.0);
        assert!(time_domain_receive(&frac, &ofdm, &cfg, &tx, 0.0, &w, &w, None).is_err());
    }

    #[test]
    fn comm_paths_shape() {
        let spec = CommChannelSpec::default();
        let paths = generate_comm_paths(&mut ChaCha8Rng::seed_from_u64(1), &spec);
        assert_eq!(paths.len(), 7);
        assert_eq!(paths[0].amplitude, C64::new(1.0, 0.0));
        for p in &paths[1..] {
            assert!(p.aod.abs() <= spec.angular_spread / 2.0);
            assert!(p.delay < spec.max_excess_delay);
        }
    }

    #[test]
    fn mrc_power_of_single_path() {
        let cfg = ArrayConfig::new(16).unwrap();
        let ofdm = OfdmParams::default();
        let path = Multipath {
            amplitude: C64::new(0.5, 0.0),
            delay: 30e-9,
            doppler: 0.0,
            aod: 0.0,
            aoa: 0.3,
        };
        let w = BeamVector::steered(&cfg, 0.0);
        // |b|^2 |a^T w|^2 ||a_r||^2 = 0.25 * 16 * 16
        assert!((mrc_received_power(&[path], &ofdm, &cfg, &w) - 64.0).abs() < 1e-9);
    }

    #[test]
    fn scenario_validation() {
        let ofdm = OfdmParams::default();
        let mut sc = one_path(0.0, 0.0);
        sc.validate(&ofdm).unwrap();
        sc.paths[0].delay = 2.0e-6;
        assert!(sc.validate(&ofdm).is_err());
        sc.paths.clear();
        assert!(sc.validate(&ofdm).is_err());
    }
}
