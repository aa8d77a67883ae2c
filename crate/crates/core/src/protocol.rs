//! Frame structure, receive-beam scheduling and measurement collection.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array_geometry::ArrayConfig;
use crate::beamforming::{BeamVector, ScanSchedule};
use crate::channel::{freq_estimate_from_gains, path_gains, OfdmParams, Scenario, SymbolTime};
use crate::error::{Error, Result};
use crate::C64;

/// Packet layout of one sensing cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FramePlan {
    /// Packets per cycle, one per scanning direction.
    pub n_t: usize,
    /// Receive beams per packet.
    pub n_r: usize,
    /// Symbols per receive beam.
    pub n_d: usize,
    pub symbols_per_packet: usize,
    /// Packet period `T_f` in seconds.
    pub packet_period: f64,
    pub ofdm: OfdmParams,
}

impl FramePlan {
    /// Back-to-back packets of exactly `n_r * n_d` symbols.
    pub fn new(n_t: usize, n_r: usize, n_d: usize, ofdm: OfdmParams) -> Self {
        Self {
            n_t,
            n_r,
            n_d,
            symbols_per_packet: n_r * n_d,
            packet_period: (n_r * n_d) as f64 * ofdm.symbol_period(),
            ofdm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ofdm.validate()?;
        if self.n_t == 0 {
            return Err(Error::invalid("frame.n_t", "must be positive"));
        }
        if self.n_r < 2 {
            return Err(Error::invalid(
                "frame.n_r",
                format!("need a communication slot plus at least one sensing slot, got {}", self.n_r),
            ));
        }
        if self.n_d < 2 {
            return Err(Error::invalid("frame.n_d", format!("need at least 2 symbols per beam, got {}", self.n_d)));
        }
        if self.n_r * self.n_d > self.symbols_per_packet {
            return Err(Error::invalid(
                "frame.symbols_per_packet",
                format!(
                    "n_r * n_d = {} exceeds {} symbols per packet",
                    self.n_r * self.n_d,
                    self.symbols_per_packet
                ),
            ));
        }
        let busy = (self.n_r * self.n_d) as f64 * self.ofdm.symbol_period();
        if self.packet_period < busy * (1.0 - 1e-12) {
            return Err(Error::invalid(
                "frame.packet_period",
                format!("{} s is shorter than the {} s of sensing symbols", self.packet_period, busy),
            ));
        }
        Ok(())
    }

    /// Time to sweep all `n_t` packets.
    pub fn sensing_cycle(&self) -> f64 {
        self.n_t as f64 * self.packet_period
    }

    /// Index of the communication-direction receive slot (0-based; the last slot).
    pub fn comm_slot(&self) -> usize {
        self.n_r - 1
    }
}

/// 1-based symbol index `k = (n_d - 1) n_r_total + n_r` of the `n_d`-th use of receive beam `n_r`.
pub fn symbol_index(n_d: usize, n_r: usize, n_r_total: usize) -> Result<usize> {
    if n_d == 0 || n_r == 0 || n_r > n_r_total {
        return Err(Error::Domain(format!(
            "symbol index needs n_d >= 1 and 1 <= n_r <= {n_r_total}, got n_d={n_d}, n_r={n_r}"
        )));
    }
    Ok((n_d - 1) * n_r_total + n_r)
}

/// Receive directions (equivalent domain) for every packet. The last slot of
/// each packet points at the communication direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RxScanPlan {
    pub comm_direction: f64,
    pub packets: Vec<Vec<f64>>,
}

impl RxScanPlan {
    pub fn n_t(&self) -> usize {
        self.packets.len()
    }

    pub fn n_r(&self) -> usize {
        self.packets.first().map_or(0, Vec::len)
    }

    pub fn comm_slot(&self) -> usize {
        self.n_r().saturating_sub(1)
    }

    pub fn direction(&self, n_t: usize, n_r: usize) -> f64 {
        self.packets[n_t][n_r]
    }

    pub fn sensing_directions(&self) -> impl Iterator<Item = f64> + '_ {
        let c = self.comm_slot();
        self.packets.iter().flat_map(move |p| p[..c].iter().copied())
    }
}

/// Spreads `n_r - 1` sensing slots uniformly over `spread` times the sensing
/// subbeam's half-power width `width_u` around each scanning direction. The
/// `N_t` communication slots, one per packet in packet order, are spread the
/// same way over `comm_width_u` around the communication direction; a zero
/// width keeps them all on it.
pub fn build_rx_scan_plan(
    comm_direction: f64,
    schedule: &ScanSchedule,
    n_r: usize,
    width_u: f64,
    comm_width_u: f64,
    spread: f64,
) -> Result<RxScanPlan> {
    if n_r < 2 {
        return Err(Error::invalid("frame.n_r", "need at least 2 receive slots"));
    }
    if !(spread > 0.0 && spread <= 1.0) {
        return Err(Error::invalid("sensing.rx_spread", format!("must lie in (0, 1], got {spread}")));
    }
    if !(width_u > 0.0) {
        return Err(Error::invalid("sensing.width", "must be positive"));
    }
    if !(comm_width_u >= 0.0) {
        return Err(Error::invalid("sensing.comm_rx_width", "must be non-negative"));
    }
    if comm_direction.abs() > 1.0 {
        return Err(Error::NotPhysical(comm_direction.abs()));
    }
    let spread_over = |center: f64, width: f64, count: usize| -> Vec<f64> {
        let cell = width * spread / count as f64;
        (0..count)
            .map(|i| center + (i as f64 + 0.5 - count as f64 / 2.0) * cell)
            .collect()
    };
    let slots = n_r - 1;
    let comm_slots = spread_over(comm_direction, comm_width_u, schedule.directions.len());
    let mut packets = Vec::with_capacity(schedule.directions.len());
    for (&center, &comm) in schedule.directions.iter().zip(&comm_slots) {
        let mut dirs = spread_over(center, width_u, slots);
        dirs.push(comm);
        if let Some(bad) = dirs.iter().find(|u| u.abs() > 1.0) {
            return Err(Error::NotPhysical(bad.abs()));
        }
        packets.push(dirs);
    }
    Ok(RxScanPlan {
        comm_direction,
        packets,
    })
}

/// Channel estimates of one sensing cycle; slice `(n_t, n_r)` is an
/// `N x N_d` matrix whose column `n_d` came from symbol `symbol_index(n_d+1, n_r+1, N_r)`.
/// All indices here are 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementTensor {
    n_t: usize,
    n_r: usize,
    slices: Vec<DMatrix<C64>>,
}

impl MeasurementTensor {
    pub fn new(n_t: usize, n_r: usize, slices: Vec<DMatrix<C64>>) -> Result<Self> {
        if slices.len() != n_t * n_r {
            return Err(Error::DimensionMismatch {
                expected: n_t * n_r,
                actual: slices.len(),
            });
        }
        if let Some(first) = slices.first() {
            let shape = first.shape();
            if let Some(bad) = slices.iter().find(|s| s.shape() != shape) {
                return Err(Error::DimensionMismatch {
                    expected: shape.0 * shape.1,
                    actual: bad.nrows() * bad.ncols(),
                });
            }
        }
        Ok(Self { n_t, n_r, slices })
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    pub fn subcarriers(&self) -> usize {
        self.slices.first().map_or(0, |s| s.nrows())
    }

    pub fn n_d(&self) -> usize {
        self.slices.first().map_or(0, |s| s.ncols())
    }

    pub fn slice(&self, n_t: usize, n_r: usize) -> &DMatrix<C64> {
        &self.slices[n_t * self.n_r + n_r]
    }

    /// CSV dump, one complex sample per line.
    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "n_t,n_r,n_d,n,re,im")?;
        for t in 0..self.n_t {
            for r in 0..self.n_r {
                let y = self.slice(t, r);
                for d in 0..y.ncols() {
                    for n in 0..y.nrows() {
                        let v = y[(n, d)];
                        writeln!(out, "{t},{r},{d},{n},{:e},{:e}", v.re, v.im)?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read_csv(input: impl BufRead) -> Result<Self> {
        let mut rows = Vec::new();
        let (mut mt, mut mr, mut md, mut mn) = (0, 0, 0, 0);
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let bad = |message: String| Error::Parse {
                line: i + 1,
                column: 0,
                message,
            };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad(format!("expected 6 fields, got {}", f.len())));
            }
            let idx = |s: &str| s.trim().parse::<usize>().map_err(|e| bad(e.to_string()));
            let val = |s: &str| s.trim().parse::<f64>().map_err(|e| bad(e.to_string()));
            let (t, r, d, n) = (idx(f[0])?, idx(f[1])?, idx(f[2])?, idx(f[3])?);
            mt = mt.max(t + 1);
            mr = mr.max(r + 1);
            md = md.max(d + 1);
            mn = mn.max(n + 1);
            rows.push((t, r, d, n, C64::new(val(f[4])?, val(f[5])?)));
        }
        if rows.len() != mt * mr * md * mn {
            return Err(Error::DimensionMismatch {
                expected: mt * mr * md * mn,
                actual: rows.len(),
            });
        }
        let mut slices = vec![DMatrix::zeros(mn, md); mt * mr];
        for (t, r, d, n, v) in rows {
            slices[t * mr + r][(n, d)] = v;
        }
        Self::new(mt, mr, slices)
    }
}

/// Synthesizes every slice of the cycle. With `noise_seed` set, each slice draws
/// its noise from its own stream so the result does not depend on thread scheduling.
pub fn collect_measurements(
    scenario: &Scenario,
    array: &ArrayConfig,
    frame: &FramePlan,
    tx_beams: &[BeamVector],
    rx_plan: &RxScanPlan,
    noise_seed: Option<u64>,
) -> Result<MeasurementTensor> {
    frame.validate()?;
    if tx_beams.len() != frame.n_t {
        return Err(Error::DimensionMismatch {
            expected: frame.n_t,
            actual: tx_beams.len(),
        });
    }
    if rx_plan.n_t() != frame.n_t || rx_plan.n_r() != frame.n_r {
        return Err(Error::DimensionMismatch {
            expected: frame.n_t * frame.n_r,
            actual: rx_plan.n_t() * rx_plan.n_r(),
        });
    }
    if let Some(w) = tx_beams.iter().find(|w| w.len() != array.num_elements) {
        return Err(Error::DimensionMismatch {
            expected: array.num_elements,
            actual: w.len(),
        });
    }
    let n = frame.ofdm.subcarriers;
    let slices: Vec<DMatrix<C64>> = (0..frame.n_t * frame.n_r)
        .into_par_iter()
        .map(|idx| {
            let (t, r) = (idx / frame.n_r, idx % frame.n_r);
            let w_r = BeamVector::steered(array, rx_plan.direction(t, r));
            let gains = path_gains(scenario, array, &tx_beams[t], &w_r);
            let mut rng = noise_seed.map(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(((t as u64) << 32) | r as u64);
                rng
            });
            let mut y = DMatrix::zeros(n, frame.n_d);
            for d in 0..frame.n_d {
                let k = (d * frame.n_r) + r + 1;
                let at = SymbolTime { packet: t, symbol: k };
                let h = freq_estimate_from_gains(
                    scenario,
                    &frame.ofdm,
                    &gains,
                    at,
                    frame.packet_period,
                    rng.as_mut().map(|r| r as &mut dyn rand::RngCore),
                );
                y.set_column(d, &h);
            }
            y
        })
        .collect();
    MeasurementTensor::new(frame.n_t, frame.n_r, slices)
}

/// Spectral efficiency of multibeam versus time division.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CapacityPoint {
    pub a: f64,
    pub snr: f64,
    /// `log2(1 + a snr)`, bit/s/Hz
    pub c_mb: f64,
    /// `a log2(1 + snr)`, bit/s/Hz
    pub c_td: f64,
    pub ratio: f64,
}

/// `a` is the communication power fraction; `snr` the composite `M |h|^2 P_t / sigma^2`.
pub fn capacity_ratio(a: f64, snr: f64) -> Result<CapacityPoint> {
    if !(a > 0.0 && a <= 1.0) {
        return Err(Error::Domain(format!("power fraction must lie in (0, 1], got {a}")));
    }
    if !(snr >= 0.0) || !snr.is_finite() {
        return Err(Error::Domain(format!("snr must be finite and nonnegative, got {snr}")));
    }
    let c_mb = (a * snr).ln_1p() / std::f64::consts::LN_2;
    let c_td = a * snr.ln_1p() / std::f64::consts::LN_2;
    let ratio = if snr == 0.0 { 1.0 } else { c_mb / c_td };
    Ok(CapacityPoint {
        a,
        snr,
        c_mb,
        c_td,
        ratio,
    })
}
