//! JSON configuration: loading with defaults, validation and canonical saving.
//!
//! Angles are degrees, powers dBm and frequencies Hz in the file; the
//! conversion accessors on [`RootConfig`] hand out radians, milliwatts and
//! equivalent directions to the rest of the crate.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::array_geometry::{half_power_width_u, ArrayConfig, DirectionGrid};
use crate::beamforming::{CombineMethod, CombineSpec, IlsParams};
use crate::channel::{CommChannelSpec, Multipath, OfdmParams, ScattererRanges, SPEED_OF_LIGHT};
use crate::error::{Error, Result};
use crate::protocol::FramePlan;
use crate::sensing::{AssociationParams, OmpParams, SensingParams};
use crate::C64;

/// Environment variable that overrides `experiment.seed`.
pub const SEED_ENV: &str = "MBJCAS_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArraySection {
    pub num_elements: usize,
    /// In wavelengths.
    pub element_spacing: f64,
    /// Equivalent-direction grid size; 0 means ten points per element.
    pub grid_points: usize,
    /// The sensing subbeam copies the mainlobe of a uniform array this long.
    pub sensing_shape_elements: usize,
    pub comm_shape_elements: usize,
    pub ils_tol: f64,
    pub ils_max_iter: usize,
}

impl Default for ArraySection {
    fn default() -> Self {
        Self {
            num_elements: 16,
            element_spacing: 0.5,
            grid_points: 0,
            sensing_shape_elements: 12,
            comm_shape_elements: 16,
            ils_tol: 1e-8,
            ils_max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OfdmSection {
    pub subcarriers: usize,
    pub bandwidth_hz: f64,
    pub cp_duration_s: f64,
}

impl Default for OfdmSection {
    fn default() -> Self {
        let d = OfdmParams::default();
        Self {
            subcarriers: d.subcarriers,
            bandwidth_hz: d.bandwidth_hz,
            cp_duration_s: d.cp_duration,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrameSection {
    pub n_t: usize,
    pub n_r: usize,
    pub n_d: usize,
    pub symbols_per_packet: usize,
    /// Idle time appended after the sensing symbols of each packet.
    pub packet_gap_s: f64,
}

impl Default for FrameSection {
    fn default() -> Self {
        Self {
            n_t: 8,
            n_r: 5,
            n_d: 12,
            symbols_per_packet: 60,
            packet_gap_s: 0.0,
        }
    }
}

/// One explicit propagation path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathRecord {
    pub amplitude_re: f64,
    pub amplitude_im: f64,
    pub delay_s: f64,
    pub doppler_hz: f64,
    pub aod_deg: f64,
    pub aoa_deg: f64,
}

impl PathRecord {
    pub fn to_multipath(&self) -> Multipath {
        Multipath {
            amplitude: C64::new(self.amplitude_re, self.amplitude_im),
            delay: self.delay_s,
            doppler: self.doppler_hz,
            aod: self.aod_deg.to_radians(),
            aoa: self.aoa_deg.to_radians(),
        }
    }

    pub fn from_multipath(p: &Multipath) -> Self {
        Self {
            amplitude_re: p.amplitude.re,
            amplitude_im: p.amplitude.im,
            delay_s: p.delay,
            doppler_hz: p.doppler,
            aod_deg: p.aod.to_degrees(),
            aoa_deg: p.aoa.to_degrees(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommSection {
    pub los_angle_deg: f64,
    pub nlos_paths: usize,
    pub angular_spread_deg: f64,
    pub los_to_nlos_db: f64,
    pub max_excess_delay_s: f64,
}

impl Default for CommSection {
    fn default() -> Self {
        let d = CommChannelSpec::default();
        Self {
            los_angle_deg: d.los_angle.to_degrees(),
            nlos_paths: d.nlos_paths,
            angular_spread_deg: 33.0,
            los_to_nlos_db: d.los_to_nlos_db,
            max_excess_delay_s: d.max_excess_delay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub carrier_hz: f64,
    pub tx_power_dbm: f64,
    pub noise_power_dbm: f64,
    pub pathloss_exponent: f64,
    pub scatterers: usize,
    pub min_distance_m: f64,
    pub max_distance_m: f64,
    pub min_angle_deg: f64,
    pub max_angle_deg: f64,
    /// Relative radial speed range of the scatterers.
    pub min_speed_mps: f64,
    pub max_speed_mps: f64,
    /// Explicit sensing paths; when empty the scatterers are drawn from the ranges above.
    pub paths: Vec<PathRecord>,
    pub comm: CommSection,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            carrier_hz: 24e9,
            tx_power_dbm: 25.0,
            noise_power_dbm: -94.0,
            pathloss_exponent: 4.0,
            scatterers: 12,
            min_distance_m: 1.0,
            max_distance_m: 30.0,
            min_angle_deg: -60.0,
            max_angle_deg: 60.0,
            min_speed_mps: -40.0,
            max_speed_mps: 40.0,
            paths: Vec::new(),
            comm: CommSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CombineSection {
    pub rho: f64,
    /// 1 = separated design with phase alignment, 2 = joint design.
    pub method: u8,
    pub comm_direction_deg: f64,
    /// Angular range covered by the scanning subbeams.
    pub coverage_min_deg: f64,
    pub coverage_max_deg: f64,
}

impl Default for CombineSection {
    fn default() -> Self {
        Self {
            rho: 0.5,
            method: 1,
            comm_direction_deg: 0.0,
            coverage_min_deg: -60.0,
            coverage_max_deg: 60.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverChoice {
    Omp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensingSection {
    pub solver: SolverChoice,
    pub interpolation_factor: usize,
    pub max_sparsity: usize,
    pub residual_tol: f64,
    /// Neighbourhood, in dictionary bins, of the post-greedy swap search; 0 disables it.
    pub swap_window: usize,
    /// OMP also stops once the residual power per entry falls to this multiple of the noise power.
    pub noise_stop_factor: f64,
    pub margin: f64,
    pub reference_distance_m: f64,
    pub min_range_m: f64,
    /// 0 means the range implied by the cyclic prefix, `c T_p / 2`.
    pub max_range_m: f64,
    pub floor_db: f64,
    /// Fraction of the sensing subbeam's half-power width covered by the receive slots.
    pub rx_spread: f64,
    /// Spread the per-packet communication slots over the communication
    /// subbeam's half-power width instead of pinning them to its direction.
    pub spread_comm_slots: bool,
    /// Refine target directions against the known beam gains rather than
    /// averaging receive directions.
    pub fit_directions: bool,
    pub neighbour_gap: f64,
    pub dominance_db: f64,
}

impl Default for SensingSection {
    fn default() -> Self {
        let p = SensingParams::default();
        Self {
            solver: SolverChoice::Omp,
            interpolation_factor: p.interpolation_factor,
            max_sparsity: p.omp.max_sparsity,
            residual_tol: p.omp.residual_tol,
            swap_window: p.omp.swap_window,
            noise_stop_factor: 1.0,
            margin: p.margin,
            reference_distance_m: 10.0,
            min_range_m: p.min_range,
            max_range_m: 0.0,
            floor_db: p.floor_db,
            rx_spread: 1.0,
            spread_comm_slots: true,
            fit_directions: true,
            neighbour_gap: p.association.neighbour_gap,
            dominance_db: p.association.dominance_db,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub seed: u64,
    pub monte_carlo_runs: usize,
    pub output_dir: String,
    pub plots: bool,
    pub noise: bool,
    pub capacity_a_points: usize,
    pub capacity_snr_points: usize,
    pub capacity_snr_min_db: f64,
    pub capacity_snr_max_db: f64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            seed: 7,
            monte_carlo_runs: 20,
            output_dir: "out".into(),
            plots: false,
            noise: true,
            capacity_a_points: 100,
            capacity_snr_points: 100,
            capacity_snr_min_db: -20.0,
            capacity_snr_max_db: 60.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RootConfig {
    pub array: ArraySection,
    pub ofdm: OfdmSection,
    pub frame: FrameSection,
    pub scenario: ScenarioSection,
    pub combine: CombineSection,
    pub sensing: SensingSection,
    pub experiment: ExperimentSection,
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("must be positive and finite, got {v}")))
    }
}

fn within(field: &str, v: f64, lo: f64, hi: f64) -> Result<()> {
    if v >= lo && v <= hi {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("must lie in [{lo}, {hi}], got {v}")))
    }
}

fn ordered(field: &str, lo: f64, hi: f64) -> Result<()> {
    if lo <= hi {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("minimum {lo} exceeds maximum {hi}")))
    }
}

impl RootConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.array;
        self.array_config()?;
        if a.sensing_shape_elements < 2 || a.sensing_shape_elements > a.num_elements {
            return Err(Error::invalid("array.sensing_shape_elements", "must lie in 2..=num_elements"));
        }
        if a.comm_shape_elements < 2 || a.comm_shape_elements > a.num_elements {
            return Err(Error::invalid("array.comm_shape_elements", "must lie in 2..=num_elements"));
        }
        self.grid()?;
        positive("array.ils_tol", a.ils_tol)?;
        if a.ils_max_iter == 0 {
            return Err(Error::invalid("array.ils_max_iter", "must be at least 1"));
        }

        let ofdm = self.ofdm_params();
        ofdm.validate().map_err(|e| rename(e, "ofdm"))?;
        positive("ofdm.cp_duration_s", self.ofdm.cp_duration_s)?;

        let f = &self.frame;
        if f.n_r * f.n_d > f.symbols_per_packet {
            return Err(Error::invalid(
                "frame.symbols_per_packet",
                format!("n_r * n_d = {} exceeds {} symbols per packet", f.n_r * f.n_d, f.symbols_per_packet),
            ));
        }
        if !(f.packet_gap_s >= 0.0) {
            return Err(Error::invalid("frame.packet_gap_s", "must be nonnegative"));
        }
        self.frame_plan().validate()?;

        let s = &self.scenario;
        positive("scenario.carrier_hz", s.carrier_hz)?;
        positive("scenario.pathloss_exponent", s.pathloss_exponent)?;
        for (name, v) in [("scenario.tx_power_dbm", s.tx_power_dbm), ("scenario.noise_power_dbm", s.noise_power_dbm)] {
            if !v.is_finite() {
                return Err(Error::invalid(name, "must be finite"));
            }
        }
        if s.paths.is_empty() {
            self.scatterer_ranges().validate()?;
            let tau = 2.0 * s.max_distance_m / SPEED_OF_LIGHT;
            if tau >= ofdm.cp_duration {
                return Err(Error::invalid(
                    "scenario.max_distance_m",
                    format!("round-trip delay {tau:.3e} s is not below the cyclic prefix {:.3e} s", ofdm.cp_duration),
                ));
            }
        }
        for (i, p) in s.paths.iter().enumerate() {
            if !(p.delay_s >= 0.0 && p.delay_s < ofdm.cp_duration) {
                return Err(Error::invalid(
                    format!("scenario.paths[{i}].delay_s"),
                    format!("{} s must lie in [0, T_p = {} s)", p.delay_s, ofdm.cp_duration),
                ));
            }
            if !(p.doppler_hz.abs() < ofdm.subcarrier_spacing()) {
                return Err(Error::invalid(format!("scenario.paths[{i}].doppler_hz"), "not below the subcarrier spacing"));
            }
            within(&format!("scenario.paths[{i}].aod_deg"), p.aod_deg, -90.0, 90.0)?;
            within(&format!("scenario.paths[{i}].aoa_deg"), p.aoa_deg, -90.0, 90.0)?;
        }
        let c = &s.comm;
        within("scenario.comm.los_angle_deg", c.los_angle_deg, -90.0, 90.0)?;
        within("scenario.comm.angular_spread_deg", c.angular_spread_deg, 0.0, 180.0)?;
        if !(c.max_excess_delay_s >= 0.0) {
            return Err(Error::invalid("scenario.comm.max_excess_delay_s", "must be nonnegative"));
        }

        let cb = &self.combine;
        within("combine.rho", cb.rho, 0.0, 1.0)?;
        CombineMethod::from_number(cb.method).map_err(|_| Error::invalid("combine.method", format!("must be 1 or 2, got {}", cb.method)))?;
        within("combine.comm_direction_deg", cb.comm_direction_deg, -90.0, 90.0)?;
        within("combine.coverage_min_deg", cb.coverage_min_deg, -90.0, 90.0)?;
        within("combine.coverage_max_deg", cb.coverage_max_deg, -90.0, 90.0)?;
        ordered("combine.coverage_min_deg", cb.coverage_min_deg, cb.coverage_max_deg)?;

        let se = &self.sensing;
        if se.interpolation_factor == 0 {
            return Err(Error::invalid("sensing.interpolation_factor", "must be at least 1"));
        }
        if se.max_sparsity == 0 {
            return Err(Error::invalid("sensing.max_sparsity", "must be at least 1"));
        }
        positive("sensing.residual_tol", se.residual_tol)?;
        if !(se.noise_stop_factor >= 0.0) {
            return Err(Error::invalid("sensing.noise_stop_factor", "must be nonnegative"));
        }
        positive("sensing.margin", se.margin)?;
        positive("sensing.reference_distance_m", se.reference_distance_m)?;
        if !(se.min_range_m >= 0.0) {
            return Err(Error::invalid("sensing.min_range_m", "must be nonnegative"));
        }
        if !(se.max_range_m >= 0.0) {
            return Err(Error::invalid("sensing.max_range_m", "must be nonnegative"));
        }
        ordered("sensing.min_range_m", se.min_range_m, self.max_range())?;
        if !(se.floor_db < 0.0) {
            return Err(Error::invalid("sensing.floor_db", format!("must be negative, got {}", se.floor_db)));
        }
        if !(se.rx_spread > 0.0 && se.rx_spread <= 1.0) {
            return Err(Error::invalid("sensing.rx_spread", format!("must lie in (0, 1], got {}", se.rx_spread)));
        }
        positive("sensing.neighbour_gap", se.neighbour_gap)?;
        if !(se.dominance_db >= 0.0) {
            return Err(Error::invalid("sensing.dominance_db", "must be nonnegative"));
        }

        let e = &self.experiment;
        if e.monte_carlo_runs == 0 {
            return Err(Error::invalid("experiment.monte_carlo_runs", "must be at least 1"));
        }
        if e.output_dir.is_empty() {
            return Err(Error::invalid("experiment.output_dir", "must not be empty"));
        }
        if e.capacity_a_points < 2 || e.capacity_snr_points < 2 {
            return Err(Error::invalid("experiment.capacity_a_points", "capacity grids need at least 2 points"));
        }
        ordered("experiment.capacity_snr_min_db", e.capacity_snr_min_db, e.capacity_snr_max_db)?;
        Ok(())
    }

    pub fn array_config(&self) -> Result<ArrayConfig> {
        ArrayConfig::with_spacing(self.array.num_elements, self.array.element_spacing).map_err(|e| rename(e, "array"))
    }

    pub fn grid(&self) -> Result<DirectionGrid> {
        let k = if self.array.grid_points == 0 {
            10 * self.array.num_elements
        } else {
            self.array.grid_points
        };
        if k < self.array.num_elements {
            return Err(Error::invalid("array.grid_points", "must be at least num_elements"));
        }
        DirectionGrid::full_view(k).map_err(|e| rename(e, "array.grid_points"))
    }

    pub fn ils_params(&self) -> IlsParams {
        IlsParams {
            tol: self.array.ils_tol,
            max_iter: self.array.ils_max_iter,
        }
    }

    pub fn ofdm_params(&self) -> OfdmParams {
        OfdmParams {
            subcarriers: self.ofdm.subcarriers,
            bandwidth_hz: self.ofdm.bandwidth_hz,
            cp_duration: self.ofdm.cp_duration_s,
        }
    }

    pub fn frame_plan(&self) -> FramePlan {
        let ofdm = self.ofdm_params();
        let f = &self.frame;
        FramePlan {
            n_t: f.n_t,
            n_r: f.n_r,
            n_d: f.n_d,
            symbols_per_packet: f.symbols_per_packet,
            packet_period: f.symbols_per_packet as f64 * ofdm.symbol_period() + f.packet_gap_s,
            ofdm,
        }
    }

    pub fn combine_spec(&self) -> Result<CombineSpec> {
        CombineSpec::new(
            self.combine.rho,
            self.comm_direction_u(),
            CombineMethod::from_number(self.combine.method)?,
        )
    }

    pub fn comm_direction_u(&self) -> f64 {
        self.combine.comm_direction_deg.to_radians().sin()
    }

    /// Scanning coverage in equivalent direction.
    pub fn coverage_u(&self) -> (f64, f64) {
        (
            self.combine.coverage_min_deg.to_radians().sin(),
            self.combine.coverage_max_deg.to_radians().sin(),
        )
    }

    /// Half-power width of the sensing subbeam in equivalent direction.
    pub fn sensing_width_u(&self) -> Result<f64> {
        half_power_width_u(self.array.sensing_shape_elements)
    }

    /// Width the communication receive slots are spread over.
    pub fn comm_rx_width_u(&self) -> Result<f64> {
        if self.sensing.spread_comm_slots {
            half_power_width_u(self.array.comm_shape_elements)
        } else {
            Ok(0.0)
        }
    }

    pub fn scatterer_ranges(&self) -> ScattererRanges {
        let s = &self.scenario;
        ScattererRanges {
            count: s.scatterers,
            min_distance: s.min_distance_m,
            max_distance: s.max_distance_m,
            min_angle: s.min_angle_deg.to_radians(),
            max_angle: s.max_angle_deg.to_radians(),
            min_speed: s.min_speed_mps,
            max_speed: s.max_speed_mps,
            pathloss_exponent: s.pathloss_exponent,
        }
    }

    pub fn comm_spec(&self) -> CommChannelSpec {
        let c = &self.scenario.comm;
        CommChannelSpec {
            los_angle: c.los_angle_deg.to_radians(),
            nlos_paths: c.nlos_paths,
            angular_spread: c.angular_spread_deg.to_radians(),
            los_to_nlos_db: c.los_to_nlos_db,
            max_excess_delay: c.max_excess_delay_s,
        }
    }

    /// Largest sensed distance.
    pub fn max_range(&self) -> f64 {
        if self.sensing.max_range_m > 0.0 {
            self.sensing.max_range_m
        } else {
            SPEED_OF_LIGHT * self.ofdm.cp_duration_s / 2.0
        }
    }

    pub fn sensing_params(&self) -> SensingParams {
        let se = &self.sensing;
        SensingParams {
            interpolation_factor: se.interpolation_factor,
            omp: OmpParams {
                max_sparsity: se.max_sparsity,
                residual_tol: se.residual_tol,
                noise_floor: None,
                swap_window: se.swap_window,
            },
            margin: se.margin,
            min_range: se.min_range_m,
            max_range: self.max_range(),
            floor_db: se.floor_db,
            association: AssociationParams {
                neighbour_gap: se.neighbour_gap,
                dominance_db: se.dominance_db,
            },
        }
    }

    /// Applies `MBJCAS_SEED` if it is set.
    pub fn apply_env_seed(&mut self) -> Result<()> {
        apply_seed_override(self, std::env::var(SEED_ENV).ok().as_deref())
    }

    /// Canonical JSON text: sorted keys, two-space indent, trailing newline.
    pub fn to_canonical_json(&self) -> Result<String> {
        let value = serde_json::to_value(self).map_err(|e| Error::Numerical(e.to_string()))?;
        let mut s = serde_json::to_string_pretty(&value).map_err(|e| Error::Numerical(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }
}

fn rename(e: Error, prefix: &str) -> Error {
    match e {
        Error::InvalidConfig { field, reason } => {
            let leaf = field.rsplit('.').next().unwrap_or(&field).to_string();
            Error::invalid(format!("{prefix}.{leaf}"), reason)
        }
        other => other,
    }
}

/// Overrides the seed from the textual value of `MBJCAS_SEED`.
pub fn apply_seed_override(cfg: &mut RootConfig, value: Option<&str>) -> Result<()> {
    if let Some(v) = value {
        cfg.experiment.seed = v
            .trim()
            .parse()
            .map_err(|_| Error::invalid(SEED_ENV, format!("not an unsigned 64-bit integer: {v:?}")))?;
    }
    Ok(())
}

/// Parses and validates configuration text; missing fields take their defaults.
pub fn parse_config(text: &str) -> Result<RootConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RootConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        Error::Parse {
            line: inner.line(),
            column: inner.column(),
            message: if path == "." { inner.to_string() } else { format!("{path}: {inner}") },
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads, parses, applies the seed override and validates.
pub fn load_config(path: &Path) -> Result<RootConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut cfg = parse_config(&text)?;
    cfg.apply_env_seed()?;
    Ok(cfg)
}

pub fn save_config(cfg: &RootConfig, path: &Path) -> Result<()> {
    std::fs::write(path, cfg.to_canonical_json()?)?;
    Ok(())
}

/// Hex SHA-256 of the canonical JSON, output directory excluded.
pub fn config_hash(cfg: &RootConfig) -> Result<String> {
    use sha2::{Digest, Sha256};
    // where the files land does not change what they contain
    let mut c = cfg.clone();
    c.experiment.output_dir.clear();
    Ok(hex::encode(Sha256::digest(c.to_canonical_json()?.as_bytes())))
}
