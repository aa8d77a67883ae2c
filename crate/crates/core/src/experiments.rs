//! Experiment runners: beam synthesis, sensing scenes and the capacity sweep.
//!
//! Each runner is a pure function of the configuration and its seed and
//! writes its files under one output directory. Wall time is reported in the
//! returned [`RunReport`] only, never written to disk.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::array_geometry::{
    equivalent_response_matrix, half_power_width_u, magnitude_db, radiation_pattern, ArrayConfig, DirectionGrid, ResponseMatrix,
};
use crate::beamforming::{
    combine, displace, displace_u, ils_design, mainlobe_target, reference_subbeam, scan_schedule, uniform_pattern,
    BeamVector, CombineMethod, CombineSpec, PhaseVector, ScanSchedule, WeightMatrix,
};
use crate::channel::{
    generate_comm_paths, generate_scatterers, mrc_received_power, pathloss, reference_gain_1m, Multipath, Scenario,
    SPEED_OF_LIGHT,
};
use crate::config_io::{config_hash, RootConfig, SolverChoice};
use crate::error::{Error, Result};
use crate::export::{self, Series};
use crate::protocol::{build_rx_scan_plan, capacity_ratio, collect_measurements, FramePlan, MeasurementTensor, RxScanPlan};
use crate::sensing::{
    aggregate_maps, build_dictionary, comm_exclusions, cs_pipeline, dft_delay_doppler, dft_pipeline, mmv_omp,
    mmv_stack, lambda_stats, postprocess_estimates, Combination, CsOutcome, DelayDictionary, DelayThresholds,
    DftOutcome, EstimateSource, GainModel, OmpParams, SensingParams, TargetEstimate,
};

const STREAM_SCENE: u64 = 1;
const STREAM_COMM: u64 = 2;
const STREAM_NOISE: u64 = 3;

/// Independent 64-bit seed for a (purpose, index) pair.
pub fn derive_seed(seed: u64, purpose: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 32) | index);
    rng.next_u64()
}

fn rng_for(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 32) | index);
    rng
}

/// Metrics and file manifest of one run.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub experiment: String,
    pub seed: u64,
    pub config_hash: String,
    pub metrics: BTreeMap<String, f64>,
    /// Paths relative to the output directory.
    pub files: Vec<String>,
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl RunReport {
    fn new(name: &str, cfg: &RootConfig) -> Result<Self> {
        Ok(Self {
            experiment: name.into(),
            seed: cfg.experiment.seed,
            config_hash: config_hash(cfg)?,
            metrics: BTreeMap::new(),
            files: Vec::new(),
            wall_time_s: 0.0,
        })
    }

    fn add(&mut self, out: &Path, path: &Path) {
        let rel = path.strip_prefix(out).unwrap_or(path);
        self.files.push(rel.to_string_lossy().replace('\\', "/"));
    }

    /// Writes `<experiment>_report.json` (without wall time) and registers it.
    fn finish(mut self, out: &Path, started: Instant) -> Result<Self> {
        let path = out.join(format!("{}_report.json", self.experiment));
        self.add(out, &path);
        let mut text = serde_json::to_string_pretty(&self).map_err(|e| Error::Numerical(e.to_string()))?;
        text.push('\n');
        export::write_text(&path, &text)?;
        self.wall_time_s = started.elapsed().as_secs_f64();
        Ok(self)
    }
}

/// Array, grid, reference subbeams and scan plan derived from a configuration.
#[derive(Debug, Clone)]
pub struct System {
    pub cfg: RootConfig,
    pub array: ArrayConfig,
    pub grid: DirectionGrid,
    pub a: ResponseMatrix,
    /// Sensing reference pointing at equivalent direction 0.
    pub sensing_reference: BeamVector,
    /// Communication subbeam at the communication direction.
    pub comm: BeamVector,
    pub schedule: ScanSchedule,
    pub frame: FramePlan,
}

impl System {
    pub fn new(cfg: &RootConfig) -> Result<Self> {
        cfg.validate()?;
        let array = cfg.array_config()?;
        let grid = cfg.grid()?;
        let a = equivalent_response_matrix(&array, &grid);
        let d = WeightMatrix::identity(grid.num_points);
        let ils = cfg.ils_params();
        let sensing_reference = reference_subbeam(&array, &grid, cfg.array.sensing_shape_elements, &d, ils)?;
        let comm_reference = reference_subbeam(&array, &grid, cfg.array.comm_shape_elements, &d, ils)?;
        let comm = displace_u(&comm_reference, cfg.comm_direction_u(), &array);
        let schedule = scan_schedule(cfg.coverage_u(), &grid, cfg.frame.n_t, 0.0)?;
        Ok(Self {
            cfg: cfg.clone(),
            array,
            grid,
            a,
            sensing_reference,
            comm,
            schedule,
            frame: cfg.frame_plan(),
        })
    }

    pub fn sensing_subbeams(&self) -> Vec<BeamVector> {
        self.schedule
            .deltas
            .iter()
            .map(|&d| displace(&self.sensing_reference, d, &self.grid, &self.array))
            .collect()
    }

    /// Transmit multibeam of every packet.
    pub fn multibeams(&self, method: CombineMethod) -> Result<Vec<BeamVector>> {
        let spec = CombineSpec::new(self.cfg.combine.rho, self.cfg.comm_direction_u(), method)?;
        let ils = self.cfg.ils_params();
        self.sensing_subbeams()
            .par_iter()
            .map(|ws| combine(&self.comm, ws, &spec, &self.a, ils))
            .collect()
    }

    pub fn rx_plan(&self) -> Result<RxScanPlan> {
        build_rx_scan_plan(
            self.cfg.comm_direction_u(),
            &self.schedule,
            self.frame.n_r,
            self.cfg.sensing_width_u()?,
            self.cfg.comm_rx_width_u()?,
            self.cfg.sensing.rx_spread,
        )
    }
}

fn pattern_db(w: &BeamVector, a: &ResponseMatrix) -> Result<Vec<f64>> {
    Ok(radiation_pattern(w, a)?.iter().map(|m| magnitude_db(m.norm())).collect())
}

/// Average received communication power of each packet's multibeam over
/// `runs` random communication channels, normalized per channel to the
/// power of the communication subbeam alone.
pub fn comm_power_ratios(system: &System, beams: &[BeamVector], runs: usize) -> Vec<f64> {
    let spec = system.cfg.comm_spec();
    let ofdm = system.frame.ofdm;
    let seed = system.cfg.experiment.seed;
    let per_run: Vec<Vec<f64>> = (0..runs)
        .into_par_iter()
        .map(|r| {
            let paths = generate_comm_paths(&mut rng_for(seed, STREAM_COMM, r as u64), &spec);
            let base = mrc_received_power(&paths, &ofdm, &system.array, &system.comm);
            beams
                .iter()
                .map(|w| mrc_received_power(&paths, &ofdm, &system.array, w) / base)
                .collect()
        })
        .collect();
    (0..beams.len())
        .map(|i| per_run.iter().map(|r| r[i]).sum::<f64>() / runs as f64)
        .collect()
}

fn deg(u: f64) -> f64 {
    u.clamp(-1.0, 1.0).asin().to_degrees()
}

/// Reference, displaced and combined beams plus the communication power comparison.
pub fn run_beams_experiment(cfg: &RootConfig, out: &Path) -> Result<RunReport> {
    let started = Instant::now();
    let mut report = RunReport::new("beams", cfg)?;
    let system = System::new(cfg)?;
    let dir = out.join("beams");
    let us = system.grid.directions();
    let k = system.grid.num_points;

    let shape = cfg.array.sensing_shape_elements;
    let conventional: Vec<f64> = uniform_pattern(&system.array, &system.grid, shape)
        .iter()
        .map(|&m| magnitude_db(m))
        .collect();
    let target = mainlobe_target(&system.array, &system.grid, shape)?;
    let taper = WeightMatrix::exp_taper(k, system.grid.nearest_index(0.0), 15.0)?;
    let tapered = ils_design(&system.a, &target, &taper, &PhaseVector::ones(k), cfg.ils_params())?.w;
    let columns = [
        conventional,
        target.values().iter().map(|&m| magnitude_db(m)).collect(),
        pattern_db(&system.sensing_reference, &system.a)?,
        pattern_db(&tapered, &system.a)?,
        pattern_db(&system.comm, &system.a)?,
    ];
    let rows: Vec<Vec<f64>> = (0..k)
        .map(|q| {
            let mut r = vec![us[q], deg(us[q])];
            r.extend(columns.iter().map(|c| c[q]));
            r
        })
        .collect();
    let path = dir.join("reference.csv");
    export::write_csv(
        &path,
        &["u", "theta_deg", "conventional_db", "target_db", "sensing_db", "sensing_taper_db", "comm_db"],
        &rows,
    )?;
    report.add(out, &path);

    let subbeams = system.sensing_subbeams();
    let sub_db = subbeams.iter().map(|w| pattern_db(w, &system.a)).collect::<Result<Vec<_>>>()?;
    let comm_db = pattern_db(&system.comm, &system.a)?;
    let mut header = vec!["u".to_string(), "theta_deg".into(), "comm_db".into()];
    header.extend((1..=subbeams.len()).map(|i| format!("scan{i}_db")));
    let rows: Vec<Vec<f64>> = (0..k)
        .map(|q| {
            let mut r = vec![us[q], deg(us[q]), comm_db[q]];
            r.extend(sub_db.iter().map(|c| c[q]));
            r
        })
        .collect();
    let path = dir.join("displaced.csv");
    export::write_csv(&path, &header.iter().map(String::as_str).collect::<Vec<_>>(), &rows)?;
    report.add(out, &path);

    let runs = cfg.experiment.monte_carlo_runs;
    let mut ratios = Vec::new();
    let mut plots = Vec::new();
    for method in [CombineMethod::Separated, CombineMethod::Joint] {
        let m = method.number();
        let beams = system.multibeams(method)?;
        let mut series = Vec::new();
        for (i, w) in beams.iter().enumerate() {
            let db = pattern_db(w, &system.a)?;
            let rows: Vec<Vec<f64>> = (0..k).map(|q| vec![us[q], deg(us[q]), db[q]]).collect();
            let path = dir.join(format!("method{m}")).join(format!("packet_{}.csv", i + 1));
            export::write_csv(&path, &["u", "theta_deg", "gain_db"], &rows)?;
            report.add(out, &path);
            series.push((format!("packet {}", i + 1), (0..k).map(|q| (deg(us[q]), db[q])).collect::<Vec<_>>()));
        }
        plots.push((m, series));
        let r = comm_power_ratios(&system, &beams, runs);
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        report.metrics.insert(format!("method{m}_mean_power_ratio"), mean);
        ratios.push(r);
    }
    let rows: Vec<Vec<f64>> = (0..system.schedule.directions.len())
        .map(|i| {
            let u = system.schedule.directions[i];
            vec![(i + 1) as f64, u, deg(u), ratios[0][i], ratios[1][i]]
        })
        .collect();
    let path = dir.join("power_ratio.csv");
    export::write_csv(&path, &["packet", "scan_u", "scan_deg", "method1", "method2"], &rows)?;
    report.add(out, &path);
    let m1 = report.metrics["method1_mean_power_ratio"];
    let m2 = report.metrics["method2_mean_power_ratio"];
    report.metrics.insert("method1_gain_percent".into(), (m1 / m2 - 1.0) * 100.0);

    if cfg.experiment.plots {
        for (m, series) in &plots {
            let s: Vec<Series> = series
                .iter()
                .map(|(name, pts)| Series { name, points: pts.clone() })
                .collect();
            let path = dir.join(format!("method{m}.svg"));
            export::write_text(&path, &export::line_plot_svg(&format!("Method {m} multibeams"), "direction (deg)", "gain (dB)", &s, Some(-40.0)))?;
            report.add(out, &path);
        }
    }
    report.finish(out, started)
}

/// Sensing paths for run `index` of a configuration: the explicit path list
/// if one is given, otherwise random scatterers.
pub fn sensing_scenario(cfg: &RootConfig, index: u64) -> Result<Scenario> {
    let s = &cfg.scenario;
    let paths: Vec<Multipath> = if s.paths.is_empty() {
        generate_scatterers(
            &mut rng_for(cfg.experiment.seed, STREAM_SCENE, index),
            &cfg.scatterer_ranges(),
            s.carrier_hz,
        )?
    } else {
        s.paths.iter().map(|p| p.to_multipath()).collect()
    };
    let scenario = Scenario {
        paths,
        tx_power_dbm: s.tx_power_dbm,
        noise_power_dbm: s.noise_power_dbm,
        pathloss_exponent: s.pathloss_exponent,
        carrier_hz: s.carrier_hz,
        rng_seed: derive_seed(cfg.experiment.seed, STREAM_NOISE, index),
    };
    scenario.validate(&cfg.ofdm_params())?;
    Ok(scenario)
}

/// Everything needed to sense a scene with fixed beams and calibrated thresholds.
#[derive(Debug, Clone)]
pub struct SensingRig {
    pub system: System,
    pub tx_beams: Vec<BeamVector>,
    pub rx_plan: RxScanPlan,
    pub dict: DelayDictionary,
    pub params: SensingParams,
    /// Anticipated peak `|lambda|` of a scatterer at 1 m.
    pub lambda_1m: f64,
    pub thresholds: DelayThresholds,
    pub comm_excluded: Vec<usize>,
    pub gains: GainModel,
}

/// One sensed scene.
#[derive(Debug, Clone)]
pub struct SensingRun {
    pub tensor: MeasurementTensor,
    pub cs: CsOutcome,
    pub dft: DftOutcome,
}

impl SensingRig {
    pub fn new(cfg: &RootConfig) -> Result<Self> {
        let system = System::new(cfg)?;
        let method = CombineMethod::from_number(cfg.combine.method)?;
        let tx_beams = system.multibeams(method)?;
        let rx_plan = system.rx_plan()?;
        let params = cfg.sensing_params();
        let dict = build_dictionary(cfg.ofdm.subcarriers, params.interpolation_factor)?;
        let comm_excluded = comm_exclusions(
            &system.schedule.directions,
            cfg.comm_direction_u(),
            cfg.sensing_width_u()?,
        );
        let lambda_1m = calibrate_lambda(&system, &tx_beams, &rx_plan, &dict, &params)?;
        let thresholds = DelayThresholds::from_pathloss(
            &dict,
            cfg.ofdm.bandwidth_hz,
            lambda_1m,
            cfg.scenario.pathloss_exponent,
            params.margin,
            (params.min_range, params.max_range),
        )?;
        let gains = GainModel {
            array: system.array,
            tx: tx_beams.clone(),
        };
        Ok(Self {
            system,
            tx_beams,
            rx_plan,
            dict,
            params,
            lambda_1m,
            thresholds,
            comm_excluded,
            gains,
        })
    }

    pub fn measure(&self, scenario: &Scenario, noise: bool) -> Result<MeasurementTensor> {
        collect_measurements(
            scenario,
            &self.system.array,
            &self.system.frame,
            &self.tx_beams,
            &self.rx_plan,
            noise.then_some(scenario.rng_seed),
        )
    }

    /// Both pipelines on one tensor. `noise_power_mw` enables the noise-level stopping rule of OMP.
    pub fn estimate(&self, tensor: &MeasurementTensor, noise_power_mw: Option<f64>) -> Result<(CsOutcome, DftOutcome)> {
        let cfg = &self.system.cfg;
        let omp = OmpParams {
            noise_floor: noise_power_mw.map(|p| p * cfg.sensing.noise_stop_factor),
            ..self.params.omp
        };
        let solver = match cfg.sensing.solver {
            SolverChoice::Omp => omp,
        };
        let mut cs = cs_pipeline(
            tensor,
            &self.system.frame,
            &self.rx_plan,
            &self.dict,
            &solver,
            &self.thresholds,
            &self.comm_excluded,
            cfg.scenario.carrier_hz,
            &self.params,
            cfg.sensing.fit_directions.then_some(&self.gains),
        )?;
        if !cs.estimates.is_empty() {
            postprocess_estimates(&mut cs.estimates, cfg.scenario.pathloss_exponent, self.params.floor_db)?;
        }
        let dft = dft_pipeline(tensor, &self.system.frame, &self.rx_plan, cfg.scenario.pathloss_exponent, &self.params)?;
        Ok((cs, dft))
    }

    pub fn run(&self, scenario: &Scenario, noise: bool) -> Result<SensingRun> {
        let tensor = self.measure(scenario, noise)?;
        let (cs, dft) = self.estimate(&tensor, noise.then(|| scenario.noise_power_mw()))?;
        Ok(SensingRun { tensor, cs, dft })
    }

    /// Spacing of adjacent sensing receive beams within a packet.
    pub fn receive_spacing(&self) -> f64 {
        let cfg = &self.system.cfg;
        let width = half_power_width_u(cfg.array.sensing_shape_elements).unwrap_or(f64::NAN);
        width * cfg.sensing.rx_spread / (cfg.frame.n_r.max(2) - 1) as f64
    }
}

/// Noise-free replica run: a single scatterer probed at spread directions
/// inside every scanning subbeam and at several sub-bin delay offsets. The
/// mean of the strongest `|lambda|` per probe, referred back to 1 m, is the
/// anticipated power that thresholds scale from.
fn calibrate_lambda(
    system: &System,
    tx_beams: &[BeamVector],
    rx_plan: &RxScanPlan,
    dict: &DelayDictionary,
    params: &SensingParams,
) -> Result<f64> {
    let cfg = &system.cfg;
    let width = cfg.sensing_width_u()?;
    let step = dict.distance_step(cfg.ofdm.bandwidth_hz);
    let d_ref = cfg.sensing.reference_distance_m;
    let exponent = cfg.scenario.pathloss_exponent;
    let g0 = reference_gain_1m(cfg.scenario.carrier_hz);
    let frame = FramePlan { n_t: 1, ..system.frame };
    let omp = OmpParams { noise_floor: None, ..params.omp };
    let probes: Vec<(usize, f64, f64)> = (0..tx_beams.len())
        .flat_map(|t| {
            let c = system.schedule.directions[t];
            (0..8).flat_map(move |i| {
                let u = c + ((i as f64 + 0.5) / 8.0 - 0.5) * width;
                [0.0, 0.25, 0.5].into_iter().map(move |f| (t, u, d_ref + f * step))
            })
        })
        .collect();
    let values = probes
        .par_iter()
        .map(|&(t, u, d)| -> Result<f64> {
            let theta = u.clamp(-1.0, 1.0).asin();
            let scenario = Scenario {
                paths: vec![Multipath {
                    amplitude: crate::C64::new((g0 * pathloss(d, exponent)?).sqrt(), 0.0),
                    delay: 2.0 * d / SPEED_OF_LIGHT,
                    doppler: 0.0,
                    aod: theta,
                    aoa: theta,
                }],
                tx_power_dbm: cfg.scenario.tx_power_dbm,
                noise_power_dbm: cfg.scenario.noise_power_dbm,
                pathloss_exponent: exponent,
                carrier_hz: cfg.scenario.carrier_hz,
                rng_seed: 0,
            };
            let plan = RxScanPlan {
                comm_direction: rx_plan.comm_direction,
                packets: vec![rx_plan.packets[t].clone()],
            };
            let y = collect_measurements(&scenario, &system.array, &frame, &tx_beams[t..t + 1], &plan, None)?;
            let problem = mmv_stack(&y, Combination::SensingSlots(0))?;
            let sol = mmv_omp(&problem, dict, &omp)?;
            let mut best: f64 = 0.0;
            for (i, _) in sol.support.iter().enumerate() {
                for s in 0..problem.slices.len() {
                    let seg: Vec<crate::C64> = (0..problem.n_d).map(|k| sol.rows[(i, s * problem.n_d + k)]).collect();
                    best = best.max(lambda_stats(&seg)?.mean.norm());
                }
            }
            Ok(best / pathloss(d, exponent)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if !(mean > 0.0) {
        return Err(Error::Numerical("threshold calibration saw no signal".into()));
    }
    Ok(mean)
}

/// Tolerances for matching estimates to ground truth.
#[derive(Debug, Clone, Copy)]
pub struct MatchTolerances {
    pub distance: f64,
    pub speed: f64,
    /// Equivalent-direction tolerance, normally the receive-beam spacing.
    pub direction: f64,
    /// Gate used when pairing estimates for RMS distance errors.
    pub rms_distance_gate: f64,
    pub rms_direction_gate: f64,
}

impl MatchTolerances {
    /// One interpolated delay cell, 2 m/s and the rig's receive-beam spacing.
    pub fn for_rig(rig: &SensingRig) -> Self {
        Self {
            distance: rig.dict.distance_step(rig.system.cfg.ofdm.bandwidth_hz),
            speed: 2.0,
            direction: rig.receive_spacing(),
            rms_distance_gate: 3.0,
            rms_direction_gate: 0.15,
        }
    }
}

/// Per-scene comparison against ground truth.
#[derive(Debug, Clone, Default, Serialize)]
pub struct TrialMetrics {
    pub scatterers: usize,
    /// Scatterers with a CS estimate inside all tolerances.
    pub detected: usize,
    pub cs_estimates: usize,
    pub dft_estimates: usize,
    pub cs_matched: usize,
    pub dft_matched: usize,
    pub cs_sq_distance_error: f64,
    pub dft_sq_distance_error: f64,
}

impl TrialMetrics {
    pub fn cs_rms_distance(&self) -> f64 {
        (self.cs_sq_distance_error / self.cs_matched.max(1) as f64).sqrt()
    }

    pub fn dft_rms_distance(&self) -> f64 {
        (self.dft_sq_distance_error / self.dft_matched.max(1) as f64).sqrt()
    }
}

/// Whether some estimate lies within all tolerances of `truth`.
pub fn is_detected(truth: &Multipath, est: &[TargetEstimate], carrier_hz: f64, tol: &MatchTolerances) -> bool {
    let u = truth.aoa.sin();
    est.iter().any(|e| {
        (e.distance - truth.distance()).abs() <= tol.distance + 1e-9
            && (e.speed - truth.speed(carrier_hz)).abs() <= tol.speed
            && (e.u - u).abs() <= tol.direction + 1e-9
    })
}

fn nearest_gated(truth: &Multipath, est: &[TargetEstimate], tol: &MatchTolerances) -> Option<f64> {
    let u = truth.aoa.sin();
    est.iter()
        .filter(|e| (e.distance - truth.distance()).abs() <= tol.rms_distance_gate && (e.u - u).abs() <= tol.rms_direction_gate)
        .map(|e| {
            let dd = e.distance - truth.distance();
            let du = e.u - u;
            ((dd / tol.rms_distance_gate).powi(2) + (du / tol.rms_direction_gate).powi(2), dd)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|x| x.1)
}

pub fn evaluate_trial(
    truth: &[Multipath],
    cs: &[TargetEstimate],
    dft: &[TargetEstimate],
    carrier_hz: f64,
    tol: &MatchTolerances,
) -> TrialMetrics {
    let mut m = TrialMetrics {
        scatterers: truth.len(),
        cs_estimates: cs.len(),
        dft_estimates: dft.len(),
        ..Default::default()
    };
    for p in truth {
        if is_detected(p, cs, carrier_hz, tol) {
            m.detected += 1;
        }
        if let Some(dd) = nearest_gated(p, cs, tol) {
            m.cs_matched += 1;
            m.cs_sq_distance_error += dd * dd;
        }
        if let Some(dd) = nearest_gated(p, dft, tol) {
            m.dft_matched += 1;
            m.dft_sq_distance_error += dd * dd;
        }
    }
    m
}

/// Generates, senses and scores scene `index`.
pub fn sensing_trial(rig: &SensingRig, index: u64, noise: bool) -> Result<(Scenario, SensingRun, TrialMetrics)> {
    let cfg = &rig.system.cfg;
    let scenario = sensing_scenario(cfg, index)?;
    let run = rig.run(&scenario, noise)?;
    let metrics = evaluate_trial(
        &scenario.paths,
        &run.cs.estimates,
        &run.dft.estimates,
        cfg.scenario.carrier_hz,
        &MatchTolerances::for_rig(rig),
    );
    Ok((scenario, run, metrics))
}

/// Monte-Carlo summary over scenes `0..runs`.
#[derive(Debug, Clone, Serialize)]
pub struct SensingSummary {
    pub runs: usize,
    pub mean_detected: f64,
    pub mean_scatterers: f64,
    pub cs_rms_distance: f64,
    pub dft_rms_distance: f64,
    pub trials: Vec<TrialMetrics>,
}

pub fn sensing_monte_carlo(rig: &SensingRig, runs: usize, noise: bool) -> Result<SensingSummary> {
    let trials = (0..runs as u64)
        .map(|i| sensing_trial(rig, i, noise).map(|t| t.2))
        .collect::<Result<Vec<_>>>()?;
    let n = runs.max(1) as f64;
    let cs_sq: f64 = trials.iter().map(|t| t.cs_sq_distance_error).sum();
    let cs_n: usize = trials.iter().map(|t| t.cs_matched).sum();
    let dft_sq: f64 = trials.iter().map(|t| t.dft_sq_distance_error).sum();
    let dft_n: usize = trials.iter().map(|t| t.dft_matched).sum();
    Ok(SensingSummary {
        runs,
        mean_detected: trials.iter().map(|t| t.detected as f64).sum::<f64>() / n,
        mean_scatterers: trials.iter().map(|t| t.scatterers as f64).sum::<f64>() / n,
        cs_rms_distance: (cs_sq / cs_n.max(1) as f64).sqrt(),
        dft_rms_distance: (dft_sq / dft_n.max(1) as f64).sqrt(),
        trials,
    })
}

fn estimate_rows(est: &[TargetEstimate]) -> Vec<Vec<String>> {
    est.iter()
        .map(|e| {
            vec![
                export::field(e.distance),
                export::field(e.speed),
                export::field(e.aoa.to_degrees()),
                export::field(e.power_db),
                e.source.as_str().to_string(),
            ]
        })
        .collect()
}

/// One scene in full detail plus Monte-Carlo statistics.
pub fn run_sensing_experiment(cfg: &RootConfig, out: &Path) -> Result<RunReport> {
    let started = Instant::now();
    let mut report = RunReport::new("sense", cfg)?;
    let rig = SensingRig::new(cfg)?;
    let dir = out.join("sensing");
    let noise = cfg.experiment.noise;
    let carrier = cfg.scenario.carrier_hz;
    let (scenario, run, metrics) = sensing_trial(&rig, 0, noise)?;

    let truth: Vec<Vec<f64>> = scenario
        .paths
        .iter()
        .map(|p| vec![p.distance(), p.speed(carrier), p.aoa.to_degrees(), p.delay, p.doppler])
        .collect();
    let path = dir.join("scatterers.csv");
    export::write_csv(&path, &["distance_m", "speed_mps", "aoa_deg", "delay_s", "doppler_hz"], &truth)?;
    report.add(out, &path);

    let mut all: Vec<TargetEstimate> = run.dft.estimates.clone();
    all.extend(run.cs.estimates.iter().copied());
    all.sort_by(|a, b| a.source.cmp(&b.source).then(a.distance.total_cmp(&b.distance)).then(a.u.total_cmp(&b.u)));
    let path = dir.join("estimates.csv");
    export::write_text_csv(&path, &["distance_m", "speed_mps", "aoa_deg", "power_db", "source"], &estimate_rows(&all))?;
    report.add(out, &path);

    for (name, grid) in [("dft_map_raw.csv", &run.dft.raw), ("dft_map_processed.csv", &run.dft.processed_db)] {
        let path = dir.join(name);
        export::write_grid(&path, "distance_m", &run.dft.distances, "aoa_deg=", &run.dft.directions.iter().map(|&u| deg(u)).collect::<Vec<_>>(), grid)?;
        report.add(out, &path);
    }

    // summed delay-Doppler periodogram over every slice
    let maps: Vec<_> = (0..run.tensor.n_t())
        .flat_map(|t| (0..run.tensor.n_r()).map(move |r| (t, r)))
        .map(|(t, r)| dft_delay_doppler(run.tensor.slice(t, r)))
        .collect();
    let doppler_map = aggregate_maps(&maps)?;
    let bin = SPEED_OF_LIGHT / (2.0 * cfg.ofdm.bandwidth_hz);
    let dists: Vec<f64> = (0..doppler_map.nrows()).map(|m| m as f64 * bin).collect();
    let fd_step = crate::sensing::doppler_bin_width(cfg.frame.n_d, cfg.frame.n_r, rig.system.frame.ofdm.symbol_period());
    let fds: Vec<f64> = (0..doppler_map.ncols()).map(|j| j as f64 * fd_step).collect();
    let path = dir.join("delay_doppler_map.csv");
    export::write_grid(&path, "distance_m", &dists, "doppler_hz=", &fds, &doppler_map)?;
    report.add(out, &path);
    let first_bin = first_bin_peak_fraction(&doppler_map, 20.0);

    let summary = sensing_monte_carlo(&rig, cfg.experiment.monte_carlo_runs, noise)?;
    let rows: Vec<Vec<f64>> = summary
        .trials
        .iter()
        .enumerate()
        .map(|(i, t)| {
            vec![
                i as f64,
                t.scatterers as f64,
                t.detected as f64,
                t.cs_estimates as f64,
                t.dft_estimates as f64,
                t.cs_rms_distance(),
                t.dft_rms_distance(),
            ]
        })
        .collect();
    let path = dir.join("monte_carlo.csv");
    export::write_csv(&path, &["run", "scatterers", "detected", "cs_estimates", "dft_estimates", "cs_rms_distance_m", "dft_rms_distance_m"], &rows)?;
    report.add(out, &path);

    if cfg.experiment.plots {
        let path = dir.join("dft_map_processed.svg");
        export::write_text(&path, &export::heatmap_svg("post-processed IDFT map (distance x direction)", &run.dft.processed_db))?;
        report.add(out, &path);
        let pts = |src: EstimateSource| -> Vec<(f64, f64)> {
            let mut v: Vec<(f64, f64)> = all.iter().filter(|e| e.source == src).map(|e| (e.distance, e.speed)).collect();
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
            v
        };
        let mut t: Vec<(f64, f64)> = scenario.paths.iter().map(|p| (p.distance(), p.speed(carrier))).collect();
        t.sort_by(|a, b| a.0.total_cmp(&b.0));
        let path = dir.join("speed_vs_distance.svg");
        let s = [Series { name: "truth", points: t }, Series { name: "cs", points: pts(EstimateSource::Cs) }];
        export::write_text(&path, &export::line_plot_svg("speed vs distance", "distance (m)", "speed (m/s)", &s, None))?;
        report.add(out, &path);
    }

    let m = &mut report.metrics;
    m.insert("scene_detected".into(), metrics.detected as f64);
    m.insert("scene_scatterers".into(), metrics.scatterers as f64);
    m.insert("mean_detected".into(), summary.mean_detected);
    m.insert("cs_rms_distance_m".into(), summary.cs_rms_distance);
    m.insert("dft_rms_distance_m".into(), summary.dft_rms_distance);
    m.insert("doppler_first_bin_peak_fraction".into(), first_bin);
    m.insert("lambda_1m".into(), rig.lambda_1m);
    report.finish(out, started)
}

/// Fraction of delay rows, among those within `depth_db` of the map maximum,
/// whose Doppler peak lies in the first (zero-Doppler) bin.
pub fn first_bin_peak_fraction(map: &nalgebra::DMatrix<f64>, depth_db: f64) -> f64 {
    let floor = map.max() * 10f64.powf(-depth_db / 10.0);
    let (mut rows, mut first) = (0usize, 0usize);
    for r in map.row_iter() {
        if r.max() <= floor || !(r.max() > 0.0) {
            continue;
        }
        rows += 1;
        if r.iter().position(|&x| x == r.max()) == Some(0) {
            first += 1;
        }
    }
    if rows == 0 {
        1.0
    } else {
        first as f64 / rows as f64
    }
}

/// Capacity table over a grid of power fractions and SNRs.
pub fn capacity_sweep(a_grid: &[f64], snr_grid: &[f64]) -> Result<Vec<crate::protocol::CapacityPoint>> {
    if a_grid.is_empty() || snr_grid.is_empty() {
        return Err(Error::Domain("capacity sweep needs non-empty grids".into()));
    }
    a_grid
        .iter()
        .flat_map(|&a| snr_grid.iter().map(move |&s| capacity_ratio(a, s)))
        .collect()
}

/// Power fractions `1/n, 2/n, ..., 1`.
pub fn fraction_grid(n: usize) -> Vec<f64> {
    (1..=n).map(|i| i as f64 / n as f64).collect()
}

/// Log-spaced linear SNRs between two dB values.
pub fn snr_grid_db(min_db: f64, max_db: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let t = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
            10f64.powf((min_db + t * (max_db - min_db)) / 10.0)
        })
        .collect()
}

pub fn run_capacity_sweep(cfg: &RootConfig, out: &Path) -> Result<RunReport> {
    let started = Instant::now();
    let mut report = RunReport::new("capacity", cfg)?;
    let e = &cfg.experiment;
    let a_grid = fraction_grid(e.capacity_a_points);
    let snr_grid = snr_grid_db(e.capacity_snr_min_db, e.capacity_snr_max_db, e.capacity_snr_points);
    let points = capacity_sweep(&a_grid, &snr_grid)?;
    let min_ratio = points.iter().map(|p| p.ratio).fold(f64::INFINITY, f64::min);
    if min_ratio < 1.0 - 1e-12 {
        return Err(Error::Numerical(format!("capacity ratio fell below 1: {min_ratio}")));
    }
    let rows: Vec<Vec<f64>> = points.iter().map(|p| vec![p.a, p.snr, p.c_mb, p.c_td, p.ratio]).collect();
    let path = out.join("capacity").join("sweep.csv");
    export::write_csv(&path, &["a", "snr", "c_mb", "c_td", "ratio"], &rows)?;
    report.add(out, &path);

    // the two operating points quoted alongside the comparison, for reference
    let quoted: Vec<Vec<f64>> = [5.0, 10.0]
        .iter()
        .map(|&db| {
            let p = capacity_ratio(0.5, 10f64.powf(db / 10.0))?;
            Ok(vec![db, p.a, p.snr, p.c_mb, p.c_td, p.ratio])
        })
        .collect::<Result<_>>()?;
    let path = out.join("capacity").join("quoted_points.csv");
    export::write_csv(&path, &["snr_db", "a", "snr", "c_mb", "c_td", "ratio"], &quoted)?;
    report.add(out, &path);

    if e.plots {
        let series: Vec<(String, Vec<(f64, f64)>)> = [0.1, 0.25, 0.5, 0.75]
            .iter()
            .map(|&a| {
                let pts = snr_grid
                    .iter()
                    .map(|&s| capacity_ratio(a, s).map(|p| (10.0 * s.log10(), p.ratio)))
                    .collect::<Result<Vec<_>>>()?;
                Ok((format!("a={a}"), pts))
            })
            .collect::<Result<_>>()?;
        let s: Vec<Series> = series.iter().map(|(n, p)| Series { name: n, points: p.clone() }).collect();
        let path = out.join("capacity").join("ratio.svg");
        export::write_text(&path, &export::line_plot_svg("C_MB / C_TD", "snr (dB)", "ratio", &s, None))?;
        report.add(out, &path);
    }
    report.metrics.insert("min_ratio".into(), min_ratio);
    report.metrics.insert("ratio_a0.5_5db".into(), quoted[0][5]);
    report.metrics.insert("ratio_a0.5_10db".into(), quoted[1][5]);
    report.finish(out, started)
}

/// All three experiments into one tree.
pub fn run_all(cfg: &RootConfig, out: &Path) -> Result<Vec<RunReport>> {
    Ok(vec![
        run_beams_experiment(cfg, out)?,
        run_sensing_experiment(cfg, out)?,
        run_capacity_sweep(cfg, out)?,
    ])
}

/// Output directory: explicit override or the configured one.
pub fn output_dir(cfg: &RootConfig, overridden: Option<PathBuf>) -> PathBuf {
    overridden.unwrap_or_else(|| PathBuf::from(&cfg.experiment.output_dir))
}
