//! Delay, Doppler and angle estimation from a [`MeasurementTensor`].
//!
//! Two pipelines are provided: a low-resolution periodogram ([`dft_pipeline`])
//! and on-grid compressive sensing with MMV-OMP ([`cs_pipeline`]). The CS
//! pipeline recovers a sparse delay profile per stacked problem, turns each
//! recovered row into a lag-1 correlation statistic per slice, thresholds it
//! against the anticipated power at that delay and finally merges slices into
//! targets.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::array_geometry::ArrayConfig;
use crate::beamforming::BeamVector;
use crate::channel::{pathloss, speed_from_doppler, SPEED_OF_LIGHT};
use crate::error::{Error, Result};
use crate::protocol::{FramePlan, MeasurementTensor, RxScanPlan};
use crate::C64;

/// Interpolated inverse-DFT dictionary `C[n, q] = exp(-j 2 pi n q / L_p)`.
#[derive(Clone)]
pub struct DelayDictionary {
    n: usize,
    lp: usize,
    ifft: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for DelayDictionary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DelayDictionary")
            .field("n", &self.n)
            .field("lp", &self.lp)
            .finish()
    }
}

pub fn build_dictionary(n: usize, interpolation_factor: usize) -> Result<DelayDictionary> {
    if n == 0 {
        return Err(Error::Domain("dictionary needs at least one subcarrier".into()));
    }
    if interpolation_factor == 0 {
        return Err(Error::invalid("sensing.interpolation_factor", "must be at least 1"));
    }
    let lp = n * interpolation_factor;
    Ok(DelayDictionary {
        n,
        lp,
        ifft: FftPlanner::new().plan_fft_inverse(lp),
    })
}

impl DelayDictionary {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lp(&self) -> usize {
        self.lp
    }

    pub fn interpolation_factor(&self) -> usize {
        self.lp / self.n
    }

    pub fn entry(&self, n: usize, q: usize) -> C64 {
        let k = (n * q) % self.lp;
        C64::from_polar(1.0, -2.0 * PI * k as f64 / self.lp as f64)
    }

    pub fn column(&self, q: usize) -> DVector<C64> {
        DVector::from_fn(self.n, |n, _| self.entry(n, q))
    }

    pub fn matrix(&self) -> DMatrix<C64> {
        DMatrix::from_fn(self.n, self.lp, |n, q| self.entry(n, q))
    }

    /// `C^H R` for an `N x J` matrix, one zero-padded inverse FFT per column.
    pub fn adjoint(&self, r: &DMatrix<C64>) -> Result<DMatrix<C64>> {
        if r.nrows() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                actual: r.nrows(),
            });
        }
        let mut out = DMatrix::zeros(self.lp, r.ncols());
        let mut buf = vec![C64::new(0.0, 0.0); self.lp];
        for j in 0..r.ncols() {
            buf.iter_mut().for_each(|x| *x = C64::new(0.0, 0.0));
            for (b, x) in buf.iter_mut().zip(r.column(j).iter()) {
                *b = *x;
            }
            self.ifft.process(&mut buf);
            out.set_column(j, &DVector::from_column_slice(&buf));
        }
        Ok(out)
    }

    /// Delay of bin `q`: `q N / (B L_p)`.
    pub fn delay(&self, q: usize, bandwidth_hz: f64) -> f64 {
        q as f64 * self.n as f64 / (bandwidth_hz * self.lp as f64)
    }

    /// Monostatic distance of bin `q`.
    pub fn distance(&self, q: usize, bandwidth_hz: f64) -> f64 {
        SPEED_OF_LIGHT * self.delay(q, bandwidth_hz) / 2.0
    }

    pub fn distance_step(&self, bandwidth_hz: f64) -> f64 {
        self.distance(1, bandwidth_hz)
    }
}

/// Magnitude of the delay-Doppler periodogram of one `N x N_d` slice:
/// inverse DFT over subcarriers, forward DFT over symbols.
pub fn dft_delay_doppler(y: &DMatrix<C64>) -> DMatrix<f64> {
    let (n, nd) = y.shape();
    if n == 0 || nd == 0 {
        return DMatrix::zeros(n, nd);
    }
    let mut planner = FftPlanner::new();
    let ifft = planner.plan_fft_inverse(n);
    let fft = planner.plan_fft_forward(nd);
    let mut tmp = y.clone();
    for j in 0..nd {
        let mut col: Vec<C64> = tmp.column(j).iter().copied().collect();
        ifft.process(&mut col);
        tmp.set_column(j, &DVector::from_vec(col));
    }
    let mut out = DMatrix::zeros(n, nd);
    for i in 0..n {
        let mut row: Vec<C64> = tmp.row(i).iter().copied().collect();
        fft.process(&mut row);
        for (j, v) in row.iter().enumerate() {
            out[(i, j)] = v.norm();
        }
    }
    out
}

/// Doppler resolution of the periodogram, `1 / (N_d N_r T_s)`.
pub fn doppler_bin_width(n_d: usize, n_r: usize, symbol_period: f64) -> f64 {
    1.0 / (n_d as f64 * n_r as f64 * symbol_period)
}

/// Elementwise sum of magnitude maps.
pub fn aggregate_maps(maps: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Domain("no maps to aggregate".into()))?;
    let mut sum = first.clone();
    for m in &maps[1..] {
        if m.shape() != first.shape() {
            return Err(Error::DimensionMismatch {
                expected: first.len(),
                actual: m.len(),
            });
        }
        sum += m;
    }
    Ok(sum)
}

/// Coherent average of groups of `group` consecutive columns of one slice.
/// Longer groups would smear the Doppler phase, so at most 4 are allowed.
pub fn coherent_column_average(y: &DMatrix<C64>, group: usize) -> Result<DMatrix<C64>> {
    if group == 0 || group > 4 {
        return Err(Error::Domain(format!("coherent group must be 1..=4 columns, got {group}")));
    }
    let cols = y.ncols() / group;
    Ok(DMatrix::from_fn(y.nrows(), cols, |i, j| {
        (0..group).map(|g| y[(i, j * group + g)]).sum::<C64>() / group as f64
    }))
}

/// Which slices are stacked into one MMV problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Combination {
    /// The `N_r - 1` sensing slots of one packet.
    SensingSlots(usize),
    /// The communication slot of every packet except the excluded ones.
    CommSlots { excluded: Vec<usize> },
}

/// Stacked measurements `R = [Y(s_1), ..., Y(s_J)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MmvProblem {
    pub r: DMatrix<C64>,
    pub combination: Combination,
    /// `(n_t, n_r)` of each stacked slice, 0-based.
    pub slices: Vec<(usize, usize)>,
    pub n_d: usize,
}

pub fn mmv_stack(tensor: &MeasurementTensor, combination: Combination) -> Result<MmvProblem> {
    let comm = tensor.n_r().checked_sub(1).ok_or_else(|| Error::Domain("empty tensor".into()))?;
    let slices: Vec<(usize, usize)> = match &combination {
        Combination::SensingSlots(t) => {
            if *t >= tensor.n_t() {
                return Err(Error::Domain(format!("packet {t} out of range")));
            }
            (0..comm).map(|r| (*t, r)).collect()
        }
        Combination::CommSlots { excluded } => (0..tensor.n_t())
            .filter(|t| !excluded.contains(t))
            .map(|t| (t, comm))
            .collect(),
    };
    if slices.is_empty() {
        return Err(Error::Domain("combination selects no slices".into()));
    }
    let (n, nd) = (tensor.subcarriers(), tensor.n_d());
    let mut r = DMatrix::zeros(n, nd * slices.len());
    for (i, &(t, rr)) in slices.iter().enumerate() {
        r.view_mut((0, i * nd), (n, nd)).copy_from(tensor.slice(t, rr));
    }
    Ok(MmvProblem {
        r,
        combination,
        slices,
        n_d: nd,
    })
}

/// Packets whose sensing subbeam lies strictly within `width_u` of the
/// communication direction; a subbeam exactly one width away is kept.
pub fn comm_exclusions(scan_directions: &[f64], comm_u: f64, width_u: f64) -> Vec<usize> {
    scan_directions
        .iter()
        .enumerate()
        .filter(|(_, u)| (**u - comm_u).abs() < width_u - 1e-9)
        .map(|(i, _)| i)
        .collect()
}

/// Row-sparse estimate of `U` in `R = C U`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSolution {
    pub lp: usize,
    /// Selected dictionary columns in selection order.
    pub support: Vec<usize>,
    /// Nonzero rows of `U`, aligned with `support`.
    pub rows: DMatrix<C64>,
    /// Relative Frobenius residual after each selection.
    pub residual_history: Vec<f64>,
    pub converged: bool,
}

impl SparseSolution {
    /// Recovered row `q` of `U`, if `q` is in the support.
    pub fn row(&self, q: usize) -> Option<Vec<C64>> {
        let i = self.support.iter().position(|&s| s == q)?;
        Some(self.rows.row(i).iter().copied().collect())
    }

    /// Full `L_p x J` matrix.
    pub fn dense(&self) -> DMatrix<C64> {
        let mut u = DMatrix::zeros(self.lp, self.rows.ncols());
        for (i, &q) in self.support.iter().enumerate() {
            u.set_row(q, &self.rows.row(i));
        }
        u
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OmpParams {
    pub max_sparsity: usize,
    /// Stop once `||R - C U||_F / ||R||_F` drops to this.
    pub residual_tol: f64,
    /// Stop once the mean residual power per entry drops to this (absolute).
    pub noise_floor: Option<f64>,
    /// After the greedy pass, try replacing each selected column by one at
    /// most this many bins away, keeping swaps that lower the residual. 0 disables.
    #[serde(default)]
    pub swap_window: usize,
}

impl Default for OmpParams {
    fn default() -> Self {
        Self {
            max_sparsity: 48,
            residual_tol: 1e-6,
            noise_floor: None,
            swap_window: 0,
        }
    }
}

/// Sparse recovery interface; OMP is the only implementation.
pub trait SparseSolver: Sync {
    fn solve(&self, problem: &MmvProblem, dict: &DelayDictionary) -> Result<SparseSolution>;
}

impl SparseSolver for OmpParams {
    fn solve(&self, problem: &MmvProblem, dict: &DelayDictionary) -> Result<SparseSolution> {
        mmv_omp(problem, dict, self)
    }
}

/// Simultaneous orthogonal matching pursuit with a modified Gram-Schmidt basis.
pub fn mmv_omp(problem: &MmvProblem, dict: &DelayDictionary, params: &OmpParams) -> Result<SparseSolution> {
    if params.max_sparsity == 0 {
        return Err(Error::invalid("sensing.max_sparsity", "must be at least 1"));
    }
    let r = &problem.r;
    if r.nrows() != dict.n() {
        return Err(Error::DimensionMismatch {
            expected: dict.n(),
            actual: r.nrows(),
        });
    }
    let cap = params.max_sparsity.min(dict.n());
    let norm0 = r.norm();
    let entries = (r.nrows() * r.ncols()) as f64;
    let mut support = Vec::new();
    let mut history = Vec::new();
    let mut basis: Vec<DVector<C64>> = Vec::new();
    // upper-triangular factor, column by column
    let mut tri: Vec<Vec<C64>> = Vec::new();
    let mut res = r.clone();
    let mut converged = norm0 == 0.0;
    let done = |res: &DMatrix<C64>| {
        let rn = res.norm();
        rn <= params.residual_tol * norm0 || params.noise_floor.is_some_and(|f| rn * rn <= f * entries)
    };
    if !converged && done(&res) {
        converged = true;
    }
    while !converged && support.len() < cap {
        let corr = dict.adjoint(&res)?;
        let best = (0..dict.lp())
            .filter(|q| !support.contains(q))
            .map(|q| (q, corr.row(q).norm_squared()))
            .max_by(|a, b| a.1.total_cmp(&b.1));
        let Some((q, score)) = best else { break };
        if !(score > 0.0) {
            break;
        }
        let mut v = dict.column(q);
        let mut coeffs = vec![C64::new(0.0, 0.0); basis.len()];
        for _ in 0..2 {
            for (k, b) in basis.iter().enumerate() {
                let c = b.dotc(&v);
                coeffs[k] += c;
                v -= b * c;
            }
        }
        let nv = v.norm();
        if nv < 1e-10 * (dict.n() as f64).sqrt() {
            break;
        }
        let qv = v / C64::new(nv, 0.0);
        let proj = qv.adjoint() * &res;
        res -= &qv * proj;
        coeffs.push(C64::new(nv, 0.0));
        tri.push(coeffs);
        basis.push(qv);
        support.push(q);
        history.push(if norm0 > 0.0 { res.norm() / norm0 } else { 0.0 });
        converged = done(&res);
    }
    let s = support.len();
    let mut rows = DMatrix::zeros(s, r.ncols());
    if s > 0 {
        let qmat = DMatrix::from_columns(&basis);
        let rhs = qmat.adjoint() * r;
        for i in (0..s).rev() {
            let mut row = rhs.row(i).clone_owned();
            for j in i + 1..s {
                let rij = tri[j][i];
                row -= rows.row(j) * rij;
            }
            rows.set_row(i, &(row / tri[i][i]));
        }
    }
    if params.swap_window > 0 && s > 1 {
        if let Some((refined, refined_rows, res)) = refine_support(r, dict, &support, params.swap_window)? {
            support = refined;
            rows = refined_rows;
            history.push(if norm0 > 0.0 { res / norm0 } else { 0.0 });
        }
    }
    Ok(SparseSolution {
        lp: dict.lp(),
        support,
        rows,
        residual_history: history,
        converged,
    })
}

/// Least-squares rows of `R` on the columns `support` and the residual norm.
fn fit_support(r: &DMatrix<C64>, dict: &DelayDictionary, support: &[usize]) -> Result<(DMatrix<C64>, f64)> {
    let cols: Vec<DVector<C64>> = support.iter().map(|&q| dict.column(q)).collect();
    let qr = DMatrix::from_columns(&cols).qr();
    let (q, tri) = (qr.q(), qr.r());
    let proj = q.adjoint() * r;
    let res = (r - &q * &proj).norm();
    let rows = tri
        .solve_upper_triangular(&proj)
        .ok_or_else(|| Error::Numerical("selected dictionary columns are dependent".into()))?;
    Ok((rows, res))
}

/// Single-column swap search around the greedy support. Returns the improved
/// support, its rows and residual, or `None` if no swap helped.
fn refine_support(
    r: &DMatrix<C64>,
    dict: &DelayDictionary,
    start: &[usize],
    window: usize,
) -> Result<Option<(Vec<usize>, DMatrix<C64>, f64)>> {
    let lp = dict.lp();
    let mut support = start.to_vec();
    let (_, mut best) = fit_support(r, dict, &support)?;
    let mut changed = false;
    for _ in 0..4 * support.len() {
        let mut improved = false;
        for i in 0..support.len() {
            let q0 = support[i];
            let mut pick = q0;
            let lo = q0.saturating_sub(window);
            let hi = (q0 + window).min(lp - 1);
            for cand in lo..=hi {
                if support.contains(&cand) {
                    continue;
                }
                support[i] = cand;
                let (_, e) = fit_support(r, dict, &support)?;
                if e < best * (1.0 - 1e-9) {
                    best = e;
                    pick = cand;
                }
            }
            support[i] = pick;
            improved |= pick != q0;
        }
        if !improved {
            break;
        }
        changed = true;
    }
    if !changed {
        return Ok(None);
    }
    let (rows, res) = fit_support(r, dict, &support)?;
    Ok(Some((support, rows, res)))
}

/// Lag-1 correlation statistic of one recovered row segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaStats {
    pub mean: C64,
    /// Mean squared modulus of the deviations from `mean`.
    pub spread: f64,
}

pub fn lambda_stats(row: &[C64]) -> Result<LambdaStats> {
    if row.len() < 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            actual: row.len(),
        });
    }
    let lambdas: Vec<C64> = row.windows(2).map(|w| w[0].conj() * w[1]).collect();
    let k = lambdas.len() as f64;
    let mean = lambdas.iter().sum::<C64>() / k;
    let spread = lambdas.iter().map(|l| (l - mean).norm_sqr()).sum::<f64>() / k;
    Ok(LambdaStats { mean, spread })
}

/// `arg(lambda) / (2 pi N_r T_s)`
pub fn estimate_doppler(lambda: C64, n_r: usize, symbol_period: f64) -> Result<f64> {
    if lambda.norm() == 0.0 || !lambda.norm().is_finite() {
        return Err(Error::Numerical("Doppler of a zero correlation is undefined".into()));
    }
    Ok(lambda.arg() / (2.0 * PI * n_r as f64 * symbol_period))
}

/// Per-bin detection thresholds on `|lambda|`.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayThresholds {
    pub eta: Vec<f64>,
}

impl DelayThresholds {
    /// `eta_q = margin * lambda_1m * pathloss(d_q)` inside `[min_range, max_range]`, infinite outside.
    pub fn from_pathloss(
        dict: &DelayDictionary,
        bandwidth_hz: f64,
        lambda_1m: f64,
        exponent: f64,
        margin: f64,
        range: (f64, f64),
    ) -> Result<Self> {
        if !(margin > 0.0 && lambda_1m > 0.0) {
            return Err(Error::invalid("sensing.margin", "threshold must be positive"));
        }
        let eta = (0..dict.lp())
            .map(|q| {
                let d = dict.distance(q, bandwidth_hz);
                if d < range.0 || d > range.1 || d <= 0.0 {
                    Ok(f64::INFINITY)
                } else {
                    Ok(margin * lambda_1m * pathloss(d, exponent)?)
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self { eta })
    }

    pub fn uniform(lp: usize, eta: f64) -> Self {
        Self { eta: vec![eta; lp] }
    }
}

/// One delay bin exceeding its threshold in one slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceDetection {
    pub q: usize,
    pub n_t: usize,
    pub n_r: usize,
    pub lambda: C64,
    pub spread: f64,
}

/// Compares every recovered row, slice by slice, against its bin threshold.
pub fn detect_delays(
    solution: &SparseSolution,
    problem: &MmvProblem,
    thresholds: &DelayThresholds,
) -> Result<Vec<SliceDetection>> {
    if thresholds.eta.len() != solution.lp {
        return Err(Error::DimensionMismatch {
            expected: solution.lp,
            actual: thresholds.eta.len(),
        });
    }
    let nd = problem.n_d;
    let mut out = Vec::new();
    for (i, &q) in solution.support.iter().enumerate() {
        for (s, &(n_t, n_r)) in problem.slices.iter().enumerate() {
            let seg: Vec<C64> = (0..nd).map(|d| solution.rows[(i, s * nd + d)]).collect();
            let st = lambda_stats(&seg)?;
            if st.mean.norm() >= thresholds.eta[q] {
                out.push(SliceDetection {
                    q,
                    n_t,
                    n_r,
                    lambda: st.mean,
                    spread: st.spread,
                });
            }
        }
    }
    out.sort_by_key(|d| (d.q, d.n_t, d.n_r));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimateSource {
    Dft,
    Cs,
}

impl EstimateSource {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimateSource::Dft => "dft",
            EstimateSource::Cs => "cs",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TargetEstimate {
    pub distance: f64,
    pub speed: f64,
    /// Equivalent direction of arrival.
    pub u: f64,
    pub aoa: f64,
    /// Power in dB; raw until [`postprocess_estimates`] normalizes it.
    pub power_db: f64,
    pub source: EstimateSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssociationParams {
    /// Slots closer than this in equivalent direction are neighbours.
    pub neighbour_gap: f64,
    /// Peaks this far below the strongest detection at the same delay are dropped.
    pub dominance_db: f64,
}

impl Default for AssociationParams {
    fn default() -> Self {
        Self {
            neighbour_gap: 0.075,
            dominance_db: 20.0,
        }
    }
}

/// Two-way beam gains `|w_t^T a(u)|^2 |w_r^T a(u)|^2` of every slice, used to
/// refine directions. Receive beams are steered single beams.
#[derive(Debug, Clone)]
pub struct GainModel {
    pub array: ArrayConfig,
    /// Transmit beam of each packet.
    pub tx: Vec<BeamVector>,
}

impl GainModel {
    pub fn slice_gain(&self, rx_plan: &RxScanPlan, n_t: usize, n_r: usize, u: f64) -> f64 {
        let rx = BeamVector::steered(&self.array, rx_plan.direction(n_t, n_r));
        self.tx[n_t].response_at(&self.array, u).norm_sqr() * rx.response_at(&self.array, u).norm_sqr()
    }
}

struct Point {
    q: usize,
    u: f64,
    lambda: C64,
    power: f64,
    /// Spread relative to `|lambda|^2`; small for a single Doppler.
    impurity: f64,
    slices: Vec<(usize, usize)>,
}

/// Direction in `[lo, hi]` whose gain profile best explains the observed
/// powers up to a common scale.
fn fit_direction(
    cluster: &[&Point],
    gains: &GainModel,
    rx_plan: &RxScanPlan,
    lo: f64,
    hi: f64,
) -> Option<f64> {
    const STEPS: usize = 200;
    let mut best: Option<(f64, f64)> = None;
    for i in 0..=STEPS {
        let u = lo + (hi - lo) * i as f64 / STEPS as f64;
        let g: Vec<f64> = cluster
            .iter()
            .map(|p| {
                p.slices.iter().map(|&(t, r)| gains.slice_gain(rx_plan, t, r, u)).sum::<f64>() / p.slices.len() as f64
            })
            .collect();
        let gg: f64 = g.iter().map(|x| x * x).sum();
        if !(gg > 0.0) {
            continue;
        }
        let wg: f64 = cluster.iter().zip(&g).map(|(p, x)| p.power * x).sum();
        let score = wg * wg / gg;
        if best.is_none_or(|b| score > b.1) {
            best = Some((u, score));
        }
    }
    best.map(|b| b.0)
}

/// Merges slice detections into targets. Detections with the same bin and
/// receive direction are averaged; a target is a local maximum of `|lambda|`
/// over neighbouring bins and directions that is not `dominance_db` below the
/// strongest detection of its neighbouring bins. Its distance comes from the
/// bin, its speed from the most single-Doppler `lambda` among same-bin
/// detections within `neighbour_gap`, and its direction from those detections:
/// a fit against the beam gains when `gains` is given, otherwise their
/// power-weighted mean.
pub fn associate_aoa(
    detections: &[SliceDetection],
    rx_plan: &RxScanPlan,
    dict: &DelayDictionary,
    frame: &FramePlan,
    carrier_hz: f64,
    params: &AssociationParams,
    gains: Option<&GainModel>,
) -> Result<Vec<TargetEstimate>> {
    if let Some(g) = gains {
        if g.tx.len() != rx_plan.n_t() {
            return Err(Error::DimensionMismatch {
                expected: rx_plan.n_t(),
                actual: g.tx.len(),
            });
        }
    }
    let mut merged: BTreeMap<(usize, i64), (f64, C64, f64, Vec<(usize, usize)>)> = BTreeMap::new();
    for d in detections {
        if d.n_t >= rx_plan.n_t() || d.n_r >= rx_plan.n_r() {
            return Err(Error::Domain(format!(
                "detection at slice ({}, {}) has no receive direction",
                d.n_t, d.n_r
            )));
        }
        let u = rx_plan.direction(d.n_t, d.n_r);
        let key = (d.q, (u * 1e9).round() as i64);
        let e = merged.entry(key).or_insert((u, C64::new(0.0, 0.0), 0.0, Vec::new()));
        e.1 += d.lambda;
        e.2 += d.spread;
        e.3.push((d.n_t, d.n_r));
    }
    let points: Vec<Point> = merged
        .into_iter()
        .map(|((q, _), (u, sum, spread, slices))| {
            let n = slices.len() as f64;
            let lambda = sum / n;
            let power = lambda.norm();
            Point {
                q,
                u,
                lambda,
                power,
                impurity: spread / n / (power * power),
                slices,
            }
        })
        .collect();
    let near = |a: usize, b: usize| a.abs_diff(b) <= 1;
    let gap = params.neighbour_gap;
    let ratio = 10f64.powf(-params.dominance_db / 10.0);
    let mut out = Vec::new();
    for (i, p) in points.iter().enumerate() {
        let beaten = points.iter().enumerate().any(|(j, o)| {
            j != i && near(p.q, o.q) && (o.u - p.u).abs() <= gap && (o.power > p.power || (o.power == p.power && j < i))
        });
        if beaten {
            continue;
        }
        let strongest = points
            .iter()
            .filter(|o| near(p.q, o.q))
            .map(|o| o.power)
            .fold(0.0, f64::max);
        if p.power < ratio * strongest {
            continue;
        }
        let cluster: Vec<&Point> = points.iter().filter(|o| o.q == p.q && (o.u - p.u).abs() <= gap).collect();
        let purest = cluster
            .iter()
            .min_by(|a, b| a.impurity.total_cmp(&b.impurity))
            .map_or(p.lambda, |o| o.lambda);
        let centroid = cluster.iter().map(|o| o.power * o.u).sum::<f64>() / cluster.iter().map(|o| o.power).sum::<f64>();
        let u_hat = match gains {
            Some(g) => fit_direction(&cluster, g, rx_plan, (p.u - gap).max(-1.0), (p.u + gap).min(1.0)).unwrap_or(centroid),
            None => centroid,
        };
        let fd = estimate_doppler(purest, frame.n_r, frame.ofdm.symbol_period())?;
        out.push(TargetEstimate {
            distance: dict.distance(p.q, frame.ofdm.bandwidth_hz),
            speed: speed_from_doppler(fd, carrier_hz),
            u: u_hat,
            aoa: u_hat.clamp(-1.0, 1.0).asin(),
            power_db: 10.0 * p.power.log10(),
            source: EstimateSource::Cs,
        });
    }
    Ok(out)
}

fn to_db(x: f64) -> f64 {
    10.0 * x.max(1e-300).log10()
}

/// Pathloss compensation, normalization to the maximum and clipping at
/// `floor_db`. Rows of `power` (linear) are delay bins at `distances`.
pub fn postprocess(power: &DMatrix<f64>, distances: &[f64], exponent: f64, floor_db: f64) -> Result<DMatrix<f64>> {
    if power.is_empty() {
        return Err(Error::Domain("nothing to post-process".into()));
    }
    if !(floor_db < 0.0) {
        return Err(Error::invalid("sensing.floor_db", "must be negative"));
    }
    if distances.len() != power.nrows() {
        return Err(Error::DimensionMismatch {
            expected: power.nrows(),
            actual: distances.len(),
        });
    }
    let mut comp = power.clone();
    for (i, &d) in distances.iter().enumerate() {
        let g = pathloss(d, exponent)?;
        comp.row_mut(i).iter_mut().for_each(|x| *x /= g);
    }
    let max = comp.max();
    if !(max > 0.0) {
        return Ok(DMatrix::from_element(power.nrows(), power.ncols(), floor_db));
    }
    Ok(comp.map(|x| to_db(x / max).max(floor_db)))
}

/// [`postprocess`] applied to a list of estimates whose `power_db` is raw.
pub fn postprocess_estimates(estimates: &mut [TargetEstimate], exponent: f64, floor_db: f64) -> Result<()> {
    let power = DMatrix::from_iterator(estimates.len(), 1, estimates.iter().map(|e| 10f64.powf(e.power_db / 10.0)));
    let distances: Vec<f64> = estimates.iter().map(|e| e.distance.max(1e-3)).collect();
    let out = postprocess(&power, &distances, exponent, floor_db)?;
    for (e, p) in estimates.iter_mut().zip(out.iter()) {
        e.power_db = *p;
    }
    Ok(())
}

/// Knobs of both pipelines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensingParams {
    pub interpolation_factor: usize,
    pub omp: OmpParams,
    /// Threshold as a fraction of the anticipated `|lambda|`.
    pub margin: f64,
    pub min_range: f64,
    pub max_range: f64,
    pub floor_db: f64,
    pub association: AssociationParams,
}

impl Default for SensingParams {
    fn default() -> Self {
        Self {
            interpolation_factor: 2,
            omp: OmpParams::default(),
            margin: 0.06,
            min_range: 0.5,
            max_range: 48.0,
            floor_db: -10.0,
            association: AssociationParams::default(),
        }
    }
}

/// Everything the CS pipeline produced.
#[derive(Debug, Clone)]
pub struct CsOutcome {
    pub problems: Vec<MmvProblem>,
    pub solutions: Vec<SparseSolution>,
    pub detections: Vec<SliceDetection>,
    pub estimates: Vec<TargetEstimate>,
}

/// All per-packet sensing-slot problems plus the communication-slot problem.
#[allow(clippy::too_many_arguments)]
pub fn cs_pipeline(
    tensor: &MeasurementTensor,
    frame: &FramePlan,
    rx_plan: &RxScanPlan,
    dict: &DelayDictionary,
    solver: &dyn SparseSolver,
    thresholds: &DelayThresholds,
    comm_excluded: &[usize],
    carrier_hz: f64,
    params: &SensingParams,
    gains: Option<&GainModel>,
) -> Result<CsOutcome> {
    let mut combos: Vec<Combination> = (0..tensor.n_t()).map(Combination::SensingSlots).collect();
    if comm_excluded.len() < tensor.n_t() {
        combos.push(Combination::CommSlots {
            excluded: comm_excluded.to_vec(),
        });
    }
    let problems = combos
        .into_iter()
        .map(|c| mmv_stack(tensor, c))
        .collect::<Result<Vec<_>>>()?;
    let solutions = problems
        .par_iter()
        .map(|p| solver.solve(p, dict))
        .collect::<Result<Vec<_>>>()?;
    let mut detections = Vec::new();
    for (p, s) in problems.iter().zip(&solutions) {
        detections.extend(detect_delays(s, p, thresholds)?);
    }
    let estimates = associate_aoa(&detections, rx_plan, dict, frame, carrier_hz, &params.association, gains)?;
    Ok(CsOutcome {
        problems,
        solutions,
        detections,
        estimates,
    })
}

/// Distance-direction power map of the periodogram pipeline.
#[derive(Debug, Clone)]
pub struct DftOutcome {
    /// Rows are delay bins `1..`, columns receive directions in ascending order.
    pub raw: DMatrix<f64>,
    pub processed_db: DMatrix<f64>,
    pub distances: Vec<f64>,
    pub directions: Vec<f64>,
    pub estimates: Vec<TargetEstimate>,
}

/// Periodogram of every slice, power summed over Doppler bins, slices sharing a
/// receive direction averaged, then post-processed and peak-picked.
pub fn dft_pipeline(
    tensor: &MeasurementTensor,
    frame: &FramePlan,
    rx_plan: &RxScanPlan,
    exponent: f64,
    params: &SensingParams,
) -> Result<DftOutcome> {
    let n = tensor.subcarriers();
    let bin = SPEED_OF_LIGHT / (2.0 * frame.ofdm.bandwidth_hz);
    let rows: Vec<usize> = (1..n)
        .filter(|&m| {
            let d = m as f64 * bin;
            d >= params.min_range && d <= params.max_range
        })
        .collect();
    if rows.is_empty() {
        return Err(Error::invalid("sensing.max_range", "no delay bins inside the sensing range"));
    }
    let mut cols: BTreeMap<i64, (f64, DVector<f64>, usize)> = BTreeMap::new();
    for t in 0..tensor.n_t() {
        for r in 0..tensor.n_r() {
            let map = dft_delay_doppler(tensor.slice(t, r));
            let profile = DVector::from_iterator(rows.len(), rows.iter().map(|&m| map.row(m).norm_squared()));
            let u = rx_plan.direction(t, r);
            let e = cols
                .entry((u * 1e9).round() as i64)
                .or_insert((u, DVector::zeros(rows.len()), 0));
            e.1 += profile;
            e.2 += 1;
        }
    }
    let directions: Vec<f64> = cols.values().map(|c| c.0).collect();
    let raw = DMatrix::from_columns(&cols.values().map(|(_, p, k)| p / *k as f64).collect::<Vec<_>>());
    let distances: Vec<f64> = rows.iter().map(|&m| m as f64 * bin).collect();
    let processed_db = postprocess(&raw, &distances, exponent, params.floor_db)?;
    let estimates = map_peaks(&processed_db, &distances, &directions, params);
    Ok(DftOutcome {
        raw,
        processed_db,
        distances,
        directions,
        estimates,
    })
}

fn map_peaks(db: &DMatrix<f64>, distances: &[f64], directions: &[f64], params: &SensingParams) -> Vec<TargetEstimate> {
    let (nr, nc) = db.shape();
    let gap = params.association.neighbour_gap;
    let mut out = Vec::new();
    for i in 0..nr {
        for j in 0..nc {
            let v = db[(i, j)];
            if v <= params.floor_db {
                continue;
            }
            let mut peak = true;
            'scan: for i2 in i.saturating_sub(1)..(i + 2).min(nr) {
                for j2 in 0..nc {
                    if (i2, j2) == (i, j) || (directions[j2] - directions[j]).abs() > gap {
                        continue;
                    }
                    let v2 = db[(i2, j2)];
                    if v2 > v || (v2 == v && (i2, j2) < (i, j)) {
                        peak = false;
                        break 'scan;
                    }
                }
            }
            if !peak {
                continue;
            }
            let (mut sw, mut su) = (0.0, 0.0);
            for j2 in 0..nc {
                if (directions[j2] - directions[j]).abs() <= gap && db[(i, j2)] > params.floor_db {
                    let w = 10f64.powf(db[(i, j2)] / 10.0);
                    sw += w;
                    su += w * directions[j2];
                }
            }
            let u = su / sw;
            out.push(TargetEstimate {
                distance: distances[i],
                speed: 0.0,
                u,
                aoa: u.clamp(-1.0, 1.0).asin(),
                power_db: v,
                source: EstimateSource::Dft,
            });
        }
    }
    out
}
