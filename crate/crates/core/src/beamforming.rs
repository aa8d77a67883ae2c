//! Beamforming-vector synthesis.
//!
//! The core solver is a weighted least-squares fit of the array pattern to a
//! desired response under a unit-power constraint on the weights. With the
//! free complex scale `c_s` eliminated, the optimum is the normalized
//! weighted LS solution `normalize(pinv(D A) D v)`. When only the magnitude
//! of the desired response is known, [`ils_design`] alternates that fit with
//! re-extraction of the phases from the achieved pattern.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::array_geometry::{ArrayConfig, DirectionGrid, ResponseMatrix};
use crate::error::{Error, Result};
use crate::C64;

/// Relative singular-value cutoff for pseudo-inverses.
pub const PINV_RCOND: f64 = 1e-12;

/// Unit-norm complex antenna weight vector.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamVector {
    coeffs: DVector<C64>,
}

impl BeamVector {
    /// Normalizes `coeffs` to unit 2-norm.
    pub fn new(coeffs: DVector<C64>) -> Result<Self> {
        let norm = coeffs.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Numerical(format!(
                "cannot normalize beam vector with norm {norm}"
            )));
        }
        Ok(Self {
            coeffs: coeffs / C64::new(norm, 0.0),
        })
    }

    /// Single beam matched to equivalent direction `u`: `conj(a(u)) / sqrt(M)`.
    pub fn steered(config: &ArrayConfig, u: f64) -> Self {
        let a = config.response_u(u);
        let scale = 1.0 / (config.num_elements as f64).sqrt();
        Self {
            coeffs: a.map(|x| x.conj() * scale),
        }
    }

    pub fn coeffs(&self) -> &DVector<C64> {
        &self.coeffs
    }

    pub fn into_inner(self) -> DVector<C64> {
        self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Multiplies every coefficient by `exp(j gamma)`.
    pub fn phase_rotated(&self, gamma: f64) -> Self {
        let r = C64::from_polar(1.0, gamma);
        Self {
            coeffs: self.coeffs.map(|x| x * r),
        }
    }

    /// Response `a^T(u) w` at a single equivalent direction.
    pub fn response_at(&self, config: &ArrayConfig, u: f64) -> C64 {
        config.response_u(u).dot(&self.coeffs)
    }
}

/// Desired pattern magnitude over the `K` directions of a response matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DesiredMagnitude {
    values: Vec<f64>,
}

impl DesiredMagnitude {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Domain(
                "desired magnitude must be finite and nonnegative".into(),
            ));
        }
        if values.iter().all(|&v| v == 0.0) {
            return Err(Error::ZeroMagnitude);
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Unit-modulus phase vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseVector {
    phases: DVector<C64>,
}

impl PhaseVector {
    pub fn ones(len: usize) -> Self {
        Self {
            phases: DVector::from_element(len, C64::new(1.0, 0.0)),
        }
    }

    pub fn new(phases: DVector<C64>) -> Result<Self> {
        if phases.iter().any(|p| (p.norm() - 1.0).abs() > 1e-12) {
            return Err(Error::Domain("phase vector entries must be unit modulus".into()));
        }
        Ok(Self { phases })
    }

    /// Element-wise phase of `x`; zero entries map to phase 0.
    pub fn from_response(x: &DVector<C64>) -> Self {
        Self {
            phases: x.map(|z| {
                let r = z.norm();
                if r > 0.0 {
                    z / r
                } else {
                    C64::new(1.0, 0.0)
                }
            }),
        }
    }

    pub fn phases(&self) -> &DVector<C64> {
        &self.phases
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }
}

/// Real positive diagonal weighting, normalized to unit mean power.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    diag: Vec<f64>,
}

impl WeightMatrix {
    pub fn identity(len: usize) -> Self {
        Self {
            diag: vec![1.0; len],
        }
    }

    /// Rescales `diag` so that the mean of its squares is one.
    pub fn new(diag: Vec<f64>) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::Domain("weight matrix must be non-empty".into()));
        }
        if diag.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            return Err(Error::Domain("weights must be finite and positive".into()));
        }
        let mean_sq = diag.iter().map(|d| d * d).sum::<f64>() / diag.len() as f64;
        let s = mean_sq.sqrt();
        Ok(Self {
            diag: diag.into_iter().map(|d| d / s).collect(),
        })
    }

    /// Exponential taper `exp(|q - center| / scale)`, smallest at `center`.
    pub fn exp_taper(len: usize, center: usize, scale: f64) -> Result<Self> {
        Self::new(
            (0..len)
                .map(|q| ((q as f64 - center as f64).abs() / scale).exp())
                .collect(),
        )
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombineMethod {
    /// Separate subbeams joined with a vector-level phase alignment.
    Separated,
    /// One ILS run on the joint multibeam magnitude.
    Joint,
}

impl CombineMethod {
    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Self::Separated),
            2 => Ok(Self::Joint),
            _ => Err(Error::invalid("combine.method", format!("expected 1 or 2, got {n}"))),
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Self::Separated => 1,
            Self::Joint => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombineSpec {
    /// Fraction of power given to the communication subbeam.
    pub rho: f64,
    /// Communication direction as an equivalent direction.
    pub comm_direction: f64,
    pub method: CombineMethod,
}

impl CombineSpec {
    pub fn new(rho: f64, comm_direction: f64, method: CombineMethod) -> Result<Self> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::invalid("combine.rho", format!("{rho} not in [0, 1]")));
        }
        if !(comm_direction.abs() <= 1.0) {
            return Err(Error::NotPhysical(comm_direction.abs()));
        }
        Ok(Self {
            rho,
            comm_direction,
            method,
        })
    }
}

/// Output of the constrained weighted LS fit.
#[derive(Debug, Clone)]
pub struct LsSolution {
    pub w: BeamVector,
    pub c_s: C64,
    /// `|| D (c_s A w - v) ||_2`
    pub residual: f64,
}

/// Precomputed pseudo-inverse of `D A`, reusable across many right-hand sides.
#[derive(Debug, Clone)]
pub struct LsDesign {
    weighted: DMatrix<C64>,
    pinv: DMatrix<C64>,
    weights: Vec<f64>,
}

impl LsDesign {
    pub fn new(a: &ResponseMatrix, d: &WeightMatrix) -> Result<Self> {
        let k = a.num_directions();
        if d.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                actual: d.len(),
            });
        }
        let mut weighted = a.matrix().clone();
        for (q, &dq) in d.diag().iter().enumerate() {
            weighted.row_mut(q).scale_mut(dq);
        }
        let pinv = pseudo_inverse(&weighted)?;
        Ok(Self {
            weighted,
            pinv,
            weights: d.diag().to_vec(),
        })
    }

    pub fn solve(&self, v: &DVector<C64>) -> Result<LsSolution> {
        if v.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                actual: v.len(),
            });
        }
        let dv = self.weight(v);
        let raw = &self.pinv * &dv;
        if raw.norm() == 0.0 {
            return Err(Error::ZeroMagnitude);
        }
        let w = BeamVector::new(raw)?;
        let (c_s, residual) = self.fit_scale(&w, &dv);
        Ok(LsSolution { w, c_s, residual })
    }

    fn weight(&self, v: &DVector<C64>) -> DVector<C64> {
        DVector::from_iterator(
            v.len(),
            v.iter().zip(&self.weights).map(|(x, d)| x * *d),
        )
    }

    /// Optimal scale for a fixed `w` and the resulting residual.
    fn fit_scale(&self, w: &BeamVector, dv: &DVector<C64>) -> (C64, f64) {
        let daw = &self.weighted * w.coeffs();
        let energy = daw.norm_squared();
        let c_s = if energy > 0.0 {
            daw.dotc(dv) / energy
        } else {
            C64::new(0.0, 0.0)
        };
        let residual = (daw * c_s - dv).norm();
        (c_s, residual)
    }

    /// Weighted residual of an arbitrary unit vector with its optimal scale.
    pub fn residual_of(&self, w: &BeamVector, v: &DVector<C64>) -> f64 {
        self.fit_scale(w, &self.weight(v)).1
    }
}

/// Pseudo-inverse of a full-rank matrix. Fails if any of the `min(K, M)` singular
/// values falls below `PINV_RCOND * sigma_max`.
pub fn pseudo_inverse(m: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    // singular values only gate the rank; nalgebra's complex SVD vectors are
    // accurate to ~1e-8, so the inverse itself comes from Householder QR
    let sigma = m.singular_values();
    let sigma_max = sigma.max();
    let sigma_min = sigma.min();
    if !(sigma_max > 0.0) || sigma_min <= PINV_RCOND * sigma_max {
        return Err(Error::SingularDesign {
            sigma_min,
            sigma_max,
        });
    }
    let tall = m.nrows() >= m.ncols();
    let qr = if tall { m.clone() } else { m.adjoint() }.qr();
    let left = qr
        .r()
        .solve_upper_triangular(&qr.q().adjoint())
        .ok_or(Error::SingularDesign { sigma_min, sigma_max })?;
    Ok(if tall { left } else { left.adjoint() })
}

/// Unit-norm weights minimizing `|| D (c_s A w - v) ||` over `w` and `c_s`.
pub fn generalized_ls(a: &ResponseMatrix, v: &DVector<C64>, d: &WeightMatrix) -> Result<LsSolution> {
    LsDesign::new(a, d)?.solve(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IlsParams {
    /// Stop when the residual changes by less than `tol` relative to `|| D D_v ||`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for IlsParams {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IlsOutcome {
    pub w: BeamVector,
    pub c_s: C64,
    pub final_phase: PhaseVector,
    /// Weighted residual after each LS step, relative to `|| D D_v ||`.
    pub residual_history: Vec<f64>,
    pub converged: bool,
}

/// Two-step iterative LS for a magnitude-only target.
pub fn ils_design(
    a: &ResponseMatrix,
    target: &DesiredMagnitude,
    d: &WeightMatrix,
    init_phase: &PhaseVector,
    params: IlsParams,
) -> Result<IlsOutcome> {
    let k = a.num_directions();
    for len in [target.len(), init_phase.len()] {
        if len != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                actual: len,
            });
        }
    }
    if params.max_iter == 0 {
        return Err(Error::Domain("ILS needs max_iter >= 1".into()));
    }
    let design = LsDesign::new(a, d)?;
    let scale = target
        .values()
        .iter()
        .zip(d.diag())
        .map(|(t, w)| (t * w).powi(2))
        .sum::<f64>()
        .sqrt();
    if scale == 0.0 {
        return Err(Error::ZeroMagnitude);
    }

    let mut phase = init_phase.clone();
    let mut history = Vec::new();
    let mut converged = false;
    let mut last: Option<LsSolution> = None;
    for _ in 0..params.max_iter {
        let v = DVector::from_iterator(
            k,
            target
                .values()
                .iter()
                .zip(phase.phases().iter())
                .map(|(m, p)| p * *m),
        );
        let sol = design.solve(&v)?;
        let rel = sol.residual / scale;
        let prev = history.last().copied();
        history.push(rel);
        phase = PhaseVector::from_response(&a.apply(sol.w.coeffs())?);
        last = Some(sol);
        if rel <= params.tol || prev.is_some_and(|p: f64| (p - rel).abs() < params.tol) {
            converged = true;
            break;
        }
    }
    let sol = last.expect("max_iter >= 1");
    Ok(IlsOutcome {
        w: sol.w,
        c_s: sol.c_s,
        final_phase: phase,
        residual_history: history,
        converged,
    })
}

/// Magnitude of the pattern of a uniformly weighted `elements`-element ULA
/// (unit-norm weights) on the grid.
pub fn uniform_pattern(config: &ArrayConfig, grid: &DirectionGrid, elements: usize) -> Vec<f64> {
    let amp = 1.0 / (elements as f64).sqrt();
    grid.directions()
        .into_iter()
        .map(|u| {
            let step = 2.0 * PI * config.element_spacing * u;
            (0..elements)
                .map(|m| C64::from_polar(amp, step * m as f64))
                .sum::<C64>()
                .norm()
        })
        .collect()
}

/// Inclusive index range of the lobe containing `peak`, bounded by the
/// nearest local minima on each side that lie at least `depth_db` below the peak.
pub fn mainlobe_bounds(mags: &[f64], peak: usize, depth_db: f64) -> (usize, usize) {
    let floor = mags[peak] * 10f64.powf(-depth_db.abs() / 20.0);
    let n = mags.len();
    let is_null = |i: usize| {
        let left = if i == 0 { f64::INFINITY } else { mags[i - 1] };
        let right = if i + 1 == n { f64::INFINITY } else { mags[i + 1] };
        mags[i] <= left && mags[i] <= right && mags[i] <= floor
    };
    let lo = (0..peak).rev().find(|&i| is_null(i)).unwrap_or(0);
    let hi = (peak + 1..n).find(|&i| is_null(i)).unwrap_or(n - 1);
    (lo, hi)
}

/// Mainlobe of the uniform `shape_elements` pattern around `u = 0`, zero elsewhere.
pub fn mainlobe_target(
    config: &ArrayConfig,
    grid: &DirectionGrid,
    shape_elements: usize,
) -> Result<DesiredMagnitude> {
    if shape_elements < 2 || shape_elements > config.num_elements {
        return Err(Error::Domain(format!(
            "shape source needs 2..={} elements, got {shape_elements}",
            config.num_elements
        )));
    }
    let pattern = uniform_pattern(config, grid, shape_elements);
    let peak = grid.nearest_index(0.0);
    let (lo, hi) = mainlobe_bounds(&pattern, peak, 30.0);
    let values = pattern
        .iter()
        .enumerate()
        .map(|(q, &p)| if q > lo && q < hi { p } else { 0.0 })
        .collect();
    DesiredMagnitude::new(values)
}

/// Reference beam pointing at equivalent direction 0, shaped after the
/// mainlobe of a uniform `shape_elements`-element array.
pub fn reference_subbeam(
    config: &ArrayConfig,
    grid: &DirectionGrid,
    shape_elements: usize,
    d: &WeightMatrix,
    params: IlsParams,
) -> Result<BeamVector> {
    let target = mainlobe_target(config, grid, shape_elements)?;
    let a = crate::array_geometry::equivalent_response_matrix(config, grid);
    let out = ils_design(&a, &target, d, &PhaseVector::ones(grid.num_points), params)?;
    Ok(out.w)
}

/// Shifts the pattern of `w` by `shift_u` in equivalent direction.
pub fn displace_u(w: &BeamVector, shift_u: f64, config: &ArrayConfig) -> BeamVector {
    let step = -2.0 * PI * config.element_spacing * shift_u;
    BeamVector {
        coeffs: DVector::from_iterator(
            w.len(),
            w.coeffs()
                .iter()
                .enumerate()
                .map(|(m, &x)| x * C64::from_polar(1.0, step * m as f64)),
        ),
    }
}

/// Shifts the pattern of `w` by `delta` grid steps: `pattern'[q] = pattern[q - delta]`.
pub fn displace(w: &BeamVector, delta: i64, grid: &DirectionGrid, config: &ArrayConfig) -> BeamVector {
    displace_u(w, delta as f64 * grid.step, config)
}

/// Rotates `w_s_raw` so that its response at `comm_u` has the same phase as that of `w_c`.
pub fn align_to(
    w_c: &BeamVector,
    w_s_raw: &BeamVector,
    comm_u: f64,
    config: &ArrayConfig,
) -> Result<BeamVector> {
    let g_c = w_c.response_at(config, comm_u);
    let g_s = w_s_raw.response_at(config, comm_u);
    let prod = g_c * g_s.conj();
    let mag = prod.norm();
    if mag < 1e-12 {
        return Err(Error::DegenerateAlignment(mag));
    }
    Ok(w_s_raw.phase_rotated(prod.arg()))
}

/// Method 1: phase-align the sensing subbeam at the communication direction
/// and add the two with power split `rho`.
pub fn combine_method1(
    w_c: &BeamVector,
    w_s_raw: &BeamVector,
    spec: &CombineSpec,
    a: &ResponseMatrix,
) -> Result<BeamVector> {
    if spec.method != CombineMethod::Separated {
        return Err(Error::Domain("combine_method1 needs the separated method".into()));
    }
    check_lengths(w_c, w_s_raw, a)?;
    if spec.rho == 1.0 {
        return Ok(w_c.clone());
    }
    let w_s = align_to(w_c, w_s_raw, spec.comm_direction, a.config())?;
    let sum = w_c.coeffs() * C64::new(spec.rho.sqrt(), 0.0)
        + w_s.coeffs() * C64::new((1.0 - spec.rho).sqrt(), 0.0);
    BeamVector::new(sum)
}

/// Joint magnitude target `max(sqrt(rho) |A w_c|, sqrt(1 - rho) |A w_s|)`.
pub fn joint_target(
    w_c: &BeamVector,
    w_s_raw: &BeamVector,
    rho: f64,
    a: &ResponseMatrix,
) -> Result<DesiredMagnitude> {
    let d_c = a.apply(w_c.coeffs())?;
    let d_s = a.apply(w_s_raw.coeffs())?;
    let (sc, ss) = (rho.sqrt(), (1.0 - rho).sqrt());
    DesiredMagnitude::new(
        d_c.iter()
            .zip(d_s.iter())
            .map(|(c, s)| (sc * c.norm()).max(ss * s.norm()))
            .collect(),
    )
}

/// Method 2: a single ILS run on the joint multibeam magnitude.
pub fn combine_method2(
    w_c: &BeamVector,
    w_s_raw: &BeamVector,
    spec: &CombineSpec,
    a: &ResponseMatrix,
    params: IlsParams,
) -> Result<BeamVector> {
    if spec.method != CombineMethod::Joint {
        return Err(Error::Domain("combine_method2 needs the joint method".into()));
    }
    check_lengths(w_c, w_s_raw, a)?;
    let target = joint_target(w_c, w_s_raw, spec.rho, a)?;
    let k = a.num_directions();
    let out = ils_design(
        a,
        &target,
        &WeightMatrix::identity(k),
        &PhaseVector::ones(k),
        params,
    )?;
    Ok(out.w)
}

/// Dispatches on `spec.method`.
pub fn combine(
    w_c: &BeamVector,
    w_s_raw: &BeamVector,
    spec: &CombineSpec,
    a: &ResponseMatrix,
    params: IlsParams,
) -> Result<BeamVector> {
    match spec.method {
        CombineMethod::Separated => combine_method1(w_c, w_s_raw, spec, a),
        CombineMethod::Joint => combine_method2(w_c, w_s_raw, spec, a, params),
    }
}

fn check_lengths(w_c: &BeamVector, w_s: &BeamVector, a: &ResponseMatrix) -> Result<()> {
    for w in [w_c, w_s] {
        if w.len() != a.num_elements() {
            return Err(Error::DimensionMismatch {
                expected: a.num_elements(),
                actual: w.len(),
            });
        }
    }
    Ok(())
}

/// Transmit sensing-subbeam pointing plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanSchedule {
    /// Grid displacements relative to the reference direction.
    pub deltas: Vec<i64>,
    /// Resulting equivalent directions.
    pub directions: Vec<f64>,
    /// Spacing between neighbouring scan directions in equivalent direction.
    pub spacing_u: f64,
}

impl ScanSchedule {
    pub fn actual_angles(&self) -> Vec<f64> {
        self.directions.iter().map(|u| u.clamp(-1.0, 1.0).asin()).collect()
    }
}

/// Places `n_t` scan directions symmetrically about the middle of `coverage`.
///
/// For an even count the middle slot is left free (it is where the
/// communication subbeam sits in the default geometry); spacing is the
/// coverage width divided by the number of slots, rounded up to whole grid
/// steps so the beams are integer displacements of the reference at `reference_u`.
pub fn scan_schedule(
    coverage: (f64, f64),
    grid: &DirectionGrid,
    n_t: usize,
    reference_u: f64,
) -> Result<ScanSchedule> {
    let (lo, hi) = coverage;
    if !(lo.abs() <= 1.0 && hi.abs() <= 1.0) {
        return Err(Error::NotPhysical(lo.abs().max(hi.abs())));
    }
    if lo > hi {
        return Err(Error::Domain(format!("empty coverage [{lo}, {hi}]")));
    }
    if n_t == 0 {
        return Err(Error::Domain("need at least one scan direction".into()));
    }
    let center_delta = ((0.5 * (lo + hi) - reference_u) / grid.step).round() as i64;
    let slots = if n_t % 2 == 0 { n_t + 1 } else { n_t };
    let steps = ((hi - lo) / slots as f64 / grid.step - 1e-9).ceil().max(1.0) as i64;
    let offsets: Vec<i64> = if n_t % 2 == 0 {
        let half = (n_t / 2) as i64;
        (-half..=half).filter(|&k| k != 0).collect()
    } else {
        let half = ((n_t - 1) / 2) as i64;
        (-half..=half).collect()
    };
    let deltas: Vec<i64> = offsets.iter().map(|k| center_delta + k * steps).collect();
    let directions = deltas
        .iter()
        .map(|&d| reference_u + d as f64 * grid.step)
        .collect();
    Ok(ScanSchedule {
        deltas,
        directions,
        spacing_u: steps as f64 * grid.step,
    })
}

/// Index range of the mainlobe around the pattern maximum: the first local
/// minima on either side lying at least 6 dB below the peak.
fn main_lobe(mags: &[f64]) -> (usize, usize, f64) {
    let (peak, &pmax) = mags
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty pattern");
    let (lo, hi) = mainlobe_bounds(mags, peak, 6.0);
    (lo, hi, pmax)
}

/// Peak sidelobe level in dB relative to the pattern maximum.
pub fn peak_sidelobe_db(mags: &[f64]) -> f64 {
    let (lo, hi, pmax) = main_lobe(mags);
    let side = mags
        .iter()
        .enumerate()
        .filter(|(q, _)| *q < lo || *q > hi)
        .map(|(_, &m)| m)
        .fold(0.0, f64::max);
    20.0 * (side / pmax).max(1e-300).log10()
}

/// Sidelobe energy as a fraction of total pattern energy, in dB.
pub fn integrated_sidelobe_db(mags: &[f64]) -> f64 {
    let (lo, hi, _) = main_lobe(mags);
    let total: f64 = mags.iter().map(|m| m * m).sum();
    let side: f64 = mags
        .iter()
        .enumerate()
        .filter(|(q, _)| *q < lo || *q > hi)
        .map(|(_, &m)| m * m)
        .sum();
    10.0 * (side / total).max(1e-300).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array_geometry::{equivalent_response_matrix, radiation_pattern};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid160() -> (ArrayConfig, DirectionGrid, ResponseMatrix) {
        let cfg = ArrayConfig::new(16).unwrap();
        let grid = DirectionGrid::full_view(160).unwrap();
        let a = equivalent_response_matrix(&cfg, &grid);
        (cfg, grid, a)
    }

    fn random_beam(rng: &mut ChaCha8Rng, m: usize) -> BeamVector {
        BeamVector::new(DVector::from_fn(m, |_, _| {
            C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        }))
        .unwrap()
    }

    #[test]
    fn beam_vector_normalizes() {
        let w = BeamVector::new(DVector::from_element(4, C64::new(3.0, 4.0))).unwrap();
        assert!((w.coeffs().norm() - 1.0).abs() < 1e-15);
        assert!(BeamVector::new(DVector::zeros(4)).is_err());
    }

    #[test]
    fn weight_matrix_mean_power() {
        let d = WeightMatrix::new(vec![1.0, 2.0, 3.0]).unwrap();
        let mean: f64 = d.diag().iter().map(|x| x * x).sum::<f64>() / 3.0;
        assert!((mean - 1.0).abs() < 1e-12);
        assert!(WeightMatrix::new(vec![1.0, 0.0]).is_err());
        let taper = WeightMatrix::exp_taper(160, 80, 15.0).unwrap();
        assert_eq!(taper.len(), 160);
        let (imin, _) = taper
            .diag()
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        assert_eq!(imin, 80);
    }

    #[test]
    fn single_row_ls_is_matched_beam() {
        let cfg = ArrayConfig::new(8).unwrap();
        let theta0: f64 = 0.4;
        let a = ResponseMatrix::from_directions(&cfg, &[theta0.sin()]);
        let v = DVector::from_element(1, C64::new(1.0, 0.0));
        let sol = generalized_ls(&a, &v, &WeightMatrix::identity(1)).unwrap();
        let expected = BeamVector::steered(&cfg, theta0.sin());
        assert!((sol.w.coeffs() - expected.coeffs()).norm() < 1e-12);
        assert!(sol.residual < 1e-12);
    }

    #[test]
    fn ls_rejects_rank_deficiency_and_bad_dims() {
        let cfg = ArrayConfig::new(4).unwrap();
        // two identical directions: rank 1 < min(K, M) = 2
        let a = ResponseMatrix::from_directions(&cfg, &[0.3, 0.3]);
        let v = DVector::from_element(2, C64::new(1.0, 0.0));
        assert!(matches!(
            generalized_ls(&a, &v, &WeightMatrix::identity(2)),
            Err(Error::SingularDesign { .. })
        ));
        let a = ResponseMatrix::from_directions(&cfg, &[0.1, 0.3]);
        assert!(matches!(
            generalized_ls(&a, &v, &WeightMatrix::identity(3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn ls_beats_random_unit_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = ArrayConfig::new(8).unwrap();
        let dirs: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = ResponseMatrix::from_directions(&cfg, &dirs);
        let v = DVector::from_fn(64, |_, _| C64::new(rng.random(), rng.random()));
        let d = WeightMatrix::identity(64);
        let design = LsDesign::new(&a, &d).unwrap();
        let best = design.solve(&v).unwrap();
        for _ in 0..1000 {
            let w = random_beam(&mut rng, 8);
            assert!(best.residual <= design.residual_of(&w, &v) + 1e-12);
        }
    }

    #[test]
    fn ils_fixed_point_in_one_iteration() {
        let (_, _, a) = grid160();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w0 = random_beam(&mut rng, 16);
        let p = a.apply(w0.coeffs()).unwrap();
        let target = DesiredMagnitude::new(p.iter().map(|z| z.norm()).collect()).unwrap();
        let out = ils_design(
            &a,
            &target,
            &WeightMatrix::identity(160),
            &PhaseVector::from_response(&p),
            IlsParams::default(),
        )
        .unwrap();
        assert_eq!(out.residual_history.len(), 1);
        assert!(out.converged);
        let got = a.apply(out.w.coeffs()).unwrap();
        for (g, t) in got.iter().zip(target.values()) {
            assert!((g.norm() - t).abs() < 1e-9);
        }
    }

    #[test]
    fn ils_residual_non_increasing() {
        let (cfg, grid, a) = grid160();
        for shape in [8, 12, 16] {
            let target = mainlobe_target(&cfg, &grid, shape).unwrap();
            let out = ils_design(
                &a,
                &target,
                &WeightMatrix::identity(160),
                &PhaseVector::ones(160),
                IlsParams::default(),
            )
            .unwrap();
            for pair in out.residual_history.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-9, "{pair:?}");
            }
        }
    }

    #[test]
    fn ils_rejects_zero_iterations() {
        let (cfg, grid, a) = grid160();
        let target = mainlobe_target(&cfg, &grid, 12).unwrap();
        let params = IlsParams {
            tol: 1e-8,
            max_iter: 0,
        };
        assert!(ils_design(&a, &target, &WeightMatrix::identity(160), &PhaseVector::ones(160), params).is_err());
        assert!(matches!(DesiredMagnitude::new(vec![0.0; 4]), Err(Error::ZeroMagnitude)));
    }

    #[test]
    fn mainlobe_target_is_symmetric_window() {
        let (cfg, grid, _) = grid160();
        let t = mainlobe_target(&cfg, &grid, 16).unwrap();
        let nz: Vec<usize> = (0..160).filter(|&q| t.values()[q] > 0.0).collect();
        // first nulls of a 16-element array are at u = +-0.125, i.e. 10 grid steps
        assert_eq!(nz.first(), Some(&71));
        assert_eq!(nz.last(), Some(&89));
        assert!(mainlobe_target(&cfg, &grid, 17).is_err());
    }

    #[test]
    fn reference_beam_points_at_zero() {
        let (cfg, grid, a) = grid160();
        for shape in [12, 16] {
            let w = reference_subbeam(&cfg, &grid, shape, &WeightMatrix::identity(160), IlsParams::default()).unwrap();
            let p = radiation_pattern(&w, &a).unwrap();
            let (peak, _) = p
                .iter()
                .enumerate()
                .max_by(|x, y| x.1.norm().total_cmp(&y.1.norm()))
                .unwrap();
            assert!((grid.u(peak)).abs() <= grid.step + 1e-12, "shape {shape}: peak at {}", grid.u(peak));
        }
    }

    #[test]
    fn displacement_shifts_pattern() {
        let (cfg, grid, a) = grid160();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = random_beam(&mut rng, 16);
        assert_eq!(displace(&w, 0, &grid, &cfg), w);
        let p1 = a.apply(w.coeffs()).unwrap();
        for delta in [-17i64, -3, 1, 40] {
            let w2 = displace(&w, delta, &grid, &cfg);
            assert!((w2.coeffs().norm() - 1.0).abs() < 1e-14);
            let p2 = a.apply(w2.coeffs()).unwrap();
            for q in 0..160i64 {
                let src = q - delta;
                if (0..160).contains(&src) {
                    assert!((p2[q as usize] - p1[src as usize]).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn method1_extremes_and_alignment() {
        let (cfg, grid, a) = grid160();
        let w_c = BeamVector::steered(&cfg, 0.0);
        let w_s = displace(
            &reference_subbeam(&cfg, &grid, 12, &WeightMatrix::identity(160), IlsParams::default()).unwrap(),
            48,
            &grid,
            &cfg,
        );
        let spec = |rho| CombineSpec::new(rho, 0.0, CombineMethod::Separated).unwrap();
        assert_eq!(combine_method1(&w_c, &w_s, &spec(1.0), &a).unwrap(), w_c);

        let only_s = combine_method1(&w_c, &w_s, &spec(0.0), &a).unwrap();
        let p_raw = a.apply(w_s.coeffs()).unwrap();
        let p_rot = a.apply(only_s.coeffs()).unwrap();
        for (x, y) in p_raw.iter().zip(p_rot.iter()) {
            assert!((x.norm() - y.norm()).abs() < 1e-12);
        }

        let rho = 0.5;
        let w_t = combine_method1(&w_c, &w_s, &spec(rho), &a).unwrap();
        assert!((w_t.coeffs().norm() - 1.0).abs() < 1e-12);
        let g_c = w_c.response_at(&cfg, 0.0);
        let g_t = w_t.response_at(&cfg, 0.0);
        assert!(g_t.norm_sqr() >= rho * g_c.norm_sqr());
        let aligned = align_to(&w_c, &w_s, 0.0, &cfg).unwrap();
        let dphi = (aligned.response_at(&cfg, 0.0) * g_c.conj()).arg();
        assert!(dphi.abs() < 1e-9);
    }

    #[test]
    fn method1_degenerate_alignment() {
        let cfg = ArrayConfig::new(16).unwrap();
        let a = ResponseMatrix::from_directions(&cfg, &[0.0, 0.125]);
        let w_c = BeamVector::steered(&cfg, 0.0);
        // a uniform beam at 0.125 has an exact null at 0
        let w_s = BeamVector::steered(&cfg, 0.125);
        let spec = CombineSpec::new(0.5, 0.0, CombineMethod::Separated).unwrap();
        assert!(matches!(
            combine_method1(&w_c, &w_s, &spec, &a),
            Err(Error::DegenerateAlignment(_))
        ));
    }

    #[test]
    fn joint_target_disjoint_support_is_sum() {
        let cfg = ArrayConfig::new(4).unwrap();
        let a = ResponseMatrix::from_directions(&cfg, &[-0.5, 0.5]);
        // beams with exact nulls on the other's direction
        let w_c = BeamVector::steered(&cfg, -0.5);
        let w_s = BeamVector::steered(&cfg, 0.5);
        let t = joint_target(&w_c, &w_s, 0.5, &a).unwrap();
        let d_c = a.apply(w_c.coeffs()).unwrap();
        let d_s = a.apply(w_s.coeffs()).unwrap();
        for q in 0..2 {
            let sum = 0.5f64.sqrt() * (d_c[q].norm() + d_s[q].norm());
            assert!((t.values()[q] - sum).abs() < 1e-12);
        }
    }

    #[test]
    fn combine_spec_validation() {
        assert!(CombineSpec::new(1.5, 0.0, CombineMethod::Separated).is_err());
        assert!(CombineSpec::new(-0.1, 0.0, CombineMethod::Joint).is_err());
        assert!(CombineSpec::new(0.5, 1.2, CombineMethod::Joint).is_err());
    }

    #[test]
    fn scan_schedule_default_geometry() {
        let grid = DirectionGrid::full_view(160).unwrap();
        let s60 = 60f64.to_radians().sin();
        let s = scan_schedule((-s60, s60), &grid, 8, 0.0).unwrap();
        assert!((s.spacing_u - 0.2).abs() < 1e-12);
        assert_eq!(s.deltas, vec![-64, -48, -32, -16, 16, 32, 48, 64]);
        let reference = [-54.3, -37.8, -24.4, -12.3, 10.8, 22.8, 35.9, 51.9];
        for (got, want) in s.actual_angles().iter().zip(reference) {
            assert!((got.to_degrees() - want).abs() < 1.5, "{} vs {want}", got.to_degrees());
        }
        let one = scan_schedule((-0.5, 0.3), &grid, 1, 0.0).unwrap();
        assert_eq!(one.deltas, vec![-8]);
        assert!(scan_schedule((-1.2, 0.3), &grid, 2, 0.0).is_err());
        assert!(scan_schedule((-0.2, 0.3), &grid, 0, 0.0).is_err());
    }

    #[test]
    fn sidelobe_of_uniform_array() {
        let (cfg, _, _) = grid160();
        let fine = DirectionGrid::full_view(4000).unwrap();
        let p = uniform_pattern(&cfg, &fine, 12);
        assert!((peak_sidelobe_db(&p) + 13.06).abs() < 0.05);
    }
}
