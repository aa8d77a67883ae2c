//! Uniform linear array geometry.
//!
//! Directions are handled in two coordinates: the actual angle `theta`
//! (radians from broadside) and the *equivalent direction* `u = sin(theta)`.
//! Patterns of a ULA shift rigidly in `u`, which is what makes the
//! displaced-beam construction in [`crate::beamforming`] possible.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::beamforming::BeamVector;
use crate::error::{Error, Result};
use crate::C64;

/// A uniform linear array of isotropic elements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig {
    pub num_elements: usize,
    /// Element spacing in wavelengths.
    pub element_spacing: f64,
}

impl ArrayConfig {
    /// Half-wavelength array with `num_elements` elements.
    pub fn new(num_elements: usize) -> Result<Self> {
        Self::with_spacing(num_elements, 0.5)
    }

    pub fn with_spacing(num_elements: usize, element_spacing: f64) -> Result<Self> {
        let cfg = Self {
            num_elements,
            element_spacing,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_elements < 2 {
            return Err(Error::invalid(
                "array.num_elements",
                format!("need at least 2 elements, got {}", self.num_elements),
            ));
        }
        if !(self.element_spacing > 0.0) || !self.element_spacing.is_finite() {
            return Err(Error::invalid(
                "array.element_spacing",
                format!("must be positive, got {}", self.element_spacing),
            ));
        }
        Ok(())
    }

    /// Phase progression per element for equivalent direction `u`.
    #[inline]
    fn phase_step(&self, u: f64) -> f64 {
        2.0 * PI * self.element_spacing * u
    }

    /// Response row for an equivalent direction without range checks.
    pub(crate) fn response_u(&self, u: f64) -> DVector<C64> {
        let step = self.phase_step(u);
        DVector::from_iterator(
            self.num_elements,
            (0..self.num_elements).map(|m| C64::from_polar(1.0, step * m as f64)),
        )
    }
}

/// Uniform grid of equivalent directions `u_q = offset + q * step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionGrid {
    pub num_points: usize,
    pub step: f64,
    pub offset: f64,
}

impl DirectionGrid {
    /// `num_points` samples uniformly covering `[-1, 1)`.
    pub fn full_view(num_points: usize) -> Result<Self> {
        let grid = Self {
            num_points,
            step: 2.0 / num_points as f64,
            offset: -1.0,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Default grid for an array: `10 * M` points over `[-1, 1)`.
    pub fn for_array(config: &ArrayConfig) -> Self {
        Self::full_view(10 * config.num_elements).expect("M >= 2 gives a valid grid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_points == 0 {
            return Err(Error::invalid("grid.num_points", "must be positive"));
        }
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(Error::invalid(
                "grid.step",
                format!("must be positive, got {}", self.step),
            ));
        }
        if !self.offset.is_finite() {
            return Err(Error::invalid("grid.offset", "must be finite"));
        }
        Ok(())
    }

    #[inline]
    pub fn u(&self, q: usize) -> f64 {
        self.offset + q as f64 * self.step
    }

    pub fn directions(&self) -> Vec<f64> {
        (0..self.num_points).map(|q| self.u(q)).collect()
    }

    /// Grid index closest to `u`, clamped to the grid.
    pub fn nearest_index(&self, u: f64) -> usize {
        let q = ((u - self.offset) / self.step).round();
        q.clamp(0.0, (self.num_points - 1) as f64) as usize
    }
}

/// Array response matrix: row `q` is `a^T` evaluated at direction `u_q`.
#[derive(Debug, Clone)]
pub struct ResponseMatrix {
    config: ArrayConfig,
    directions: Vec<f64>,
    matrix: DMatrix<C64>,
}

impl ResponseMatrix {
    /// Response matrix over an arbitrary list of equivalent directions.
    pub fn from_directions(config: &ArrayConfig, directions: &[f64]) -> Self {
        let m = config.num_elements;
        let mut matrix = DMatrix::zeros(directions.len(), m);
        for (q, &u) in directions.iter().enumerate() {
            let step = config.phase_step(u);
            for e in 0..m {
                matrix[(q, e)] = C64::from_polar(1.0, step * e as f64);
            }
        }
        Self {
            config: *config,
            directions: directions.to_vec(),
            matrix,
        }
    }

    pub fn config(&self) -> &ArrayConfig {
        &self.config
    }

    pub fn directions(&self) -> &[f64] {
        &self.directions
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn num_directions(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn num_elements(&self) -> usize {
        self.matrix.ncols()
    }

    /// `A * x` for an arbitrary (not necessarily normalized) weight vector.
    pub fn apply(&self, x: &DVector<C64>) -> Result<DVector<C64>> {
        if x.len() != self.num_elements() {
            return Err(Error::DimensionMismatch {
                expected: self.num_elements(),
                actual: x.len(),
            });
        }
        Ok(&self.matrix * x)
    }
}

/// Array response vector `a(theta)`.
pub fn steering_vector(config: &ArrayConfig, theta: f64) -> Result<DVector<C64>> {
    if !theta.is_finite() || theta.abs() > FRAC_PI_2 {
        return Err(Error::Domain(format!(
            "steering angle {theta} rad outside [-pi/2, pi/2]"
        )));
    }
    Ok(config.response_u(theta.sin()))
}

/// Response matrix sampled on a direction grid.
pub fn equivalent_response_matrix(config: &ArrayConfig, grid: &DirectionGrid) -> ResponseMatrix {
    ResponseMatrix::from_directions(config, &grid.directions())
}

/// Complex radiation pattern `A w` over the matrix directions.
pub fn radiation_pattern(w: &BeamVector, a: &ResponseMatrix) -> Result<DVector<C64>> {
    a.apply(w.coeffs())
}

/// Approximate 3 dB beamwidth `2 asin(1.2 / M)` of a half-wavelength ULA, in radians.
pub fn half_power_beamwidth(num_elements: usize) -> Result<f64> {
    if num_elements < 2 {
        return Err(Error::Domain(format!(
            "beamwidth needs M >= 2, got {num_elements}"
        )));
    }
    Ok(2.0 * (1.2 / num_elements as f64).asin())
}

/// Same beamwidth expressed as a width in equivalent direction at broadside.
pub fn half_power_width_u(num_elements: usize) -> Result<f64> {
    Ok(2.0 * (half_power_beamwidth(num_elements)? / 2.0).sin())
}

/// Actual angle for an equivalent direction.
pub fn equivalent_to_actual(u: f64) -> Result<f64> {
    if !(u.abs() <= 1.0) {
        return Err(Error::NotPhysical(u.abs()));
    }
    Ok(u.asin())
}

pub fn magnitude_db(x: f64) -> f64 {
    20.0 * x.max(1e-300).log10()
}
