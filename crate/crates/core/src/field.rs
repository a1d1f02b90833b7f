//! Regular-grid fields with physical spacing.
//!
//! Grids are node-centred: sample `(row, col)` sits at `(col * spacing,
//! row * spacing)` millimetres, so an `n`-sample axis spans `(n - 1) * spacing`.

use std::ops::{Add, Mul};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::PhantomClass;
use crate::rng;

/// Element types a [`Grid`] can hold.
pub trait FieldValue:
    Copy + Default + PartialEq + Add<Output = Self> + Mul<f64, Output = Self> + Send + Sync
{
    fn is_finite_value(&self) -> bool;
}

impl FieldValue for f64 {
    fn is_finite_value(&self) -> bool {
        self.is_finite()
    }
}

impl FieldValue for Complex64 {
    fn is_finite_value(&self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

/// Row-major 2D grid with isotropic spacing in millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    spacing: f64,
    values: Vec<T>,
}

/// Real-valued map: stiffness in Pa, damping, masks.
pub type ScalarField = Grid<f64>;

/// Complex displacement field in millimetres.
pub type ComplexField = Grid<Complex64>;

impl<T: FieldValue> Grid<T> {
    pub fn new(height: usize, width: usize, spacing: f64, values: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::validation(format!(
                "grid dimensions must be positive, got {height}x{width}"
            )));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::validation(format!("spacing must be positive, got {spacing}")));
        }
        if values.len() != height * width {
            return Err(Error::validation(format!(
                "{height}x{width} grid needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if let Some(idx) = values.iter().position(|v| !v.is_finite_value()) {
            return Err(Error::validation(format!(
                "non-finite value at row {}, col {}",
                idx / width,
                idx % width
            )));
        }
        Ok(Self { height, width, spacing, values })
    }

    pub fn filled(height: usize, width: usize, spacing: f64, value: T) -> Result<Self> {
        Self::new(height, width, spacing, vec![value; height * width])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        spacing: f64,
        mut f: impl FnMut(usize, usize) -> T,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Self::new(height, width, spacing, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.values[row * self.width + col]
    }

    /// Same shape and spacing (spacing compared exactly).
    pub fn same_grid<U>(&self, other: &Grid<U>) -> bool {
        self.height == other.height && self.width == other.width && self.spacing == other.spacing
    }

    pub fn map<U: FieldValue>(&self, f: impl Fn(T) -> U) -> Result<Grid<U>> {
        Grid::new(
            self.height,
            self.width,
            self.spacing,
            self.values.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Copies the `h x w` window whose top-left sample is `(row, col)`.
    pub fn window(&self, row: usize, col: usize, h: usize, w: usize) -> Vec<T> {
        let mut out = Vec::with_capacity(h * w);
        for r in row..row + h {
            out.extend_from_slice(&self.values[r * self.width + col..r * self.width + col + w]);
        }
        out
    }

    /// Bilinear resampling onto a grid with `target_spacing`, keeping the
    /// physical origin at sample (0, 0).
    ///
    /// Output size per axis is `round((n - 1) * spacing / target_spacing) + 1`.
    pub fn resample(&self, target_spacing: f64) -> Result<Self> {
        if !(target_spacing.is_finite() && target_spacing > 0.0) {
            return Err(Error::validation(format!(
                "target spacing must be positive, got {target_spacing}"
            )));
        }
        let ratio = self.spacing / target_spacing;
        let out_h = ((self.height - 1) as f64 * ratio).round() as usize + 1;
        let out_w = ((self.width - 1) as f64 * ratio).round() as usize + 1;
        if out_h < 2 || out_w < 2 {
            return Err(Error::validation(format!(
                "resampling to {target_spacing} mm gives degenerate {out_h}x{out_w} grid"
            )));
        }
        if target_spacing == self.spacing {
            return Ok(self.clone());
        }
        let step = target_spacing / self.spacing;
        let axis = |n_out: usize, n_in: usize| -> Vec<(usize, usize, f64)> {
            (0..n_out)
                .map(|j| {
                    let x = (j as f64 * step).min((n_in - 1) as f64);
                    let i0 = (x.floor() as usize).min(n_in - 1);
                    let i1 = (i0 + 1).min(n_in - 1);
                    (i0, i1, x - i0 as f64)
                })
                .collect()
        };
        let rows = axis(out_h, self.height);
        let cols = axis(out_w, self.width);
        let mut values = Vec::with_capacity(out_h * out_w);
        for &(r0, r1, fy) in &rows {
            for &(c0, c1, fx) in &cols {
                let top = self.get(r0, c0) * (1.0 - fx) + self.get(r0, c1) * fx;
                let bottom = self.get(r1, c0) * (1.0 - fx) + self.get(r1, c1) * fx;
                values.push(top * (1.0 - fy) + bottom * fy);
            }
        }
        Self::new(out_h, out_w, target_spacing, values)
    }
}

impl ScalarField {
    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

impl ComplexField {
    /// Splits into real and imaginary scalar maps.
    pub fn parts(&self) -> (ScalarField, ScalarField) {
        let re = Grid { height: self.height, width: self.width, spacing: self.spacing, values: self.values.iter().map(|v| v.re).collect() };
        let im = Grid { height: self.height, width: self.width, spacing: self.spacing, values: self.values.iter().map(|v| v.im).collect() };
        (re, im)
    }

    pub fn mean_power(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() / self.values.len() as f64
    }

    /// Adds circular complex Gaussian noise at the given SNR (dB), where
    /// SNR = 10 log10(mean |u|^2 / noise variance).
    ///
    /// `f64::INFINITY` means "no noise" and returns the input unchanged.
    pub fn add_noise(&self, snr_db: f64, seed: u64) -> Result<Self> {
        if snr_db == f64::INFINITY {
            return Ok(self.clone());
        }
        if !snr_db.is_finite() {
            return Err(Error::validation(format!("snr_db must be finite or +inf, got {snr_db}")));
        }
        let power = self.mean_power();
        if power == 0.0 {
            return Err(Error::validation("cannot set an SNR on an all-zero field"));
        }
        let variance = power / 10f64.powf(snr_db / 10.0);
        let sigma = (variance / 2.0).sqrt();
        let mut rng = rng::stream(seed, rng::NOISE_STREAM);
        let values = self
            .values
            .iter()
            .map(|&v| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                v + Complex64::new(re * sigma, im * sigma)
            })
            .collect();
        Self::new(self.height, self.width, self.spacing, values)
    }
}

/// Acquisition and provenance metadata stored in the JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldMetadata {
    pub frequency_hz: f64,
    pub density_kg_m3: f64,
    pub phantom_class: PhantomClass,
    pub seed: u64,
    /// Documented only; the scalar shear-wave model ignores it.
    #[serde(default = "default_poisson_ratio")]
    pub poisson_ratio: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

fn default_poisson_ratio() -> f64 {
    0.499
}

impl FieldMetadata {
    pub fn new(frequency_hz: f64, density_kg_m3: f64, phantom_class: PhantomClass, seed: u64) -> Result<Self> {
        let meta = Self {
            frequency_hz,
            density_kg_m3,
            phantom_class,
            seed,
            poisson_ratio: default_poisson_ratio(),
            config_hash: None,
        };
        meta.validate()?;
        Ok(meta)
    }

    pub fn with_config_hash(mut self, hash: impl Into<String>) -> Self {
        self.config_hash = Some(hash.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.frequency_hz.is_finite() && self.frequency_hz > 0.0) {
            return Err(Error::validation(format!("frequency must be positive, got {}", self.frequency_hz)));
        }
        if !(self.density_kg_m3.is_finite() && self.density_kg_m3 > 0.0) {
            return Err(Error::validation(format!("density must be positive, got {}", self.density_kg_m3)));
        }
        Ok(())
    }
}
