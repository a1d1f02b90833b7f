//! MMDI-style algebraic Helmholtz inversion.
//!
//! The displacement is bandpassed with a radial Butterworth filter, split
//! into four directional components with cos^2 angular windows, and each
//! component is inverted locally with `mu = rho omega^2 |u| / |lap u|` at
//! several Laplacian stencil spacings. Estimates are blended with weights
//! `|u| |lap u|`, first across scales and then across directions.

use std::collections::VecDeque;
use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ComplexField, Grid, ScalarField};

const MIN_SIZE: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterBankConfig {
    /// Lower cutoff in waves per field of view.
    pub low_cut: f64,
    /// Upper cutoff in waves per field of view.
    pub high_cut: f64,
    pub butterworth_order: u32,
    /// Window centres in degrees; angle 0 is the +x wavevector of `e^{i k x}`.
    pub directions: Vec<f64>,
    pub padding: Padding,
}

/// Extension applied before FFT filtering. `Symmetric` mirrors the field about
/// its last row and column (period `2n - 2`), which avoids the wrap-around
/// discontinuity of a non-periodic field; `Periodic` filters the field as is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Periodic,
    Symmetric,
}

impl Default for FilterBankConfig {
    fn default() -> Self {
        Self { low_cut: 2.0, high_cut: 128.0, butterworth_order: 4, directions: vec![0.0, 90.0, 180.0, 270.0], padding: Padding::Symmetric }
    }
}

impl FilterBankConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.low_cut > 0.0 && self.low_cut < self.high_cut && self.high_cut.is_finite()) {
            return Err(Error::validation(format!(
                "need 0 < low_cut < high_cut, got {} and {}",
                self.low_cut, self.high_cut
            )));
        }
        if self.butterworth_order == 0 {
            return Err(Error::validation("butterworth_order must be at least 1"));
        }
        if self.directions.is_empty() {
            return Err(Error::validation("at least one direction required"));
        }
        for k in 0..720 {
            let theta = k as f64 * PI / 360.0;
            let total: f64 = self.directions.iter().map(|&d| angular_window(theta, d.to_radians())).sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::validation(format!(
                    "directions {:?} do not partition angle space (sum {total:.4} at {:.1} deg)",
                    self.directions,
                    theta.to_degrees()
                )));
            }
        }
        Ok(())
    }

    /// Radial response at `r` waves/FOV.
    pub fn response(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        let n2 = 2 * self.butterworth_order as i32;
        let high_pass = 1.0 / (1.0 + (self.low_cut / r).powi(n2)).sqrt();
        let low_pass = 1.0 / (1.0 + (r / self.high_cut).powi(n2)).sqrt();
        high_pass * low_pass
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InversionConfig {
    pub density: f64,
    pub frequency: f64,
    /// Laplacian stencil spacings in pixels.
    pub laplacian_scales: Vec<usize>,
    /// Pixels with |u| below this fraction of max |u| get zero weight.
    pub amplitude_floor: f64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self { density: 1000.0, frequency: 60.0, laplacian_scales: vec![1, 2], amplitude_floor: 1e-3 }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.density > 0.0 && self.frequency > 0.0) {
            return Err(Error::validation("density and frequency must be positive"));
        }
        if self.laplacian_scales.is_empty() || self.laplacian_scales.contains(&0) {
            return Err(Error::validation("laplacian_scales must be non-empty and >= 1"));
        }
        if !(0.0..1.0).contains(&self.amplitude_floor) {
            return Err(Error::validation("amplitude_floor must lie in [0, 1)"));
        }
        Ok(())
    }

    fn rho_omega2(&self) -> f64 {
        let omega = 2.0 * PI * self.frequency;
        self.density * omega * omega
    }
}

/// Combined `[mmdi]` config section.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MmdiConfig {
    pub filter: FilterBankConfig,
    pub inversion: InversionConfig,
}

/// Stiffness map with a companion mask of pixels that had a direct estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Elastogram {
    pub stiffness: ScalarField,
    pub valid: Vec<bool>,
}

/// In-place 2D FFT; the inverse is normalized by 1/(h w).
pub fn fft2(data: &mut [Complex64], height: usize, width: usize, direction: FftDirection) {
    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft(width, direction);
    for row in data.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft(height, direction);
    let mut column = vec![Complex64::new(0.0, 0.0); height];
    for c in 0..width {
        for r in 0..height {
            column[r] = data[r * width + c];
        }
        col_fft.process(&mut column);
        for r in 0..height {
            data[r * width + c] = column[r];
        }
    }
    if direction == FftDirection::Inverse {
        let scale = 1.0 / (height * width) as f64;
        data.iter_mut().for_each(|z| *z *= scale);
    }
}

/// Signed frequency index of FFT bin `k` on an `n`-point axis (waves/FOV).
fn signed_freq(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = (a + PI).rem_euclid(2.0 * PI) - PI;
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// cos^2 window of half-width 90 degrees centred at `centre`.
fn angular_window(theta: f64, centre: f64) -> f64 {
    let d = wrap_angle(theta - centre);
    if d.abs() < PI / 2.0 {
        d.cos().powi(2)
    } else {
        0.0
    }
}

fn check_size(u: &ComplexField) -> Result<()> {
    if u.height() < MIN_SIZE || u.width() < MIN_SIZE {
        return Err(Error::validation(format!(
            "field {}x{} smaller than {MIN_SIZE}x{MIN_SIZE}",
            u.height(),
            u.width()
        )));
    }
    Ok(())
}

/// Mirror extension to `(2h - 2) x (2w - 2)`; the edge rows and columns are
/// not duplicated.
fn extend_symmetric(u: &ComplexField) -> Vec<Complex64> {
    let (h, w) = u.shape();
    let (ph, pw) = (2 * h - 2, 2 * w - 2);
    let fold = |i: usize, n: usize| if i < n { i } else { 2 * n - 2 - i };
    let mut out = Vec::with_capacity(ph * pw);
    for r in 0..ph {
        for c in 0..pw {
            out.push(u.get(fold(r, h), fold(c, w)));
        }
    }
    out
}

/// Applies a frequency-domain gain `gain(fx, fy)` with frequencies in waves
/// per field of view of `u`, honouring the configured padding.
fn apply_gain(u: &ComplexField, padding: Padding, gain: impl Fn(f64, f64) -> f64) -> Result<ComplexField> {
    let (h, w) = u.shape();
    let (mut data, ph, pw) = match padding {
        Padding::Periodic => (u.values().to_vec(), h, w),
        Padding::Symmetric => (extend_symmetric(u), 2 * h - 2, 2 * w - 2),
    };
    fft2(&mut data, ph, pw, FftDirection::Forward);
    let (sy, sx) = (h as f64 / ph as f64, w as f64 / pw as f64);
    for r in 0..ph {
        let fy = signed_freq(r, ph) * sy;
        for c in 0..pw {
            data[r * pw + c] *= gain(signed_freq(c, pw) * sx, fy);
        }
    }
    fft2(&mut data, ph, pw, FftDirection::Inverse);
    let values = match padding {
        Padding::Periodic => data,
        Padding::Symmetric => (0..h).flat_map(|r| data[r * pw..r * pw + w].to_vec()).collect(),
    };
    Grid::new(h, w, u.spacing(), values)
}

/// Radial Butterworth bandpass in waves/FOV.
pub fn bandpass(u: &ComplexField, cfg: &FilterBankConfig) -> Result<ComplexField> {
    cfg.validate()?;
    check_size(u)?;
    apply_gain(u, cfg.padding, |fx, fy| cfg.response((fx * fx + fy * fy).sqrt()))
}

/// Splits `u` into one component per configured direction. The components
/// sum back to `u`; the DC bin, which has no direction, is shared equally.
pub fn directional_split(u: &ComplexField, cfg: &FilterBankConfig) -> Result<Vec<ComplexField>> {
    cfg.validate()?;
    check_size(u)?;
    let share = 1.0 / cfg.directions.len() as f64;
    cfg.directions
        .iter()
        .map(|&deg| {
            let centre = deg.to_radians();
            apply_gain(u, cfg.padding, |fx, fy| {
                if fx == 0.0 && fy == 0.0 {
                    share
                } else {
                    angular_window(fy.atan2(fx), centre)
                }
            })
        })
        .collect()
}

/// Local algebraic Helmholtz inversion of one directional component.
///
/// Returns the weight-blended estimate over the configured Laplacian scales
/// and the total weight per pixel. Pixels with zero weight have estimate 0.
pub fn invert_direction(u_d: &ComplexField, cfg: &InversionConfig) -> Result<(ScalarField, ScalarField)> {
    cfg.validate()?;
    let (h, w) = u_d.shape();
    let rho_omega2 = cfg.rho_omega2();
    let max_amp = u_d.values().iter().map(|z| z.norm()).fold(0.0, f64::max);
    let floor = cfg.amplitude_floor * max_amp;

    let mut weighted = vec![0.0; h * w];
    let mut total = vec![0.0; h * w];
    if max_amp > 0.0 {
        for &s in &cfg.laplacian_scales {
            let inv = 1.0 / (s as f64 * u_d.spacing()).powi(2);
            for r in s..h.saturating_sub(s) {
                for c in s..w.saturating_sub(s) {
                    let centre = u_d.get(r, c);
                    let amp = centre.norm();
                    if amp < floor || amp == 0.0 {
                        continue;
                    }
                    // lap in 1/mm for u in mm
                    let lap = (u_d.get(r - s, c) + u_d.get(r + s, c) + u_d.get(r, c - s) + u_d.get(r, c + s)
                        - 4.0 * centre)
                        * inv;
                    let curvature = lap.norm();
                    if curvature == 0.0 {
                        continue;
                    }
                    let mu = rho_omega2 * amp / curvature * 1e-6;
                    let weight = amp * curvature;
                    weighted[r * w + c] += weight * mu;
                    total[r * w + c] += weight;
                }
            }
        }
    }
    let estimate = weighted.iter().zip(&total).map(|(&m, &t)| if t > 0.0 { m / t } else { 0.0 }).collect();
    Ok((
        ScalarField::new(h, w, u_d.spacing(), estimate)?,
        ScalarField::new(h, w, u_d.spacing(), total)?,
    ))
}

/// Full baseline: bandpass, directional split, per-direction inversion and
/// weighted combination. Pixels without any weight take the value of the
/// nearest valid pixel and are flagged invalid.
pub fn mmdi_invert(u: &ComplexField, fcfg: &FilterBankConfig, icfg: &InversionConfig) -> Result<Elastogram> {
    let filtered = bandpass(u, fcfg)?;
    let parts = directional_split(&filtered, fcfg)?;
    let (h, w) = u.shape();
    let mut weighted = vec![0.0; h * w];
    let mut total = vec![0.0; h * w];
    for part in &parts {
        let (mu, weight) = invert_direction(part, icfg)?;
        for i in 0..h * w {
            weighted[i] += weight.values()[i] * mu.values()[i];
            total[i] += weight.values()[i];
        }
    }
    let valid: Vec<bool> = total.iter().map(|&t| t > 0.0).collect();
    if !valid.iter().any(|&v| v) {
        return Err(Error::Numerical("inversion produced no valid pixels".into()));
    }
    let mut values: Vec<f64> = weighted.iter().zip(&total).map(|(&m, &t)| if t > 0.0 { m / t } else { 0.0 }).collect();
    fill_nearest(&mut values, &valid, h, w);
    Ok(Elastogram { stiffness: ScalarField::new(h, w, u.spacing(), values)?, valid })
}

/// Breadth-first fill of invalid pixels from their nearest (4-connected
/// path length) valid neighbour.
fn fill_nearest(values: &mut [f64], valid: &[bool], h: usize, w: usize) {
    let mut seen = valid.to_vec();
    let mut queue: VecDeque<usize> = (0..h * w).filter(|&i| valid[i]).collect();
    while let Some(i) = queue.pop_front() {
        let (r, c) = (i / w, i % w);
        let neighbours = [
            (r > 0).then(|| i - w),
            (c > 0).then(|| i - 1),
            (c + 1 < w).then(|| i + 1),
            (r + 1 < h).then(|| i + w),
        ];
        for j in neighbours.into_iter().flatten() {
            if !seen[j] {
                seen[j] = true;
                values[j] = values[i];
                queue.push_back(j);
            }
        }
    }
}
