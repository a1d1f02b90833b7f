//! Frequency-domain forward model for time-harmonic shear waves:
//!
//! ```text
//! div(mu* grad u) + rho omega^2 u = 0,   mu* = mu (1 + i eta)
//! ```
//!
//! discretized with a 5-point stencil on the node grid. Face moduli are
//! harmonic means of the two adjacent nodes. Boundary nodes carry Dirichlet
//! values, which are folded into the right-hand side, so the unknowns are the
//! interior nodes only.

use std::f64::consts::PI;
use std::ops::Range;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ComplexField, Grid, ScalarField};
use crate::phantom::{Edge, PhantomSpec, DAMPING_RANGE, MU_RANGE};

pub const MIN_GRID: usize = 16;
pub const RESIDUAL_TOL: f64 = 1e-8;
const MAX_REFINEMENT: usize = 5;

/// Complex shear modulus map, mu* = mu (1 + i eta) in Pa.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexModulusField(Grid<Complex64>);

impl ComplexModulusField {
    pub fn from_maps(mu: &ScalarField, damping: &ScalarField) -> Result<Self> {
        if !mu.same_grid(damping) {
            return Err(Error::validation("stiffness and damping maps differ in shape or spacing"));
        }
        let mut values = Vec::with_capacity(mu.len());
        for (&m, &eta) in mu.values().iter().zip(damping.values()) {
            if m < MU_RANGE.0 {
                return Err(Error::validation(format!("shear modulus {m} Pa below {} Pa", MU_RANGE.0)));
            }
            if !(DAMPING_RANGE.0..=DAMPING_RANGE.1).contains(&eta) {
                return Err(Error::validation(format!("loss factor {eta} outside {DAMPING_RANGE:?}")));
            }
            values.push(Complex64::new(m, m * eta));
        }
        Ok(Self(Grid::new(mu.height(), mu.width(), mu.spacing(), values)?))
    }

    pub fn homogeneous(n: usize, spacing_mm: f64, mu: f64, damping: f64) -> Result<Self> {
        let m = ScalarField::filled(n, n, spacing_mm, mu)?;
        let d = ScalarField::filled(n, n, spacing_mm, damping)?;
        Self::from_maps(&m, &d)
    }

    pub fn grid(&self) -> &Grid<Complex64> {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeCondition {
    /// Zero displacement.
    Fixed,
    /// Prescribed complex displacement in mm.
    Dirichlet(Complex64),
}

impl EdgeCondition {
    fn value(self) -> Complex64 {
        match self {
            EdgeCondition::Fixed => Complex64::new(0.0, 0.0),
            EdgeCondition::Dirichlet(v) => v,
        }
    }

    fn is_excited(self) -> bool {
        self.value() != Complex64::new(0.0, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCondition {
    pub left: EdgeCondition,
    pub top: EdgeCondition,
    pub right: EdgeCondition,
    pub bottom: EdgeCondition,
}

impl BoundaryCondition {
    pub fn fixed() -> Self {
        Self {
            left: EdgeCondition::Fixed,
            top: EdgeCondition::Fixed,
            right: EdgeCondition::Fixed,
            bottom: EdgeCondition::Fixed,
        }
    }

    /// One driven edge, all others fixed.
    pub fn excited(edge: Edge, amplitude: Complex64) -> Self {
        let mut bc = Self::fixed();
        *bc.edge_mut(edge) = EdgeCondition::Dirichlet(amplitude);
        bc
    }

    fn edge_mut(&mut self, edge: Edge) -> &mut EdgeCondition {
        match edge {
            Edge::Left => &mut self.left,
            Edge::Top => &mut self.top,
            Edge::Right => &mut self.right,
            Edge::Bottom => &mut self.bottom,
        }
    }

    fn edges(&self) -> [EdgeCondition; 4] {
        [self.left, self.top, self.right, self.bottom]
    }

    pub fn validate(&self) -> Result<()> {
        let excited = self.edges().iter().filter(|e| e.is_excited()).count();
        if excited > 1 {
            return Err(Error::validation(format!("{excited} edges excited, at most one allowed")));
        }
        if self.edges().iter().any(|e| !crate::field::FieldValue::is_finite_value(&e.value())) {
            return Err(Error::validation("non-finite boundary displacement"));
        }
        Ok(())
    }

    /// Boundary value at node (r, c) of an h x w grid. An excited edge owns
    /// its corner nodes.
    fn value_at(&self, r: usize, c: usize, h: usize, w: usize) -> Complex64 {
        let on = [c == 0, r == 0, c == w - 1, r == h - 1];
        let edges = self.edges();
        let mut out = Complex64::new(0.0, 0.0);
        for (i, &hit) in on.iter().enumerate() {
            if hit && edges[i].is_excited() {
                out = edges[i].value();
            }
        }
        out
    }
}

/// Complex sparse matrix in compressed-row layout.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<Complex64>,
}

impl CsrMatrix {
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        let span = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.row(i).find(|&(c, _)| c == j).map_or(Complex64::new(0.0, 0.0), |(_, v)| v)
    }

    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        (0..self.n).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect()
    }
}

/// Assembled interior system plus what is needed to rebuild the full field.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<Complex64>,
    height: usize,
    width: usize,
    spacing_mm: f64,
    boundary: Vec<Complex64>,
}

impl SparseSystem {
    pub fn dimension(&self) -> usize {
        self.matrix.n
    }

    /// Interior grid width, which is also the half-bandwidth of the matrix.
    pub fn interior_width(&self) -> usize {
        self.width - 2
    }

    pub fn unknown_index(&self, r: usize, c: usize) -> Option<usize> {
        (r > 0 && c > 0 && r + 1 < self.height && c + 1 < self.width)
            .then(|| (r - 1) * self.interior_width() + (c - 1))
    }

    pub fn relative_residual(&self, x: &[Complex64]) -> f64 {
        let ax = self.matrix.matvec(x);
        let num: f64 = ax.iter().zip(&self.rhs).map(|(a, b)| (b - a).norm_sqr()).sum::<f64>().sqrt();
        let den = norm(&self.rhs);
        if den == 0.0 {
            norm(x)
        } else {
            num / den
        }
    }

    fn to_field(&self, interior: &[Complex64]) -> Result<ComplexField> {
        let mut values = self.boundary.clone();
        let iw = self.interior_width();
        for (k, &v) in interior.iter().enumerate() {
            values[(k / iw + 1) * self.width + k % iw + 1] = v;
        }
        Grid::new(self.height, self.width, self.spacing_mm, values)
    }
}

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn harmonic_mean(a: Complex64, b: Complex64) -> Complex64 {
    2.0 * a * b / (a + b)
}

/// Builds the interior 5-point system for the given modulus map.
pub fn assemble(
    mu_star: &ComplexModulusField,
    density: f64,
    frequency: f64,
    bc: &BoundaryCondition,
) -> Result<SparseSystem> {
    let grid = mu_star.grid();
    let (h, w) = grid.shape();
    if h < MIN_GRID || w < MIN_GRID {
        return Err(Error::validation(format!("grid {h}x{w} smaller than {MIN_GRID}x{MIN_GRID}")));
    }
    if !(density > 0.0 && frequency > 0.0) {
        return Err(Error::validation("density and frequency must be positive"));
    }
    bc.validate()?;

    let step = grid.spacing() * 1e-3;
    let inv_h2 = 1.0 / (step * step);
    let omega = 2.0 * PI * frequency;
    let mass = density * omega * omega;

    let boundary: Vec<Complex64> = (0..h * w)
        .map(|k| {
            let (r, c) = (k / w, k % w);
            if r == 0 || c == 0 || r == h - 1 || c == w - 1 {
                bc.value_at(r, c, h, w)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();

    let iw = w - 2;
    let n = (h - 2) * iw;
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::with_capacity(5 * n);
    let mut values = Vec::with_capacity(5 * n);
    let mut rhs = vec![Complex64::new(0.0, 0.0); n];
    row_ptr.push(0);

    let mut entries: Vec<(usize, Complex64)> = Vec::with_capacity(5);
    for r in 1..h - 1 {
        for c in 1..w - 1 {
            let row = (r - 1) * iw + (c - 1);
            let centre = grid.get(r, c);
            let mut diag = Complex64::new(mass, 0.0);
            entries.clear();
            for (nr, nc) in [(r - 1, c), (r, c - 1), (r, c + 1), (r + 1, c)] {
                let coeff = harmonic_mean(centre, grid.get(nr, nc)) * inv_h2;
                diag -= coeff;
                if nr == 0 || nc == 0 || nr == h - 1 || nc == w - 1 {
                    rhs[row] -= coeff * boundary[nr * w + nc];
                } else {
                    entries.push(((nr - 1) * iw + (nc - 1), coeff));
                }
            }
            entries.push((row, diag));
            entries.sort_by_key(|&(j, _)| j);
            for &(j, v) in &entries {
                if !(v.re.is_finite() && v.im.is_finite()) {
                    return Err(Error::Numerical(format!("non-finite coefficient in row {row}")));
                }
                col_idx.push(j);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
    }
    if rhs.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::Numerical("non-finite right-hand side".into()));
    }

    Ok(SparseSystem {
        matrix: CsrMatrix { n, row_ptr, col_idx, values },
        rhs,
        height: h,
        width: w,
        spacing_mm: grid.spacing(),
        boundary,
    })
}

/// LDL^T factorization of a complex symmetric banded matrix (no conjugation,
/// no pivoting). Stable here because the imaginary part of the operator is
/// definite whenever every loss factor is positive.
struct BandedLdl {
    n: usize,
    band: usize,
    /// Row i stores L[i][i - band .. i] at slots 0..band.
    lower: Vec<Complex64>,
    diag: Vec<Complex64>,
}

impl BandedLdl {
    fn factor(a: &CsrMatrix, band: usize) -> Result<Self> {
        let n = a.n;
        let zero = Complex64::new(0.0, 0.0);
        let mut lower = vec![zero; n * band];
        let mut diag = vec![zero; n];
        let mut w = vec![zero; band];

        for i in 0..n {
            let lo = i.saturating_sub(band);
            let mut a_ii = zero;
            for (j, v) in a.row(i) {
                if j < i {
                    debug_assert!(i - j <= band);
                    lower[i * band + j + band - i] = v;
                } else if j == i {
                    a_ii = v;
                }
            }
            let (done, rest) = lower.split_at_mut(i * band);
            let row_i = &mut rest[..band];
            for j in lo..i {
                let k_start = lo.max(j.saturating_sub(band));
                let slot_i = j + band - i;
                let mut s = zero;
                if k_start < j {
                    let wi = &w[k_start + band - i..slot_i];
                    let lj = &done[j * band + k_start + band - j..(j + 1) * band];
                    for (x, y) in wi.iter().zip(lj) {
                        s += x * y;
                    }
                }
                let l_ij = (row_i[slot_i] - s) / diag[j];
                row_i[slot_i] = l_ij;
                w[slot_i] = l_ij * diag[j];
            }
            let mut d = a_ii;
            for k in lo..i {
                let slot = k + band - i;
                d -= w[slot] * row_i[slot];
            }
            if d.norm() == 0.0 || !(d.re.is_finite() && d.im.is_finite()) {
                return Err(Error::Singular { row: i });
            }
            diag[i] = d;
        }
        Ok(Self { n, band, lower, diag })
    }

    fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let band = self.band;
        let mut x = b.to_vec();
        for i in 0..self.n {
            let lo = i.saturating_sub(band);
            let row = &self.lower[i * band..(i + 1) * band];
            let mut s = x[i];
            for k in lo..i {
                s -= row[k + band - i] * x[k];
            }
            x[i] = s;
        }
        for (xi, d) in x.iter_mut().zip(&self.diag) {
            *xi /= d;
        }
        for j in (0..self.n).rev() {
            let lo = j.saturating_sub(band);
            let xj = x[j];
            let row = &self.lower[j * band..(j + 1) * band];
            for k in lo..j {
                x[k] -= row[k + band - j] * xj;
            }
        }
        x
    }
}

/// Diagnostics of an accepted solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    pub relative_residual: f64,
    pub refinement_steps: usize,
}

/// Solves the system and returns the full-grid displacement (boundary
/// values included).
pub fn solve(system: &SparseSystem) -> Result<ComplexField> {
    solve_with_report(system).map(|(u, _)| u)
}

pub fn solve_with_report(system: &SparseSystem) -> Result<(ComplexField, SolveReport)> {
    let n = system.dimension();
    if norm(&system.rhs) == 0.0 {
        let zeros = vec![Complex64::new(0.0, 0.0); n];
        return Ok((system.to_field(&zeros)?, SolveReport { relative_residual: 0.0, refinement_steps: 0 }));
    }
    let ldl = BandedLdl::factor(&system.matrix, system.interior_width())?;
    let mut x = ldl.solve(&system.rhs);
    let mut residual = system.relative_residual(&x);
    let mut steps = 0;
    while !(residual <= RESIDUAL_TOL) {
        if steps == MAX_REFINEMENT || !residual.is_finite() {
            return Err(Error::NonConvergence { residual, iterations: steps });
        }
        let ax = system.matrix.matvec(&x);
        let r: Vec<Complex64> = system.rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let dx = ldl.solve(&r);
        for (xi, d) in x.iter_mut().zip(&dx) {
            *xi += d;
        }
        residual = system.relative_residual(&x);
        steps += 1;
    }
    Ok((system.to_field(&x)?, SolveReport { relative_residual: residual, refinement_steps: steps }))
}

/// Forward-model settings (the `[solver]` config section).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub frequency_hz: f64,
    pub density_kg_m3: f64,
    /// Spacing of the returned fields.
    pub output_spacing_mm: f64,
    /// Optional additive noise on the displacement; absent means noise-free.
    pub snr_db: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { frequency_hz: 60.0, density_kg_m3: 1000.0, output_spacing_mm: 1.0, snr_db: None }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("frequency_hz", self.frequency_hz),
            ("density_kg_m3", self.density_kg_m3),
            ("output_spacing_mm", self.output_spacing_mm),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::validation(format!("{name} must be positive, got {v}")));
            }
        }
        if self.snr_db.is_some_and(|s| !s.is_finite()) {
            return Err(Error::validation("snr_db must be finite"));
        }
        Ok(())
    }
}

/// Renders the phantom, solves the forward problem and resamples both the
/// displacement and the ground-truth stiffness to 1 mm.
pub fn simulate(spec: &PhantomSpec, frequency: f64, density: f64) -> Result<(ComplexField, ScalarField)> {
    let cfg = SolverConfig { frequency_hz: frequency, density_kg_m3: density, ..SolverConfig::default() };
    simulate_with(spec, &cfg)
}

pub fn simulate_with(spec: &PhantomSpec, cfg: &SolverConfig) -> Result<(ComplexField, ScalarField)> {
    let (mu, damping) = spec.render()?;
    let mu_star = ComplexModulusField::from_maps(&mu, &damping)?;
    let bc = BoundaryCondition::excited(spec.excitation.edge, Complex64::new(spec.excitation.amplitude, 0.0));
    let system = assemble(&mu_star, cfg.density_kg_m3, cfg.frequency_hz, &bc)?;
    let mut u = solve(&system)?;
    if let Some(snr) = cfg.snr_db {
        u = u.add_noise(snr, spec.seed)?;
    }
    Ok((u.resample(cfg.output_spacing_mm)?, mu.resample(cfg.output_spacing_mm)?))
}

/// Shear wavelength (mm) of a lossless medium: c / f with c = sqrt(mu / rho).
pub fn analytic_wavelength_mm(mu: f64, density: f64, frequency: f64) -> f64 {
    (mu / density).sqrt() / frequency * 1e3
}

/// Wavelength along one grid row, measured from the spacing of sign changes
/// of the real part after removing the mean phase of the profile.
///
/// Crossing positions are located by linear interpolation; the estimate is
/// twice the mean spacing between consecutive crossings.
pub fn zero_crossing_wavelength(u: &ComplexField, row: usize, cols: Range<usize>) -> Option<f64> {
    let profile: Vec<f64> = cols.clone().map(|c| u.get(row, c).re).collect();
    let mut crossings = Vec::new();
    for (k, pair) in profile.windows(2).enumerate() {
        let (a, b) = (pair[0], pair[1]);
        if a == 0.0 {
            crossings.push(k as f64);
        } else if a * b < 0.0 {
            crossings.push(k as f64 + a / (a - b));
        }
    }
    if crossings.len() < 2 {
        return None;
    }
    let span = crossings[crossings.len() - 1] - crossings[0];
    Some(2.0 * span / (crossings.len() - 1) as f64 * u.spacing())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interior_stencil_homogeneous() {
        let mu = ComplexModulusField::homogeneous(16, 1.0, 4000.0, 0.1).unwrap();
        let sys = assemble(&mu, 1000.0, 60.0, &BoundaryCondition::fixed()).unwrap();
        let ms = Complex64::new(4000.0, 400.0);
        let inv_h2 = 1e6;
        let omega = 2.0 * PI * 60.0;
        let i = sys.unknown_index(7, 7).unwrap();
        let expect_diag = -4.0 * ms * inv_h2 + 1000.0 * omega * omega;
        assert!((sys.matrix.get(i, i) - expect_diag).norm() < 1e-6 * expect_diag.norm());
        for (r, c) in [(6, 7), (8, 7), (7, 6), (7, 8)] {
            let j = sys.unknown_index(r, c).unwrap();
            assert!((sys.matrix.get(i, j) - ms * inv_h2).norm() < 1e-6 * (ms * inv_h2).norm());
        }
        assert!(sys.matrix.row(i).count() == 5);
        // symmetric
        for i in 0..sys.dimension() {
            for (j, v) in sys.matrix.row(i) {
                assert_eq!(sys.matrix.get(j, i), v);
            }
        }
    }

    #[test]
    fn harmonic_face() {
        let h = harmonic_mean(Complex64::new(2000.0, 0.0), Complex64::new(8000.0, 0.0));
        assert!((h.re - 3200.0).abs() < 1e-9 && h.im == 0.0);
    }

    #[test]
    fn rejects_small_grid_and_double_excitation() {
        let mu = ComplexModulusField::homogeneous(8, 1.0, 4000.0, 0.1).unwrap();
        assert!(assemble(&mu, 1000.0, 60.0, &BoundaryCondition::fixed()).is_err());
        let mu = ComplexModulusField::homogeneous(16, 1.0, 4000.0, 0.1).unwrap();
        let mut bc = BoundaryCondition::excited(Edge::Left, Complex64::new(1.0, 0.0));
        bc.top = EdgeCondition::Dirichlet(Complex64::new(1.0, 0.0));
        assert!(assemble(&mu, 1000.0, 60.0, &bc).is_err());
    }

    #[test]
    fn modulus_invariants() {
        assert!(ComplexModulusField::homogeneous(16, 1.0, 500.0, 0.1).is_err());
        assert!(ComplexModulusField::homogeneous(16, 1.0, 4000.0, 0.5).is_err());
    }

    #[test]
    fn fixed_boundary_gives_zero() {
        let mu = ComplexModulusField::homogeneous(20, 1.0, 4000.0, 0.1).unwrap();
        let sys = assemble(&mu, 1000.0, 60.0, &BoundaryCondition::fixed()).unwrap();
        assert!(sys.rhs.iter().all(|z| z.norm() == 0.0));
        let u = solve(&sys).unwrap();
        assert!(u.values().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn banded_solve_meets_residual() {
        let mu = ComplexModulusField::homogeneous(40, 1.0, 2000.0, 0.05).unwrap();
        let sys = assemble(&mu, 1000.0, 60.0, &BoundaryCondition::excited(Edge::Top, Complex64::new(0.5, 0.0))).unwrap();
        let (u, report) = solve_with_report(&sys).unwrap();
        assert!(report.relative_residual <= RESIDUAL_TOL);
        // boundary rows carry the excitation
        assert_eq!(u.get(0, 10), Complex64::new(0.5, 0.0));
        assert_eq!(u.get(39, 10), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn zero_crossings_on_standing_wave() {
        let kh: f64 = 0.2;
        let u = ComplexField::from_fn(3, 64, 1.0, |_, c| {
            Complex64::from_polar(1.0, kh * c as f64) + 0.4 * Complex64::from_polar(1.0, -kh * c as f64)
        })
        .unwrap();
        let zc = zero_crossing_wavelength(&u, 1, 0..64).unwrap();
        assert!((zc - 2.0 * PI / kh).abs() < 2.0);
    }
}
