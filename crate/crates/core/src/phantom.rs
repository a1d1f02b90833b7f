//! Synthetic 2D phantoms: stiffness and damping layouts plus the edge
//! excitation that drives the forward solve.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::rng;

pub const MU_RANGE: (f64, f64) = (1000.0, 8000.0);
pub const DAMPING_RANGE: (f64, f64) = (0.05, 0.3);
pub const AMPLITUDE_RANGE: (f64, f64) = (0.3, 0.9);

const MAX_PLACEMENT_FAILURES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomClass {
    Homogeneous,
    LinearGradient,
    FourRandomInclusions,
    TwoRandomInclusions,
    FourFixedInclusions,
}

impl PhantomClass {
    pub const ALL: [PhantomClass; 5] = [
        PhantomClass::Homogeneous,
        PhantomClass::LinearGradient,
        PhantomClass::FourRandomInclusions,
        PhantomClass::TwoRandomInclusions,
        PhantomClass::FourFixedInclusions,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PhantomClass::Homogeneous => "homogeneous",
            PhantomClass::LinearGradient => "linear_gradient",
            PhantomClass::FourRandomInclusions => "four_random_inclusions",
            PhantomClass::TwoRandomInclusions => "two_random_inclusions",
            PhantomClass::FourFixedInclusions => "four_fixed_inclusions",
        }
    }

    pub fn has_inclusions(self) -> bool {
        matches!(
            self,
            PhantomClass::FourRandomInclusions | PhantomClass::TwoRandomInclusions | PhantomClass::FourFixedInclusions
        )
    }
}

impl fmt::Display for PhantomClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PhantomClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        PhantomClass::ALL
            .into_iter()
            .find(|c| c.name() == norm)
            .ok_or_else(|| {
                let names: Vec<_> = PhantomClass::ALL.iter().map(|c| c.name()).collect();
                Error::validation(format!("unknown phantom class {s:?}, expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Edge {
    Left,
    Top,
    Right,
    Bottom,
}

impl Edge {
    pub const ALL: [Edge; 4] = [Edge::Left, Edge::Top, Edge::Right, Edge::Bottom];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    Y,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inclusion {
    /// (x, y) in mm; x runs along columns, y along rows.
    pub center: (f64, f64),
    pub radius: f64,
    pub mu: f64,
    pub damping: f64,
}

impl Inclusion {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.center.0, y - self.center.1);
        dx * dx + dy * dy <= self.radius * self.radius
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gradient {
    pub axis: Axis,
    pub mu_start: f64,
    pub mu_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Excitation {
    pub edge: Edge,
    /// Prescribed displacement in mm.
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub class: PhantomClass,
    pub side_mm: f64,
    pub spacing_mm: f64,
    pub background_mu: f64,
    pub background_damping: f64,
    #[serde(default)]
    pub inclusions: Vec<Inclusion>,
    #[serde(default)]
    pub gradient: Option<Gradient>,
    pub excitation: Excitation,
    pub seed: u64,
}

/// Domain and sampling settings shared by all phantom classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub side_mm: f64,
    pub spacing_mm: f64,
    pub radius_min_mm: f64,
    pub radius_max_mm: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self { side_mm: 128.0, spacing_mm: 1.0, radius_min_mm: 5.0, radius_max_mm: 20.0 }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.side_mm.is_finite() && self.spacing_mm.is_finite() && self.side_mm > 0.0 && self.spacing_mm > 0.0) {
            return Err(Error::validation("side_mm and spacing_mm must be positive"));
        }
        if !(self.radius_min_mm > 0.0 && self.radius_min_mm <= self.radius_max_mm) {
            return Err(Error::validation("inclusion radius range must satisfy 0 < min <= max"));
        }
        Ok(())
    }
}

fn in_range(name: &str, v: f64, (lo, hi): (f64, f64)) -> Result<()> {
    if v.is_finite() && (lo..=hi).contains(&v) {
        Ok(())
    } else {
        Err(Error::validation(format!("{name} = {v} outside [{lo}, {hi}]")))
    }
}

impl PhantomSpec {
    /// Number of grid nodes per axis.
    pub fn nodes(&self) -> usize {
        (self.side_mm / self.spacing_mm).round() as usize + 1
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.side_mm.is_finite() && self.side_mm > 0.0) {
            return Err(Error::validation(format!("side_mm must be positive, got {}", self.side_mm)));
        }
        if !(self.spacing_mm.is_finite() && self.spacing_mm > 0.0) {
            return Err(Error::validation(format!("spacing_mm must be positive, got {}", self.spacing_mm)));
        }
        if self.nodes() < 2 {
            return Err(Error::validation("domain smaller than one grid cell"));
        }
        in_range("background_mu", self.background_mu, MU_RANGE)?;
        in_range("background_damping", self.background_damping, DAMPING_RANGE)?;
        // zero amplitude switches the excitation off
        if self.excitation.amplitude != 0.0 {
            in_range("excitation amplitude", self.excitation.amplitude, AMPLITUDE_RANGE)?;
        }
        for (i, inc) in self.inclusions.iter().enumerate() {
            in_range(&format!("inclusion {i} mu"), inc.mu, MU_RANGE)?;
            in_range(&format!("inclusion {i} damping"), inc.damping, DAMPING_RANGE)?;
            if !(inc.radius.is_finite() && inc.radius > 0.0) {
                return Err(Error::validation(format!("inclusion {i} radius must be positive")));
            }
            let (x, y) = inc.center;
            let inside = x - inc.radius >= 0.0
                && y - inc.radius >= 0.0
                && x + inc.radius <= self.side_mm
                && y + inc.radius <= self.side_mm;
            if !inside {
                return Err(Error::validation(format!("inclusion {i} extends outside the domain")));
            }
        }
        if let Some(g) = &self.gradient {
            in_range("gradient mu_start", g.mu_start, MU_RANGE)?;
            in_range("gradient mu_end", g.mu_end, MU_RANGE)?;
        }
        Ok(())
    }

    /// Background stiffness at physical position (x, y), ignoring inclusions.
    fn background_at(&self, x: f64, y: f64) -> f64 {
        match &self.gradient {
            Some(g) => {
                let t = match g.axis {
                    Axis::X => x,
                    Axis::Y => y,
                } / self.side_mm;
                g.mu_start + (g.mu_end - g.mu_start) * t
            }
            None => self.background_mu,
        }
    }

    /// Index of the last inclusion covering (x, y), if any.
    pub fn inclusion_at(&self, x: f64, y: f64) -> Option<usize> {
        self.inclusions.iter().rposition(|inc| inc.contains(x, y))
    }

    /// Rasterizes the stiffness (Pa) and damping maps with hard edges.
    pub fn render(&self) -> Result<(ScalarField, ScalarField)> {
        self.validate()?;
        let n = self.nodes();
        let h = self.spacing_mm;
        let mut mu = Vec::with_capacity(n * n);
        let mut damping = Vec::with_capacity(n * n);
        for r in 0..n {
            for c in 0..n {
                let (x, y) = (c as f64 * h, r as f64 * h);
                match self.inclusion_at(x, y) {
                    Some(i) => {
                        mu.push(self.inclusions[i].mu);
                        damping.push(self.inclusions[i].damping);
                    }
                    None => {
                        mu.push(self.background_at(x, y));
                        damping.push(self.background_damping);
                    }
                }
            }
        }
        Ok((ScalarField::new(n, n, h, mu)?, ScalarField::new(n, n, h, damping)?))
    }

    /// Region labels: 0 background, `i + 1` for inclusion `i`.
    pub fn region_labels(&self) -> Result<ScalarField> {
        let n = self.nodes();
        let h = self.spacing_mm;
        ScalarField::from_fn(n, n, h, |r, c| {
            self.inclusion_at(c as f64 * h, r as f64 * h).map_or(0.0, |i| (i + 1) as f64)
        })
    }
}

/// Renders stiffness and damping maps for `spec`.
pub fn render_stiffness(spec: &PhantomSpec) -> Result<(ScalarField, ScalarField)> {
    spec.render()
}

pub fn sample_spec(class: PhantomClass, seed: u64) -> Result<PhantomSpec> {
    sample_spec_with(class, seed, &PhantomConfig::default())
}

pub fn sample_spec_with(class: PhantomClass, seed: u64, cfg: &PhantomConfig) -> Result<PhantomSpec> {
    cfg.validate()?;
    let mut rng = rng::stream(seed, rng::PHANTOM_STREAM);
    let mu = |rng: &mut rand_chacha::ChaCha8Rng| rng.gen_range(MU_RANGE.0..=MU_RANGE.1);
    let damp = |rng: &mut rand_chacha::ChaCha8Rng| rng.gen_range(DAMPING_RANGE.0..=DAMPING_RANGE.1);

    let background_mu = mu(&mut rng);
    let background_damping = damp(&mut rng);
    let edge = Edge::ALL[rng.gen_range(0..4)];
    let amplitude = rng.gen_range(AMPLITUDE_RANGE.0..=AMPLITUDE_RANGE.1);
    let side = cfg.side_mm;

    let mut gradient = None;
    let mut inclusions = Vec::new();
    match class {
        PhantomClass::Homogeneous => {}
        PhantomClass::LinearGradient => {
            let axis = if rng.gen_bool(0.5) { Axis::X } else { Axis::Y };
            gradient = Some(Gradient { axis, mu_start: mu(&mut rng), mu_end: mu(&mut rng) });
        }
        PhantomClass::FourRandomInclusions | PhantomClass::TwoRandomInclusions => {
            let count = if class == PhantomClass::FourRandomInclusions { 4 } else { 2 };
            let mut failures = 0;
            while inclusions.len() < count {
                let radius = rng.gen_range(cfg.radius_min_mm..=cfg.radius_max_mm);
                if 2.0 * radius > side {
                    return Err(Error::validation("inclusion radius exceeds domain"));
                }
                let x = rng.gen_range(radius..=side - radius);
                let y = rng.gen_range(radius..=side - radius);
                let clear = inclusions.iter().all(|o: &Inclusion| {
                    let d = ((o.center.0 - x).powi(2) + (o.center.1 - y).powi(2)).sqrt();
                    d >= o.radius + radius
                });
                if clear {
                    inclusions.push(Inclusion { center: (x, y), radius, mu: mu(&mut rng), damping: damp(&mut rng) });
                } else {
                    failures += 1;
                    if failures >= MAX_PLACEMENT_FAILURES {
                        return Err(Error::validation(format!(
                            "could not place {count} non-overlapping inclusions after {failures} attempts"
                        )));
                    }
                }
            }
        }
        PhantomClass::FourFixedInclusions => {
            let max_r = cfg.radius_max_mm.min(side / 4.0);
            let min_r = cfg.radius_min_mm.min(max_r);
            for (qx, qy) in [(1.0, 1.0), (3.0, 1.0), (1.0, 3.0), (3.0, 3.0)] {
                let radius = rng.gen_range(min_r..=max_r);
                inclusions.push(Inclusion {
                    center: (qx * side / 4.0, qy * side / 4.0),
                    radius,
                    mu: mu(&mut rng),
                    damping: damp(&mut rng),
                });
            }
        }
    }

    let spec = PhantomSpec {
        class,
        side_mm: side,
        spacing_mm: cfg.spacing_mm,
        background_mu,
        background_damping,
        inclusions,
        gradient,
        excitation: Excitation { edge, amplitude },
        seed,
    };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn homogeneous(mu: f64) -> PhantomSpec {
        PhantomSpec {
            class: PhantomClass::Homogeneous,
            side_mm: 128.0,
            spacing_mm: 1.0,
            background_mu: mu,
            background_damping: 0.1,
            inclusions: vec![],
            gradient: None,
            excitation: Excitation { edge: Edge::Left, amplitude: 0.5 },
            seed: 0,
        }
    }

    #[test]
    fn homogeneous_sample() {
        let s = sample_spec(PhantomClass::Homogeneous, 7).unwrap();
        assert!(s.inclusions.is_empty());
        assert!(s.gradient.is_none());
        assert!((1000.0..=8000.0).contains(&s.background_mu));
    }

    #[test]
    fn four_random_inclusions_valid() {
        let s = sample_spec(PhantomClass::FourRandomInclusions, 3).unwrap();
        assert_eq!(s.inclusions.len(), 4);
        for (i, a) in s.inclusions.iter().enumerate() {
            for b in &s.inclusions[i + 1..] {
                let d = ((a.center.0 - b.center.0).powi(2) + (a.center.1 - b.center.1).powi(2)).sqrt();
                assert!(d >= a.radius + b.radius);
            }
        }
        s.validate().unwrap();
    }

    #[test]
    fn sampling_is_deterministic() {
        for class in PhantomClass::ALL {
            assert_eq!(sample_spec(class, 11).unwrap(), sample_spec(class, 11).unwrap());
        }
        assert_ne!(
            sample_spec(PhantomClass::Homogeneous, 1).unwrap(),
            sample_spec(PhantomClass::Homogeneous, 2).unwrap()
        );
    }

    #[test]
    fn placement_failure_is_reported() {
        let cfg = PhantomConfig { side_mm: 44.0, radius_min_mm: 20.0, radius_max_mm: 20.0, ..Default::default() };
        assert!(sample_spec_with(PhantomClass::FourRandomInclusions, 1, &cfg).is_err());
    }

    #[test]
    fn render_homogeneous() {
        let (mu, damping) = homogeneous(4000.0).render().unwrap();
        assert_eq!(mu.shape(), (129, 129));
        assert!(mu.values().iter().all(|&v| v == 4000.0));
        assert!(damping.values().iter().all(|&v| v == 0.1));
    }

    #[test]
    fn render_gradient_midpoint() {
        let mut s = homogeneous(2000.0);
        s.gradient = Some(Gradient { axis: Axis::X, mu_start: 1000.0, mu_end: 8000.0 });
        let (mu, _) = s.render().unwrap();
        assert_eq!(mu.get(10, 64), 4500.0);
        assert_eq!(mu.get(0, 0), 1000.0);
        assert_eq!(mu.get(5, 128), 8000.0);
    }

    #[test]
    fn render_inclusion_membership() {
        let mut s = homogeneous(2000.0);
        s.inclusions.push(Inclusion { center: (60.0, 60.0), radius: 10.0, mu: 8000.0, damping: 0.2 });
        let (mu, damping) = s.render().unwrap();
        assert_eq!(mu.get(60, 60), 8000.0);
        assert_eq!(mu.get(10, 10), 2000.0);
        assert_eq!(damping.get(60, 60), 0.2);
        // only declared values appear
        assert!(mu.values().iter().all(|&v| v == 8000.0 || v == 2000.0));
        let area = mu.values().iter().filter(|&&v| v == 8000.0).count() as f64;
        let exact = std::f64::consts::PI * 100.0;
        let perimeter_band = 2.0 * std::f64::consts::PI * 10.0;
        assert!((area - exact).abs() <= perimeter_band);
    }

    #[test]
    fn validate_ranges() {
        let mut s = homogeneous(500.0);
        assert!(s.validate().is_err());
        s.background_mu = 3000.0;
        s.excitation.amplitude = 1.2;
        assert!(s.validate().is_err());
        s.excitation.amplitude = 0.6;
        s.inclusions.push(Inclusion { center: (5.0, 60.0), radius: 10.0, mu: 3000.0, damping: 0.1 });
        assert!(s.validate().is_err());
    }

    #[test]
    fn class_parsing() {
        assert_eq!("four-fixed-inclusions".parse::<PhantomClass>().unwrap(), PhantomClass::FourFixedInclusions);
        assert!("cylinder".parse::<PhantomClass>().is_err());
    }

    #[test]
    fn json_round_trip() {
        let s = sample_spec(PhantomClass::LinearGradient, 5).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<PhantomSpec>(&text).unwrap(), s);
    }
}
