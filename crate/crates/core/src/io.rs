//! MREG binary field files and their JSON sidecars.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "MREG" | version u32 | dtype u32 | height u32 | width u32 | spacing_mm f32 | payload f32...
//! ```
//!
//! dtype 1 is real, dtype 2 is complex stored as interleaved (re, im).
//! Metadata lives next to the binary in `<path>.json`.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{ComplexField, FieldMetadata, FieldValue, Grid, ScalarField};

pub const MAGIC: &[u8; 4] = b"MREG";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;

pub const DTYPE_REAL: u32 = 1;
pub const DTYPE_COMPLEX: u32 = 2;

/// Scalar types that have an MREG dtype code.
pub trait MregValue: FieldValue {
    const DTYPE: u32;
    const LANES: usize;
    fn push_lanes(&self, out: &mut Vec<f32>);
    fn from_lanes(lanes: &[f32]) -> Self;
}

impl MregValue for f64 {
    const DTYPE: u32 = DTYPE_REAL;
    const LANES: usize = 1;
    fn push_lanes(&self, out: &mut Vec<f32>) {
        out.push(*self as f32);
    }
    fn from_lanes(lanes: &[f32]) -> Self {
        lanes[0] as f64
    }
}

impl MregValue for Complex64 {
    const DTYPE: u32 = DTYPE_COMPLEX;
    const LANES: usize = 2;
    fn push_lanes(&self, out: &mut Vec<f32>) {
        out.push(self.re as f32);
        out.push(self.im as f32);
    }
    fn from_lanes(lanes: &[f32]) -> Self {
        Complex64::new(lanes[0] as f64, lanes[1] as f64)
    }
}

/// A field read back from disk whose dtype was not known in advance.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyField {
    Real(ScalarField),
    Complex(ComplexField),
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Serializes a field to MREG bytes. Values are stored as f32; anything
/// that does not fit (overflows to infinity) is rejected.
pub fn encode_field<T: MregValue>(field: &Grid<T>) -> Result<Vec<u8>> {
    let mut lanes = Vec::with_capacity(field.len() * T::LANES);
    for v in field.values() {
        v.push_lanes(&mut lanes);
    }
    if let Some(idx) = lanes.iter().position(|x| !x.is_finite()) {
        return Err(Error::validation(format!(
            "value at index {} is not representable as f32",
            idx / T::LANES
        )));
    }
    let spacing = field.spacing() as f32;
    if !(spacing.is_finite() && spacing > 0.0) {
        return Err(Error::validation("spacing is not representable as f32"));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * lanes.len());
    out.extend_from_slice(MAGIC);
    for word in [VERSION, T::DTYPE, field.height() as u32, field.width() as u32] {
        out.extend_from_slice(&word.to_le_bytes());
    }
    out.extend_from_slice(&spacing.to_le_bytes());
    for x in lanes {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(out)
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

fn f32_at(bytes: &[u8], offset: usize) -> f32 {
    f32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

fn decode_payload<T: MregValue>(bytes: &[u8], height: usize, width: usize, spacing: f64) -> Result<Grid<T>> {
    let n = height * width;
    let need = HEADER_LEN + 4 * T::LANES * n;
    if bytes.len() < need {
        return Err(Error::format(format!(
            "truncated payload: {height}x{width} needs {} bytes, file has {}",
            need - HEADER_LEN,
            bytes.len() - HEADER_LEN
        )));
    }
    if bytes.len() > need {
        return Err(Error::format(format!("{} trailing bytes after payload", bytes.len() - need)));
    }
    let mut lanes = [0f32; 2];
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        for (l, lane) in lanes.iter_mut().enumerate().take(T::LANES) {
            *lane = f32_at(bytes, HEADER_LEN + 4 * (i * T::LANES + l));
        }
        values.push(T::from_lanes(&lanes));
    }
    Grid::new(height, width, spacing, values).map_err(|e| Error::format(e.to_string()))
}

pub fn decode_field(bytes: &[u8]) -> Result<AnyField> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(format!("file too short for header ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format("bad magic, not an MREG file"));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(Error::format(format!("unsupported MREG version {version}")));
    }
    let dtype = u32_at(bytes, 8);
    let height = u32_at(bytes, 12) as usize;
    let width = u32_at(bytes, 16) as usize;
    let spacing = f32_at(bytes, 20) as f64;
    match dtype {
        DTYPE_REAL => Ok(AnyField::Real(decode_payload(bytes, height, width, spacing)?)),
        DTYPE_COMPLEX => Ok(AnyField::Complex(decode_payload(bytes, height, width, spacing)?)),
        other => Err(Error::format(format!("unsupported dtype code {other}"))),
    }
}

/// Writes `<path>` and `<path>.json`.
pub fn write_field<T: MregValue>(field: &Grid<T>, meta: &FieldMetadata, path: &Path) -> Result<()> {
    meta.validate()?;
    let bytes = encode_field(field)?;
    fs::write(path, bytes)?;
    fs::write(sidecar_path(path), serde_json::to_string_pretty(meta)?)?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<(AnyField, FieldMetadata)> {
    let field = decode_field(&fs::read(path)?)?;
    let meta: FieldMetadata = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
    meta.validate()?;
    Ok((field, meta))
}

pub fn read_scalar(path: &Path) -> Result<(ScalarField, FieldMetadata)> {
    match read_field(path)? {
        (AnyField::Real(f), m) => Ok((f, m)),
        (AnyField::Complex(_), _) => Err(Error::format(format!("{} holds a complex field", path.display()))),
    }
}

pub fn read_complex(path: &Path) -> Result<(ComplexField, FieldMetadata)> {
    match read_field(path)? {
        (AnyField::Complex(f), m) => Ok((f, m)),
        (AnyField::Real(_), _) => Err(Error::format(format!("{} holds a real field", path.display()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::PhantomClass;

    fn meta() -> FieldMetadata {
        FieldMetadata::new(60.0, 1000.0, PhantomClass::Homogeneous, 7).unwrap()
    }

    #[test]
    fn real_2x2_layout() {
        let f = ScalarField::new(2, 2, 1.0, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = encode_field(&f).unwrap();
        assert_eq!(bytes.len(), 40);
        assert_eq!(&bytes[..4], b"MREG");
        assert_eq!(u32_at(&bytes, 8), DTYPE_REAL);
        assert_eq!(decode_field(&bytes).unwrap(), AnyField::Real(f));
    }

    #[test]
    fn complex_first_pair() {
        let mut vals = vec![Complex64::new(0.0, 0.0); 6];
        vals[0] = Complex64::new(1.0, 2.0);
        let f = ComplexField::new(2, 3, 0.5, vals).unwrap();
        let bytes = encode_field(&f).unwrap();
        assert_eq!(f32_at(&bytes, HEADER_LEN), 1.0);
        assert_eq!(f32_at(&bytes, HEADER_LEN + 4), 2.0);
        match decode_field(&bytes).unwrap() {
            AnyField::Complex(g) => assert_eq!(g.get(0, 0), Complex64::new(1.0, 2.0)),
            _ => panic!("wrong dtype"),
        }
    }

    #[test]
    fn unrepresentable_rejected() {
        let f = ScalarField::new(1, 2, 1.0, vec![1e300, 0.0]).unwrap();
        assert!(matches!(encode_field(&f), Err(Error::Validation(_))));
        assert!(matches!(ScalarField::new(1, 1, 1.0, vec![f64::NAN]), Err(Error::Validation(_))));
    }

    #[test]
    fn bad_magic_and_version() {
        let f = ScalarField::filled(2, 2, 1.0, 1.0).unwrap();
        let mut bytes = encode_field(&f).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_field(&bytes), Err(Error::Format(_))));
        let mut bytes = encode_field(&f).unwrap();
        bytes[4] = 9;
        assert!(decode_field(&bytes).unwrap_err().to_string().contains("version"));
        let mut bytes = encode_field(&f).unwrap();
        bytes[8] = 7;
        assert!(decode_field(&bytes).unwrap_err().to_string().contains("dtype"));
    }

    #[test]
    fn truncated_payload() {
        let f = ScalarField::filled(5, 10, 1.0, 1.0).unwrap();
        let mut bytes = encode_field(&f).unwrap();
        bytes[12..16].copy_from_slice(&100u32.to_le_bytes());
        bytes[16..20].copy_from_slice(&100u32.to_le_bytes());
        let err = decode_field(&bytes).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn file_round_trip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.mreg");
        let f = ComplexField::from_fn(3, 4, 1.0, |r, c| Complex64::new(r as f64 * 0.5, c as f64 - 1.25)).unwrap();
        let m = meta().with_config_hash("abc");
        write_field(&f, &m, &path).unwrap();
        let (g, m2) = read_complex(&path).unwrap();
        assert_eq!(g, f);
        assert_eq!(m2, m);
        assert!(read_scalar(&path).is_err());
        let json: serde_json::Value = serde_json::from_slice(&fs::read(sidecar_path(&path)).unwrap()).unwrap();
        for key in ["frequency_hz", "density_kg_m3", "phantom_class", "seed"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
    }
}
