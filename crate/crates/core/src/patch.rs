//! Patch tiling for training and inference, and overlap-averaged
//! reassembly of patch predictions.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{ComplexField, ScalarField};

pub const MIN_PATCH: usize = 8;
pub const PATCHSET_MAGIC: &[u8; 4] = b"MRPS";
pub const PATCHSET_VERSION: u32 = 1;

/// One displacement window, optionally paired with its stiffness target.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    /// Channel-major `2 x h x w`: real part then imaginary part, in mm.
    pub input: Vec<f64>,
    /// `h x w` stiffness target; `None` for inference patches.
    pub target: Option<Vec<f64>>,
    /// Top-left sample (row, col) in the source field.
    pub origin: (usize, usize),
    pub source_id: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub patches: Vec<Patch>,
    pub patch_size: usize,
    pub stride: usize,
    pub exclusion_threshold: f64,
}

/// Tiling parameters (the `[patch]` config section).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatchConfig {
    pub train_size: usize,
    pub train_stride: usize,
    pub infer_size: usize,
    pub infer_stride: usize,
    pub exclusion_threshold: f64,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self { train_size: 30, train_stride: 30, infer_size: 20, infer_stride: 3, exclusion_threshold: 0.5 }
    }
}

impl PatchConfig {
    pub fn validate(&self) -> Result<()> {
        for size in [self.train_size, self.infer_size] {
            if size < MIN_PATCH {
                return Err(Error::validation(format!("patch size {size} below minimum {MIN_PATCH}")));
            }
        }
        if self.train_stride == 0 || self.infer_stride == 0 {
            return Err(Error::validation("strides must be positive"));
        }
        if !(0.0..=1.0).contains(&self.exclusion_threshold) {
            return Err(Error::validation(format!("exclusion threshold {} outside [0, 1]", self.exclusion_threshold)));
        }
        Ok(())
    }
}

fn check_tiling(h: usize, w: usize, size: usize, stride: usize) -> Result<()> {
    if size < MIN_PATCH {
        return Err(Error::validation(format!("patch size {size} below minimum {MIN_PATCH}")));
    }
    if stride == 0 {
        return Err(Error::validation("stride must be positive"));
    }
    if h < size || w < size {
        return Err(Error::validation(format!("field {h}x{w} smaller than patch size {size}")));
    }
    Ok(())
}

/// Origins `0, stride, 2 stride, ...` that fit in `n`; with `clamp`, a final
/// origin `n - size` is appended so the last patch touches the edge.
fn origins(n: usize, size: usize, stride: usize, clamp: bool) -> Vec<usize> {
    let last = n - size;
    let mut out: Vec<usize> = (0..=last).step_by(stride).collect();
    if clamp && *out.last().unwrap() != last {
        out.push(last);
    }
    out
}

fn displacement_channels(u: &ComplexField, row: usize, col: usize, size: usize) -> Vec<f64> {
    let window = u.window(row, col, size, size);
    window.iter().map(|z| z.re).chain(window.iter().map(|z| z.im)).collect()
}

/// Regular tiling of a displacement/stiffness pair. Patches whose target has
/// fewer than `threshold` nonzero pixels are dropped.
pub fn extract_training(
    u: &ComplexField,
    mu: &ScalarField,
    size: usize,
    stride: usize,
    threshold: f64,
    source_id: u32,
) -> Result<PatchSet> {
    if !u.same_grid(mu) {
        return Err(Error::validation("displacement and stiffness grids differ"));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::validation(format!("exclusion threshold {threshold} outside [0, 1]")));
    }
    let (h, w) = u.shape();
    check_tiling(h, w, size, stride)?;
    let mut patches = Vec::new();
    for &r in &origins(h, size, stride, false) {
        for &c in &origins(w, size, stride, false) {
            let target = mu.window(r, c, size, size);
            let nonzero = target.iter().filter(|&&v| v != 0.0).count();
            if (nonzero as f64) < threshold * (size * size) as f64 {
                continue;
            }
            patches.push(Patch {
                input: displacement_channels(u, r, c, size),
                target: Some(target),
                origin: (r, c),
                source_id,
            });
        }
    }
    Ok(PatchSet { patches, patch_size: size, stride, exclusion_threshold: threshold })
}

/// Overlapping tiling with edge-clamped final origins, so every pixel is
/// covered at least once.
pub fn extract_inference(u: &ComplexField, size: usize, stride: usize) -> Result<PatchSet> {
    let (h, w) = u.shape();
    check_tiling(h, w, size, stride)?;
    let mut patches = Vec::new();
    for &r in &origins(h, size, stride, true) {
        for &c in &origins(w, size, stride, true) {
            patches.push(Patch { input: displacement_channels(u, r, c, size), target: None, origin: (r, c), source_id: 0 });
        }
    }
    Ok(PatchSet { patches, patch_size: size, stride, exclusion_threshold: 0.0 })
}

/// One patch prediction: origin plus a row-major `h x w` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPrediction {
    pub origin: (usize, usize),
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

/// Per-pixel mean over all covering predictions; uncovered pixels are 0 and
/// flagged false in the returned mask.
pub fn aggregate(
    predictions: &[PatchPrediction],
    out_shape: (usize, usize),
    spacing: f64,
) -> Result<(ScalarField, Vec<bool>)> {
    if predictions.is_empty() {
        return Err(Error::validation("no predictions to aggregate"));
    }
    let (h, w) = out_shape;
    let mut sum = vec![0.0; h * w];
    let mut count = vec![0u32; h * w];
    for p in predictions {
        let (r0, c0) = p.origin;
        if r0 + p.height > h || c0 + p.width > w || p.values.len() != p.height * p.width {
            return Err(Error::validation(format!(
                "prediction at {:?} of size {}x{} does not fit {h}x{w}",
                p.origin, p.height, p.width
            )));
        }
        for r in 0..p.height {
            for c in 0..p.width {
                let i = (r0 + r) * w + c0 + c;
                sum[i] += p.values[r * p.width + c];
                count[i] += 1;
            }
        }
    }
    let values = sum.iter().zip(&count).map(|(&s, &n)| if n > 0 { s / n as f64 } else { 0.0 }).collect();
    let covered = count.iter().map(|&n| n > 0).collect();
    Ok((ScalarField::new(h, w, spacing, values)?, covered))
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn has_targets(&self) -> bool {
        self.patches.first().is_some_and(|p| p.target.is_some())
    }

    /// Concatenates sets with identical tiling parameters.
    pub fn concat(sets: impl IntoIterator<Item = PatchSet>) -> Result<PatchSet> {
        let mut iter = sets.into_iter();
        let mut out = iter.next().ok_or_else(|| Error::validation("no patch sets to concatenate"))?;
        for set in iter {
            if set.patch_size != out.patch_size {
                return Err(Error::validation("patch sizes differ"));
            }
            out.patches.extend(set.patches);
        }
        Ok(out)
    }

    /// Binary container, little-endian:
    ///
    /// ```text
    /// "MRPS" | version u32 | patch_size u32 | stride u32 | threshold f32 | has_target u32 | count u32
    /// then per patch: source_id u32 | row i32 | col i32 | input f32 x 2hw | target f32 x hw
    /// ```
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let has_target = self.has_targets();
        let hw = self.patch_size * self.patch_size;
        let mut out = Vec::new();
        out.extend_from_slice(PATCHSET_MAGIC);
        for word in [PATCHSET_VERSION, self.patch_size as u32, self.stride as u32] {
            out.extend_from_slice(&word.to_le_bytes());
        }
        out.extend_from_slice(&(self.exclusion_threshold as f32).to_le_bytes());
        out.extend_from_slice(&(has_target as u32).to_le_bytes());
        out.extend_from_slice(&(self.patches.len() as u32).to_le_bytes());
        for p in &self.patches {
            if p.input.len() != 2 * hw || p.target.is_some() != has_target {
                return Err(Error::validation("patch set mixes shapes or target presence"));
            }
            out.extend_from_slice(&p.source_id.to_le_bytes());
            out.extend_from_slice(&(p.origin.0 as i32).to_le_bytes());
            out.extend_from_slice(&(p.origin.1 as i32).to_le_bytes());
            for &v in p.input.iter().chain(p.target.iter().flatten()) {
                let x = v as f32;
                if !x.is_finite() {
                    return Err(Error::validation("patch value not representable as f32"));
                }
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<PatchSet> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != PATCHSET_MAGIC {
            return Err(Error::format("bad magic, not a patch set"));
        }
        let version = cur.u32()?;
        if version != PATCHSET_VERSION {
            return Err(Error::format(format!("unsupported patch set version {version}")));
        }
        let patch_size = cur.u32()? as usize;
        let stride = cur.u32()? as usize;
        let exclusion_threshold = cur.f32()? as f64;
        let has_target = cur.u32()? != 0;
        let count = cur.u32()? as usize;
        let hw = patch_size * patch_size;
        let mut patches = Vec::with_capacity(count);
        for _ in 0..count {
            let source_id = cur.u32()?;
            let row = cur.i32()?;
            let col = cur.i32()?;
            if row < 0 || col < 0 {
                return Err(Error::format("negative patch origin"));
            }
            let input = cur.f32s(2 * hw)?;
            let target = if has_target { Some(cur.f32s(hw)?) } else { None };
            patches.push(Patch { input, target, origin: (row as usize, col as usize), source_id });
        }
        if cur.pos != bytes.len() {
            return Err(Error::format("trailing bytes after last patch"));
        }
        Ok(PatchSet { patches, patch_size, stride, exclusion_threshold })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<PatchSet> {
        PatchSet::from_bytes(&fs::read(path)?)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::format("truncated patch set"));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(4 * n)?;
        Ok(raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64).collect())
    }
}
