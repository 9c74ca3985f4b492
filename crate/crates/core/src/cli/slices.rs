//! Axial/coronal/sagittal slices as 8-bit PGM and PNG images. A volume and
//! its reference share one grey window (the reference's range) so they can
//! be compared side by side.

use std::path::Path;

use super::Axis;
use crate::data::tensor::{load_tensor, write_atomic, Tensor};
use crate::error::{invalid, Error, Result};

/// Gray image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

/// Extracts slice `index` of a `[nz, ny, nx]` tensor across `axis`.
pub fn extract_slice(t: &Tensor, axis: Axis, index: usize) -> Result<Slice> {
    let [nz, ny, nx] = match t.shape.as_slice() {
        [a, b, c] => [*a, *b, *c],
        other => return invalid(format!("slices need a 3D volume, got shape {other:?}")),
    };
    let at = |z: usize, y: usize, x: usize| t.values[(z * ny + y) * nx + x];
    let (width, height, n) = match axis {
        Axis::Z => (nx, ny, nz),
        Axis::Y => (nx, nz, ny),
        Axis::X => (ny, nz, nx),
    };
    if index >= n {
        return invalid(format!("slice {index} out of range for {n} slices"));
    }
    let mut values = Vec::with_capacity(width * height);
    for r in 0..height {
        for c in 0..width {
            values.push(match axis {
                Axis::Z => at(index, r, c),
                Axis::Y => at(r, index, c),
                Axis::X => at(r, c, index),
            });
        }
    }
    Ok(Slice { width, height, values })
}

/// Maps `[lo, hi]` linearly onto 0..=255, clamping outside values.
pub fn to_gray(values: &[f64], lo: f64, hi: f64) -> Vec<u8> {
    let span = if hi > lo { hi - lo } else { 1.0 };
    values
        .iter()
        .map(|&v| (((v - lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

pub fn encode_pgm(width: usize, height: usize, gray: &[u8]) -> Vec<u8> {
    let mut bytes = format!("P5\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(gray);
    bytes
}

fn write_png(path: &Path, width: usize, height: usize, gray: Vec<u8>) -> Result<()> {
    let img = image::GrayImage::from_raw(width as u32, height as u32, gray)
        .ok_or_else(|| Error::InvalidState("slice buffer size mismatch".into()))?;
    let mut bytes = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| Error::Format(format!("png encoding: {e}")))?;
    write_atomic(path, &bytes)
}

fn axis_name(axis: Axis) -> char {
    match axis {
        Axis::X => 'x',
        Axis::Y => 'y',
        Axis::Z => 'z',
    }
}

pub(super) fn write_slices(out: &Path, volume: &Path, reference: Option<&Path>, axis: Axis, indices: &[usize]) -> Result<()> {
    let (v, _) = load_tensor(volume)?;
    let r = match reference {
        Some(p) => {
            let (r, _) = load_tensor(p)?;
            if r.shape != v.shape {
                return invalid(format!("reference shape {:?} differs from volume {:?}", r.shape, v.shape));
            }
            Some(r)
        }
        None => None,
    };
    let window_src = r.as_ref().unwrap_or(&v);
    let lo = window_src.values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = window_src.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n = match (v.shape.as_slice(), axis) {
        ([nz, _, _], Axis::Z) => *nz,
        ([_, ny, _], Axis::Y) => *ny,
        ([_, _, nx], Axis::X) => *nx,
        (other, _) => return invalid(format!("slices need a 3D volume, got shape {other:?}")),
    };
    let indices = if indices.is_empty() { vec![n / 2] } else { indices.to_vec() };
    let mut sources = vec![("volume", &v)];
    if let Some(r) = &r {
        sources.push(("reference", r));
    }
    for &i in &indices {
        for (name, t) in &sources {
            let s = extract_slice(t, axis, i)?;
            let gray = to_gray(&s.values, lo, hi);
            let stem = format!("{name}_{}{i:03}", axis_name(axis));
            write_atomic(&out.join(format!("{stem}.pgm")), &encode_pgm(s.width, s.height, &gray))?;
            write_png(&out.join(format!("{stem}.png")), s.width, s.height, gray)?;
        }
    }
    println!("{} slice(s) along {} written to {}", indices.len(), axis_name(axis), out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Tensor {
        // value = 100 z + 10 y + x on a 2×3×4 grid.
        let mut values = Vec::new();
        for z in 0..2 {
            for y in 0..3 {
                for x in 0..4 {
                    values.push((100 * z + 10 * y + x) as f64);
                }
            }
        }
        Tensor::new(vec![2, 3, 4], values).unwrap()
    }

    #[test]
    fn slices_along_each_axis() {
        let t = ramp();
        let z = extract_slice(&t, Axis::Z, 1).unwrap();
        assert_eq!((z.width, z.height), (4, 3));
        assert_eq!(z.values[0..4], [100.0, 101.0, 102.0, 103.0]);
        let y = extract_slice(&t, Axis::Y, 2).unwrap();
        assert_eq!((y.width, y.height), (4, 2));
        assert_eq!(y.values[4], 120.0);
        let x = extract_slice(&t, Axis::X, 3).unwrap();
        assert_eq!((x.width, x.height), (3, 2));
        assert_eq!(x.values, vec![3.0, 13.0, 23.0, 103.0, 113.0, 123.0]);
        assert!(extract_slice(&t, Axis::Z, 2).is_err());
    }

    #[test]
    fn gray_window_clamps() {
        assert_eq!(to_gray(&[-1.0, 0.0, 0.5, 1.0, 2.0], 0.0, 1.0), vec![0, 0, 128, 255, 255]);
        assert_eq!(to_gray(&[3.0, 3.0], 3.0, 3.0), vec![0, 0]);
    }

    #[test]
    fn pgm_header() {
        let bytes = encode_pgm(2, 1, &[0, 255]);
        assert_eq!(bytes, b"P5\n2 1\n255\n\x00\xff");
    }
}
