//! Binary field files and CSV slice export.
//!
//! Layout: a 32-byte little-endian header followed by `components * n^3` `f64`
//! values, x fastest, components stored one after another.
//!
//! | bytes  | content                              |
//! |--------|--------------------------------------|
//! | 0..4   | magic `CNF1`                         |
//! | 4..12  | `n` (u64)                            |
//! | 12..20 | half width `L` (f64)                 |
//! | 20..24 | component count (u32)                |
//! | 24..28 | flags: bit 0 cell-centered, bit 1 measure |
//! | 28..32 | reserved, zero                       |

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Grid3, ScalarField, VectorField};

pub const MAGIC: &[u8; 4] = b"CNF1";
pub const HEADER_LEN: usize = 32;
const FLAG_CELL_CENTERED: u32 = 1;
const FLAG_MEASURE: u32 = 2;

/// Decoded contents of a field file.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldFile {
    pub grid: Grid3,
    pub components: Vec<ScalarField>,
    pub measure: bool,
}

impl FieldFile {
    pub fn into_vector(self) -> Result<VectorField> {
        let n = self.components.len();
        match <[ScalarField; 3]>::try_from(self.components) {
            Ok([a, b, c]) => VectorField::new(a, b, c),
            Err(_) => Err(Error::Param(format!("expected 3 components, file has {n}"))),
        }
    }

    pub fn into_scalar(self) -> Result<ScalarField> {
        let n = self.components.len();
        let mut comps = self.components;
        if n == 1 {
            Ok(comps.remove(0))
        } else {
            Err(Error::Param(format!("expected 1 component, file has {n}")))
        }
    }
}

fn encode(grid: &Grid3, comps: &[&ScalarField], measure: bool) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * grid.len() * comps.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(grid.n() as u64).to_le_bytes());
    buf.extend_from_slice(&grid.half_width().to_le_bytes());
    buf.extend_from_slice(&(comps.len() as u32).to_le_bytes());
    let mut flags = 0u32;
    if grid.cell_centered() {
        flags |= FLAG_CELL_CENTERED;
    }
    if measure {
        flags |= FLAG_MEASURE;
    }
    buf.extend_from_slice(&flags.to_le_bytes());
    buf.extend_from_slice(&[0u8; 4]);
    for c in comps {
        for v in c.values() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn write_scalar(path: impl AsRef<Path>, f: &ScalarField) -> Result<()> {
    write_bytes(path.as_ref(), &encode(f.grid(), &[f], false))
}

/// Writes a nonnegative density with the measure flag set.
pub fn write_measure_density(path: impl AsRef<Path>, density: &ScalarField) -> Result<()> {
    write_bytes(path.as_ref(), &encode(density.grid(), &[density], true))
}

pub fn write_vector(path: impl AsRef<Path>, v: &VectorField) -> Result<()> {
    let c = v.components();
    write_bytes(
        path.as_ref(),
        &encode(v.grid(), &[&c[0], &c[1], &c[2]], false),
    )
}

pub fn read_field(path: impl AsRef<Path>) -> Result<FieldFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(path, &bytes)
}

fn decode(path: &Path, bytes: &[u8]) -> Result<FieldFile> {
    let fail = |offset: usize, reason: String| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        reason,
    };
    if bytes.len() < HEADER_LEN {
        return Err(fail(
            bytes.len(),
            format!("file shorter than the {HEADER_LEN}-byte header"),
        ));
    }
    if &bytes[0..4] != MAGIC {
        return Err(fail(0, "bad magic".into()));
    }
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let n = u64_at(4);
    let half_width = f64::from_bits(u64_at(12));
    let ncomp = u32_at(20) as usize;
    let flags = u32_at(24);
    if flags & !(FLAG_CELL_CENTERED | FLAG_MEASURE) != 0 {
        return Err(fail(24, format!("unknown flag bits {flags:#x}")));
    }
    let n = usize::try_from(n).map_err(|_| fail(4, format!("grid size {n} too large")))?;
    let grid = Grid3::with_offset(n, half_width, flags & FLAG_CELL_CENTERED != 0)
        .map_err(|e| fail(4, e.to_string()))?;
    if ncomp == 0 {
        return Err(fail(20, "zero components".into()));
    }
    let expected = grid
        .len()
        .checked_mul(8 * ncomp)
        .and_then(|b| b.checked_add(HEADER_LEN))
        .ok_or_else(|| fail(20, "payload size overflows".into()))?;
    if bytes.len() != expected {
        return Err(fail(
            bytes.len().min(expected),
            format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let mut components = Vec::with_capacity(ncomp);
    for c in 0..ncomp {
        let start = HEADER_LEN + 8 * grid.len() * c;
        let values: Vec<f64> = bytes[start..start + 8 * grid.len()]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(fail(start + 8 * i, "non-finite value".into()));
        }
        components.push(ScalarField::new(grid, values)?);
    }
    Ok(FieldFile {
        grid,
        components,
        measure: flags & FLAG_MEASURE != 0,
    })
}

/// Writes the plane `k` (fixed z index) as CSV rows `x,y,value`.
pub fn write_slice_csv(path: impl AsRef<Path>, f: &ScalarField, k: usize) -> Result<()> {
    let g = f.grid();
    if k >= g.n() {
        return Err(Error::Param(format!("slice {k} outside 0..{}", g.n())));
    }
    let mut out = String::from("x,y,value\n");
    for j in 0..g.n() {
        for i in 0..g.n() {
            out.push_str(&format!(
                "{},{},{}\n",
                g.coord(i),
                g.coord(j),
                f.values()[g.index(i, j, k)]
            ));
        }
    }
    write_bytes(path.as_ref(), out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::random_smooth_vector;

    #[test]
    fn vector_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid3::new(8, 1.5).unwrap();
        let v = random_smooth_vector(g, 3, 4, 2);
        let p = dir.path().join("u.bin");
        write_vector(&p, &v).unwrap();
        let back = read_field(&p).unwrap();
        assert!(!back.measure);
        assert_eq!(back.into_vector().unwrap(), v);
        assert_eq!(
            fs::metadata(&p).unwrap().len() as usize,
            HEADER_LEN + 3 * 8 * 512
        );
    }

    #[test]
    fn measure_flag_survives() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid3::with_offset(8, 1.0, false).unwrap();
        let d = ScalarField::constant(g, 2.0);
        let p = dir.path().join("m.bin");
        write_measure_density(&p, &d).unwrap();
        let back = read_field(&p).unwrap();
        assert!(back.measure);
        assert!(!back.grid.cell_centered());
        assert_eq!(back.into_scalar().unwrap(), d);
    }

    #[test]
    fn corrupted_files_name_path_and_offset() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid3::new(8, 1.0).unwrap();
        let p = dir.path().join("f.bin");
        write_scalar(&p, &ScalarField::constant(g, 1.0)).unwrap();
        let mut bytes = fs::read(&p).unwrap();

        bytes.truncate(100);
        fs::write(&p, &bytes).unwrap();
        match read_field(&p) {
            Err(Error::Format { path, offset, .. }) => {
                assert_eq!(path, p);
                assert_eq!(offset, 100);
            }
            other => panic!("unexpected {other:?}"),
        }

        let mut bad = fs::read(dir.path().join("f.bin")).unwrap();
        bad[0] = b'X';
        fs::write(&p, &bad).unwrap();
        assert!(matches!(
            read_field(&p),
            Err(Error::Format { offset: 0, .. })
        ));

        write_scalar(&p, &ScalarField::constant(g, 1.0)).unwrap();
        let mut nan = fs::read(&p).unwrap();
        nan[HEADER_LEN + 16..HEADER_LEN + 24].copy_from_slice(&f64::NAN.to_le_bytes());
        fs::write(&p, &nan).unwrap();
        assert!(
            matches!(read_field(&p), Err(Error::Format { offset, .. }) if offset == (HEADER_LEN + 16) as u64)
        );
    }

    #[test]
    fn slice_csv_has_n_squared_rows() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid3::new(8, 1.0).unwrap();
        let p = dir.path().join("s.csv");
        write_slice_csv(&p, &ScalarField::constant(g, 3.0), 2).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 65);
        assert!(write_slice_csv(&p, &ScalarField::constant(g, 3.0), 8).is_err());
    }
}
