//! Field dumps: a flat little-endian binary layout and plot-ready CSV.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! magic   b"HCFD"
//! version u32 = 1
//! n_axes  u32
//! points  u64 x n_axes      (row-major, last axis fastest)
//! slice   u64               (index of this time slice, 0 for a lone slice)
//! n_slices u64              (0 for a lone spatial slice)
//! values  f64 x prod(points)
//! ```
//!
//! Space-time fields go one file per slice, `<stem>_<k>.<ext>` with `k`
//! zero-padded to a common width.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use hierctl::mesh::{Field, FieldKind, Grid};
use hierctl::{Error, Result};
use serde::{Deserialize, Serialize};

const MAGIC: &[u8; 4] = b"HCFD";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldFormat {
    Binary,
    Csv,
}

impl FieldFormat {
    pub fn extension(self) -> &'static str {
        match self {
            FieldFormat::Binary => "bin",
            FieldFormat::Csv => "csv",
        }
    }
}

/// Header and values of one binary slice file.
#[derive(Clone, Debug, PartialEq)]
pub struct BinarySlice {
    pub points: Vec<usize>,
    pub slice: usize,
    pub n_slices: usize,
    pub values: Vec<f64>,
}

/// Paths a space-time dump of `n_slices` slices writes for `path`.
pub fn slice_paths(path: &Path, n_slices: usize) -> Vec<PathBuf> {
    let width = n_slices.saturating_sub(1).to_string().len().max(3);
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = path.extension().map(|s| format!(".{}", s.to_string_lossy())).unwrap_or_default();
    (0..n_slices)
        .map(|k| path.with_file_name(format!("{stem}_{k:0width$}{ext}")))
        .collect()
}

/// Writes `field`; returns the files written.
pub fn dump_field(field: &Field, grid: &Grid, path: &Path, format: FieldFormat) -> Result<Vec<PathBuf>> {
    if field.n_nodes() != grid.n_nodes() {
        return Err(Error::ShapeMismatch("field does not live on this grid".into()));
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    match field.kind() {
        FieldKind::Slice => {
            write_slice(field.values(), grid, path, format, 0, 0)?;
            Ok(vec![path.to_path_buf()])
        }
        FieldKind::SpaceTime => {
            let k_total = field.n_slices();
            let paths = slice_paths(path, k_total);
            for (k, p) in paths.iter().enumerate() {
                write_slice(field.slice(k), grid, p, format, k, k_total)?;
            }
            Ok(paths)
        }
    }
}

fn write_slice(values: &[f64], grid: &Grid, path: &Path, format: FieldFormat, slice: usize, n_slices: usize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        FieldFormat::Binary => {
            w.write_all(MAGIC)?;
            w.write_all(&VERSION.to_le_bytes())?;
            w.write_all(&(grid.points().len() as u32).to_le_bytes())?;
            for &p in grid.points() {
                w.write_all(&(p as u64).to_le_bytes())?;
            }
            w.write_all(&(slice as u64).to_le_bytes())?;
            w.write_all(&(n_slices as u64).to_le_bytes())?;
            for v in values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        FieldFormat::Csv => {
            let header: Vec<String> = (1..=grid.dim()).map(|a| format!("x{a}")).collect();
            writeln!(w, "{},value", header.join(","))?;
            let mut x = vec![0.0; grid.dim()];
            for (node, v) in values.iter().enumerate() {
                grid.coords_into(node, &mut x);
                for c in &x {
                    write!(w, "{c},")?;
                }
                writeln!(w, "{v}")?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn take<const N: usize>(bytes: &[u8], at: &mut usize) -> Result<[u8; N]> {
    let end = *at + N;
    let chunk = bytes
        .get(*at..end)
        .ok_or_else(|| Error::ShapeMismatch("truncated field file".into()))?;
    *at = end;
    Ok(chunk.try_into().expect("slice length checked"))
}

pub fn read_binary(path: &Path) -> Result<BinarySlice> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let mut at = 0;
    if &take::<4>(&bytes, &mut at)? != MAGIC {
        return Err(Error::ShapeMismatch(format!("{} is not a field file", path.display())));
    }
    let version = u32::from_le_bytes(take(&bytes, &mut at)?);
    if version != VERSION {
        return Err(Error::ShapeMismatch(format!("unsupported field file version {version}")));
    }
    let n_axes = u32::from_le_bytes(take(&bytes, &mut at)?) as usize;
    let mut points = Vec::with_capacity(n_axes);
    for _ in 0..n_axes {
        points.push(u64::from_le_bytes(take(&bytes, &mut at)?) as usize);
    }
    let slice = u64::from_le_bytes(take(&bytes, &mut at)?) as usize;
    let n_slices = u64::from_le_bytes(take(&bytes, &mut at)?) as usize;
    let n: usize = points.iter().product();
    if bytes.len() != at + 8 * n {
        return Err(Error::ShapeMismatch(format!(
            "{} holds {} value bytes, header says {}",
            path.display(),
            bytes.len() - at,
            8 * n
        )));
    }
    let values = bytes[at..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok(BinarySlice {
        points,
        slice,
        n_slices,
        values,
    })
}

/// Reads a binary spatial slice written for `grid`.
pub fn read_field(path: &Path, grid: &Grid) -> Result<Field> {
    let b = read_binary(path)?;
    if b.points != grid.points() {
        return Err(Error::ShapeMismatch(format!("file grid {:?} differs from {:?}", b.points, grid.points())));
    }
    Field::from_values(grid, FieldKind::Slice, b.values)
}

/// Reads back a space-time binary dump written to `path`.
pub fn read_spacetime(path: &Path, grid: &Grid) -> Result<Field> {
    let mut values = Vec::with_capacity(grid.n_nodes() * grid.n_time_steps());
    for (k, p) in slice_paths(path, grid.n_time_steps()).iter().enumerate() {
        let b = read_binary(p)?;
        if b.points != grid.points() || b.slice != k || b.n_slices != grid.n_time_steps() {
            return Err(Error::ShapeMismatch(format!("{} does not match the grid", p.display())));
        }
        values.extend(b.values);
    }
    Field::from_values(grid, FieldKind::SpaceTime, values)
}
