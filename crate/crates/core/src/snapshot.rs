//! Field snapshots: raw little-endian complex values (two `f64` per node,
//! row-major, last axis fastest) plus a `key = value` sidecar `<path>.meta`.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use crate::error::{EkError, Result};
use crate::field::{Representation, SpectralField};
use crate::grid::Grid;

const FORMAT: &str = "complex128-le";

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

fn join<T: std::fmt::Debug>(v: &[T]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

/// Writes `field` (in its current representation) and its sidecar.
pub fn write(path: &Path, field: &SpectralField, time: f64) -> Result<()> {
    let mut bytes = Vec::with_capacity(field.data().len() * 16);
    for c in field.data() {
        bytes.extend_from_slice(&c.re.to_le_bytes());
        bytes.extend_from_slice(&c.im.to_le_bytes());
    }
    fs::write(path, bytes)?;
    let g = field.grid();
    let repr = match field.representation() {
        Representation::Physical => "physical",
        Representation::Fourier => "fourier",
    };
    let meta = format!(
        "format = {FORMAT}\ndim = {}\npoints_per_axis = {}\nbox_length = {}\nrepresentation = {repr}\ntime = {time:?}\n",
        g.dim(),
        join(g.points_per_axis()),
        join(g.box_length()),
    );
    fs::write(meta_path(path), meta)?;
    Ok(())
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(|s| s.trim().parse::<T>().map_err(|_| EkError::Format(format!("bad value {s:?} for {key}"))))
        .collect()
}

/// Reads a snapshot, returning the field and its time stamp.
pub fn read(path: &Path) -> Result<(SpectralField, f64)> {
    let meta = fs::read_to_string(meta_path(path))?;
    let mut dim = None;
    let mut points: Option<Vec<usize>> = None;
    let mut lengths: Option<Vec<f64>> = None;
    let mut repr = Representation::Physical;
    let mut time = 0.0;
    for (lineno, line) in meta.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| EkError::Format(format!("line {}: expected key = value", lineno + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        match k {
            "format" if v != FORMAT => return Err(EkError::Format(format!("unsupported format {v}"))),
            "format" => {}
            "dim" => dim = Some(v.parse::<usize>().map_err(|_| EkError::Format(format!("bad dim {v}")))?),
            "points_per_axis" => points = Some(parse_list(k, v)?),
            "box_length" => lengths = Some(parse_list(k, v)?),
            "representation" => {
                repr = match v {
                    "physical" => Representation::Physical,
                    "fourier" => Representation::Fourier,
                    _ => return Err(EkError::Format(format!("unknown representation {v}"))),
                }
            }
            "time" => time = v.parse().map_err(|_| EkError::Format(format!("bad time {v}")))?,
            _ => return Err(EkError::Format(format!("line {}: unknown key {k}", lineno + 1))),
        }
    }
    let points = points.ok_or_else(|| EkError::Format("missing points_per_axis".into()))?;
    let lengths = lengths.ok_or_else(|| EkError::Format("missing box_length".into()))?;
    if dim.is_some_and(|d| d != points.len()) {
        return Err(EkError::Format("dim disagrees with points_per_axis".into()));
    }
    let grid = Grid::new(&points, &lengths)?;
    let bytes = fs::read(path)?;
    if bytes.len() != grid.len() * 16 {
        return Err(EkError::Format(format!("{} bytes for {} nodes", bytes.len(), grid.len())));
    }
    let data = bytes
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
            let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
            Complex64::new(re, im)
        })
        .collect();
    Ok((SpectralField::from_data(&grid, data, repr)?, time))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_exact_round_trip() {
        let dir = std::env::temp_dir().join(format!("eklab-snap-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let g = Grid::new(&[8, 16], &[1.0 / 3.0, 7.25]).unwrap();
        let f = SpectralField::from_fn(&g, |x| Complex64::new(x[0].sin() / 7.0, (x[1] * 1.1).exp())).into_fourier();
        let p = dir.join("z.field");
        write(&p, &f, 0.1 + 0.2).unwrap();
        let (back, t) = read(&p).unwrap();
        assert_eq!(t, 0.1 + 0.2);
        assert_eq!(back.representation(), Representation::Fourier);
        assert!(back.grid().same_as(&g));
        assert!(back.data().iter().zip(f.data()).all(|(a, b)| a.re.to_bits() == b.re.to_bits() && a.im.to_bits() == b.im.to_bits()));
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = std::env::temp_dir().join(format!("eklab-snap-bad-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let g = Grid::cube(1, 8, 1.0).unwrap();
        let p = dir.join("z.field");
        write(&p, &SpectralField::zeros(&g, Representation::Physical), 0.0).unwrap();
        fs::write(&p, [0u8; 10]).unwrap();
        assert!(matches!(read(&p), Err(EkError::Format(_))));
        fs::remove_dir_all(&dir).unwrap();
    }
}
