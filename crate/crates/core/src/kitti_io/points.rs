use std::fs;
use std::path::Path;

use crate::ephemerality::PpScores;
use crate::error::{Error, Result};
use crate::geometry::{Point3, PointCloud};

const POINT_BYTES: usize = 16;

/// Reads little-endian `f32` quadruples `(x, y, z, intensity)`.
pub fn read_point_bin(path: &Path) -> Result<PointCloud> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_points(&bytes, path)
}

pub(crate) fn decode_points(bytes: &[u8], path: &Path) -> Result<PointCloud> {
    if bytes.len() % POINT_BYTES != 0 {
        return Err(Error::format(
            path,
            None,
            format!("{} bytes is not a multiple of {POINT_BYTES}", bytes.len()),
        ));
    }
    bytes
        .chunks_exact(POINT_BYTES)
        .enumerate()
        .map(|(i, chunk)| {
            let v: Vec<f64> = chunk
                .chunks_exact(4)
                .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
                .collect();
            let p = Point3::new(v[0], v[1], v[2], v[3]);
            if !p.is_finite() {
                return Err(Error::format(path, None, format!("non-finite value in point {i}")));
            }
            Ok(p)
        })
        .collect::<Result<Vec<_>>>()
        .map(PointCloud::new)
}

pub(crate) fn encode_points(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * POINT_BYTES);
    for p in cloud.iter() {
        for v in [p.x, p.y, p.z, p.intensity] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn write_point_bin(path: &Path, cloud: &PointCloud) -> Result<()> {
    fs::write(path, encode_points(cloud)).map_err(|e| Error::io(path, e))
}

/// PP sidecar: one little-endian `f32` per point, in point-file order.
pub fn read_pp_bin(path: &Path) -> Result<PpScores> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::format(
            path,
            None,
            format!("{} bytes is not a multiple of 4", bytes.len()),
        ));
    }
    let values = bytes
        .chunks_exact(4)
        .enumerate()
        .map(|(i, b)| {
            let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::format(path, None, format!("PP value {v} at index {i} outside [0, 1]")));
            }
            Ok(v)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PpScores { values })
}

pub fn write_pp_bin(path: &Path, pp: &PpScores) -> Result<()> {
    let bytes: Vec<u8> = pp.values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_misaligned_files() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.bin");
        fs::write(&empty, b"").unwrap();
        assert!(read_point_bin(&empty).unwrap().is_empty());

        let odd = dir.path().join("odd.bin");
        fs::write(&odd, [0u8; 17]).unwrap();
        assert!(matches!(read_point_bin(&odd), Err(Error::Format { .. })));
    }

    #[test]
    fn non_finite_point_reports_index() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.bin");
        let mut bytes = vec![0u8; 32];
        bytes[16..20].copy_from_slice(&f32::NAN.to_le_bytes());
        fs::write(&path, bytes).unwrap();
        let err = read_point_bin(&path).unwrap_err().to_string();
        assert!(err.contains("point 1"), "{err}");
    }

    #[test]
    fn pp_sidecar_round_trip_and_range_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pp.bin");
        let pp = PpScores::new(vec![0.0, 0.5, 1.0]).unwrap();
        write_pp_bin(&path, &pp).unwrap();
        assert_eq!(read_pp_bin(&path).unwrap(), pp);
        fs::write(&path, 1.5f32.to_le_bytes()).unwrap();
        assert!(read_pp_bin(&path).is_err());
    }
}
