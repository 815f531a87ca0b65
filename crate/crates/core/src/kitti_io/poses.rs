use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Pose;

const ORTHONORMAL_TOL: f64 = 1e-4;

/// One pose per line: 16 whitespace-separated floats, a row-major 4x4 rigid
/// transform whose last row is `0 0 0 1`.
pub fn read_pose_file(path: &Path) -> Result<Vec<Pose>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let err = |msg: String| Error::format(path, Some(i + 1), msg);
            let m = line
                .split_whitespace()
                .map(|f| f.parse::<f64>().map_err(|_| err(format!("cannot parse {f:?}"))))
                .collect::<Result<Vec<f64>>>()?;
            if m.len() != 16 {
                return Err(err(format!("expected 16 values, found {}", m.len())));
            }
            let last = [m[12], m[13], m[14], m[15]];
            if last
                .iter()
                .zip([0.0, 0.0, 0.0, 1.0])
                .any(|(a, b)| (a - b).abs() > 1e-9)
            {
                return Err(err(format!("last row must be 0 0 0 1, found {last:?}")));
            }
            let rotation = [[m[0], m[1], m[2]], [m[4], m[5], m[6]], [m[8], m[9], m[10]]];
            Pose::new(rotation, [m[3], m[7], m[11]], ORTHONORMAL_TOL).map_err(|e| err(e.to_string()))
        })
        .collect()
}

pub fn write_pose_file(path: &Path, poses: &[Pose]) -> Result<()> {
    let mut text = String::new();
    for pose in poses {
        let row: Vec<String> = pose.to_matrix().iter().map(|v| format!("{v:e}")).collect();
        text.push_str(&row.join(" "));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.txt");
        fs::write(&path, "1 0 0 0 0 1 0 0 0 0 1 0 0 0 0 1\n").unwrap();
        assert_eq!(read_pose_file(&path).unwrap(), vec![Pose::identity()]);
    }

    #[test]
    fn scaled_rotation_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.txt");
        fs::write(&path, "2 0 0 0 0 2 0 0 0 0 2 0 0 0 0 1\n").unwrap();
        assert!(matches!(read_pose_file(&path), Err(Error::Format { line: Some(1), .. })));
        fs::write(&path, "1 0 0 0 0 1 0 0 0 0 1 0 0 0 0\n").unwrap();
        assert!(read_pose_file(&path).is_err());
        fs::write(&path, "1 0 0 0 0 1 0 0 0 0 1 0 0 0 1 1\n").unwrap();
        assert!(read_pose_file(&path).is_err());
    }
}
