//! KITTI-style label lines.
//!
//! `type truncated occluded alpha x1 y1 x2 y2 h w l x y z yaw [score]`
//!
//! Unlike KITTI proper, boxes are stored in the LiDAR frame (x forward,
//! y left, z up) with `(x, y, z)` the geometric center and `yaw` about +z.
//! The 2D fields are fixed sentinels (`alpha = -10`, bbox `-1`).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Box3D, LabeledBox, DYNAMIC_CLASS};

const FIELDS_WITHOUT_SCORE: usize = 15;
const FIELDS_WITH_SCORE: usize = 16;

pub fn format_label_line(label: &LabeledBox) -> String {
    let b = &label.bbox;
    let mut line = format!(
        "{DYNAMIC_CLASS} 0.00 0 -10.00 -1.00 -1.00 -1.00 -1.00 {:.4} {:.4} {:.4} {:.4} {:.4} {:.4} {:.4}",
        b.height, b.width, b.length, b.cx, b.cy, b.cz, b.yaw
    );
    if let Some(score) = label.score {
        let _ = write!(line, " {score:.4}");
    }
    line
}

pub fn parse_label_line(line: &str, path: &Path, line_no: usize) -> Result<LabeledBox> {
    let err = |msg: String| Error::format(path, Some(line_no), msg);
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != FIELDS_WITHOUT_SCORE && fields.len() != FIELDS_WITH_SCORE {
        return Err(err(format!(
            "expected {FIELDS_WITHOUT_SCORE} or {FIELDS_WITH_SCORE} fields, found {}",
            fields.len()
        )));
    }
    let nums = fields[1..]
        .iter()
        .map(|f| f.parse::<f64>().map_err(|_| err(format!("cannot parse {f:?} as a number"))))
        .collect::<Result<Vec<f64>>>()?;
    if let Some(bad) = nums.iter().find(|v| !v.is_finite()) {
        return Err(err(format!("non-finite value {bad}")));
    }
    // nums: truncated occluded alpha x1 y1 x2 y2 h w l x y z yaw [score]
    let (h, w, l) = (nums[7], nums[8], nums[9]);
    let bbox = Box3D::new([nums[10], nums[11], nums[12]], l, w, h, nums[13])
        .map_err(|e| err(e.to_string()))?;
    let score = nums.get(14).copied();
    if let Some(s) = score {
        if !(0.0..=1.0).contains(&s) {
            return Err(err(format!("score {s} outside [0, 1]")));
        }
    }
    Ok(LabeledBox { bbox, score })
}

pub fn read_label_file(path: &Path) -> Result<Vec<LabeledBox>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_label_line(l, path, i + 1))
        .collect()
}

pub fn write_label_file(path: &Path, labels: &[LabeledBox]) -> Result<()> {
    let mut text = String::new();
    for label in labels {
        text.push_str(&format_label_line(label));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_layout() {
        let b = Box3D::new([1.0, -2.0, 0.75], 4.0, 2.0, 1.5, 0.5).unwrap();
        let line = format_label_line(&LabeledBox::scored(b, 0.9).unwrap());
        assert_eq!(
            line,
            "Dynamic 0.00 0 -10.00 -1.00 -1.00 -1.00 -1.00 1.5000 2.0000 4.0000 1.0000 -2.0000 0.7500 0.5000 0.9000"
        );
        let gt = format_label_line(&LabeledBox::ground_truth(b));
        assert_eq!(gt.split_whitespace().count(), 15);
    }

    #[test]
    fn empty_file_and_bad_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.txt");
        fs::write(&path, "").unwrap();
        assert!(read_label_file(&path).unwrap().is_empty());

        let good = "Dynamic 0.00 0 -10.00 -1.00 -1.00 -1.00 -1.00 1.5 2 4 0 0 0.75 0";
        let short = "Dynamic 0.00 0 -10.00 -1.00 -1.00 -1.00 -1.00 1.5 2 4 0 0 0.75";
        fs::write(&path, format!("{good}\n{short}\n")).unwrap();
        match read_label_file(&path) {
            Err(Error::Format { line, .. }) => assert_eq!(line, Some(2)),
            other => panic!("expected format error, got {other:?}"),
        }
        fs::write(&path, format!("{good} 0.5 extra\n")).unwrap();
        assert!(read_label_file(&path).is_err());
        fs::write(&path, good.replace("1.5", "x")).unwrap();
        assert!(matches!(read_label_file(&path), Err(Error::Format { line: Some(1), .. })));
    }
}
