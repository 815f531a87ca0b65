//! Point clouds, rigid poses and yaw-rotated boxes.
//!
//! Frame convention throughout the crate (including the label files): x
//! forward, y left, z up; yaw is counterclockwise about +z, measured from +x
//! to the box's length axis.

mod polygon;
mod pose;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use polygon::{clip_convex, polygon_area, Vec2};
pub use pose::Pose;

/// Class name carried by every box; the pipeline is class agnostic.
pub const DYNAMIC_CLASS: &str = "Dynamic";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64, intensity: f64) -> Self {
        Self { x, y, z, intensity }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.intensity.is_finite()
    }

    pub fn dist_sq(&self, other: &Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        dx * dx + dy * dy + dz * dz
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point3> {
        self.points.iter()
    }

    /// Copy of the points at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud::new(indices.iter().map(|&i| self.points[i]).collect())
    }
}

impl FromIterator<Point3> for PointCloud {
    fn from_iter<I: IntoIterator<Item = Point3>>(iter: I) -> Self {
        PointCloud::new(iter.into_iter().collect())
    }
}

/// Maps an angle into (-pi, pi].
pub fn normalize_angle(angle: f64) -> f64 {
    let mut a = angle % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Upright box with a yaw-rotated footprint; `cz` is the geometric center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub yaw: f64,
}

impl Box3D {
    pub fn new(
        center: [f64; 3],
        length: f64,
        width: f64,
        height: f64,
        yaw: f64,
    ) -> Result<Self> {
        let all_finite = center.iter().all(|c| c.is_finite()) && yaw.is_finite();
        if !all_finite {
            return Err(Error::InvalidInput("box has non-finite center or yaw".into()));
        }
        if !(length > 0.0 && width > 0.0 && height > 0.0) {
            return Err(Error::InvalidInput(format!(
                "box dimensions must be positive, got {length} x {width} x {height}"
            )));
        }
        Ok(Self {
            cx: center[0],
            cy: center[1],
            cz: center[2],
            length,
            width,
            height,
            yaw: normalize_angle(yaw),
        })
    }

    pub fn bottom(&self) -> f64 {
        self.cz - 0.5 * self.height
    }

    pub fn top(&self) -> f64 {
        self.cz + 0.5 * self.height
    }

    pub fn bev_area(&self) -> f64 {
        self.length * self.width
    }

    pub fn volume(&self) -> f64 {
        self.length * self.width * self.height
    }

    pub fn bev_diagonal(&self) -> f64 {
        self.length.hypot(self.width)
    }

    pub fn bev_range(&self) -> f64 {
        self.cx.hypot(self.cy)
    }

    /// Footprint corners in counterclockwise order.
    pub fn bev_corners(&self) -> [Vec2; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hl = 0.5 * self.length;
        let hw = 0.5 * self.width;
        [(hl, -hw), (hl, hw), (-hl, hw), (-hl, -hw)].map(|(lx, ly)| Vec2 {
            x: self.cx + c * lx - s * ly,
            y: self.cy + s * lx + c * ly,
        })
    }

    /// World coordinates expressed in the box frame (origin at the center,
    /// x along the length axis).
    pub fn world_to_local(&self, x: f64, y: f64, z: f64) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        [c * dx + s * dy, -s * dx + c * dy, z - self.cz]
    }

    pub fn local_to_world(&self, lx: f64, ly: f64, lz: f64) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        [
            self.cx + c * lx - s * ly,
            self.cy + s * lx + c * ly,
            self.cz + lz,
        ]
    }

    /// Inclusive containment test on box-frame coordinates.
    pub fn contains_local(&self, local: [f64; 3]) -> bool {
        local[0].abs() <= 0.5 * self.length
            && local[1].abs() <= 0.5 * self.width
            && local[2].abs() <= 0.5 * self.height
    }

    pub fn contains(&self, p: &Point3) -> bool {
        self.contains_local(self.world_to_local(p.x, p.y, p.z))
    }

    /// The same box moved by a rigid transform. Only rotations about z keep a
    /// box upright, so the yaw change is taken from the rotated x axis.
    pub fn transformed(&self, pose: &Pose) -> Box3D {
        let [cx, cy, cz] = pose.apply([self.cx, self.cy, self.cz]);
        let r = pose.rotation();
        let dyaw = r[1][0].atan2(r[0][0]);
        Box3D {
            cx,
            cy,
            cz,
            yaw: normalize_angle(self.yaw + dyaw),
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    #[serde(rename = "box")]
    pub bbox: Box3D,
    /// Detector confidence in [0, 1]; `None` for ground truth.
    pub score: Option<f64>,
}

impl LabeledBox {
    pub fn ground_truth(bbox: Box3D) -> Self {
        Self { bbox, score: None }
    }

    pub fn scored(bbox: Box3D, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::InvalidInput(format!("score {score} outside [0, 1]")));
        }
        Ok(Self {
            bbox,
            score: Some(score),
        })
    }

    pub fn class_name(&self) -> &'static str {
        DYNAMIC_CLASS
    }
}

fn bev_intersection(a: &Box3D, b: &Box3D) -> f64 {
    let reach = 0.5 * (a.bev_diagonal() + b.bev_diagonal());
    if (a.cx - b.cx).hypot(a.cy - b.cy) > reach {
        return 0.0;
    }
    let clipped = clip_convex(&a.bev_corners(), &b.bev_corners());
    polygon_area(&clipped)
}

fn ratio(inter: f64, union: f64) -> f64 {
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Bird's-eye-view IoU of the yaw-rotated footprints.
pub fn iou_bev(a: &Box3D, b: &Box3D) -> f64 {
    let inter = bev_intersection(a, b);
    ratio(inter, a.bev_area() + b.bev_area() - inter)
}

pub fn iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let overlap_z = (a.top().min(b.top()) - a.bottom().max(b.bottom())).max(0.0);
    if overlap_z == 0.0 {
        return 0.0;
    }
    let inter = bev_intersection(a, b) * overlap_z;
    ratio(inter, a.volume() + b.volume() - inter)
}

/// Indices of the points inside `bbox`; points on a face count as inside.
pub fn points_in_box(cloud: &PointCloud, bbox: &Box3D) -> Vec<usize> {
    cloud
        .iter()
        .enumerate()
        .filter(|(_, p)| bbox.contains(p))
        .map(|(i, _)| i)
        .collect()
}

pub fn apply_pose(cloud: &PointCloud, pose: &Pose) -> PointCloud {
    cloud
        .iter()
        .map(|p| {
            let [x, y, z] = pose.apply([p.x, p.y, p.z]);
            Point3::new(x, y, z, p.intensity)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(cx: f64, cy: f64, l: f64, w: f64, yaw: f64) -> Box3D {
        Box3D::new([cx, cy, 1.0], l, w, 2.0, yaw).unwrap()
    }

    #[test]
    fn iou_identity_and_disjoint() {
        let a = bx(3.0, -2.0, 4.0, 2.0, 0.7);
        assert!((iou_bev(&a, &a) - 1.0).abs() < 1e-12);
        assert!((iou_3d(&a, &a) - 1.0).abs() < 1e-12);
        let b = bx(103.0, -2.0, 4.0, 2.0, 0.7);
        assert_eq!(iou_bev(&a, &b), 0.0);
    }

    #[test]
    fn iou_offset_squares() {
        let a = bx(0.0, 0.0, 2.0, 2.0, 0.0);
        let b = bx(1.0, 0.0, 2.0, 2.0, 0.0);
        assert!((iou_bev(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn iou_3d_vertical_overlap() {
        let a = Box3D::new([0.0, 0.0, 1.0], 4.0, 2.0, 2.0, 0.3).unwrap();
        let b = Box3D::new([0.0, 0.0, 2.0], 4.0, 2.0, 2.0, 0.3).unwrap();
        assert!((iou_3d(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
        let c = Box3D::new([0.0, 0.0, 5.0], 4.0, 2.0, 2.0, 0.3).unwrap();
        assert_eq!(iou_3d(&a, &c), 0.0);
    }

    #[test]
    fn rotated_square_inside_itself_at_45_degrees() {
        // Square of side 2 vs the same square rotated 45 deg: the
        // intersection is a regular octagon of area 8(sqrt2 - 1).
        let a = bx(0.0, 0.0, 2.0, 2.0, 0.0);
        let b = bx(0.0, 0.0, 2.0, 2.0, PI / 4.0);
        let inter = 8.0 * (2f64.sqrt() - 1.0);
        let expected = inter / (8.0 - inter);
        assert!((iou_bev(&a, &b) - expected).abs() < 1e-12);
    }

    #[test]
    fn box_rejects_bad_dims_and_normalizes_yaw() {
        assert!(Box3D::new([0.0; 3], 0.0, 1.0, 1.0, 0.0).is_err());
        assert!(Box3D::new([0.0; 3], 1.0, -1.0, 1.0, 0.0).is_err());
        let b = Box3D::new([0.0; 3], 1.0, 1.0, 1.0, 3.0 * PI).unwrap();
        assert!((b.yaw - PI).abs() < 1e-12);
        let b = Box3D::new([0.0; 3], 1.0, 1.0, 1.0, -PI).unwrap();
        assert!((b.yaw - PI).abs() < 1e-12);
    }

    #[test]
    fn points_in_box_edges() {
        let b = Box3D::new([1.0, 1.0, 1.0], 2.0, 2.0, 2.0, 0.0).unwrap();
        assert!(points_in_box(&PointCloud::default(), &b).is_empty());
        let cloud = PointCloud::new(vec![
            Point3::new(1.0, 1.0, 1.0, 0.0),
            Point3::new(2.0, 1.0, 1.0, 0.0),
            Point3::new(2.0001, 1.0, 1.0, 0.0),
        ]);
        assert_eq!(points_in_box(&cloud, &b), vec![0, 1]);
    }

    #[test]
    fn pose_translation_moves_origin() {
        let pose = Pose::from_yaw_translation(0.0, [1.0, 0.0, 0.0]);
        let cloud = PointCloud::new(vec![Point3::new(0.0, 0.0, 0.0, 0.4)]);
        let moved = apply_pose(&cloud, &pose);
        assert_eq!(moved.points[0], Point3::new(1.0, 0.0, 0.0, 0.4));
        assert_eq!(apply_pose(&cloud, &Pose::identity()), cloud);
    }
}
