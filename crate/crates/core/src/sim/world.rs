use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ephemerality::TraversalSet;
use crate::error::{Error, Result};
use crate::filtering::LabelSet;
use crate::geometry::{apply_pose, iou_bev, Box3D, LabeledBox, Point3, PointCloud, Pose};
use crate::kitti_io::{
    create_dir_all, sample_id, write_json, write_label_dir, write_point_bin, write_pose_file, SampleLayout, Stage,
};
use crate::rng::{stream, StreamRng};

pub const GT_META_FILE: &str = "gt_meta.json";

/// Object surfaces are sampled this far inside the box so sensor noise
/// rarely pushes a point out of its ground-truth box.
const SURFACE_INSET: f64 = 0.05;
/// Lowest sampled height on an object's side faces.
const BODY_CLEARANCE: f64 = 0.3;
/// Free space kept around every placed object.
const PLACEMENT_GAP: f64 = 1.5;
const BORDER_INSET: f64 = 4.0;
const MAX_PLACEMENT_TRIES: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub n_samples: usize,
    /// Extent of each sample's scene along x and y (meters), centered on the origin.
    pub area: (f64, f64),
    pub n_traversals: usize,
    /// Ground points per square meter.
    pub ground_density: f64,
    /// Points per square meter on walls, poles and object surfaces.
    pub surface_density: f64,
    pub n_walls: usize,
    pub n_poles: usize,
    pub n_static_objects: usize,
    pub n_mobile_objects: usize,
    /// Mobile objects are moved to a new place in each past traversal; when
    /// false they are simply absent there.
    pub reposition_mobile: bool,
    pub length_range: (f64, f64),
    pub width_range: (f64, f64),
    pub height_range: (f64, f64),
    pub sensor_noise: f64,
    /// Past traversals are stored in their own frame, offset by up to this much.
    pub max_pose_offset: f64,
    pub rng_seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_samples: 32,
            area: (80.0, 80.0),
            n_traversals: 5,
            ground_density: 5.0,
            surface_density: 20.0,
            n_walls: 4,
            n_poles: 12,
            n_static_objects: 4,
            n_mobile_objects: 8,
            reposition_mobile: true,
            length_range: (3.5, 5.0),
            width_range: (1.6, 2.0),
            height_range: (1.4, 1.8),
            sensor_noise: 0.02,
            max_pose_offset: 5.0,
            rng_seed: 42,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (f64, f64)| lo > 0.0 && lo <= hi;
        let ok = self.area.0 > 2.0 * BORDER_INSET
            && self.area.1 > 2.0 * BORDER_INSET
            && self.n_traversals >= 1
            && self.ground_density > 0.0
            && self.surface_density >= 0.0
            && range_ok(self.length_range)
            && range_ok(self.width_range)
            && range_ok(self.height_range)
            && self.sensor_noise >= 0.0
            && self.max_pose_offset >= 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid world config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimObject {
    #[serde(rename = "box")]
    pub bbox: Box3D,
    pub mobile: bool,
}

#[derive(Debug, Clone)]
pub struct SimSample {
    pub traversals: TraversalSet,
    pub objects: Vec<SimObject>,
}

#[derive(Debug, Clone)]
pub struct SimWorld {
    pub samples: Vec<SimSample>,
}

impl SimWorld {
    pub fn ground_truth(&self) -> LabelSet {
        self.labels_where(|_| true)
    }

    pub fn mobile_ground_truth(&self) -> LabelSet {
        self.labels_where(|o| o.mobile)
    }

    fn labels_where(&self, keep: impl Fn(&SimObject) -> bool) -> LabelSet {
        let mut set = LabelSet::new(0);
        for s in &self.samples {
            let boxes = s
                .objects
                .iter()
                .filter(|o| keep(o))
                .map(|o| LabeledBox::ground_truth(o.bbox))
                .collect();
            set.samples.insert(s.traversals.sample_id.clone(), boxes);
        }
        set
    }
}

fn uniform(rng: &mut StreamRng, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// `expected` rounded to an integer, up or down at random.
fn expected_count(rng: &mut StreamRng, expected: f64) -> usize {
    let whole = expected.floor();
    whole as usize + usize::from(rng.random::<f64>() < expected - whole)
}

fn padded(b: &Box3D, pad: f64) -> Box3D {
    Box3D {
        length: b.length + 2.0 * pad,
        width: b.width + 2.0 * pad,
        ..*b
    }
}

fn collides(candidate: &Box3D, placed: &[Box3D]) -> bool {
    let c = padded(candidate, PLACEMENT_GAP / 2.0);
    placed.iter().any(|p| iou_bev(&c, &padded(p, PLACEMENT_GAP / 2.0)) > 0.0)
}

struct Layout<'a> {
    cfg: &'a WorldConfig,
}

impl Layout<'_> {
    fn half(&self) -> (f64, f64) {
        (self.cfg.area.0 / 2.0, self.cfg.area.1 / 2.0)
    }

    fn random_box(&self, rng: &mut StreamRng, dims: [f64; 3]) -> Box3D {
        let (hx, hy) = self.half();
        let x = uniform(rng, (-hx + BORDER_INSET, hx - BORDER_INSET));
        let y = uniform(rng, (-hy + BORDER_INSET, hy - BORDER_INSET));
        let yaw = uniform(rng, (-PI, PI));
        let [l, w, h] = dims;
        Box3D::new([x, y, h / 2.0], l, w, h, yaw).expect("positive dims")
    }

    fn place(&self, rng: &mut StreamRng, dims: [f64; 3], avoid: &[Box3D]) -> Result<Box3D> {
        for _ in 0..MAX_PLACEMENT_TRIES {
            let b = self.random_box(rng, dims);
            if !collides(&b, avoid) {
                return Ok(b);
            }
        }
        Err(Error::Config("world too crowded to place all objects".into()))
    }

    fn object_dims(&self, rng: &mut StreamRng) -> [f64; 3] {
        [
            uniform(rng, self.cfg.length_range),
            uniform(rng, self.cfg.width_range),
            uniform(rng, self.cfg.height_range),
        ]
    }
}

/// Points on the four sides and the top of a box, in the box frame.
fn object_surface(rng: &mut StreamRng, b: &Box3D, density: f64) -> Vec<[f64; 3]> {
    let hl = b.length / 2.0 - SURFACE_INSET;
    let hw = b.width / 2.0 - SURFACE_INSET;
    let hh = b.height / 2.0;
    let z_lo = -hh + BODY_CLEARANCE;
    let z_top = hh - SURFACE_INSET;
    let side_h = (z_top - z_lo).max(0.0);
    let faces = [
        (2.0 * hl * side_h, 0u8),
        (2.0 * hl * side_h, 1),
        (2.0 * hw * side_h, 2),
        (2.0 * hw * side_h, 3),
        (4.0 * hl * hw, 4),
    ];
    let mut pts = Vec::new();
    for (area, face) in faces {
        for _ in 0..expected_count(rng, area * density) {
            let u = uniform(rng, (-1.0, 1.0));
            let v: f64 = rng.random();
            let z = z_lo + v * side_h;
            pts.push(match face {
                0 => [u * hl, hw, z],
                1 => [u * hl, -hw, z],
                2 => [hl, u * hw, z],
                3 => [-hl, u * hw, z],
                _ => [u * hl, (2.0 * v - 1.0) * hw, z_top],
            });
        }
    }
    pts
}

struct Scene {
    /// Shared background: walls and poles, world frame.
    structure: Vec<Point3>,
    ground: Vec<Point3>,
    static_objects: Vec<Box3D>,
    /// Surface points per object in its box frame, reused at every pose.
    static_surfaces: Vec<Vec<[f64; 3]>>,
    mobile_surfaces: Vec<Vec<[f64; 3]>>,
    /// `mobile_poses[0]` is the reference scan; then one entry per traversal.
    mobile_poses: Vec<Vec<Box3D>>,
}

fn build_scene(cfg: &WorldConfig, rng: &mut StreamRng) -> Result<Scene> {
    let layout = Layout { cfg };
    let (hx, hy) = layout.half();
    let mut placed = Vec::new();

    let mut static_objects = Vec::new();
    for _ in 0..cfg.n_static_objects {
        let dims = layout.object_dims(rng);
        let b = layout.place(rng, dims, &placed)?;
        placed.push(b);
        static_objects.push(b);
    }
    let mut mobile_ref = Vec::new();
    let mut mobile_dims = Vec::new();
    for _ in 0..cfg.n_mobile_objects {
        let dims = layout.object_dims(rng);
        let b = layout.place(rng, dims, &placed)?;
        placed.push(b);
        mobile_ref.push(b);
        mobile_dims.push(dims);
    }

    let mut structure = Vec::new();
    for _ in 0..cfg.n_poles {
        let pole = layout.place(rng, [0.3, 0.3, 1.0], &placed)?;
        placed.push(pole);
        let height = uniform(rng, (3.0, 6.0));
        let n = expected_count(rng, PI * 0.3 * height * cfg.surface_density);
        for _ in 0..n {
            let a = uniform(rng, (-PI, PI));
            let z = uniform(rng, (0.0, height));
            structure.push(Point3::new(pole.cx + 0.15 * a.cos(), pole.cy + 0.15 * a.sin(), z, rng.random()));
        }
    }
    for _ in 0..cfg.n_walls {
        // Walls run along a random border, inside the object-free margin.
        let side = rng.random_range(0..4u8);
        let len = uniform(rng, (10.0, 25.0));
        let height = uniform(rng, (2.0, 4.0));
        let along = uniform(rng, (-0.5, 0.5)) * (if side < 2 { 2.0 * hx } else { 2.0 * hy } - len);
        let n = expected_count(rng, len * height * cfg.surface_density);
        for _ in 0..n {
            let t = along + uniform(rng, (-len / 2.0, len / 2.0));
            let z = uniform(rng, (0.0, height));
            let (x, y) = match side {
                0 => (t, hy - 1.0),
                1 => (t, -hy + 1.0),
                2 => (hx - 1.0, t),
                _ => (-hx + 1.0, t),
            };
            structure.push(Point3::new(x, y, z, rng.random()));
        }
    }

    let n_ground = expected_count(rng, cfg.area.0 * cfg.area.1 * cfg.ground_density);
    let ground = (0..n_ground)
        .map(|_| Point3::new(uniform(rng, (-hx, hx)), uniform(rng, (-hy, hy)), 0.0, rng.random()))
        .collect();

    let static_surfaces = static_objects
        .iter()
        .map(|b| object_surface(rng, b, cfg.surface_density))
        .collect();
    let mobile_surfaces = mobile_ref
        .iter()
        .map(|b| object_surface(rng, b, cfg.surface_density))
        .collect();

    let mut mobile_poses = vec![mobile_ref.clone()];
    for _ in 0..cfg.n_traversals {
        if !cfg.reposition_mobile {
            mobile_poses.push(Vec::new());
            continue;
        }
        // Never park a mobile object where any object stood in the reference scan.
        let mut avoid = placed.clone();
        let mut poses = Vec::new();
        for dims in &mobile_dims {
            let b = layout.place(rng, *dims, &avoid)?;
            avoid.push(b);
            poses.push(b);
        }
        mobile_poses.push(poses);
    }

    Ok(Scene {
        structure,
        ground,
        static_objects,
        static_surfaces,
        mobile_surfaces,
        mobile_poses,
    })
}

/// Scan `k` (0 = reference) with fresh sensor noise. Ground under any object
/// present in the scan is occluded.
fn render_scan(scene: &Scene, k: usize, noise: f64, rng: &mut StreamRng) -> PointCloud {
    let mobile = &scene.mobile_poses[k];
    let present: Vec<&Box3D> = scene.static_objects.iter().chain(mobile.iter()).collect();
    let occluded = |p: &Point3| {
        present.iter().any(|b| {
            let [lx, ly, _] = b.world_to_local(p.x, p.y, b.cz);
            lx.abs() <= b.length / 2.0 && ly.abs() <= b.width / 2.0
        })
    };

    let mut pts: Vec<Point3> = scene.ground.iter().filter(|p| !occluded(p)).copied().collect();
    pts.extend(scene.structure.iter().copied());
    let surfaces = scene
        .static_objects
        .iter()
        .zip(&scene.static_surfaces)
        .chain(mobile.iter().zip(&scene.mobile_surfaces));
    for (b, surface) in surfaces {
        for (i, &[lx, ly, lz]) in surface.iter().enumerate() {
            let [x, y, z] = b.local_to_world(lx, ly, lz);
            // Intensity is a fixed property of the surface point.
            let intensity = ((i as f64 * 0.618_034).fract() * 0.5) + 0.25;
            pts.push(Point3::new(x, y, z, intensity));
        }
    }
    if noise > 0.0 {
        for p in &mut pts {
            p.x += noise * rng.sample::<f64, _>(StandardNormal);
            p.y += noise * rng.sample::<f64, _>(StandardNormal);
            p.z += noise * rng.sample::<f64, _>(StandardNormal);
        }
    }
    PointCloud::new(pts)
}

fn gen_sample(cfg: &WorldConfig, index: usize) -> Result<SimSample> {
    let id = sample_id(index);
    let mut rng = stream(cfg.rng_seed, &["world", &id]);
    let scene = build_scene(cfg, &mut rng)?;
    let scans: Vec<PointCloud> = (0..=cfg.n_traversals)
        .map(|k| {
            let mut noise_rng = stream(cfg.rng_seed, &["world", &id, "scan", &k.to_string()]);
            render_scan(&scene, k, cfg.sensor_noise, &mut noise_rng)
        })
        .collect();
    let mut scans = scans.into_iter();
    let reference = scans.next().expect("reference scan");
    let traversals = TraversalSet::new(id, reference, scans.collect())?;

    let objects = scene
        .static_objects
        .iter()
        .map(|b| SimObject { bbox: *b, mobile: false })
        .chain(scene.mobile_poses[0].iter().map(|b| SimObject { bbox: *b, mobile: true }))
        .collect();
    Ok(SimSample { traversals, objects })
}

/// Synthetic multi-traversal world; sample `i` depends only on the seed and `i`.
pub fn gen_world(cfg: &WorldConfig) -> Result<SimWorld> {
    cfg.validate()?;
    let samples = (0..cfg.n_samples)
        .into_par_iter()
        .map(|i| gen_sample(cfg, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(SimWorld { samples })
}

/// Random sensor pose of each past traversal relative to the reference frame.
pub fn traversal_poses(cfg: &WorldConfig, id: &str, n: usize) -> Vec<Pose> {
    let mut rng = stream(cfg.rng_seed, &["pose", id]);
    let off = cfg.max_pose_offset;
    (0..n)
        .map(|_| {
            let yaw = uniform(&mut rng, (-PI, PI));
            let t = [
                uniform(&mut rng, (-off, off)),
                uniform(&mut rng, (-off, off)),
                uniform(&mut rng, (-0.2, 0.2)),
            ];
            Pose::from_yaw_translation(yaw, t)
        })
        .collect()
}

/// Writes points, poses, traversals (each in its own sensor frame), ground
/// truth labels and the static/mobile flags under `root`.
pub fn write_world(root: &Path, world: &SimWorld, cfg: &WorldConfig) -> Result<()> {
    let layout = SampleLayout::new(root);
    create_dir_all(&layout.points_dir())?;
    create_dir_all(&layout.poses_dir())?;
    world.samples.par_iter().try_for_each(|s| {
        let ts = &s.traversals;
        let id = ts.sample_id.as_str();
        write_point_bin(&layout.point_file(id), &ts.reference)?;
        let poses = traversal_poses(cfg, id, ts.traversals.len());
        write_pose_file(&layout.pose_file(id), &poses)?;
        create_dir_all(&layout.traversal_dir(id))?;
        for (k, (cloud, pose)) in ts.traversals.iter().zip(&poses).enumerate() {
            write_point_bin(&layout.traversal_file(id, k), &apply_pose(cloud, &pose.inverse()))?;
        }
        Ok::<_, Error>(())
    })?;
    write_label_dir(&layout.stage_dir(Stage::GroundTruth.dir_name()), &world.ground_truth())?;
    let meta: BTreeMap<&str, Vec<bool>> = world
        .samples
        .iter()
        .map(|s| (s.traversals.sample_id.as_str(), s.objects.iter().map(|o| o.mobile).collect()))
        .collect();
    write_json(&root.join(GT_META_FILE), &meta)
}

/// Static/mobile flag of every ground-truth box, aligned with `gt/<id>.txt`.
pub fn read_gt_meta(root: &Path) -> Result<BTreeMap<String, Vec<bool>>> {
    crate::kitti_io::read_json(&root.join(GT_META_FILE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::points_in_box;

    fn small() -> WorldConfig {
        WorldConfig {
            n_samples: 2,
            area: (40.0, 40.0),
            n_traversals: 3,
            n_poles: 3,
            n_walls: 1,
            n_static_objects: 2,
            n_mobile_objects: 3,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic() {
        let a = gen_world(&small()).unwrap();
        let b = gen_world(&small()).unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x.traversals.reference, y.traversals.reference);
            assert_eq!(x.traversals.traversals, y.traversals.traversals);
            assert_eq!(x.objects, y.objects);
        }
    }

    #[test]
    fn empty_world_traversals_match_up_to_noise() {
        let cfg = WorldConfig {
            n_static_objects: 0,
            n_mobile_objects: 0,
            ..small()
        };
        let w = gen_world(&cfg).unwrap();
        for s in &w.samples {
            assert!(s.objects.is_empty());
            let r = &s.traversals.reference;
            for t in &s.traversals.traversals {
                assert_eq!(t.len(), r.len());
                let worst = r.iter().zip(t.iter()).map(|(a, b)| a.dist_sq(b).sqrt()).fold(0.0, f64::max);
                assert!(worst < 12.0 * cfg.sensor_noise, "{worst}");
            }
        }
    }

    #[test]
    fn mobile_boxes_are_populated() {
        let cfg = WorldConfig::default();
        let w = gen_world(&WorldConfig { n_samples: 3, ..cfg }).unwrap();
        for s in &w.samples {
            assert_eq!(s.objects.iter().filter(|o| o.mobile).count(), 8);
            for o in s.objects.iter().filter(|o| o.mobile) {
                assert!(points_in_box(&s.traversals.reference, &o.bbox).len() >= 10);
            }
        }
    }
}
