use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::quantile::nearest_rank;

const GROUND_PERCENTILE: f64 = 0.05;

/// Per-cell ground height on a regular BEV grid. Queries outside the grid
/// use the closest border cell.
#[derive(Debug, Clone)]
pub struct GroundMap {
    origin: (f64, f64),
    cell: f64,
    nx: usize,
    ny: usize,
    heights: Vec<f64>,
}

impl GroundMap {
    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    fn index(&self, x: f64, y: f64) -> usize {
        let ix = ((x - self.origin.0) / self.cell).floor().clamp(0.0, (self.nx - 1) as f64) as usize;
        let iy = ((y - self.origin.1) / self.cell).floor().clamp(0.0, (self.ny - 1) as f64) as usize;
        iy * self.nx + ix
    }

    pub fn height_at(&self, x: f64, y: f64) -> f64 {
        self.heights[self.index(x, y)]
    }
}

/// Ground height per BEV cell as the 5th percentile of point z. Cells with
/// no points take the height of the nearest populated cell.
pub fn estimate_ground_z(cloud: &PointCloud, grid_cell: f64) -> Result<GroundMap> {
    if !(grid_cell > 0.0) {
        return Err(Error::InvalidInput(format!("ground grid cell must be positive, got {grid_cell}")));
    }
    if cloud.is_empty() {
        return Err(Error::InvalidInput("cannot estimate ground of an empty cloud".into()));
    }
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in cloud.iter() {
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    let nx = ((x1 - x0) / grid_cell).floor() as usize + 1;
    let ny = ((y1 - y0) / grid_cell).floor() as usize + 1;
    let mut map = GroundMap {
        origin: (x0, y0),
        cell: grid_cell,
        nx,
        ny,
        heights: vec![f64::NAN; nx * ny],
    };

    let mut bins: Vec<Vec<f64>> = vec![Vec::new(); nx * ny];
    for p in cloud.iter() {
        bins[map.index(p.x, p.y)].push(p.z);
    }
    let mut filled = Vec::new();
    for (i, zs) in bins.iter().enumerate() {
        if let Some(z) = nearest_rank(zs, GROUND_PERCENTILE) {
            map.heights[i] = z;
            filled.push(i);
        }
    }
    let centers = |i: usize| ((i % nx) as f64, (i / nx) as f64);
    for i in 0..nx * ny {
        if !map.heights[i].is_nan() {
            continue;
        }
        let (cx, cy) = centers(i);
        // Ties go to the lowest row-major index.
        let nearest = filled
            .iter()
            .copied()
            .min_by(|&a, &b| {
                let (ax, ay) = centers(a);
                let (bx, by) = centers(b);
                let da = (ax - cx).powi(2) + (ay - cy).powi(2);
                let db = (bx - cx).powi(2) + (by - cy).powi(2);
                da.total_cmp(&db).then(a.cmp(&b))
            })
            .expect("non-empty cloud fills at least one cell");
        map.heights[i] = map.heights[nearest];
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;

    #[test]
    fn single_cell_constant_height() {
        let cloud: PointCloud = (0..10).map(|i| Point3::new(0.01 * i as f64, 0.0, 2.0, 0.0)).collect();
        let g = estimate_ground_z(&cloud, 1.0).unwrap();
        assert_eq!(g.height_at(0.05, 0.0), 2.0);
        assert_eq!(g.height_at(50.0, -50.0), 2.0);
    }

    #[test]
    fn empty_cloud_is_error() {
        assert!(estimate_ground_z(&PointCloud::default(), 1.0).is_err());
        let cloud = PointCloud::new(vec![Point3::new(0.0, 0.0, 0.0, 0.0)]);
        assert!(estimate_ground_z(&cloud, 0.0).is_err());
    }

    #[test]
    fn flat_plane_with_box_on_top() {
        let mut pts = Vec::new();
        for i in 0..100 {
            for j in 0..100 {
                pts.push(Point3::new(i as f64 * 0.1, j as f64 * 0.1, 0.0, 0.0));
            }
        }
        for i in 0..40 {
            for j in 0..20 {
                pts.push(Point3::new(3.0 + i as f64 * 0.1, 3.0 + j as f64 * 0.1, 1.5, 0.0));
            }
        }
        let g = estimate_ground_z(&PointCloud::new(pts), 1.0).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                assert!(g.height_at(i as f64 + 0.5, j as f64 + 0.5).abs() < 0.05);
            }
        }
    }

    #[test]
    fn tilted_plane_tracked_per_cell() {
        let slope = 0.05;
        let pts: PointCloud = (0..200)
            .flat_map(|i| (0..200).map(move |j| (i, j)))
            .map(|(i, j)| {
                let x = i as f64 * 0.1;
                Point3::new(x, j as f64 * 0.1, slope * x, 0.0)
            })
            .collect();
        let g = estimate_ground_z(&pts, 1.0).unwrap();
        for i in 0..20 {
            let x = i as f64 + 0.5;
            assert!((g.height_at(x, 7.3) - slope * x).abs() < 0.1);
        }
    }

    #[test]
    fn empty_cells_inherit_nearest() {
        let cloud = PointCloud::new(vec![
            Point3::new(0.0, 0.0, 1.0, 0.0),
            Point3::new(9.5, 0.0, 3.0, 0.0),
        ]);
        let g = estimate_ground_z(&cloud, 1.0).unwrap();
        assert_eq!(g.height_at(1.5, 0.0), 1.0);
        assert_eq!(g.height_at(8.5, 0.0), 3.0);
    }
}
