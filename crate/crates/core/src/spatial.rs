use std::collections::HashMap;

type CellKey = (i64, i64, i64);

/// Uniform voxel hash over 3D positions. With a cell edge no smaller than the
/// query radius, every neighbor of a point lies in the 27 cells around it.
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    cell: f64,
    cells: HashMap<CellKey, Vec<usize>>,
}

impl VoxelGrid {
    pub fn build<I>(positions: I, cell: f64) -> Self
    where
        I: IntoIterator<Item = [f64; 3]>,
    {
        assert!(cell > 0.0, "voxel size must be positive");
        let mut cells: HashMap<CellKey, Vec<usize>> = HashMap::new();
        for (i, p) in positions.into_iter().enumerate() {
            cells.entry(key(p, cell)).or_default().push(i);
        }
        Self { cell, cells }
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    /// Calls `visit` with every index stored in the 3x3x3 block of cells
    /// around `p`.
    pub fn for_each_candidate(&self, p: [f64; 3], mut visit: impl FnMut(usize)) {
        let (kx, ky, kz) = key(p, self.cell);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = self.cells.get(&(kx + dx, ky + dy, kz + dz)) {
                        bucket.iter().copied().for_each(&mut visit);
                    }
                }
            }
        }
    }
}

fn key(p: [f64; 3], cell: f64) -> CellKey {
    (
        (p[0] / cell).floor() as i64,
        (p[1] / cell).floor() as i64,
        (p[2] / cell).floor() as i64,
    )
}
