use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{GeometryError, PointCloud};

pub const DEFAULT_RESOLUTION: usize = 32;
pub const DEFAULT_OCCUPANCY_THRESHOLD: f64 = 0.5;
pub const DEFAULT_MAX_EDGE_POINTS: usize = 1000;

/// Cubic occupancy grid, row-major with linear index `x·R² + y·R + z`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    resolution: usize,
    occupancy: Vec<f64>,
}

impl VoxelGrid {
    pub fn new(resolution: usize, occupancy: Vec<f64>) -> Result<Self, GeometryError> {
        if resolution == 0 {
            return Err(GeometryError::InvalidGrid("resolution must be positive".into()));
        }
        let expected = resolution.pow(3);
        if occupancy.len() != expected {
            return Err(GeometryError::InvalidGrid(format!(
                "occupancy length {} != resolution³ = {expected}",
                occupancy.len()
            )));
        }
        if let Some(bad) = occupancy.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(GeometryError::InvalidGrid(format!(
                "occupancy[{bad}] = {} outside [0, 1]",
                occupancy[bad]
            )));
        }
        Ok(Self {
            resolution,
            occupancy,
        })
    }

    pub fn empty(resolution: usize) -> Self {
        Self {
            resolution,
            occupancy: vec![0.0; resolution.pow(3)],
        }
    }

    /// Binary grid with every cell for which `filled(x, y, z)` holds set to 1.
    pub fn from_fn(resolution: usize, mut filled: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut grid = Self::empty(resolution);
        for x in 0..resolution {
            for y in 0..resolution {
                for z in 0..resolution {
                    if filled(x, y, z) {
                        let i = grid.index(x, y, z);
                        grid.occupancy[i] = 1.0;
                    }
                }
            }
        }
        grid
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn occupancy(&self) -> &[f64] {
        &self.occupancy
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.resolution + y) * self.resolution + z
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.occupancy[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, value: f64) {
        let i = self.index(x, y, z);
        self.occupancy[i] = value.clamp(0.0, 1.0);
    }

    pub fn count_occupied(&self, threshold: f64) -> usize {
        self.occupancy.iter().filter(|v| **v >= threshold).count()
    }

    /// Center of cell `(x, y, z)` with the grid centered on the origin.
    pub fn cell_center(&self, x: usize, y: usize, z: usize, cell_size: f64) -> Vector3<f64> {
        let half = self.resolution as f64 / 2.0;
        Vector3::new(
            (x as f64 + 0.5 - half) * cell_size,
            (y as f64 + 0.5 - half) * cell_size,
            (z as f64 + 0.5 - half) * cell_size,
        )
    }

    /// Cell edge length that maps the grid onto the unit cube `[-½, ½]³`.
    pub fn unit_cell_size(&self) -> f64 {
        1.0 / self.resolution as f64
    }
}

/// Boundary-cell centers of the occupied region.
///
/// A cell is on the boundary when its occupancy is at least `threshold` and
/// one of its six face neighbors is either below `threshold` or outside the
/// grid. Points are emitted in linear-index order. When there are more than
/// `max_points` of them, a uniform subset of exactly `max_points` is drawn
/// with a generator seeded from `seed` and returned in the original order.
pub fn voxels_to_edge_points(
    v: &VoxelGrid,
    threshold: f64,
    cell_size: f64,
    max_points: usize,
    seed: u64,
) -> Result<PointCloud, GeometryError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(GeometryError::InvalidParameter("threshold must lie in (0, 1)"));
    }
    if max_points == 0 {
        return Err(GeometryError::InvalidParameter("max_points must be at least 1"));
    }
    let r = v.resolution;
    let occ = |x: usize, y: usize, z: usize| v.get(x, y, z) >= threshold;
    let mut points = Vec::new();
    for x in 0..r {
        for y in 0..r {
            for z in 0..r {
                if !occ(x, y, z) {
                    continue;
                }
                let on_border = x == 0 || y == 0 || z == 0 || x + 1 == r || y + 1 == r || z + 1 == r;
                let boundary = on_border
                    || !occ(x - 1, y, z)
                    || !occ(x + 1, y, z)
                    || !occ(x, y - 1, z)
                    || !occ(x, y + 1, z)
                    || !occ(x, y, z - 1)
                    || !occ(x, y, z + 1);
                if boundary {
                    points.push(v.cell_center(x, y, z, cell_size));
                }
            }
        }
    }
    if points.is_empty() {
        return Err(GeometryError::EmptyCloud);
    }
    if points.len() > max_points {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut keep = rand::seq::index::sample(&mut rng, points.len(), max_points).into_vec();
        keep.sort_unstable();
        points = keep.into_iter().map(|i| points[i]).collect();
    }
    Ok(PointCloud::from_points_unchecked(points))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_grid_is_an_error() {
        let g = VoxelGrid::empty(4);
        assert_eq!(
            voxels_to_edge_points(&g, 0.5, 0.25, 100, 0),
            Err(GeometryError::EmptyCloud)
        );
    }

    #[test]
    fn single_center_cell_maps_to_origin() {
        let g = VoxelGrid::from_fn(3, |x, y, z| (x, y, z) == (1, 1, 1));
        let pts = voxels_to_edge_points(&g, 0.5, 1.0 / 3.0, 10, 0).unwrap();
        assert_eq!(pts.len(), 1);
        assert!(pts.points()[0].norm() < 1e-15);
    }

    /// Brute-force boundary enumeration: a cell of the block is interior iff
    /// all 26 surrounding cells (hence all 6 face neighbors) lie in the block.
    #[test]
    fn solid_block_boundary_matches_enumeration() {
        let inside = |x: usize, y: usize, z: usize| (2..6).contains(&x) && (2..6).contains(&y) && (2..6).contains(&z);
        let g = VoxelGrid::from_fn(8, inside);
        let mut expected = 0;
        for x in 2..6i32 {
            for y in 2..6i32 {
                for z in 2..6i32 {
                    let interior = [(-1i32, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1)]
                        .iter()
                        .all(|(dx, dy, dz)| {
                            inside(
                                (x + dx) as usize,
                                (y + dy) as usize,
                                (z + dz) as usize,
                            )
                        });
                    if !interior {
                        expected += 1;
                    }
                }
            }
        }
        assert_eq!(expected, 56);
        let pts = voxels_to_edge_points(&g, 0.5, 0.125, 1000, 0).unwrap();
        assert_eq!(pts.len(), 56);
    }

    #[test]
    fn border_cells_count_as_boundary() {
        let full = VoxelGrid::from_fn(3, |_, _, _| true);
        let pts = voxels_to_edge_points(&full, 0.5, 1.0, 100, 0).unwrap();
        assert_eq!(pts.len(), 26);
    }

    #[test]
    fn subsampling_is_seeded_and_bounded() {
        let g = VoxelGrid::from_fn(16, |x, y, z| x > 1 && y > 2 && z > 3);
        let a = voxels_to_edge_points(&g, 0.5, 1.0 / 16.0, 100, 42).unwrap();
        let b = voxels_to_edge_points(&g, 0.5, 1.0 / 16.0, 100, 42).unwrap();
        let c = voxels_to_edge_points(&g, 0.5, 1.0 / 16.0, 100, 43).unwrap();
        assert_eq!(a.len(), 100);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn grid_validation() {
        assert!(VoxelGrid::new(2, vec![0.0; 7]).is_err());
        assert!(VoxelGrid::new(2, vec![1.5; 8]).is_err());
        assert!(VoxelGrid::new(0, vec![]).is_err());
        assert!(voxels_to_edge_points(&VoxelGrid::empty(2), 1.0, 1.0, 1, 0).is_err());
    }
}
