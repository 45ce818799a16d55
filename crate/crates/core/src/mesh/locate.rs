use super::{signed_area2, Mesh, Point};

/// Containing cell and barycentric coordinates of a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Location {
    pub cell: usize,
    pub bary: [f64; 3],
}

impl Location {
    /// P1 interpolation of per-vertex values.
    pub fn interpolate(&self, mesh: &Mesh, values: &[f64]) -> f64 {
        let c = mesh.cells()[self.cell];
        (0..3).map(|k| self.bary[k] * values[c[k]]).sum()
    }
}

/// Locates points by walking across cell neighbours, falling back to a scan
/// of all cells when the walk leaves the domain (non-convex boundaries).
#[derive(Debug, Clone)]
pub struct PointLocator<'m> {
    mesh: &'m Mesh,
    neighbors: Vec<[Option<usize>; 3]>,
}

const INSIDE_TOL: f64 = 1e-12;

impl<'m> PointLocator<'m> {
    pub fn new(mesh: &'m Mesh) -> Self {
        Self {
            mesh,
            neighbors: mesh.cell_neighbors(),
        }
    }

    fn barycentric(&self, c: usize, p: Point) -> [f64; 3] {
        let [a, b, d] = self.mesh.cell_points(c);
        let total = signed_area2(a, b, d);
        [
            signed_area2(p, b, d) / total,
            signed_area2(a, p, d) / total,
            signed_area2(a, b, p) / total,
        ]
    }

    pub fn locate(&self, p: Point, hint: Option<usize>) -> Option<Location> {
        let n = self.mesh.n_cells();
        if n == 0 {
            return None;
        }
        let mut c = hint.filter(|&h| h < n).unwrap_or(0);
        for _ in 0..n {
            let bary = self.barycentric(c, p);
            let (k, worst) =
                bary.iter()
                    .copied()
                    .enumerate()
                    .fold(
                        (0, f64::INFINITY),
                        |acc, (k, v)| if v < acc.1 { (k, v) } else { acc },
                    );
            if worst >= -INSIDE_TOL {
                return Some(Location { cell: c, bary });
            }
            match self.neighbors[c][k] {
                Some(next) => c = next,
                None => break,
            }
        }
        (0..n).find_map(|c| {
            let bary = self.barycentric(c, p);
            bary.iter()
                .all(|&v| v >= -INSIDE_TOL)
                .then_some(Location { cell: c, bary })
        })
    }
}
