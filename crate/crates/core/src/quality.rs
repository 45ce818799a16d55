//! Mesh validity and quality: the triangle scaled Jacobian, the minimum of
//! `det(I + grad u)` over cells, per-snapshot reports and histograms.

use std::path::Path;

use crate::error::{Error, Result};
use crate::files::{fmt_float, write_csv};
use crate::mesh::{deform, signed_area2, Mesh, NodalField, Point};

const SQRT3: f64 = 1.732_050_807_568_877_2;

/// Scaled Jacobian of a triangle: `(4A/sqrt(3)) / max_v (|e1(v)| |e2(v)|)`,
/// with `A` the signed area and `e1(v), e2(v)` the two edges at vertex `v`.
///
/// Equals 1 for equilateral triangles, 0 for degenerate ones and is negative
/// for inverted (clockwise) ones.
pub fn scaled_jacobian(tri: [Point; 3]) -> f64 {
    let [a, b, c] = tri;
    let len = |p: Point, q: Point| (q[0] - p[0]).hypot(q[1] - p[1]);
    let (ab, bc, ca) = (len(a, b), len(b, c), len(c, a));
    let max_product = (ab * ca).max(ab * bc).max(bc * ca);
    let area2 = signed_area2(a, b, c);
    if max_product == 0.0 || area2 == 0.0 {
        return 0.0;
    }
    2.0 * area2 / SQRT3 / max_product
}

/// Per-cell scaled Jacobian of a mesh as it stands.
pub fn cell_qualities(mesh: &Mesh) -> Vec<f64> {
    (0..mesh.n_cells())
        .map(|c| scaled_jacobian(mesh.cell_points(c)))
        .collect()
}

/// Per-cell `det(I + grad u)`; for P1 fields this is the ratio of deformed
/// to reference signed area.
pub fn det_gradients(mesh: &Mesh, u: &NodalField) -> Result<Vec<f64>> {
    let moved = deform(mesh, u)?;
    Ok((0..mesh.n_cells())
        .map(|c| moved.signed_area2(c) / mesh.signed_area2(c))
        .collect())
}

/// Minimum over cells of `det(I + grad u)`.
pub fn min_det_gradient(mesh: &Mesh, u: &NodalField) -> Result<f64> {
    Ok(det_gradients(mesh, u)?
        .into_iter()
        .fold(f64::INFINITY, f64::min))
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualityReport {
    pub operator: String,
    pub snapshot: Option<usize>,
    pub scaled_jacobian: Vec<f64>,
    pub min_scaled_jacobian: f64,
    pub min_det_j: f64,
}

/// Quality of the mesh deformed by `u`.
pub fn quality_report(mesh: &Mesh, u: &NodalField, operator: &str) -> Result<QualityReport> {
    let moved = deform(mesh, u)?;
    let scaled_jacobian = cell_qualities(&moved);
    let min_scaled_jacobian = scaled_jacobian
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let min_det_j = (0..mesh.n_cells())
        .map(|c| moved.signed_area2(c) / mesh.signed_area2(c))
        .fold(f64::INFINITY, f64::min);
    Ok(QualityReport {
        operator: operator.to_string(),
        snapshot: None,
        scaled_jacobian,
        min_scaled_jacobian,
        min_det_j,
    })
}

impl QualityReport {
    pub fn with_snapshot(mut self, k: usize) -> Self {
        self.snapshot = Some(k);
        self
    }
}

/// Counts per half-open bin `[e_j, e_{j+1})`; the last bin also includes its
/// right edge. Values outside `[e_0, e_last]` are not counted.
pub fn histogram(values: &[f64], edges: &[f64]) -> Result<Vec<usize>> {
    if edges.len() < 2 {
        return Err(Error::Config(
            "histogram needs at least two bin edges".into(),
        ));
    }
    if edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config(
            "histogram edges must be strictly increasing".into(),
        ));
    }
    let nbins = edges.len() - 1;
    let (lo, hi) = (edges[0], edges[nbins]);
    let mut counts = vec![0; nbins];
    for &v in values {
        if !(v >= lo && v <= hi) {
            continue;
        }
        let bin = if v == hi {
            nbins - 1
        } else {
            edges.partition_point(|&e| e <= v) - 1
        };
        counts[bin] += 1;
    }
    Ok(counts)
}

/// `n` equal bins spanning `[lo, hi]`.
pub fn uniform_edges(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n)
        .map(|k| lo + (hi - lo) * k as f64 / n as f64)
        .collect()
}

/// `snapshot,operator,min_scaled_jacobian,min_detJ`
pub fn write_quality_csv(path: &Path, reports: &[QualityReport]) -> Result<()> {
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                r.snapshot.map_or_else(String::new, |k| k.to_string()),
                r.operator.clone(),
                fmt_float(r.min_scaled_jacobian),
                fmt_float(r.min_det_j),
            ]
        })
        .collect();
    write_csv(
        path,
        &["snapshot", "operator", "min_scaled_jacobian", "min_detJ"],
        &rows,
    )
}

/// `bin_left,bin_right,count`
pub fn write_histogram_csv(path: &Path, edges: &[f64], counts: &[usize]) -> Result<()> {
    let rows: Vec<Vec<String>> = counts
        .iter()
        .enumerate()
        .map(|(j, n)| vec![fmt_float(edges[j]), fmt_float(edges[j + 1]), n.to_string()])
        .collect();
    write_csv(path, &["bin_left", "bin_right", "count"], &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::testing::unit_square;
    use proptest::prelude::*;

    fn equilateral(side: f64) -> [Point; 3] {
        [[0.0, 0.0], [side, 0.0], [0.5 * side, 0.5 * SQRT3 * side]]
    }

    #[test]
    fn anchors() {
        assert!((scaled_jacobian(equilateral(1.0)) - 1.0).abs() <= 1e-12);
        assert_eq!(scaled_jacobian([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]), 0.0);
        assert_eq!(scaled_jacobian([[1.0, 1.0]; 3]), 0.0);
        assert_eq!(scaled_jacobian([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]]), 0.0);
        // right isosceles, legs 1: (2/sqrt 3)/sqrt 2 = 2/sqrt 6
        let q = scaled_jacobian([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        assert!((q - 0.816_496_580_927_726).abs() < 1e-15, "{q}");
        assert!(scaled_jacobian([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]]) < 0.0);
    }

    #[test]
    fn det_gradient_examples() {
        let m = unit_square(3);
        let zero = NodalField::zeros(2, m.n_vertices());
        assert_eq!(min_det_gradient(&m, &zero).unwrap(), 1.0);
        let stretch = NodalField::from_vertex_fn(&m, 2, |_, x| vec![0.1 * x[0], 0.0]);
        for j in det_gradients(&m, &stretch).unwrap() {
            assert!((j - 1.1).abs() < 1e-14, "{j}");
        }
    }

    #[test]
    fn report_consistent_with_cells() {
        let m = unit_square(4);
        let u = NodalField::from_vertex_fn(&m, 2, |_, x| {
            vec![0.05 * (3.0 * x[1]).sin(), 0.02 * x[0] * x[0]]
        });
        let r = quality_report(&m, &u, "test").unwrap();
        assert_eq!(r.scaled_jacobian.len(), m.n_cells());
        let min = r
            .scaled_jacobian
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        assert_eq!(min, r.min_scaled_jacobian);
        assert_eq!(r.min_det_j, min_det_gradient(&m, &u).unwrap());

        let undeformed = quality_report(&m, &NodalField::zeros(2, m.n_vertices()), "id").unwrap();
        let base = cell_qualities(&m).into_iter().fold(f64::INFINITY, f64::min);
        assert_eq!(undeformed.min_scaled_jacobian, base);
    }

    #[test]
    fn histogram_conventions() {
        assert_eq!(histogram(&[0.5], &[0.0, 1.0]).unwrap(), vec![1]);
        assert_eq!(
            histogram(&[0.0, 0.5, 1.0], &[0.0, 0.5, 1.0]).unwrap(),
            vec![1, 2]
        );
        assert_eq!(
            histogram(&[-0.1, 1.1, f64::NAN], &[0.0, 1.0]).unwrap(),
            vec![0]
        );
        assert!(histogram(&[1.0], &[]).is_err());
        assert!(histogram(&[1.0], &[0.0, 0.0]).is_err());
        let values: Vec<f64> = (0..1000).map(|k| (k as f64 + 0.5) / 1000.0).collect();
        let counts = histogram(&values, &uniform_edges(0.0, 1.0, 10)).unwrap();
        assert_eq!(counts.iter().sum::<usize>(), 1000);
    }

    fn triangle() -> impl Strategy<Value = [Point; 3]> {
        prop::array::uniform3(prop::array::uniform2(-1.0..1.0f64))
            .prop_filter("well shaped", |t| scaled_jacobian(*t).abs() > 0.05)
    }

    proptest! {
        #[test]
        fn bounded_by_one_and_sign_consistent(t in triangle()) {
            let q = scaled_jacobian(t);
            prop_assert!(q <= 1.0 + 1e-15);
            prop_assert_eq!(q < 0.0, signed_area2(t[0], t[1], t[2]) < 0.0);
        }

        #[test]
        fn invariant_under_similarity(t in triangle(), angle in 0.0..std::f64::consts::TAU,
                                      scale in 0.1..10.0f64, shift in prop::array::uniform2(-1.0..1.0f64)) {
            let (s, c) = angle.sin_cos();
            let map = |p: Point| [scale * (c * p[0] - s * p[1]) + shift[0], scale * (s * p[0] + c * p[1]) + shift[1]];
            let q = scaled_jacobian(t);
            let q2 = scaled_jacobian(t.map(map));
            prop_assert!((q - q2).abs() <= 1e-12 * q.abs());
        }
    }
}
