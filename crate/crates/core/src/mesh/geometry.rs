use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use serde_json::json;
use spade::{
    AngleLimit, ConstrainedDelaunayTriangulation, Point2, RefinementParameters, Triangulation,
};

use super::{BoundaryEdge, Mesh, Point, CYLINDER, INTERFACE, OUTER};
use crate::error::{Error, Result};

/// Channel with a cylinder and a flag attached to its right side.
///
/// Defaults follow the usual FSI2 benchmark layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeometryConfig {
    pub channel_length: f64,
    pub channel_height: f64,
    pub cylinder_center: Point,
    pub cylinder_radius: f64,
    /// Vertex count of the polygon approximating the full circle.
    pub cylinder_segments: usize,
    /// Measured from the rightmost point of the cylinder to the flag tip.
    pub flag_length: f64,
    pub flag_thickness: f64,
    /// Spacing on the flag outline relative to the target edge length.
    pub flag_edge_factor: f64,
    /// Minimum interior angle requested from the refinement, degrees.
    pub min_angle_deg: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            channel_length: 2.5,
            channel_height: 0.41,
            cylinder_center: [0.2, 0.2],
            cylinder_radius: 0.05,
            cylinder_segments: 64,
            flag_length: 0.35,
            flag_thickness: 0.02,
            flag_edge_factor: 0.2,
            min_angle_deg: 30.0,
        }
    }
}

impl GeometryConfig {
    fn check(&self, target_edge_length: f64) -> Result<()> {
        if !(target_edge_length > 0.0) || !target_edge_length.is_finite() {
            return Err(Error::Config(format!(
                "target edge length must be positive, got {target_edge_length}"
            )));
        }
        let [cx, cy] = self.cylinder_center;
        let (r, h) = (self.cylinder_radius, self.flag_thickness);
        let degenerate = |msg: String| Err(Error::DegenerateGeometry(msg));
        if !(self.channel_length > 0.0 && self.channel_height > 0.0) {
            return degenerate("channel must have positive extent".into());
        }
        if !(r > 0.0) {
            return degenerate(format!("cylinder radius {r} must be positive"));
        }
        if !(h > 0.0) || !(self.flag_length > 0.0) {
            return degenerate("flag must have positive length and thickness".into());
        }
        if h >= 2.0 * r {
            return degenerate(format!(
                "flag thickness {h} is not narrower than the cylinder"
            ));
        }
        if cx - r <= 0.0 || cy - r <= 0.0 || cy + r >= self.channel_height {
            return degenerate("cylinder touches or crosses the channel wall".into());
        }
        if cx + r + self.flag_length >= self.channel_length {
            return degenerate("flag reaches the channel outlet".into());
        }
        if self.cylinder_segments < 8 {
            return degenerate("cylinder polygon needs at least 8 segments".into());
        }
        if !(self.flag_edge_factor > 0.0)
            || !(self.min_angle_deg >= 0.0 && self.min_angle_deg < 34.0)
        {
            return Err(Error::Config(
                "flag_edge_factor > 0 and 0 <= min_angle_deg < 34 required".into(),
            ));
        }
        Ok(())
    }

    /// x-coordinate where the flag meets the cylinder polygon.
    pub fn flag_root_x(&self) -> f64 {
        let r = self.cylinder_radius;
        let half = 0.5 * self.flag_thickness;
        self.cylinder_center[0] + (r * r - half * half).sqrt()
    }

    pub fn flag_tip_x(&self) -> f64 {
        self.cylinder_center[0] + self.cylinder_radius + self.flag_length
    }
}

/// Points from `a` to `b` (excluding `b`) with spacing at most `h`.
fn subdivide(a: Point, b: Point, h: f64) -> Vec<Point> {
    let len = (b[0] - a[0]).hypot(b[1] - a[1]);
    let n = ((len / h).ceil() as usize).max(1);
    (0..n)
        .map(|k| {
            let t = k as f64 / n as f64;
            [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
        })
        .collect()
}

/// Closed outline of cylinder plus flag, counterclockwise, with one marker
/// per segment `(p[k], p[k+1])`.
fn obstacle_outline(geo: &GeometryConfig, h_flag: f64) -> (Vec<Point>, Vec<u8>) {
    let [cx, cy] = geo.cylinder_center;
    let r = geo.cylinder_radius;
    let half = 0.5 * geo.flag_thickness;
    let theta0 = (half / r).asin();
    let arc = 2.0 * PI - 2.0 * theta0;
    let n_arc = ((geo.cylinder_segments as f64 * arc / (2.0 * PI)).round() as usize).max(4);

    let mut points = Vec::new();
    let mut markers = Vec::new();
    let root_top = [geo.flag_root_x(), cy + half];
    let root_bottom = [geo.flag_root_x(), cy - half];
    points.push(root_top);
    for k in 1..n_arc {
        let t = theta0 + arc * k as f64 / n_arc as f64;
        points.push([cx + r * t.cos(), cy + r * t.sin()]);
    }
    markers.extend(std::iter::repeat_n(CYLINDER, n_arc));

    let tip_x = geo.flag_tip_x();
    let corners = [
        root_bottom,
        [tip_x, cy - half],
        [tip_x, cy + half],
        root_top,
    ];
    for w in corners.windows(2) {
        let seg = subdivide(w[0], w[1], h_flag);
        markers.extend(std::iter::repeat_n(INTERFACE, seg.len()));
        points.extend(seg);
    }
    (points, markers)
}

/// Edge length used when none is given.
pub const DEFAULT_EDGE_LENGTH: f64 = 0.05;

/// Constrained Delaunay mesh of the fluid region: channel minus cylinder
/// minus flag.
///
/// Boundary points are placed first (walls at `target_edge_length`, flag at
/// `target_edge_length * flag_edge_factor`, cylinder by segment count). The
/// interior is then refined with an area bound of an equilateral triangle of
/// side `target_edge_length` and the configured minimum angle, without ever
/// splitting boundary segments. Interface vertices therefore lie exactly on
/// the flag outline.
pub fn generate_channel_flag_mesh(geo: &GeometryConfig, target_edge_length: f64) -> Result<Mesh> {
    geo.check(target_edge_length)?;
    let h = target_edge_length;
    let (len, height) = (geo.channel_length, geo.channel_height);

    let mut points: Vec<Point> = Vec::new();
    let mut segments: Vec<(usize, usize, u8)> = Vec::new();

    let walls = [
        [0.0, 0.0],
        [len, 0.0],
        [len, height],
        [0.0, height],
        [0.0, 0.0],
    ];
    let start = points.len();
    for w in walls.windows(2) {
        points.extend(subdivide(w[0], w[1], h));
    }
    let count = points.len() - start;
    for k in 0..count {
        segments.push((start + k, start + (k + 1) % count, OUTER));
    }

    let (outline, markers) = obstacle_outline(geo, h * geo.flag_edge_factor);
    let start = points.len();
    let count = outline.len();
    points.extend(outline);
    for (k, &m) in markers.iter().enumerate() {
        segments.push((start + k, start + (k + 1) % count, m));
    }

    let mut cdt = ConstrainedDelaunayTriangulation::<Point2<f64>>::new();
    let mut handles = Vec::with_capacity(points.len());
    for p in &points {
        let handle = cdt
            .insert(Point2::new(p[0], p[1]))
            .map_err(|e| Error::DegenerateGeometry(format!("cannot insert {p:?}: {e:?}")))?;
        handles.push(handle);
    }
    let mut segment_marker: HashMap<(usize, usize), u8> = HashMap::new();
    for &(a, b, m) in &segments {
        let (ha, hb) = (handles[a], handles[b]);
        if ha == hb {
            return Err(Error::DegenerateGeometry(format!(
                "boundary points {a} and {b} coincide"
            )));
        }
        cdt.add_constraint(ha, hb);
        let key = (ha.index().min(hb.index()), ha.index().max(hb.index()));
        segment_marker.insert(key, m);
    }

    let max_area = 3.0_f64.sqrt() / 4.0 * h * h;
    let params = RefinementParameters::<f64>::new()
        .exclude_outer_faces(true)
        .keep_constraint_edges()
        .with_max_allowed_area(max_area)
        .with_angle_limit(AngleLimit::from_deg(geo.min_angle_deg))
        .with_max_additional_vertices(2_000_000);
    let result = cdt.refine(params);
    if !result.refinement_complete {
        return Err(Error::DegenerateGeometry(
            "mesh refinement did not complete".into(),
        ));
    }
    let excluded: std::collections::HashSet<_> = result.excluded_faces.into_iter().collect();

    let mut raw_cells = Vec::new();
    for face in cdt.inner_faces() {
        if excluded.contains(&face.fix()) {
            continue;
        }
        raw_cells.push(face.vertices().map(|v| v.fix().index()));
    }

    // compact numbering in spade's vertex order
    let mut new_index = vec![usize::MAX; cdt.num_vertices()];
    for cell in &raw_cells {
        for &v in cell {
            new_index[v] = 0;
        }
    }
    let mut vertices = Vec::new();
    for v in cdt.vertices() {
        let i = v.fix().index();
        if new_index[i] == 0 {
            new_index[i] = vertices.len();
            let p = v.position();
            vertices.push([p.x, p.y]);
        }
    }
    let mut cells: Vec<[usize; 3]> = raw_cells.iter().map(|c| c.map(|v| new_index[v])).collect();
    for cell in &mut cells {
        if super::signed_area2(vertices[cell[0]], vertices[cell[1]], vertices[cell[2]]) < 0.0 {
            cell.swap(1, 2);
        }
    }

    let mut edge_count: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for cell in &raw_cells {
        for k in 0..3 {
            let (a, b) = (cell[k], cell[(k + 1) % 3]);
            *edge_count.entry((a.min(b), a.max(b))).or_default() += 1;
        }
    }
    let mut boundary = Vec::new();
    for (&(a, b), &n) in &edge_count {
        if n != 1 {
            continue;
        }
        let marker = *segment_marker.get(&(a, b)).ok_or_else(|| {
            Error::DegenerateGeometry(format!(
                "boundary edge ({a}, {b}) is not a boundary segment"
            ))
        })?;
        boundary.push(BoundaryEdge {
            vertices: [new_index[a], new_index[b]],
            marker,
        });
    }
    boundary.sort_by_key(|e| (e.marker, e.vertices));

    let sensor_count = {
        let mut s: Vec<usize> = boundary
            .iter()
            .filter(|e| e.marker == INTERFACE)
            .flat_map(|e| e.vertices)
            .collect();
        s.sort_unstable();
        s.dedup();
        s.len()
    };
    let mut meta = BTreeMap::new();
    meta.insert("generator".into(), json!("channel_flag"));
    meta.insert(
        "geometry".into(),
        serde_json::to_value(geo).expect("geometry serializes"),
    );
    meta.insert("target_edge_length".into(), json!(h));
    meta.insert("sensor_count".into(), json!(sensor_count));
    Mesh::new(vertices, cells, boundary, meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::INTERFACE;

    fn on_flag_outline(geo: &GeometryConfig, p: Point) -> bool {
        let (xr, xt) = (geo.flag_root_x(), geo.flag_tip_x());
        let cy = geo.cylinder_center[1];
        let half = 0.5 * geo.flag_thickness;
        let tol = 1e-12;
        let on_long = (p[0] >= xr - tol && p[0] <= xt + tol)
            && ((p[1] - (cy - half)).abs() <= tol || (p[1] - (cy + half)).abs() <= tol);
        let on_tip = (p[0] - xt).abs() <= tol && p[1] >= cy - half - tol && p[1] <= cy + half + tol;
        on_long || on_tip
    }

    #[test]
    fn default_mesh_interface_on_flag() {
        let geo = GeometryConfig::default();
        let m = generate_channel_flag_mesh(&geo, 0.05).unwrap();
        let sensors = m.marker_vertices(INTERFACE);
        assert!(!sensors.is_empty());
        for &i in &sensors {
            assert!(
                on_flag_outline(&geo, m.vertex(i)),
                "vertex {i} at {:?}",
                m.vertex(i)
            );
        }
        assert_eq!(m.meta()["sensor_count"], json!(sensors.len()));
        let [x0, y0, x1, y1] = m.bounding_box();
        assert_eq!([x0, y0, x1, y1], [0.0, 0.0, 2.5, 0.41]);
    }

    #[test]
    fn domain_area_matches_geometry() {
        let geo = GeometryConfig::default();
        let m = generate_channel_flag_mesh(&geo, 0.05).unwrap();
        let (outline, _) = obstacle_outline(&geo, 0.05 * geo.flag_edge_factor);
        let n = outline.len();
        let hole: f64 = (0..n)
            .map(|k| {
                let (a, b) = (outline[k], outline[(k + 1) % n]);
                0.5 * (a[0] * b[1] - b[0] * a[1])
            })
            .sum();
        let expected = 2.5 * 0.41 - hole;
        assert!(
            (m.area() - expected).abs() < 1e-12,
            "{} vs {expected}",
            m.area()
        );
    }

    #[test]
    fn refinement_adds_vertices() {
        let geo = GeometryConfig::default();
        let coarse = generate_channel_flag_mesh(&geo, 0.05).unwrap();
        let fine = generate_channel_flag_mesh(&geo, 0.02).unwrap();
        assert!(fine.n_vertices() > coarse.n_vertices());
    }

    #[test]
    fn generation_is_deterministic() {
        let geo = GeometryConfig::default();
        let a = generate_channel_flag_mesh(&geo, 0.08).unwrap();
        let b = generate_channel_flag_mesh(&geo, 0.08).unwrap();
        assert_eq!(a.hash(), b.hash());
    }

    #[test]
    fn degenerate_geometries_rejected() {
        let zero_r = GeometryConfig {
            cylinder_radius: 0.0,
            ..Default::default()
        };
        let err = generate_channel_flag_mesh(&zero_r, 0.05).unwrap_err();
        assert!(err.to_string().contains("degenerate geometry"), "{err}");

        let wide = GeometryConfig {
            flag_thickness: 0.2,
            ..Default::default()
        };
        assert!(matches!(
            generate_channel_flag_mesh(&wide, 0.05),
            Err(Error::DegenerateGeometry(_))
        ));

        let touching = GeometryConfig {
            cylinder_center: [0.2, 0.03],
            ..Default::default()
        };
        assert!(matches!(
            generate_channel_flag_mesh(&touching, 0.05),
            Err(Error::DegenerateGeometry(_))
        ));

        assert!(matches!(
            generate_channel_flag_mesh(&GeometryConfig::default(), -1.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn markers_split_into_walls_cylinder_flag() {
        let m = generate_channel_flag_mesh(&GeometryConfig::default(), 0.1).unwrap();
        let geo = GeometryConfig::default();
        for e in m.boundary_edges() {
            let [a, b] = e.vertices.map(|v| m.vertex(v));
            let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
            match e.marker {
                OUTER => assert!(mid[0] == 0.0 || mid[0] == 2.5 || mid[1] == 0.0 || mid[1] == 0.41),
                CYLINDER => {
                    let d = (mid[0] - 0.2).hypot(mid[1] - 0.2);
                    assert!(d <= 0.05 + 1e-12 && d > 0.049);
                }
                INTERFACE => assert!(on_flag_outline(&geo, mid)),
                other => panic!("unexpected marker {other}"),
            }
        }
    }
}
