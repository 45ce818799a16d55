//! The mask `l` that vanishes on the boundary, and its source term.

use meshmotion::fem::{mask_field, weighted_source};
use meshmotion::mesh::{generate_channel_flag_mesh, GeometryConfig, DEFAULT_EDGE_LENGTH};
use meshmotion::quality::histogram;

fn main() -> meshmotion::Result<()> {
    for r in [0.0, 0.25, 0.5, 0.75, 1.0] {
        println!("f({r:.2}) = {:.6}", weighted_source(r));
    }
    let mesh = generate_channel_flag_mesh(&GeometryConfig::default(), DEFAULT_EDGE_LENGTH)?;
    let l = mask_field(&mesh)?;
    let values: Vec<f64> = mesh
        .interior_vertices()
        .into_iter()
        .map(|i| l.get(0, i))
        .collect();
    let edges: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
    println!("interior values of l ({} vertices):", values.len());
    for (w, c) in edges.windows(2).zip(histogram(&values, &edges)?) {
        println!("  [{:.1}, {:.1}) {c:5} {}", w[0], w[1], "#".repeat(c / 20));
    }
    Ok(())
}
