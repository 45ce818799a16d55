//! Generate the channel-with-flag mesh and write it to disk.
//!
//! ```text
//! cargo run --example channel_mesh -- [edge_length] [out.json]
//! ```

use meshmotion::deeponet::SensorLayout;
use meshmotion::mesh::{
    generate_channel_flag_mesh, save_mesh, GeometryConfig, CYLINDER, DEFAULT_EDGE_LENGTH,
    INTERFACE, OUTER,
};
use meshmotion::quality::cell_qualities;

fn main() -> meshmotion::Result<()> {
    let mut args = std::env::args().skip(1);
    let h: f64 = args
        .next()
        .map(|a| a.parse().expect("edge length"))
        .unwrap_or(DEFAULT_EDGE_LENGTH);
    let out = args.next().unwrap_or_else(|| "channel_flag.json".into());

    let mesh = generate_channel_flag_mesh(&GeometryConfig::default(), h)?;
    let q = cell_qualities(&mesh);
    let worst = q.iter().copied().fold(f64::INFINITY, f64::min);
    println!(
        "{} vertices, {} cells, hash {}",
        mesh.n_vertices(),
        mesh.n_cells(),
        &mesh.hash()[..16]
    );
    for (name, m) in [
        ("outer", OUTER),
        ("cylinder", CYLINDER),
        ("interface", INTERFACE),
    ] {
        println!("  {name:9} {} vertices", mesh.marker_vertices(m).len());
    }
    println!("  sensors   {}", SensorLayout::from_mesh(&mesh)?.len());
    println!("  min scaled jacobian {worst:.4}");
    save_mesh(&mesh, out.as_ref())?;
    println!("wrote {out}");
    Ok(())
}
