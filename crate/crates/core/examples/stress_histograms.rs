//! Quality histograms of harmonic and biharmonic motion under the
//! stress family, written as CSV.

use meshmotion::data::{gen_stress_snapshots, DeformationFamily, STRESS_LEVELS};
use meshmotion::mesh::{generate_channel_flag_mesh, GeometryConfig, DEFAULT_EDGE_LENGTH};
use meshmotion::quality::{histogram, quality_report, uniform_edges, write_histogram_csv};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::path::PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "stress_histograms".into()),
    );
    std::fs::create_dir_all(&out)?;
    let mesh = generate_channel_flag_mesh(&GeometryConfig::default(), DEFAULT_EDGE_LENGTH)?;
    let ds = gen_stress_snapshots(&mesh, &DeformationFamily::stress(STRESS_LEVELS.to_vec()))?;
    let edges = uniform_edges(-1.0, 1.0, 40);
    for (s, level) in ds.snapshots.iter().zip(STRESS_LEVELS) {
        for (name, u) in [("harmonic", &s.harmonic), ("biharmonic", &s.target)] {
            let r = quality_report(&mesh, u, name)?;
            let counts = histogram(&r.scaled_jacobian, &edges)?;
            let inverted: usize = counts[..20].iter().sum();
            println!(
                "level {level:3}  {name:10}  min q {:7.4}  inverted {inverted}",
                r.min_scaled_jacobian
            );
            write_histogram_csv(
                &out.join(format!("{name}_{:04}.csv", s.index)),
                &edges,
                &counts,
            )?;
        }
    }
    println!("histograms in {}", out.display());
    Ok(())
}
