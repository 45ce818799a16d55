//! Harmonic against biharmonic extension of one flag deflection.
//!
//! The harmonic extension folds cells near the flag tip at large
//! deflections, the biharmonic one keeps them valid.

use meshmotion::data::{flag_deformation, FlagFrame, Modes, STRESS_PHASE};
use meshmotion::fem::{biharmonic_extension, harmonic_extension};
use meshmotion::mesh::{generate_channel_flag_mesh, GeometryConfig, DEFAULT_EDGE_LENGTH};
use meshmotion::quality::quality_report;

fn main() -> meshmotion::Result<()> {
    let mesh = generate_channel_flag_mesh(&GeometryConfig::default(), DEFAULT_EDGE_LENGTH)?;
    let frame = FlagFrame::from_mesh(&mesh)?;
    let modes = Modes::default();
    println!(
        "{:>6} {:>12} {:>12} {:>10} {:>10}",
        "scale", "harm min q", "bih min q", "harm J", "bih J"
    );
    for scale in [0.25, 0.5, 1.0, 1.5, 2.0] {
        let g = flag_deformation(&mesh, frame, &modes.scaled(scale), STRESS_PHASE);
        let h = quality_report(&mesh, &harmonic_extension(&mesh, &g)?, "harmonic")?;
        let b = quality_report(&mesh, &biharmonic_extension(&mesh, &g)?, "biharmonic")?;
        println!(
            "{scale:>6} {:>12.4} {:>12.4} {:>10.4} {:>10.4}",
            h.min_scaled_jacobian, b.min_scaled_jacobian, h.min_det_j, b.min_det_j
        );
    }
    Ok(())
}
