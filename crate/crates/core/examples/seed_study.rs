//! Train one configuration under several seeds and report loss and
//! quality quantiles across them.

use meshmotion::data::{gen_oscillation_snapshots, DeformationFamily};
use meshmotion::fem::mask_field;
use meshmotion::mesh::{generate_channel_flag_mesh, GeometryConfig};
use meshmotion::training::{seed_study, TrainConfig};

fn main() -> meshmotion::Result<()> {
    let mesh = generate_channel_flag_mesh(&GeometryConfig::default(), 0.1)?;
    let l = mask_field(&mesh)?;
    let ds = gen_oscillation_snapshots(&mesh, &DeformationFamily::oscillation(12))?;
    let config = TrainConfig {
        epochs: 2000,
        depth: 3,
        width: 32,
        latent: 8,
        ..TrainConfig::smoke()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .build()
        .expect("thread pool");
    let seeds: Vec<u64> = (0..5).collect();
    let study = seed_study(&config, &seeds, &ds.snapshots, &mesh, &l, 1e-3, None, &pool)?;

    for (epoch, q) in study.loss_quantiles().into_iter().step_by(400) {
        println!(
            "epoch {epoch:4}  q10 {:.3e}  q50 {:.3e}  q90 {:.3e}",
            q[0], q[1], q[2]
        );
    }
    for r in &study.runs {
        let worst = r
            .quality
            .iter()
            .map(|q| q.min_q_deeponet)
            .fold(f64::INFINITY, f64::min);
        println!(
            "seed {}  min quality {worst:.4}{}",
            r.seed,
            if r.stagnated { "  stagnated" } else { "" }
        );
    }
    Ok(())
}
