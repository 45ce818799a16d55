//! Train a small corrected operator `U = h + l D` on oscillation
//! snapshots and compare its mesh quality with the biharmonic target.
//!
//! ```text
//! cargo run --release --example train_operator -- [snapshots] [epochs]
//! ```

use meshmotion::data::{gen_oscillation_snapshots, DeformationFamily};
use meshmotion::fem::mask_field;
use meshmotion::mesh::{generate_channel_flag_mesh, GeometryConfig};
use meshmotion::training::{compare_quality, train, TrainConfig};

fn main() -> meshmotion::Result<()> {
    let mut args = std::env::args().skip(1);
    let count: usize = args
        .next()
        .map(|a| a.parse().expect("snapshot count"))
        .unwrap_or(16);
    let epochs: usize = args
        .next()
        .map(|a| a.parse().expect("epochs"))
        .unwrap_or(3000);

    let mesh = generate_channel_flag_mesh(&GeometryConfig::default(), 0.08)?;
    let l = mask_field(&mesh)?;
    let ds = gen_oscillation_snapshots(&mesh, &DeformationFamily::oscillation(count))?;
    let config = TrainConfig {
        epochs,
        depth: 4,
        width: 64,
        latent: 16,
        ..TrainConfig::smoke()
    };
    let out = train(&config, &ds.snapshots, &mesh, &l)?;

    for row in out.history.iter().step_by((epochs / 10).max(1)) {
        println!(
            "epoch {:5}  train {:.3e}  val {:.3e}  lr {:.1e}",
            row.epoch,
            row.train_loss,
            row.val_loss.unwrap_or(f64::NAN),
            row.lr
        );
    }
    println!(" k  deeponet  biharmonic");
    for q in compare_quality(out.model(), &ds.snapshots, &mesh, &l)? {
        println!(
            "{:2}  {:8.4}  {:10.4}",
            q.k, q.min_q_deeponet, q.min_q_biharmonic
        );
    }
    Ok(())
}
