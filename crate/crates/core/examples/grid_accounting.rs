//! Parameter counts over the hyperparameter grid under both layer
//! counting conventions.

use meshmotion::training::{deeponet_param_count, GridSpec, ParamConvention};

fn main() {
    let grid = GridSpec::paper();
    let runs = grid.runs();
    println!("{} runs", runs.len());
    println!(
        "{:>5} {:>5} {:>6} {:>12} {:>12}",
        "depth", "width", "latent", "affine maps", "hidden"
    );
    for r in runs.iter().filter(|r| r.seed == 0) {
        println!(
            "{:>5} {:>5} {:>6} {:>12} {:>12}",
            r.depth,
            r.width,
            r.latent,
            deeponet_param_count(r.depth, r.width, r.latent, 412, ParamConvention::AffineMaps),
            deeponet_param_count(
                r.depth,
                r.width,
                r.latent,
                412,
                ParamConvention::HiddenLayers
            ),
        );
    }
}
