use std::path::Path;

use meshmotion::mesh::{
    generate_channel_flag_mesh, load_mesh, GeometryConfig, Mesh, NodalField, INTERFACE,
};
use meshmotion::quality::{cell_qualities, quality_report};

fn fixture() -> Mesh {
    load_mesh(&Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/channel_flag.json"))
        .unwrap()
}

#[test]
fn sensor_count_matches_meta() {
    let mesh = fixture();
    let declared = mesh.meta()["sensor_count"].as_u64().unwrap() as usize;
    assert_eq!(mesh.marker_vertices(INTERFACE).len(), declared);
}

#[test]
fn zero_motion_keeps_quality() {
    let mesh = fixture();
    let zero = NodalField::zeros(2, mesh.n_vertices());
    let moved = quality_report(&mesh, &zero, "none").unwrap();
    let still = cell_qualities(&mesh);
    assert_eq!(moved.scaled_jacobian, still);
    assert_eq!(moved.min_det_j, 1.0);
}

#[test]
fn regenerated_fixture_is_identical() {
    let mesh = fixture();
    let h = mesh.meta()["target_edge_length"].as_f64().unwrap();
    let again = generate_channel_flag_mesh(&GeometryConfig::default(), h).unwrap();
    assert_eq!(again.hash(), mesh.hash());
}
