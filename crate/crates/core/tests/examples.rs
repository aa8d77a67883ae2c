//! Every example must run to completion.

mod array_steering {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/array_steering.rs"));
}

#[test]
fn array_steering_runs() {
    array_steering::run_example().expect("array_steering example should run");
}

mod reference_beam {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/reference_beam.rs"));
}

#[test]
fn reference_beam_runs() {
    reference_beam::run_example().expect("reference_beam example should run");
}

mod beam_displacement {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/beam_displacement.rs"));
}

#[test]
fn beam_displacement_runs() {
    beam_displacement::run_example().expect("beam_displacement example should run");
}

mod multibeam_combining {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/multibeam_combining.rs"));
}

#[test]
fn multibeam_combining_runs() {
    multibeam_combining::run_example().expect("multibeam_combining example should run");
}

mod ofdm_channel {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/ofdm_channel.rs"));
}

#[test]
fn ofdm_channel_runs() {
    ofdm_channel::run_example().expect("ofdm_channel example should run");
}

mod frame_protocol {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/frame_protocol.rs"));
}

#[test]
fn frame_protocol_runs() {
    frame_protocol::run_example().expect("frame_protocol example should run");
}

mod sparse_recovery {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/sparse_recovery.rs"));
}

#[test]
fn sparse_recovery_runs() {
    sparse_recovery::run_example().expect("sparse_recovery example should run");
}

mod sensing_scene {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/sensing_scene.rs"));
}

#[test]
fn sensing_scene_runs() {
    sensing_scene::run_example().expect("sensing_scene example should run");
}

mod capacity_ratio {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/capacity_ratio.rs"));
}

#[test]
fn capacity_ratio_runs() {
    capacity_ratio::run_example().expect("capacity_ratio example should run");
}

mod config_roundtrip {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/config_roundtrip.rs"));
}

#[test]
fn config_roundtrip_runs() {
    config_roundtrip::run_example().expect("config_roundtrip example should run");
}

mod full_run {
    include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/full_run.rs"));
}

#[test]
fn full_run_runs() {
    full_run::run_example().expect("full_run example should run");
}
