//! Back-projects a rendered depth image into the desk grid and reports
//! how many pixels compete for each voxel.
//!
//! cargo run --release --example projection_demo

use std::collections::BTreeMap;

use ddrnet::model::NetworkConfig;
use ddrnet::projection::{build_projection_table, project_forward, SENTINEL_OUTSIDE};
use ddrnet::sceneio::{generate_scene, GenConfig};

fn main() -> ddrnet::Result<()> {
    let cfg = NetworkConfig::desk();
    let scene = generate_scene(1, &GenConfig::default())?;
    let mut table = build_projection_table(&scene.depth, &scene.intrinsics, &cfg.grid)?;
    let inside = table.pixel_voxel.iter().filter(|&&v| v != SENTINEL_OUTSIDE).count();
    println!(
        "{} of {} pixels land in the {:?} grid",
        inside,
        table.pixel_voxel.len(),
        cfg.grid.dims
    );

    let mut per_voxel: BTreeMap<usize, usize> = BTreeMap::new();
    for &v in table.pixel_voxel.iter().filter(|&&v| v != SENTINEL_OUTSIDE) {
        *per_voxel.entry(v).or_default() += 1;
    }
    let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
    for n in per_voxel.values() {
        *histogram.entry(*n).or_default() += 1;
    }
    println!("{} voxels receive features", per_voxel.len());
    for (pixels, voxels) in histogram {
        println!("  {voxels:>5} voxels hit by {pixels} pixel(s)");
    }

    let projected = project_forward(&scene.rgb, &mut table)?;
    let winners = table.winners.as_ref().expect("forward records winners");
    let assigned = winners.iter().filter(|&&w| w != SENTINEL_OUTSIDE).count();
    println!(
        "projected rgb {:?}, {} (channel, voxel) winners",
        projected.shape(),
        assigned
    );
    Ok(())
}
