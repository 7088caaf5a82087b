//! Scores corrupted copies of ground truth to show how SC and SSC metrics
//! respond.
//!
//! cargo run --release --example score_predictions

use ddrnet::sceneio::{generate_scene, ssc_metrics, GenConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> ddrnet::Result<()> {
    let s = generate_scene(2, &GenConfig::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for flip in [0.0, 0.05, 0.2, 0.5] {
        let mut pred = s.labels.clone();
        for v in pred.data_mut() {
            if rng.random_bool(flip) {
                *v = rng.random_range(0..12) as f64;
            }
        }
        let r = ssc_metrics(&pred, &s.labels, &s.masks)?;
        println!("{:.0}% of voxels relabelled:\n{}", flip * 100.0, r.to_table());
    }
    Ok(())
}
