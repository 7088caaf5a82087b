//! Generates a synthetic room, prints label and mask slices and writes the
//! sample to disk.
//!
//! cargo run --release --example generate_scenes -- [seed] [out-dir]

use std::path::PathBuf;

use ddrnet::sceneio::{generate_scene, write_sample, GenConfig, MaskCode, CLASS_NAMES};

fn main() -> ddrnet::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse().expect("seed")).unwrap_or(0);
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("ddrnet-scene"));
    let gen = GenConfig::default();
    let s = generate_scene(seed, &gen)?;
    let [x, y, z] = gen.grid.dims;

    let mut counts = [0usize; 12];
    for &l in s.labels.data() {
        counts[l as usize] += 1;
    }
    println!("seed {seed}: labels per class");
    for (name, n) in CLASS_NAMES.iter().zip(counts).filter(|(_, n)| *n > 0) {
        println!("  {name:<6} {n}");
    }

    // Characters: '.' empty, digits/letters class ids; masks: e/s/o/x.
    let glyph = |l: f64| b".123456789ab"[l as usize] as char;
    let mask_glyph = |m: f64| match MaskCode::from_code(m as u8) {
        Some(MaskCode::ObservedEmpty) => 'e',
        Some(MaskCode::ObservedSurface) => 's',
        Some(MaskCode::Occluded) => 'o',
        _ => 'x',
    };
    for k in [0, 1, z / 2] {
        println!("\nslice z={k} (rows y from far to near; labels | masks)");
        for j in (0..y).rev() {
            let labels: String = (0..x).map(|i| glyph(s.labels.get(&[i, j, k]).unwrap())).collect();
            let masks: String = (0..x).map(|i| mask_glyph(s.masks.get(&[i, j, k]).unwrap())).collect();
            println!("  {labels}  {masks}");
        }
    }

    write_sample(&out, &s)?;
    println!("\nwrote {}", out.display());
    Ok(())
}
