//! Parameter and FLOP breakdown for the built-in presets and the two heavy
//! ablation variants.
//!
//! cargo run --release --example analyze_cost

use ddrnet::model::{analyze, count_params, AsppKind, Block3dKind, NetworkConfig, PRESETS};

fn main() -> ddrnet::Result<()> {
    let desk = analyze(&NetworkConfig::desk(), 1)?;
    println!("{}", desk.to_table());

    println!("preset         params        GFLOPs");
    for name in PRESETS {
        let r = analyze(&NetworkConfig::preset(name)?, 1)?;
        println!("{name:<12} {:>8} {:>13.3}", r.total_params, r.total_flops as f64 / 1e9);
    }

    let base = desk.total_params;
    let heavy_aspp = count_params(&NetworkConfig {
        aspp_kind: AsppKind::Full,
        ..NetworkConfig::desk()
    })?;
    let heavy_blocks = count_params(&NetworkConfig {
        block3d: Block3dKind::FullResidual,
        ..NetworkConfig::desk()
    })?;
    println!(
        "\nfull 3D-ASPP:        {} params ({:.2}x)",
        heavy_aspp.total_params,
        heavy_aspp.total_params as f64 / base as f64
    );
    println!(
        "full residual 3D:    {} params; 3D block subtotal {} vs {}",
        heavy_blocks.total_params,
        heavy_blocks.params_matching("/3d/ddr"),
        desk.params_matching("/3d/ddr")
    );
    Ok(())
}
