//! Building DDR blocks directly: parameter counts, the zero-branch identity
//! and dilation leaving the count unchanged.
//!
//! cargo run --release --example ddr_blocks

use ddrnet::ddr::{DdrBasic, DdrBlockConfig, DdrBottleneck, Downsample, LwAspp};
use ddrnet::nn::{Activation, Module};
use ddrnet::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> ddrnet::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::from_vec(
        &[1, 16, 8, 8, 8],
        (0..16 * 512).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;

    for k in [3, 5, 7] {
        let cfg = DdrBlockConfig::new3d(16).with_kernel(k);
        let basic = DdrBasic::new("basic", cfg.clone(), &mut rng)?;
        let bottleneck = DdrBottleneck::new("bn", cfg, &mut rng)?;
        println!(
            "k={k}: basic {:>5} params (full {:>6}), bottleneck {:>4} params",
            basic.num_params(),
            16 * 16 * k * k * k,
            bottleneck.num_params()
        );
    }

    let mut dilated = DdrBottleneck::new("d", DdrBlockConfig::new3d(16).with_dilation(3), &mut rng)?;
    println!(
        "dilation 3 bottleneck: {} params, output {:?}",
        dilated.num_params(),
        dilated.forward(&x)?.shape()
    );

    let mut zero = DdrBottleneck::zeros("z", DdrBlockConfig::new3d(16))?;
    println!(
        "zero-initialized bottleneck is the identity: {}",
        zero.forward(&x)? == x
    );

    let mut down = Downsample::new("down", 3, 16, 32, true, Activation::Relu, &mut rng)?;
    println!("down-sample: {:?} -> {:?}", x.shape(), down.forward(&x)?.shape());

    let mut aspp = LwAspp::new("aspp", &DdrBlockConfig::new3d(16), &[1, 2, 3], 16, true, &mut rng)?;
    println!(
        "LW-ASPP rates 1,2,3: {} params, output {:?}",
        aspp.num_params(),
        aspp.forward(&x)?.shape()
    );
    Ok(())
}
