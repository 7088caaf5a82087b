//! Overfits the desk preset on a handful of synthetic rooms.
//!
//! cargo run --release --example train_desk -- [epochs] [scenes]

use std::time::Instant;

use ddrnet::model::NetworkConfig;
use ddrnet::sceneio::{generate_scene, GenConfig};
use ddrnet::train::{evaluate, TrainConfig, Trainer};

fn main() -> ddrnet::Result<()> {
    let mut args = std::env::args()
        .skip(1)
        .map(|a| a.parse::<usize>().expect("numeric argument"));
    let epochs = args.next().unwrap_or(60);
    let scenes = args.next().unwrap_or(4);
    let samples = (0..scenes as u64)
        .map(|s| generate_scene(s, &GenConfig::default()))
        .collect::<ddrnet::Result<Vec<_>>>()?;
    let out = std::env::temp_dir().join("ddrnet-train-desk");
    let cfg = NetworkConfig::desk();
    let mut trainer = Trainer::new(&cfg, TrainConfig::default(), &out)?;
    println!(
        "{} parameters, {} scenes, logs in {}",
        trainer.net.num_params(),
        scenes,
        out.display()
    );
    let start = Instant::now();
    let step = 10.min(epochs).max(1);
    for target in (step..=epochs)
        .step_by(step)
        .chain((epochs % step != 0).then_some(epochs))
    {
        trainer.cfg.epochs = target;
        trainer.train(&samples)?;
        let r = evaluate(&mut trainer.net, &samples)?;
        let s = &trainer.state;
        println!(
            "epoch {:4}  loss {:.5}  lr {:e}  w_empty {:.2}  SC IoU {:.3}  SSC avg {:.3}  {:.0}s",
            s.epoch,
            s.losses.last().copied().unwrap_or(f64::NAN),
            s.lr,
            s.w_empty,
            r.sc.iou,
            r.average,
            start.elapsed().as_secs_f64()
        );
    }
    println!("{}", evaluate(&mut trainer.net, &samples)?.to_table());
    Ok(())
}
