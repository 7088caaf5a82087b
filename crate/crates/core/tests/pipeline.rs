use ddrnet::model::{analyze, Network, NetworkConfig};
use ddrnet::nn::Checkpoint;
use ddrnet::projection::VoxelGridSpec;
use ddrnet::sceneio::{
    generate_scene, read_manifest, read_sample, write_manifest, write_sample, GenConfig, Manifest, ManifestEntry, Split,
};
use ddrnet::train::{evaluate, TrainConfig, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small() -> (NetworkConfig, GenConfig) {
    let net = NetworkConfig {
        image: [32, 32],
        grid: VoxelGridSpec::new([0.0; 3], 0.1, [16; 3]).unwrap(),
        aspp_rates: vec![1],
        ..NetworkConfig::desk()
    };
    let gen = GenConfig {
        image: net.image,
        grid: net.label_grid().unwrap(),
        objects: [1, 2],
        ..GenConfig::default()
    };
    (net, gen)
}

#[test]
fn dataset_round_trip_then_training_reduces_loss() {
    let (cfg, gen) = small();
    let root = tempfile::tempdir().unwrap();
    let mut manifest = Manifest::default();
    for seed in 0..2 {
        let dir = format!("s{seed}");
        write_sample(&root.path().join(&dir), &generate_scene(seed, &gen).unwrap()).unwrap();
        manifest.samples.push(ManifestEntry {
            dir,
            split: Split::Train,
            seed,
        });
    }
    write_manifest(root.path(), &manifest).unwrap();

    let manifest = read_manifest(root.path()).unwrap();
    let samples: Vec<_> = manifest
        .dirs(root.path(), Some(Split::Train))
        .iter()
        .map(|d| read_sample(d).unwrap())
        .collect();
    assert_eq!(samples[1], generate_scene(1, &gen).unwrap());

    let run = tempfile::tempdir().unwrap();
    let mut trainer = Trainer::new(
        &cfg,
        TrainConfig {
            epochs: 30,
            ..TrainConfig::default()
        },
        run.path(),
    )
    .unwrap();
    trainer.train(&samples).unwrap();
    let losses = &trainer.state.losses;
    assert_eq!(losses.len(), 30);
    assert!(losses[29] < 0.5 * losses[0], "{losses:?}");

    let trained = evaluate(&mut trainer.net, &samples).unwrap();
    let mut fresh = Network::new(&cfg, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
    fresh
        .load_checkpoint(&Checkpoint::load(&run.path().join("model.ckpt")).unwrap())
        .unwrap();
    assert_eq!(evaluate(&mut fresh, &samples).unwrap(), trained);
}

#[test]
fn presets_have_expected_scale() {
    let desk = analyze(&NetworkConfig::desk(), 1).unwrap();
    let paper = analyze(&NetworkConfig::paper_scale(), 1).unwrap();
    assert_eq!(desk.total_params, 18_284);
    assert!(
        (190_000..200_000).contains(&paper.total_params),
        "{}",
        paper.total_params
    );
    assert_eq!(paper.subtotal_params("rgb/2d/"), 192);
    let depth_only = analyze(&NetworkConfig::preset("depth-only").unwrap(), 1).unwrap();
    assert_eq!(
        desk.total_params - depth_only.total_params,
        desk.subtotal_params("rgb/")
    );
}
