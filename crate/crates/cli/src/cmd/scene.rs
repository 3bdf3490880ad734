use std::path::PathBuf;

use clap::Args;
use rm3d_core::scene::{
    generate_scene, place_transmitters, SceneParams, DEFAULT_FREQUENCY_HZ, DEFAULT_MAX_BUILDING_HEIGHT,
    DEFAULT_MIN_BUILDING_HEIGHT, DEFAULT_TX_HEIGHT, DEFAULT_TX_POWER_DBM,
};

use super::{create_dir, tx_text, write_file, RUN_CONFIG, TX_FILE};
use crate::Failure;

#[derive(Debug, Args)]
pub struct SceneArgs {
    /// Output scene directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 256)]
    pub nx: usize,
    #[arg(long, default_value_t = 256)]
    pub ny: usize,
    #[arg(long, default_value_t = 20)]
    pub nz: usize,
    /// Meters per voxel.
    #[arg(long, default_value_t = 1.0)]
    pub resolution: f64,
    /// Exact building count; overrides --buildings-min/--buildings-max.
    #[arg(long)]
    pub buildings: Option<usize>,
    #[arg(long = "buildings-min", default_value_t = 20)]
    pub buildings_min: usize,
    #[arg(long = "buildings-max", default_value_t = 40)]
    pub buildings_max: usize,
    /// Footprint side range, meters.
    #[arg(long = "footprint-min", default_value_t = 10.0)]
    pub footprint_min: f64,
    #[arg(long = "footprint-max", default_value_t = 40.0)]
    pub footprint_max: f64,
    /// Minimum gap between footprints, meters.
    #[arg(long = "street-margin", default_value_t = 4.0)]
    pub street_margin: f64,
    #[arg(long = "height-min", default_value_t = DEFAULT_MIN_BUILDING_HEIGHT)]
    pub height_min: f64,
    #[arg(long = "height-max", default_value_t = DEFAULT_MAX_BUILDING_HEIGHT)]
    pub height_max: f64,
    /// Number of transmitters.
    #[arg(long, default_value_t = 1)]
    pub tx: usize,
    /// Seed for transmitter placement (default: --seed).
    #[arg(long = "tx-seed")]
    pub tx_seed: Option<u64>,
    #[arg(long = "tx-height", default_value_t = DEFAULT_TX_HEIGHT)]
    pub tx_height: f64,
    /// dBm/Hz.
    #[arg(long, default_value_t = DEFAULT_TX_POWER_DBM)]
    pub power: f64,
    /// Hz.
    #[arg(long, default_value_t = DEFAULT_FREQUENCY_HZ)]
    pub frequency: f64,
}

pub fn run(a: &SceneArgs, config: &str) -> Result<(), Failure> {
    let params = SceneParams {
        seed: a.seed,
        nx: a.nx,
        ny: a.ny,
        nz: a.nz,
        resolution: a.resolution,
        building_count: a.buildings.map_or((a.buildings_min, a.buildings_max), |n| (n, n)),
        footprint: (a.footprint_min, a.footprint_max),
        street_margin: a.street_margin,
        height_range: (a.height_min, a.height_max),
    };
    if !(a.frequency > 0.0) {
        return Err(Failure::validation("--frequency must be positive"));
    }
    let scene = generate_scene(&params)?;
    let mut txs = place_transmitters(&scene, a.tx, a.tx_seed.unwrap_or(a.seed), a.tx_height)?;
    for t in &mut txs {
        t.power = a.power;
        t.frequency = a.frequency;
    }
    create_dir(&a.out)?;
    scene.save(&a.out)?;
    write_file(&a.out.join(TX_FILE), &tx_text(&txs))?;
    write_file(&a.out.join(RUN_CONFIG), config)?;
    let built = scene.height_map().iter().filter(|&&h| h > 0.0).count();
    println!("scene {}x{}x{}: {built} building cells, {} transmitters -> {}", a.nx, a.ny, a.nz, txs.len(), a.out.display());
    Ok(())
}
