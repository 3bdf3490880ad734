use std::path::PathBuf;

use clap::Args;
use rm3d_core::dataset::{
    export_sample, normalize, split_dataset, ChannelThresholds, DatasetManifest, ExportOptions, SampleId,
};
use rm3d_core::propagation::{write_ray_records, VolumeSolver};
use rm3d_core::{solve_volume, MaterialParams, VoxelScene};

use super::{create_dir, load_tx, write_file, RUN_CONFIG};
use crate::Failure;

pub const THRESHOLDS_FILE: &str = "thresholds.txt";
pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Scene directory written by `rm3d scene`.
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long = "tx-index", default_value_t = 0)]
    pub tx_index: usize,
    /// Output volume bundle (.rm3d).
    #[arg(long)]
    pub out: PathBuf,
    /// Store the normalized volume instead of native units.
    #[arg(long)]
    pub normalize: bool,
    /// Threshold file (default: built-in ranges).
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    /// dB per bend.
    #[arg(long = "diffraction-loss", default_value_t = 8.0)]
    pub diffraction_loss: f64,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub scene: PathBuf,
    /// Dataset root.
    #[arg(long)]
    pub out: PathBuf,
    /// Building-layout id used in file names.
    #[arg(long, default_value_t = 0)]
    pub bid: u64,
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    /// Train fraction; records are left unassigned when omitted.
    #[arg(long)]
    pub split: Option<f64>,
    /// Shuffle seed for --split.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Overwrite existing sample files.
    #[arg(long)]
    pub force: bool,
    /// Also write dominant-path polylines.
    #[arg(long)]
    pub rays: bool,
    #[arg(long = "diffraction-loss", default_value_t = 8.0)]
    pub diffraction_loss: f64,
}

fn thresholds(path: &Option<PathBuf>) -> Result<ChannelThresholds, Failure> {
    match path {
        Some(p) => Ok(ChannelThresholds::load(p)?),
        None => Ok(ChannelThresholds::default()),
    }
}

fn material(loss: f64) -> MaterialParams {
    MaterialParams { diffraction_loss_per_bend: loss, ..MaterialParams::default() }
}

pub fn solve(a: &SolveArgs) -> Result<(), Failure> {
    let scene = VoxelScene::load(&a.scene)?;
    let txs = load_tx(&a.scene)?;
    let tx = txs
        .get(a.tx_index)
        .ok_or_else(|| Failure::validation(format!("--tx-index {} but the scene has {} transmitters", a.tx_index, txs.len())))?;
    let mut volume = solve_volume(&scene, tx, &material(a.diffraction_loss))?;
    if a.normalize {
        volume = normalize(&volume, &thresholds(&a.thresholds)?)?;
    }
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    volume.save(&a.out)?;
    let reachable = volume.reachable().iter().filter(|&&r| r).count();
    println!("solved {} voxels ({reachable} reachable) -> {}", volume.voxel_count(), a.out.display());
    Ok(())
}

pub fn export(a: &ExportArgs, config: &str) -> Result<(), Failure> {
    let scene = VoxelScene::load(&a.scene)?;
    let txs = load_tx(&a.scene)?;
    if txs.is_empty() {
        return Err(Failure::validation(format!("{}: no transmitters", a.scene.display())));
    }
    let thr = thresholds(&a.thresholds)?;
    thr.validate()?;
    let mat = material(a.diffraction_loss);
    let manifest_path = a.out.join(MANIFEST_FILE);
    if manifest_path.exists() && !a.force {
        return Err(Failure::validation(format!("{} exists; pass --force to overwrite", manifest_path.display())));
    }
    create_dir(&a.out)?;

    let mut records = Vec::with_capacity(txs.len());
    for tx in &txs {
        let volume = normalize(&solve_volume(&scene, tx, &mat)?, &thr)?;
        let rays = if a.rays {
            let solver = VolumeSolver::new(&scene, *tx)?;
            Some((0..scene.nz()).map(|k| write_ray_records(&solver, k)).collect::<Vec<_>>())
        } else {
            None
        };
        let (x, y) = tx.cell_xy(&scene);
        let opts = ExportOptions { force: a.force, rays: rays.as_deref() };
        records.push(export_sample(&a.out, SampleId { bid: a.bid, x, y }, &volume, &opts)?);
    }
    let mut manifest = DatasetManifest::new(records);
    if let Some(ratio) = a.split {
        manifest = split_dataset(&manifest, ratio, a.seed)?;
    }
    thr.save(&a.out.join(THRESHOLDS_FILE))?;
    manifest.save(&manifest_path)?;
    write_file(&a.out.join(RUN_CONFIG), config)?;
    println!("exported {} samples -> {}", manifest.records.len(), a.out.display());
    Ok(())
}
