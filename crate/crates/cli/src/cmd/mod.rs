pub mod dataset;
pub mod diffuse;
pub mod eval;
pub mod mask;
pub mod scene;

use std::fmt::Write as _;
use std::path::Path;

use rm3d_core::scene::{Antenna, TxConfig};

use crate::Failure;

pub const RUN_CONFIG: &str = "run_config.txt";
pub const TX_FILE: &str = "tx.txt";

pub fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::validation(format!("{}: {e}", path.display())))
}

pub fn create_dir(path: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(path).map_err(|e| Failure::validation(format!("{}: {e}", path.display())))
}

/// `# x_m y_m z_m power_dbm frequency_hz` header, then one transmitter per line.
pub fn tx_text(txs: &[TxConfig]) -> String {
    let mut out = String::from("# x_m y_m z_m power_dbm frequency_hz\n");
    for t in txs {
        let [x, y, z] = t.position;
        writeln!(out, "{x:?} {y:?} {z:?} {:?} {:?}", t.power, t.frequency).unwrap();
    }
    out
}

pub fn parse_tx(text: &str, path: &Path) -> Result<Vec<TxConfig>, Failure> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| Failure::validation(format!("{}:{}: non-numeric field", path.display(), n + 1)))?;
        let [x, y, z, power, frequency] = vals[..] else {
            return Err(Failure::validation(format!("{}:{}: expected 5 fields", path.display(), n + 1)));
        };
        out.push(TxConfig { position: [x, y, z], power, frequency, antenna: Antenna::Isotropic });
    }
    Ok(out)
}

pub fn load_tx(scene_dir: &Path) -> Result<Vec<TxConfig>, Failure> {
    let path = scene_dir.join(TX_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Failure::validation(format!("{}: {e}", path.display())))?;
    parse_tx(&text, &path)
}
