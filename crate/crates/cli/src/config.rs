//! Flat `key=value` run configs. Keys are the long flag names of the chosen
//! subcommand (plus `threads`); values given on the command line win.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::Path;

use clap::parser::ValueSource;
use clap::{ArgAction, ArgMatches, Command};

use crate::Failure;

const RESERVED: [&str; 4] = ["help", "version", "config", "print-config"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    pub entries: Vec<(String, String)>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut entries = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected key=value", n + 1))?;
            let k = k.trim().to_string();
            if entries.iter().any(|(e, _): &(String, String)| *e == k) {
                return Err(format!("line {}: duplicate key {k}", n + 1));
            }
            entries.push((k, v.trim().to_string()));
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

fn long_args(cmd: &Command) -> impl Iterator<Item = &clap::Arg> {
    cmd.get_arguments().filter(|a| a.get_long().is_some_and(|l| !RESERVED.contains(&l)))
}

fn from_command_line(m: &ArgMatches, id: &str) -> bool {
    matches!(m.try_get_raw(id), Ok(Some(_))) && m.value_source(id) == Some(ValueSource::CommandLine)
}

/// Parses `args`, folding in the `--config` file if one is named.
pub fn resolve(root: Command, mut args: Vec<OsString>) -> Result<ArgMatches, Failure> {
    let lenient = root.clone().mut_subcommands(|s| s.mut_args(|a| a.required(false)));
    let matches = lenient.try_get_matches_from(&args).unwrap_or_else(|e| e.exit());
    let Some(path) = matches.get_one::<std::path::PathBuf>("config").cloned() else {
        return Ok(root.try_get_matches_from(&args).unwrap_or_else(|e| e.exit()));
    };
    let (name, sub_m) = matches.subcommand().expect("subcommand required");
    let sub = root.find_subcommand(name).expect("known subcommand");
    let cfg = RunConfig::load(&path).map_err(Failure::validation)?;
    for (key, value) in &cfg.entries {
        let (arg, m) = match long_args(sub).find(|a| a.get_long() == Some(key)) {
            Some(a) => (a, sub_m),
            None => match long_args(&root).find(|a| a.get_long() == Some(key)) {
                Some(a) => (a, &matches),
                None => {
                    return Err(Failure::validation(format!("{}: unknown key {key:?} for `{name}`", path.display())))
                }
            },
        };
        let id = arg.get_id().as_str();
        if from_command_line(m, id) || from_command_line(sub_m, id) {
            continue;
        }
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match value.as_str() {
                "true" => args.push(format!("--{key}").into()),
                "false" => {}
                _ => return Err(Failure::validation(format!("{key}: expected true or false, got {value:?}"))),
            }
        } else {
            args.push(format!("--{key}={value}").into());
        }
    }
    Ok(root.try_get_matches_from(&args).unwrap_or_else(|e| e.exit()))
}

/// Effective configuration of the chosen subcommand as `key=value` lines.
pub fn render(root: &Command, matches: &ArgMatches) -> String {
    let (name, sub_m) = matches.subcommand().expect("subcommand required");
    let sub = root.find_subcommand(name).expect("known subcommand");
    let mut out = format!("# rm3d {name}\n");
    let mut emit = |cmd: &Command, m: &ArgMatches| {
        for arg in long_args(cmd) {
            let (id, key) = (arg.get_id().as_str(), arg.get_long().unwrap());
            if matches!(arg.get_action(), ArgAction::SetTrue) {
                writeln!(out, "{key}={}", m.get_flag(id)).unwrap();
            } else if let Ok(Some(vals)) = m.try_get_raw(id) {
                let vals: Vec<String> = vals.map(|v| v.to_string_lossy().into_owned()).collect();
                writeln!(out, "{key}={}", vals.join(",")).unwrap();
            }
        }
    };
    emit(sub, sub_m);
    emit(root, matches);
    out
}
