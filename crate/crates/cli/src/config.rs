use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use plansim_core::costdb::{load_profile, ProfileTables};
use plansim_core::{CostDatabase, CostOptions, GraphScope, HardwareSpec};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const PROFILE_DIR_ENV: &str = "PLANSIM_PROFILE_DIR";

/// A bad input file or setting. Maps to exit code 2.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

/// 2 for input problems, 3 for failures during simulation.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    use plansim_core::Error as E;
    for cause in err.chain() {
        if cause.is::<Invalid>() || cause.is::<plansim_core::PlanError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::InvalidModel(_)
                | E::InvalidHardware(_)
                | E::InvalidPlan(_)
                | E::ProfileParse { .. }
                | E::ProfileInvalid(_)
                | E::Trace { .. }
                | E::Config(_)
                | E::Json(_) => 2,
                _ => 3,
            };
        }
    }
    3
}

/// Either a path to a JSON file or the value written inline.
#[derive(Debug, Clone)]
pub enum Source<T> {
    Path(PathBuf),
    Inline(T),
}

impl<'de, T: DeserializeOwned> Deserialize<'de> for Source<T> {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        match serde_json::Value::deserialize(de)? {
            serde_json::Value::String(p) => Ok(Source::Path(p.into())),
            // Re-raised so the inline value's own field errors survive.
            v => T::deserialize(v)
                .map(Source::Inline)
                .map_err(serde::de::Error::custom),
        }
    }
}

impl<T: DeserializeOwned> Source<T> {
    pub fn resolve(self, base: &Path, what: &str) -> Result<T> {
        match self {
            Source::Inline(v) => Ok(v),
            Source::Path(p) => read_json(&base.join(p), what),
        }
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| invalid(format!("{what} {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{what} {}: {e}", path.display())))
}

/// Reads a config file and returns it with the directory relative paths
/// inside it are resolved against.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<(T, PathBuf)> {
    let cfg = read_json(path, "config")?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((cfg, base))
}

/// Cost-model settings shared by every command that runs the simulator.
#[derive(Debug, Clone, Default)]
pub struct CostSection {
    /// Profile files; relative names are looked up next to the config, then
    /// in the profile directory.
    pub profiles: Vec<PathBuf>,
    pub cost: CostOptions,
    pub scope: GraphScope,
}

#[derive(Debug, Clone, Serialize)]
pub struct CostSummary {
    pub profile_files: Vec<String>,
    pub profiled_ops: usize,
    pub profiled_collectives: usize,
}

fn find_profile(name: &Path, base: &Path, profile_dir: Option<&Path>) -> Result<PathBuf> {
    if name.is_absolute() {
        return Ok(name.to_path_buf());
    }
    let local = base.join(name);
    if local.exists() {
        return Ok(local);
    }
    if let Some(dir) = profile_dir {
        let candidate = dir.join(name);
        if candidate.exists() {
            return Ok(candidate);
        }
    }
    Err(invalid(format!(
        "profile {} not found next to the config{}",
        name.display(),
        match profile_dir {
            Some(d) => format!(" or in {}", d.display()),
            None => format!(" ({PROFILE_DIR_ENV} unset)"),
        }
    )))
}

pub fn profile_dir(flag: Option<&Path>) -> Option<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(PROFILE_DIR_ENV).map(PathBuf::from))
}

impl CostSection {
    /// Loads and merges every profile (plus the hardware's intra-node table)
    /// into a cost database.
    pub fn database(
        &self,
        hw: &HardwareSpec,
        base: &Path,
        dir: Option<&Path>,
    ) -> Result<(CostDatabase, CostSummary)> {
        let mut names: Vec<PathBuf> = self.profiles.clone();
        if let Some(p) = &hw.intra_node_profile {
            names.push(PathBuf::from(p));
        }
        let mut tables = ProfileTables::default();
        let mut files = Vec::new();
        for name in &names {
            let path = find_profile(name, base, dir)?;
            let part = load_profile(&path)
                .with_context(|| format!("cost database: loading {}", path.display()))?;
            tables
                .merge(part)
                .with_context(|| format!("cost database: merging {}", path.display()))?;
            files.push(path.display().to_string());
        }
        let summary = CostSummary {
            profile_files: files,
            profiled_ops: tables.ops.len(),
            profiled_collectives: tables.collectives.len(),
        };
        let db =
            CostDatabase::new(tables, hw.clone(), self.cost.clone()).context("cost database")?;
        Ok((db, summary))
    }
}

pub fn hardware(src: Option<Source<HardwareSpec>>, base: &Path) -> Result<HardwareSpec> {
    let hw = match src {
        Some(s) => s.resolve(base, "hardware")?,
        None => HardwareSpec::a100_cluster(),
    };
    hw.validate().context("config")?;
    Ok(hw)
}

/// Writes all outputs at once, after the command has succeeded.
#[derive(Default)]
pub struct Outputs(Vec<(PathBuf, Vec<u8>)>);

impl Outputs {
    pub fn add(&mut self, path: Option<&Path>, bytes: impl Into<Vec<u8>>) {
        if let Some(p) = path {
            self.0.push((p.to_path_buf(), bytes.into()));
        }
    }

    pub fn commit(self) -> Result<()> {
        for (path, bytes) in self.0 {
            std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(())
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}
