//! Run configuration files, command-line overrides, ablation variants and
//! the per-run manifest.
//!
//! A config file is the TOML form of [`TrainConfig`]; every field is
//! required and unknown keys are rejected. `taylornet train --dump-config`
//! prints a complete example. Flags override file values, and the resolved
//! config is what the manifest records.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::seqfile::atomic_write;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::{TeacherSchedule, TrainConfig};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "TAYLORNET_OUT";

pub fn load_train_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_train_config(&text)
}

pub fn parse_train_config(text: &str) -> Result<TrainConfig> {
    let cfg: TrainConfig =
        toml::from_str(text).map_err(|e| Error::format("config file", e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn train_config_to_toml(cfg: &TrainConfig) -> Result<String> {
    toml::to_string_pretty(cfg).map_err(|e| Error::format("config file", e.to_string()))
}

/// Model variants compared by the ablation harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Full,
    NoMcu,
    TaylorCellOnly,
    ResidualOnly,
    /// Full model with Taylor order ξ.
    Order(usize),
}

impl Variant {
    pub fn name(&self) -> String {
        match self {
            Variant::Full => "full".into(),
            Variant::NoMcu => "no_mcu".into(),
            Variant::TaylorCellOnly => "taylorcell_only".into(),
            Variant::ResidualOnly => "residual_only".into(),
            Variant::Order(n) => format!("order{}", n),
        }
    }

    pub fn apply(&self, model: &mut ModelConfig) -> Result<()> {
        match *self {
            Variant::Full => {}
            Variant::NoMcu => model.mcu_enabled = false,
            Variant::TaylorCellOnly => model.residual_branch_enabled = false,
            Variant::ResidualOnly => model.taylor_branch_enabled = false,
            Variant::Order(n) => model.order = n,
        }
        model.validate()
    }

    /// Parse a comma-separated list, e.g. `full,no_mcu,order1`.
    pub fn parse_list(s: &str) -> Result<Vec<Variant>> {
        let mut out: Vec<Variant> = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let v: Variant = part.parse()?;
            if !out.contains(&v) {
                out.push(v);
            }
        }
        if out.is_empty() {
            return Err(Error::invalid("empty variant list"));
        }
        Ok(out)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let v = match s {
            "full" => Variant::Full,
            "no_mcu" => Variant::NoMcu,
            "taylorcell_only" => Variant::TaylorCellOnly,
            "residual_only" => Variant::ResidualOnly,
            other => {
                let n = other
                    .strip_prefix("order")
                    .and_then(|n| n.parse::<usize>().ok())
                    .filter(|n| (1..=6).contains(n));
                match n {
                    Some(n) => Variant::Order(n),
                    None => {
                        return Err(Error::invalid(format!(
                            "unknown variant `{}` (expected full, no_mcu, taylorcell_only, residual_only or order1..order6)",
                            other
                        )))
                    }
                }
            }
        };
        Ok(v)
    }
}

/// Flag values that replace fields of a loaded config.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub epoch_size: Option<usize>,
    pub lambda: Option<f64>,
    pub teacher_p: Option<f64>,
    pub seed: Option<u64>,
    pub checkpoint_every: Option<usize>,
    pub variant: Option<Variant>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut TrainConfig) -> Result<()> {
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.epoch_size {
            cfg.epoch_size = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(p) = self.teacher_p {
            cfg.teacher = TeacherSchedule::Constant { p };
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.checkpoint_every {
            cfg.checkpoint_every = v;
        }
        if let Some(v) = self.variant {
            v.apply(&mut cfg.model)?;
        }
        cfg.validate()
    }
}

/// Provenance record written as `manifest.toml` by every command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub args: Vec<String>,
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub git_rev: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    /// Free-form resolved settings (paths, horizons, ids).
    #[serde(default)]
    pub settings: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<TrainConfig>,
}

impl Manifest {
    pub fn new(command: &str, args: Vec<String>) -> Self {
        Self {
            command: command.into(),
            args,
            version: env!("CARGO_PKG_VERSION").into(),
            git_rev: git_rev(),
            seed: None,
            variant: None,
            settings: BTreeMap::new(),
            config: None,
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.settings.insert(key.into(), value.to_string());
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let text = toml::to_string_pretty(self).map_err(|e| Error::format("manifest", e.to_string()))?;
        let path = dir.join("manifest.toml");
        atomic_write(&path, text.as_bytes())?;
        Ok(path)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.toml");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        toml::from_str(&text).map_err(|e| Error::format("manifest", e.to_string()))
    }
}

/// Commit of the working directory's repository, when `git` can tell.
fn git_rev() -> Option<String> {
    let out = std::process::Command::new("git")
        .args(["rev-parse", "--short=12", "HEAD"])
        .stderr(std::process::Stdio::null())
        .output()
        .ok()?;
    if !out.status.success() {
        return None;
    }
    let rev = String::from_utf8(out.stdout).ok()?.trim().to_string();
    (!rev.is_empty()).then_some(rev)
}

/// `explicit`, else `$TAYLORNET_OUT/<default_name>`, else `runs/<default_name>`.
pub fn resolve_out_dir(explicit: Option<&Path>, default_name: &str) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => {
            let root = std::env::var_os(OUT_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("runs"));
            root.join(default_name)
        }
    }
}

/// Create `dir`, refusing to reuse a non-empty directory unless `force`.
pub fn prepare_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        if !dir.is_dir() {
            return Err(Error::invalid(format!("{} exists and is not a directory", dir.display())));
        }
        let mut entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        if entries.next().is_some() && !force {
            return Err(Error::invalid(format!(
                "output directory {} is not empty (pass --force to write into it)",
                dir.display()
            )));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_of_every_preset() {
        for cfg in [TrainConfig::tiny(), TrainConfig::full(), TrainConfig::overfit()] {
            let text = train_config_to_toml(&cfg).unwrap();
            assert_eq!(parse_train_config(&text).unwrap(), cfg);
        }
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let text = train_config_to_toml(&TrainConfig::tiny()).unwrap();
        assert!(parse_train_config(&format!("bogus = 1\n{}", text)).is_err());
        let neg = text.replace("lr = 0.001", "lr = -1.0");
        assert_ne!(neg, text);
        assert!(parse_train_config(&neg).is_err());
    }

    #[test]
    fn variants_parse_and_apply() {
        let vs = Variant::parse_list("full, no_mcu,order2,order2,taylorcell_only").unwrap();
        assert_eq!(vs, vec![Variant::Full, Variant::NoMcu, Variant::Order(2), Variant::TaylorCellOnly]);
        for v in &vs {
            assert_eq!(&v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("order0".parse::<Variant>().is_err());
        assert!("order7".parse::<Variant>().is_err());
        assert!("fancy".parse::<Variant>().is_err());
        let mut m = ModelConfig::tiny();
        Variant::TaylorCellOnly.apply(&mut m).unwrap();
        assert!(!m.residual_branch_enabled && m.taylor_branch_enabled);
        let mut m = ModelConfig::tiny();
        Variant::Order(4).apply(&mut m).unwrap();
        assert_eq!(m.order, 4);
    }

    #[test]
    fn overrides_replace_and_validate() {
        let mut cfg = TrainConfig::tiny();
        let o = Overrides {
            lr: Some(0.01),
            seed: Some(7),
            teacher_p: Some(1.0),
            variant: Some(Variant::NoMcu),
            ..Default::default()
        };
        o.apply(&mut cfg).unwrap();
        assert_eq!(cfg.lr, 0.01);
        assert_eq!(cfg.seed, 7);
        assert!(!cfg.model.mcu_enabled);
        let bad = Overrides {
            lr: Some(-1.0),
            ..Default::default()
        };
        assert!(bad.apply(&mut TrainConfig::tiny()).is_err());
    }

    #[test]
    fn out_dir_guard() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("run");
        prepare_out_dir(&target, false).unwrap();
        std::fs::write(target.join("x"), b"1").unwrap();
        assert!(prepare_out_dir(&target, false).is_err());
        prepare_out_dir(&target, true).unwrap();
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Manifest::new("train", vec!["--seed".into(), "7".into()]);
        m.seed = Some(7);
        m.variant = Some("no_mcu".into());
        m.config = Some(TrainConfig::tiny());
        m.set("checkpoint", "model.tnck");
        m.write(dir.path()).unwrap();
        assert_eq!(Manifest::read(dir.path()).unwrap(), m);
    }
}
