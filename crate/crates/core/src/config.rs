//! Run configuration: model, training, augmentation and paths merged from a
//! TOML file of dotted keys (`model.num_states = 7`, `train.lr_peak = 6e-5`)
//! and `key=value` overrides, which win.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::data::AugmentationPolicy;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::scalar::DType;
use crate::train::TrainConfig;

/// File the effective configuration is echoed to inside an output directory.
pub const EFFECTIVE_CONFIG: &str = "effective_config.toml";

/// Short names accepted in place of the full keys.
const ALIASES: [(&str, &str); 4] = [
    ("model.k", "model.num_states"),
    ("model.n", "model.num_layers"),
    ("model.width", "model.base_width"),
    ("model.heads_per_layer", "model.heads"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Dataset root (`ir/` + `vi/`) or manifest CSV.
    pub data: PathBuf,
    pub out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data"),
            out: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dtype: DType,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub augment: AugmentationPolicy,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dtype: DType::F32,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            augment: AugmentationPolicy::default(),
            paths: Paths::default(),
        }
    }
}

fn flatten(prefix: &str, table: &Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

fn canonical(key: &str) -> &str {
    ALIASES.iter().find(|(a, _)| *a == key).map_or(key, |(_, full)| full)
}

fn slot<'a>(root: &'a mut Table, key: &str) -> Option<&'a mut Value> {
    let mut parts = key.split('.');
    let mut cur = root.get_mut(parts.next()?)?;
    for p in parts {
        cur = cur.as_table_mut()?.get_mut(p)?;
    }
    Some(cur)
}

fn type_name(v: &Value) -> &'static str {
    v.type_str()
}

/// Assigns `value` over the default at `key`, coercing integers to floats
/// where a float is expected.
fn assign(root: &mut Table, key: &str, value: Value, errs: &mut Vec<String>) {
    let Some(target) = slot(root, key) else {
        errs.push(format!("unknown key `{key}`"));
        return;
    };
    if target.is_table() {
        errs.push(format!("`{key}` is a section, not a value"));
        return;
    }
    let value = match (&*target, value) {
        (Value::Float(_), Value::Integer(i)) => Value::Float(i as f64),
        (t, v) if std::mem::discriminant(t) == std::mem::discriminant(&v) => v,
        (t, v) => {
            errs.push(format!("`{key}` expects {}, got {}", type_name(t), type_name(&v)));
            return;
        }
    };
    *target = value;
}

/// Parses `key=value`; the value is read as a TOML literal, falling back to a
/// bare string (so `train.loss_mode=full` works without quotes).
pub fn parse_override(s: &str) -> Result<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override `{s}` is not of the form key=value")))?;
    let v = v.trim();
    let value = format!("v = {v}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

impl RunConfig {
    /// Defaults, then the file (if any), then overrides in order. Every
    /// problem is collected before returning.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, Value)]) -> Result<Self> {
        let mut entries = Vec::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let table: Table = text
                .parse()
                .map_err(|e: toml::de::Error| Error::config(format!("{}: {}", path.display(), e.message())))?;
            flatten("", &table, &mut entries);
        }
        entries.extend(overrides.iter().cloned());
        Self::from_entries(entries)
    }

    pub fn from_entries(entries: Vec<(String, Value)>) -> Result<Self> {
        let mut root = Table::try_from(RunConfig::default()).expect("defaults serialise");
        let mut errs = Vec::new();
        let mut schedule_given = false;
        let mut shape_given = false;
        for (key, value) in entries {
            let key = canonical(&key).to_string();
            schedule_given |= key == "model.channel_schedule";
            shape_given |= key == "model.num_layers" || key == "model.base_width";
            assign(&mut root, &key, value, &mut errs);
        }
        let mut cfg: RunConfig = match root.try_into() {
            Ok(c) => c,
            Err(e) => {
                let e: toml::de::Error = e;
                errs.push(e.message().trim().to_string());
                return Err(Error::Config(errs));
            }
        };
        if shape_given && !schedule_given {
            let m = &cfg.model;
            cfg.model.channel_schedule = (0..=m.num_layers).map(|l| m.base_width << l.min(16)).collect();
        }
        if let Err(Error::Config(more)) = cfg.validate() {
            errs.extend(more);
        }
        if errs.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Checks every section and reports all violations together.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        for r in [self.model.validate(), self.train.validate(), self.augment.validate()] {
            match r {
                Err(Error::Config(e)) => errs.extend(e),
                Err(e) => errs.push(e.to_string()),
                Ok(()) => {}
            }
        }
        if self.augment.crop_size % self.model.stride() != 0 {
            errs.push(format!(
                "augment.crop_size ({}) must be a multiple of 2^model.num_layers ({})",
                self.augment.crop_size,
                self.model.stride()
            ));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Flat `key = value` lines, readable back by [`RunConfig::resolve`].
    pub fn to_toml(&self) -> String {
        let root = Table::try_from(self).expect("config serialises");
        let mut entries = Vec::new();
        flatten("", &root, &mut entries);
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        let mut s = String::new();
        for (k, v) in entries {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    pub fn write_effective(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(EFFECTIVE_CONFIG);
        std::fs::write(&path, self.to_toml()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
