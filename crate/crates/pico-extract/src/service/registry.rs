//! Checkpoint registry: one entry per slot (`pico`, `dner`, `graph`) naming
//! the active checkpoint file and its content hash. Persisted as
//! `registry.json` in the data directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use pico_core::dner::DnerModel;
use pico_core::pico::PicoModel;

use crate::checkpoint::{self, Model};
use crate::error::{read_to_string, write_file, Error, Result};

pub const SLOTS: [&str; 3] = ["pico", "dner", "graph"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotEntry {
    pub path: PathBuf,
    pub version: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registry {
    pub slots: BTreeMap<String, SlotEntry>,
}

/// Models used together for one analysis, swapped as a unit.
pub struct ModelSnapshot {
    pub pico: Arc<PicoModel>,
    pub dner: Arc<DnerModel>,
    pub pico_version: String,
    pub dner_version: String,
    pub graph_version: Option<String>,
}

impl Registry {
    fn path(dir: &Path) -> PathBuf {
        dir.join("registry.json")
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = Self::path(dir);
        if !path.exists() {
            return Ok(Registry::default());
        }
        Ok(serde_json::from_str(&read_to_string(&path)?)?)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = Self::path(dir);
        let tmp = path.with_extension("tmp");
        write_file(&tmp, serde_json::to_string_pretty(self)? + "\n")?;
        std::fs::rename(&tmp, &path).map_err(|source| Error::Io { path, source })
    }

    pub fn version(&self, slot: &str) -> Option<&str> {
        self.slots.get(slot).map(|e| e.version.as_str())
    }

    /// Loads `path`, checks it holds a model for `slot`, and activates it.
    pub fn register(&mut self, slot: &str, path: &Path) -> Result<Model> {
        let (model, version) = checkpoint::load(path)?;
        if model.kind() != slot {
            return Err(Error::Checkpoint(format!(
                "{}: slot `{slot}` needs a {slot} checkpoint, found {}",
                path.display(),
                model.kind()
            )));
        }
        self.slots.insert(
            slot.to_string(),
            SlotEntry {
                path: path.to_path_buf(),
                version,
            },
        );
        Ok(model)
    }

    /// Loads the pico and dner slots; `None` when either is unset. A stale
    /// hash (file changed behind the registry's back) is an error.
    pub fn snapshot(&self) -> Result<Option<ModelSnapshot>> {
        let (Some(p), Some(d)) = (self.slots.get("pico"), self.slots.get("dner")) else {
            return Ok(None);
        };
        let (pico, pv) = checkpoint::load_pico(&p.path)?;
        let (dner, dv) = checkpoint::load_dner(&d.path)?;
        for (entry, actual) in [(p, &pv), (d, &dv)] {
            if &entry.version != actual {
                return Err(Error::Checkpoint(format!("{} changed since it was registered", entry.path.display())));
            }
        }
        Ok(Some(ModelSnapshot {
            pico: Arc::new(pico),
            dner: Arc::new(dner),
            pico_version: pv,
            dner_version: dv,
            graph_version: self.version("graph").map(str::to_string),
        }))
    }
}
