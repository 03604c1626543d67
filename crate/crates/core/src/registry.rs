//! Modality registry: the fixed set of 21 sensing modalities that make up a
//! daily template, each classified as additive or intensity.
//!
//! Additive modalities are quantities accumulated over time (durations,
//! counts, distance); when an observation spans several hours its value is
//! divided equally across them. Intensity modalities are instantaneous
//! levels (acceleration magnitude, ambient light); a spanning observation's
//! value is copied to each hour.
//!
//! The registry can be loaded from a TOML file so deployments can rename
//! modalities, but the template geometry is fixed: exactly 21 modalities by
//! 24 hours.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Number of modalities in a daily template.
pub const N_MODALITIES: usize = 21;
/// Hours per daily template.
pub const N_HOURS: usize = 24;
/// Flattened template length.
pub const FLAT_LEN: usize = N_MODALITIES * N_HOURS;

/// Registry schema version accepted by [`ModalityRegistry::from_toml_str`].
pub const REGISTRY_SCHEMA_VERSION: u32 = 1;

/// How hourly values are derived from observations of a modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModalityKind {
    /// Accumulated quantity; spanning observations are split across hours.
    Additive,
    /// Level reading; spanning observations are copied to each hour.
    Intensity,
}

/// One registered modality.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Modality {
    pub name: String,
    pub kind: ModalityKind,
}

/// Ordered set of the 21 modalities. Row order of every template follows
/// registry order.
///
/// Serializes as a plain modality list; deserialization re-validates and
/// rebuilds the name index.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "Vec<Modality>", into = "Vec<Modality>")]
pub struct ModalityRegistry {
    modalities: Vec<Modality>,
    index: BTreeMap<String, usize>,
}

impl PartialEq for ModalityRegistry {
    fn eq(&self, other: &Self) -> bool {
        self.modalities == other.modalities
    }
}

impl Eq for ModalityRegistry {}

impl TryFrom<Vec<Modality>> for ModalityRegistry {
    type Error = Error;
    fn try_from(modalities: Vec<Modality>) -> Result<Self> {
        Self::new(modalities)
    }
}

impl From<ModalityRegistry> for Vec<Modality> {
    fn from(reg: ModalityRegistry) -> Self {
        reg.modalities
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RegistryFile {
    schema_version: u32,
    modality: Vec<Modality>,
}

impl ModalityRegistry {
    /// Builds a registry from an explicit modality list.
    pub fn new(modalities: Vec<Modality>) -> Result<Self> {
        if modalities.len() != N_MODALITIES {
            return Err(Error::Registry(format!(
                "expected {} modalities, got {}",
                N_MODALITIES,
                modalities.len()
            )));
        }
        let mut index = BTreeMap::new();
        for (i, m) in modalities.iter().enumerate() {
            if m.name.is_empty() {
                return Err(Error::Registry("empty modality name".into()));
            }
            if index.insert(m.name.clone(), i).is_some() {
                return Err(Error::Registry(format!("duplicate modality {:?}", m.name)));
            }
        }
        Ok(Self { modalities, index })
    }

    /// The built-in default registry.
    pub fn default_registry() -> Self {
        use ModalityKind::*;
        let spec: &[(&str, ModalityKind)] = &[
            ("acceleration", Intensity),
            ("ambient_light", Intensity),
            ("ambient_sound", Intensity),
            ("conversation_duration", Additive),
            ("distance_traveled", Additive),
            ("sleep_duration", Additive),
            ("screen_unlock_duration", Additive),
            ("call_in_count", Additive),
            ("call_out_count", Additive),
            ("call_missed_count", Additive),
            ("call_duration", Additive),
            ("sms_in_count", Additive),
            ("sms_out_count", Additive),
            ("app_usage_social", Additive),
            ("app_usage_communication", Additive),
            ("app_usage_entertainment", Additive),
            ("app_usage_productivity", Additive),
            ("app_usage_games", Additive),
            ("app_usage_tools", Additive),
            ("app_usage_browser", Additive),
            ("app_usage_other", Additive),
        ];
        let modalities = spec
            .iter()
            .map(|&(name, kind)| Modality { name: name.into(), kind })
            .collect();
        Self::new(modalities).expect("built-in registry is valid")
    }

    /// Parses a registry from TOML text.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: RegistryFile = toml::from_str(text)?;
        if file.schema_version != REGISTRY_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: file.schema_version,
                supported: REGISTRY_SCHEMA_VERSION,
            });
        }
        Self::new(file.modality)
    }

    /// Loads a registry from a TOML file.
    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Serializes the registry to TOML (the same shape [`load`] accepts).
    ///
    /// [`load`]: ModalityRegistry::load
    pub fn to_toml_string(&self) -> String {
        let mut out = format!("schema_version = {REGISTRY_SCHEMA_VERSION}\n");
        for m in &self.modalities {
            let kind = match m.kind {
                ModalityKind::Additive => "additive",
                ModalityKind::Intensity => "intensity",
            };
            out.push_str(&format!(
                "\n[[modality]]\nname = {:?}\nkind = {:?}\n",
                m.name, kind
            ));
        }
        out
    }

    pub fn modalities(&self) -> &[Modality] {
        &self.modalities
    }

    /// Row index for a modality name.
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.modalities[idx].name
    }

    pub fn kind(&self, idx: usize) -> ModalityKind {
        self.modalities[idx].kind
    }
}

impl Default for ModalityRegistry {
    fn default() -> Self {
        Self::default_registry()
    }
}
