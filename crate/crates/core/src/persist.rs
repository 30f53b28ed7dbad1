//! JSON documents for trained models.
//!
//! Kernel model layout:
//! `{"schema_version":1,"d":2,"beta":1,"horizon":1,"centers":[[..],..],
//!   "provider":{"kind":"table"|"mlp","parameters":[..],"widths":[..]}}`.
//! `widths` is present for the network provider only. Numbers use `%.17g`
//! so a save/load round trip is exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::to_json_g17;
use crate::kernel::KernelModel;
use crate::points::Points;
use crate::precision::{MlpProvider, PrecisionProvider, ProviderKind, TableProvider};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    schema_version: u32,
    d: usize,
    beta: f64,
    horizon: f64,
    centers: Vec<Vec<f64>>,
    provider: ProviderDocument,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProviderDocument {
    kind: String,
    parameters: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    widths: Option<Vec<usize>>,
}

pub(crate) fn rows_of(points: &Points) -> Vec<Vec<f64>> {
    points.rows().map(<[f64]>::to_vec).collect()
}

pub(crate) fn check_schema(version: u32) -> Result<()> {
    if version != SCHEMA_VERSION {
        return Err(Error::Config(format!(
            "unsupported schema_version {version}, expected {SCHEMA_VERSION}"
        )));
    }
    Ok(())
}

impl KernelModel {
    pub fn to_json(&self) -> Result<String> {
        let provider = match self.provider() {
            PrecisionProvider::Table(_) => ProviderDocument {
                kind: ProviderKind::Table.to_string(),
                parameters: self.provider().params().to_vec(),
                widths: None,
            },
            PrecisionProvider::Mlp(m) => ProviderDocument {
                kind: ProviderKind::Mlp.to_string(),
                parameters: self.provider().params().to_vec(),
                widths: Some(m.net().widths().to_vec()),
            },
        };
        to_json_g17(&ModelDocument {
            schema_version: SCHEMA_VERSION,
            d: self.dim(),
            beta: self.beta(),
            horizon: self.horizon(),
            centers: rows_of(self.centers()),
            provider,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        check_schema(doc.schema_version)?;
        let centers = if doc.centers.is_empty() {
            Points::empty(doc.d)
        } else {
            Points::from_rows(&doc.centers)?
        };
        if centers.dim() != doc.d {
            return Err(Error::Config(format!(
                "centers have dimension {}, document says d={}",
                centers.dim(),
                doc.d
            )));
        }
        let kind: ProviderKind = doc.provider.kind.parse()?;
        let provider = match (kind, doc.provider.widths) {
            (ProviderKind::Table, None) => {
                PrecisionProvider::Table(TableProvider::new(doc.d, doc.provider.parameters)?)
            }
            (ProviderKind::Mlp, Some(widths)) => {
                PrecisionProvider::Mlp(MlpProvider::from_widths(widths, doc.provider.parameters)?)
            }
            (ProviderKind::Table, Some(_)) => {
                return Err(Error::Config("table provider takes no widths".into()))
            }
            (ProviderKind::Mlp, None) => {
                return Err(Error::Config("mlp provider requires widths".into()))
            }
        };
        KernelModel::new(centers, provider, doc.beta, doc.horizon)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
