//! Policy taxonomy: broad categories, each holding granular policies with an
//! egregiousness tier that the hint ranker uses as its primary key.
//!
//! The on-disk form is a JSON array of policy objects. Unknown fields are
//! rejected so that typos in a hand-edited file surface as errors instead of
//! silently falling back to defaults.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

const DESK_TAXONOMY: &str = include_str!("../data/desk_taxonomy.json");

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("failed to read taxonomy file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("taxonomy parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("empty taxonomy")]
    Empty,
    #[error("duplicate policy id {0:?}")]
    DuplicateId(String),
    #[error("policy {id:?} has egregiousness {value}; tiers start at 1")]
    Egregiousness { id: String, value: i64 },
    #[error("policy record #{index} has an empty {field}")]
    EmptyField { index: usize, field: &'static str },
    #[error("unknown policy id {0:?}")]
    UnknownPolicy(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Policy {
    pub id: String,
    pub name: String,
    pub category: String,
    /// Severity tier, higher is more egregious. Signed on the wire so that a
    /// negative value is reported as a tier error rather than a type error.
    pub egregiousness: i64,
    pub hint_enabled: bool,
}

/// A validated, immutable set of policies ordered by id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyTaxonomy {
    policies: Vec<Policy>,
    index: BTreeMap<String, usize>,
    version: String,
}

impl PolicyTaxonomy {
    pub fn new(mut policies: Vec<Policy>) -> Result<Self, TaxonomyError> {
        if policies.is_empty() {
            return Err(TaxonomyError::Empty);
        }
        for (index, p) in policies.iter().enumerate() {
            if p.id.trim().is_empty() {
                return Err(TaxonomyError::EmptyField { index, field: "id" });
            }
            if p.category.trim().is_empty() {
                return Err(TaxonomyError::EmptyField {
                    index,
                    field: "category",
                });
            }
            if p.egregiousness < 1 {
                return Err(TaxonomyError::Egregiousness {
                    id: p.id.clone(),
                    value: p.egregiousness,
                });
            }
        }
        policies.sort_by(|a, b| a.id.cmp(&b.id));
        let mut index = BTreeMap::new();
        for (i, p) in policies.iter().enumerate() {
            if index.insert(p.id.clone(), i).is_some() {
                return Err(TaxonomyError::DuplicateId(p.id.clone()));
            }
        }
        let canonical = serde_json::to_vec(&policies)?;
        let version = format!("sha256:{}", &hex::encode(Sha256::digest(&canonical))[..16]);
        Ok(Self {
            policies,
            index,
            version,
        })
    }

    pub fn from_json_str(json: &str) -> Result<Self, TaxonomyError> {
        let policies: Vec<Policy> = serde_json::from_str(json)?;
        Self::new(policies)
    }

    /// The 18-policy, 4-category taxonomy used by the desk-scale defaults.
    pub fn desk_default() -> Self {
        Self::from_json_str(DESK_TAXONOMY).expect("bundled taxonomy is valid")
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.policies).expect("policies serialize")
    }

    pub fn policies(&self) -> &[Policy] {
        &self.policies
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    /// Content hash of the canonical policy list.
    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn get(&self, policy_id: &str) -> Option<&Policy> {
        self.index.get(policy_id).map(|&i| &self.policies[i])
    }

    pub fn contains(&self, policy_id: &str) -> bool {
        self.index.contains_key(policy_id)
    }

    pub fn egregiousness_tier(&self, policy_id: &str) -> Result<u32, TaxonomyError> {
        self.get(policy_id)
            .map(|p| p.egregiousness as u32)
            .ok_or_else(|| TaxonomyError::UnknownPolicy(policy_id.to_string()))
    }

    pub fn policy_ids(&self) -> impl Iterator<Item = &str> {
        self.policies.iter().map(|p| p.id.as_str())
    }

    pub fn hint_enabled_ids(&self) -> Vec<String> {
        self.policies
            .iter()
            .filter(|p| p.hint_enabled)
            .map(|p| p.id.clone())
            .collect()
    }

    pub fn categories(&self) -> BTreeSet<&str> {
        self.policies.iter().map(|p| p.category.as_str()).collect()
    }
}

pub fn load_taxonomy(path: impl AsRef<Path>) -> Result<PolicyTaxonomy, TaxonomyError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| TaxonomyError::Io {
        path: path.display().to_string(),
        source,
    })?;
    PolicyTaxonomy::from_json_str(&text)
}
