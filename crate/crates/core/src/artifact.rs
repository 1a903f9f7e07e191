//! Provenance carried by every written artifact.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::costmodel::DeviceProfile;
use crate::model::ModelSpec;

pub const TOOL: &str = "hetsplit";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub model: String,
    pub profile_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Command-specific settings such as budget or strategy.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub settings: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new(spec: &ModelSpec, profile: &DeviceProfile) -> Self {
        Self {
            tool: TOOL.into(),
            version: VERSION.into(),
            model: spec.name.clone(),
            profile_digest: profile.digest(),
            seed: None,
            settings: BTreeMap::new(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.settings.insert(key.into(), value.to_string());
        self
    }

    /// `# key=value` comment lines for CSV files.
    pub fn csv_header(&self) -> String {
        let mut s = format!(
            "# tool={} {}\n# model={}\n# profile={}\n",
            self.tool, self.version, self.model, self.profile_digest
        );
        if let Some(seed) = self.seed {
            s.push_str(&format!("# seed={seed}\n"));
        }
        for (k, v) in &self.settings {
            s.push_str(&format!("# {k}={v}\n"));
        }
        s
    }
}

/// A JSON artifact: provenance next to the payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub provenance: Provenance,
    #[serde(flatten)]
    pub body: T,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_stable() {
        let spec = crate::model::tests::spec(1, 8, 16, 2);
        let p = DeviceProfile::new(1.0, 2.0, 3.0, 4.0);
        let a = Provenance::new(&spec, &p).with_seed(7).with("budget", "50%");
        let b = Provenance::new(&spec, &p).with_seed(7).with("budget", "50%");
        assert_eq!(a.csv_header(), b.csv_header());
        assert!(a.csv_header().contains("# budget=50%\n"));
        assert!(a.csv_header().starts_with("# tool=hetsplit "));
    }
}
