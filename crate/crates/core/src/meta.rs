//! Provenance stamped into every output file.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOOL_NAME: &str = "wikiflu";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputMeta {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
}

impl OutputMeta {
    pub fn new(config_hash: impl Into<String>) -> Self {
        Self {
            tool: TOOL_NAME.to_string(),
            version: TOOL_VERSION.to_string(),
            config_hash: config_hash.into(),
        }
    }

    /// `# wikiflu 0.1.0 config_hash=...`, the first line of CSV outputs.
    pub fn comment(&self) -> String {
        format!("# {} {} config_hash={}", self.tool, self.version, self.config_hash)
    }
}

/// First 16 hex digits of the SHA-256 of `bytes`.
pub fn short_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    hex::encode(&digest[..8])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable() {
        assert_eq!(short_hash(b"abc"), "ba7816bf8f01cfea");
        assert_eq!(OutputMeta::new("x").comment(), format!("# wikiflu {TOOL_VERSION} config_hash=x"));
    }
}
