use fsosr_core::config::RunConfig;
use sha2::{Digest, Sha256};

pub const TOOL_VERSION: &str = concat!("fsosr ", env!("CARGO_PKG_VERSION"));

/// First 16 hex digits of the SHA-256 of the canonical config text.
pub fn config_hash(config: &RunConfig) -> String {
    Sha256::digest(config.to_text().as_bytes())[..8]
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// One-line provenance: tool version, seed, and config hash.
pub fn header(config: &RunConfig) -> String {
    format!(
        "tool={TOOL_VERSION} seed={} config={}",
        config.seed,
        config_hash(config)
    )
}

pub fn json(config: &RunConfig) -> serde_json::Value {
    serde_json::json!({
        "tool": TOOL_VERSION,
        "seed": config.seed,
        "config_hash": config_hash(config),
    })
}
