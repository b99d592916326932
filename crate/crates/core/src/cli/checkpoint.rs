use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_text, write_text, CliError};
use crate::diffgraph::Tensor;
use crate::mmvae::{ModelConfig, MultimodalVae};
use crate::rng::RngState;

pub const CHECKPOINT_FORMAT: &str = "baryvae-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointDoc {
    format: String,
    format_version: u32,
    config: ModelConfig,
    params: BTreeMap<String, ParamEntry>,
    rng_state: Option<RngState>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamEntry {
    shape: [usize; 2],
    data: Vec<f64>,
}

pub fn checkpoint_json(vae: &MultimodalVae) -> Result<String, CliError> {
    let params = vae
        .params
        .iter()
        .map(|(name, t)| {
            let entry = ParamEntry {
                shape: t.shape(),
                data: t.data().to_vec(),
            };
            (name.to_string(), entry)
        })
        .collect();
    let doc = CheckpointDoc {
        format: CHECKPOINT_FORMAT.into(),
        format_version: CHECKPOINT_VERSION,
        config: vae.config.clone(),
        params,
        rng_state: vae.rng_state,
    };
    let mut text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::numeric(format!("checkpoint: {e}")))?;
    text.push('\n');
    Ok(text)
}

pub fn write_checkpoint(path: &Path, vae: &MultimodalVae) -> Result<(), CliError> {
    write_text(path, &checkpoint_json(vae)?)
}

/// Parses a checkpoint; every format or version problem maps to exit code 4.
pub fn parse_checkpoint(text: &str, origin: &str) -> Result<MultimodalVae, CliError> {
    let fail = |msg: String| CliError::format(format!("{origin}: {msg}"));
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| fail(format!("not a checkpoint document: {e}")))?;
    match value.get("format").and_then(|f| f.as_str()) {
        Some(CHECKPOINT_FORMAT) => {}
        other => {
            return Err(fail(format!(
                "bad format marker {other:?}, expected {CHECKPOINT_FORMAT:?}"
            )))
        }
    }
    match value.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(CHECKPOINT_VERSION) => {}
        other => {
            return Err(fail(format!(
                "unsupported format_version {other:?}, this build reads {CHECKPOINT_VERSION}"
            )))
        }
    }
    let mut doc: CheckpointDoc = serde_json::from_value(value).map_err(|e| fail(e.to_string()))?;
    let mut vae = MultimodalVae::new(doc.config.clone()).map_err(|e| fail(e.to_string()))?;
    let names: Vec<String> = vae.params.names().map(String::from).collect();
    for name in &names {
        let entry = doc
            .params
            .remove(name)
            .ok_or_else(|| fail(format!("missing parameter `{name}`")))?;
        let slot = vae.params.get_mut(name).expect("listed above");
        if entry.shape != slot.shape() {
            return Err(fail(format!(
                "parameter `{name}` has shape {:?}, model expects {:?}",
                entry.shape,
                slot.shape()
            )));
        }
        *slot = Tensor::new(entry.shape[0], entry.shape[1], entry.data).map_err(|e| fail(format!("`{name}`: {e}")))?;
    }
    if let Some(extra) = doc.params.keys().next() {
        return Err(fail(format!("unexpected parameter `{extra}`")));
    }
    vae.rng_state = doc.rng_state;
    Ok(vae)
}

pub fn read_checkpoint(path: &Path) -> Result<MultimodalVae, CliError> {
    parse_checkpoint(&read_text(path)?, &path.display().to_string())
}
