//! Self-describing checkpoint files.
//!
//! A checkpoint is a safetensors container. Its string metadata carries a
//! format tag, the variant id, the full [`ModelSpec`] as JSON and an optional
//! config echo; the tensors are every parameter and running statistic of the
//! model under its stable name.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::{build_model, ModelHandle, ModelSpec, Variant};

pub const FORMAT_TAG: &str = "distractnet-checkpoint/1";

/// `<variant>_<run-id>_best.ckpt`
pub fn checkpoint_file_name(variant: Variant, run_id: &str) -> String {
    format!("{}_{run_id}_best.ckpt", variant.id())
}

#[derive(Debug, Clone)]
pub struct CheckpointInfo {
    pub variant: Variant,
    pub spec: ModelSpec,
    pub config: Option<serde_json::Value>,
}

pub fn save_checkpoint(handle: &ModelHandle, path: &Path) -> Result<()> {
    save_checkpoint_with_config(handle, path, None)
}

pub fn save_checkpoint_with_config(
    handle: &ModelHandle,
    path: &Path,
    config: Option<&serde_json::Value>,
) -> Result<()> {
    let mut meta = HashMap::new();
    meta.insert("format".to_string(), FORMAT_TAG.to_string());
    meta.insert("variant".to_string(), handle.variant().id().to_string());
    meta.insert("spec".to_string(), serde_json::to_string(handle.spec())?);
    if let Some(c) = config {
        meta.insert("config".to_string(), serde_json::to_string(c)?);
    }
    let state = handle.state();
    let bytes = safetensors::serialize(state.iter().map(|(k, v)| (k.as_str(), v)), Some(meta))
        .map_err(|e| Error::Format(format!("serialising checkpoint: {e}")))?;
    // write-then-rename so a crash never leaves a truncated "best" file behind
    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, bytes)
        .and_then(|_| fs::rename(&tmp, path))
        .map_err(|e| Error::Resource(format!("cannot write checkpoint {}: {e}", path.display())))
}

fn parse_info(buf: &[u8], path: &Path) -> Result<CheckpointInfo> {
    let bad = |msg: String| Error::Format(format!("{}: {msg}", path.display()));
    let (_, header) = safetensors::SafeTensors::read_metadata(buf)
        .map_err(|e| bad(format!("not a checkpoint ({e})")))?;
    let meta = header
        .metadata()
        .as_ref()
        .ok_or_else(|| bad("missing metadata".into()))?;
    if meta.get("format").map(String::as_str) != Some(FORMAT_TAG) {
        return Err(bad("unrecognised checkpoint format".into()));
    }
    let variant: Variant = meta
        .get("variant")
        .ok_or_else(|| bad("missing variant tag".into()))?
        .parse()
        .map_err(|_| bad(format!("unknown variant tag {:?}", meta.get("variant"))))?;
    let spec: ModelSpec = serde_json::from_str(
        meta.get("spec")
            .ok_or_else(|| bad("missing model spec".into()))?,
    )
    .map_err(|e| bad(format!("bad model spec: {e}")))?;
    if spec.variant != variant {
        return Err(bad("variant tag disagrees with embedded spec".into()));
    }
    let config = match meta.get("config") {
        Some(c) => Some(serde_json::from_str(c).map_err(|e| bad(format!("bad config echo: {e}")))?),
        None => None,
    };
    Ok(CheckpointInfo {
        variant,
        spec,
        config,
    })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Resource(format!("cannot read {}: {e}", path.display())))
}

pub fn read_checkpoint_info(path: &Path) -> Result<CheckpointInfo> {
    parse_info(&read(path)?, path)
}

/// Rebuilds the model named by the embedded variant tag and restores every
/// stored tensor bit-for-bit.
pub fn load_checkpoint(path: &Path) -> Result<ModelHandle> {
    let buf = read(path)?;
    let info = parse_info(&buf, path)?;
    let tensors = candle_core::safetensors::load_buffer(&buf, &candle_core::Device::Cpu)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut spec = info.spec;
    spec.pretrained_backbone = false;
    let handle = build_model(&spec)?;
    let expected = handle.stored_names();
    for name in &expected {
        let t = tensors.get(name).ok_or_else(|| {
            Error::Format(format!("{}: missing tensor '{name}'", path.display()))
        })?;
        handle.set_state(name, t)?;
    }
    if let Some(extra) = tensors.keys().find(|k| !expected.contains(*k)) {
        return Err(Error::Format(format!(
            "{}: unexpected tensor '{extra}'",
            path.display()
        )));
    }
    Ok(handle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelSpec;

    fn tiny() -> ModelHandle {
        build_model(&ModelSpec::new(Variant::SimpleCnn).with_input_size(16, 16).with_seed(4)).unwrap()
    }

    #[test]
    fn round_trip_is_parameter_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(checkpoint_file_name(Variant::SimpleCnn, "r1"));
        let m = tiny();
        let cfg = serde_json::json!({"seed": 4});
        save_checkpoint_with_config(&m, &path, Some(&cfg)).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.variant(), Variant::SimpleCnn);
        for (k, v) in m.state() {
            let w = &back.state()[&k];
            assert_eq!(
                v.flatten_all().unwrap().to_vec1::<f32>().unwrap(),
                w.flatten_all().unwrap().to_vec1::<f32>().unwrap(),
                "{k}"
            );
        }
        assert_eq!(read_checkpoint_info(&path).unwrap().config, Some(cfg));
    }

    #[test]
    fn truncated_and_foreign_files_are_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&tiny(), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        let cut = dir.path().join("cut.ckpt");
        fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_checkpoint(&cut), Err(Error::Format(_))));
        let junk = dir.path().join("junk.ckpt");
        fs::write(&junk, b"hello").unwrap();
        assert!(matches!(load_checkpoint(&junk), Err(Error::Format(_))));
        assert!(matches!(
            load_checkpoint(&dir.path().join("absent.ckpt")),
            Err(Error::Resource(_))
        ));
    }

    #[test]
    fn file_name_convention() {
        assert_eq!(
            checkpoint_file_name(Variant::Vgg19FtB, "20260101T000000-s7"),
            "VGG19_FT_B_20260101T000000-s7_best.ckpt"
        );
    }
}
