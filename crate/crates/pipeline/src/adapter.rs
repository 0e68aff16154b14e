//! Subprocess adapters for the external detector and trainer.
//!
//! A detector is any command answering `<cmd> infer --request <file>`
//! where the request JSON carries {model, images, output_dir}; it must
//! write one confidence-suffixed prediction file per image, named after
//! the image stem, and exit 0. A trainer answers `<cmd> train
//! --request <file>` with {base_model, train_manifest,
//! label_provenance_dir, freeze, epochs, alpha, beta, lr, seed,
//! output_model} and must write the produced model path into
//! `<request>.result.json`. Pseudo-label snapshots are staged in a
//! temporary directory, validated, made read-only, and renamed into
//! place so a crash never leaves a half-written snapshot behind.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use nsn_core::annotations::{load_labels, DatasetManifest, LabelKind};
use nsn_core::imaging::image_dims;

use crate::error::PipelineError;
use crate::Result;

/// External command plus fixed leading arguments.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommandSpec {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
}

impl CommandSpec {
    pub fn new(program: impl Into<String>) -> Self {
        CommandSpec {
            program: program.into(),
            args: Vec::new(),
        }
    }
}

/// Request body for `infer`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferRequest {
    pub model: PathBuf,
    pub images: Vec<PathBuf>,
    pub output_dir: PathBuf,
}

/// Request body for `train`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRequest {
    pub base_model: PathBuf,
    pub train_manifest: PathBuf,
    /// Directory holding provenance sidecars for the manifest's label
    /// files. Sidecars are co-located with the labels, so this is the
    /// manifest's own directory tree root.
    pub label_provenance_dir: PathBuf,
    pub freeze: String,
    pub epochs: u32,
    pub alpha: f64,
    pub beta: f64,
    pub lr: f64,
    pub seed: u64,
    pub output_model: PathBuf,
}

/// Result file the trainer writes next to the request.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainResult {
    pub model: PathBuf,
}

/// Path of the trainer's result file for a given request file.
pub fn train_result_path(request_path: &Path) -> PathBuf {
    let mut name = request_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.push_str(".result.json");
    request_path.with_file_name(name)
}

fn write_request<T: Serialize>(path: &Path, body: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(body).map_err(|e| PipelineError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    fs::write(path, text.as_bytes()).map_err(|e| PipelineError::io(path, e))
}

fn tail(text: &str, lines: usize) -> String {
    let all: Vec<&str> = text.lines().collect();
    let start = all.len().saturating_sub(lines);
    all[start..].join("\n")
}

/// Runs `<program> <args> <verb> --request <request_path>` and fails
/// with the captured output tail on a nonzero exit.
fn run_adapter(spec: &CommandSpec, verb: &str, request_path: &Path, context: &str) -> Result<()> {
    let output = Command::new(&spec.program)
        .args(&spec.args)
        .arg(verb)
        .arg("--request")
        .arg(request_path)
        .output()
        .map_err(|e| PipelineError::Adapter {
            context: context.to_string(),
            message: format!("failed to launch {}: {e}", spec.program),
        })?;
    if !output.status.success() {
        let stderr = String::from_utf8_lossy(&output.stderr);
        let stdout = String::from_utf8_lossy(&output.stdout);
        return Err(PipelineError::Adapter {
            context: context.to_string(),
            message: format!(
                "{} {verb} exited with {}\nstdout tail:\n{}\nstderr tail:\n{}",
                spec.program,
                output.status,
                tail(&stdout, 20),
                tail(&stderr, 20)
            ),
        });
    }
    Ok(())
}

/// Runs detector inference over every image of a manifest, writing the
/// per-image prediction files into `output_dir`.
pub fn run_inference(
    detector: &CommandSpec,
    model: &Path,
    manifest: &DatasetManifest,
    manifest_path: &Path,
    output_dir: &Path,
    request_path: &Path,
    context: &str,
) -> Result<()> {
    fs::create_dir_all(output_dir).map_err(|e| PipelineError::io(output_dir, e))?;
    let images: Vec<PathBuf> = manifest
        .resolve_entries(manifest_path)
        .into_iter()
        .map(|e| e.image)
        .collect();
    let request = InferRequest {
        model: model.to_path_buf(),
        images,
        output_dir: output_dir.to_path_buf(),
    };
    write_request(request_path, &request)?;
    run_adapter(detector, "infer", request_path, context)
}

/// Generates a validated, immutable pseudo-label snapshot for every
/// image of the target manifest.
///
/// Predictions are produced into `<dest>.tmp`, then each file is parsed
/// and required to carry a confidence on every line; only a fully valid
/// snapshot is made read-only and renamed to `dest`. Any validation
/// failure removes the temporary directory so partial output is never
/// mistaken for a snapshot.
pub fn generate_pseudo_labels(
    detector: &CommandSpec,
    model: &Path,
    manifest: &DatasetManifest,
    manifest_path: &Path,
    dest: &Path,
    request_path: &Path,
    context: &str,
) -> Result<()> {
    let tmp = dest.with_extension("tmp");
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| PipelineError::io(&tmp, e))?;
    }
    run_inference(detector, model, manifest, manifest_path, &tmp, request_path, context)?;
    let validated = validate_snapshot(manifest, manifest_path, &tmp, context);
    if let Err(err) = validated {
        let _ = fs::remove_dir_all(&tmp);
        return Err(err);
    }
    make_read_only(&tmp)?;
    if dest.exists() {
        fs::remove_dir_all(dest).map_err(|e| PipelineError::io(dest, e))?;
    }
    fs::rename(&tmp, dest).map_err(|e| PipelineError::io(dest, e))?;
    Ok(())
}

fn validate_snapshot(
    manifest: &DatasetManifest,
    manifest_path: &Path,
    dir: &Path,
    context: &str,
) -> Result<()> {
    for entry in manifest.resolve_entries(manifest_path) {
        let stem = Path::new(&entry.key)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| entry.key.clone());
        let pred = dir.join(format!("{stem}.txt"));
        if !pred.is_file() {
            return Err(PipelineError::Adapter {
                context: context.to_string(),
                message: format!("detector wrote no prediction file for {}", entry.key),
            });
        }
        let dims = image_dims(&entry.image)?;
        let boxes = load_labels(&pred, dims, LabelKind::Pseudo)?;
        for (idx, b) in boxes.iter().enumerate() {
            if b.confidence.is_none() {
                return Err(PipelineError::Adapter {
                    context: context.to_string(),
                    message: format!(
                        "prediction {} line {} has no confidence field",
                        pred.display(),
                        idx + 1
                    ),
                });
            }
        }
    }
    Ok(())
}

fn make_read_only(dir: &Path) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| PipelineError::io(dir, e))? {
        let entry = entry.map_err(|e| PipelineError::io(dir, e))?;
        let path = entry.path();
        if path.is_file() {
            let mut perms = fs::metadata(&path)
                .map_err(|e| PipelineError::io(&path, e))?
                .permissions();
            perms.set_readonly(true);
            fs::set_permissions(&path, perms).map_err(|e| PipelineError::io(&path, e))?;
        }
    }
    Ok(())
}

/// Runs one training period and returns the path of the produced model
/// as reported in the trainer's result file.
pub fn run_training(
    trainer: &CommandSpec,
    request: &TrainRequest,
    request_path: &Path,
    context: &str,
) -> Result<PathBuf> {
    if let Some(parent) = request.output_model.parent() {
        fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
    }
    write_request(request_path, request)?;
    run_adapter(trainer, "train", request_path, context)?;
    let result_path = train_result_path(request_path);
    let text = fs::read_to_string(&result_path).map_err(|e| PipelineError::io(&result_path, e))?;
    let result: TrainResult = serde_json::from_str(&text).map_err(|e| PipelineError::Json {
        path: result_path.clone(),
        message: e.to_string(),
    })?;
    if !result.model.is_file() {
        return Err(PipelineError::Adapter {
            context: context.to_string(),
            message: format!(
                "trainer reported model {} but the file does not exist",
                result.model.display()
            ),
        });
    }
    Ok(result.model)
}
