//! Path helpers for workdir-relative artifact bookkeeping.

use std::path::{Component, Path, PathBuf};

/// Computes a lexical relative path from `from_dir` to `to`.
///
/// Both paths are compared componentwise without touching the
/// filesystem, so they must either both be absolute or both share the
/// same relative base. Shared leading components are dropped and each
/// remaining component of `from_dir` contributes one `..`.
pub fn relative_path(from_dir: &Path, to: &Path) -> PathBuf {
    let from: Vec<Component> = from_dir.components().collect();
    let dest: Vec<Component> = to.components().collect();
    let mut shared = 0;
    while shared < from.len() && shared < dest.len() && from[shared] == dest[shared] {
        shared += 1;
    }
    let mut out = PathBuf::new();
    for _ in shared..from.len() {
        out.push("..");
    }
    for component in &dest[shared..] {
        out.push(component.as_os_str());
    }
    if out.as_os_str().is_empty() {
        out.push(".");
    }
    out
}

/// Renders a path with forward slashes for stable report output.
pub fn display_slash(path: &Path) -> String {
    let parts: Vec<String> = path
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect();
    parts.join("/")
}
