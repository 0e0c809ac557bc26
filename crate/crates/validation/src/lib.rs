//! Locating SuiteSparse matrices for the acceptance checks.
//!
//! Matrices are looked up in `$JPCG_MATRIX_DIR`, defaulting to
//! `<workspace>/data/suitesparse`, either as `NAME.mtx` or as `NAME/NAME.mtx`
//! (the layout of the collection's tarballs).

use std::env;
use std::path::{Path, PathBuf};

use jpcg_core::matrix_io::{load_matrix_market, CsrMatrix};

pub const MATRIX_DIR_VAR: &str = "JPCG_MATRIX_DIR";

pub fn matrix_dir() -> PathBuf {
    env::var_os(MATRIX_DIR_VAR).map(PathBuf::from).unwrap_or_else(|| {
        let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
        manifest.ancestors().nth(2).unwrap_or(manifest).join("data/suitesparse")
    })
}

/// Path of `name` under `dir`, if present.
pub fn find_matrix(dir: &Path, name: &str) -> Option<PathBuf> {
    [
        dir.join(format!("{name}.mtx")),
        dir.join(name).join(format!("{name}.mtx")),
    ]
    .into_iter()
    .find(|p| p.is_file())
}

/// Loads `name` from [`matrix_dir`].
pub fn load_named(name: &str) -> Result<CsrMatrix, String> {
    let dir = matrix_dir();
    let path = find_matrix(&dir, name).ok_or_else(|| format!("matrix {name} not available under {}", dir.display()))?;
    load_matrix_market(&path).map_err(|e| format!("{}: {e}", path.display()))
}
