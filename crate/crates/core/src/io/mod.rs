//! On-disk formats: 8-bit PNG images, `.lcet` tensors, `.lcec` checkpoints.

pub mod checkpoint;
mod lcet;
mod png;

pub use lcet::{decode_tensor, encode_tensor, read_tensor, write_tensor, TENSOR_MAGIC};
pub use png::{load_rgb, quantize, save_gray, save_rgb};

use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}
