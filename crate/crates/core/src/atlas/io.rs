//! Atlas directory layout: `manifest.json` plus `cells/cell_<i>_<j>.png`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Atlas;
use crate::error::{Error, Result};
use crate::fingerprint::sha256_hex;
use crate::ImageTensor;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    /// SHA-256 of the compact JSON encoding of `atlas`.
    checksum: String,
    atlas: Atlas,
}

pub(super) fn cell_image_path(i: usize, j: usize) -> String {
    format!("cells/cell_{i}_{j}.png")
}

fn atlas_checksum(atlas: &Atlas) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(atlas)?))
}

/// Writes the manifest and every generated image under `dir`.
pub fn export_atlas(atlas: &Atlas, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("cells")).map_err(|e| Error::io(dir, e))?;
    for cell in &atlas.cells {
        if let (Some(img), Some(file)) = (&cell.generated_image, &cell.image_file) {
            let path = dir.join(file);
            fs::write(&path, img.encode_png()?).map_err(|e| Error::io(&path, e))?;
        }
    }
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        checksum: atlas_checksum(atlas)?,
        atlas: atlas.clone(),
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Reads an atlas written by [`export_atlas`], verifying the manifest
/// checksum and every image hash.
pub fn import_atlas(dir: &Path) -> Result<Atlas> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_slice(&text)?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(Error::Format(format!(
            "manifest version {}, expected {MANIFEST_VERSION}",
            manifest.format_version
        )));
    }
    let mut atlas = manifest.atlas;
    if atlas_checksum(&atlas)? != manifest.checksum {
        return Err(Error::Checksum(path.display().to_string()));
    }
    let g = atlas.grid_size;
    if atlas.cells.len() != g * g {
        return Err(Error::Format(format!("{} cells for a {g}×{g} grid", atlas.cells.len())));
    }
    for (k, cell) in atlas.cells.iter_mut().enumerate() {
        if (cell.i, cell.j) != (k / g, k % g) {
            return Err(Error::Format(format!("cell {k} has coordinates ({}, {})", cell.i, cell.j)));
        }
        if let Some(file) = &cell.image_file {
            let img_path = dir.join(file);
            let bytes = fs::read(&img_path).map_err(|e| Error::io(&img_path, e))?;
            if cell.image_sha256.as_deref() != Some(sha256_hex(&bytes).as_str()) {
                return Err(Error::Checksum(img_path.display().to_string()));
            }
            let decoded = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)?;
            cell.generated_image = Some(ImageTensor::from_rgb8(&decoded.to_rgb8()));
        }
    }
    Ok(atlas)
}
