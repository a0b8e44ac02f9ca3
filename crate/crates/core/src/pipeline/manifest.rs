use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{validation, Error, Result};
use crate::types::BoundingBox;

/// One row of a dataset manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// Stable identifier: row index plus file stem, e.g. `0007_dog`.
    pub id: String,
    pub image_path: PathBuf,
    pub bbox: BoundingBox,
    pub label: Option<usize>,
}

#[derive(Deserialize)]
struct Row {
    image_path: PathBuf,
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
    #[serde(default)]
    label: Option<usize>,
}

/// Reads a CSV with header `image_path,x0,y0,x1,y1,label`. Image paths are
/// relative to the manifest's directory; `label` may be blank.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let dir = path.parent().unwrap_or(Path::new(""));
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let mut entries = Vec::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let bbox = BoundingBox::new(row.x0, row.y0, row.x1, row.y1).map_err(|e| e.at(format!("manifest row {i}")))?;
        let stem = row
            .image_path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("image")
            .to_string();
        let image_path = if row.image_path.is_relative() {
            dir.join(&row.image_path)
        } else {
            row.image_path
        };
        entries.push(ManifestEntry {
            id: format!("{i:04}_{stem}"),
            image_path,
            bbox,
            label: row.label,
        });
    }
    if entries.is_empty() {
        return Err(validation(format!("manifest {} has no rows", path.display())));
    }
    Ok(entries)
}
