use std::fs;
use std::path::{Path, PathBuf};

use super::{decode_pgm, resize_bilinear, Image, ImageError, PgmError};

/// Images paired with class indices into `class_names`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub items: Vec<(Image, usize)>,
    pub class_names: Vec<String>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Number of items per class index.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for (_, label) in &self.items {
            counts[*label] += 1;
        }
        counts
    }

    pub fn map_images<F>(&self, mut f: F) -> Result<LabeledDataset, ImageError>
    where
        F: FnMut(&Image) -> Result<Image, ImageError>,
    {
        let items = self
            .items
            .iter()
            .map(|(img, label)| Ok((f(img)?, *label)))
            .collect::<Result<_, ImageError>>()?;
        Ok(LabeledDataset {
            items,
            class_names: self.class_names.clone(),
        })
    }
}

/// What to do with a file that fails to decode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OnInvalid {
    #[default]
    Fail,
    Skip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedFile {
    pub path: PathBuf,
    pub error: PgmError,
}

#[derive(Debug, Clone)]
pub struct FolderLoad {
    pub dataset: LabeledDataset,
    pub skipped: Vec<SkippedFile>,
}

fn sorted_entries(dir: &Path) -> Result<Vec<(String, PathBuf)>, ImageError> {
    let io_err = |source| ImageError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut entries = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err)? {
        let entry = entry.map_err(io_err)?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with('.') {
            continue;
        }
        entries.push((name, entry.path()));
    }
    entries.sort();
    Ok(entries)
}

/// Loads a directory-per-class dataset. Classes are the subdirectory names
/// in lexicographic order; items follow class order then filename order.
/// Every image is resized to `target`×`target`.
pub fn load_image_folder(
    root: &Path,
    target: usize,
    on_invalid: OnInvalid,
) -> Result<FolderLoad, ImageError> {
    if !root.is_dir() {
        return Err(ImageError::NotADirectory(root.to_path_buf()));
    }
    let mut class_names = Vec::new();
    let mut items = Vec::new();
    let mut skipped = Vec::new();
    for (name, path) in sorted_entries(root)? {
        if !path.is_dir() {
            continue;
        }
        let label = class_names.len();
        class_names.push(name);
        for (_, file) in sorted_entries(&path)? {
            if !file.is_file() {
                continue;
            }
            let bytes = fs::read(&file).map_err(|source| ImageError::Io {
                path: file.clone(),
                source,
            })?;
            match decode_pgm(&bytes) {
                Ok(img) => items.push((resize_bilinear(&img, target, target)?, label)),
                Err(error) => match on_invalid {
                    OnInvalid::Fail => {
                        return Err(ImageError::Decode {
                            path: file,
                            source: error,
                        })
                    }
                    OnInvalid::Skip => skipped.push(SkippedFile { path: file, error }),
                },
            }
        }
    }
    if items.is_empty() {
        return Err(ImageError::EmptyDataset(root.to_path_buf()));
    }
    Ok(FolderLoad {
        dataset: LabeledDataset { items, class_names },
        skipped,
    })
}
