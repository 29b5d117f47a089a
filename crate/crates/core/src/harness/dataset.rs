//! Dataset loading: an MNIST-style IDX pair or an image directory with a
//! `labels.csv` index.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use super::config::{RunConfig, Task};
use super::toy::toy_dataset;
use crate::error::{Error, Result};
use crate::seeding::{stream, Domain};
use crate::stained::idx::{read_images, read_labels};
use crate::stained::io::{read_labeled_dir, LABELS_FILE};
use crate::stained::{LabeledImage, Provenance};

fn ingest(path: &Path, msg: impl Into<String>) -> Error {
    Error::Ingestion {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Finds the unique file in `dir` whose name ends with `suffix`.
fn find_suffix(dir: &Path, suffix: &str) -> Result<PathBuf> {
    let mut hits: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| ingest(dir, e.to_string()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(suffix)))
        .collect();
    hits.sort();
    match hits.len() {
        1 => Ok(hits.pop().unwrap()),
        0 => Err(ingest(dir, format!("no `*{suffix}` file and no {LABELS_FILE}"))),
        _ => Err(ingest(dir, format!("several `*{suffix}` files"))),
    }
}

/// Loads an IDX image/label pair; labels must be existence labels (0/1).
pub fn load_idx_pair(images: &Path, labels: &Path) -> Result<Vec<LabeledImage>> {
    let imgs = read_images(images)?;
    let ys = read_labels(labels)?;
    if imgs.len() != ys.len() {
        return Err(ingest(
            labels,
            format!("{} labels for {} images", ys.len(), imgs.len()),
        ));
    }
    imgs.into_iter()
        .zip(ys)
        .enumerate()
        .map(|(i, (image, label))| {
            if label > 1 {
                return Err(ingest(
                    labels,
                    format!("label {i} is {label}; existence labels must be 0 or 1"),
                ));
            }
            Ok(LabeledImage {
                image,
                label,
                provenance: Provenance {
                    source_index: i,
                    seed: 0,
                    name: String::new(),
                },
            })
        })
        .collect()
}

/// Loads `path`: a directory holding `labels.csv`, or one holding exactly
/// one `*images-idx3-ubyte` and one `*labels-idx1-ubyte` file.
pub fn load_dataset(path: &Path) -> Result<Vec<LabeledImage>> {
    if !path.is_dir() {
        return Err(ingest(path, "dataset directory not found"));
    }
    if path.join(LABELS_FILE).is_file() {
        return read_labeled_dir(path);
    }
    let images = find_suffix(path, "images-idx3-ubyte")?;
    let labels = find_suffix(path, "labels-idx1-ubyte")?;
    load_idx_pair(&images, &labels)
}

/// Seeded permutation of `0..n`.
pub fn shuffled_order(n: usize, seed: u64, pass: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(seed, Domain::Shuffle, pass, 0));
    order
}

/// Training and test sets for a run. The test set may be empty.
pub fn load_split(cfg: &RunConfig) -> Result<(Vec<LabeledImage>, Vec<LabeledImage>)> {
    match cfg.task {
        Task::Toy => {
            let toy = cfg.toy();
            Ok((
                toy_dataset(&toy, cfg.toy_train_count, cfg.seed)?,
                toy_dataset(&toy, cfg.toy_test_count, cfg.seed.wrapping_add(1))?,
            ))
        }
        Task::Files => {
            let train = load_dataset(&cfg.train_data)?;
            if train.is_empty() {
                return Err(ingest(&cfg.train_data, "dataset is empty"));
            }
            let test = if cfg.test_data.as_os_str().is_empty() {
                Vec::new()
            } else {
                load_dataset(&cfg.test_data)?
            };
            Ok((train, test))
        }
    }
}
