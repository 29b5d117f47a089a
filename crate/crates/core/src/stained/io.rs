//! Image directories with a `labels.csv` index.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageFormat, Luma};
use serde::{Deserialize, Serialize};

use super::idx::to_u8;
use super::{LabeledImage, Provenance};
use crate::error::{shape_err, Error, Result};
use crate::raster::Raster;

pub const LABELS_FILE: &str = "labels.csv";

/// One row of `labels.csv`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRow {
    pub filename: String,
    pub label: u8,
    pub seed: u64,
    pub digit_index: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ImageFormatChoice {
    #[default]
    Png,
    Pgm,
}

impl ImageFormatChoice {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Png => "png",
            Self::Pgm => "pgm",
        }
    }
}

fn ingest(path: &Path, msg: impl Into<String>) -> Error {
    Error::Ingestion {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

pub fn raster_to_gray8(img: &Raster) -> GrayImage {
    GrayImage::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        Luma([to_u8(img.get(y as usize, x as usize))])
    })
}

/// Writes an 8-bit grayscale image; the format follows the extension.
pub fn write_gray8(img: &Raster, path: &Path) -> Result<()> {
    let format = ImageFormat::from_path(path)?;
    raster_to_gray8(img).save_with_format(path, format)?;
    Ok(())
}

/// Reads any supported image as grayscale, scaled so that 255 maps to 1.
pub fn read_gray(path: &Path) -> Result<Raster> {
    let img = image::open(path)
        .map_err(|e| ingest(path, e.to_string()))?
        .into_luma8();
    let (w, h) = img.dimensions();
    Raster::new(
        h as usize,
        w as usize,
        img.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
    )
}

/// Streams labeled images into `dir`, one file each, and writes the index
/// when dropped via [`finish`](Self::finish).
pub struct DatasetWriter {
    dir: PathBuf,
    format: ImageFormatChoice,
    csv: csv::Writer<fs::File>,
    count: usize,
}

impl DatasetWriter {
    pub fn create(dir: &Path, format: ImageFormatChoice) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let csv = csv::Writer::from_path(dir.join(LABELS_FILE))
            .map_err(|e| ingest(&dir.join(LABELS_FILE), e.to_string()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            format,
            csv,
            count: 0,
        })
    }

    /// Writes the image as `img-NNNNN.<ext>` and appends its row.
    pub fn push(&mut self, sample: &LabeledImage) -> Result<LabelRow> {
        let filename = format!("img-{:05}.{}", self.count, self.format.extension());
        write_gray8(&sample.image, &self.dir.join(&filename))?;
        let row = LabelRow {
            filename,
            label: sample.label,
            seed: sample.provenance.seed,
            digit_index: sample.provenance.source_index,
        };
        self.csv
            .serialize(&row)
            .map_err(|e| ingest(&self.dir.join(LABELS_FILE), e.to_string()))?;
        self.count += 1;
        Ok(row)
    }

    pub fn finish(mut self) -> Result<usize> {
        self.csv.flush()?;
        Ok(self.count)
    }
}

pub fn read_label_rows(dir: &Path) -> Result<Vec<LabelRow>> {
    let path = dir.join(LABELS_FILE);
    let mut rdr = csv::Reader::from_path(&path).map_err(|e| ingest(&path, e.to_string()))?;
    let mut rows = Vec::new();
    for (i, row) in rdr.deserialize::<LabelRow>().enumerate() {
        let row = row.map_err(|e| ingest(&path, format!("row {}: {e}", i + 1)))?;
        if row.label > 1 {
            return Err(ingest(
                &path,
                format!("row {}: label must be 0 or 1, got {}", i + 1, row.label),
            ));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Loads every row of `dir/labels.csv`. A row whose file is missing or
/// unreadable fails the whole load, naming that row.
pub fn read_labeled_dir(dir: &Path) -> Result<Vec<LabeledImage>> {
    read_label_rows(dir)?
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let path = dir.join(&row.filename);
            if !path.is_file() {
                return Err(ingest(
                    &path,
                    format!("labels.csv row {} names a missing file `{}`", i + 1, row.filename),
                ));
            }
            Ok(LabeledImage {
                image: read_gray(&path)?,
                label: row.label,
                provenance: Provenance {
                    source_index: row.digit_index,
                    seed: row.seed,
                    name: row.filename,
                },
            })
        })
        .collect()
}

/// Rejects rasters with values outside `[0, 1]`.
pub fn check_unit_range(img: &Raster) -> Result<()> {
    let (lo, hi) = img.min_max();
    if lo < 0.0 || hi > 1.0 {
        return Err(shape_err(format!("tonal values span [{lo}, {hi}], outside [0, 1]")));
    }
    Ok(())
}
