//! Frame sequences stored as PNG files named by frame index, e.g. `000042.png`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use pedestrian_intent::pipeline::{Frame, FrameSource, PipelineError};

use crate::error::CliError;

pub struct PngFrames {
    dir: PathBuf,
    files: BTreeMap<i64, PathBuf>,
}

impl PngFrames {
    /// Indexes every `*.png` in `dir` whose stem is an integer.
    pub fn open(dir: &Path) -> Result<Self, CliError> {
        let mut files = BTreeMap::new();
        let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir.display(), e))?;
        for entry in entries {
            let path = entry.map_err(|e| CliError::io(dir.display(), e))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("png") {
                continue;
            }
            let Some(index) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<i64>().ok()) else {
                continue;
            };
            if files.insert(index, path.clone()).is_some() {
                return Err(CliError::Validation(format!("two files name frame {index} in {}", dir.display())));
            }
        }
        Ok(Self { dir: dir.to_path_buf(), files })
    }

    pub fn indices(&self) -> impl Iterator<Item = i64> + '_ {
        self.files.keys().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }
}

impl FrameSource for PngFrames {
    fn frame(&self, index: i64) -> Result<Frame, PipelineError> {
        let path = self.files.get(&index).ok_or_else(|| {
            PipelineError::InvalidFrame(format!("frame {index} is missing from {}", self.dir.display()))
        })?;
        let img = image::open(path)
            .map_err(|e| PipelineError::InvalidFrame(format!("{}: {e}", path.display())))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        Frame::new(index, w as usize, h as usize, img.into_raw())
    }
}

pub fn frame_file_name(index: i64) -> String {
    format!("{index:06}.png")
}

pub fn write_png(frame: &Frame, path: &Path) -> Result<(), CliError> {
    let img = image::RgbImage::from_raw(frame.width() as u32, frame.height() as u32, frame.pixels().to_vec())
        .ok_or_else(|| CliError::Internal("frame buffer does not match its size".into()))?;
    img.save(path).map_err(|e| CliError::io(path.display(), e))
}
