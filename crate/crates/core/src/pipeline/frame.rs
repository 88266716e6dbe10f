use crate::geometry::BBox;

use super::PipelineError;

/// One RGB frame, row-major `H × W × 3`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub index: i64,
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Frame {
    pub fn new(index: i64, width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, PipelineError> {
        if width == 0 || height == 0 || pixels.len() != width * height * 3 {
            return Err(PipelineError::InvalidFrame(format!(
                "frame {index}: {} bytes for {width}x{height} RGB",
                pixels.len()
            )));
        }
        Ok(Self { index, width, height, pixels })
    }

    pub fn filled(index: i64, width: usize, height: usize, rgb: [u8; 3]) -> Result<Self, PipelineError> {
        let pixels = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self::new(index, width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * 3 + c]
    }
}

/// Square RGB crop, row-major `size × size × 3`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    pub size: usize,
    pub pixels: Vec<u8>,
}

impl Patch {
    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.pixels[(y * self.size + x) * 3 + c]
    }
}

/// Index-space sample position of output pixel `j` when `extent` source pixels starting
/// at `start` are resampled onto `size` outputs (pixel centers at half-integers).
#[inline]
fn source_coord(start: f64, extent: f64, j: usize, size: usize) -> f64 {
    start + (j as f64 + 0.5) * extent / size as f64 - 0.5
}

/// Lower tap, upper tap and weight of the upper tap, with edge replication.
#[inline]
fn taps(coord: f64, len: usize) -> (usize, usize, f64) {
    let c = coord.clamp(0.0, (len - 1) as f64);
    let lo = c.floor() as usize;
    let hi = (lo + 1).min(len - 1);
    (lo, hi, c - lo as f64)
}

/// Clamps `bbox` to the frame and bilinearly resamples it to `size × size`.
pub fn crop_and_resize(frame: &Frame, bbox: &BBox, size: usize) -> Result<Patch, PipelineError> {
    if size == 0 {
        return Err(PipelineError::InvalidConfig("crop size must be >= 1".into()));
    }
    let clamped = bbox
        .clamp_to(frame.width as f64, frame.height as f64)
        .ok_or(PipelineError::OutsideFrame { frame: frame.index, bbox: *bbox })?;
    let xs: Vec<(usize, usize, f64)> = (0..size)
        .map(|j| taps(source_coord(clamped.x_min(), clamped.width(), j, size), frame.width))
        .collect();
    let mut pixels = Vec::with_capacity(size * size * 3);
    for i in 0..size {
        let (y0, y1, fy) = taps(source_coord(clamped.y_min(), clamped.height(), i, size), frame.height);
        for &(x0, x1, fx) in &xs {
            for c in 0..3 {
                let top = f64::from(frame.get(x0, y0, c)) * (1.0 - fx) + f64::from(frame.get(x1, y0, c)) * fx;
                let bottom = f64::from(frame.get(x0, y1, c)) * (1.0 - fx) + f64::from(frame.get(x1, y1, c)) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                pixels.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Ok(Patch { size, pixels })
}
