use std::collections::VecDeque;

use crate::stdensenet::{Normalization, Tensor5};

use super::frame::Patch;
use super::PipelineError;

/// Clip length fed to the classifier.
pub const WINDOW_LEN: usize = 16;

/// Sliding buffer of the most recent crops of one track, oldest first.
#[derive(Debug, Clone)]
pub struct TrackWindow {
    track_id: u64,
    capacity: usize,
    crops: VecDeque<Patch>,
    newest_frame: Option<i64>,
}

impl TrackWindow {
    pub fn new(track_id: u64) -> Self {
        Self::with_capacity(track_id, WINDOW_LEN)
    }

    pub fn with_capacity(track_id: u64, capacity: usize) -> Self {
        Self {
            track_id,
            capacity: capacity.max(1),
            crops: VecDeque::with_capacity(capacity),
            newest_frame: None,
        }
    }

    pub fn track_id(&self) -> u64 {
        self.track_id
    }

    pub fn len(&self) -> usize {
        self.crops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.crops.is_empty()
    }

    pub fn newest_frame(&self) -> Option<i64> {
        self.newest_frame
    }

    pub fn crops(&self) -> impl Iterator<Item = &Patch> {
        self.crops.iter()
    }

    /// Appends a crop of the same size as the ones already held, evicting the oldest.
    pub fn push(&mut self, frame_index: i64, patch: Patch) -> Result<(), PipelineError> {
        if let Some(first) = self.crops.front() {
            if first.size != patch.size {
                return Err(PipelineError::InvalidConfig(format!(
                    "crop size {} differs from window crop size {}",
                    patch.size, first.size
                )));
            }
        }
        if self.crops.len() == self.capacity {
            self.crops.pop_front();
        }
        self.crops.push_back(patch);
        self.newest_frame = Some(frame_index);
        Ok(())
    }

    pub fn is_ready(&self) -> bool {
        self.crops.len() == self.capacity
    }

    pub fn clear(&mut self) {
        self.crops.clear();
        self.newest_frame = None;
    }

    /// Normalized `(1, 3, T, S, S)` clip with the temporal axis oldest first.
    pub fn to_tensor(&self, normalization: &Normalization) -> Result<Tensor5<f32>, PipelineError> {
        if !self.is_ready() {
            return Err(PipelineError::WindowNotReady {
                track_id: self.track_id,
                len: self.crops.len(),
            });
        }
        let size = self.crops[0].size;
        let t = self.crops.len();
        let plane = size * size;
        let mut data = vec![0.0f32; 3 * t * plane];
        for (d, crop) in self.crops.iter().enumerate() {
            for (p, rgb) in crop.pixels.chunks_exact(3).enumerate() {
                for c in 0..3 {
                    data[(c * t + d) * plane + p] = normalization.apply(c, rgb[c]) as f32;
                }
            }
        }
        Ok(Tensor5::from_vec([1, 3, t, size, size], data)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patch(v: u8) -> Patch {
        Patch { size: 2, pixels: vec![v; 12] }
    }

    #[test]
    fn readiness_and_eviction() {
        let mut w = TrackWindow::new(4);
        for i in 1..=15 {
            w.push(i, patch(i as u8)).unwrap();
            assert!(!w.is_ready());
        }
        w.push(16, patch(16)).unwrap();
        assert!(w.is_ready());
        w.push(17, patch(17)).unwrap();
        assert!(w.is_ready());
        let firsts: Vec<u8> = w.crops().map(|p| p.pixels[0]).collect();
        assert_eq!(firsts, (2..=17).collect::<Vec<u8>>());
        assert_eq!(w.newest_frame(), Some(17));
    }

    #[test]
    fn tensor_layout_is_channel_time_row_col() {
        let mut w = TrackWindow::new(1);
        for i in 0..16u8 {
            let mut px = Vec::new();
            for p in 0..4u8 {
                px.extend_from_slice(&[i, 100 + p, 200]);
            }
            w.push(i64::from(i), Patch { size: 2, pixels: px }).unwrap();
        }
        let norm = Normalization { scale: 1.0, mean: vec![0.0; 3], std: vec![1.0; 3] };
        let t = w.to_tensor(&norm).unwrap();
        assert_eq!(t.dims(), [1, 3, 16, 2, 2]);
        assert_eq!(t.get(0, 0, 5, 1, 0), 5.0);
        assert_eq!(t.get(0, 1, 9, 1, 1), 103.0);
        assert_eq!(t.get(0, 2, 0, 0, 0), 200.0);
    }

    #[test]
    fn partial_window_has_no_tensor() {
        let mut w = TrackWindow::new(2);
        w.push(0, patch(1)).unwrap();
        assert!(matches!(
            w.to_tensor(&Normalization::default()),
            Err(PipelineError::WindowNotReady { len: 1, .. })
        ));
        assert!(w.push(1, Patch { size: 3, pixels: vec![0; 27] }).is_err());
    }
}
