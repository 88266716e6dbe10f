//! Two-stage pedestrian intent prediction: SORT-style tracking with an unscented
//! Kalman filter, followed by a spatio-temporal DenseNet over per-track crop windows.

pub mod geometry;
pub mod tracking;
pub mod stdensenet;
pub mod pipeline;
