//! Object tracking through the event stream: template matching on event-count
//! images feeding a constant-velocity Kalman filter.

pub mod kalman;
pub mod template;
pub mod tracker;

pub use kalman::{ekf_predict, ekf_update, ekf_update_with, Innovation, TrackState};
pub use template::{gaussian_blur, match_in_image, match_template, Match, Template};
pub use tracker::{track_all, track_object, TrackConfig, TrackPoint, Trajectory};
