//! Frame and event data: domain types, the synthetic scene generator, the
//! idealized event simulator, blur synthesis and the on-disk formats.

pub mod blur;
pub mod fixtures;
pub mod io;
pub mod script;
pub mod simulate;
pub mod types;

pub use blur::{average_images, synthesize_blur};
pub use io::{load_dataset, read_events, write_dataset, write_events, Manifest, ManifestFrame};
pub use script::{Background, Flicker, Intrinsics, PathKey, SceneScript, Shadow, Sprite, Texture};
pub use simulate::{log_intensity, simulate_events, simulate_events_with, EventSimulator, SimulatorConfig, LOG_FLOOR};
pub use types::{CameraModel, Event, EventStream, Frame, FrameSequence};
