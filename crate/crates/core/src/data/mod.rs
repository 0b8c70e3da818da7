//! Trajectory ingestion, resampling, episode windows and synthetic scenarios.

mod episode;
mod io;
mod spline;
mod synth;

pub use episode::{make_episodes, split, Episode, EpisodeOptions, Episodes};
pub(crate) use episode::pedestrian_at;
pub use io::{format_trajectories, parse_trajectories, parse_trajectory_file, write_trajectory_file};
pub use spline::{resample_cubic, NaturalSpline, Resampled};
pub use synth::{synth_scenario, ScenarioKind, ScenarioSpec};
