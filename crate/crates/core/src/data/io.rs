//! Plain-text trajectory files: one `frame_id ped_id x y` sample per line.

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::real::Real;
use crate::state::{Track, TrajectorySet};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

/// Reads a trajectory file. `frame_dt` is the duration of one frame id step.
pub fn parse_trajectory_file<T: Real>(path: impl AsRef<Path>, frame_dt: T) -> Result<TrajectorySet<T>> {
    let file = std::fs::File::open(path)?;
    parse_trajectories(BufReader::new(file), frame_dt)
}

/// Parses trajectory text. Blank lines and `#` comments are skipped.
pub fn parse_trajectories<T: Real, R: Read>(reader: R, frame_dt: T) -> Result<TrajectorySet<T>> {
    let mut rows: BTreeMap<u64, BTreeMap<i64, Vec2<T>>> = BTreeMap::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let fields: Vec<&str> = body.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                detail: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let frame = parse_index(fields[0], line_no, "frame_id")?;
        let id = parse_index(fields[1], line_no, "ped_id")?;
        if id < 0 {
            return Err(Error::Parse {
                line: line_no,
                detail: "ped_id must be non-negative".into(),
            });
        }
        let x = parse_coord::<T>(fields[2], line_no, "x")?;
        let y = parse_coord::<T>(fields[3], line_no, "y")?;
        let track = rows.entry(id as u64).or_default();
        if track.insert(frame, Vec2::new(x, y)).is_some() {
            return Err(Error::Data(format!(
                "duplicate sample for pedestrian {id} at frame {frame} (line {line_no})"
            )));
        }
    }
    let tracks = rows
        .into_iter()
        .map(|(id, samples)| {
            let (frames, positions) = samples.into_iter().unzip();
            Track {
                id,
                frames,
                positions,
            }
        })
        .collect();
    TrajectorySet::new(frame_dt, tracks)
}

fn parse_index(s: &str, line: usize, what: &str) -> Result<i64> {
    if let Ok(v) = s.parse::<i64>() {
        return Ok(v);
    }
    // Some exports write integral ids as floats ("12.0").
    match s.parse::<f64>() {
        Ok(f) if f.is_finite() && f.fract() == 0.0 && f.abs() < 9.0e15 => Ok(f as i64),
        _ => Err(Error::Parse {
            line,
            detail: format!("{what} `{s}` is not an integer"),
        }),
    }
}

fn parse_coord<T: Real>(s: &str, line: usize, what: &str) -> Result<T> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(T::lit(v)),
        _ => Err(Error::Parse {
            line,
            detail: format!("{what} `{s}` is not a finite number"),
        }),
    }
}

/// Renders trajectories in the input format, ordered by frame then id.
pub fn format_trajectories<T: Real>(traj: &TrajectorySet<T>) -> String {
    let mut samples: Vec<(i64, u64, Vec2<T>)> = traj
        .tracks
        .iter()
        .flat_map(|t| t.frames.iter().zip(&t.positions).map(move |(&f, &p)| (f, t.id, p)))
        .collect();
    samples.sort_by_key(|&(f, id, _)| (f, id));
    let mut out = String::with_capacity(samples.len() * 32);
    for (f, id, p) in samples {
        let _ = writeln!(out, "{f} {id} {} {}", p.x, p.y);
    }
    out
}

pub fn write_trajectory_file<T: Real>(path: impl AsRef<Path>, traj: &TrajectorySet<T>) -> Result<()> {
    std::fs::write(path, format_trajectories(traj))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_frames_one_pedestrian() {
        let t = parse_trajectories::<f64, _>("0 1 0.0 0.0\n1 1 0.1 0.0".as_bytes(), 0.08).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.tracks[0].frames, vec![0, 1]);
        assert_eq!(t.tracks[0].positions[1], Vec2::new(0.1, 0.0));
    }

    #[test]
    fn empty_input_is_empty_set() {
        let t = parse_trajectories::<f64, _>("".as_bytes(), 0.08).unwrap();
        assert!(t.is_empty());
    }

    #[test]
    fn malformed_line_names_line() {
        let err = parse_trajectories::<f64, _>("0 1 a b".as_bytes(), 0.08).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        let err = parse_trajectories::<f64, _>("0 1 0 0\n\n1 1 0".as_bytes(), 0.08).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
    }

    #[test]
    fn duplicates_rejected() {
        let err = parse_trajectories::<f64, _>("0 1 0 0\n0 1 1 1\n".as_bytes(), 0.08).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn unsorted_rows_are_grouped_and_sorted() {
        let text = "2 5 2 0\n0 5 0 0\n1 3 9 9\n1 5 1 0\n";
        let t = parse_trajectories::<f64, _>(text.as_bytes(), 0.4).unwrap();
        assert_eq!(t.tracks.iter().map(|t| t.id).collect::<Vec<_>>(), vec![3, 5]);
        assert_eq!(t.track(5).unwrap().frames, vec![0, 1, 2]);
        let again = parse_trajectories::<f64, _>(format_trajectories(&t).as_bytes(), 0.4).unwrap();
        assert_eq!(again, t);
    }
}
