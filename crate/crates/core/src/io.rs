//! File formats.
//!
//! * Observations: JSON Lines, one frame per line,
//!   `{"frame": 3, "corners": [[id, u, v], ...]}`.
//! * Targets, camera specs, truth records and reports: JSON documents.
//! * Study summaries: CSV (`group,model,param,stat,value`) and a TSV
//!   failure table.
//!
//! Floating-point values are written in their shortest exact decimal form,
//! so every file parses back to the same bits.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibrate::{Frame, ObservationSet};
use crate::models::CameraSpec;
use crate::simulate::Truth;
use crate::targets::{TargetConfig, TargetError, TargetLayout};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{}:{line}: {source}", path.display())]
    Line {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{}: {source}", path.display())]
    Target {
        path: PathBuf,
        #[source]
        source: TargetError,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn json_err(path: &Path) -> impl FnOnce(serde_json::Error) -> IoError + '_ {
    move |source| IoError::Json {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(json_err(path))
}

/// Writes pretty-printed JSON followed by a newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).map_err(json_err(path))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    fs::write(path, text).map_err(io_err(path))
}

/// Parses observation lines. Blank lines are skipped; errors carry the
/// 1-based line number.
pub fn parse_observations(text: &str, path: &Path) -> Result<ObservationSet, IoError> {
    let mut frames = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let frame: Frame = serde_json::from_str(line).map_err(|source| IoError::Line {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        frames.push(frame);
    }
    Ok(ObservationSet { frames })
}

pub fn read_observations(path: &Path) -> Result<ObservationSet, IoError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut text = String::new();
    for line in BufReader::new(file).lines() {
        text.push_str(&line.map_err(io_err(path))?);
        text.push('\n');
    }
    parse_observations(&text, path)
}

pub fn observations_to_string(obs: &ObservationSet) -> String {
    let mut out = String::new();
    for f in &obs.frames {
        out.push_str(&serde_json::to_string(f).expect("frames serialize"));
        out.push('\n');
    }
    out
}

pub fn write_observations(path: &Path, obs: &ObservationSet) -> Result<(), IoError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    w.write_all(observations_to_string(obs).as_bytes())
        .and_then(|_| w.flush())
        .map_err(io_err(path))
}

/// Reads a target description and builds its point layout. Files written
/// from a [`TargetLayout`] are accepted too; their point list is rebuilt.
pub fn read_target(path: &Path) -> Result<TargetLayout, IoError> {
    let config: TargetConfig = read_json(path)?;
    config.build().map_err(|source| IoError::Target {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SpecFile {
    Spec(CameraSpec),
    Truth(Truth),
    Wrapped { spec: CameraSpec },
}

/// Reads a camera spec from a spec file, a truth record or a report.
pub fn read_spec(path: &Path) -> Result<CameraSpec, IoError> {
    Ok(match read_json::<SpecFile>(path)? {
        SpecFile::Spec(s) => s,
        SpecFile::Truth(t) => t.spec,
        SpecFile::Wrapped { spec } => spec,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibrate::Corner;
    use crate::geometry::Pixel;

    #[test]
    fn jsonl_round_trip() {
        let obs = ObservationSet {
            frames: vec![
                Frame {
                    id: 0,
                    corners: vec![
                        Corner {
                            id: 3,
                            pixel: Pixel::new(0.1 + 0.2, 1.0 / 3.0),
                        },
                        Corner {
                            id: 7,
                            pixel: Pixel::new(1599.999999999, 5e-324),
                        },
                    ],
                },
                Frame {
                    id: 12,
                    corners: vec![],
                },
            ],
        };
        let text = observations_to_string(&obs);
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("{\"frame\":0,\"corners\":[[3,"));
        let back = parse_observations(&text, Path::new("x")).unwrap();
        assert_eq!(back, obs);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"frame\":0,\"corners\":[]}\n\n{\"frame\":1,\"corners\":[[1,2]]}\n";
        match parse_observations(text, Path::new("obs.jsonl")) {
            Err(e @ IoError::Line { line: 3, .. }) => assert!(e.to_string().starts_with("obs.jsonl:3:")),
            other => panic!("unexpected {other:?}"),
        }
    }
}
