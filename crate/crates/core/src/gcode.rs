//! A small G-code subset and its conversion to input time series.
//!
//! Supported words, one command per line:
//!
//! | line            | meaning                                    |
//! |-----------------|--------------------------------------------|
//! | `G0`/`G1 X Y Z F` | linear move, absolute mm, feed mm/min (modal) |
//! | `M3 S<W>`       | laser on at `S` watts                       |
//! | `M5`            | laser off                                   |
//! | `G4 P<s>`       | dwell for `P` seconds                       |
//! | `G21`, `G90`    | accepted and ignored (mm, absolute)         |
//!
//! `;` starts a comment; `( ... )` is an inline comment. Moves are sampled at
//! the end of each sample period so every move lands exactly on its target.

use serde::{Deserialize, Serialize};

use crate::dataset::{ChannelSpec, TimeSeriesDataset};
use crate::error::{Error, Result};

pub const X: &str = "x";
pub const Y: &str = "y";
pub const Z: &str = "z";
pub const SCAN_RATE: &str = "scan_rate";
pub const HEADING: &str = "heading_deg";
pub const DISTANCE: &str = "distance_traveled";
pub const LASER_POWER: &str = "laser_power";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Command {
    /// Omitted axes keep their current value; omitted feed reuses the last one.
    LinearMove { x: Option<f64>, y: Option<f64>, z: Option<f64>, feed: Option<f64> },
    SetPower { watts: f64 },
    Dwell { seconds: f64 },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ToolpathProgram {
    pub commands: Vec<Command>,
}

fn strip_comments(line: &str) -> String {
    let line = line.split(';').next().unwrap_or("");
    let mut out = String::with_capacity(line.len());
    let mut depth = 0usize;
    for c in line.chars() {
        match c {
            '(' => depth += 1,
            ')' => depth = depth.saturating_sub(1),
            _ if depth == 0 => out.push(c),
            _ => {}
        }
    }
    out
}

fn number(line: usize, token: &str) -> Result<f64> {
    token
        .get(1..)
        .and_then(|s| s.parse::<f64>().ok())
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::MalformedNumber { line, token: token.to_string() })
}

pub fn parse_gcode_subset(text: &str) -> Result<ToolpathProgram> {
    let mut commands = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let cleaned = strip_comments(raw).to_ascii_uppercase();
        let mut words = cleaned.split_whitespace();
        let Some(head) = words.next() else { continue };
        let rest: Vec<&str> = words.collect();
        let unsupported = |t: &str| Error::UnsupportedWord { line, token: t.to_string() };
        let code = |letter: char| -> Option<u32> {
            head.strip_prefix(letter).and_then(|n| n.parse::<u32>().ok())
        };
        match (head.chars().next(), code('G'), code('M')) {
            (Some('G'), Some(0 | 1), _) => {
                let (mut x, mut y, mut z, mut feed) = (None, None, None, None);
                for w in &rest {
                    let v = number(line, w)?;
                    match w.as_bytes()[0] {
                        b'X' => x = Some(v),
                        b'Y' => y = Some(v),
                        b'Z' => z = Some(v),
                        b'F' => feed = Some(v),
                        _ => return Err(unsupported(w)),
                    }
                }
                commands.push(Command::LinearMove { x, y, z, feed });
            }
            (Some('G'), Some(4), _) => {
                let mut seconds = None;
                for w in &rest {
                    match w.as_bytes()[0] {
                        b'P' => seconds = Some(number(line, w)?),
                        _ => return Err(unsupported(w)),
                    }
                }
                let seconds = seconds
                    .filter(|s| *s >= 0.0)
                    .ok_or_else(|| Error::MalformedNumber { line, token: head.to_string() })?;
                commands.push(Command::Dwell { seconds });
            }
            (Some('G'), Some(21 | 90), _) if rest.is_empty() => {}
            (Some('M'), _, Some(3)) => {
                let mut watts = None;
                for w in &rest {
                    match w.as_bytes()[0] {
                        b'S' => watts = Some(number(line, w)?),
                        _ => return Err(unsupported(w)),
                    }
                }
                let watts = watts.ok_or_else(|| Error::MalformedNumber { line, token: head.to_string() })?;
                commands.push(Command::SetPower { watts });
            }
            (Some('M'), _, Some(5)) if rest.is_empty() => commands.push(Command::SetPower { watts: 0.0 }),
            _ => return Err(unsupported(head)),
        }
    }
    Ok(ToolpathProgram { commands })
}

/// Samples the program at `sample_rate_hz`, starting from the origin with the
/// laser off. Channels: x, y, z, scan rate (mm/min), heading (degrees),
/// cumulative distance (mm) and laser power (W). Heading is held through
/// dwells.
pub fn program_to_timeseries(program: &ToolpathProgram, sample_rate_hz: f64) -> Result<TimeSeriesDataset> {
    if !(sample_rate_hz > 0.0) {
        return Err(Error::Config(format!("sample rate must be positive, got {sample_rate_hz}")));
    }
    let mut cols: [Vec<f64>; 7] = Default::default();
    let mut pos = [0.0f64; 3];
    let mut feed: Option<f64> = None;
    let mut power = 0.0;
    let mut heading = 0.0;
    let mut travelled = 0.0;
    let push = |cols: &mut [Vec<f64>; 7], p: [f64; 3], rate: f64, heading: f64, dist: f64, power: f64| {
        for (c, v) in cols.iter_mut().zip([p[0], p[1], p[2], rate, heading, dist, power]) {
            c.push(v);
        }
    };
    for (index, cmd) in program.commands.iter().enumerate() {
        match *cmd {
            Command::SetPower { watts } => power = watts,
            Command::Dwell { seconds } => {
                let n = (seconds * sample_rate_hz).round() as usize;
                for _ in 0..n {
                    push(&mut cols, pos, 0.0, heading, travelled, power);
                }
            }
            Command::LinearMove { x, y, z, feed: f } => {
                if f.is_some() {
                    feed = f;
                }
                let target = [x.unwrap_or(pos[0]), y.unwrap_or(pos[1]), z.unwrap_or(pos[2])];
                let d = [target[0] - pos[0], target[1] - pos[1], target[2] - pos[2]];
                let length = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                if length == 0.0 {
                    continue;
                }
                let rate = feed.filter(|f| *f > 0.0).ok_or(Error::ZeroFeedMove(index))?;
                let n = ((length / (rate / 60.0) * sample_rate_hz).round() as usize).max(1);
                if d[0] != 0.0 || d[1] != 0.0 {
                    heading = d[1].atan2(d[0]).to_degrees();
                }
                let start = pos;
                let base = travelled;
                for k in 1..=n {
                    let w = k as f64 / n as f64;
                    let p = if k == n {
                        target
                    } else {
                        [start[0] + w * d[0], start[1] + w * d[1], start[2] + w * d[2]]
                    };
                    push(&mut cols, p, rate, heading, base + w * length, power);
                }
                pos = target;
                travelled = base + length;
            }
        }
    }
    let names = [X, Y, Z, SCAN_RATE, HEADING, DISTANCE, LASER_POWER];
    let units = ["mm", "mm", "mm", "mm/min", "deg", "mm", "W"];
    TimeSeriesDataset::from_columns(
        "gcode",
        sample_rate_hz,
        names
            .iter()
            .zip(units)
            .zip(cols)
            .map(|((n, u), c)| (ChannelSpec::input(n, u), c))
            .collect(),
    )
}

/// Analytic path length of all moves.
pub fn path_length(program: &ToolpathProgram) -> f64 {
    let mut pos = [0.0f64; 3];
    let mut total = 0.0;
    for cmd in &program.commands {
        if let Command::LinearMove { x, y, z, .. } = *cmd {
            let t = [x.unwrap_or(pos[0]), y.unwrap_or(pos[1]), z.unwrap_or(pos[2])];
            total += ((t[0] - pos[0]).powi(2) + (t[1] - pos[1]).powi(2) + (t[2] - pos[2]).powi(2)).sqrt();
            pos = t;
        }
    }
    total
}

/// Serpentine deposition: alternating +X/-X tracks stepped in Y, layers
/// stacked in Z, laser on only while depositing a track.
pub fn serpentine_program(
    layers: usize,
    tracks: usize,
    track_length_mm: f64,
    hatch_mm: f64,
    layer_height_mm: f64,
    feed_mm_min: f64,
    power_w: f64,
) -> String {
    let mut g = String::from("G21\nG90\n");
    for layer in 0..layers {
        let z = (layer + 1) as f64 * layer_height_mm;
        g += &format!("G0 Z{z} F{feed_mm_min}\n");
        for t in 0..tracks {
            let y = t as f64 * hatch_mm;
            let (x0, x1) = if t % 2 == 0 { (0.0, track_length_mm) } else { (track_length_mm, 0.0) };
            g += &format!("G0 X{x0} Y{y}\nM3 S{power_w}\nG1 X{x1} F{feed_mm_min}\nM5\n");
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_move_parses() {
        let p = parse_gcode_subset("G1 X10 F600").unwrap();
        assert_eq!(
            p.commands,
            vec![Command::LinearMove { x: Some(10.0), y: None, z: None, feed: Some(600.0) }]
        );
    }

    #[test]
    fn rejects_unknown_words_and_bad_numbers() {
        assert!(matches!(
            parse_gcode_subset("G1 X1 F60\nM999"),
            Err(Error::UnsupportedWord { line: 2, .. })
        ));
        assert!(matches!(parse_gcode_subset("G1 Xabc"), Err(Error::MalformedNumber { line: 1, .. })));
        assert!(matches!(parse_gcode_subset("G1 Q3"), Err(Error::UnsupportedWord { .. })));
    }

    #[test]
    fn empty_and_comment_only_programs() {
        assert!(parse_gcode_subset("").unwrap().commands.is_empty());
        assert!(parse_gcode_subset("; header\n\n(setup)\n").unwrap().commands.is_empty());
        let p = parse_gcode_subset("G1 X5 (inline) F60 ; tail").unwrap();
        assert_eq!(p.commands.len(), 1);
    }

    #[test]
    fn ten_mm_at_600_mm_min() {
        let p = parse_gcode_subset("G1 X10 F600").unwrap();
        let ds = program_to_timeseries(&p, 100.0).unwrap();
        assert_eq!(ds.row_count(), 100);
        let x = ds.column(X).unwrap();
        assert_eq!(x[99], 10.0);
        for (k, v) in x.iter().enumerate() {
            assert!((v - 0.1 * (k + 1) as f64).abs() < 1e-12);
        }
        assert!(ds.column(SCAN_RATE).unwrap().iter().all(|&r| r == 600.0));
    }

    #[test]
    fn dwell_holds_position() {
        let p = parse_gcode_subset("G1 X1 F60\nG4 P0.5").unwrap();
        let ds = program_to_timeseries(&p, 100.0).unwrap();
        assert_eq!(ds.row_count(), 100 + 50);
        let x = ds.column(X).unwrap();
        assert!(x[100..].iter().all(|&v| v == 1.0));
        assert!(ds.column(SCAN_RATE).unwrap()[100..].iter().all(|&r| r == 0.0));
    }

    #[test]
    fn move_without_feed_fails() {
        let p = parse_gcode_subset("G1 X3").unwrap();
        assert!(matches!(program_to_timeseries(&p, 100.0), Err(Error::ZeroFeedMove(0))));
    }

    #[test]
    fn serpentine_kinematics() {
        let text = serpentine_program(2, 4, 20.0, 1.0, 0.5, 1200.0, 400.0);
        let p = parse_gcode_subset(&text).unwrap();
        let ds = program_to_timeseries(&p, 100.0).unwrap();
        let dist = ds.column(DISTANCE).unwrap();
        assert!(dist.windows(2).all(|w| w[1] >= w[0]));
        assert!((dist[dist.len() - 1] - path_length(&p)).abs() < 1e-9);
        // headings while the laser is on alternate between 0 and 180
        let heading = ds.column(HEADING).unwrap();
        let power = ds.column(LASER_POWER).unwrap();
        let mut track_headings = Vec::new();
        for i in 1..power.len() {
            if power[i] > 0.0 && power[i - 1] == 0.0 {
                track_headings.push(heading[i]);
            }
        }
        assert_eq!(track_headings.len(), 8);
        for w in track_headings.windows(2) {
            assert!(((w[1] - w[0]).abs() - 180.0).abs() < 1e-9);
        }
    }
}
