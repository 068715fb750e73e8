use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::Vec2;

#[derive(Debug, Error, PartialEq)]
pub enum TrackError {
    #[error("track payload is empty")]
    Empty,
    #[error("frame rate must be positive and finite, got {0}")]
    InvalidFrameRate(f64),
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: non-finite value")]
    NonFinite { line: usize },
    #[error("line {line}: duplicate row for frame {frame}, pedestrian {ped_id}")]
    Duplicate { line: usize, frame: u64, ped_id: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackSample {
    pub frame: u64,
    /// Seconds, `frame / frame_rate`.
    pub time: f64,
    pub position: Vec2,
}

/// Recorded trajectory of one pedestrian, samples strictly increasing in time.
#[derive(Debug, Clone, PartialEq)]
pub struct PedestrianTrack {
    pub ped_id: u64,
    samples: Vec<TrackSample>,
}

impl PedestrianTrack {
    /// Builds a track from `(time, position)` pairs. Frames are numbered by
    /// `round(time * frame_rate)`.
    ///
    /// Panics if fewer than two samples are given, times are not strictly
    /// increasing, or any value is non-finite.
    pub fn from_samples(ped_id: u64, frame_rate: f64, samples: &[(f64, Vec2)]) -> Self {
        assert!(samples.len() >= 2, "track {ped_id} needs at least two samples");
        let samples: Vec<TrackSample> = samples
            .iter()
            .map(|&(time, position)| {
                assert!(time.is_finite() && position.iter().all(|v| v.is_finite()));
                TrackSample {
                    frame: (time * frame_rate).round() as u64,
                    time,
                    position,
                }
            })
            .collect();
        assert!(
            samples.windows(2).all(|w| w[0].time < w[1].time),
            "track {ped_id} times must be strictly increasing"
        );
        Self { ped_id, samples }
    }

    pub fn samples(&self) -> &[TrackSample] {
        &self.samples
    }

    pub fn start_time(&self) -> f64 {
        self.samples[0].time
    }

    pub fn end_time(&self) -> f64 {
        self.samples[self.samples.len() - 1].time
    }

    pub fn covers(&self, t: f64) -> bool {
        t >= self.start_time() && t <= self.end_time()
    }

    /// Linearly interpolated position, `None` outside the recorded span.
    /// Exact at recorded sample times.
    pub fn position_at(&self, t: f64) -> Option<Vec2> {
        if !self.covers(t) {
            return None;
        }
        let after = self.samples.partition_point(|s| s.time <= t);
        let lo = &self.samples[after - 1];
        if lo.time == t || after == self.samples.len() {
            return Some(lo.position);
        }
        let hi = &self.samples[after];
        let w = (t - lo.time) / (hi.time - lo.time);
        Some(lo.position + (hi.position - lo.position) * w)
    }

    /// Like [`position_at`](Self::position_at) but clamped to the first/last
    /// recorded position outside the span.
    pub fn position_clamped(&self, t: f64) -> Vec2 {
        if t <= self.start_time() {
            self.samples[0].position
        } else if t >= self.end_time() {
            self.samples[self.samples.len() - 1].position
        } else {
            self.position_at(t).expect("inside span")
        }
    }

    /// Observed positions at `t - j*spacing` for `j = len-1, ..., 0`, oldest
    /// first, keeping only the contiguous run that lies inside the span.
    pub fn history(&self, t: f64, spacing: f64, len: usize) -> Vec<Vec2> {
        let mut newest_first = Vec::with_capacity(len);
        for j in 0..len {
            match self.position_at(t - j as f64 * spacing) {
                Some(p) => newest_first.push(p),
                None => break,
            }
        }
        newest_first.reverse();
        newest_first
    }
}

fn parse_index(field: &str, what: &str, line: usize) -> Result<u64, TrackError> {
    let malformed = |reason: String| TrackError::Malformed { line, reason };
    if let Ok(v) = field.parse::<u64>() {
        return Ok(v);
    }
    // ETH exports write integral columns as floats ("780.0").
    let v: f64 = field
        .parse()
        .map_err(|_| malformed(format!("{what} `{field}` is not a number")))?;
    if !v.is_finite() {
        return Err(TrackError::NonFinite { line });
    }
    if v < 0.0 || v.fract() != 0.0 || v > u64::MAX as f64 {
        return Err(malformed(format!("{what} `{field}` is not a non-negative integer")));
    }
    Ok(v as u64)
}

fn parse_coord(field: &str, line: usize) -> Result<f64, TrackError> {
    let v: f64 = field.parse().map_err(|_| TrackError::Malformed {
        line,
        reason: format!("coordinate `{field}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(TrackError::NonFinite { line });
    }
    Ok(v)
}

/// Parses whitespace-separated `frame ped_id x y` rows. Blank lines and text
/// after `#` are ignored. Pedestrians with a single row cannot be interpolated
/// and are dropped with a warning.
pub fn parse_tracks(text: &str, frame_rate: f64) -> Result<Vec<PedestrianTrack>, TrackError> {
    if !(frame_rate.is_finite() && frame_rate > 0.0) {
        return Err(TrackError::InvalidFrameRate(frame_rate));
    }
    let mut by_ped: BTreeMap<u64, BTreeMap<u64, Vec2>> = BTreeMap::new();
    let mut rows = 0usize;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(TrackError::Malformed {
                line,
                reason: format!("expected 4 fields `frame ped_id x y`, found {}", fields.len()),
            });
        }
        let frame = parse_index(fields[0], "frame", line)?;
        let ped_id = parse_index(fields[1], "pedestrian id", line)?;
        let x = parse_coord(fields[2], line)?;
        let y = parse_coord(fields[3], line)?;
        if by_ped
            .entry(ped_id)
            .or_default()
            .insert(frame, Vec2::new(x, y))
            .is_some()
        {
            return Err(TrackError::Duplicate { line, frame, ped_id });
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(TrackError::Empty);
    }
    let mut tracks = Vec::with_capacity(by_ped.len());
    for (ped_id, frames) in by_ped {
        if frames.len() < 2 {
            log::warn!("pedestrian {ped_id} has a single sample; dropped");
            continue;
        }
        let samples = frames
            .into_iter()
            .map(|(frame, position)| TrackSample {
                frame,
                time: frame as f64 / frame_rate,
                position,
            })
            .collect();
        tracks.push(PedestrianTrack { ped_id, samples });
    }
    Ok(tracks)
}

/// Writes tracks back as `frame ped_id x y` rows, ordered by frame then id.
/// Coordinates use the shortest round-tripping decimal form.
pub fn serialize_tracks(tracks: &[PedestrianTrack]) -> String {
    let mut rows: Vec<(u64, u64, Vec2)> = tracks
        .iter()
        .flat_map(|t| t.samples.iter().map(move |s| (s.frame, t.ped_id, s.position)))
        .collect();
    rows.sort_by_key(|&(frame, id, _)| (frame, id));
    let mut out = String::new();
    for (frame, id, p) in rows {
        let _ = writeln!(out, "{frame} {id} {:?} {:?}", p.x, p.y);
    }
    out
}

/// Every pedestrian whose recorded span contains `t`, with its interpolated position.
pub fn pedestrians_at(tracks: &[PedestrianTrack], t: f64) -> Vec<(u64, Vec2)> {
    tracks
        .iter()
        .filter_map(|track| track.position_at(t).map(|p| (track.ped_id, p)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn eth_row_maps_frame_to_seconds() {
        let tracks = parse_tracks("780 3 4.25 6.10\n790 3 4.5 6.0\n", 2.5).unwrap();
        assert_eq!(tracks.len(), 1);
        let s = tracks[0].samples()[0];
        assert_eq!(tracks[0].ped_id, 3);
        assert_eq!(s.time, 312.0);
        assert_eq!(s.position, Vec2::new(4.25, 6.10));
    }

    #[test]
    fn rows_sorted_by_time() {
        let tracks = parse_tracks("# header\n1 1 1.0 0\n\n0 1 0.0 0 # first\n", 2.5).unwrap();
        let times: Vec<f64> = tracks[0].samples().iter().map(|s| s.time).collect();
        assert_eq!(times, vec![0.0, 0.4]);
    }

    #[test]
    fn float_formatted_indices_accepted() {
        let tracks = parse_tracks("780.0 3.0 4.25 6.10\n790.0 3.0 1 1\n", 2.5).unwrap();
        assert_eq!(tracks[0].samples()[0].frame, 780);
    }

    #[test]
    fn errors_report_line_numbers() {
        assert_eq!(
            parse_tracks("0 3 1 1\n780 3 4.25\n", 2.5).unwrap_err(),
            TrackError::Malformed {
                line: 2,
                reason: "expected 4 fields `frame ped_id x y`, found 3".into()
            }
        );
        assert_eq!(
            parse_tracks("0 1 0 0\n0 1 1 1\n", 2.5).unwrap_err(),
            TrackError::Duplicate { line: 2, frame: 0, ped_id: 1 }
        );
        assert_eq!(
            parse_tracks("0 1 NaN 0\n", 2.5).unwrap_err(),
            TrackError::NonFinite { line: 1 }
        );
        assert!(matches!(
            parse_tracks("0 1 abc 0\n", 2.5).unwrap_err(),
            TrackError::Malformed { line: 1, .. }
        ));
        assert!(matches!(
            parse_tracks("1.5 1 0 0\n", 2.5).unwrap_err(),
            TrackError::Malformed { line: 1, .. }
        ));
        assert_eq!(parse_tracks("  \n# only\n", 2.5).unwrap_err(), TrackError::Empty);
        assert_eq!(parse_tracks("", 2.5).unwrap_err(), TrackError::Empty);
        assert!(matches!(
            parse_tracks("0 1 0 0\n", 0.0).unwrap_err(),
            TrackError::InvalidFrameRate(_)
        ));
    }

    #[test]
    fn singleton_pedestrians_dropped() {
        let tracks = parse_tracks("0 1 0 0\n0 2 1 1\n1 2 2 2\n", 2.5).unwrap();
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].ped_id, 2);
    }

    #[test]
    fn interpolation_span_and_endpoints() {
        let track =
            PedestrianTrack::from_samples(1, 1.0, &[(0.0, Vec2::zeros()), (1.0, Vec2::new(1.0, 0.0))]);
        let tracks = vec![track];
        assert_eq!(pedestrians_at(&tracks, 0.5), vec![(1, Vec2::new(0.5, 0.0))]);
        assert_eq!(pedestrians_at(&tracks, 1.0), vec![(1, Vec2::new(1.0, 0.0))]);
        assert_eq!(pedestrians_at(&tracks, 0.0), vec![(1, Vec2::zeros())]);
        assert!(pedestrians_at(&tracks, -0.1).is_empty());
        assert!(pedestrians_at(&tracks, 1.01).is_empty());
    }

    #[test]
    fn history_stops_at_track_start() {
        let track = PedestrianTrack::from_samples(
            1,
            2.5,
            &[(0.0, Vec2::zeros()), (0.4, Vec2::new(0.4, 0.0)), (0.8, Vec2::new(0.8, 0.0))],
        );
        let h = track.history(0.8, 0.4, 5);
        assert_eq!(h, vec![Vec2::zeros(), Vec2::new(0.4, 0.0), Vec2::new(0.8, 0.0)]);
        assert_eq!(track.history(0.0, 0.4, 5).len(), 1);
        assert_eq!(track.position_clamped(9.0), Vec2::new(0.8, 0.0));
        assert_eq!(track.position_clamped(-1.0), Vec2::zeros());
    }

    fn payload() -> impl Strategy<Value = Vec<(u64, u64, f64, f64)>> {
        proptest::collection::btree_map(
            (0u64..200, 0u64..6),
            (-50.0f64..50.0, -50.0f64..50.0),
            1..60,
        )
        .prop_map(|m| m.into_iter().map(|((f, id), (x, y))| (f, id, x, y)).collect())
    }

    proptest! {
        #[test]
        fn serialize_round_trips_rows(rows in payload()) {
            let text: String = rows.iter().map(|(f, id, x, y)| format!("{f} {id} {x:?} {y:?}\n")).collect();
            let tracks = match parse_tracks(&text, 2.5) {
                Ok(t) => t,
                Err(TrackError::Empty) => return Ok(()),
                Err(e) => panic!("{e}"),
            };
            if tracks.is_empty() {
                return Ok(());
            }
            let again = parse_tracks(&serialize_tracks(&tracks), 2.5).unwrap();
            prop_assert_eq!(&tracks, &again);
            // every multi-sample pedestrian's rows survive untouched
            let mut counts = BTreeMap::new();
            for (_, id, _, _) in &rows { *counts.entry(*id).or_insert(0usize) += 1; }
            let kept: Vec<(u64, u64, f64, f64)> = rows.iter().copied().filter(|r| counts[&r.1] >= 2).collect();
            let mut emitted: Vec<(u64, u64, f64, f64)> = tracks.iter()
                .flat_map(|t| t.samples().iter().map(move |s| (s.frame, t.ped_id, s.position.x, s.position.y)))
                .collect();
            emitted.sort_by_key(|r| (r.1, r.0));
            let mut kept_sorted = kept;
            kept_sorted.sort_by_key(|r| (r.1, r.0));
            prop_assert_eq!(emitted, kept_sorted);
        }

        #[test]
        fn replay_exact_at_samples_and_bounded(rows in payload(), t in 0.0f64..90.0) {
            let text: String = rows.iter().map(|(f, id, x, y)| format!("{f} {id} {x:?} {y:?}\n")).collect();
            let Ok(tracks) = parse_tracks(&text, 2.5) else { return Ok(()) };
            prop_assert!(pedestrians_at(&tracks, t).len() <= tracks.len());
            for track in &tracks {
                for s in track.samples() {
                    prop_assert_eq!(track.position_at(s.time), Some(s.position));
                }
            }
        }
    }
}
