//! Binning of `(time, channel)` event streams into count sequences.
//!
//! Text format accepted by [`parse_event_text`]: one event per line as
//! `time channel`, separated by whitespace. `time` is a non-negative decimal
//! in the same unit as the bin width, `channel` a zero-based integer. Blank
//! lines and lines starting with `#` are skipped.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Vector;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventBinSpec {
    pub num_channels: usize,
    pub bin_width: f64,
    pub num_bins: usize,
}

impl EventBinSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.bin_width > 0.0 && self.bin_width.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "bin width {} must be positive",
                self.bin_width
            )));
        }
        if self.num_channels == 0 || self.num_bins == 0 {
            return Err(Error::InvalidConfig("event binning needs channels and bins".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinnedEvents {
    /// `num_bins` steps of `num_channels` counts.
    pub counts: Vec<Vector>,
    /// Events at or after `num_bins * bin_width`.
    pub dropped: usize,
}

/// Counts events per half-open bin `[k·w, (k+1)·w)` and channel.
pub fn bin_event_stream(events: &[(f64, usize)], spec: &EventBinSpec) -> Result<BinnedEvents> {
    spec.validate()?;
    let mut counts = vec![Vector::zeros(spec.num_channels); spec.num_bins];
    let mut dropped = 0;
    for &(time, channel) in events {
        if channel >= spec.num_channels {
            return Err(Error::ChannelOutOfRange {
                channel,
                channels: spec.num_channels,
            });
        }
        if !(time >= 0.0 && time.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "event time {time} must be finite and >= 0"
            )));
        }
        let bin = (time / spec.bin_width).floor();
        if bin >= spec.num_bins as f64 {
            dropped += 1;
        } else {
            counts[bin as usize][channel] += 1.0;
        }
    }
    Ok(BinnedEvents { counts, dropped })
}

pub fn parse_event_text(text: &str) -> Result<Vec<(f64, usize)>> {
    let mut events = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let malformed = |reason: &str| Error::MalformedEvent {
            line: i + 1,
            reason: reason.to_string(),
        };
        let mut fields = line.split_whitespace();
        let (Some(t), Some(c), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(malformed("expected `time channel`"));
        };
        let time: f64 = t.parse().map_err(|_| malformed("time is not a number"))?;
        let channel: usize = c
            .parse()
            .map_err(|_| malformed("channel is not a non-negative integer"))?;
        events.push((time, channel));
    }
    Ok(events)
}

pub fn read_event_file(path: impl AsRef<Path>) -> Result<Vec<(f64, usize)>> {
    parse_event_text(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SPEC: EventBinSpec = EventBinSpec {
        num_channels: 3,
        bin_width: 10.0,
        num_bins: 4,
    };

    #[test]
    fn half_open_boundaries() {
        let b = bin_event_stream(&[(0.0, 1), (9.9, 1), (10.0, 2)], &SPEC).unwrap();
        assert_eq!(b.counts[0][1], 2.0);
        assert_eq!(b.counts[1][2], 1.0);
        assert_eq!(b.counts[0][2], 0.0);
        assert_eq!(b.dropped, 0);
    }

    #[test]
    fn counts_and_drops() {
        let b = bin_event_stream(&[(21.0, 0), (22.0, 0), (29.0, 0), (40.0, 0), (1e9, 2)], &SPEC).unwrap();
        assert_eq!(b.counts[2][0], 3.0);
        assert_eq!(b.dropped, 2);
        assert_eq!(b.counts.len(), 4);
    }

    #[test]
    fn rejects_bad_events() {
        assert!(matches!(
            bin_event_stream(&[(1.0, 3)], &SPEC),
            Err(Error::ChannelOutOfRange {
                channel: 3,
                channels: 3
            })
        ));
        assert!(bin_event_stream(&[(-1.0, 0)], &SPEC).is_err());
        let bad = EventBinSpec { bin_width: 0.0, ..SPEC };
        assert!(bin_event_stream(&[], &bad).is_err());
    }

    #[test]
    fn parses_text_format() {
        let text = "# time channel\n0.5 2\n\n  12 0  \n";
        assert_eq!(parse_event_text(text).unwrap(), vec![(0.5, 2), (12.0, 0)]);
        assert!(matches!(
            parse_event_text("1.0 2\n1.0\n"),
            Err(Error::MalformedEvent { line: 2, .. })
        ));
        assert!(parse_event_text("1.0 -2").is_err());
        assert!(parse_event_text("1.0 2 3").is_err());
    }

    proptest! {
        #[test]
        fn binning_conserves_events(events in prop::collection::vec((0.0f64..60.0, 0usize..3), 0..200)) {
            let b = bin_event_stream(&events, &SPEC).unwrap();
            let binned: f64 = b.counts.iter().flat_map(|x| x.iter()).sum();
            prop_assert_eq!(binned as usize + b.dropped, events.len());
        }
    }
}
