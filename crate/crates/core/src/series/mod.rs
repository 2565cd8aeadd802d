//! Hourly multichannel cell records and their seasonal segments.
//!
//! A [`TimeSeries`] holds one cell's channels on a shared hourly clock. The
//! clustering stage works on [`Segment`]s: length-`n` slices of the output
//! channel, one per seasonal cycle.

mod features;
mod ingest;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};

pub use features::{
    attach_handover_features, engineer_peak_features, featurize, pearson, pearson_select,
    ran_channels, ChannelSelection, FeatureConfig, FeatureSource, FeatureVariant, PeakProfile,
    PEAK_CHANNEL, WEEKEND_CHANNEL,
};
pub use ingest::{format_hour, ingest_csv, write_csv, IngestOptions, IngestReport};

/// Hours in a calendar day; the peak and weekend flags are keyed on it.
pub const HOURS_PER_DAY: i64 = 24;

/// Hour-of-day (0..24) of an absolute hour index counted from 1970-01-01T00.
pub fn hour_of_day(hour: i64) -> usize {
    hour.rem_euclid(HOURS_PER_DAY) as usize
}

/// Whether an absolute hour index falls on a Saturday or Sunday.
pub fn is_weekend(hour: i64) -> bool {
    // 1970-01-01 was a Thursday; weekday 0 = Monday.
    let weekday = (hour.div_euclid(HOURS_PER_DAY) + 3).rem_euclid(7);
    weekday >= 5
}

/// One named channel of a [`TimeSeries`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub name: String,
    pub values: Vec<f64>,
}

/// A cell's hourly record. All channels share `start_time` and length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    cell_id: String,
    start_time: i64,
    channels: Vec<Channel>,
    output: String,
}

impl TimeSeries {
    /// Builds a series, checking that channels are nonempty, equally long,
    /// uniquely named, finite, and include `output`.
    pub fn new(
        cell_id: impl Into<String>,
        start_time: i64,
        channels: Vec<Channel>,
        output: impl Into<String>,
    ) -> Result<Self> {
        let output = output.into();
        let Some(first) = channels.first() else {
            return Err(Error::EmptyInput("time series channels"));
        };
        let len = first.values.len();
        if len == 0 {
            return Err(Error::EmptyInput("time series values"));
        }
        for (i, c) in channels.iter().enumerate() {
            if c.values.len() != len {
                return Err(Error::LengthMismatch {
                    expected: len,
                    actual: c.values.len(),
                });
            }
            if channels[..i].iter().any(|o| o.name == c.name) {
                return Err(Error::InvalidParameter(format!(
                    "duplicate channel `{}`",
                    c.name
                )));
            }
            if c.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "channel `{}` contains non-finite values",
                    c.name
                )));
            }
        }
        if !channels.iter().any(|c| c.name == output) {
            return Err(Error::MissingChannel(format!(
                "output channel `{output}` absent"
            )));
        }
        Ok(Self {
            cell_id: cell_id.into(),
            start_time,
            channels,
            output,
        })
    }

    /// Univariate convenience constructor.
    pub fn univariate(
        cell_id: impl Into<String>,
        start_time: i64,
        output: impl Into<String>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let output = output.into();
        Self::new(
            cell_id,
            start_time,
            vec![Channel {
                name: output.clone(),
                values,
            }],
            output,
        )
    }

    pub fn cell_id(&self) -> &str {
        &self.cell_id
    }

    pub fn start_time(&self) -> i64 {
        self.start_time
    }

    pub fn output_name(&self) -> &str {
        &self.output
    }

    pub fn len(&self) -> usize {
        self.channels[0].values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn channel_names(&self) -> impl Iterator<Item = &str> {
        self.channels.iter().map(|c| c.name.as_str())
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.channels
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.values.as_slice())
    }

    pub fn output(&self) -> &[f64] {
        self.channel(&self.output).expect("output channel checked at construction")
    }

    /// Absolute hour index of position `i`.
    pub fn time_at(&self, i: usize) -> i64 {
        self.start_time + i as i64
    }

    /// Appends a channel; it must match the series length and be a new name.
    pub fn with_channel(mut self, name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if values.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                actual: values.len(),
            });
        }
        if self.channel(&name).is_some() {
            return Err(Error::InvalidParameter(format!(
                "channel `{name}` already present"
            )));
        }
        self.channels.push(Channel { name, values });
        Ok(self)
    }

    /// Keeps only `names`, in that order. The output channel must be among them.
    pub fn select(&self, names: &[&str]) -> Result<Self> {
        let channels = names
            .iter()
            .map(|&n| {
                self.channel(n)
                    .map(|v| Channel {
                        name: n.to_owned(),
                        values: v.to_vec(),
                    })
                    .ok_or_else(|| Error::MissingChannel(format!("channel `{n}` absent")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.cell_id.clone(), self.start_time, channels, self.output.clone())
    }

    /// Sub-series over `range` (positions, not absolute hours).
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.end > self.len() || range.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "slice {range:?} out of bounds for length {}",
                self.len()
            )));
        }
        let channels = self
            .channels
            .iter()
            .map(|c| Channel {
                name: c.name.clone(),
                values: c.values[range.clone()].to_vec(),
            })
            .collect();
        Self::new(
            self.cell_id.clone(),
            self.start_time + range.start as i64,
            channels,
            self.output.clone(),
        )
    }
}

/// Seasonal period `n` and forecast horizon `m`, in steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeasonalityConfig {
    pub n: usize,
    pub m: usize,
}

impl Default for SeasonalityConfig {
    fn default() -> Self {
        Self { n: 24, m: 1 }
    }
}

impl SeasonalityConfig {
    pub fn new(n: usize, m: usize) -> Result<Self> {
        if n < 2 || m < 1 {
            return Err(Error::InvalidParameter(format!(
                "seasonality requires n >= 2 and m >= 1, got n = {n}, m = {m}"
            )));
        }
        Ok(Self { n, m })
    }
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    pub fn of(values: &[f64]) -> Self {
        let (min, max) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        Self { min, max }
    }

    pub fn is_constant(&self) -> bool {
        self.min >= self.max
    }

    pub fn apply(&self, v: f64) -> f64 {
        if self.is_constant() {
            0.0
        } else {
            (v - self.min) / (self.max - self.min)
        }
    }

    pub fn invert(&self, v: f64) -> f64 {
        if self.is_constant() {
            self.min
        } else {
            self.min + v * (self.max - self.min)
        }
    }
}

/// Per-channel scaling, persisted as `{channel: {min, max}}`.
pub type NormStats = BTreeMap<String, MinMax>;

#[derive(Debug, Clone)]
pub struct Normalized {
    pub series: TimeSeries,
    pub stats: NormStats,
    /// Channels with `min == max`, mapped to all zeros.
    pub constant_channels: Vec<String>,
}

/// Min-max scales every channel, with `stats` if given, else with the
/// series' own extrema.
pub fn normalize(series: &TimeSeries, stats: Option<&NormStats>) -> Result<Normalized> {
    let mut out_stats = NormStats::new();
    let mut constant_channels = Vec::new();
    let mut channels = Vec::with_capacity(series.channels.len());
    for c in &series.channels {
        let mm = match stats {
            Some(s) => {
                let mm = *s.get(&c.name).ok_or_else(|| {
                    Error::MissingChannel(format!("no normalization stats for `{}`", c.name))
                })?;
                if !(mm.min.is_finite() && mm.max.is_finite()) || mm.min > mm.max {
                    return Err(Error::InvalidParameter(format!(
                        "stats for `{}` need finite min <= max, got ({}, {})",
                        c.name, mm.min, mm.max
                    )));
                }
                mm
            }
            None => MinMax::of(&c.values),
        };
        if mm.is_constant() {
            warn!(cell = %series.cell_id, channel = %c.name, "constant channel mapped to zeros");
            constant_channels.push(c.name.clone());
        }
        out_stats.insert(c.name.clone(), mm);
        channels.push(Channel {
            name: c.name.clone(),
            values: c.values.iter().map(|&v| mm.apply(v)).collect(),
        });
    }
    Ok(Normalized {
        series: TimeSeries::new(
            series.cell_id.clone(),
            series.start_time,
            channels,
            series.output.clone(),
        )?,
        stats: out_stats,
        constant_channels,
    })
}

// ---------------------------------------------------------------------------
// Segmentation
// ---------------------------------------------------------------------------

/// One seasonal cycle of a cell's output channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub source_cell: String,
    pub day_index: usize,
    /// Absolute hour index of the first value.
    pub start_time: i64,
    pub values: Vec<f64>,
}

impl AsRef<[f64]> for Segment {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub segments: Vec<Segment>,
    /// Leading values skipped to reach hour-of-day 0 (midnight alignment only).
    pub leading: usize,
    /// Trailing values that did not fill a whole cycle.
    pub remainder: usize,
}

impl Segmentation {
    /// Position offset of segment 0 within the series.
    pub fn offset(&self) -> usize {
        self.leading
    }
}

/// Cuts the output channel into consecutive non-overlapping length-`n`
/// windows. With `align_midnight`, the first window starts at the first
/// hour-of-day 0 instead of at the series start.
pub fn segmentize(
    series: &TimeSeries,
    config: SeasonalityConfig,
    align_midnight: bool,
) -> Segmentation {
    let n = config.n;
    let values = series.output();
    let leading = if align_midnight {
        (HOURS_PER_DAY as usize - hour_of_day(series.start_time)) % HOURS_PER_DAY as usize
    } else {
        0
    };
    if values.len() < leading + n {
        warn!(
            cell = %series.cell_id,
            len = values.len(),
            n,
            "series shorter than one seasonal cycle; no segments"
        );
        return Segmentation {
            segments: Vec::new(),
            leading: leading.min(values.len()),
            remainder: values.len().saturating_sub(leading),
        };
    }
    let body = &values[leading..];
    let segments = body
        .chunks_exact(n)
        .enumerate()
        .map(|(day_index, chunk)| Segment {
            source_cell: series.cell_id.clone(),
            day_index,
            start_time: series.start_time + (leading + day_index * n) as i64,
            values: chunk.to_vec(),
        })
        .collect();
    Segmentation {
        segments,
        leading,
        remainder: body.len() % n,
    }
}

/// Flat collection of equal-length segments pooled across cells.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SegmentSet {
    segments: Vec<Segment>,
}

impl SegmentSet {
    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Segment length, or 0 for an empty set.
    pub fn n(&self) -> usize {
        self.segments.first().map_or(0, |s| s.values.len())
    }

    pub fn values(&self) -> Vec<&[f64]> {
        self.segments.iter().map(|s| s.values.as_slice()).collect()
    }

    /// Union of two sets; lengths must agree.
    pub fn union(&self, other: &SegmentSet) -> Result<SegmentSet> {
        consolidate(vec![self.segments.clone(), other.segments.clone()])
    }
}

impl FromIterator<Segment> for SegmentSet {
    fn from_iter<I: IntoIterator<Item = Segment>>(iter: I) -> Self {
        Self {
            segments: iter.into_iter().collect(),
        }
    }
}

/// Pools per-cell segment lists into one set, keeping provenance.
pub fn consolidate(per_cell_segments: Vec<Vec<Segment>>) -> Result<SegmentSet> {
    let segments: Vec<Segment> = per_cell_segments.into_iter().flatten().collect();
    if let Some(first) = segments.first() {
        let n = first.values.len();
        if let Some(bad) = segments.iter().find(|s| s.values.len() != n) {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: bad.values.len(),
            });
        }
        if let Some(bad) = segments.iter().find(|s| s.values.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "segment {}#{} has non-finite values",
                bad.source_cell, bad.day_index
            )));
        }
    }
    Ok(SegmentSet { segments })
}
