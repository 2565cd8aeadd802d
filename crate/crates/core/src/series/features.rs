//! Feature configurations: univariate, correlated RAN channels, peak/weekend
//! flags, handover counts, and their union.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use tracing::warn;

use super::{hour_of_day, is_weekend, MinMax, TimeSeries, HOURS_PER_DAY};
use crate::error::{Error, Result};

pub const PEAK_CHANNEL: &str = "peak_hour";
pub const WEEKEND_CHANNEL: &str = "weekend";
pub const HANDOVER_IN_CHANNEL: &str = "handover_in";
pub const HANDOVER_OUT_CHANNEL: &str = "handover_out";

/// Total channel count of the `ran` configuration, output included.
pub const RAN_SIZE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureVariant {
    Uni,
    Ran,
    Peak,
    Handover,
    All,
}

impl FeatureVariant {
    pub const ALL: [FeatureVariant; 5] = [
        FeatureVariant::Uni,
        FeatureVariant::Ran,
        FeatureVariant::Peak,
        FeatureVariant::Handover,
        FeatureVariant::All,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FeatureVariant::Uni => "uni",
            FeatureVariant::Ran => "ran",
            FeatureVariant::Peak => "peak",
            FeatureVariant::Handover => "handover",
            FeatureVariant::All => "all",
        }
    }

    pub fn uses_ran(self) -> bool {
        matches!(self, FeatureVariant::Ran | FeatureVariant::All)
    }

    pub fn uses_peak(self) -> bool {
        matches!(self, FeatureVariant::Peak | FeatureVariant::All)
    }

    pub fn uses_handover(self) -> bool {
        matches!(self, FeatureVariant::Handover | FeatureVariant::All)
    }
}

impl fmt::Display for FeatureVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "unknown feature configuration `{s}` (expected uni, ran, peak, handover or all)"
                ))
            })
    }
}

/// Where one model input column comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    /// A normalized raw channel.
    Channel(String),
    PeakFlag,
    WeekendFlag,
    /// A raw handover channel, normalized and appended.
    Handover(String),
}

/// A resolved feature configuration. The output channel is always column 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub variant: FeatureVariant,
    pub output: String,
    pub ran_extras: Vec<String>,
    pub handover: Option<(String, String)>,
}

impl FeatureConfig {
    pub fn uni(output: impl Into<String>) -> Self {
        Self {
            variant: FeatureVariant::Uni,
            output: output.into(),
            ran_extras: Vec::new(),
            handover: None,
        }
    }

    /// Resolves `variant` against the selected RAN channels and the names of
    /// the incoming/outgoing handover channels.
    pub fn resolve(
        variant: FeatureVariant,
        output: impl Into<String>,
        ran_extras: &[String],
        handover: Option<(&str, &str)>,
    ) -> Result<Self> {
        let output = output.into();
        let ran_extras = if variant.uses_ran() {
            if ran_extras.is_empty() {
                return Err(Error::InvalidParameter(format!(
                    "`{variant}` needs at least one correlated channel"
                )));
            }
            if ran_extras.contains(&output) {
                return Err(Error::InvalidParameter(
                    "output channel listed among RAN extras".into(),
                ));
            }
            ran_extras.to_vec()
        } else {
            Vec::new()
        };
        let handover = if variant.uses_handover() {
            let (i, o) = handover.ok_or_else(|| {
                Error::MissingChannel(format!("`{variant}` needs handover channels"))
            })?;
            if ran_extras.iter().any(|c| c == i || c == o) {
                return Err(Error::InvalidParameter(
                    "handover channel duplicated among RAN extras".into(),
                ));
            }
            Some((i.to_string(), o.to_string()))
        } else {
            None
        };
        Ok(Self {
            variant,
            output,
            ran_extras,
            handover,
        })
    }

    pub fn sources(&self) -> Vec<FeatureSource> {
        let mut out = vec![FeatureSource::Channel(self.output.clone())];
        out.extend(self.ran_extras.iter().cloned().map(FeatureSource::Channel));
        if self.variant.uses_peak() {
            out.push(FeatureSource::PeakFlag);
            out.push(FeatureSource::WeekendFlag);
        }
        if let Some((i, o)) = &self.handover {
            out.push(FeatureSource::Handover(i.clone()));
            out.push(FeatureSource::Handover(o.clone()));
        }
        out
    }

    pub fn feature_count(&self) -> usize {
        1 + self.ran_extras.len()
            + if self.variant.uses_peak() { 2 } else { 0 }
            + if self.handover.is_some() { 2 } else { 0 }
    }

    /// Raw channels the configuration reads.
    pub fn raw_channels(&self) -> Vec<String> {
        self.sources()
            .into_iter()
            .filter_map(|s| match s {
                FeatureSource::Channel(c) | FeatureSource::Handover(c) => Some(c),
                _ => None,
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Correlation filter
// ---------------------------------------------------------------------------

/// Pearson correlation, or `None` when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len().min(b.len());
    if n < 2 {
        return None;
    }
    let (a, b) = (&a[..n], &b[..n]);
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSelection {
    /// Output channel first, then selected channels by decreasing correlation.
    pub channels: Vec<String>,
    /// Correlation of every candidate with the output (0 for zero variance).
    pub correlations: Vec<(String, f64)>,
    pub zero_variance: Vec<String>,
}

impl ChannelSelection {
    pub fn extras(&self) -> &[String] {
        &self.channels[1..]
    }
}

/// Ranks candidate channels by their pooled correlation with the output.
fn rank_candidates(
    series_set: &[TimeSeries],
    exclude: &[&str],
) -> Result<(String, Vec<(String, f64)>, Vec<String>)> {
    let first = series_set
        .first()
        .ok_or(Error::EmptyInput("series set for correlation"))?;
    let output = first.output_name().to_string();
    let pooled = |name: &str| -> Result<Vec<f64>> {
        let mut all = Vec::new();
        for s in series_set {
            all.extend_from_slice(s.channel(name).ok_or_else(|| {
                Error::MissingChannel(format!("channel `{name}` absent in cell {}", s.cell_id()))
            })?);
        }
        Ok(all)
    };
    let target = pooled(&output)?;
    if target.len() < 2 {
        return Err(Error::InvalidParameter(
            "correlation needs at least two samples".into(),
        ));
    }
    let mut ranked = Vec::new();
    let mut zero_variance = Vec::new();
    for name in first.channel_names() {
        if name == output || exclude.contains(&name) {
            continue;
        }
        let corr = match pearson(&target, &pooled(name)?) {
            Some(c) => c,
            None => {
                warn!(channel = name, "zero-variance channel excluded from correlation filter");
                zero_variance.push(name.to_string());
                0.0
            }
        };
        ranked.push((name.to_string(), corr));
    }
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok((output, ranked, zero_variance))
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "correlation threshold must lie in (0, 1), got {threshold}"
        )));
    }
    Ok(())
}

/// Channels whose pooled Pearson correlation with the output channel is
/// strictly greater than `threshold` (signed), output channel first.
pub fn pearson_select(
    series_set: &[TimeSeries],
    threshold: f64,
    exclude: &[&str],
) -> Result<ChannelSelection> {
    check_threshold(threshold)?;
    let (output, ranked, zero_variance) = rank_candidates(series_set, exclude)?;
    let mut channels = vec![output];
    channels.extend(
        ranked
            .iter()
            .filter(|(name, c)| *c > threshold && !zero_variance.contains(name))
            .map(|(name, _)| name.clone()),
    );
    Ok(ChannelSelection {
        channels,
        correlations: ranked,
        zero_variance,
    })
}

/// The `ran` channel set: the correlation filter capped or padded to
/// [`RAN_SIZE`] channels by rank.
pub fn ran_channels(
    series_set: &[TimeSeries],
    threshold: f64,
    exclude: &[&str],
) -> Result<ChannelSelection> {
    check_threshold(threshold)?;
    let (output, ranked, zero_variance) = rank_candidates(series_set, exclude)?;
    let usable: Vec<&(String, f64)> = ranked
        .iter()
        .filter(|(n, _)| !zero_variance.contains(n))
        .collect();
    let want = RAN_SIZE - 1;
    if usable.len() < want {
        return Err(Error::InvalidParameter(format!(
            "only {} usable candidate channels, {want} required",
            usable.len()
        )));
    }
    let passing = usable.iter().filter(|(_, c)| *c > threshold).count();
    if passing < want {
        warn!(passing, want, "padding RAN selection with channels below the threshold");
    }
    let mut channels = vec![output];
    channels.extend(usable.iter().take(want).map(|(n, _)| n.clone()));
    Ok(ChannelSelection {
        channels,
        correlations: ranked,
        zero_variance,
    })
}

// ---------------------------------------------------------------------------
// Engineered flags
// ---------------------------------------------------------------------------

/// Per hour-of-day peak flags for one cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeakProfile {
    pub flags: [bool; HOURS_PER_DAY as usize],
}

impl PeakProfile {
    /// An hour is peak when its mean volume is at least the overall mean.
    /// Hours never observed are off-peak.
    pub fn fit(values: &[f64], start_time: i64) -> Self {
        let mut sums = [0.0; HOURS_PER_DAY as usize];
        let mut counts = [0usize; HOURS_PER_DAY as usize];
        for (i, &v) in values.iter().enumerate() {
            let h = hour_of_day(start_time + i as i64);
            sums[h] += v;
            counts[h] += 1;
        }
        Self::from_sums(&sums, &counts)
    }

    pub(crate) fn from_sums(sums: &[f64; 24], counts: &[usize; 24]) -> Self {
        let total: f64 = sums.iter().sum();
        let n: usize = counts.iter().sum();
        let mut flags = [false; HOURS_PER_DAY as usize];
        if n == 0 {
            return Self { flags };
        }
        let mean = total / n as f64;
        // Hourly and overall means of a constant signal may differ in the last ulp.
        let slack = 1e-12 * mean.abs().max(1.0);
        for h in 0..flags.len() {
            if counts[h] > 0 {
                flags[h] = sums[h] / counts[h] as f64 >= mean - slack;
            }
        }
        Self { flags }
    }

    pub fn is_peak(&self, hour: i64) -> bool {
        self.flags[hour_of_day(hour)]
    }
}

/// Appends the peak-hour flag (from the cell's own hourly means) and the
/// weekend flag.
pub fn engineer_peak_features(series: &TimeSeries) -> Result<TimeSeries> {
    let profile = PeakProfile::fit(series.output(), series.start_time());
    let peak = (0..series.len())
        .map(|i| f64::from(u8::from(profile.is_peak(series.time_at(i)))))
        .collect();
    let weekend = (0..series.len())
        .map(|i| f64::from(u8::from(is_weekend(series.time_at(i)))))
        .collect();
    series
        .clone()
        .with_channel(PEAK_CHANNEL, peak)?
        .with_channel(WEEKEND_CHANNEL, weekend)
}

/// Appends min-max normalized incoming and outgoing handover channels taken
/// from `source` as `handover_in` / `handover_out`.
pub fn attach_handover_features(
    series: &TimeSeries,
    source: &TimeSeries,
    incoming: &str,
    outgoing: &str,
) -> Result<TimeSeries> {
    let get = |name: &str, which: &str| {
        source
            .channel(name)
            .ok_or_else(|| Error::MissingChannel(format!("{which} handover channel absent")))
    };
    let inc = get(incoming, "incoming")?;
    let out = get(outgoing, "outgoing")?;
    if inc.len() != series.len() || out.len() != series.len() || source.start_time() != series.start_time() {
        return Err(Error::LengthMismatch {
            expected: series.len(),
            actual: inc.len().min(out.len()),
        });
    }
    let scale = |v: &[f64]| {
        let mm = MinMax::of(v);
        v.iter().map(|&x| mm.apply(x)).collect::<Vec<_>>()
    };
    series
        .clone()
        .with_channel(HANDOVER_IN_CHANNEL, scale(inc))?
        .with_channel(HANDOVER_OUT_CHANNEL, scale(out))
}

/// Builds the model input series for `config` from a normalized series; the
/// result has exactly `config.feature_count()` channels in model column order.
pub fn featurize(series: &TimeSeries, config: &FeatureConfig) -> Result<TimeSeries> {
    if series.output_name() != config.output {
        return Err(Error::MissingChannel(format!(
            "series output `{}` differs from configured `{}`",
            series.output_name(),
            config.output
        )));
    }
    let mut names: Vec<&str> = vec![&config.output];
    names.extend(config.ran_extras.iter().map(String::as_str));
    let mut out = series.select(&names)?;
    if config.variant.uses_peak() {
        out = engineer_peak_features(&out)?;
    }
    if let Some((i, o)) = &config.handover {
        out = attach_handover_features(&out, series, i, o)?;
    }
    debug_assert_eq!(out.channels().len(), config.feature_count());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::Channel;
    use rand::{Rng, SeedableRng};

    fn series_with(channels: Vec<(&str, Vec<f64>)>) -> TimeSeries {
        TimeSeries::new(
            "c",
            0,
            channels
                .into_iter()
                .map(|(n, v)| Channel { name: n.into(), values: v })
                .collect(),
            "y",
        )
        .unwrap()
    }

    /// Direct textbook formula, kept apart from the implementation's
    /// centred accumulation.
    fn pearson_oracle(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let sa: f64 = a.iter().sum();
        let sb: f64 = b.iter().sum();
        let sab: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let saa: f64 = a.iter().map(|x| x * x).sum();
        let sbb: f64 = b.iter().map(|x| x * x).sum();
        (n * sab - sa * sb) / ((n * saa - sa * sa).sqrt() * (n * sbb - sb * sb).sqrt())
    }

    #[test]
    fn identical_and_negated_channels() {
        let x: Vec<f64> = (0..50).map(|i| ((i * 7) % 13) as f64).collect();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let s = series_with(vec![("y", x.clone()), ("same", x.clone()), ("neg", neg)]);
        let sel = pearson_select(&[s], 0.9, &[]).unwrap();
        assert_eq!(sel.channels, vec!["y", "same"]);
        let corr: std::collections::HashMap<_, _> = sel.correlations.into_iter().collect();
        assert!((corr["same"] - 1.0).abs() < 1e-12);
        assert!((corr["neg"] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn affine_channel_beats_noise() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
        let affine: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let noise: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
        let expect_noise = pearson_oracle(&x, &noise);
        let s = series_with(vec![("y", x.clone()), ("affine", affine.clone()), ("noise", noise.clone())]);
        let sel = pearson_select(&[s], 0.9, &[]).unwrap();
        assert_eq!(sel.channels, vec!["y", "affine"]);
        assert!((pearson(&x, &noise).unwrap() - expect_noise).abs() < 1e-9);
        assert!((pearson(&x, &affine).unwrap() - pearson_oracle(&x, &affine)).abs() < 1e-9);
    }

    #[test]
    fn zero_variance_is_excluded() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let s = series_with(vec![("y", x), ("flat", vec![1.0; 10])]);
        let sel = pearson_select(&[s], 0.5, &[]).unwrap();
        assert_eq!(sel.channels, vec!["y"]);
        assert_eq!(sel.zero_variance, vec!["flat"]);
        assert!(pearson_select(&[], 0.5, &[]).is_err());
    }

    #[test]
    fn threshold_must_be_open_unit_interval() {
        let s = series_with(vec![("y", vec![0.0, 1.0]), ("a", vec![1.0, 0.0])]);
        assert!(pearson_select(std::slice::from_ref(&s), 1.0, &[]).is_err());
        assert!(pearson_select(&[s], 0.0, &[]).is_err());
    }

    #[test]
    fn ran_pads_to_five() {
        let x: Vec<f64> = (0..30).map(|i| ((i * 5) % 11) as f64).collect();
        let mut chans = vec![("y", x.clone())];
        let names = ["a", "b", "c", "d", "e", "f"];
        for (k, n) in names.iter().enumerate() {
            // decreasing correlation with the output
            let v = x
                .iter()
                .enumerate()
                .map(|(i, v)| v + (k as f64) * ((i * 3 % 7) as f64))
                .collect();
            chans.push((n, v));
        }
        let s = series_with(chans);
        let sel = ran_channels(&[s], 0.99, &["f"]).unwrap();
        assert_eq!(sel.channels, vec!["y", "a", "b", "c", "d"]);
    }

    #[test]
    fn peak_flags_examples() {
        let flat = TimeSeries::univariate("c", 0, "y", vec![0.37; 72]).unwrap();
        let out = engineer_peak_features(&flat).unwrap();
        assert!(out.channel(PEAK_CHANNEL).unwrap().iter().all(|&v| v == 1.0));

        let day: Vec<f64> = (0..72).map(|h| if (8..=22).contains(&(h % 24)) { 1.0 } else { 0.0 }).collect();
        let s = TimeSeries::univariate("c", 0, "y", day.clone()).unwrap();
        let out = engineer_peak_features(&s).unwrap();
        assert_eq!(out.channel(PEAK_CHANNEL).unwrap(), day.as_slice());

        // 2024-01-06 is a Saturday.
        let sat = 1_704_499_200 / 3600;
        let s = TimeSeries::univariate("c", sat, "y", vec![0.5; 48]).unwrap();
        let out = engineer_peak_features(&s).unwrap();
        assert!(out.channel(WEEKEND_CHANNEL).unwrap().iter().all(|&v| v == 1.0));
        assert_eq!(out.channels().len(), 3);
    }

    #[test]
    fn handover_channels() {
        let s = series_with(vec![
            ("y", vec![0.0, 1.0, 0.5]),
            ("hin", vec![2.0, 4.0, 6.0]),
            ("hout", vec![1.0, 1.0, 3.0]),
        ]);
        let base = s.select(&["y"]).unwrap();
        let out = attach_handover_features(&base, &s, "hin", "hout").unwrap();
        assert_eq!(out.channels().len(), 3);
        assert_eq!(out.channel(HANDOVER_IN_CHANNEL).unwrap(), &[0.0, 0.5, 1.0]);
        assert_eq!(out.channel(HANDOVER_OUT_CHANNEL).unwrap(), &[0.0, 0.0, 1.0]);

        let missing = s.select(&["y", "hin"]).unwrap();
        let err = attach_handover_features(&base, &missing, "hin", "hout").unwrap_err();
        assert_eq!(err.to_string(), "outgoing handover channel absent");
    }

    #[test]
    fn variant_channel_counts() {
        let extras: Vec<String> = ["a", "b", "c", "d"].map(String::from).to_vec();
        let expected = [
            (FeatureVariant::Uni, 1),
            (FeatureVariant::Ran, 5),
            (FeatureVariant::Peak, 3),
            (FeatureVariant::Handover, 3),
            (FeatureVariant::All, 9),
        ];
        let len = 48;
        let mut chans: Vec<(&str, Vec<f64>)> = vec![("y", (0..len).map(|i| (i % 24) as f64 / 23.0).collect())];
        for n in ["a", "b", "c", "d", "hin", "hout"] {
            chans.push((n, (0..len).map(|i| ((i * 7) % 24) as f64 / 23.0).collect()));
        }
        let s = series_with(chans);
        for (variant, count) in expected {
            let cfg = FeatureConfig::resolve(variant, "y", &extras, Some(("hin", "hout"))).unwrap();
            assert_eq!(cfg.feature_count(), count, "{variant}");
            assert_eq!(cfg.sources().len(), count);
            let f = featurize(&s, &cfg).unwrap();
            assert_eq!(f.channels().len(), count);
            assert_eq!(f.channels()[0].name, "y");
            let mut names: Vec<&str> = f.channel_names().collect();
            names.sort();
            names.dedup();
            assert_eq!(names.len(), count);
        }
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("ALL".parse::<FeatureVariant>().unwrap(), FeatureVariant::All);
        assert!("lstm".parse::<FeatureVariant>().is_err());
        assert!(FeatureConfig::resolve(FeatureVariant::Handover, "y", &[], None).is_err());
    }
}
