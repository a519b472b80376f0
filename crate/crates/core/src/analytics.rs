//! Corpus-level measures over per-comment predictions: virtue/vice ratios,
//! occurrence rates, label cardinality and monthly series.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Datelike, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::{self, LineError};
use crate::labels::{Foundation, MoralLabel, PageStance, Polarity, Stance};
use crate::models::StanceProbs;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("moving-average window must be at least 1")]
    ZeroWindow,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarityProbs {
    #[serde(rename = "Virtue")]
    pub virtue: f64,
    #[serde(rename = "Vice")]
    pub vice: f64,
}

impl PolarityProbs {
    pub fn get(&self, p: Polarity) -> f64 {
        match p {
            Polarity::Virtue => self.virtue,
            Polarity::Vice => self.vice,
        }
    }
}

/// Model outputs for one comment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub comment_id: String,
    pub created_at: DateTime<Utc>,
    pub page_stance: PageStance,
    pub stance_probs: StanceProbs,
    pub presence: BTreeMap<Foundation, f64>,
    pub polarity: BTreeMap<Foundation, PolarityProbs>,
}

/// How probabilities become decisions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// A moral label is decided when its polarity probability reaches this value.
    pub moral: f64,
    /// Additionally require the foundation's presence probability to reach `moral`.
    pub gate_on_presence: bool,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            moral: 0.5,
            gate_on_presence: false,
        }
    }
}

impl PredictionRecord {
    pub fn decided_stance(&self) -> Stance {
        self.stance_probs.argmax()
    }

    pub fn decided_morals(&self, t: &Thresholds) -> BTreeSet<MoralLabel> {
        let mut out = BTreeSet::new();
        for (&f, probs) in &self.polarity {
            if t.gate_on_presence && self.presence.get(&f).copied().unwrap_or(0.0) < t.moral {
                continue;
            }
            for p in Polarity::ALL {
                if probs.get(p) >= t.moral {
                    out.insert(MoralLabel::new(f, p));
                }
            }
        }
        out
    }
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>, AnalyticsError> {
    jsonl::read(path).map_err(|e| match e {
        LineError::Io(source) => AnalyticsError::Io {
            path: path.to_path_buf(),
            source,
        },
        LineError::Parse { line, message } => AnalyticsError::Parse {
            path: path.to_path_buf(),
            line,
            message,
        },
    })
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<(), AnalyticsError> {
    jsonl::write(path, records).map_err(|source| AnalyticsError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Virtue-to-vice ratio; `None` when there are no vice comments.
pub fn vvr(virtue_count: u64, vice_count: u64) -> Option<f64> {
    (vice_count > 0).then(|| virtue_count as f64 / vice_count as f64)
}

/// Which attribute splits comments into groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    /// The decided comment stance.
    #[default]
    Stance,
    /// The stance of the page the comment was posted on.
    PageStance,
}

impl GroupBy {
    pub fn groups(self) -> Vec<String> {
        match self {
            GroupBy::Stance => Stance::ALL.iter().map(|s| s.to_string()).collect(),
            GroupBy::PageStance => PageStance::ALL.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn group_of(self, r: &PredictionRecord) -> String {
        match self {
            GroupBy::Stance => r.decided_stance().to_string(),
            GroupBy::PageStance => r.page_stance.to_string(),
        }
    }
}

impl std::str::FromStr for GroupBy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "stance" => Ok(GroupBy::Stance),
            "page_stance" | "page" => Ok(GroupBy::PageStance),
            _ => Err(format!("unknown grouping {s:?} (expected stance or page_stance)")),
        }
    }
}

/// Counts for one (foundation, group) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VvrCell {
    pub foundation: Foundation,
    pub group: String,
    /// Comments in the group.
    pub total: u64,
    /// Comments carrying the foundation in either polarity.
    pub occurrences: u64,
    pub virtue_count: u64,
    pub vice_count: u64,
    pub vvr: Option<f64>,
    pub occurrence_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VvrReport {
    pub group_by: GroupBy,
    pub groups: Vec<String>,
    pub thresholds: Thresholds,
    /// Foundation-major, groups in [`GroupBy::groups`] order.
    pub cells: Vec<VvrCell>,
}

impl VvrReport {
    pub fn cell(&self, foundation: Foundation, group: &str) -> Option<&VvrCell> {
        self.cells.iter().find(|c| c.foundation == foundation && c.group == group)
    }

    /// Rows are foundations; each group contributes occurrence %, virtue, vice and VVR columns.
    pub fn to_csv(&self) -> String {
        let mut header = vec!["foundation".to_string()];
        for g in &self.groups {
            header.extend(["occurrence_pct", "virtue", "vice", "vvr"].map(|c| format!("{g}_{c}")));
        }
        let mut rows = vec![header];
        for f in Foundation::ALL {
            let mut row = vec![f.to_string()];
            for g in &self.groups {
                let c = self.cell(f, g).expect("report covers every cell");
                row.extend([
                    opt(c.occurrence_pct, 2),
                    c.virtue_count.to_string(),
                    c.vice_count.to_string(),
                    opt(c.vvr, 4),
                ]);
            }
            rows.push(row);
        }
        crate::table::csv_string(&rows)
    }
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.digits$}"))
}

pub fn vvr_report(predictions: &[PredictionRecord], group_by: GroupBy, thresholds: &Thresholds) -> VvrReport {
    let groups = group_by.groups();
    let mut counts: BTreeMap<(Foundation, String), [u64; 3]> = BTreeMap::new();
    let mut totals: BTreeMap<String, u64> = BTreeMap::new();
    for r in predictions {
        let g = group_by.group_of(r);
        *totals.entry(g.clone()).or_default() += 1;
        let morals = r.decided_morals(thresholds);
        for f in Foundation::ALL {
            let virtue = morals.contains(&MoralLabel::new(f, Polarity::Virtue));
            let vice = morals.contains(&MoralLabel::new(f, Polarity::Vice));
            let c = counts.entry((f, g.clone())).or_default();
            c[0] += u64::from(virtue || vice);
            c[1] += u64::from(virtue);
            c[2] += u64::from(vice);
        }
    }
    let mut cells = Vec::new();
    for f in Foundation::ALL {
        for g in &groups {
            let [occurrences, virtue_count, vice_count] = counts.get(&(f, g.clone())).copied().unwrap_or_default();
            let total = totals.get(g).copied().unwrap_or(0);
            cells.push(VvrCell {
                foundation: f,
                group: g.clone(),
                total,
                occurrences,
                virtue_count,
                vice_count,
                vvr: vvr(virtue_count, vice_count),
                occurrence_pct: (total > 0).then(|| 100.0 * occurrences as f64 / total as f64),
            });
        }
    }
    VvrReport {
        group_by,
        groups,
        thresholds: *thresholds,
        cells,
    }
}

/// Percentage of each group's comments expressing each foundation; `None` for empty groups.
pub fn occurrence_percentages(
    predictions: &[PredictionRecord],
    group_by: GroupBy,
    thresholds: &Thresholds,
) -> BTreeMap<Foundation, BTreeMap<String, Option<f64>>> {
    let report = vvr_report(predictions, group_by, thresholds);
    let mut out: BTreeMap<Foundation, BTreeMap<String, Option<f64>>> = BTreeMap::new();
    for c in report.cells {
        out.entry(c.foundation).or_default().insert(c.group, c.occurrence_pct);
    }
    out
}

/// Share of comments with zero, one, or several decided moral labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub zero: f64,
    pub one: f64,
    pub multi: f64,
    pub counts: [u64; 3],
}

impl LabelDistribution {
    /// `None` for an empty input.
    pub fn from_sizes(sizes: impl IntoIterator<Item = usize>) -> Option<Self> {
        let mut counts = [0u64; 3];
        for s in sizes {
            counts[s.min(2)] += 1;
        }
        let n: u64 = counts.iter().sum();
        if n == 0 {
            return None;
        }
        let frac = |c: u64| c as f64 / n as f64;
        Some(LabelDistribution {
            zero: frac(counts[0]),
            one: frac(counts[1]),
            multi: frac(counts[2]),
            counts,
        })
    }
}

pub fn moral_label_distribution(predictions: &[PredictionRecord], thresholds: &Thresholds) -> Option<LabelDistribution> {
    LabelDistribution::from_sizes(predictions.iter().map(|r| r.decided_morals(thresholds).len()))
}

/// A UTC calendar month.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl YearMonth {
    pub fn of(t: &DateTime<Utc>) -> Self {
        YearMonth {
            year: t.year(),
            month: t.month(),
        }
    }

    /// Months since year 0, for window arithmetic.
    pub fn ordinal(self) -> i64 {
        self.year as i64 * 12 + self.month as i64 - 1
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl std::str::FromStr for YearMonth {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("invalid month {s:?} (expected YYYY-MM)");
        let (y, m) = s.split_once('-').ok_or_else(bad)?;
        let year = y.parse().map_err(|_| bad())?;
        let month = m.parse().map_err(|_| bad())?;
        if !(1..=12).contains(&month) {
            return Err(bad());
        }
        Ok(YearMonth { year, month })
    }
}

/// Monthly values in strictly increasing month order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub name: String,
    /// Set on smoothed series.
    pub window: Option<usize>,
    pub points: Vec<(YearMonth, f64)>,
}

impl TimeSeries {
    pub fn new(name: impl Into<String>, points: Vec<(YearMonth, f64)>) -> Self {
        debug_assert!(points.windows(2).all(|w| w[0].0 < w[1].0));
        TimeSeries {
            name: name.into(),
            window: None,
            points,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.1).collect()
    }
}

/// Trailing mean over the last `window` calendar months (including the
/// current one). Early points and gaps simply average fewer values.
pub fn moving_average(series: &TimeSeries, window: usize) -> Result<TimeSeries, AnalyticsError> {
    if window == 0 {
        return Err(AnalyticsError::ZeroWindow);
    }
    let mut points = Vec::with_capacity(series.points.len());
    let mut start = 0;
    for (i, &(m, _)) in series.points.iter().enumerate() {
        while series.points[start].0.ordinal() <= m.ordinal() - window as i64 {
            start += 1;
        }
        let slice = &series.points[start..=i];
        points.push((m, slice.iter().map(|p| p.1).sum::<f64>() / slice.len() as f64));
    }
    Ok(TimeSeries {
        name: series.name.clone(),
        window: Some(window),
        points,
    })
}

/// Monthly percentage of Pro, Anti and NonRelevant decisions, restricted to
/// comments on pages of `scope` when given. Months without comments are omitted.
pub fn stance_shares_by_month(predictions: &[PredictionRecord], scope: Option<PageStance>) -> [TimeSeries; 3] {
    let mut months: BTreeMap<YearMonth, [u64; 3]> = BTreeMap::new();
    for r in predictions.iter().filter(|r| scope.is_none_or(|s| r.page_stance == s)) {
        months.entry(YearMonth::of(&r.created_at)).or_default()[r.decided_stance().index()] += 1;
    }
    let prefix = scope.map_or_else(|| "all".to_string(), |s| s.to_string());
    Stance::ALL.map(|s| {
        let points = months
            .iter()
            .map(|(&m, c)| (m, 100.0 * c[s.index()] as f64 / c.iter().sum::<u64>() as f64))
            .collect();
        TimeSeries::new(format!("{prefix}/{s}"), points)
    })
}

/// Stance shares for all comments, then for PV and AV pages.
pub fn stance_share_series(predictions: &[PredictionRecord]) -> Vec<TimeSeries> {
    [None, Some(PageStance::PV), Some(PageStance::AV)]
        .into_iter()
        .flat_map(|scope| stance_shares_by_month(predictions, scope))
        .collect()
}

/// Monthly VVR per (foundation, group). Months where the ratio is undefined are omitted.
pub fn vvr_by_month(predictions: &[PredictionRecord], group_by: GroupBy, thresholds: &Thresholds) -> Vec<TimeSeries> {
    let mut by_month: BTreeMap<YearMonth, Vec<PredictionRecord>> = BTreeMap::new();
    for r in predictions {
        by_month.entry(YearMonth::of(&r.created_at)).or_default().push(r.clone());
    }
    let reports: Vec<(YearMonth, VvrReport)> = by_month
        .into_iter()
        .map(|(m, rs)| (m, vvr_report(&rs, group_by, thresholds)))
        .collect();
    let mut out = Vec::new();
    for f in Foundation::ALL {
        for g in group_by.groups() {
            let points = reports
                .iter()
                .filter_map(|(m, rep)| rep.cell(f, &g).and_then(|c| c.vvr).map(|v| (*m, v)))
                .collect();
            out.push(TimeSeries::new(format!("{f}/{g}"), points));
        }
    }
    out
}

/// `month,series,raw,smoothed` rows for every series.
pub fn timeseries_csv(series: &[TimeSeries], window: usize) -> Result<String, AnalyticsError> {
    let mut rows = vec![["month", "series", "raw", "smoothed"].map(String::from).to_vec()];
    for s in series {
        let smooth = moving_average(s, window)?;
        for (&(m, raw), &(_, sm)) in s.points.iter().zip(&smooth.points) {
            rows.push(vec![m.to_string(), s.name.clone(), raw.to_string(), sm.to_string()]);
        }
    }
    Ok(crate::table::csv_string(&rows))
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct CsvPoint {
    #[serde(deserialize_with = "month_from_str")]
    pub month: YearMonth,
    pub series: String,
    pub raw: f64,
    pub smoothed: f64,
}

fn month_from_str<'de, D: serde::Deserializer<'de>>(d: D) -> Result<YearMonth, D::Error> {
    let s = String::deserialize(d)?;
    s.parse().map_err(serde::de::Error::custom)
}

/// Parses the output of [`timeseries_csv`].
pub fn parse_timeseries_csv(text: &str) -> Result<Vec<CsvPoint>, String> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e: csv::Error| e.to_string())
}

pub fn write_text(path: &Path, contents: &str) -> Result<(), AnalyticsError> {
    std::fs::write(path, contents).map_err(|source| AnalyticsError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use chrono::TimeZone;

    pub(crate) fn record(id: &str, month: (i32, u32), page: PageStance, stance: Stance, morals: &[MoralLabel]) -> PredictionRecord {
        let mut stance_probs = [0.1, 0.1, 0.1];
        stance_probs[stance.index()] = 0.8;
        let polarity = Foundation::ALL
            .iter()
            .map(|&f| {
                let has = |p| morals.contains(&MoralLabel::new(f, p));
                let v = |b: bool| if b { 0.9 } else { 0.1 };
                (
                    f,
                    PolarityProbs {
                        virtue: v(has(Polarity::Virtue)),
                        vice: v(has(Polarity::Vice)),
                    },
                )
            })
            .collect();
        PredictionRecord {
            comment_id: id.to_string(),
            created_at: Utc.with_ymd_and_hms(month.0, month.1, 15, 12, 0, 0).unwrap(),
            page_stance: page,
            stance_probs: StanceProbs::from_slice(&stance_probs),
            presence: Foundation::ALL.iter().map(|&f| (f, 0.5)).collect(),
            polarity,
        }
    }

    fn lib(p: Polarity) -> MoralLabel {
        MoralLabel::new(Foundation::Liberty, p)
    }

    #[test]
    fn vvr_examples() {
        assert_eq!(vvr(22, 10), Some(2.2));
        assert_eq!(vvr(140, 65), Some(140.0 / 65.0));
        assert_eq!(vvr(5, 0), None);
        assert_eq!(vvr(0, 0), None);
    }

    #[test]
    fn vvr_report_counts() {
        let mut preds: Vec<PredictionRecord> = (0..3)
            .map(|i| record(&format!("v{i}"), (2016, 1), PageStance::AV, Stance::Anti, &[lib(Polarity::Virtue)]))
            .collect();
        preds.push(record("x", (2016, 1), PageStance::AV, Stance::Anti, &[lib(Polarity::Vice)]));
        let rep = vvr_report(&preds, GroupBy::PageStance, &Thresholds::default());
        let c = rep.cell(Foundation::Liberty, "AV").unwrap();
        assert_eq!((c.virtue_count, c.vice_count, c.vvr), (3, 1, Some(3.0)));
        assert_eq!(c.occurrence_pct, Some(100.0));
        let pv = rep.cell(Foundation::Liberty, "PV").unwrap();
        assert_eq!((pv.total, pv.vvr, pv.occurrence_pct), (0, None, None));
    }

    #[test]
    fn empty_predictions_give_undefined_cells() {
        let rep = vvr_report(&[], GroupBy::Stance, &Thresholds::default());
        assert_eq!(rep.cells.len(), 18);
        assert!(rep.cells.iter().all(|c| c.virtue_count == 0 && c.vice_count == 0 && c.vvr.is_none()));
        assert!(rep.to_csv().contains("undefined"));
        assert_eq!(moral_label_distribution(&[], &Thresholds::default()), None);
    }

    #[test]
    fn occurrence_percentage_example() {
        let preds: Vec<PredictionRecord> = (0..10)
            .map(|i| {
                let m: &[MoralLabel] = if i < 3 {
                    &[MoralLabel {
                        foundation: Foundation::Care,
                        polarity: Polarity::Virtue,
                    }]
                } else {
                    &[]
                };
                record(&format!("c{i}"), (2016, 1), PageStance::PV, Stance::Pro, m)
            })
            .collect();
        let occ = occurrence_percentages(&preds, GroupBy::PageStance, &Thresholds::default());
        assert_eq!(occ[&Foundation::Care]["PV"], Some(30.0));
        assert_eq!(occ[&Foundation::Purity]["PV"], Some(0.0));
        assert_eq!(occ[&Foundation::Care]["AV"], None);
    }

    #[test]
    fn distribution_examples() {
        let d = LabelDistribution::from_sizes([0, 1, 2, 3]).unwrap();
        assert_eq!((d.zero, d.one, d.multi), (0.25, 0.25, 0.5));
        let d = LabelDistribution::from_sizes([0, 0, 0]).unwrap();
        assert_eq!((d.zero, d.one, d.multi), (1.0, 0.0, 0.0));
    }

    #[test]
    fn stance_shares_one_month() {
        let preds = vec![
            record("a", (2017, 5), PageStance::PV, Stance::Pro, &[]),
            record("b", (2017, 5), PageStance::PV, Stance::Pro, &[]),
            record("c", (2017, 5), PageStance::AV, Stance::Anti, &[]),
            record("d", (2017, 5), PageStance::AV, Stance::NonRelevant, &[]),
            record("e", (2017, 8), PageStance::AV, Stance::NonRelevant, &[]),
        ];
        let [pro, anti, nr] = stance_shares_by_month(&preds, None);
        let may = YearMonth { year: 2017, month: 5 };
        assert_eq!(pro.points[0], (may, 50.0));
        assert_eq!(anti.points[0], (may, 25.0));
        assert_eq!(nr.points[0], (may, 25.0));
        // June and July have no comments
        assert_eq!(pro.points.len(), 2);
        let [pv_pro, ..] = stance_shares_by_month(&preds, Some(PageStance::PV));
        assert_eq!(pv_pro.points, vec![(may, 100.0)]);
    }

    fn ym(i: usize) -> YearMonth {
        YearMonth {
            year: 2015 + (i / 12) as i32,
            month: (i % 12) as u32 + 1,
        }
    }

    #[test]
    fn moving_average_examples() {
        let s = TimeSeries::new("x", (0..6).map(|i| (ym(i), (i + 1) as f64)).collect());
        let ma = moving_average(&s, 6).unwrap();
        assert_eq!(ma.points.last().unwrap().1, 3.5);
        assert_eq!(ma.points[0].1, 1.0);
        assert_eq!(moving_average(&s, 1).unwrap().points, s.points);
        let c = TimeSeries::new("c", (0..7).map(|i| (ym(i), 5.0)).collect());
        assert_eq!(moving_average(&c, 6).unwrap().values(), vec![5.0; 7]);
        assert!(moving_average(&s, 0).is_err());
        assert!(moving_average(&TimeSeries::new("e", vec![]), 6).unwrap().points.is_empty());
    }

    #[test]
    fn moving_average_window_counts_calendar_months() {
        let s = TimeSeries::new("gap", vec![(ym(0), 10.0), (ym(6), 2.0), (ym(7), 4.0)]);
        let ma = moving_average(&s, 6).unwrap();
        assert_eq!(ma.values(), vec![10.0, 2.0, 3.0]);
    }

    #[test]
    fn timeseries_csv_round_trip() {
        let s = TimeSeries::new("all/Pro", vec![(ym(0), 10.0), (ym(1), 20.0)]);
        let csv = timeseries_csv(&[s], 6).unwrap();
        assert_eq!(csv, "month,series,raw,smoothed\n2015-01,all/Pro,10,10\n2015-02,all/Pro,20,15\n");
        let parsed = parse_timeseries_csv(&csv).unwrap();
        assert_eq!(parsed[1].smoothed, 15.0);
    }

    #[test]
    fn prediction_json_shape() {
        let r = record("c1", (2018, 2), PageStance::PV, Stance::Pro, &[lib(Polarity::Virtue)]);
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["created_at"], "2018-02-15T12:00:00Z");
        assert!(v["stance_probs"]["NonRelevant"].is_number());
        assert!(v["presence"]["Care"].is_number());
        assert_eq!(v["polarity"]["Liberty"]["Virtue"], 0.9);
        let back: PredictionRecord = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
        assert_eq!(r.decided_morals(&Thresholds::default()), [lib(Polarity::Virtue)].into());
        let gated = Thresholds {
            moral: 0.6,
            gate_on_presence: true,
        };
        assert!(r.decided_morals(&gated).is_empty());
    }
}
