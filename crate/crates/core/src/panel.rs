//! Daily stock panel and market index ingest.
//!
//! Panel CSV columns: `date,security_id,ret,prc,vol,shrout,shrcd_ok,exchcd_ok`.
//! Market CSV columns: `date,mkt_ret`. Dates are ISO-8601, returns decimal.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::calendar::YearMonth;
use crate::error::{MspiError, Result};
use crate::io;

pub const PANEL_COLUMNS: [&str; 8] = [
    "date",
    "security_id",
    "ret",
    "prc",
    "vol",
    "shrout",
    "shrcd_ok",
    "exchcd_ok",
];
pub const MARKET_COLUMNS: [&str; 2] = ["date", "mkt_ret"];

/// Opaque security identifier. Cheap to clone.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SecurityId(Arc<str>);

impl SecurityId {
    pub fn new(id: &str) -> Self {
        SecurityId(Arc::from(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SecurityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A panel row as read from disk, before eligibility filtering.
#[derive(Debug, Clone, PartialEq)]
pub struct RawObservation {
    pub date: NaiveDate,
    pub security_id: SecurityId,
    pub ret: Option<f64>,
    pub prc: Option<f64>,
    pub vol: Option<f64>,
    pub shrout: Option<f64>,
    pub share_class_ok: bool,
    pub exchange_ok: bool,
}

/// A retained stock-day. `prc` keeps the source sign; negative prices are
/// bid/ask midpoints and are used in absolute value.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyObservation {
    pub date: NaiveDate,
    pub security_id: SecurityId,
    pub ret: f64,
    pub prc: f64,
    pub vol: Option<f64>,
    pub shrout: Option<f64>,
    pub share_class_ok: bool,
    pub exchange_ok: bool,
}

impl DailyObservation {
    fn to_raw(&self) -> RawObservation {
        RawObservation {
            date: self.date,
            security_id: self.security_id.clone(),
            ret: Some(self.ret),
            prc: Some(self.prc),
            vol: self.vol,
            shrout: self.shrout,
            share_class_ok: self.share_class_ok,
            exchange_ok: self.exchange_ok,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EligibilityFilter {
    pub min_abs_price: f64,
    pub require_share_class: bool,
    pub require_exchange: bool,
}

impl Default for EligibilityFilter {
    fn default() -> Self {
        EligibilityFilter {
            min_abs_price: 1.0,
            require_share_class: true,
            require_exchange: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DropReason {
    MissingRet,
    MissingPrc,
    LowPrice,
    ShareClass,
    Exchange,
}

impl EligibilityFilter {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_abs_price >= 0.0 && self.min_abs_price.is_finite()) {
            return Err(MspiError::config(
                "min_abs_price",
                "must be finite and non-negative",
            ));
        }
        Ok(())
    }

    fn check(&self, row: &RawObservation) -> std::result::Result<(f64, f64), DropReason> {
        let ret = row.ret.ok_or(DropReason::MissingRet)?;
        let prc = row.prc.ok_or(DropReason::MissingPrc)?;
        if prc.abs() < self.min_abs_price {
            return Err(DropReason::LowPrice);
        }
        if self.require_share_class && !row.share_class_ok {
            return Err(DropReason::ShareClass);
        }
        if self.require_exchange && !row.exchange_ok {
            return Err(DropReason::Exchange);
        }
        Ok((ret, prc))
    }
}

/// Row accounting for one ingest pass.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub rows_read: u64,
    pub rows_retained: u64,
    pub dropped_missing_ret: u64,
    pub dropped_missing_prc: u64,
    pub dropped_low_price: u64,
    pub dropped_share_class: u64,
    pub dropped_exchange: u64,
}

impl IngestSummary {
    pub fn rows_dropped(&self) -> u64 {
        self.rows_read - self.rows_retained
    }

    fn record(&mut self, reason: DropReason) {
        match reason {
            DropReason::MissingRet => self.dropped_missing_ret += 1,
            DropReason::MissingPrc => self.dropped_missing_prc += 1,
            DropReason::LowPrice => self.dropped_low_price += 1,
            DropReason::ShareClass => self.dropped_share_class += 1,
            DropReason::Exchange => self.dropped_exchange += 1,
        }
    }
}

/// Applies `filter` to the rows of one date; `None` when nothing survives.
pub(crate) fn filter_day(
    filter: &EligibilityFilter,
    date: NaiveDate,
    rows: Vec<RawObservation>,
    summary: &mut IngestSummary,
) -> Result<Option<PanelDay>> {
    let mut observations = Vec::with_capacity(rows.len());
    for row in rows {
        summary.rows_read += 1;
        match filter.check(&row) {
            Ok((ret, prc)) => {
                summary.rows_retained += 1;
                observations.push(DailyObservation {
                    date,
                    security_id: row.security_id,
                    ret,
                    prc,
                    vol: row.vol,
                    shrout: row.shrout,
                    share_class_ok: row.share_class_ok,
                    exchange_ok: row.exchange_ok,
                });
            }
            Err(reason) => summary.record(reason),
        }
    }
    if observations.is_empty() {
        return Ok(None);
    }
    observations.sort_by(|a, b| a.security_id.cmp(&b.security_id));
    if let Some(w) = observations
        .windows(2)
        .find(|w| w[0].security_id == w[1].security_id)
    {
        return Err(MspiError::Alignment(format!(
            "security `{}` appears twice on {date}",
            w[0].security_id
        )));
    }
    Ok(Some(PanelDay { date, observations }))
}

/// All retained observations of one trading day, sorted by security id.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDay {
    pub date: NaiveDate,
    pub observations: Vec<DailyObservation>,
}

impl PanelDay {
    /// Number of eligible stocks on the day (`N_d`).
    pub fn n_stocks(&self) -> usize {
        self.observations.len()
    }
}

/// Filtered daily panel. Days are strictly increasing and never empty.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyPanel {
    days: Vec<PanelDay>,
}

impl DailyPanel {
    /// Filters raw rows and groups them by date.
    pub fn from_raw(
        rows: impl IntoIterator<Item = RawObservation>,
        filter: &EligibilityFilter,
    ) -> Result<(DailyPanel, IngestSummary)> {
        filter.validate()?;
        let mut summary = IngestSummary::default();
        let mut by_date: BTreeMap<NaiveDate, Vec<RawObservation>> = BTreeMap::new();
        for row in rows {
            by_date.entry(row.date).or_default().push(row);
        }
        let mut days = Vec::with_capacity(by_date.len());
        for (date, rows) in by_date {
            if let Some(day) = filter_day(filter, date, rows, &mut summary)? {
                days.push(day);
            }
        }
        DailyPanel::from_days(days).map(|p| (p, summary))
    }

    /// Assembles a panel from already filtered days in increasing date order.
    pub(crate) fn from_days(days: Vec<PanelDay>) -> Result<DailyPanel> {
        if days.is_empty() {
            return Err(MspiError::EmptyPanel);
        }
        debug_assert!(days.windows(2).all(|w| w[0].date < w[1].date));
        Ok(DailyPanel { days })
    }

    /// Re-applies a filter to the retained rows.
    pub fn refilter(&self, filter: &EligibilityFilter) -> Result<(DailyPanel, IngestSummary)> {
        DailyPanel::from_raw(
            self.days
                .iter()
                .flat_map(|d| d.observations.iter().map(DailyObservation::to_raw)),
            filter,
        )
    }

    pub fn days(&self) -> &[PanelDay] {
        &self.days
    }

    pub fn calendar(&self) -> Vec<NaiveDate> {
        self.days.iter().map(|d| d.date).collect()
    }

    pub fn n_observations(&self) -> usize {
        self.days.iter().map(PanelDay::n_stocks).sum()
    }

    /// Keeps days up to and including the last day of `month`.
    pub fn truncated_through(&self, month: YearMonth) -> Option<DailyPanel> {
        let days: Vec<_> = self
            .days
            .iter()
            .take_while(|d| YearMonth::of(d.date) <= month)
            .cloned()
            .collect();
        (!days.is_empty()).then_some(DailyPanel { days })
    }

    pub fn write_csv(&self, path: &Path, comment: Option<&str>) -> Result<()> {
        let mut w = io::create_csv(path, comment)?;
        w.write_record(PANEL_COLUMNS)
            .map_err(|e| io::write_err(path, e))?;
        for day in &self.days {
            let date = day.date.to_string();
            for o in &day.observations {
                w.write_record([
                    date.as_str(),
                    o.security_id.as_str(),
                    &o.ret.to_string(),
                    &o.prc.to_string(),
                    &io::fmt_opt(o.vol),
                    &io::fmt_opt(o.shrout),
                    if o.share_class_ok { "1" } else { "0" },
                    if o.exchange_ok { "1" } else { "0" },
                ])
                .map_err(|e| io::write_err(path, e))?;
            }
        }
        io::finish_csv(path, w)
    }
}

/// Reads and filters a panel CSV.
pub fn load_daily_panel(
    path: &Path,
    filter: &EligibilityFilter,
) -> Result<(DailyPanel, IngestSummary)> {
    filter.validate()?;
    let mut input = io::open_csv(path, &PANEL_COLUMNS)?;
    let c = input.columns.clone();
    let mut rows = Vec::new();
    io::for_each_row(&mut input, |row| {
        let vol = row.opt_f64(c[4], "vol")?;
        let shrout = row.opt_f64(c[5], "shrout")?;
        if vol.is_some_and(|v| v < 0.0) {
            return Err(MspiError::Malformed {
                path: path.to_path_buf(),
                line: row.line,
                column: "vol".into(),
                message: "negative volume".into(),
            });
        }
        if shrout.is_some_and(|v| v < 0.0) {
            return Err(MspiError::Malformed {
                path: path.to_path_buf(),
                line: row.line,
                column: "shrout".into(),
                message: "negative shares outstanding".into(),
            });
        }
        rows.push(RawObservation {
            date: row.date(c[0], "date")?,
            security_id: SecurityId::new(row.str(c[1])),
            ret: row.opt_f64(c[2], "ret")?,
            prc: row.opt_f64(c[3], "prc")?,
            vol,
            shrout,
            share_class_ok: row.flag(c[6], "shrcd_ok")?,
            exchange_ok: row.flag(c[7], "exchcd_ok")?,
        });
        Ok(())
    })?;
    DailyPanel::from_raw(rows, filter)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketPoint {
    pub date: NaiveDate,
    pub mkt_ret: f64,
}

/// Daily value-weighted index returns, strictly increasing in date.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketSeries {
    points: Vec<MarketPoint>,
}

impl MarketSeries {
    /// Sorts by date and rejects duplicates, non-finite returns and empty input.
    pub fn from_points(mut points: Vec<MarketPoint>) -> Result<MarketSeries> {
        if points.is_empty() {
            return Err(MspiError::EmptySeries("market series has no rows".into()));
        }
        if let Some(p) = points.iter().find(|p| !p.mkt_ret.is_finite()) {
            return Err(MspiError::NonFinite {
                what: "mkt_ret",
                date: p.date,
            });
        }
        points.sort_by_key(|p| p.date);
        if let Some(w) = points.windows(2).find(|w| w[0].date == w[1].date) {
            return Err(MspiError::DuplicateDate(w[0].date));
        }
        Ok(MarketSeries { points })
    }

    pub fn points(&self) -> &[MarketPoint] {
        &self.points
    }

    pub fn get(&self, date: NaiveDate) -> Option<f64> {
        self.points
            .binary_search_by_key(&date, |p| p.date)
            .ok()
            .map(|i| self.points[i].mkt_ret)
    }

    pub fn truncated_through(&self, month: YearMonth) -> Option<MarketSeries> {
        let points: Vec<_> = self
            .points
            .iter()
            .take_while(|p| YearMonth::of(p.date) <= month)
            .copied()
            .collect();
        (!points.is_empty()).then_some(MarketSeries { points })
    }

    pub fn write_csv(&self, path: &Path, comment: Option<&str>) -> Result<()> {
        let mut w = io::create_csv(path, comment)?;
        w.write_record(MARKET_COLUMNS)
            .map_err(|e| io::write_err(path, e))?;
        for p in &self.points {
            w.write_record([p.date.to_string(), p.mkt_ret.to_string()])
                .map_err(|e| io::write_err(path, e))?;
        }
        io::finish_csv(path, w)
    }
}

pub fn load_market_series(path: &Path) -> Result<MarketSeries> {
    let mut input = io::open_csv(path, &MARKET_COLUMNS)?;
    let c = input.columns.clone();
    let mut points = Vec::new();
    io::for_each_row(&mut input, |row| {
        points.push(MarketPoint {
            date: row.date(c[0], "date")?,
            mkt_ret: row.f64(c[1], "mkt_ret")?,
        });
        Ok(())
    })?;
    MarketSeries::from_points(points)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonthBucket {
    pub month: YearMonth,
    pub days: Vec<NaiveDate>,
}

impl MonthBucket {
    /// Number of trading days `D_t`.
    pub fn n_days(&self) -> usize {
        self.days.len()
    }
}

/// Calendar year-month buckets of the panel's trading days.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonthPartition {
    months: Vec<MonthBucket>,
}

impl MonthPartition {
    pub fn months(&self) -> &[MonthBucket] {
        &self.months
    }

    pub fn month_of(&self, date: NaiveDate) -> Option<&MonthBucket> {
        let ym = YearMonth::of(date);
        self.months
            .binary_search_by_key(&ym, |m| m.month)
            .ok()
            .map(|i| &self.months[i])
    }
}

/// Buckets panel dates by calendar month, checking each against the market calendar.
pub fn partition_months(panel: &DailyPanel, market: &MarketSeries) -> Result<MonthPartition> {
    let missing: Vec<NaiveDate> = panel
        .days()
        .iter()
        .map(|d| d.date)
        .filter(|d| market.get(*d).is_none())
        .collect();
    if !missing.is_empty() {
        return Err(MspiError::MissingDates(missing));
    }
    let mut months: Vec<MonthBucket> = Vec::new();
    for day in panel.days() {
        let ym = YearMonth::of(day.date);
        match months.last_mut() {
            Some(bucket) if bucket.month == ym => bucket.days.push(day.date),
            _ => months.push(MonthBucket {
                month: ym,
                days: vec![day.date],
            }),
        }
    }
    Ok(MonthPartition { months })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn raw(date: &str, id: &str, ret: Option<f64>, prc: Option<f64>) -> RawObservation {
        RawObservation {
            date: d(date),
            security_id: SecurityId::new(id),
            ret,
            prc,
            vol: Some(100.0),
            shrout: Some(1000.0),
            share_class_ok: true,
            exchange_ok: true,
        }
    }

    fn write_tmp(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn penny_stock_and_missing_return_dropped() {
        let rows = vec![
            raw("2000-01-03", "A", Some(0.01), Some(0.50)),
            raw("2000-01-03", "B", None, Some(10.0)),
            raw("2000-01-03", "C", Some(0.02), Some(-12.0)),
        ];
        let (panel, summary) = DailyPanel::from_raw(rows, &EligibilityFilter::default()).unwrap();
        assert_eq!(summary.dropped_low_price, 1);
        assert_eq!(summary.dropped_missing_ret, 1);
        assert_eq!(summary.rows_retained, 1);
        assert_eq!(panel.days()[0].observations[0].security_id.as_str(), "C");
    }

    #[test]
    fn counts_per_date() {
        let rows = vec![
            raw("2000-01-03", "B", Some(0.0), Some(5.0)),
            raw("2000-01-03", "A", Some(0.0), Some(5.0)),
            raw("2000-01-03", "C", Some(0.0), Some(5.0)),
        ];
        let (panel, _) = DailyPanel::from_raw(rows, &EligibilityFilter::default()).unwrap();
        assert_eq!(panel.days()[0].n_stocks(), 3);
        let ids: Vec<_> = panel.days()[0]
            .observations
            .iter()
            .map(|o| o.security_id.as_str())
            .collect();
        assert_eq!(ids, ["A", "B", "C"]);
    }

    #[test]
    fn flags_enforced_only_when_required() {
        let mut r = raw("2000-01-03", "A", Some(0.0), Some(5.0));
        r.share_class_ok = false;
        let strict = EligibilityFilter::default();
        assert!(matches!(
            DailyPanel::from_raw(vec![r.clone()], &strict),
            Err(MspiError::EmptyPanel)
        ));
        let lax = EligibilityFilter {
            require_share_class: false,
            ..strict
        };
        assert!(DailyPanel::from_raw(vec![r], &lax).is_ok());
    }

    #[test]
    fn malformed_row_names_line_and_column() {
        let f = write_tmp(
            "date,security_id,ret,prc,vol,shrout,shrcd_ok,exchcd_ok\n\
             2000-01-03,A,0.01,10,5,100,1,1\n\
             2000-01-03,B,abc,10,5,100,1,1\n",
        );
        let err = load_daily_panel(f.path(), &EligibilityFilter::default()).unwrap_err();
        match err {
            MspiError::Malformed { line, column, .. } => {
                assert_eq!(line, 3);
                assert_eq!(column, "ret");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn missing_volume_kept() {
        let f = write_tmp(
            "date,security_id,ret,prc,vol,shrout,shrcd_ok,exchcd_ok\n\
             2000-01-03,A,0.01,10,,,1,1\n",
        );
        let (panel, _) = load_daily_panel(f.path(), &EligibilityFilter::default()).unwrap();
        assert_eq!(panel.days()[0].observations[0].vol, None);
    }

    #[test]
    fn empty_after_filter() {
        let f = write_tmp(
            "date,security_id,ret,prc,vol,shrout,shrcd_ok,exchcd_ok\n\
             2000-01-03,A,0.01,0.2,5,100,1,1\n",
        );
        assert!(matches!(
            load_daily_panel(f.path(), &EligibilityFilter::default()),
            Err(MspiError::EmptyPanel)
        ));
    }

    #[test]
    fn market_duplicates_order_and_empty() {
        let dup = write_tmp("date,mkt_ret\n2000-01-03,0.01\n2000-01-03,0.02\n");
        assert!(matches!(
            load_market_series(dup.path()),
            Err(MspiError::DuplicateDate(_))
        ));
        let unordered = write_tmp("date,mkt_ret\n2000-01-04,0.01\n2000-01-03,0.02\n");
        let m = load_market_series(unordered.path()).unwrap();
        assert_eq!(m.points()[0].date, d("2000-01-03"));
        let empty = write_tmp("date,mkt_ret\n");
        assert!(matches!(
            load_market_series(empty.path()),
            Err(MspiError::EmptySeries(_))
        ));
    }

    fn market(dates: &[&str]) -> MarketSeries {
        MarketSeries::from_points(
            dates
                .iter()
                .map(|s| MarketPoint {
                    date: d(s),
                    mkt_ret: 0.0,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn month_buckets() {
        let rows = ["2000-01-02", "2000-01-03", "2000-02-01"]
            .iter()
            .map(|s| raw(s, "A", Some(0.0), Some(5.0)));
        let (panel, _) = DailyPanel::from_raw(rows, &EligibilityFilter::default()).unwrap();
        let p = partition_months(
            &panel,
            &market(&["2000-01-02", "2000-01-03", "2000-01-04", "2000-02-01"]),
        )
        .unwrap();
        let counts: Vec<_> = p.months().iter().map(MonthBucket::n_days).collect();
        assert_eq!(counts, [2, 1]);

        let one = DailyPanel::from_raw(
            vec![raw("2000-01-02", "A", Some(0.0), Some(5.0))],
            &EligibilityFilter::default(),
        )
        .unwrap()
        .0;
        let p = partition_months(&one, &market(&["2000-01-02"])).unwrap();
        assert_eq!(p.months().len(), 1);
        assert_eq!(p.months()[0].n_days(), 1);
    }

    #[test]
    fn panel_date_missing_from_market() {
        let (panel, _) = DailyPanel::from_raw(
            vec![raw("2000-01-05", "A", Some(0.0), Some(5.0))],
            &EligibilityFilter::default(),
        )
        .unwrap();
        let err = partition_months(&panel, &market(&["2000-01-04"])).unwrap_err();
        assert!(err.to_string().contains("2000-01-05"));
    }
}
