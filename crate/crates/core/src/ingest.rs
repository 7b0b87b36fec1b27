//! Quote and daily-price ingestion, previous-tick grids and log returns.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Read;
use std::ops::Range;

use chrono::{NaiveDate, NaiveDateTime, NaiveTime, Timelike};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::epochs::{Horizon, ReturnPanel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QuoteTick {
    pub timestamp: NaiveDateTime,
    pub ticker: String,
    pub bid: f64,
    pub ask: f64,
}

impl QuoteTick {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.bid + self.ask)
    }
}

/// Column names of a quote file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuoteSchema {
    pub timestamp: String,
    pub ticker: String,
    pub bid: String,
    pub ask: String,
}

impl Default for QuoteSchema {
    fn default() -> Self {
        Self {
            timestamp: "timestamp".into(),
            ticker: "ticker".into(),
            bid: "bid".into(),
            ask: "ask".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedQuotes {
    /// Sorted by ticker, then timestamp; equal timestamps keep file order.
    pub ticks: Vec<QuoteTick>,
    pub malformed: usize,
    /// Rows with `ask < bid` or a non-positive price.
    pub rejected: usize,
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Schema(format!("missing column {name:?} in header {headers:?}")))
}

fn parse_timestamp(s: &str, date: Option<NaiveDate>) -> Option<NaiveDateTime> {
    let s = s.trim();
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(t);
        }
    }
    let time = NaiveTime::parse_from_str(s, "%H:%M:%S%.f").ok()?;
    Some(date?.and_time(time))
}

/// Parses a quote CSV. Clock-only timestamps take their date from `date`.
pub fn parse_quotes<R: Read>(input: R, schema: &QuoteSchema, date: Option<NaiveDate>) -> Result<ParsedQuotes> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let headers = match rdr.headers() {
        Ok(h) => h.clone(),
        Err(e) => return Err(Error::Schema(format!("unreadable header: {e}"))),
    };
    if headers.is_empty() {
        return Ok(ParsedQuotes::default());
    }
    let idx = [
        column(&headers, &schema.timestamp)?,
        column(&headers, &schema.ticker)?,
        column(&headers, &schema.bid)?,
        column(&headers, &schema.ask)?,
    ];
    let mut out = ParsedQuotes::default();
    for rec in rdr.records() {
        let Ok(rec) = rec else {
            out.malformed += 1;
            continue;
        };
        let field = |i: usize| rec.get(idx[i]).map(str::trim);
        let parsed = (|| {
            let timestamp = parse_timestamp(field(0)?, date)?;
            let ticker = field(1).filter(|t| !t.is_empty())?.to_string();
            let bid: f64 = field(2)?.parse().ok()?;
            let ask: f64 = field(3)?.parse().ok()?;
            Some(QuoteTick {
                timestamp,
                ticker,
                bid,
                ask,
            })
        })();
        match parsed {
            None => out.malformed += 1,
            Some(t) if !(t.bid > 0.0 && t.ask >= t.bid && t.ask.is_finite()) => out.rejected += 1,
            Some(t) => out.ticks.push(t),
        }
    }
    out.ticks
        .sort_by(|a, b| a.ticker.cmp(&b.ticker).then(a.timestamp.cmp(&b.timestamp)));
    Ok(out)
}

/// Midpoint series per ticker, in timestamp order.
pub type Midpoints = BTreeMap<String, Vec<(NaiveDateTime, f64)>>;

pub fn build_midpoints(ticks: &[QuoteTick]) -> Midpoints {
    let mut out = Midpoints::new();
    for t in ticks {
        out.entry(t.ticker.clone()).or_default().push((t.timestamp, t.midpoint()));
    }
    for series in out.values_mut() {
        series.sort_by_key(|p| p.0);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub open: NaiveTime,
    pub close: NaiveTime,
}

impl Default for Session {
    fn default() -> Self {
        Self {
            open: NaiveTime::from_hms_opt(9, 40, 0).unwrap(),
            close: NaiveTime::from_hms_opt(15, 50, 0).unwrap(),
        }
    }
}

impl Session {
    pub fn seconds(&self) -> u32 {
        self.close.num_seconds_from_midnight() - self.open.num_seconds_from_midnight()
    }
}

/// A half-open clock range `[start, end)` removed from one day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcludedSegment {
    pub date: NaiveDate,
    pub start: NaiveTime,
    pub end: NaiveTime,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TradingCalendar {
    pub trading_days: Vec<NaiveDate>,
    #[serde(default)]
    pub session: Session,
    #[serde(default)]
    pub excluded: Vec<ExcludedSegment>,
}

impl TradingCalendar {
    pub fn new(trading_days: Vec<NaiveDate>) -> Self {
        Self {
            trading_days,
            session: Session::default(),
            excluded: Vec::new(),
        }
    }

    /// The early closes of 2014: afternoon trading from 13:00 is dropped.
    pub fn half_days_2014() -> Vec<ExcludedSegment> {
        [(7, 3), (11, 28), (12, 24)]
            .iter()
            .map(|&(m, d)| ExcludedSegment {
                date: NaiveDate::from_ymd_opt(2014, m, d).unwrap(),
                start: NaiveTime::from_hms_opt(13, 0, 0).unwrap(),
                end: NaiveTime::from_hms_opt(15, 50, 0).unwrap(),
            })
            .collect()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cal: Self = toml::from_str(text).map_err(|e| Error::Config(format!("calendar: {e}")))?;
        cal.validate()?;
        Ok(cal)
    }

    pub fn validate(&self) -> Result<()> {
        if self.session.open >= self.session.close {
            return Err(Error::Config("session open must precede close".into()));
        }
        if self.trading_days.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("trading days must be strictly increasing".into()));
        }
        for seg in &self.excluded {
            if seg.start >= seg.end || seg.start < self.session.open || seg.end > self.session.close {
                return Err(Error::Config(format!("excluded segment on {} lies outside the session", seg.date)));
            }
        }
        Ok(())
    }

    /// Grid times of one day, split into contiguous blocks around exclusions.
    fn day_blocks(&self, day: NaiveDate, dt: u32) -> Vec<Vec<NaiveDateTime>> {
        let n = self.session.seconds() / dt;
        let cuts: Vec<&ExcludedSegment> = self.excluded.iter().filter(|s| s.date == day).collect();
        let mut blocks: Vec<Vec<NaiveDateTime>> = vec![Vec::new()];
        for i in 0..n {
            let t = self.session.open + chrono::Duration::seconds((i * dt) as i64);
            if cuts.iter().any(|s| t >= s.start && t < s.end) {
                if !blocks.last().unwrap().is_empty() {
                    blocks.push(Vec::new());
                }
                continue;
            }
            blocks.last_mut().unwrap().push(day.and_time(t));
        }
        blocks.retain(|b| !b.is_empty());
        blocks
    }
}

/// Prices on a regular grid, one row per ticker.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceGrid {
    pub tickers: Vec<String>,
    pub times: Vec<NaiveDateTime>,
    pub prices: DMatrix<f64>,
    pub horizon: Horizon,
    /// Grid-index ranges of the trading days (a single range for daily data).
    pub days: Vec<Range<usize>>,
    /// Grid indices that follow an intraday excluded gap.
    pub gaps: Vec<usize>,
}

impl PriceGrid {
    pub fn points_per_day(&self) -> Vec<usize> {
        self.days.iter().map(|r| r.len()).collect()
    }

    /// First grid index of each day.
    pub fn day_starts(&self) -> Vec<usize> {
        self.days.iter().map(|r| r.start).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridBuild {
    pub grid: PriceGrid,
    /// Tickers removed for lacking coverage, with the reason.
    pub dropped: Vec<(String, String)>,
}

/// Previous-tick sampling onto the calendar's grid.
///
/// Only same-day quotes are used. A ticker without a quote at or before a
/// day's first grid point is dropped.
pub fn resample_grid(midpoints: &Midpoints, calendar: &TradingCalendar, dt: u32) -> Result<GridBuild> {
    calendar.validate()?;
    if dt == 0 || calendar.session.seconds() % dt != 0 {
        return Err(Error::Parameter(format!(
            "Δt = {dt} s does not divide the {} s session",
            calendar.session.seconds()
        )));
    }
    let mut times = Vec::new();
    let mut days = Vec::new();
    let mut gaps = Vec::new();
    for &day in &calendar.trading_days {
        let start = times.len();
        for (b, block) in calendar.day_blocks(day, dt).into_iter().enumerate() {
            if b > 0 {
                gaps.push(times.len());
            }
            times.extend(block);
        }
        if times.len() > start {
            days.push(start..times.len());
        }
    }
    if times.is_empty() {
        return Err(Error::Insufficient("calendar yields no grid points".into()));
    }
    let rows: Vec<(String, std::result::Result<Vec<f64>, String>)> = midpoints
        .par_iter()
        .map(|(ticker, series)| (ticker.clone(), sample_ticker(series, &times, &days)))
        .collect();
    let mut tickers = Vec::new();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (ticker, row) in rows {
        match row {
            Ok(r) => {
                tickers.push(ticker);
                kept.push(r);
            }
            Err(reason) => dropped.push((ticker, reason)),
        }
    }
    if kept.is_empty() {
        return Err(Error::Insufficient("no ticker covers every trading day".into()));
    }
    let prices = DMatrix::from_fn(kept.len(), times.len(), |i, j| kept[i][j]);
    Ok(GridBuild {
        grid: PriceGrid {
            tickers,
            times,
            prices,
            horizon: Horizon::Seconds(dt),
            days,
            gaps,
        },
        dropped,
    })
}

fn sample_ticker(series: &[(NaiveDateTime, f64)], times: &[NaiveDateTime], days: &[Range<usize>]) -> std::result::Result<Vec<f64>, String> {
    let mut out = vec![0.0; times.len()];
    for day in days {
        let date = times[day.start].date();
        let first = series.partition_point(|p| p.0.date() < date);
        let mut next = first;
        let mut last: Option<f64> = None;
        for g in day.clone() {
            while next < series.len() && series[next].0 <= times[g] {
                last = Some(series[next].1);
                next += 1;
            }
            out[g] = last.ok_or_else(|| format!("no quote by {}", times[day.start]))?;
        }
    }
    Ok(out)
}

/// Log returns between consecutive grid points.
///
/// Returns across a day boundary are kept only with `include_overnight`, and
/// are then flagged. Returns across an intraday excluded gap are never kept.
pub fn log_returns(grid: &PriceGrid, include_overnight: bool) -> Result<ReturnPanel> {
    if grid.prices.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
        return Err(Error::Data("grid holds a non-positive price".into()));
    }
    let gaps: BTreeSet<usize> = grid.gaps.iter().copied().collect();
    let day_start: BTreeSet<usize> = grid.days.iter().skip(1).map(|r| r.start).collect();
    let mut cols = Vec::new();
    let mut boundary = Vec::new();
    let mut epochs = Vec::new();
    for day in &grid.days {
        let first = cols.len();
        for j in day.start.max(1)..day.end {
            if gaps.contains(&j) {
                continue;
            }
            let is_boundary = day_start.contains(&j);
            if is_boundary && !include_overnight {
                continue;
            }
            cols.push(j);
            boundary.push(is_boundary);
        }
        if cols.len() > first {
            epochs.push(first..cols.len());
        }
    }
    if cols.is_empty() {
        return Err(Error::Insufficient("grid yields no returns".into()));
    }
    let returns = DMatrix::from_fn(grid.prices.nrows(), cols.len(), |i, c| {
        let j = cols[c];
        (grid.prices[(i, j)] / grid.prices[(i, j - 1)]).ln()
    });
    let origin = match (grid.times.first(), grid.times.last()) {
        (Some(a), Some(b)) => format!("{}..{}", a.date(), b.date()),
        _ => String::new(),
    };
    let mut panel = ReturnPanel::new(grid.tickers.clone(), returns, grid.horizon, origin)?;
    panel.boundary = boundary;
    panel.epochs = epochs;
    panel.validate()?;
    Ok(panel)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DailyLoad {
    pub grid: PriceGrid,
    pub dropped: Vec<(String, String)>,
    /// Repeated `(date, ticker)` rows; the last one wins.
    pub duplicates: usize,
    /// Dates held by only a minority of tickers, removed from the grid.
    pub sparse_dates: Vec<NaiveDate>,
}

/// Loads `date,ticker,adj_close` rows.
///
/// The reference dates are those quoted for more than half of the tickers.
/// Tickers missing any reference date are dropped.
pub fn load_daily_panel<R: Read>(input: R) -> Result<DailyLoad> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers().map_err(|e| Error::Schema(format!("unreadable header: {e}")))?.clone();
    let idx = [column(&headers, "date")?, column(&headers, "ticker")?, column(&headers, "adj_close")?];
    let mut table: BTreeMap<String, BTreeMap<NaiveDate, f64>> = BTreeMap::new();
    let mut duplicates = 0;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let get = |i: usize| rec.get(idx[i]).map(str::trim).unwrap_or("");
        let date = NaiveDate::parse_from_str(get(0), "%Y-%m-%d")
            .map_err(|_| Error::Data(format!("row {}: bad date {:?}", line + 2, get(0))))?;
        let price: f64 = get(2)
            .parse()
            .map_err(|_| Error::Data(format!("row {}: bad price {:?}", line + 2, get(2))))?;
        if !(price > 0.0 && price.is_finite()) {
            return Err(Error::Data(format!("row {}: non-positive price", line + 2)));
        }
        if table.entry(get(1).to_string()).or_default().insert(date, price).is_some() {
            duplicates += 1;
        }
    }
    if table.is_empty() {
        return Err(Error::Insufficient("daily file has no rows".into()));
    }
    let mut coverage: HashMap<NaiveDate, usize> = HashMap::new();
    for series in table.values() {
        for d in series.keys() {
            *coverage.entry(*d).or_default() += 1;
        }
    }
    let k = table.len();
    let mut dates: Vec<NaiveDate> = coverage.iter().filter(|(_, &c)| 2 * c > k).map(|(d, _)| *d).collect();
    dates.sort();
    let mut sparse_dates: Vec<NaiveDate> = coverage.keys().filter(|d| dates.binary_search(d).is_err()).copied().collect();
    sparse_dates.sort();
    let mut tickers = Vec::new();
    let mut rows = Vec::new();
    let mut dropped = Vec::new();
    for (ticker, series) in table {
        match dates.iter().find(|d| !series.contains_key(d)) {
            Some(d) => dropped.push((ticker, format!("no price on {d}"))),
            None => {
                rows.push(dates.iter().map(|d| series[d]).collect::<Vec<f64>>());
                tickers.push(ticker);
            }
        }
    }
    if rows.is_empty() || dates.is_empty() {
        return Err(Error::Insufficient("no ticker covers the reference dates".into()));
    }
    let prices = DMatrix::from_fn(rows.len(), dates.len(), |i, j| rows[i][j]);
    Ok(DailyLoad {
        grid: PriceGrid {
            tickers,
            times: dates.iter().map(|d| d.and_time(NaiveTime::MIN)).collect(),
            prices,
            horizon: Horizon::Days(1),
            days: vec![0..dates.len()],
            gaps: Vec::new(),
        },
        dropped,
        duplicates,
        sparse_dates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    #[test]
    fn parse_rows() {
        let text = "timestamp,ticker,bid,ask\n09:41:00,ABC,10.00,10.02\n09:42:00,ABC,10.05,10.01\nbad,ABC,1,2\n";
        let q = parse_quotes(text.as_bytes(), &QuoteSchema::default(), Some(d("2014-01-02"))).unwrap();
        assert_eq!(q.ticks.len(), 1);
        assert_eq!(q.ticks[0].bid, 10.0);
        assert_eq!(q.ticks[0].ask, 10.02);
        assert_eq!(q.rejected, 1);
        assert_eq!(q.malformed, 1);
        let empty = parse_quotes("".as_bytes(), &QuoteSchema::default(), None).unwrap();
        assert!(empty.ticks.is_empty() && empty.rejected == 0);
        assert!(matches!(
            parse_quotes("time,sym,b,a\n".as_bytes(), &QuoteSchema::default(), None),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn midpoints() {
        let t = |bid, ask| QuoteTick {
            timestamp: d("2014-01-02").and_hms_opt(10, 0, 0).unwrap(),
            ticker: "X".into(),
            bid,
            ask,
        };
        assert_eq!(t(10.0, 12.0).midpoint(), 11.0);
        assert_eq!(t(7.5, 7.5).midpoint(), 7.5);
        assert!((t(99.98, 100.0).midpoint() - 99.99).abs() < 1e-12);
    }

    #[test]
    fn grid_sizes() {
        let cal = TradingCalendar::new(vec![d("2014-01-02")]);
        assert_eq!(cal.session.seconds() / 1, 22_200);
        assert_eq!(cal.session.seconds() / 10, 2_220);
        let mut m = Midpoints::new();
        m.insert("A".into(), vec![(d("2014-01-02").and_hms_opt(9, 40, 0).unwrap(), 50.0)]);
        let g = resample_grid(&m, &cal, 10).unwrap().grid;
        assert_eq!(g.times.len(), 2_220);
        assert!(g.prices.iter().all(|p| *p == 50.0));
        assert!(resample_grid(&m, &cal, 7).is_err());
    }

    #[test]
    fn drops_late_ticker_and_handles_half_day() {
        let mut cal = TradingCalendar::new(vec![d("2014-07-02"), d("2014-07-03")]);
        cal.excluded = TradingCalendar::half_days_2014();
        let mut m = Midpoints::new();
        let at = |day: &str, h, mi| d(day).and_hms_opt(h, mi, 0).unwrap();
        m.insert("A".into(), vec![(at("2014-07-02", 9, 30), 10.0), (at("2014-07-03", 9, 0), 11.0)]);
        m.insert("B".into(), vec![(at("2014-07-02", 9, 30), 10.0), (at("2014-07-03", 10, 0), 11.0)]);
        let built = resample_grid(&m, &cal, 60).unwrap();
        assert_eq!(built.grid.tickers, vec!["A".to_string()]);
        assert_eq!(built.dropped[0].0, "B");
        assert_eq!(built.grid.points_per_day(), vec![370, 200]);
    }

    #[test]
    fn returns_and_overnight() {
        let cal = TradingCalendar::new(vec![d("2014-01-02"), d("2014-01-03")]);
        let mut m = Midpoints::new();
        m.insert("A".into(), vec![
            (d("2014-01-02").and_hms_opt(9, 0, 0).unwrap(), 100.0),
            (d("2014-01-02").and_hms_opt(12, 0, 0).unwrap(), 110.0),
            (d("2014-01-03").and_hms_opt(9, 0, 0).unwrap(), 121.0),
        ]);
        let g = resample_grid(&m, &cal, 600).unwrap().grid;
        let per_day = 37;
        let ex = log_returns(&g, false).unwrap();
        assert_eq!(ex.t(), 2 * (per_day - 1));
        assert!(ex.boundary.iter().all(|b| !b));
        let inc = log_returns(&g, true).unwrap();
        assert_eq!(inc.t(), 2 * per_day - 1);
        assert_eq!(inc.boundary.iter().filter(|b| **b).count(), 1);
        let total: f64 = inc.returns.iter().sum();
        assert!((total - (121.0f64 / 100.0).ln()).abs() < 1e-12);
        assert!(ex.returns.iter().any(|r| (r - 1.1f64.ln()).abs() < 1e-12));
    }

    #[test]
    fn daily_loader() {
        let text = "date,ticker,adj_close\n2014-01-02,A,100\n2014-01-03,A,101\n2014-01-02,B,5\n2014-01-03,B,6\n2014-01-03,B,7\n2014-01-02,C,1\n";
        let load = load_daily_panel(text.as_bytes()).unwrap();
        assert_eq!(load.duplicates, 1);
        assert_eq!(load.grid.tickers, vec!["A".to_string(), "B".to_string()]);
        assert_eq!(load.dropped[0].0, "C");
        let r = log_returns(&load.grid, false).unwrap();
        assert_eq!(r.t(), 1);
        assert!((r.returns[(0, 0)] - 1.01f64.ln()).abs() < 1e-15);
        assert!((r.returns[(1, 0)] - (7.0f64 / 5.0).ln()).abs() < 1e-15);
    }

    #[test]
    fn calendar_toml() {
        let text = r#"
trading_days = ["2014-07-02", "2014-07-03"]
[session]
open = "09:40:00"
close = "15:50:00"
[[excluded]]
date = "2014-07-03"
start = "13:00:00"
end = "15:50:00"
"#;
        let cal = TradingCalendar::from_toml(text).unwrap();
        assert_eq!(cal.excluded.len(), 1);
        assert!(TradingCalendar::from_toml("trading_days = []\n[session]\nopen = \"16:00:00\"\nclose = \"09:00:00\"\n").is_err());
    }

    proptest! {
        #[test]
        fn sparse_streams_fill_completely(
            quotes in proptest::collection::vec((0u32..3, 0u32..22_200, 1.0f64..200.0), 1..60),
        ) {
            let days = [d("2014-03-03"), d("2014-03-04")];
            let cal = TradingCalendar::new(days.to_vec());
            let mut m = Midpoints::new();
            for (tk, sec, price) in &quotes {
                for day in days {
                    let t = day.and_hms_opt(9, 40, 0).unwrap() + chrono::Duration::seconds(*sec as i64);
                    m.entry(format!("T{tk}")).or_default().push((t, *price));
                }
            }
            for s in m.values_mut() {
                s.sort_by_key(|p| p.0);
                // guarantee coverage at the open
                let open = s[0].0.date().and_hms_opt(9, 40, 0).unwrap();
                let first = s[0].1;
                s.insert(0, (open, first));
                let second = days[1].and_hms_opt(9, 40, 0).unwrap();
                let pos = s.partition_point(|p| p.0 < second);
                s.insert(pos, (second, first));
            }
            let g = resample_grid(&m, &cal, 60).unwrap().grid;
            prop_assert_eq!(g.tickers.len(), m.len());
            prop_assert!(g.prices.iter().all(|p| *p > 0.0));
            prop_assert!(g.times.windows(2).all(|w| w[0] < w[1]));
            let r = log_returns(&g, true).unwrap();
            for i in 0..g.tickers.len() {
                let mut price = g.prices[(i, 0)];
                for (c, j) in (1..g.times.len()).enumerate() {
                    price *= r.returns[(i, c)].exp();
                    prop_assert!((price / g.prices[(i, j)] - 1.0).abs() < 1e-12);
                }
            }
            let ex = log_returns(&g, false).unwrap();
            prop_assert_eq!(ex.t(), g.times.len() - 2);
        }
    }
}
