//! Price, factor and calendar ingestion plus return computation.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

/// Errors raised while loading or transforming market data.
#[derive(Debug, thiserror::Error)]
pub enum MarketDataError {
    #[error("{source_name}: line {line}: {message}")]
    Schema {
        source_name: String,
        line: u64,
        message: String,
    },

    #[error("{what}: dates must be strictly increasing ({prev} then {next})")]
    NotIncreasing {
        what: String,
        prev: NaiveDate,
        next: NaiveDate,
    },

    #[error("{instrument}: need at least 2 price observations, got {actual}")]
    TooFewPrices { instrument: String, actual: usize },

    #[error("{instrument}: non-positive price {price} on {date}")]
    NonPositivePrice {
        instrument: String,
        date: NaiveDate,
        price: f64,
    },

    #[error("no common dates between {left} and {right}")]
    EmptyIntersection { left: String, right: String },

    #[error("{0} is empty")]
    Empty(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, MarketDataError>;

/// ISO-8601 date format used by every input file.
pub const DATE_FORMAT: &str = "%Y-%m-%d";

pub fn parse_date(s: &str) -> std::result::Result<NaiveDate, chrono::ParseError> {
    NaiveDate::parse_from_str(s.trim(), DATE_FORMAT)
}

fn check_increasing<'a, I>(what: &str, dates: I) -> Result<()>
where
    I: IntoIterator<Item = &'a NaiveDate>,
{
    let mut prev: Option<NaiveDate> = None;
    for &d in dates {
        if let Some(p) = prev {
            if d <= p {
                return Err(MarketDataError::NotIncreasing {
                    what: what.to_string(),
                    prev: p,
                    next: d,
                });
            }
        }
        prev = Some(d);
    }
    Ok(())
}

/// Ordered set of trading dates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TradingCalendar {
    dates: Vec<NaiveDate>,
}

impl TradingCalendar {
    /// Builds a calendar from dates that are already strictly increasing.
    pub fn new(dates: Vec<NaiveDate>) -> Result<Self> {
        check_increasing("calendar", &dates)?;
        Ok(Self { dates })
    }

    /// Builds a calendar from any collection of dates, sorting and deduplicating.
    pub fn from_dates<I: IntoIterator<Item = NaiveDate>>(dates: I) -> Self {
        let mut dates: Vec<NaiveDate> = dates.into_iter().collect();
        dates.sort_unstable();
        dates.dedup();
        Self { dates }
    }

    /// Calendar made of the observation dates of a price series (typically the market index).
    pub fn from_prices(prices: &PriceSeries) -> Self {
        Self {
            dates: prices.observations.iter().map(|(d, _)| *d).collect(),
        }
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.dates.binary_search(&date).is_ok()
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    pub fn get(&self, index: usize) -> Option<NaiveDate> {
        self.dates.get(index).copied()
    }

    /// Index of the first trading date strictly after `date`.
    pub fn first_index_after(&self, date: NaiveDate) -> Option<usize> {
        let idx = self.dates.partition_point(|d| *d <= date);
        (idx < self.dates.len()).then_some(idx)
    }

    /// Parses a calendar file: one ISO date per line, blank lines ignored.
    pub fn read<R: Read>(reader: R, source_name: &str) -> Result<Self> {
        let mut dates = Vec::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line.map_err(|e| MarketDataError::Io {
                path: source_name.to_string(),
                source: e,
            })?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let d = parse_date(trimmed).map_err(|e| MarketDataError::Schema {
                source_name: source_name.to_string(),
                line: i as u64 + 1,
                message: format!("invalid date {trimmed:?}: {e}"),
            })?;
            dates.push(d);
        }
        Self::new(dates)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let file = open(path)?;
        Self::read(file, &path.display().to_string())
    }
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| MarketDataError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Daily closing prices of one instrument.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    instrument_id: String,
    observations: Vec<(NaiveDate, f64)>,
}

impl PriceSeries {
    pub fn new(instrument_id: impl Into<String>, observations: Vec<(NaiveDate, f64)>) -> Result<Self> {
        let instrument_id = instrument_id.into();
        check_increasing(&instrument_id, observations.iter().map(|(d, _)| d))?;
        if let Some(&(date, price)) = observations.iter().find(|(_, p)| !(*p > 0.0) || !p.is_finite()) {
            return Err(MarketDataError::NonPositivePrice {
                instrument: instrument_id,
                date,
                price,
            });
        }
        Ok(Self {
            instrument_id,
            observations,
        })
    }

    pub fn instrument_id(&self) -> &str {
        &self.instrument_id
    }

    pub fn observations(&self) -> &[(NaiveDate, f64)] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

/// Daily returns of one instrument, each dated at the later of its two prices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSeries {
    instrument_id: String,
    observations: Vec<(NaiveDate, f64)>,
}

impl ReturnSeries {
    pub fn new(instrument_id: impl Into<String>, observations: Vec<(NaiveDate, f64)>) -> Result<Self> {
        let instrument_id = instrument_id.into();
        check_increasing(&instrument_id, observations.iter().map(|(d, _)| d))?;
        Ok(Self {
            instrument_id,
            observations,
        })
    }

    pub fn instrument_id(&self) -> &str {
        &self.instrument_id
    }

    pub fn observations(&self) -> &[(NaiveDate, f64)] {
        &self.observations
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.observations.iter().map(|(_, r)| *r)
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn get(&self, date: NaiveDate) -> Option<f64> {
        self.observations
            .binary_search_by_key(&date, |(d, _)| *d)
            .ok()
            .map(|i| self.observations[i].1)
    }

    /// Observations with `start <= date <= end`.
    pub fn between(&self, start: NaiveDate, end: NaiveDate) -> ReturnSeries {
        let lo = self.observations.partition_point(|(d, _)| *d < start);
        let hi = self.observations.partition_point(|(d, _)| *d <= end);
        ReturnSeries {
            instrument_id: self.instrument_id.clone(),
            observations: self.observations[lo..hi.max(lo)].to_vec(),
        }
    }
}

/// One row of daily factor data, all daily fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorRow {
    pub date: NaiveDate,
    pub mkt_rf: f64,
    pub smb: f64,
    pub hml: f64,
    pub rmw: f64,
    pub cma: f64,
    pub rf: f64,
}

impl FactorRow {
    /// The five factor returns in loading order (mkt_rf, smb, hml, rmw, cma).
    pub fn factors(&self) -> [f64; 5] {
        [self.mkt_rf, self.smb, self.hml, self.rmw, self.cma]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorSeries {
    rows: Vec<FactorRow>,
}

impl FactorSeries {
    pub fn new(rows: Vec<FactorRow>) -> Result<Self> {
        check_increasing("factors", rows.iter().map(|r| &r.date))?;
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[FactorRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, date: NaiveDate) -> Option<&FactorRow> {
        self.rows
            .binary_search_by_key(&date, |r| r.date)
            .ok()
            .map(|i| &self.rows[i])
    }

    /// Parses the factors CSV (`date,mkt_rf,smb,hml,rmw,cma,rf`).
    pub fn read<R: Read>(reader: R, source_name: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Record {
            date: String,
            mkt_rf: f64,
            smb: f64,
            hml: f64,
            rmw: f64,
            cma: f64,
            rf: f64,
        }
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        check_headers(&mut rdr, &["date", "mkt_rf", "smb", "hml", "rmw", "cma", "rf"], source_name)?;
        let mut rows = Vec::new();
        for result in rdr.deserialize::<Record>() {
            let rec = result.map_err(|e| csv_error(e, source_name))?;
            let line = rows.len() as u64 + 2;
            let date = parse_date(&rec.date).map_err(|e| MarketDataError::Schema {
                source_name: source_name.to_string(),
                line,
                message: format!("invalid date {:?}: {e}", rec.date),
            })?;
            let row = FactorRow {
                date,
                mkt_rf: rec.mkt_rf,
                smb: rec.smb,
                hml: rec.hml,
                rmw: rec.rmw,
                cma: rec.cma,
                rf: rec.rf,
            };
            if !row.factors().iter().chain(std::iter::once(&row.rf)).all(|v| v.is_finite()) {
                return Err(MarketDataError::Schema {
                    source_name: source_name.to_string(),
                    line,
                    message: "non-finite factor value".into(),
                });
            }
            rows.push(row);
        }
        Self::new(rows)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let file = open(path)?;
        Self::read(file, &path.display().to_string())
    }
}

pub(crate) fn csv_error(e: csv::Error, source_name: &str) -> MarketDataError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    MarketDataError::Schema {
        source_name: source_name.to_string(),
        line,
        message: match e.kind() {
            csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
            _ => e.to_string(),
        },
    }
}

pub(crate) fn check_headers<R: Read>(
    rdr: &mut csv::Reader<R>,
    expected: &[&str],
    source_name: &str,
) -> Result<()> {
    let headers = rdr.headers().map_err(|e| csv_error(e, source_name))?;
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(MarketDataError::Schema {
            source_name: source_name.to_string(),
            line: 1,
            message: format!("expected header {:?}, got {:?}", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

/// Parses the prices CSV (`instrument,date,close`) into one series per instrument.
///
/// Rows may be interleaved across instruments but must be date-ordered within each.
pub fn read_prices<R: Read>(reader: R, source_name: &str) -> Result<BTreeMap<String, PriceSeries>> {
    #[derive(Deserialize)]
    struct Record {
        instrument: String,
        date: String,
        close: f64,
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    check_headers(&mut rdr, &["instrument", "date", "close"], source_name)?;
    let mut raw: BTreeMap<String, Vec<(NaiveDate, f64)>> = BTreeMap::new();
    for (i, result) in rdr.deserialize::<Record>().enumerate() {
        let rec = result.map_err(|e| csv_error(e, source_name))?;
        let line = i as u64 + 2;
        let date = parse_date(&rec.date).map_err(|e| MarketDataError::Schema {
            source_name: source_name.to_string(),
            line,
            message: format!("invalid date {:?}: {e}", rec.date),
        })?;
        if !(rec.close > 0.0) || !rec.close.is_finite() {
            return Err(MarketDataError::Schema {
                source_name: source_name.to_string(),
                line,
                message: format!("non-positive close {}", rec.close),
            });
        }
        raw.entry(rec.instrument).or_default().push((date, rec.close));
    }
    raw.into_iter()
        .map(|(id, obs)| PriceSeries::new(id.clone(), obs).map(|s| (id, s)))
        .collect()
}

pub fn read_prices_path(path: &Path) -> Result<BTreeMap<String, PriceSeries>> {
    let file = open(path)?;
    read_prices(file, &path.display().to_string())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnMethod {
    Simple,
    #[default]
    Log,
}

impl ReturnMethod {
    fn apply(self, prev: f64, next: f64) -> f64 {
        match self {
            ReturnMethod::Simple => next / prev - 1.0,
            ReturnMethod::Log => (next / prev).ln(),
        }
    }
}

impl std::str::FromStr for ReturnMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "simple" => Ok(Self::Simple),
            "log" => Ok(Self::Log),
            other => Err(format!("unknown return method {other:?} (expected simple|log)")),
        }
    }
}

pub fn compute_returns(prices: &PriceSeries, method: ReturnMethod) -> Result<ReturnSeries> {
    let obs = prices.observations();
    if obs.len() < 2 {
        return Err(MarketDataError::TooFewPrices {
            instrument: prices.instrument_id.clone(),
            actual: obs.len(),
        });
    }
    let observations = obs
        .windows(2)
        .map(|w| (w[1].0, method.apply(w[0].1, w[1].1)))
        .collect();
    Ok(ReturnSeries {
        instrument_id: prices.instrument_id.clone(),
        observations,
    })
}

/// Returns restricted to a trading calendar.
#[derive(Debug, Clone, PartialEq)]
pub struct CalendarReturns {
    pub returns: ReturnSeries,
    /// Calendar days inside the series' span that had no price.
    pub gaps: usize,
    /// Price observations dropped because their date is not a trading day.
    pub off_calendar: usize,
}

/// Computes returns using only prices on trading days.
///
/// A trading day without a price is skipped: the next return spans the gap
/// and the day is counted in [`CalendarReturns::gaps`].
pub fn compute_returns_on_calendar(
    prices: &PriceSeries,
    method: ReturnMethod,
    calendar: &TradingCalendar,
) -> Result<CalendarReturns> {
    let on_cal: Vec<(NaiveDate, f64)> = prices
        .observations
        .iter()
        .copied()
        .filter(|(d, _)| calendar.contains(*d))
        .collect();
    let off_calendar = prices.len() - on_cal.len();
    let filtered = PriceSeries {
        instrument_id: prices.instrument_id.clone(),
        observations: on_cal,
    };
    let returns = compute_returns(&filtered, method)?;
    let first = filtered.observations[0].0;
    let last = filtered.observations[filtered.len() - 1].0;
    let span = calendar.index_of(last).unwrap() - calendar.index_of(first).unwrap() + 1;
    Ok(CalendarReturns {
        returns,
        gaps: span - filtered.len(),
        off_calendar,
    })
}

/// Anything that can be looked up by date for alignment.
pub trait DatedSeries {
    type Item: Copy;

    fn name(&self) -> String;
    fn entries(&self) -> Vec<(NaiveDate, Self::Item)>;
}

impl DatedSeries for ReturnSeries {
    type Item = f64;

    fn name(&self) -> String {
        self.instrument_id.clone()
    }

    fn entries(&self) -> Vec<(NaiveDate, f64)> {
        self.observations.clone()
    }
}

impl DatedSeries for FactorSeries {
    type Item = FactorRow;

    fn name(&self) -> String {
        "factors".into()
    }

    fn entries(&self) -> Vec<(NaiveDate, FactorRow)> {
        self.rows.iter().map(|r| (r.date, *r)).collect()
    }
}

/// A return paired with the other series' value on the same date.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Paired<T> {
    pub date: NaiveDate,
    pub value: f64,
    pub other: T,
}

/// Pairs observations on the intersection of dates, in date order.
pub fn align<S: DatedSeries>(series_a: &ReturnSeries, series_b: &S) -> Result<Vec<Paired<S::Item>>> {
    if series_a.is_empty() {
        return Err(MarketDataError::Empty(series_a.instrument_id.clone()));
    }
    let b = series_b.entries();
    if b.is_empty() {
        return Err(MarketDataError::Empty(series_b.name()));
    }
    let a = &series_a.observations;
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(Paired {
                    date: a[i].0,
                    value: a[i].1,
                    other: b[j].1,
                });
                i += 1;
                j += 1;
            }
        }
    }
    if out.is_empty() {
        return Err(MarketDataError::EmptyIntersection {
            left: series_a.instrument_id.clone(),
            right: series_b.name(),
        });
    }
    Ok(out)
}

/// Returns in excess of the risk-free rate on dates shared with the factors.
pub fn excess_returns(returns: &ReturnSeries, factors: &FactorSeries) -> Result<ReturnSeries> {
    let observations = align(returns, factors)?
        .into_iter()
        .map(|p| (p.date, p.value - p.other.rf))
        .collect();
    Ok(ReturnSeries {
        instrument_id: returns.instrument_id.clone(),
        observations,
    })
}
