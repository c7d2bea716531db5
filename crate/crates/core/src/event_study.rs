//! Event resolution, abnormal returns, CAR and CAAR.
//!
//! Relative day offsets count trading days on the supplied calendar. Offset 0
//! is the event date: the first trading day strictly after the report
//! submission date.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::expected_return::{
    self, DateInputs, EstimationWindow, ExpectedReturnError, ModelKind, NormalReturnModel,
};
use crate::market_data::{
    self, FactorSeries, MarketDataError, PriceSeries, ReturnMethod, ReturnSeries, TradingCalendar,
};

pub const DEFAULT_WINDOWS: [usize; 3] = [5, 3, 1];

#[derive(Debug, thiserror::Error)]
pub enum EventStudyError {
    #[error("no trading date after {0} in calendar")]
    CalendarExhausted(NaiveDate),

    #[error("event window [-{window},{window}] around {event_date} leaves the calendar")]
    WindowOutOfRange { event_date: NaiveDate, window: usize },

    #[error("missing {what} on {date}")]
    MissingData { what: String, date: NaiveDate },

    #[error("no CAR values to average")]
    EmptyInput,

    #[error("CAR windows differ: expected {expected}, found {found}")]
    MixedWindows { expected: usize, found: usize },

    #[error("no windows requested")]
    NoWindows,

    #[error(transparent)]
    ExpectedReturn(#[from] ExpectedReturnError),

    #[error(transparent)]
    MarketData(#[from] MarketDataError),
}

pub type Result<T> = std::result::Result<T, EventStudyError>;

/// First trading date strictly after the submission date, with its calendar index.
pub fn resolve_event_date(submission: NaiveDate, calendar: &TradingCalendar) -> Result<(usize, NaiveDate)> {
    let idx = calendar
        .first_index_after(submission)
        .ok_or(EventStudyError::CalendarExhausted(submission))?;
    Ok((idx, calendar.get(idx).unwrap()))
}

/// A row of the events CSV.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EventRecord {
    pub firm: String,
    pub submission_date: NaiveDate,
}

pub fn read_events<R: Read>(reader: R, source_name: &str) -> std::result::Result<Vec<EventRecord>, MarketDataError> {
    #[derive(Deserialize)]
    struct Record {
        firm: String,
        submission_date: String,
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    market_data::check_headers(&mut rdr, &["firm", "submission_date"], source_name)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<Record>().enumerate() {
        let rec = rec.map_err(|e| market_data::csv_error(e, source_name))?;
        let date = market_data::parse_date(&rec.submission_date).map_err(|e| MarketDataError::Schema {
            source_name: source_name.to_string(),
            line: i as u64 + 2,
            message: format!("invalid date {:?}: {e}", rec.submission_date),
        })?;
        out.push(EventRecord {
            firm: rec.firm,
            submission_date: date,
        });
    }
    Ok(out)
}

pub fn read_events_path(path: &Path) -> std::result::Result<Vec<EventRecord>, MarketDataError> {
    let file = std::fs::File::open(path).map_err(|e| MarketDataError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    read_events(file, &path.display().to_string())
}

/// A report submission resolved onto the trading calendar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSpec {
    pub firm_id: String,
    pub submission_date: NaiveDate,
    pub event_date: NaiveDate,
    /// Calendar index of `event_date`.
    pub event_index: usize,
    /// Half-widths of the symmetric windows.
    pub windows: Vec<usize>,
    /// Set when the widest window overlaps another event of the same firm.
    pub overlapping: bool,
}

impl EventSpec {
    pub fn resolve(
        firm_id: impl Into<String>,
        submission_date: NaiveDate,
        windows: Vec<usize>,
        calendar: &TradingCalendar,
    ) -> Result<Self> {
        if windows.is_empty() {
            return Err(EventStudyError::NoWindows);
        }
        let (event_index, event_date) = resolve_event_date(submission_date, calendar)?;
        Ok(Self {
            firm_id: firm_id.into(),
            submission_date,
            event_date,
            event_index,
            windows,
            overlapping: false,
        })
    }

    pub fn widest(&self) -> usize {
        self.windows.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbnormalReturnSeries {
    pub firm_id: String,
    pub event_date: NaiveDate,
    pub window: usize,
    /// (relative trading-day offset, abnormal return), offsets -w..=w.
    pub values: Vec<(i64, f64)>,
}

impl AbnormalReturnSeries {
    pub fn get(&self, offset: i64) -> Option<f64> {
        let w = self.window as i64;
        (-w..=w).contains(&offset).then(|| self.values[(offset + w) as usize].1)
    }
}

/// Series the normal-return models read on each event day.
#[derive(Debug, Clone, Copy, Default)]
pub struct ModelInputs<'a> {
    pub market: Option<&'a ReturnSeries>,
    pub factors: Option<&'a FactorSeries>,
}

impl ModelInputs<'_> {
    fn on(&self, date: NaiveDate) -> DateInputs {
        DateInputs {
            date,
            market: self.market.and_then(|m| m.get(date)),
            factors: self.factors.and_then(|f| f.get(date).copied()),
        }
    }
}

pub fn compute_ar(
    event: &EventSpec,
    window: usize,
    actual: &ReturnSeries,
    model: &NormalReturnModel,
    inputs: &ModelInputs<'_>,
    calendar: &TradingCalendar,
) -> Result<AbnormalReturnSeries> {
    let w = window as i64;
    let center = event.event_index as i64;
    if center - w < 0 || (center + w) as usize >= calendar.len() {
        return Err(EventStudyError::WindowOutOfRange {
            event_date: event.event_date,
            window,
        });
    }
    let mut values = Vec::with_capacity(2 * window + 1);
    for offset in -w..=w {
        let date = calendar.get((center + offset) as usize).unwrap();
        let r = actual.get(date).ok_or_else(|| EventStudyError::MissingData {
            what: format!("{} return", actual.instrument_id()),
            date,
        })?;
        let normal = expected_return::predict_normal(model, &inputs.on(date))?;
        values.push((offset, r - normal));
    }
    Ok(AbnormalReturnSeries {
        firm_id: event.firm_id.clone(),
        event_date: event.event_date,
        window,
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarValue {
    pub firm_id: String,
    pub event_date: NaiveDate,
    pub window: usize,
    pub car: f64,
}

pub fn compute_car(ar: &AbnormalReturnSeries) -> CarValue {
    CarValue {
        firm_id: ar.firm_id.clone(),
        event_date: ar.event_date,
        window: ar.window,
        car: ar.values.iter().map(|(_, v)| v).sum(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaarValue {
    pub window: usize,
    pub caar: f64,
    pub n_events: usize,
}

pub fn compute_caar(cars: &[CarValue], window: usize) -> Result<CaarValue> {
    if cars.is_empty() {
        return Err(EventStudyError::EmptyInput);
    }
    if let Some(bad) = cars.iter().find(|c| c.window != window) {
        return Err(EventStudyError::MixedWindows {
            expected: window,
            found: bad.window,
        });
    }
    // sorted summation so the result does not depend on input order
    let mut vals: Vec<f64> = cars.iter().map(|c| c.car).collect();
    vals.sort_by(f64::total_cmp);
    Ok(CaarValue {
        window,
        caar: vals.iter().sum::<f64>() / vals.len() as f64,
        n_events: vals.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventStudyConfig {
    pub model: ModelKind,
    pub windows: Vec<usize>,
    pub estimation_length: usize,
    pub min_estimation_obs: usize,
}

impl Default for EventStudyConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::default(),
            windows: DEFAULT_WINDOWS.to_vec(),
            estimation_length: expected_return::DEFAULT_ESTIMATION_LENGTH,
            min_estimation_obs: expected_return::DEFAULT_MIN_OBSERVATIONS,
        }
    }
}

/// Return series for every instrument on a shared calendar.
#[derive(Debug, Clone)]
pub struct ReturnsPanel {
    pub calendar: TradingCalendar,
    pub returns: BTreeMap<String, ReturnSeries>,
    /// Per-instrument count of trading days without a price.
    pub gaps: BTreeMap<String, usize>,
}

impl ReturnsPanel {
    /// Computes returns for every instrument; instruments with fewer than two
    /// on-calendar prices are skipped and reported in the second value.
    pub fn from_prices(
        prices: &BTreeMap<String, PriceSeries>,
        method: ReturnMethod,
        calendar: TradingCalendar,
    ) -> (Self, Vec<(String, String)>) {
        let mut returns = BTreeMap::new();
        let mut gaps = BTreeMap::new();
        let mut skipped = Vec::new();
        for (id, series) in prices {
            match market_data::compute_returns_on_calendar(series, method, &calendar) {
                Ok(out) => {
                    gaps.insert(id.clone(), out.gaps);
                    returns.insert(id.clone(), out.returns);
                }
                Err(e) => skipped.push((id.clone(), e.to_string())),
            }
        }
        (
            Self {
                calendar,
                returns,
                gaps,
            },
            skipped,
        )
    }
}

#[derive(Debug, Clone)]
pub struct EventStudyInputs<'a> {
    pub calendar: &'a TradingCalendar,
    pub stock_returns: &'a BTreeMap<String, ReturnSeries>,
    pub market: Option<&'a ReturnSeries>,
    pub factors: Option<&'a FactorSeries>,
    pub events: &'a [EventRecord],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedEvent {
    pub firm: String,
    pub submission_date: NaiveDate,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanArPoint {
    pub window: usize,
    pub offset: i64,
    pub mean_ar: f64,
    pub n_events: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventStudyOutput {
    /// Included events, ordered by (firm, event date, submission date).
    pub events: Vec<EventSpec>,
    pub models: Vec<NormalReturnModel>,
    /// One AR series per (event, window), grouped by event.
    pub abnormal_returns: Vec<AbnormalReturnSeries>,
    pub cars: Vec<CarValue>,
    pub caars: Vec<CaarValue>,
    pub mean_ar: Vec<MeanArPoint>,
    pub dropped: Vec<DroppedEvent>,
}

impl EventStudyOutput {
    pub fn cars_for(&self, window: usize) -> impl Iterator<Item = &CarValue> {
        self.cars.iter().filter(move |c| c.window == window)
    }
}

struct EventResult {
    model: NormalReturnModel,
    ars: Vec<AbnormalReturnSeries>,
}

fn study_event(
    event: &EventSpec,
    inputs: &EventStudyInputs<'_>,
    config: &EventStudyConfig,
) -> Result<EventResult> {
    let stock = inputs
        .stock_returns
        .get(&event.firm_id)
        .ok_or_else(|| EventStudyError::MissingData {
            what: format!("price series for {}", event.firm_id),
            date: event.event_date,
        })?;
    let widest = event.widest();
    let first_excluded = event.event_index.checked_sub(widest).ok_or(EventStudyError::WindowOutOfRange {
        event_date: event.event_date,
        window: widest,
    })?;
    let est = EstimationWindow::ending_before(
        inputs.calendar,
        first_excluded,
        config.estimation_length,
        config.min_estimation_obs,
    )?;
    let model = expected_return::fit_model(config.model, stock, inputs.market, inputs.factors, &est)?;
    let model_inputs = ModelInputs {
        market: inputs.market,
        factors: inputs.factors,
    };
    let mut ars = Vec::with_capacity(event.windows.len());
    for &w in &event.windows {
        ars.push(compute_ar(event, w, stock, &model, &model_inputs, inputs.calendar)?);
    }
    Ok(EventResult { model, ars })
}

fn flag_overlaps(events: &mut [EventSpec]) {
    for i in 0..events.len() {
        for j in (i + 1)..events.len() {
            if events[i].firm_id != events[j].firm_id {
                break;
            }
            let reach = events[i].widest() + events[j].widest();
            if events[j].event_index - events[i].event_index <= reach {
                events[i].overlapping = true;
                events[j].overlapping = true;
            }
        }
    }
}

/// Runs the full event study. Per-event failures are collected in
/// [`EventStudyOutput::dropped`]; only configuration errors are fatal.
pub fn run_event_study(inputs: &EventStudyInputs<'_>, config: &EventStudyConfig) -> Result<EventStudyOutput> {
    if config.windows.is_empty() {
        return Err(EventStudyError::NoWindows);
    }
    let mut windows = config.windows.clone();
    windows.sort_unstable_by(|a, b| b.cmp(a));
    windows.dedup();

    let mut dropped = Vec::new();
    let mut resolved = Vec::new();
    let mut records: Vec<&EventRecord> = inputs.events.iter().collect();
    records.sort();
    for rec in records {
        match EventSpec::resolve(rec.firm.clone(), rec.submission_date, windows.clone(), inputs.calendar) {
            Ok(spec) => resolved.push(spec),
            Err(e) => dropped.push(DroppedEvent {
                firm: rec.firm.clone(),
                submission_date: rec.submission_date,
                reason: e.to_string(),
            }),
        }
    }
    resolved.sort_by(|a, b| {
        (a.firm_id.as_str(), a.event_date, a.submission_date).cmp(&(b.firm_id.as_str(), b.event_date, b.submission_date))
    });
    flag_overlaps(&mut resolved);

    let results: Vec<Result<EventResult>> = resolved.par_iter().map(|ev| study_event(ev, inputs, config)).collect();

    let mut out = EventStudyOutput::default();
    for (event, result) in resolved.into_iter().zip(results) {
        match result {
            Ok(r) => {
                out.cars.extend(r.ars.iter().map(compute_car));
                out.abnormal_returns.extend(r.ars);
                out.models.push(r.model);
                out.events.push(event);
            }
            Err(e) => dropped.push(DroppedEvent {
                firm: event.firm_id.clone(),
                submission_date: event.submission_date,
                reason: e.to_string(),
            }),
        }
    }
    dropped.sort_by(|a, b| (a.firm.as_str(), a.submission_date).cmp(&(b.firm.as_str(), b.submission_date)));
    out.dropped = dropped;

    for &w in &windows {
        let cars: Vec<CarValue> = out.cars_for(w).cloned().collect();
        if cars.is_empty() {
            continue;
        }
        out.caars.push(compute_caar(&cars, w)?);
        let series: Vec<&AbnormalReturnSeries> = out.abnormal_returns.iter().filter(|a| a.window == w).collect();
        let n = series.len();
        for offset in -(w as i64)..=(w as i64) {
            let sum: f64 = series.iter().map(|a| a.get(offset).unwrap()).sum();
            out.mean_ar.push(MeanArPoint {
                window: w,
                offset,
                mean_ar: sum / n as f64,
                n_events: n,
            });
        }
    }
    Ok(out)
}

/// `firm,event_date,window,car`
pub fn write_cars<W: Write>(writer: W, cars: &[CarValue]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["firm", "event_date", "window", "car"])?;
    for c in cars {
        w.write_record([
            c.firm_id.clone(),
            c.event_date.to_string(),
            c.window.to_string(),
            c.car.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `window,caar,n_events`
pub fn write_caars<W: Write>(writer: W, caars: &[CaarValue]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["window", "caar", "n_events"])?;
    for c in caars {
        w.write_record([c.window.to_string(), c.caar.to_string(), c.n_events.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `window,offset,mean_ar,n_events`, plot-ready.
pub fn write_mean_ar<W: Write>(writer: W, points: &[MeanArPoint]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["window", "offset", "mean_ar", "n_events"])?;
    for p in points {
        w.write_record([
            p.window.to_string(),
            p.offset.to_string(),
            p.mean_ar.to_string(),
            p.n_events.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `firm,submission_date,event_date,overlapping`
pub fn write_events<W: Write>(writer: W, events: &[EventSpec]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["firm", "submission_date", "event_date", "overlapping"])?;
    for e in events {
        w.write_record([
            e.firm_id.clone(),
            e.submission_date.to_string(),
            e.event_date.to_string(),
            e.overlapping.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `firm,submission_date,reason`
pub fn write_dropped<W: Write>(writer: W, dropped: &[DroppedEvent]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["firm", "submission_date", "reason"])?;
    for d in dropped {
        w.write_record([d.firm.clone(), d.submission_date.to_string(), d.reason.clone()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CAR table previously written by [`write_cars`].
pub fn read_cars<R: Read>(reader: R, source_name: &str) -> std::result::Result<Vec<CarValue>, MarketDataError> {
    #[derive(Deserialize)]
    struct Record {
        firm: String,
        event_date: String,
        window: usize,
        car: f64,
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    market_data::check_headers(&mut rdr, &["firm", "event_date", "window", "car"], source_name)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<Record>().enumerate() {
        let rec = rec.map_err(|e| market_data::csv_error(e, source_name))?;
        let event_date = market_data::parse_date(&rec.event_date).map_err(|e| MarketDataError::Schema {
            source_name: source_name.to_string(),
            line: i as u64 + 2,
            message: format!("invalid date {:?}: {e}", rec.event_date),
        })?;
        out.push(CarValue {
            firm_id: rec.firm,
            event_date,
            window: rec.window,
            car: rec.car,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expected_return::{ConstantMeanModel, MarketModel};
    use chrono::Datelike;
    use proptest::prelude::*;

    fn weekdays(start: NaiveDate, n: usize) -> TradingCalendar {
        let mut out = Vec::new();
        let mut d = start;
        while out.len() < n {
            if d.weekday().num_days_from_monday() < 5 {
                out.push(d);
            }
            d = d.succ_opt().unwrap();
        }
        TradingCalendar::new(out).unwrap()
    }

    fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, d).unwrap()
    }

    #[test]
    fn resolve_event_dates() {
        // 2024-01-03 is a Wednesday
        let cal = weekdays(ymd(2024, 1, 1), 20);
        assert_eq!(resolve_event_date(ymd(2024, 1, 3), &cal).unwrap().1, ymd(2024, 1, 4));
        // Friday -> Monday
        assert_eq!(resolve_event_date(ymd(2024, 1, 5), &cal).unwrap().1, ymd(2024, 1, 8));
        let last = *cal.dates().last().unwrap();
        assert!(matches!(
            resolve_event_date(last, &cal),
            Err(EventStudyError::CalendarExhausted(_))
        ));
    }

    fn flat_event(cal: &TradingCalendar, idx: usize) -> EventSpec {
        EventSpec {
            firm_id: "F".into(),
            submission_date: cal.get(idx - 1).unwrap(),
            event_date: cal.get(idx).unwrap(),
            event_index: idx,
            windows: vec![3],
            overlapping: false,
        }
    }

    fn returns_on(cal: &TradingCalendar, f: impl Fn(usize) -> f64) -> ReturnSeries {
        ReturnSeries::new("F", cal.dates().iter().enumerate().map(|(i, d)| (*d, f(i))).collect()).unwrap()
    }

    #[test]
    fn ar_cases() {
        let cal = weekdays(ymd(2024, 1, 1), 30);
        let ev = flat_event(&cal, 15);
        let mu0 = NormalReturnModel::ConstantMean(ConstantMeanModel { mu: 0.0, n_obs: 1 });
        let actual = returns_on(&cal, |_| 0.01);
        let ar = compute_ar(&ev, 3, &actual, &mu0, &ModelInputs::default(), &cal).unwrap();
        assert_eq!(ar.values.len(), 7);
        assert!(ar.values.iter().all(|(_, v)| *v == 0.01));
        assert_eq!(ar.values.first().unwrap().0, -3);
        assert_eq!(ar.values.last().unwrap().0, 3);

        let mu = NormalReturnModel::ConstantMean(ConstantMeanModel { mu: 0.01, n_obs: 1 });
        let ar = compute_ar(&ev, 3, &actual, &mu, &ModelInputs::default(), &cal).unwrap();
        assert!(ar.values.iter().all(|(_, v)| *v == 0.0));

        let market = returns_on(&cal, |i| (i as f64 * 0.37).sin() * 0.02);
        let mm = NormalReturnModel::Market(MarketModel {
            alpha: 0.0,
            beta: 1.0,
            alpha_se: 0.0,
            beta_se: 0.0,
            n_obs: 1,
        });
        let inputs = ModelInputs {
            market: Some(&market),
            factors: None,
        };
        let ar = compute_ar(&ev, 3, &market, &mm, &inputs, &cal).unwrap();
        assert!(ar.values.iter().all(|(_, v)| *v == 0.0));
    }

    #[test]
    fn ar_missing_data_and_range() {
        let cal = weekdays(ymd(2024, 1, 1), 30);
        let ev = flat_event(&cal, 15);
        let mu = NormalReturnModel::ConstantMean(ConstantMeanModel { mu: 0.0, n_obs: 1 });
        let holey = ReturnSeries::new(
            "F",
            cal.dates().iter().enumerate().filter(|(i, _)| *i != 16).map(|(_, d)| (*d, 0.0)).collect(),
        )
        .unwrap();
        assert!(matches!(
            compute_ar(&ev, 3, &holey, &mu, &ModelInputs::default(), &cal),
            Err(EventStudyError::MissingData { .. })
        ));
        let edge = flat_event(&cal, 28);
        assert!(matches!(
            compute_ar(&edge, 3, &holey, &mu, &ModelInputs::default(), &cal),
            Err(EventStudyError::WindowOutOfRange { .. })
        ));
    }

    fn ar_series(vals: &[f64]) -> AbnormalReturnSeries {
        let w = (vals.len() / 2) as i64;
        AbnormalReturnSeries {
            firm_id: "F".into(),
            event_date: ymd(2024, 1, 1),
            window: w as usize,
            values: vals.iter().enumerate().map(|(i, v)| (i as i64 - w, *v)).collect(),
        }
    }

    #[test]
    fn car_cases() {
        assert!((compute_car(&ar_series(&[0.01, -0.005, 0.002])).car - 0.007).abs() < 1e-15);
        assert_eq!(compute_car(&ar_series(&[0.0; 3])).car, 0.0);
        let vals = [0.0123, -0.0045, 0.0301, -0.0222, 0.0007, 0.0113, -0.0089];
        let oracle: f64 = [3usize, 0, 6, 1, 5, 2, 4].iter().map(|&i| vals[i]).sum();
        assert!((compute_car(&ar_series(&vals)).car - oracle).abs() < 1e-15);
    }

    fn car(v: f64, window: usize) -> CarValue {
        CarValue {
            firm_id: "F".into(),
            event_date: ymd(2024, 1, 1),
            window,
            car: v,
        }
    }

    #[test]
    fn caar_cases() {
        assert_eq!(compute_caar(&[car(0.02, 3), car(0.02, 3)], 3).unwrap().caar, 0.02);
        assert_eq!(compute_caar(&[car(0.01, 3), car(-0.01, 3)], 3).unwrap().caar, 0.0);
        let c = compute_caar(&[car(0.01, 3), car(0.02, 3), car(0.06, 3)], 3).unwrap();
        assert!((c.caar - 0.03).abs() < 1e-15);
        assert_eq!(c.n_events, 3);
        assert!(matches!(compute_caar(&[], 3), Err(EventStudyError::EmptyInput)));
        assert!(matches!(
            compute_caar(&[car(0.01, 3), car(0.01, 5)], 3),
            Err(EventStudyError::MixedWindows { .. })
        ));
    }

    #[test]
    fn empty_event_list() {
        let cal = weekdays(ymd(2024, 1, 1), 30);
        let stock = BTreeMap::new();
        let inputs = EventStudyInputs {
            calendar: &cal,
            stock_returns: &stock,
            market: None,
            factors: None,
            events: &[],
        };
        let out = run_event_study(&inputs, &EventStudyConfig::default()).unwrap();
        assert!(out.cars.is_empty() && out.caars.is_empty() && out.dropped.is_empty());
    }

    #[test]
    fn single_zero_event_and_nesting() {
        let cal = weekdays(ymd(2023, 1, 2), 120);
        let mut stock = BTreeMap::new();
        stock.insert("F".to_string(), returns_on(&cal, |_| 0.004));
        let events = vec![EventRecord {
            firm: "F".into(),
            submission_date: cal.get(99).unwrap(),
        }];
        let inputs = EventStudyInputs {
            calendar: &cal,
            stock_returns: &stock,
            market: None,
            factors: None,
            events: &events,
        };
        let config = EventStudyConfig {
            model: ModelKind::ConstantMean,
            ..EventStudyConfig::default()
        };
        let out = run_event_study(&inputs, &config).unwrap();
        assert_eq!(out.caars.len(), 3);
        for c in &out.caars {
            assert!(c.caar.abs() < 1e-15, "{c:?}");
        }
        assert_eq!(out.mean_ar.len(), 11 + 7 + 3);
    }

    #[test]
    fn window_nesting_consistency() {
        let cal = weekdays(ymd(2023, 1, 2), 150);
        let mut stock = BTreeMap::new();
        stock.insert("F".to_string(), returns_on(&cal, |i| ((i * 13 % 17) as f64 - 8.0) * 0.001));
        let events = vec![EventRecord {
            firm: "F".into(),
            submission_date: cal.get(120).unwrap(),
        }];
        let inputs = EventStudyInputs {
            calendar: &cal,
            stock_returns: &stock,
            market: None,
            factors: None,
            events: &events,
        };
        let config = EventStudyConfig {
            model: ModelKind::ConstantMean,
            ..EventStudyConfig::default()
        };
        let out = run_event_study(&inputs, &config).unwrap();
        let wide = out.abnormal_returns.iter().find(|a| a.window == 5).unwrap();
        let narrow = out.cars_for(1).next().unwrap();
        let central: f64 = (-1..=1).map(|o| wide.get(o).unwrap()).sum();
        assert!((central - narrow.car).abs() < 1e-15);
    }

    #[test]
    fn overlaps_flagged_and_failures_dropped() {
        let cal = weekdays(ymd(2023, 1, 2), 150);
        let mut stock = BTreeMap::new();
        stock.insert("F".to_string(), returns_on(&cal, |i| i as f64 * 1e-4));
        let events = vec![
            EventRecord { firm: "F".into(), submission_date: cal.get(100).unwrap() },
            EventRecord { firm: "F".into(), submission_date: cal.get(105).unwrap() },
            EventRecord { firm: "G".into(), submission_date: cal.get(100).unwrap() },
            EventRecord { firm: "F".into(), submission_date: cal.get(10).unwrap() },
        ];
        let inputs = EventStudyInputs {
            calendar: &cal,
            stock_returns: &stock,
            market: None,
            factors: None,
            events: &events,
        };
        let config = EventStudyConfig {
            model: ModelKind::ConstantMean,
            ..EventStudyConfig::default()
        };
        let out = run_event_study(&inputs, &config).unwrap();
        assert_eq!(out.events.len(), 2);
        assert!(out.events.iter().all(|e| e.overlapping));
        assert_eq!(out.dropped.len(), 2);
        assert_eq!(out.dropped[0].firm, "F");
        assert_eq!(out.dropped[1].firm, "G");
    }

    #[test]
    fn csv_round_trip() {
        let cars = vec![car(0.0125, 3), car(-0.5, 1)];
        let mut buf = Vec::new();
        write_cars(&mut buf, &cars).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("firm,event_date,window,car\n"));
        assert_eq!(read_cars(buf.as_slice(), "cars").unwrap(), cars);

        let ev = read_events("firm,submission_date\nA,2024-03-01\n".as_bytes(), "e").unwrap();
        assert_eq!(ev[0].submission_date, ymd(2024, 3, 1));
        assert!(read_events("firm,date\n".as_bytes(), "e").is_err());
    }

    proptest! {
        #[test]
        fn caar_permutation_invariant(vals in proptest::collection::vec(-0.2f64..0.2, 1..40), seed in 0u64..1000) {
            let cars: Vec<CarValue> = vals.iter().map(|v| car(*v, 3)).collect();
            let mut shuffled = cars.clone();
            let n = shuffled.len();
            for i in (1..n).rev() {
                let j = ((seed.wrapping_mul(6364136223846793005).wrapping_add(i as u64)) % (i as u64 + 1)) as usize;
                shuffled.swap(i, j);
            }
            prop_assert_eq!(compute_caar(&cars, 3).unwrap().caar, compute_caar(&shuffled, 3).unwrap().caar);
        }

        #[test]
        fn frozen_model_shift(c in -0.05f64..0.05) {
            let cal = weekdays(ymd(2024, 1, 1), 30);
            let ev = flat_event(&cal, 15);
            let model = NormalReturnModel::ConstantMean(ConstantMeanModel { mu: 0.003, n_obs: 1 });
            let base = returns_on(&cal, |i| (i as f64 * 0.7).cos() * 0.01);
            let shifted = returns_on(&cal, |i| (i as f64 * 0.7).cos() * 0.01 + c);
            let a = compute_ar(&ev, 3, &base, &model, &ModelInputs::default(), &cal).unwrap();
            let b = compute_ar(&ev, 3, &shifted, &model, &ModelInputs::default(), &cal).unwrap();
            for ((_, x), (_, y)) in a.values.iter().zip(&b.values) {
                prop_assert!((y - x - c).abs() < 1e-15);
            }
        }
    }
}
