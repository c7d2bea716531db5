//! Annotation aggregation, firm controls and regression design matrices.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use chrono::{Months, NaiveDate};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::event_study::{CarValue, EventSpec};
use crate::market_data::{self, MarketDataError, ReturnSeries};

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("{source_name}: line {line}: {message}")]
    Schema {
        source_name: String,
        line: u64,
        message: String,
    },

    #[error("unknown {kind} label {value:?}")]
    UnknownLabel { kind: &'static str, value: String },

    #[error("annotations span several documents: {0}")]
    MixedDocuments(String),

    #[error("negative sentiment count (p={p}, n={n})")]
    NegativeCount { p: i64, n: i64 },

    #[error("{firm}: non-positive {field} ({value}); logarithm undefined")]
    NonPositive {
        firm: String,
        field: &'static str,
        value: f64,
    },

    #[error("{firm}: invalid fundamentals: {message}")]
    InvalidFundamentals { firm: String, message: String },

    #[error("{firm}: need at least {required} returns in the 12 months before {event_date}, got {actual}")]
    InsufficientHistory {
        firm: String,
        event_date: NaiveDate,
        required: usize,
        actual: usize,
    },

    #[error("no fundamentals for {firm} on or before {date}")]
    MissingFundamentals { firm: String, date: NaiveDate },

    #[error("no CAR for {firm} {event_date} at window {window}")]
    MissingCar {
        firm: String,
        event_date: NaiveDate,
        window: usize,
    },

    #[error("model id must be 1..=5, got {0}")]
    InvalidModel(u8),

    #[error("every row was dropped while building the design matrix")]
    AllRowsDropped,

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    MarketData(#[from] MarketDataError),
}

pub type Result<T> = std::result::Result<T, FeatureError>;

fn normalise(label: &str) -> String {
    label
        .chars()
        .filter(|c| !c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sentiment {
    Negative,
    Neutral,
    Positive,
}

impl Sentiment {
    pub const ALL: [Sentiment; 3] = [Sentiment::Negative, Sentiment::Neutral, Sentiment::Positive];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Sentiment::Negative => "Negative",
            Sentiment::Neutral => "Neutral",
            Sentiment::Positive => "Positive",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match normalise(s).as_str() {
            "negative" => Ok(Self::Negative),
            "neutral" => Ok(Self::Neutral),
            "positive" => Ok(Self::Positive),
            _ => Err(FeatureError::UnknownLabel {
                kind: "sentiment",
                value: s.to_string(),
            }),
        }
    }
}

/// The sixteen annotation aspects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Aspect {
    Brand,
    ProductService,
    Environment,
    SocialPeople,
    Governance,
    Economics,
    Political,
    Legal,
    Dividend,
    Investment,
    MergersAcquisitions,
    ProfitLoss,
    Rating,
    Financing,
    Technology,
    Others,
}

impl Aspect {
    pub const ALL: [Aspect; 16] = [
        Aspect::Brand,
        Aspect::ProductService,
        Aspect::Environment,
        Aspect::SocialPeople,
        Aspect::Governance,
        Aspect::Economics,
        Aspect::Political,
        Aspect::Legal,
        Aspect::Dividend,
        Aspect::Investment,
        Aspect::MergersAcquisitions,
        Aspect::ProfitLoss,
        Aspect::Rating,
        Aspect::Financing,
        Aspect::Technology,
        Aspect::Others,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Aspect::Brand => "Brand",
            Aspect::ProductService => "Product/Service",
            Aspect::Environment => "Environment",
            Aspect::SocialPeople => "Social&People",
            Aspect::Governance => "Governance",
            Aspect::Economics => "Economics",
            Aspect::Political => "Political",
            Aspect::Legal => "Legal",
            Aspect::Dividend => "Dividend",
            Aspect::Investment => "Investment",
            Aspect::MergersAcquisitions => "M&A",
            Aspect::ProfitLoss => "Profit/Loss",
            Aspect::Rating => "Rating",
            Aspect::Financing => "Financing",
            Aspect::Technology => "Technology",
            Aspect::Others => "Others",
        }
    }

    /// Accepts the canonical names case- and whitespace-insensitively, plus a
    /// few spellings seen in annotation exports.
    pub fn parse(s: &str) -> Result<Self> {
        let key = normalise(s);
        let found = Self::ALL.iter().copied().find(|a| normalise(a.as_str()) == key);
        found
            .or(match key.as_str() {
                "politics" => Some(Aspect::Political),
                "social&people" | "socialandpeople" | "social" => Some(Aspect::SocialPeople),
                "product" | "product&service" => Some(Aspect::ProductService),
                "m&a" | "mergers&acquisitions" | "merger&acquisition" => Some(Aspect::MergersAcquisitions),
                "profit&loss" | "profitloss" => Some(Aspect::ProfitLoss),
                "other" => Some(Aspect::Others),
                _ => None,
            })
            .ok_or_else(|| FeatureError::UnknownLabel {
                kind: "aspect",
                value: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SourceSection {
    Mda,
    Risk,
    Sustainability,
}

impl SourceSection {
    pub const ALL: [SourceSection; 3] = [SourceSection::Mda, SourceSection::Risk, SourceSection::Sustainability];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SourceSection::Mda => "MDA",
            SourceSection::Risk => "Risk",
            SourceSection::Sustainability => "Sustainability",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match normalise(s).as_str() {
            "mda" | "md&a" => Ok(Self::Mda),
            "risk" => Ok(Self::Risk),
            "sustainability" => Ok(Self::Sustainability),
            _ => Err(FeatureError::UnknownLabel {
                kind: "source",
                value: s.to_string(),
            }),
        }
    }
}

/// Broad SET industry groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum IndustryCode {
    AgroFood,
    ConsumerProducts,
    Financials,
    Industrials,
    PropertyConstruction,
    Resources,
    Services,
    Technology,
}

impl IndustryCode {
    pub const ALL: [IndustryCode; 8] = [
        IndustryCode::AgroFood,
        IndustryCode::ConsumerProducts,
        IndustryCode::Financials,
        IndustryCode::Industrials,
        IndustryCode::PropertyConstruction,
        IndustryCode::Resources,
        IndustryCode::Services,
        IndustryCode::Technology,
    ];

    /// Exchange abbreviation.
    pub fn code(self) -> &'static str {
        match self {
            IndustryCode::AgroFood => "AGRO",
            IndustryCode::ConsumerProducts => "CONSUMP",
            IndustryCode::Financials => "FINCIAL",
            IndustryCode::Industrials => "INDUS",
            IndustryCode::PropertyConstruction => "PROPCON",
            IndustryCode::Resources => "RESOURC",
            IndustryCode::Services => "SERVICE",
            IndustryCode::Technology => "TECH",
        }
    }

    fn long_name(self) -> &'static str {
        match self {
            IndustryCode::AgroFood => "agro&foodindustry",
            IndustryCode::ConsumerProducts => "consumerproducts",
            IndustryCode::Financials => "financials",
            IndustryCode::Industrials => "industrials",
            IndustryCode::PropertyConstruction => "property&construction",
            IndustryCode::Resources => "resources",
            IndustryCode::Services => "services",
            IndustryCode::Technology => "technology",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let key = normalise(s);
        Self::ALL
            .iter()
            .copied()
            .find(|i| normalise(i.code()) == key || i.long_name() == key)
            .ok_or_else(|| FeatureError::UnknownLabel {
                kind: "industry",
                value: s.to_string(),
            })
    }
}

/// One annotated paragraph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParagraphAnnotation {
    pub firm_id: String,
    pub report_year: i32,
    pub source: SourceSection,
    pub pairs: Vec<(Aspect, Sentiment)>,
}

/// Parses annotations JSONL, one paragraph per line.
pub fn read_annotations<R: Read>(reader: R, source_name: &str) -> Result<Vec<ParagraphAnnotation>> {
    #[derive(Deserialize)]
    struct Pair {
        aspect: String,
        sentiment: String,
    }
    #[derive(Deserialize)]
    struct Line {
        firm: String,
        year: i32,
        source: String,
        pairs: Vec<Pair>,
    }
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i as u64 + 1;
        let schema = |message: String| FeatureError::Schema {
            source_name: source_name.to_string(),
            line: line_no,
            message,
        };
        let line = line.map_err(|e| FeatureError::Io {
            path: source_name.to_string(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Line = serde_json::from_str(&line).map_err(|e| schema(e.to_string()))?;
        if rec.pairs.is_empty() {
            return Err(schema("paragraph has no aspect-sentiment pairs".into()));
        }
        let source = SourceSection::parse(&rec.source).map_err(|e| schema(e.to_string()))?;
        let pairs = rec
            .pairs
            .iter()
            .map(|p| Ok((Aspect::parse(&p.aspect)?, Sentiment::parse(&p.sentiment)?)))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| schema(e.to_string()))?;
        out.push(ParagraphAnnotation {
            firm_id: rec.firm,
            report_year: rec.year,
            source,
            pairs,
        });
    }
    Ok(out)
}

pub fn read_annotations_path(path: &Path) -> Result<Vec<ParagraphAnnotation>> {
    let file = std::fs::File::open(path).map_err(|e| FeatureError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    read_annotations(file, &path.display().to_string())
}

/// Paragraphs grouped by (firm, report year).
pub fn group_documents(annotations: Vec<ParagraphAnnotation>) -> BTreeMap<(String, i32), Vec<ParagraphAnnotation>> {
    let mut docs: BTreeMap<(String, i32), Vec<ParagraphAnnotation>> = BTreeMap::new();
    for a in annotations {
        docs.entry((a.firm_id.clone(), a.report_year)).or_default().push(a);
    }
    docs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    Sentiment,
    SourceSentiment,
    AspectSentiment,
}

impl Grouping {
    pub fn len(self) -> usize {
        match self {
            Grouping::Sentiment => 3,
            Grouping::SourceSentiment => 9,
            Grouping::AspectSentiment => 48,
        }
    }

    /// Key names in canonical order: outer label major, sentiment minor.
    pub fn keys(self) -> Vec<String> {
        match self {
            Grouping::Sentiment => Sentiment::ALL.iter().map(|s| s.as_str().to_string()).collect(),
            Grouping::SourceSentiment => SourceSection::ALL
                .iter()
                .flat_map(|src| Sentiment::ALL.iter().map(move |s| format!("{}.{}", src.as_str(), s.as_str())))
                .collect(),
            Grouping::AspectSentiment => Aspect::ALL
                .iter()
                .flat_map(|a| Sentiment::ALL.iter().map(move |s| format!("{}.{}", a.as_str(), s.as_str())))
                .collect(),
        }
    }

    fn slot(self, source: SourceSection, aspect: Aspect, sentiment: Sentiment) -> usize {
        match self {
            Grouping::Sentiment => sentiment.index(),
            Grouping::SourceSentiment => source.index() * 3 + sentiment.index(),
            Grouping::AspectSentiment => aspect.index() * 3 + sentiment.index(),
        }
    }
}

/// Counts over the closed key set of a grouping, zeros included.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountMap {
    pub grouping: Grouping,
    pub counts: Vec<u32>,
}

impl CountMap {
    pub fn total(&self) -> u64 {
        self.counts.iter().map(|c| *c as u64).sum()
    }

    pub fn get(&self, key: &str) -> Option<u32> {
        self.grouping.keys().iter().position(|k| k == key).map(|i| self.counts[i])
    }

    /// Collapses to per-sentiment totals.
    pub fn sentiment_marginals(&self) -> [u32; 3] {
        let mut out = [0; 3];
        for (i, c) in self.counts.iter().enumerate() {
            out[i % 3] += c;
        }
        out
    }
}

pub fn aggregate_counts(annotations: &[ParagraphAnnotation], grouping: Grouping) -> Result<CountMap> {
    if let Some(first) = annotations.first() {
        if let Some(other) = annotations
            .iter()
            .find(|a| a.firm_id != first.firm_id || a.report_year != first.report_year)
        {
            return Err(FeatureError::MixedDocuments(format!(
                "{}/{} and {}/{}",
                first.firm_id, first.report_year, other.firm_id, other.report_year
            )));
        }
    }
    let mut counts = vec![0u32; grouping.len()];
    for para in annotations {
        for &(aspect, sentiment) in &para.pairs {
            counts[grouping.slot(para.source, aspect, sentiment)] += 1;
        }
    }
    Ok(CountMap { grouping, counts })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub score1: f64,
    pub score2: f64,
}

/// `(p-n+1)/(p+n)` and `(p-n+2)/(p+n)`; `None` when `p + n == 0`.
pub fn sentiment_scores(p: i64, n: i64) -> Result<Option<Scores>> {
    if p < 0 || n < 0 {
        return Err(FeatureError::NegativeCount { p, n });
    }
    if p + n == 0 {
        return Ok(None);
    }
    let denom = (p + n) as f64;
    Ok(Some(Scores {
        score1: (p - n + 1) as f64 / denom,
        score2: (p - n + 2) as f64 / denom,
    }))
}

/// One fundamentals row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fundamentals {
    pub firm: String,
    pub date: NaiveDate,
    pub market_cap: f64,
    pub total_assets: f64,
    pub net_income: f64,
    pub total_liabilities: f64,
    pub industry: IndustryCode,
}

pub fn read_fundamentals<R: Read>(reader: R, source_name: &str) -> Result<Vec<Fundamentals>> {
    #[derive(Deserialize)]
    struct Record {
        firm: String,
        date: String,
        market_cap: f64,
        total_assets: f64,
        net_income: f64,
        total_liabilities: f64,
        industry: String,
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    market_data::check_headers(
        &mut rdr,
        &["firm", "date", "market_cap", "total_assets", "net_income", "total_liabilities", "industry"],
        source_name,
    )?;
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<Record>().enumerate() {
        let rec = rec.map_err(|e| market_data::csv_error(e, source_name))?;
        let schema = |message: String| FeatureError::Schema {
            source_name: source_name.to_string(),
            line: i as u64 + 2,
            message,
        };
        let date = market_data::parse_date(&rec.date).map_err(|e| schema(format!("invalid date {:?}: {e}", rec.date)))?;
        let industry = IndustryCode::parse(&rec.industry).map_err(|e| schema(e.to_string()))?;
        out.push(Fundamentals {
            firm: rec.firm,
            date,
            market_cap: rec.market_cap,
            total_assets: rec.total_assets,
            net_income: rec.net_income,
            total_liabilities: rec.total_liabilities,
            industry,
        });
    }
    Ok(out)
}

pub fn read_fundamentals_path(path: &Path) -> Result<Vec<Fundamentals>> {
    let file = std::fs::File::open(path).map_err(|e| FeatureError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    read_fundamentals(file, &path.display().to_string())
}

/// Latest fundamentals row for `firm` dated on or before `date`.
pub fn fundamentals_at<'a>(rows: &'a [Fundamentals], firm: &str, date: NaiveDate) -> Option<&'a Fundamentals> {
    rows.iter()
        .filter(|r| r.firm == firm && r.date <= date)
        .max_by_key(|r| r.date)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Controls {
    pub firm_size: f64,
    pub tobins_q: f64,
    pub roa: f64,
    pub leverage: f64,
    pub volatility: f64,
}

impl Controls {
    pub const NAMES: [&'static str; 5] = ["FirmSize", "TobinsQ", "ROA", "Leverage", "Volatility"];

    pub fn values(&self) -> [f64; 5] {
        [self.firm_size, self.tobins_q, self.roa, self.leverage, self.volatility]
    }
}

pub const MIN_VOLATILITY_OBS: usize = 20;

/// Firm controls at an event date. Volatility is the sample standard
/// deviation of returns dated in the 12 months before the event date.
pub fn compute_controls(financials: &Fundamentals, returns: &ReturnSeries, event_date: NaiveDate) -> Result<Controls> {
    let firm = &financials.firm;
    for (field, value) in [("market_cap", financials.market_cap), ("total_assets", financials.total_assets)] {
        if !(value > 0.0) || !value.is_finite() {
            return Err(FeatureError::NonPositive {
                firm: firm.clone(),
                field,
                value,
            });
        }
    }
    if !(financials.total_liabilities >= 0.0) || !financials.net_income.is_finite() {
        return Err(FeatureError::InvalidFundamentals {
            firm: firm.clone(),
            message: format!(
                "total_liabilities {} / net_income {}",
                financials.total_liabilities, financials.net_income
            ),
        });
    }
    let start = event_date.checked_sub_months(Months::new(12)).unwrap_or(NaiveDate::MIN);
    let trailing: Vec<f64> = returns
        .observations()
        .iter()
        .filter(|(d, _)| *d >= start && *d < event_date)
        .map(|(_, r)| *r)
        .collect();
    if trailing.len() < MIN_VOLATILITY_OBS {
        return Err(FeatureError::InsufficientHistory {
            firm: firm.clone(),
            event_date,
            required: MIN_VOLATILITY_OBS,
            actual: trailing.len(),
        });
    }
    let n = trailing.len() as f64;
    let var = if trailing.iter().all(|r| *r == trailing[0]) {
        0.0
    } else {
        let mean = trailing.iter().sum::<f64>() / n;
        trailing.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)
    };
    Ok(Controls {
        firm_size: financials.market_cap.ln(),
        tobins_q: (financials.market_cap / financials.total_assets).ln(),
        roa: financials.net_income / financials.total_assets,
        leverage: financials.total_liabilities / financials.total_assets,
        volatility: var.sqrt(),
    })
}

/// Per-event regression inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentFeatureVector {
    pub firm_id: String,
    pub event_date: NaiveDate,
    pub sentiment: CountMap,
    pub source_sentiment: CountMap,
    pub aspect_sentiment: CountMap,
    pub scores: Option<Scores>,
    pub controls: Controls,
    pub industry: IndustryCode,
}

impl DocumentFeatureVector {
    pub fn from_document(
        firm_id: impl Into<String>,
        event_date: NaiveDate,
        paragraphs: &[ParagraphAnnotation],
        controls: Controls,
        industry: IndustryCode,
    ) -> Result<Self> {
        let sentiment = aggregate_counts(paragraphs, Grouping::Sentiment)?;
        let source_sentiment = aggregate_counts(paragraphs, Grouping::SourceSentiment)?;
        let aspect_sentiment = aggregate_counts(paragraphs, Grouping::AspectSentiment)?;
        let p = sentiment.counts[Sentiment::Positive.index()] as i64;
        let n = sentiment.counts[Sentiment::Negative.index()] as i64;
        Ok(Self {
            firm_id: firm_id.into(),
            event_date,
            scores: sentiment_scores(p, n)?,
            sentiment,
            source_sentiment,
            aspect_sentiment,
            controls,
            industry,
        })
    }

    fn counts(&self, grouping: Grouping) -> &CountMap {
        match grouping {
            Grouping::Sentiment => &self.sentiment,
            Grouping::SourceSentiment => &self.source_sentiment,
            Grouping::AspectSentiment => &self.aspect_sentiment,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedObservation {
    pub firm: String,
    pub event_date: NaiveDate,
    pub reason: String,
}

/// Builds one feature vector per event. The annotation document of an event
/// is `(firm, submission year - report_year_offset)`.
pub fn assemble_features(
    events: &[EventSpec],
    documents: &BTreeMap<(String, i32), Vec<ParagraphAnnotation>>,
    fundamentals: &[Fundamentals],
    returns: &BTreeMap<String, ReturnSeries>,
    report_year_offset: i32,
) -> (Vec<DocumentFeatureVector>, Vec<DroppedObservation>) {
    use chrono::Datelike;
    let mut features = Vec::new();
    let mut dropped = Vec::new();
    for ev in events {
        let year = ev.submission_date.year() - report_year_offset;
        let build = || -> Result<DocumentFeatureVector> {
            let paragraphs = documents
                .get(&(ev.firm_id.clone(), year))
                .map(Vec::as_slice)
                .unwrap_or(&[]);
            let fund = fundamentals_at(fundamentals, &ev.firm_id, ev.event_date).ok_or_else(|| {
                FeatureError::MissingFundamentals {
                    firm: ev.firm_id.clone(),
                    date: ev.event_date,
                }
            })?;
            let series = returns.get(&ev.firm_id).ok_or_else(|| FeatureError::InsufficientHistory {
                firm: ev.firm_id.clone(),
                event_date: ev.event_date,
                required: MIN_VOLATILITY_OBS,
                actual: 0,
            })?;
            let controls = compute_controls(fund, series, ev.event_date)?;
            DocumentFeatureVector::from_document(ev.firm_id.clone(), ev.event_date, paragraphs, controls, fund.industry)
        };
        match build() {
            Ok(f) => features.push(f),
            Err(e) => dropped.push(DroppedObservation {
                firm: ev.firm_id.clone(),
                event_date: ev.event_date,
                reason: e.to_string(),
            }),
        }
    }
    (features, dropped)
}

/// Regression specifications.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ModelId(u8);

impl ModelId {
    pub const ALL: [ModelId; 5] = [ModelId(1), ModelId(2), ModelId(3), ModelId(4), ModelId(5)];

    pub fn new(id: u8) -> Result<Self> {
        if (1..=5).contains(&id) {
            Ok(Self(id))
        } else {
            Err(FeatureError::InvalidModel(id))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn grouping(self) -> Grouping {
        match self.0 {
            1 | 2 => Grouping::Sentiment,
            3 | 4 => Grouping::SourceSentiment,
            _ => Grouping::AspectSentiment,
        }
    }

    pub fn uses_scores(self) -> bool {
        matches!(self.0, 2 | 4)
    }
}

impl TryFrom<u8> for ModelId {
    type Error = FeatureError;

    fn try_from(v: u8) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ModelId> for u8 {
    fn from(m: ModelId) -> u8 {
        m.0
    }
}

impl std::fmt::Display for ModelId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub const INTERCEPT: &str = "Intercept";
pub const SCORE_NAMES: [&str; 2] = ["Score-1", "Score-2"];

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub model: ModelId,
    pub window: usize,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub columns: Vec<String>,
    /// (firm, event date) of each retained row.
    pub rows: Vec<(String, NaiveDate)>,
    pub baseline_industry: IndustryCode,
    pub dropped: Vec<DroppedObservation>,
}

impl DesignMatrix {
    /// Indices of the sentiment-count columns.
    pub fn sentiment_columns(&self) -> std::ops::Range<usize> {
        1..1 + self.model.grouping().len()
    }
}

pub fn industry_column(code: IndustryCode) -> String {
    format!("Industry.{}", code.code())
}

/// Assembles `[Intercept | counts | controls | industry dummies | scores]`
/// against the CARs of one window. Industry dummies drop the most frequent
/// industry among retained rows (ties go to the first in enumeration order).
pub fn build_design_matrix(
    model: ModelId,
    feature_vectors: &[DocumentFeatureVector],
    cars: &[CarValue],
    window: usize,
) -> Result<DesignMatrix> {
    let car_map: BTreeMap<(&str, NaiveDate), f64> = cars
        .iter()
        .filter(|c| c.window == window)
        .map(|c| ((c.firm_id.as_str(), c.event_date), c.car))
        .collect();

    let mut kept: Vec<(&DocumentFeatureVector, f64)> = Vec::new();
    let mut dropped = Vec::new();
    for fv in feature_vectors {
        let car = *car_map
            .get(&(fv.firm_id.as_str(), fv.event_date))
            .ok_or_else(|| FeatureError::MissingCar {
                firm: fv.firm_id.clone(),
                event_date: fv.event_date,
                window,
            })?;
        if model.uses_scores() && fv.scores.is_none() {
            dropped.push(DroppedObservation {
                firm: fv.firm_id.clone(),
                event_date: fv.event_date,
                reason: "no positive or negative pairs; scores undefined".into(),
            });
            continue;
        }
        kept.push((fv, car));
    }
    if kept.is_empty() {
        return Err(FeatureError::AllRowsDropped);
    }

    let mut industry_counts = [0usize; 8];
    for (fv, _) in &kept {
        industry_counts[fv.industry as usize] += 1;
    }
    let baseline_pos = (0..8).fold(0, |best, i| if industry_counts[i] > industry_counts[best] { i } else { best });
    let baseline = IndustryCode::ALL[baseline_pos];
    let dummies: Vec<IndustryCode> = IndustryCode::ALL.iter().copied().filter(|c| *c != baseline).collect();

    let grouping = model.grouping();
    let mut columns = vec![INTERCEPT.to_string()];
    columns.extend(grouping.keys());
    columns.extend(Controls::NAMES.iter().map(|s| s.to_string()));
    columns.extend(dummies.iter().map(|c| industry_column(*c)));
    if model.uses_scores() {
        columns.extend(SCORE_NAMES.iter().map(|s| s.to_string()));
    }

    let n = kept.len();
    let p = columns.len();
    let mut x = DMatrix::zeros(n, p);
    for (i, (fv, _)) in kept.iter().enumerate() {
        let mut row = Vec::with_capacity(p);
        row.push(1.0);
        row.extend(fv.counts(grouping).counts.iter().map(|c| *c as f64));
        row.extend(fv.controls.values());
        row.extend(dummies.iter().map(|c| if fv.industry == *c { 1.0 } else { 0.0 }));
        if let Some(s) = fv.scores.filter(|_| model.uses_scores()) {
            row.push(s.score1);
            row.push(s.score2);
        }
        for (j, v) in row.into_iter().enumerate() {
            x[(i, j)] = v;
        }
    }
    let y = DVector::from_iterator(n, kept.iter().map(|(_, car)| *car));
    Ok(DesignMatrix {
        model,
        window,
        x,
        y,
        columns,
        rows: kept.iter().map(|(fv, _)| (fv.firm_id.clone(), fv.event_date)).collect(),
        baseline_industry: baseline,
        dropped,
    })
}
