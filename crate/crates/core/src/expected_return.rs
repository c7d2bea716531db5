//! Normal-return models fitted over a pre-event estimation window.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{self, LinalgError};
use crate::market_data::{self, FactorRow, FactorSeries, MarketDataError, ReturnSeries, TradingCalendar};

pub const DEFAULT_ESTIMATION_LENGTH: usize = 250;
pub const DEFAULT_MIN_OBSERVATIONS: usize = 60;

#[derive(Debug, thiserror::Error)]
pub enum ExpectedReturnError {
    #[error("insufficient data: need at least {required} observations, got {actual}")]
    TooFewObservations { required: usize, actual: usize },

    #[error("market returns have zero variance over the estimation window")]
    ZeroMarketVariance,

    #[error("rank deficient factor matrix: rank {rank} < columns {columns}")]
    RankDeficient { rank: usize, columns: usize },

    #[error("no trading history before {0}")]
    NoHistory(NaiveDate),

    #[error("invalid estimation window: {0}")]
    InvalidWindow(String),

    #[error("missing {what} on {date}")]
    MissingInput { what: &'static str, date: NaiveDate },

    #[error(transparent)]
    MarketData(#[from] MarketDataError),

    #[error(transparent)]
    Linalg(LinalgError),
}

impl From<LinalgError> for ExpectedReturnError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::RankDeficient { rank, columns } => Self::RankDeficient { rank, columns },
            other => Self::Linalg(other),
        }
    }
}

pub type Result<T> = std::result::Result<T, ExpectedReturnError>;

/// Contiguous block of trading days used to fit a normal-return model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimationWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
    /// Requested length in trading days.
    pub length: usize,
    /// Fewer aligned observations than this and the fit is refused.
    pub min_obs: usize,
}

impl EstimationWindow {
    /// Window of `length` trading days ending on the trading day before
    /// calendar index `first_excluded`. Truncated at the calendar start.
    pub fn ending_before(
        calendar: &TradingCalendar,
        first_excluded: usize,
        length: usize,
        min_obs: usize,
    ) -> Result<Self> {
        if min_obs < 2 || min_obs > length {
            return Err(ExpectedReturnError::InvalidWindow(format!(
                "min_obs {min_obs} must be in [2, length {length}]"
            )));
        }
        if first_excluded == 0 || first_excluded > calendar.len() {
            let date = calendar
                .get(first_excluded.min(calendar.len().saturating_sub(1)))
                .unwrap_or(NaiveDate::MIN);
            return Err(ExpectedReturnError::NoHistory(date));
        }
        let end_idx = first_excluded - 1;
        let start_idx = first_excluded.saturating_sub(length);
        Ok(Self {
            start: calendar.get(start_idx).unwrap(),
            end: calendar.get(end_idx).unwrap(),
            length,
            min_obs,
        })
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date <= self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantMeanModel {
    pub mu: f64,
    pub n_obs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketModel {
    pub alpha: f64,
    pub beta: f64,
    pub alpha_se: f64,
    pub beta_se: f64,
    pub n_obs: usize,
}

/// Five-factor model on excess returns; loadings ordered mkt_rf, smb, hml, rmw, cma.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamaFrenchModel {
    pub alpha: f64,
    pub loadings: [f64; 5],
    pub alpha_se: f64,
    pub loading_se: [f64; 5],
    pub n_obs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NormalReturnModel {
    ConstantMean(ConstantMeanModel),
    Market(MarketModel),
    FamaFrench(FamaFrenchModel),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    ConstantMean,
    Market,
    #[default]
    FamaFrench,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::ConstantMean => "constant_mean",
            ModelKind::Market => "market",
            ModelKind::FamaFrench => "fama_french",
        }
    }

    pub fn needs_market(self) -> bool {
        matches!(self, ModelKind::Market)
    }

    pub fn needs_factors(self) -> bool {
        matches!(self, ModelKind::FamaFrench)
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "constant_mean" => Ok(Self::ConstantMean),
            "market" => Ok(Self::Market),
            "fama_french" => Ok(Self::FamaFrench),
            other => Err(format!(
                "unknown model {other:?} (expected constant_mean|market|fama_french)"
            )),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn fit_constant_mean(est: &ReturnSeries, min_obs: usize) -> Result<ConstantMeanModel> {
    let n = est.len();
    if n < min_obs.max(1) {
        return Err(ExpectedReturnError::TooFewObservations { required: min_obs.max(1), actual: n });
    }
    let mu = est.values().sum::<f64>() / n as f64;
    Ok(ConstantMeanModel { mu, n_obs: n })
}

fn standard_errors(ls: &linalg::LeastSquares, n: usize) -> Vec<f64> {
    let p = ls.coefficients.len();
    let sigma2 = if n > p { ls.ssr / (n - p) as f64 } else { f64::NAN };
    (0..p).map(|j| (sigma2 * ls.xtx_inv[(j, j)]).sqrt()).collect()
}

pub fn fit_market_model(stock: &ReturnSeries, market: &ReturnSeries, window: &EstimationWindow) -> Result<MarketModel> {
    let stock = stock.between(window.start, window.end);
    let market = market.between(window.start, window.end);
    let pairs = match market_data::align(&stock, &market) {
        Ok(p) => p,
        Err(MarketDataError::EmptyIntersection { .. } | MarketDataError::Empty(_)) => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    if pairs.len() < window.min_obs {
        return Err(ExpectedReturnError::TooFewObservations {
            required: window.min_obs,
            actual: pairs.len(),
        });
    }
    let first = pairs[0].other;
    if pairs.iter().all(|p| p.other == first) {
        return Err(ExpectedReturnError::ZeroMarketVariance);
    }
    let n = pairs.len();
    let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { pairs[i].other });
    let y = DVector::from_iterator(n, pairs.iter().map(|p| p.value));
    let ls = linalg::least_squares(&x, &y).map_err(|e| match e {
        LinalgError::RankDeficient { .. } => ExpectedReturnError::ZeroMarketVariance,
        other => other.into(),
    })?;
    let se = standard_errors(&ls, n);
    Ok(MarketModel {
        alpha: ls.coefficients[0],
        beta: ls.coefficients[1],
        alpha_se: se[0],
        beta_se: se[1],
        n_obs: n,
    })
}

/// OLS of excess stock returns on an intercept and the five factors.
pub fn fit_fama_french(
    stock_excess: &ReturnSeries,
    factors: &FactorSeries,
    window: &EstimationWindow,
) -> Result<FamaFrenchModel> {
    let stock = stock_excess.between(window.start, window.end);
    let pairs: Vec<(f64, FactorRow)> = stock
        .observations()
        .iter()
        .filter_map(|(d, r)| factors.get(*d).map(|f| (*r, *f)))
        .collect();
    if pairs.len() < window.min_obs {
        return Err(ExpectedReturnError::TooFewObservations {
            required: window.min_obs,
            actual: pairs.len(),
        });
    }
    let n = pairs.len();
    let x = DMatrix::from_fn(n, 6, |i, j| if j == 0 { 1.0 } else { pairs[i].1.factors()[j - 1] });
    let y = DVector::from_iterator(n, pairs.iter().map(|p| p.0));
    let ls = linalg::least_squares(&x, &y)?;
    let se = standard_errors(&ls, n);
    let mut loadings = [0.0; 5];
    let mut loading_se = [0.0; 5];
    for k in 0..5 {
        loadings[k] = ls.coefficients[k + 1];
        loading_se[k] = se[k + 1];
    }
    Ok(FamaFrenchModel {
        alpha: ls.coefficients[0],
        loadings,
        alpha_se: se[0],
        loading_se,
        n_obs: n,
    })
}

/// Fits the requested model kind. For Fama-French the stock returns are
/// converted to excess returns first.
pub fn fit_model(
    kind: ModelKind,
    stock: &ReturnSeries,
    market: Option<&ReturnSeries>,
    factors: Option<&FactorSeries>,
    window: &EstimationWindow,
) -> Result<NormalReturnModel> {
    match kind {
        ModelKind::ConstantMean => {
            let est = stock.between(window.start, window.end);
            fit_constant_mean(&est, window.min_obs).map(NormalReturnModel::ConstantMean)
        }
        ModelKind::Market => {
            let market = market.ok_or(ExpectedReturnError::MissingInput {
                what: "market returns",
                date: window.end,
            })?;
            fit_market_model(stock, market, window).map(NormalReturnModel::Market)
        }
        ModelKind::FamaFrench => {
            let factors = factors.ok_or(ExpectedReturnError::MissingInput {
                what: "factor series",
                date: window.end,
            })?;
            let est = stock.between(window.start, window.end);
            let excess = match market_data::excess_returns(&est, factors) {
                Ok(e) => e,
                Err(MarketDataError::EmptyIntersection { .. } | MarketDataError::Empty(_)) => {
                    return Err(ExpectedReturnError::TooFewObservations {
                        required: window.min_obs,
                        actual: 0,
                    })
                }
                Err(e) => return Err(e.into()),
            };
            fit_fama_french(&excess, factors, window).map(NormalReturnModel::FamaFrench)
        }
    }
}

/// Inputs available on one date for predicting the normal return.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DateInputs {
    pub date: NaiveDate,
    pub market: Option<f64>,
    pub factors: Option<FactorRow>,
}

impl NormalReturnModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            NormalReturnModel::ConstantMean(_) => ModelKind::ConstantMean,
            NormalReturnModel::Market(_) => ModelKind::Market,
            NormalReturnModel::FamaFrench(_) => ModelKind::FamaFrench,
        }
    }
}

/// Expected total return on a date; Fama-French predictions include rf.
pub fn predict_normal(model: &NormalReturnModel, inputs: &DateInputs) -> Result<f64> {
    match model {
        NormalReturnModel::ConstantMean(m) => Ok(m.mu),
        NormalReturnModel::Market(m) => {
            let rm = inputs.market.ok_or(ExpectedReturnError::MissingInput {
                what: "market return",
                date: inputs.date,
            })?;
            Ok(m.alpha + m.beta * rm)
        }
        NormalReturnModel::FamaFrench(m) => {
            let f = inputs.factors.ok_or(ExpectedReturnError::MissingInput {
                what: "factor row",
                date: inputs.date,
            })?;
            let exposure: f64 = m.loadings.iter().zip(f.factors()).map(|(b, x)| b * x).sum();
            Ok(f.rf + m.alpha + exposure)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn day(i: usize) -> NaiveDate {
        NaiveDate::from_ymd_opt(2019, 1, 1).unwrap() + chrono::Days::new(i as u64)
    }

    fn series(vals: &[f64]) -> ReturnSeries {
        ReturnSeries::new("S", vals.iter().enumerate().map(|(i, v)| (day(i), *v)).collect()).unwrap()
    }

    fn window(n: usize) -> EstimationWindow {
        EstimationWindow {
            start: day(0),
            end: day(n - 1),
            length: n,
            min_obs: 2,
        }
    }

    fn factor_series(rows: &[[f64; 5]]) -> FactorSeries {
        FactorSeries::new(
            rows.iter()
                .enumerate()
                .map(|(i, f)| FactorRow {
                    date: day(i),
                    mkt_rf: f[0],
                    smb: f[1],
                    hml: f[2],
                    rmw: f[3],
                    cma: f[4],
                    rf: 0.0,
                })
                .collect(),
        )
        .unwrap()
    }

    // Normal equations solved by Gauss-Jordan elimination with partial pivoting.
    fn normal_equation_oracle(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
        let p = x[0].len();
        let mut a = vec![vec![0.0; p + 1]; p];
        for (row, yi) in x.iter().zip(y) {
            for i in 0..p {
                for j in 0..p {
                    a[i][j] += row[i] * row[j];
                }
                a[i][p] += row[i] * yi;
            }
        }
        for col in 0..p {
            let piv = (col..p).max_by(|&r1, &r2| a[r1][col].abs().total_cmp(&a[r2][col].abs())).unwrap();
            a.swap(col, piv);
            let d = a[col][col];
            for v in a[col].iter_mut() {
                *v /= d;
            }
            for r in 0..p {
                if r != col {
                    let f = a[r][col];
                    for c in 0..=p {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
        a.iter().map(|r| r[p]).collect()
    }

    #[test]
    fn constant_mean_cases() {
        let m = fit_constant_mean(&series(&[0.01, 0.03]), 2).unwrap();
        assert!((m.mu - 0.02).abs() < 1e-15);
        assert_eq!(fit_constant_mean(&series(&[0.0; 5]), 2).unwrap().mu, 0.0);
        assert!(matches!(
            fit_constant_mean(&series(&[0.0; 5]), 60),
            Err(ExpectedReturnError::TooFewObservations { required: 60, actual: 5 })
        ));
    }

    #[test]
    fn constant_mean_matches_summation_oracle() {
        let base = [0.013, -0.002, 0.0071, -0.0156, 0.0009, 0.021, -0.0113];
        let vals: Vec<f64> = (0..250).map(|i| base[(i * 3) % base.len()]).collect();
        // oracle: pairwise summation in reverse order
        fn pairwise(v: &[f64]) -> f64 {
            if v.len() <= 2 {
                return v.iter().rev().sum();
            }
            let (a, b) = v.split_at(v.len() / 2);
            pairwise(b) + pairwise(a)
        }
        let oracle = pairwise(&vals) / 250.0;
        let m = fit_constant_mean(&series(&vals), 60).unwrap();
        assert!((m.mu - oracle).abs() < 1e-12);
    }

    #[test]
    fn market_model_exact_relations() {
        let market: Vec<f64> = (0..40).map(|i| ((i * 7) % 11) as f64 * 0.001 - 0.005).collect();
        let stock: Vec<f64> = market.iter().map(|m| 2.0 * m).collect();
        let mm = fit_market_model(&series(&stock), &series(&market), &window(40)).unwrap();
        assert!(mm.alpha.abs() < 1e-12);
        assert!((mm.beta - 2.0).abs() < 1e-12);

        let flat = vec![0.01; 40];
        let mm = fit_market_model(&series(&flat), &series(&market), &window(40)).unwrap();
        assert!((mm.alpha - 0.01).abs() < 1e-12);
        assert!(mm.beta.abs() < 1e-12);

        let same = fit_market_model(&series(&market), &series(&market), &window(40)).unwrap();
        assert!((same.beta - 1.0).abs() < 1e-12);
        assert!(same.alpha.abs() < 1e-12);
    }

    #[test]
    fn market_model_errors() {
        let m = vec![0.01; 40];
        assert!(matches!(
            fit_market_model(&series(&m), &series(&m), &window(40)),
            Err(ExpectedReturnError::ZeroMarketVariance)
        ));
        let w = EstimationWindow { min_obs: 60, ..window(40) };
        let v: Vec<f64> = (0..40).map(|i| i as f64).collect();
        assert!(matches!(
            fit_market_model(&series(&v), &series(&v), &w),
            Err(ExpectedReturnError::TooFewObservations { required: 60, actual: 40 })
        ));
    }

    #[test]
    fn market_model_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let market: Vec<f64> = (0..250).map(|_| rng.random_range(-0.03..0.03)).collect();
        let stock: Vec<f64> = market.iter().map(|m| 0.001 + 1.3 * m + noise.sample(&mut rng)).collect();
        let mm = fit_market_model(&series(&stock), &series(&market), &window(250)).unwrap();
        let rows: Vec<Vec<f64>> = market.iter().map(|m| vec![1.0, *m]).collect();
        let oracle = normal_equation_oracle(&rows, &stock);
        assert!((mm.alpha - oracle[0]).abs() < 1e-10);
        assert!((mm.beta - oracle[1]).abs() < 1e-10);

        // residual orthogonality
        let resid: Vec<f64> = stock.iter().zip(&market).map(|(s, m)| s - mm.alpha - mm.beta * m).collect();
        let dot_one: f64 = resid.iter().sum();
        let dot_m: f64 = resid.iter().zip(&market).map(|(r, m)| r * m).sum();
        let rn = resid.iter().map(|r| r * r).sum::<f64>().sqrt();
        let mn = market.iter().map(|m| m * m).sum::<f64>().sqrt();
        assert!(dot_one.abs() < 1e-8 * rn * 250f64.sqrt());
        assert!(dot_m.abs() < 1e-8 * rn * mn);
    }

    fn random_factors(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 5]> {
        (0..n)
            .map(|_| {
                let mut f = [0.0; 5];
                for v in f.iter_mut() {
                    *v = rng.random_range(-0.02..0.02);
                }
                f
            })
            .collect()
    }

    #[test]
    fn fama_french_exact_and_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows = random_factors(&mut rng, 120);
        let y: Vec<f64> = rows.iter().map(|f| 0.001 + 1.2 * f[0] + 0.3 * f[1]).collect();
        let ff = fit_fama_french(&series(&y), &factor_series(&rows), &window(120)).unwrap();
        assert!((ff.alpha - 0.001).abs() < 1e-12);
        let expected = [1.2, 0.3, 0.0, 0.0, 0.0];
        for k in 0..5 {
            assert!((ff.loadings[k] - expected[k]).abs() < 1e-10, "loading {k}: {}", ff.loadings[k]);
        }

        let noise = Normal::new(0.0, 0.005).unwrap();
        let planted = [0.9, -0.4, 0.25, 0.1, -0.2];
        let y: Vec<f64> = rows
            .iter()
            .map(|f| 0.0005 + f.iter().zip(planted).map(|(a, b)| a * b).sum::<f64>() + noise.sample(&mut rng))
            .collect();
        let ff = fit_fama_french(&series(&y), &factor_series(&rows), &window(120)).unwrap();
        let design: Vec<Vec<f64>> = rows.iter().map(|f| std::iter::once(1.0).chain(f.iter().copied()).collect()).collect();
        let oracle = normal_equation_oracle(&design, &y);
        assert!((ff.alpha - oracle[0]).abs() < 1e-10);
        for k in 0..5 {
            assert!((ff.loadings[k] - oracle[k + 1]).abs() < 1e-10);
        }
    }

    #[test]
    fn fama_french_rank_deficiency() {
        let zeros = vec![[0.0; 5]; 80];
        let y = vec![0.01; 80];
        assert!(matches!(
            fit_fama_french(&series(&y), &factor_series(&zeros), &window(80)),
            Err(ExpectedReturnError::RankDeficient { .. })
        ));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let only_market: Vec<[f64; 5]> = (0..80).map(|_| [rng.random_range(-0.02..0.02), 0.0, 0.0, 0.0, 0.0]).collect();
        assert!(matches!(
            fit_fama_french(&series(&y), &factor_series(&only_market), &window(80)),
            Err(ExpectedReturnError::RankDeficient { rank: 2, columns: 6 })
        ));
    }

    #[test]
    fn predictions() {
        let inputs = DateInputs {
            date: day(0),
            market: Some(0.01),
            factors: Some(FactorRow {
                date: day(0),
                mkt_rf: 0.01,
                smb: 0.5,
                hml: 0.5,
                rmw: 0.5,
                cma: 0.5,
                rf: 0.002,
            }),
        };
        let cm = NormalReturnModel::ConstantMean(ConstantMeanModel { mu: 0.02, n_obs: 1 });
        assert_eq!(predict_normal(&cm, &inputs).unwrap(), 0.02);
        let mm = NormalReturnModel::Market(MarketModel {
            alpha: 0.0,
            beta: 2.0,
            alpha_se: 0.0,
            beta_se: 0.0,
            n_obs: 1,
        });
        assert!((predict_normal(&mm, &inputs).unwrap() - 0.02).abs() < 1e-15);
        let ff = NormalReturnModel::FamaFrench(FamaFrenchModel {
            alpha: 0.0,
            loadings: [1.0, 0.0, 0.0, 0.0, 0.0],
            alpha_se: 0.0,
            loading_se: [0.0; 5],
            n_obs: 1,
        });
        assert!((predict_normal(&ff, &inputs).unwrap() - 0.012).abs() < 1e-15);

        let bare = DateInputs { date: day(0), market: None, factors: None };
        assert!(predict_normal(&cm, &bare).is_ok());
        assert!(matches!(predict_normal(&mm, &bare), Err(ExpectedReturnError::MissingInput { .. })));
        assert!(matches!(predict_normal(&ff, &bare), Err(ExpectedReturnError::MissingInput { .. })));
    }

    #[test]
    fn window_placement() {
        let cal = TradingCalendar::from_dates((0..400).map(day));
        let w = EstimationWindow::ending_before(&cal, 300, 250, 60).unwrap();
        assert_eq!(w.end, day(299));
        assert_eq!(w.start, day(50));
        let short = EstimationWindow::ending_before(&cal, 100, 250, 60).unwrap();
        assert_eq!(short.start, day(0));
        assert!(EstimationWindow::ending_before(&cal, 0, 250, 60).is_err());
        assert!(EstimationWindow::ending_before(&cal, 10, 250, 300).is_err());
    }
}
