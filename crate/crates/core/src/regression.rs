//! OLS and ridge fits with analytic and bootstrap inference.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::event_study::CarValue;
use crate::linalg::{self, LinalgError};
use crate::sentiment_features::{self, DocumentFeatureVector, FeatureError, ModelId};

pub const DEFAULT_RESAMPLES: usize = 10_000;
pub const DEFAULT_LAMBDA: f64 = 1.0;
/// Two-sided normal critical values for the 5% and 1% levels.
pub const Z_FIVE_PERCENT: f64 = 1.96;
pub const Z_ONE_PERCENT: f64 = 2.576;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RegressionError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),

    #[error("ridge penalty must be a finite non-negative number, got {0}")]
    NegativeLambda(f64),

    #[error("first design column must be an all-ones intercept")]
    MissingIntercept,

    #[error("bootstrap needs at least one resample")]
    NoResamples,

    #[error("bootstrap gave up after {redraws} redraws of rank-deficient resamples")]
    RedrawCapExceeded { redraws: usize },

    #[error("zero standard error with non-zero coefficient {coefficient}")]
    DegenerateSe { coefficient: f64 },

    #[error("{0}")]
    Features(String),
}

impl RegressionError {
    fn is_rank_problem(&self) -> bool {
        matches!(
            self,
            RegressionError::Linalg(LinalgError::RankDeficient { .. } | LinalgError::Underdetermined { .. })
        )
    }
}

impl From<FeatureError> for RegressionError {
    fn from(e: FeatureError) -> Self {
        RegressionError::Features(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, RegressionError>;

fn r_squared(y: &DVector<f64>, ssr: f64) -> f64 {
    let mean = y.mean();
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if sst == 0.0 {
        0.0
    } else {
        1.0 - ssr / sst
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub t_stats: Vec<f64>,
    /// Two-sided, Student t with `n - k` degrees of freedom.
    pub p_values: Vec<f64>,
    pub r_squared: f64,
    pub residuals: Vec<f64>,
    pub df: usize,
}

pub fn fit_ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<OlsFit> {
    let (n, k) = x.shape();
    if n <= k {
        return Err(LinalgError::Underdetermined { rows: n, columns: k }.into());
    }
    let ls = linalg::least_squares(x, y)?;
    let df = n - k;
    let sigma2 = ls.ssr / df as f64;
    let coefficients: Vec<f64> = ls.coefficients.iter().copied().collect();
    let standard_errors: Vec<f64> = (0..k).map(|j| (sigma2 * ls.xtx_inv[(j, j)]).max(0.0).sqrt()).collect();
    let t_stats: Vec<f64> = coefficients.iter().zip(&standard_errors).map(|(b, s)| b / s).collect();
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df > 0");
    let p_values = t_stats
        .iter()
        .map(|t| if t.is_nan() { f64::NAN } else { 2.0 * (1.0 - dist.cdf(t.abs())) })
        .collect();
    Ok(OlsFit {
        r_squared: r_squared(y, ls.ssr),
        coefficients,
        standard_errors,
        t_stats,
        p_values,
        residuals: ls.residuals.iter().copied().collect(),
        df,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeFit {
    pub lambda: f64,
    /// Original-scale coefficients, intercept first.
    pub coefficients: Vec<f64>,
    /// Non-intercept coefficients on the standardized scale.
    pub standardized: Vec<f64>,
    pub bootstrap_se: Option<Vec<f64>>,
    pub r_squared: f64,
}

/// Ridge regression with an unpenalized intercept in column 0.
///
/// The remaining columns are centred and scaled to unit (population)
/// variance before penalising. With `lambda > 0` a zero-variance column gets
/// a zero coefficient; with `lambda == 0` it makes the fit rank deficient.
pub fn fit_ridge(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<RidgeFit> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(RegressionError::NegativeLambda(lambda));
    }
    let (n, k) = x.shape();
    if y.len() != n {
        return Err(LinalgError::DimensionMismatch { rows: n, response: y.len() }.into());
    }
    if k == 0 || x.column(0).iter().any(|v| *v != 1.0) {
        return Err(RegressionError::MissingIntercept);
    }
    if n < 2 {
        return Err(LinalgError::Underdetermined { rows: n, columns: k }.into());
    }
    let p = k - 1;
    let nf = n as f64;
    let y_mean = y.mean();
    let yc = y.map(|v| v - y_mean);

    let mut means = vec![0.0; p];
    let mut scales = vec![0.0; p];
    let mut z = DMatrix::zeros(n, p);
    let mut live = Vec::with_capacity(p);
    for j in 0..p {
        let col = x.column(j + 1);
        let m = col.mean();
        let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / nf;
        means[j] = m;
        scales[j] = var.sqrt();
        if var > 0.0 {
            live.push(j);
            let s = scales[j];
            for i in 0..n {
                z[(i, j)] = (col[i] - m) / s;
            }
        }
    }
    if lambda == 0.0 && live.len() < p {
        return Err(LinalgError::RankDeficient {
            rank: live.len() + 1,
            columns: k,
        }
        .into());
    }

    let mut standardized = vec![0.0; p];
    if !live.is_empty() {
        let zl = z.select_columns(&live);
        let b = if lambda == 0.0 {
            if n <= live.len() {
                return Err(LinalgError::Underdetermined { rows: n, columns: k }.into());
            }
            linalg::least_squares(&zl, &yc)?.coefficients
        } else {
            let mut gram = zl.tr_mul(&zl);
            for d in 0..live.len() {
                gram[(d, d)] += lambda;
            }
            let rhs = zl.tr_mul(&yc);
            linalg::spd_solve(gram, &rhs).ok_or(LinalgError::NonFinite)?
        };
        for (pos, &j) in live.iter().enumerate() {
            standardized[j] = b[pos];
        }
    }

    let mut coefficients = vec![0.0; k];
    let mut intercept = y_mean;
    for j in 0..p {
        if scales[j] > 0.0 {
            let beta = standardized[j] / scales[j];
            coefficients[j + 1] = beta;
            intercept -= beta * means[j];
        }
    }
    coefficients[0] = intercept;
    let beta = DVector::from_column_slice(&coefficients);
    let ssr = (y - x * beta).norm_squared();
    Ok(RidgeFit {
        lambda,
        coefficients,
        standardized,
        bootstrap_se: None,
        r_squared: r_squared(y, ssr),
    })
}

/// Anything that maps a design and response to a coefficient vector.
pub trait Fitter: Sync {
    fn fit(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Vec<f64>>;
}

impl<F> Fitter for F
where
    F: Fn(&DMatrix<f64>, &DVector<f64>) -> Result<Vec<f64>> + Sync,
{
    fn fit(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Vec<f64>> {
        self(x, y)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OlsFitter;

impl Fitter for OlsFitter {
    fn fit(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Vec<f64>> {
        Ok(linalg::least_squares(x, y)?.coefficients.iter().copied().collect())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RidgeFitter {
    pub lambda: f64,
}

impl Fitter for RidgeFitter {
    fn fit(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Vec<f64>> {
        fit_ridge(x, y, self.lambda).map(|f| f.coefficients)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            resamples: DEFAULT_RESAMPLES,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub standard_errors: Vec<f64>,
    /// Percentile intervals: (2.5%, 97.5%) and (0.5%, 99.5%).
    pub ci95: Vec<(f64, f64)>,
    pub ci99: Vec<(f64, f64)>,
    pub resamples: usize,
    /// Rank-deficient resamples that were redrawn.
    pub redraws: usize,
}

/// Generator for one resample: the config seed selects the key and the
/// resample index selects the stream, so results do not depend on scheduling.
pub fn resample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = q * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

/// Row-resampling bootstrap of a fitter's coefficients.
///
/// Each resample draws `n` rows with replacement. Resamples the fitter
/// rejects as rank deficient are redrawn from the same stream, up to
/// `10 * resamples` redraws in total.
pub fn bootstrap_se<F: Fitter + ?Sized>(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    fitter: &F,
    config: &BootstrapConfig,
) -> Result<BootstrapResult> {
    if config.resamples == 0 {
        return Err(RegressionError::NoResamples);
    }
    if config.resamples < 100 {
        log::warn!("bootstrap with {} resamples; standard errors will be unreliable", config.resamples);
    }
    let (n, k) = x.shape();
    if y.len() != n {
        return Err(LinalgError::DimensionMismatch { rows: n, response: y.len() }.into());
    }
    let cap = 10 * config.resamples;

    let draws: Vec<Result<(Vec<f64>, usize)>> = (0..config.resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = resample_rng(config.seed, b as u64);
            let mut redraws = 0;
            loop {
                let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                let xb = x.select_rows(&rows);
                let yb = DVector::from_iterator(n, rows.iter().map(|&i| y[i]));
                match fitter.fit(&xb, &yb) {
                    Ok(coef) => return Ok((coef, redraws)),
                    Err(e) if e.is_rank_problem() && redraws < cap => redraws += 1,
                    Err(e) if e.is_rank_problem() => return Err(RegressionError::RedrawCapExceeded { redraws }),
                    Err(e) => return Err(e),
                }
            }
        })
        .collect();

    let mut coefs = Vec::with_capacity(config.resamples);
    let mut redraws = 0;
    for d in draws {
        let (c, r) = d?;
        redraws += r;
        coefs.push(c);
    }
    if redraws > cap {
        return Err(RegressionError::RedrawCapExceeded { redraws });
    }

    let b = coefs.len();
    let mut standard_errors = Vec::with_capacity(k);
    let mut ci95 = Vec::with_capacity(k);
    let mut ci99 = Vec::with_capacity(k);
    for j in 0..k {
        let mut col: Vec<f64> = coefs.iter().map(|c| c[j]).collect();
        let se = if b < 2 {
            0.0
        } else {
            let mean = col.iter().sum::<f64>() / b as f64;
            (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (b - 1) as f64).sqrt()
        };
        standard_errors.push(se);
        col.sort_by(f64::total_cmp);
        ci95.push((percentile(&col, 0.025), percentile(&col, 0.975)));
        ci99.push((percentile(&col, 0.005), percentile(&col, 0.995)));
    }
    Ok(BootstrapResult {
        standard_errors,
        ci95,
        ci99,
        resamples: b,
        redraws,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SignificanceFlag {
    None,
    /// 5% two-sided.
    Five,
    /// 1% two-sided.
    One,
}

impl SignificanceFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            SignificanceFlag::None => "",
            SignificanceFlag::Five => "*",
            SignificanceFlag::One => "**",
        }
    }
}

/// Normal-approximation z test on `coefficient / se`.
pub fn significance_flag(coefficient: f64, se: f64) -> Result<SignificanceFlag> {
    if !(se > 0.0) || !se.is_finite() {
        if coefficient == 0.0 && se == 0.0 {
            return Ok(SignificanceFlag::None);
        }
        return Err(RegressionError::DegenerateSe { coefficient });
    }
    let z = (coefficient / se).abs();
    Ok(if z >= Z_ONE_PERCENT {
        SignificanceFlag::One
    } else if z >= Z_FIVE_PERCENT {
        SignificanceFlag::Five
    } else {
        SignificanceFlag::None
    })
}

fn percentile_flag(ci95: (f64, f64), ci99: (f64, f64)) -> SignificanceFlag {
    let excludes = |(lo, hi): (f64, f64)| lo > 0.0 || hi < 0.0;
    if excludes(ci99) {
        SignificanceFlag::One
    } else if excludes(ci95) {
        SignificanceFlag::Five
    } else {
        SignificanceFlag::None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Ols,
    Ridge,
}

impl Estimator {
    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::Ols => "ols",
            Estimator::Ridge => "ridge",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionConfig {
    pub models: Vec<ModelId>,
    pub windows: Vec<usize>,
    pub estimators: Vec<Estimator>,
    pub lambda: f64,
    pub bootstrap: BootstrapConfig,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self {
            models: ModelId::ALL.to_vec(),
            windows: crate::event_study::DEFAULT_WINDOWS.to_vec(),
            estimators: vec![Estimator::Ols, Estimator::Ridge],
            lambda: DEFAULT_LAMBDA,
            bootstrap: BootstrapConfig::default(),
        }
    }
}

/// Seed for one (model, window) cell, derived from the run seed.
pub fn cell_seed(seed: u64, model: ModelId, window: usize) -> u64 {
    // splitmix64 finaliser
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(model.get() as u64 * 1_000 + window as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermResult {
    pub term: String,
    /// `None` when the column was dropped for lack of variation.
    pub coefficient: Option<f64>,
    pub std_error: Option<f64>,
    /// `None` for dropped terms; `Err` text for degenerate standard errors.
    pub flag: Option<std::result::Result<SignificanceFlag, String>>,
    pub ci95: Option<(f64, f64)>,
    pub ci99: Option<(f64, f64)>,
}

impl TermResult {
    pub fn flag_str(&self) -> &str {
        match &self.flag {
            None => "NA",
            Some(Ok(f)) => f.as_str(),
            Some(Err(_)) => "degenerate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub model: ModelId,
    pub window: usize,
    pub estimator: Estimator,
    pub terms: Vec<TermResult>,
    pub r_squared: f64,
    pub n_obs: usize,
    pub dropped_rows: usize,
    pub dropped_columns: Vec<String>,
    pub baseline_industry: String,
    pub bootstrap_redraws: Option<usize>,
    pub seed: Option<u64>,
}

impl CellResult {
    pub fn term(&self, name: &str) -> Option<&TermResult> {
        self.terms.iter().find(|t| t.term == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub model: ModelId,
    pub window: usize,
    pub estimator: Option<Estimator>,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelResults {
    pub cells: Vec<CellResult>,
    pub failures: Vec<CellFailure>,
}

impl ModelResults {
    pub fn cell(&self, model: ModelId, window: usize, estimator: Estimator) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.model == model && c.window == window && c.estimator == estimator)
    }

    /// (window, OLS r², ridge r²) for one model, windows in configured order.
    pub fn r2_grid(&self, model: ModelId, windows: &[usize]) -> Vec<(usize, Option<f64>, Option<f64>)> {
        windows
            .iter()
            .map(|&w| {
                (
                    w,
                    self.cell(model, w, Estimator::Ols).map(|c| c.r_squared),
                    self.cell(model, w, Estimator::Ridge).map(|c| c.r_squared),
                )
            })
            .collect()
    }
}

fn fit_cell(
    dm: &sentiment_features::DesignMatrix,
    estimator: Estimator,
    config: &RegressionConfig,
) -> Result<CellResult> {
    // intercept always kept; other constant columns cannot be estimated
    let keep: Vec<usize> = (0..dm.x.ncols())
        .filter(|&j| {
            if j == 0 {
                return true;
            }
            let col = dm.x.column(j);
            col.iter().any(|v| *v != col[0])
        })
        .collect();
    let dropped_columns: Vec<String> = (0..dm.x.ncols())
        .filter(|j| !keep.contains(j))
        .map(|j| dm.columns[j].clone())
        .collect();
    let x = dm.x.select_columns(&keep);
    let y = &dm.y;

    let mut estimates: Vec<Option<(f64, f64, Option<((f64, f64), (f64, f64))>)>> = vec![None; dm.columns.len()];
    let (r_squared, redraws, seed) = match estimator {
        Estimator::Ols => {
            let fit = fit_ols(&x, y)?;
            for (pos, &j) in keep.iter().enumerate() {
                estimates[j] = Some((fit.coefficients[pos], fit.standard_errors[pos], None));
            }
            (fit.r_squared, None, None)
        }
        Estimator::Ridge => {
            let fit = fit_ridge(&x, y, config.lambda)?;
            let seed = cell_seed(config.bootstrap.seed, dm.model, dm.window);
            let boot = bootstrap_se(
                &x,
                y,
                &RidgeFitter { lambda: config.lambda },
                &BootstrapConfig {
                    resamples: config.bootstrap.resamples,
                    seed,
                },
            )?;
            for (pos, &j) in keep.iter().enumerate() {
                estimates[j] = Some((
                    fit.coefficients[pos],
                    boot.standard_errors[pos],
                    Some((boot.ci95[pos], boot.ci99[pos])),
                ));
            }
            (fit.r_squared, Some(boot.redraws), Some(seed))
        }
    };

    let terms = dm
        .columns
        .iter()
        .zip(estimates)
        .map(|(name, est)| match est {
            None => TermResult {
                term: name.clone(),
                coefficient: None,
                std_error: None,
                flag: None,
                ci95: None,
                ci99: None,
            },
            Some((coef, se, ci)) => TermResult {
                term: name.clone(),
                coefficient: Some(coef),
                std_error: Some(se),
                flag: Some(significance_flag(coef, se).map_err(|e| e.to_string())),
                ci95: ci.map(|c| c.0),
                ci99: ci.map(|c| c.1),
            },
        })
        .collect();
    Ok(CellResult {
        model: dm.model,
        window: dm.window,
        estimator,
        terms,
        r_squared,
        n_obs: dm.x.nrows(),
        dropped_rows: dm.dropped.len(),
        dropped_columns,
        baseline_industry: dm.baseline_industry.code().to_string(),
        bootstrap_redraws: redraws,
        seed,
    })
}

/// Fits every configured (model, window, estimator) cell. Failing cells are
/// reported in [`ModelResults::failures`] and do not stop the others.
pub fn run_models(features: &[DocumentFeatureVector], cars: &[CarValue], config: &RegressionConfig) -> ModelResults {
    let mut out = ModelResults::default();
    for &model in &config.models {
        for &window in &config.windows {
            let dm = match sentiment_features::build_design_matrix(model, features, cars, window) {
                Ok(dm) => dm,
                Err(e) => {
                    out.failures.push(CellFailure {
                        model,
                        window,
                        estimator: None,
                        reason: e.to_string(),
                    });
                    continue;
                }
            };
            for &estimator in &config.estimators {
                match fit_cell(&dm, estimator, config) {
                    Ok(cell) => out.cells.push(cell),
                    Err(e) => out.failures.push(CellFailure {
                        model,
                        window,
                        estimator: Some(estimator),
                        reason: e.to_string(),
                    }),
                }
            }
        }
    }
    out
}

fn opt_num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into())
}

/// `term,window,estimator,coefficient,std_error,flag`
pub fn write_cell_results<'a, W: Write, I>(writer: W, cells: I) -> csv::Result<()>
where
    I: IntoIterator<Item = &'a CellResult>,
{
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["term", "window", "estimator", "coefficient", "std_error", "flag"])?;
    for cell in cells {
        for t in &cell.terms {
            w.write_record([
                t.term.clone(),
                cell.window.to_string(),
                cell.estimator.as_str().to_string(),
                opt_num(t.coefficient),
                opt_num(t.std_error),
                t.flag_str().to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Bootstrap percentile intervals:
/// `term,window,estimator,ci95_lower,ci95_upper,ci99_lower,ci99_upper,percentile_flag`
pub fn write_percentiles<'a, W: Write, I>(writer: W, cells: I) -> csv::Result<()>
where
    I: IntoIterator<Item = &'a CellResult>,
{
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "term",
        "window",
        "estimator",
        "ci95_lower",
        "ci95_upper",
        "ci99_lower",
        "ci99_upper",
        "percentile_flag",
    ])?;
    for cell in cells {
        for t in &cell.terms {
            let flag = match (t.ci95, t.ci99) {
                (Some(a), Some(b)) => percentile_flag(a, b).as_str(),
                _ => "NA",
            };
            w.write_record([
                t.term.clone(),
                cell.window.to_string(),
                cell.estimator.as_str().to_string(),
                opt_num(t.ci95.map(|c| c.0)),
                opt_num(t.ci95.map(|c| c.1)),
                opt_num(t.ci99.map(|c| c.0)),
                opt_num(t.ci99.map(|c| c.1)),
                flag.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `window,ols_r2,ridge_r2`
pub fn write_r2_grid<W: Write>(writer: W, grid: &[(usize, Option<f64>, Option<f64>)]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["window", "ols_r2", "ridge_r2"])?;
    for (window, ols, ridge) in grid {
        w.write_record([window.to_string(), opt_num(*ols), opt_num(*ridge)])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn design(rng: &mut ChaCha8Rng, n: usize, k: usize) -> DMatrix<f64> {
        let normal = Normal::new(0.0, 1.0).unwrap();
        DMatrix::from_fn(n, k, |_, j| if j == 0 { 1.0 } else { normal.sample(rng) })
    }

    // Explicit Gauss-Jordan inverse, the closed-form oracle for both fits.
    fn invert(a: &DMatrix<f64>) -> DMatrix<f64> {
        let p = a.nrows();
        let mut m = DMatrix::zeros(p, 2 * p);
        m.view_mut((0, 0), (p, p)).copy_from(a);
        for i in 0..p {
            m[(i, p + i)] = 1.0;
        }
        for c in 0..p {
            let piv = (c..p).max_by(|&r1, &r2| m[(r1, c)].abs().total_cmp(&m[(r2, c)].abs())).unwrap();
            m.swap_rows(c, piv);
            let d = m[(c, c)];
            for j in 0..2 * p {
                m[(c, j)] /= d;
            }
            for r in 0..p {
                if r != c {
                    let f = m[(r, c)];
                    for j in 0..2 * p {
                        m[(r, j)] -= f * m[(c, j)];
                    }
                }
            }
        }
        m.columns(p, p).into_owned()
    }

    #[test]
    fn ols_exact_and_constant() {
        let x = DMatrix::from_fn(6, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y = DVector::from_fn(6, |i, _| 1.0 + 2.0 * i as f64);
        let fit = fit_ols(&x, &y).unwrap();
        assert!((fit.coefficients[0] - 1.0).abs() < 1e-12);
        assert!((fit.coefficients[1] - 2.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);

        let y = DVector::from_element(6, 0.3);
        let fit = fit_ols(&x, &y).unwrap();
        assert!(fit.coefficients[1].abs() < 1e-12);
        assert!((fit.coefficients[0] - 0.3).abs() < 1e-12);
        assert_eq!(fit.r_squared, 0.0);
    }

    #[test]
    fn ols_errors() {
        let x = DMatrix::from_element(3, 3, 1.0);
        assert!(matches!(
            fit_ols(&x, &DVector::zeros(3)),
            Err(RegressionError::Linalg(LinalgError::Underdetermined { .. }))
        ));
        let x = DMatrix::from_fn(5, 2, |_, _| 1.0);
        assert!(matches!(
            fit_ols(&x, &DVector::zeros(5)),
            Err(RegressionError::Linalg(LinalgError::RankDeficient { .. }))
        ));
    }

    #[test]
    fn ols_matches_normal_equations_and_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = design(&mut rng, 50, 4);
        let y = DVector::from_fn(50, |i, _| x[(i, 1)] * 0.7 - x[(i, 3)] + ((i * 7) % 5) as f64 * 0.1);
        let fit = fit_ols(&x, &y).unwrap();
        let oracle = invert(&(x.transpose() * &x)) * x.transpose() * &y;
        for j in 0..4 {
            assert!((fit.coefficients[j] - oracle[j]).abs() < 1e-10 * oracle[j].abs().max(1.0));
        }
        let resid = DVector::from_column_slice(&fit.residuals);
        for j in 0..4 {
            let dot = x.column(j).dot(&resid);
            assert!(dot.abs() < 1e-8 * x.column(j).norm() * resid.norm());
        }
        // analytic SE: sqrt(σ² diag((XᵀX)⁻¹))
        let sigma2 = resid.norm_squared() / 46.0;
        let inv = invert(&(x.transpose() * &x));
        for j in 0..4 {
            assert!((fit.standard_errors[j] - (sigma2 * inv[(j, j)]).sqrt()).abs() < 1e-10);
            assert!((0.0..=1.0).contains(&fit.p_values[j]));
        }
    }

    #[test]
    fn ridge_lambda_zero_equals_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = design(&mut rng, 40, 5);
        let y = DVector::from_fn(40, |i, _| x[(i, 2)] + 0.1 * (i as f64).sin());
        let ols = fit_ols(&x, &y).unwrap();
        let ridge = fit_ridge(&x, &y, 0.0).unwrap();
        for j in 0..5 {
            assert!((ols.coefficients[j] - ridge.coefficients[j]).abs() < 1e-8);
        }
        assert!((ols.r_squared - ridge.r_squared).abs() < 1e-10);
    }

    #[test]
    fn ridge_matches_closed_form_on_standardized_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = design(&mut rng, 20, 3);
        let y = DVector::from_fn(20, |i, _| 0.5 + 2.0 * x[(i, 1)] - x[(i, 2)] + 0.3 * (i as f64).cos());
        let fit = fit_ridge(&x, &y, 1.0).unwrap();

        let n = 20.0;
        let mut z = DMatrix::zeros(20, 2);
        for j in 0..2 {
            let col = x.column(j + 1);
            let m = col.sum() / n;
            let s = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
            for i in 0..20 {
                z[(i, j)] = (col[i] - m) / s;
            }
        }
        let yc = y.add_scalar(-y.sum() / n);
        let oracle = invert(&(z.transpose() * &z + DMatrix::identity(2, 2))) * z.transpose() * yc;
        for j in 0..2 {
            assert!((fit.standardized[j] - oracle[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn ridge_large_lambda_shrinks_to_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = design(&mut rng, 30, 4);
        let y = DVector::from_fn(30, |i, _| 1.0 + x[(i, 1)]);
        let fit = fit_ridge(&x, &y, 1e12).unwrap();
        for j in 1..4 {
            assert!(fit.coefficients[j].abs() < 1e-9);
        }
        assert!((fit.coefficients[0] - y.mean()).abs() < 1e-8);
    }

    #[test]
    fn ridge_errors_and_constant_columns() {
        let x = DMatrix::from_fn(10, 3, |i, j| match j {
            0 => 1.0,
            1 => i as f64,
            _ => 5.0,
        });
        let y = DVector::from_fn(10, |i, _| i as f64 * 0.5);
        assert!(matches!(fit_ridge(&x, &y, -1.0), Err(RegressionError::NegativeLambda(_))));
        assert!(matches!(
            fit_ridge(&x, &y, 0.0),
            Err(RegressionError::Linalg(LinalgError::RankDeficient { .. }))
        ));
        let fit = fit_ridge(&x, &y, 1.0).unwrap();
        assert_eq!(fit.coefficients[2], 0.0);
        let no_intercept = DMatrix::from_fn(10, 2, |i, _| i as f64);
        assert!(matches!(fit_ridge(&no_intercept, &y, 1.0), Err(RegressionError::MissingIntercept)));
    }

    #[test]
    fn bootstrap_no_variation_and_determinism() {
        let x = DMatrix::from_element(25, 1, 1.0);
        let y = DVector::from_element(25, 0.7);
        let r = bootstrap_se(&x, &y, &OlsFitter, &BootstrapConfig { resamples: 200, seed: 1 }).unwrap();
        assert!(r.standard_errors[0] < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = design(&mut rng, 40, 3);
        let y = DVector::from_fn(40, |i, _| x[(i, 1)] + (i % 3) as f64);
        let cfg = BootstrapConfig { resamples: 300, seed: 99 };
        let a = bootstrap_se(&x, &y, &RidgeFitter { lambda: 1.0 }, &cfg).unwrap();
        let b = bootstrap_se(&x, &y, &RidgeFitter { lambda: 1.0 }, &cfg).unwrap();
        assert_eq!(a, b);
        let c = bootstrap_se(&x, &y, &RidgeFitter { lambda: 1.0 }, &BootstrapConfig { seed: 100, ..cfg }).unwrap();
        assert_ne!(a.standard_errors, c.standard_errors);
        assert_eq!(
            bootstrap_se(&x, &y, &OlsFitter, &BootstrapConfig { resamples: 0, seed: 0 }),
            Err(RegressionError::NoResamples)
        );
        let one = bootstrap_se(&x, &y, &OlsFitter, &BootstrapConfig { resamples: 1, seed: 0 }).unwrap();
        assert!(one.standard_errors.iter().all(|s| *s == 0.0));
    }

    #[test]
    fn bootstrap_redraws_rank_deficient_resamples() {
        // one row carries the only non-zero regressor value: many resamples miss it
        let x = DMatrix::from_fn(8, 2, |i, j| if j == 0 { 1.0 } else if i == 0 { 1.0 } else { 0.0 });
        let y = DVector::from_fn(8, |i, _| i as f64);
        let r = bootstrap_se(&x, &y, &OlsFitter, &BootstrapConfig { resamples: 200, seed: 3 }).unwrap();
        assert!(r.redraws > 0);
        let always_bad = |_: &DMatrix<f64>, _: &DVector<f64>| -> Result<Vec<f64>> {
            Err(LinalgError::RankDeficient { rank: 0, columns: 1 }.into())
        };
        assert!(matches!(
            bootstrap_se(&x, &y, &always_bad, &BootstrapConfig { resamples: 2, seed: 3 }),
            Err(RegressionError::RedrawCapExceeded { .. })
        ));
    }

    #[test]
    fn flags() {
        assert_eq!(significance_flag(2.0, 1.0).unwrap(), SignificanceFlag::Five);
        assert_eq!(significance_flag(3.0, 1.0).unwrap(), SignificanceFlag::One);
        assert_eq!(significance_flag(1.0, 1.0).unwrap(), SignificanceFlag::None);
        assert_eq!(significance_flag(-3.0, 1.0).unwrap(), SignificanceFlag::One);
        assert!(matches!(significance_flag(1.0, 0.0), Err(RegressionError::DegenerateSe { .. })));
        assert_eq!(significance_flag(0.0, 0.0).unwrap(), SignificanceFlag::None);
        assert!(SignificanceFlag::One > SignificanceFlag::Five);
    }

    #[test]
    fn nested_models_do_not_lose_r2() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let x = design(&mut rng, 60, 6);
            let y = DVector::from_fn(60, |i, _| x[(i, 2)] * 0.3 + ((i * 31) % 7) as f64 * 0.05);
            let mut prev = -1.0;
            for k in 1..=6 {
                let r2 = fit_ols(&x.columns(0, k).into_owned(), &y).unwrap().r_squared;
                assert!(r2 >= prev - 1e-12);
                assert!((-1e-12..=1.0 + 1e-12).contains(&r2));
                prev = r2;
            }
        }
    }

    #[test]
    fn cell_seeds_differ() {
        let m = ModelId::new(5).unwrap();
        assert_ne!(cell_seed(1, m, 3), cell_seed(1, m, 5));
        assert_eq!(cell_seed(1, m, 3), cell_seed(1, m, 3));
    }
}
