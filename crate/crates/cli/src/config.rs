//! TOML run configuration and its validation.

use std::path::{Path, PathBuf};

use finsent::classifier::Task;
use finsent::event_study::DEFAULT_WINDOWS;
use finsent::expected_return::{ModelKind, DEFAULT_ESTIMATION_LENGTH, DEFAULT_MIN_OBSERVATIONS};
use finsent::market_data::ReturnMethod;
use finsent::regression::{Estimator, DEFAULT_LAMBDA, DEFAULT_RESAMPLES};
use finsent::sentiment_features::ModelId;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub inputs: Inputs,
    #[serde(default)]
    pub event_study: EventStudySection,
    #[serde(default)]
    pub regression: RegressionSection,
    #[serde(default)]
    pub classify: ClassifySection,
}

fn default_output() -> PathBuf {
    PathBuf::from("output")
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: default_output(),
            inputs: Inputs::default(),
            event_study: EventStudySection::default(),
            regression: RegressionSection::default(),
            classify: ClassifySection::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub prices: Option<PathBuf>,
    pub factors: Option<PathBuf>,
    pub events: Option<PathBuf>,
    pub calendar: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub fundamentals: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EventStudySection {
    pub model: ModelKind,
    pub windows: Vec<usize>,
    pub allow_custom_windows: bool,
    pub estimation_length: usize,
    pub min_estimation_obs: usize,
    pub return_method: ReturnMethod,
    /// Instrument id of the market index inside the prices file.
    pub market_instrument: String,
}

impl Default for EventStudySection {
    fn default() -> Self {
        Self {
            model: ModelKind::default(),
            windows: DEFAULT_WINDOWS.to_vec(),
            allow_custom_windows: false,
            estimation_length: DEFAULT_ESTIMATION_LENGTH,
            min_estimation_obs: DEFAULT_MIN_OBSERVATIONS,
            return_method: ReturnMethod::default(),
            market_instrument: "SET".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressionSection {
    pub models: Vec<ModelId>,
    pub estimators: Vec<Estimator>,
    pub lambda: f64,
    pub resamples: usize,
    /// Fiscal year of a report = submission year minus this.
    pub report_year_offset: i32,
}

impl Default for RegressionSection {
    fn default() -> Self {
        Self {
            models: ModelId::ALL.to_vec(),
            estimators: vec![Estimator::Ols, Estimator::Ridge],
            lambda: DEFAULT_LAMBDA,
            resamples: DEFAULT_RESAMPLES,
            report_year_offset: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifySection {
    pub task: Task,
    pub train_split: Option<PathBuf>,
    pub dev_split: Option<PathBuf>,
    pub test_split: Option<PathBuf>,
    /// Split evaluated by `classify eval`.
    pub eval_split: String,
    pub model_file: Option<PathBuf>,
    pub learning_rate: f64,
    pub l2: f64,
    pub max_epochs: usize,
    pub min_df: usize,
    pub annotator_a: Option<PathBuf>,
    pub annotator_b: Option<PathBuf>,
}

impl Default for ClassifySection {
    fn default() -> Self {
        let p = finsent::classifier::MaxEntParams::default();
        Self {
            task: Task::Aspect,
            train_split: None,
            dev_split: None,
            test_split: None,
            eval_split: "test".into(),
            model_file: None,
            learning_rate: p.learning_rate,
            l2: p.l2,
            max_epochs: p.max_epochs,
            min_df: p.min_df,
            annotator_a: None,
            annotator_b: None,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub windows: Option<Vec<usize>>,
    pub model: Option<ModelKind>,
    pub lambda: Option<f64>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str, source: &Path) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("{}: {e}", source.display())))
    }

    /// Reads a config file, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text, path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(v) = p {
                if v.is_relative() {
                    *v = base.join(&*v);
                }
            }
        };
        let i = &mut self.inputs;
        for p in [
            &mut i.prices,
            &mut i.factors,
            &mut i.events,
            &mut i.calendar,
            &mut i.annotations,
            &mut i.fundamentals,
            &mut i.corpus,
        ] {
            fix(p);
        }
        let c = &mut self.classify;
        for p in [
            &mut c.train_split,
            &mut c.dev_split,
            &mut c.test_split,
            &mut c.model_file,
            &mut c.annotator_a,
            &mut c.annotator_b,
        ] {
            fix(p);
        }
        if self.output_dir.is_relative() {
            self.output_dir = base.join(&self.output_dir);
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(w) = &o.windows {
            self.event_study.windows = w.clone();
        }
        if let Some(m) = o.model {
            self.event_study.model = m;
        }
        if let Some(l) = o.lambda {
            self.regression.lambda = l;
        }
        if let Some(out) = &o.out {
            self.output_dir = out.clone();
        }
    }

    pub fn validate_windows(&self) -> Result<(), CliError> {
        let w = &self.event_study.windows;
        if w.is_empty() {
            return Err(CliError::Config("windows list is empty".into()));
        }
        if !self.event_study.allow_custom_windows {
            if let Some(bad) = w.iter().find(|x| !DEFAULT_WINDOWS.contains(x)) {
                return Err(CliError::Config(format!(
                    "window {bad} not in {{1, 3, 5}}; set event_study.allow_custom_windows to use it"
                )));
            }
        }
        Ok(())
    }

    /// Inputs needed by the event study for the selected normal-return model.
    pub fn event_study_inputs(&self) -> Result<Vec<(&'static str, &Path)>, CliError> {
        let i = &self.inputs;
        let mut req = vec![
            ("prices", required("prices", &i.prices)?),
            ("events", required("events", &i.events)?),
        ];
        if self.event_study.model.needs_factors() {
            req.push(("factors", required("factors", &i.factors)?));
        }
        if let Some(c) = &i.calendar {
            req.push(("calendar", c.as_path()));
        }
        Ok(req)
    }

    pub fn regression_inputs(&self) -> Result<Vec<(&'static str, &Path)>, CliError> {
        let mut req = self.event_study_inputs()?;
        req.push(("annotations", required("annotations", &self.inputs.annotations)?));
        req.push(("fundamentals", required("fundamentals", &self.inputs.fundamentals)?));
        if self.regression.models.is_empty() || self.regression.estimators.is_empty() {
            return Err(CliError::Config("regression.models and regression.estimators must be non-empty".into()));
        }
        if !(self.regression.lambda >= 0.0) {
            return Err(CliError::Config(format!("lambda must be >= 0, got {}", self.regression.lambda)));
        }
        if self.regression.resamples == 0 {
            return Err(CliError::Config("regression.resamples must be >= 1".into()));
        }
        Ok(req)
    }
}

fn required<'a>(name: &str, p: &'a Option<PathBuf>) -> Result<&'a Path, CliError> {
    p.as_deref()
        .ok_or_else(|| CliError::Config(format!("inputs.{name} is required for this command")))
}

/// Fails with a schema error naming the first path that does not exist.
pub fn check_exist(paths: &[(&str, &Path)]) -> Result<(), CliError> {
    for (name, p) in paths {
        if !p.is_file() {
            return Err(CliError::Schema(format!("{name} file not found: {}", p.display())));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let mut cfg = RunConfig::parse("seed = 7\n[event_study]\nmodel = \"market\"\n", Path::new("x")).unwrap();
        assert_eq!(cfg.event_study.windows, [5, 3, 1]);
        assert_eq!(cfg.event_study.model, ModelKind::Market);
        cfg.apply(&Overrides {
            seed: Some(9),
            lambda: Some(2.0),
            ..Default::default()
        });
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.regression.lambda, 2.0);
        assert!(RunConfig::parse("nonsense = 1", Path::new("x")).is_err());
    }

    #[test]
    fn windows_checked() {
        let mut cfg = RunConfig::default();
        cfg.event_study.windows = vec![2];
        assert!(cfg.validate_windows().is_err());
        cfg.event_study.allow_custom_windows = true;
        assert!(cfg.validate_windows().is_ok());
    }

    #[test]
    fn factors_only_for_fama_french() {
        let mut cfg = RunConfig::default();
        cfg.inputs.prices = Some("p.csv".into());
        cfg.inputs.events = Some("e.csv".into());
        assert!(cfg.event_study_inputs().is_err());
        cfg.event_study.model = ModelKind::ConstantMean;
        assert_eq!(cfg.event_study_inputs().unwrap().len(), 2);
    }
}
