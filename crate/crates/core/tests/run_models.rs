use chrono::{Days, NaiveDate};
use finsent::event_study::CarValue;
use finsent::regression::{run_models, write_cell_results, write_r2_grid, BootstrapConfig, Estimator, RegressionConfig};
use finsent::sentiment_features::{
    Aspect, Controls, DocumentFeatureVector, IndustryCode, ModelId, ParagraphAnnotation, Sentiment, SourceSection,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn features(n: usize, seed: u64, skip_aspect: Option<Aspect>) -> Vec<DocumentFeatureVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = NaiveDate::from_ymd_opt(2022, 5, 2).unwrap();
    (0..n)
        .map(|i| {
            let firm = format!("F{i:03}");
            let paragraphs: Vec<ParagraphAnnotation> = (0..rng.random_range(15..45))
                .filter_map(|_| {
                    let aspect = Aspect::ALL[rng.random_range(0..16)];
                    let sentiment = Sentiment::ALL[rng.random_range(0..3)];
                    let source = SourceSection::ALL[rng.random_range(0..3)];
                    (Some(aspect) != skip_aspect).then(|| ParagraphAnnotation {
                        firm_id: firm.clone(),
                        report_year: 2021,
                        source,
                        pairs: vec![(aspect, sentiment)],
                    })
                })
                .collect();
            let controls = Controls {
                firm_size: rng.random_range(20.0..24.0),
                tobins_q: rng.random_range(-1.0..1.0),
                roa: rng.random_range(-0.05..0.15),
                leverage: rng.random_range(0.1..0.9),
                volatility: rng.random_range(0.01..0.05),
            };
            DocumentFeatureVector::from_document(firm, base + Days::new(i as u64), &paragraphs, controls, IndustryCode::ALL[i % 8])
                .unwrap()
        })
        .collect()
}

fn cars(features: &[DocumentFeatureVector], f: impl Fn(&DocumentFeatureVector) -> f64) -> Vec<CarValue> {
    features
        .iter()
        .flat_map(|fv| {
            [1, 3, 5].map(|w| CarValue {
                firm_id: fv.firm_id.clone(),
                event_date: fv.event_date,
                window: w,
                car: f(fv),
            })
        })
        .collect()
}

fn config(estimators: Vec<Estimator>) -> RegressionConfig {
    RegressionConfig {
        estimators,
        bootstrap: BootstrapConfig { resamples: 50, seed: 3 },
        ..RegressionConfig::default()
    }
}

#[test]
fn zero_noise_gives_perfect_fit() {
    let fv = features(120, 1, None);
    let slot = Aspect::ProfitLoss.index() * 3;
    let c = cars(&fv, |f| 0.01 - 0.003 * f.aspect_sentiment.counts[slot] as f64 + 0.02 * f.controls.roa);
    let results = run_models(&fv, &c, &config(vec![Estimator::Ols]));
    assert!(results.failures.is_empty(), "{:?}", results.failures);
    let cell = results.cell(ModelId::new(5).unwrap(), 3, Estimator::Ols).unwrap();
    assert!((cell.r_squared - 1.0).abs() < 1e-10);
    let pl = cell.term("Profit/Loss.Negative").unwrap();
    assert!((pl.coefficient.unwrap() + 0.003).abs() < 1e-10);
}

#[test]
fn all_zero_response() {
    let fv = features(120, 2, None);
    let c = cars(&fv, |_| 0.0);
    let results = run_models(&fv, &c, &config(vec![Estimator::Ols, Estimator::Ridge]));
    assert!(results.failures.is_empty(), "{:?}", results.failures);
    assert_eq!(results.cells.len(), 5 * 3 * 2);
    for cell in &results.cells {
        assert_eq!(cell.r_squared, 0.0);
        for t in &cell.terms {
            assert!(t.coefficient.unwrap().abs() < 1e-12, "{} {}", cell.model, t.term);
        }
    }
}

#[test]
fn constant_columns_are_reported_not_fitted() {
    let fv = features(120, 3, Some(Aspect::Rating));
    let c = cars(&fv, |f| f.controls.leverage * 0.01 + (f.firm_id.len() as f64) * 1e-4 + f.controls.roa);
    let results = run_models(&fv, &c, &config(vec![Estimator::Ols]));
    let cell = results.cell(ModelId::new(5).unwrap(), 1, Estimator::Ols).unwrap();
    assert_eq!(cell.terms.len(), 61);
    assert_eq!(cell.dropped_columns, ["Rating.Negative", "Rating.Neutral", "Rating.Positive"]);
    let rating = cell.term("Rating.Neutral").unwrap();
    assert_eq!(rating.coefficient, None);
    assert_eq!(rating.flag_str(), "NA");

    let mut buf = Vec::new();
    write_cell_results(&mut buf, [cell]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.lines().any(|l| l == "Rating.Neutral,1,ols,NA,NA,NA"));
    let grid = results.r2_grid(ModelId::new(5).unwrap(), &[5, 3, 1]);
    let mut buf = Vec::new();
    write_r2_grid(&mut buf, &grid).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().nth(1).unwrap().ends_with(",NA"));
}

#[test]
fn rank_deficient_cell_fails_alone() {
    // fewer rows than Model 5 columns: Model 5 fails, smaller models still fit
    let fv = features(40, 4, None);
    let c = cars(&fv, |f| f.controls.roa);
    let results = run_models(&fv, &c, &config(vec![Estimator::Ols]));
    assert!(results.failures.iter().all(|f| f.model == ModelId::new(5).unwrap()));
    assert_eq!(results.failures.len(), 3);
    assert!(results.cell(ModelId::new(1).unwrap(), 3, Estimator::Ols).is_some());
}
