//! Dataset mode (CSV in, CSV out) agrees bit for bit with library mode.

use mrimpute::bootstrap::{bootstrap_cond_bias, BootstrapConfig};
use mrimpute::calibrate::{calibrate, CalibrationProblem, Distance};
use mrimpute::harness::{impute_dataset, read_survey_csv, simulated_sample, write_survey_csv, DatasetOptions};
use mrimpute::prelude::*;
use mrimpute::simgen::{gen_population, Family, PopulationSpec};

fn ps(items: &[&str]) -> PredictorSet {
    PredictorSet::parse(items).unwrap()
}

fn column(csv_text: &str, name: &str) -> Vec<String> {
    let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
    let idx = rdr.headers().unwrap().iter().position(|h| h == name).unwrap();
    rdr.records().map(|r| r.unwrap()[idx].to_string()).collect()
}

fn check(family: Family, beta: [f64; 3], estimator: MrEstimator, seed: u64) {
    let spec = PopulationSpec::new(2000, family, beta);
    let pop = gen_population(&spec, seed, 0).unwrap();
    let data = simulated_sample(&pop, 80, seed, 0).unwrap();

    let mut csv_in = Vec::new();
    write_survey_csv(&data, &mut csv_in).unwrap();
    let names: Vec<String> = data.covariate_names.clone();
    let (parsed, _, _) = read_survey_csv(csv_in.as_slice(), &names).unwrap();
    assert_eq!(parsed, data, "CSV round trip changed the data");

    let boot = BootstrapConfig::new(60, seed);
    let options = DatasetOptions {
        estimator: estimator.clone(),
        population_size: Some(pop.size()),
        calibration: Some(Distance::ChiSquare),
        bootstrap: Some(boot),
    };
    let mut csv_out = Vec::new();
    let out = impute_dataset(csv_in.as_slice(), &mut csv_out, &options).unwrap();
    let text = String::from_utf8(csv_out).unwrap();

    let design = SrsworDesign::new(pop.size(), data.len()).unwrap();
    let lib = estimate(&data, &design, &estimator).unwrap();
    assert_eq!(out.estimate, lib);
    assert_eq!(out.summary.total.to_bits(), lib.total.to_bits());
    assert_eq!(out.summary.robust_total.to_bits(), lib.robust_total.to_bits());

    let psi: Vec<f64> = column(&text, "psi_hat").iter().map(|s| s.parse().unwrap()).collect();
    assert_eq!(psi, lib.psi.psi);
    let cb: Vec<f64> = column(&text, "cond_bias").iter().map(|s| s.parse().unwrap()).collect();
    assert_eq!(cb, lib.cond_bias.values);

    let completed = lib.imputation.completed(&data);
    let dist = bootstrap_cond_bias(&data, &completed, &estimator, &boot).unwrap();
    let from_csv: Vec<Option<f64>> = column(&text, "cond_bias_boot")
        .iter()
        .map(|s| (!s.is_empty()).then(|| s.parse().unwrap()))
        .collect();
    assert_eq!(from_csv, dist.cond_bias);

    let problem = CalibrationProblem::from_imputation(&data, &lib.imputation, lib.robust_total).unwrap();
    let mut cal = calibrate(&problem, Distance::ChiSquare).unwrap().into_iter();
    let expected: Vec<f64> = (0..data.len()).map(|i| data.y[i].unwrap_or_else(|| cal.next().unwrap())).collect();
    let y_final: Vec<f64> = column(&text, "y_final").iter().map(|s| s.parse().unwrap()).collect();
    assert_eq!(y_final, expected);
}

#[test]
fn single_imputation_model() {
    let est = MrEstimator::new(Vec::new(), vec![ImputationModelSpec::new(ps(&["1", "v1", "v1^2"]))]).unwrap();
    check(Family::Normal, [10.0, 10.0, 10.0], est, 11);
}

#[test]
fn doubly_robust() {
    let est = MrEstimator::new(
        vec![NonresponseModelSpec::new(ps(&["1", "v1", "v2"]))],
        vec![ImputationModelSpec::new(ps(&["1", "v1", "v1^2"]))],
    )
    .unwrap();
    check(Family::Lognormal, [1.0, 2.3, 0.2], est, 12);
}

#[test]
fn multiply_robust() {
    let est = MrEstimator::new(
        vec![
            NonresponseModelSpec::new(ps(&["1", "v1", "v1^2"])),
            NonresponseModelSpec::new(ps(&["1", "v1", "v2"])),
        ],
        vec![
            ImputationModelSpec::new(ps(&["1", "v1", "v1^2"])),
            ImputationModelSpec::new(ps(&["1", "v1", "v2"])),
        ],
    )
    .unwrap();
    check(Family::Normal, [10.0, 10.0, 10.0], est, 13);
}
