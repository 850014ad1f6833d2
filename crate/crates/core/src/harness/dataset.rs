use std::io::{Read, Write};

use serde::Serialize;

use crate::bootstrap::{bootstrap_cond_bias, BootstrapConfig};
use crate::calibrate::{calibrate, CalibrationProblem, Distance};
use crate::data::SurveyData;
use crate::design::{FinitePopulation, SrsworDesign};
use crate::error::{Error, Result};
use crate::mr_impute::MrEstimator;
use crate::pipeline::{estimate, Estimate};

const REQUIRED: [&str; 4] = ["id", "w", "r", "y"];
/// Relative spread tolerated in "constant" weights.
const WEIGHT_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct DatasetOptions {
    pub estimator: MrEstimator,
    /// `N`; inferred from constant weights when absent.
    pub population_size: Option<usize>,
    pub calibration: Option<Distance>,
    pub bootstrap: Option<BootstrapConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapSummary {
    pub replicates: usize,
    pub dropped: usize,
    pub unreached_ids: Vec<usize>,
    pub robust_total: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub n: usize,
    pub respondents: usize,
    pub population_size: usize,
    pub total: f64,
    pub robust_total: f64,
    pub b_min: f64,
    pub b_min_id: usize,
    pub b_max: f64,
    pub b_max_id: usize,
    pub tau: Option<[f64; 2]>,
    pub clamped_units: usize,
    pub bootstrap: Option<BootstrapSummary>,
    /// Imputed total after calibration (equals `robust_total` to tolerance).
    pub calibrated_total: Option<f64>,
}

/// Dataset-mode result: the parsed data, the estimate and its summary.
#[derive(Debug, Clone)]
pub struct DatasetOutput {
    pub data: SurveyData,
    pub estimate: Estimate,
    pub summary: DatasetSummary,
}

fn row_err(line: u64, msg: impl std::fmt::Display) -> Error {
    Error::Input(format!("row {line}: {msg}"))
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Some(true),
        "0" | "false" | "no" => Some(false),
        _ => None,
    }
}

/// Reads `id, w, r, y` plus the named predictor columns. Returns the data,
/// the header row and the raw records.
pub fn read_survey_csv<R: Read>(input: R, predictors: &[String]) -> Result<(SurveyData, csv::StringRecord, Vec<csv::StringRecord>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers().map_err(|e| Error::Input(format!("header: {e}")))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Input(format!("missing column '{name}'")))
    };
    let [c_id, c_w, c_r, c_y] = [col(REQUIRED[0])?, col(REQUIRED[1])?, col(REQUIRED[2])?, col(REQUIRED[3])?];
    let c_v: Vec<usize> = predictors.iter().map(|p| col(p)).collect::<Result<_>>()?;

    let (mut ids, mut w, mut r, mut y, mut v) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut records = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            row_err(line, e)
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |c: usize| rec.get(c).unwrap_or("");
        let num = |c: usize, name: &str| -> Result<f64> {
            let s = field(c);
            if s.is_empty() {
                return Err(row_err(line, format!("blank '{name}'")));
            }
            s.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| row_err(line, format!("'{name}' is not a number: '{s}'")))
        };
        ids.push(
            field(c_id)
                .parse::<usize>()
                .map_err(|_| row_err(line, format!("id '{}' is not a non-negative integer", field(c_id))))?,
        );
        let wi = num(c_w, "w")?;
        if wi <= 0.0 {
            return Err(row_err(line, "weight must be positive"));
        }
        w.push(wi);
        let ri = parse_bool(field(c_r)).ok_or_else(|| row_err(line, format!("r must be 0 or 1, got '{}'", field(c_r))))?;
        r.push(ri);
        y.push(if ri { Some(num(c_y, "y")?) } else { None });
        v.push(
            c_v.iter()
                .zip(predictors)
                .map(|(&c, name)| num(c, name))
                .collect::<Result<Vec<_>>>()?,
        );
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::Input("no data rows".into()));
    }
    let mut sorted = ids.clone();
    sorted.sort_unstable();
    if let Some(d) = sorted.windows(2).find(|p| p[0] == p[1]) {
        return Err(Error::Input(format!("duplicate id {}", d[0])));
    }
    let data = SurveyData::new(ids, w, r, y, predictors.to_vec(), v)?;
    Ok((data, headers, records))
}

/// `N` from the weights when they are constant, else from `given`.
fn population_size(data: &SurveyData, given: Option<usize>) -> Result<usize> {
    if let Some(n_pop) = given {
        return Ok(n_pop);
    }
    let w0 = data.weights[0];
    if let Some(i) = data.weights.iter().position(|w| (w - w0).abs() > WEIGHT_TOL * w0) {
        return Err(Error::Input(format!(
            "weights are not constant (row {} differs) and no population size was given",
            i + 2
        )));
    }
    let implied = w0 * data.len() as f64;
    let n_pop = implied.round();
    if (implied - n_pop).abs() > 1e-6 * n_pop.max(1.0) {
        return Err(Error::Input(format!("weights imply a non-integer population size {implied}")));
    }
    Ok(n_pop as usize)
}

fn fmt(x: f64) -> String {
    format!("{x}")
}

/// Runs the full pipeline on parsed data.
pub fn estimate_dataset(data: SurveyData, options: &DatasetOptions) -> Result<(DatasetOutput, Option<Vec<Option<f64>>>, Option<Vec<f64>>)> {
    let n_pop = population_size(&data, options.population_size)?;
    let design = SrsworDesign::new(n_pop, data.len())?;
    let est = estimate(&data, &design, &options.estimator)?;
    let e = est.cond_bias.extremes;

    let boot = match &options.bootstrap {
        None => None,
        Some(cfg) => Some(bootstrap_cond_bias(&data, &est.imputation.completed(&data), &options.estimator, cfg)?),
    };
    let calibrated = match options.calibration {
        None => None,
        Some(d) => {
            let p = CalibrationProblem::from_imputation(&data, &est.imputation, est.robust_total)?;
            let vals = calibrate(&p, d)?;
            let mut it = vals.into_iter();
            let full: Vec<f64> = (0..data.len())
                .map(|i| data.y[i].unwrap_or_else(|| it.next().expect("one value per nonrespondent")))
                .collect();
            Some(full)
        }
    };
    let summary = DatasetSummary {
        n: data.len(),
        respondents: data.respondent_count(),
        population_size: n_pop,
        total: est.total,
        robust_total: est.robust_total,
        b_min: e.min,
        b_min_id: data.ids[e.argmin],
        b_max: e.max,
        b_max_id: data.ids[e.argmax],
        tau: est.imputation.tau,
        clamped_units: est.imputation.suite.as_ref().map_or(0, |s| s.clamp_count()),
        bootstrap: boot.as_ref().map(|b| BootstrapSummary {
            replicates: b.replicates.len() + b.dropped,
            dropped: b.dropped,
            unreached_ids: b.unreached().into_iter().map(|i| data.ids[i]).collect(),
            robust_total: b.midpoint().map(|m| est.total - m),
        }),
        calibrated_total: calibrated.as_ref().map(|v| crate::design::weighted_total(&data.weights, v)),
    };
    let boot_values = boot.map(|b| b.cond_bias);
    Ok((
        DatasetOutput {
            data,
            estimate: est,
            summary,
        },
        boot_values,
        calibrated,
    ))
}

/// Reads a survey CSV, imputes, and writes the input columns plus
/// `y_imputed`, `psi_hat`, `cond_bias` (and `cond_bias_boot`, `y_final`
/// when requested).
pub fn impute_dataset<R: Read, W: Write>(input: R, output: W, options: &DatasetOptions) -> Result<DatasetOutput> {
    let mut predictors: Vec<String> = Vec::new();
    let sets = options
        .estimator
        .nonresponse
        .iter()
        .map(|m| &m.predictors)
        .chain(options.estimator.imputation.iter().map(|m| &m.predictors));
    for p in sets {
        for c in p.columns() {
            if !predictors.iter().any(|x| x == c) {
                predictors.push(c.to_string());
            }
        }
    }
    let (data, headers, records) = read_survey_csv(input, &predictors)?;
    let (out, boot, calibrated) = estimate_dataset(data, options)?;

    let io = |e: csv::Error| Error::Io(e.to_string());
    let mut w = csv::Writer::from_writer(output);
    let mut head: Vec<String> = headers.iter().map(str::to_string).collect();
    head.extend(["y_imputed", "psi_hat", "cond_bias"].map(String::from));
    if boot.is_some() {
        head.push("cond_bias_boot".into());
    }
    if calibrated.is_some() {
        head.push("y_final".into());
    }
    w.write_record(&head).map_err(io)?;
    let completed = out.estimate.imputation.completed(&out.data);
    for (i, rec) in records.iter().enumerate() {
        let mut row: Vec<String> = rec.iter().map(str::to_string).collect();
        row.resize(headers.len(), String::new());
        row.push(fmt(completed[i]));
        row.push(fmt(out.estimate.psi.psi[i]));
        row.push(fmt(out.estimate.cond_bias.values[i]));
        if let Some(b) = &boot {
            row.push(b[i].map(fmt).unwrap_or_default());
        }
        if let Some(c) = &calibrated {
            row.push(fmt(c[i]));
        }
        w.write_record(&row).map_err(io)?;
    }
    w.flush()?;
    Ok(out)
}

/// Writes `id, w, r, y, <predictors>`; `y` is blank for nonrespondents.
pub fn write_survey_csv<W: Write>(data: &SurveyData, output: W) -> Result<()> {
    let io = |e: csv::Error| Error::Io(e.to_string());
    let mut w = csv::Writer::from_writer(output);
    let mut head: Vec<String> = REQUIRED.iter().map(|s| s.to_string()).collect();
    head.extend(data.covariate_names.iter().cloned());
    w.write_record(&head).map_err(io)?;
    for i in 0..data.len() {
        let mut row = vec![
            data.ids[i].to_string(),
            fmt(data.weights[i]),
            (data.responded[i] as u8).to_string(),
            data.y[i].map(fmt).unwrap_or_default(),
        ];
        row.extend(data.covariates[i].iter().map(|&x| fmt(x)));
        w.write_record(&row).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `id, <covariates>, y`.
pub fn write_population_csv<W: Write>(pop: &FinitePopulation, output: W) -> Result<()> {
    let io = |e: csv::Error| Error::Io(e.to_string());
    let mut w = csv::Writer::from_writer(output);
    let mut head = vec!["id".to_string()];
    head.extend(pop.covariate_names.iter().cloned());
    head.push("y".into());
    w.write_record(&head).map_err(io)?;
    for u in &pop.units {
        let mut row = vec![u.id.to_string()];
        row.extend(u.v.iter().map(|&x| fmt(x)));
        row.push(u.y.map(fmt).unwrap_or_default());
        w.write_record(&row).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Calibrates the `y_star` column of an `id, w, r, y, y_star[, q]` table to
/// `target` and appends `y_star_final` (observed `y` for respondents).
pub fn calibrate_csv<R: Read, W: Write>(input: R, output: W, target: f64, distance: Distance) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers().map_err(|e| Error::Input(format!("header: {e}")))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| col(name).ok_or_else(|| Error::Input(format!("missing column '{name}'")));
    let (c_w, c_r, c_y, c_star) = (need("w")?, need("r")?, need("y")?, need("y_star")?);
    need("id")?;
    let c_q = col("q");

    let mut records = Vec::new();
    let mut respondent_total = 0.0;
    let (mut rows, mut pre, mut w, mut q) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut observed = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| row_err(e.position().map_or(0, |p| p.line()), e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |c: usize, name: &str| -> Result<f64> {
            let s = rec.get(c).unwrap_or("");
            s.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| row_err(line, format!("'{name}' is not a number: '{s}'")))
        };
        let wi = num(c_w, "w")?;
        let r = parse_bool(rec.get(c_r).unwrap_or("")).ok_or_else(|| row_err(line, "r must be 0 or 1"))?;
        if r {
            let y = num(c_y, "y")?;
            respondent_total += wi * y;
            observed.push(Some(y));
        } else {
            rows.push(records.len());
            pre.push(num(c_star, "y_star")?);
            w.push(wi);
            q.push(match c_q {
                Some(c) if !rec.get(c).unwrap_or("").is_empty() => num(c, "q")?,
                _ => 1.0,
            });
            observed.push(None);
        }
        records.push(rec);
    }
    let problem = CalibrationProblem::new(pre, w, Some(q), respondent_total, target)?;
    let mut finals = calibrate(&problem, distance)?.into_iter();
    let values: Vec<f64> = observed
        .iter()
        .map(|o| o.unwrap_or_else(|| finals.next().expect("one value per nonrespondent")))
        .collect();

    let io = |e: csv::Error| Error::Io(e.to_string());
    let mut out = csv::Writer::from_writer(output);
    let mut head: Vec<String> = headers.iter().map(str::to_string).collect();
    head.push("y_star_final".into());
    out.write_record(&head).map_err(io)?;
    for (rec, v) in records.iter().zip(&values) {
        let mut row: Vec<String> = rec.iter().map(str::to_string).collect();
        row.resize(headers.len(), String::new());
        row.push(fmt(*v));
        out.write_record(&row).map_err(io)?;
    }
    out.flush()?;
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ImputationModelSpec, PredictorSet};

    fn options() -> DatasetOptions {
        DatasetOptions {
            estimator: MrEstimator::new(vec![], vec![ImputationModelSpec::new(PredictorSet::parse(&["1", "x"]).unwrap())]).unwrap(),
            population_size: None,
            calibration: None,
            bootstrap: None,
        }
    }

    const FULL: &str = "id,w,r,y,x\n1,10,1,2.5,1\n2,10,1,3.5,2\n3,10,1,9,3\n";

    #[test]
    fn full_response_passes_y_through() {
        let mut out = Vec::new();
        let res = impute_dataset(FULL.as_bytes(), &mut out, &options()).unwrap();
        assert_eq!(res.summary.total, 150.0);
        assert_eq!(res.summary.population_size, 30);
        let text = String::from_utf8(out).unwrap();
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        for rec in rdr.records() {
            let rec = rec.unwrap();
            assert_eq!(rec[3].parse::<f64>().unwrap(), rec[5].parse::<f64>().unwrap());
        }
    }

    #[test]
    fn calibrates_a_table() {
        let table = "id,w,r,y,y_star\n1,2,1,5,\n2,2,0,,1\n3,2,0,,2\n4,2,0,,3\n";
        let mut out = Vec::new();
        let v = calibrate_csv(table.as_bytes(), &mut out, 10.0 + 12.0 - 1.2, Distance::ChiSquare).unwrap();
        for (a, b) in v.iter().zip([5.0, 0.9, 1.8, 2.7]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(String::from_utf8(out).unwrap().starts_with("id,w,r,y,y_star,y_star_final"));
    }

    #[test]
    fn blank_predictor_names_the_row() {
        let bad = "id,w,r,y,x\n1,10,1,2.5,1\n2,10,0,,\n";
        match impute_dataset(bad.as_bytes(), Vec::new(), &options()) {
            Err(Error::Input(m)) => assert!(m.contains("row 3") && m.contains("'x'"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn input_contract() {
        let missing = "id,w,r,x\n1,10,1,1\n";
        assert!(matches!(impute_dataset(missing.as_bytes(), Vec::new(), &options()), Err(Error::Input(_))));
        let uneven = "id,w,r,y,x\n1,10,1,2.5,1\n2,12,1,3.5,2\n";
        assert!(matches!(impute_dataset(uneven.as_bytes(), Vec::new(), &options()), Err(Error::Input(_))));
        let mut opts = options();
        opts.population_size = Some(40);
        assert!(impute_dataset(uneven.as_bytes(), Vec::new(), &opts).is_ok());
        let bad_r = "id,w,r,y,x\n1,10,maybe,2.5,1\n";
        assert!(matches!(impute_dataset(bad_r.as_bytes(), Vec::new(), &options()), Err(Error::Input(m)) if m.contains("row 2")));
        let no_y = "id,w,r,y,x\n1,10,1,,1\n";
        assert!(matches!(impute_dataset(no_y.as_bytes(), Vec::new(), &options()), Err(Error::Input(_))));
    }
}
