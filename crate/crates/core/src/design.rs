//! Sampling design algebra for fixed-size designs, Horvitz–Thompson
//! estimation and the complete-data conditional bias.
//!
//! Sums over `k ∈ S` include the diagonal term `k = i`, with `π_ii = π_i`
//! and `Δ_ii = π_i (1 − π_i)`.

use rand::Rng;

use crate::error::{Error, Result};

/// One unit of a finite population.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitRecord {
    pub id: usize,
    /// Survey variable; `None` when missing.
    pub y: Option<f64>,
    /// Fully observed predictors, in the column order of the owning population.
    pub v: Vec<f64>,
    pub r: bool,
}

/// A finite population `U = {0, ..., N-1}` with named predictor columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FinitePopulation {
    pub covariate_names: Vec<String>,
    pub units: Vec<UnitRecord>,
}

impl FinitePopulation {
    pub fn new(covariate_names: Vec<String>, units: Vec<UnitRecord>) -> Result<Self> {
        for (i, u) in units.iter().enumerate() {
            if u.id != i {
                return Err(Error::Spec(format!("unit at position {i} has id {}", u.id)));
            }
            if u.v.len() != covariate_names.len() {
                return Err(Error::Spec(format!(
                    "unit {i} has {} predictors, expected {}",
                    u.v.len(),
                    covariate_names.len()
                )));
            }
            if u.v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Spec(format!("unit {i} has a missing predictor")));
            }
            if u.r && u.y.is_none() {
                return Err(Error::Spec(format!("unit {i} responded but y is missing")));
            }
        }
        Ok(Self {
            covariate_names,
            units,
        })
    }

    /// Builds a fully observed population from y-values alone (no predictors).
    pub fn from_values(y: &[f64]) -> Self {
        let units = y
            .iter()
            .enumerate()
            .map(|(id, &y)| UnitRecord {
                id,
                y: Some(y),
                v: Vec::new(),
                r: true,
            })
            .collect();
        Self {
            covariate_names: Vec::new(),
            units,
        }
    }

    pub fn size(&self) -> usize {
        self.units.len()
    }

    /// `t_y`; fails if any y is missing.
    pub fn total(&self) -> Result<f64> {
        self.units.iter().try_fold(0.0, |acc, u| {
            u.y.map(|y| acc + y)
                .ok_or_else(|| Error::IncompleteData(format!("unit {} has no y", u.id)))
        })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|c| c == name)
    }
}

/// Inclusion-probability algebra of a fixed-size design.
pub trait Design: Send + Sync {
    fn population_size(&self) -> usize;
    fn sample_size(&self) -> usize;
    /// First-order inclusion probability `π_i`.
    fn pi(&self, i: usize) -> f64;
    /// Second-order inclusion probability `π_ik`; `π_ii = π_i`.
    fn pi_joint(&self, i: usize, k: usize) -> f64;

    fn delta(&self, i: usize, k: usize) -> f64 {
        self.pi_joint(i, k) - self.pi(i) * self.pi(k)
    }

    fn weight(&self, i: usize) -> f64 {
        1.0 / self.pi(i)
    }
}

/// Simple random sampling without replacement of `n` units out of `N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SrsworDesign {
    population_size: usize,
    sample_size: usize,
}

impl SrsworDesign {
    pub fn new(population_size: usize, sample_size: usize) -> Result<Self> {
        if sample_size == 0 {
            return Err(Error::InvalidDesign("sample size must be at least 1".into()));
        }
        if sample_size > population_size {
            return Err(Error::InvalidDesign(format!(
                "sample size {sample_size} exceeds population size {population_size}"
            )));
        }
        Ok(Self {
            population_size,
            sample_size,
        })
    }

    pub fn sampling_fraction(&self) -> f64 {
        self.sample_size as f64 / self.population_size as f64
    }
}

impl Design for SrsworDesign {
    fn population_size(&self) -> usize {
        self.population_size
    }

    fn sample_size(&self) -> usize {
        self.sample_size
    }

    fn pi(&self, _i: usize) -> f64 {
        self.sampling_fraction()
    }

    fn pi_joint(&self, i: usize, k: usize) -> f64 {
        if i == k {
            return self.pi(i);
        }
        let (n, big_n) = (self.sample_size as f64, self.population_size as f64);
        if self.population_size == 1 {
            return 1.0;
        }
        n * (n - 1.0) / (big_n * (big_n - 1.0))
    }

    fn weight(&self, _i: usize) -> f64 {
        self.population_size as f64 / self.sample_size as f64
    }
}

/// A realized SRSWOR sample: member ids (population indices) and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub design: SrsworDesign,
    pub members: Vec<usize>,
    pub weights: Vec<f64>,
}

impl Sample {
    pub fn new(design: SrsworDesign, members: Vec<usize>) -> Result<Self> {
        if members.len() != design.sample_size() {
            return Err(Error::InvalidDesign(format!(
                "sample has {} members, design says {}",
                members.len(),
                design.sample_size()
            )));
        }
        let mut sorted = members.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidDesign("duplicate sample member".into()));
        }
        if sorted.last().is_some_and(|&m| m >= design.population_size()) {
            return Err(Error::InvalidDesign("member id outside the population".into()));
        }
        let weights = members.iter().map(|&i| design.weight(i)).collect();
        Ok(Self {
            design,
            members,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn position(&self, id: usize) -> Option<usize> {
        self.members.iter().position(|&m| m == id)
    }
}

/// Draws an SRSWOR sample of size `n` by a partial Fisher–Yates shuffle.
/// Members are returned in draw order.
pub fn draw_srswor<R: Rng + ?Sized>(population_size: usize, n: usize, rng: &mut R) -> Result<Sample> {
    let design = SrsworDesign::new(population_size, n)?;
    let mut idx: Vec<usize> = (0..population_size).collect();
    for j in 0..n {
        let pick = rng.random_range(j..population_size);
        idx.swap(j, pick);
    }
    idx.truncate(n);
    Sample::new(design, idx)
}

/// `Σ_{i∈S} w_i y_i`; `values` are aligned with `sample.members`.
pub fn ht_total(sample: &Sample, values: &[Option<f64>]) -> Result<f64> {
    if values.len() != sample.len() {
        return Err(Error::IncompleteData(format!(
            "{} values for {} sample members",
            values.len(),
            sample.len()
        )));
    }
    sample
        .weights
        .iter()
        .zip(values)
        .zip(&sample.members)
        .try_fold(0.0, |acc, ((w, y), id)| {
            y.map(|y| acc + w * y)
                .ok_or_else(|| Error::IncompleteData(format!("member {id} has no value")))
        })
}

/// `Σ_{i∈S} w_i y_i` for complete values.
pub fn weighted_total(weights: &[f64], values: &[f64]) -> f64 {
    weights.iter().zip(values).map(|(w, y)| w * y).sum()
}

/// Population conditional bias of the HT estimator for unit `i`:
/// `Σ_{k∈U} Δ_ik / (π_i π_k) y_k`.
pub fn cond_bias_ht_population<D: Design>(design: &D, y: &[f64], i: usize) -> Result<f64> {
    if i >= y.len() || y.len() != design.population_size() {
        return Err(Error::NotInSample(i));
    }
    let pi_i = design.pi(i);
    Ok(y.iter()
        .enumerate()
        .map(|(k, &yk)| design.delta(i, k) / (pi_i * design.pi(k)) * yk)
        .sum())
}

/// SRSWOR closed form `((N − n)/n)·(N/(N − 1))·(y_i − ȳ_U)`.
pub fn cond_bias_srswor_closed_form(design: &SrsworDesign, y: &[f64], i: usize) -> f64 {
    let big_n = design.population_size() as f64;
    let n = design.sample_size() as f64;
    if design.population_size() == 1 {
        return 0.0;
    }
    let mean = y.iter().sum::<f64>() / big_n;
    (big_n - n) / n * big_n / (big_n - 1.0) * (y[i] - mean)
}

/// Estimated conditional bias `Σ_{k∈S} Δ_ik / (π_k π_ik) z_k` for every
/// member `i`, for arbitrary per-member values `z` (y for the complete-data
/// case, ψ̂ for the imputed estimator).
pub fn est_cond_bias_all<D: Design>(design: &D, members: &[usize], z: &[f64]) -> Vec<f64> {
    members
        .iter()
        .map(|&i| {
            members
                .iter()
                .zip(z)
                .map(|(&k, &zk)| design.delta(i, k) / (design.pi(k) * design.pi_joint(i, k)) * zk)
                .sum()
        })
        .collect()
}

/// Estimated conditional bias of the HT estimator for member `i`.
pub fn est_cond_bias_ht(sample: &Sample, y: &[f64], i: usize) -> Result<f64> {
    let pos = sample.position(i).ok_or(Error::NotInSample(i))?;
    let all = est_cond_bias_all(&sample.design, &sample.members, y);
    Ok(all[pos])
}

/// Extremes of a set of conditional-bias estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extremes {
    pub min: f64,
    pub max: f64,
    pub argmin: usize,
    pub argmax: usize,
}

impl Extremes {
    pub fn of(values: &[f64]) -> Option<Self> {
        let first = *values.first()?;
        let mut e = Extremes {
            min: first,
            max: first,
            argmin: 0,
            argmax: 0,
        };
        for (j, &b) in values.iter().enumerate().skip(1) {
            if b < e.min {
                e.min = b;
                e.argmin = j;
            }
            if b > e.max {
                e.max = b;
                e.argmax = j;
            }
        }
        Some(e)
    }

    /// The min–max adjustment `(B̂_min + B̂_max) / 2`.
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.min + self.max)
    }
}

/// `t̂_HT − (B̂_min + B̂_max)/2`.
pub fn robust_ht(sample: &Sample, y: &[f64]) -> Result<f64> {
    if sample.is_empty() || y.len() != sample.len() {
        return Err(Error::IncompleteData("one value per member required".into()));
    }
    let t = weighted_total(&sample.weights, y);
    let b = est_cond_bias_all(&sample.design, &sample.members, y);
    let e = Extremes::of(&b).expect("non-empty sample");
    Ok(t - e.midpoint())
}

/// All size-`k` subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut c: Vec<usize> = (0..k).collect();
    loop {
        out.push(c.clone());
        let mut j = k;
        while j > 0 && c[j - 1] == n - k + j - 1 {
            j -= 1;
        }
        if j == 0 {
            return out;
        }
        c[j - 1] += 1;
        for m in j..k {
            c[m] = c[m - 1] + 1;
        }
    }
}
