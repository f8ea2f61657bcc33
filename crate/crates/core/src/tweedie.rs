//! Tweedie random variates and the simulation scenario generator.
//!
//! A Tweedie variable has `E(Y) = mu` and `Var(Y) = phi * mu^xi`. The
//! supported power parameters are `xi = 0` (normal), `xi = 1` (Poisson,
//! scaled by `phi` when overdispersed), `1 < xi < 2` (compound
//! Poisson-gamma) and `xi = 2` (gamma).

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::rng;

#[derive(Debug, Error, PartialEq)]
pub enum TweedieError {
    #[error("Poisson rate must be finite and >= 0, got {0}")]
    BadRate(f64),
    #[error("gamma shape and scale must be finite and > 0, got shape {shape}, scale {scale}")]
    BadGamma { shape: f64, scale: f64 },
    #[error("unsupported Tweedie power {0}; expected 0 or a value in [1, 2]")]
    UnsupportedPower(f64),
    #[error("dispersion must be finite and > 0, got {0}")]
    BadDispersion(f64),
    #[error("mean must be finite{}, got {mu}", if *.positive { " and > 0" } else { "" })]
    BadMean { mu: f64, positive: bool },
    #[error("non-finite predictor value")]
    NonFinite,
    #[error("invalid scenario: {0}")]
    BadScenario(String),
}

pub type Result<T, E = TweedieError> = std::result::Result<T, E>;

/// Below this rate Poisson variates come from sequential inversion.
const POISSON_INVERSION_LIMIT: f64 = 10.0;

/// Draws a Poisson(`lambda`) variate.
///
/// Sequential inversion for small rates; Hörmann's transformed rejection
/// with squeeze (PTRS) above [`POISSON_INVERSION_LIMIT`].
pub fn sample_poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> Result<u64> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(TweedieError::BadRate(lambda));
    }
    if lambda == 0.0 {
        return Ok(0);
    }
    if lambda < POISSON_INVERSION_LIMIT {
        Ok(poisson_inversion(lambda, rng))
    } else {
        Ok(poisson_ptrs(lambda, rng))
    }
}

fn poisson_inversion<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    let u: f64 = rng.random();
    let mut k = 0u64;
    let mut p = (-lambda).exp();
    let mut cdf = p;
    while u > cdf {
        k += 1;
        p *= lambda / k as f64;
        let next = cdf + p;
        if next == cdf {
            // tail underflow; u sits in the last representable sliver
            break;
        }
        cdf = next;
    }
    k
}

fn poisson_ptrs<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    let slam = lambda.sqrt();
    let loglam = lambda.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let v_r = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + lambda + 0.43).floor();
        if us >= 0.07 && v <= v_r {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        if v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln()
            <= -lambda + k * loglam - ln_factorial(k as u64)
        {
            return k as u64;
        }
    }
}

/// `ln(k!)`: exact summation for small `k`, Stirling series beyond.
pub fn ln_factorial(k: u64) -> f64 {
    if k < 30 {
        return (2..=k).map(|i| (i as f64).ln()).sum();
    }
    let n = k as f64;
    let inv = 1.0 / n;
    let inv2 = inv * inv;
    n * n.ln() - n + 0.5 * (2.0 * PI * n).ln()
        + inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 / 1680.0)))
}

/// Draws a Gamma variate with the given shape and scale (mean
/// `shape * scale`), using Marsaglia and Tsang's squeeze method. Shapes below
/// one are boosted by `U^(1/shape)`.
pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> Result<f64> {
    if !(shape.is_finite() && scale.is_finite() && shape > 0.0 && scale > 0.0) {
        return Err(TweedieError::BadGamma { shape, scale });
    }
    loop {
        let x = gamma_unit(shape, rng) * scale;
        // a tiny shape can underflow to exactly zero; the support is (0, inf)
        if x > 0.0 {
            return Ok(x);
        }
    }
}

fn gamma_unit<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape < 1.0 {
        let boost = rng.random::<f64>().powf(1.0 / shape);
        return gamma_unit(shape + 1.0, rng) * boost;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let (x, v) = loop {
            let x: f64 = rng.sample(StandardNormal);
            let v = 1.0 + c * x;
            if v > 0.0 {
                break (x, v * v * v);
            }
        };
        let u: f64 = rng.random();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// Power parameter, dispersion and mean of a Tweedie distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TweedieParams {
    pub xi: f64,
    pub phi: f64,
    pub mu: f64,
}

impl TweedieParams {
    pub fn new(xi: f64, phi: f64, mu: f64) -> Result<Self> {
        if !(xi == 0.0 || (1.0..=2.0).contains(&xi)) {
            return Err(TweedieError::UnsupportedPower(xi));
        }
        if !(phi.is_finite() && phi > 0.0) {
            return Err(TweedieError::BadDispersion(phi));
        }
        let positive = xi != 0.0;
        if !mu.is_finite() || (positive && mu <= 0.0) {
            return Err(TweedieError::BadMean { mu, positive });
        }
        Ok(Self { xi, phi, mu })
    }

    pub fn variance(&self) -> f64 {
        if self.xi == 0.0 {
            self.phi
        } else {
            self.phi * self.mu.powf(self.xi)
        }
    }

    /// Poisson rate, gamma shape and gamma scale of the compound
    /// representation; `None` outside `1 < xi < 2`.
    pub fn compound(&self) -> Option<CompoundPoissonGamma> {
        let xi = self.xi;
        (xi > 1.0 && xi < 2.0).then(|| CompoundPoissonGamma {
            lambda: self.mu.powf(2.0 - xi) / (self.phi * (2.0 - xi)),
            alpha: (2.0 - xi) / (xi - 1.0),
            theta: self.phi * (xi - 1.0) * self.mu.powf(xi - 1.0),
        })
    }

    /// `P(Y = 0)`: `exp(-lambda)` for compound and Poisson cases, zero for
    /// the continuous ones.
    pub fn zero_mass(&self) -> f64 {
        if let Some(c) = self.compound() {
            (-c.lambda).exp()
        } else if self.xi == 1.0 {
            (-self.mu / self.phi).exp()
        } else {
            0.0
        }
    }
}

/// `Y = G_1 + ... + G_N` with `N ~ Poisson(lambda)`, `G_i ~ Gamma(alpha, theta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompoundPoissonGamma {
    pub lambda: f64,
    pub alpha: f64,
    pub theta: f64,
}

/// Draws one Tweedie variate.
pub fn sample_tweedie<R: Rng + ?Sized>(p: &TweedieParams, rng: &mut R) -> Result<f64> {
    let TweedieParams { xi, phi, mu } = *p;
    if xi == 0.0 {
        let z: f64 = rng.sample(StandardNormal);
        return Ok(mu + phi.sqrt() * z);
    }
    if xi == 1.0 {
        // phi-scaled Poisson keeps Var = phi * mu
        let n = sample_poisson(mu / phi, rng)?;
        return Ok(phi * n as f64);
    }
    if xi == 2.0 {
        return sample_gamma(1.0 / phi, phi * mu, rng);
    }
    match p.compound() {
        Some(c) => {
            let n = sample_poisson(c.lambda, rng)?;
            let mut y = 0.0;
            for _ in 0..n {
                y += sample_gamma(c.alpha, c.theta, rng)?;
            }
            Ok(y)
        }
        None => Err(TweedieError::UnsupportedPower(xi)),
    }
}

/// How the four true predictors enter the log-mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relationship {
    Linear,
    Nonlinear,
    Mixed,
}

impl Relationship {
    pub const ALL: [Relationship; 3] = [Relationship::Linear, Relationship::Nonlinear, Relationship::Mixed];

    pub fn as_str(self) -> &'static str {
        match self {
            Relationship::Linear => "linear",
            Relationship::Nonlinear => "nonlinear",
            Relationship::Mixed => "mixed",
        }
    }

    /// The log-mean formula, for report metadata.
    pub fn formula(self) -> &'static str {
        match self {
            Relationship::Linear => "eta = 0.25 + 0.35*(x1 + x2 - x3 + x4)",
            Relationship::Nonlinear => {
                "eta = 0.25 + 0.6*sin(pi*x1) + 0.5*cos(pi*x2) + 0.4*x3^2/(1+x3^2) + 0.3*tanh(x4)"
            }
            Relationship::Mixed => "eta = 0.25 + 0.35*x1 + 0.35*x2 + 0.6*sin(pi*x3) + 0.4*tanh(x4)",
        }
    }
}

impl std::str::FromStr for Relationship {
    type Err = TweedieError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear" => Ok(Relationship::Linear),
            "nonlinear" => Ok(Relationship::Nonlinear),
            "mixed" => Ok(Relationship::Mixed),
            other => Err(TweedieError::BadScenario(format!("unknown relationship {other:?}"))),
        }
    }
}

impl std::fmt::Display for Relationship {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Log-link linear predictor for the four true predictors.
pub fn log_mean(relationship: Relationship, x: &[f64; 4]) -> Result<f64> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(TweedieError::NonFinite);
    }
    let [x1, x2, x3, x4] = *x;
    let eta = match relationship {
        Relationship::Linear => 0.25 + 0.35 * (x1 + x2 - x3 + x4),
        Relationship::Nonlinear => {
            0.25 + 0.6 * (PI * x1).sin()
                + 0.5 * (PI * x2).cos()
                + 0.4 * x3 * x3 / (1.0 + x3 * x3)
                + 0.3 * x4.tanh()
        }
        Relationship::Mixed => {
            0.25 + 0.35 * x1 + 0.35 * x2 + 0.6 * (PI * x3).sin() + 0.4 * x4.tanh()
        }
    };
    Ok(eta)
}

/// `mu = exp(eta)`.
pub fn mean_function(relationship: Relationship, x: &[f64; 4]) -> Result<f64> {
    log_mean(relationship, x).map(f64::exp)
}

pub const N_TRUE: usize = 4;
pub const OUTCOME_NOISE_TRIALS: u32 = 5;
pub const OUTCOME_NOISE_P: f64 = 0.1;

/// One simulated data-generating process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub relationship: Relationship,
    pub xi: f64,
    pub phi: f64,
    pub n_rows: usize,
    pub n_noise: usize,
}

impl SimScenario {
    pub fn validate(&self) -> Result<()> {
        TweedieParams::new(self.xi, self.phi, 1.0)?;
        if self.xi == 0.0 {
            // the outcome would not be a Tweedie count/positive variable
            return Err(TweedieError::BadScenario("simulation requires xi in [1, 2]".into()));
        }
        if self.n_rows < 2 {
            return Err(TweedieError::BadScenario(format!("n_rows = {} < 2", self.n_rows)));
        }
        Ok(())
    }

    pub fn n_features(&self) -> usize {
        N_TRUE + self.n_noise
    }

    pub fn label(&self) -> String {
        format!(
            "{}/xi={}/phi={}/n={}/noise={}",
            self.relationship, self.xi, self.phi, self.n_rows, self.n_noise
        )
    }
}

/// Binomial(5, 0.1) outcome noise.
pub fn sample_outcome_noise<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    (0..OUTCOME_NOISE_TRIALS)
        .filter(|_| rng.random::<f64>() < OUTCOME_NOISE_P)
        .count() as f64
}

/// Generates the dataset for `s`: iid standard normal predictors (four true
/// ones first, then the noise columns) and a Tweedie outcome plus Binomial
/// noise. Deterministic in `seed`.
pub fn generate_sim_dataset(s: &SimScenario, seed: u64) -> Result<Dataset> {
    s.validate()?;
    let p = s.n_features();
    let mut stream = rng::stream(seed);
    let mut features = Vec::with_capacity(s.n_rows * p);
    let mut target = Vec::with_capacity(s.n_rows);
    for _ in 0..s.n_rows {
        let start = features.len();
        for _ in 0..p {
            features.push(stream.sample::<f64, _>(StandardNormal));
        }
        let x: [f64; 4] = features[start..start + N_TRUE].try_into().expect("four true predictors");
        let mu = mean_function(s.relationship, &x)?;
        let y = sample_tweedie(&TweedieParams::new(s.xi, s.phi, mu)?, &mut stream)?;
        target.push(y + sample_outcome_noise(&mut stream));
    }
    let names = (1..=N_TRUE)
        .map(|j| format!("true{j}"))
        .chain((1..=s.n_noise).map(|j| format!("noise{j}")))
        .collect();
    Dataset::from_flat(features, p, target, names, "y")
        .map_err(|e| TweedieError::BadScenario(e.to_string()))
}
