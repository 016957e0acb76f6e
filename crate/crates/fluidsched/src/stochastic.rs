//! Unpunctuality and service-time distributions.
//!
//! Unpunctuality is the signed gap between a patient's actual arrival and
//! their scheduled time (negative = early). Its distribution may depend on
//! the scheduled time `a`, so every evaluation takes `a` alongside `t`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::erf;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model parameters: {0}")]
    InvalidParameters(String),
    #[error("non-finite time argument")]
    NonFiniteTime,
    #[error("probability {0} outside [0, 1]")]
    InvalidProbability(f64),
    #[error("empirical model needs at least one sample value")]
    EmptyEmpirical,
}

/// Standard normal CDF via the complementary error function (accurate in
/// both tails; |error| well below 1e-12).
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal quantile: erfc-based seed plus one Newton step, which
/// brings the CDF/quantile roundtrip down to machine precision.
pub fn std_normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let mut z = -std::f64::consts::SQRT_2 * erf::erfc_inv(2.0 * p);
    for _ in 0..2 {
        let err = std_normal_cdf(z) - p;
        let d = std_normal_pdf(z);
        if d > 0.0 {
            z -= err / d;
        }
    }
    z
}

/// Affine coefficient `intercept + slope * a` used by drifting families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearCoef {
    pub intercept: f64,
    pub slope: f64,
}

impl LinearCoef {
    pub fn constant(value: f64) -> Self {
        Self { intercept: value, slope: 0.0 }
    }

    pub fn at(&self, a: f64) -> f64 {
        self.intercept + self.slope * a
    }
}

/// Parametric family whose coefficients drift with the scheduled time.
#[derive(Debug, Clone, PartialEq)]
pub enum DriftFamily {
    Normal { mean: LinearCoef, sd: LinearCoef },
    GeneralizedLaplace {
        mu: LinearCoef,
        pi: LinearCoef,
        lambda_left: LinearCoef,
        lambda_right: LinearCoef,
    },
}

/// Time-dependent unpunctuality distribution `F(t, a) = P(U <= t | scheduled at a)`.
#[derive(Debug, Clone, PartialEq)]
pub enum UnpunctualityModel {
    /// Every patient arrives exactly on time.
    PointMassAtZero,
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, sd: f64 },
    /// Asymmetric two-sided exponential mixture with density
    /// `pi*ll*exp(ll*(x-mu))` left of the kink and `(1-pi)*lr*exp(-lr*(x-mu))`
    /// right of it, so the CDF at the kink equals `pi`.
    GeneralizedLaplace { mu: f64, pi: f64, lambda_left: f64, lambda_right: f64 },
    /// Pooled empirical CDF over the stored sample values (time-homogeneous).
    Empirical { values: Vec<f64> },
    /// Empirical CDF bucketed by scheduled time: bucket `j` covers scheduled
    /// times in `(edges[j-1], edges[j]]` (bucket 0 starts at -inf).
    EmpiricalBucketed { edges: Vec<f64>, buckets: Vec<Vec<f64>> },
    /// One distribution before the split time, another at and after it.
    MiddaySplit {
        early: Box<UnpunctualityModel>,
        late: Box<UnpunctualityModel>,
        split: f64,
    },
    /// Family coefficients evaluated at the scheduled time, clamped to
    /// `[0, horizon]` (the model is only calibrated on the working day).
    ParametricDrift { family: DriftFamily, horizon: f64 },
}

impl UnpunctualityModel {
    pub fn uniform(lo: f64, hi: f64) -> Result<Self, ModelError> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(ModelError::InvalidParameters(format!(
                "uniform requires finite lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Self::Uniform { lo, hi })
    }

    pub fn normal(mean: f64, sd: f64) -> Result<Self, ModelError> {
        if !(mean.is_finite() && sd.is_finite() && sd > 0.0) {
            return Err(ModelError::InvalidParameters(format!(
                "normal requires finite mean and sd > 0, got ({mean}, {sd})"
            )));
        }
        Ok(Self::Normal { mean, sd })
    }

    pub fn generalized_laplace(
        mu: f64,
        pi: f64,
        lambda_left: f64,
        lambda_right: f64,
    ) -> Result<Self, ModelError> {
        check_gen_laplace(mu, pi, lambda_left, lambda_right)?;
        Ok(Self::GeneralizedLaplace { mu, pi, lambda_left, lambda_right })
    }

    /// Pooled empirical model; the sample is sorted on construction.
    pub fn empirical(mut values: Vec<f64>) -> Result<Self, ModelError> {
        if values.is_empty() {
            return Err(ModelError::EmptyEmpirical);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidParameters(
                "empirical sample contains non-finite values".into(),
            ));
        }
        values.sort_by(f64::total_cmp);
        Ok(Self::Empirical { values })
    }

    /// Time-bucketed empirical model. `edges` are the interior bucket
    /// boundaries (ascending); there must be `edges.len() + 1` buckets.
    pub fn empirical_bucketed(edges: Vec<f64>, buckets: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        if buckets.len() != edges.len() + 1 {
            return Err(ModelError::InvalidParameters(format!(
                "need {} buckets for {} edges, got {}",
                edges.len() + 1,
                edges.len(),
                buckets.len()
            )));
        }
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ModelError::InvalidParameters("bucket edges must be ascending".into()));
        }
        let mut sorted = Vec::with_capacity(buckets.len());
        for bucket in buckets {
            if bucket.is_empty() {
                return Err(ModelError::EmptyEmpirical);
            }
            let mut b = bucket;
            b.sort_by(f64::total_cmp);
            sorted.push(b);
        }
        Ok(Self::EmpiricalBucketed { edges, buckets: sorted })
    }

    pub fn midday_split(
        early: UnpunctualityModel,
        late: UnpunctualityModel,
        split: f64,
    ) -> Result<Self, ModelError> {
        if !split.is_finite() {
            return Err(ModelError::InvalidParameters("split time must be finite".into()));
        }
        Ok(Self::MiddaySplit { early: Box::new(early), late: Box::new(late), split })
    }

    /// Drift model; coefficient validity is checked at both ends of
    /// `[0, horizon]`, which suffices for affine coefficients.
    pub fn parametric_drift(family: DriftFamily, horizon: f64) -> Result<Self, ModelError> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(ModelError::InvalidParameters("drift horizon must be positive".into()));
        }
        for a in [0.0, horizon] {
            match &family {
                DriftFamily::Normal { mean, sd } => {
                    if !(mean.at(a).is_finite() && sd.at(a) > 0.0) {
                        return Err(ModelError::InvalidParameters(format!(
                            "drifting normal invalid at a={a}: mean={}, sd={}",
                            mean.at(a),
                            sd.at(a)
                        )));
                    }
                }
                DriftFamily::GeneralizedLaplace { mu, pi, lambda_left, lambda_right } => {
                    check_gen_laplace(mu.at(a), pi.at(a), lambda_left.at(a), lambda_right.at(a))
                        .map_err(|e| {
                            ModelError::InvalidParameters(format!("drifting laplace at a={a}: {e}"))
                        })?;
                }
            }
        }
        Ok(Self::ParametricDrift { family, horizon })
    }

    /// `F(t, a) = P(U <= t | scheduled at a)`.
    pub fn cdf(&self, t: f64, a: f64) -> Result<f64, ModelError> {
        if t.is_nan() {
            return Err(ModelError::NonFiniteTime);
        }
        Ok(match self {
            Self::PointMassAtZero => {
                if t >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Uniform { lo, hi } => ((t - lo) / (hi - lo)).clamp(0.0, 1.0),
            Self::Normal { mean, sd } => std_normal_cdf((t - mean) / sd),
            Self::GeneralizedLaplace { mu, pi, lambda_left, lambda_right } => {
                gen_laplace_cdf(t, *mu, *pi, *lambda_left, *lambda_right)
            }
            Self::Empirical { values } => empirical_cdf(values, t),
            Self::EmpiricalBucketed { edges, buckets } => {
                empirical_cdf(&buckets[bucket_index(edges, a)], t)
            }
            Self::MiddaySplit { early, late, split } => {
                if a <= *split {
                    early.cdf(t, a)?
                } else {
                    late.cdf(t, a)?
                }
            }
            Self::ParametricDrift { family, horizon } => {
                let a = a.clamp(0.0, *horizon);
                match family {
                    DriftFamily::Normal { mean, sd } => {
                        std_normal_cdf((t - mean.at(a)) / sd.at(a))
                    }
                    DriftFamily::GeneralizedLaplace { mu, pi, lambda_left, lambda_right } => {
                        gen_laplace_cdf(t, mu.at(a), pi.at(a), lambda_left.at(a), lambda_right.at(a))
                    }
                }
            }
        })
    }

    /// Generalized inverse of `cdf(., a)`. For `p` in `{0, 1}` on unbounded
    /// supports this is `-inf`/`+inf`; the sampler never passes those.
    pub fn quantile(&self, p: f64, a: f64) -> Result<f64, ModelError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(ModelError::InvalidProbability(p));
        }
        Ok(match self {
            Self::PointMassAtZero => 0.0,
            Self::Uniform { lo, hi } => lo + p * (hi - lo),
            Self::Normal { mean, sd } => mean + sd * std_normal_quantile(p),
            Self::GeneralizedLaplace { mu, pi, lambda_left, lambda_right } => {
                gen_laplace_quantile(p, *mu, *pi, *lambda_left, *lambda_right)
            }
            Self::Empirical { values } => empirical_quantile(values, p),
            Self::EmpiricalBucketed { edges, buckets } => {
                empirical_quantile(&buckets[bucket_index(edges, a)], p)
            }
            Self::MiddaySplit { early, late, split } => {
                if a <= *split {
                    early.quantile(p, a)?
                } else {
                    late.quantile(p, a)?
                }
            }
            Self::ParametricDrift { family, horizon } => {
                let a = a.clamp(0.0, *horizon);
                match family {
                    DriftFamily::Normal { mean, sd } => mean.at(a) + sd.at(a) * std_normal_quantile(p),
                    DriftFamily::GeneralizedLaplace { mu, pi, lambda_left, lambda_right } => {
                        gen_laplace_quantile(p, mu.at(a), pi.at(a), lambda_left.at(a), lambda_right.at(a))
                    }
                }
            }
        })
    }

    /// Inverse-transform draw; one code path for every variant keeps paired
    /// comparisons exact under common random numbers.
    pub fn sample<R: Rng + ?Sized>(&self, a: f64, rng: &mut R) -> Result<f64, ModelError> {
        self.quantile(unit_open(rng), a)
    }

    pub fn mean(&self, a: f64) -> f64 {
        match self {
            Self::PointMassAtZero => 0.0,
            Self::Uniform { lo, hi } => 0.5 * (lo + hi),
            Self::Normal { mean, .. } => *mean,
            Self::GeneralizedLaplace { mu, pi, lambda_left, lambda_right } => {
                mu - pi / lambda_left + (1.0 - pi) / lambda_right
            }
            Self::Empirical { values } => sample_mean(values),
            Self::EmpiricalBucketed { edges, buckets } => {
                sample_mean(&buckets[bucket_index(edges, a)])
            }
            Self::MiddaySplit { early, late, split } => {
                if a <= *split {
                    early.mean(a)
                } else {
                    late.mean(a)
                }
            }
            Self::ParametricDrift { family, horizon } => {
                let a = a.clamp(0.0, *horizon);
                match family {
                    DriftFamily::Normal { mean, .. } => mean.at(a),
                    DriftFamily::GeneralizedLaplace { mu, pi, lambda_left, lambda_right } => {
                        mu.at(a) - pi.at(a) / lambda_left.at(a)
                            + (1.0 - pi.at(a)) / lambda_right.at(a)
                    }
                }
            }
        }
    }

    pub fn variance(&self, a: f64) -> f64 {
        match self {
            Self::PointMassAtZero => 0.0,
            Self::Uniform { lo, hi } => (hi - lo) * (hi - lo) / 12.0,
            Self::Normal { sd, .. } => sd * sd,
            Self::GeneralizedLaplace { mu, pi, lambda_left, lambda_right } => {
                gen_laplace_variance(*mu, *pi, *lambda_left, *lambda_right)
            }
            Self::Empirical { values } => sample_variance(values),
            Self::EmpiricalBucketed { edges, buckets } => {
                sample_variance(&buckets[bucket_index(edges, a)])
            }
            Self::MiddaySplit { early, late, split } => {
                if a <= *split {
                    early.variance(a)
                } else {
                    late.variance(a)
                }
            }
            Self::ParametricDrift { family, horizon } => {
                let a = a.clamp(0.0, *horizon);
                match family {
                    DriftFamily::Normal { sd, .. } => sd.at(a) * sd.at(a),
                    DriftFamily::GeneralizedLaplace { mu, pi, lambda_left, lambda_right } => {
                        gen_laplace_variance(
                            mu.at(a),
                            pi.at(a),
                            lambda_left.at(a),
                            lambda_right.at(a),
                        )
                    }
                }
            }
        }
    }
}

fn check_gen_laplace(mu: f64, pi: f64, ll: f64, lr: f64) -> Result<(), ModelError> {
    if !(mu.is_finite() && pi > 0.0 && pi < 1.0 && ll > 0.0 && lr > 0.0) {
        return Err(ModelError::InvalidParameters(format!(
            "generalized laplace requires pi in (0,1) and positive rates, got (mu={mu}, pi={pi}, ll={ll}, lr={lr})"
        )));
    }
    Ok(())
}

fn gen_laplace_cdf(t: f64, mu: f64, pi: f64, ll: f64, lr: f64) -> f64 {
    if t <= mu {
        pi * (ll * (t - mu)).exp()
    } else {
        pi + (1.0 - pi) * (1.0 - (-lr * (t - mu)).exp())
    }
}

fn gen_laplace_quantile(p: f64, mu: f64, pi: f64, ll: f64, lr: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p <= pi {
        mu + (p / pi).ln() / ll
    } else {
        mu - (1.0 - (p - pi) / (1.0 - pi)).ln() / lr
    }
}

fn gen_laplace_variance(mu: f64, pi: f64, ll: f64, lr: f64) -> f64 {
    // E(X - mu)^2 = 2 pi / ll^2 + 2 (1 - pi) / lr^2; subtract (E X - mu)^2.
    let second_about_kink = 2.0 * pi / (ll * ll) + 2.0 * (1.0 - pi) / (lr * lr);
    let mean_about_kink = -pi / ll + (1.0 - pi) / lr;
    let _ = mu;
    second_about_kink - mean_about_kink * mean_about_kink
}

fn empirical_cdf(sorted: &[f64], t: f64) -> f64 {
    // number of samples <= t, via partition point on the sorted vector
    let count = sorted.partition_point(|&v| v <= t);
    count as f64 / sorted.len() as f64
}

fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let k = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

fn bucket_index(edges: &[f64], a: f64) -> usize {
    edges.partition_point(|&e| e < a)
}

fn sample_mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn sample_variance(values: &[f64]) -> f64 {
    let m = sample_mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64
}

/// Service-time distribution with mean `1/mu` and standard deviation `sd`.
#[derive(Debug, Clone, PartialEq)]
pub enum ServiceModel {
    Deterministic { value: f64 },
    Exponential { rate: f64 },
    LogNormal { log_mean: f64, log_sd: f64 },
}

impl ServiceModel {
    pub fn deterministic(value: f64) -> Result<Self, ModelError> {
        if !(value.is_finite() && value > 0.0) {
            return Err(ModelError::InvalidParameters(format!(
                "deterministic service needs a positive duration, got {value}"
            )));
        }
        Ok(Self::Deterministic { value })
    }

    pub fn exponential(rate: f64) -> Result<Self, ModelError> {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(ModelError::InvalidParameters(format!(
                "exponential service needs a positive rate, got {rate}"
            )));
        }
        Ok(Self::Exponential { rate })
    }

    pub fn log_normal(log_mean: f64, log_sd: f64) -> Result<Self, ModelError> {
        if !(log_mean.is_finite() && log_sd.is_finite() && log_sd > 0.0) {
            return Err(ModelError::InvalidParameters(format!(
                "log-normal service needs finite log-mean and log-sd > 0, got ({log_mean}, {log_sd})"
            )));
        }
        Ok(Self::LogNormal { log_mean, log_sd })
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::Deterministic { value } => *value,
            Self::Exponential { rate } => 1.0 / rate,
            Self::LogNormal { log_mean, log_sd } => (log_mean + 0.5 * log_sd * log_sd).exp(),
        }
    }

    pub fn sd(&self) -> f64 {
        match self {
            Self::Deterministic { .. } => 0.0,
            Self::Exponential { rate } => 1.0 / rate,
            Self::LogNormal { log_sd, .. } => {
                self.mean() * ((log_sd * log_sd).exp() - 1.0).sqrt()
            }
        }
    }

    pub fn quantile(&self, p: f64) -> Result<f64, ModelError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(ModelError::InvalidProbability(p));
        }
        Ok(match self {
            Self::Deterministic { value } => *value,
            Self::Exponential { rate } => -(-p).ln_1p() / rate,
            Self::LogNormal { log_mean, log_sd } => {
                (log_mean + log_sd * std_normal_quantile(p)).exp()
            }
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64, ModelError> {
        self.quantile(unit_open(rng))
    }
}

/// Service-time family with the scale left open; `for_rate(mu)` pins the mean
/// to `1/mu`. The log-normal keeps its log-sd and matches the mean through
/// the log-mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ServiceFamily {
    Deterministic,
    Exponential,
    LogNormal { log_sd: f64 },
}

impl ServiceFamily {
    pub fn for_rate(&self, mu: f64) -> Result<ServiceModel, ModelError> {
        if !(mu.is_finite() && mu > 0.0) {
            return Err(ModelError::InvalidParameters(format!(
                "service rate must be positive, got {mu}"
            )));
        }
        match self {
            Self::Deterministic => ServiceModel::deterministic(1.0 / mu),
            Self::Exponential => ServiceModel::exponential(mu),
            Self::LogNormal { log_sd } => {
                ServiceModel::log_normal(-mu.ln() - 0.5 * log_sd * log_sd, *log_sd)
            }
        }
    }
}

/// Uniform draw strictly inside (0, 1); quantile transforms stay finite.
pub fn unit_open<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    ((rng.random::<u64>() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Generator for a numbered replication stream: every stream is an
/// independent ChaCha sequence under the same base seed.
pub fn replication_rng(base_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_061() -> UnpunctualityModel {
        UnpunctualityModel::generalized_laplace(0.085, 0.65, 5.59, 11.18).unwrap()
    }

    #[test]
    fn gen_laplace_cdf_has_mixture_mass_at_kink() {
        let m = UnpunctualityModel::generalized_laplace(-0.1211, 0.35, 45.0, 22.5).unwrap();
        assert_eq!(m.cdf(-0.1211, 0.3).unwrap(), 0.35);
    }

    #[test]
    fn uniform_cdf_midpoint() {
        let m = UnpunctualityModel::uniform(-0.1, 0.1).unwrap();
        assert!((m.cdf(0.0, 0.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn midday_split_routes_on_scheduled_time() {
        let early = UnpunctualityModel::normal(0.0, 0.2).unwrap();
        let late = UnpunctualityModel::normal(-0.1, 0.05).unwrap();
        let m = UnpunctualityModel::midday_split(early, late, 0.5).unwrap();
        // a = 0.75 picks the late branch, whose median is -0.1
        assert!((m.cdf(-0.1, 0.75).unwrap() - 0.5).abs() < 1e-12);
        // a = 0.5 still belongs to the early branch
        assert!((m.cdf(0.0, 0.5).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn gen_laplace_closed_form_moments_match_quadrature() {
        // Oracle: numeric integration of the mixture density itself.
        let (mu, pi, ll, lr) = (0.085, 0.65, 5.59, 11.18);
        let density =
            |x: f64| {
                if x <= mu {
                    pi * ll * (ll * (x - mu)).exp()
                } else {
                    (1.0 - pi) * lr * (-lr * (x - mu)).exp()
                }
            };
        let lo = mu - 40.0 / ll;
        let hi = mu + 40.0 / lr;
        let n = 400_000;
        let h = (hi - lo) / n as f64;
        let (mut mass, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for i in 0..=n {
            let x = lo + i as f64 * h;
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let f = w * density(x);
            mass += f;
            m1 += f * x;
            m2 += f * x * x;
        }
        mass *= h / 3.0;
        m1 *= h / 3.0;
        m2 *= h / 3.0;
        assert!((mass - 1.0).abs() < 1e-10, "density mass {mass}");
        let model = laplace_061();
        assert!((model.mean(0.0) - m1).abs() < 1e-9);
        assert!((model.variance(0.0) - (m2 - m1 * m1)).abs() < 1e-9);
        // the 6.1 parameter set targets mean 0, variance 0.04
        assert!(model.mean(0.0).abs() < 1e-3);
        assert!((model.variance(0.0) - 0.04).abs() < 1e-3);
    }

    #[test]
    fn gen_laplace_cdf_matches_density_antiderivative() {
        let model = laplace_061();
        let (mu, pi, ll, lr) = (0.085, 0.65, 5.59, 11.18);
        let density =
            |x: f64| {
                if x <= mu {
                    pi * ll * (ll * (x - mu)).exp()
                } else {
                    (1.0 - pi) * lr * (-lr * (x - mu)).exp()
                }
            };
        // cumulative Simpson from far in the left tail
        let lo = mu - 40.0 / ll;
        let hi = mu + 40.0 / lr;
        let n = 200_000;
        let h = (hi - lo) / n as f64;
        let mut acc = 0.0;
        for i in 0..n {
            let x0 = lo + i as f64 * h;
            let x1 = x0 + h;
            acc += h / 6.0 * (density(x0) + 4.0 * density(0.5 * (x0 + x1)) + density(x1));
            let implemented = model.cdf(x1, 0.0).unwrap();
            assert!(
                (acc - implemented).abs() < 1e-8,
                "at {x1}: quadrature {acc} vs cdf {implemented}"
            );
        }
        assert!((acc - 1.0).abs() < 1e-8);
    }

    #[test]
    fn cdf_monotone_and_bounded_for_every_variant() {
        for model in all_variants() {
            for &a in &[0.0, 0.3, 0.5, 0.75, 1.0] {
                let mut prev = 0.0;
                for i in 0..=10_000 {
                    let t = -2.0 + 4.0 * i as f64 / 10_000.0;
                    let c = model.cdf(t, a).unwrap();
                    assert!((0.0..=1.0).contains(&c), "{model:?} cdf out of range");
                    assert!(c >= prev - 1e-15, "{model:?} not monotone at t={t}");
                    prev = c;
                }
            }
        }
    }

    #[test]
    fn quantile_cdf_roundtrip_continuous_variants() {
        for model in continuous_variants() {
            for &a in &[0.0, 0.4, 0.9] {
                for k in 1..100 {
                    let p = k as f64 / 100.0;
                    let t = model.quantile(p, a).unwrap();
                    let back = model.cdf(t, a).unwrap();
                    assert!(
                        (back - p).abs() < 1e-9,
                        "{model:?} roundtrip p={p}: got {back}"
                    );
                }
            }
        }
    }

    #[test]
    fn kolmogorov_smirnov_against_cdf() {
        // 1% critical value for the one-sample KS statistic: 1.628 / sqrt(N)
        let n = 100_000usize;
        let critical = 1.628 / (n as f64).sqrt();
        for model in continuous_variants() {
            let a = 0.5;
            let mut rng = replication_rng(20_240_601, 7);
            let mut draws: Vec<f64> = (0..n).map(|_| model.sample(a, &mut rng).unwrap()).collect();
            draws.sort_by(f64::total_cmp);
            let mut ks: f64 = 0.0;
            for (i, &x) in draws.iter().enumerate() {
                let f = model.cdf(x, a).unwrap();
                ks = ks.max((f - i as f64 / n as f64).abs());
                ks = ks.max(((i + 1) as f64 / n as f64 - f).abs());
            }
            assert!(ks < critical, "{model:?}: KS statistic {ks} >= {critical}");
        }
    }

    #[test]
    fn point_mass_samples_are_zero() {
        let mut rng = replication_rng(3, 0);
        let m = UnpunctualityModel::PointMassAtZero;
        for _ in 0..100 {
            assert_eq!(m.sample(0.7, &mut rng).unwrap(), 0.0);
        }
    }

    #[test]
    fn uniform_sample_mean_within_clt_bound() {
        let m = UnpunctualityModel::uniform(-0.1, 0.1).unwrap();
        let mut rng = replication_rng(11, 0);
        let n = 100_000;
        let mean: f64 =
            (0..n).map(|_| m.sample(0.0, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.002, "mean {mean}");
    }

    #[test]
    fn empirical_samples_stay_in_support() {
        let m = UnpunctualityModel::empirical(vec![-0.2, 0.1]).unwrap();
        let mut rng = replication_rng(5, 1);
        for _ in 0..1000 {
            let v = m.sample(0.0, &mut rng).unwrap();
            assert!(v == -0.2 || v == 0.1, "unexpected draw {v}");
        }
    }

    #[test]
    fn empirical_cdf_at_median() {
        let values: Vec<f64> = (0..101).map(|i| i as f64 / 100.0 - 0.5).collect();
        let n = values.len() as f64;
        let m = UnpunctualityModel::empirical(values).unwrap();
        let med = m.quantile(0.5, 0.0).unwrap();
        assert!((m.cdf(med, 0.0).unwrap() - 0.5).abs() <= 1.0 / n + 1e-12);
    }

    #[test]
    fn bucketed_empirical_routes_by_scheduled_time() {
        let m = UnpunctualityModel::empirical_bucketed(
            vec![0.5],
            vec![vec![-0.3, -0.1], vec![0.2, 0.4]],
        )
        .unwrap();
        assert_eq!(m.cdf(0.0, 0.2).unwrap(), 1.0);
        assert_eq!(m.cdf(0.0, 0.8).unwrap(), 0.0);
    }

    #[test]
    fn service_deterministic_is_exact() {
        let m = ServiceModel::deterministic(0.01).unwrap();
        let mut rng = replication_rng(1, 0);
        assert_eq!(m.sample(&mut rng).unwrap(), 0.01);
        assert_eq!(m.mean(), 0.01);
        assert_eq!(m.sd(), 0.0);
    }

    #[test]
    fn service_exponential_mean_within_clt_bound() {
        let m = ServiceModel::exponential(100.0).unwrap();
        let mut rng = replication_rng(12, 4);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| m.sample(&mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 0.01).abs() < 3e-4, "mean {mean}");
    }

    #[test]
    fn service_lognormal_heavy_tail_mean() {
        // log-sd 2 with log-mean -ln(P) - 2 has mean exactly 1/P
        let p = 100.0;
        let m = ServiceFamily::LogNormal { log_sd: 2.0 }.for_rate(p).unwrap();
        assert!((m.mean() - 1.0 / p).abs() < 1e-15);
        let mut rng = replication_rng(99, 2);
        let n = 1_000_000;
        let mean: f64 = (0..n).map(|_| m.sample(&mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!(
            (mean - 0.01).abs() < 0.05 * 0.01,
            "heavy-tailed mean off by more than 5%: {mean}"
        );
    }

    #[test]
    fn lognormal_mean_parameterization_invariant() {
        let m = ServiceModel::log_normal(-2.0, 0.7).unwrap();
        assert!((m.mean() - (-2.0f64 + 0.5 * 0.49).exp()).abs() < 1e-15);
    }

    #[test]
    fn invalid_parameters_rejected_at_construction() {
        assert!(UnpunctualityModel::uniform(0.1, 0.1).is_err());
        assert!(UnpunctualityModel::normal(0.0, 0.0).is_err());
        assert!(UnpunctualityModel::generalized_laplace(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(UnpunctualityModel::generalized_laplace(0.0, 0.5, -1.0, 1.0).is_err());
        assert!(UnpunctualityModel::empirical(vec![]).is_err());
        assert!(ServiceModel::deterministic(0.0).is_err());
        let m = UnpunctualityModel::normal(0.0, 1.0).unwrap();
        assert!(matches!(m.cdf(f64::NAN, 0.0), Err(ModelError::NonFiniteTime)));
        assert!(matches!(m.quantile(1.5, 0.0), Err(ModelError::InvalidProbability(_))));
    }

    #[test]
    fn drift_clamps_outside_horizon() {
        let m = drift_normal();
        // evaluations beyond the horizon pin to the endpoint coefficients
        assert_eq!(m.cdf(0.0, 5.0).unwrap(), m.cdf(0.0, 1.0).unwrap());
        assert_eq!(m.cdf(0.0, -3.0).unwrap(), m.cdf(0.0, 0.0).unwrap());
    }

    fn drift_normal() -> UnpunctualityModel {
        UnpunctualityModel::parametric_drift(
            DriftFamily::Normal {
                mean: LinearCoef { intercept: 0.0, slope: -0.1 },
                sd: LinearCoef { intercept: 0.2, slope: -0.15 },
            },
            1.0,
        )
        .unwrap()
    }

    fn continuous_variants() -> Vec<UnpunctualityModel> {
        vec![
            UnpunctualityModel::uniform(-0.1, 0.1).unwrap(),
            UnpunctualityModel::normal(-0.05, 0.1).unwrap(),
            laplace_061(),
            UnpunctualityModel::midday_split(
                UnpunctualityModel::normal(0.0, 0.2).unwrap(),
                UnpunctualityModel::normal(-0.1, 0.05).unwrap(),
                0.5,
            )
            .unwrap(),
            drift_normal(),
        ]
    }

    fn all_variants() -> Vec<UnpunctualityModel> {
        let mut v = continuous_variants();
        v.push(UnpunctualityModel::PointMassAtZero);
        v.push(UnpunctualityModel::empirical(vec![-0.2, -0.05, 0.0, 0.1]).unwrap());
        v.push(
            UnpunctualityModel::empirical_bucketed(
                vec![0.5],
                vec![vec![-0.1, 0.0, 0.2], vec![-0.3, -0.2]],
            )
            .unwrap(),
        );
        v
    }
}
