//! Spectrally negative Lévy models from a fixed catalog.
//!
//! A model is the Lévy–Khintchine triplet `(mu, sigma, Pi)` with the
//! truncation `1{y > -1}`:
//!
//! ```text
//! psi(b) = -mu b + sigma^2 b^2 / 2 + int (e^{b y} - 1 - b y 1{y > -1}) Pi(dy)
//! ```
//!
//! so `X_t = sigma B_t - mu t + (compensated) jumps`. The Lévy measure is one
//! of: nothing, a compound Poisson law on `(-inf, 0)`, or a spectrally
//! negative stable tail `C |y|^{-1-alpha} dy`. Every quantity below is a
//! closed form per entry; generic quadrature over `Pi` only appears in tests.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};

/// The law of a single (negative) jump of a compound Poisson component.
#[derive(Debug, Clone, PartialEq)]
pub enum JumpLaw {
    /// `Y = -E` with `E` exponential of the given mean magnitude.
    Exponential { mean: f64 },
    /// `Y = size` almost surely, `size < 0`.
    Deterministic { size: f64 },
    /// Finite mixture of non-mixture laws, weights summing to one.
    Mixture(Vec<(f64, JumpLaw)>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum JumpSpec {
    None,
    CompoundPoisson { rate: f64, law: JumpLaw },
    /// Lévy density `C |y|^{-1-alpha}` on `y < 0` with `scale = C Gamma(-alpha)`,
    /// i.e. the fully compensated jump part of `psi` is `scale * b^alpha`.
    StableTail { alpha: f64, scale: f64 },
}

/// `E[E; E < 1]` for `E ~ Exp(r)`, i.e. `(1 - e^{-r}(1 + r)) / r`.
fn exp_truncated_mean(r: f64) -> f64 {
    if r < 1e-4 {
        // r/2 - r^2/3 + r^3/8
        r / 2.0 - r * r / 3.0 + r * r * r / 8.0
    } else {
        (-(-r).exp_m1() - r * (-r).exp()) / r
    }
}

impl JumpLaw {
    pub fn exponential(mean: f64) -> Self {
        JumpLaw::Exponential { mean }
    }

    pub fn deterministic(size: f64) -> Self {
        JumpLaw::Deterministic { size }
    }

    fn validate(&self) -> Result<()> {
        match self {
            JumpLaw::Exponential { mean } => {
                if !(mean.is_finite() && *mean > 0.0) {
                    return Err(Error::config(format!(
                        "exponential jump mean magnitude must be positive, got {mean}"
                    )));
                }
            }
            JumpLaw::Deterministic { size } => {
                if !(size.is_finite() && *size < 0.0) {
                    return Err(Error::config(format!(
                        "deterministic jump size must be negative, got {size}"
                    )));
                }
            }
            JumpLaw::Mixture(parts) => {
                if parts.is_empty() {
                    return Err(Error::config("empty jump mixture"));
                }
                let total: f64 = parts.iter().map(|(w, _)| *w).sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::config(format!("mixture weights sum to {total}, not 1")));
                }
                for (w, law) in parts {
                    if !(*w > 0.0) {
                        return Err(Error::config("mixture weights must be positive"));
                    }
                    if matches!(law, JumpLaw::Mixture(_)) {
                        return Err(Error::config("nested jump mixtures are not supported"));
                    }
                    law.validate()?;
                }
            }
        }
        Ok(())
    }

    /// `E e^{s Y}` for complex `s` with `Re s > -rate` where relevant.
    pub fn mgf_complex(&self, s: Complex64) -> Complex64 {
        match self {
            JumpLaw::Exponential { mean } => {
                let eta = 1.0 / mean;
                Complex64::new(eta, 0.0) / (s + eta)
            }
            JumpLaw::Deterministic { size } => (s * *size).exp(),
            JumpLaw::Mixture(parts) => parts
                .iter()
                .map(|(w, law)| law.mgf_complex(s) * *w)
                .sum(),
        }
    }

    pub fn mgf(&self, b: f64) -> f64 {
        match self {
            JumpLaw::Exponential { mean } => 1.0 / (1.0 + mean * b),
            JumpLaw::Deterministic { size } => (b * size).exp(),
            JumpLaw::Mixture(parts) => parts.iter().map(|(w, law)| w * law.mgf(b)).sum(),
        }
    }

    /// `E[Y^k e^{b Y}]`.
    pub fn moment_tilted(&self, k: u32, b: f64) -> f64 {
        match self {
            JumpLaw::Exponential { mean } => {
                let eta = 1.0 / mean;
                // (-1)^k k! eta / (eta + b)^{k+1}
                let fact: f64 = (1..=k).map(f64::from).product();
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                sign * fact * eta / (eta + b).powi(k as i32 + 1)
            }
            JumpLaw::Deterministic { size } => size.powi(k as i32) * (b * size).exp(),
            JumpLaw::Mixture(parts) => parts
                .iter()
                .map(|(w, law)| w * law.moment_tilted(k, b))
                .sum(),
        }
    }

    /// `E[Y e^{b Y}; Y > -1]`.
    pub fn truncated_mean_tilted(&self, b: f64) -> f64 {
        match self {
            JumpLaw::Exponential { mean } => {
                let eta = 1.0 / mean;
                -(eta / (eta + b)) * exp_truncated_mean(eta + b)
            }
            JumpLaw::Deterministic { size } => {
                if *size > -1.0 {
                    size * (b * size).exp()
                } else {
                    0.0
                }
            }
            JumpLaw::Mixture(parts) => parts
                .iter()
                .map(|(w, law)| w * law.truncated_mean_tilted(b))
                .sum(),
        }
    }

    /// Exponentially tilted law `e^{bY} P(dY) / E e^{bY}` (exponential and
    /// point laws are closed under tilting).
    pub fn tilted(&self, b: f64) -> JumpLaw {
        match self {
            JumpLaw::Exponential { mean } => JumpLaw::Exponential {
                mean: mean / (1.0 + mean * b),
            },
            JumpLaw::Deterministic { size } => JumpLaw::Deterministic { size: *size },
            JumpLaw::Mixture(parts) => {
                let total = self.mgf(b);
                JumpLaw::Mixture(
                    parts
                        .iter()
                        .map(|(w, law)| (w * law.mgf(b) / total, law.tilted(b)))
                        .collect(),
                )
            }
        }
    }

    /// `P(Y < -z)` for `z >= 0` (strict) and `P(Y <= -z)` (closed).
    pub fn tail(&self, z: f64, closed: bool) -> f64 {
        match self {
            JumpLaw::Exponential { mean } => (-z / mean).exp(),
            JumpLaw::Deterministic { size } => {
                let hit = if closed { *size <= -z } else { *size < -z };
                if hit {
                    1.0
                } else {
                    0.0
                }
            }
            JumpLaw::Mixture(parts) => parts.iter().map(|(w, law)| w * law.tail(z, closed)).sum(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.moment_tilted(1, 0.0)
    }

    /// Draw one jump (negative number).
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        use rand_distr::{Distribution, Exp1};
        match self {
            JumpLaw::Exponential { mean } => {
                let e: f64 = Exp1.sample(rng);
                -mean * e
            }
            JumpLaw::Deterministic { size } => *size,
            JumpLaw::Mixture(parts) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (w, law) in parts {
                    acc += w;
                    if u < acc {
                        return law.sample(rng);
                    }
                }
                parts.last().map(|(_, l)| l.sample(rng)).unwrap_or(0.0)
            }
        }
    }

    /// Components for quadrature: densities `(weight, mean)` of exponential
    /// parts and atoms `(weight, size)`.
    pub(crate) fn components(&self) -> (Vec<(f64, f64)>, Vec<(f64, f64)>) {
        let mut dens = Vec::new();
        let mut atoms = Vec::new();
        match self {
            JumpLaw::Exponential { mean } => dens.push((1.0, *mean)),
            JumpLaw::Deterministic { size } => atoms.push((1.0, *size)),
            JumpLaw::Mixture(parts) => {
                for (w, law) in parts {
                    let (d, a) = law.components();
                    dens.extend(d.into_iter().map(|(v, m)| (w * v, m)));
                    atoms.extend(a.into_iter().map(|(v, s)| (w * v, s)));
                }
            }
        }
        (dens, atoms)
    }
}

/// Long-run behaviour determined by the sign of `psi'(0+)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    DriftsToInfinity,
    Oscillates,
    DriftsToMinusInfinity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevyModel {
    mu: f64,
    sigma: f64,
    jumps: JumpSpec,
}

impl LevyModel {
    /// Build from the Lévy–Khintchine parameters. Only parameter sanity is
    /// checked here; see [`LevyModel::validate`] for the non-monotone path
    /// condition.
    pub fn new(mu: f64, sigma: f64, jumps: JumpSpec) -> Result<Self> {
        if !mu.is_finite() {
            return Err(Error::config("mu must be finite"));
        }
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::config(format!("sigma must be nonnegative, got {sigma}")));
        }
        match &jumps {
            JumpSpec::None => {}
            JumpSpec::CompoundPoisson { rate, law } => {
                if !(rate.is_finite() && *rate > 0.0) {
                    return Err(Error::config(format!("jump rate must be positive, got {rate}")));
                }
                law.validate()?;
            }
            JumpSpec::StableTail { alpha, scale } => {
                if !(*alpha > 1.0 && *alpha < 2.0) {
                    return Err(Error::config(format!("stable alpha must lie in (1,2), got {alpha}")));
                }
                if !(scale.is_finite() && *scale > 0.0) {
                    return Err(Error::config("stable scale must be positive"));
                }
            }
        }
        Ok(LevyModel { mu, sigma, jumps })
    }

    /// Brownian motion `X_t = drift t + sigma B_t`.
    pub fn brownian(drift: f64, sigma: f64) -> Result<Self> {
        LevyModel::new(-drift, sigma, JumpSpec::None)
    }

    /// Parametrise by the linear coefficient of `psi` once the canonical jump
    /// part is removed: `psi(b) = drift b + sigma^2 b^2/2 + rate (E e^{bY} - 1)`
    /// for compound Poisson, `... + scale b^alpha` for the stable tail.
    pub fn with_drift(drift: f64, sigma: f64, jumps: JumpSpec) -> Result<Self> {
        let probe = LevyModel::new(0.0, sigma, jumps)?;
        let offset = probe.drift_offset();
        LevyModel::new(-drift - offset, sigma, probe.jumps)
    }

    /// Cramér–Lundberg style model: drift up, exponential jumps down.
    pub fn cp_exponential(drift: f64, sigma: f64, rate: f64, mean: f64) -> Result<Self> {
        LevyModel::with_drift(
            drift,
            sigma,
            JumpSpec::CompoundPoisson {
                rate,
                law: JumpLaw::exponential(mean),
            },
        )
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn jumps(&self) -> &JumpSpec {
        &self.jumps
    }

    /// `drift = -mu - offset`, see [`LevyModel::with_drift`].
    fn drift_offset(&self) -> f64 {
        match &self.jumps {
            JumpSpec::None => 0.0,
            JumpSpec::CompoundPoisson { rate, law } => rate * law.truncated_mean_tilted(0.0),
            JumpSpec::StableTail { alpha, .. } => self.stable_density_constant() / (alpha - 1.0),
        }
    }

    /// Linear coefficient of `psi` next to the canonical jump part.
    pub fn drift(&self) -> f64 {
        -self.mu - self.drift_offset()
    }

    /// Constant `C` of the Lévy density `C |y|^{-1-alpha}` (stable tail only).
    pub fn stable_density_constant(&self) -> f64 {
        match &self.jumps {
            JumpSpec::StableTail { alpha, scale } => scale / libm::tgamma(-alpha),
            _ => 0.0,
        }
    }

    pub fn has_jumps(&self) -> bool {
        !matches!(self.jumps, JumpSpec::None)
    }

    pub fn is_brownian(&self) -> bool {
        matches!(self.jumps, JumpSpec::None) && self.sigma > 0.0
    }

    pub fn is_finite_variation(&self) -> bool {
        self.sigma == 0.0 && !matches!(self.jumps, JumpSpec::StableTail { .. })
    }

    /// `d = -mu - int_(-1,0) x Pi(dx)`, defined for finite variation.
    pub fn fv_drift(&self) -> Option<f64> {
        if self.is_finite_variation() {
            Some(self.drift())
        } else {
            None
        }
    }

    /// Check the non-monotone path condition required of a spectrally
    /// negative process.
    pub fn validate(&self) -> Result<()> {
        if self.sigma > 0.0 || matches!(self.jumps, JumpSpec::StableTail { .. }) {
            return Ok(());
        }
        match &self.jumps {
            JumpSpec::None => Err(Error::config("pure drift model has monotone paths")),
            _ => {
                if self.drift() > 0.0 {
                    Ok(())
                } else {
                    Err(Error::config(format!(
                        "finite-variation model needs positive drift d, got {}",
                        self.drift()
                    )))
                }
            }
        }
    }

    /// Laplace exponent at `b >= 0`.
    pub fn psi(&self, b: f64) -> Result<f64> {
        if !(b >= 0.0) {
            return Err(Error::domain(format!("psi needs beta >= 0, got {b}")));
        }
        Ok(self.psi_unchecked(b))
    }

    /// Laplace exponent for any real `b` where the closed form is finite
    /// (no sign check).
    pub fn psi_unchecked(&self, b: f64) -> f64 {
        let gauss = -self.mu * b + 0.5 * self.sigma * self.sigma * b * b;
        gauss
            + match &self.jumps {
                JumpSpec::None => 0.0,
                JumpSpec::CompoundPoisson { rate, law } => {
                    rate * (law.mgf(b) - 1.0) - b * rate * law.truncated_mean_tilted(0.0)
                }
                JumpSpec::StableTail { alpha, scale } => {
                    scale * b.powf(*alpha) - b * self.stable_density_constant() / (alpha - 1.0)
                }
            }
    }

    /// Analytic continuation of `psi` (used on inversion contours).
    pub fn psi_complex(&self, s: Complex64) -> Complex64 {
        let gauss = s * (-self.mu) + s * s * (0.5 * self.sigma * self.sigma);
        gauss
            + match &self.jumps {
                JumpSpec::None => Complex64::new(0.0, 0.0),
                JumpSpec::CompoundPoisson { rate, law } => {
                    (law.mgf_complex(s) - 1.0) * *rate - s * (rate * law.truncated_mean_tilted(0.0))
                }
                JumpSpec::StableTail { alpha, scale } => {
                    s.powf(*alpha) * *scale - s * (self.stable_density_constant() / (alpha - 1.0))
                }
            }
    }

    /// `k`-th derivative of `psi` at `b > 0` (right derivative at 0), `k` in 1..=3.
    pub fn psi_derivative(&self, b: f64, k: u32) -> f64 {
        let s2 = self.sigma * self.sigma;
        let gauss = match k {
            1 => -self.mu + s2 * b,
            2 => s2,
            _ => 0.0,
        };
        gauss
            + match &self.jumps {
                JumpSpec::None => 0.0,
                JumpSpec::CompoundPoisson { rate, law } => {
                    let m = rate * law.moment_tilted(k, b);
                    if k == 1 {
                        m - rate * law.truncated_mean_tilted(0.0)
                    } else {
                        m
                    }
                }
                JumpSpec::StableTail { alpha, scale } => {
                    let a = *alpha;
                    let coef: f64 = (0..k).map(|j| a - j as f64).product();
                    // b^{a-k}; at b = 0 the first derivative term vanishes
                    let pow = if b == 0.0 {
                        if k == 1 {
                            0.0
                        } else {
                            f64::INFINITY
                        }
                    } else {
                        b.powf(a - k as f64)
                    };
                    let lin = if k == 1 {
                        -self.stable_density_constant() / (a - 1.0)
                    } else {
                        0.0
                    };
                    scale * coef * pow + lin
                }
            }
    }

    /// `psi'(0+) = E X_1`.
    pub fn mean(&self) -> f64 {
        self.psi_derivative(0.0, 1)
    }

    pub fn regime(&self) -> Regime {
        let m = self.mean();
        if m.abs() <= 1e-14 {
            Regime::Oscillates
        } else if m > 0.0 {
            Regime::DriftsToInfinity
        } else {
            Regime::DriftsToMinusInfinity
        }
    }

    /// Right inverse `Phi(q) = sup{b >= 0 : psi(b) = q}`.
    pub fn phi(&self, q: f64) -> Result<f64> {
        if !(q >= 0.0) || !q.is_finite() {
            return Err(Error::domain(format!("Phi needs q >= 0, got {q}")));
        }
        let f = |b: f64| self.psi_unchecked(b) - q;
        let mut lo = 0.0;
        if q == 0.0 {
            if self.mean() >= 0.0 {
                return Ok(0.0);
            }
        }
        let mut hi = 1.0_f64;
        let mut guard = 0;
        while f(hi) <= 0.0 {
            hi *= 2.0;
            guard += 1;
            if guard > 1100 {
                return Err(Error::numeric("phi", "psi does not exceed q on any bracket"));
            }
        }
        if q == 0.0 {
            // Start right of the minimiser of psi, where psi < 0.
            let (mut a, mut b) = (0.0, hi);
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if self.psi_derivative(m, 1) < 0.0 {
                    a = m;
                } else {
                    b = m;
                }
            }
            lo = 0.5 * (a + b);
        }
        let mut root = brent(f, lo, hi, 1e-15)?;
        // Newton polish; the root is simple to the right of the minimiser.
        for _ in 0..3 {
            let d = self.psi_derivative(root, 1);
            if d > 0.0 {
                let step = f(root) / d;
                let cand = root - step;
                if cand >= lo && cand <= hi && f(cand).abs() <= f(root).abs() {
                    root = cand;
                }
            }
        }
        Ok(root)
    }

    /// `Phi'(q) = 1 / psi'(Phi(q)+)`.
    pub fn phi_derivative(&self, q: f64) -> Result<f64> {
        let p = self.phi(q)?;
        let d = self.psi_derivative(p, 1);
        if !(d > 0.0) {
            return Err(Error::domain(format!(
                "psi'(Phi({q})+) = {d} is not positive; Phi'(q) is infinite"
            )));
        }
        Ok(1.0 / d)
    }

    /// The model seen under the exponential change of measure `P^b`:
    /// `psi_b(l) = psi(l + b) - psi(b)`.
    pub fn tilt(&self, b: f64) -> Result<LevyModel> {
        if !(b >= 0.0) || !b.is_finite() {
            return Err(Error::domain(format!("tilt needs beta >= 0, got {b}")));
        }
        if b == 0.0 {
            return Ok(self.clone());
        }
        let s2 = self.sigma * self.sigma;
        match &self.jumps {
            JumpSpec::None => LevyModel::new(self.mu - s2 * b, self.sigma, JumpSpec::None),
            JumpSpec::CompoundPoisson { rate, law } => {
                let mu = self.mu - s2 * b + rate * law.truncated_mean_tilted(0.0)
                    - rate * law.truncated_mean_tilted(b);
                LevyModel::new(
                    mu,
                    self.sigma,
                    JumpSpec::CompoundPoisson {
                        rate: rate * law.mgf(b),
                        law: law.tilted(b),
                    },
                )
            }
            JumpSpec::StableTail { .. } => Err(Error::unsupported(
                "tilting a stable tail gives a tempered stable law outside the catalog",
            )),
        }
    }

    // ---- configuration ----

    pub fn to_config(&self) -> ModelConfig {
        let (kind, jumps) = match &self.jumps {
            JumpSpec::None => ("bm", None),
            JumpSpec::CompoundPoisson { rate, law } => ("cp", Some(JumpConfig::from_law(*rate, law))),
            JumpSpec::StableTail { alpha, scale } => (
                "stable",
                Some(JumpConfig {
                    kind: "stable".into(),
                    alpha: Some(*alpha),
                    scale: Some(*scale),
                    ..JumpConfig::default()
                }),
            ),
        };
        ModelConfig {
            kind: kind.into(),
            mu: Some(self.mu),
            drift: None,
            sigma: self.sigma,
            jumps,
        }
    }

    pub fn from_config(cfg: &ModelConfig) -> Result<Self> {
        let jumps = match &cfg.jumps {
            None => JumpSpec::None,
            Some(j) => j.to_spec()?,
        };
        let expect = match &jumps {
            JumpSpec::None => "bm",
            JumpSpec::CompoundPoisson { .. } => "cp",
            JumpSpec::StableTail { .. } => "stable",
        };
        if cfg.kind != expect {
            return Err(Error::config(format!(
                "model kind `{}` does not match its jump settings (`{expect}`)",
                cfg.kind
            )));
        }
        let model = match (cfg.mu, cfg.drift) {
            (Some(_), Some(_)) => return Err(Error::config("give either `mu` or `drift`, not both")),
            (Some(mu), None) => LevyModel::new(mu, cfg.sigma, jumps)?,
            (None, Some(d)) => LevyModel::with_drift(d, cfg.sigma, jumps)?,
            (None, None) => return Err(Error::config("model needs `mu` or `drift`")),
        };
        model.validate()?;
        Ok(model)
    }

    /// Parse a model from TOML or JSON text.
    pub fn from_str_any(text: &str) -> Result<Self> {
        let cfg: ModelConfig = match serde_json::from_str(text) {
            Ok(c) => c,
            Err(_) => toml::from_str(text).map_err(|e| Error::config(format!("model config: {e}")))?,
        };
        LevyModel::from_config(&cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read model file {}: {e}", path.display())))?;
        LevyModel::from_str_any(&text)
    }
}

/// File form of a model: `{kind, mu | drift, sigma, jumps: {kind, rate, mean | size | alpha, scale}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<f64>,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jumps: Option<JumpConfig>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JumpConfig {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<Vec<JumpConfig>>,
}

impl JumpConfig {
    fn from_law(rate: f64, law: &JumpLaw) -> Self {
        let mut cfg = JumpConfig::law_only(law);
        cfg.rate = Some(rate);
        cfg
    }

    fn law_only(law: &JumpLaw) -> Self {
        match law {
            JumpLaw::Exponential { mean } => JumpConfig {
                kind: "exponential".into(),
                mean: Some(*mean),
                ..Default::default()
            },
            JumpLaw::Deterministic { size } => JumpConfig {
                kind: "deterministic".into(),
                size: Some(*size),
                ..Default::default()
            },
            JumpLaw::Mixture(parts) => JumpConfig {
                kind: "mixture".into(),
                components: Some(
                    parts
                        .iter()
                        .map(|(w, l)| {
                            let mut c = JumpConfig::law_only(l);
                            c.weight = Some(*w);
                            c
                        })
                        .collect(),
                ),
                ..Default::default()
            },
        }
    }

    fn to_law(&self) -> Result<JumpLaw> {
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| Error::config(format!("`{}` jumps need `{name}`", self.kind)))
        };
        match self.kind.as_str() {
            // accept either sign for the mean magnitude
            "exponential" => Ok(JumpLaw::Exponential {
                mean: need(self.mean, "mean")?.abs(),
            }),
            "deterministic" => Ok(JumpLaw::Deterministic {
                size: need(self.size, "size")?,
            }),
            "mixture" => {
                let comps = self
                    .components
                    .as_ref()
                    .ok_or_else(|| Error::config("mixture jumps need `components`"))?;
                let parts = comps
                    .iter()
                    .map(|c| Ok((need(c.weight, "weight")?, c.to_law()?)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(JumpLaw::Mixture(parts))
            }
            other => Err(Error::config(format!("unknown jump law `{other}`"))),
        }
    }

    fn to_spec(&self) -> Result<JumpSpec> {
        if self.kind == "stable" {
            return Ok(JumpSpec::StableTail {
                alpha: self
                    .alpha
                    .ok_or_else(|| Error::config("stable jumps need `alpha`"))?,
                scale: self
                    .scale
                    .ok_or_else(|| Error::config("stable jumps need `scale`"))?,
            });
        }
        let rate = self
            .rate
            .ok_or_else(|| Error::config(format!("`{}` jumps need `rate`", self.kind)))?;
        Ok(JumpSpec::CompoundPoisson {
            rate,
            law: self.to_law()?,
        })
    }
}

/// Brent's root finder on a sign-changing bracket.
pub(crate) fn brent<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, xtol: f64) -> Result<f64> {
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::numeric(
            "brent",
            format!("no sign change on [{a}, {b}]: f = ({fa}, {fb})"),
        ));
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..300 {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b);
    }
    Err(Error::numeric("brent", "iteration limit reached"))
}
