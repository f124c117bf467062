use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

use rand::Rng as _;
use rand_distr::{Distribution, Exp1, Gamma, Normal, StudentT};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Noise distribution before truncation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FamilyKind {
    Gaussian { mean: f64, sd: f64 },
    Exponential { rate: f64 },
    Gamma { shape: f64, scale: f64 },
    /// Stable law in the `S1` parameterisation.
    LevyStable { alpha: f64, beta: f64, scale: f64, location: f64 },
    StudentT { df: f64 },
    /// `±scale·U^(−1/tail)` with a fair sign.
    SymmetricPareto { tail: f64, scale: f64 },
}

/// A family plus optional `[low, high]` bounds enforced by rejection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseFamily {
    pub kind: FamilyKind,
    pub truncation: Option<(f64, f64)>,
}

/// Consecutive rejections after which the truncation window is considered empty.
const MAX_REJECTIONS: usize = 1_000_000;

impl NoiseFamily {
    pub fn new(kind: FamilyKind) -> Self {
        NoiseFamily { kind, truncation: None }
    }

    pub fn truncated(mut self, low: f64, high: f64) -> Self {
        self.truncation = Some((low, high));
        self
    }

    pub fn gaussian() -> Self {
        Self::new(FamilyKind::Gaussian { mean: 0.0, sd: 1.0 })
    }

    pub fn exponential() -> Self {
        Self::new(FamilyKind::Exponential { rate: 1.0 })
    }

    pub fn gamma() -> Self {
        Self::new(FamilyKind::Gamma { shape: 2.0, scale: 1.0 })
    }

    /// α = 1.5, fully right-skewed, unit scale, truncated to ±10 scales.
    pub fn levy() -> Self {
        Self::new(FamilyKind::LevyStable {
            alpha: 1.5,
            beta: 1.0,
            scale: 1.0,
            location: 0.0,
        })
        .truncated(-10.0, 10.0)
    }

    pub fn student_t() -> Self {
        Self::new(FamilyKind::StudentT { df: 3.0 })
    }

    pub fn symmetric_pareto() -> Self {
        Self::new(FamilyKind::SymmetricPareto { tail: 3.0, scale: 1.0 })
    }

    /// Default member of a family by its CSV name.
    pub fn by_name(name: &str) -> Result<Self> {
        Ok(match name {
            "gaussian" => Self::gaussian(),
            "exponential" => Self::exponential(),
            "gamma" => Self::gamma(),
            "levy_stable" | "levy" => Self::levy(),
            "student_t" => Self::student_t(),
            "symmetric_pareto" => Self::symmetric_pareto(),
            other => return Err(Error::InvalidParameter(format!("unknown noise family `{other}`"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            FamilyKind::Gaussian { .. } => "gaussian",
            FamilyKind::Exponential { .. } => "exponential",
            FamilyKind::Gamma { .. } => "gamma",
            FamilyKind::LevyStable { .. } => "levy_stable",
            FamilyKind::StudentT { .. } => "student_t",
            FamilyKind::SymmetricPareto { .. } => "symmetric_pareto",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            FamilyKind::Gaussian { mean, sd } => mean.is_finite() && sd > 0.0,
            FamilyKind::Exponential { rate } => rate > 0.0,
            FamilyKind::Gamma { shape, scale } => shape > 0.0 && scale > 0.0,
            FamilyKind::LevyStable {
                alpha,
                beta,
                scale,
                location,
            } => alpha > 0.0 && alpha <= 2.0 && (-1.0..=1.0).contains(&beta) && scale > 0.0 && location.is_finite(),
            FamilyKind::StudentT { df } => df > 0.0,
            FamilyKind::SymmetricPareto { tail, scale } => tail > 0.0 && scale > 0.0,
        };
        if !ok {
            return Err(Error::InvalidParameter(format!("invalid parameters for {self}")));
        }
        if let Some((lo, hi)) = self.truncation {
            if !(lo < hi) {
                return Err(Error::InvalidParameter(format!("empty truncation window [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// One draw without truncation.
    pub fn draw_raw(&self, rng: &mut Rng) -> f64 {
        match self.kind {
            FamilyKind::Gaussian { mean, sd } => Normal::new(mean, sd).expect("validated").sample(rng),
            FamilyKind::Exponential { rate } => {
                let e: f64 = Exp1.sample(rng);
                e / rate
            }
            FamilyKind::Gamma { shape, scale } => Gamma::new(shape, scale).expect("validated").sample(rng),
            FamilyKind::LevyStable {
                alpha,
                beta,
                scale,
                location,
            } => stable_cms(alpha, beta, rng) * scale + location + stable_shift(alpha, beta, scale),
            FamilyKind::StudentT { df } => StudentT::new(df).expect("validated").sample(rng),
            FamilyKind::SymmetricPareto { tail, scale } => {
                let u: f64 = 1.0 - rng.random::<f64>();
                let mag = scale * u.powf(-1.0 / tail);
                if rng.random::<bool>() {
                    mag
                } else {
                    -mag
                }
            }
        }
    }
}

impl fmt::Display for NoiseFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {:?}", self.name(), self.kind)?;
        if let Some((lo, hi)) = self.truncation {
            write!(f, " truncated to [{lo}, {hi}]")?;
        }
        Ok(())
    }
}

fn stable_shift(alpha: f64, beta: f64, scale: f64) -> f64 {
    if alpha == 1.0 {
        2.0 / PI * beta * scale * scale.ln()
    } else {
        0.0
    }
}

/// Standard stable variate by the Chambers–Mallows–Stuck construction.
pub fn stable_cms(alpha: f64, beta: f64, rng: &mut Rng) -> f64 {
    let v = PI * (rng.random::<f64>() - 0.5);
    let w: f64 = Exp1.sample(rng);
    if alpha == 1.0 {
        let t = FRAC_PI_2 + beta * v;
        return 2.0 / PI * (t * v.tan() - beta * ((FRAC_PI_2 * w * v.cos()) / t).ln());
    }
    let zeta = beta * (PI * alpha / 2.0).tan();
    let b = zeta.atan() / alpha;
    let s = (1.0 + zeta * zeta).powf(1.0 / (2.0 * alpha));
    let a = alpha * (v + b);
    s * a.sin() / v.cos().powf(1.0 / alpha) * ((v - a).cos() / w).powf((1.0 - alpha) / alpha)
}

/// `count` i.i.d. draws, resampling any draw outside the truncation window.
pub fn sample_noise(family: &NoiseFamily, count: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    family.validate()?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        out.push(draw(family, rng)?);
    }
    Ok(out)
}

pub(crate) fn draw(family: &NoiseFamily, rng: &mut Rng) -> Result<f64> {
    let Some((lo, hi)) = family.truncation else {
        return Ok(family.draw_raw(rng));
    };
    for _ in 0..MAX_REJECTIONS {
        let x = family.draw_raw(rng);
        if (lo..=hi).contains(&x) {
            return Ok(x);
        }
    }
    Err(Error::InvalidParameter(format!("truncation window of {family} has almost no mass")))
}
