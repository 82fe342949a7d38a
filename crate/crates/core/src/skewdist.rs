//! Multivariate skew-normal (SN) and skew-t (ST) distributions and their
//! two-component mixtures.
//!
//! A component is parameterised by a location `xi`, a symmetric
//! positive-definite scale matrix `omega`, a slant vector `alpha` and degrees
//! of freedom `nu`; `nu = ∞` gives the SN family.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use std::f64::consts::{LN_2, PI};

use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::special::{ln_gamma, ln_normal_cdf, ln_student_t_cdf, LN_SQRT_2PI};

const SYMMETRY_TOL: f64 = 1e-12;

/// `omega[i][j] = rho^|i-j|`, row-major.
pub fn ar1_scale(d: usize, rho: f64) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            m[i * d + j] = rho.powi(i.abs_diff(j) as i32);
        }
    }
    m
}

pub fn identity(d: usize) -> Vec<f64> {
    ar1_scale(d, 0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSpec {
    xi: Vec<f64>,
    omega: Vec<f64>,
    alpha: Vec<f64>,
    nu: f64,
    chol: Cholesky,
    /// `sqrt(diag(omega))`
    scale: Vec<f64>,
    /// Factor of the `(d+1)`-dimensional normal used by the sampler.
    augmented: Cholesky,
}

impl ComponentSpec {
    /// `nu = None` (or infinite) selects the skew-normal family.
    pub fn new(xi: Vec<f64>, omega: Vec<f64>, alpha: Vec<f64>, nu: Option<f64>) -> Result<Self> {
        let d = xi.len();
        if d == 0 {
            return Err(Error::InvalidSpec("empty location vector".into()));
        }
        if omega.len() != d * d || alpha.len() != d {
            return Err(Error::InvalidSpec(format!(
                "dimension mismatch: xi has {d} entries, Omega {} and alpha {}",
                omega.len(),
                alpha.len()
            )));
        }
        if xi
            .iter()
            .chain(&omega)
            .chain(&alpha)
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidSpec("parameters must be finite".into()));
        }
        for i in 0..d {
            for j in 0..i {
                if (omega[i * d + j] - omega[j * d + i]).abs() > SYMMETRY_TOL {
                    return Err(Error::InvalidSpec(format!(
                        "Omega is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let nu = nu.unwrap_or(f64::INFINITY);
        if !(nu > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "degrees of freedom must be positive, got {nu}"
            )));
        }
        let chol = Cholesky::new(&omega, d)?;
        let scale: Vec<f64> = (0..d).map(|i| omega[i * d + i].sqrt()).collect();

        let corr: Vec<f64> = (0..d * d)
            .map(|ij| omega[ij] / (scale[ij / d] * scale[ij % d]))
            .collect();
        let corr_alpha: Vec<f64> = (0..d)
            .map(|i| (0..d).map(|j| corr[i * d + j] * alpha[j]).sum())
            .collect();
        let quad: f64 = alpha.iter().zip(&corr_alpha).map(|(a, b)| a * b).sum();
        let delta: Vec<f64> = corr_alpha.iter().map(|v| v / (1.0 + quad).sqrt()).collect();
        let mut star = vec![0.0; (d + 1) * (d + 1)];
        star[0] = 1.0;
        for i in 0..d {
            star[i + 1] = delta[i];
            star[(i + 1) * (d + 1)] = delta[i];
            for j in 0..d {
                star[(i + 1) * (d + 1) + j + 1] = corr[i * d + j];
            }
        }
        let augmented = Cholesky::new(&star, d + 1).map_err(|_| {
            Error::InvalidSpec("augmented scale matrix is not positive definite".into())
        })?;

        Ok(Self {
            xi,
            omega,
            alpha,
            nu,
            chol,
            scale,
            augmented,
        })
    }

    pub fn skew_normal(xi: Vec<f64>, omega: Vec<f64>, alpha: Vec<f64>) -> Result<Self> {
        Self::new(xi, omega, alpha, None)
    }

    pub fn skew_t(xi: Vec<f64>, omega: Vec<f64>, alpha: Vec<f64>, nu: f64) -> Result<Self> {
        Self::new(xi, omega, alpha, Some(nu))
    }

    pub fn d(&self) -> usize {
        self.xi.len()
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn is_skew_t(&self) -> bool {
        self.nu.is_finite()
    }

    /// Centred point, its Mahalanobis form and the slant projection.
    fn terms(&self, x: &[f64]) -> (f64, f64) {
        let z: Vec<f64> = x.iter().zip(&self.xi).map(|(a, b)| a - b).collect();
        let q = self.chol.mahalanobis(&z);
        let w = z
            .iter()
            .zip(&self.alpha)
            .zip(&self.scale)
            .map(|((z, a), s)| a * z / s)
            .sum();
        (q, w)
    }

    fn ln_sn(&self, x: &[f64]) -> f64 {
        let d = self.d() as f64;
        let (q, w) = self.terms(x);
        LN_2 - d * LN_SQRT_2PI - 0.5 * self.chol.ln_det() - 0.5 * q + ln_normal_cdf(w)
    }

    fn ln_st(&self, x: &[f64]) -> f64 {
        let d = self.d() as f64;
        let nu = self.nu;
        let (q, w) = self.terms(x);
        let ln_t = ln_gamma(0.5 * (nu + d))
            - ln_gamma(0.5 * nu)
            - 0.5 * d * (nu * PI).ln()
            - 0.5 * self.chol.ln_det()
            - 0.5 * (nu + d) * (q / nu).ln_1p();
        LN_2 + ln_t + ln_student_t_cdf(w * ((nu + d) / (nu + q)).sqrt(), nu + d)
    }

    pub fn ln_density(&self, x: &[f64]) -> f64 {
        if self.is_skew_t() {
            self.ln_st(x)
        } else {
            self.ln_sn(x)
        }
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.ln_density(x).exp()
    }

    /// One draw via the augmented-normal representation; ST draws divide the
    /// SN variate by `sqrt(W / nu)` with `W ~ χ²_nu`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.d();
        let u: Vec<f64> = (0..=d).map(|_| StandardNormal.sample(rng)).collect();
        let v = self.augmented.mul_lower(&u);
        let sign = if v[0] > 0.0 { 1.0 } else { -1.0 };
        let mix = if self.is_skew_t() {
            let w: f64 = ChiSquared::new(self.nu).expect("nu > 0").sample(rng);
            (w / self.nu).sqrt().recip()
        } else {
            1.0
        };
        (0..d)
            .map(|k| self.xi[k] + self.scale[k] * sign * v[k + 1] * mix)
            .collect()
    }
}

/// SN density `2 φ_d(x − ξ; Ω) Φ(αᵀ ω⁻¹ (x − ξ))`, ignoring any `nu`.
pub fn sn_density(x: &[f64], spec: &ComponentSpec) -> f64 {
    spec.ln_sn(x).exp()
}

/// ST density; falls back to SN when `nu` is infinite.
pub fn st_density(x: &[f64], spec: &ComponentSpec) -> f64 {
    spec.density(x)
}

/// `π f_1 + (1 − π) f_2`; with `π = 1` only the first component exists.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    first: ComponentSpec,
    second: Option<ComponentSpec>,
    weight: f64,
}

impl MixtureSpec {
    pub fn new(first: ComponentSpec, second: Option<ComponentSpec>, weight: f64) -> Result<Self> {
        if !(weight > 0.0 && weight <= 1.0) {
            return Err(Error::InvalidSpec(format!(
                "mixing proportion must lie in (0, 1], got {weight}"
            )));
        }
        match (&second, weight < 1.0) {
            (None, true) => {
                return Err(Error::InvalidSpec(
                    "mixing proportion below 1 needs a second component".into(),
                ))
            }
            (Some(_), false) => {
                return Err(Error::InvalidSpec(
                    "mixing proportion 1 admits no second component".into(),
                ))
            }
            (Some(s), true) if s.d() != first.d() => {
                return Err(Error::InvalidSpec("components differ in dimension".into()))
            }
            _ => {}
        }
        Ok(Self {
            first,
            second,
            weight,
        })
    }

    pub fn single(first: ComponentSpec) -> Self {
        Self {
            first,
            second: None,
            weight: 1.0,
        }
    }

    pub fn d(&self) -> usize {
        self.first.d()
    }

    pub fn first(&self) -> &ComponentSpec {
        &self.first
    }

    pub fn second(&self) -> Option<&ComponentSpec> {
        self.second.as_ref()
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn ln_density(&self, x: &[f64]) -> f64 {
        let a = self.weight.ln() + self.first.ln_density(x);
        match &self.second {
            None => a,
            Some(s) => {
                let b = (1.0 - self.weight).ln() + s.ln_density(x);
                let hi = a.max(b);
                if hi == f64::NEG_INFINITY {
                    return hi;
                }
                hi + ((a - hi).exp() + (b - hi).exp()).ln()
            }
        }
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        match &self.second {
            None => self.first.density(x),
            Some(s) => self.weight * self.first.density(x) + (1.0 - self.weight) * s.density(x),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match &self.second {
            Some(s) if rng.random::<f64>() >= self.weight => s.sample(rng),
            _ => self.first.sample(rng),
        }
    }
}

pub fn mixture_density(x: &[f64], spec: &MixtureSpec) -> f64 {
    spec.density(x)
}

pub fn sample_mixture<R: Rng + ?Sized>(spec: &MixtureSpec, rng: &mut R) -> Vec<f64> {
    spec.sample(rng)
}
