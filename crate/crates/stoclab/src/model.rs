//! Two-domain Gaussian model with an invariant block (margin γ along w*)
//! and a spurious block (y·1 on source, N(0, σsp² I) on target).

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::rng::Stream;
use crate::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    Source,
    Target,
    /// Equal mixture of source and target.
    Union,
}

/// Full problem instance. `sigma_in` and `sigma_sp` are standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub gamma: f64,
    pub sigma_in: f64,
    pub sigma_sp: f64,
    pub d_in: usize,
    pub d_sp: usize,
    pub w_star: Vec<f64>,
    pub k: usize,
    pub seed: u64,
}

/// Unit vector 1/√n.
pub fn ones_direction(n: usize) -> Vec<f64> {
    vec![1.0 / (n as f64).sqrt(); n]
}

impl ModelParams {
    /// γ = 0.5, σsp² = 1, σin² = 0.05, din = 5, dsp = 20, k = 2.
    pub fn baseline() -> Self {
        Self::new(0.5, 0.05f64.sqrt(), 1.0, 5, 20)
    }

    /// All-ones w*, k = 2, seed 0.
    pub fn new(gamma: f64, sigma_in: f64, sigma_sp: f64, d_in: usize, d_sp: usize) -> Self {
        Self {
            gamma,
            sigma_in,
            sigma_sp,
            d_in,
            d_sp,
            w_star: ones_direction(d_in),
            k: 2,
            seed: 0,
        }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Replace w* by a uniform draw on the unit sphere.
    pub fn with_sphere_w_star(mut self, rng: &mut Stream) -> Self {
        let mut w: Vec<f64> = (0..self.d_in).map(|_| rng.normal()).collect();
        let n = norm(&w);
        w.iter_mut().for_each(|x| *x /= n);
        self.w_star = w;
        self
    }

    pub fn d(&self) -> usize {
        self.d_in + self.d_sp
    }

    pub fn w_star_is_all_ones(&self) -> bool {
        let c = 1.0 / (self.d_in as f64).sqrt();
        self.w_star.iter().all(|&x| (x - c).abs() <= 1e-12)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Domain(m.to_string()));
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be finite and >= 0");
        }
        if !(self.sigma_in >= 0.0 && self.sigma_in.is_finite()) {
            return bad("sigma_in must be finite and >= 0");
        }
        if !(self.sigma_sp >= 0.0 && self.sigma_sp.is_finite()) {
            return bad("sigma_sp must be finite and >= 0");
        }
        if self.d_in == 0 || self.d_sp == 0 {
            return bad("d_in and d_sp must be positive");
        }
        if self.w_star.len() != self.d_in {
            return Err(Error::Dimension { expected: self.d_in, got: self.w_star.len() });
        }
        if (norm(&self.w_star) - 1.0).abs() > 1e-12 {
            return bad("w_star must have unit norm");
        }
        if self.k == 0 || self.k > self.d() {
            return bad("k must lie in [1, d_in + d_sp]");
        }
        Ok(())
    }

    /// [w*, 0].
    pub fn w_inv(&self) -> Vec<f64> {
        let mut v = self.w_star.clone();
        v.resize(self.d(), 0.0);
        v
    }

    /// [0, 1/√dsp].
    pub fn w_spu(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.d_in];
        v.extend(ones_direction(self.d_sp));
        v
    }

    /// Class-conditional source mean for y = +1: (γw*, 1).
    pub fn source_mean(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.w_star.iter().map(|w| self.gamma * w).collect();
        v.resize(self.d(), 1.0);
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub xs: Matrix,
    pub ys: Vec<f64>,
    pub domain: Domain,
}

/// Draw one labeled point into `x` (length d) and return its label.
pub fn sample_point(p: &ModelParams, domain: Domain, rng: &mut Stream, x: &mut [f64]) -> f64 {
    let domain = match domain {
        Domain::Union => {
            if rng.sign() > 0.0 {
                Domain::Source
            } else {
                Domain::Target
            }
        }
        d => d,
    };
    let y = rng.sign();
    let (xin, xsp) = x.split_at_mut(p.d_in);
    for v in xin.iter_mut() {
        *v = rng.normal();
    }
    let proj = dot(xin, &p.w_star);
    for (v, w) in xin.iter_mut().zip(&p.w_star) {
        *v = p.sigma_in * (*v - proj * w) + p.gamma * y * w;
    }
    match domain {
        Domain::Source => xsp.iter_mut().for_each(|v| *v = y),
        _ => xsp.iter_mut().for_each(|v| *v = p.sigma_sp * rng.normal()),
    }
    y
}

pub fn sample_labeled(p: &ModelParams, domain: Domain, n: usize, rng: &mut Stream) -> LabeledBatch {
    let d = p.d();
    let mut xs = Matrix::zeros(n, d);
    let mut ys = Vec::with_capacity(n);
    for i in 0..n {
        ys.push(sample_point(p, domain, rng, xs.row_mut(i)));
    }
    LabeledBatch { xs, ys, domain }
}

/// Exact E[xxᵀ].
pub fn population_second_moment(p: &ModelParams, domain: Domain) -> Matrix {
    let (din, d) = (p.d_in, p.d());
    let s2in = p.sigma_in * p.sigma_in;
    let (src, tgt) = match domain {
        Domain::Source => (1.0, 0.0),
        Domain::Target => (0.0, 1.0),
        Domain::Union => (0.5, 0.5),
    };
    let g = p.gamma;
    Matrix::from_fn(d, d, |i, j| match (i < din, j < din) {
        (true, true) => {
            let ww = p.w_star[i] * p.w_star[j];
            let eye = if i == j { 1.0 } else { 0.0 };
            g * g * ww + s2in * (eye - ww)
        }
        (true, false) => src * g * p.w_star[i],
        (false, true) => src * g * p.w_star[j],
        (false, false) => {
            let diag = if i == j { p.sigma_sp * p.sigma_sp } else { 0.0 };
            src + tgt * diag
        }
    })
}

/// Coordinates along w_inv and w_spu plus the norm of what is left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decomposition {
    pub a_inv: f64,
    pub a_spu: f64,
    pub resid: f64,
}

pub fn decompose(v: &[f64], p: &ModelParams) -> Result<Decomposition> {
    if v.len() != p.d() {
        return Err(Error::Dimension { expected: p.d(), got: v.len() });
    }
    let (wi, ws) = (p.w_inv(), p.w_spu());
    let a_inv = dot(v, &wi);
    let a_spu = dot(v, &ws);
    let r: Vec<f64> = v
        .iter()
        .zip(wi.iter().zip(&ws))
        .map(|(x, (a, b))| x - a_inv * a - a_spu * b)
        .collect();
    Ok(Decomposition { a_inv, a_spu, resid: norm(&r) })
}
