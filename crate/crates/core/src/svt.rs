//! Sparse vector technique over an adaptively chosen stream of
//! sensitivity-1 queries.
//!
//! The session never sees the dataset: the caller evaluates each query and
//! hands over the value. With `t` the number of ⊤ answers so far, a query is
//! answered only while `t < c`; after that every answer is ⊥ and no noise is
//! drawn. Privacy is `eps`-DP for any stream of sensitivity-1 queries.

use crate::error::{check_positive, check_unit_open, Error, Result};
use crate::noise::{Laplace, RngState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SvtAnswer {
    /// ⊥: below threshold, or the cutoff has been reached.
    Below,
    /// ⊤
    Above,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvtParams {
    pub eta: f64,
    /// Cutoff; may be fractional, in which case it acts as `ceil(c)`.
    pub cutoff: f64,
    pub tau: f64,
    pub eps: f64,
    /// Declared number of queries `d`.
    pub stream_len: usize,
}

impl SvtParams {
    pub fn validate(&self) -> Result<()> {
        check_unit_open("eta", self.eta)?;
        if !(self.cutoff.is_finite() && self.cutoff >= 1.0) {
            return Err(Error::param("cutoff", self.cutoff, "must be at least 1"));
        }
        if !self.tau.is_finite() {
            return Err(Error::param("tau", self.tau, "must be finite"));
        }
        check_positive("eps", self.eps)?;
        if self.stream_len == 0 {
            return Err(Error::param("stream length", 0.0, "must be at least 1"));
        }
        Ok(())
    }

    /// Accuracy band `8c/eps * ln(2d/eta)`.
    pub fn band(&self) -> f64 {
        8.0 * self.cutoff / self.eps * (2.0 * self.stream_len as f64 / self.eta).ln()
    }

    /// Number of ⊤ answers after which the session only answers ⊥.
    pub fn max_above(&self) -> usize {
        self.cutoff.ceil() as usize
    }
}

#[derive(Debug, Clone)]
pub struct SvtSession {
    params: SvtParams,
    threshold_noise: Laplace,
    query_noise: Laplace,
    noisy_threshold: f64,
    above: usize,
    position: usize,
}

impl SvtSession {
    pub fn open(params: SvtParams, rng: &mut RngState) -> Result<Self> {
        params.validate()?;
        let threshold_noise = Laplace::new(2.0 * params.cutoff / params.eps)?;
        let query_noise = Laplace::new(4.0 * params.cutoff / params.eps)?;
        let noisy_threshold = params.tau + threshold_noise.sample(rng);
        Ok(SvtSession {
            params,
            threshold_noise,
            query_noise,
            noisy_threshold,
            above: 0,
            position: 0,
        })
    }

    pub fn answer(&mut self, value: f64, rng: &mut RngState) -> Result<SvtAnswer> {
        if self.position >= self.params.stream_len {
            return Err(Error::StreamExhausted(self.params.stream_len));
        }
        self.position += 1;
        // Integer count against a real cutoff: t >= c iff t >= ceil(c).
        if self.above as f64 >= self.params.cutoff {
            return Ok(SvtAnswer::Below);
        }
        let noisy = value + self.query_noise.sample(rng);
        if noisy < self.noisy_threshold {
            return Ok(SvtAnswer::Below);
        }
        self.noisy_threshold = self.params.tau + self.threshold_noise.sample(rng);
        self.above += 1;
        Ok(SvtAnswer::Above)
    }

    pub fn params(&self) -> &SvtParams {
        &self.params
    }

    pub fn noisy_threshold(&self) -> f64 {
        self.noisy_threshold
    }

    pub fn above_count(&self) -> usize {
        self.above
    }

    pub fn position(&self) -> usize {
        self.position
    }

    pub fn exhausted_cutoff(&self) -> bool {
        self.above as f64 >= self.params.cutoff
    }
}

/// Checks one answered stream against the accuracy band: for every index up
/// to and including the `ceil(c)`-th ⊤ (or the whole stream if there are fewer),
/// ⊤ needs `f >= tau - band` and ⊥ needs `f < tau + band`.
pub fn band_violated(params: &SvtParams, values: &[f64], answers: &[SvtAnswer]) -> bool {
    let band = params.band();
    let mut above = 0;
    for (&f, &a) in values.iter().zip(answers) {
        let ok = match a {
            SvtAnswer::Above => f >= params.tau - band,
            SvtAnswer::Below => f < params.tau + band,
        };
        if !ok {
            return true;
        }
        if a == SvtAnswer::Above {
            above += 1;
            if above >= params.max_above() {
                break;
            }
        }
    }
    false
}
