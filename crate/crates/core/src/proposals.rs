//! Linear-Bayes proposal moments.
//!
//! The forward proposal matches a conjugate Gamma prior on each subject's
//! hazard to the random-walk prior of the linear predictor, takes a Laplace
//! approximation of the log-hazard posterior, and feeds the resulting moments
//! back onto the coefficients one entry at a time. Backward and smoothing
//! proposals condition a joint Gaussian of `(beta_j, beta_{j+1})` built from
//! the discount factor.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::IntervalSlice;
use crate::error::{Error, Result};
use crate::gaussian::{symmetrize, CholeskyFactor};
use crate::model::{check_phi, dot};

pub use crate::gaussian::GaussianSummary;

/// Lower clamp for `Q = z'Uz`.
pub const Q_MIN: f64 = 1e-12;

/// Gamma(alpha, psi) prior on a hazard `lambda_ij`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaHyper {
    pub alpha: f64,
    pub psi: f64,
}

/// Counters for numerical fallbacks taken while building proposals.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposalDiagnostics {
    pub q_clamped: usize,
    pub jitter_applied: usize,
}

impl ProposalDiagnostics {
    pub fn merge(&mut self, other: &ProposalDiagnostics) {
        self.q_clamped += other.q_clamped;
        self.jitter_applied += other.jitter_applied;
    }
}

#[inline]
fn clamp_q(q: f64, diag: &mut ProposalDiagnostics) -> f64 {
    if q <= Q_MIN || !q.is_finite() {
        diag.q_clamped += 1;
        Q_MIN
    } else {
        q
    }
}

/// Moment-matched hyperparameters: `ln alpha - ln psi = z'beta_prev` and
/// `1/alpha = z'Uz`.
pub fn gamma_hyperparameters(
    beta_prev: &[f64],
    u: &DMatrix<f64>,
    z: &[f64],
    diag: &mut ProposalDiagnostics,
) -> GammaHyper {
    let zv = DVector::from_column_slice(z);
    let q = clamp_q((zv.transpose() * u * &zv)[(0, 0)], diag);
    let alpha = 1.0 / q;
    GammaHyper {
        alpha,
        psi: alpha * (-dot(z, beta_prev)).exp(),
    }
}

/// Laplace approximation of the log-hazard posterior
/// `p(eta) ∝ exp{eta (alpha + d) - (psi + t) e^eta}`: returns (mode, variance).
pub fn laplace_eta_moments(hyper: GammaHyper, exposure: f64, event: bool) -> (f64, f64) {
    let shape = hyper.alpha + event as u8 as f64;
    let rate = hyper.psi + exposure;
    ((shape / rate).ln(), 1.0 / shape)
}

/// Unnormalized log-density of the log-hazard posterior.
pub fn eta_log_posterior(hyper: GammaHyper, exposure: f64, event: bool, eta: f64) -> f64 {
    eta * (hyper.alpha + event as u8 as f64) - (hyper.psi + exposure) * eta.exp()
}

/// First derivative of [`eta_log_posterior`] in `eta`.
pub fn eta_log_posterior_gradient(hyper: GammaHyper, exposure: f64, event: bool, eta: f64) -> f64 {
    hyper.alpha + event as u8 as f64 - (hyper.psi + exposure) * eta.exp()
}

/// Second derivative of [`eta_log_posterior`] in `eta`.
pub fn eta_log_posterior_curvature(hyper: GammaHyper, exposure: f64, _event: bool, eta: f64) -> f64 {
    -(hyper.psi + exposure) * eta.exp()
}

/// `ln(1 + e^x)` without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln[(1 + Q d) / (1 + t Q e^a)]`.
#[inline]
fn mean_shift(q: f64, exposure: f64, event: bool, a: f64) -> f64 {
    let num = if event { q.ln_1p() } else { 0.0 };
    let den = if exposure > 0.0 {
        softplus((exposure * q).ln() + a)
    } else {
        0.0
    };
    num - den
}

fn finish_covariance(mut c: DMatrix<f64>, diag: &mut ProposalDiagnostics) -> Result<(DMatrix<f64>, CholeskyFactor)> {
    symmetrize(&mut c);
    let chol = CholeskyFactor::new(&c, "forward proposal covariance")?;
    if chol.jittered() {
        diag.jitter_applied += 1;
        let dim = c.nrows();
        let trace = c.trace();
        let scale = if trace > 0.0 { trace / dim as f64 } else { 1.0 };
        for i in 0..dim {
            c[(i, i)] += crate::gaussian::JITTER_SCALE * scale;
        }
    }
    Ok((c, chol))
}

/// Forward proposal moments `(m_j, C_j)` for one ancestor, processing the
/// interval's entries in order:
///
/// ```text
/// a = z'm,  A = Cz,  Q = z'Cz
/// m <- m + (A/Q) ln[(1 + Qd) / (1 + tQ e^a)]
/// C <- C - AA' d / (1 + dQ)
/// ```
pub fn forward_proposal_moments(
    beta_prev: &[f64],
    u: &DMatrix<f64>,
    slice: &IntervalSlice,
    diag: &mut ProposalDiagnostics,
) -> Result<GaussianSummary> {
    let mut m = DVector::from_column_slice(beta_prev);
    let mut c = u.clone();
    for i in 0..slice.len() {
        let z = DVector::from_column_slice(slice.row(i));
        let a = z.dot(&m);
        let big_a = &c * &z;
        let q = clamp_q(z.dot(&big_a), diag);
        let (t, d) = (slice.exposure[i], slice.event[i]);
        m += &big_a * (mean_shift(q, t, d, a) / q);
        if d {
            c -= &big_a * big_a.transpose() / (1.0 + q);
        }
    }
    let (c, _) = finish_covariance(c, diag)?;
    Ok(GaussianSummary::new(m, c))
}

/// The forward recursion with the covariance sequence precomputed.
///
/// The `C` updates never read `m`, so within an interval every ancestor
/// shares `C_j` and the gains `A_i / Q_i`; only the mean has to be rerun per
/// ancestor, at `O(n_j (P+1))` cost.
#[derive(Clone, Debug)]
pub struct ForwardRecursion {
    dim: usize,
    gains: Vec<f64>,
    q: Vec<f64>,
    cov: DMatrix<f64>,
    chol: CholeskyFactor,
    diagnostics: ProposalDiagnostics,
}

impl ForwardRecursion {
    pub fn new(u: &DMatrix<f64>, slice: &IntervalSlice) -> Result<Self> {
        let dim = u.nrows();
        let n = slice.len();
        let mut diag = ProposalDiagnostics::default();
        let mut gains = Vec::with_capacity(n * dim);
        let mut qs = Vec::with_capacity(n);
        let mut c = u.clone();
        for i in 0..n {
            let z = DVector::from_column_slice(slice.row(i));
            let big_a = &c * &z;
            let q = clamp_q(z.dot(&big_a), &mut diag);
            gains.extend(big_a.iter().map(|v| v / q));
            qs.push(q);
            if slice.event[i] {
                c -= &big_a * big_a.transpose() / (1.0 + q);
            }
        }
        let (cov, chol) = finish_covariance(c, &mut diag)?;
        Ok(Self {
            dim,
            gains,
            q: qs,
            cov,
            chol,
            diagnostics: diag,
        })
    }

    /// Write `m_j` for the ancestor `beta_prev` into `out`.
    pub fn mean_into(&self, slice: &IntervalSlice, beta_prev: &[f64], out: &mut [f64]) {
        out.copy_from_slice(beta_prev);
        for i in 0..slice.len() {
            let a = dot(slice.row(i), out);
            let shift = mean_shift(self.q[i], slice.exposure[i], slice.event[i], a);
            if shift != 0.0 {
                let g = &self.gains[i * self.dim..(i + 1) * self.dim];
                for (o, gk) in out.iter_mut().zip(g) {
                    *o += gk * shift;
                }
            }
        }
    }

    pub fn mean(&self, slice: &IntervalSlice, beta_prev: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.mean_into(slice, beta_prev, &mut out);
        out
    }

    /// `C_j`, shared by every ancestor.
    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn factor(&self) -> &CholeskyFactor {
        &self.chol
    }

    pub fn diagnostics(&self) -> ProposalDiagnostics {
        self.diagnostics
    }
}

/// `gamma_j ≈ N(mu_{j-1}, Sigma_{j-1} / phi)`.
pub fn artificial_prior(mu_prev: &DVector<f64>, sigma_prev: &DMatrix<f64>, phi: f64) -> Result<GaussianSummary> {
    if !(phi > 0.0 && phi <= 1.0) {
        return Err(Error::Config(format!("discount factor {phi} must lie in (0, 1]")));
    }
    CholeskyFactor::new(sigma_prev, "artificial prior covariance")?;
    Ok(GaussianSummary::new(mu_prev.clone(), sigma_prev / phi))
}

/// Conditional moments of `beta_j | beta_{j+1}` under the discount joint:
/// `m = (1 - phi) mu_j + phi beta_next`, `C = (1 - phi) Sigma_j`.
pub fn backward_proposal_moments(
    mu_fwd: &DVector<f64>,
    sigma_fwd: &DMatrix<f64>,
    beta_next: &[f64],
    phi: f64,
) -> Result<GaussianSummary> {
    check_phi(phi)?;
    let next = DVector::from_column_slice(beta_next);
    let mean = mu_fwd * (1.0 - phi) + next * phi;
    let mut cov = sigma_fwd * (1.0 - phi);
    symmetrize(&mut cov);
    CholeskyFactor::new(&cov, "backward proposal covariance")?;
    Ok(GaussianSummary::new(mean, cov))
}

/// Smoothing proposal: the backward conditioning applied to the forward
/// proposal moments `(m_j, C_j)` of the chosen ancestor.
pub fn smoothing_proposal_moments(forward: &GaussianSummary, beta_next: &[f64], phi: f64) -> Result<GaussianSummary> {
    backward_proposal_moments(&forward.mean, &forward.cov, beta_next, phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Phase, StreamSeed};
    use rand::Rng;

    fn one_entry(z: &[f64], t: f64, d: bool) -> IntervalSlice {
        let mut s = IntervalSlice::new(z.len());
        s.push(0, t, d, z);
        s
    }

    #[test]
    fn hyperparameter_closed_forms() {
        let mut diag = ProposalDiagnostics::default();
        let h = gamma_hyperparameters(&[0.0], &DMatrix::identity(1, 1), &[1.0], &mut diag);
        assert_eq!((h.alpha, h.psi), (1.0, 1.0));
        let h = gamma_hyperparameters(&[2f64.ln()], &(DMatrix::identity(1, 1) * 0.5), &[1.0], &mut diag);
        assert!((h.alpha - 2.0).abs() < 1e-15 && (h.psi - 1.0).abs() < 1e-15);
        assert_eq!(diag.q_clamped, 0);
    }

    #[test]
    fn degenerate_direction_is_clamped_and_counted() {
        let mut diag = ProposalDiagnostics::default();
        let u = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let h = gamma_hyperparameters(&[0.0, 0.0], &u, &[0.0, 1.0], &mut diag);
        assert_eq!(diag.q_clamped, 1);
        assert_eq!(h.alpha, 1.0 / Q_MIN);
    }

    #[test]
    fn laplace_examples() {
        let h = GammaHyper { alpha: 1.0, psi: 1.0 };
        assert_eq!(laplace_eta_moments(h, 0.0, false), (0.0, 1.0));
        assert_eq!(laplace_eta_moments(h, 1.0, true), (0.0, 0.5));
    }

    #[test]
    fn no_information_entry_leaves_moments_unchanged() {
        let u = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let beta = [0.4, -1.0];
        let mut diag = ProposalDiagnostics::default();
        let g = forward_proposal_moments(&beta, &u, &one_entry(&[1.0, 0.5], 0.0, false), &mut diag).unwrap();
        assert_eq!(g.mean.as_slice(), &beta);
        assert_eq!(g.cov, u);
    }

    #[test]
    fn scalar_event_update() {
        let mut diag = ProposalDiagnostics::default();
        let g = forward_proposal_moments(
            &[0.0],
            &DMatrix::identity(1, 1),
            &one_entry(&[1.0], 0.0, true),
            &mut diag,
        )
        .unwrap();
        assert!((g.mean[0] - 2f64.ln()).abs() < 1e-15);
        assert!((g.cov[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn shared_recursion_matches_per_ancestor_recursion() {
        let mut rng = StreamSeed::new(5).stream(Phase::Evaluation, 0, 0);
        let mut slice = IntervalSlice::new(3);
        for i in 0..40 {
            let z = [1.0, rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            slice.push(i, rng.random_range(0.0..2.0), rng.random_bool(0.3), &z);
        }
        let u = DMatrix::from_row_slice(3, 3, &[1.0, 0.1, 0.0, 0.1, 0.5, -0.1, 0.0, -0.1, 0.8]);
        let rec = ForwardRecursion::new(&u, &slice).unwrap();
        for _ in 0..5 {
            let beta = [rng.random_range(-3.0..1.0), rng.random_range(-1.0..1.0), 0.2];
            let mut diag = ProposalDiagnostics::default();
            let lit = forward_proposal_moments(&beta, &u, &slice, &mut diag).unwrap();
            let m = rec.mean(&slice, &beta);
            for (a, b) in m.iter().zip(lit.mean.iter()) {
                assert!((a - b).abs() < 1e-10);
            }
            assert!((rec.covariance() - &lit.cov).norm() < 1e-12);
        }
    }

    #[test]
    fn artificial_prior_examples() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        let mu = DVector::from_vec(vec![0.5, -0.5]);
        let g = artificial_prior(&mu, &i2, 0.5).unwrap();
        assert_eq!(g.cov, &i2 * 2.0);
        assert_eq!(g.mean, mu);
        assert_eq!(artificial_prior(&mu, &i2, 1.0).unwrap().cov, i2);
        let sigma = DMatrix::from_row_slice(2, 2, &[2.0, 0.4, 0.4, 1.0]);
        let phi = 0.37;
        let direct = artificial_prior(&mu, &sigma, phi).unwrap().cov;
        let via_discount = &sigma + &sigma * (1.0 / phi - 1.0);
        assert!((direct - via_discount).norm() < 1e-14);
    }

    #[test]
    fn backward_proposal_examples() {
        let s = DMatrix::<f64>::identity(1, 1) * 3.0;
        let g = backward_proposal_moments(&DVector::from_vec(vec![0.0]), &s, &[2.0], 0.5).unwrap();
        assert_eq!(g.mean[0], 1.0);
        assert_eq!(g.cov[(0, 0)], 1.5);
        let mu = DVector::from_vec(vec![0.3, -0.2]);
        let g = backward_proposal_moments(&mu, &DMatrix::identity(2, 2), &[0.3, -0.2], 0.81).unwrap();
        assert!((&g.mean - &mu).norm() < 1e-15);
        assert!(backward_proposal_moments(&mu, &DMatrix::identity(2, 2), &[0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn smoothing_proposal_examples() {
        let fwd = GaussianSummary::new(DVector::from_vec(vec![0.0]), DMatrix::identity(1, 1));
        assert_eq!(smoothing_proposal_moments(&fwd, &[2.0], 0.5).unwrap().mean[0], 1.0);
        let g = smoothing_proposal_moments(&fwd, &[2.0], 1e-12).unwrap();
        assert!((g.mean[0]).abs() < 1e-11 && (g.cov[(0, 0)] - 1.0).abs() < 1e-11);
    }
}
