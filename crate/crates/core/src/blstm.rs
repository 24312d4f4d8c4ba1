//! Bayesian LSTM predictive model.
//!
//! A single-layer LSTM with three hidden units reads the segment one scalar
//! at a time; an affine readout of the hidden state predicts the next value
//! with Gaussian noise `σ`. The network has exactly 64 weights, stored flat:
//!
//! | offset | content                                   |
//! |--------|-------------------------------------------|
//! | 15·q   | gate `q` input weights (3)                 |
//! | 15·q+3 | gate `q` recurrent weights (3×3, row-major)|
//! | 15·q+12| gate `q` biases (3)                        |
//! | 60     | readout weights (3)                        |
//! | 63     | readout bias                               |
//!
//! with gates ordered input, forget, cell candidate, output. Hidden and cell
//! states start at zero for every segment, so an empty segment predicts the
//! readout bias.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{GaussianPrior, LikelihoodTerms, Model, ParamVector, Segment};
use crate::numeric::LN_2PI;

pub const HIDDEN: usize = 3;
pub const GATE_BLOCK: usize = HIDDEN + HIDDEN * HIDDEN + HIDDEN;
pub const READOUT: usize = 4 * GATE_BLOCK;
pub const PARAMS: usize = READOUT + HIDDEN + 1;
const BIAS_OUT: usize = PARAMS - 1;

const INPUT: usize = 0;
const FORGET: usize = 1;
const CANDIDATE: usize = 2;
const OUTPUT: usize = 3;

type Vec3 = [f64; HIDDEN];
type Tangent = [[f64; PARAMS]; HIDDEN];

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn w_x(theta: &[f64], gate: usize, r: usize) -> f64 {
    theta[gate * GATE_BLOCK + r]
}

#[inline]
fn w_h_index(gate: usize, r: usize, c: usize) -> usize {
    gate * GATE_BLOCK + HIDDEN + r * HIDDEN + c
}

#[inline]
fn bias_index(gate: usize, r: usize) -> usize {
    gate * GATE_BLOCK + HIDDEN + HIDDEN * HIDDEN + r
}

/// Activations of one recurrence step.
#[derive(Clone, Copy, Debug, Default)]
struct Step {
    x: f64,
    h_prev: Vec3,
    c_prev: Vec3,
    gates: [Vec3; 4],
    c: Vec3,
    tanh_c: Vec3,
    h: Vec3,
}

fn step(theta: &[f64], x: f64, h_prev: Vec3, c_prev: Vec3) -> Step {
    let mut gates = [[0.0; HIDDEN]; 4];
    for (q, gate) in gates.iter_mut().enumerate() {
        for r in 0..HIDDEN {
            let mut a = w_x(theta, q, r) * x + theta[bias_index(q, r)];
            for c in 0..HIDDEN {
                a += theta[w_h_index(q, r, c)] * h_prev[c];
            }
            gate[r] = if q == CANDIDATE { a.tanh() } else { sigmoid(a) };
        }
    }
    let mut c = [0.0; HIDDEN];
    let mut tanh_c = [0.0; HIDDEN];
    let mut h = [0.0; HIDDEN];
    for r in 0..HIDDEN {
        c[r] = gates[FORGET][r] * c_prev[r] + gates[INPUT][r] * gates[CANDIDATE][r];
        tanh_c[r] = c[r].tanh();
        h[r] = gates[OUTPUT][r] * tanh_c[r];
    }
    Step {
        x,
        h_prev,
        c_prev,
        gates,
        c,
        tanh_c,
        h,
    }
}

fn readout(theta: &[f64], h: &Vec3) -> f64 {
    theta[BIAS_OUT] + (0..HIDDEN).map(|r| theta[READOUT + r] * h[r]).sum::<f64>()
}

fn check_len(theta: &[f64]) {
    assert_eq!(
        theta.len(),
        PARAMS,
        "LSTM parameter vector must have {PARAMS} entries"
    );
}

fn run(theta: &[f64], ys: &[f64]) -> Vec<Step> {
    let mut steps = Vec::with_capacity(ys.len());
    let (mut h, mut c) = ([0.0; HIDDEN], [0.0; HIDDEN]);
    for &y in ys {
        let s = step(theta, y, h, c);
        h = s.h;
        c = s.c;
        steps.push(s);
    }
    steps
}

/// Many-to-one output `F_{y_{τ:m}}(θ)`: readout of the final hidden state.
pub fn forward_one(ys: &[f64], theta: &[f64]) -> f64 {
    check_len(theta);
    let h = run(theta, ys).last().map_or([0.0; HIDDEN], |s| s.h);
    readout(theta, &h)
}

/// Many-to-many outputs `[F_∅, F_{y_τ}, …, F_{y_{τ:m}}]` from a single sweep.
pub fn forward_many(ys: &[f64], theta: &[f64]) -> Vec<f64> {
    check_len(theta);
    let mut out = Vec::with_capacity(ys.len() + 1);
    out.push(theta[BIAS_OUT]);
    out.extend(run(theta, ys).iter().map(|s| readout(theta, &s.h)));
    out
}

/// `log N(y_{τ:m}; [F_∅, …, F_{y_{τ:m-1}}], σ² I)`: each prefix output predicts the next value.
pub fn log_likelihood(ys: &[f64], theta: &[f64], sigma: f64) -> f64 {
    let preds = forward_many(ys, theta);
    let var = sigma * sigma;
    ys.iter()
        .zip(&preds)
        .map(|(y, f)| -0.5 * (f - y).powi(2) / var - 0.5 * (LN_2PI + var.ln()))
        .sum()
}

/// Gradient of [`log_likelihood`] by backpropagation through time.
pub fn grad_log_likelihood(ys: &[f64], theta: &[f64], sigma: f64) -> Vec<f64> {
    check_len(theta);
    let mut grad = vec![0.0; PARAMS];
    let n = ys.len();
    if n == 0 {
        return grad;
    }
    let var = sigma * sigma;
    let steps = run(theta, &ys[..n - 1]);
    // residual weight dL/dF_i for prefix i = 0..n-1
    let weight = |i: usize, f: f64| -(f - ys[i]) / var;

    grad[BIAS_OUT] += weight(0, theta[BIAS_OUT]);
    let mut dh_direct = vec![[0.0; HIDDEN]; steps.len()];
    for (t, s) in steps.iter().enumerate() {
        let w = weight(t + 1, readout(theta, &s.h));
        grad[BIAS_OUT] += w;
        for r in 0..HIDDEN {
            grad[READOUT + r] += w * s.h[r];
            dh_direct[t][r] = w * theta[READOUT + r];
        }
    }

    let mut dh_next = [0.0; HIDDEN];
    let mut dc_next = [0.0; HIDDEN];
    for (t, s) in steps.iter().enumerate().rev() {
        let mut da = [[0.0; HIDDEN]; 4];
        for r in 0..HIDDEN {
            let dh = dh_direct[t][r] + dh_next[r];
            let [i, f, g, o] = [
                s.gates[INPUT][r],
                s.gates[FORGET][r],
                s.gates[CANDIDATE][r],
                s.gates[OUTPUT][r],
            ];
            let dc = dc_next[r] + dh * o * (1.0 - s.tanh_c[r] * s.tanh_c[r]);
            da[OUTPUT][r] = dh * s.tanh_c[r] * o * (1.0 - o);
            da[INPUT][r] = dc * g * i * (1.0 - i);
            da[CANDIDATE][r] = dc * i * (1.0 - g * g);
            da[FORGET][r] = dc * s.c_prev[r] * f * (1.0 - f);
            dc_next[r] = dc * f;
        }
        dh_next = [0.0; HIDDEN];
        for (q, da_q) in da.iter().enumerate() {
            for r in 0..HIDDEN {
                grad[q * GATE_BLOCK + r] += da_q[r] * s.x;
                grad[bias_index(q, r)] += da_q[r];
                for c in 0..HIDDEN {
                    grad[w_h_index(q, r, c)] += da_q[r] * s.h_prev[c];
                    dh_next[c] += theta[w_h_index(q, r, c)] * da_q[r];
                }
            }
        }
    }
    grad
}

/// Jacobians `∇_θ F_i` of every prefix output, `i = 0..=limit`, by forward tangent propagation.
fn prefix_jacobians(ys: &[f64], theta: &[f64], limit: usize) -> (Vec<f64>, Vec<[f64; PARAMS]>) {
    check_len(theta);
    let mut outputs = Vec::with_capacity(limit + 1);
    let mut jacobians = Vec::with_capacity(limit + 1);
    let mut j0 = [0.0; PARAMS];
    j0[BIAS_OUT] = 1.0;
    outputs.push(theta[BIAS_OUT]);
    jacobians.push(j0);

    let (mut h, mut c) = ([0.0; HIDDEN], [0.0; HIDDEN]);
    let mut dh: Box<Tangent> = Box::new([[0.0; PARAMS]; HIDDEN]);
    let mut dc: Box<Tangent> = Box::new([[0.0; PARAMS]; HIDDEN]);
    let mut da: Box<[Tangent; 4]> = Box::new([[[0.0; PARAMS]; HIDDEN]; 4]);

    for &x in ys.iter().take(limit) {
        let s = step(theta, x, h, c);
        for q in 0..4 {
            for r in 0..HIDDEN {
                let row = &mut da[q][r];
                for (p, v) in row.iter_mut().enumerate() {
                    *v = (0..HIDDEN)
                        .map(|k| theta[w_h_index(q, r, k)] * dh[k][p])
                        .sum();
                }
                row[q * GATE_BLOCK + r] += x;
                row[bias_index(q, r)] += 1.0;
                for k in 0..HIDDEN {
                    row[w_h_index(q, r, k)] += h[k];
                }
                let g = s.gates[q][r];
                let slope = if q == CANDIDATE {
                    1.0 - g * g
                } else {
                    g * (1.0 - g)
                };
                for v in row.iter_mut() {
                    *v *= slope;
                }
            }
        }
        for r in 0..HIDDEN {
            let [i, f, g, o] = [
                s.gates[INPUT][r],
                s.gates[FORGET][r],
                s.gates[CANDIDATE][r],
                s.gates[OUTPUT][r],
            ];
            let dtanh = 1.0 - s.tanh_c[r] * s.tanh_c[r];
            for p in 0..PARAMS {
                let dcp = da[FORGET][r][p] * c[r]
                    + f * dc[r][p]
                    + da[INPUT][r][p] * g
                    + i * da[CANDIDATE][r][p];
                dc[r][p] = dcp;
                dh[r][p] = da[OUTPUT][r][p] * s.tanh_c[r] + o * dtanh * dcp;
            }
        }
        h = s.h;
        c = s.c;

        let mut jac = [0.0; PARAMS];
        for r in 0..HIDDEN {
            let w = theta[READOUT + r];
            for p in 0..PARAMS {
                jac[p] += w * dh[r][p];
            }
            jac[READOUT + r] += h[r];
        }
        jac[BIAS_OUT] += 1.0;
        outputs.push(readout(theta, &h));
        jacobians.push(jac);
    }
    (outputs, jacobians)
}

/// `(1/σ²) Σ_i ∇F_i ∇F_iᵀ` over the prefixes paired with observations.
pub fn fisher_information(ys: &[f64], theta: &[f64], sigma: f64) -> DMatrix<f64> {
    lstm_terms(ys, theta, sigma).fisher
}

/// Likelihood, gradient and Fisher information from shared prefix Jacobians.
pub fn lstm_terms(ys: &[f64], theta: &[f64], sigma: f64) -> LikelihoodTerms {
    let mut grad = DVector::zeros(PARAMS);
    let mut fisher = DMatrix::zeros(PARAMS, PARAMS);
    let n = ys.len();
    if n == 0 {
        return LikelihoodTerms {
            log_likelihood: 0.0,
            gradient: grad,
            fisher,
        };
    }
    let var = sigma * sigma;
    let (outputs, jacobians) = prefix_jacobians(ys, theta, n - 1);
    let mut ll = 0.0;
    for i in 0..n {
        let resid = outputs[i] - ys[i];
        ll += -0.5 * resid * resid / var - 0.5 * (LN_2PI + var.ln());
        let j = DVector::from_row_slice(&jacobians[i]);
        grad.axpy(-resid / var, &j, 1.0);
        fisher.ger(1.0 / var, &j, &j, 1.0);
    }
    LikelihoodTerms {
        log_likelihood: ll,
        gradient: grad,
        fisher,
    }
}

/// Noisy sinusoid `y_j = sin(j) + noise_sd·ξ_j`, `j = 0..n`.
pub fn sinusoid_data(n: usize, noise_sd: f64, rng: &mut dyn RngCore) -> Vec<f64> {
    (0..n)
        .map(|j| {
            let z: f64 = StandardNormal.sample(rng);
            (j as f64).sin() + noise_sd * z
        })
        .collect()
}

/// LSTM predictive model with a Gaussian prior on all weights.
#[derive(Clone, Copy, Debug)]
pub struct BlstmModel {
    pub prior: GaussianPrior,
    sigma: f64,
}

impl BlstmModel {
    pub fn new(prior: GaussianPrior, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Config(format!(
                "likelihood noise must be positive, got {sigma}"
            )));
        }
        Ok(Self { prior, sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

impl Model for BlstmModel {
    fn dim(&self) -> usize {
        PARAMS
    }

    fn log_prior(&self, theta: &ParamVector) -> f64 {
        self.prior.log_density(theta)
    }

    fn grad_log_prior(&self, theta: &ParamVector) -> ParamVector {
        self.prior.gradient(theta)
    }

    fn prior_precision_diag(&self) -> ParamVector {
        self.prior.precision_diag(PARAMS)
    }

    fn log_likelihood(&self, seg: &Segment<'_>, theta: &ParamVector) -> f64 {
        log_likelihood(seg.observations, theta.as_slice(), self.sigma)
    }

    fn grad_log_likelihood(&self, seg: &Segment<'_>, theta: &ParamVector) -> ParamVector {
        DVector::from_vec(grad_log_likelihood(
            seg.observations,
            theta.as_slice(),
            self.sigma,
        ))
    }

    fn fisher_information(&self, seg: &Segment<'_>, theta: &ParamVector) -> DMatrix<f64> {
        fisher_information(seg.observations, theta.as_slice(), self.sigma)
    }

    fn log_predictive(&self, seg: &Segment<'_>, y_next: f64, theta: &ParamVector) -> f64 {
        let f = forward_one(seg.observations, theta.as_slice());
        let var = self.sigma * self.sigma;
        -0.5 * (y_next - f).powi(2) / var - 0.5 * (LN_2PI + var.ln())
    }

    fn sample_prior(&self, rng: &mut dyn RngCore) -> ParamVector {
        self.prior.sample(PARAMS, rng)
    }

    fn sample_predictive(
        &self,
        seg: &Segment<'_>,
        theta: &ParamVector,
        rng: &mut dyn RngCore,
    ) -> f64 {
        let f = forward_one(seg.observations, theta.as_slice());
        Normal::new(f, self.sigma)
            .expect("sigma validated at construction")
            .sample(rng)
    }

    fn likelihood_terms(&self, seg: &Segment<'_>, theta: &ParamVector) -> LikelihoodTerms {
        lstm_terms(seg.observations, theta.as_slice(), self.sigma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_theta(seed: u64, scale: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..PARAMS)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                scale * z
            })
            .collect()
    }

    #[test]
    fn layout_size() {
        assert_eq!(PARAMS, 4 * HIDDEN * (HIDDEN + 2) + HIDDEN + 1);
        assert_eq!(PARAMS, 64);
    }

    #[test]
    fn empty_segment_outputs_bias() {
        let mut theta = vec![0.3; PARAMS];
        theta[BIAS_OUT] = -1.25;
        assert_eq!(forward_one(&[], &theta), -1.25);
        assert_eq!(forward_many(&[], &theta), vec![-1.25]);
        assert_eq!(log_likelihood(&[], &theta, 0.5), 0.0);
        assert!(grad_log_likelihood(&[], &theta, 0.5)
            .iter()
            .all(|&g| g == 0.0));
    }

    #[test]
    fn zero_parameters_predict_zero() {
        let theta = vec![0.0; PARAMS];
        assert_eq!(forward_one(&[1.0, -2.0, 3.0], &theta), 0.0);
        let sigma: f64 = 0.4;
        let expected = -0.7f64.powi(2) / (2.0 * sigma * sigma)
            - 0.5 * (2.0 * std::f64::consts::PI * sigma * sigma).ln();
        assert!((log_likelihood(&[0.7], &theta, sigma) - expected).abs() < 1e-14);
    }

    #[test]
    fn prefix_property() {
        let theta = random_theta(5, 0.6);
        let ys = [0.2, -0.5, 1.1, 0.9, -0.3];
        let many = forward_many(&ys, &theta);
        assert_eq!(many.len(), ys.len() + 1);
        for i in 0..=ys.len() {
            assert_eq!(many[i], forward_one(&ys[..i], &theta));
        }
    }

    #[test]
    fn bptt_agrees_with_forward_tangents() {
        let theta = random_theta(8, 0.5);
        let ys = [0.3, 0.8, -0.1, -0.9, 0.4, 1.2];
        let bptt = grad_log_likelihood(&ys, &theta, 0.3);
        let terms = lstm_terms(&ys, &theta, 0.3);
        for (p, (a, b)) in bptt.iter().zip(terms.gradient.iter()).enumerate() {
            assert!((a - b).abs() / a.abs().max(1e-8) < 1e-9, "param {p}");
        }
        assert!((terms.log_likelihood - log_likelihood(&ys, &theta, 0.3)).abs() < 1e-12);
    }

    #[test]
    fn zero_residual_gives_zero_gradient() {
        let theta = random_theta(2, 0.4);
        let mut ys = vec![0.0; 5];
        // choose each observation equal to the prediction from its prefix
        for i in 0..ys.len() {
            ys[i] = forward_one(&ys[..i], &theta);
        }
        assert!(grad_log_likelihood(&ys, &theta, 0.2)
            .iter()
            .all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn rejects_non_positive_sigma() {
        assert!(BlstmModel::new(GaussianPrior::standard(), 0.0).is_err());
    }
}
