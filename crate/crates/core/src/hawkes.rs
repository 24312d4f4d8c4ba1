//! Hawkes process with exponential decay as a predictive model.
//!
//! The conditional intensity of a segment only sees the segment's own events:
//!
//! ```text
//! λ(t) = μ + γ Σ_{y_k < t} exp(-δ (t - y_k))
//! ```
//!
//! Parameters are tracked as `η = (ln μ, ln γ, ln δ)` with an isotropic
//! Gaussian prior on `η`. All sums over past events use the usual O(1)
//! recursion for exponential kernels, so a segment of `n` events costs O(n).

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Exp1};

use crate::model::{GaussianPrior, LikelihoodTerms, Model, ParamVector, Segment};

/// Natural Hawkes parameters `(μ, γ, δ)`, all positive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HawkesParams {
    pub mu: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl HawkesParams {
    pub fn new(mu: f64, gamma: f64, delta: f64) -> Self {
        Self { mu, gamma, delta }
    }

    /// From log-parameters `(ln μ, ln γ, ln δ)`.
    pub fn from_log(eta: &[f64]) -> Self {
        Self {
            mu: eta[0].exp(),
            gamma: eta[1].exp(),
            delta: eta[2].exp(),
        }
    }

    pub fn to_log(&self) -> ParamVector {
        DVector::from_vec(vec![self.mu.ln(), self.gamma.ln(), self.delta.ln()])
    }
}

/// Events of one segment together with the time its observation window opens.
#[derive(Clone, Copy, Debug)]
pub struct EventSegment<'a> {
    pub events: &'a [f64],
    /// `y_{τ-1}`, or `0` for a segment that starts the stream.
    pub open: f64,
}

impl<'a> EventSegment<'a> {
    pub fn new(events: &'a [f64], open: f64) -> Self {
        Self { events, open }
    }

    pub fn last_time(&self) -> f64 {
        self.events.last().copied().unwrap_or(self.open)
    }
}

impl<'a> From<&Segment<'a>> for EventSegment<'a> {
    fn from(seg: &Segment<'a>) -> Self {
        Self {
            events: seg.observations,
            open: seg.left_boundary.unwrap_or(0.0),
        }
    }
}

/// `λ(t)` using the events strictly before `t`.
pub fn intensity(t: f64, seg: &EventSegment<'_>, p: &HawkesParams) -> f64 {
    let excitation: f64 = seg
        .events
        .iter()
        .take_while(|&&y| y < t)
        .map(|&y| (-p.delta * (t - y)).exp())
        .sum();
    p.mu + p.gamma * excitation
}

/// `Λ((a, b]) = ∫_a^b λ(t) dt` in closed form.
pub fn compensator(a: f64, b: f64, seg: &EventSegment<'_>, p: &HawkesParams) -> f64 {
    let decayed: f64 = seg
        .events
        .iter()
        .take_while(|&&y| y < b)
        .map(|&y| (-p.delta * (a.max(y) - y)).exp() - (-p.delta * (b - y)).exp())
        .sum();
    p.mu * (b - a) + p.gamma / p.delta * decayed
}

/// Per-event recursion state: `A_i = Σ_{k<i} e^{-δ(y_i - y_k)}` and
/// `B_i = Σ_{k<i} (y_i - y_k) e^{-δ(y_i - y_k)}`.
struct Recursion {
    a: f64,
    b: f64,
}

fn for_each_event(
    events: &[f64],
    delta: f64,
    mut f: impl FnMut(usize, f64, &Recursion),
) -> Recursion {
    let mut state = Recursion { a: 0.0, b: 0.0 };
    for (i, &y) in events.iter().enumerate() {
        if i > 0 {
            let gap = y - events[i - 1];
            let e = (-delta * gap).exp();
            state = Recursion {
                a: e * (state.a + 1.0),
                b: e * (state.b + gap * (state.a + 1.0)),
            };
        }
        f(i, y, &state);
    }
    state
}

/// `log p(y_next | Y_τ, θ) = log λ(y_next) - Λ((last, y_next])`.
///
/// Returns `-inf` when `y_next` does not come after the segment's last time.
pub fn log_predictive(y_next: f64, seg: &EventSegment<'_>, p: &HawkesParams) -> f64 {
    let last = seg.last_time();
    if !(y_next > last) {
        return f64::NEG_INFINITY;
    }
    let dt = y_next - last;
    // Excitation carried just after the last event.
    let carried = if seg.events.is_empty() {
        0.0
    } else {
        for_each_event(seg.events, p.delta, |_, _, _| {}).a + 1.0
    };
    let e = (-p.delta * dt).exp();
    let lambda = p.mu + p.gamma * carried * e;
    let comp = p.mu * dt + p.gamma / p.delta * carried * (1.0 - e);
    lambda.ln() - comp
}

/// `Σ_i log λ(y_i) - Λ((open, last])` over the segment's events.
pub fn log_likelihood(seg: &EventSegment<'_>, p: &HawkesParams) -> f64 {
    likelihood_terms(seg, p).log_likelihood
}

/// Gradient of [`log_likelihood`] with respect to `(ln μ, ln γ, ln δ)`.
pub fn grad_log_likelihood(seg: &EventSegment<'_>, p: &HawkesParams) -> Vector3<f64> {
    likelihood_terms(seg, p).gradient
}

/// `Σ_i ∇ log λ(y_i) ∇ log λ(y_i)ᵀ` with respect to `(ln μ, ln γ, ln δ)`.
pub fn fisher_information(seg: &EventSegment<'_>, p: &HawkesParams) -> Matrix3<f64> {
    likelihood_terms(seg, p).fisher
}

/// Posterior Hessian approximation: prior curvature `σ0⁻² I` plus Fisher information.
pub fn posterior_hessian(seg: &EventSegment<'_>, p: &HawkesParams, prior_sd: f64) -> Matrix3<f64> {
    fisher_information(seg, p) + Matrix3::identity() / (prior_sd * prior_sd)
}

/// Log-likelihood, gradient and Fisher information sharing one pass over the events.
#[derive(Clone, Debug)]
pub struct HawkesTerms {
    pub log_likelihood: f64,
    pub gradient: Vector3<f64>,
    pub fisher: Matrix3<f64>,
}

pub fn likelihood_terms(seg: &EventSegment<'_>, p: &HawkesParams) -> HawkesTerms {
    let HawkesParams { mu, gamma, delta } = *p;
    let mut sum_log = 0.0;
    // Σ 1/λ_i, Σ A_i/λ_i, Σ B_i/λ_i
    let (mut s_inv, mut s_a, mut s_b) = (0.0, 0.0, 0.0);
    let mut fisher = Matrix3::zeros();
    let last = for_each_event(seg.events, delta, |_, _, r| {
        let lambda = mu + gamma * r.a;
        sum_log += lambda.ln();
        s_inv += 1.0 / lambda;
        s_a += r.a / lambda;
        s_b += r.b / lambda;
        let g = Vector3::new(
            mu / lambda,
            gamma * r.a / lambda,
            -gamma * delta * r.b / lambda,
        );
        fisher += g * g.transpose();
    });
    let n = seg.events.len();
    if n == 0 {
        return HawkesTerms {
            log_likelihood: 0.0,
            gradient: Vector3::zeros(),
            fisher,
        };
    }
    let span = seg.last_time() - seg.open;
    // Σ_{k<n} (1 - e^{-δ(y_n - y_k)})
    let mass = (n - 1) as f64 - last.a;
    let comp = mu * span + gamma / delta * mass;
    let d_mu = s_inv - span;
    let d_gamma = s_a - mass / delta;
    let d_delta = -gamma * s_b + gamma / (delta * delta) * mass - gamma / delta * last.b;
    HawkesTerms {
        log_likelihood: sum_log - comp,
        gradient: Vector3::new(mu * d_mu, gamma * d_gamma, delta * d_delta),
        fisher,
    }
}

/// Draws the next arrival after the segment's last time by Ogata thinning.
///
/// The intensity only decays between events, so its value just after the
/// current time bounds it on the whole future; the bound is tightened after
/// every rejection.
pub fn sample_next_event(seg: &EventSegment<'_>, p: &HawkesParams, rng: &mut dyn RngCore) -> f64 {
    let anchor = seg.last_time();
    let carried = if seg.events.is_empty() {
        0.0
    } else {
        for_each_event(seg.events, p.delta, |_, _, _| {}).a + 1.0
    };
    let rate_at = |t: f64| p.mu + p.gamma * carried * (-p.delta * (t - anchor)).exp();
    let mut t = anchor;
    let mut bound = rate_at(t);
    loop {
        let w: f64 = Exp1.sample(rng);
        t += w / bound;
        let rate = rate_at(t);
        let u: f64 = rng.random();
        if u * bound <= rate {
            return t;
        }
        bound = rate;
    }
}

/// Simulates `count` events of a fresh segment (empty history) opening at `open`.
pub fn simulate_segment(
    open: f64,
    count: usize,
    p: &HawkesParams,
    rng: &mut dyn RngCore,
) -> Vec<f64> {
    let mut events = Vec::with_capacity(count);
    for _ in 0..count {
        let next = sample_next_event(&EventSegment::new(&events, open), p, rng);
        events.push(next);
    }
    events
}

/// Log-parameters of the two alternating regimes of the synthetic benchmark.
pub const SYNTH_REGIMES: [[f64; 3]; 2] = [[-1.0, -2.0, 1.0], [2.0, 4.0, 0.0]];
pub const SYNTH_LEN: usize = 60;
pub const SYNTH_PERIOD: usize = 10;

/// Synthetic trajectory with known changepoints.
#[derive(Clone, Debug)]
pub struct SynthTrajectory {
    pub events: Vec<f64>,
    /// 1-based indices of the first event of every new regime.
    pub changepoints: Vec<usize>,
    /// `(first index, log-parameters)` of every generated segment.
    pub segments: Vec<(usize, [f64; 3])>,
}

impl SynthTrajectory {
    /// Start index of the true segment containing observation `m` (1-based).
    pub fn segment_start(&self, m: usize) -> usize {
        self.segments
            .iter()
            .rev()
            .find(|(s, _)| *s <= m)
            .map_or(1, |(s, _)| *s)
    }
}

/// Sixty events whose generating parameters switch at observations 10, 20, …, 60,
/// alternating between the two [`SYNTH_REGIMES`] and starting with the first.
/// The history is reset at every changepoint.
pub fn synth_benchmark(rng: &mut dyn RngCore) -> SynthTrajectory {
    let changepoints: Vec<usize> = (1..=SYNTH_LEN / SYNTH_PERIOD)
        .map(|k| k * SYNTH_PERIOD)
        .collect();
    let mut starts = vec![1];
    starts.extend(&changepoints);
    let mut events = Vec::with_capacity(SYNTH_LEN);
    let mut segments = Vec::with_capacity(starts.len());
    for (i, &start) in starts.iter().enumerate() {
        let end = starts.get(i + 1).map_or(SYNTH_LEN, |&s| s - 1);
        let eta = SYNTH_REGIMES[i % 2];
        let open = events.last().copied().unwrap_or(0.0);
        let seg = simulate_segment(open, end + 1 - start, &HawkesParams::from_log(&eta), rng);
        events.extend(seg);
        segments.push((start, eta));
    }
    SynthTrajectory {
        events,
        changepoints,
        segments,
    }
}

/// Hawkes process with a Gaussian prior on the log-parameters.
#[derive(Clone, Copy, Debug)]
pub struct HawkesModel {
    pub prior: GaussianPrior,
}

impl HawkesModel {
    pub fn new(prior: GaussianPrior) -> Self {
        Self { prior }
    }

    /// Uninformative setting `ln θ ~ N(0, 10 I)`.
    pub fn uninformative() -> Self {
        Self::new(GaussianPrior {
            mean: 0.0,
            variance: 10.0,
        })
    }

    /// Standard Gaussian prior, used for the synthetic benchmark.
    pub fn standard() -> Self {
        Self::new(GaussianPrior::standard())
    }
}

impl Default for HawkesModel {
    fn default() -> Self {
        Self::uninformative()
    }
}

impl Model for HawkesModel {
    fn dim(&self) -> usize {
        3
    }

    fn log_prior(&self, theta: &ParamVector) -> f64 {
        self.prior.log_density(theta)
    }

    fn grad_log_prior(&self, theta: &ParamVector) -> ParamVector {
        self.prior.gradient(theta)
    }

    fn prior_precision_diag(&self) -> ParamVector {
        self.prior.precision_diag(3)
    }

    fn log_likelihood(&self, seg: &Segment<'_>, theta: &ParamVector) -> f64 {
        log_likelihood(&seg.into(), &HawkesParams::from_log(theta.as_slice()))
    }

    fn grad_log_likelihood(&self, seg: &Segment<'_>, theta: &ParamVector) -> ParamVector {
        let g = grad_log_likelihood(&seg.into(), &HawkesParams::from_log(theta.as_slice()));
        DVector::from_column_slice(g.as_slice())
    }

    fn fisher_information(&self, seg: &Segment<'_>, theta: &ParamVector) -> DMatrix<f64> {
        let f = fisher_information(&seg.into(), &HawkesParams::from_log(theta.as_slice()));
        DMatrix::from_column_slice(3, 3, f.as_slice())
    }

    fn log_predictive(&self, seg: &Segment<'_>, y_next: f64, theta: &ParamVector) -> f64 {
        log_predictive(
            y_next,
            &seg.into(),
            &HawkesParams::from_log(theta.as_slice()),
        )
    }

    fn sample_prior(&self, rng: &mut dyn RngCore) -> ParamVector {
        self.prior.sample(3, rng)
    }

    fn sample_predictive(
        &self,
        seg: &Segment<'_>,
        theta: &ParamVector,
        rng: &mut dyn RngCore,
    ) -> f64 {
        sample_next_event(&seg.into(), &HawkesParams::from_log(theta.as_slice()), rng)
    }

    fn likelihood_terms(&self, seg: &Segment<'_>, theta: &ParamVector) -> LikelihoodTerms {
        let t = likelihood_terms(&seg.into(), &HawkesParams::from_log(theta.as_slice()));
        LikelihoodTerms {
            log_likelihood: t.log_likelihood,
            gradient: DVector::from_column_slice(t.gradient.as_slice()),
            fisher: DMatrix::from_column_slice(3, 3, t.fisher.as_slice()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn intensity_examples() {
        let p = HawkesParams::new(0.5, 2.0, 1.0);
        assert_eq!(intensity(3.0, &EventSegment::new(&[], 0.0), &p), 0.5);
        let seg = EventSegment::new(&[1.0], 0.0);
        assert_relative_eq!(
            intensity(2.0, &seg, &p),
            0.5 + 2.0 * (-1.0f64).exp(),
            max_relative = 1e-15
        );
        assert_relative_eq!(intensity(1.0 + 1e-12, &seg, &p), 2.5, max_relative = 1e-10);
        // the event at t itself does not count
        assert_eq!(intensity(1.0, &seg, &p), 0.5);
    }

    #[test]
    fn compensator_examples() {
        let seg = EventSegment::new(&[1.0], 0.0);
        let p = HawkesParams::new(0.0, 2.0, 1.0);
        assert_relative_eq!(
            compensator(1.0, 2.0, &seg, &p),
            2.0 * (1.0 - (-1.0f64).exp()),
            max_relative = 1e-14
        );
        let poisson = HawkesParams::new(1.3, 0.0, 1.0);
        assert_relative_eq!(
            compensator(0.5, 2.5, &seg, &poisson),
            2.6,
            max_relative = 1e-14
        );
        assert_eq!(compensator(1.7, 1.7, &seg, &p), 0.0);
    }

    #[test]
    fn poisson_likelihood_and_score() {
        let seg = EventSegment::new(&[1.0, 2.0, 3.0], 0.0);
        let p = HawkesParams::new(1.0, 0.0, 1.0);
        let t = likelihood_terms(&seg, &p);
        assert_relative_eq!(t.log_likelihood, -3.0, max_relative = 1e-15);
        assert_eq!(t.gradient[0], 0.0);
        assert_eq!(t.gradient[2], 0.0);
        let mut expected = Matrix3::zeros();
        expected[(0, 0)] = 3.0;
        assert_eq!(t.fisher, expected);
        let h = posterior_hessian(&seg, &p, 1.0);
        assert_eq!(h, Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0)));
    }

    #[test]
    fn empty_segment_terms() {
        let seg = EventSegment::new(&[], 0.0);
        let t = likelihood_terms(&seg, &HawkesParams::new(0.7, 1.2, 0.4));
        assert_eq!(t.log_likelihood, 0.0);
        assert_eq!(t.gradient, Vector3::zeros());
        assert_eq!(t.fisher, Matrix3::zeros());
        assert_eq!(
            posterior_hessian(&seg, &HawkesParams::new(1.0, 1.0, 1.0), 2.0),
            Matrix3::identity() * 0.25
        );
    }

    #[test]
    fn empty_segment_predictive_is_exponential() {
        let p = HawkesParams::new(0.8, 5.0, 2.0);
        let seg = EventSegment::new(&[], 1.5);
        assert_relative_eq!(
            log_predictive(2.5, &seg, &p),
            0.8f64.ln() - 0.8,
            max_relative = 1e-14
        );
        assert_eq!(log_predictive(1.0, &seg, &p), f64::NEG_INFINITY);
    }

    #[test]
    fn chain_rule_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = HawkesParams::new(0.9, 1.4, 2.1);
        let events = simulate_segment(0.25, 12, &p, &mut rng);
        let seg = EventSegment::new(&events, 0.25);
        let chain: f64 = (0..events.len())
            .map(|i| log_predictive(events[i], &EventSegment::new(&events[..i], 0.25), &p))
            .sum();
        assert_relative_eq!(chain, log_likelihood(&seg, &p), max_relative = 1e-12);
    }

    #[test]
    fn thinning_replays_with_seed() {
        let p = HawkesParams::new(0.5, 3.0, 1.5);
        let seg = EventSegment::new(&[0.2, 0.9], 0.0);
        let a = sample_next_event(&seg, &p, &mut ChaCha8Rng::seed_from_u64(11));
        let b = sample_next_event(&seg, &p, &mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(a, b);
        assert!(a > 0.9);
    }

    #[test]
    fn synth_layout() {
        let traj = synth_benchmark(&mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(traj.events.len(), 60);
        assert_eq!(traj.changepoints, vec![10, 20, 30, 40, 50, 60]);
        assert!(traj.events.windows(2).all(|w| w[1] > w[0]));
        assert!(traj.events[0] > 0.0);
        assert_eq!(traj.segments[0], (1, SYNTH_REGIMES[0]));
        assert_eq!(traj.segments[1], (10, SYNTH_REGIMES[1]));
        assert_eq!(traj.segment_start(15), 10);
        assert_eq!(traj.segment_start(9), 1);
        assert_eq!(traj.segment_start(60), 60);
    }
}
