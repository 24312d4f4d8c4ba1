use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use svocd::bocpd::{
    detect, DetectorConfig, DetectorState, EvidenceMode, HazardSpec, PredictiveSummary,
    PrunePolicy, Sampler, Sidedness, StepRecord,
};
use svocd::hawkes::{synth_benchmark, HawkesModel};
use svocd::{GaussianMeanModel, GaussianPrior};

const MU0: f64 = -0.2;
const V0: f64 = 3.0;
const NOISE: f64 = 0.6;

fn lse(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log N(ys; μ₀ 1, σ² I + v₀ 1 1ᵀ)` through a dense Cholesky factor.
fn segment_evidence(ys: &[f64]) -> f64 {
    let n = ys.len();
    let cov = DMatrix::from_fn(n, n, |i, j| V0 + if i == j { NOISE } else { 0.0 });
    let l = cov.cholesky().unwrap().l();
    let z = l
        .solve_lower_triangular(&DVector::from_fn(n, |i, _| ys[i] - MU0))
        .unwrap();
    let log_det = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + z.norm_squared())
}

/// Joint `log p(τ, y_{1:m})` for `τ = 1..=m+1`, summing over every set of
/// changepoints in `2..=m+1`.
fn enumerate_joints(ys: &[f64], p: f64) -> Vec<f64> {
    let m = ys.len();
    let mut terms = vec![Vec::new(); m + 1];
    for mask in 0u32..(1 << m) {
        let starts: Vec<usize> = std::iter::once(1)
            .chain((0..m).filter(|b| mask >> b & 1 == 1).map(|b| b + 2))
            .collect();
        let k = starts.len() - 1;
        let mut lp = k as f64 * p.ln() + (m - k) as f64 * (1.0 - p).ln();
        for (i, &s) in starts.iter().enumerate() {
            let end = starts.get(i + 1).map_or(m, |&e| e - 1);
            if s <= end {
                lp += segment_evidence(&ys[s - 1..end]);
            }
        }
        terms[starts.last().unwrap() - 1].push(lp);
    }
    terms.iter().map(|t| lse(t)).collect()
}

fn exact_config(h: f64) -> DetectorConfig {
    DetectorConfig {
        hazard: HazardSpec::new(h).unwrap(),
        particles: 8,
        predictive_draws: 8,
        sampler: Sampler::Exact,
        evidence: EvidenceMode::Exact,
        prune: PrunePolicy {
            max_hypotheses: usize::MAX,
            mass_floor: 0.0,
        },
        ..DetectorConfig::default()
    }
}

fn gaussian_model() -> GaussianMeanModel {
    GaussianMeanModel::new(GaussianPrior::new(MU0, V0).unwrap(), NOISE).unwrap()
}

fn without_timings(mut records: Vec<StepRecord>) -> Vec<StepRecord> {
    for r in &mut records {
        r.timings = Default::default();
    }
    records
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn joints_match_enumeration(ys in prop::collection::vec(-4.0f64..4.0, 1..=8), h in 1.5f64..200.0) {
        let mut state = DetectorState::new(gaussian_model(), exact_config(h)).unwrap();
        for m in 1..=ys.len() {
            state.step(ys[m - 1]).unwrap();
            let oracle = enumerate_joints(&ys[..m], 1.0 / h);
            let joints: Vec<f64> = state.hypotheses().iter().map(|h| h.log_joint).collect();
            prop_assert_eq!(joints.len(), oracle.len());
            for (j, o) in joints.iter().zip(&oracle) {
                prop_assert!(((j - o).exp() - 1.0).abs() < 1e-10, "{} vs {}", j, o);
            }
            prop_assert!((state.log_evidence() - lse(&oracle)).abs() < 1e-10);
        }
    }

    #[test]
    fn posterior_stays_normalized_and_ordered(ys in prop::collection::vec(-3.0f64..3.0, 1..25), k in 1usize..6, seed in 0u64..1000) {
        let cfg = DetectorConfig {
            particles: 12,
            predictive_draws: 12,
            iterations: 3,
            hazard: HazardSpec::new(5.0).unwrap(),
            prune: PrunePolicy { max_hypotheses: k, mass_floor: 1e-4 },
            seed,
            ..DetectorConfig::default()
        };
        let mut state = DetectorState::new(gaussian_model(), cfg).unwrap();
        for (i, &y) in ys.iter().enumerate() {
            let rec = state.step(y).unwrap();
            let total: f64 = rec.posterior.iter().map(|p| p.1).sum();
            prop_assert!((total - 1.0).abs() < 1e-10);
            prop_assert!(rec.posterior.windows(2).all(|w| w[0].0 < w[1].0));
            prop_assert_eq!(rec.posterior.last().unwrap().0, i + 2);
            prop_assert!(rec.posterior.len() <= k + 1);
        }
    }

    #[test]
    fn raising_an_observation_never_removes_an_upper_alert(mean in -5.0f64..5.0, width in 0.0f64..3.0, y in -10.0f64..10.0, bump in 0.0f64..5.0) {
        let s = PredictiveSummary { mean, lower: mean - width, upper: mean + width, samples: None };
        if detect(y, &s, Sidedness::OneSidedUpper) {
            prop_assert!(detect(y + bump, &s, Sidedness::OneSidedUpper));
        }
    }
}

#[test]
fn never_hazard_spawns_no_mass() {
    let cfg = DetectorConfig {
        hazard: HazardSpec::never(),
        ..exact_config(2.0)
    };
    let mut state = DetectorState::new(gaussian_model(), cfg).unwrap();
    for y in [0.0, 9.0, -9.0] {
        let rec = state.step(y).unwrap();
        assert_eq!(rec.posterior.last().unwrap().1, 0.0);
        assert_eq!(rec.map_tau(), 1);
    }
}

#[test]
fn exact_configuration_needs_closed_form() {
    let cfg = DetectorConfig {
        evidence: EvidenceMode::Exact,
        ..DetectorConfig::default()
    };
    assert!(DetectorState::new(HawkesModel::standard(), cfg).is_err());
}

#[test]
fn hawkes_detection_is_finite_and_repeatable() {
    for (seed, sampler) in [(0, Sampler::Svn), (1, Sampler::Smc), (2, Sampler::Svgd)] {
        let traj = synth_benchmark(&mut ChaCha8Rng::seed_from_u64(seed));
        let cfg = DetectorConfig {
            particles: 20,
            predictive_draws: 30,
            iterations: 5,
            sampler,
            seed,
            ..DetectorConfig::default()
        };
        let mut a = DetectorState::new(HawkesModel::standard(), cfg.clone()).unwrap();
        let mut b = DetectorState::new(HawkesModel::standard(), cfg).unwrap();
        let ra = without_timings(a.run(&traj.events).unwrap());
        let rb = without_timings(b.run(&traj.events).unwrap());
        assert_eq!(ra, rb);
        for rec in &ra {
            assert!(rec.posterior.iter().all(|p| p.1.is_finite()));
            assert!(
                rec.prediction.mean.is_finite() && rec.prediction.lower <= rec.prediction.upper
            );
            let total: f64 = rec.posterior.iter().map(|p| p.1).sum();
            assert!((total - 1.0).abs() < 1e-10);
        }
    }
}
