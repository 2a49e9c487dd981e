//! The t-walk: a self-adjusting MCMC sampler for continuous targets.
//!
//! The chain state is a pair of points `(x, x')` in the same space. Each
//! iteration picks one of the two points to move, using the other as a pivot,
//! with one of four kernels: traverse, walk, blow and hop. All kernels scale
//! with the distance between the two points, so no per-target tuning is needed.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TWalkSettings {
    /// Walk kernel spread.
    pub a_walk: f64,
    /// Traverse kernel spread.
    pub a_traverse: f64,
    /// Expected number of coordinates moved per iteration.
    pub expected_moved: f64,
    /// Cumulative probabilities of traverse, walk, blow (hop takes the rest).
    pub kernel_cdf: [f64; 3],
}

impl Default for TWalkSettings {
    fn default() -> Self {
        Self {
            a_walk: 1.5,
            a_traverse: 6.0,
            expected_moved: 4.0,
            kernel_cdf: [0.4918, 0.9836, 0.9918],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kernel {
    Traverse,
    Walk,
    Blow,
    Hop,
}

/// Current pair of points and their log target values.
#[derive(Debug, Clone, PartialEq)]
pub struct TWalkState {
    pub x: Vec<f64>,
    pub x_prime: Vec<f64>,
    pub log_x: f64,
    pub log_x_prime: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOutcome {
    pub kernel: Kernel,
    pub moved_first: bool,
    pub accepted: bool,
}

#[derive(Debug, Clone, Default)]
pub struct TWalk {
    settings: TWalkSettings,
}

impl TWalk {
    pub fn new(settings: TWalkSettings) -> Self {
        Self { settings }
    }

    pub fn settings(&self) -> &TWalkSettings {
        &self.settings
    }

    fn select_coordinates<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<bool> {
        let p = (self.settings.expected_moved.min(n as f64)) / n as f64;
        (0..n).map(|_| p >= 1.0 || rng.random::<f64>() < p).collect()
    }

    fn sample_beta<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let at = self.settings.a_traverse;
        let u: f64 = rng.random();
        let v: f64 = rng.random();
        if u < (at - 1.0) / (2.0 * at) {
            v.powf(1.0 / (at + 1.0))
        } else {
            v.powf(1.0 / (1.0 - at))
        }
    }

    /// Advances the chain by one iteration.
    pub fn step<R, F>(&self, state: &mut TWalkState, log_target: &mut F, rng: &mut R) -> StepOutcome
    where
        R: Rng + ?Sized,
        F: FnMut(&[f64]) -> f64,
    {
        let n = state.x.len();
        let u: f64 = rng.random();
        let [c_traverse, c_walk, c_blow] = self.settings.kernel_cdf;
        let kernel = if u < c_traverse {
            Kernel::Traverse
        } else if u < c_walk {
            Kernel::Walk
        } else if u < c_blow {
            Kernel::Blow
        } else {
            Kernel::Hop
        };
        let moved_first = rng.random::<f64>() < 0.5;
        let (moving, pivot, log_moving) = if moved_first {
            (&state.x, &state.x_prime, state.log_x)
        } else {
            (&state.x_prime, &state.x, state.log_x_prime)
        };

        let phi = self.select_coordinates(n, rng);
        let n_phi = phi.iter().filter(|&&b| b).count();
        let reject = StepOutcome {
            kernel,
            moved_first,
            accepted: false,
        };
        if n_phi == 0 {
            return reject;
        }

        let mut proposal = moving.clone();
        // Log of the Hastings correction on top of the target ratio.
        let correction;
        match kernel {
            Kernel::Walk => {
                let aw = self.settings.a_walk;
                for j in 0..n {
                    if phi[j] {
                        let v: f64 = rng.random();
                        let z = (aw / (1.0 + aw)) * (aw * v * v + 2.0 * v - 1.0);
                        proposal[j] = moving[j] + (moving[j] - pivot[j]) * z;
                    }
                }
                correction = 0.0;
            }
            Kernel::Traverse => {
                let beta = self.sample_beta(rng);
                for j in 0..n {
                    if phi[j] {
                        proposal[j] = pivot[j] + beta * (pivot[j] - moving[j]);
                    }
                }
                correction = (n_phi as f64 - 2.0) * beta.ln();
            }
            Kernel::Blow => {
                let sigma = max_gap(moving, pivot, &phi);
                if sigma <= 0.0 {
                    return reject;
                }
                for j in 0..n {
                    if phi[j] {
                        let z: f64 = StandardNormal.sample(rng);
                        proposal[j] = pivot[j] + sigma * z;
                    }
                }
                let forward = neg_log_gauss(&proposal, pivot, sigma, &phi, n_phi);
                let sigma_back = max_gap(&proposal, pivot, &phi);
                let backward = neg_log_gauss(moving, pivot, sigma_back, &phi, n_phi);
                correction = forward - backward;
            }
            Kernel::Hop => {
                let sigma = max_gap(moving, pivot, &phi) / 3.0;
                if sigma <= 0.0 {
                    return reject;
                }
                for j in 0..n {
                    if phi[j] {
                        let z: f64 = StandardNormal.sample(rng);
                        proposal[j] = moving[j] + sigma * z;
                    }
                }
                let forward = neg_log_gauss(&proposal, moving, sigma, &phi, n_phi);
                let sigma_back = max_gap(&proposal, pivot, &phi) / 3.0;
                let backward = neg_log_gauss(moving, &proposal, sigma_back, &phi, n_phi);
                correction = forward - backward;
            }
        }

        // The two points must stay distinct in every coordinate.
        if proposal.iter().zip(pivot).any(|(a, b)| a == b) || proposal.iter().any(|v| !v.is_finite()) {
            return reject;
        }
        let log_proposal = log_target(&proposal);
        if log_proposal == f64::NEG_INFINITY || log_proposal.is_nan() {
            return reject;
        }
        let log_accept = log_proposal - log_moving + correction;
        let accepted = log_accept >= 0.0 || rng.random::<f64>().ln() < log_accept;
        if accepted {
            if moved_first {
                state.x = proposal;
                state.log_x = log_proposal;
            } else {
                state.x_prime = proposal;
                state.log_x_prime = log_proposal;
            }
        }
        StepOutcome {
            kernel,
            moved_first,
            accepted,
        }
    }
}

fn max_gap(a: &[f64], b: &[f64], phi: &[bool]) -> f64 {
    a.iter()
        .zip(b)
        .zip(phi)
        .filter(|(_, &p)| p)
        .map(|((x, y), _)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `-log N(h; center, sigma² I)` over the selected coordinates.
fn neg_log_gauss(h: &[f64], center: &[f64], sigma: f64, phi: &[bool], n_phi: usize) -> f64 {
    if sigma <= 0.0 {
        return f64::INFINITY;
    }
    let sq: f64 = h
        .iter()
        .zip(center)
        .zip(phi)
        .filter(|(_, &p)| p)
        .map(|((a, c), _)| (a - c) * (a - c))
        .sum();
    let k = n_phi as f64;
    0.5 * k * LN_2PI + k * sigma.ln() + 0.5 * sq / (sigma * sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run_gaussian(seed: u64, iters: usize) -> Vec<Vec<f64>> {
        // Correlated 2-D Gaussian, means (1, -2), sds (1, 3), correlation 0.5.
        let (m1, m2, s1, s2, rho) = (1.0, -2.0, 1.0, 3.0, 0.5);
        let mut target = |x: &[f64]| {
            let a = (x[0] - m1) / s1;
            let b = (x[1] - m2) / s2;
            -(a * a - 2.0 * rho * a * b + b * b) / (2.0 * (1.0 - rho * rho))
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = vec![0.0, 0.0];
        let xp = vec![0.5, 0.5];
        let mut state = TWalkState {
            log_x: target(&x),
            log_x_prime: target(&xp),
            x,
            x_prime: xp,
        };
        let tw = TWalk::default();
        let mut out = Vec::with_capacity(iters);
        for _ in 0..iters {
            tw.step(&mut state, &mut target, &mut rng);
            out.push(state.x.clone());
        }
        out
    }

    #[test]
    fn gaussian_moments_are_recovered() {
        let chain = run_gaussian(11, 200_000);
        let kept: Vec<&Vec<f64>> = chain.iter().skip(2_000).step_by(20).collect();
        let n = kept.len() as f64;
        let mean0 = kept.iter().map(|x| x[0]).sum::<f64>() / n;
        let mean1 = kept.iter().map(|x| x[1]).sum::<f64>() / n;
        let var0 = kept.iter().map(|x| (x[0] - mean0).powi(2)).sum::<f64>() / (n - 1.0);
        let var1 = kept.iter().map(|x| (x[1] - mean1).powi(2)).sum::<f64>() / (n - 1.0);
        // Thinned draws are close to independent; allow for residual autocorrelation.
        let se0 = (1.0 / n).sqrt() * 2.0;
        let se1 = (9.0 / n).sqrt() * 2.0;
        assert!((mean0 - 1.0).abs() < 3.0 * se0, "mean0 {mean0}");
        assert!((mean1 + 2.0).abs() < 3.0 * se1, "mean1 {mean1}");
        assert!((var0 - 1.0).abs() < 0.1, "var0 {var0}");
        assert!((var1 - 9.0).abs() < 0.9, "var1 {var1}");
    }

    #[test]
    fn deterministic_given_seed() {
        assert_eq!(run_gaussian(5, 500), run_gaussian(5, 500));
        assert_ne!(run_gaussian(5, 500), run_gaussian(6, 500));
    }

    #[test]
    fn traverse_beta_has_support_on_both_sides_of_one() {
        let tw = TWalk::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws: Vec<f64> = (0..10_000).map(|_| tw.sample_beta(&mut rng)).collect();
        assert!(draws.iter().all(|&b| b > 0.0));
        assert!(draws.iter().any(|&b| b < 1.0) && draws.iter().any(|&b| b > 1.0));
    }
}
