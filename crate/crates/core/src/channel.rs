//! Fading gains, their discretization into code-layer states, and the
//! statistical CSI transmitters use for decisions.
//!
//! All arithmetic here is on linear power gains. A link's mean gain is
//! `reference_gain · distance^(−exponent)`.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use thiserror::Error;

use crate::model::Link;
use crate::rng::StreamRng;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("mean gain must be positive, got {0}")]
    NonPositiveMean(f64),
    #[error("CDF series did not converge: residual mass {achieved:e}")]
    NoConvergence { achieved: f64 },
    #[error("expected one rng stream per link ({links}), got {streams}")]
    StreamCount { links: usize, streams: usize },
}

/// Small-scale fading law of a link.
#[derive(Debug, Clone, PartialEq)]
pub enum Fading {
    /// Power gain exponentially distributed around the mean.
    Rayleigh,
    /// Line of sight plus diffuse scatter; `k_factor` is linear LOS/diffuse
    /// power ratio.
    Rician { k_factor: f64 },
    /// State index drawn directly from a fixed distribution.
    Discrete { state_probs: Vec<f64> },
}

/// Draws one power gain with mean `mean_gain`.
///
/// Discrete links have no continuous law; they are sampled through
/// [`step_network_state`] instead and this returns the mean.
pub fn sample_gain(fading: &Fading, mean_gain: f64, rng: &mut StreamRng) -> Result<f64, ChannelError> {
    if !(mean_gain > 0.0) {
        return Err(ChannelError::NonPositiveMean(mean_gain));
    }
    Ok(match fading {
        Fading::Rayleigh => {
            let e: f64 = rng.sample(Exp1);
            mean_gain * e
        }
        Fading::Rician { k_factor } => {
            let k = *k_factor;
            let los = (k * mean_gain / (k + 1.0)).sqrt();
            let sigma = (mean_gain / (2.0 * (k + 1.0))).sqrt();
            let x: f64 = rng.sample(StandardNormal);
            let y: f64 = rng.sample(StandardNormal);
            let re = los + sigma * x;
            let im = sigma * y;
            re * re + im * im
        }
        Fading::Discrete { .. } => mean_gain,
    })
}

/// Maps a gain to its state: the number of thresholds not exceeding it.
/// Lower interval bounds are closed.
pub fn discretize(gain: f64, thresholds: &[f64]) -> usize {
    thresholds.partition_point(|&t| t <= gain)
}

/// `P(g ≥ x)` for the continuous fading laws.
pub fn survival(fading: &Fading, mean_gain: f64, x: f64) -> Result<f64, ChannelError> {
    if !(mean_gain > 0.0) {
        return Err(ChannelError::NonPositiveMean(mean_gain));
    }
    if x <= 0.0 {
        return Ok(1.0);
    }
    match fading {
        Fading::Rayleigh => Ok((-x / mean_gain).exp()),
        Fading::Rician { k_factor } => {
            // 2(K+1)g/μ is noncentral chi-square, 2 dof, noncentrality 2K.
            let y = 2.0 * (k_factor + 1.0) * x / mean_gain;
            noncentral_chi2_2dof_cdf(y, 2.0 * k_factor).map(|f| (1.0 - f).max(0.0))
        }
        Fading::Discrete { .. } => unreachable!("discrete links have no gain law"),
    }
}

/// CDF of the noncentral chi-square with two degrees of freedom, as a
/// Poisson mixture of central chi-squares with `2 + 2j` degrees of freedom.
fn noncentral_chi2_2dof_cdf(y: f64, noncentrality: f64) -> Result<f64, ChannelError> {
    let half_lambda = noncentrality / 2.0;
    let half_y = y / 2.0;
    let mut weight = (-half_lambda).exp();
    if weight == 0.0 {
        return Err(ChannelError::NoConvergence { achieved: 1.0 });
    }
    let exp_half_y = (-half_y).exp();
    // partial sum of (y/2)^i / i! for i ≤ j
    let mut term = 1.0;
    let mut partial = 1.0;
    let mut mass = 0.0;
    let mut cdf = 0.0;
    for j in 0..100_000u32 {
        if j > 0 {
            weight *= half_lambda / j as f64;
            term *= half_y / j as f64;
            partial += term;
        }
        let central = (1.0 - exp_half_y * partial).max(0.0);
        cdf += weight * central;
        mass += weight;
        if j as f64 > half_lambda && (1.0 - mass < 1e-14 || weight < 1e-300) {
            return Ok(cdf.min(1.0));
        }
    }
    Err(ChannelError::NoConvergence {
        achieved: 1.0 - mass,
    })
}

/// Stationary probability of each state `0..=L`: entry `l` is
/// `P(ḡ_l ≤ g < ḡ_{l+1})`.
pub fn state_distribution(fading: &Fading, mean_gain: f64, thresholds: &[f64]) -> Result<Vec<f64>, ChannelError> {
    if let Fading::Discrete { state_probs } = fading {
        return Ok(state_probs.clone());
    }
    let mut tails = Vec::with_capacity(thresholds.len() + 2);
    tails.push(1.0);
    for &t in thresholds {
        tails.push(survival(fading, mean_gain, t)?);
    }
    tails.push(0.0);
    Ok(tails.windows(2).map(|w| (w[0] - w[1]).max(0.0)).collect())
}

/// Transmitter-side knowledge of one link's state process.
#[derive(Debug, Clone, PartialEq)]
pub enum LinkCsi {
    /// States i.i.d. across slots.
    Iid(Vec<f64>),
    /// Row `s` is the next-state law given current state `s`; `initial`
    /// applies before any feedback exists.
    Markov {
        initial: Vec<f64>,
        transition: Vec<Vec<f64>>,
    },
}

impl LinkCsi {
    /// Law of the next state given the last fed-back state.
    pub fn conditional(&self, prev: Option<usize>) -> &[f64] {
        match (self, prev) {
            (LinkCsi::Iid(p), _) => p,
            (LinkCsi::Markov { initial, .. }, None) => initial,
            (LinkCsi::Markov { transition, .. }, Some(s)) => &transition[s],
        }
    }

    pub fn is_markov(&self) -> bool {
        matches!(self, LinkCsi::Markov { .. })
    }

    pub fn num_states(&self) -> usize {
        match self {
            LinkCsi::Iid(p) => p.len(),
            LinkCsi::Markov { initial, .. } => initial.len(),
        }
    }
}

/// Per-link statistical CSI, indexed like `NetworkModel::links`.
#[derive(Debug, Clone, PartialEq)]
pub struct StatisticalCsi {
    pub links: Vec<LinkCsi>,
}

impl StatisticalCsi {
    pub fn from_links(links: &[Link]) -> Result<Self, ChannelError> {
        let links = links
            .iter()
            .map(|l| {
                let p = state_distribution(&l.fading, l.mean_gain(), &l.thresholds)?;
                Ok(match &l.transition {
                    Some(t) => LinkCsi::Markov {
                        initial: p,
                        transition: t.clone(),
                    },
                    None => LinkCsi::Iid(p),
                })
            })
            .collect::<Result<Vec<_>, ChannelError>>()?;
        Ok(StatisticalCsi { links })
    }

    pub fn has_markov_links(&self) -> bool {
        self.links.iter().any(LinkCsi::is_markov)
    }
}

/// Realized channel of one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSnapshot {
    pub slot: u64,
    /// Linear gain per link.
    pub gains: Vec<f64>,
    /// Discretized state per link.
    pub states: Vec<usize>,
}

fn draw_index(probs: &[f64], rng: &mut StreamRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding: fall back to the last state with positive mass
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

fn gain_in_state(state: usize, thresholds: &[f64], rng: &mut StreamRng) -> f64 {
    let lo = if state == 0 { 0.0 } else { thresholds[state - 1] };
    let hi = if state < thresholds.len() {
        thresholds[state]
    } else {
        2.0 * thresholds[thresholds.len() - 1]
    };
    let u: f64 = rng.random();
    lo + u * (hi - lo)
}

/// Advances every link by one slot using its own stream.
///
/// Continuous i.i.d. links sample a gain and discretize it. Discrete and
/// Markov links draw the state first and then a gain inside that state's
/// interval (the gain is informational only).
pub fn step_network_state(
    slot: u64,
    prev: Option<&ChannelSnapshot>,
    links: &[Link],
    csi: &StatisticalCsi,
    rngs: &mut [StreamRng],
    out: &mut ChannelSnapshot,
) -> Result<(), ChannelError> {
    if rngs.len() != links.len() {
        return Err(ChannelError::StreamCount {
            links: links.len(),
            streams: rngs.len(),
        });
    }
    out.slot = slot;
    out.gains.resize(links.len(), 0.0);
    out.states.resize(links.len(), 0);
    for (li, link) in links.iter().enumerate() {
        let rng = &mut rngs[li];
        let (gain, state) = match (&csi.links[li], &link.fading) {
            (LinkCsi::Iid(_), Fading::Rayleigh | Fading::Rician { .. }) => {
                let g = sample_gain(&link.fading, link.mean_gain(), rng)?;
                (g, discretize(g, &link.thresholds))
            }
            (law, _) => {
                let s = draw_index(law.conditional(prev.map(|p| p.states[li])), rng);
                (gain_in_state(s, &link.thresholds, rng), s)
            }
        };
        out.gains[li] = gain;
        out.states[li] = state;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamKind};

    #[test]
    fn discretize_boundaries() {
        let t = [0.1, 0.5, 0.9];
        assert_eq!(discretize(0.05, &t), 0);
        assert_eq!(discretize(0.5, &t), 2);
        assert_eq!(discretize(0.6, &t), 2);
        assert_eq!(discretize(0.9, &t), 3);
        assert_eq!(discretize(5.0, &t), 3);
    }

    #[test]
    fn rayleigh_distribution_at_median() {
        let p = state_distribution(&Fading::Rayleigh, 1.0, &[2f64.ln()]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15);
        assert!((p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_threshold_puts_all_mass_above() {
        let p = state_distribution(&Fading::Rayleigh, 1.0, &[0.0]).unwrap();
        assert_eq!(p, vec![0.0, 1.0]);
    }

    #[test]
    fn rician_zero_k_matches_rayleigh_cdf() {
        for x in [0.01, 0.3, 1.0, 2.5, 7.0] {
            let a = survival(&Fading::Rayleigh, 1.3, x).unwrap();
            let b = survival(&Fading::Rician { k_factor: 0.0 }, 1.3, x).unwrap();
            assert!((a - b).abs() < 1e-14, "{x}: {a} vs {b}");
        }
    }

    #[test]
    fn rician_cdf_against_quadrature() {
        // P(g < x) by trapezoid over the Rician power density
        // f(g) = (K+1)/μ · exp(−K − (K+1)g/μ) · I0(2·sqrt(K(K+1)g/μ)).
        fn bessel_i0(z: f64) -> f64 {
            let mut term = 1.0;
            let mut sum = 1.0;
            for k in 1..200 {
                term *= (z / 2.0) * (z / 2.0) / (k as f64 * k as f64);
                sum += term;
                if term < 1e-18 * sum {
                    break;
                }
            }
            sum
        }
        let k = 10f64.powf(0.5);
        let mu = 0.7;
        let x = 0.9;
        let n = 200_000;
        let h = x / n as f64;
        let pdf = |g: f64| {
            (k + 1.0) / mu * (-k - (k + 1.0) * g / mu).exp() * bessel_i0(2.0 * (k * (k + 1.0) * g / mu).sqrt())
        };
        let mut integral = 0.5 * (pdf(0.0) + pdf(x));
        for i in 1..n {
            integral += pdf(i as f64 * h);
        }
        integral *= h;
        let s = survival(&Fading::Rician { k_factor: k }, mu, x).unwrap();
        assert!((1.0 - s - integral).abs() < 1e-8, "{} vs {integral}", 1.0 - s);
    }

    #[test]
    fn nonpositive_mean_is_rejected() {
        let mut rng = stream(1, StreamKind::Link, 0);
        assert_eq!(
            sample_gain(&Fading::Rayleigh, 0.0, &mut rng),
            Err(ChannelError::NonPositiveMean(0.0))
        );
    }

    #[test]
    fn distributions_sum_to_one() {
        let t = [0.2, 0.6, 1.1];
        for f in [Fading::Rayleigh, Fading::Rician { k_factor: 3.16 }] {
            let p = state_distribution(&f, 0.8, &t).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|&x| x >= 0.0));
        }
    }
}
