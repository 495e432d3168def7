//! Divergences defined through their gradient weight functions.
//!
//! For a convex generator f, the gradient of D_f(p‖q_θ) admits two
//! sample-weight representations:
//!
//! - score form: weights ρ_f(t) = f'(t)·t − f(t),
//! - pathwise form: weights ω_f(t) = ρ_f'(t)·t = f''(t)·t².
//!
//! | divergence    | f(t)            | ρ_f(t)    | ω_f(t) |
//! |---------------|-----------------|-----------|--------|
//! | KL(q‖p)       | −log t          | log t − 1 | 1      |
//! | KL(p‖q)       | t log t         | t         | t      |
//! | α-divergence  | t^α/(α(α−1))    | t^α/α     | t^α    |
//!
//! Power weights t^α explode when the density ratio t = p(x)/q(x) is
//! fat-tailed. The tail-adaptive family instead weights each sample by
//! F̂(w_i)^β, where F̂ is the empirical tail CCDF of the ratio batch: a
//! rank-based weight bounded by n^{−β} no matter how extreme the ratios are.
//! Its generator f is defined implicitly; only the weights are ever needed.
//!
//! All ratio arithmetic runs in log space (log p − log q) with log-sum-exp
//! normalization, since fat-tailed ratios overflow linear-space arithmetic.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::Error;
use crate::math::{log_mean_exp, log_sum_exp, softmax};
use crate::mixture::DiagGaussianMixture;
use crate::Result;

/// Which divergence drives a gradient update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DivergenceSpec {
    /// α-divergence with generator t^α/(α(α−1)), α ∉ {0, 1}.
    Alpha(f64),
    /// KL(q‖p), the α→0 limit. The usual variational objective.
    ForwardKL,
    /// KL(p‖q), the α→1 limit.
    ReverseKL,
    /// The α→+∞ limit: all weight on the sample with the largest ratio.
    MaxAlpha,
    /// Rank-based tail-adaptive weights F̂(w)^β with β ∈ [−1, 0).
    ///
    /// β = −1 is the practical default; finite moments are guaranteed for
    /// β > −1, and the type admits (−1, 0) for that regime as well.
    TailAdaptive(f64),
}

impl DivergenceSpec {
    /// Checks the parameter domain: α finite and outside {0, 1},
    /// β ∈ [−1, 0).
    pub fn validate(&self) -> Result<()> {
        match *self {
            DivergenceSpec::Alpha(a) => {
                if !a.is_finite() {
                    return Err(Error::InvalidSpec(format!("alpha must be finite, got {a}")));
                }
                if a == 0.0 || a == 1.0 {
                    return Err(Error::InvalidSpec(format!(
                        "alpha:{a} is a KL limit; use kl-forward (alpha->0) or kl-reverse (alpha->1)"
                    )));
                }
                Ok(())
            }
            DivergenceSpec::TailAdaptive(b) => {
                if !(-1.0..0.0).contains(&b) {
                    return Err(Error::InvalidSpec(format!(
                        "tail-adaptive beta must lie in [-1, 0), got {b}"
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// True for specs whose weight functions are pointwise in the ratio
    /// (as opposed to rank-defined on a batch).
    pub fn is_pointwise(&self) -> bool {
        !matches!(
            self,
            DivergenceSpec::TailAdaptive(_) | DivergenceSpec::MaxAlpha
        )
    }
}

/// Canonical text form: `kl-forward`, `kl-reverse`, `alpha:<value>`,
/// `alpha:max`, `tail-adaptive:<beta>`.
impl fmt::Display for DivergenceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DivergenceSpec::Alpha(a) => write!(f, "alpha:{a}"),
            DivergenceSpec::ForwardKL => write!(f, "kl-forward"),
            DivergenceSpec::ReverseKL => write!(f, "kl-reverse"),
            DivergenceSpec::MaxAlpha => write!(f, "alpha:max"),
            DivergenceSpec::TailAdaptive(b) => write!(f, "tail-adaptive:{b}"),
        }
    }
}

impl FromStr for DivergenceSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let spec = match s.trim() {
            "kl-forward" => DivergenceSpec::ForwardKL,
            "kl-reverse" => DivergenceSpec::ReverseKL,
            "alpha:max" => DivergenceSpec::MaxAlpha,
            other => {
                if let Some(v) = other.strip_prefix("alpha:") {
                    let a: f64 = v.parse().map_err(|_| {
                        Error::InvalidSpec(format!("cannot parse alpha value {v:?}"))
                    })?;
                    DivergenceSpec::Alpha(a)
                } else if let Some(v) = other.strip_prefix("tail-adaptive:") {
                    let b: f64 = v.parse().map_err(|_| {
                        Error::InvalidSpec(format!("cannot parse tail-adaptive beta {v:?}"))
                    })?;
                    DivergenceSpec::TailAdaptive(b)
                } else {
                    return Err(Error::InvalidSpec(format!(
                        "unknown divergence {other:?}; expected kl-forward, kl-reverse, \
                         alpha:<value>, alpha:max, or tail-adaptive:<beta>"
                    )));
                }
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Which of the two weight families a batch normalization targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    /// ω_f weights (pathwise / reparameterization form).
    Omega,
    /// ρ_f weights (score-function form).
    Rho,
}

/// Self-normalized per-sample weights plus degeneracy diagnostics.
#[derive(Debug, Clone)]
pub struct WeightVector {
    /// Nonnegative entries summing to 1.
    pub normalized: Vec<f64>,
    /// log of the normalizer z (the sum of unnormalized weights).
    pub normalizer_log: f64,
    /// Effective sample size 1/Σ(normalized_i²), in [1, n].
    pub ess: f64,
}

impl WeightVector {
    fn from_normalized(normalized: Vec<f64>, normalizer_log: f64) -> Self {
        let n = normalized.len() as f64;
        let sum_sq: f64 = normalized.iter().map(|w| w * w).sum();
        let ess = (1.0 / sum_sq).clamp(1.0, n);
        WeightVector {
            normalized,
            normalizer_log,
            ess,
        }
    }

    /// Largest normalized weight; 1 means a single sample dominates.
    pub fn max_weight_fraction(&self) -> f64 {
        self.normalized.iter().copied().fold(0.0, f64::max)
    }
}

fn check_pointwise_ratio(t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::NonPositiveRatio(t));
    }
    Ok(())
}

/// Score-form weight ρ_f(t) = f'(t)·t − f(t) for pointwise specs.
///
/// Alpha(α) → t^α/α, forward KL → log t − 1, reverse KL → t.
pub fn rho_weight(spec: &DivergenceSpec, t: f64) -> Result<f64> {
    check_pointwise_ratio(t)?;
    spec.validate()?;
    match *spec {
        DivergenceSpec::Alpha(a) => Ok(t.powf(a) / a),
        DivergenceSpec::ForwardKL => Ok(t.ln() - 1.0),
        DivergenceSpec::ReverseKL => Ok(t),
        DivergenceSpec::TailAdaptive(_) => Err(Error::BatchOnlySpec("tail-adaptive divergence")),
        DivergenceSpec::MaxAlpha => Err(Error::BatchOnlySpec("alpha:max divergence")),
    }
}

/// Pathwise-form weight ω_f(t) = f''(t)·t² for pointwise specs.
///
/// Alpha(α) → t^α, forward KL → 1, reverse KL → t. Nonnegative by convexity.
pub fn omega_weight(spec: &DivergenceSpec, t: f64) -> Result<f64> {
    check_pointwise_ratio(t)?;
    spec.validate()?;
    match *spec {
        DivergenceSpec::Alpha(a) => Ok(t.powf(a)),
        DivergenceSpec::ForwardKL => Ok(1.0),
        DivergenceSpec::ReverseKL => Ok(t),
        DivergenceSpec::TailAdaptive(_) => Err(Error::BatchOnlySpec("tail-adaptive divergence")),
        DivergenceSpec::MaxAlpha => Err(Error::BatchOnlySpec("alpha:max divergence")),
    }
}

fn check_finite_batch(log_w: &[f64]) -> Result<()> {
    if log_w.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if log_w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("log-weight batch"));
    }
    Ok(())
}

/// Empirical tail CCDF evaluated at each batch element:
/// `out[i] = #{j : log_w[j] >= log_w[i]} / n`.
///
/// Ties are counted inclusively, so every value is at least 1/n and the
/// result is invariant under permutations of equal entries.
pub fn empirical_tail_ccdf(log_w: &[f64]) -> Result<Vec<f64>> {
    check_finite_batch(log_w)?;
    let n = log_w.len();
    let mut sorted = log_w.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("entries checked finite"));
    let nf = n as f64;
    Ok(log_w
        .iter()
        .map(|&v| {
            // count of entries >= v, via the first index not below v
            let below = sorted.partition_point(|&x| x < v);
            (n - below) as f64 / nf
        })
        .collect())
}

/// Self-normalized batch weights for a divergence spec.
///
/// Given log ratios `log_w[i] = log(p(x_i)/q(x_i))`:
///
/// - `TailAdaptive(β)` → F̂(w_i)^β normalized by their sum (both modes);
/// - `Alpha(α)` → softmax(α·log_w) — in rho mode the 1/α constant cancels
///   under normalization, but only α > 0 keeps the weights nonnegative;
/// - `ForwardKL` → uniform 1/n in omega mode (ω ≡ 1); rho mode is rejected
///   because ρ(t) = log t − 1 is sign-indefinite and normalizing by a signed
///   sum can flip the update direction;
/// - `ReverseKL` → softmax(log_w) (ρ = ω = t);
/// - `MaxAlpha` → one-hot on the argmax ratio, ties broken by lowest index.
pub fn batch_weights(
    spec: &DivergenceSpec,
    log_w: &[f64],
    mode: WeightMode,
) -> Result<WeightVector> {
    check_finite_batch(log_w)?;
    spec.validate()?;
    let n = log_w.len();

    match *spec {
        DivergenceSpec::TailAdaptive(beta) => {
            let ccdf = empirical_tail_ccdf(log_w)?;
            // F̂ ∈ [1/n, 1] and β ∈ [-1, 0), so every weight lies in [1, n]:
            // bounded regardless of how extreme the underlying ratios are.
            let weights: Vec<f64> = ccdf.iter().map(|&f| f.powf(beta)).collect();
            let z: f64 = weights.iter().sum();
            let normalized = weights.iter().map(|w| w / z).collect();
            Ok(WeightVector::from_normalized(normalized, z.ln()))
        }
        DivergenceSpec::ForwardKL => match mode {
            WeightMode::Omega => {
                let normalized = vec![1.0 / n as f64; n];
                Ok(WeightVector::from_normalized(normalized, (n as f64).ln()))
            }
            WeightMode::Rho => Err(Error::UnsupportedRhoMode("forward KL (rho = log t - 1)")),
        },
        DivergenceSpec::ReverseKL => {
            let normalized = softmax(log_w);
            Ok(WeightVector::from_normalized(normalized, log_sum_exp(log_w)))
        }
        DivergenceSpec::Alpha(a) => {
            if mode == WeightMode::Rho && a < 0.0 {
                return Err(Error::UnsupportedRhoMode(
                    "alpha divergence with alpha < 0 (rho = t^alpha/alpha < 0)",
                ));
            }
            let scaled: Vec<f64> = log_w.iter().map(|&v| a * v).collect();
            let normalized = softmax(&scaled);
            let normalizer_log = match mode {
                WeightMode::Omega => log_sum_exp(&scaled),
                // z_rho = sum t^alpha / alpha
                WeightMode::Rho => log_sum_exp(&scaled) - a.ln(),
            };
            Ok(WeightVector::from_normalized(normalized, normalizer_log))
        }
        DivergenceSpec::MaxAlpha => {
            let argmax = log_w
                .iter()
                .enumerate()
                .fold((0usize, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                    if v > bv {
                        (i, v)
                    } else {
                        (bi, bv)
                    }
                })
                .0;
            let mut normalized = vec![0.0; n];
            normalized[argmax] = 1.0;
            // the surviving unnormalized weight is the indicator itself
            Ok(WeightVector::from_normalized(normalized, 0.0))
        }
    }
}

/// Monte-Carlo α-divergence estimate from log ratios:
/// `(mean(exp(α·log_w)) − 1) / (α(α−1))`, with the mean in log space.
pub fn alpha_divergence_mc(alpha: f64, log_w: &[f64]) -> Result<f64> {
    if alpha == 0.0 || alpha == 1.0 {
        return Err(Error::InvalidSpec(format!(
            "alpha divergence undefined at alpha={alpha}; use the KL limits"
        )));
    }
    check_finite_batch(log_w)?;
    let scaled: Vec<f64> = log_w.iter().map(|&v| alpha * v).collect();
    let log_mean = log_mean_exp(&scaled);
    Ok(log_mean.exp_m1() / (alpha * (alpha - 1.0)))
}

/// Validates the integral representation of D_f built from the Hessian f'':
///
///   D_f(p‖q) = ∫ f''(μ)·E_q[(p/q − μ)₊] dμ − ∫₀¹ f''(μ)(1−μ) dμ.
///
/// One Monte-Carlo batch of density ratios (drawn from `q`, seeded) is reused
/// for the inner expectation at every grid node. Both integrals share a
/// log-spaced trapezoid grid on [1e-4, 10·max ratio]; f'' can blow up near 0,
/// and log spacing concentrates nodes there. The ratio batch is
/// self-normalized to unit empirical mean, which removes the spurious
/// (mean − 1)·∫f'' contribution from the region below the smallest ratio.
///
/// Fails with [`Error::NonConvexGenerator`] if `f_second` is negative at any
/// grid node.
pub fn f_divergence_quadrature<F>(
    f_second: F,
    p: &DiagGaussianMixture,
    q: &DiagGaussianMixture,
    mc_samples: usize,
    grid_nodes: usize,
    rng_seed: u64,
) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if mc_samples == 0 {
        return Err(Error::EmptyBatch);
    }
    if grid_nodes < 2 {
        return Err(Error::InvalidSpec(
            "quadrature needs at least 2 grid nodes".to_string(),
        ));
    }
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: q.dim(),
        });
    }

    let mut rng = ChaCha12Rng::seed_from_u64(rng_seed);
    let mut log_ratios = Vec::with_capacity(mc_samples);
    for _ in 0..mc_samples {
        let x = q.sample_exact(&mut rng);
        log_ratios.push(p.log_density(&x)? - q.log_density(&x)?);
    }
    let shift = log_mean_exp(&log_ratios);
    let mut ratios: Vec<f64> = log_ratios.iter().map(|&lr| (lr - shift).exp()).collect();
    ratios.sort_by(|a, b| a.partial_cmp(b).expect("finite ratios"));

    // suffix[i] = sum of ratios[i..]
    let n = ratios.len();
    let mut suffix = vec![0.0; n + 1];
    for i in (0..n).rev() {
        suffix[i] = suffix[i + 1] + ratios[i];
    }
    let nf = n as f64;
    let plus_part_mean = |mu: f64| {
        let idx = ratios.partition_point(|&w| w <= mu);
        (suffix[idx] - mu * (n - idx) as f64) / nf
    };

    let mu_min: f64 = 1e-4;
    let mu_max = 10.0 * ratios[n - 1];
    let log_step = (mu_max / mu_min).ln() / (grid_nodes - 1) as f64;
    let mut prev: Option<(f64, f64)> = None;
    let mut total = 0.0;
    for g in 0..grid_nodes {
        let mu = mu_min * (log_step * g as f64).exp();
        let h = f_second(mu);
        if h < 0.0 {
            return Err(Error::NonConvexGenerator { mu, value: h });
        }
        let integrand = h * (plus_part_mean(mu) - (1.0 - mu).max(0.0));
        if let Some((mu_prev, f_prev)) = prev {
            total += 0.5 * (f_prev + integrand) * (mu - mu_prev);
        }
        prev = Some((mu, integrand));
    }
    Ok(total)
}
