//! Diagonal-Gaussian mixtures used as both target p and variational family q.
//!
//! Component weights live in logit space (softmax), scales in log space, so
//! every parameter is unconstrained under gradient steps. Sampling for
//! gradients goes through the Gumbel-Softmax relaxation: a soft component
//! weight vector s = softmax((logits + gumbel)/τ) blends the per-component
//! affine maps, which makes the draw differentiable in all parameters,
//! including the mixture logits. The density itself is always the exact
//! mixture density evaluated at the drawn point; the relaxation only affects
//! the sampling path. Evaluation-time sampling (for metrics) uses exact
//! categorical component selection instead.
//!
//! Responsibilities are computed in log space throughout; far-separated
//! components underflow otherwise.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::math::{log_sum_exp, softmax};
use crate::Result;

const LN_2PI: f64 = 1.8378770664093453;

/// Mixture of k diagonal Gaussians in d dimensions.
///
/// `means` and `log_stds` are row-major k×d; component weights are
/// softmax(logits).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussianMixture {
    pub logits: Vec<f64>,
    pub means: Vec<f64>,
    pub log_stds: Vec<f64>,
    pub d: usize,
    pub k: usize,
}

/// One relaxed draw with every noise seed, so the pathwise Jacobian can be
/// replayed exactly: x = Σ_k s_k · (means_k + exp(log_stds_k) ⊙ ε_k).
#[derive(Debug, Clone, PartialEq)]
pub struct ReparamSample {
    pub x: Vec<f64>,
    /// Standard-normal seeds ε, row-major k×d.
    pub gaussian_seeds: Vec<f64>,
    /// Gumbel(0,1) seeds, one per component.
    pub gumbel_seeds: Vec<f64>,
    /// softmax((logits + gumbel)/temperature); positive, sums to 1.
    pub soft_weights: Vec<f64>,
    pub temperature: f64,
}

/// Gradient with respect to every mixture parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatParamGrad {
    pub d_logits: Vec<f64>,
    pub d_means: Vec<f64>,
    pub d_log_stds: Vec<f64>,
}

impl FlatParamGrad {
    pub fn zeros(k: usize, d: usize) -> Self {
        FlatParamGrad {
            d_logits: vec![0.0; k],
            d_means: vec![0.0; k * d],
            d_log_stds: vec![0.0; k * d],
        }
    }

    /// self += scale · other
    pub fn add_scaled(&mut self, other: &FlatParamGrad, scale: f64) {
        for (a, b) in self.d_logits.iter_mut().zip(&other.d_logits) {
            *a += scale * b;
        }
        for (a, b) in self.d_means.iter_mut().zip(&other.d_means) {
            *a += scale * b;
        }
        for (a, b) in self.d_log_stds.iter_mut().zip(&other.d_log_stds) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for v in self
            .d_logits
            .iter_mut()
            .chain(self.d_means.iter_mut())
            .chain(self.d_log_stds.iter_mut())
        {
            *v *= c;
        }
    }

    /// Concatenation in the flat parameter order [logits, means, log_stds].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out =
            Vec::with_capacity(self.d_logits.len() + self.d_means.len() + self.d_log_stds.len());
        out.extend_from_slice(&self.d_logits);
        out.extend_from_slice(&self.d_means);
        out.extend_from_slice(&self.d_log_stds);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.d_logits
            .iter()
            .chain(&self.d_means)
            .chain(&self.d_log_stds)
            .all(|v| v.is_finite())
    }
}

impl DiagGaussianMixture {
    pub fn new(logits: Vec<f64>, means: Vec<f64>, log_stds: Vec<f64>, d: usize) -> Result<Self> {
        let k = logits.len();
        if k == 0 || d == 0 {
            return Err(Error::MalformedMixture(format!(
                "need k >= 1 and d >= 1, got k={k}, d={d}"
            )));
        }
        if means.len() != k * d {
            return Err(Error::DimensionMismatch {
                expected: k * d,
                got: means.len(),
            });
        }
        if log_stds.len() != k * d {
            return Err(Error::DimensionMismatch {
                expected: k * d,
                got: log_stds.len(),
            });
        }
        let mix = DiagGaussianMixture {
            logits,
            means,
            log_stds,
            d,
            k,
        };
        if !mix.params_finite() {
            return Err(Error::NonFinite("mixture parameters"));
        }
        Ok(mix)
    }

    /// Single Gaussian component.
    pub fn single(mean: Vec<f64>, log_std: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        Self::new(vec![0.0], mean, log_std, d)
    }

    /// Univariate N(mean, std²) as a one-component mixture.
    pub fn gaussian_1d(mean: f64, std: f64) -> Self {
        Self::single(vec![mean], vec![std.ln()]).expect("valid one-component mixture")
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn components(&self) -> usize {
        self.k
    }

    pub fn mean_row(&self, comp: usize) -> &[f64] {
        &self.means[comp * self.d..(comp + 1) * self.d]
    }

    pub fn params_finite(&self) -> bool {
        self.logits
            .iter()
            .chain(&self.means)
            .chain(&self.log_stds)
            .all(|v| v.is_finite())
    }

    /// log softmax(logits): normalized component log weights.
    pub fn log_weights(&self) -> Vec<f64> {
        let lse = log_sum_exp(&self.logits);
        self.logits.iter().map(|&l| l - lse).collect()
    }

    /// softmax(logits): normalized component weights.
    pub fn weights(&self) -> Vec<f64> {
        softmax(&self.logits)
    }

    /// Number of free parameters: k + 2·k·d.
    pub fn param_count(&self) -> usize {
        self.k + 2 * self.k * self.d
    }

    /// Parameters flattened as [logits, means, log_stds].
    pub fn to_flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend_from_slice(&self.logits);
        out.extend_from_slice(&self.means);
        out.extend_from_slice(&self.log_stds);
        out
    }

    /// Overwrites all parameters from the flat layout of [`to_flat_params`].
    ///
    /// [`to_flat_params`]: DiagGaussianMixture::to_flat_params
    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let kd = self.k * self.d;
        self.logits.copy_from_slice(&flat[..self.k]);
        self.means.copy_from_slice(&flat[self.k..self.k + kd]);
        self.log_stds.copy_from_slice(&flat[self.k + kd..]);
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("mixture serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mix: DiagGaussianMixture =
            serde_json::from_str(text).map_err(|e| Error::MalformedMixture(e.to_string()))?;
        // re-run the constructor checks on the deserialized record
        DiagGaussianMixture::new(mix.logits, mix.means, mix.log_stds, mix.d)
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Per-component joint log terms log π_k + log N(x; means_k, stds_k²).
    fn component_log_terms(&self, log_wts: &[f64], x: &[f64], out: &mut [f64]) {
        let d = self.d;
        for kk in 0..self.k {
            let mut acc = log_wts[kk];
            for dd in 0..d {
                let ls = self.log_stds[kk * d + dd];
                let z = (x[dd] - self.means[kk * d + dd]) * (-ls).exp();
                acc -= 0.5 * z * z + ls + 0.5 * LN_2PI;
            }
            out[kk] = acc;
        }
    }

    /// log q(x) via log-sum-exp over components; finite for any finite x.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let log_wts = self.log_weights();
        let mut terms = vec![0.0; self.k];
        self.component_log_terms(&log_wts, x, &mut terms);
        Ok(log_sum_exp(&terms))
    }

    /// ∇_x log q(x) = Σ_k r_k(x) · (means_k − x)/stds_k², with posterior
    /// responsibilities r_k computed in log space.
    pub fn grad_x_log_density(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(self.prepare().log_density_and_grad_x(x).1)
    }

    /// Analytic ∇_θ log q(x) over (logits, means, log_stds).
    pub fn score_grad_log_q(&self, x: &[f64]) -> Result<FlatParamGrad> {
        self.check_dim(x)?;
        let prep = self.prepare();
        let mut acc = FlatParamGrad::zeros(self.k, self.d);
        prep.accumulate_score_grad(x, 1.0, &mut acc);
        Ok(acc)
    }

    /// Deterministic replay of the relaxed sampling map from stored seeds.
    ///
    /// Returns (soft_weights, x). Bit-identical to the draw that produced the
    /// seeds, and differentiable in the parameters for fixed seeds.
    pub fn reparam_forward(
        &self,
        gumbel_seeds: &[f64],
        gaussian_seeds: &[f64],
        temperature: f64,
    ) -> (Vec<f64>, Vec<f64>) {
        assert!(temperature > 0.0, "temperature must be positive");
        assert_eq!(gumbel_seeds.len(), self.k);
        assert_eq!(gaussian_seeds.len(), self.k * self.d);
        let perturbed: Vec<f64> = self
            .logits
            .iter()
            .zip(gumbel_seeds)
            .map(|(&l, &g)| (l + g) / temperature)
            .collect();
        let soft = softmax(&perturbed);
        let mut x = vec![0.0; self.d];
        for kk in 0..self.k {
            let s = soft[kk];
            for dd in 0..self.d {
                let idx = kk * self.d + dd;
                x[dd] += s * (self.means[idx] + self.log_stds[idx].exp() * gaussian_seeds[idx]);
            }
        }
        (soft, x)
    }

    /// Gumbel-Softmax reparameterized draw: k Gumbel(0,1) seeds first, then
    /// k×d standard-normal seeds, then the deterministic forward map.
    pub fn sample_reparam<R: Rng + ?Sized>(&self, temperature: f64, rng: &mut R) -> ReparamSample {
        assert!(temperature > 0.0, "temperature must be positive");
        let gumbel_seeds: Vec<f64> = (0..self.k)
            .map(|_| {
                let u: f64 = rng.gen();
                -(-u.ln()).ln()
            })
            .collect();
        let gaussian_seeds: Vec<f64> = (0..self.k * self.d)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let (soft_weights, x) = self.reparam_forward(&gumbel_seeds, &gaussian_seeds, temperature);
        ReparamSample {
            x,
            gaussian_seeds,
            gumbel_seeds,
            soft_weights,
            temperature,
        }
    }

    /// Exact draw: categorical component choice, then the component Gaussian.
    /// Used for evaluation batches; the relaxation exists only for gradients.
    pub fn sample_exact<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let weights = self.weights();
        let u: f64 = rng.gen();
        let mut cum = 0.0;
        let mut comp = self.k - 1;
        for (kk, &w) in weights.iter().enumerate() {
            cum += w;
            if u < cum {
                comp = kk;
                break;
            }
        }
        (0..self.d)
            .map(|dd| {
                let idx = comp * self.d + dd;
                let eps: f64 = rng.sample(StandardNormal);
                self.means[idx] + self.log_stds[idx].exp() * eps
            })
            .collect()
    }

    /// Pathwise vector-Jacobian product cotangentᵀ·∂x/∂θ through the relaxed
    /// sampling map, with ∂x/∂θ flowing through both the affine component
    /// maps and the Gumbel-Softmax weights.
    pub fn pathwise_vjp(&self, sample: &ReparamSample, cotangent: &[f64]) -> Result<FlatParamGrad> {
        self.check_dim(cotangent)?;
        if sample.gumbel_seeds.len() != self.k || sample.gaussian_seeds.len() != self.k * self.d {
            return Err(Error::DimensionMismatch {
                expected: self.k,
                got: sample.gumbel_seeds.len(),
            });
        }
        let prep = self.prepare();
        let mut acc = FlatParamGrad::zeros(self.k, self.d);
        prep.accumulate_vjp(sample, cotangent, 1.0, &mut acc);
        Ok(acc)
    }

    /// Exact mixture mean and per-dimension marginal variance:
    /// mean = Σ w_k·means_k, var = Σ w_k·(stds_k² + means_k²) − mean².
    pub fn mixture_moments(&self) -> (Vec<f64>, Vec<f64>) {
        let weights = self.weights();
        let mut mean = vec![0.0; self.d];
        let mut second = vec![0.0; self.d];
        for kk in 0..self.k {
            let w = weights[kk];
            for dd in 0..self.d {
                let idx = kk * self.d + dd;
                let m = self.means[idx];
                let var = (2.0 * self.log_stds[idx]).exp();
                mean[dd] += w * m;
                second[dd] += w * (var + m * m);
            }
        }
        let variance = second
            .iter()
            .zip(&mean)
            .map(|(s, m)| s - m * m)
            .collect();
        (mean, variance)
    }

    pub(crate) fn prepare(&self) -> PreparedMixture<'_> {
        PreparedMixture::new(self)
    }
}

/// Cached per-mixture quantities for batch evaluation: component log weights
/// and exponentiated scales, so a batch of points pays the exps once.
pub(crate) struct PreparedMixture<'a> {
    mix: &'a DiagGaussianMixture,
    log_wts: Vec<f64>,
    wts: Vec<f64>,
    stds: Vec<f64>,
    inv_vars: Vec<f64>,
    // scratch reused across points
    terms: std::cell::RefCell<Vec<f64>>,
}

impl<'a> PreparedMixture<'a> {
    fn new(mix: &'a DiagGaussianMixture) -> Self {
        let log_wts = mix.log_weights();
        let wts = log_wts.iter().map(|&l| l.exp()).collect();
        let stds: Vec<f64> = mix.log_stds.iter().map(|&ls| ls.exp()).collect();
        let inv_vars = mix.log_stds.iter().map(|&ls| (-2.0 * ls).exp()).collect();
        PreparedMixture {
            mix,
            log_wts,
            wts,
            stds,
            inv_vars,
            terms: std::cell::RefCell::new(vec![0.0; mix.k]),
        }
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let mut terms = self.terms.borrow_mut();
        self.log_terms(x, &mut terms);
        log_sum_exp(&terms)
    }

    fn log_terms(&self, x: &[f64], out: &mut [f64]) {
        let d = self.mix.d;
        for kk in 0..self.mix.k {
            let mut acc = self.log_wts[kk];
            for dd in 0..d {
                let idx = kk * d + dd;
                let diff = x[dd] - self.mix.means[idx];
                acc -= 0.5 * diff * diff * self.inv_vars[idx]
                    + self.mix.log_stds[idx]
                    + 0.5 * LN_2PI;
            }
            out[kk] = acc;
        }
    }

    /// (log q(x), ∇_x log q(x)) sharing one responsibility computation.
    pub fn log_density_and_grad_x(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let d = self.mix.d;
        let mut terms = self.terms.borrow_mut();
        self.log_terms(x, &mut terms);
        let logq = log_sum_exp(&terms);
        let mut grad = vec![0.0; d];
        for kk in 0..self.mix.k {
            let r = (terms[kk] - logq).exp();
            for dd in 0..d {
                let idx = kk * d + dd;
                grad[dd] += r * (self.mix.means[idx] - x[dd]) * self.inv_vars[idx];
            }
        }
        (logq, grad)
    }

    /// acc += weight · ∇_θ log q(x)
    pub fn accumulate_score_grad(&self, x: &[f64], weight: f64, acc: &mut FlatParamGrad) {
        let d = self.mix.d;
        let mut terms = self.terms.borrow_mut();
        self.log_terms(x, &mut terms);
        let logq = log_sum_exp(&terms);
        for kk in 0..self.mix.k {
            let r = (terms[kk] - logq).exp();
            acc.d_logits[kk] += weight * (r - self.wts[kk]);
            for dd in 0..d {
                let idx = kk * d + dd;
                let diff = x[dd] - self.mix.means[idx];
                acc.d_means[idx] += weight * r * diff * self.inv_vars[idx];
                acc.d_log_stds[idx] += weight * r * (diff * diff * self.inv_vars[idx] - 1.0);
            }
        }
    }

    /// acc += weight · cotangentᵀ·∂x/∂θ for the relaxed draw `sample`.
    pub fn accumulate_vjp(
        &self,
        sample: &ReparamSample,
        cotangent: &[f64],
        weight: f64,
        acc: &mut FlatParamGrad,
    ) {
        let d = self.mix.d;
        let k = self.mix.k;
        let s = &sample.soft_weights;
        // component points y_k and the blended x under the current parameters
        let mut x = vec![0.0; d];
        let mut y = vec![0.0; k * d];
        for kk in 0..k {
            for dd in 0..d {
                let idx = kk * d + dd;
                y[idx] = self.mix.means[idx] + self.stds[idx] * sample.gaussian_seeds[idx];
                x[dd] += s[kk] * y[idx];
            }
        }
        for kk in 0..k {
            let ws = weight * s[kk];
            let mut dot = 0.0;
            for dd in 0..d {
                let idx = kk * d + dd;
                acc.d_means[idx] += ws * cotangent[dd];
                acc.d_log_stds[idx] +=
                    ws * cotangent[dd] * self.stds[idx] * sample.gaussian_seeds[idx];
                dot += cotangent[dd] * (y[idx] - x[dd]);
            }
            // ∂s_j/∂logit_k = s_j(δ_jk − s_k)/τ collapses to this per-logit form
            acc.d_logits[kk] += ws * dot / sample.temperature;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_difference, relative_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn random_mixture(k: usize, d: usize, rng: &mut ChaCha12Rng) -> DiagGaussianMixture {
        let logits = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let means = (0..k * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let log_stds = (0..k * d).map(|_| rng.gen_range(-0.7..0.7)).collect();
        DiagGaussianMixture::new(logits, means, log_stds, d).unwrap()
    }

    use rand::Rng;

    #[test]
    fn standard_normal_log_density_at_origin() {
        let mix = DiagGaussianMixture::gaussian_1d(0.0, 1.0);
        let expected = -0.5 * LN_2PI;
        assert!((mix.log_density(&[0.0]).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn symmetric_two_component_log_density() {
        let mix =
            DiagGaussianMixture::new(vec![0.0, 0.0], vec![-1.0, 1.0], vec![0.0, 0.0], 1).unwrap();
        // density at 0 is exp(-1/2)/sqrt(2π) from either component
        let expected = -0.5 - 0.5 * LN_2PI;
        assert!((mix.log_density(&[0.0]).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn dominant_far_component_controls_density() {
        let mix = DiagGaussianMixture::new(
            vec![0.0, 0.0],
            vec![0.0, 40.0],
            vec![0.0, 0.0],
            1,
        )
        .unwrap();
        let single = DiagGaussianMixture::gaussian_1d(40.0, 1.0);
        let at_mode = mix.log_density(&[40.0]).unwrap();
        // mixture weight is 1/2, the other component is ~800 sigma away
        let expected = single.log_density(&[40.0]).unwrap() + 0.5f64.ln();
        assert!((at_mode - expected).abs() < 1e-6);
    }

    #[test]
    fn log_density_matches_linear_space_sum() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..20 {
            let mix = random_mixture(3, 2, &mut rng);
            let x = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let weights = mix.weights();
            let mut dens = 0.0;
            for kk in 0..mix.k {
                let mut comp = 1.0;
                for dd in 0..mix.d {
                    let idx = kk * mix.d + dd;
                    let std = mix.log_stds[idx].exp();
                    let z = (x[dd] - mix.means[idx]) / std;
                    comp *= (-0.5 * z * z).exp() / (std * (2.0 * std::f64::consts::PI).sqrt());
                }
                dens += weights[kk] * comp;
            }
            assert!((mix.log_density(&x).unwrap() - dens.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn log_density_rejects_dimension_mismatch() {
        let mix = DiagGaussianMixture::gaussian_1d(0.0, 1.0);
        assert!(matches!(
            mix.log_density(&[0.0, 1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn grad_x_standard_normal_is_minus_x() {
        let mix = DiagGaussianMixture::gaussian_1d(0.0, 1.0);
        let g = mix.grad_x_log_density(&[0.7]).unwrap();
        assert!((g[0] + 0.7).abs() < 1e-12);
    }

    #[test]
    fn grad_x_vanishes_at_symmetry_point() {
        let mix =
            DiagGaussianMixture::new(vec![0.0, 0.0], vec![-1.0, 1.0], vec![0.0, 0.0], 1).unwrap();
        let g = mix.grad_x_log_density(&[0.0]).unwrap();
        assert!(g[0].abs() < 1e-12);
    }

    #[test]
    fn grad_x_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..100 {
            let k = rng.gen_range(1..=4);
            let d = rng.gen_range(1..=3);
            let mix = random_mixture(k, d, &mut rng);
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let analytic = mix.grad_x_log_density(&x).unwrap();
            let fd = central_difference(
                |xs| mix.log_density(xs).unwrap(),
                &x,
                1e-5,
            );
            assert!(
                relative_error(&analytic, &fd, 1.0) <= 1e-4,
                "grad_x mismatch: {analytic:?} vs {fd:?}"
            );
        }
    }

    #[test]
    fn single_component_reparam_is_affine() {
        let mix = DiagGaussianMixture::gaussian_1d(2.0, 3.0);
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let s = mix.sample_reparam(0.1, &mut rng);
        assert_eq!(s.soft_weights, vec![1.0]);
        assert_eq!(s.x[0], 2.0 + 3.0f64.ln().exp() * s.gaussian_seeds[0]);
    }

    #[test]
    fn reparam_replay_is_bit_exact() {
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        let mix = random_mixture(4, 3, &mut rng);
        let sample = mix.sample_reparam(0.1, &mut rng);
        let (soft, x) = mix.reparam_forward(&sample.gumbel_seeds, &sample.gaussian_seeds, 0.1);
        assert_eq!(soft, sample.soft_weights);
        assert_eq!(x, sample.x);

        let mut rng_a = ChaCha12Rng::seed_from_u64(1234);
        let mut rng_b = ChaCha12Rng::seed_from_u64(1234);
        assert_eq!(
            mix.sample_reparam(0.5, &mut rng_a),
            mix.sample_reparam(0.5, &mut rng_b)
        );
    }

    #[test]
    fn soft_weights_sum_to_one_and_sharpen_with_temperature() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let mix = random_mixture(5, 2, &mut rng);
        let sample = mix.sample_reparam(1e-3, &mut rng);
        let total: f64 = sample.soft_weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);

        // near-zero temperature: one-hot on argmax(logits + gumbel)
        let argmax = mix
            .logits
            .iter()
            .zip(&sample.gumbel_seeds)
            .map(|(l, g)| l + g)
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap()
            .0;
        assert!(sample.soft_weights[argmax] > 1.0 - 1e-9);
    }

    #[test]
    fn single_component_sampling_moments() {
        let mix = DiagGaussianMixture::gaussian_1d(1.5, 0.7);
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| mix.sample_reparam(0.1, &mut rng).x[0]).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        let se_mean = 0.7 / (n as f64).sqrt();
        let se_var = 0.7 * 0.7 * (2.0 / n as f64).sqrt();
        assert!((mean - 1.5).abs() < 4.0 * se_mean, "mean {mean}");
        assert!((var - 0.49).abs() < 4.0 * se_var, "var {var}");
    }

    #[test]
    fn vjp_single_component_hand_rule() {
        let mix = DiagGaussianMixture::gaussian_1d(2.0, 3.0);
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let sample = mix.sample_reparam(0.1, &mut rng);
        let cot = [1.3];
        let g = mix.pathwise_vjp(&sample, &cot).unwrap();
        assert!((g.d_means[0] - 1.3).abs() < 1e-15);
        assert!((g.d_log_stds[0] - 1.3 * 3.0 * sample.gaussian_seeds[0]).abs() < 1e-12);
        assert_eq!(g.d_logits[0], 0.0);
    }

    #[test]
    fn vjp_zero_cotangent_is_zero() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let mix = random_mixture(3, 2, &mut rng);
        let sample = mix.sample_reparam(0.7, &mut rng);
        let g = mix.pathwise_vjp(&sample, &[0.0, 0.0]).unwrap();
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vjp_matches_finite_differences_over_parameters() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        for _ in 0..100 {
            let k = rng.gen_range(1..=4);
            let d = rng.gen_range(1..=3);
            let mix = random_mixture(k, d, &mut rng);
            let temp = rng.gen_range(0.5..1.5);
            let sample = mix.sample_reparam(temp, &mut rng);
            let cot: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();

            let analytic = mix.pathwise_vjp(&sample, &cot).unwrap().to_flat();
            let theta0 = mix.to_flat_params();
            let fd = central_difference(
                |theta| {
                    let mut probe = mix.clone();
                    probe.set_flat_params(theta).unwrap();
                    let (_, x) =
                        probe.reparam_forward(&sample.gumbel_seeds, &sample.gaussian_seeds, temp);
                    x.iter().zip(&cot).map(|(a, b)| a * b).sum()
                },
                &theta0,
                1e-5,
            );
            assert!(
                relative_error(&analytic, &fd, 1.0) <= 1e-4,
                "vjp mismatch at k={k} d={d}"
            );
        }
    }

    #[test]
    fn score_grad_single_gaussian_hand_values() {
        let mix = DiagGaussianMixture::gaussian_1d(0.0, 1.0);
        let g = mix.score_grad_log_q(&[2.0]).unwrap();
        assert!((g.d_means[0] - 2.0).abs() < 1e-12);
        assert!((g.d_log_stds[0] - 3.0).abs() < 1e-12); // x² − 1
        assert!(g.d_logits[0].abs() < 1e-15);
    }

    #[test]
    fn score_grad_symmetric_logit_components() {
        let mix =
            DiagGaussianMixture::new(vec![0.3, 0.3], vec![-1.0, 1.0], vec![0.0, 0.0], 1).unwrap();
        let g = mix.score_grad_log_q(&[0.0]).unwrap();
        assert!((g.d_logits[0] - g.d_logits[1]).abs() < 1e-12);
    }

    #[test]
    fn score_grad_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(41);
        for _ in 0..100 {
            let k = rng.gen_range(1..=4);
            let d = rng.gen_range(1..=3);
            let mix = random_mixture(k, d, &mut rng);
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let analytic = mix.score_grad_log_q(&x).unwrap().to_flat();
            let theta0 = mix.to_flat_params();
            let fd = central_difference(
                |theta| {
                    let mut probe = mix.clone();
                    probe.set_flat_params(theta).unwrap();
                    probe.log_density(&x).unwrap()
                },
                &theta0,
                1e-5,
            );
            assert!(
                relative_error(&analytic, &fd, 1.0) <= 1e-4,
                "score grad mismatch at k={k} d={d}"
            );
        }
    }

    #[test]
    fn moments_single_component_verbatim() {
        let mix = DiagGaussianMixture::gaussian_1d(1.5, 0.5);
        let (mean, var) = mix.mixture_moments();
        assert_eq!(mean, vec![1.5]);
        assert!((var[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn moments_symmetric_pair_law_of_total_variance() {
        let mix =
            DiagGaussianMixture::new(vec![0.0, 0.0], vec![-1.0, 1.0], vec![0.0, 0.0], 1).unwrap();
        let (mean, var) = mix.mixture_moments();
        assert!(mean[0].abs() < 1e-15);
        assert!((var[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn moments_match_monte_carlo() {
        let mut rng = ChaCha12Rng::seed_from_u64(51);
        let mix = random_mixture(3, 2, &mut rng);
        let (mean, var) = mix.mixture_moments();
        let n = 1_000_000usize;
        let mut sum = vec![0.0; 2];
        let mut sum_sq = vec![0.0; 2];
        for _ in 0..n {
            let x = mix.sample_exact(&mut rng);
            for dd in 0..2 {
                sum[dd] += x[dd];
                sum_sq[dd] += x[dd] * x[dd];
            }
        }
        for dd in 0..2 {
            let m = sum[dd] / n as f64;
            let v = sum_sq[dd] / n as f64 - m * m;
            // fourth moment of a unit-scale mixture is O(10); 3 SE bands
            let se_mean = (var[dd] / n as f64).sqrt();
            assert!((m - mean[dd]).abs() < 3.0 * se_mean, "dim {dd} mean");
            assert!((v - var[dd]).abs() < var[dd] * 0.02, "dim {dd} var");
        }
    }

    #[test]
    fn density_integrates_to_one_by_importance_sampling() {
        let mut rng = ChaCha12Rng::seed_from_u64(61);
        for d in [1usize, 2] {
            let mix = random_mixture(3, d, &mut rng);
            // wide isotropic proposal covering all components
            let proposal = DiagGaussianMixture::new(
                vec![0.0],
                vec![0.0; d],
                vec![5.0f64.ln(); d],
                d,
            )
            .unwrap();
            let n = 200_000;
            let mut total = 0.0;
            for _ in 0..n {
                let x = proposal.sample_exact(&mut rng);
                total +=
                    (mix.log_density(&x).unwrap() - proposal.log_density(&x).unwrap()).exp();
            }
            let integral = total / n as f64;
            assert!(
                (integral - 1.0).abs() < 0.01,
                "d={d}: integral {integral}"
            );
        }
    }

    #[test]
    fn json_round_trip_preserves_mixture() {
        let mut rng = ChaCha12Rng::seed_from_u64(71);
        let mix = random_mixture(3, 2, &mut rng);
        let json = mix.to_json();
        let back = DiagGaussianMixture::from_json(&json).unwrap();
        assert_eq!(mix, back);
        assert!(DiagGaussianMixture::from_json("{\"logits\": [0.0]}").is_err());
    }

    #[test]
    fn constructor_rejects_bad_shapes() {
        assert!(DiagGaussianMixture::new(vec![], vec![], vec![], 1).is_err());
        assert!(DiagGaussianMixture::new(vec![0.0], vec![0.0, 1.0], vec![0.0], 1).is_err());
        assert!(DiagGaussianMixture::new(vec![f64::NAN], vec![0.0], vec![0.0], 1).is_err());
    }

    #[test]
    fn flat_params_round_trip() {
        let mut rng = ChaCha12Rng::seed_from_u64(81);
        let mix = random_mixture(3, 2, &mut rng);
        let flat = mix.to_flat_params();
        assert_eq!(flat.len(), mix.param_count());
        let mut other = random_mixture(3, 2, &mut rng);
        other.set_flat_params(&flat).unwrap();
        assert_eq!(other, mix);
        assert!(other.set_flat_params(&flat[1..]).is_err());
    }
}
