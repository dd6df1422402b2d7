//! Synthetic two-view classification data whose canonical correlations and
//! per-view Bayes accuracies are known in closed form or by exact simulation.
//!
//! Per class `c` a prototype `mu_c ~ N(0, s^2 I)` lives in a `latent_dim`
//! space. A sample draws `u, w ~ N(0, I)` and sets
//!
//! ```text
//! z      = mu_c + u
//! t      = rho (tau mu_c + u) + sqrt(1 - rho^2) S^{1/2} w,   S = tau^2 Cov(mu) + I
//! visual = Av z + sigma_v e_v
//! text   = At t + sigma_t e_t
//! ```
//!
//! where `Cov(mu)` is the covariance of the class-uniform prototype mixture
//! and `Av`, `At` have orthonormal columns. `S` makes `Cov(t) = Cov(z)` when
//! `tau = 1`, so with no observation noise every population canonical
//! correlation equals `rho`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;

use super::dataset::{Dataset, MultimodalSample};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, inv_sqrt_sym, orthonormalize_columns, solve_lower, svd, sym_eig, Matrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub latent_dim: usize,
    pub visual_dim: usize,
    pub text_dim: usize,
    /// Cross-modal correlation of the latent paths.
    pub rho: f64,
    /// Standard deviation of the class prototypes.
    pub separation: f64,
    pub visual_noise: f64,
    pub text_noise: f64,
    /// Fraction of the class prototype carried by the text path.
    pub text_informativeness: f64,
    pub seed: u64,
    /// Seed for the mixing matrices; defaults to `seed`. Sharing it across
    /// configs keeps the same observation geometry.
    pub mixer_seed: Option<u64>,
    /// Monte-Carlo draws for the Bayes accuracy estimates.
    pub bayes_samples: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 20,
            samples_per_class: 40,
            latent_dim: 10,
            visual_dim: 32,
            text_dim: 32,
            rho: 0.9,
            separation: 1.0,
            visual_noise: 0.5,
            text_noise: 0.1,
            text_informativeness: 1.0,
            seed: 0,
            mixer_seed: None,
            bayes_samples: 20_000,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        for (name, v) in [
            ("num_classes", self.num_classes),
            ("samples_per_class", self.samples_per_class),
            ("latent_dim", self.latent_dim),
            ("visual_dim", self.visual_dim),
            ("text_dim", self.text_dim),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.visual_dim < self.latent_dim || self.text_dim < self.latent_dim {
            return bad(format!(
                "visual_dim ({}) and text_dim ({}) must be at least latent_dim ({})",
                self.visual_dim, self.text_dim, self.latent_dim
            ));
        }
        for (name, v) in [("rho", self.rho), ("text_informativeness", self.text_informativeness)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} = {v} must lie in [0, 1]"));
            }
        }
        for (name, v) in [
            ("separation", self.separation),
            ("visual_noise", self.visual_noise),
            ("text_noise", self.text_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// Everything the generator knows about the data it produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SynthConfig,
    /// `num_classes x latent_dim`.
    pub prototypes: Matrix,
    /// `visual_dim x latent_dim`, orthonormal columns.
    pub visual_mixer: Matrix,
    /// `text_dim x latent_dim`, orthonormal columns.
    pub text_mixer: Matrix,
    pub rho: f64,
    /// Population canonical correlations of (visual, text), descending.
    pub population_correlations: Vec<f64>,
    pub bayes_accuracy_visual: f64,
    pub bayes_accuracy_text: f64,
}

impl GroundTruth {
    /// Coordinates of visual rows in the latent basis (`x Av`).
    pub fn visual_latent(&self, x: &Matrix) -> Result<Matrix> {
        x.matmul(&self.visual_mixer)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn gaussian(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn sym_sqrt(m: &Matrix) -> Result<Matrix> {
    let (vals, vecs) = sym_eig(m)?;
    let n = m.rows();
    let roots: Vec<f64> = vals.iter().map(|v| v.max(0.0).sqrt()).collect();
    let scaled = Matrix::from_fn(n, n, |i, j| vecs[(i, j)] * roots[j]);
    scaled.matmul_t(&vecs)
}

/// Covariance of the class-uniform mixture of prototype rows.
fn prototype_covariance(protos: &Matrix) -> Matrix {
    let (c, l) = protos.shape();
    let mean = protos.column_means();
    Matrix::from_fn(l, l, |i, j| {
        (0..c).map(|k| (protos[(k, i)] - mean[i]) * (protos[(k, j)] - mean[j])).sum::<f64>() / c as f64
    })
}

fn mat_vec(m: &Matrix, v: &[f64]) -> Vec<f64> {
    (0..m.rows()).map(|i| m.row(i).iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

pub fn gen_synth(cfg: &SynthConfig) -> Result<(Dataset, GroundTruth)> {
    cfg.validate()?;
    let (c, l) = (cfg.num_classes, cfg.latent_dim);
    let (rho, tau) = (cfg.rho, cfg.text_informativeness);

    let mut mix_rng = stream(cfg.mixer_seed.unwrap_or(cfg.seed), 0);
    let av = orthonormalize_columns(&Matrix::new(cfg.visual_dim, l, gaussian(&mut mix_rng, cfg.visual_dim * l))?)?;
    let at = orthonormalize_columns(&Matrix::new(cfg.text_dim, l, gaussian(&mut mix_rng, cfg.text_dim * l))?)?;

    // Prototypes are a fixed draw scaled by the separation, so sweeping the
    // separation leaves every other random quantity unchanged.
    let mut proto_rng = stream(cfg.seed, 1);
    let protos = Matrix::new(c, l, gaussian(&mut proto_rng, c * l))?.scale(cfg.separation);
    let cov_mu = prototype_covariance(&protos);
    let s = cov_mu.scale(tau * tau).add(&Matrix::identity(l))?;
    let s_half = sym_sqrt(&s)?;
    let resid = (1.0 - rho * rho).max(0.0).sqrt();

    let mut rng = stream(cfg.seed, 2);
    let mut samples = Vec::with_capacity(c * cfg.samples_per_class);
    for class in 0..c {
        let mu = protos.row(class);
        for i in 0..cfg.samples_per_class {
            let u = gaussian(&mut rng, l);
            let w = gaussian(&mut rng, l);
            let sw = mat_vec(&s_half, &w);
            let z: Vec<f64> = mu.iter().zip(&u).map(|(m, u)| m + u).collect();
            let t: Vec<f64> = (0..l).map(|k| rho * (tau * mu[k] + u[k]) + resid * sw[k]).collect();
            let mut visual = mat_vec(&av, &z);
            for x in &mut visual {
                *x += cfg.visual_noise * rng.sample::<f64, _>(StandardNormal);
            }
            let mut text = mat_vec(&at, &t);
            for x in &mut text {
                *x += cfg.text_noise * rng.sample::<f64, _>(StandardNormal);
            }
            samples.push(MultimodalSample {
                id: format!("c{class}-{i}"),
                label: class,
                visual,
                text,
            });
        }
    }

    let population_correlations = population_correlations(&cov_mu, &s, cfg)?;
    let (bayes_v, bayes_t) = bayes_accuracies(&protos, &s_half, &s, cfg)?;
    let truth = GroundTruth {
        config: cfg.clone(),
        prototypes: protos,
        visual_mixer: av,
        text_mixer: at,
        rho,
        population_correlations,
        bayes_accuracy_visual: bayes_v,
        bayes_accuracy_text: bayes_t,
    };
    Ok((Dataset::new(samples)?, truth))
}

/// The mixers' orthogonal complements carry only independent noise, so the
/// canonical correlations are those of the latent-coordinate covariances.
fn population_correlations(cov_mu: &Matrix, s: &Matrix, cfg: &SynthConfig) -> Result<Vec<f64>> {
    let l = cfg.latent_dim;
    let eye = Matrix::identity(l);
    let sx = cov_mu.add(&eye.scale(1.0 + cfg.visual_noise.powi(2)))?;
    let sy = s.add(&eye.scale(cfg.text_noise.powi(2)))?;
    let sxy = cov_mu.scale(cfg.text_informativeness).add(&eye)?.scale(cfg.rho);
    let t = inv_sqrt_sym(&sx, 0.0)?.matmul(&sxy)?.matmul(&inv_sqrt_sym(&sy, 0.0)?)?;
    Ok(svd(&t)?.s)
}

/// Bayes classifier accuracy per view, estimated on `bayes_samples` fresh
/// draws with classes visited round-robin. Both views are Gaussian with a
/// shared within-class covariance, so the optimal rule is nearest class mean
/// in whitened latent coordinates. Exact distance ties split the credit,
/// which makes coincident class means score exactly `1 / num_classes`.
fn bayes_accuracies(protos: &Matrix, s_half: &Matrix, s: &Matrix, cfg: &SynthConfig) -> Result<(f64, f64)> {
    let (c, l) = protos.shape();
    let (rho, tau) = (cfg.rho, cfg.text_informativeness);
    let resid = (1.0 - rho * rho).max(0.0).sqrt();

    // text: mean rho tau mu_c, covariance rho^2 I + (1 - rho^2) S + sigma_t^2 I
    let cov_t = s
        .scale(1.0 - rho * rho)
        .add(&Matrix::identity(l).scale(rho * rho + cfg.text_noise.powi(2)))?;
    let lt = cholesky(&cov_t)?;
    let text_means = solve_lower(&lt, &protos.scale(rho * tau).transpose())?.transpose();

    let mut rng = stream(cfg.seed, 3);
    // ties[k] counts draws where the true class shared the best score with
    // k - 1 others; dividing once at the end keeps chance exact.
    let mut ties_v = vec![0u64; c + 1];
    let mut ties_t = vec![0u64; c + 1];
    for trial in 0..cfg.bayes_samples {
        let class = trial % c;
        let mu = protos.row(class);
        let u = gaussian(&mut rng, l);
        let w = gaussian(&mut rng, l);
        let ev = gaussian(&mut rng, l);
        let et = gaussian(&mut rng, l);
        let sw = mat_vec(s_half, &w);

        let xv: Vec<f64> = (0..l).map(|k| mu[k] + u[k] + cfg.visual_noise * ev[k]).collect();
        ties_v[nearest_ties(protos, &xv, class)] += 1;

        let xt: Vec<f64> = (0..l)
            .map(|k| rho * (tau * mu[k] + u[k]) + resid * sw[k] + cfg.text_noise * et[k])
            .collect();
        let wt = solve_lower(&lt, &Matrix::column_vector(&xt))?;
        ties_t[nearest_ties(&text_means, wt.data(), class)] += 1;
    }
    let n = cfg.bayes_samples.max(1) as f64;
    let credit = |ties: &[u64]| ties.iter().enumerate().skip(1).map(|(k, &m)| m as f64 / k as f64).sum::<f64>() / n;
    Ok((credit(&ties_v), credit(&ties_t)))
}

/// Size of the tie group at the minimum distance if `truth` is in it, else 0.
fn nearest_ties(means: &Matrix, x: &[f64], truth: usize) -> usize {
    let d: Vec<f64> = (0..means.rows())
        .map(|j| means.row(j).iter().zip(x).map(|(m, v)| (m - v) * (m - v)).sum())
        .collect();
    let best = d.iter().copied().fold(f64::INFINITY, f64::min);
    if d[truth] > best {
        return 0;
    }
    d.iter().filter(|&&v| v == best).count()
}

/// `n` paired rows whose population canonical correlations are `rhos`:
/// column `i` of `y` is `rho_i x_i + sqrt(1 - rho_i^2) e_i`.
pub fn correlated_pair(n: usize, rhos: &[f64], seed: u64) -> Result<(Matrix, Matrix)> {
    if let Some(r) = rhos.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::InvalidArgument(format!("correlation {r} outside [0, 1]")));
    }
    let k = rhos.len();
    let mut rng = stream(seed, 4);
    let x = Matrix::new(n, k, gaussian(&mut rng, n * k))?;
    let e = Matrix::new(n, k, gaussian(&mut rng, n * k))?;
    let y = Matrix::from_fn(n, k, |i, j| {
        let r = rhos[j];
        r * x[(i, j)] + (1.0 - r * r).sqrt() * e[(i, j)]
    });
    Ok((x, y))
}
