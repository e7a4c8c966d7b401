//! Network-free particle simulator: fast (online) and slow (target)
//! embedding matrices evolved directly by the gradients of the training
//! losses, to study collapse, dispersion, and fast-slow coupling in
//! isolation.
//!
//! Particles live in R^d and are re-normalized to the unit sphere before
//! the centroid and Brownian terms see them; the singular value term acts
//! on the raw positions. Row i of every view matrix belongs to image i,
//! so the particle-to-image grouping is structural.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::linalg::sym_eigenvalues;
use crate::losses::{brownian_loss, centroid_loss, singular_value_loss, NoiseDraw, SvInput};
use crate::nn::L2_EPS;
use crate::rng::SeedSplitter;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParticleInit {
    /// Fast positions i.i.d. standard normal, slow a copy of fast.
    Random,
    /// Every particle (fast and slow) at one shared random unit vector.
    Collapsed,
    /// Fast random, slow all at one shared random unit vector: the
    /// early-training regime where the target maps everything together.
    CollapsedSlow,
}

impl ParticleInit {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(ParticleInit::Random),
            "collapsed" => Ok(ParticleInit::Collapsed),
            "collapsed_slow" => Ok(ParticleInit::CollapsedSlow),
            other => Err(Error::Config(format!(
                "unknown particle init '{other}' (expected random|collapsed|collapsed_slow)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ParticleInit::Random => "random",
            ParticleInit::Collapsed => "collapsed",
            ParticleInit::CollapsedSlow => "collapsed_slow",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DynamicsConfig {
    pub n_images: usize,
    /// Particles per image.
    pub k: usize,
    pub dim: usize,
    pub steps: usize,
    pub step_size: f64,
    pub momentum: f64,
    /// Slow-position EMA decay.
    pub tau: f64,
    /// Coefficient of the centroid attraction (1 = the training loss,
    /// 0 isolates the dispersive forces).
    pub centroid_weight: f64,
    pub lambda_s: f64,
    pub lambda_b: f64,
    pub sv_input: SvInput,
    pub init: ParticleInit,
    /// Per-particle Gaussian jitter added to the initial fast positions.
    pub init_jitter: f64,
    pub seed: u64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig {
            n_images: 16,
            k: 4,
            dim: 8,
            steps: 1000,
            step_size: 0.05,
            momentum: 0.9,
            tau: 0.99,
            centroid_weight: 1.0,
            lambda_s: 0.004,
            lambda_b: 0.5,
            sv_input: SvInput::RawPredictions,
            init: ParticleInit::Random,
            init_jitter: 0.0,
            seed: 0,
        }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_images < 2 {
            return Err(Error::invalid("particle system needs n >= 2 images"));
        }
        if self.k < 2 {
            return Err(Error::invalid("particle system needs K >= 2 views"));
        }
        if self.dim == 0 {
            return Err(Error::invalid("particle dimension must be >= 1"));
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::invalid("step_size must be finite and > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::invalid("tau must lie in [0, 1]"));
        }
        for (name, v) in [
            ("centroid_weight", self.centroid_weight),
            ("lambda_s", self.lambda_s),
            ("lambda_b", self.lambda_b),
            ("init_jitter", self.init_jitter),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Per-step trajectory diagnostics. Loss values are the forces applied in
/// the step; geometry describes the state after the step.
#[derive(Debug, Clone)]
pub struct StepDiagnostics {
    pub step: usize,
    pub l_c: f64,
    pub l_b: f64,
    pub l_s: f64,
    /// Mean distance between group centroids of normalized fast positions.
    pub mean_pairwise_dist: f64,
    /// Mean distance of normalized fast positions to their group centroid.
    pub within_group_spread: f64,
    /// Extremes over views of the raw-position covariance eigenvalues.
    pub sigma_min: f64,
    pub sigma_max: f64,
}

pub struct ParticleSystem {
    pub cfg: DynamicsConfig,
    /// K view matrices of shape `[n, d]`; row i belongs to image i.
    pub fast: Vec<Tensor>,
    pub slow: Vec<Tensor>,
    velocity: Vec<Tensor>,
    noise_rng: ChaCha8Rng,
    noise_seed: u64,
    pub step: usize,
}

impl ParticleSystem {
    pub fn new(cfg: DynamicsConfig) -> Result<Self> {
        cfg.validate()?;
        let splitter = SeedSplitter::new(cfg.seed);
        let mut init_rng = splitter.rng("sim-init");
        let (n, k, d) = (cfg.n_images, cfg.k, cfg.dim);

        let gaussian_views = |rng: &mut ChaCha8Rng| -> Vec<Tensor> {
            (0..k)
                .map(|_| {
                    let data: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
                    Tensor::from_vec(vec![n, d], data).expect("init shape")
                })
                .collect()
        };
        let shared_point = |rng: &mut ChaCha8Rng| -> Tensor {
            let mut u: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            for v in &mut u {
                *v /= norm;
            }
            let mut data = Vec::with_capacity(n * d);
            for _ in 0..n {
                data.extend_from_slice(&u);
            }
            Tensor::from_vec(vec![n, d], data).expect("init shape")
        };

        let (mut fast, slow) = match cfg.init {
            ParticleInit::Random => {
                let f = gaussian_views(&mut init_rng);
                let s = f.clone();
                (f, s)
            }
            ParticleInit::Collapsed => {
                let point = shared_point(&mut init_rng);
                let f: Vec<Tensor> = (0..k).map(|_| point.clone()).collect();
                let s = f.clone();
                (f, s)
            }
            ParticleInit::CollapsedSlow => {
                let f = gaussian_views(&mut init_rng);
                let point = shared_point(&mut init_rng);
                let s: Vec<Tensor> = (0..k).map(|_| point.clone()).collect();
                (f, s)
            }
        };
        if cfg.init_jitter > 0.0 {
            for view in &mut fast {
                for v in view.data_mut() {
                    *v += cfg.init_jitter * init_rng.sample::<f64, _>(StandardNormal);
                }
            }
        }

        let velocity = (0..k).map(|_| Tensor::zeros(vec![n, d])).collect();
        Ok(ParticleSystem {
            cfg,
            fast,
            slow,
            velocity,
            noise_rng: splitter.rng("sim-noise"),
            noise_seed: splitter.seed("sim-noise"),
            step: 0,
        })
    }

    fn normalized_views(views: &[Tensor]) -> Vec<Tensor> {
        views.iter().map(|t| t.l2_normalize_rows(L2_EPS)).collect()
    }

    /// Per-image centroid of the (normalized) view positions.
    pub fn group_centroids(views: &[Tensor]) -> Tensor {
        let (n, d) = (views[0].rows(), views[0].cols());
        let mut out = Tensor::zeros(vec![n, d]);
        for v in views {
            out = out.add(v);
        }
        out.scale(1.0 / views.len() as f64)
    }

    fn geometry(&self) -> (f64, f64, f64, f64) {
        let normalized = Self::normalized_views(&self.fast);
        let centroids = Self::group_centroids(&normalized);
        let n = centroids.rows();

        let mut pair_sum = 0.0;
        let mut pairs = 0usize;
        for i in 0..n {
            for j in (i + 1)..n {
                let d2: f64 = centroids
                    .row(i)
                    .iter()
                    .zip(centroids.row(j).iter())
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum();
                pair_sum += d2.sqrt();
                pairs += 1;
            }
        }
        let mean_pairwise = pair_sum / pairs as f64;

        let mut spread_sum = 0.0;
        let mut count = 0usize;
        for v in &normalized {
            for i in 0..n {
                let d2: f64 = v
                    .row(i)
                    .iter()
                    .zip(centroids.row(i).iter())
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum();
                spread_sum += d2.sqrt();
                count += 1;
            }
        }
        let spread = spread_sum / count as f64;

        let mut sigma_min = f64::INFINITY;
        let mut sigma_max = f64::NEG_INFINITY;
        for v in &self.fast {
            let cov = v.covariance().expect("n >= 2 by construction");
            let eigs = sym_eigenvalues(&cov).expect("symmetric covariance");
            sigma_max = sigma_max.max(*eigs.first().unwrap());
            sigma_min = sigma_min.min(*eigs.last().unwrap());
        }
        (mean_pairwise, spread, sigma_min, sigma_max)
    }

    fn plain_centroid_loss(&self) -> f64 {
        let p_hat = Self::normalized_views(&self.fast);
        let z_hat = Self::normalized_views(&self.slow);
        let centroids = Self::group_centroids(&z_hat);
        let (n, k) = (centroids.rows(), p_hat.len());
        let mut acc = 0.0;
        for v in &p_hat {
            for i in 0..n {
                acc += v
                    .row(i)
                    .iter()
                    .zip(centroids.row(i).iter())
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum::<f64>();
            }
        }
        acc / (n * k) as f64
    }

    fn plain_singular_loss(&self) -> f64 {
        let views: Vec<Tensor> = match self.cfg.sv_input {
            SvInput::RawPredictions => self.fast.clone(),
            SvInput::NormalizedPredictions => Self::normalized_views(&self.fast),
        };
        let d = self.cfg.dim;
        let mut acc = 0.0;
        for v in &views {
            let cov = v.covariance().expect("n >= 2 by construction");
            let mut fs = 0.0;
            for i in 0..d {
                for j in 0..d {
                    let target = if i == j { 1.0 } else { 0.0 };
                    let c = cov.at(i, j) - target;
                    fs += c * c;
                }
            }
            acc += fs;
        }
        acc / views.len() as f64
    }

    /// Diagnostics for the current state without stepping. The Brownian
    /// column is zero because no noise has been drawn for this state.
    pub fn current_diagnostics(&self) -> StepDiagnostics {
        let (mean_pairwise_dist, within_group_spread, sigma_min, sigma_max) = self.geometry();
        StepDiagnostics {
            step: self.step,
            l_c: self.plain_centroid_loss(),
            l_b: 0.0,
            l_s: self.plain_singular_loss(),
            mean_pairwise_dist,
            within_group_spread,
            sigma_min,
            sigma_max,
        }
    }

    /// EMA of the slow positions toward the fast positions.
    pub fn ema_slow_update(&mut self) {
        let tau = self.cfg.tau;
        for (s, f) in self.slow.iter_mut().zip(self.fast.iter()) {
            *s = s.scale(tau).add(&f.scale(1.0 - tau));
        }
    }

    /// One simulation step: normalize fast positions, evaluate the loss
    /// against the slow-position centroids with fresh per-image noise,
    /// descend the fast positions, then EMA the slow positions toward the
    /// fast ones.
    pub fn particle_step(&mut self) -> Result<StepDiagnostics> {
        let cfg = self.cfg;
        let (n, d) = (cfg.n_images, cfg.dim);

        let mut graph = Graph::new();
        let fast_ids: Vec<_> = self.fast.iter().map(|t| graph.leaf(t.clone())).collect();
        let p_hat: Vec<_> = fast_ids
            .iter()
            .map(|&id| graph.l2_normalize_rows(id, L2_EPS))
            .collect();
        let z_hat = Self::normalized_views(&self.slow);

        // Attraction toward the slow centroids; value always logged, force
        // applied only with positive weight.
        let centroid = centroid_loss(&mut graph, &p_hat, &z_hat)?;
        let l_c = graph.value(centroid).item();
        let mut total = if cfg.centroid_weight > 0.0 {
            Some(if cfg.centroid_weight == 1.0 {
                centroid
            } else {
                graph.scale(centroid, cfg.centroid_weight)
            })
        } else {
            None
        };

        // Isotropy force on the configured input; value always logged.
        let sv_views = match cfg.sv_input {
            SvInput::RawPredictions => &fast_ids,
            SvInput::NormalizedPredictions => &p_hat,
        };
        let sv = singular_value_loss(&mut graph, sv_views)?;
        let l_s = graph.value(sv).item();
        if cfg.lambda_s > 0.0 {
            let weighted = graph.scale(sv, cfg.lambda_s);
            total = Some(match total {
                Some(t) => graph.add(t, weighted)?,
                None => weighted,
            });
        }

        // Brownian force consumes randomness, so it only runs when active.
        let mut l_b = 0.0;
        if cfg.lambda_b > 0.0 {
            let noise = NoiseDraw::sample(n, d, &mut self.noise_rng, self.noise_seed);
            let b = brownian_loss(&mut graph, &p_hat, &noise)?;
            l_b = graph.value(b).item();
            let weighted = graph.scale(b, cfg.lambda_b);
            total = Some(match total {
                Some(t) => graph.add(t, weighted)?,
                None => weighted,
            });
        }

        if let Some(root) = total {
            let mut grads = graph.backward(root)?;
            for (j, &id) in fast_ids.iter().enumerate() {
                let g = grads.take_or_zeros(id, &[n, d]);
                let v = &mut self.velocity[j];
                *v = v.scale(cfg.momentum).add(&g);
                self.fast[j] = self.fast[j].sub(&v.scale(cfg.step_size));
            }
        }
        self.ema_slow_update();
        self.step += 1;

        let (mean_pairwise_dist, within_group_spread, sigma_min, sigma_max) = self.geometry();
        Ok(StepDiagnostics {
            step: self.step,
            l_c,
            l_b,
            l_s,
            mean_pairwise_dist,
            within_group_spread,
            sigma_min,
            sigma_max,
        })
    }
}

/// Run the configured number of steps, emitting the initial diagnostics
/// as step 0 followed by one row per step.
pub fn run_simulation(sys: &mut ParticleSystem) -> Result<Vec<StepDiagnostics>> {
    let mut rows = Vec::with_capacity(sys.cfg.steps + 1);
    rows.push(sys.current_diagnostics());
    for _ in 0..sys.cfg.steps {
        rows.push(sys.particle_step()?);
    }
    Ok(rows)
}
