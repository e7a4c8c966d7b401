//! Representation-quality protocols: cosine k-NN classification, linear
//! probing on frozen features, and collapse diagnostics.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::linalg::sym_eigenvalues;
use crate::nn::{ParamSet, L2_EPS};
use crate::optim::{lr_at, sgd_momentum_step, ExclusionRule, OptimConfig, OptimState};
use crate::rng::rng_from_seed;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KnnVote {
    Majority,
    /// Memory-bank style weighting: each neighbor votes with
    /// `exp(similarity / temperature)`.
    Weighted { temperature: f64 },
}

/// Cosine-distance k-NN with majority vote. Features are L2-normalized
/// internally; ties break by smallest summed distance, then lowest class
/// index. Returns the fraction of test points classified correctly.
pub fn knn_classify(
    train_feats: &Tensor,
    train_labels: &[u32],
    test_feats: &Tensor,
    test_labels: &[u32],
    k: usize,
    vote: KnnVote,
) -> Result<f64> {
    let n_train = train_feats.rows();
    if n_train == 0 {
        return Err(Error::invalid("empty train set"));
    }
    if k == 0 || k > n_train {
        return Err(Error::invalid(format!(
            "k must lie in [1, {n_train}], got {k}"
        )));
    }
    if train_labels.len() != n_train || test_labels.len() != test_feats.rows() {
        return Err(Error::invalid("label count does not match feature count"));
    }
    if train_feats.cols() != test_feats.cols() {
        return Err(Error::shape("train/test feature widths differ"));
    }
    let num_classes = train_labels.iter().copied().max().unwrap_or(0) as usize + 1;
    let train = train_feats.l2_normalize_rows(L2_EPS);
    let test = test_feats.l2_normalize_rows(L2_EPS);

    let mut correct = 0usize;
    for q in 0..test.rows() {
        // (distance, train index), k smallest with index tiebreak.
        let mut dists: Vec<(f64, usize)> = (0..n_train)
            .map(|i| {
                let sim: f64 = train
                    .row(i)
                    .iter()
                    .zip(test.row(q).iter())
                    .map(|(&a, &b)| a * b)
                    .sum();
                (1.0 - sim, i)
            })
            .collect();
        dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        let neighbors = &dists[..k];

        let mut votes = vec![0usize; num_classes];
        let mut summed = vec![0.0f64; num_classes];
        let mut scores = vec![0.0f64; num_classes];
        for &(d, i) in neighbors {
            let c = train_labels[i] as usize;
            votes[c] += 1;
            summed[c] += d;
            if let KnnVote::Weighted { temperature } = vote {
                scores[c] += ((1.0 - d) / temperature).exp();
            }
        }
        let winner = match vote {
            KnnVote::Majority => {
                let top = *votes.iter().max().unwrap();
                (0..num_classes)
                    .filter(|&c| votes[c] == top)
                    .min_by(|&a, &b| {
                        summed[a]
                            .partial_cmp(&summed[b])
                            .unwrap()
                            .then(a.cmp(&b))
                    })
                    .unwrap()
            }
            KnnVote::Weighted { .. } => {
                let best = scores.iter().cloned().fold(f64::MIN, f64::max);
                (0..num_classes).find(|&c| scores[c] == best).unwrap()
            }
        };
        if winner as u32 == test_labels[q] {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.rows() as f64)
}

#[derive(Debug, Clone, Copy)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            epochs: 100,
            batch_size: 64,
            base_lr: 0.5,
            momentum: 0.9,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

fn softmax_rows(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::MIN, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

fn argmax_row(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn probe_logits(feats: &Tensor, params: &ParamSet) -> Tensor {
    let w = params.expect("probe.weight");
    let b = params.expect("probe.bias");
    let mut logits = feats.matmul(w).expect("probe shapes");
    for r in 0..logits.rows() {
        for (v, bias) in logits.row_mut(r).iter_mut().zip(b.data().iter()) {
            *v += bias;
        }
    }
    logits
}

/// Multinomial logistic regression on frozen features, trained with
/// heavy-ball SGD under a cosine schedule. Returns top-1 test accuracy.
/// The feature tensors are read-only; nothing upstream is touched.
pub fn linear_probe(
    train_feats: &Tensor,
    train_labels: &[u32],
    test_feats: &Tensor,
    test_labels: &[u32],
    num_classes: usize,
    cfg: &ProbeConfig,
) -> Result<f64> {
    let n = train_feats.rows();
    if n == 0 {
        return Err(Error::invalid("empty probe train set"));
    }
    if train_labels.len() != n || test_labels.len() != test_feats.rows() {
        return Err(Error::invalid("label count does not match feature count"));
    }
    let distinct = {
        let mut seen = vec![false; num_classes];
        for &l in train_labels {
            if l as usize >= num_classes {
                return Err(Error::invalid("label outside [0, num_classes)"));
            }
            seen[l as usize] = true;
        }
        seen.iter().filter(|&&s| s).count()
    };
    if distinct < 2 {
        return Err(Error::invalid(
            "probe train set must contain at least two classes",
        ));
    }
    let d = train_feats.cols();
    let batch = cfg.batch_size.max(1).min(n);

    let mut params = ParamSet::new();
    params.insert("probe.weight", Tensor::zeros(vec![d, num_classes]));
    params.insert("probe.bias", Tensor::zeros(vec![num_classes]));
    let steps_per_epoch = n / batch;
    let opt_cfg = OptimConfig {
        base_lr: cfg.base_lr,
        batch_size: 256, // neutralize the scaling rule: peak lr == base_lr
        k: 1,
        weight_decay: cfg.weight_decay,
        momentum: cfg.momentum,
        warmup_epochs: 0,
        total_epochs: cfg.epochs,
        steps_per_epoch: steps_per_epoch.max(1),
        exclude: ExclusionRule::BiasAndNorm,
        trust_delta: 0.0,
    };
    let mut state = OptimState::new();
    let mut rng = rng_from_seed(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            if chunk.len() < batch {
                break;
            }
            let rows: Vec<&[f64]> = chunk.iter().map(|&i| train_feats.row(i)).collect();
            let x = Tensor::from_rows(&rows)?;
            let logits = probe_logits(&x, &params);
            let probs = softmax_rows(&logits);
            let bn = chunk.len() as f64;
            let mut grad_logits = probs;
            for (r, &i) in chunk.iter().enumerate() {
                grad_logits.row_mut(r)[train_labels[i] as usize] -= 1.0;
            }
            let grad_logits = grad_logits.scale(1.0 / bn);
            let grad_w = x.transpose().matmul(&grad_logits)?;
            let mut grad_b = vec![0.0; num_classes];
            for r in 0..grad_logits.rows() {
                for (j, v) in grad_logits.row(r).iter().enumerate() {
                    grad_b[j] += v;
                }
            }
            let grads = vec![grad_w, Tensor::vector(grad_b)];
            let lr = lr_at(step, &opt_cfg);
            sgd_momentum_step(&mut params, &grads, &opt_cfg, lr, &mut state)?;
            step += 1;
        }
    }

    let logits = probe_logits(test_feats, &params);
    let mut correct = 0usize;
    for r in 0..logits.rows() {
        if argmax_row(logits.row(r)) as u32 == test_labels[r] {
            correct += 1;
        }
    }
    Ok(correct as f64 / logits.rows().max(1) as f64)
}

/// Collapse diagnostics of a feature matrix.
#[derive(Debug, Clone)]
pub struct CollapseMetrics {
    /// Mean per-dimension standard deviation of the row-normalized features.
    pub feature_std_mean: f64,
    /// `exp(entropy)` of the covariance eigenvalues normalized to sum one;
    /// d for isotropic features, 1 for collapsed ones.
    pub effective_rank: f64,
    /// Eigenvalues of the feature covariance, descending.
    pub sigma_spectrum: Vec<f64>,
}

/// Eigenvalues of the normalized-feature covariance below this floor
/// count as zero variance: unit-scale features with less than numerical
/// resolution of spread along a direction are collapsed along it.
const RANK_EIGENVALUE_FLOOR: f64 = 1e-12;

pub fn collapse_metrics(feats: &Tensor) -> Result<CollapseMetrics> {
    let n = feats.rows();
    if n < 2 {
        return Err(Error::invalid("collapse metrics need n >= 2"));
    }
    let normalized = feats.l2_normalize_rows(L2_EPS);
    let d = feats.cols();
    let mut std_sum = 0.0;
    {
        let mean = normalized.mean_axis0();
        for j in 0..d {
            let mut acc = 0.0;
            for r in 0..n {
                let c = normalized.at(r, j) - mean.data()[j];
                acc += c * c;
            }
            std_sum += (acc / (n as f64 - 1.0)).sqrt();
        }
    }
    let norm_spectrum = sym_eigenvalues(&normalized.covariance()?)?;
    let clamped: Vec<f64> = norm_spectrum
        .iter()
        .map(|&v| if v > RANK_EIGENVALUE_FLOOR { v } else { 0.0 })
        .collect();
    let total: f64 = clamped.iter().sum();
    let effective_rank = if total <= 0.0 {
        1.0
    } else {
        let entropy: f64 = clamped
            .iter()
            .filter(|&&v| v > 0.0)
            .map(|&v| {
                let q = v / total;
                -q * q.ln()
            })
            .sum();
        entropy.exp()
    };
    let spectrum = sym_eigenvalues(&feats.covariance()?)?;
    Ok(CollapseMetrics {
        feature_std_mean: std_sum / d as f64,
        effective_rank,
        sigma_spectrum: spectrum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_gaussian_clusters, SplitTag};
    use rand::Rng;

    #[test]
    fn knn_exact_train_point_wins() {
        let train = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let labels = vec![0, 1];
        let acc = knn_classify(&train, &labels, &train, &labels, 1, KnnVote::Majority).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn knn_antipodal_classes_separate() {
        let train = Tensor::matrix(2, 2, vec![1.0, 0.0, -1.0, 0.0]).unwrap();
        let labels = vec![0, 1];
        let test = Tensor::matrix(2, 2, vec![0.9, 0.1, -0.9, -0.1]).unwrap();
        let acc = knn_classify(&train, &labels, &test, &labels, 1, KnnVote::Majority).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn knn_scale_invariance() {
        let ds = make_gaussian_clusters(3, 10, 6, 0.2, 3, SplitTag::Train).unwrap();
        let test = make_gaussian_clusters(3, 4, 6, 0.2, 4, SplitTag::Test).unwrap();
        // Different positive scalings must not change cosine k-NN.
        let a = knn_classify(&ds.inputs, &ds.labels, &test.inputs, &test.labels, 5, KnnVote::Majority)
            .unwrap();
        let b = knn_classify(
            &ds.inputs.scale(37.5),
            &ds.labels,
            &test.inputs.scale(0.01),
            &test.labels,
            5,
            KnnVote::Majority,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn knn_matches_brute_force_oracle() {
        // Independent all-pairs implementation with full sorting.
        let mut rng = rng_from_seed(17);
        let n_train = 40;
        let n_test = 25;
        let d = 5;
        let num_classes = 3;
        let train = Tensor::from_vec(
            vec![n_train, d],
            (0..n_train * d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let train_labels: Vec<u32> = (0..n_train).map(|i| (i % num_classes) as u32).collect();
        let test = Tensor::from_vec(
            vec![n_test, d],
            (0..n_test * d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let test_labels: Vec<u32> = (0..n_test).map(|i| (i % num_classes) as u32).collect();

        for k in [1usize, 3, 7] {
            let got = knn_classify(&train, &train_labels, &test, &test_labels, k, KnnVote::Majority)
                .unwrap();

            let tr = train.l2_normalize_rows(1e-12);
            let te = test.l2_normalize_rows(1e-12);
            let mut correct = 0;
            for q in 0..n_test {
                let mut all: Vec<(f64, usize)> = (0..n_train)
                    .map(|i| {
                        let sim: f64 = tr
                            .row(i)
                            .iter()
                            .zip(te.row(q).iter())
                            .map(|(&a, &b)| a * b)
                            .sum();
                        (1.0 - sim, i)
                    })
                    .collect();
                all.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let mut votes = vec![0usize; num_classes];
                let mut dist = vec![0.0f64; num_classes];
                for &(dd, i) in &all[..k] {
                    votes[train_labels[i] as usize] += 1;
                    dist[train_labels[i] as usize] += dd;
                }
                let top = *votes.iter().max().unwrap();
                let winner = (0..num_classes)
                    .filter(|&c| votes[c] == top)
                    .min_by(|&a, &b| dist[a].partial_cmp(&dist[b]).unwrap().then(a.cmp(&b)))
                    .unwrap();
                if winner as u32 == test_labels[q] {
                    correct += 1;
                }
            }
            let oracle = correct as f64 / n_test as f64;
            assert_eq!(got, oracle, "k={k}");
        }
    }

    #[test]
    fn knn_rejects_bad_k_and_empty_train() {
        let train = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let labels = vec![0, 1];
        assert!(knn_classify(&train, &labels, &train, &labels, 0, KnnVote::Majority).is_err());
        assert!(knn_classify(&train, &labels, &train, &labels, 3, KnnVote::Majority).is_err());
    }

    fn rng_from_seed(seed: u64) -> rand_chacha::ChaCha8Rng {
        crate::rng::rng_from_seed(seed)
    }

    #[test]
    fn probe_separable_blobs_above_99() {
        let train = make_gaussian_clusters(2, 40, 8, 0.05, 11, SplitTag::Train).unwrap();
        let test = make_gaussian_clusters(2, 10, 8, 0.05, 11, SplitTag::Test).unwrap();
        let cfg = ProbeConfig { epochs: 60, batch_size: 16, ..ProbeConfig::default() };
        let acc = linear_probe(
            &train.inputs,
            &train.labels,
            &test.inputs,
            &test.labels,
            2,
            &cfg,
        )
        .unwrap();
        assert!(acc >= 0.99, "separable blobs scored {acc}");
    }

    #[test]
    fn probe_shuffled_labels_near_chance() {
        // Label-free features: with the train labels shuffled against pure
        // noise inputs, test predictions are independent of the true test
        // labels, so accuracy is binomial around chance.
        let mut rng = rng_from_seed(13);
        let (n_train, n_test, d, classes) = (120, 100, 8, 4);
        let noise_feats = |rng: &mut rand_chacha::ChaCha8Rng, n: usize| {
            Tensor::from_vec(
                vec![n, d],
                (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap()
        };
        let train_feats = noise_feats(&mut rng, n_train);
        let test_feats = noise_feats(&mut rng, n_test);
        let mut train_labels: Vec<u32> = (0..n_train).map(|i| (i % classes) as u32).collect();
        train_labels.shuffle(&mut rng);
        let test_labels: Vec<u32> = (0..n_test).map(|i| (i % classes) as u32).collect();
        let cfg = ProbeConfig { epochs: 30, batch_size: 20, ..ProbeConfig::default() };
        let acc = linear_probe(
            &train_feats,
            &train_labels,
            &test_feats,
            &test_labels,
            classes,
            &cfg,
        )
        .unwrap();
        let chance = 1.0 / classes as f64;
        let sigma = (chance * (1.0 - chance) / n_test as f64).sqrt();
        assert!(
            (acc - chance).abs() <= 3.0 * sigma + 1e-9,
            "shuffled-label accuracy {acc} strays from chance {chance}"
        );
    }

    #[test]
    fn probe_train_eval_upper_bounds_heldout() {
        let train = make_gaussian_clusters(3, 30, 8, 0.3, 19, SplitTag::Train).unwrap();
        let test = make_gaussian_clusters(3, 15, 8, 0.3, 20, SplitTag::Test).unwrap();
        let cfg = ProbeConfig { epochs: 40, batch_size: 30, ..ProbeConfig::default() };
        let on_train = linear_probe(
            &train.inputs,
            &train.labels,
            &train.inputs,
            &train.labels,
            3,
            &cfg,
        )
        .unwrap();
        let on_test = linear_probe(
            &train.inputs,
            &train.labels,
            &test.inputs,
            &test.labels,
            3,
            &cfg,
        )
        .unwrap();
        assert!(on_train >= on_test, "{on_train} < {on_test}");
    }

    #[test]
    fn probe_rejects_single_class() {
        let train = Tensor::matrix(4, 2, vec![1.0, 0.0, 1.1, 0.0, 0.9, 0.1, 1.0, -0.1]).unwrap();
        let labels = vec![0, 0, 0, 0];
        let cfg = ProbeConfig::default();
        assert!(linear_probe(&train, &labels, &train, &labels, 2, &cfg).is_err());
    }

    #[test]
    fn collapse_metrics_identical_features() {
        let feats = Tensor::matrix(4, 3, vec![0.5; 12]).unwrap();
        let m = collapse_metrics(&feats).unwrap();
        assert!(m.feature_std_mean.abs() < 1e-12);
        assert!((m.effective_rank - 1.0).abs() < 1e-9);
    }

    #[test]
    fn collapse_metrics_whitened_features_full_rank() {
        // Zero-mean orthogonal columns scaled so the unbiased covariance
        // is exactly the identity.
        let n = 4;
        let h = [
            [1.0, -1.0, 1.0, -1.0],
            [1.0, 1.0, -1.0, -1.0],
            [1.0, -1.0, -1.0, 1.0],
        ];
        let scale = ((n - 1) as f64).sqrt() / (n as f64).sqrt();
        let mut data = vec![0.0; n * 3];
        for r in 0..n {
            for c in 0..3 {
                data[r * 3 + c] = h[c][r] * scale;
            }
        }
        let feats = Tensor::from_vec(vec![n, 3], data).unwrap();
        let cov = feats.covariance().unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((cov.at(i, j) - expect).abs() < 1e-12);
            }
        }
        let m = collapse_metrics(&feats).unwrap();
        assert!((m.effective_rank - 3.0).abs() < 1e-9);
        for s in &m.sigma_spectrum {
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn effective_rank_bounds() {
        let mut rng = rng_from_seed(31);
        for _ in 0..20 {
            let n = 12;
            let d = 5;
            let feats = Tensor::from_vec(
                vec![n, d],
                (0..n * d).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            )
            .unwrap();
            let m = collapse_metrics(&feats).unwrap();
            assert!(m.effective_rank >= 1.0 - 1e-9);
            assert!(m.effective_rank <= d as f64 + 1e-9);
        }
    }
}
