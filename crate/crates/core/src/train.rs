//! Command implementations behind the CLI: the training loop, the particle
//! simulation runner, and the evaluation protocols. Every function here is
//! a pure map from (config, seed, input bytes) to output bytes.

use rand::seq::SliceRandom;

use crate::augment::{make_multicrop_batch, make_view_batch, ViewBatch};
use crate::checkpoint::{save_state, write_container};
use crate::config::{DatasetKindCfg, EvalProtocol, LossVariant, OptimizerKind, RunConfig};
use crate::data::{load_idx_dataset, make_gaussian_clusters, Dataset, SplitTag};
use crate::dynamics::{run_simulation, ParticleSystem};
use crate::error::{Error, Result};
use crate::eval::{collapse_metrics, knn_classify, linear_probe, KnnVote, ProbeConfig};
use crate::graph::Graph;
use crate::losses::{
    alignment_metric, centroid_loss, multicrop_byol_loss, total_loss_with_attraction, LossWeights,
    NoiseDraw, TotalLoss, uniformity_metric,
};
use crate::model::{extract_features, forward, tau_cosine, SiameseState};
use crate::nn::{MlpSpec, StageMode, L2_EPS};
use crate::optim::{lars_step, lr_at, max_lr, sgd_momentum_step, OptimConfig, OptimState};
use crate::output::{fmt_num, render_chart_from_csv, render_csv};
use crate::rng::SeedSplitter;
use crate::tensor::Tensor;

/// Gaussian potential temperature for the uniformity metric.
pub const UNIFORMITY_T: f64 = 2.0;

pub const TRAIN_SCHEMA: &str = "train.v1";
pub const SIM_SCHEMA: &str = "sim.v1";
pub const EVAL_SCHEMA: &str = "eval.v1";

pub const TRAIN_COLUMNS: [&str; 14] = [
    "epoch",
    "l_c",
    "l_b",
    "l_s",
    "loss_total",
    "lr",
    "tau",
    "knn_acc",
    "alignment",
    "uniformity",
    "feature_std_mean",
    "effective_rank",
    "sigma_min",
    "sigma_max",
];

pub const SIM_COLUMNS: [&str; 8] = [
    "step",
    "l_c",
    "l_b",
    "l_s",
    "mean_pairwise_dist",
    "within_group_spread",
    "sigma_min",
    "sigma_max",
];

/// Build the train/test datasets. Gaussian clusters are generated as one
/// pool per class and split, so both sides share class centers.
pub fn build_datasets(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    match cfg.dataset.kind {
        DatasetKindCfg::Gaussian => {
            let d = &cfg.dataset;
            let per_total = d.per_class + d.test_per_class;
            let splitter = SeedSplitter::new(cfg.run.seed);
            let full = make_gaussian_clusters(
                d.num_classes,
                per_total,
                d.dim,
                d.spread,
                splitter.seed("dataset"),
                SplitTag::Train,
            )?;
            let mut train_rows = Vec::new();
            let mut test_rows = Vec::new();
            let mut train_labels = Vec::new();
            let mut test_labels = Vec::new();
            for c in 0..d.num_classes {
                let base = c * per_total;
                for i in 0..d.per_class {
                    train_rows.push(full.sample(base + i));
                    train_labels.push(c as u32);
                }
                for i in d.per_class..per_total {
                    test_rows.push(full.sample(base + i));
                    test_labels.push(c as u32);
                }
            }
            let train = Dataset::new(
                full.kind,
                Tensor::from_rows(&train_rows)?,
                train_labels,
                d.num_classes,
                SplitTag::Train,
            )?;
            let test = Dataset::new(
                full.kind,
                Tensor::from_rows(&test_rows)?,
                test_labels,
                d.num_classes,
                SplitTag::Test,
            )?;
            Ok((train, test))
        }
        DatasetKindCfg::Idx => {
            let d = &cfg.dataset;
            let train = load_idx_dataset(
                d.idx_train_images.as_ref(),
                d.idx_train_labels.as_ref(),
                SplitTag::Train,
            )?;
            let test = load_idx_dataset(
                d.idx_test_images.as_ref(),
                d.idx_test_labels.as_ref(),
                SplitTag::Test,
            )?;
            if train.input_dim() != test.input_dim() {
                return Err(Error::Config("train/test idx image sizes differ".into()));
            }
            Ok((train, test))
        }
    }
}

/// Resolve the architecture against the dataset width and initialize the
/// siamese state from the init stream.
pub fn build_state(cfg: &RunConfig, input_dim: usize) -> Result<SiameseState> {
    let backbone = cfg
        .model
        .backbone
        .clone()
        .unwrap_or_else(|| vec![input_dim, 256, 256]);
    if backbone[0] != input_dim {
        return Err(Error::Config(format!(
            "model.backbone input width {} does not match dataset width {input_dim}",
            backbone[0]
        )));
    }
    let repr = *backbone.last().unwrap();
    let projector = cfg.model.projector.clone().unwrap_or_else(|| vec![repr, 512, 128]);
    let proj_out = *projector.last().unwrap_or(&128);
    let predictor = cfg
        .model
        .predictor
        .clone()
        .unwrap_or_else(|| vec![proj_out, 512, proj_out]);
    let backbone_norm = cfg.model.backbone_norm.unwrap_or(cfg.model.norm);
    let spec = MlpSpec::with_norms(backbone, projector, predictor, backbone_norm, cfg.model.norm)?;
    let splitter = SeedSplitter::new(cfg.run.seed);
    SiameseState::new(spec, &mut splitter.rng("init"), cfg.ema.bias_correction)
}

fn loss_weights(cfg: &RunConfig, k_views: usize) -> LossWeights {
    LossWeights {
        k: k_views,
        lambda_s: cfg.loss.lambda_s,
        lambda_b: cfg.loss.lambda_b,
        sv_input: cfg.loss.sv_input,
        multicrop_v: cfg.loss.multicrop_v,
    }
}

fn optim_config(cfg: &RunConfig, steps_per_epoch: usize, k_views: usize) -> OptimConfig {
    OptimConfig {
        base_lr: cfg.optim.base_lr,
        batch_size: cfg.optim.batch_size,
        k: k_views,
        weight_decay: cfg.optim.weight_decay,
        momentum: cfg.optim.momentum,
        warmup_epochs: cfg.optim.warmup_epochs,
        total_epochs: cfg.optim.total_epochs,
        steps_per_epoch,
        exclude: cfg.optim.exclude,
        trust_delta: cfg.optim.trust_delta,
    }
}

struct EvalColumns {
    knn_acc: f64,
    alignment: f64,
    uniformity: f64,
    feature_std_mean: f64,
    effective_rank: f64,
    sigma_min: f64,
    sigma_max: f64,
}

/// Row-normalized features, decimated to at most `cap` rows by stride so
/// pairwise metrics stay cheap and deterministic.
fn decimate_rows(t: &Tensor, cap: usize) -> Tensor {
    let n = t.rows();
    if n <= cap {
        return t.clone();
    }
    let stride = n.div_ceil(cap);
    let rows: Vec<&[f64]> = (0..n).step_by(stride).map(|i| t.row(i)).collect();
    Tensor::from_rows(&rows).expect("decimation")
}

fn eval_columns(
    state: &mut SiameseState,
    train_ds: &Dataset,
    test_ds: &Dataset,
    cfg: &RunConfig,
    splitter: &SeedSplitter,
    epoch: usize,
) -> Result<EvalColumns> {
    let train_feats = extract_features(state, &train_ds.inputs, StageMode::Eval)?;
    let test_feats = extract_features(state, &test_ds.inputs, StageMode::Eval)?;
    let k = cfg.train.knn_k.min(train_ds.len());
    let knn_acc = knn_classify(
        &train_feats,
        &train_ds.labels,
        &test_feats,
        &test_ds.labels,
        k,
        KnnVote::Majority,
    )?;
    let metrics = collapse_metrics(&test_feats)?;
    let uniform_input = decimate_rows(&test_feats, 256).l2_normalize_rows(L2_EPS);
    let uniformity = uniformity_metric(&uniform_input, UNIFORMITY_T)?;

    // Alignment probe: two fresh views of a fixed test subset, compared in
    // feature space.
    let mut probe_rng = splitter.rng_indexed("probe", epoch as u64);
    let subset: Vec<usize> = (0..test_ds.len().min(64)).collect();
    let batch = make_view_batch(test_ds, &subset, 2, &cfg.augment, &mut probe_rng)?;
    let f0 = extract_features(state, &batch.views[0], StageMode::Eval)?.l2_normalize_rows(L2_EPS);
    let f1 = extract_features(state, &batch.views[1], StageMode::Eval)?.l2_normalize_rows(L2_EPS);
    let alignment = alignment_metric(&[f0, f1])?;

    Ok(EvalColumns {
        knn_acc,
        alignment,
        uniformity,
        feature_std_mean: metrics.feature_std_mean,
        effective_rank: metrics.effective_rank,
        sigma_min: *metrics.sigma_spectrum.last().unwrap_or(&0.0),
        sigma_max: *metrics.sigma_spectrum.first().unwrap_or(&0.0),
    })
}

fn attraction_node(
    graph: &mut Graph,
    variant: LossVariant,
    p_hat: &[crate::graph::NodeId],
    z_hat: &[Tensor],
) -> Result<crate::graph::NodeId> {
    match variant {
        LossVariant::Centroid => centroid_loss(graph, p_hat, z_hat),
        // Two views: the symmetric two-view loss. More: the multi-crop sum.
        LossVariant::Byol | LossVariant::Multicrop => multicrop_byol_loss(graph, p_hat, z_hat),
    }
}

pub struct TrainOutput {
    pub metrics_csv: String,
    pub final_checkpoint: Vec<u8>,
    /// `(epoch, bytes)` snapshots when `train.checkpoint_every > 0`.
    pub periodic_checkpoints: Vec<(usize, Vec<u8>)>,
}

pub fn run_training(cfg: &RunConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let splitter = SeedSplitter::new(cfg.run.seed);
    let (train_ds, test_ds) = build_datasets(cfg)?;
    let mut state = build_state(cfg, train_ds.input_dim())?;

    let n = train_ds.len();
    let batch = cfg.optim.batch_size;
    if batch > n {
        return Err(Error::Config(format!(
            "optim.batch_size {batch} exceeds train set size {n}"
        )));
    }
    let steps_per_epoch = n / batch;
    let k_views = match cfg.loss.variant {
        LossVariant::Centroid => cfg.loss.k,
        LossVariant::Byol => 2,
        LossVariant::Multicrop => cfg.loss.multicrop_v + 2,
    };
    let weights = loss_weights(cfg, k_views);
    let opt_cfg = optim_config(cfg, steps_per_epoch, k_views);
    opt_cfg.validate()?;
    let total_steps = (opt_cfg.total_steps() as u64).max(1);

    let mut aug_rng = splitter.rng("aug");
    let mut noise_rng = splitter.rng("noise");
    let noise_seed = splitter.seed("noise");
    let mut opt_state = OptimState::new();

    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut periodic = Vec::new();
    let mut indices: Vec<usize> = (0..n).collect();
    let mut global_step = 0u64;

    for epoch in 1..=cfg.optim.total_epochs {
        indices.shuffle(&mut aug_rng);
        let mut acc = (0.0, 0.0, 0.0, 0.0);
        let mut last_lr = 0.0;
        let mut last_tau = cfg.ema.tau_base;
        for chunk in indices.chunks(batch).take(steps_per_epoch) {
            let views: ViewBatch = match cfg.loss.variant {
                LossVariant::Multicrop => make_multicrop_batch(
                    &train_ds,
                    chunk,
                    cfg.loss.multicrop_v,
                    &cfg.augment,
                    &mut aug_rng,
                )?,
                _ => make_view_batch(&train_ds, chunk, k_views, &cfg.augment, &mut aug_rng)?,
            };
            let mut graph = Graph::new();
            let (theta_nodes, outputs) = forward(&mut graph, &mut state, &views.views, true)?;
            let noise = NoiseDraw::sample(
                chunk.len(),
                state.spec.embed_dim(),
                &mut noise_rng,
                noise_seed,
            );
            let attraction = attraction_node(
                &mut graph,
                cfg.loss.variant,
                &outputs.p_hat,
                &outputs.z_prime_hat,
            )?;
            let tl: TotalLoss = total_loss_with_attraction(
                &mut graph,
                attraction,
                &outputs.p,
                &outputs.p_hat,
                &noise,
                &weights,
            )?;
            let mut grads = graph.backward(tl.node)?;
            let grad_vec: Vec<Tensor> = theta_nodes
                .ids()
                .iter()
                .enumerate()
                .map(|(i, &id)| grads.take_or_zeros(id, state.theta.tensor_at(i).shape()))
                .collect();
            let lr = lr_at(global_step as usize, &opt_cfg);
            match cfg.optim.optimizer {
                OptimizerKind::Lars => {
                    lars_step(&mut state.theta, &grad_vec, &opt_cfg, lr, &mut opt_state)?
                }
                OptimizerKind::Sgd => {
                    sgd_momentum_step(&mut state.theta, &grad_vec, &opt_cfg, lr, &mut opt_state)?
                }
            }
            let tau = tau_cosine(global_step, total_steps, cfg.ema.tau_base)?;
            state.ema_update(tau)?;
            global_step += 1;
            last_lr = lr;
            last_tau = tau;
            acc.0 += tl.l_c;
            acc.1 += tl.l_b;
            acc.2 += tl.l_s;
            acc.3 += tl.total;
        }
        let steps = steps_per_epoch as f64;
        let mut row = vec![
            epoch.to_string(),
            fmt_num(acc.0 / steps),
            fmt_num(acc.1 / steps),
            fmt_num(acc.2 / steps),
            fmt_num(acc.3 / steps),
            fmt_num(last_lr),
            fmt_num(last_tau),
        ];
        let do_eval = epoch == cfg.optim.total_epochs
            || (cfg.train.eval_every > 0 && epoch % cfg.train.eval_every == 0);
        if do_eval {
            let cols = eval_columns(&mut state, &train_ds, &test_ds, cfg, &splitter, epoch)?;
            row.extend([
                fmt_num(cols.knn_acc),
                fmt_num(cols.alignment),
                fmt_num(cols.uniformity),
                fmt_num(cols.feature_std_mean),
                fmt_num(cols.effective_rank),
                fmt_num(cols.sigma_min),
                fmt_num(cols.sigma_max),
            ]);
        } else {
            row.extend(std::iter::repeat_n(String::new(), 7));
        }
        rows.push(row);
        if cfg.train.checkpoint_every > 0 && epoch % cfg.train.checkpoint_every == 0 {
            periodic.push((epoch, save_state(&state)));
        }
    }

    Ok(TrainOutput {
        metrics_csv: render_csv(&TRAIN_COLUMNS, TRAIN_SCHEMA, &rows),
        final_checkpoint: save_state(&state),
        periodic_checkpoints: periodic,
    })
}

/// Final trained state plus the datasets, for callers that evaluate
/// beyond the CSV (the acceptance suite does).
pub fn run_training_with_state(cfg: &RunConfig) -> Result<(TrainOutput, SiameseState, Dataset, Dataset)> {
    let out = run_training(cfg)?;
    let state = crate::checkpoint::load_state(&out.final_checkpoint)?;
    let (train_ds, test_ds) = build_datasets(cfg)?;
    Ok((out, state, train_ds, test_ds))
}

pub struct SimOutput {
    pub trajectory_csv: String,
    pub final_state: Vec<u8>,
    pub svg: Option<String>,
}

pub fn run_simulate(cfg: &RunConfig) -> Result<SimOutput> {
    cfg.validate()?;
    let mut sys = ParticleSystem::new(cfg.sim_config())?;
    let diags = run_simulation(&mut sys)?;
    let rows: Vec<Vec<String>> = diags
        .iter()
        .map(|d| {
            vec![
                d.step.to_string(),
                fmt_num(d.l_c),
                fmt_num(d.l_b),
                fmt_num(d.l_s),
                fmt_num(d.mean_pairwise_dist),
                fmt_num(d.within_group_spread),
                fmt_num(d.sigma_min),
                fmt_num(d.sigma_max),
            ]
        })
        .collect();
    let trajectory_csv = render_csv(&SIM_COLUMNS, SIM_SCHEMA, &rows);

    let mut entries: Vec<(String, Tensor)> = Vec::new();
    entries.push(("meta.step".into(), Tensor::scalar(sys.step as f64)));
    for (j, t) in sys.fast.iter().enumerate() {
        entries.push((format!("fast.{j}"), t.clone()));
    }
    for (j, t) in sys.slow.iter().enumerate() {
        entries.push((format!("slow.{j}"), t.clone()));
    }
    let final_state = write_container(&entries);

    let svg = if cfg.sim.svg {
        Some(render_chart_from_csv(&trajectory_csv, "particle trajectory diagnostics")?)
    } else {
        None
    };
    Ok(SimOutput { trajectory_csv, final_state, svg })
}

pub struct EvalOutput {
    /// Human-readable report lines.
    pub report: String,
    /// Protocol-tagged CSV of the same numbers.
    pub csv: String,
}

pub fn run_eval(cfg: &RunConfig, checkpoint: &[u8]) -> Result<EvalOutput> {
    cfg.validate()?;
    let mut state = crate::checkpoint::load_state(checkpoint)?;
    let (train_ds, test_ds) = build_datasets(cfg)?;
    if state.spec.input_dim() != train_ds.input_dim() {
        return Err(Error::Checkpoint(format!(
            "incompatible checkpoint: expects input width {}, dataset provides {}",
            state.spec.input_dim(),
            train_ds.input_dim()
        )));
    }
    let train_feats = extract_features(&mut state, &train_ds.inputs, StageMode::Eval)?;
    let test_feats = extract_features(&mut state, &test_ds.inputs, StageMode::Eval)?;

    let mut report = String::new();
    let mut rows: Vec<Vec<String>> = Vec::new();
    let do_knn = matches!(cfg.eval.protocol, EvalProtocol::Knn | EvalProtocol::Both);
    let do_probe = matches!(cfg.eval.protocol, EvalProtocol::Probe | EvalProtocol::Both);
    if do_knn {
        let k = cfg.eval.knn_k.min(train_ds.len());
        let vote = if cfg.eval.knn_weighted {
            KnnVote::Weighted { temperature: cfg.eval.knn_temperature }
        } else {
            KnnVote::Majority
        };
        let acc = knn_classify(
            &train_feats,
            &train_ds.labels,
            &test_feats,
            &test_ds.labels,
            k,
            vote,
        )?;
        report.push_str(&format!(
            "knn k={k} weighted={} accuracy={}\n",
            cfg.eval.knn_weighted,
            fmt_num(acc)
        ));
        rows.push(vec![
            "knn".into(),
            format!("k={k};weighted={}", cfg.eval.knn_weighted),
            fmt_num(acc),
        ]);
    }
    if do_probe {
        let splitter = SeedSplitter::new(cfg.run.seed);
        let probe_cfg = ProbeConfig {
            epochs: cfg.eval.probe_epochs,
            batch_size: cfg.eval.probe_batch_size,
            base_lr: cfg.eval.probe_lr,
            momentum: cfg.eval.probe_momentum,
            weight_decay: cfg.eval.probe_weight_decay,
            seed: splitter.seed("probe"),
        };
        let acc = linear_probe(
            &train_feats,
            &train_ds.labels,
            &test_feats,
            &test_ds.labels,
            train_ds.num_classes,
            &probe_cfg,
        )?;
        report.push_str(&format!(
            "linear_probe epochs={} accuracy={}\n",
            cfg.eval.probe_epochs,
            fmt_num(acc)
        ));
        rows.push(vec![
            "linear_probe".into(),
            format!("epochs={}", cfg.eval.probe_epochs),
            fmt_num(acc),
        ]);
    }
    let metrics = collapse_metrics(&test_feats)?;
    report.push_str(&format!(
        "collapse feature_std_mean={} effective_rank={}\n",
        fmt_num(metrics.feature_std_mean),
        fmt_num(metrics.effective_rank)
    ));
    rows.push(vec![
        "collapse".into(),
        "feature_std_mean".into(),
        fmt_num(metrics.feature_std_mean),
    ]);
    rows.push(vec![
        "collapse".into(),
        "effective_rank".into(),
        fmt_num(metrics.effective_rank),
    ]);
    Ok(EvalOutput {
        report,
        csv: render_csv(&["protocol", "params", "value"], EVAL_SCHEMA, &rows),
    })
}

/// The initial checkpoint for a config (zero-epoch state).
pub fn init_checkpoint(cfg: &RunConfig) -> Result<Vec<u8>> {
    cfg.validate()?;
    let (train_ds, _) = build_datasets(cfg)?;
    let state = build_state(cfg, train_ds.input_dim())?;
    Ok(save_state(&state))
}

/// Peak learning rate implied by a config (exposed for tests and logs).
pub fn peak_lr(cfg: &RunConfig) -> f64 {
    let k_views = match cfg.loss.variant {
        LossVariant::Centroid => cfg.loss.k,
        LossVariant::Byol => 2,
        LossVariant::Multicrop => cfg.loss.multicrop_v + 2,
    };
    max_lr(&optim_config(cfg, 1, k_views))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> RunConfig {
        RunConfig::from_text(
            "\
[run]
seed = 11
[dataset]
num_classes = 3
per_class = 12
test_per_class = 4
dim = 6
spread = 0.15
[model]
backbone = 6,16,8
projector = 8,16,6
predictor = 6,16,6
norm = batch
[loss]
k = 2
[optim]
batch_size = 6
total_epochs = 2
warmup_epochs = 1
base_lr = 0.2
[train]
eval_every = 1
",
            &[],
        )
        .unwrap()
    }

    #[test]
    fn zero_epochs_gives_header_only_csv_and_init_checkpoint() {
        let mut cfg = tiny_cfg();
        cfg.optim.total_epochs = 0;
        cfg.optim.warmup_epochs = 0;
        let out = run_training(&cfg).unwrap();
        let lines: Vec<&str> = out.metrics_csv.lines().collect();
        assert_eq!(lines.len(), 1, "header only");
        assert!(lines[0].starts_with("epoch,"));
        assert!(lines[0].ends_with("schema=train.v1"));
        // Final checkpoint equals the init checkpoint.
        let init = init_checkpoint(&cfg).unwrap();
        assert_eq!(out.final_checkpoint, init);
    }

    #[test]
    fn training_smoke_and_determinism() {
        let cfg = tiny_cfg();
        let a = run_training(&cfg).unwrap();
        let b = run_training(&cfg).unwrap();
        assert_eq!(a.metrics_csv, b.metrics_csv, "byte-identical CSVs");
        assert_eq!(a.final_checkpoint, b.final_checkpoint);
        assert_eq!(a.metrics_csv.lines().count(), 3, "header + 2 epochs");
        // Losses are finite numbers.
        for line in a.metrics_csv.lines().skip(1) {
            let first = line.split(',').nth(1).unwrap();
            let v: f64 = first.parse().unwrap();
            assert!(v.is_finite());
        }
    }

    #[test]
    fn eval_runs_on_trained_checkpoint() {
        let cfg = tiny_cfg();
        let out = run_training(&cfg).unwrap();
        let mut ecfg = cfg.clone();
        ecfg.eval.protocol = EvalProtocol::Both;
        ecfg.eval.probe_epochs = 5;
        let e1 = run_eval(&ecfg, &out.final_checkpoint).unwrap();
        let e2 = run_eval(&ecfg, &out.final_checkpoint).unwrap();
        assert_eq!(e1.report, e2.report, "identical reports");
        assert_eq!(e1.csv, e2.csv);
        assert!(e1.report.contains("knn"));
        assert!(e1.report.contains("linear_probe"));
    }

    #[test]
    fn eval_rejects_incompatible_checkpoint() {
        let cfg = tiny_cfg();
        let out = run_training(&cfg).unwrap();
        let mut other = tiny_cfg();
        other.dataset.dim = 9;
        other.model.backbone = None; // re-derive from the new width
        other.model.projector = None;
        other.model.predictor = None;
        let err = run_eval(&other, &out.final_checkpoint);
        assert!(err.is_err());
    }

    #[test]
    fn simulate_deterministic_and_svg_pure() {
        let mut cfg = tiny_cfg();
        cfg.sim.steps = 5;
        cfg.sim.n_images = 4;
        cfg.sim.k = 2;
        cfg.sim.dim = 3;
        cfg.sim.svg = true;
        let a = run_simulate(&cfg).unwrap();
        let b = run_simulate(&cfg).unwrap();
        assert_eq!(a.trajectory_csv, b.trajectory_csv);
        assert_eq!(a.final_state, b.final_state);
        assert_eq!(a.svg, b.svg);
        assert_eq!(a.trajectory_csv.lines().count(), 7, "header + step0 + 5 steps");
    }

    #[test]
    fn multicrop_variant_trains() {
        let mut cfg = tiny_cfg();
        cfg.loss.variant = LossVariant::Multicrop;
        cfg.loss.multicrop_v = 2;
        cfg.optim.total_epochs = 1;
        let out = run_training(&cfg).unwrap();
        assert_eq!(out.metrics_csv.lines().count(), 2);
    }

    #[test]
    fn byol_variant_trains() {
        let mut cfg = tiny_cfg();
        cfg.loss.variant = LossVariant::Byol;
        cfg.loss.k = 2;
        cfg.loss.lambda_s = 0.0;
        cfg.loss.lambda_b = 0.0;
        cfg.optim.total_epochs = 1;
        let out = run_training(&cfg).unwrap();
        assert_eq!(out.metrics_csv.lines().count(), 2);
    }
}
