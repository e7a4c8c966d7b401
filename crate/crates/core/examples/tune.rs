// Scratch harness for tuning run configurations. Not part of the library.
use embdyn_core::config::RunConfig;
use embdyn_core::eval::{collapse_metrics, knn_classify, KnnVote};
use embdyn_core::model::extract_features;
use embdyn_core::nn::{StageMode, L2_EPS};
use embdyn_core::train::run_training_with_state;

fn knn_and_rank(cfg_text: &str, overrides: &[String]) -> (f64, f64, f64) {
    let use_proj = std::env::var("TUNE_PROJ").is_ok();
    let cfg = RunConfig::from_text(cfg_text, overrides).unwrap();
    let (_, mut state, train_ds, test_ds) = run_training_with_state(&cfg).unwrap();
    let extract = if use_proj { embdyn_core::model::extract_projections } else { extract_features };
    let train_feats = extract(&mut state, &train_ds.inputs, StageMode::Eval).unwrap();
    let test_feats = extract(&mut state, &test_ds.inputs, StageMode::Eval).unwrap();
    let knn = knn_classify(
        &train_feats,
        &train_ds.labels,
        &test_feats,
        &test_ds.labels,
        5,
        KnnVote::Majority,
    )
    .unwrap();
    let m = collapse_metrics(&test_feats).unwrap();
    let uni = embdyn_core::losses::uniformity_metric(
        &test_feats.l2_normalize_rows(L2_EPS),
        2.0,
    )
    .unwrap();
    (knn, m.effective_rank, uni)
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mode = args.first().map(String::as_str).unwrap_or("collapse");
    let base = std::fs::read_to_string(args.get(1).map(String::as_str).unwrap_or("/tmp/tune_base.ini")).unwrap();
    let seeds: Vec<u64> = (0..args.get(2).map(|s| s.parse().unwrap()).unwrap_or(3)).collect();
    let extra: Vec<String> = args.iter().skip(3).cloned().collect();

    match mode {
        "collapse" => {
            for seed in &seeds {
                let mut o = vec![format!("run.seed={seed}")];
                o.extend(extra.clone());
                let mut o0 = o.clone();
                o0.push("loss.lambda_s=0".into());
                o0.push("loss.lambda_b=0".into());
                let t0 = std::time::Instant::now();
                let (knn0, rank0, _) = knn_and_rank(&base, &o0);
                let mut ob = o.clone();
                ob.push("loss.lambda_s=0".into());
                ob.push("loss.lambda_b=0.5".into());
                let (knnb, rankb, _) = knn_and_rank(&base, &ob);
                println!(
                    "seed {seed}: arm0 knn={knn0:.3} rank={rank0:.2} | armB knn={knnb:.3} rank={rankb:.2} ({:.1}s)",
                    t0.elapsed().as_secs_f64()
                );
            }
        }
        "ablation" => {
            let arms: Vec<(&str, Vec<String>)> = vec![
                ("A_byol_k2", vec!["loss.variant=byol".into(), "loss.k=2".into(), "loss.lambda_s=0".into(), "loss.lambda_b=0".into()]),
                ("B_k4", vec!["loss.k=4".into(), "loss.lambda_s=0".into(), "loss.lambda_b=0".into()]),
                ("Bs_k4_s", vec!["loss.k=4".into(), "loss.lambda_s=0.004".into(), "loss.lambda_b=0".into()]),
                ("Bb_k4_b", vec!["loss.k=4".into(), "loss.lambda_s=0".into(), "loss.lambda_b=0.5".into()]),
                ("C_k4_both", vec!["loss.k=4".into(), "loss.lambda_s=0.004".into(), "loss.lambda_b=0.5".into()]),
            ];
            for (name, arm) in &arms {
                let mut accs = Vec::new();
                let mut unis = Vec::new();
                let t0 = std::time::Instant::now();
                for seed in &seeds {
                    let mut o = vec![format!("run.seed={seed}")];
                    o.extend(extra.clone());
                    o.extend(arm.clone());
                    let (knn, _, uni) = knn_and_rank(&base, &o);
                    accs.push(knn);
                    unis.push(uni);
                }
                let mean: f64 = accs.iter().sum::<f64>() / accs.len() as f64;
                let mean_u: f64 = unis.iter().sum::<f64>() / unis.len() as f64;
                println!(
                    "{name}: mean_knn={mean:.4} accs={accs:?} mean_uni={mean_u:.3} ({:.1}s)",
                    t0.elapsed().as_secs_f64()
                );
            }
        }
        "gradstats" => {
            // Ratio |loss grad| / |w| for weight matrices late in training,
            // to place the weight-decay threshold between the two arms.
            use embdyn_core::augment::make_view_batch;
            use embdyn_core::graph::Graph;
            use embdyn_core::losses::{total_loss, LossWeights, NoiseDraw, SvInput};
            use embdyn_core::model::forward;
            use embdyn_core::nn::is_excluded_param;
            use embdyn_core::rng::SeedSplitter;
            use embdyn_core::train::{build_state, run_training};
            use rand::seq::SliceRandom;

            for lb in [0.0, 0.5] {
                let mut o = vec![
                    "run.seed=0".to_string(),
                    "loss.lambda_s=0".to_string(),
                    format!("loss.lambda_b={lb}"),
                ];
                o.extend(extra.clone());
                let cfg = RunConfig::from_text(&base, &o).unwrap();
                // Train fully, then measure gradients at the final state.
                let (_, mut state, train_ds, _) = run_training_with_state(&cfg).unwrap();
                let _ = run_training; let _ = build_state;
                let splitter = SeedSplitter::new(999);
                let mut rng = splitter.rng("probe-grads");
                let mut idx: Vec<usize> = (0..train_ds.len()).collect();
                idx.shuffle(&mut rng);
                let chunk: Vec<usize> = idx[..cfg.optim.batch_size].to_vec();
                let views = make_view_batch(&train_ds, &chunk, cfg.loss.k, &cfg.augment, &mut rng).unwrap();
                let mut graph = Graph::new();
                let (nodes, outputs) = forward(&mut graph, &mut state, &views.views, false).unwrap();
                let noise = NoiseDraw::sample(chunk.len(), state.spec.embed_dim(), &mut rng, 0);
                let w = LossWeights { k: cfg.loss.k, lambda_s: cfg.loss.lambda_s, lambda_b: cfg.loss.lambda_b, sv_input: SvInput::RawPredictions, multicrop_v: 0 };
                let tl = total_loss(&mut graph, &outputs.p, &outputs.p_hat, &outputs.z_prime_hat, &noise, &w).unwrap();
                let mut grads = graph.backward(tl.node).unwrap();
                println!("lambda_b={lb}:");
                for (i, &id) in nodes.ids().iter().enumerate() {
                    let name = state.theta.name_at(i).to_string();
                    if is_excluded_param(&name) { continue; }
                    let g = grads.take_or_zeros(id, state.theta.tensor_at(i).shape());
                    let wt = state.theta.tensor_at(i);
                    println!("  {name}: |g|/|w| = {:.3e}  (|w|={:.3e})", g.norm() / wt.norm().max(1e-30), wt.norm());
                }
            }
        }
        other => panic!("unknown mode {other}"),
    }
}
