use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::features::{FeatureBundle, FeatureKind};

fn random_bundle(rng: &mut ChaCha8Rng) -> FeatureBundle {
    let tensors = FeatureKind::ALL.map(|k| {
        let (l, c) = k.shape();
        Array2::from_shape_fn((l, c), |_| rng.random_range(-2.0f32..2.0))
    });
    FeatureBundle { tensors }
}

fn bundles(n: usize, seed: u64) -> Vec<FeatureBundle> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_bundle(&mut rng)).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn vecmat(x: &[f64], w: &Array2<f64>, b: &Array2<f64>) -> Vec<f64> {
    (0..w.ncols())
        .map(|j| b[[0, j]] + x.iter().enumerate().map(|(i, xi)| xi * w[[i, j]]).sum::<f64>())
        .collect()
}

/// Per-sample evaluation written with plain loops.
fn naive_reward(p: &ScorerParams, bundle: &FeatureBundle) -> f64 {
    let cfg = &p.config;
    let g = |n: &str| p.get(n).unwrap();
    let h_n = cfg.hidden;
    let mut tokens = Vec::new();
    for kind in &cfg.features {
        let name = kind.name();
        let x = bundle.get(*kind);
        let (mut h, mut c) = (vec![0.0; h_n], vec![0.0; h_n]);
        for t in 0..x.nrows() {
            let mut xt: Vec<f64> = x.row(t).iter().map(|&v| v as f64).collect();
            if cfg.uses_norm() {
                for (ch, v) in xt.iter_mut().enumerate() {
                    let m = g(&format!("{name}.bn.running_mean"))[[0, ch]];
                    let var = g(&format!("{name}.bn.running_var"))[[0, ch]];
                    *v = g(&format!("{name}.bn.gamma"))[[0, ch]] * (*v - m) / (var + cfg.bn_eps).sqrt()
                        + g(&format!("{name}.bn.beta"))[[0, ch]];
                }
            }
            let a = vecmat(&xt, g(&format!("{name}.lstm.w_ih")), g(&format!("{name}.lstm.b")));
            let r = vecmat(&h, g(&format!("{name}.lstm.w_hh")), &Array2::zeros((1, 4 * h_n)));
            let z: Vec<f64> = a.iter().zip(&r).map(|(a, b)| a + b).collect();
            for j in 0..h_n {
                let i = sigmoid(z[j]);
                let f = sigmoid(z[h_n + j]);
                let gg = z[2 * h_n + j].tanh();
                let o = sigmoid(z[3 * h_n + j]);
                c[j] = f * c[j] + i * gg;
                h[j] = o * c[j].tanh();
            }
        }
        let z: Vec<f64> = vecmat(&h, g(&format!("{name}.ff1.w")), g(&format!("{name}.ff1.b")))
            .into_iter()
            .map(|v| v.max(0.0))
            .collect();
        let tok = vecmat(&z, g(&format!("{name}.ff2.w")), g(&format!("{name}.ff2.b")));
        let pos = g(&format!("{name}.pos"));
        tokens.push(tok.iter().enumerate().map(|(j, v)| v + pos[[0, j]]).collect::<Vec<_>>());
    }
    let n_t = tokens.len();
    let mixed: Vec<Vec<f64>> = if cfg.uses_attention() {
        let proj = |pfx: &str| -> Vec<Vec<f64>> {
            tokens.iter().map(|t| vecmat(t, g(&format!("{pfx}.w")), g(&format!("{pfx}.b")))).collect()
        };
        let (q, k, v) = (proj("attn.q"), proj("attn.k"), proj("attn.v"));
        let dh = cfg.dim / cfg.heads;
        let masked = cfg.architecture != Architecture::Unmasked;
        let mut att = vec![vec![0.0; cfg.dim]; n_t];
        for hd in 0..cfg.heads {
            let cols = hd * dh..(hd + 1) * dh;
            for i in 0..n_t {
                let others: Vec<usize> = (0..n_t).filter(|&j| !(masked && j == i)).collect();
                let s: Vec<f64> = others
                    .iter()
                    .map(|&j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let z: f64 = s.iter().map(|x| x.exp()).sum();
                for (jj, &j) in others.iter().enumerate() {
                    for c in cols.clone() {
                        att[i][c] += s[jj].exp() / z * v[j][c];
                    }
                }
            }
        }
        att.iter()
            .zip(&tokens)
            .map(|(a, t)| {
                let o = vecmat(a, g("attn.o.w"), g("attn.o.b"));
                o.iter().zip(t).map(|(a, b)| a + b).collect()
            })
            .collect()
    } else {
        tokens
    };
    let w = p.feature_weights();
    mixed
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let hd: Vec<f64> = vecmat(t, g("head1.w"), g("head1.b")).into_iter().map(|v| v.max(0.0)).collect();
            w[[0, i]] * vecmat(&hd, g("head2.w"), g("head2.b"))[0].tanh()
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum()
}

fn perturb_running_stats(p: &mut ScorerParams, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..p.values.len() {
        if p.names[i].ends_with("running_mean") {
            p.values[i].mapv_inplace(|_| rng.random_range(-0.5..0.5));
        } else if p.names[i].ends_with("running_var") {
            p.values[i].mapv_inplace(|_| rng.random_range(0.5..2.0));
        }
    }
}

#[test]
fn forward_matches_loop_oracle_for_every_architecture() {
    let bs = bundles(5, 3);
    let refs: Vec<&FeatureBundle> = bs.iter().collect();
    for arch in [Architecture::Base, Architecture::NoNorm, Architecture::Unmasked, Architecture::Siloed] {
        let cfg = ScorerConfig { architecture: arch, ..ScorerConfig::default() };
        let mut p = init_params(&cfg, 11);
        perturb_running_stats(&mut p, 12);
        let got = score_bundles(&p, &refs).unwrap();
        for (b, r) in refs.iter().zip(&got) {
            let want = naive_reward(&p, b);
            assert!((want - r).abs() < 1e-10, "{arch:?}: {want} vs {r}");
        }
    }
}

#[test]
fn subset_of_features() {
    let cfg = ScorerConfig {
        features: vec![FeatureKind::Ttc, FeatureKind::SpeedLimit],
        ..ScorerConfig::default()
    };
    let p = init_params(&cfg, 1);
    let bs = bundles(2, 4);
    let refs: Vec<&FeatureBundle> = bs.iter().collect();
    let got = score_bundles(&p, &refs).unwrap();
    assert!((got[0] - naive_reward(&p, &bs[0])).abs() < 1e-10);
}

#[test]
fn zero_parameters_give_zero_reward() {
    let mut p = init_params(&ScorerConfig::default(), 0);
    for (v, &t) in p.values.iter_mut().zip(&p.trainable) {
        if t {
            v.fill(0.0);
        }
    }
    let bs = bundles(3, 1);
    let refs: Vec<&FeatureBundle> = bs.iter().collect();
    assert!(score_bundles(&p, &refs).unwrap().iter().all(|&r| r == 0.0));
}

#[test]
fn reward_is_linear_in_feature_weights() {
    let mut p = init_params(&ScorerConfig::default(), 5);
    let bs = bundles(4, 2);
    let refs: Vec<&FeatureBundle> = bs.iter().collect();
    let r1 = score_bundles(&p, &refs).unwrap();
    let w = p.index("w").unwrap();
    p.values[w].mapv_inplace(|x| 2.0 * x);
    let r2 = score_bundles(&p, &refs).unwrap();
    for (a, b) in r1.iter().zip(&r2) {
        assert!((2.0 * a - b).abs() < 1e-12);
    }
}

#[test]
fn rewards_bounded_by_weight_norm() {
    let p = init_params(&ScorerConfig::default(), 9);
    let bs = bundles(8, 6);
    let refs: Vec<&FeatureBundle> = bs.iter().collect();
    let bound: f64 = p.feature_weights().iter().map(|w| w.abs()).sum();
    assert!(score_bundles(&p, &refs).unwrap().iter().all(|r| r.abs() <= bound));
}

#[test]
fn weight_gradient_is_score_weighted_loss_gradient() {
    let p = init_params(&ScorerConfig::default(), 7);
    let bs = bundles(6, 8);
    let refs: Vec<&FeatureBundle> = bs.iter().collect();
    let input = BatchInput::from_bundles(&refs, &p.config.features).unwrap();
    let groups = [Group { start: 0, len: 4, target: 1 }, Group { start: 4, len: 2, target: 0 }];

    let mut tape = Tape::new();
    let out = forward(&mut tape, &p, &input, Mode::Train).unwrap();
    let loss = tape.focal_nll(out.reward, &groups, 2.0);
    let grads = backward(&tape, Some(loss), &p).unwrap();

    let r: Vec<f64> = tape.value(out.reward).column(0).to_vec();
    let y = tape.value(out.scores);
    let scale = 1.0 / groups.len() as f64;
    let mut dr = vec![0.0; r.len()];
    for g in &groups {
        let dist = softmax_distribution(&r[g.start..g.start + g.len]).unwrap();
        let ps = dist.probabilities[g.target];
        let w = (1.0 - ps).powi(2);
        let dw = -2.0 * (1.0 - ps);
        for j in 0..g.len {
            let delta = if j == g.target { 1.0 } else { 0.0 };
            dr[g.start + j] = scale * (-dw * ps * ps.ln() - w) * (delta - dist.probabilities[j]);
        }
    }
    let n = r.len();
    let gw = &grads[p.index("w").unwrap()];
    for i in 0..p.config.features.len() {
        let want: f64 = (0..n).map(|b| dr[b] * y[[i * n + b, 0]]).sum();
        assert!((gw[[0, i]] - want).abs() < 1e-12, "{} vs {want}", gw[[0, i]]);
    }
}

#[test]
fn focal_loss_on_tape_matches_scalar_version() {
    let mut tape = Tape::new();
    let rewards = [0.3, -1.0, 2.0, 0.0, 0.5];
    let r = tape.input(Array2::from_shape_vec((5, 1), rewards.to_vec()).unwrap());
    let groups = [Group { start: 0, len: 3, target: 2 }, Group { start: 3, len: 2, target: 0 }];
    let l = tape.focal_nll(r, &groups, 2.0);
    let a = focal_nll(&softmax_distribution(&rewards[..3]).unwrap(), 2, 2.0).unwrap();
    let b = focal_nll(&softmax_distribution(&rewards[3..]).unwrap(), 0, 2.0).unwrap();
    assert!((tape.value(l)[[0, 0]] - (a + b) / 2.0).abs() < 1e-12);
}

fn check_architecture(arch: Architecture, seed: u64) -> GradCheckReport {
    let cfg = ScorerConfig { architecture: arch, ..ScorerConfig::reduced() };
    let p = init_params(&cfg, seed);
    let bs = bundles(5, seed + 100);
    let refs: Vec<&FeatureBundle> = bs.iter().collect();
    let input = BatchInput::from_bundles(&refs, &cfg.features).unwrap();
    let groups = [Group { start: 0, len: 3, target: 0 }, Group { start: 3, len: 2, target: 1 }];
    gradient_check(&p, &input, &groups, 2.0, 1e-4).unwrap()
}

#[test]
fn gradients_match_finite_differences() {
    for (i, arch) in [Architecture::Base, Architecture::NoNorm, Architecture::Unmasked, Architecture::Siloed]
        .into_iter()
        .enumerate()
    {
        let rep = check_architecture(arch, i as u64);
        assert!(rep.checked > 100, "{arch:?}: {rep:?}");
        assert!(rep.max_rel_error < 1e-4, "{arch:?}: {rep:?}");
    }
}

#[test]
fn eval_is_deterministic_and_batch_independent() {
    let p = init_params(&ScorerConfig::default(), 2);
    let bs = bundles(6, 9);
    let refs: Vec<&FeatureBundle> = bs.iter().collect();
    let all = score_bundles(&p, &refs).unwrap();
    assert_eq!(all, score_bundles(&p, &refs).unwrap());
    let one = score_bundles(&p, &refs[2..3]).unwrap();
    assert!((one[0] - all[2]).abs() < 1e-12);
}

#[test]
fn running_stats_follow_momentum() {
    let mut p = init_params(&ScorerConfig::default(), 2);
    let bs = bundles(4, 1);
    let refs: Vec<&FeatureBundle> = bs.iter().collect();
    let input = BatchInput::from_bundles(&refs, &p.config.features).unwrap();
    let mut tape = Tape::new();
    let out = forward(&mut tape, &p, &input, Mode::Train).unwrap();
    update_running_stats(&mut p, &out);
    let ttc = input.feats[0].column(0);
    let mean = ttc.mean().unwrap();
    let var = ttc.var(1.0);
    assert!((p.get("ttc.bn.running_mean").unwrap()[[0, 0]] - 0.1 * mean).abs() < 1e-12);
    assert!((p.get("ttc.bn.running_var").unwrap()[[0, 0]] - (0.9 + 0.1 * var)).abs() < 1e-12);
}

#[test]
fn parameter_layout() {
    let p = init_params(&ScorerConfig::default(), 0);
    assert_eq!(p.trainable_count(), 136_479);
    assert_eq!(p.feature_weights().dim(), (1, 6));
    assert!(p.is_finite());
    assert_ne!(init_params(&ScorerConfig::default(), 1).values, p.values);
    assert_eq!(init_params(&ScorerConfig::default(), 0).values, p.values);
}

#[test]
fn params_round_trip_and_reject_corruption() {
    let cfg = ScorerConfig { architecture: Architecture::Unmasked, ..ScorerConfig::reduced() };
    let p = init_params(&cfg, 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scorer.bin");
    save_params(&path, &p).unwrap();
    let q = load_params(&path).unwrap();
    assert_eq!(q.config, p.config);
    assert_eq!(q.names, p.names);
    assert_eq!(q.values, p.values);
    assert_eq!(q.trainable, p.trainable);

    let bytes = encode_params(&p).unwrap();
    assert!(decode_params(&bytes[..bytes.len() - 3]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(decode_params(&bad).is_err());
    let mut bad = bytes;
    bad[4] = 9;
    assert!(decode_params(&bad).is_err());
}

#[test]
fn missing_tape_is_an_error() {
    let p = init_params(&ScorerConfig::reduced(), 0);
    assert!(matches!(backward(&Tape::new(), None, &p), Err(crate::Error::TapeNotRecorded)));
}

#[test]
fn wrong_input_shape_is_rejected() {
    let p = init_params(&ScorerConfig::reduced(), 0);
    let input = BatchInput { batch: 1, feats: vec![Array2::zeros((3, 3))] };
    assert!(forward(&mut Tape::new(), &p, &input, Mode::Eval).is_err());
}
