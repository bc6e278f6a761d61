use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::{bce_with_logits, sigmoid};

fn config(n: usize, t: usize, mode: AblationMode) -> ModelConfig {
    ModelConfig {
        n_rois: n,
        t_steps: t,
        d_h: 3,
        hidden: 4,
        out: 3,
        classifier_hidden: 4,
        threshold_c: 0.3,
        tau: 1.0,
        mode,
        seed: 5,
    }
}

/// Series with two loosely correlated groups so the filtered graph is non-empty.
fn toy_subject(n: usize, t: usize, seed: u64, label: u8) -> BoldMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..t).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let series = Matrix::from_fn(n, t, |i, k| {
        base[i % 2][k] + 0.8 * rng.random_range(-1.0..1.0)
    });
    BoldMatrix::new(format!("toy-{seed}"), series, label).unwrap()
}

type Grid = Vec<Vec<f64>>;

fn grid(m: &Matrix) -> Grid {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn mm(a: &Grid, b: &Grid) -> Grid {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            for p in 0..k {
                out[i][j] += a[i][p] * b[p][j];
            }
        }
    }
    out
}

fn relu_g(a: Grid) -> Grid {
    a.into_iter()
        .map(|r| r.into_iter().map(|x| x.max(0.0)).collect())
        .collect()
}

fn normalize_oracle(a: &Grid) -> Grid {
    let n = a.len();
    let hat: Grid = (0..n)
        .map(|i| (0..n).map(|j| a[i][j] + if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let deg: Vec<f64> = hat.iter().map(|r| r.iter().sum()).collect();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| hat[i][j] / deg[i].sqrt() / deg[j].sqrt())
                .collect()
        })
        .collect()
}

fn gcn_oracle(v: &Grid, a: &Grid, w0: &Matrix, w1: &Matrix) -> Vec<f64> {
    let h = relu_g(mm(&mm(a, v), &grid(w0)));
    let out = relu_g(mm(&mm(a, &h), &grid(w1)));
    out.concat()
}

/// Straight-line re-implementation of the whole forward pass.
fn logit_oracle(state: &ModelState, subject: &BoldMatrix, noise: Option<&GumbelNoise>) -> f64 {
    let cfg = state.config;
    let n = cfg.n_rois;
    let v = grid(pearson_correlation(subject).unwrap().values());
    let filt: Grid = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i != j && v[i][j] > cfg.threshold_c { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    let z_f = gcn_oracle(&v, &normalize_oracle(&filt), &state.filtered_gcn.w0, &state.filtered_gcn.w1);

    let s = &state.scorer;
    let d = cfg.d_h;
    let x = grid(&subject.series);
    let h: Grid = (0..n)
        .map(|i| {
            (0..d)
                .map(|k| {
                    let mut acc = s.extractor_b[(0, k)];
                    for t in 0..cfg.t_steps {
                        acc += x[i][t] * s.extractor_w[(t, k)];
                    }
                    acc.max(0.0)
                })
                .collect()
        })
        .collect();
    let mut adj = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let pair: Vec<f64> = h[i].iter().chain(&h[j]).copied().collect();
            let mut score = s.out_b[(0, 0)];
            for u in 0..d {
                let mut pre = s.pair_b[(0, u)];
                for (q, p) in pair.iter().enumerate() {
                    pre += p * s.pair_w[(q, u)];
                }
                score += pre.max(0.0) * s.out_w[(u, 0)];
            }
            let theta = sigmoid(score);
            let (g1, g2) = noise.map_or((0.0, 0.0), |g| (g.g1[(i, j)], g.g2[(i, j)]));
            let soft = sigmoid(((theta / (1.0 - theta)).ln() + g1 - g2) / cfg.tau);
            adj[i][j] = if i == j {
                0.0
            } else if noise.is_some() {
                soft
            } else if soft >= 0.5 {
                1.0
            } else {
                0.0
            };
        }
    }
    let z_o = gcn_oracle(&v, &normalize_oracle(&adj), &state.optimal_gcn.w0, &state.optimal_gcn.w1);

    let pooled: Vec<f64> = match cfg.mode {
        AblationMode::Full => [z_f, z_o].concat(),
        AblationMode::NoCorr => z_o,
        AblationMode::NoOptim => z_f,
        AblationMode::NoGconv => [v.concat(), v.concat()].concat(),
    };
    let c = &state.classifier;
    let mut logit = c.out_b[(0, 0)];
    for u in 0..cfg.classifier_hidden {
        let mut pre = c.hidden_b[(0, u)];
        for (q, p) in pooled.iter().enumerate() {
            pre += p * c.hidden_w[(q, u)];
        }
        logit += pre.max(0.0) * c.out_w[(u, 0)];
    }
    logit
}

fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
    let diff = a.zip_map(b, |x, y| x - y);
    let norm = |m: &Matrix| m.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
    norm(&diff) / norm(a).max(norm(b)).max(1e-12)
}

#[test]
fn normalize_single_node_and_isolated() {
    assert_eq!(normalize_adjacency_matrix(&Matrix::zeros(1, 1)).unwrap(), Matrix::identity(1));
    assert_eq!(normalize_adjacency_matrix(&Matrix::zeros(3, 3)).unwrap(), Matrix::identity(3));
    assert!(normalize_adjacency_matrix(&Matrix::filled(2, 2, -0.1)).is_err());
}

#[test]
fn normalize_matches_oracle_and_keeps_symmetry() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let mut a = Matrix::zeros(4, 4);
        for i in 0..4 {
            for j in (i + 1)..4 {
                let e = f64::from(u8::from(rng.random_bool(0.5)));
                a[(i, j)] = e;
                a[(j, i)] = e;
            }
        }
        let got = normalize_adjacency_matrix(&a).unwrap();
        let want = normalize_oracle(&grid(&a));
        for i in 0..4 {
            for j in 0..4 {
                assert!((got[(i, j)] - want[i][j]).abs() < 1e-12);
                assert_eq!(got[(i, j)], got[(j, i)]);
            }
        }
    }
}

#[test]
fn gcn_identity_propagation() {
    let tape = Tape::new();
    let v = Matrix::from_rows(&[[1.0, -0.5, 0.2], [-0.5, 1.0, -0.9], [0.2, -0.9, 1.0]]).unwrap();
    let id = || tape.constant(Matrix::identity(3));
    let out = gcn_forward(tape.constant(v.clone()), id(), id(), id()).unwrap();
    assert_eq!(*out.value(), v.map(|x| x.max(0.0)));
}

#[test]
fn gcn_permutation_equivariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let n = 5;
    let v = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let a = Matrix::from_fn(n, n, |i, j| if i != j && rng.random_bool(0.4) { 1.0 } else { 0.0 });
    let w0 = Matrix::from_fn(n, 4, |_, _| rng.random_range(-1.0..1.0));
    let w1 = Matrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
    let perm = [3usize, 0, 4, 1, 2];
    // Rows of V are node features, so they permute with the nodes; columns
    // index input features (multiplied by W₀) and stay put.
    let pv = Matrix::from_fn(n, n, |i, j| v[(perm[i], j)]);
    let pa = Matrix::from_fn(n, n, |i, j| a[(perm[i], perm[j])]);

    let run = |v: &Matrix, a: &Matrix| {
        let tape = Tape::new();
        let a_norm = normalize_adjacency(tape.constant(a.clone())).unwrap();
        let out = gcn_forward(
            tape.constant(v.clone()),
            a_norm,
            tape.constant(w0.clone()),
            tape.constant(w1.clone()),
        )
        .unwrap();
        let m = out.value().clone();
        m
    };
    let base = run(&v, &a);
    let permuted = run(&pv, &pa);
    for i in 0..n {
        for k in 0..3 {
            assert!((permuted[(i, k)] - base[(perm[i], k)]).abs() < 1e-12);
        }
    }
}

#[test]
fn gcn_gradient_wrt_first_weight() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let v = Matrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
    let a = Matrix::from_fn(4, 4, |i, j| if i != j && (i + j) % 2 == 1 { 1.0 } else { 0.0 });
    let w0 = Matrix::from_fn(4, 3, |_, _| rng.random_range(-1.0..1.0));
    let w1 = Matrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
    let eval = |w0: &Matrix| -> (f64, Option<Matrix>) {
        let tape = Tape::new();
        let w = tape.param(w0.clone());
        let an = tape.constant(normalize_adjacency_matrix(&a).unwrap());
        let out = gcn_forward(tape.constant(v.clone()), an, w, tape.constant(w1.clone()))
            .unwrap()
            .sum();
        out.backward().unwrap();
        (out.item(), w.grad())
    };
    let analytic = eval(&w0).1.unwrap();
    let eps = 1e-5;
    let mut numeric = Matrix::zeros(4, 3);
    for k in 0..w0.len() {
        let mut up = w0.clone();
        up.as_mut_slice()[k] += eps;
        let mut down = w0.clone();
        down.as_mut_slice()[k] -= eps;
        numeric.as_mut_slice()[k] = (eval(&up).0 - eval(&down).0) / (2.0 * eps);
    }
    assert!(rel_err(&analytic, &numeric) < 1e-5);
}

#[test]
fn edge_probability_gradient_wrt_extractor() {
    let subject = toy_subject(4, 6, 30, 0);
    let state = ModelState::new(config(4, 6, AblationMode::Full)).unwrap();
    let eval = |we: &Matrix| -> (f64, Option<Matrix>) {
        let tape = Tape::new();
        let mut vars = state.scorer.bind(&tape);
        vars.extractor_w = tape.param(we.clone());
        let theta = edge_probabilities(tape.constant(subject.series.clone()), &vars)
            .unwrap()
            .sum();
        theta.backward().unwrap();
        (theta.item(), vars.extractor_w.grad())
    };
    let we = state.scorer.extractor_w.clone();
    let analytic = eval(&we).1.unwrap();
    let eps = 1e-5;
    let mut numeric = Matrix::zeros(we.rows(), we.cols());
    for k in 0..we.len() {
        let mut up = we.clone();
        up.as_mut_slice()[k] += eps;
        let mut down = we.clone();
        down.as_mut_slice()[k] -= eps;
        numeric.as_mut_slice()[k] = (eval(&up).0 - eval(&down).0) / (2.0 * eps);
    }
    assert!(rel_err(&analytic, &numeric) < 1e-5);
}

#[test]
fn concat_pool_layout() {
    let tape = Tape::new();
    let m = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
    let pooled = concat_pool(tape.constant(m.clone())).unwrap();
    assert_eq!(pooled.value().as_slice(), &[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(pooled.value().reshape(2, 2).unwrap(), m);
    let wide = concat_pool(tape.constant(Matrix::zeros(7, 3))).unwrap();
    assert_eq!(wide.shape(), (1, 21));
}

#[test]
fn forward_is_deterministic() {
    let subject = toy_subject(6, 16, 31, 1);
    let state = ModelState::new(config(6, 16, AblationMode::Full)).unwrap();
    let input = state.prepare(&subject).unwrap();
    let noise = GumbelNoise::sample(6, &mut ChaCha8Rng::seed_from_u64(1));
    let a = state.logit(&input, Some(&noise)).unwrap();
    let b = state.logit(&input, Some(&noise)).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
    assert_eq!(
        state.logit(&input, None).unwrap().to_bits(),
        state.logit(&input, None).unwrap().to_bits()
    );
}

#[test]
fn single_branch_modes_ignore_the_other_branch() {
    let subject = toy_subject(6, 16, 32, 0);
    let noise = GumbelNoise::sample(6, &mut ChaCha8Rng::seed_from_u64(2));

    let mut no_corr = ModelState::new(config(6, 16, AblationMode::NoCorr)).unwrap();
    let input = no_corr.prepare(&subject).unwrap();
    let before = no_corr.logit(&input, Some(&noise)).unwrap();
    no_corr.filtered_gcn.w0 = Matrix::zeros(6, 4);
    no_corr.filtered_gcn.w1 = Matrix::zeros(4, 3);
    assert_eq!(before, no_corr.logit(&input, Some(&noise)).unwrap());

    let mut no_optim = ModelState::new(config(6, 16, AblationMode::NoOptim)).unwrap();
    let before = no_optim.logit(&input, Some(&noise)).unwrap();
    no_optim.optimal_gcn.w0 = Matrix::zeros(6, 4);
    no_optim.optimal_gcn.w1 = Matrix::zeros(4, 3);
    no_optim.scorer = EdgeScorer::zeros(16, 3);
    assert_eq!(before, no_optim.logit(&input, Some(&noise)).unwrap());

    let mut no_gconv = ModelState::new(config(6, 16, AblationMode::NoGconv)).unwrap();
    let before = no_gconv.logit(&input, Some(&noise)).unwrap();
    no_gconv.filtered_gcn.w0 = Matrix::zeros(6, 4);
    no_gconv.optimal_gcn.w1 = Matrix::zeros(4, 3);
    assert_eq!(before, no_gconv.logit(&input, Some(&noise)).unwrap());
}

#[test]
fn forward_matches_straight_line_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for mode in AblationMode::ALL {
        for seed in 0..3 {
            let subject = toy_subject(6, 16, 40 + seed, 1);
            let mut cfg = config(6, 16, mode);
            cfg.seed = seed;
            let state = ModelState::new(cfg).unwrap();
            let input = state.prepare(&subject).unwrap();
            let noise = GumbelNoise::sample(6, &mut rng);
            for noise in [Some(&noise), None] {
                let got = state.logit(&input, noise).unwrap();
                let want = logit_oracle(&state, &subject, noise);
                assert!((got - want).abs() < 1e-10, "{mode}: {got} vs {want}");
            }
        }
    }
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let subject = toy_subject(6, 16, 50, 1);
    let state = ModelState::new(config(6, 16, AblationMode::Full)).unwrap();
    let input = state.prepare(&subject).unwrap();
    let noise = GumbelNoise::sample(6, &mut ChaCha8Rng::seed_from_u64(3));
    let (_, grads) = state.loss_and_gradients(&input, Some(&noise)).unwrap();
    let loss = |s: &ModelState| bce_with_logits(s.logit(&input, Some(&noise)).unwrap(), 1.0);
    let eps = 1e-5;
    for (k, analytic) in grads.iter().enumerate() {
        let mut numeric = Matrix::zeros(analytic.rows(), analytic.cols());
        for e in 0..analytic.len() {
            let mut up = state.clone();
            up.parameters_mut()[k].as_mut_slice()[e] += eps;
            let mut down = state.clone();
            down.parameters_mut()[k].as_mut_slice()[e] -= eps;
            numeric.as_mut_slice()[e] = (loss(&up) - loss(&down)) / (2.0 * eps);
        }
        let err = rel_err(analytic, &numeric);
        assert!(err < 1e-4, "parameter {k}: rel err {err}");
        assert!(analytic.as_slice().iter().any(|&g| g != 0.0), "parameter {k} has zero gradient");
    }
}

#[test]
fn parameter_count_by_hand() {
    // N=6, T=16, d_h=3, H=4, F=3, H_c=4
    let scorer = 16 * 3 + 3 + 6 * 3 + 3 + 3 + 1;
    let gcn = 6 * 4 + 4 * 3;
    let head = |w: usize| w * 4 + 4 + 4 + 1;
    let count = |mode| ModelState::new(config(6, 16, mode)).unwrap().parameter_count();
    assert_eq!(count(AblationMode::Full), scorer + 2 * gcn + head(36));
    assert_eq!(count(AblationMode::NoCorr), scorer + gcn + head(18));
    assert_eq!(count(AblationMode::NoOptim), gcn + head(18));
    assert_eq!(count(AblationMode::NoGconv), head(72));
}

#[test]
fn dimension_mismatch_is_rejected() {
    let state = ModelState::new(config(6, 16, AblationMode::Full)).unwrap();
    assert!(matches!(state.prepare(&toy_subject(6, 17, 1, 0)), Err(Error::Contract(_))));
    assert!(matches!(state.prepare(&toy_subject(5, 16, 1, 0)), Err(Error::Contract(_))));
}

#[test]
fn mode_names_round_trip() {
    for m in AblationMode::ALL {
        assert_eq!(m.as_str().parse::<AblationMode>().unwrap(), m);
        assert_eq!(AblationMode::from_code(m.code()), Some(m));
    }
    assert!("nope".parse::<AblationMode>().is_err());
}
