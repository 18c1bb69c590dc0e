use aliased_ac::features::FeatureMap;
use aliased_ac::linalg::Matrix;
use aliased_ac::npg::*;
use aliased_ac::oracles::*;
use aliased_ac::td::{CriticMode, LinearCritic, StepSize};
use aliased_ac::{AgentPolicy, AgentStateProcess, Pomdp};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

fn random_instance(seed: u64) -> (Pomdp<f64>, AgentStateProcess<f64>, LogLinearPolicy<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = Pomdp::random(3, 2, 2, 0.9, &mut rng).unwrap();
    let m = AgentStateProcess::random(2, 2, 2, &mut rng).unwrap();
    let theta: Vec<f64> = (0..4).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let pol = LogLinearPolicy::new(FeatureMap::tabular(4), 2, 2).unwrap().with_theta(theta).unwrap();
    (p, m, pol)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[test]
fn zero_parameters_give_the_uniform_policy() {
    let pol = LogLinearPolicy::<f64>::new(FeatureMap::random(12, 5, 3).unwrap(), 4, 3).unwrap();
    for z in 0..4 {
        for p in pol.action_probs(z) {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }
}

#[test]
fn two_actions_match_the_logistic_function() {
    let pol = LogLinearPolicy::<f64>::new(FeatureMap::random(4, 3, 8).unwrap(), 2, 2)
        .unwrap()
        .with_theta(vec![2.0, -1.5, 0.7])
        .unwrap();
    for z in 0..2 {
        let l = pol.logits(z);
        let sigmoid = 1.0 / (1.0 + (-(l[1] - l[0])).exp());
        assert!((pol.action_probs(z)[1] - sigmoid).abs() < 1e-14);
    }
}

#[test]
fn shared_feature_shift_leaves_probabilities_unchanged() {
    let base = FeatureMap::<f64>::random(6, 3, 21).unwrap();
    let m = base.to_matrix();
    let shift = [0.1, -0.05, 0.08];
    let mut shifted = Matrix::zeros(6, 3);
    for i in 0..6 {
        for j in 0..3 {
            shifted[(i, j)] = 0.8 * m[(i, j)] + shift[j];
        }
    }
    let mut scaled = Matrix::zeros(6, 3);
    for i in 0..6 {
        for j in 0..3 {
            scaled[(i, j)] = 0.8 * m[(i, j)];
        }
    }
    let theta = vec![1.3, -0.4, 2.2];
    let a = LogLinearPolicy::<f64>::new(FeatureMap::custom(scaled).unwrap(), 3, 2)
        .unwrap()
        .with_theta(theta.clone())
        .unwrap();
    let b = LogLinearPolicy::new(FeatureMap::custom(shifted).unwrap(), 3, 2).unwrap().with_theta(theta).unwrap();
    for z in 0..3 {
        for (x, y) in a.action_probs(z).iter().zip(b.action_probs(z)) {
            assert!((x - y).abs() < 1e-14);
        }
    }
}

#[test]
fn extreme_logits_do_not_overflow() {
    let pol =
        LogLinearPolicy::<f64>::new(FeatureMap::tabular(2), 1, 2).unwrap().with_theta(vec![800.0, -800.0]).unwrap();
    let p = pol.action_probs(0);
    assert_eq!(p, vec![1.0, 0.0]);
    assert!(pol.score(0, 1).iter().all(|x| x.is_finite()));
}

#[test]
fn score_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pol = LogLinearPolicy::<f64>::new(FeatureMap::tabular(6), 2, 3).unwrap();
    let theta: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    for pol in [pol.clone(), pol.with_theta(theta).unwrap()] {
        for z in 0..2 {
            for a in 0..3 {
                let score = pol.score(z, a);
                for i in 0..6 {
                    let h = 1e-6;
                    let mut tp = pol.theta().to_vec();
                    tp[i] += h;
                    let mut tm = pol.theta().to_vec();
                    tm[i] -= h;
                    let fd = (pol.with_theta(tp).unwrap().action_probs(z)[a].ln()
                        - pol.with_theta(tm).unwrap().action_probs(z)[a].ln())
                        / (2.0 * h);
                    assert!((fd - score[i]).abs() < 1e-6);
                }
            }
        }
    }
    // Uniform policy, one-hot ψ: ψ(z,a) minus the mean of the rows of z.
    let s = pol.score(1, 2);
    let expect = [0.0, 0.0, 0.0, -1.0 / 3.0, -1.0 / 3.0, 2.0 / 3.0];
    for (x, y) in s.iter().zip(expect) {
        assert!((x - y).abs() < 1e-15);
    }
}

#[test]
fn fisher_examples() {
    let (p, m, pol) = random_instance(1);
    let tab = pol.to_agent_policy();
    let d = discounted_visitation(&build_joint_chain(&p, &m, &tab).unwrap(), 0.9).unwrap();
    let f = fisher_matrix(&pol, &d);
    for i in 0..4 {
        for j in 0..4 {
            assert!((f[(i, j)] - f[(j, i)]).abs() < 1e-15);
        }
    }
    let (vals, _) = f.symmetric_eigen();
    assert!(vals.iter().all(|&v| v >= -1e-10));

    // Near-deterministic policy.
    let det = pol.with_theta(vec![60.0, -60.0, -60.0, 60.0]).unwrap();
    let fd = fisher_matrix(&det, &d);
    assert!(fd.max_abs() < 1e-40);

    // One-dimensional ψ: the weighted variance of the scalar feature.
    let psi = Matrix::from_vec(4, 1, vec![0.3, -0.6, 0.9, 0.1]);
    let one = LogLinearPolicy::new(FeatureMap::custom(psi).unwrap(), 2, 2).unwrap().with_theta(vec![1.7]).unwrap();
    let tab1 = one.to_agent_policy();
    let d1 = discounted_visitation(&build_joint_chain(&p, &m, &tab1).unwrap(), 0.9).unwrap();
    let marg = d1.agent_state_marginal();
    let feats = [[0.3, -0.6], [0.9, 0.1]];
    let mut var = 0.0;
    for z in 0..2 {
        let pr = one.action_probs(z);
        let mean = pr[0] * feats[z][0] + pr[1] * feats[z][1];
        let sq = pr[0] * feats[z][0].powi(2) + pr[1] * feats[z][1].powi(2);
        var += marg[z] * (sq - mean * mean);
    }
    assert!((fisher_matrix(&one, &d1)[(0, 0)] - var).abs() < 1e-14);
}

#[test]
fn natural_gradient_identities() {
    for seed in 0..5 {
        let (p, m, pol) = random_instance(100 + seed);
        let w = exact_npg(&pol, &p, &m).unwrap();
        let grad = finite_difference_gradient(&pol, &p, &m, GRADIENT_STEP).unwrap();
        let tab = pol.to_agent_policy();
        let exact = exact_advantages(&p, &m, &tab).unwrap();
        let f = fisher_matrix(&pol, &exact.d);
        let fw = f.mul_vec(&w);
        let res: Vec<f64> = fw.iter().zip(&grad).map(|(a, g)| a - 0.1 * g).collect();
        assert!(max_abs(&res) <= 1e-5, "seed {seed}: {res:?}");

        let asym = asymmetric_normal_equations(&pol, &exact);
        let sym = symmetric_normal_equations(&pol, &exact);
        assert!(max_abs(&asym.residual_gradient(&w)) <= 1e-6);
        let gap: Vec<f64> = asym.rhs.iter().zip(&sym.rhs).map(|(a, b)| a - b).collect();
        assert!(max_abs(&gap) <= 1e-10, "{gap:?}");
        // The asymmetric right-hand side is the scaled policy gradient.
        let pg: Vec<f64> = asym.rhs.iter().zip(&grad).map(|(b, g)| b - 0.1 * g).collect();
        assert!(max_abs(&pg) <= 1e-6);
    }
}

#[test]
fn inner_gradient_examples() {
    let (_, _, pol) = random_instance(4);
    assert!(npg_inner_gradient(&pol, &[0.0; 4], 1, 0, 0.0).iter().all(|&x| x == 0.0));
    let w = vec![0.3, -0.2, 0.5, 1.1];
    let adv = 0.8;
    let v = npg_inner_gradient(&pol, &w, 1, 1, adv);
    let score = pol.score(1, 1);
    let loss = |w: &[f64]| (score.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() - adv).powi(2);
    for i in 0..4 {
        let h = 1e-6;
        let mut wp = w.clone();
        wp[i] += h;
        let mut wm = w.clone();
        wm[i] -= h;
        assert!(((loss(&wp) - loss(&wm)) / (2.0 * h) - v[i]).abs() < 1e-7);
    }
    // Parallel to the score.
    for i in 0..4 {
        for j in 0..4 {
            assert!((v[i] * score[j] - v[j] * score[i]).abs() < 1e-12);
        }
    }
}

#[test]
fn advantage_examples() {
    let (p, m, pol) = random_instance(6);
    let tab = pol.to_agent_policy();
    let exact = exact_advantages(&p, &m, &tab).unwrap();
    let critic = LinearCritic::new(FeatureMap::tabular(12), 100.0, CriticMode::Asymmetric, 3, 2, 2)
        .unwrap()
        .with_beta(exact.asymmetric.values().to_vec());
    let table = AdvantageTable::from_critic(&critic, &tab);
    for s in 0..3 {
        for z in 0..2 {
            let mut mean = 0.0;
            for a in 0..2 {
                let adv = advantage_from_critic(&critic, &tab, s, z, a);
                assert!((adv - exact.asymmetric_advantage[(s * 2 + z) * 2 + a]).abs() < 1e-12);
                assert_eq!(adv, table.get(s, z, a));
                mean += tab.prob(z, a) * adv;
            }
            assert!(mean.abs() < 1e-12);
        }
    }
    // A critic that is constant over actions has no advantage.
    let flat = LinearCritic::new(FeatureMap::tabular(4), 100.0, CriticMode::Symmetric, 3, 2, 2)
        .unwrap()
        .with_beta(vec![3.0, 3.0, -1.0, -1.0]);
    for z in 0..2 {
        for a in 0..2 {
            assert_eq!(advantage_from_critic(&flat, &tab, 0, z, a), 0.0);
        }
    }
}

#[test]
fn single_step_with_zero_eta_returns_the_uniform_policy() {
    let p = Pomdp::<f64>::builtin_tiger(0.9).unwrap();
    let m = AgentStateProcess::last_observation(&p);
    let mut cfg = NacConfig::new(1, 1, 10, 25.0, CriticMode::Asymmetric);
    cfg.eta = StepSize::Fixed(0.0);
    let (pol, trace) =
        nac_run(&p, &m, &FeatureMap::tabular(24), &FeatureMap::tabular(6), &cfg, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
    assert!(pol.theta().iter().all(|&x| x == 0.0));
    assert_eq!(trace.records.len(), 1);
    assert!((trace.records[0].j - exact_return(&p, &m, &AgentPolicy::uniform(3, 2)).unwrap()).abs() < 1e-12);
    assert!(trace.to_csv().starts_with("t,J,critic_error,w_bar_norm,theta_norm\n0,"));
}

#[test]
fn sgd_with_exact_advantages_finds_the_natural_gradient() {
    let (p, m, pol) = random_instance(31);
    let tab = pol.to_agent_policy();
    let exact = exact_advantages(&p, &m, &tab).unwrap();
    let w_star = exact_npg(&pol, &p, &m).unwrap();
    let radius = 10.0;
    let norm = w_star.iter().map(|x| x * x).sum::<f64>().sqrt();
    let target: Vec<f64> = w_star.iter().map(|x| x * (radius / norm).min(1.0)).collect();
    let table = AdvantageTable::from_values(CriticMode::Asymmetric, 2, 2, exact.asymmetric_advantage.clone());
    let zeta = radius * 0.1f64.sqrt() / (2.0f64 * 1e5).sqrt();
    let w_bar = npg_sgd(
        &p,
        &m,
        &pol,
        AdvantageSource::Table(&table),
        100_000,
        zeta,
        radius,
        &mut ChaCha8Rng::seed_from_u64(77),
    );
    let dist = w_bar.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    assert!(dist <= 1e-2, "distance {dist}, w̄ {w_bar:?}, target {target:?}");
}

#[test]
fn fast_advantages_match_per_sample_evaluation() {
    let p = Pomdp::<f64>::builtin_tiger(0.9).unwrap();
    let m = AgentStateProcess::last_observation(&p);
    for mode in [CriticMode::Asymmetric, CriticMode::Symmetric] {
        let rows = if mode == CriticMode::Asymmetric { 24 } else { 6 };
        let mut cfg = NacConfig::new(3, 200, 2000, 25.0, mode);
        let run = |cfg: &NacConfig<f64>| {
            nac_run(&p, &m, &FeatureMap::tabular(rows), &FeatureMap::tabular(6), cfg, &mut ChaCha8Rng::seed_from_u64(3))
                .unwrap()
                .1
        };
        let fast = run(&cfg);
        cfg.fast_advantages = false;
        let slow = run(&cfg);
        for (a, b) in fast.thetas.iter().flatten().zip(slow.thetas.iter().flatten()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn symmetric_critics_pay_the_aliasing_gap() {
    let p = Pomdp::<f64>::builtin_tiger(0.9).unwrap();
    let m = AgentStateProcess::last_observation(&p);
    let enter = AgentPolicy::constant(3, 2, 1);
    let chain = build_joint_chain(&p, &m, &enter).unwrap();
    let d = discounted_visitation(&chain, 0.9).unwrap();
    let gap_diff: Vec<f64> = symmetric_q_true(&p, &m, &enter, &d)
        .unwrap()
        .values()
        .iter()
        .zip(symmetric_fixed_point(&p, &m, &enter, 1, &d).unwrap().values())
        .map(|(a, b)| a - b)
        .collect();
    let gap = aliased_ac::features::weighted_norm(&gap_diff, &d.symmetric_with_policy(&enter));
    let mean_error = |mode: CriticMode| {
        let rows = if mode == CriticMode::Asymmetric { 24 } else { 6 };
        let errs: Vec<f64> = (0..2u64)
            .into_par_iter()
            .map(|seed| {
                let cfg = NacConfig::new(5, 1000, 1_000_000, 25.0, mode);
                let (_, tr) = nac_run(
                    &p,
                    &m,
                    &FeatureMap::tabular(rows),
                    &FeatureMap::tabular(6),
                    &cfg,
                    &mut ChaCha8Rng::seed_from_u64(seed),
                )
                .unwrap();
                tr.mean_critic_error()
            })
            .collect();
        errs.iter().sum::<f64>() / errs.len() as f64
    };
    let (asym, sym) = (mean_error(CriticMode::Asymmetric), mean_error(CriticMode::Symmetric));
    assert!(sym >= asym + 0.5 * gap, "sym {sym} asym {asym} gap {gap}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn probabilities_stay_on_the_simplex(theta in prop::collection::vec(-1e3f64..1e3, 3), seed in any::<u64>()) {
        let pol = LogLinearPolicy::new(FeatureMap::random(6, 3, seed).unwrap(), 3, 2).unwrap().with_theta(theta).unwrap();
        for z in 0..3 {
            let p = pol.action_probs(z);
            prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let mean: Vec<f64> = (0..3).map(|i| (0..2).map(|a| p[a] * pol.score(z, a)[i]).sum()).collect();
            prop_assert!(mean.iter().all(|x| x.abs() < 1e-9));
        }
    }

    #[test]
    fn natural_gradient_estimates_stay_in_the_ball(seed in any::<u64>(), radius in 0.01f64..2.0) {
        let (p, m, pol) = random_instance(seed);
        let critic = LinearCritic::new(FeatureMap::random(4, 3, seed).unwrap(), radius, CriticMode::Symmetric, 3, 2, 2)
            .unwrap()
            .with_beta(vec![radius, -radius, 0.5 * radius]);
        let w = npg_sgd(&p, &m, &pol, AdvantageSource::Critic(&critic), 200, 0.7, radius, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(w.iter().map(|x| x * x).sum::<f64>().sqrt() <= radius + 1e-9);
    }
}
