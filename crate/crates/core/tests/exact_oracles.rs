use aliased_ac::oracles::*;
use aliased_ac::{AgentPolicy, AgentStateProcess, Pomdp};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const TREASURE: usize = 0;
const TIGER: usize = 1;
const LEFT: usize = 2;
const RIGHT: usize = 3;
const SWAP: usize = 0;
const ENTER: usize = 1;
const DARK: usize = 0;
const OBS_LEFT: usize = 1;
const OBS_RIGHT: usize = 2;

fn tiger_setup(gamma: f64) -> (Pomdp<f64>, AgentStateProcess<f64>, AgentPolicy<f64>) {
    let p = Pomdp::builtin_tiger(gamma).unwrap();
    let m = AgentStateProcess::last_observation(&p);
    let pi = AgentPolicy::constant(3, 2, ENTER);
    (p, m, pi)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn joint_chain_tiger_enter_row() {
    let (p, m, pi) = tiger_setup(0.9);
    let chain = build_joint_chain(&p, &m, &pi).unwrap();
    for z in 0..3 {
        let row = chain.transition().row(chain.pair_index(LEFT, z));
        for (q, &w) in row.iter().enumerate() {
            let expect = if q == chain.pair_index(TREASURE, DARK) { 1.0 } else { 0.0 };
            assert_eq!(w, expect);
        }
    }
    for i in 0..chain.n_pairs() {
        let s: f64 = chain.transition().row(i).iter().sum();
        assert!(close(s, 1.0, 1e-12));
    }
    let p0: f64 = chain.initial().iter().sum();
    assert!(close(p0, 1.0, 1e-12));
    assert_eq!(chain.initial()[chain.pair_index(LEFT, OBS_LEFT)], 0.25);
}

#[test]
fn joint_chain_matches_hand_expansion() {
    // Two fully observed states, uniform policy over two actions.
    let t = vec![
        0.8, 0.2, 0.5, 0.5, // a0: rows s0, s1
        0.1, 0.9, 0.0, 1.0, // a1
    ];
    let p = Pomdp::new(2, 2, 2, vec![0.5, 0.5], t, vec![0.0; 8], vec![1.0, 0.0, 0.0, 1.0], 0.9, None).unwrap();
    let m = AgentStateProcess::last_observation(&p);
    let pi = AgentPolicy::uniform(2, 2);
    let chain = build_joint_chain(&p, &m, &pi).unwrap();
    let expect = [[0.45, 0.0, 0.0, 0.55], [0.45, 0.0, 0.0, 0.55], [0.25, 0.0, 0.0, 0.75], [0.25, 0.0, 0.0, 0.75]];
    for (i, row) in expect.iter().enumerate() {
        for (j, &e) in row.iter().enumerate() {
            assert!(close(chain.transition()[(i, j)], e, 1e-15), "({i},{j})");
        }
    }
}

#[test]
fn discounted_visitation_cases() {
    let (p, m, pi) = tiger_setup(0.9);
    let chain = build_joint_chain(&p, &m, &pi).unwrap();
    let d = discounted_visitation(&chain, 0.9).unwrap();
    assert!(close(d.weights().iter().sum::<f64>(), 1.0, 1e-10));
    // Truncated power series oracle.
    let mut series = vec![0.0; chain.n_pairs()];
    let mut mu = chain.initial().to_vec();
    let mut disc = 1.0;
    for _ in 0..=500 {
        for (s, &x) in series.iter_mut().zip(&mu) {
            *s += 0.1 * disc * x;
        }
        mu = chain.transition().vec_mul(&mu);
        disc *= 0.9;
    }
    for (a, b) in d.weights().iter().zip(&series) {
        assert!(close(*a, *b, 1e-8));
    }
    assert!(close(d.weight(TREASURE, DARK), 0.475, 1e-12));
    assert!(close(d.weight(LEFT, OBS_LEFT), 0.025, 1e-12));

    // γ = 0 gives the initial distribution.
    let d0 = discounted_visitation(&chain, 0.0).unwrap();
    for (a, b) in d0.weights().iter().zip(chain.initial()) {
        assert!(close(*a, *b, 1e-15));
    }
}

#[test]
fn absorbing_start_is_a_point_mass() {
    let mut text: serde_json::Value =
        serde_json::from_str(&Pomdp::<f64>::builtin_tiger(0.9).unwrap().to_json()).unwrap();
    text["initial"] = serde_json::json!([1.0, 0.0, 0.0, 0.0]);
    let p = Pomdp::<f64>::from_json(&text.to_string()).unwrap();
    let m = AgentStateProcess::last_observation(&p);
    let pi = AgentPolicy::uniform(3, 2);
    let chain = build_joint_chain(&p, &m, &pi).unwrap();
    let d = discounted_visitation(&chain, 0.9).unwrap();
    assert!(close(d.weight(TREASURE, DARK), 1.0, 1e-12));
}

#[test]
fn m_step_visitation() {
    let (p, m, pi) = tiger_setup(0.9);
    let chain = build_joint_chain(&p, &m, &pi).unwrap();
    let d = discounted_visitation(&chain, 0.9).unwrap();
    assert_eq!(visitation_m_steps(&chain, &d, 0).weights(), d.weights());
    assert_eq!(visitation_m_steps(&chain, &d, 1).weights(), chain.transition().vec_mul(d.weights()).as_slice());
    let d1 = visitation_m_steps(&chain, &d, 1);
    assert!(close(d1.weight(TREASURE, DARK), 0.5, 1e-12));

    // State-revealing wrapper under a uniform policy: mass ends in the rooms.
    let (w, mw) = AgentStateProcess::state_revealing(&p);
    let uni = AgentPolicy::uniform(4, 2);
    let chain = build_joint_chain(&w, &mw, &uni).unwrap();
    let d = discounted_visitation(&chain, 0.9).unwrap();
    let far = visitation_m_steps(&chain, &d, 200);
    let rooms = far.weight(TREASURE, TREASURE) + far.weight(TIGER, TIGER);
    // Power-iteration oracle.
    let mut mu = d.weights().to_vec();
    for _ in 0..200 {
        let mut next = vec![0.0; mu.len()];
        for (i, &x) in mu.iter().enumerate() {
            for (j, &pij) in chain.transition().row(i).iter().enumerate() {
                next[j] += x * pij;
            }
        }
        mu = next;
    }
    assert!(close(rooms, 1.0, 1e-12));
    for (a, b) in far.weights().iter().zip(&mu) {
        assert!(close(*a, *b, 1e-12));
    }
}

#[test]
fn tiger_asymmetric_values() {
    let (p, m, pi) = tiger_setup(0.9);
    let q = asymmetric_q_exact(&p, &m, &pi).unwrap();
    let v = q.state_values(&pi);
    let idx = |s: usize, z: usize| s * 3 + z;
    assert!(close(v[idx(TREASURE, DARK)], 10.0, 1e-10));
    assert!(close(v[idx(TIGER, DARK)], 0.0, 1e-10));
    assert!(close(v[idx(LEFT, OBS_LEFT)], 9.0, 1e-10));
    assert!(close(v[idx(RIGHT, OBS_RIGHT)], 0.0, 1e-10));
    assert!(close(q.get(LEFT, OBS_LEFT, SWAP), 0.0, 1e-10));
    // Every entry within [0, 1/(1−γ)].
    assert!(q.values().iter().all(|&x| (-1e-12..=10.0 + 1e-9).contains(&x)));
}

#[test]
fn asymmetric_fixed_point_identity_for_several_m() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let p = Pomdp::<f64>::random(3, 2, 2, 0.8, &mut rng).unwrap();
    let m = AgentStateProcess::random(2, 2, 2, &mut rng).unwrap();
    let pi = AgentPolicy::random(2, 2, &mut rng);
    let q = asymmetric_q_exact(&p, &m, &pi).unwrap();
    for steps in [1, 2, 4] {
        let tq = asymmetric_bellman(&p, &m, &pi, q.values(), steps).unwrap();
        let res = tq.iter().zip(q.values()).fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        assert!(res <= 1e-9, "m={steps}: residual {res}");
    }
}

#[test]
fn asymmetric_q_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let p = Pomdp::<f64>::random(3, 2, 2, 0.7, &mut rng).unwrap();
    let m = AgentStateProcess::last_observation(&p);
    let pi = AgentPolicy::random(2, 2, &mut rng);
    let q = asymmetric_q_exact(&p, &m, &pi).unwrap();
    let episodes = 100_000;
    let starts: Vec<(usize, usize, usize)> =
        (0..3).flat_map(|s| (0..2).flat_map(move |z| (0..2).map(move |a| (s, z, a)))).collect();
    let failures: Vec<String> = starts
        .par_iter()
        .enumerate()
        .filter_map(|(i, &(s, z, a))| {
            let mut rng = ChaCha8Rng::seed_from_u64(7000 + i as u64);
            let (mut sum, mut sq) = (0.0, 0.0);
            for _ in 0..episodes {
                let g = rollout_return(&p, &m, &pi, (s, z, a), 200, &mut rng);
                sum += g;
                sq += g * g;
            }
            let mean = sum / episodes as f64;
            let se = ((sq / episodes as f64 - mean * mean) / episodes as f64).sqrt();
            let exact = q.get(s, z, a);
            ((mean - exact).abs() > 3.0 * se).then(|| format!("({s},{z},{a}): mc {mean} exact {exact} se {se}"))
        })
        .collect();
    assert!(failures.is_empty(), "{failures:?}");
}

#[test]
fn tiger_symmetric_golden_values() {
    let gamma = 0.9;
    let (p, m, pi) = tiger_setup(gamma);
    let chain = build_joint_chain(&p, &m, &pi).unwrap();
    let d = discounted_visitation(&chain, gamma).unwrap();
    let qt = symmetric_fixed_point(&p, &m, &pi, 1, &d).unwrap();
    let q = symmetric_q_true(&p, &m, &pi, &d).unwrap();
    let half = 1.0 / (2.0 * (1.0 - gamma));
    assert!(close(qt.get_sym(DARK, ENTER), half, 1e-8));
    assert!(close(qt.get_sym(OBS_LEFT, ENTER), gamma * half, 1e-8));
    assert!(close(qt.get_sym(OBS_RIGHT, ENTER), gamma * half, 1e-8));
    assert!(close(q.get_sym(DARK, ENTER), half, 1e-8));
    assert!(close(q.get_sym(OBS_LEFT, ENTER), gamma / (1.0 - gamma), 1e-8));
    assert!(close(q.get_sym(OBS_RIGHT, ENTER), 0.0, 1e-8));
    assert!(close(qt.get_sym(DARK, ENTER), 5.0, 1e-8) && close(qt.get_sym(OBS_LEFT, ENTER), 4.5, 1e-8));
    assert!(close(q.get_sym(OBS_LEFT, ENTER), 9.0, 1e-8));
}

#[test]
fn tiger_golden_values_in_single_precision() {
    let p = Pomdp::<f32>::builtin_tiger(0.9).unwrap();
    let m = AgentStateProcess::last_observation(&p);
    let pi = AgentPolicy::<f32>::constant(3, 2, ENTER);
    let chain = build_joint_chain(&p, &m, &pi).unwrap();
    let d = discounted_visitation(&chain, 0.9).unwrap();
    let qt = symmetric_fixed_point(&p, &m, &pi, 1, &d).unwrap();
    assert!((qt.get_sym(OBS_LEFT, ENTER) - 4.5).abs() < 1e-4);
    let q = symmetric_q_true(&p, &m, &pi, &d).unwrap();
    assert!((q.get_sym(OBS_LEFT, ENTER) - 9.0).abs() < 1e-4);
}

#[test]
fn state_revealing_has_no_aliasing() {
    let p = Pomdp::<f64>::builtin_tiger(0.9).unwrap();
    let (w, m) = AgentStateProcess::state_revealing(&p);
    let pi = AgentPolicy::uniform(4, 2);
    let chain = build_joint_chain(&w, &m, &pi).unwrap();
    let d = discounted_visitation(&chain, 0.9).unwrap();
    let asym = asymmetric_q_exact(&w, &m, &pi).unwrap();
    let q = symmetric_q_true(&w, &m, &pi, &d).unwrap();
    let qt = symmetric_fixed_point(&w, &m, &pi, 1, &d).unwrap();
    for z in 0..4 {
        for a in 0..2 {
            assert!(close(q.get_sym(z, a), asym.get(z, z, a), 1e-12));
            assert!(close(qt.get_sym(z, a), q.get_sym(z, a), 1e-10));
        }
    }
}

#[test]
fn aliasing_exists_on_tiger() {
    let (p, m, pi) = tiger_setup(0.9);
    let chain = build_joint_chain(&p, &m, &pi).unwrap();
    let d = discounted_visitation(&chain, 0.9).unwrap();
    let q = symmetric_q_true(&p, &m, &pi, &d).unwrap();
    let qt = symmetric_fixed_point(&p, &m, &pi, 1, &d).unwrap();
    let w = d.symmetric_with_policy(&pi);
    let diff: Vec<f64> = q.values().iter().zip(qt.values()).map(|(a, b)| a - b).collect();
    let gap = aliased_ac::features::weighted_norm(&diff, &w);
    // ½·(4.5² + 4.5²)·0.025 under d(Left) = d(Right) = 0.025.
    assert!(close(gap, (0.05f64 * 20.25).sqrt(), 1e-10), "{gap}");
}

#[test]
fn symmetric_operator_contracts() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = Pomdp::<f64>::random(3, 2, 2, 0.85, &mut rng).unwrap();
    let m = AgentStateProcess::random(2, 2, 2, &mut rng).unwrap();
    let pi = AgentPolicy::random(2, 2, &mut rng);
    let chain = build_joint_chain(&p, &m, &pi).unwrap();
    let d = discounted_visitation(&chain, 0.85).unwrap();
    for steps in [1, 2, 4] {
        let op = SymmetricBellman::new(&p, &m, &pi, steps, &d).unwrap();
        for _ in 0..50 {
            let q1: Vec<f64> = (0..4).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let q2: Vec<f64> = (0..4).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let (t1, t2) = (op.apply(&q1), op.apply(&q2));
            let num = t1.iter().zip(&t2).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
            let den = q1.iter().zip(&q2).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
            assert!(num / den <= 0.85f64.powi(steps as i32) + 1e-10);
        }
        let fp = op.fixed_point().unwrap();
        let again = op.apply(fp.values());
        assert!(again.iter().zip(fp.values()).all(|(a, b)| (a - b).abs() < 1e-10));
    }
}

#[test]
fn belief_filter_examples() {
    let p = Pomdp::<f64>::builtin_tiger(0.9).unwrap();
    assert_eq!(belief_filter(&p, OBS_LEFT, &[]).unwrap(), vec![0.0, 0.0, 1.0, 0.0]);
    assert_eq!(belief_filter(&p, OBS_LEFT, &[(ENTER, DARK)]).unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
    assert_eq!(belief_filter(&p, DARK, &[]).unwrap(), vec![0.5, 0.5, 0.0, 0.0]);
    assert!(matches!(
        belief_filter(&p, OBS_LEFT, &[(ENTER, OBS_RIGHT)]),
        Err(aliased_ac::Error::ZeroLikelihood { step: 1 })
    ));

    // Uninformative chain: the belief stays at the prior.
    let q = Pomdp::<f64>::new(
        3,
        1,
        1,
        vec![0.2, 0.3, 0.5],
        vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        vec![0.0; 9],
        vec![1.0; 3],
        0.5,
        None,
    )
    .unwrap();
    let b = belief_filter(&q, 0, &[(0, 0), (0, 0), (0, 0)]).unwrap();
    for (x, y) in b.iter().zip([0.2, 0.3, 0.5]) {
        assert!(close(*x, y, 1e-15));
    }
}

#[test]
fn approximate_belief_examples() {
    let (p, m, pi) = tiger_setup(0.9);
    let b = approximate_belief(&p, &m, &pi, 1, DARK).unwrap();
    for (x, y) in b.iter().zip([0.5, 0.5, 0.0, 0.0]) {
        assert!(close(*x, y, 1e-15));
    }
    assert!(approximate_belief(&p, &m, &pi, 1, OBS_LEFT).is_err());
    let (w, mw) = AgentStateProcess::state_revealing(&p);
    let uni = AgentPolicy::uniform(4, 2);
    for t in 0..5 {
        for z in 0..4 {
            if let Ok(b) = approximate_belief(&w, &mw, &uni, t, z) {
                assert_eq!(b[z], 1.0);
                assert!(close(b.iter().sum::<f64>(), 1.0, 1e-15));
            }
        }
    }
}

#[test]
fn geometric_sampler_matches_visitation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let p = Pomdp::<f64>::random(3, 2, 2, 0.8, &mut rng).unwrap();
    let m = AgentStateProcess::random(2, 2, 2, &mut rng).unwrap();
    let pi = AgentPolicy::random(2, 2, &mut rng);
    let chain = build_joint_chain(&p, &m, &pi).unwrap();
    let d = discounted_visitation(&chain, 0.8).unwrap();
    let n = 1_000_000;
    let mut counts = [0usize; 6];
    let mut t_sum = 0.0;
    let mut t_sq = 0.0;
    for _ in 0..n {
        let ((s, z), t0) = sample_discounted_with_time(&p, &m, &pi, &mut rng);
        counts[s * 2 + z] += 1;
        t_sum += t0 as f64;
        t_sq += (t0 * t0) as f64;
    }
    for (c, &w) in counts.iter().zip(d.weights()) {
        let sd = (n as f64 * w * (1.0 - w)).sqrt();
        assert!((*c as f64 - n as f64 * w).abs() <= 4.0 * sd, "{c} vs {}", n as f64 * w);
    }
    let mean = t_sum / n as f64;
    let se = ((t_sq / n as f64 - mean * mean) / n as f64).sqrt();
    assert!((mean - 0.8 / 0.2).abs() <= 3.0 * se);
}

#[test]
fn zero_discount_sampler_returns_initial_pair() {
    let p = Pomdp::<f64>::builtin_tiger(0.0).unwrap();
    let m = AgentStateProcess::last_observation(&p);
    let pi = AgentPolicy::constant(3, 2, ENTER);
    let mut a = ChaCha8Rng::seed_from_u64(8);
    let mut b = a.clone();
    for _ in 0..1000 {
        let (s, z) = sample_discounted(&p, &m, &pi, &mut a);
        let _: f64 = b.gen();
        let (s0, o0) = p.initial_draw(&mut b);
        assert_eq!((s, z), (s0, o0));
    }
}

#[test]
fn exact_return_routes() {
    let (p, m, pi) = tiger_setup(0.9);
    let j = exact_return(&p, &m, &pi).unwrap();
    assert!(close(j, 4.75, 1e-10));
    assert!(close(exact_return_via_q(&p, &m, &pi).unwrap(), j, 1e-10));

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let p = Pomdp::<f64>::random(3, 2, 2, 0.9, &mut rng).unwrap();
        let m = AgentStateProcess::random(2, 2, 2, &mut rng).unwrap();
        let pi = AgentPolicy::random(2, 2, &mut rng);
        assert!(close(exact_return(&p, &m, &pi).unwrap(), exact_return_via_q(&p, &m, &pi).unwrap(), 1e-10));
    }

    let zero = Pomdp::<f64>::new(1, 1, 1, vec![1.0], vec![1.0], vec![0.0], vec![1.0], 0.9, None).unwrap();
    let mz = AgentStateProcess::last_observation(&zero);
    assert_eq!(exact_return(&zero, &mz, &AgentPolicy::uniform(1, 1)).unwrap(), 0.0);
}

#[test]
fn brute_force_on_tiger() {
    let (p, m, _) = tiger_setup(0.9);
    let (best, j_star) = brute_force_optimal(&p, &m, DEFAULT_ENUMERATION_CAP).unwrap();
    assert_eq!(best.prob(OBS_LEFT, ENTER), 1.0);
    assert_eq!(best.prob(OBS_RIGHT, SWAP), 1.0);
    // Lexicographic tie-break on the irrelevant Dark action.
    assert_eq!(best.prob(DARK, SWAP), 1.0);
    // (10 + 0 + 9 + 0.9·9) / 4.
    assert!(close(j_star, 6.775, 1e-10));
    // Enumeration oracle over all 8 deterministic policies.
    let mut oracle = f64::MIN;
    for code in 0..8usize {
        let acts = [(code >> 2) & 1, (code >> 1) & 1, code & 1];
        let pi = AgentPolicy::deterministic(2, &acts);
        oracle = oracle.max(exact_return(&p, &m, &pi).unwrap());
    }
    assert!(close(j_star, oracle, 1e-12));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let pi = AgentPolicy::random(3, 2, &mut rng);
        assert!(exact_return(&p, &m, &pi).unwrap() <= j_star + 1e-12);
    }
    assert!(brute_force_optimal(&p, &AgentStateProcess::sliding_window(&p, 3, 10_000).unwrap(), 1 << 10).is_err());
}

#[test]
fn single_action_policy_is_unique() {
    let q = Pomdp::<f64>::new(
        2,
        1,
        1,
        vec![0.5, 0.5],
        vec![0.5, 0.5, 0.5, 0.5],
        vec![1.0, 0.0, 0.0, 1.0],
        vec![1.0, 1.0],
        0.5,
        None,
    )
    .unwrap();
    let m = AgentStateProcess::last_observation(&q);
    let (pi, j) = brute_force_optimal(&q, &m, 10).unwrap();
    assert_eq!(pi.probs(0), &[1.0]);
    assert!(close(j, exact_return(&q, &m, &pi).unwrap(), 1e-15));
}

#[test]
fn csv_exports() {
    let (p, m, pi) = tiger_setup(0.9);
    let chain = build_joint_chain(&p, &m, &pi).unwrap();
    let d = discounted_visitation(&chain, 0.9).unwrap();
    let csv = d.to_csv();
    assert!(csv.starts_with("s,z,weight\n"));
    assert_eq!(csv.lines().count(), 13);
    let q = symmetric_q_true(&p, &m, &pi, &d).unwrap();
    assert!(q.to_csv().starts_with("s,z,a,value\n,0,0,"));
}
