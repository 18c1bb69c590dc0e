use aliased_ac::bounds::*;
use aliased_ac::features::FeatureMap;
use aliased_ac::npg::{exact_advantages, LogLinearPolicy};
use aliased_ac::td::{error_weights, CriticMode};
use aliased_ac::{AgentPolicy, AgentStateProcess, Error, Pomdp};

const ENTER: usize = 1;

fn tiger() -> (Pomdp<f64>, AgentStateProcess<f64>, AgentPolicy<f64>) {
    let p = Pomdp::builtin_tiger(0.9).unwrap();
    let m = AgentStateProcess::last_observation(&p);
    (p, m, AgentPolicy::constant(3, 2, ENTER))
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn closed_form_terms() {
    assert!(close(eps_td(1, 1.0, 0.0, 1), 6.5f64.sqrt(), 1e-12));
    let ratio = eps_td(16 * 400, 3.0, 0.9, 2) / eps_td(400, 3.0, 0.9, 2);
    assert!(close(ratio, 0.5, 1e-12));
    assert!(close(eps_shift(1.0, 0.5, 1, 0.25), 3.0, 1e-12));
    assert_eq!(eps_shift(1.0, 0.5, 1, 0.0), 0.0);
    assert!(close(eps_nac(4, 1.0, 2), (1.0 + 2.0 * 2f64.ln()) / 4.0, 1e-12));
    assert!(close(eps_actor(1, 1.0, 0.0), 2f64.sqrt(), 1e-12));
    assert!(close(eps_app(1.0, 0.5, 1), 3.0, 1e-12));
}

#[test]
fn total_variation() {
    assert!(close(tv_distance(&[0.5, 0.5, 0.0], &[0.1, 0.5, 0.4]).unwrap(), 0.4, 1e-12));
    assert_eq!(tv_distance(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
    assert!(matches!(tv_distance(&[1.0], &[0.5, 0.5]), Err(Error::LengthMismatch { .. })));
}

#[test]
fn concentrability_examples() {
    let c = concentrability(&[0.5, 0.5, 0.0], &[0.25, 0.25, 0.5]).unwrap();
    assert!(!c.infinite);
    assert!(close(c.value(), 2.0, 1e-12));
    let c = concentrability::<f64>(&[0.5, 0.5, 0.0], &[1.0, 0.0, 0.0]).unwrap();
    assert!(c.infinite);
    assert!(c.value().is_infinite());
}

#[test]
fn state_revealing_agent_state_has_no_belief_gap() {
    let p = Pomdp::<f64>::builtin_tiger(0.9).unwrap();
    let (q, m) = AgentStateProcess::state_revealing(&p);
    let pi = AgentPolicy::uniform(m.n_agent_states(), q.n_actions());
    for stride in [1, 2] {
        let a = eps_alias(&q, &m, &pi, stride, &EnumerationOptions::default()).unwrap();
        assert!(a.value.abs() < 1e-10, "{}", a.value);
    }
    let inf = eps_inf(&q, &m, &pi, CriticMode::Symmetric, &EnumerationOptions::default()).unwrap();
    assert!(inf.value.abs() < 1e-10);
}

#[test]
fn asymmetric_inference_term_is_zero() {
    let (p, m, pi) = tiger();
    let inf = eps_inf(&p, &m, &pi, CriticMode::Asymmetric, &EnumerationOptions::default()).unwrap();
    assert_eq!(inf.value, 0.0);
    assert_eq!(inf.tail, 0.0);
}

#[test]
fn tiger_alias_term_is_stable_in_the_horizon() {
    let (p, m, pi) = tiger();
    let short = EnumerationOptions { horizon: 20, ..Default::default() };
    let long = EnumerationOptions { horizon: 40, ..Default::default() };
    let a = eps_alias(&p, &m, &pi, 1, &short).unwrap();
    let b = eps_alias(&p, &m, &pi, 1, &long).unwrap();
    assert!(a.value > 0.0);
    assert!(b.value >= a.value - 1e-12);
    assert!(b.value <= a.value + a.tail + 1e-12);
    assert!(close(a.tail, 2.0 / 0.1 * 0.9f64.powi(21) / 0.1, 1e-9));
}

#[test]
fn aliasing_lemma_holds_on_tiger() {
    let (p, m, _) = tiger();
    for pi in [AgentPolicy::constant(3, 2, ENTER), AgentPolicy::uniform(3, 2)] {
        for stride in [1, 2, 4] {
            let check = aliasing_lemma_check(&p, &m, &pi, stride, &EnumerationOptions::default()).unwrap();
            assert!(check.lhs > 0.0);
            assert!(check.holds, "m={stride}: {check:?}");
        }
    }
}

#[test]
fn node_cap_errors_without_monte_carlo() {
    let (p, m, _) = tiger();
    let pi = AgentPolicy::uniform(3, 2);
    let tight = EnumerationOptions { horizon: 40, node_cap: 2, monte_carlo: None };
    assert!(matches!(belief_gap(&p, &m, &pi, 1, &tight), Err(Error::SizeCap { .. })));
}

#[test]
fn monte_carlo_fallback_agrees_with_enumeration() {
    let (p, m, _) = tiger();
    let pi = AgentPolicy::uniform(3, 2);
    let exact = belief_gap(&p, &m, &pi, 1, &EnumerationOptions { horizon: 15, ..Default::default() }).unwrap();
    let mc_opts =
        EnumerationOptions { horizon: 15, node_cap: 2, monte_carlo: Some(MonteCarlo { samples: 20_000, seed: 3 }) };
    let mc = belief_gap(&p, &m, &pi, 1, &mc_opts).unwrap();
    assert!(mc.monte_carlo);
    for z in 0..3 {
        match (exact.per_agent_state[z], mc.per_agent_state[z]) {
            (Some(e), Some(s)) => assert!((e - s).abs() <= 5.0 * mc.standard_error[z] + 1e-9, "z={z}: {e} vs {s}"),
            (None, None) => {}
            other => panic!("support mismatch at z={z}: {other:?}"),
        }
    }
}

fn grad_loss(policy: &LogLinearPolicy<f64>, p: &Pomdp<f64>, m: &AgentStateProcess<f64>, w: [f64; 2]) -> f64 {
    let tab = policy.to_agent_policy();
    let ex = exact_advantages(p, m, &tab).unwrap();
    let weights = error_weights(&ex.d, &tab, CriticMode::Asymmetric);
    let scores = policy.score_table();
    let mut loss = 0.0;
    for (i, &wt) in weights.iter().enumerate() {
        let sc = &scores[i % scores.len()];
        let r = sc[0] * w[0] + sc[1] * w[1] - ex.asymmetric_advantage[i];
        loss += wt * r * r;
    }
    loss
}

#[test]
fn gradient_term_matches_a_grid_search() {
    let (p, m, _) = tiger();
    let feats = FeatureMap::<f64>::random(6, 2, 11).unwrap();
    let policy = LogLinearPolicy::new(feats, 3, 2).unwrap().with_theta(vec![0.4, -0.7]).unwrap();
    for radius in [0.5, 50.0] {
        let got = eps_grad_single(&p, &m, &policy, radius, CriticMode::Asymmetric).unwrap();
        let (mut cx, mut cy, mut span) = (0.0, 0.0, radius);
        let mut best = f64::INFINITY;
        for _ in 0..30 {
            let (mut bx, mut by) = (cx, cy);
            for i in 0..=40 {
                for j in 0..=40 {
                    let x = cx - span + 2.0 * span * i as f64 / 40.0;
                    let y = cy - span + 2.0 * span * j as f64 / 40.0;
                    let n = (x * x + y * y).sqrt();
                    let (x, y) = if n > radius { (x * radius / n, y * radius / n) } else { (x, y) };
                    let l = grad_loss(&policy, &p, &m, [x, y]);
                    if l < best {
                        best = l;
                        bx = x;
                        by = y;
                    }
                }
            }
            cx = bx;
            cy = by;
            span *= 0.3;
        }
        assert!(close(got, best.sqrt(), 1e-4), "B={radius}: {got} vs {}", best.sqrt());
    }
}

#[test]
fn gradient_term_is_a_supremum() {
    let (p, m, _) = tiger();
    let feats = FeatureMap::<f64>::random(6, 2, 11).unwrap();
    let a = LogLinearPolicy::new(feats.clone(), 3, 2).unwrap();
    let b = a.with_theta(vec![1.0, 2.0]).unwrap();
    let ea = eps_grad_single(&p, &m, &a, 1.0, CriticMode::Symmetric).unwrap();
    let eb = eps_grad_single(&p, &m, &b, 1.0, CriticMode::Symmetric).unwrap();
    let sup = eps_grad(&p, &m, &[a, b], 1.0, CriticMode::Symmetric).unwrap();
    assert_eq!(sup, ea.max(eb));
}

#[test]
fn later_alias_terms_shrink_with_the_stride() {
    let (p, m, pi) = tiger();
    let head = belief_gap(&p, &m, &pi, 1, &EnumerationOptions { horizon: 0, ..Default::default() }).unwrap();
    let mut previous = [f64::INFINITY; 3];
    for stride in [1, 2, 4, 8] {
        let horizon = 64 / stride;
        let gap = belief_gap(&p, &m, &pi, stride, &EnumerationOptions { horizon, ..Default::default() }).unwrap();
        for (z, prev) in previous.iter_mut().enumerate() {
            let (Some(all), Some(first)) = (gap.per_agent_state[z], head.per_agent_state[z]) else { continue };
            let rest = all - first;
            assert!(rest <= *prev + 1e-12, "m={stride}, z={z}: {rest} > {prev}");
            *prev = rest;
        }
    }
}
