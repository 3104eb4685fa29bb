use super::*;
use crate::agent::MemoryEntry;
use crate::ingest::Money;
use crate::storefront::{Action, Variant};
use proptest::prelude::*;
use statrs::distribution::{Beta as SBeta, Continuous, ContinuousCDF};

pub(crate) fn log(profile: &str, a2c: bool, termination: Termination) -> SessionLog {
    SessionLog {
        shop_id: "s".into(),
        profile_id: profile.into(),
        cluster_id: 0,
        purchase_focused: true,
        theme_id: "control".into(),
        variant: Variant::Control,
        seed: 0,
        entries: vec![],
        final_cart: vec![],
        cart_value: Money(0),
        termination,
        a2c,
        steps: 0,
        exited_store: false,
    }
}

fn ended(r: TerminationReason) -> Termination {
    Termination::AgentTerminated { reason: r }
}

fn shop(id: &str, human: f64, c: (u64, u64), t: (u64, u64)) -> ShopResult {
    ShopResult {
        shop_id: id.into(),
        human_delta: human,
        agent_control: Counts::new(c.0, c.1).unwrap(),
        agent_treatment: Counts::new(t.0, t.1).unwrap(),
        per_cluster: BTreeMap::new(),
    }
}

/// P(p_t > p_c) = integral of f_t(x) F_c(x) over [0, 1], Simpson's rule.
fn quadrature(c: (u64, u64), t: (u64, u64)) -> f64 {
    let bc = SBeta::new(1.0 + c.0 as f64, 1.0 + (c.1 - c.0) as f64).unwrap();
    let bt = SBeta::new(1.0 + t.0 as f64, 1.0 + (t.1 - t.0) as f64).unwrap();
    let n = 20_000;
    let h = 1.0 / n as f64;
    let f = |x: f64| bt.pdf(x) * bc.cdf(x);
    let mut s = f(0.0) + f(1.0);
    for i in 1..n {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

#[test]
fn a2c_rate_examples() {
    let logs = |k: usize| (0..10).map(|i| log("p", i < k, Termination::StepLimit)).collect::<Vec<_>>();
    assert_eq!(a2c_rate(&logs(0)).unwrap(), 0.0);
    assert_eq!(a2c_rate(&logs(10)).unwrap(), 1.0);
    assert_eq!(a2c_rate(&logs(3)).unwrap(), 0.3);
    assert_eq!(a2c_rate(&[]), Err(EvalError::EmptyInput));
}

#[test]
fn alignment_rate_examples() {
    let up = shop("a", 0.1, (10, 100), (20, 100));
    let down = shop("b", -0.1, (10, 100), (20, 100));
    let flat = shop("c", 0.1, (10, 100), (10, 100));
    let excluded = shop("d", 0.0, (10, 100), (20, 100));
    assert_eq!(alignment_rate(&[up.clone()]).unwrap(), 100.0);
    assert_eq!(alignment_rate(&[up.clone(), down]).unwrap(), 50.0);
    assert_eq!(alignment_rate(&[flat]).unwrap(), 0.0);
    assert_eq!(alignment_rate(&[up, excluded.clone()]).unwrap(), 100.0);
    assert_eq!(alignment_rate(&[excluded]), Err(EvalError::NoEvaluableShops));
}

#[test]
fn alignment_probability_cases() {
    let sym = shop("s", 0.05, (5, 100), (5, 100));
    assert!((alignment_probability(&sym, 100_000, 1).unwrap() - 0.5).abs() < 0.01);
    let dominant = shop("d", 0.05, (0, 100), (100, 100));
    assert!(alignment_probability(&dominant, 10_000, 1).unwrap() > 0.999);
    let mid = shop("m", 0.05, (10, 100), (20, 100));
    let oracle = quadrature((10, 100), (20, 100));
    let est = alignment_probability(&mid, 100_000, 7).unwrap();
    assert!((est - oracle).abs() < 0.01, "{est} vs {oracle}");
    let negative = shop("n", -0.05, (10, 100), (20, 100));
    let est_neg = alignment_probability(&negative, 100_000, 7).unwrap();
    assert!((est_neg - (1.0 - oracle)).abs() < 0.01);
    assert_eq!(alignment_probability(&mid, 100_000, 7).unwrap(), est);
    assert!(matches!(alignment_probability(&shop("z", 0.0, (1, 2), (1, 2)), 10_000, 0), Err(EvalError::ZeroHumanDelta(_))));
    assert!(matches!(alignment_probability(&mid, 9_999, 0), Err(EvalError::TooFewSamples { .. })));
}

/// Textbook formula, written independently of the implementation.
fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

#[test]
fn pearson_examples() {
    let x = [1.0, 2.0, 3.0, 4.0];
    assert!((pearson(&x, &x).unwrap().unwrap() - 1.0).abs() < 1e-12);
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    assert!((pearson(&x, &neg).unwrap().unwrap() + 1.0).abs() < 1e-12);
    let y = [2.0, 1.0, 4.0, 3.0];
    assert!((pearson(&x, &y).unwrap().unwrap() - pearson_oracle(&x, &y)).abs() < 1e-12);
    assert!((pearson(&x, &y).unwrap().unwrap() - 0.6).abs() < 1e-12);
    assert_eq!(pearson(&x, &[1.0, 1.0, 1.0, 1.0]).unwrap(), None);
    assert_eq!(pearson(&x, &[1.0]), Err(EvalError::LengthMismatch(4, 1)));
}

#[test]
fn spearman_and_slope() {
    assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 100.0]).unwrap().unwrap() - 1.0).abs() < 1e-12);
    assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0, 2.0, 3.0]).unwrap().unwrap() - 0.9486832980505138).abs() < 1e-12);
    assert_eq!(least_squares_slope(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]).unwrap(), Some(2.0));
    assert_eq!(least_squares_slope(&[1.0, 1.0], &[0.0, 1.0]).unwrap(), None);
}

fn with_error(mut l: SessionLog, err: &str) -> SessionLog {
    l.entries.push(MemoryEntry {
        step: 0,
        url: "/products/p1".into(),
        reasoning: "add".into(),
        action: Some(Action::Click { target: "e9".into() }),
        outcome: "Action failed; still on /products/p1".into(),
        error: Some(err.into()),
        llm_retries: 0,
    });
    l
}

#[test]
fn classification_rules_and_precedence() {
    assert_eq!(classify_behavior(&log("p", false, Termination::LoopGuard)), BehavioralMode::StuckInLoop);
    let oos = with_error(log("p", false, ended(TerminationReason::NoSuitableProduct)), "out_of_stock: gone");
    assert_eq!(classify_behavior(&oos), BehavioralMode::FailedToAdd);
    assert_eq!(classify_behavior(&log("p", false, ended(TerminationReason::NoSuitableProduct))), BehavioralMode::ProductNotFound);
    assert_eq!(classify_behavior(&log("p", false, ended(TerminationReason::NoA2CDecision))), BehavioralMode::NoA2CDecision);
    assert_eq!(classify_behavior(&log("p", false, ended(TerminationReason::PriceTooHigh))), BehavioralMode::PriceRejection);
    assert_eq!(classify_behavior(&log("p", false, ended(TerminationReason::Leaving))), BehavioralMode::Other);
    assert_eq!(classify_behavior(&log("p", false, Termination::StepLimit)), BehavioralMode::Other);
    let mut exit = log("p", false, Termination::LoopGuard);
    exit.exited_store = true;
    assert_eq!(classify_behavior(&exit), BehavioralMode::StuckInLoop);
    exit.termination = ended(TerminationReason::PriceTooHigh);
    assert_eq!(classify_behavior(&exit), BehavioralMode::ThemeExit);
    let price_and_oos = with_error(log("p", false, ended(TerminationReason::PriceTooHigh)), "out_of_stock: x");
    assert_eq!(classify_behavior(&price_and_oos), BehavioralMode::PriceRejection);
    let other_error = with_error(log("p", false, ended(TerminationReason::NoSuitableProduct)), "no_such_ref: e1");
    assert_eq!(classify_behavior(&other_error), BehavioralMode::ProductNotFound);
}

#[test]
fn distribution_cases() {
    let same: Vec<_> = (0..4).map(|i| log(&format!("a{i}"), i % 2 == 0, Termination::StepLimit)).collect();
    let d = behavioral_distribution(&same, &same).unwrap();
    assert!(d.no_differing_agents);
    assert!(d.shares.is_empty());

    let c = vec![log("a0", true, ended(TerminationReason::GoalReached))];
    let t = vec![log("a0", false, Termination::LoopGuard)];
    let d = behavioral_distribution(&c, &t).unwrap();
    assert_eq!(d.share(BehavioralMode::StuckInLoop), 1.0);
    assert_eq!(d.differing_agents, 1);

    let t_bad = vec![log("zz", false, Termination::LoopGuard)];
    assert!(matches!(behavioral_distribution(&c, &t_bad), Err(EvalError::UnpairedLogs { .. })));
    assert_eq!(behavioral_distribution(&c, &[]), Err(EvalError::LengthMismatch(1, 0)));
}

fn outcomes(k: usize, n: usize) -> Vec<bool> {
    (0..n).map(|i| i < k).collect()
}

fn run(spec: &[(&str, usize, usize)], n: usize) -> RunOutcomes {
    spec.iter()
        .map(|&(id, c, t)| (id.to_string(), ArmOutcomes { control: outcomes(c, n), treatment: outcomes(t, n) }))
        .collect()
}

#[test]
fn bootstrap_shape_determinism_and_degenerate() {
    let r1 = run(&[("a", 30, 50), ("b", 50, 30), ("c", 40, 45)], 100);
    let r2 = run(&[("a", 32, 49), ("b", 52, 28), ("c", 44, 41)], 100);
    let rep = bootstrap_analysis(&r1, &r2, &[50], 1, 3).unwrap();
    assert_eq!(rep.rows.len(), 1);
    let a = bootstrap_analysis(&r1, &r2, &[50, 100], 50, 9).unwrap();
    assert_eq!(a, bootstrap_analysis(&r1, &r2, &[50, 100], 50, 9).unwrap());
    for row in &a.rows {
        let s = row.sign_alignment;
        assert!(s.p10 <= s.median && s.median <= s.p90);
    }

    let all = run(&[("a", 100, 100), ("b", 100, 100)], 100);
    let d = bootstrap_analysis(&all, &all, &[50], 20, 1).unwrap();
    assert_eq!(d.rows[0].correlation, None);
    assert_eq!(d.rows[0].correlation_undefined, 20);
    assert_eq!(d.rows[0].sign_alignment.mean, 0.0);

    let other = run(&[("a", 1, 2)], 100);
    assert!(matches!(bootstrap_analysis(&r1, &other, &[50], 1, 0), Err(EvalError::ShopMismatch(_))));
    assert_eq!(bootstrap_analysis(&r1, &r2, &[50], 0, 0), Err(EvalError::EmptyBootstrap));
}

#[test]
fn evaluate_examples() {
    let dists = BTreeMap::new();
    let cfg = EvalConfig { mc_samples: 10_000, seed: 1 };
    let two = [shop("a", 0.1, (10, 100), (20, 100)), shop("b", 0.2, (10, 100), (30, 100))];
    let r = evaluate_results(&two, &dists, &cfg).unwrap();
    assert_eq!(r.metrics.alignment_rate, 100.0);
    assert!((r.metrics.pearson.unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(r.metrics.shops_evaluated, 2);

    let flat = [shop("a", 0.1, (10, 100), (10, 100)), shop("b", -0.2, (30, 100), (30, 100))];
    let r = evaluate_results(&flat, &dists, &cfg).unwrap();
    assert_eq!(r.metrics.pearson, None);
    assert_eq!(r.metrics.alignment_rate, 0.0);
    assert!(r.per_shop.iter().all(|s| s.within_noise));
}

#[test]
fn slope_matches_closed_form_on_twenty_shops() {
    let shops: Vec<ShopResult> = (0..20)
        .map(|i| {
            let t = 20 + (i * 37 % 41) as u64;
            let human = 0.013 * i as f64 - 0.1 + if i % 3 == 0 { 0.02 } else { -0.01 };
            shop(&format!("s{i:02}"), human, (30, 200), (t, 200))
        })
        .collect();
    let r = evaluate_results(&shops, &BTreeMap::new(), &EvalConfig { mc_samples: 10_000, seed: 0 }).unwrap();
    // Normal equations for y = a + b x, solved by Cramer's rule.
    let xs: Vec<f64> = shops.iter().map(|s| s.agent_delta()).collect();
    let ys: Vec<f64> = shops.iter().map(|s| s.human_delta).collect();
    let n = xs.len() as f64;
    let (sx, sy) = (xs.iter().sum::<f64>(), ys.iter().sum::<f64>());
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
    let b = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    assert!((r.slope.unwrap() - b).abs() < 1e-9);
    assert_eq!(r.scatter.len(), 20);
}

proptest! {
    #[test]
    fn pearson_scale_shift_invariant(
        xs in prop::collection::vec(-100.0f64..100.0, 3..30),
        a in 0.01f64..50.0,
        b in -50.0f64..50.0,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ys: Vec<f64> = xs.iter().map(|x| x * 0.5 + rand::Rng::random::<f64>(&mut rng)).collect();
        let scaled: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
        if let (Some(p), Some(q)) = (pearson(&xs, &ys).unwrap(), pearson(&scaled, &ys).unwrap()) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn summary_percentiles_ordered(v in prop::collection::vec(-1.0f64..1.0, 1..100)) {
        let s = summarize(&v).unwrap();
        prop_assert!(s.p10 <= s.median && s.median <= s.p90);
    }

    #[test]
    fn distribution_shares_sum_to_one(flags in prop::collection::vec((any::<bool>(), any::<bool>(), 0usize..4), 1..40)) {
        let reasons = [Termination::LoopGuard, ended(TerminationReason::NoSuitableProduct),
            ended(TerminationReason::PriceTooHigh), Termination::StepLimit];
        let c: Vec<_> = flags.iter().enumerate().map(|(i, f)| log(&format!("a{i}"), f.0, reasons[f.2].clone())).collect();
        let t: Vec<_> = flags.iter().enumerate().map(|(i, f)| log(&format!("a{i}"), f.1, reasons[(f.2 + 1) % 4].clone())).collect();
        let d = behavioral_distribution(&c, &t).unwrap();
        if !d.no_differing_agents {
            prop_assert!((d.shares.values().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
