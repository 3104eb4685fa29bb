//! Acceptance suite. Every criterion runs at its stated tolerance and prints
//! one PASS/FAIL line; the process exits non-zero if any criterion fails.
//!
//! Run with `cargo test -p simgym-core --test acceptance`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::{json, Value};
use statrs::distribution::{Beta, Continuous, ContinuousCDF};

use simgym::agent::{journey_stats, run_session, AgentDecision, Limits, SessionLog, Termination, TerminationReason};
use simgym::clustering::{fit_rows, KMeansParams};
use simgym::eval::{alignment_probability, behavioral_distribution, pearson, BehavioralMode, Counts, ShopResult};
use simgym::ingest::Money;
use simgym::llm::{Backend, BackendError, BackendRequest, ScriptedContext};
use simgym::persona::{
    calibrate_intent_mix, compose_profiles, exploration_regime, price_tier, AgentProfile, BuyerIntent,
    DimensionConfidence, PersonaDimensions, PriceTier, ProductPreferences, Regime,
};
use simgym::pipeline::{Pipeline, RunConfig};
use simgym::storefront::{load_storefront, Action, Role, Storefront, Variant};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || format!("took {:.1}s, limit {limit_s}s", elapsed.as_secs_f64()))
}

// 1 -------------------------------------------------------------------------

fn calibration() -> Check {
    let start = Instant::now();
    let mut cases = 0;
    for i in 0..=20u64 {
        let a = i as f64 * 0.05;
        for n in 2..=50u64 {
            // round(i/20 * n) half away from zero, in integers
            let rounded = (2 * i * n + 20) / 40;
            let want = rounded.clamp(1, n - 1) as usize;
            let got = calibrate_intent_mix(a, n as usize).map_err(|e| format!("a={a}, n={n}: {e}"))?;
            ensure(got == want, || format!("a={a}, n={n}: got {got}, want {want}"))?;
            cases += 1;
        }
    }
    within(start.elapsed(), 1.0)?;
    Ok(format!("{cases} grid points exact"))
}

// 2 -------------------------------------------------------------------------

fn comb2(x: u64) -> f64 {
    (x * x.saturating_sub(1) / 2) as f64
}

/// Hubert and Arabie's adjusted Rand index from the contingency table.
fn ari(a: &[usize], b: &[usize]) -> f64 {
    let mut table: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, u64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, u64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&n| comb2(n)).sum();
    let sa: f64 = rows.values().map(|&n| comb2(n)).sum();
    let sb: f64 = cols.values().map(|&n| comb2(n)).sum();
    let expected = sa * sb / comb2(a.len() as u64);
    let max = 0.5 * (sa + sb);
    (index - expected) / (max - expected)
}

fn clustering() -> Check {
    let start = Instant::now();
    let centers = [[0.0, 0.0], [6.0, 0.0], [3.0, 6.0]];
    let mut worst = f64::INFINITY;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mut rows = Vec::new();
        let mut truth = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..100 {
                rows.push(vec![center[0] + noise.sample(&mut rng), center[1] + noise.sample(&mut rng)]);
                truth.push(c);
            }
        }
        let model = fit_rows(&rows, &KMeansParams::new(3, seed)).map_err(|e| format!("seed {seed}: {e}"))?;
        let score = ari(&truth, &model.labels);
        worst = worst.min(score);
        ensure(score >= 0.95, || format!("seed {seed}: ARI {score:.4}"))?;
        ensure(model.inertia_history.windows(2).all(|w| w[1] <= w[0]), || {
            format!("seed {seed}: inertia rose {:?}", model.inertia_history)
        })?;
        for (i, row) in rows.iter().enumerate() {
            let d: Vec<f64> = model.centroids.iter().map(|c| (c[0] - row[0]).powi(2) + (c[1] - row[1]).powi(2)).collect();
            let best = (0..d.len()).fold(0, |b, j| if d[j] < d[b] { j } else { b });
            let got = model.assign(row).map_err(|e| e.to_string())?.cluster_id;
            ensure(got == best && model.labels[i] == best, || format!("seed {seed}, row {i}: assigned {got}, argmin {best}"))?;
        }
    }
    within(start.elapsed(), 5.0)?;
    Ok(format!("min ARI {worst:.4} over 20 seeds"))
}

// 3 -------------------------------------------------------------------------

fn thresholds() -> Check {
    let start = Instant::now();
    // budget (>50% gap), mid-range (30-50%), premium (<30%);
    // shallow (0-0.35), moderate (0.35-0.65), deep (0.65-1.0)
    for i in 0..=100u32 {
        let x = i as f64 / 100.0;
        let tier = if i > 50 {
            PriceTier::Budget
        } else if i > 30 {
            PriceTier::MidRange
        } else {
            PriceTier::Premium
        };
        ensure(price_tier(x) == tier, || format!("gap {x}: {:?}, want {tier:?}", price_tier(x)))?;
        let regime = if i < 35 {
            Regime::Shallow
        } else if i < 65 {
            Regime::Moderate
        } else {
            Regime::Deep
        };
        ensure(exploration_regime(x) == regime, || format!("score {x}: {:?}, want {regime:?}", exploration_regime(x)))?;
    }
    within(start.elapsed(), 1.0)?;
    Ok("101 grid points per mapping".into())
}

// 4 -------------------------------------------------------------------------

fn shop(c: (u64, u64), t: (u64, u64)) -> ShopResult {
    ShopResult {
        shop_id: "s".into(),
        human_delta: 0.05,
        agent_control: Counts::new(c.0, c.1).unwrap(),
        agent_treatment: Counts::new(t.0, t.1).unwrap(),
        per_cluster: BTreeMap::new(),
    }
}

/// P(p_t > p_c) under Beta(1+s, 1+n-s) posteriors, Simpson's rule.
fn quadrature(c: (u64, u64), t: (u64, u64)) -> f64 {
    let bc = Beta::new(1.0 + c.0 as f64, 1.0 + (c.1 - c.0) as f64).unwrap();
    let bt = Beta::new(1.0 + t.0 as f64, 1.0 + (t.1 - t.0) as f64).unwrap();
    let n = 20_000;
    let h = 1.0 / n as f64;
    let f = |x: f64| bt.pdf(x) * bc.cdf(x);
    let mut s = f(0.0) + f(1.0);
    for i in 1..n {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn alignment_prob() -> Check {
    let start = Instant::now();
    let mc = 100_000;
    let prob = |c, t, seed| alignment_probability(&shop(c, t), mc, seed).map_err(|e| e.to_string());
    for (s, n) in [(10, 100), (50, 100), (0, 40)] {
        let p = prob((s, n), (s, n), 7)?;
        ensure((p - 0.5).abs() <= 0.01, || format!("symmetric {s}/{n}: {p}"))?;
    }
    let p = prob((10, 100), (20, 100), 7)?;
    let q = quadrature((10, 100), (20, 100));
    ensure((p - q).abs() <= 0.01, || format!("10/100 vs 20/100: {p} vs quadrature {q}"))?;
    let series: Vec<f64> = (0..=40).map(|t| prob((20, 100), (t, 100), 11)).collect::<Result<_, _>>()?;
    let drop = series.windows(2).position(|w| w[1] < w[0]);
    ensure(drop.is_none(), || format!("not monotone at t={}: {:?}", drop.unwrap(), &series[drop.unwrap()..drop.unwrap() + 2]))?;
    within(start.elapsed(), 10.0)?;
    Ok(format!("10/100 vs 20/100: MC {p:.4}, quadrature {q:.4}"))
}

// 5 -------------------------------------------------------------------------

fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

fn pearson_check() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let n = rng.random_range(3..60);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.3 * v + rng.random_range(-1.0..1.0)).collect();
        let got = pearson(&x, &y).map_err(|e| e.to_string())?.ok_or(format!("case {case}: undefined"))?;
        let want = pearson_oracle(&x, &y);
        worst = worst.max((got - want).abs());
        ensure((got - want).abs() <= 1e-12, || format!("case {case}: {got} vs {want}"))?;
        let a = rng.random_range(0.1..10.0);
        let b = rng.random_range(-5.0..5.0);
        let xs: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let scaled = pearson(&xs, &y).map_err(|e| e.to_string())?.unwrap();
        ensure((scaled - got).abs() <= 1e-12, || format!("case {case}: affine map moved r from {got} to {scaled}"))?;
        let flipped = pearson(&x.iter().map(|v| -a * v + b).collect::<Vec<_>>(), &y).map_err(|e| e.to_string())?.unwrap();
        ensure((flipped + got).abs() <= 1e-12, || format!("case {case}: negative scale gave {flipped}, want {}", -got))?;
    }
    Ok(format!("1000 vectors, max |diff| {worst:.1e}"))
}

// 6 -------------------------------------------------------------------------

fn loop_store() -> Storefront {
    let doc = json!({
        "shop": {"name": "Loop Shop", "industry": "toys", "country": "CA"},
        "catalog": [{"product_id": "p1", "title": "Spinner", "price": 900, "category": "spinners", "tags": []}],
        "collections": [{"id": "spinners", "title": "Spinners", "product_ids": ["p1"]}],
        "themes": {
            "control": {"theme_id": "a", "home_collections": ["spinners"], "products_per_page": 12,
                        "nav_links": ["Shop"], "search_enabled": true, "collection_depth": 1},
            "treatment": {"theme_id": "b", "home_collections": ["spinners"], "products_per_page": 12,
                          "nav_links": ["Shop"], "search_enabled": true, "collection_depth": 1}
        }
    });
    load_storefront(&doc.to_string()).unwrap()
}

fn test_profile() -> AgentProfile {
    let persona = PersonaDimensions {
        price_tier: PriceTier::MidRange,
        price_gap: 0.4,
        exploration: 0.5,
        regime: Regime::Moderate,
        premium_focus: 0.0,
        performance_focus: 0.0,
        ethics_focus: 0.0,
        confidence: DimensionConfidence::uniform(0.5),
        reasoning: String::new(),
    };
    let intent = BuyerIntent {
        category: "spinners".into(),
        purchase_focused: true,
        text: "You are looking for spinners. You are ready to purchase.".into(),
    };
    let prefs = ProductPreferences { categories: vec!["spinners".into()], products: vec![], reasoning: String::new() };
    compose_profiles("loop", 0, &[intent], &[persona], &prefs).unwrap().remove(0)
}

/// Always clicks the first link. On the home page that is the store name,
/// which links back home, so every step repeats the same action in place.
struct SelfLink;

impl Backend for SelfLink {
    fn name(&self) -> &str {
        "self-link"
    }

    fn complete(&self, request: &BackendRequest) -> Result<String, BackendError> {
        let Some(ScriptedContext::Decision(ctx)) = &request.context else {
            return Err(BackendError::Unsupported("decisions only".into()));
        };
        let link = ctx
            .observation
            .root
            .walk()
            .into_iter()
            .find(|n| n.role == Role::Link)
            .ok_or(BackendError::Unsupported("no link".into()))?;
        let d = AgentDecision::act("again", Action::Click { target: link.node_ref.clone().unwrap() });
        Ok(serde_json::to_string(&d).unwrap())
    }
}

/// Returns malformed JSON once, then a valid decision to leave.
struct FlakyOnce(std::sync::atomic::AtomicUsize);

impl Backend for FlakyOnce {
    fn name(&self) -> &str {
        "flaky-once"
    }

    fn complete(&self, _: &BackendRequest) -> Result<String, BackendError> {
        let calls = self.0.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        if calls == 0 {
            Ok("{\"reasoning\": ".into())
        } else {
            Ok(serde_json::to_string(&AgentDecision::stop("done", TerminationReason::NoA2CDecision)).unwrap())
        }
    }
}

fn guardrails() -> Check {
    let sf = loop_store();
    let p = test_profile();
    for threshold in 2..=6 {
        let limits = Limits { loop_threshold: threshold, ..Limits::default() };
        let log = run_session(&p, &sf, Variant::Control, &SelfLink, &limits, 1);
        ensure(log.termination == Termination::LoopGuard, || format!("threshold {threshold}: {:?}", log.termination))?;
        ensure(log.steps == threshold && log.entries.len() == threshold, || {
            format!("threshold {threshold}: stopped after {} steps", log.steps)
        })?;
        ensure(log.entries.iter().all(|e| e.url == "/" && e.action == log.entries[0].action), || {
            "entries are not identical repeats on the home page".into()
        })?;
    }
    let one = Limits { max_steps: 1, ..Limits::default() };
    let log = run_session(&p, &sf, Variant::Control, &SelfLink, &one, 1);
    ensure(log.entries.len() == 1 && log.termination == Termination::StepLimit, || {
        format!("max_steps=1: {} entries, {:?}", log.entries.len(), log.termination)
    })?;
    let flaky = FlakyOnce(Default::default());
    let log = run_session(&p, &sf, Variant::Control, &flaky, &Limits::default(), 1);
    ensure(log.entries.len() == 1 && log.entries[0].llm_retries == 1, || {
        format!("retry path: {} entries, retries {:?}", log.entries.len(), log.entries.first().map(|e| e.llm_retries))
    })?;
    ensure(
        log.termination == Termination::AgentTerminated { reason: TerminationReason::NoA2CDecision },
        || format!("retry path ended {:?}", log.termination),
    )?;
    Ok("loop guard at thresholds 2..=6, one-step limit, retry logged".into())
}

// 7 and 9 -------------------------------------------------------------------

fn fixture_dir(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

/// Copies a bundled fixture into a fresh directory so outputs land there.
fn stage_fixture(name: &str, into: &Path) -> PathBuf {
    for entry in fs::read_dir(fixture_dir(name)).unwrap() {
        let path = entry.unwrap().path();
        if path.is_file() {
            fs::copy(&path, into.join(path.file_name().unwrap())).unwrap();
        }
    }
    into.join("run.toml")
}

fn run_fixture(name: &str, dir: &Path) -> Result<Pipeline, String> {
    let cfg = RunConfig::load(&stage_fixture(name, dir)).map_err(|e| e.to_string())?;
    let p = Pipeline::new(cfg).map_err(|e| e.to_string())?;
    p.run_all().map_err(|e| e.to_string())?;
    Ok(p)
}

fn collect_files(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect_files(root, &path, out);
        } else {
            out.insert(path.strip_prefix(root).unwrap().display().to_string(), fs::read(&path).unwrap());
        }
    }
}

fn determinism() -> Check {
    let start = Instant::now();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let pa = run_fixture("five_shops", a.path())?;
    let pb = run_fixture("five_shops", b.path())?;
    let (mut fa, mut fb) = (BTreeMap::new(), BTreeMap::new());
    collect_files(&pa.config.output_dir, &pa.config.output_dir, &mut fa);
    collect_files(&pb.config.output_dir, &pb.config.output_dir, &mut fb);
    ensure(fa.keys().eq(fb.keys()), || "runs wrote different file sets".into())?;
    for (rel, bytes) in &fa {
        ensure(fb[rel] == *bytes, || format!("{rel} differs between runs"))?;
        let text = String::from_utf8_lossy(bytes);
        ensure(!text.contains(&*a.path().to_string_lossy()), || format!("{rel} embeds an absolute path"))?;
    }
    ensure(fa.contains_key("report/summary.md") && fa.contains_key("report/report.json"), || "no report".into())?;
    within(start.elapsed(), 60.0)?;
    Ok(format!("{} artifacts byte-identical across two runs", fa.len()))
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        for k in i..=j {
            r[idx[k]] = (i + j) as f64 / 2.0 + 1.0;
        }
        i = j + 1;
    }
    r
}

fn bootstrap_shape() -> Check {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let p = run_fixture("five_shops", dir.path())?;
    let report: Value = serde_json::from_slice(&fs::read(p.config.output_dir.join("bootstrap/report.json")).unwrap()).unwrap();
    let payload = &report["payload"];
    ensure(payload["iterations"] == 1000, || format!("iterations {}", payload["iterations"]))?;
    let rows = payload["rows"].as_array().unwrap();
    let sizes: Vec<f64> = rows.iter().map(|r| r["size"].as_f64().unwrap()).collect();
    let want: Vec<f64> = (1..=14).map(|i| 50.0 * i as f64).collect();
    ensure(sizes == want, || format!("sizes {sizes:?}"))?;
    let mut means = Vec::new();
    for r in rows {
        let s = &r["sign_alignment"];
        let (p10, med, p90) = (s["p10"].as_f64().unwrap(), s["median"].as_f64().unwrap(), s["p90"].as_f64().unwrap());
        ensure(p10 <= med && med <= p90, || format!("size {}: p10 {p10}, median {med}, p90 {p90}", r["size"]))?;
        means.push(s["mean"].as_f64().unwrap());
    }
    let rho = pearson_oracle(&ranks(&sizes), &ranks(&means));
    ensure(rho >= 0.9, || format!("Spearman {rho:.3} over means {means:?}"))?;
    within(start.elapsed(), 120.0)?;
    Ok(format!("Spearman {rho:.3}; sign agreement {:.3} at 50 to {:.3} at 700", means[0], means[13]))
}

// 8 -------------------------------------------------------------------------

fn sensitivity() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let p = run_fixture("sensitivity", dir.path())?;
    let n = p.config.agents_per_shop as f64;
    let report: Value = serde_json::from_slice(&fs::read(p.config.output_dir.join("evaluate/report.json")).unwrap()).unwrap();
    let shops = report["payload"]["runs"][0]["per_shop"].as_array().unwrap();
    let rates = |id: &str| {
        let s = shops.iter().find(|s| s["shop_id"] == id).unwrap();
        (s["agent_control_rate"].as_f64().unwrap(), s["agent_treatment_rate"].as_f64().unwrap(), s["within_noise"].as_bool().unwrap())
    };
    // pooled two-proportion statistics, equal arm sizes
    let se = |c: f64, t: f64| {
        let pool = (c + t) / 2.0;
        (pool * (1.0 - pool) * 2.0 / n).sqrt()
    };
    let (c, t, _) = rates("shop1");
    let z = (t - c) / se(c, t);
    ensure(t < c && z < -2.326, || format!("depth shift: control {c:.3}, treatment {t:.3}, z {z:.2}"))?;
    let (nc, nt, inside) = rates("shop2");
    let band = 2.576 * se(nc, nt);
    ensure((nt - nc).abs() <= band && inside, || format!("null pair: delta {:.4}, band {band:.4}", nt - nc))?;
    Ok(format!("depth shift delta {:.4} (z {z:.2}); null delta {:+.4} within +/-{band:.4}", t - c, nt - nc))
}

// 10 ------------------------------------------------------------------------

fn log(profile: &str, termination: Termination, steps: usize, a2c: bool, exited: bool, add_error: bool) -> SessionLog {
    let entries = (0..steps)
        .map(|i| simgym::agent::MemoryEntry {
            step: i,
            url: "/".into(),
            reasoning: String::new(),
            action: None,
            outcome: String::new(),
            error: (add_error && i + 1 == steps).then(|| "out_of_stock: Spinner".to_string()),
            llm_retries: 0,
        })
        .collect();
    SessionLog {
        shop_id: "s".into(),
        profile_id: profile.into(),
        cluster_id: 0,
        purchase_focused: true,
        theme_id: "t".into(),
        variant: Variant::Control,
        seed: 0,
        entries,
        final_cart: vec![],
        cart_value: Money(0),
        termination,
        a2c,
        steps,
        exited_store: exited,
    }
}

fn ended(r: TerminationReason) -> Termination {
    Termination::AgentTerminated { reason: r }
}

fn accounting() -> Check {
    // 50 hand-labeled sessions: (termination, steps, copies)
    let table: Vec<(Termination, usize, usize)> = vec![
        (ended(TerminationReason::GoalReached), 4, 6),
        (ended(TerminationReason::GoalReached), 7, 5),
        (ended(TerminationReason::GoalReached), 12, 3),
        (Termination::StepLimit, 30, 4),
        (Termination::TimeLimit, 9, 2),
        (Termination::LoopGuard, 3, 5),
        (ended(TerminationReason::NoSuitableProduct), 10, 7),
        (ended(TerminationReason::NoA2CDecision), 8, 9),
        (ended(TerminationReason::PriceTooHigh), 6, 4),
        (ended(TerminationReason::Leaving), 2, 3),
        (Termination::FatalError { message: "x".into() }, 0, 2),
    ];
    let logs: Vec<SessionLog> = table
        .iter()
        .flat_map(|(t, steps, copies)| (0..*copies).map(move |i| log(&format!("p{i}"), t.clone(), *steps, false, false, false)))
        .collect();
    ensure(logs.len() == 50, || format!("fixture has {} logs", logs.len()))?;
    // Hand recount: 14 goal reached, 4 step-limit timeouts, steps sum 420.
    let stats = journey_stats(&logs).map_err(|e| e.to_string())?;
    ensure(stats.goal_reached_pct == 28.0, || format!("goal {}", stats.goal_reached_pct))?;
    ensure(stats.timeout_pct == 8.0, || format!("timeout {}", stats.timeout_pct))?;
    ensure(stats.mean_steps == 8.4, || format!("mean {}", stats.mean_steps))?;
    // population std: sqrt(sum of squares / 50 - mean^2), sum of squares 6012
    let std = (6012.0f64 / 50.0 - 8.4 * 8.4).sqrt();
    ensure((stats.std_steps - std).abs() <= 1e-12, || format!("std {} vs {std}", stats.std_steps))?;

    // 10 control/treatment pairs with the non-converting side hand-labeled.
    use BehavioralMode as M;
    let win = || log("w", ended(TerminationReason::GoalReached), 5, true, false, false);
    let cases: Vec<(SessionLog, Option<M>)> = vec![
        (log("a", Termination::LoopGuard, 3, false, true, false), Some(M::StuckInLoop)),
        (log("b", ended(TerminationReason::Leaving), 4, false, true, false), Some(M::ThemeExit)),
        (log("c", ended(TerminationReason::PriceTooHigh), 6, false, false, true), Some(M::PriceRejection)),
        (log("d", ended(TerminationReason::NoSuitableProduct), 6, false, false, true), Some(M::FailedToAdd)),
        (log("e", ended(TerminationReason::NoSuitableProduct), 9, false, false, false), Some(M::ProductNotFound)),
        (log("f", ended(TerminationReason::NoA2CDecision), 8, false, false, false), Some(M::NoA2CDecision)),
        (log("g", Termination::StepLimit, 30, false, false, false), Some(M::Other)),
        (log("h", ended(TerminationReason::NoA2CDecision), 8, false, false, false), Some(M::NoA2CDecision)),
        (log("i", ended(TerminationReason::GoalReached), 5, true, false, false), None),
        (log("j", ended(TerminationReason::Leaving), 2, false, true, false), None),
    ];
    let mut control = Vec::new();
    let mut treatment = Vec::new();
    let mut want: BTreeMap<M, usize> = BTreeMap::new();
    for (i, (loser, label)) in cases.into_iter().enumerate() {
        let mut other = match label {
            Some(_) => win(),
            None => loser.clone(),
        };
        other.profile_id = loser.profile_id.clone();
        if let Some(m) = label {
            *want.entry(m).or_default() += 1;
        }
        // alternate which arm converts
        if i % 2 == 0 {
            control.push(other);
            treatment.push(loser);
        } else {
            control.push(loser);
            treatment.push(other);
        }
    }
    let dist = behavioral_distribution(&control, &treatment).map_err(|e| e.to_string())?;
    ensure(dist.differing_agents == 8, || format!("differing {}", dist.differing_agents))?;
    ensure(dist.counts == want, || format!("counts {:?}, want {want:?}", dist.counts))?;
    ensure(dist.share(M::NoA2CDecision) == 0.25, || format!("share {}", dist.share(M::NoA2CDecision)))?;
    Ok("journey fields and 10-pair behavioral labels match the hand recount".into())
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("calibration formula", calibration),
        ("clustering recovery", clustering),
        ("threshold mappings", thresholds),
        ("alignment probability", alignment_prob),
        ("pearson", pearson_check),
        ("agent guardrails", guardrails),
        ("end-to-end determinism", determinism),
        ("directional sensitivity", sensitivity),
        ("bootstrap shape", bootstrap_shape),
        ("session accounting", accounting),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {:>2} PASS {name} ({secs:.2}s): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name} ({secs:.2}s): {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
