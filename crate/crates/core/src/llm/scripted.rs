//! Deterministic stand-in for the language model.
//!
//! The policy is stateless: everything it knows about the session comes
//! from the observation and from memory, whose reasoning strings follow a
//! fixed vocabulary (`Opening "<title>"`, `Entering "<name>"`,
//! `Rejecting "<title>" (<why>)`) that the policy later reads back.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, BackendError, BackendRequest, ScriptedContext};
use crate::agent::{AgentDecision, MemoryEntry, TerminationReason};
use crate::ingest::Money;
use crate::persona::{
    AgentProfile, Lexicons, PersonaReviewContext, PreferenceContext, PriceReference, PriceTier, Regime, ValueAxis,
};
use crate::storefront::{AccessibilityNode, Action, Observation, Role};
use crate::text::shares_token;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScriptedPolicyConfig {
    /// Fraction above the tier ceiling still accepted.
    pub price_tolerance: f64,
    /// Maximum product views per exploration regime.
    pub exploration_budget: BTreeMap<Regime, usize>,
    /// Minimum fraction of a product's tags matching the dominant values axis.
    pub values_match_min: f64,
    /// Chance of leaving from a home or directory page, per step.
    pub leave_probability: BTreeMap<Regime, f64>,
    pub lexicons: Lexicons,
}

impl Default for ScriptedPolicyConfig {
    fn default() -> Self {
        Self {
            price_tolerance: 0.10,
            exploration_budget: BTreeMap::from([(Regime::Shallow, 3), (Regime::Moderate, 6), (Regime::Deep, 12)]),
            values_match_min: 0.2,
            leave_probability: BTreeMap::from([(Regime::Shallow, 0.40), (Regime::Moderate, 0.25), (Regime::Deep, 0.10)]),
            lexicons: Lexicons::default(),
        }
    }
}

impl ScriptedPolicyConfig {
    pub fn validate(&self) -> Result<(), String> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.price_tolerance) || !unit(self.values_match_min) {
            return Err("price_tolerance and values_match_min must lie in [0, 1]".into());
        }
        for r in Regime::ALL {
            if self.budget(r) == 0 {
                return Err(format!("exploration budget for {r:?} must be >= 1"));
            }
            if !unit(self.leave(r)) {
                return Err(format!("leave probability for {r:?} must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    fn budget(&self, r: Regime) -> usize {
        self.exploration_budget.get(&r).copied().unwrap_or(1)
    }

    fn leave(&self, r: Regime) -> f64 {
        self.leave_probability.get(&r).copied().unwrap_or(0.0)
    }
}

/// Pure backend answering decision, preference and persona-review requests
/// from their structured context.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    pub config: ScriptedPolicyConfig,
}

impl ScriptedBackend {
    pub fn new(config: ScriptedPolicyConfig) -> Self {
        Self { config }
    }
}

impl Backend for ScriptedBackend {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(&self, request: &BackendRequest) -> Result<String, BackendError> {
        let value = match &request.context {
            Some(ScriptedContext::Decision(ctx)) => {
                let d = scripted_decide(
                    &ctx.profile,
                    &ctx.observation,
                    &ctx.memory,
                    &ctx.prices,
                    &self.config,
                    request.seed.unwrap_or(0),
                );
                serde_json::to_value(d).expect("decisions serialize")
            }
            Some(ScriptedContext::Preferences(ctx)) => heuristic_preferences(ctx),
            Some(ScriptedContext::PersonaReview(ctx)) => heuristic_review(ctx),
            None => return Err(BackendError::Unsupported("scripted backend needs a structured context".into())),
        };
        Ok(value.to_string())
    }
}

fn heuristic_preferences(ctx: &PreferenceContext) -> Value {
    let mut cat_weight: BTreeMap<String, usize> = BTreeMap::new();
    let mut title_weight: BTreeMap<String, usize> = BTreeMap::new();
    let weighted = ctx.summary.browsed.iter().map(|p| (p, 1)).chain(ctx.summary.purchased.iter().map(|p| (p, 2)));
    for (pc, w) in weighted {
        if !pc.product.category.is_empty() {
            *cat_weight.entry(pc.product.category.to_lowercase()).or_default() += w * pc.count;
        }
        *title_weight.entry(pc.product.title.clone()).or_default() += w * pc.count;
    }
    let ranked = |m: BTreeMap<String, usize>| {
        let mut v: Vec<(String, usize)> = m.into_iter().collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        v.into_iter().map(|(k, _)| k).collect::<Vec<_>>()
    };
    let mut categories = ranked(cat_weight);
    if categories.is_empty() {
        categories = ctx.summary.searches.iter().map(|(q, _)| q.to_lowercase()).collect();
    }
    if categories.is_empty() {
        categories.push("general merchandise".into());
    }
    let products = ranked(title_weight);
    let reasoning = format!(
        "Across {} sessions the most engaged categories were {}.",
        ctx.summary.session_count,
        categories.iter().take(3).cloned().collect::<Vec<_>>().join(", ")
    );
    json!({"categories": categories, "products": products, "reasoning": reasoning})
}

fn heuristic_review(ctx: &PersonaReviewContext) -> Value {
    let c = |n: usize| 1.0 - 1.0 / (1.0 + n as f64);
    let values = c(ctx.browsed_count + ctx.purchased_count);
    let d = &ctx.dimensions;
    json!({
        "reasoning": format!(
            "{:?} price tier from a gap of {:.2}; {:?} exploration at {:.2}; values premium {:.2}, performance {:.2}, ethics {:.2}.",
            d.price_tier, d.price_gap, d.regime, d.exploration, d.premium_focus, d.performance_focus, d.ethics_focus
        ),
        "confidence": {
            "price_tier": c(ctx.priced_count),
            "exploration": c(ctx.session_count),
            "premium": values,
            "performance": values,
            "ethics": values,
        }
    })
}

// ---- page reading ----

fn main_region(root: &AccessibilityNode) -> &AccessibilityNode {
    root.children.iter().find(|c| c.role == Role::Region && c.name == "Main").unwrap_or(root)
}

fn header_region(root: &AccessibilityNode) -> Option<&AccessibilityNode> {
    root.children.iter().find(|c| c.role == Role::Region && c.name == "Header")
}

fn links(node: &AccessibilityNode) -> Vec<&AccessibilityNode> {
    node.walk().into_iter().filter(|n| n.role == Role::Link && n.node_ref.is_some()).collect()
}

fn find_named(node: &AccessibilityNode, role: Role, pred: impl Fn(&str) -> bool) -> Option<&AccessibilityNode> {
    node.walk().into_iter().find(|n| n.role == role && n.node_ref.is_some() && pred(&n.name))
}

fn cart_count(root: &AccessibilityNode) -> usize {
    root.walk()
        .into_iter()
        .filter(|n| n.role == Role::Link)
        .find_map(|n| n.name.strip_prefix("Cart (")?.strip_suffix(')')?.parse().ok())
        .unwrap_or(0)
}

fn parse_money(s: &str) -> Option<Money> {
    let s = s.trim().strip_prefix('$')?;
    let (whole, frac) = s.split_once('.').unwrap_or((s, "0"));
    let whole: u64 = whole.replace(',', "").parse().ok()?;
    let frac: u64 = format!("{frac:0<2}").get(..2)?.parse().ok()?;
    Some(Money(whole * 100 + frac))
}

struct ProductPage {
    title: String,
    price: Option<Money>,
    category: String,
    tags: Vec<String>,
    add_ref: Option<String>,
}

fn read_product_page(main: &AccessibilityNode) -> Option<ProductPage> {
    let title = main.children.iter().find(|n| n.role == Role::Heading)?.name.clone();
    let texts: Vec<&str> = main.children.iter().filter(|n| n.role == Role::Text).map(|n| n.name.as_str()).collect();
    let field = |prefix: &str| texts.iter().find_map(|t| t.strip_prefix(prefix)).map(str::trim);
    Some(ProductPage {
        title,
        price: field("Price:").and_then(parse_money),
        category: field("Category:").unwrap_or("").to_string(),
        tags: field("Tags:")
            .map(|t| t.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
            .unwrap_or_default(),
        add_ref: find_named(main, Role::Button, |n| n == "Add to cart").and_then(|n| n.node_ref.clone()),
    })
}

/// (title, ref) of product cards in listing order.
fn product_cards(main: &AccessibilityNode) -> Vec<(String, String)> {
    main.walk()
        .into_iter()
        .filter(|n| n.role == Role::Listitem)
        .filter_map(|li| {
            let link = li.children.first().filter(|c| c.role == Role::Link)?;
            Some((link.name.clone(), link.node_ref.clone()?))
        })
        .collect()
}

// ---- memory reading ----

fn quoted_after<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    let rest = s.strip_prefix(prefix)?.strip_prefix('"')?;
    rest.split_once('"').map(|(q, _)| q)
}

#[derive(Default)]
struct Recall {
    opened: Vec<String>,
    entered: BTreeSet<String>,
    rejected: BTreeMap<String, Rejection>,
    searched: bool,
    failed_adds: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Rejection {
    Price,
    Values,
    Stock,
}

impl Rejection {
    fn as_str(self) -> &'static str {
        match self {
            Rejection::Price => "price",
            Rejection::Values => "values",
            Rejection::Stock => "stock",
        }
    }
}

fn recall(memory: &[MemoryEntry]) -> Recall {
    let mut r = Recall::default();
    for e in memory {
        let text = e.reasoning.as_str();
        if let Some(t) = quoted_after(text, "Opening ") {
            r.opened.push(t.to_string());
        } else if let Some(t) = quoted_after(text, "Entering ") {
            r.entered.insert(t.to_string());
        } else if let Some(t) = quoted_after(text, "Adding ") {
            if e.error.is_some() {
                r.failed_adds.insert(t.to_string());
            }
        } else if let Some(t) = quoted_after(text, "Rejecting ") {
            let why = if text.ends_with("(price)") {
                Rejection::Price
            } else if text.ends_with("(values)") {
                Rejection::Values
            } else {
                Rejection::Stock
            };
            r.rejected.insert(t.to_string(), why);
        }
        if matches!(e.action, Some(Action::TypeText { .. })) {
            r.searched = true;
        }
    }
    r
}

// ---- evaluation ----

fn dominant_axis(profile: &AgentProfile) -> Option<ValueAxis> {
    let p = &profile.persona;
    let scores = [
        (ValueAxis::Premium, p.premium_focus),
        (ValueAxis::Performance, p.performance_focus),
        (ValueAxis::Ethics, p.ethics_focus),
    ];
    let (axis, best) = scores.into_iter().fold((ValueAxis::Premium, f64::MIN), |acc, s| if s.1 > acc.1 { s } else { acc });
    (best >= 0.5).then_some(axis)
}

fn judge(page: &ProductPage, profile: &AgentProfile, prices: &PriceReference, cfg: &ScriptedPolicyConfig) -> Option<Rejection> {
    let text = format!("{} {}", page.title, page.tags.join(" "));
    let price = page.price.map(Money::as_f64).unwrap_or(0.0);
    let median = prices.median_for(&page.category);
    let ok_price = match profile.persona.price_tier {
        PriceTier::Budget => price <= median * (1.0 + cfg.price_tolerance),
        PriceTier::MidRange => price <= 2.0 * median * (1.0 + cfg.price_tolerance),
        PriceTier::Premium => cfg.lexicons.matches(ValueAxis::Premium, &text),
    };
    if !ok_price {
        return Some(Rejection::Price);
    }
    if let Some(axis) = dominant_axis(profile) {
        let tags: Vec<&str> = if page.tags.is_empty() { vec![page.title.as_str()] } else { page.tags.iter().map(String::as_str).collect() };
        let hits = tags.iter().filter(|t| cfg.lexicons.matches(axis, t)).count();
        if (hits as f64) / (tags.len() as f64) < cfg.values_match_min {
            return Some(Rejection::Values);
        }
    }
    None
}

fn give_up(profile: &AgentProfile, r: &Recall, why: &str) -> AgentDecision {
    let reason = if !profile.intent.purchase_focused {
        if r.opened.is_empty() {
            TerminationReason::NoSuitableProduct
        } else {
            TerminationReason::NoA2CDecision
        }
    } else if !r.rejected.is_empty() && r.rejected.values().all(|x| *x == Rejection::Price) {
        TerminationReason::PriceTooHigh
    } else {
        TerminationReason::NoSuitableProduct
    };
    AgentDecision::stop(why, reason)
}

fn click(reasoning: String, node_ref: &str) -> AgentDecision {
    AgentDecision::act(reasoning, Action::Click { target: node_ref.to_string() })
}

/// Where a shopper who gives up on the theme goes.
pub const EXIT_URL: &str = "https://www.example.com/";

/// One decision of the scripted shopper. Pure in its arguments.
pub fn scripted_decide(
    profile: &AgentProfile,
    observation: &Observation,
    memory: &[MemoryEntry],
    prices: &PriceReference,
    config: &ScriptedPolicyConfig,
    seed: u64,
) -> AgentDecision {
    let root = &observation.root;
    let main = main_region(root);
    let url = observation.url.as_str();
    let r = recall(memory);
    let regime = profile.persona.regime;
    let budget = config.budget(regime);
    let category = profile.intent.category.as_str();
    let purchase = profile.intent.purchase_focused;

    if purchase && cart_count(root) > 0 {
        return AgentDecision::stop("The item is in my cart, so my goal is reached.", TerminationReason::GoalReached);
    }
    if !url.starts_with('/') {
        return AgentDecision::stop("I have left the store.", TerminationReason::Leaving);
    }

    if url.starts_with("/products/") {
        if let Some(page) = read_product_page(main) {
            let verdict = if !purchase {
                None
            } else if r.failed_adds.contains(&page.title) {
                Some(Rejection::Stock)
            } else {
                judge(&page, profile, prices, config)
            };
            if purchase && verdict.is_none() {
                if let Some(add) = &page.add_ref {
                    return click(format!("Adding \"{}\" to cart: it fits my budget and preferences.", page.title), add);
                }
            }
            if r.opened.len() >= budget {
                let mut r = r;
                if let Some(v) = verdict {
                    r.rejected.insert(page.title.clone(), v);
                }
                return give_up(profile, &r, "I have looked at enough products without finding what I want.");
            }
            let reasoning = match verdict {
                Some(v) => format!("Rejecting \"{}\" ({})", page.title, v.as_str()),
                None => format!("Viewed \"{}\"; going back to compare more.", page.title),
            };
            return AgentDecision::act(reasoning, Action::Back);
        }
    }

    if r.opened.len() >= budget {
        return give_up(profile, &r, "I have looked at enough products without finding what I want.");
    }

    let is_browse_page = url == "/" || url.starts_with("/browse/");
    if is_browse_page {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if rng.random::<f64>() < config.leave(regime) {
            return AgentDecision::act(
                "Nothing here catches my eye, so I am leaving the store.",
                Action::Navigate { url: EXIT_URL.into() },
            );
        }
    }

    let is_listing = url.starts_with("/collections/") || url.starts_with("/search");
    if is_listing {
        let seen: BTreeSet<&str> = r.opened.iter().map(String::as_str).collect();
        if let Some((title, node_ref)) = product_cards(main).into_iter().find(|(t, _)| !seen.contains(t.as_str())) {
            return click(format!("Opening \"{title}\" to check the details."), &node_ref);
        }
        if let Some(next) = find_named(main, Role::Link, |n| n == "Next") {
            return click("Checking the next page of results.".into(), next.node_ref.as_deref().unwrap_or_default());
        }
    } else if let Some(link) = links(main).into_iter().find(|l| shares_token(&l.name, category) && !r.entered.contains(&l.name)) {
        return click(format!("Entering \"{}\" because it matches {category}.", link.name), link.node_ref.as_deref().unwrap_or_default());
    } else if let Some(link) = links(main).into_iter().find(|l| l.name.to_lowercase().contains("collections")) {
        return click(format!("Following \"{}\" to find {category}.", link.name), link.node_ref.as_deref().unwrap_or_default());
    } else if !url.starts_with("/browse/") {
        let shop = header_region(root).and_then(|h| {
            find_named(h, Role::Link, |n| ["shop", "shop all", "catalog", "collections", "products"].contains(&n.to_lowercase().as_str()))
        });
        if let Some(link) = shop {
            if !memory.iter().any(|e| e.url == url && e.action == Some(Action::Click { target: link.node_ref.clone().unwrap_or_default() })) {
                return click(format!("Opening the \"{}\" menu to look for {category}.", link.name), link.node_ref.as_deref().unwrap_or_default());
            }
        }
    }

    if !r.searched {
        if let Some(bx) = header_region(root).and_then(|h| find_named(h, Role::Textbox, |_| true)) {
            return AgentDecision::act(
                format!("Searching for \"{category}\"."),
                Action::TypeText { target: bx.node_ref.clone().unwrap_or_default(), text: category.to_string() },
            );
        }
    }
    give_up(profile, &r, &format!("I could not find any suitable {category} in this store."))
}
