//! Cluster summaries and product-preference extraction.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{PersonaError, ProductRef};
use crate::ingest::{EventType, Session};
use crate::llm::{complete_json_with, Backend, BackendRequest, RetryPolicy, ScriptedContext};
use crate::storefront::{ShopMeta, Storefront};

pub const MAX_CATEGORIES: usize = 10;
pub const MAX_PRODUCTS: usize = 10;
/// Items per list shown to the analyst.
const SUMMARY_ITEMS: usize = 40;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductCount {
    pub product: ProductRef,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster_id: usize,
    pub session_count: usize,
    pub a2c_rate: f64,
    /// Most viewed first.
    pub browsed: Vec<ProductCount>,
    /// Products carted in sessions that ended in a purchase.
    pub purchased: Vec<ProductCount>,
    pub searches: Vec<(String, usize)>,
}

fn ranked(counts: BTreeMap<String, (ProductRef, usize)>) -> Vec<ProductCount> {
    let mut v: Vec<ProductCount> = counts.into_values().map(|(product, count)| ProductCount { product, count }).collect();
    v.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.product.product_id.cmp(&b.product.product_id)));
    v.truncate(SUMMARY_ITEMS);
    v
}

/// Products a session bought: its add-to-cart items when it contains a
/// purchase event.
pub(crate) fn purchased_in(session: &Session) -> impl Iterator<Item = &crate::ingest::Event> {
    let bought = session.events.iter().any(|e| e.event_type == EventType::Purchase);
    session.events.iter().filter(move |e| bought && e.event_type == EventType::AddToCart)
}

pub fn summarize_cluster(cluster_id: usize, sessions: &[&Session], storefront: &Storefront) -> ClusterSummary {
    let mut browsed: BTreeMap<String, (ProductRef, usize)> = BTreeMap::new();
    let mut purchased: BTreeMap<String, (ProductRef, usize)> = BTreeMap::new();
    let mut searches: BTreeMap<String, usize> = BTreeMap::new();
    let mut a2c = 0;
    for s in sessions {
        if s.events.iter().any(|e| e.event_type == EventType::AddToCart) {
            a2c += 1;
        }
        for e in &s.events {
            if e.event_type == EventType::ProductView {
                if let Some(p) = ProductRef::from_event(e, storefront) {
                    browsed.entry(p.product_id.clone()).or_insert((p, 0)).1 += 1;
                }
            }
            if let (EventType::Search, Some(q)) = (e.event_type, &e.search_query) {
                *searches.entry(q.trim().to_lowercase()).or_default() += 1;
            }
        }
        for e in purchased_in(s) {
            if let Some(p) = ProductRef::from_event(e, storefront) {
                purchased.entry(p.product_id.clone()).or_insert((p, 0)).1 += 1;
            }
        }
    }
    let mut searches: Vec<(String, usize)> = searches.into_iter().filter(|(q, _)| !q.is_empty()).collect();
    searches.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    searches.truncate(SUMMARY_ITEMS);
    ClusterSummary {
        cluster_id,
        session_count: sessions.len(),
        a2c_rate: if sessions.is_empty() { 0.0 } else { a2c as f64 / sessions.len() as f64 },
        browsed: ranked(browsed),
        purchased: ranked(purchased),
        searches,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductPreferences {
    pub categories: Vec<String>,
    pub products: Vec<String>,
    pub reasoning: String,
}

/// Structured input for backends that do not read prompts.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceContext {
    pub shop: ShopMeta,
    pub summary: ClusterSummary,
}

pub fn preferences_schema() -> Value {
    json!({
        "type": "object",
        "required": ["categories", "products", "reasoning"],
        "properties": {
            "categories": {"type": "array", "items": {"type": "string"}, "minItems": 1},
            "products": {"type": "array", "items": {"type": "string"}, "minItems": 1},
            "reasoning": {"type": "string"},
        },
    })
}

const SYSTEM: &str = "You are an e-commerce analyst. From aggregated shopping behaviour, name the broad \
product categories these shoppers care about and the specific items they engaged with.";

fn render_prompt(shop: &ShopMeta, s: &ClusterSummary) -> String {
    let mut out = format!(
        "Store: {} ({}, {})\nSessions in this group: {}\nAdd-to-cart rate: {:.2}\n\nMost viewed products:\n",
        shop.name, shop.industry, shop.country, s.session_count, s.a2c_rate
    );
    for pc in &s.browsed {
        out.push_str(&format!("- {} | {} | {} | viewed {}x\n", pc.product.title, pc.product.price, pc.product.category, pc.count));
    }
    out.push_str("\nPurchased products:\n");
    if s.purchased.is_empty() {
        out.push_str("- none\n");
    }
    for pc in &s.purchased {
        out.push_str(&format!("- {} | {} | {} | bought {}x\n", pc.product.title, pc.product.price, pc.product.category, pc.count));
    }
    if !s.searches.is_empty() {
        let q: Vec<&str> = s.searches.iter().map(|(q, _)| q.as_str()).collect();
        out.push_str(&format!("\nSearches: {}\n", q.join(", ")));
    }
    out.push_str(&format!(
        "\nReturn JSON with up to {MAX_CATEGORIES} broad category names (generic, like \"sneakers\" or \
         \"athletic wear\", never product names), up to {MAX_PRODUCTS} product titles, and your reasoning."
    ));
    out
}

/// Lower-cases, strips sentence punctuation, drops catalog titles and
/// duplicates, and applies the list limits.
fn normalize(raw: ProductPreferences, titles: &BTreeSet<String>) -> ProductPreferences {
    let mut seen = BTreeSet::new();
    let categories = raw
        .categories
        .iter()
        .map(|c| c.replace(['.', '!', '?', '"'], " ").split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase())
        .filter(|c| !c.is_empty() && !titles.contains(c))
        .filter(|c| seen.insert(c.clone()))
        .take(MAX_CATEGORIES)
        .collect();
    let mut seen = BTreeSet::new();
    let products = raw
        .products
        .into_iter()
        .map(|p| p.trim().to_string())
        .filter(|p| !p.is_empty() && seen.insert(p.clone()))
        .take(MAX_PRODUCTS)
        .collect();
    ProductPreferences { categories, products, reasoning: raw.reasoning }
}

pub fn extract_preferences(
    shop: &ShopMeta,
    summary: &ClusterSummary,
    storefront: &Storefront,
    backend: &dyn Backend,
    policy: &RetryPolicy,
    seed: u64,
) -> Result<ProductPreferences, PersonaError> {
    if summary.browsed.is_empty() && summary.purchased.is_empty() {
        return Err(PersonaError::EmptyClusterSummary);
    }
    let titles = storefront.title_set();
    let mut request = BackendRequest::new(SYSTEM, render_prompt(shop, summary), preferences_schema());
    request.seed = Some(seed);
    request.context = Some(ScriptedContext::Preferences(Box::new(PreferenceContext {
        shop: shop.clone(),
        summary: summary.clone(),
    })));
    let parse = |v: &Value| -> Result<ProductPreferences, String> {
        let raw: ProductPreferences = serde_json::from_value(v.clone()).map_err(|e| e.to_string())?;
        let p = normalize(raw, &titles);
        if p.categories.is_empty() {
            return Err("categories must be generic, not product names".into());
        }
        if p.products.is_empty() {
            return Err("products must not be empty".into());
        }
        Ok(p)
    };
    let out = complete_json_with(backend, &request, policy, |v| parse(v).map(|_| ()))
        .map_err(PersonaError::BackendSchemaFailure)?;
    Ok(parse(&out.value).expect("checked above"))
}
