//! Persona construction: product preferences and calibrated intents on one
//! track, buyer aggregation and five-dimension persona scoring on the other,
//! composed 1:1 into agent profiles.

mod aggregate;
mod intent;
mod preferences;
mod profile;
mod scoring;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Event, Money};
use crate::llm::LlmError;
use crate::storefront::Storefront;

pub use aggregate::{aggregate_buyers, BuyerAggregate, ShopNorms};
pub use intent::{
    calibrate_intent_mix, contains_forbidden_term, generate_intents, generate_intents_with, BuyerIntent, IntentPhrasing, FORBIDDEN_TERMS,
};
pub use preferences::{
    extract_preferences, preferences_schema, summarize_cluster, ClusterSummary, PreferenceContext, ProductCount,
    ProductPreferences,
    MAX_CATEGORIES, MAX_PRODUCTS,
};
pub use profile::{allocate_agents, compose_profiles, render_persona_block, AgentProfile};
pub use scoring::{
    build_persona, exploration_regime, persona_review_schema, price_tier, score_exploration, score_price_sensitivity,
    score_values, DimensionConfidence, PersonaDimensions, PersonaReviewContext, PriceTier, Regime, ValueScores,
};

#[derive(Debug, Error)]
pub enum PersonaError {
    #[error("cluster summary has no browsed or purchased products")]
    EmptyClusterSummary,
    #[error("preference extraction failed: {0}")]
    BackendSchemaFailure(#[source] LlmError),
    #[error("need at least 2 agents to calibrate an intent mix, got {0}")]
    TooFewAgents(usize),
    #[error("rate {0} is outside [0, 1]")]
    InvalidRate(f64),
    #[error("purchase count {purchase} must lie in [1, {}]", .n.saturating_sub(1))]
    InvalidMix { purchase: usize, n: usize },
    #[error("no usable categories for intent generation")]
    NoCategories,
    #[error("no sessions to aggregate")]
    EmptyInput,
    #[error("no browsed product carries a price")]
    NoPricedProducts,
    #[error("shop percentile norms are missing")]
    MissingNorms,
    #[error("{intents} intents cannot pair with {personas} personas")]
    LengthMismatch { intents: usize, personas: usize },
}

/// A catalog item as seen in clickstream aggregates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductRef {
    pub product_id: String,
    pub title: String,
    pub price: Money,
    pub category: String,
    #[serde(default)]
    pub tags: Vec<String>,
}

impl ProductRef {
    /// Resolves an event's product against the catalog. Event fields win
    /// over catalog fields for title and price.
    pub fn from_event(ev: &Event, storefront: &Storefront) -> Option<Self> {
        let id = ev.product_id.as_ref()?;
        let known = storefront.product(id);
        Some(Self {
            product_id: id.clone(),
            title: ev.product_title.clone().or_else(|| known.map(|p| p.title.clone())).unwrap_or_else(|| id.clone()),
            price: ev.product_price.or_else(|| known.map(|p| p.price)).unwrap_or_default(),
            category: known.map(|p| p.category.to_lowercase()).unwrap_or_default(),
            tags: known.map(|p| p.tags.clone()).unwrap_or_default(),
        })
    }

    /// Title and tags, the text searched by the values lexicons.
    pub fn keyword_text(&self) -> String {
        format!("{} {}", self.title, self.tags.join(" "))
    }
}

/// Keyword lists for the three values axes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicons {
    pub premium: Vec<String>,
    pub performance: Vec<String>,
    pub ethics: Vec<String>,
}

impl Default for Lexicons {
    fn default() -> Self {
        let list = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        Self {
            premium: list(&["premium", "luxury", "handcrafted", "artisan", "limited edition", "exclusive", "crystal", "deluxe"]),
            performance: list(&["durable", "professional grade", "commercial grade", "heavy duty", "certified", "reliable", "high performance", "waterproof"]),
            ethics: list(&["organic", "sustainable", "recycled", "fair trade", "ethically sourced", "eco friendly", "vegan", "biodegradable"]),
        }
    }
}

impl Lexicons {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn axis(&self, axis: ValueAxis) -> &[String] {
        match axis {
            ValueAxis::Premium => &self.premium,
            ValueAxis::Performance => &self.performance,
            ValueAxis::Ethics => &self.ethics,
        }
    }

    pub fn matches(&self, axis: ValueAxis, text: &str) -> bool {
        self.axis(axis).iter().any(|k| crate::text::contains_phrase(text, k))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueAxis {
    Premium,
    Performance,
    Ethics,
}

impl ValueAxis {
    pub const ALL: [ValueAxis; 3] = [ValueAxis::Premium, ValueAxis::Performance, ValueAxis::Ethics];
}

/// Per-category reference prices used for category-aware normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceReference {
    pub category_medians: BTreeMap<String, f64>,
    pub catalog_median: f64,
}

impl PriceReference {
    pub fn from_storefront(storefront: &Storefront) -> Self {
        Self { category_medians: storefront.category_medians(), catalog_median: storefront.catalog_median() }
    }

    /// Category median, falling back to the catalog median for unknown or
    /// zero-priced categories.
    pub fn median_for(&self, category: &str) -> f64 {
        let m = self.category_medians.get(&category.to_lowercase()).copied().unwrap_or(0.0);
        if m > 0.0 {
            m
        } else if self.catalog_median > 0.0 {
            self.catalog_median
        } else {
            1.0
        }
    }
}
