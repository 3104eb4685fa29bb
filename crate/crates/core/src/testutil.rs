//! Shared unit-test fixtures.

use serde_json::json;

use crate::persona::{
    compose_profiles, AgentProfile, BuyerIntent, DimensionConfidence, PersonaDimensions, PriceTier, ProductPreferences,
    Regime,
};
use crate::storefront::{load_storefront, Storefront};

/// Three dragons at $5.00, $9.00 and $33.18 in one collection, depth 1,
/// search on in control and off in treatment.
pub fn dragons() -> Storefront {
    let doc = json!({
        "shop": {"name": "Mini Forge", "industry": "toys", "country": "CA"},
        "catalog": [
            {"product_id": "p1", "title": "Mini Dragon", "price": 500, "category": "dragons", "tags": ["resin"]},
            {"product_id": "p2", "title": "Wing Dragon", "price": 900, "category": "dragons", "tags": ["resin"]},
            {"product_id": "p3", "title": "Premium Crystal Wing Dragon", "price": 3318, "category": "dragons",
             "tags": ["premium", "handcrafted"]}
        ],
        "collections": [{"id": "dragons", "title": "Dragons", "product_ids": ["p1", "p2", "p3"]}],
        "themes": {
            "control": {"theme_id": "control", "home_collections": ["dragons"], "products_per_page": 12,
                        "nav_links": ["Shop", "About"], "search_enabled": true, "collection_depth": 1},
            "treatment": {"theme_id": "treatment", "home_collections": ["dragons"], "products_per_page": 12,
                          "nav_links": ["Shop", "About"], "search_enabled": false, "collection_depth": 1}
        }
    });
    load_storefront(&doc.to_string()).unwrap()
}

pub fn persona(tier: PriceTier, regime: Regime) -> PersonaDimensions {
    PersonaDimensions {
        price_tier: tier,
        price_gap: 0.0,
        exploration: 0.0,
        regime,
        premium_focus: 0.0,
        performance_focus: 0.0,
        ethics_focus: 0.0,
        confidence: DimensionConfidence::uniform(0.5),
        reasoning: String::new(),
    }
}

pub fn profile_with(persona: PersonaDimensions, category: &str, purchase: bool) -> AgentProfile {
    let second = if purchase { "You are ready to purchase." } else { "You are researching options." };
    let intent = BuyerIntent {
        category: category.into(),
        purchase_focused: purchase,
        text: format!("You are looking for {category}. {second}"),
    };
    let prefs = ProductPreferences { categories: vec![category.into()], products: vec![], reasoning: String::new() };
    compose_profiles("shop", 0, &[intent], &[persona], &prefs).unwrap().remove(0)
}

pub fn profile(tier: PriceTier, regime: Regime, category: &str, purchase: bool) -> AgentProfile {
    profile_with(persona(tier, regime), category, purchase)
}
