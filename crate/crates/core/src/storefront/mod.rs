//! Deterministic in-process storefront: catalog and theme specs, a page graph
//! rendered as accessibility trees, and browser-style action execution.

mod axtree;
mod env;
pub mod html;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Money;

pub use axtree::{AccessibilityNode, Role};
pub use env::{apply, observe, Action, CartLine, EnvState, Observation, Page, ScrollDirection, StepError, StepResult};
pub use html::{parse_html_to_axtree, HtmlError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Product {
    pub product_id: String,
    pub title: String,
    pub price: Money,
    pub category: String,
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default = "default_true")]
    pub in_stock: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Collection {
    pub id: String,
    pub title: String,
    pub product_ids: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CardField {
    Title,
    Price,
    Reviews,
    Badge,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThemeSpec {
    pub theme_id: String,
    pub home_collections: Vec<String>,
    pub products_per_page: usize,
    #[serde(default)]
    pub nav_links: Vec<String>,
    #[serde(default)]
    pub search_enabled: bool,
    #[serde(default = "default_card_fields")]
    pub product_card_fields: Vec<CardField>,
    /// Clicks from the home page to a collection's product list.
    pub collection_depth: usize,
}

fn default_card_fields() -> Vec<CardField> {
    vec![CardField::Title, CardField::Price]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShopMeta {
    pub name: String,
    #[serde(default)]
    pub industry: String,
    #[serde(default)]
    pub country: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Themes {
    pub control: ThemeSpec,
    pub treatment: ThemeSpec,
}

/// On-disk storefront document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorefrontDoc {
    pub shop: ShopMeta,
    pub catalog: Vec<Product>,
    pub collections: Vec<Collection>,
    pub themes: Themes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Control,
    Treatment,
}

impl Variant {
    pub const BOTH: [Variant; 2] = [Variant::Control, Variant::Treatment];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Control => "control",
            Variant::Treatment => "treatment",
        }
    }
}

#[derive(Debug, Error)]
pub enum StorefrontError {
    #[error("storefront document does not match schema: {0}")]
    SchemaError(String),
    #[error("duplicate product id {0}")]
    DuplicateProductId(String),
    #[error("theme {theme} references unknown collection {collection}")]
    UnknownCollectionRef { theme: String, collection: String },
    #[error("collection {collection} references unknown product {product}")]
    UnknownProductRef { collection: String, product: String },
}

/// A validated storefront with lookup indexes. Immutable once loaded and
/// shared read-only across sessions.
#[derive(Debug, Clone, PartialEq)]
pub struct Storefront {
    pub shop: ShopMeta,
    pub catalog: Vec<Product>,
    pub collections: Vec<Collection>,
    pub themes: Themes,
    by_id: BTreeMap<String, usize>,
    collection_by_id: BTreeMap<String, usize>,
    by_category: BTreeMap<String, Vec<usize>>,
}

pub fn load_storefront(doc: &str) -> Result<Storefront, StorefrontError> {
    let doc: StorefrontDoc = serde_json::from_str(doc).map_err(|e| StorefrontError::SchemaError(e.to_string()))?;
    Storefront::from_doc(doc)
}

impl Storefront {
    pub fn from_doc(doc: StorefrontDoc) -> Result<Self, StorefrontError> {
        let mut by_id = BTreeMap::new();
        let mut by_category: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, p) in doc.catalog.iter().enumerate() {
            if by_id.insert(p.product_id.clone(), i).is_some() {
                return Err(StorefrontError::DuplicateProductId(p.product_id.clone()));
            }
            by_category.entry(p.category.to_lowercase()).or_default().push(i);
        }
        let mut collection_by_id = BTreeMap::new();
        for (i, c) in doc.collections.iter().enumerate() {
            if collection_by_id.insert(c.id.clone(), i).is_some() {
                return Err(StorefrontError::SchemaError(format!("duplicate collection id {}", c.id)));
            }
            if let Some(missing) = c.product_ids.iter().find(|p| !by_id.contains_key(*p)) {
                return Err(StorefrontError::UnknownProductRef { collection: c.id.clone(), product: missing.clone() });
            }
        }
        for theme in [&doc.themes.control, &doc.themes.treatment] {
            if theme.products_per_page == 0 {
                return Err(StorefrontError::SchemaError(format!("theme {}: products_per_page must be >= 1", theme.theme_id)));
            }
            if theme.collection_depth == 0 {
                return Err(StorefrontError::SchemaError(format!("theme {}: collection_depth must be >= 1", theme.theme_id)));
            }
            if let Some(missing) = theme.home_collections.iter().find(|c| !collection_by_id.contains_key(*c)) {
                return Err(StorefrontError::UnknownCollectionRef {
                    theme: theme.theme_id.clone(),
                    collection: missing.clone(),
                });
            }
        }
        Ok(Self {
            shop: doc.shop,
            catalog: doc.catalog,
            collections: doc.collections,
            themes: doc.themes,
            by_id,
            collection_by_id,
            by_category,
        })
    }

    pub fn to_doc(&self) -> StorefrontDoc {
        StorefrontDoc {
            shop: self.shop.clone(),
            catalog: self.catalog.clone(),
            collections: self.collections.clone(),
            themes: self.themes.clone(),
        }
    }

    pub fn theme(&self, variant: Variant) -> &ThemeSpec {
        match variant {
            Variant::Control => &self.themes.control,
            Variant::Treatment => &self.themes.treatment,
        }
    }

    pub fn product(&self, id: &str) -> Option<&Product> {
        self.by_id.get(id).map(|&i| &self.catalog[i])
    }

    pub fn collection(&self, id: &str) -> Option<&Collection> {
        self.collection_by_id.get(id).map(|&i| &self.collections[i])
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.by_category.keys().map(String::as_str)
    }

    pub fn products_in_category(&self, category: &str) -> impl Iterator<Item = &Product> {
        self.by_category.get(&category.to_lowercase()).into_iter().flatten().map(|&i| &self.catalog[i])
    }

    /// Median price per lower-cased category.
    pub fn category_medians(&self) -> BTreeMap<String, f64> {
        self.by_category
            .iter()
            .map(|(cat, idx)| {
                let prices: Vec<f64> = idx.iter().map(|&i| self.catalog[i].price.as_f64()).collect();
                (cat.clone(), median(&prices))
            })
            .collect()
    }

    pub fn catalog_median(&self) -> f64 {
        let prices: Vec<f64> = self.catalog.iter().map(|p| p.price.as_f64()).collect();
        median(&prices)
    }

    /// Titles of every catalog product, lower-cased.
    pub fn title_set(&self) -> BTreeSet<String> {
        self.catalog.iter().map(|p| p.title.to_lowercase()).collect()
    }
}

pub(crate) fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

#[cfg(test)]
pub(crate) mod testdoc {
    /// One product, one collection, two themes.
    pub fn minimal() -> serde_json::Value {
        serde_json::json!({
            "shop": {"name": "Tiny Shop", "industry": "toys", "country": "CA"},
            "catalog": [
                {"product_id": "p1", "title": "Wooden Dragon", "price": 1200, "category": "dragons", "tags": ["handcrafted"]}
            ],
            "collections": [{"id": "dragons", "title": "Dragons", "product_ids": ["p1"]}],
            "themes": {
                "control": {"theme_id": "control", "home_collections": ["dragons"], "products_per_page": 4,
                            "nav_links": ["Shop", "About"], "search_enabled": true, "collection_depth": 1},
                "treatment": {"theme_id": "treatment", "home_collections": ["dragons"], "products_per_page": 4,
                              "nav_links": ["Shop", "About"], "search_enabled": false, "collection_depth": 2}
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_minimal_document() {
        let sf = load_storefront(&testdoc::minimal().to_string()).unwrap();
        assert_eq!(sf.catalog.len(), 1);
        assert_eq!(sf.product("p1").unwrap().title, "Wooden Dragon");
        assert_eq!(sf.theme(Variant::Treatment).collection_depth, 2);
        assert_eq!(sf.category_medians()["dragons"], 1200.0);
    }

    #[test]
    fn duplicate_product_rejected() {
        let mut doc = testdoc::minimal();
        let p = doc["catalog"][0].clone();
        doc["catalog"].as_array_mut().unwrap().push(p);
        assert!(matches!(load_storefront(&doc.to_string()), Err(StorefrontError::DuplicateProductId(id)) if id == "p1"));
    }

    #[test]
    fn unknown_collection_rejected() {
        let mut doc = testdoc::minimal();
        doc["themes"]["treatment"]["home_collections"] = serde_json::json!(["ghosts"]);
        assert!(matches!(
            load_storefront(&doc.to_string()),
            Err(StorefrontError::UnknownCollectionRef { collection, .. }) if collection == "ghosts"
        ));
    }

    #[test]
    fn schema_errors() {
        assert!(matches!(load_storefront("{}"), Err(StorefrontError::SchemaError(_))));
        let mut doc = testdoc::minimal();
        doc["themes"]["control"]["products_per_page"] = serde_json::json!(0);
        assert!(matches!(load_storefront(&doc.to_string()), Err(StorefrontError::SchemaError(_))));
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[]), 0.0);
    }
}
