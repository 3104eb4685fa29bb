//! Buyer-grain aggregation and within-shop percentile norms.

use serde::{Deserialize, Serialize};

use super::preferences::purchased_in;
use super::{PersonaError, ProductRef};
use crate::ingest::{extract_features, EventType, Money, Session};
use crate::storefront::Storefront;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuyerAggregate {
    pub session_count: usize,
    pub a2c_rate: f64,
    pub checkout_rate: f64,
    pub purchase_rate: f64,
    pub avg_cart_value: Money,
    pub avg_order_value: Money,
    /// Per-session means of the exploration inputs.
    pub mean_duration_s: f64,
    pub mean_search_count: f64,
    pub mean_product_views: f64,
    /// Every product view, with multiplicity.
    pub browsed_products: Vec<ProductRef>,
    /// Every product carted in a purchasing session, with multiplicity.
    pub purchased_products: Vec<ProductRef>,
}

fn mean_nonzero(values: impl Iterator<Item = u64>) -> Money {
    let nz: Vec<u64> = values.filter(|&v| v > 0).collect();
    if nz.is_empty() {
        return Money(0);
    }
    Money((nz.iter().sum::<u64>() as f64 / nz.len() as f64).round() as u64)
}

pub fn aggregate_buyers(sessions: &[&Session], storefront: &Storefront) -> Result<BuyerAggregate, PersonaError> {
    if sessions.is_empty() {
        return Err(PersonaError::EmptyInput);
    }
    let n = sessions.len() as f64;
    let feats: Vec<_> = sessions.iter().map(|s| extract_features(s)).collect();
    let has = |t: EventType| sessions.iter().filter(|s| s.events.iter().any(|e| e.event_type == t)).count() as f64 / n;
    let browsed_products = sessions
        .iter()
        .flat_map(|s| s.events.iter())
        .filter(|e| e.event_type == EventType::ProductView)
        .filter_map(|e| ProductRef::from_event(e, storefront))
        .collect();
    let purchased_products =
        sessions.iter().flat_map(|s| purchased_in(s)).filter_map(|e| ProductRef::from_event(e, storefront)).collect();
    Ok(BuyerAggregate {
        session_count: sessions.len(),
        a2c_rate: has(EventType::AddToCart),
        checkout_rate: has(EventType::BeginCheckout),
        purchase_rate: has(EventType::Purchase),
        avg_cart_value: mean_nonzero(feats.iter().map(|f| f.cart_value.0)),
        avg_order_value: mean_nonzero(feats.iter().map(|f| f.order_value.0)),
        mean_duration_s: feats.iter().map(|f| f.duration_s).sum::<f64>() / n,
        mean_search_count: feats.iter().map(|f| f.search_count as f64).sum::<f64>() / n,
        mean_product_views: feats.iter().map(|f| f.product_views as f64).sum::<f64>() / n,
        browsed_products,
        purchased_products,
    })
}

/// Sorted per-session values of the three exploration inputs across a shop.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ShopNorms {
    pub durations_s: Vec<f64>,
    pub searches: Vec<f64>,
    pub product_views: Vec<f64>,
}

impl ShopNorms {
    pub fn from_sessions(sessions: &[Session]) -> Self {
        let feats: Vec<_> = sessions.iter().map(extract_features).collect();
        let sorted = |f: fn(&crate::ingest::SessionFeatures) -> f64| {
            let mut v: Vec<f64> = feats.iter().map(f).collect();
            v.sort_by(f64::total_cmp);
            v
        };
        Self {
            durations_s: sorted(|f| f.duration_s),
            searches: sorted(|f| f.search_count as f64),
            product_views: sorted(|f| f.product_views as f64),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.durations_s.is_empty() || self.searches.is_empty() || self.product_views.is_empty()
    }

    /// Mid-rank percentile of `x` in a sorted table: the share below plus
    /// half the share tied.
    pub fn percentile_rank(table: &[f64], x: f64) -> f64 {
        if table.is_empty() {
            return 0.0;
        }
        let below = table.partition_point(|v| *v < x);
        let upto = table.partition_point(|v| *v <= x);
        (below as f64 + 0.5 * (upto - below) as f64) / table.len() as f64
    }
}
