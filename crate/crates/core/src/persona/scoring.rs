//! The five persona dimensions.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BuyerAggregate, Lexicons, PersonaError, PriceReference, ProductRef, ShopNorms, ValueAxis};
use crate::llm::{complete_json, Backend, BackendRequest, RetryPolicy, ScriptedContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PriceTier {
    Budget,
    MidRange,
    Premium,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Regime {
    Shallow,
    Moderate,
    Deep,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Shallow, Regime::Moderate, Regime::Deep];
}

/// Budget above 0.50, mid-range on (0.30, 0.50], premium at or below 0.30.
pub fn price_tier(gap: f64) -> PriceTier {
    if gap > 0.50 {
        PriceTier::Budget
    } else if gap > 0.30 {
        PriceTier::MidRange
    } else {
        PriceTier::Premium
    }
}

/// Shallow on [0, 0.35), moderate on [0.35, 0.65), deep from 0.65.
pub fn exploration_regime(score: f64) -> Regime {
    if score < 0.35 {
        Regime::Shallow
    } else if score < 0.65 {
        Regime::Moderate
    } else {
        Regime::Deep
    }
}

fn normalized(p: &ProductRef, prices: &PriceReference) -> f64 {
    p.price.as_f64() / prices.median_for(&p.category)
}

/// Gap between the highest browsed price and the mean purchased price
/// (mean browsed price without purchases), each divided by its category
/// median first.
pub fn score_price_sensitivity(agg: &BuyerAggregate, prices: &PriceReference) -> Result<(PriceTier, f64), PersonaError> {
    let browsed: Vec<f64> =
        agg.browsed_products.iter().filter(|p| p.price.0 > 0).map(|p| normalized(p, prices)).collect();
    if browsed.is_empty() {
        return Err(PersonaError::NoPricedProducts);
    }
    let max = browsed.iter().copied().fold(f64::MIN, f64::max);
    let purchased: Vec<f64> =
        agg.purchased_products.iter().filter(|p| p.price.0 > 0).map(|p| normalized(p, prices)).collect();
    let reference = if purchased.is_empty() { &browsed } else { &purchased };
    let mean = reference.iter().sum::<f64>() / reference.len() as f64;
    let gap = ((max - mean) / max).clamp(0.0, 1.0);
    Ok((price_tier(gap), gap))
}

/// Mean of the within-shop percentile ranks of duration, searches and
/// product views.
pub fn score_exploration(agg: &BuyerAggregate, norms: &ShopNorms) -> Result<(f64, Regime), PersonaError> {
    if norms.is_empty() {
        return Err(PersonaError::MissingNorms);
    }
    let score = (ShopNorms::percentile_rank(&norms.durations_s, agg.mean_duration_s)
        + ShopNorms::percentile_rank(&norms.searches, agg.mean_search_count)
        + ShopNorms::percentile_rank(&norms.product_views, agg.mean_product_views))
        / 3.0;
    Ok((score, exploration_regime(score)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueScores {
    pub premium: f64,
    pub performance: f64,
    pub ethics: f64,
}

fn share(products: &[ProductRef], lexicons: &Lexicons, axis: ValueAxis) -> f64 {
    if products.is_empty() {
        return 0.0;
    }
    products.iter().filter(|p| lexicons.matches(axis, &p.keyword_text())).count() as f64 / products.len() as f64
}

/// 0.3 of the browsed keyword share plus 0.7 of the purchased share; the
/// browsed share alone when nothing was bought.
pub fn score_values(agg: &BuyerAggregate, lexicons: &Lexicons) -> ValueScores {
    let score = |axis| {
        let b = share(&agg.browsed_products, lexicons, axis);
        if agg.purchased_products.is_empty() {
            b
        } else {
            0.3 * b + 0.7 * share(&agg.purchased_products, lexicons, axis)
        }
    };
    ValueScores {
        premium: score(ValueAxis::Premium),
        performance: score(ValueAxis::Performance),
        ethics: score(ValueAxis::Ethics),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionConfidence {
    pub price_tier: f64,
    pub exploration: f64,
    pub premium: f64,
    pub performance: f64,
    pub ethics: f64,
}

impl DimensionConfidence {
    pub fn uniform(c: f64) -> Self {
        Self { price_tier: c, exploration: c, premium: c, performance: c, ethics: c }
    }

    fn in_unit(&self) -> bool {
        [self.price_tier, self.exploration, self.premium, self.performance, self.ethics]
            .iter()
            .all(|c| (0.0..=1.0).contains(c))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaDimensions {
    pub price_tier: PriceTier,
    pub price_gap: f64,
    pub exploration: f64,
    pub regime: Regime,
    pub premium_focus: f64,
    pub performance_focus: f64,
    pub ethics_focus: f64,
    pub confidence: DimensionConfidence,
    pub reasoning: String,
}

impl PersonaDimensions {
    pub fn values(&self) -> ValueScores {
        ValueScores { premium: self.premium_focus, performance: self.performance_focus, ethics: self.ethics_focus }
    }
}

/// Structured input for persona review by a backend.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonaReviewContext {
    pub dimensions: PersonaDimensions,
    pub session_count: usize,
    pub browsed_count: usize,
    pub purchased_count: usize,
    pub priced_count: usize,
}

pub fn persona_review_schema() -> Value {
    let unit = json!({"type": "number", "minimum": 0, "maximum": 1});
    json!({
        "type": "object",
        "required": ["reasoning", "confidence"],
        "properties": {
            "reasoning": {"type": "string"},
            "confidence": {
                "type": "object",
                "required": ["price_tier", "exploration", "premium", "performance", "ethics"],
                "properties": {
                    "price_tier": unit, "exploration": unit, "premium": unit, "performance": unit, "ethics": unit,
                },
            },
        },
    })
}

const REVIEW_SYSTEM: &str = "You are an e-commerce analyst reviewing a buyer persona computed from clickstream \
aggregates. Explain the persona and rate your confidence in each dimension from 0 to 1. Do not change the scores.";

fn default_reasoning(d: &PersonaDimensions, n: usize) -> String {
    format!(
        "{n} sessions: {:?} tier (gap {:.2}), {:?} exploration ({:.2}), premium {:.2}, performance {:.2}, ethics {:.2}.",
        d.price_tier, d.price_gap, d.regime, d.exploration, d.premium_focus, d.performance_focus, d.ethics_focus
    )
}

/// Deterministic scores from the three scoring operations. A backend, when
/// given and reachable, may only replace the reasoning and confidences.
pub fn build_persona(
    agg: &BuyerAggregate,
    prices: &PriceReference,
    norms: &ShopNorms,
    lexicons: &Lexicons,
    backend: Option<&dyn Backend>,
    seed: u64,
) -> Result<PersonaDimensions, PersonaError> {
    let (price_tier, price_gap) = score_price_sensitivity(agg, prices)?;
    let (exploration, regime) = score_exploration(agg, norms)?;
    let v = score_values(agg, lexicons);
    let mut dims = PersonaDimensions {
        price_tier,
        price_gap,
        exploration,
        regime,
        premium_focus: v.premium,
        performance_focus: v.performance,
        ethics_focus: v.ethics,
        confidence: DimensionConfidence::uniform(1.0 - 1.0 / (1.0 + agg.session_count as f64)),
        reasoning: String::new(),
    };
    dims.reasoning = default_reasoning(&dims, agg.session_count);
    let Some(backend) = backend else {
        return Ok(dims);
    };
    let ctx = PersonaReviewContext {
        dimensions: dims.clone(),
        session_count: agg.session_count,
        browsed_count: agg.browsed_products.len(),
        purchased_count: agg.purchased_products.len(),
        priced_count: agg.browsed_products.iter().filter(|p| p.price.0 > 0).count(),
    };
    let mut request = BackendRequest::new(
        REVIEW_SYSTEM,
        format!("Persona scores:\n{}", serde_json::to_string_pretty(&dims).expect("dimensions serialize")),
        persona_review_schema(),
    );
    request.seed = Some(seed);
    request.context = Some(ScriptedContext::PersonaReview(Box::new(ctx)));
    if let Ok(out) = complete_json(backend, &request, &RetryPolicy::default()) {
        let confidence: Option<DimensionConfidence> = serde_json::from_value(out.value["confidence"].clone()).ok();
        if let Some(c) = confidence.filter(DimensionConfidence::in_unit) {
            dims.confidence = c;
        }
        if let Some(r) = out.value["reasoning"].as_str().filter(|r| !r.trim().is_empty()) {
            dims.reasoning = r.to_string();
        }
    }
    Ok(dims)
}
