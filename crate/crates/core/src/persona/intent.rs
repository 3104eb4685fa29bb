//! Intent calibration and two-sentence intent templating.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PersonaError, ProductPreferences};

pub const FORBIDDEN_TERMS: [&str; 8] = ["bundle", "size", "discount", "button", "banner", "menu", "theme", "layout"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuyerIntent {
    pub category: String,
    pub purchase_focused: bool,
    pub text: String,
}

/// Second-sentence variants, cycled in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentPhrasing {
    pub purchase: Vec<String>,
    pub browse: Vec<String>,
}

impl Default for IntentPhrasing {
    fn default() -> Self {
        let list = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        Self {
            purchase: list(&[
                "You are ready to purchase.",
                "You are planning to buy.",
                "You are intending to make a purchase.",
                "You want to buy today.",
            ]),
            browse: list(&[
                "You are researching options.",
                "You are browsing for ideas.",
                "You are comparing what is available.",
                "You are exploring before deciding.",
            ]),
        }
    }
}

/// Substring match, so plurals and compounds ("sizes", "oversized") count.
pub fn contains_forbidden_term(text: &str) -> bool {
    let t = text.to_lowercase();
    FORBIDDEN_TERMS.iter().any(|w| t.contains(w))
}

/// Rounds half away from zero, treating values within 1e-9 of a half as
/// exact halves so binary representation error cannot flip the result.
fn round_half_away(x: f64) -> f64 {
    let floor = x.floor();
    if (x - floor - 0.5).abs() <= 1e-9 * x.abs().max(1.0) {
        if x >= 0.0 {
            floor + 1.0
        } else {
            floor
        }
    } else {
        x.round()
    }
}

/// Number of purchase-focused agents out of `n`.
pub fn calibrate_intent_mix(a2c_mean: f64, n: usize) -> Result<usize, PersonaError> {
    if n < 2 {
        return Err(PersonaError::TooFewAgents(n));
    }
    if !(0.0..=1.0).contains(&a2c_mean) {
        return Err(PersonaError::InvalidRate(a2c_mean));
    }
    let k = round_half_away(a2c_mean * n as f64) as usize;
    Ok(k.clamp(1, n - 1))
}

pub fn generate_intents(
    prefs: &ProductPreferences,
    purchase_count: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<BuyerIntent>, PersonaError> {
    generate_intents_with(prefs, purchase_count, n, seed, &IntentPhrasing::default())
}

/// `n` intents, `purchase_count` of them purchase-focused at seeded
/// positions; categories assigned round-robin.
pub fn generate_intents_with(
    prefs: &ProductPreferences,
    purchase_count: usize,
    n: usize,
    seed: u64,
    phrasing: &IntentPhrasing,
) -> Result<Vec<BuyerIntent>, PersonaError> {
    if n < 2 {
        return Err(PersonaError::TooFewAgents(n));
    }
    if purchase_count < 1 || purchase_count > n - 1 {
        return Err(PersonaError::InvalidMix { purchase: purchase_count, n });
    }
    let categories: Vec<&String> = prefs.categories.iter().filter(|c| !c.trim().is_empty()).collect();
    if categories.is_empty() {
        return Err(PersonaError::NoCategories);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slots: Vec<bool> = (0..n).map(|i| i < purchase_count).collect();
    slots.shuffle(&mut rng);

    let mut cursor = [0usize; 2];
    let mut out = Vec::with_capacity(n);
    for (i, &purchase) in slots.iter().enumerate() {
        let variants = if purchase { &phrasing.purchase } else { &phrasing.browse };
        let counter = &mut cursor[purchase as usize];
        let mut chosen = None;
        // Try each category starting at the round-robin slot, each with
        // every phrasing, until one passes the filter.
        'search: for c in 0..categories.len() {
            let category = categories[(i + c) % categories.len()];
            for v in 0..variants.len() {
                let second = &variants[(*counter + v) % variants.len()];
                let text = format!("You are looking for {category}. {second}");
                if !contains_forbidden_term(&text) {
                    *counter += v + 1;
                    chosen = Some(BuyerIntent { category: category.clone(), purchase_focused: purchase, text });
                    break 'search;
                }
            }
        }
        out.push(chosen.ok_or(PersonaError::NoCategories)?);
    }
    Ok(out)
}
