//! Agent profile composition and per-cluster agent allocation.

use serde::{Deserialize, Serialize};

use super::{BuyerIntent, PersonaDimensions, PersonaError, PriceTier, ProductPreferences, Regime};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub profile_id: String,
    pub shop_id: String,
    pub cluster_id: usize,
    pub intent: BuyerIntent,
    pub persona: PersonaDimensions,
    pub preferences: ProductPreferences,
    /// Full profile text: intent followed by the persona block.
    pub prompt: String,
}

fn tier_line(t: PriceTier) -> &'static str {
    match t {
        PriceTier::Budget => "Budget (price-conscious and value-focused)",
        PriceTier::MidRange => "Mid-range (balances price against quality)",
        PriceTier::Premium => "Premium (quality-first, comfortable paying more)",
    }
}

fn regime_line(r: Regime) -> &'static str {
    match r {
        Regime::Shallow => "Shallow (direct and focused)",
        Regime::Moderate => "Moderate (compares a handful of options)",
        Regime::Deep => "Deep (thorough, reads and compares widely)",
    }
}

fn tier_block(t: PriceTier) -> &'static str {
    match t {
        PriceTier::Budget => "Budget Tier Preferences: responsive to discount signals, social proof, and urgency cues.",
        PriceTier::MidRange => "Mid-range Tier Preferences: looks for clear value comparisons, ratings, and fair pricing.",
        PriceTier::Premium => "Premium Tier Preferences: drawn to luxury materials, refined craftsmanship, and exclusive details.",
    }
}

const VALUES_THRESHOLD: f64 = 0.5;

/// Values axes at or above the threshold, strongest first.
fn strong_values(p: &PersonaDimensions) -> Vec<(&'static str, &'static str)> {
    let mut axes = vec![
        (p.premium_focus, "Premium & Craftsmanship", "Premium Value Preferences: attention to prestige, artisanal quality, and premium finishes."),
        (p.performance_focus, "Performance & Reliability", "Performance Value Preferences: attention to detailed specifications, customer reviews, and transparency about materials."),
        (p.ethics_focus, "Ethics & Sustainability", "Ethics Value Preferences: attention to sustainability credentials, ethical sourcing, and certifications."),
    ];
    axes.retain(|a| a.0 >= VALUES_THRESHOLD);
    axes.sort_by(|a, b| b.0.total_cmp(&a.0));
    axes.into_iter().map(|(_, name, block)| (name, block)).collect()
}

/// Shopping profile, values, experience preferences and product hints.
pub fn render_persona_block(p: &PersonaDimensions, prefs: &ProductPreferences) -> String {
    let values = strong_values(p);
    let mut out = format!(
        "Shopping Profile:\n- Price Tier: {}\n- Exploration Depth: {}\n\nValues: {}\n\nShopping Experience Preferences:\n- {}\n",
        tier_line(p.price_tier),
        regime_line(p.regime),
        if values.is_empty() { "No strong values orientation".to_string() } else { values.iter().map(|v| v.0).collect::<Vec<_>>().join(", ") },
        tier_block(p.price_tier),
    );
    for (_, block) in &values {
        out.push_str(&format!("- {block}\n"));
    }
    out.push_str(&format!("\nProduct Preferences:\n- Categories: {}\n", prefs.categories.join(", ")));
    if !prefs.products.is_empty() {
        out.push_str(&format!("- Products of interest: {}\n", prefs.products.join(", ")));
    }
    out
}

/// Pairs intent i with persona i.
pub fn compose_profiles(
    shop_id: &str,
    cluster_id: usize,
    intents: &[BuyerIntent],
    personas: &[PersonaDimensions],
    prefs: &ProductPreferences,
) -> Result<Vec<AgentProfile>, PersonaError> {
    if intents.len() != personas.len() {
        return Err(PersonaError::LengthMismatch { intents: intents.len(), personas: personas.len() });
    }
    Ok(intents
        .iter()
        .zip(personas)
        .enumerate()
        .map(|(i, (intent, persona))| AgentProfile {
            profile_id: format!("{shop_id}/c{cluster_id}/a{i}"),
            shop_id: shop_id.to_string(),
            cluster_id,
            intent: intent.clone(),
            persona: persona.clone(),
            preferences: prefs.clone(),
            prompt: format!("Intent: {}\n\n{}", intent.text, render_persona_block(persona, prefs)),
        })
        .collect())
}

/// Largest-remainder apportionment of `total` agents over clusters by
/// session count, then at least one agent per non-empty cluster, taken
/// from the largest allocation.
pub fn allocate_agents(cluster_sizes: &[usize], total: usize) -> Result<Vec<usize>, PersonaError> {
    let nonempty = cluster_sizes.iter().filter(|&&s| s > 0).count();
    if nonempty == 0 {
        return Err(PersonaError::EmptyInput);
    }
    if total < nonempty {
        return Err(PersonaError::TooFewAgents(total));
    }
    let sum: u128 = cluster_sizes.iter().map(|&s| s as u128).sum();
    let t = total as u128;
    let mut alloc: Vec<usize> = cluster_sizes.iter().map(|&s| (t * s as u128 / sum) as usize).collect();
    let mut order: Vec<usize> = (0..cluster_sizes.len()).collect();
    // Larger remainder first; ties to the lower index.
    order.sort_by_key(|&i| (std::cmp::Reverse(t * cluster_sizes[i] as u128 % sum), i));
    let left = total - alloc.iter().sum::<usize>();
    for &i in order.iter().take(left) {
        alloc[i] += 1;
    }
    for i in 0..alloc.len() {
        if cluster_sizes[i] > 0 && alloc[i] == 0 {
            let donor = (0..alloc.len()).max_by_key(|&j| (alloc[j], std::cmp::Reverse(j))).expect("non-empty");
            alloc[donor] -= 1;
            alloc[i] = 1;
        }
    }
    Ok(alloc)
}
