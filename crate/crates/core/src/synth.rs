//! Seeded synthetic shops: a storefront document with a control and a
//! treatment theme, plus a clickstream drawn from a few buyer archetypes.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ingest::{Event, EventType, Money};
use crate::storefront::{Collection, Product, ShopMeta, StorefrontDoc, ThemeSpec, Themes};

/// How the treatment theme differs from control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreatmentKind {
    /// Same layout under a different theme id.
    Identical,
    /// Products sit one click deeper behind an extra browse page.
    Deeper,
    /// Search box removed.
    NoSearch,
    /// Half as many products per listing page.
    FewerPerPage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthShop {
    pub shop_id: String,
    pub seed: u64,
    pub buyers: usize,
    pub categories: usize,
    pub products_per_category: usize,
    pub treatment: TreatmentKind,
    /// Share of buyers who tend to add to cart.
    pub buyer_share: f64,
}

impl SynthShop {
    pub fn new(shop_id: &str, seed: u64, treatment: TreatmentKind) -> Self {
        Self {
            shop_id: shop_id.into(),
            seed,
            buyers: 240,
            categories: 4,
            products_per_category: 10,
            treatment,
            buyer_share: 0.45,
        }
    }
}

/// Shops `shop1..shopN`, one per treatment, with seeds following `seed`.
pub fn numbered_shops(seed: u64, treatments: &[TreatmentKind], buyers: usize, buyer_share: f64) -> Vec<SynthShop> {
    treatments
        .iter()
        .enumerate()
        .map(|(i, &kind)| SynthShop {
            buyers,
            buyer_share,
            ..SynthShop::new(&format!("shop{}", i + 1), seed.wrapping_add(i as u64 + 1), kind)
        })
        .collect()
}

pub struct SynthOutput {
    pub storefront: StorefrontDoc,
    pub events: Vec<Event>,
}

/// (category, item noun, base price in cents)
const CATEGORIES: [(&str, &str, u64); 10] = [
    ("sneakers", "Runner", 8900),
    ("hoodies", "Hoodie", 5400),
    ("backpacks", "Pack", 7200),
    ("water bottles", "Bottle", 2600),
    ("yoga mats", "Mat", 4200),
    ("headphones", "Headset", 12900),
    ("candles", "Candle", 2200),
    ("mugs", "Mug", 1800),
    ("notebooks", "Journal", 1500),
    ("sunglasses", "Shades", 9600),
];

const ADJECTIVES: [&str; 12] = [
    "Classic", "Trail", "Urban", "Summit", "Coastal", "Nordic", "Everyday", "Studio", "Harbor", "Canyon", "Meadow", "Metro",
];

const PREMIUM_TAGS: [&str; 3] = ["handcrafted", "luxury", "artisan"];
const PERFORMANCE_TAGS: [&str; 3] = ["durable", "waterproof", "heavy duty"];
const ETHICS_TAGS: [&str; 3] = ["organic", "recycled", "fair trade"];
const PLAIN_TAGS: [&str; 3] = ["new", "bestseller", "gift"];

fn title_case(s: &str) -> String {
    s.split(' ')
        .map(|w| {
            let mut c = w.chars();
            c.next().map(|f| f.to_uppercase().chain(c).collect::<String>()).unwrap_or_default()
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn slug(s: &str) -> String {
    s.replace(' ', "-")
}

fn catalog(spec: &SynthShop, rng: &mut ChaCha8Rng) -> (Vec<Product>, Vec<Collection>) {
    let mut picks: Vec<usize> = (0..CATEGORIES.len()).collect();
    picks.shuffle(rng);
    let mut products = Vec::new();
    let mut collections = Vec::new();
    for &ci in picks.iter().take(spec.categories.clamp(1, CATEGORIES.len())) {
        let (category, noun, base) = CATEGORIES[ci];
        let mut ids = Vec::new();
        let mut adjectives = ADJECTIVES.to_vec();
        adjectives.shuffle(rng);
        for j in 0..spec.products_per_category {
            let premium = rng.random_bool(0.2);
            let factor = if premium { rng.random_range(2.0..3.5) } else { rng.random_range(0.5..1.4) };
            let price = ((base as f64 * factor / 100.0).round() * 100.0 - 1.0).max(99.0) as u64;
            let mut tags = Vec::new();
            if premium {
                tags.push(PREMIUM_TAGS.choose(rng).unwrap().to_string());
            }
            if rng.random_bool(0.25) {
                tags.push(PERFORMANCE_TAGS.choose(rng).unwrap().to_string());
            }
            if rng.random_bool(0.2) {
                tags.push(ETHICS_TAGS.choose(rng).unwrap().to_string());
            }
            if tags.is_empty() {
                tags.push(PLAIN_TAGS.choose(rng).unwrap().to_string());
            }
            let adjective = adjectives[j % adjectives.len()];
            let round = j / adjectives.len();
            let title = if round == 0 { format!("{adjective} {noun}") } else { format!("{adjective} {noun} {}", round + 1) };
            let id = format!("{}-{}", slug(category), j + 1);
            ids.push(id.clone());
            products.push(Product {
                product_id: id,
                title,
                price: Money(price),
                category: category.to_string(),
                tags,
                in_stock: rng.random_bool(0.95),
            });
        }
        collections.push(Collection { id: slug(category), title: title_case(category), product_ids: ids });
    }
    (products, collections)
}

fn themes(spec: &SynthShop, collections: &[Collection]) -> Themes {
    let control = ThemeSpec {
        theme_id: "control".into(),
        home_collections: collections.iter().map(|c| c.id.clone()).collect(),
        products_per_page: 8,
        nav_links: vec!["Shop".into(), "About".into()],
        search_enabled: true,
        product_card_fields: vec![crate::storefront::CardField::Title, crate::storefront::CardField::Price],
        collection_depth: 1,
    };
    let mut treatment = ThemeSpec { theme_id: "treatment".into(), ..control.clone() };
    match spec.treatment {
        TreatmentKind::Identical => {}
        TreatmentKind::Deeper => treatment.collection_depth = 2,
        TreatmentKind::NoSearch => treatment.search_enabled = false,
        TreatmentKind::FewerPerPage => treatment.products_per_page = 4,
    }
    Themes { control, treatment }
}

#[derive(Clone, Copy)]
enum Archetype {
    Browser,
    Buyer,
    Searcher,
}

/// Emits the events of one session.
struct SessionWriter<'a> {
    spec: &'a SynthShop,
    session_id: String,
    buyer_id: String,
    ts: i64,
    cart: u64,
    events: Vec<Event>,
}

impl SessionWriter<'_> {
    fn push(&mut self, rng: &mut ChaCha8Rng, event_type: EventType, product: Option<&Product>) -> &mut Event {
        self.ts += rng.random_range(4_000..60_000);
        self.events.push(Event {
            session_id: self.session_id.clone(),
            buyer_id: self.buyer_id.clone(),
            shop_id: self.spec.shop_id.clone(),
            timestamp: self.ts,
            event_type,
            product_id: product.map(|p| p.product_id.clone()),
            product_title: product.map(|p| p.title.clone()),
            product_price: product.map(|p| p.price),
            search_query: None,
            cart_value: None,
            order_value: None,
        });
        self.events.last_mut().expect("just pushed")
    }
}

/// Generates the storefront and clickstream of one synthetic shop.
pub fn generate_shop(spec: &SynthShop) -> SynthOutput {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (products, collections) = catalog(spec, &mut rng);
    let themes = themes(spec, &collections);
    let storefront = StorefrontDoc {
        shop: ShopMeta { name: format!("{} Outfitters", title_case(&spec.shop_id.replace(['-', '_'], " "))), industry: "retail".into(), country: "US".into() },
        catalog: products.clone(),
        collections: collections.clone(),
        themes,
    };

    let mut events = Vec::new();
    let mut clock: i64 = 1_700_000_000_000;
    for b in 0..spec.buyers {
        let archetype = {
            let r: f64 = rng.random();
            if r < spec.buyer_share {
                Archetype::Buyer
            } else if r < spec.buyer_share + 0.2 {
                Archetype::Searcher
            } else {
                Archetype::Browser
            }
        };
        let favourite = &collections[rng.random_range(0..collections.len())];
        let fav_products: Vec<&Product> =
            products.iter().filter(|p| favourite.product_ids.contains(&p.product_id)).collect();
        // Price attitude: 0 bargain hunter, 1 indifferent, 2 premium seeker.
        let attitude = rng.random_range(0..3);
        let sessions = rng.random_range(1..=3);
        for s in 0..sessions {
            clock += rng.random_range(600_000..7_200_000);
            let mut w = SessionWriter {
                spec,
                session_id: format!("{}-b{b}-s{s}", spec.shop_id),
                buyer_id: format!("{}-b{b}", spec.shop_id),
                ts: clock,
                cart: 0,
                events: Vec::new(),
            };
            w.push(&mut rng, EventType::PageView, None);
            let views = match archetype {
                Archetype::Browser => rng.random_range(2..=8),
                Archetype::Buyer => rng.random_range(1..=4),
                Archetype::Searcher => rng.random_range(1..=3),
            };
            if matches!(archetype, Archetype::Searcher) || rng.random_bool(0.1) {
                let q = favourite.title.to_lowercase();
                w.push(&mut rng, EventType::Search, None).search_query = Some(q);
            }
            let mut viewed: Vec<&Product> = Vec::new();
            for _ in 0..views {
                let p = if rng.random_bool(0.8) {
                    *fav_products.choose(&mut rng).expect("collections are non-empty")
                } else {
                    products.choose(&mut rng).expect("catalog is non-empty")
                };
                w.push(&mut rng, EventType::ProductView, Some(p));
                viewed.push(p);
            }
            let adds = match archetype {
                Archetype::Buyer => rng.random_bool(0.8),
                Archetype::Searcher => rng.random_bool(0.35),
                Archetype::Browser => rng.random_bool(0.03),
            };
            if adds {
                let mut pool = viewed.clone();
                pool.sort_by_key(|p| p.price);
                let pick = match attitude {
                    0 => pool[0],
                    2 => pool[pool.len() - 1],
                    _ => pool[pool.len() / 2],
                };
                w.cart += pick.price.0;
                let cart = w.cart;
                w.push(&mut rng, EventType::AddToCart, Some(pick)).cart_value = Some(Money(cart));
                if rng.random_bool(0.6) {
                    w.push(&mut rng, EventType::BeginCheckout, None).cart_value = Some(Money(cart));
                    if rng.random_bool(0.7) {
                        w.push(&mut rng, EventType::Purchase, None).order_value = Some(Money(cart));
                    }
                }
            }
            clock = w.ts;
            events.extend(w.events);
        }
    }
    SynthOutput { storefront, events }
}

pub fn events_to_jsonl(events: &[Event]) -> String {
    events.iter().map(|e| serde_json::to_string(e).expect("events serialize") + "\n").collect()
}
