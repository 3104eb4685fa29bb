use serde::{Deserialize, Serialize};

use super::{AccessibilityNode, CardField, Product, Role, Storefront, ThemeSpec};
use crate::ingest::Money;
use crate::seed::hash_str;

/// Browser-style action targeting refs from the latest observation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    Click {
        #[serde(rename = "ref")]
        target: String,
    },
    TypeText {
        #[serde(rename = "ref")]
        target: String,
        text: String,
    },
    Scroll {
        direction: ScrollDirection,
    },
    Navigate {
        url: String,
    },
    Back,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScrollDirection {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Page {
    Home,
    /// Intermediate browse levels between home and the collection list.
    Directory { level: usize },
    Collection { id: String, page: usize },
    Product { id: String },
    Search { query: String, page: usize },
    Cart,
    Checkout,
    Info { label: String },
    External { url: String },
}

fn slug(s: &str) -> String {
    s.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .collect::<Vec<_>>()
        .join("-")
}

const SHOP_LABELS: [&str; 5] = ["shop", "shop all", "catalog", "collections", "products"];

impl Page {
    pub fn url(&self) -> String {
        match self {
            Page::Home => "/".into(),
            Page::Directory { level } => format!("/browse/{level}"),
            Page::Collection { id, page } if *page > 1 => format!("/collections/{id}?page={page}"),
            Page::Collection { id, .. } => format!("/collections/{id}"),
            Page::Product { id } => format!("/products/{id}"),
            Page::Search { query, page } => {
                let q = query.split_whitespace().collect::<Vec<_>>().join("+");
                if *page > 1 {
                    format!("/search?q={q}&page={page}")
                } else {
                    format!("/search?q={q}")
                }
            }
            Page::Cart => "/cart".into(),
            Page::Checkout => "/checkout".into(),
            Page::Info { label } => format!("/pages/{}", slug(label)),
            Page::External { url } => url.clone(),
        }
    }

    pub fn is_external(&self) -> bool {
        matches!(self, Page::External { .. })
    }

    /// Resolves a URL typed by the agent. Absolute URLs leave the store.
    pub fn from_url(url: &str, storefront: &Storefront, theme: &ThemeSpec) -> Option<Page> {
        let url = url.trim();
        if url.starts_with("http://") || url.starts_with("https://") || url.starts_with("//") {
            return Some(Page::External { url: url.to_string() });
        }
        let (path, query) = url.split_once('?').unwrap_or((url, ""));
        let param = |key: &str| {
            query.split('&').find_map(|kv| kv.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
        };
        let page_no = param("page").and_then(|p| p.parse::<usize>().ok()).unwrap_or(1).max(1);
        let parts: Vec<&str> = path.trim_matches('/').split('/').filter(|s| !s.is_empty()).collect();
        match parts.as_slice() {
            [] => Some(Page::Home),
            ["browse", level] => {
                let level: usize = level.parse().ok()?;
                (1..=directory_levels(theme)).contains(&level).then_some(Page::Directory { level })
            }
            ["collections", id] => storefront.collection(id).map(|_| Page::Collection { id: id.to_string(), page: page_no }),
            ["products", id] => storefront.product(id).map(|_| Page::Product { id: id.to_string() }),
            ["search"] => Some(Page::Search { query: param("q")?.replace('+', " "), page: page_no }),
            ["cart"] => Some(Page::Cart),
            ["checkout"] => Some(Page::Checkout),
            ["pages", s] => theme.nav_links.iter().find(|l| slug(l) == *s).map(|l| Page::Info { label: l.clone() }),
            _ => None,
        }
    }
}

fn directory_levels(theme: &ThemeSpec) -> usize {
    theme.collection_depth.saturating_sub(1).max(1)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CartLine {
    pub product_id: String,
    pub price: Money,
}

/// Private per-session browser state over a shared storefront.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState<'a> {
    pub storefront: &'a Storefront,
    pub theme: &'a ThemeSpec,
    pub page: Page,
    back_stack: Vec<Page>,
    /// Every URL shown, append-only.
    pub visited: Vec<String>,
    pub cart: Vec<CartLine>,
    last_added: Option<String>,
    pub rng_seed: u64,
}

impl<'a> EnvState<'a> {
    pub fn new(storefront: &'a Storefront, theme: &'a ThemeSpec, rng_seed: u64) -> Self {
        Self {
            storefront,
            theme,
            page: Page::Home,
            back_stack: Vec::new(),
            visited: vec![Page::Home.url()],
            cart: Vec::new(),
            last_added: None,
            rng_seed,
        }
    }

    pub fn cart_value(&self) -> Money {
        Money(self.cart.iter().map(|l| l.price.0).sum())
    }

    pub fn left_store(&self) -> bool {
        self.visited.iter().any(|u| !u.starts_with('/'))
    }

    fn go(&mut self, page: Page) {
        let prev = std::mem::replace(&mut self.page, page);
        self.back_stack.push(prev);
        self.visited.push(self.page.url());
        self.last_added = None;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub url: String,
    pub root: AccessibilityNode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepError {
    pub code: String,
    pub message: String,
}

impl StepError {
    fn new(code: &str, message: impl Into<String>) -> Self {
        Self { code: code.into(), message: message.into() }
    }
}

/// Post-action observation plus the failure, if any. The observation is
/// always present so the agent sees the state it failed in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepResult {
    pub observation: Observation,
    pub error: Option<StepError>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Target {
    Go(Page),
    AddToCart(String),
    SearchBox,
}

struct Builder {
    targets: Vec<Target>,
}

impl Builder {
    fn interactive(&mut self, role: Role, name: impl Into<String>, target: Target) -> AccessibilityNode {
        self.targets.push(target);
        let mut node = AccessibilityNode::new(role, name);
        node.node_ref = Some(format!("e{}", self.targets.len()));
        node
    }

    fn link(&mut self, name: impl Into<String>, page: Page) -> AccessibilityNode {
        self.interactive(Role::Link, name, Target::Go(page))
    }
}

fn text(s: impl Into<String>) -> AccessibilityNode {
    AccessibilityNode::new(Role::Text, s)
}

fn heading(s: impl Into<String>) -> AccessibilityNode {
    AccessibilityNode::new(Role::Heading, s)
}

fn region(name: &str, children: Vec<AccessibilityNode>) -> AccessibilityNode {
    AccessibilityNode::new(Role::Region, name).with_children(children)
}

fn rating(product: &Product) -> (f64, u64) {
    let h = hash_str(&product.product_id);
    (3.5 + (h % 16) as f64 / 10.0, 3 + (h >> 8) % 120)
}

fn product_card(b: &mut Builder, theme: &ThemeSpec, p: &Product) -> AccessibilityNode {
    let mut children = vec![b.link(&p.title, Page::Product { id: p.product_id.clone() })];
    for field in &theme.product_card_fields {
        match field {
            CardField::Title => {}
            CardField::Price => children.push(text(p.price.to_string())),
            CardField::Reviews => {
                let (stars, count) = rating(p);
                children.push(text(format!("{stars:.1} stars ({count} reviews)")));
            }
            CardField::Badge => {
                if !p.in_stock {
                    children.push(text("Sold out"));
                }
            }
        }
    }
    AccessibilityNode::new(Role::Listitem, "").with_children(children)
}

fn product_grid(
    b: &mut Builder,
    theme: &ThemeSpec,
    products: &[&Product],
    page: usize,
    make_page: impl Fn(usize) -> Page,
) -> Vec<AccessibilityNode> {
    let per = theme.products_per_page;
    let pages = products.len().div_ceil(per).max(1);
    let page = page.clamp(1, pages);
    let start = (page - 1) * per;
    let cards: Vec<AccessibilityNode> =
        products.iter().skip(start).take(per).map(|p| product_card(b, theme, p)).collect();
    let mut out = vec![region("Products", cards)];
    if page > 1 {
        out.push(b.link("Previous", make_page(page - 1)));
    }
    if page < pages {
        out.push(b.link("Next", make_page(page + 1)));
    }
    out
}

fn collection_links(b: &mut Builder, sf: &Storefront, theme: &ThemeSpec) -> Vec<AccessibilityNode> {
    theme
        .home_collections
        .iter()
        .filter_map(|id| sf.collection(id))
        .map(|c| {
            let link = b.link(&c.title, Page::Collection { id: c.id.clone(), page: 1 });
            AccessibilityNode::new(Role::Listitem, "").with_children(vec![link])
        })
        .collect()
}

fn tokens(s: &str) -> Vec<String> {
    s.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Catalog products whose title, category or tags contain every query token.
pub(crate) fn search_catalog<'s>(sf: &'s Storefront, query: &str) -> Vec<&'s Product> {
    let q = tokens(query);
    if q.is_empty() {
        return Vec::new();
    }
    sf.catalog
        .iter()
        .filter(|p| {
            let hay = format!("{} {} {}", p.title, p.category, p.tags.join(" ")).to_lowercase();
            q.iter().all(|t| hay.contains(t.as_str()) || (t.len() > 3 && hay.contains(t.trim_end_matches('s'))))
        })
        .collect()
}

fn render(state: &EnvState<'_>) -> (AccessibilityNode, Vec<Target>) {
    let sf = state.storefront;
    let theme = state.theme;
    let mut b = Builder { targets: Vec::new() };

    let mut header = vec![b.link(&sf.shop.name, Page::Home)];
    for label in &theme.nav_links {
        let dest = if SHOP_LABELS.contains(&label.to_lowercase().as_str()) {
            Page::Directory { level: 1 }
        } else {
            Page::Info { label: label.clone() }
        };
        header.push(b.link(label, dest));
    }
    if theme.search_enabled {
        header.push(b.interactive(Role::Textbox, "Search", Target::SearchBox));
    }
    header.push(b.link(format!("Cart ({})", state.cart.len()), Page::Cart));

    let (title, main) = match &state.page {
        Page::Home => {
            let mut main = vec![heading(&sf.shop.name)];
            if theme.collection_depth <= 1 {
                main.push(region("Featured collections", collection_links(&mut b, sf, theme)));
            } else {
                main.push(b.link("Browse collections", Page::Directory { level: 1 }));
            }
            ("Home".to_string(), main)
        }
        Page::Directory { level } => {
            let main = if *level < directory_levels(theme) {
                vec![
                    heading("Collections"),
                    text("Explore our range"),
                    b.link("See all collections", Page::Directory { level: level + 1 }),
                ]
            } else {
                vec![heading("All collections"), region("Collection list", collection_links(&mut b, sf, theme))]
            };
            ("Collections".to_string(), main)
        }
        Page::Collection { id, page } => {
            let c = sf.collection(id).expect("collection pages are only built for known ids");
            let products: Vec<&Product> = c.product_ids.iter().filter_map(|p| sf.product(p)).collect();
            let mut main = vec![heading(&c.title)];
            let cid = id.clone();
            main.extend(product_grid(&mut b, theme, &products, *page, |p| Page::Collection { id: cid.clone(), page: p }));
            (c.title.clone(), main)
        }
        Page::Product { id } => {
            let p = sf.product(id).expect("product pages are only built for known ids");
            let mut main = vec![
                heading(&p.title),
                text(format!("Price: {}", p.price)),
                text(format!("Category: {}", p.category)),
            ];
            if !p.tags.is_empty() {
                main.push(text(format!("Tags: {}", p.tags.join(", "))));
            }
            main.push(text(if p.in_stock { "In stock" } else { "Out of stock" }));
            main.push(b.interactive(Role::Button, "Add to cart", Target::AddToCart(p.product_id.clone())));
            if state.last_added.as_deref() == Some(id.as_str()) {
                let view = b.link("View cart", Page::Cart);
                main.push(region("Cart notification", vec![text(format!("Added to cart: {}", p.title)), view]));
            }
            (p.title.clone(), main)
        }
        Page::Search { query, page } => {
            let results = search_catalog(sf, query);
            let mut main = vec![heading(format!("Search results for \"{query}\""))];
            if results.is_empty() {
                main.push(text("No results"));
            } else {
                let q = query.clone();
                main.extend(product_grid(&mut b, theme, &results, *page, |p| Page::Search { query: q.clone(), page: p }));
            }
            ("Search".to_string(), main)
        }
        Page::Cart => {
            let mut main = vec![heading("Your cart")];
            if state.cart.is_empty() {
                main.push(text("Your cart is empty"));
            } else {
                for line in &state.cart {
                    let title = sf.product(&line.product_id).map_or(line.product_id.as_str(), |p| p.title.as_str());
                    main.push(text(format!("{title} - {}", line.price)));
                }
                main.push(text(format!("Subtotal: {}", state.cart_value())));
                main.push(b.link("Checkout", Page::Checkout));
            }
            ("Cart".to_string(), main)
        }
        Page::Checkout => (
            "Checkout".to_string(),
            vec![heading("Checkout"), text("Payment is not available in this environment")],
        ),
        Page::Info { label } => {
            (label.clone(), vec![heading(label), text(format!("About {}", sf.shop.name))])
        }
        Page::External { url } => ("External site".to_string(), vec![heading("External site"), text(url)]),
    };

    let root = AccessibilityNode::new(Role::Region, format!("{} - {}", sf.shop.name, title))
        .with_children(vec![region("Header", header), region("Main", main)]);
    (root, b.targets)
}

/// Accessibility-tree observation of the current page. Refs are numbered
/// in render order, so they are stable for an unchanged state.
pub fn observe(state: &EnvState<'_>) -> Observation {
    Observation { url: state.page.url(), root: render(state).0 }
}

fn resolve(state: &EnvState<'_>, r: &str) -> Option<Target> {
    let idx: usize = r.strip_prefix('e')?.parse().ok()?;
    let (_, targets) = render(state);
    targets.into_iter().nth(idx.checked_sub(1)?)
}

pub fn apply(state: &mut EnvState<'_>, action: &Action) -> StepResult {
    let error = execute(state, action).err();
    StepResult { observation: observe(state), error }
}

fn execute(state: &mut EnvState<'_>, action: &Action) -> Result<(), StepError> {
    let no_ref = |r: &str| StepError::new("no_such_ref", format!("no interactive element with ref {r}"));
    match action {
        Action::Click { target } => match resolve(state, target).ok_or_else(|| no_ref(target))? {
            Target::Go(page) => {
                state.go(page);
                Ok(())
            }
            Target::AddToCart(id) => {
                let product = state.storefront.product(&id).expect("rendered product exists");
                if !product.in_stock {
                    return Err(StepError::new("out_of_stock", format!("{} is out of stock", product.title)));
                }
                state.cart.push(CartLine { product_id: id.clone(), price: product.price });
                state.last_added = Some(id);
                Ok(())
            }
            Target::SearchBox => Ok(()),
        },
        Action::TypeText { target, text } => match resolve(state, target).ok_or_else(|| no_ref(target))? {
            Target::SearchBox => {
                let query = text.trim();
                if query.is_empty() {
                    return Err(StepError::new("empty_query", "search text is empty"));
                }
                state.go(Page::Search { query: query.to_string(), page: 1 });
                Ok(())
            }
            _ => Err(StepError::new("not_typable", format!("element {target} does not accept text"))),
        },
        Action::Scroll { .. } => Ok(()),
        Action::Navigate { url } => {
            let page = Page::from_url(url, state.storefront, state.theme)
                .ok_or_else(|| StepError::new("not_found", format!("no page at {url}")))?;
            state.go(page);
            Ok(())
        }
        Action::Back => {
            let prev = state
                .back_stack
                .pop()
                .ok_or_else(|| StepError::new("nav_blocked", "no previous page in history"))?;
            state.page = prev;
            state.visited.push(state.page.url());
            state.last_added = None;
            Ok(())
        }
    }
}
