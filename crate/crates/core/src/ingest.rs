//! Clickstream ingestion: JSONL parsing, sessionization and the per-session
//! feature vector used for clustering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Money in minor currency units (cents).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Money(pub u64);

impl Money {
    pub fn as_f64(self) -> f64 {
        self.0 as f64
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "${}.{:02}", self.0 / 100, self.0 % 100)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventType {
    PageView,
    ProductView,
    Search,
    AddToCart,
    BeginCheckout,
    Purchase,
}

/// One clickstream row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Event {
    pub session_id: String,
    pub buyer_id: String,
    pub shop_id: String,
    #[serde(rename = "ts")]
    pub timestamp: i64,
    #[serde(rename = "type")]
    pub event_type: EventType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub product_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub product_title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub product_price: Option<Money>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search_query: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cart_value: Option<Money>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order_value: Option<Money>,
}

impl Event {
    /// Checks the cross-field invariants that serde cannot express.
    pub fn validate(&self) -> Result<(), String> {
        if self.timestamp < 0 {
            return Err(format!("negative timestamp {}", self.timestamp));
        }
        let wants_product = matches!(self.event_type, EventType::ProductView | EventType::AddToCart);
        match (wants_product, self.product_id.is_some()) {
            (true, false) => return Err(format!("{:?} event without product_id", self.event_type)),
            (false, true) => return Err(format!("product_id not allowed on {:?} event", self.event_type)),
            _ => {}
        }
        let is_purchase = self.event_type == EventType::Purchase;
        match (is_purchase, self.order_value.is_some()) {
            (true, false) => Err("purchase event without order_value".into()),
            (false, true) => Err(format!("order_value not allowed on {:?} event", self.event_type)),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IngestError {
    #[error("input contains no events")]
    EmptyInput,
    #[error("all {} non-blank lines are malformed (first: line {}: {})", .0.len(), .0[0].line, .0[0].message)]
    AllLinesMalformed(Vec<LineError>),
    #[error("session {session_id} has conflicting owners: {first} vs {second}")]
    ConflictingSessionOwner {
        session_id: String,
        first: String,
        second: String,
    },
}

/// Result of parsing a clickstream: the good events plus per-line errors.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedEvents {
    pub events: Vec<Event>,
    pub errors: Vec<LineError>,
}

/// Parses line-delimited JSON events. Malformed lines are collected with
/// their 1-based line numbers; the call only fails when nothing parses.
pub fn parse_events(stream: &str) -> Result<ParsedEvents, IngestError> {
    let mut parsed = ParsedEvents::default();
    let mut non_blank = 0usize;
    for (idx, line) in stream.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        non_blank += 1;
        let result = serde_json::from_str::<Event>(line)
            .map_err(|e| e.to_string())
            .and_then(|ev| ev.validate().map(|()| ev));
        match result {
            Ok(ev) => parsed.events.push(ev),
            Err(message) => parsed.errors.push(LineError { line: idx + 1, message }),
        }
    }
    if non_blank == 0 {
        return Err(IngestError::EmptyInput);
    }
    if parsed.events.is_empty() {
        return Err(IngestError::AllLinesMalformed(parsed.errors));
    }
    Ok(parsed)
}

/// All events of one storefront visit, in ascending timestamp order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub buyer_id: String,
    pub shop_id: String,
    pub events: Vec<Event>,
}

impl Session {
    pub fn duration_ms(&self) -> i64 {
        match (self.events.first(), self.events.last()) {
            (Some(a), Some(b)) => b.timestamp - a.timestamp,
            _ => 0,
        }
    }

    fn first_timestamp(&self) -> i64 {
        self.events.first().map_or(0, |e| e.timestamp)
    }
}

/// Groups events by `session_id`. Each group is stably sorted by timestamp
/// and groups are ordered by their first timestamp (then id).
pub fn sessionize(events: &[Event]) -> Result<Vec<Session>, IngestError> {
    let mut groups: BTreeMap<&str, Session> = BTreeMap::new();
    for ev in events {
        match groups.get_mut(ev.session_id.as_str()) {
            Some(session) => {
                if session.buyer_id != ev.buyer_id {
                    return Err(IngestError::ConflictingSessionOwner {
                        session_id: ev.session_id.clone(),
                        first: format!("buyer {}", session.buyer_id),
                        second: format!("buyer {}", ev.buyer_id),
                    });
                }
                if session.shop_id != ev.shop_id {
                    return Err(IngestError::ConflictingSessionOwner {
                        session_id: ev.session_id.clone(),
                        first: format!("shop {}", session.shop_id),
                        second: format!("shop {}", ev.shop_id),
                    });
                }
                session.events.push(ev.clone());
            }
            None => {
                groups.insert(
                    &ev.session_id,
                    Session {
                        session_id: ev.session_id.clone(),
                        buyer_id: ev.buyer_id.clone(),
                        shop_id: ev.shop_id.clone(),
                        events: vec![ev.clone()],
                    },
                );
            }
        }
    }
    let mut sessions: Vec<Session> = groups.into_values().collect();
    for s in &mut sessions {
        s.events.sort_by_key(|e| e.timestamp);
    }
    sessions.sort_by(|a, b| {
        a.first_timestamp()
            .cmp(&b.first_timestamp())
            .then_with(|| a.session_id.cmp(&b.session_id))
    });
    Ok(sessions)
}

/// Number of features in [`SessionFeatures::to_vector`].
pub const FEATURE_COUNT: usize = 10;

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "duration_s",
    "event_count",
    "product_views",
    "distinct_products",
    "search_count",
    "a2c_count",
    "checkout_flag",
    "purchase_flag",
    "cart_value",
    "order_value",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionFeatures {
    pub duration_s: f64,
    pub event_count: u32,
    pub product_views: u32,
    pub distinct_products: u32,
    pub search_count: u32,
    pub a2c_count: u32,
    pub checkout_flag: u8,
    pub purchase_flag: u8,
    pub cart_value: Money,
    pub order_value: Money,
}

impl SessionFeatures {
    pub fn to_vector(&self) -> [f64; FEATURE_COUNT] {
        [
            self.duration_s,
            f64::from(self.event_count),
            f64::from(self.product_views),
            f64::from(self.distinct_products),
            f64::from(self.search_count),
            f64::from(self.a2c_count),
            f64::from(self.checkout_flag),
            f64::from(self.purchase_flag),
            self.cart_value.as_f64(),
            self.order_value.as_f64(),
        ]
    }
}

pub fn extract_features(session: &Session) -> SessionFeatures {
    let mut f = SessionFeatures {
        duration_s: session.duration_ms() as f64 / 1000.0,
        event_count: session.events.len() as u32,
        product_views: 0,
        distinct_products: 0,
        search_count: 0,
        a2c_count: 0,
        checkout_flag: 0,
        purchase_flag: 0,
        cart_value: Money(0),
        order_value: Money(0),
    };
    let mut distinct = BTreeSet::new();
    for ev in &session.events {
        match ev.event_type {
            EventType::ProductView => {
                f.product_views += 1;
                if let Some(id) = &ev.product_id {
                    distinct.insert(id.as_str());
                }
            }
            EventType::Search => f.search_count += 1,
            EventType::AddToCart => f.a2c_count += 1,
            EventType::BeginCheckout => f.checkout_flag = 1,
            EventType::Purchase => {
                f.purchase_flag = 1;
                f.order_value.0 += ev.order_value.map_or(0, |m| m.0);
            }
            EventType::PageView => {}
        }
        if let Some(cv) = ev.cart_value {
            f.cart_value = f.cart_value.max(cv);
        }
    }
    f.distinct_products = distinct.len() as u32;
    f
}

/// Z-scored rows plus the column moments needed to project new sessions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizedMatrix {
    pub rows: Vec<Vec<f64>>,
    pub means: Vec<f64>,
    /// Population std per column; 0 marks a zero-variance column.
    pub stds: Vec<f64>,
}

impl StandardizedMatrix {
    /// Applies the stored column moments to a raw vector.
    pub fn transform(&self, raw: &[f64]) -> Vec<f64> {
        scale_row(raw, &self.means, &self.stds)
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }
}

pub(crate) fn scale_row(raw: &[f64], means: &[f64], stds: &[f64]) -> Vec<f64> {
    raw.iter()
        .zip(means.iter().zip(stds))
        .map(|(&x, (&m, &s))| if s > 0.0 { (x - m) / s } else { 0.0 })
        .collect()
}

pub fn standardize(vectors: &[SessionFeatures]) -> Result<StandardizedMatrix, IngestError> {
    let rows: Vec<Vec<f64>> = vectors.iter().map(|f| f.to_vector().to_vec()).collect();
    standardize_rows(&rows)
}

/// Column-wise z-scoring with population std. Columns whose spread is at
/// floating-point noise level are treated as constant and map to 0.
pub fn standardize_rows(rows: &[Vec<f64>]) -> Result<StandardizedMatrix, IngestError> {
    let first = rows.first().ok_or(IngestError::EmptyInput)?;
    let dim = first.len();
    let n = rows.len() as f64;
    let mut means = vec![0.0; dim];
    for row in rows {
        for (m, x) in means.iter_mut().zip(row) {
            *m += x;
        }
    }
    means.iter_mut().for_each(|m| *m /= n);
    let mut stds = vec![0.0; dim];
    for row in rows {
        for ((s, x), m) in stds.iter_mut().zip(row).zip(&means) {
            *s += (x - m) * (x - m);
        }
    }
    for (s, m) in stds.iter_mut().zip(&means) {
        *s = (*s / n).sqrt();
        if *s <= 1e-12 * m.abs().max(1.0) {
            *s = 0.0;
        }
    }
    let scaled = rows.iter().map(|r| scale_row(r, &means, &stds)).collect();
    Ok(StandardizedMatrix { rows: scaled, means, stds })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(session: &str, ts: i64, ty: &str, extra: &str) -> String {
        format!(
            r#"{{"session_id":"{session}","buyer_id":"b1","shop_id":"s1","ts":{ts},"type":"{ty}"{extra}}}"#
        )
    }

    #[test]
    fn parses_single_product_view() {
        let text = line("x", 10, "product_view", r#","product_id":"p1","product_price":1200"#);
        let parsed = parse_events(&text).unwrap();
        assert_eq!(parsed.events.len(), 1);
        assert!(parsed.errors.is_empty());
        assert_eq!(parsed.events[0].product_price, Some(Money(1200)));
    }

    #[test]
    fn empty_stream_is_an_error() {
        assert_eq!(parse_events(""), Err(IngestError::EmptyInput));
        assert_eq!(parse_events("\n  \n"), Err(IngestError::EmptyInput));
    }

    #[test]
    fn malformed_lines_are_collected_with_line_numbers() {
        let text = [
            line("x", 1, "page_view", ""),
            "{not json".to_string(),
            line("x", 2, "search", r#","search_query":"mugs""#),
        ]
        .join("\n");
        let parsed = parse_events(&text).unwrap();
        assert_eq!(parsed.events.len(), 2);
        assert_eq!(parsed.errors.len(), 1);
        assert_eq!(parsed.errors[0].line, 2);
    }

    #[test]
    fn schema_violations_are_malformed() {
        let text = [
            line("x", 1, "product_view", ""),
            line("x", 1, "purchase", ""),
            line("x", -5, "page_view", ""),
            line("x", 1, "page_view", r#","product_id":"p""#),
        ]
        .join("\n");
        match parse_events(&text) {
            Err(IngestError::AllLinesMalformed(errs)) => {
                assert_eq!(errs.iter().map(|e| e.line).collect::<Vec<_>>(), vec![1, 2, 3, 4])
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    fn ev(session: &str, buyer: &str, ts: i64, ty: EventType) -> Event {
        Event {
            session_id: session.into(),
            buyer_id: buyer.into(),
            shop_id: "s".into(),
            timestamp: ts,
            event_type: ty,
            product_id: None,
            product_title: None,
            product_price: None,
            search_query: None,
            cart_value: None,
            order_value: None,
        }
    }

    fn product(session: &str, ts: i64, ty: EventType, id: &str) -> Event {
        Event { product_id: Some(id.into()), ..ev(session, "b", ts, ty) }
    }

    #[test]
    fn sessionize_groups_and_sorts() {
        let events = vec![
            ev("a", "b", 30, EventType::PageView),
            ev("b", "b", 5, EventType::PageView),
            ev("a", "b", 10, EventType::Search),
            ev("b", "b", 1, EventType::Search),
            ev("a", "b", 20, EventType::PageView),
        ];
        let sessions = sessionize(&events).unwrap();
        assert_eq!(sessions.len(), 2);
        assert_eq!(sessions[0].session_id, "b");
        let ts: Vec<i64> = sessions[1].events.iter().map(|e| e.timestamp).collect();
        assert_eq!(ts, vec![10, 20, 30]);
    }

    #[test]
    fn single_session_of_three() {
        let events: Vec<Event> = (0..3).map(|i| ev("a", "b", i, EventType::PageView)).collect();
        let sessions = sessionize(&events).unwrap();
        assert_eq!(sessions.len(), 1);
        assert_eq!(sessions[0].events.len(), 3);
    }

    #[test]
    fn conflicting_owner_rejected() {
        let events = vec![ev("a", "b1", 0, EventType::PageView), ev("a", "b2", 1, EventType::PageView)];
        assert!(matches!(sessionize(&events), Err(IngestError::ConflictingSessionOwner { .. })));
    }

    fn session(events: Vec<Event>) -> Session {
        sessionize(&events).unwrap().remove(0)
    }

    #[test]
    fn repeated_product_views_count_once_as_distinct() {
        let s = session(vec![
            product("a", 0, EventType::ProductView, "p1"),
            product("a", 5, EventType::ProductView, "p1"),
        ]);
        let f = extract_features(&s);
        assert_eq!(f.product_views, 2);
        assert_eq!(f.distinct_products, 1);
    }

    #[test]
    fn page_views_only_have_empty_funnel() {
        let s = session((0..4).map(|i| ev("a", "b", i * 1000, EventType::PageView)).collect());
        let f = extract_features(&s);
        assert_eq!(f.duration_s, 3.0);
        assert_eq!(f.event_count, 4);
        assert_eq!((f.a2c_count, f.checkout_flag, f.purchase_flag), (0, 0, 0));
        assert_eq!((f.cart_value, f.order_value), (Money(0), Money(0)));
    }

    #[test]
    fn funnel_counting_rules() {
        let a2c = Event { cart_value: Some(Money(1500)), ..product("a", 10, EventType::AddToCart, "p1") };
        let buy = Event { order_value: Some(Money(1500)), ..ev("a", "b", 20, EventType::Purchase) };
        let s = session(vec![product("a", 0, EventType::ProductView, "p1"), a2c, buy]);
        let f = extract_features(&s);
        assert_eq!(f.a2c_count, 1);
        assert_eq!(f.checkout_flag, 0);
        assert_eq!(f.purchase_flag, 1);
        assert_eq!(f.order_value, Money(1500));
        assert_eq!(f.cart_value, Money(1500));
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let rows = vec![vec![3.0, -1.0], vec![3.0, 1.0]];
        let m = standardize_rows(&rows).unwrap();
        assert_eq!(m.stds[0], 0.0);
        assert_eq!(m.rows, vec![vec![0.0, -1.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn constant_non_integer_column_is_zero_variance() {
        let rows: Vec<Vec<f64>> = (0..7).map(|_| vec![0.1 + 0.2]).collect();
        let m = standardize_rows(&rows).unwrap();
        assert!(m.rows.iter().all(|r| r[0] == 0.0));
    }

    #[test]
    fn standardize_empty_is_error() {
        assert_eq!(standardize(&[]), Err(IngestError::EmptyInput));
    }

    #[test]
    fn money_display() {
        assert_eq!(Money(3318).to_string(), "$33.18");
        assert_eq!(Money(5).to_string(), "$0.05");
    }
}
