//! Curation service: predictions with explanations, decision log, export.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use kgalign_core::align::entity_label;
use kgalign_core::seed::pairs_to_tsv;
use kgalign_core::{Explanation, GraphPair};
use serde::Serialize;
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use crate::decisions::{CurationDecision, DecisionBook, Verdict};

pub const DEFAULT_LIMIT: usize = 50;
pub const DECISION_LOG: &str = "decisions.jsonl";

const PLACEHOLDER: &str = "<!doctype html>
<html><head><meta charset=\"utf-8\"><title>kgalign curation</title></head>
<body><h1>kgalign curation service</h1>
<p>No UI bundle found. Place a built bundle in <code>$IALIGN_DATA_DIR/ui</code> or use the JSON API:
<code>/api/pairs</code>, <code>/api/pairs/{id}</code>, <code>/api/stats</code>, <code>/api/export/accepted</code>.</p>
</body></html>
";

/// One predicted pair under review: A query, its top-1 B candidate.
pub struct ReviewPair {
    pub a: usize,
    pub b: usize,
    pub a_label: String,
    pub b_label: String,
    pub explanation: Explanation,
}

pub struct AppState {
    pair: GraphPair,
    items: Vec<ReviewPair>,
    /// Pair ids in queue order.
    order: Vec<usize>,
    book: Mutex<DecisionBook>,
}

impl AppState {
    /// `highest_first` reverses the default lowest-score-first queue.
    pub fn new(pair: GraphPair, explanations: Vec<Explanation>, book: DecisionBook, highest_first: bool) -> Self {
        let items: Vec<ReviewPair> = explanations
            .into_iter()
            .map(|e| {
                let a = pair.a.entities().get(&e.a.entity).expect("explained entity exists");
                let b = pair.b.entities().get(&e.b.entity).expect("explained entity exists");
                ReviewPair {
                    a,
                    b,
                    a_label: entity_label(&pair.a, a),
                    b_label: entity_label(&pair.b, b),
                    explanation: e,
                }
            })
            .collect();
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.sort_by(|&x, &y| {
            let (sx, sy) = (items[x].explanation.score, items[y].explanation.score);
            let c = if highest_first { sy.total_cmp(&sx) } else { sx.total_cmp(&sy) };
            c.then(x.cmp(&y))
        });
        Self {
            pair,
            items,
            order,
            book: Mutex::new(book),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

type Shared = Arc<AppState>;

pub fn router(state: Shared, ui_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/pairs", get(list_pairs))
        .route("/api/pairs/{id}", get(get_pair))
        .route("/api/pairs/{id}/decision", post(post_decision))
        .route("/api/export/accepted", get(export_accepted))
        .route("/api/stats", get(stats))
        .with_state(state);
    match ui_dir.filter(|d| d.join("index.html").is_file()) {
        Some(dir) => api.fallback_service(ServeDir::new(PathBuf::from(dir))),
        None => api.route("/", get(|| async { Html(PLACEHOLDER) })),
    }
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

#[derive(Serialize)]
struct EntityRef<'a> {
    iri: &'a str,
    label: &'a str,
}

#[derive(Serialize)]
struct PairSummary<'a> {
    pair_id: usize,
    a: EntityRef<'a>,
    b: EntityRef<'a>,
    score: f64,
    decision: Option<Verdict>,
}

#[derive(Serialize)]
struct PairPage<'a> {
    total: usize,
    offset: usize,
    limit: usize,
    items: Vec<PairSummary<'a>>,
}

fn usize_param(q: &HashMap<String, String>, key: &str, default: usize) -> Result<usize, Response> {
    match q.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| error(StatusCode::BAD_REQUEST, format!("`{key}` must be a non-negative integer"))),
    }
}

async fn list_pairs(State(s): State<Shared>, Query(q): Query<HashMap<String, String>>) -> Response {
    let offset = match usize_param(&q, "offset", 0) {
        Ok(v) => v,
        Err(r) => return r,
    };
    let limit = match usize_param(&q, "limit", DEFAULT_LIMIT) {
        Ok(v) => v,
        Err(r) => return r,
    };
    let annotator = q.get("annotator").map(String::as_str);
    let want_decided = match q.get("status").map(String::as_str) {
        None => None,
        Some("pending") => Some(false),
        Some("decided") => Some(true),
        Some(other) => return error(StatusCode::BAD_REQUEST, format!("unknown status `{other}` (pending or decided)")),
    };
    let book = s.book.lock().expect("decision log lock");
    let selected: Vec<usize> = s
        .order
        .iter()
        .copied()
        .filter(|&p| want_decided.is_none_or(|d| book.is_decided(p, annotator) == d))
        .collect();
    let items = selected
        .iter()
        .skip(offset)
        .take(limit)
        .map(|&p| {
            let it = &s.items[p];
            PairSummary {
                pair_id: p,
                a: EntityRef {
                    iri: &it.explanation.a.entity,
                    label: &it.a_label,
                },
                b: EntityRef {
                    iri: &it.explanation.b.entity,
                    label: &it.b_label,
                },
                score: it.explanation.score,
                decision: book.latest(p).map(|d| d.decision),
            }
        })
        .collect();
    Json(PairPage {
        total: selected.len(),
        offset,
        limit,
        items,
    })
    .into_response()
}

fn pair_id(s: &AppState, raw: &str) -> Result<usize, Response> {
    raw.parse::<usize>()
        .ok()
        .filter(|&p| p < s.items.len())
        .ok_or_else(|| error(StatusCode::NOT_FOUND, format!("no pair `{raw}`")))
}

async fn get_pair(State(s): State<Shared>, UrlPath(raw): UrlPath<String>) -> Response {
    match pair_id(&s, &raw) {
        Ok(p) => Json(&s.items[p].explanation).into_response(),
        Err(r) => r,
    }
}

/// `{decision, confident, annotator}`: 400 when the body is not that shape,
/// 422 when `decision` is a string outside the enum.
fn parse_decision(body: &[u8]) -> Result<(Verdict, bool, String), Response> {
    let bad = |m: &str| error(StatusCode::BAD_REQUEST, m);
    let v: Value = serde_json::from_slice(body).map_err(|e| bad(&format!("malformed JSON: {e}")))?;
    let obj = v.as_object().ok_or_else(|| bad("body must be a JSON object"))?;
    let decision = obj
        .get("decision")
        .and_then(Value::as_str)
        .ok_or_else(|| bad("`decision` must be a string"))?;
    let confident = obj
        .get("confident")
        .and_then(Value::as_bool)
        .ok_or_else(|| bad("`confident` must be a boolean"))?;
    let annotator = obj
        .get("annotator")
        .and_then(Value::as_str)
        .filter(|a| !a.trim().is_empty())
        .ok_or_else(|| bad("`annotator` must be a non-empty string"))?;
    let verdict = Verdict::parse(decision).ok_or_else(|| {
        error(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("decision `{decision}` is not one of accept, reject, unsure"),
        )
    })?;
    Ok((verdict, confident, annotator.to_string()))
}

async fn post_decision(State(s): State<Shared>, UrlPath(raw): UrlPath<String>, body: Bytes) -> Response {
    let p = match pair_id(&s, &raw) {
        Ok(p) => p,
        Err(r) => return r,
    };
    let (decision, confident, annotator) = match parse_decision(&body) {
        Ok(d) => d,
        Err(r) => return r,
    };
    let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let d = CurationDecision {
        pair_id: p,
        decision,
        confident,
        annotator,
        timestamp,
    };
    let mut book = s.book.lock().expect("decision log lock");
    match book.record(d) {
        Ok(()) => StatusCode::NO_CONTENT.into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, format!("writing decision log: {e:#}")),
    }
}

/// A seed alignment is one-to-one, so when accepted pairs share an entity
/// only the most recently accepted one is exported.
async fn export_accepted(State(s): State<Shared>) -> Response {
    let accepted = s.book.lock().expect("decision log lock").accepted(s.items.len());
    let (mut used_a, mut used_b) = (HashSet::new(), HashSet::new());
    let mut pairs = Vec::with_capacity(accepted.len());
    for p in accepted {
        let it = &s.items[p];
        if used_a.contains(&it.a) || used_b.contains(&it.b) {
            log::warn!("export: pair {p} conflicts with a later accepted pair, skipped");
            continue;
        }
        used_a.insert(it.a);
        used_b.insert(it.b);
        pairs.push((it.a, it.b));
    }
    pairs.sort_unstable();
    (
        [(header::CONTENT_TYPE, "text/tab-separated-values; charset=utf-8")],
        pairs_to_tsv(&pairs, &s.pair.a, &s.pair.b),
    )
        .into_response()
}

async fn stats(State(s): State<Shared>) -> Response {
    Json(s.book.lock().expect("decision log lock").stats(s.items.len())).into_response()
}
