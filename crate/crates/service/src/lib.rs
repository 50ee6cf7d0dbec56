//! JSON API over a fitted CoFFee model: fold in a visitor's ratings and
//! return recommendations with the score of every rating level.
//!
//! Requests are independent; the client keeps the list of ratings entered
//! so far and sends all of them each time.

use std::collections::{HashMap, HashSet};
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Query, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use coffee_core::ingest::{read_titles, FileFormat, IdMap, RatingScale};
use coffee_core::models::{rank_items_shades, Coffee, Observation};
use coffee_core::persist::ModelBundle;
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

/// Largest accepted `n`.
pub const MAX_N: usize = 1000;
/// Largest number of `/items` matches returned.
pub const MAX_MATCHES: usize = 20;

/// A CoFFee model plus the id maps needed to talk to clients.
#[derive(Debug)]
pub struct ServedModel {
    pub coffee: Coffee,
    pub items: IdMap,
    pub scale: RatingScale,
}

impl ServedModel {
    pub fn from_bundle(bundle: &ModelBundle) -> coffee_core::Result<Self> {
        Ok(Self {
            coffee: bundle.to_coffee()?,
            items: bundle.items.clone(),
            scale: bundle.scale.clone(),
        })
    }

    pub fn load(path: &Path) -> coffee_core::Result<Self> {
        Self::from_bundle(&ModelBundle::load(path)?)
    }
}

/// Item titles in catalogue order.
#[derive(Debug, Default)]
pub struct Titles {
    entries: Vec<(u64, String)>,
    by_id: HashMap<u64, usize>,
}

impl Titles {
    pub fn new(entries: Vec<(u64, String)>) -> Self {
        let by_id = entries.iter().enumerate().map(|(i, (id, _))| (*id, i)).collect();
        Self { entries, by_id }
    }

    pub fn load(path: &Path) -> coffee_core::Result<Self> {
        let format = FileFormat::from_path(path).unwrap_or(FileFormat::Dat);
        Ok(Self::new(read_titles(path, format)?))
    }

    pub fn get(&self, id: u64) -> Option<&str> {
        self.by_id.get(&id).map(|&i| self.entries[i].1.as_str())
    }

    /// Case-insensitive title prefix search.
    pub fn search(&self, prefix: &str, limit: usize) -> Vec<(u64, &str)> {
        let prefix = prefix.to_lowercase();
        self.entries
            .iter()
            .filter(|(_, t)| t.to_lowercase().starts_with(&prefix))
            .take(limit)
            .map(|(id, t)| (*id, t.as_str()))
            .collect()
    }
}

#[derive(Clone, Default)]
pub struct AppState {
    model: Option<Arc<ServedModel>>,
    titles: Arc<Titles>,
}

impl AppState {
    pub fn new(model: Option<ServedModel>, titles: Titles) -> Self {
        Self {
            model: model.map(Arc::new),
            titles: Arc::new(titles),
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct RatingInput {
    pub item: u64,
    pub rating: f64,
}

#[derive(Debug, Deserialize)]
pub struct RecommendRequest {
    pub ratings: Vec<RatingInput>,
    #[serde(default = "default_n")]
    pub n: usize,
    /// Zero-based rating levels to sum; defaults to the levels above the threshold.
    pub positive_levels: Option<Vec<usize>>,
}

fn default_n() -> usize {
    10
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct RecommendedItem {
    pub item: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub score: f64,
    /// One score per rating level, lowest level first.
    pub shades: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct RecommendResponse {
    pub items: Vec<RecommendedItem>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ItemMatch {
    pub item: u64,
    pub title: String,
}

#[derive(Debug, Deserialize)]
pub struct ItemsQuery {
    pub query: Option<String>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelInfo {
    pub ranks: [usize; 3],
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    /// Rating values, lowest first.
    pub scale: Vec<f64>,
    pub threshold: f64,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Health {
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelInfo>,
}

#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    NoModel,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, message) = match self {
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, m),
            ApiError::NoModel => (StatusCode::SERVICE_UNAVAILABLE, "no model loaded".to_string()),
        };
        (status, Json(serde_json::json!({ "error": message }))).into_response()
    }
}

fn bad(message: impl Into<String>) -> ApiError {
    ApiError::BadRequest(message.into())
}

/// Fold in `req.ratings` and rank the unrated items.
pub fn recommend(model: &ServedModel, titles: &Titles, req: &RecommendRequest) -> Result<RecommendResponse, ApiError> {
    if req.ratings.is_empty() {
        return Err(bad("ratings must not be empty"));
    }
    if req.n == 0 || req.n > MAX_N {
        return Err(bad(format!("n must lie in 1..={MAX_N}")));
    }
    let mut seen = HashSet::new();
    let mut observed = Vec::with_capacity(req.ratings.len());
    for r in &req.ratings {
        let item = model
            .items
            .index_of(r.item)
            .ok_or_else(|| bad(format!("unknown item {}", r.item)))?;
        if !seen.insert(item) {
            return Err(bad(format!("item {} rated more than once", r.item)));
        }
        let level = model
            .scale
            .level(r.rating)
            .map_err(|_| bad(format!("rating {} is not on the scale {:?}", r.rating, model.scale.values())))?;
        observed.push(Observation {
            item,
            level,
            value: r.rating,
        });
    }
    let positive = match &req.positive_levels {
        Some(levels) => levels.clone(),
        None => model.coffee.positive_levels.clone(),
    };
    let shades = model.coffee.shades(&observed).map_err(|e| bad(e.to_string()))?;
    let ranked = rank_items_shades(&shades, &positive, req.n, &seen).map_err(|e| bad(e.to_string()))?;
    let scores = ranked.scores.unwrap_or_default();
    let items = ranked
        .items
        .iter()
        .zip(scores)
        .map(|(&j, score)| {
            let id = model.items.id_of(j);
            RecommendedItem {
                item: id,
                title: titles.get(id).map(str::to_string),
                score,
                shades: shades.item_shades(j),
            }
        })
        .collect();
    Ok(RecommendResponse { items })
}

async fn recommend_handler(
    State(state): State<AppState>,
    body: Result<Json<RecommendRequest>, JsonRejection>,
) -> Result<Json<RecommendResponse>, ApiError> {
    let model = state.model.as_ref().ok_or(ApiError::NoModel)?;
    let Json(req) = body.map_err(|e| bad(e.body_text()))?;
    recommend(model, &state.titles, &req).map(Json)
}

async fn items_handler(
    State(state): State<AppState>,
    query: Result<Query<ItemsQuery>, axum::extract::rejection::QueryRejection>,
) -> Result<Json<Vec<ItemMatch>>, ApiError> {
    let Query(q) = query.map_err(|e| bad(e.body_text()))?;
    let prefix = q.query.unwrap_or_default();
    if prefix.trim().is_empty() {
        return Err(bad("query must not be empty"));
    }
    let matches = state
        .titles
        .search(&prefix, MAX_MATCHES)
        .into_iter()
        .map(|(item, title)| ItemMatch {
            item,
            title: title.to_string(),
        })
        .collect();
    Ok(Json(matches))
}

async fn health_handler(State(state): State<AppState>) -> Response {
    match &state.model {
        Some(m) => {
            let t = &m.coffee.model;
            let [mm, n, k] = t.shape();
            Json(Health {
                status: "ok".into(),
                model: Some(ModelInfo {
                    ranks: t.ranks(),
                    m: mm,
                    n,
                    k,
                    scale: m.scale.values().to_vec(),
                    threshold: m.scale.threshold(),
                }),
            })
            .into_response()
        }
        None => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(Health {
                status: "no model loaded".into(),
                model: None,
            }),
        )
            .into_response(),
    }
}

/// Routes with CORS for `origin` (any origin when `None`).
pub fn router(state: AppState, origin: Option<&str>) -> Router {
    let allow = match origin.and_then(|o| HeaderValue::from_str(o).ok()) {
        Some(o) => AllowOrigin::exact(o),
        None => AllowOrigin::any(),
    };
    let cors = CorsLayer::new()
        .allow_origin(allow)
        .allow_methods(Any)
        .allow_headers(Any);
    Router::new()
        .route("/recommend", post(recommend_handler))
        .route("/items", get(items_handler))
        .route("/health", get(health_handler))
        .layer(cors)
        .with_state(state)
}

/// Bind `addr` and serve until Ctrl-C.
pub async fn serve(addr: SocketAddr, state: AppState, origin: Option<&str>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state, origin))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
