//! HTTP inspection API over one read-only model.
//!
//! Routes: `GET /tree`, `GET /model`, `POST /classify`, `POST /explain`,
//! `POST /whatif`, `GET /healthz`.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use conceptree::embedding::EmbeddingMatrix;
use conceptree::features::{FeaturePipeline, FeatureVector};
use conceptree::probe::{explain_values, Binding, Ensemble, Explanation, Prediction, VoteStrategy};
use conceptree::tree::{ConceptTree, PathKey};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::{Corpus, HarnessError, Result};

pub struct ServiceState {
    tree: Arc<ConceptTree>,
    tree_doc: Value,
    pipeline: FeaturePipeline,
    ensemble: Ensemble,
    binding: Binding,
    images: Arc<EmbeddingMatrix>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

/// An image given by id (looked up in the served embeddings) or inline.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Input {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f32>>,
}

impl Input {
    pub fn id(id: impl Into<String>) -> Self {
        Self {
            image_id: Some(id.into()),
            embedding: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhatIfRequest {
    pub input: Input,
    #[serde(default)]
    pub mask_parts: Vec<String>,
    #[serde(default)]
    pub override_leaves: BTreeMap<String, f64>,
    #[serde(default)]
    pub vote: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartVote {
    pub part: String,
    pub label: String,
    pub proba: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyResponse {
    pub label: String,
    pub vote: VoteStrategy,
    pub per_part: Vec<PartVote>,
    pub summed_proba: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartChange {
    pub part: String,
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub baseline_label: String,
    pub label_changed: bool,
    /// Unmasked parts whose own prediction moved.
    pub changed_parts: Vec<PartChange>,
    pub masked_parts: Vec<String>,
    /// Modified minus baseline summed probability.
    pub summed_proba_delta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIfResponse {
    #[serde(flatten)]
    pub prediction: ClassifyResponse,
    pub delta: Delta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub depth: String,
    pub vote: VoteStrategy,
    pub subclasses: Vec<String>,
    pub parts: Vec<PartSummary>,
    pub part_weights: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartSummary {
    pub part: String,
    pub features: usize,
}

impl ServiceState {
    /// Checks that tree, clues, images and checkpoint fit together.
    pub fn new(
        ensemble: Ensemble,
        tree: Arc<ConceptTree>,
        clues: Arc<EmbeddingMatrix>,
        images: Arc<EmbeddingMatrix>,
    ) -> Result<Self> {
        if ensemble.subclasses != tree.subclasses {
            return Err(HarnessError::Inconsistent("checkpoint subclasses differ from the tree's".into()));
        }
        if !images.is_empty() && images.dim() != clues.dim() {
            return Err(HarnessError::Inconsistent(format!(
                "image embeddings have dimension {}, clues {}",
                images.dim(),
                clues.dim()
            )));
        }
        let pipeline = FeaturePipeline::new(tree.clone(), clues, ensemble.depth)?;
        let binding = ensemble
            .bind(pipeline.layout())
            .map_err(|e| HarnessError::Inconsistent(e.to_string()))?;
        let tree_doc = serde_json::to_value(&*tree).expect("trees always serialize");
        Ok(Self {
            tree,
            tree_doc,
            pipeline,
            ensemble,
            binding,
            images,
        })
    }

    pub fn from_corpus(corpus: &Corpus, ensemble: Ensemble) -> Result<Self> {
        Self::new(ensemble, corpus.tree.clone(), corpus.clues.clone(), corpus.images.clone())
    }

    fn embedding<'a>(&'a self, input: &'a Input) -> Result<&'a [f32], ApiError> {
        match (&input.image_id, &input.embedding) {
            (Some(id), None) => self.images.get(id).ok_or_else(|| ApiError {
                status: StatusCode::NOT_FOUND,
                message: format!("unknown image id {id:?}"),
            }),
            (None, Some(v)) => Ok(v),
            _ => Err(ApiError::bad_request("give exactly one of image_id or embedding")),
        }
    }

    fn features(&self, input: &Input, overrides: &[(PathKey, f64)]) -> Result<FeatureVector, ApiError> {
        let image = self.embedding(input)?;
        self.pipeline
            .features_with_overrides(image, overrides)
            .map_err(|e| ApiError::bad_request(e.to_string()))
    }

    fn response(&self, prediction: &Prediction, vote: VoteStrategy) -> ClassifyResponse {
        let names = &self.ensemble.subclasses;
        ClassifyResponse {
            label: names[prediction.label].clone(),
            vote,
            per_part: prediction
                .parts
                .iter()
                .map(|p| PartVote {
                    part: p.part.clone(),
                    label: names[p.label].clone(),
                    proba: p.proba.clone(),
                })
                .collect(),
            summed_proba: prediction.diagnostics.summed.clone(),
        }
    }

    fn predict(&self, values: &[f64], vote: Option<VoteStrategy>, mask: &[String]) -> Result<Prediction, ApiError> {
        self.ensemble
            .predict_values(&self.binding, values, vote, mask)
            .map_err(|e| ApiError::bad_request(e.to_string()))
    }

    pub fn classify(&self, input: &Input) -> Result<ClassifyResponse, ApiError> {
        let f = self.features(input, &[])?;
        Ok(self.response(&self.predict(&f.values, None, &[])?, self.ensemble.vote))
    }

    pub fn explain(&self, input: &Input) -> Result<Explanation, ApiError> {
        let f = self.features(input, &[])?;
        explain_values(&self.ensemble, &self.binding, &f.values, None, &[]).map_err(|e| ApiError::bad_request(e.to_string()))
    }

    pub fn whatif(&self, req: &WhatIfRequest) -> Result<WhatIfResponse, ApiError> {
        let vote = req
            .vote
            .as_deref()
            .map(str::parse::<VoteStrategy>)
            .transpose()
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        for part in &req.mask_parts {
            if !self.ensemble.probes.contains_key(part) {
                return Err(ApiError::bad_request(format!("unknown part {part:?}")));
            }
        }
        if self.ensemble.parts().all(|p| req.mask_parts.iter().any(|m| m == p)) {
            return Err(ApiError::bad_request("cannot mask every part"));
        }
        let overrides = req
            .override_leaves
            .iter()
            .map(|(k, &v)| {
                let key: PathKey = k.parse().map_err(|_| ApiError::bad_request(format!("bad path key {k:?}")))?;
                if self.tree.leaf(&key).is_none() {
                    return Err(ApiError::bad_request(format!("path {k:?} is not in the tree")));
                }
                if !v.is_finite() {
                    return Err(ApiError::bad_request(format!("override for {k:?} is not finite")));
                }
                Ok((key, v))
            })
            .collect::<Result<Vec<_>, ApiError>>()?;

        let baseline_features = self.features(&req.input, &[])?;
        let baseline = self.predict(&baseline_features.values, None, &[])?;
        let features = self.features(&req.input, &overrides)?;
        let modified = self.predict(&features.values, vote, &req.mask_parts)?;

        let names = &self.ensemble.subclasses;
        let changed_parts = modified
            .parts
            .iter()
            .filter_map(|m| {
                let b = baseline.parts.iter().find(|b| b.part == m.part)?;
                (b.label != m.label).then(|| PartChange {
                    part: m.part.clone(),
                    from: names[b.label].clone(),
                    to: names[m.label].clone(),
                })
            })
            .collect();
        let delta = Delta {
            baseline_label: names[baseline.label].clone(),
            label_changed: baseline.label != modified.label,
            changed_parts,
            masked_parts: req.mask_parts.clone(),
            summed_proba_delta: modified
                .diagnostics
                .summed
                .iter()
                .zip(&baseline.diagnostics.summed)
                .map(|(m, b)| m - b)
                .collect(),
        };
        Ok(WhatIfResponse {
            prediction: self.response(&modified, vote.unwrap_or(self.ensemble.vote)),
            delta,
        })
    }

    pub fn model(&self) -> ModelSummary {
        ModelSummary {
            depth: self.ensemble.depth.to_string(),
            vote: self.ensemble.vote,
            subclasses: self.ensemble.subclasses.clone(),
            parts: self
                .ensemble
                .probes
                .iter()
                .map(|(k, p)| PartSummary {
                    part: k.clone(),
                    features: p.width(),
                })
                .collect(),
            part_weights: self.ensemble.part_weights.is_some(),
        }
    }
}

type Shared = State<Arc<ServiceState>>;

async fn get_tree(State(s): Shared) -> Json<Value> {
    Json(s.tree_doc.clone())
}

async fn get_model(State(s): Shared) -> Json<ModelSummary> {
    Json(s.model())
}

async fn post_classify(State(s): Shared, Json(input): Json<Input>) -> Result<Json<ClassifyResponse>, ApiError> {
    s.classify(&input).map(Json)
}

async fn post_explain(State(s): Shared, Json(input): Json<Input>) -> Result<Json<Explanation>, ApiError> {
    s.explain(&input).map(Json)
}

async fn post_whatif(State(s): Shared, Json(req): Json<WhatIfRequest>) -> Result<Json<WhatIfResponse>, ApiError> {
    s.whatif(&req).map(Json)
}

async fn healthz() -> Json<Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/tree", get(get_tree))
        .route("/model", get(get_model))
        .route("/classify", post(post_classify))
        .route("/explain", post(post_explain))
        .route("/whatif", post(post_whatif))
        .route("/healthz", get(healthz))
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<ServiceState>) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// A server on its own runtime thread; stops when dropped.
pub struct ServiceHandle {
    pub addr: SocketAddr,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl ServiceHandle {
    pub fn start(state: Arc<ServiceState>, bind: &str) -> Result<Self> {
        let std_listener = std::net::TcpListener::bind(bind)?;
        std_listener.set_nonblocking(true)?;
        let addr = std_listener.local_addr()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
        let thread = std::thread::spawn(move || {
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(std_listener).expect("listener from std");
                let _ = axum::serve(listener, router(state))
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            });
        });
        Ok(Self {
            addr,
            stop: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
