//! HTTP API over a model bundle and a cohort.
//!
//! Every body carries `schema_version`. Risk computations use exact
//! enumeration so interactive updates never jitter. The bundle and cohort are
//! read-only after startup; the only mutable state is the session table.
//! Each session sits behind its own async mutex, so mutations to one session
//! are applied one at a time while different sessions proceed in parallel.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use duacm_core::cohort::Diagnosis;
use duacm_core::duacm::{explain, pessimistic_delta, Explanation, RiskDistribution};
use duacm_core::{Cohort, DiagnosisId, DuConfig, RuleOutSession};
use serde::{Deserialize, Serialize};

use crate::bundle::{ModelBundle, Provenance, SCHEMA_VERSION};
use crate::commands::check_distribution;
use crate::error::AppError;

/// Quantile levels reported by the service.
pub const SERVICE_QUANTILES: [f64; 2] = [0.5, 0.9];

pub fn service_du_config() -> DuConfig {
    DuConfig {
        quantiles: SERVICE_QUANTILES.to_vec(),
        ..DuConfig::exact()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientSummary {
    pub id: String,
    pub mean: f64,
    pub q90: f64,
    pub delta: f64,
    pub top_diagnosis: DiagnosisId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedEntry {
    pub diagnosis: DiagnosisId,
    pub name: String,
    pub probability: f64,
    pub conditional_risk: f64,
}

/// A risk distribution with everything a client needs to display it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskView {
    pub mean: f64,
    pub q90: f64,
    pub delta: f64,
    /// Every diagnosis with positive probability, most probable first.
    pub diagnoses: Vec<NamedEntry>,
    pub distribution: RiskDistribution,
    pub explanation: Explanation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Mutation {
    RuleOut { diagnoses: Vec<DiagnosisId> },
    Confirm { diagnosis: DiagnosisId },
    Reset,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub schema_version: u32,
    pub session_id: String,
    pub patient_id: String,
    pub excluded: BTreeSet<DiagnosisId>,
    pub confirmed: Option<DiagnosisId>,
    /// Mutations applied so far, in order; replaying them on a fresh session
    /// reproduces this state.
    pub history: Vec<Mutation>,
    pub risk: RiskView,
}

struct SessionEntry {
    patient_id: String,
    session: RuleOutSession,
    history: Vec<Mutation>,
    last_used: Instant,
}

pub struct AppState {
    bundle: Arc<ModelBundle>,
    cohort: Cohort,
    index: HashMap<String, usize>,
    names: HashMap<DiagnosisId, String>,
    summaries: Vec<PatientSummary>,
    du_config: DuConfig,
    top_k: usize,
    driver_threshold: f64,
    idle_timeout: Duration,
    sessions: Mutex<HashMap<String, Arc<tokio::sync::Mutex<SessionEntry>>>>,
    next_session: AtomicU64,
}

/// Failure with its HTTP status.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub kind: &'static str,
    pub message: String,
}

impl ApiError {
    fn not_found(what: &str, id: &str) -> Self {
        ApiError {
            status: StatusCode::NOT_FOUND,
            kind: "not_found",
            message: format!("unknown {what} {id:?}"),
        }
    }

    fn bad_request(message: String) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            kind: "bad_request",
            message,
        }
    }
}

impl From<AppError> for ApiError {
    fn from(e: AppError) -> Self {
        let status = match &e {
            AppError::Core(c) if c.is_conflict() => StatusCode::CONFLICT,
            AppError::Core(_) | AppError::Usage(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let message = match &e {
            AppError::Core(c) => c.to_string(),
            other => other.to_string(),
        };
        ApiError {
            status,
            kind: e.kind(),
            message,
        }
    }
}

impl From<duacm_core::Error> for ApiError {
    fn from(e: duacm_core::Error) -> Self {
        AppError::Core(e).into()
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({
            "schema_version": SCHEMA_VERSION,
            "error": { "kind": self.kind, "message": self.message },
        });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

impl AppState {
    /// Scores every patient up front so listing and sorting are free.
    pub fn new(
        bundle: ModelBundle,
        cohort: Cohort,
        top_k: usize,
        driver_threshold: f64,
        idle_timeout: Duration,
    ) -> crate::error::Result<Self> {
        bundle.check_cohort(&cohort)?;
        let mut index = HashMap::with_capacity(cohort.len());
        for (i, r) in cohort.records.iter().enumerate() {
            if index.insert(r.id.clone(), i).is_some() {
                return Err(AppError::Usage(format!("duplicate patient id {:?}", r.id)));
            }
        }
        let mut state = AppState {
            names: bundle.diagnosis_vocab.iter().map(|d| (d.id, d.name.clone())).collect(),
            bundle: Arc::new(bundle),
            index,
            summaries: Vec::new(),
            du_config: service_du_config(),
            top_k,
            driver_threshold,
            idle_timeout,
            sessions: Mutex::new(HashMap::new()),
            next_session: AtomicU64::new(1),
            cohort,
        };
        let summaries = state
            .cohort
            .records
            .iter()
            .map(|r| {
                let view = state.risk_view(&state.predict(&r.features)?)?;
                Ok(PatientSummary {
                    id: r.id.clone(),
                    mean: view.mean,
                    q90: view.q90,
                    delta: view.delta,
                    top_diagnosis: view.diagnoses[0].diagnosis,
                })
            })
            .collect::<crate::error::Result<Vec<_>>>()?;
        state.summaries = summaries;
        Ok(state)
    }

    pub fn bundle(&self) -> &ModelBundle {
        &self.bundle
    }

    fn predict(&self, features: &[f64]) -> crate::error::Result<RiskDistribution> {
        let b = &self.bundle;
        Ok(duacm_core::duacm::du_predict(&b.outcome_model, &b.diagnosis_model, features, &self.du_config)?)
    }

    fn risk_view(&self, dist: &RiskDistribution) -> crate::error::Result<RiskView> {
        check_distribution(dist).map_err(AppError::Validation)?;
        let mut diagnoses: Vec<NamedEntry> = dist
            .entries
            .iter()
            .filter(|e| e.weight > 0.0)
            .map(|e| NamedEntry {
                diagnosis: e.diagnosis,
                name: self.names.get(&e.diagnosis).cloned().unwrap_or_default(),
                probability: e.weight,
                conditional_risk: e.conditional_risk,
            })
            .collect();
        diagnoses.sort_by(|a, b| b.probability.total_cmp(&a.probability).then(a.diagnosis.cmp(&b.diagnosis)));
        let explanation = explain(dist, self.top_k, self.driver_threshold);
        Ok(RiskView {
            mean: dist.mean,
            q90: explanation.q90,
            delta: pessimistic_delta(dist)?,
            diagnoses,
            distribution: dist.clone(),
            explanation,
        })
    }

    fn patient(&self, id: &str) -> Result<usize, ApiError> {
        self.index.get(id).copied().ok_or_else(|| ApiError::not_found("patient", id))
    }

    fn state_of(&self, session_id: &str, e: &SessionEntry) -> Result<SessionState, ApiError> {
        Ok(SessionState {
            schema_version: SCHEMA_VERSION,
            session_id: session_id.to_string(),
            patient_id: e.patient_id.clone(),
            excluded: e.session.excluded.clone(),
            confirmed: e.session.confirmed,
            history: e.history.clone(),
            risk: self.risk_view(&e.session.current)?,
        })
    }

    /// Looks up a live session; an idle one is dropped and reported missing.
    fn session(&self, id: &str) -> Result<Arc<tokio::sync::Mutex<SessionEntry>>, ApiError> {
        self.sessions
            .lock()
            .expect("session table lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("session", id))
    }

    fn expire(&self, id: &str) -> ApiError {
        self.sessions.lock().expect("session table lock").remove(id);
        ApiError::not_found("session", id)
    }

    /// Drops every session idle for longer than the timeout; returns how many.
    pub fn sweep_expired(&self) -> usize {
        let mut table = self.sessions.lock().expect("session table lock");
        let before = table.len();
        let timeout = self.idle_timeout;
        // A session locked by an in-flight request is in use, not idle.
        table.retain(|_, s| s.try_lock().map_or(true, |e| e.last_used.elapsed() <= timeout));
        before - table.len()
    }

    pub fn n_sessions(&self) -> usize {
        self.sessions.lock().expect("session table lock").len()
    }
}

pub fn router(state: Arc<AppState>, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/patients", get(list_patients))
        .route("/patients/{id}", get(get_patient))
        .route("/patients/{id}/du-predict", get(du_predict))
        .route("/sessions", post(open_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/mutations", post(mutate_session))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

/// Binds `addr`, expires idle sessions in the background and serves until
/// interrupted.
pub async fn serve(state: Arc<AppState>, addr: &str, static_dir: Option<&Path>) -> crate::error::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| AppError::io(addr, e))?;
    let sweeper = {
        let state = state.clone();
        let period = (state.idle_timeout / 4).clamp(Duration::from_secs(1), Duration::from_secs(60));
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(period);
            loop {
                tick.tick().await;
                state.sweep_expired();
            }
        })
    };
    eprintln!("listening on {}", listener.local_addr().map_err(|e| AppError::io(addr, e))?);
    let result = axum::serve(listener, router(state, static_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| AppError::io(addr, e));
    sweeper.abort();
    result
}

#[derive(Serialize)]
struct Health {
    schema_version: u32,
    status: &'static str,
    n_patients: usize,
    n_diagnoses: usize,
    n_sessions: usize,
    provenance: Provenance,
}

async fn health(State(s): State<Arc<AppState>>) -> Json<Health> {
    Json(Health {
        schema_version: SCHEMA_VERSION,
        status: "ok",
        n_patients: s.cohort.len(),
        n_diagnoses: s.bundle.diagnosis_vocab.len(),
        n_sessions: s.n_sessions(),
        provenance: s.bundle.provenance.clone(),
    })
}

#[derive(Clone, Copy, Debug, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SortKey {
    #[default]
    Id,
    Mean,
    Q90,
    Delta,
}

#[derive(Clone, Copy, Debug, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SortOrder {
    #[default]
    Asc,
    Desc,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ListQuery {
    #[serde(default)]
    sort: SortKey,
    #[serde(default)]
    order: SortOrder,
    /// Case-sensitive substring of the patient id.
    q: Option<String>,
    limit: Option<usize>,
    #[serde(default)]
    offset: usize,
}

pub const DEFAULT_PAGE: usize = 100;

#[derive(Serialize, Deserialize)]
pub struct PatientList {
    pub schema_version: u32,
    /// Matches before paging.
    pub total: usize,
    pub patients: Vec<PatientSummary>,
}

async fn list_patients(
    State(s): State<Arc<AppState>>,
    query: Result<Query<ListQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<PatientList> {
    let Query(q) = query.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let mut rows: Vec<&PatientSummary> = match &q.q {
        Some(needle) => s.summaries.iter().filter(|p| p.id.contains(needle.as_str())).collect(),
        None => s.summaries.iter().collect(),
    };
    let key = |p: &PatientSummary| match q.sort {
        SortKey::Mean => p.mean,
        SortKey::Q90 => p.q90,
        SortKey::Delta => p.delta,
        SortKey::Id => 0.0,
    };
    rows.sort_by(|a, b| {
        let primary = key(a).total_cmp(&key(b)).then_with(|| a.id.cmp(&b.id));
        match q.order {
            SortOrder::Asc => primary,
            SortOrder::Desc => primary.reverse(),
        }
    });
    let total = rows.len();
    let patients = rows
        .into_iter()
        .skip(q.offset)
        .take(q.limit.unwrap_or(DEFAULT_PAGE))
        .cloned()
        .collect();
    Ok(Json(PatientList {
        schema_version: SCHEMA_VERSION,
        total,
        patients,
    }))
}

#[derive(Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub value: f64,
}

#[derive(Serialize, Deserialize)]
pub struct PatientDetail {
    pub schema_version: u32,
    pub id: String,
    pub features: Vec<Feature>,
    /// Diagnosis on file for the patient, if any; inference never uses it.
    pub recorded_diagnosis: Option<Diagnosis>,
    pub summary: PatientSummary,
}

async fn get_patient(State(s): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<PatientDetail> {
    let i = s.patient(&id)?;
    let r = &s.cohort.records[i];
    let features = s
        .cohort
        .schema
        .names
        .iter()
        .zip(&r.features)
        .map(|(n, &v)| Feature {
            name: n.clone(),
            value: v,
        })
        .collect();
    let recorded_diagnosis = r.diagnosis.map(|d| Diagnosis {
        id: d,
        name: s.names.get(&d).cloned().unwrap_or_default(),
    });
    Ok(Json(PatientDetail {
        schema_version: SCHEMA_VERSION,
        id: r.id.clone(),
        features,
        recorded_diagnosis,
        summary: s.summaries[i].clone(),
    }))
}

#[derive(Serialize, Deserialize)]
pub struct DuPrediction {
    pub schema_version: u32,
    pub patient_id: String,
    pub risk: RiskView,
}

async fn du_predict(State(s): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<DuPrediction> {
    let i = s.patient(&id)?;
    let dist = s.predict(&s.cohort.records[i].features)?;
    Ok(Json(DuPrediction {
        schema_version: SCHEMA_VERSION,
        patient_id: id,
        risk: s.risk_view(&dist)?,
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OpenRequest {
    patient_id: String,
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))
}

async fn open_session(State(s): State<Arc<AppState>>, body: Bytes) -> Result<(StatusCode, Json<SessionState>), ApiError> {
    let req: OpenRequest = parse_body(&body)?;
    let i = s.patient(&req.patient_id)?;
    let b = &s.bundle;
    let session = RuleOutSession::open(&b.outcome_model, &b.diagnosis_model, &s.cohort.records[i].features, &s.du_config)?;
    let id = format!("s{}", s.next_session.fetch_add(1, Ordering::Relaxed));
    let entry = SessionEntry {
        patient_id: req.patient_id,
        session,
        history: Vec::new(),
        last_used: Instant::now(),
    };
    let state = s.state_of(&id, &entry)?;
    s.sessions
        .lock()
        .expect("session table lock")
        .insert(id, Arc::new(tokio::sync::Mutex::new(entry)));
    Ok((StatusCode::CREATED, Json(state)))
}

async fn get_session(State(s): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<SessionState> {
    let handle = s.session(&id)?;
    let mut e = handle.lock().await;
    if e.last_used.elapsed() > s.idle_timeout {
        return Err(s.expire(&id));
    }
    e.last_used = Instant::now();
    Ok(Json(s.state_of(&id, &e)?))
}

async fn mutate_session(State(s): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, body: Bytes) -> ApiResult<SessionState> {
    let handle = s.session(&id)?;
    let mutation: Mutation = parse_body(&body)?;
    let mut e = handle.lock().await;
    if e.last_used.elapsed() > s.idle_timeout {
        return Err(s.expire(&id));
    }
    e.last_used = Instant::now();
    match &mutation {
        Mutation::RuleOut { diagnoses } => {
            e.session.rule_out(diagnoses)?;
        }
        Mutation::Confirm { diagnosis } => {
            e.session.confirm(*diagnosis)?;
        }
        Mutation::Reset => {
            e.session.reset();
        }
    }
    e.history.push(mutation);
    Ok(Json(s.state_of(&id, &e)?))
}
