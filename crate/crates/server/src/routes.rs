use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use axum::body::{Body, Bytes};
use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::Response;
use axum::routing::{get, post};
use axum::Router;
use hivemind_core::ann;
use hivemind_core::geo::GeoPoint;
use hivemind_core::graph::{self, Evidence, MappingKind};
use hivemind_core::interop;
use hivemind_core::registry::{self, BindingSpec, MachineDef};
use hivemind_core::store::{parse_expand, EntityType, ExpansionPath, Filter, Row, Store};
use hivemind_core::swarm::{self, MappingKey, TaskRequest};
use hivemind_core::Id;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::ApiError;
use crate::wire::*;

type ApiResult = Result<Response, ApiError>;
type Params = Result<Query<BTreeMap<String, String>>, QueryRejection>;

#[derive(Clone)]
pub struct AppState {
    store: Arc<Store>,
    telemetry: Arc<Mutex<BTreeMap<Id, PositionReport>>>,
}

/// Builds the complete service router over `store`.
pub fn router(store: Arc<Store>) -> Router {
    let state = AppState {
        store,
        telemetry: Arc::default(),
    };
    Router::new()
        .route("/concepts", post(create_concept).get(list_concepts))
        .route("/concepts/{id}", get(get_concept).delete(delete_concept))
        .route("/concepts/{id}/mappings", post(map_concept))
        .route(
            "/concepts/{id}/mappings/{kind}/{target}",
            axum::routing::delete(unmap_concept),
        )
        .route("/concepts/{id}/suggest", get(suggest))
        .route("/concepts/{id}/relevance", post(relevance))
        .route("/infer", post(infer))
        .route("/machines", post(register_machine).get(list_machines))
        .route("/machines/{id}", get(get_machine))
        .route("/machines/{id}/adapters", post(bind_adapter))
        .route("/machines/{id}/goal", post(goal))
        .route("/swarm/positions", get(positions).post(report_position))
        .route("/interop/anns", post(upload_ann).get(list_anns))
        .route("/interop/anns/{id}", get(get_ann))
        .route("/interop/anns/{id}/retire", post(retire_ann))
        .route("/interop/train", post(train))
        .route("/detections", post(detection))
        .route("/swarm/tasks", post(submit_task))
        .route("/swarm/tasks/{id}", get(get_task))
        .route("/swarm/outbox/{machine_id}", get(outbox))
        .route("/swarm/assignments/{id}/status", post(set_status))
        .route("/swarm/efficacy", get(efficacy))
        .fallback(fallback)
        .method_not_allowed_fallback(method_not_allowed)
        .with_state(state)
}

pub(crate) fn json_response<T: Serialize>(status: StatusCode, value: &T) -> Response {
    let body = serde_json::to_vec(value).expect("response types always serialize");
    Response::builder()
        .status(status)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body))
        .expect("static headers are valid")
}

fn ok<T: Serialize>(value: &T) -> ApiResult {
    Ok(json_response(StatusCode::OK, value))
}

fn created<T: Serialize>(value: &T) -> ApiResult {
    Ok(json_response(StatusCode::CREATED, value))
}

fn body<T: DeserializeOwned>(bytes: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(bytes).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

fn id(raw: &str) -> Result<Id, ApiError> {
    raw.parse()
        .map_err(|_| ApiError::bad_request(format!("{raw:?} is not a valid id")))
}

fn params(q: Params) -> Result<BTreeMap<String, String>, ApiError> {
    q.map(|Query(m)| m)
        .map_err(|e| ApiError::bad_request(format!("invalid query string: {e}")))
}

fn expand(q: &BTreeMap<String, String>, ty: EntityType) -> Result<Vec<ExpansionPath>, ApiError> {
    Ok(parse_expand(q.get("expand").map_or("", String::as_str), ty)?)
}

/// Runs a store write off the async workers; commits may fsync.
async fn write<T, F>(state: &AppState, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Store) -> hivemind_core::Result<T> + Send + 'static,
{
    let store = state.store.clone();
    tokio::task::spawn_blocking(move || f(&store))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

fn rows<T>(rows: Vec<Row>, pick: impl Fn(Row) -> Option<T>) -> Vec<T> {
    rows.into_iter().filter_map(pick).collect()
}

fn concept_rows(
    state: &AppState,
    filter: Filter,
    paths: &[ExpansionPath],
) -> Result<Vec<hivemind_core::store::ConceptView>, ApiError> {
    let result = state.store.load_bulk(EntityType::Concept, &filter, paths)?;
    Ok(rows(result.rows, |r| match r {
        Row::Concept(c) => Some(c),
        _ => None,
    }))
}

fn machine_rows(
    state: &AppState,
    filter: Filter,
    paths: &[ExpansionPath],
) -> Result<Vec<hivemind_core::store::MachineView>, ApiError> {
    let result = state.store.load_bulk(EntityType::Machine, &filter, paths)?;
    Ok(rows(result.rows, |r| match r {
        Row::Machine(m) => Some(m),
        _ => None,
    }))
}

async fn fallback() -> ApiError {
    ApiError::not_found("no such route")
}

async fn method_not_allowed() -> ApiError {
    ApiError::new(
        StatusCode::METHOD_NOT_ALLOWED,
        "method_not_allowed",
        "method not allowed on this route",
    )
}

async fn create_concept(State(s): State<AppState>, raw: Bytes) -> ApiResult {
    let req: NewConcept = body(&raw)?;
    let concept = write(&s, move |store| {
        graph::create_concept(store, &req.name, &req.description)
    })
    .await?;
    created(&concept)
}

async fn list_concepts(State(s): State<AppState>, q: Params) -> ApiResult {
    let q = params(q)?;
    let paths = expand(&q, EntityType::Concept)?;
    let filter = q.get("name").map_or(Filter::All, |n| Filter::Name(n.clone()));
    ok(&concept_rows(&s, filter, &paths)?)
}

async fn get_concept(State(s): State<AppState>, Path(raw): Path<String>, q: Params) -> ApiResult {
    let q = params(q)?;
    let paths = expand(&q, EntityType::Concept)?;
    let id = id(&raw)?;
    match concept_rows(&s, Filter::Id(id), &paths)?.pop() {
        Some(c) => ok(&c),
        None => Err(hivemind_core::Error::UnknownEntity {
            kind: "concept",
            key: id.to_string(),
        }
        .into()),
    }
}

async fn delete_concept(State(s): State<AppState>, Path(raw): Path<String>) -> ApiResult {
    let id = id(&raw)?;
    let removed = write(&s, move |store| graph::delete_concept(store, id)).await?;
    ok(&Removed { removed })
}

async fn map_concept(State(s): State<AppState>, Path(raw): Path<String>, raw_body: Bytes) -> ApiResult {
    let source = id(&raw)?;
    let req: NewMapping = body(&raw_body)?;
    let mapping = write(&s, move |store| {
        graph::map_relation(store, source, req.kind, req.target, req.strength)
    })
    .await?;
    created(&mapping)
}

async fn unmap_concept(
    State(s): State<AppState>,
    Path((raw, kind, target)): Path<(String, String, String)>,
) -> ApiResult {
    let source = id(&raw)?;
    let target = id(&target)?;
    let kind: MappingKind = kind.parse()?;
    let removed = write(&s, move |store| graph::unmap_relation(store, source, kind, target)).await?;
    ok(&Removed { removed })
}

fn named(state: &hivemind_core::store::State, id: Id) -> String {
    state.concept(id).map(|c| c.name.clone()).unwrap_or_default()
}

async fn infer(State(s): State<AppState>, raw: Bytes) -> ApiResult {
    let evidence: Evidence = body(&raw)?;
    let snap = s.store.snapshot();
    let ranked: Vec<Ranked> = graph::infer_context(&snap, &evidence)?
        .into_iter()
        .map(|(concept_id, score)| Ranked {
            concept_id,
            name: named(&snap, concept_id),
            score,
        })
        .collect();
    ok(&ranked)
}

/// `evidence=3,4:0.8` means concept 3 at confidence 1 and concept 4 at 0.8.
fn parse_evidence(raw: &str) -> Result<Evidence, ApiError> {
    let mut items = Vec::new();
    for part in raw.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (id_part, conf) = match part.split_once(':') {
            Some((i, c)) => (
                i,
                c.parse::<f64>()
                    .map_err(|_| ApiError::bad_request(format!("bad confidence in evidence item {part:?}")))?,
            ),
            None => (part, 1.0),
        };
        items.push((id(id_part)?, conf));
    }
    Ok(Evidence::new(items))
}

async fn suggest(State(s): State<AppState>, Path(raw): Path<String>, q: Params) -> ApiResult {
    let q = params(q)?;
    let concept = id(&raw)?;
    let evidence = parse_evidence(q.get("evidence").map_or("", String::as_str))?;
    let snap = s.store.snapshot();
    let out: Vec<ConceptRef> = graph::suggest_next(&snap, concept, &evidence)?
        .into_iter()
        .map(|id| ConceptRef {
            id,
            name: named(&snap, id),
        })
        .collect();
    ok(&out)
}

async fn relevance(State(s): State<AppState>, Path(raw): Path<String>, raw_body: Bytes) -> ApiResult {
    let concept = id(&raw)?;
    let tokens: Vec<String> = body(&raw_body)?;
    let score = graph::score_text_relevance(&s.store.snapshot(), concept, &tokens)?;
    ok(&Relevance { score })
}

async fn register_machine(State(s): State<AppState>, raw: Bytes) -> ApiResult {
    let def: MachineDef = body(&raw)?;
    let machine = write(&s, move |store| registry::register_machine(store, &def)).await?;
    created(&machine)
}

async fn list_machines(State(s): State<AppState>, q: Params) -> ApiResult {
    let q = params(q)?;
    let paths = expand(&q, EntityType::Machine)?;
    let filter = q.get("name").map_or(Filter::All, |n| Filter::Name(n.clone()));
    ok(&machine_rows(&s, filter, &paths)?)
}

async fn get_machine(State(s): State<AppState>, Path(raw): Path<String>, q: Params) -> ApiResult {
    let q = params(q)?;
    let paths = expand(&q, EntityType::Machine)?;
    let id = id(&raw)?;
    match machine_rows(&s, Filter::Id(id), &paths)?.pop() {
        Some(m) => ok(&m),
        None => Err(hivemind_core::Error::UnknownEntity {
            kind: "machine",
            key: id.to_string(),
        }
        .into()),
    }
}

async fn bind_adapter(State(s): State<AppState>, Path(raw): Path<String>, raw_body: Bytes) -> ApiResult {
    let machine = id(&raw)?;
    let spec: BindingSpec = body(&raw_body)?;
    let binding = write(&s, move |store| registry::bind_adapter(store, machine, &spec)).await?;
    created(&binding)
}

async fn goal(State(s): State<AppState>, Path(raw): Path<String>, raw_body: Bytes) -> ApiResult {
    let machine = id(&raw)?;
    let goal: GeoPoint = body(&raw_body)?;
    let view = write(&s, move |store| swarm::dispatch_goal(store, machine, goal)).await?;
    created(&view)
}

async fn positions(State(s): State<AppState>) -> ApiResult {
    let snap = s.store.snapshot();
    let telemetry = s.telemetry.lock().expect("telemetry lock").clone();
    let out: Vec<UnitPosition> = snap
        .machines()
        .map(|m| match telemetry.get(&m.id) {
            Some(t) => UnitPosition {
                machine_id: m.id,
                name: m.name.clone(),
                location: t.location,
                heading: t.heading,
                source: PositionSource::Telemetry,
            },
            None => UnitPosition {
                machine_id: m.id,
                name: m.name.clone(),
                location: m.location,
                heading: 0.0,
                source: PositionSource::Registry,
            },
        })
        .collect();
    ok(&out)
}

async fn report_position(State(s): State<AppState>, raw: Bytes) -> ApiResult {
    let report: PositionReport = body(&raw)?;
    report.location.validate()?;
    if !report.heading.is_finite() {
        return Err(ApiError::bad_request("heading must be finite"));
    }
    if s.store.snapshot().machine(report.machine_id).is_none() {
        return Err(hivemind_core::Error::UnknownEntity {
            kind: "machine",
            key: report.machine_id.to_string(),
        }
        .into());
    }
    s.telemetry
        .lock()
        .expect("telemetry lock")
        .insert(report.machine_id, report);
    ok(&report)
}

async fn upload_ann(State(s): State<AppState>, raw: Bytes) -> ApiResult {
    let req: NewAnn = body(&raw)?;
    let up = write(&s, move |store| {
        interop::upload_ann(store, &req.name, &req.description, req.notation.as_bytes())
    })
    .await?;
    let view = AnnUploaded {
        created: up.created,
        package: up.package,
    };
    if view.created {
        created(&view)
    } else {
        ok(&view)
    }
}

async fn list_anns(State(s): State<AppState>) -> ApiResult {
    let anns: Vec<_> = s.store.snapshot().anns().cloned().collect();
    ok(&anns)
}

async fn get_ann(State(s): State<AppState>, Path(raw): Path<String>, q: Params) -> ApiResult {
    let q = params(q)?;
    let id = id(&raw)?;
    let format = q.get("format").map_or("decoded", String::as_str);
    if format != "packed" && format != "decoded" {
        return Err(ApiError::bad_request(format!(
            "unknown format {format:?}; use packed or decoded"
        )));
    }
    let snap = s.store.snapshot();
    let package = snap.ann(id).ok_or_else(|| hivemind_core::Error::UnknownEntity {
        kind: "ann",
        key: id.to_string(),
    })?;
    if format == "packed" {
        return Ok(Response::builder()
            .status(StatusCode::OK)
            .header(header::CONTENT_TYPE, "text/plain; charset=us-ascii")
            .body(Body::from(package.notation.clone()))
            .expect("static headers are valid"));
    }
    ok(&DecodedAnn {
        network: package.network()?,
        package: package.clone(),
    })
}

async fn retire_ann(State(s): State<AppState>, Path(raw): Path<String>) -> ApiResult {
    let id = id(&raw)?;
    let package = write(&s, move |store| {
        interop::retire_ann(store, id)?;
        store
            .snapshot()
            .ann(id)
            .cloned()
            .ok_or_else(|| hivemind_core::Error::UnknownEntity {
                kind: "ann",
                key: id.to_string(),
            })
    })
    .await?;
    ok(&package)
}

async fn train(State(s): State<AppState>, raw: Bytes) -> ApiResult {
    let req: TrainRequest = body(&raw)?;
    let result = write(&s, move |store| {
        let outcome = ann::train(&req.config, &req.dataset)?;
        let notation = ann::encode_network(&outcome.network)?;
        let package = match &req.upload {
            Some(meta) => Some(interop::upload_ann(store, &meta.name, &meta.description, notation.as_bytes())?.package),
            None => None,
        };
        Ok(TrainResult {
            notation,
            epochs: outcome.epochs,
            final_error: outcome.final_error,
            converged: outcome.converged,
            package,
        })
    })
    .await?;
    ok(&result)
}

async fn detection(State(s): State<AppState>, raw: Bytes) -> ApiResult {
    let r: DetectionReport = body(&raw)?;
    let key = MappingKey {
        concept: r.concept_id,
        ann: r.ann_id,
        machine: r.machine_id,
    };
    let record = write(&s, move |store| swarm::record_outcome(store, key, r.success)).await?;
    ok(&EfficacyView {
        score: swarm::efficacy_score(&record),
        record,
    })
}

async fn submit_task(State(s): State<AppState>, raw: Bytes) -> ApiResult {
    let req: TaskRequest = body(&raw)?;
    let view = write(&s, move |store| swarm::submit_task(store, &req)).await?;
    created(&view)
}

async fn get_task(State(s): State<AppState>, Path(raw): Path<String>) -> ApiResult {
    let id = id(&raw)?;
    match swarm::task_view(&s.store.snapshot(), id) {
        Some(v) => ok(&v),
        None => Err(hivemind_core::Error::UnknownEntity {
            kind: "task",
            key: id.to_string(),
        }
        .into()),
    }
}

async fn outbox(State(s): State<AppState>, Path(raw): Path<String>) -> ApiResult {
    let machine = id(&raw)?;
    let deliveries = write(&s, move |store| swarm::drain_outbox(store, machine)).await?;
    ok(&deliveries)
}

async fn set_status(State(s): State<AppState>, Path(raw): Path<String>, raw_body: Bytes) -> ApiResult {
    let id = id(&raw)?;
    let update: StatusUpdate = body(&raw_body)?;
    let assignment = write(&s, move |store| swarm::set_assignment_status(store, id, update.status)).await?;
    ok(&assignment)
}

async fn efficacy(State(s): State<AppState>) -> ApiResult {
    let out: Vec<EfficacyView> = s
        .store
        .snapshot()
        .efficacy_records()
        .map(|r| EfficacyView {
            record: *r,
            score: swarm::efficacy_score(r),
        })
        .collect();
    ok(&out)
}
