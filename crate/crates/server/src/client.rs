//! Blocking client for the service API, usable over real HTTP or directly
//! against a [`Router`] in the same process.

use std::time::Duration;

use axum::body::Body;
use axum::Router;
use hivemind_core::geo::GeoPoint;
use hivemind_core::graph::{Concept, Evidence, MappingKind, RelationMapping, StrengthGrade};
use hivemind_core::interop::AnnPackage;
use hivemind_core::registry::{AdapterBinding, BindingSpec, Machine, MachineDef};
use hivemind_core::seed::SeedSink;
use hivemind_core::store::{ConceptView, MachineView};
use hivemind_core::swarm::{Assignment, AssignmentStatus, Delivery, TaskRequest, TaskView};
use hivemind_core::Id;
use serde::de::DeserializeOwned;
use serde::Serialize;
use tower::ServiceExt;

use crate::wire::*;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("{status} {}: {}", .body.code, .body.message)]
    Api { status: u16, body: ErrorBody },
    #[error("undecodable response: {0}")]
    Decode(String),
}

impl ClientError {
    /// The service error code, if the server answered with one.
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Api { body, .. } => Some(&body.code),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Get,
    Post,
    Delete,
}

impl Method {
    fn as_str(self) -> &'static str {
        match self {
            Method::Get => "GET",
            Method::Post => "POST",
            Method::Delete => "DELETE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

pub trait Transport: Send + Sync {
    /// `path` includes the query string.
    fn send(&self, method: Method, path: &str, body: Option<Vec<u8>>) -> Result<RawResponse, ClientError>;
}

pub struct HttpTransport {
    base: String,
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(base_url: &str) -> Result<Self, ClientError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        Ok(Self {
            base: base_url.trim_end_matches('/').to_string(),
            client,
        })
    }
}

impl Transport for HttpTransport {
    fn send(&self, method: Method, path: &str, body: Option<Vec<u8>>) -> Result<RawResponse, ClientError> {
        let url = format!("{}{}", self.base, path);
        let mut req = match method {
            Method::Get => self.client.get(&url),
            Method::Post => self.client.post(&url),
            Method::Delete => self.client.delete(&url),
        };
        if let Some(b) = body {
            req = req.header("content-type", "application/json").body(b);
        }
        let resp = req.send().map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .bytes()
            .map_err(|e| ClientError::Transport(e.to_string()))?
            .to_vec();
        Ok(RawResponse { status, body })
    }
}

/// Drives a router without a socket. Must not be used from inside an async context.
pub struct InProcessTransport {
    router: Router,
    runtime: tokio::runtime::Runtime,
}

impl InProcessTransport {
    pub fn new(router: Router) -> Self {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .expect("tokio runtime");
        Self { router, runtime }
    }
}

impl Transport for InProcessTransport {
    fn send(&self, method: Method, path: &str, body: Option<Vec<u8>>) -> Result<RawResponse, ClientError> {
        let mut builder = axum::http::Request::builder().method(method.as_str()).uri(path);
        if body.is_some() {
            builder = builder.header("content-type", "application/json");
        }
        let req = builder
            .body(Body::from(body.unwrap_or_default()))
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        let router = self.router.clone();
        self.runtime.block_on(async move {
            let resp = router
                .oneshot(req)
                .await
                .map_err(|e| ClientError::Transport(e.to_string()))?;
            let status = resp.status().as_u16();
            let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX)
                .await
                .map_err(|e| ClientError::Transport(e.to_string()))?;
            Ok(RawResponse {
                status,
                body: bytes.to_vec(),
            })
        })
    }
}

fn encode(raw: &str) -> String {
    url::form_urlencoded::byte_serialize(raw.as_bytes()).collect()
}

fn expand_query(expand: &[&str]) -> String {
    if expand.is_empty() {
        String::new()
    } else {
        format!("expand={}", encode(&expand.join(",")))
    }
}

pub struct ApiClient {
    transport: Box<dyn Transport>,
}

impl ApiClient {
    pub fn new(transport: impl Transport + 'static) -> Self {
        Self {
            transport: Box::new(transport),
        }
    }

    pub fn http(base_url: &str) -> Result<Self, ClientError> {
        Ok(Self::new(HttpTransport::new(base_url)?))
    }

    pub fn in_process(router: Router) -> Self {
        Self::new(InProcessTransport::new(router))
    }

    /// Sends a request and returns the raw response, whatever its status.
    pub fn raw(&self, method: Method, path: &str, body: Option<Vec<u8>>) -> Result<RawResponse, ClientError> {
        self.transport.send(method, path, body)
    }

    fn call<T: DeserializeOwned>(
        &self,
        method: Method,
        path: &str,
        body: Option<&impl Serialize>,
    ) -> Result<T, ClientError> {
        let bytes = body
            .map(|b| serde_json::to_vec(b).map_err(|e| ClientError::Transport(e.to_string())))
            .transpose()?;
        let resp = self.transport.send(method, path, bytes)?;
        if !(200..300).contains(&resp.status) {
            let body = serde_json::from_slice(&resp.body).map_err(|e| ClientError::Decode(e.to_string()))?;
            return Err(ClientError::Api {
                status: resp.status,
                body,
            });
        }
        serde_json::from_slice(&resp.body).map_err(|e| ClientError::Decode(e.to_string()))
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        self.call(Method::Get, path, None::<&()>)
    }

    fn post<T: DeserializeOwned>(&self, path: &str, body: &impl Serialize) -> Result<T, ClientError> {
        self.call(Method::Post, path, Some(body))
    }

    pub fn create_concept(&self, name: &str, description: &str) -> Result<Concept, ClientError> {
        self.post(
            "/concepts",
            &NewConcept {
                name: name.into(),
                description: description.into(),
            },
        )
    }

    pub fn concept(&self, id: Id, expand: &[&str]) -> Result<ConceptView, ClientError> {
        self.get(&format!("/concepts/{id}?{}", expand_query(expand)))
    }

    pub fn concepts(&self, name: Option<&str>, expand: &[&str]) -> Result<Vec<ConceptView>, ClientError> {
        let mut q = vec![expand_query(expand)];
        if let Some(n) = name {
            q.push(format!("name={}", encode(n)));
        }
        self.get(&format!("/concepts?{}", q.join("&")))
    }

    pub fn concept_by_name(&self, name: &str) -> Result<Option<ConceptView>, ClientError> {
        Ok(self.concepts(Some(name), &[])?.into_iter().next())
    }

    pub fn delete_concept(&self, id: Id) -> Result<bool, ClientError> {
        let r: Removed = self.call(Method::Delete, &format!("/concepts/{id}"), None::<&()>)?;
        Ok(r.removed)
    }

    pub fn map(
        &self,
        source: Id,
        kind: MappingKind,
        target: Id,
        strength: StrengthGrade,
    ) -> Result<RelationMapping, ClientError> {
        self.post(
            &format!("/concepts/{source}/mappings"),
            &NewMapping { kind, target, strength },
        )
    }

    pub fn unmap(&self, source: Id, kind: MappingKind, target: Id) -> Result<bool, ClientError> {
        let r: Removed = self.call(
            Method::Delete,
            &format!("/concepts/{source}/mappings/{kind}/{target}"),
            None::<&()>,
        )?;
        Ok(r.removed)
    }

    pub fn infer(&self, evidence: &Evidence) -> Result<Vec<Ranked>, ClientError> {
        self.post("/infer", evidence)
    }

    pub fn suggest(&self, concept: Id, evidence: &Evidence) -> Result<Vec<ConceptRef>, ClientError> {
        let items: Vec<String> = evidence
            .0
            .iter()
            .map(|e| format!("{}:{}", e.concept, e.confidence))
            .collect();
        self.get(&format!(
            "/concepts/{concept}/suggest?evidence={}",
            encode(&items.join(","))
        ))
    }

    pub fn relevance(&self, concept: Id, tokens: &[String]) -> Result<f64, ClientError> {
        let r: Relevance = self.post(&format!("/concepts/{concept}/relevance"), &tokens)?;
        Ok(r.score)
    }

    pub fn register_machine(&self, def: &MachineDef) -> Result<Machine, ClientError> {
        self.post("/machines", def)
    }

    pub fn machines(&self, name: Option<&str>, expand: &[&str]) -> Result<Vec<MachineView>, ClientError> {
        let mut q = vec![expand_query(expand)];
        if let Some(n) = name {
            q.push(format!("name={}", encode(n)));
        }
        self.get(&format!("/machines?{}", q.join("&")))
    }

    pub fn machine(&self, id: Id, expand: &[&str]) -> Result<MachineView, ClientError> {
        self.get(&format!("/machines/{id}?{}", expand_query(expand)))
    }

    pub fn bind_adapter(&self, machine: Id, spec: &BindingSpec) -> Result<AdapterBinding, ClientError> {
        self.post(&format!("/machines/{machine}/adapters"), spec)
    }

    pub fn set_goal(&self, machine: Id, goal: GeoPoint) -> Result<TaskView, ClientError> {
        self.post(&format!("/machines/{machine}/goal"), &goal)
    }

    pub fn positions(&self) -> Result<Vec<UnitPosition>, ClientError> {
        self.get("/swarm/positions")
    }

    pub fn report_position(&self, report: &PositionReport) -> Result<PositionReport, ClientError> {
        self.post("/swarm/positions", report)
    }

    pub fn upload_ann(&self, name: &str, description: &str, notation: &str) -> Result<AnnUploaded, ClientError> {
        self.post(
            "/interop/anns",
            &NewAnn {
                name: name.into(),
                description: description.into(),
                notation: notation.into(),
            },
        )
    }

    pub fn anns(&self) -> Result<Vec<AnnPackage>, ClientError> {
        self.get("/interop/anns")
    }

    pub fn ann(&self, id: Id) -> Result<DecodedAnn, ClientError> {
        self.get(&format!("/interop/anns/{id}?format=decoded"))
    }

    /// The stored canonical notation, byte for byte.
    pub fn ann_packed(&self, id: Id) -> Result<Vec<u8>, ClientError> {
        let resp = self
            .transport
            .send(Method::Get, &format!("/interop/anns/{id}?format=packed"), None)?;
        if resp.status != 200 {
            let body = serde_json::from_slice(&resp.body).map_err(|e| ClientError::Decode(e.to_string()))?;
            return Err(ClientError::Api {
                status: resp.status,
                body,
            });
        }
        Ok(resp.body)
    }

    pub fn retire_ann(&self, id: Id) -> Result<AnnPackage, ClientError> {
        self.post(&format!("/interop/anns/{id}/retire"), &())
    }

    pub fn train(&self, req: &TrainRequest) -> Result<TrainResult, ClientError> {
        self.post("/interop/train", req)
    }

    pub fn report_detection(&self, report: &DetectionReport) -> Result<EfficacyView, ClientError> {
        self.post("/detections", report)
    }

    pub fn submit_task(&self, req: &TaskRequest) -> Result<TaskView, ClientError> {
        self.post("/swarm/tasks", req)
    }

    pub fn task(&self, id: Id) -> Result<TaskView, ClientError> {
        self.get(&format!("/swarm/tasks/{id}"))
    }

    pub fn poll_outbox(&self, machine: Id) -> Result<Vec<Delivery>, ClientError> {
        self.get(&format!("/swarm/outbox/{machine}"))
    }

    pub fn set_status(&self, assignment: Id, status: AssignmentStatus) -> Result<Assignment, ClientError> {
        self.post(
            &format!("/swarm/assignments/{assignment}/status"),
            &StatusUpdate { status },
        )
    }

    pub fn efficacy(&self) -> Result<Vec<EfficacyView>, ClientError> {
        self.get("/swarm/efficacy")
    }
}

/// Seed import through the service API.
impl SeedSink for &ApiClient {
    type Error = ClientError;

    fn find_concept(&mut self, name: &str) -> Result<Option<Id>, ClientError> {
        Ok(self.concept_by_name(name)?.map(|c| c.id))
    }

    fn create_concept(&mut self, name: &str, description: &str) -> Result<Id, ClientError> {
        Ok(ApiClient::create_concept(self, name, description)?.id)
    }

    fn find_ann(&mut self, name: &str) -> Result<Option<Id>, ClientError> {
        Ok(self.anns()?.into_iter().find(|a| a.name == name).map(|a| a.id))
    }

    fn upload_ann(&mut self, name: &str, description: &str, notation: &str) -> Result<Id, ClientError> {
        Ok(ApiClient::upload_ann(self, name, description, notation)?.package.id)
    }

    fn find_machine(&mut self, name: &str) -> Result<Option<Id>, ClientError> {
        Ok(self
            .machines(Some(name), &[])?
            .into_iter()
            .find(|m| m.name == name)
            .map(|m| m.id))
    }

    fn register_machine(&mut self, def: &MachineDef) -> Result<Id, ClientError> {
        Ok(ApiClient::register_machine(self, def)?.id)
    }

    fn has_mapping(&mut self, source: Id, kind: MappingKind, target: Id) -> Result<bool, ClientError> {
        let view = self.concept(source, &[kind_path(kind)])?;
        Ok(match kind {
            MappingKind::Attribute => view.attributes.unwrap_or_default().iter().any(|l| l.target == target),
            MappingKind::Action => view.actions.unwrap_or_default().iter().any(|l| l.target == target),
            MappingKind::Ann => view.anns.unwrap_or_default().iter().any(|l| l.target == target),
        })
    }

    fn map(&mut self, source: Id, kind: MappingKind, target: Id, strength: StrengthGrade) -> Result<(), ClientError> {
        ApiClient::map(self, source, kind, target, strength).map(|_| ())
    }
}

fn kind_path(kind: MappingKind) -> &'static str {
    match kind {
        MappingKind::Attribute => "attributes",
        MappingKind::Action => "actions",
        MappingKind::Ann => "anns",
    }
}
