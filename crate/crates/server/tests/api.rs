use std::sync::Arc;

use hivemind_core::ann::{decode_network, encode_network};
use hivemind_core::geo::GeoPoint;
use hivemind_core::graph::{MappingKind, StrengthGrade};
use hivemind_core::registry::{ArgType, Argument, Command, MachineDef, Modality, MotorDef, SensorDef};
use hivemind_core::seed::import_seed;
use hivemind_core::store::{MachineView, Store};
use hivemind_server::wire::ErrorBody;
use hivemind_server::{router, status_for, ApiClient, Method, ERROR_CODES};

const XOR: &str = include_str!("../../../anns/xor.ann");
const BUILDING: &str = include_str!("../../../seeds/building.txt");

fn client() -> (Arc<Store>, ApiClient) {
    let store = Arc::new(Store::in_memory());
    let client = ApiClient::in_process(router(store.clone()));
    (store, client)
}

fn error(client: &ApiClient, method: Method, path: &str, body: Option<&str>) -> (u16, ErrorBody) {
    let resp = client.raw(method, path, body.map(|b| b.as_bytes().to_vec())).unwrap();
    let parsed: ErrorBody = serde_json::from_slice(&resp.body).unwrap();
    assert!(
        ERROR_CODES.contains(&parsed.code.as_str()),
        "undocumented code {}",
        parsed.code
    );
    assert_eq!(status_for(&parsed.code).as_u16(), resp.status);
    (resp.status, parsed)
}

fn rover(name: &str) -> MachineDef {
    MachineDef {
        name: name.into(),
        platform: "sim".into(),
        location: GeoPoint::new(0.0, 0.0, 0.0),
        motors: vec![MotorDef {
            name: "drive".into(),
            commands: vec![Command {
                name: "forward".into(),
                arguments: vec![Argument {
                    name: "mm".into(),
                    ty: ArgType::Int16,
                }],
            }],
        }],
        sensors: vec![SensorDef {
            name: "eye".into(),
            modality: Modality::Visual,
            channel_count: 4,
        }],
    }
}

#[test]
fn expansion_populates_only_requested_levels() {
    let (_, c) = client();
    c.register_machine(&rover("r1")).unwrap();
    let shallow = c.machines(None, &[]).unwrap();
    assert!(shallow[0].motors.is_none() && shallow[0].sensors.is_none());
    let one = c.machines(None, &["motors"]).unwrap();
    let motors = one[0].motors.as_ref().unwrap();
    assert_eq!(motors.len(), 1);
    assert!(motors[0].commands.is_none());
    let deep: MachineView = c.machine(one[0].id, &["motors.commands.arguments", "sensors"]).unwrap();
    let motors = deep.motors.unwrap();
    let cmd = &motors[0].commands.as_ref().unwrap()[0];
    assert_eq!(cmd.arguments.as_ref().unwrap()[0].ty, ArgType::Int16);
    assert_eq!(deep.sensors.unwrap().len(), 1);
    assert!(deep.adapters.is_none());
}

#[test]
fn bad_expand_is_rejected_with_400() {
    let (_, c) = client();
    for path in [
        "/machines?expand=motors..commands",
        "/machines/99?expand=wheels",
        "/concepts?expand=motors",
    ] {
        let (status, body) = error(&c, Method::Get, path, None);
        assert_eq!((status, body.code.as_str()), (400, "bad_expand"), "{path}");
    }
    // Rejected before the lookup, so the missing machine is not reported.
    let (_, body) = error(&c, Method::Get, "/machines/99?expand=a.b.c.d.e", None);
    assert_eq!(body.code, "bad_expand");
}

#[test]
fn duplicate_mapping_is_a_conflict() {
    let (_, c) = client();
    let a = c.create_concept("door", "").unwrap();
    let b = c.create_concept("knob", "").unwrap();
    let grade = StrengthGrade::new(0.8, 0.1).unwrap();
    c.map(a.id, MappingKind::Attribute, b.id, grade).unwrap();
    let err = c.map(a.id, MappingKind::Attribute, b.id, grade).unwrap_err();
    assert_eq!(err.code(), Some("duplicate_mapping"));
    let (status, body) = error(
        &c,
        Method::Post,
        &format!("/concepts/{}/mappings", a.id),
        Some(&format!(
            r#"{{"kind":"attribute","target":{},"strength":{{"mean":0.8,"std":0.1}}}}"#,
            b.id
        )),
    );
    assert_eq!(status, 409);
    assert_eq!(body.detail.unwrap()["target"], b.id);
    let (status, _) = error(&c, Method::Post, "/concepts", Some(r#"{"name":"DOOR"}"#));
    assert_eq!(status, 409);
}

#[test]
fn ann_upload_and_packed_passthrough() {
    let (_, c) = client();
    let up = c.upload_ann("xor", "exclusive or", XOR).unwrap();
    assert!(up.created);
    assert_eq!((up.package.input_count, up.package.output_count), (2, 1));
    let canonical = encode_network(&decode_network(XOR.as_bytes()).unwrap()).unwrap();
    assert_eq!(c.ann_packed(up.package.id).unwrap(), canonical.as_bytes());
    let decoded = c.ann(up.package.id).unwrap();
    assert_eq!(decoded.network.layers[1][0].threshold, 0.5);

    let again = c.upload_ann("xor", "", &canonical).unwrap();
    assert!(!again.created);
    assert_eq!(again.package.id, up.package.id);

    let (status, body) = error(
        &c,
        Method::Post,
        "/interop/anns",
        Some(r#"{"name":"bad","notation":"{\"v\":1,\"in\":2,\"layers\":[[{\"w\":[1,]}]]}"}"#),
    );
    assert_eq!((status, body.code.as_str()), (400, "malformed_notation"));
    assert!(body.detail.unwrap()["offset"].as_u64().is_some());

    let other = r#"{"v":1,"in":2,"layers":[[{"w":[1,1]}]]}"#;
    let err = c.upload_ann("xor", "", other).unwrap_err();
    assert_eq!(err.code(), Some("duplicate_name"));

    let shape = r#"{"v":1,"in":2,"layers":[[{"w":[1,1,1]}]]}"#;
    assert_eq!(c.upload_ann("s", "", shape).unwrap_err().code(), Some("shape_mismatch"));

    let (status, _) = error(
        &c,
        Method::Get,
        &format!("/interop/anns/{}?format=xml", up.package.id),
        None,
    );
    assert_eq!(status, 400);
}

#[test]
fn routing_errors_use_the_error_body() {
    let (_, c) = client();
    let (status, body) = error(&c, Method::Get, "/nowhere", None);
    assert_eq!((status, body.code.as_str()), (404, "not_found"));
    assert_eq!(error(&c, Method::Delete, "/infer", None).1.code, "method_not_allowed");
    assert_eq!(error(&c, Method::Get, "/concepts/42", None).1.code, "unknown_entity");
    assert_eq!(error(&c, Method::Get, "/concepts/abc", None).1.code, "bad_request");
    assert_eq!(error(&c, Method::Post, "/concepts", Some("{")).1.code, "bad_request");
    assert_eq!(error(&c, Method::Post, "/infer", Some("[]")).1.code, "empty_evidence");
}

#[test]
fn inference_and_suggestions_over_http() {
    let (_, c) = client();
    let report = import_seed(&mut &c, BUILDING).unwrap();
    assert_eq!((report.created.concepts, report.created.mappings), (6, 7));
    let again = import_seed(&mut &c, BUILDING).unwrap();
    assert_eq!(again.created, Default::default());
    assert_eq!(again.skipped, 13);

    let id = |n: &str| c.concept_by_name(n).unwrap().unwrap().id;
    let ev = hivemind_core::graph::Evidence::new([(id("wall"), 1.0), (id("roof"), 1.0)]);
    let ranked = c.infer(&ev).unwrap();
    assert_eq!(ranked[0].name, "building");
    assert!((ranked[0].score - 17.0 / 24.0).abs() <= 1e-12);
    let next = c.suggest(id("building"), &ev).unwrap();
    assert_eq!(next.iter().map(|r| r.name.as_str()).collect::<Vec<_>>(), ["door"]);
    let next = c.suggest(id("door"), &ev).unwrap();
    assert_eq!(
        next.iter().map(|r| r.name.as_str()).collect::<Vec<_>>(),
        ["knob", "exit"]
    );
    assert!(c.relevance(id("door"), &["door".into(), "knob".into()]).unwrap() > 0.0);
    assert!(c.unmap(id("door"), MappingKind::Action, id("exit")).unwrap());
    assert!(!c.unmap(id("door"), MappingKind::Action, id("exit")).unwrap());
}

#[test]
fn client_import_matches_direct_import() {
    let (_, c) = client();
    import_seed(&mut &c, BUILDING).unwrap();
    let direct = Store::in_memory();
    import_seed(&mut &direct, BUILDING).unwrap();
    let direct_client = ApiClient::in_process(router(Arc::new(direct)));
    let path = "/concepts?expand=attributes,actions,anns";
    assert_eq!(
        c.raw(Method::Get, path, None).unwrap(),
        direct_client.raw(Method::Get, path, None).unwrap()
    );
}

#[test]
fn goals_tasks_outbox_and_positions() {
    let (_, c) = client();
    let m = c.register_machine(&rover("r1")).unwrap();
    let goal = GeoPoint::new(1.0, 2.0, 0.0);
    let view = c.set_goal(m.id, goal).unwrap();
    assert_eq!(view.assignments.len(), 1);
    assert_eq!(view.assignments[0].status.as_str(), "queued");
    let delivered = c.poll_outbox(m.id).unwrap();
    assert_eq!(delivered.len(), 1);
    assert!(c.poll_outbox(m.id).unwrap().is_empty());
    let aid = delivered[0].assignment.id;
    assert_eq!(
        c.task(view.task.id).unwrap().assignments[0].status.as_str(),
        "delivered"
    );
    use hivemind_core::swarm::AssignmentStatus::*;
    c.set_status(aid, Running).unwrap();
    assert_eq!(
        c.set_status(aid, Queued).unwrap_err().code(),
        Some("invalid_transition")
    );
    c.set_status(aid, Done).unwrap();

    let pos = c.positions().unwrap();
    assert_eq!(pos[0].source, hivemind_server::wire::PositionSource::Registry);
    c.report_position(&hivemind_server::wire::PositionReport {
        machine_id: m.id,
        location: goal,
        heading: 1.0,
    })
    .unwrap();
    assert_eq!(c.positions().unwrap()[0].location, goal);
}

#[test]
fn training_can_upload_the_result() {
    use hivemind_core::ann::{Sample, TrainConfig, WeightInit};
    use hivemind_server::wire::{AnnMeta, TrainRequest};
    let (_, c) = client();
    let data = vec![
        Sample::new(vec![0.0, 0.0], vec![0.0]),
        Sample::new(vec![0.0, 1.0], vec![1.0]),
        Sample::new(vec![1.0, 0.0], vec![1.0]),
        Sample::new(vec![1.0, 1.0], vec![1.0]),
    ];
    let req = TrainRequest {
        config: TrainConfig {
            topology: vec![2, 1],
            learning_rate: 2.0,
            max_epochs: 2000,
            target_error: 0.01,
            seed: 1,
            batch_size: None,
            init: WeightInit::default(),
        },
        dataset: data,
        upload: Some(AnnMeta {
            name: "or".into(),
            description: "".into(),
        }),
    };
    let out = c.train(&req).unwrap();
    let pkg = out.package.unwrap();
    assert_eq!(c.ann_packed(pkg.id).unwrap(), out.notation.as_bytes());
}
