//! Acceptance suite. Prints one PASS or FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::{Command, ExitCode, Stdio};
use std::sync::{Arc, Barrier, Mutex};
use std::time::{Duration, Instant};

use hivemind_core::ann::{
    batch_loss, decode_network, encode_network, format_number, gradient, initial_network, train, Activation,
    NetworkSpec, Neuron, Sample, TrainConfig, WeightInit,
};
use hivemind_core::geo::GeoPoint;
use hivemind_core::graph::{
    create_concept, delete_concept, infer_context, map_relation, unmap_relation, Evidence, MappingKind, StrengthGrade,
};
use hivemind_core::interop::{retire_ann, upload_ann};
use hivemind_core::registry::{
    bind_adapter, register_machine, ArgType, Argument, BindingSpec, Command as MotorCommand, MachineDef, Modality,
    MotorDef, SensorChannel, SensorDef,
};
use hivemind_core::seed::import_seed;
use hivemind_core::store::{all_paths, EntityType, ExpansionPath, Filter, State, Store, StoreOptions};
use hivemind_core::swarm::{record_outcome, select_implementation, MachineFilter, MappingKey};
use hivemind_core::{Error, Id};
use hivemind_server::{ApiClient, BackgroundServer, Method};
use hivemind_sim::{run_scenario, Scenario};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde_json::{json, Value};

type Outcome = Result<String, String>;
type Criterion = fn() -> Outcome;

fn root() -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../.."))
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, started: Instant) -> Result<Duration, String> {
    let took = started.elapsed();
    check(took < limit, || format!("took {took:.2?}, limit {limit:?}"))?;
    Ok(took)
}

// ---------------------------------------------------------------- codec

fn random_float(rng: &mut Xoshiro256PlusPlus) -> f64 {
    loop {
        let x = match rng.random_range(0..4) {
            0 => f64::from_bits(rng.random()),
            1 => rng.random_range(-10.0..10.0),
            2 => rng.random_range(-4i32..=4) as f64 / 4.0,
            _ => rng.random::<f64>() * 10f64.powi(rng.random_range(-300..300)),
        };
        if x.is_finite() {
            return x;
        }
    }
}

fn random_network(rng: &mut Xoshiro256PlusPlus) -> NetworkSpec {
    let input_count = rng.random_range(1..=8);
    let mut fan_in = input_count;
    let layers = (0..rng.random_range(1..=4))
        .map(|_| {
            let n = rng.random_range(1..=8);
            let layer = (0..n)
                .map(|_| Neuron::new(random_float(rng), (0..fan_in).map(|_| random_float(rng)).collect()))
                .collect();
            fan_in = n;
            layer
        })
        .collect();
    NetworkSpec {
        version: rng.random_range(1..=3),
        activation: if rng.random_bool(0.5) {
            Activation::Step
        } else {
            Activation::Logistic
        },
        input_count,
        layers,
    }
}

fn same_values(a: &NetworkSpec, b: &NetworkSpec) -> bool {
    a.version == b.version
        && a.activation == b.activation
        && a.input_count == b.input_count
        && a.layers.len() == b.layers.len()
        && a.layers.iter().zip(&b.layers).all(|(la, lb)| {
            la.len() == lb.len()
                && la.iter().zip(lb).all(|(na, nb)| {
                    na.threshold.to_bits() == nb.threshold.to_bits()
                        && na.weights.len() == nb.weights.len()
                        && na
                            .weights
                            .iter()
                            .zip(&nb.weights)
                            .all(|(x, y)| x.to_bits() == y.to_bits())
                })
        })
}

fn codec_round_trip() -> Outcome {
    let started = Instant::now();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(0xC0DEC);
    for i in 0..10_000 {
        let net = random_network(&mut rng);
        let text = encode_network(&net).map_err(|e| format!("network {i}: {e}"))?;
        let back = decode_network(text.as_bytes()).map_err(|e| format!("network {i}: {e}"))?;
        check(same_values(&net, &back), || format!("network {i} changed: {text}"))?;
    }
    let mut floats = 0;
    while floats < 1_000 {
        let x = f64::from_bits(rng.random());
        if !x.is_finite() {
            continue;
        }
        let s = format_number(x);
        let y: f64 = s.parse().map_err(|e| format!("{s}: {e}"))?;
        check(y.to_bits() == x.to_bits(), || format!("{x:e} rendered as {s}"))?;
        floats += 1;
    }
    let took = within(Duration::from_secs(10), started)?;
    Ok(format!("10000 networks, 1000 floats, {took:.2?}"))
}

fn default_threshold() -> Outcome {
    let net = decode_network(br#"{"v":1,"in":2,"layers":[[{"w":[1,1]},{"t":0.25,"w":[1,1]}]]}"#)
        .map_err(|e| e.to_string())?;
    let t = net.layers[0][0].threshold;
    check(t == 0.5, || format!("threshold {t}"))?;
    check(net.layers[0][1].threshold == 0.25, || "explicit threshold lost".into())?;
    Ok("missing \"t\" decodes to 0.5".into())
}

// ---------------------------------------------------------------- trainer

fn trainer() -> Outcome {
    let started = Instant::now();
    let xor: Vec<Sample> = [(0.0, 0.0, 0.0), (0.0, 1.0, 1.0), (1.0, 0.0, 1.0), (1.0, 1.0, 0.0)]
        .iter()
        .map(|&(a, b, t)| Sample::new(vec![a, b], vec![t]))
        .collect();
    let request: Value =
        serde_json::from_str(&std::fs::read_to_string(root().join("anns/xor.train.json")).unwrap()).unwrap();
    let config: TrainConfig = serde_json::from_value(request["config"].clone()).map_err(|e| e.to_string())?;
    check(config.topology == [2, 2, 1] && config.max_epochs <= 20_000, || {
        "unexpected recorded config".into()
    })?;
    let out = train(&config, &xor).map_err(|e| e.to_string())?;
    let correct = xor
        .iter()
        .filter(|s| (out.network.evaluate(&s.input).unwrap()[0] >= 0.5) == (s.target[0] >= 0.5))
        .count();
    check(correct == 4, || format!("xor {correct}/4 after {} epochs", out.epochs))?;
    check(out.epochs <= 20_000, || format!("{} epochs", out.epochs))?;

    let mut worst: f64 = 0.0;
    let eps = 1e-5;
    for trial in 0..25u64 {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(7_000 + trial);
        let mut net = initial_network(&TrainConfig {
            topology: vec![2, 3, 2],
            learning_rate: 0.1,
            max_epochs: 1,
            target_error: 0.0,
            seed: trial,
            batch_size: None,
            init: WeightInit::Uniform,
        });
        for n in net.layers.iter_mut().flatten() {
            n.threshold = rng.random_range(-1.5..1.5);
            n.weights.iter_mut().for_each(|w| *w = rng.random_range(-1.5..1.5));
        }
        let batch: Vec<Sample> = (0..4)
            .map(|_| {
                Sample::new(
                    vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                    vec![rng.random(), rng.random()],
                )
            })
            .collect();
        // Half the mean squared error, computed from the evaluator alone.
        let loss = |n: &NetworkSpec| {
            batch
                .iter()
                .map(|s| {
                    let y = n.evaluate(&s.input).unwrap();
                    0.5 * y.iter().zip(&s.target).map(|(y, t)| (y - t).powi(2)).sum::<f64>()
                })
                .sum::<f64>()
                / batch.len() as f64
        };
        check((batch_loss(&net, &batch) - loss(&net)).abs() < 1e-15, || {
            "loss definitions differ".into()
        })?;
        let g = gradient(&net, &batch);
        for li in 0..net.layers.len() {
            for ni in 0..net.layers[li].len() {
                for wi in 0..=net.layers[li][ni].weights.len() {
                    let probe = |d: f64| {
                        let mut p = net.clone();
                        let n = &mut p.layers[li][ni];
                        if wi == n.weights.len() {
                            n.threshold += d;
                        } else {
                            n.weights[wi] += d;
                        }
                        loss(&p)
                    };
                    let numeric = (probe(eps) - probe(-eps)) / (2.0 * eps);
                    let gn = &g.layers[li][ni];
                    let analytic = if wi == gn.weights.len() {
                        gn.threshold
                    } else {
                        gn.weights[wi]
                    };
                    let scale = analytic.abs().max(numeric.abs());
                    let rel = if scale < 1e-8 {
                        (analytic - numeric).abs()
                    } else {
                        (analytic - numeric).abs() / scale
                    };
                    worst = worst.max(rel);
                    check(rel <= 1e-6, || {
                        format!("trial {trial} layer {li} neuron {ni} param {wi}: {analytic} vs {numeric}")
                    })?;
                }
            }
        }
    }
    let took = within(Duration::from_secs(30), started)?;
    Ok(format!(
        "xor 4/4 in {} epochs, worst gradient error {worst:.1e}, {took:.2?}",
        out.epochs
    ))
}

// ---------------------------------------------------------------- manifesting

const NET1: &[u8] = br#"{"v":1,"in":1,"layers":[[{"w":[1.0]}]]}"#;

fn random_registry(rng: &mut Xoshiro256PlusPlus) -> Store {
    let store = Store::in_memory();
    let net = upload_ann(&store, "det", "", NET1).unwrap().package.id;
    for m in 0..rng.random_range(0..=20) {
        let motors = (0..rng.random_range(0..=5))
            .map(|i| MotorDef {
                name: format!("motor{i}"),
                commands: (0..rng.random_range(0..=3))
                    .map(|c| MotorCommand {
                        name: format!("cmd{c}"),
                        arguments: (0..rng.random_range(0..=3))
                            .map(|a| Argument {
                                name: format!("arg{a}"),
                                ty: [ArgType::Int8, ArgType::Int16, ArgType::Float32][rng.random_range(0..3)],
                            })
                            .collect(),
                    })
                    .collect(),
            })
            .collect();
        let sensors = (0..rng.random_range(0..=3))
            .map(|i| SensorDef {
                name: format!("sensor{i}"),
                modality: [Modality::Visual, Modality::Audio][rng.random_range(0..2)],
                channel_count: rng.random_range(1..=4),
            })
            .collect();
        let machine = register_machine(
            &store,
            &MachineDef {
                name: format!("machine{m}"),
                platform: ["sim", "rover"][rng.random_range(0..2)].into(),
                location: GeoPoint::new(rng.random_range(-80.0..80.0), rng.random_range(-170.0..170.0), 0.0),
                motors,
                sensors,
            },
        )
        .unwrap();
        for _ in 0..rng.random_range(0..=2) {
            let Some(s) = machine.sensors.first() else { break };
            bind_adapter(
                &store,
                machine.id,
                &BindingSpec {
                    detection_ann: net,
                    response_ann: net,
                    sensor_map: vec![SensorChannel {
                        sensor_id: s.id,
                        channel: 0,
                    }],
                    motor_map: vec![],
                },
            )
            .unwrap();
        }
    }
    store
}

/// Builds the expected rows straight from the stored machines.
fn manifest_oracle(state: &State, paths: &[ExpansionPath]) -> Value {
    let wanted: BTreeSet<String> = paths.iter().map(|p| p.segments().join(".")).collect();
    let has = |p: &str| wanted.iter().any(|w| w == p || w.starts_with(&format!("{p}.")));
    let mut rows = Vec::new();
    for m in state.machines() {
        let mut row = json!({"id": m.id, "name": m.name, "platform": m.platform, "location": m.location});
        if has("motors") {
            let motors: Vec<Value> = m
                .motors
                .iter()
                .map(|motor| {
                    let mut v = json!({"id": motor.id, "name": motor.name});
                    if has("motors.commands") {
                        let cmds: Vec<Value> = motor
                            .commands
                            .iter()
                            .map(|c| {
                                let mut cv = json!({"name": c.name});
                                if has("motors.commands.arguments") {
                                    cv["arguments"] = serde_json::to_value(&c.arguments).unwrap();
                                }
                                cv
                            })
                            .collect();
                        v["commands"] = Value::Array(cmds);
                    }
                    v
                })
                .collect();
            row["motors"] = Value::Array(motors);
        }
        if has("sensors") {
            row["sensors"] = serde_json::to_value(&m.sensors).unwrap();
        }
        if has("adapters") {
            row["adapters"] = serde_json::to_value(state.bindings_for(m.id).collect::<Vec<_>>()).unwrap();
        }
        rows.push(row);
    }
    Value::Array(rows)
}

fn manifesting() -> Outcome {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(0x3A41);
    let every = all_paths(EntityType::Machine);
    let mut chunks = 0;
    for trial in 0..200 {
        let store = random_registry(&mut rng);
        let paths: Vec<ExpansionPath> = every.iter().filter(|_| rng.random_bool(0.4)).cloned().collect();
        let bulk = store
            .load_bulk(EntityType::Machine, &Filter::All, &paths)
            .map_err(|e| e.to_string())?;
        let got = serde_json::to_value(&bulk.rows).unwrap();
        let want = manifest_oracle(&store.snapshot(), &paths);
        check(got == want, || {
            format!("trial {trial}: bulk differs from oracle for {paths:?}")
        })?;

        let chunk = rng.random_range(1..=6);
        let mut cursor = store
            .open_stream(EntityType::Machine, &Filter::All, chunk)
            .map_err(|e| e.to_string())?;
        let mut streamed = Vec::new();
        while !cursor.is_exhausted() {
            let part = cursor.manifest_chunk(&paths).map_err(|e| e.to_string())?;
            check(part.len() <= chunk, || "oversized chunk".into())?;
            streamed.extend(part);
            chunks += 1;
        }
        check(streamed == bulk.rows, || {
            format!("trial {trial}: streamed chunks differ from bulk")
        })?;
    }
    Ok(format!("200 registries, {chunks} chunks"))
}

// ---------------------------------------------------------------- inference

fn inference() -> Outcome {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(0x1AF);
    for trial in 0..200 {
        let store = Store::in_memory();
        let n = rng.random_range(1..=50);
        let ids: Vec<Id> = (0..n)
            .map(|i| create_concept(&store, &format!("c{i}"), "").unwrap().id)
            .collect();
        let ann = upload_ann(&store, "net", "", NET1).unwrap().package.id;
        // (source, kind, target, mean) as written.
        let mut edges: BTreeMap<(Id, u8, Id), f64> = BTreeMap::new();
        for _ in 0..rng.random_range(0..=n * 3) {
            let s = ids[rng.random_range(0..n)];
            let (kind, code, t) = match rng.random_range(0..5) {
                0 => (MappingKind::Ann, 0, ann),
                1 | 2 => (MappingKind::Action, 1, ids[rng.random_range(0..n)]),
                _ => (MappingKind::Attribute, 2, ids[rng.random_range(0..n)]),
            };
            let mean = if rng.random_bool(0.1) { 0.0 } else { rng.random::<f64>() };
            if map_relation(&store, s, kind, t, StrengthGrade::new(mean, 0.1).unwrap()).is_ok() {
                edges.insert((s, code, t), mean);
            }
        }
        let mut evidence: BTreeMap<Id, f64> = BTreeMap::new();
        for &id in &ids {
            if rng.random_bool(0.3) {
                evidence.insert(id, if rng.random_bool(0.2) { 1.0 } else { rng.random() });
            }
        }
        if evidence.is_empty() {
            evidence.insert(ids[0], 1.0);
        }

        let mut want: Vec<(Id, f64)> = Vec::new();
        for &c in &ids {
            let own: Vec<(Id, f64)> = edges
                .iter()
                .filter(|((s, code, _), _)| *s == c && *code != 0)
                .map(|((_, _, t), m)| (*t, *m))
                .collect();
            if !own.iter().any(|(t, _)| evidence.contains_key(t)) {
                continue;
            }
            let total: f64 = own.iter().map(|(_, m)| m).sum();
            let hit: f64 = own.iter().filter_map(|(t, m)| evidence.get(t).map(|cf| m * cf)).sum();
            want.push((c, if total > 0.0 { hit / total } else { 0.0 }));
        }
        want.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));

        let got = infer_context(
            &store.snapshot(),
            &Evidence::new(evidence.iter().map(|(k, v)| (*k, *v))),
        )
        .map_err(|e| e.to_string())?;
        check(got.len() == want.len(), || {
            format!("trial {trial}: {} ranked, oracle {}", got.len(), want.len())
        })?;
        let got_scores: BTreeMap<Id, f64> = got.iter().copied().collect();
        for (id, s) in &want {
            let g = got_scores.get(id).copied().unwrap_or(f64::NAN);
            check((g - s).abs() <= 1e-12, || {
                format!("trial {trial}: concept {id} scored {g}, oracle {s}")
            })?;
        }
        for (pos, (a, b)) in got.iter().zip(&want).enumerate() {
            check(a.0 == b.0 || (a.1 - b.1).abs() <= 1e-12, || {
                format!("trial {trial}: rank {pos} differs")
            })?;
        }
    }

    let store = Store::in_memory();
    import_seed(
        &mut &store,
        &std::fs::read_to_string(root().join("seeds/building.txt")).unwrap(),
    )
    .map_err(|e| e.to_string())?;
    let snap = store.snapshot();
    let id = |n: &str| snap.concept_by_name(n).unwrap().id;
    let ranked =
        infer_context(&snap, &Evidence::new([(id("wall"), 1.0), (id("roof"), 1.0)])).map_err(|e| e.to_string())?;
    check(ranked[0].0 == id("building"), || format!("top concept {}", ranked[0].0))?;
    let err = (ranked[0].1 - 17.0 / 24.0).abs();
    check(err <= 1e-12, || format!("building scored {}", ranked[0].1))?;
    Ok(format!(
        "200 random graphs, building = {} (|err| {err:.1e})",
        ranked[0].1
    ))
}

// ---------------------------------------------------------------- selection

fn selection() -> Outcome {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(0x5E1);
    let mut compared = 0;
    for trial in 0..200 {
        let store = Store::in_memory();
        let concept = create_concept(&store, "target", "").unwrap().id;
        let other = create_concept(&store, "other", "").unwrap().id;
        let mut eligible_anns = Vec::new();
        let mut all_anns = Vec::new();
        for i in 0..rng.random_range(1..=10) {
            let a = upload_ann(&store, &format!("a{i}"), "", NET1).unwrap().package.id;
            all_anns.push(a);
            let mine = rng.random_bool(0.85);
            map_relation(
                &store,
                if mine { concept } else { other },
                MappingKind::Ann,
                a,
                StrengthGrade::new(0.5, 0.0).unwrap(),
            )
            .unwrap();
            let retired = rng.random_bool(0.15);
            if retired {
                retire_ann(&store, a).unwrap();
            }
            if mine && !retired {
                eligible_anns.push(a);
            }
        }
        let mut machines: Vec<(Id, &str, Vec<Id>)> = Vec::new();
        for j in 0..rng.random_range(1..=10) {
            let platform = ["sim", "rover"][rng.random_range(0..2)];
            let m = register_machine(
                &store,
                &MachineDef {
                    name: format!("m{j}"),
                    platform: platform.into(),
                    location: GeoPoint::new(0.0, 0.0, 0.0),
                    motors: vec![],
                    sensors: vec![SensorDef {
                        name: "eye".into(),
                        modality: Modality::Visual,
                        channel_count: 1,
                    }],
                },
            )
            .unwrap();
            let mut bound = Vec::new();
            for &a in &all_anns {
                if rng.random_bool(0.4) {
                    bind_adapter(
                        &store,
                        m.id,
                        &BindingSpec {
                            detection_ann: a,
                            response_ann: a,
                            sensor_map: vec![SensorChannel {
                                sensor_id: m.sensors[0].id,
                                channel: 0,
                            }],
                            motor_map: vec![],
                        },
                    )
                    .unwrap();
                    bound.push(a);
                }
            }
            machines.push((m.id, platform, bound));
        }
        // (attempts, successes) per pair as recorded here.
        let mut ledger: BTreeMap<(Id, Id), (u64, u64)> = BTreeMap::new();
        let cold = trial % 4 == 0;
        if !cold {
            for _ in 0..rng.random_range(0..300) {
                let ann = all_anns[rng.random_range(0..all_anns.len())];
                let machine = machines[rng.random_range(0..machines.len())].0;
                let p: f64 = rng.random();
                let ok = rng.random_bool(p);
                record_outcome(&store, MappingKey { concept, ann, machine }, ok).unwrap();
                let e = ledger.entry((ann, machine)).or_default();
                e.0 += 1;
                e.1 += ok as u64;
            }
        }
        for platform in [None, Some("sim")] {
            let mut best: Option<((Id, Id), (u64, u64))> = None;
            for &a in &eligible_anns {
                for (m, p, bound) in &machines {
                    if platform.is_some_and(|want| want != *p) || !bound.contains(&a) {
                        continue;
                    }
                    let rec = ledger.get(&(a, *m)).copied().unwrap_or((0, 0));
                    best = match best {
                        None => Some(((a, *m), rec)),
                        Some((pair, brec)) => {
                            // (s+1)/(n+2) compared exactly by cross-multiplying.
                            let lhs = (rec.1 as u128 + 1) * (brec.0 as u128 + 2);
                            let rhs = (brec.1 as u128 + 1) * (rec.0 as u128 + 2);
                            match lhs.cmp(&rhs) {
                                Ordering::Greater => Some(((a, *m), rec)),
                                Ordering::Equal if (a, *m) < pair => Some(((a, *m), rec)),
                                _ => Some((pair, brec)),
                            }
                        }
                    };
                }
            }
            let filter = MachineFilter {
                ids: None,
                platform: platform.map(String::from),
            };
            let got = select_implementation(&store.snapshot(), "target", &filter);
            match (best, got) {
                (Some((pair, _)), Ok(sel)) => {
                    check((sel.ann_id, sel.machine_id) == pair, || {
                        format!(
                            "trial {trial}: picked {:?}, oracle {pair:?}",
                            (sel.ann_id, sel.machine_id)
                        )
                    })?;
                    if cold {
                        check(sel.score == 0.5, || format!("cold score {}", sel.score))?;
                    }
                    compared += 1;
                }
                (None, Err(Error::NoImplementation(_))) => {}
                (want, got) => return Err(format!("trial {trial}: oracle {want:?}, got {got:?}")),
            }
        }
    }
    Ok(format!("200 ledgers, {compared} selections compared"))
}

// ---------------------------------------------------------------- end to end

fn hivemind(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_hivemind"))
        .args(args)
        .args(["--log-level", "error"])
        .current_dir(root())
        .env_remove("HIVEMIND_STORE")
        .env_remove("HIVEMIND_LISTEN")
        .output()
        .unwrap()
}

fn end_to_end() -> Outcome {
    let started = Instant::now();
    let run = hivemind(&["sim", "run", "--scenario", "building_escape"]);
    check(run.status.success(), || {
        String::from_utf8_lossy(&run.stderr).into_owned()
    })?;
    let log = String::from_utf8(run.stdout).unwrap();
    let lines: Vec<Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let last = lines.last().ok_or("empty log")?;
    check(last["event"] == "end" && last["status"] == "done", || {
        format!("run ended with {last}")
    })?;
    let ticks = last["tick"].as_u64().unwrap();
    check(ticks <= 500, || format!("{ticks} ticks"))?;
    let goal = lines
        .iter()
        .find(|l| l["event"] == "goal_reached")
        .ok_or("no goal_reached event")?;
    let door = goal["entity"].as_u64().unwrap();
    let scenario: Value =
        serde_json::from_str(&std::fs::read_to_string(root().join("scenarios/building_escape.json")).unwrap()).unwrap();
    let concept = &scenario["world"]["entities"][(door - 1) as usize]["concept"];
    check(concept == "door", || format!("reached {concept}"))?;

    let verify = hivemind(&["sim", "verify", "--scenario", "building_escape"]);
    check(verify.status.success(), || {
        String::from_utf8_lossy(&verify.stderr).into_owned()
    })?;
    let took = within(Duration::from_secs(60), started)?;
    Ok(format!("door reached at tick {ticks}, verify identical, {took:.2?}"))
}

// ---------------------------------------------------------------- durability

const WORKER_DIR: &str = "HIVEMIND_ACCEPTANCE_WORKER_DIR";
const WORKER_SEED: &str = "HIVEMIND_ACCEPTANCE_WORKER_SEED";
const WORKER_WRITES: usize = 5_000;

fn workload_write(store: &Store, rng: &mut Xoshiro256PlusPlus, i: usize) {
    let snap = store.snapshot();
    let concepts: Vec<Id> = snap.concepts().map(|c| c.id).collect();
    let pick = |rng: &mut Xoshiro256PlusPlus| concepts[rng.random_range(0..concepts.len())];
    let res = match rng.random_range(0..10) {
        _ if concepts.len() < 2 => create_concept(store, &format!("c{i}"), "x").map(|_| ()),
        0..=2 => create_concept(store, &format!("c{i}"), "x").map(|_| ()),
        3..=5 => map_relation(
            store,
            pick(rng),
            MappingKind::Attribute,
            pick(rng),
            StrengthGrade::new(rng.random(), 0.1).unwrap(),
        )
        .map(|_| ()),
        6 => unmap_relation(store, pick(rng), MappingKind::Attribute, pick(rng)).map(|_| ()),
        7 => delete_concept(store, pick(rng)).map(|_| ()),
        8 => register_machine(
            store,
            &MachineDef {
                name: format!("m{i}"),
                platform: "sim".into(),
                location: GeoPoint::new(1.0, 2.0, 3.0),
                motors: vec![],
                sensors: vec![],
            },
        )
        .map(|_| ()),
        _ => match (snap.anns().next().map(|a| a.id), snap.machines().next().map(|m| m.id)) {
            (Some(ann), Some(machine)) => record_outcome(
                store,
                MappingKey {
                    concept: pick(rng),
                    ann,
                    machine,
                },
                rng.random_bool(0.5),
            )
            .map(|_| ()),
            (None, _) => upload_ann(store, "n", "", NET1).map(|_| ()),
            _ => Ok(()),
        },
    };
    if let Err(e @ Error::StorageFailure(_)) = res {
        panic!("{e}");
    }
}

/// Child-process mode: write until killed, announcing each write.
fn durability_worker(dir: &str, seed: u64) {
    let store = Store::open_with(
        dir,
        StoreOptions {
            sync: true,
            compact_every: if seed.is_multiple_of(2) {
                Some(10 + seed % 7)
            } else {
                None
            },
            crash_after_bytes: None,
        },
    )
    .unwrap();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut out = std::io::stdout().lock();
    writeln!(out, "READY").unwrap();
    out.flush().unwrap();
    for i in 0..WORKER_WRITES {
        writeln!(out, "BEGIN {i}").unwrap();
        out.flush().unwrap();
        workload_write(&store, &mut rng, i);
        writeln!(out, "ACK {i}").unwrap();
        out.flush().unwrap();
    }
}

/// States of the same workload in memory after `k` and `k + 1` writes.
fn model_states(seed: u64, k: usize) -> (Arc<State>, Arc<State>) {
    let store = Store::in_memory();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    for i in 0..k {
        workload_write(&store, &mut rng, i);
    }
    let at_k = store.snapshot();
    workload_write(&store, &mut rng, k);
    (at_k, store.snapshot())
}

fn durability() -> Outcome {
    let exe = std::env::current_exe().unwrap();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(0xD0);
    let mut total_acked = 0;
    let mut in_flight_landed = 0;
    for trial in 0..50u64 {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store");
        let seed = 100 + trial;
        let mut child = Command::new(&exe)
            .env(WORKER_DIR, &path)
            .env(WORKER_SEED, seed.to_string())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let lines = Arc::new(Mutex::new(Vec::<String>::new()));
        let reader = {
            let lines = lines.clone();
            let stdout = child.stdout.take().unwrap();
            std::thread::spawn(move || {
                for l in BufReader::new(stdout).lines() {
                    let Ok(l) = l else { break };
                    lines.lock().unwrap().push(l);
                }
            })
        };
        while !lines.lock().unwrap().iter().any(|l| l == "READY") {
            std::thread::sleep(Duration::from_millis(1));
        }
        std::thread::sleep(Duration::from_micros(rng.random_range(500..120_000)));
        child.kill().unwrap();
        child.wait().unwrap();
        reader.join().unwrap();
        let lines = lines.lock().unwrap();
        let acked = lines.iter().filter(|l| l.starts_with("ACK ")).count();
        check(acked < WORKER_WRITES, || {
            format!("trial {trial}: worker finished before the kill")
        })?;
        let in_flight = lines.last().is_some_and(|l| l.starts_with("BEGIN "));

        let recovered = Store::open(&path)
            .map_err(|e| format!("trial {trial}: reopen failed: {e}"))?
            .snapshot();
        let (exact, next) = model_states(seed, acked);
        if *recovered == *exact {
        } else if in_flight && *recovered == *next {
            in_flight_landed += 1;
        } else {
            return Err(format!(
                "trial {trial}: {acked} writes acknowledged, recovered seq {} matches neither {} nor the in-flight write",
                recovered.seq(),
                exact.seq()
            ));
        }
        total_acked += acked;
    }
    Ok(format!(
        "50 killed writers, {total_acked} acknowledged writes recovered, {in_flight_landed} unacknowledged in-flight writes landed whole"
    ))
}

// ---------------------------------------------------------------- concurrency

fn concurrency() -> Outcome {
    let store = Arc::new(Store::in_memory());
    let server = BackgroundServer::start(store.clone(), ([127, 0, 0, 1], 0).into()).map_err(|e| e.to_string())?;
    let client = ApiClient::http(&server.base_url()).map_err(|e| e.to_string())?;
    let (scenario, dir) = Scenario::load(&root().join("scenarios/building_escape.json")).map_err(|e| e.to_string())?;
    for seed_file in scenario.seed_paths(&dir) {
        import_seed(&mut &client, &std::fs::read_to_string(seed_file).unwrap()).map_err(|e| e.to_string())?;
    }
    client
        .upload_ann(
            "xor",
            "",
            &std::fs::read_to_string(root().join("anns/xor.ann")).unwrap(),
        )
        .map_err(|e| e.to_string())?;
    run_scenario(&client, &scenario, scenario.seed).map_err(|e| e.to_string())?;

    let snap = store.snapshot();
    let c = |n: &str| snap.concept_by_name(n).unwrap().id;
    let (building, wall, roof, door) = (c("building"), c("wall"), c("roof"), c("door"));
    let ann = snap.ann_by_name("scene_detector").unwrap().id;
    let scout = snap.machine_by_name("scout").unwrap().id;
    let reads: Vec<(Method, String, Option<Vec<u8>>)> = vec![
        (Method::Get, "/concepts".into(), None),
        (
            Method::Get,
            "/concepts?expand=attributes.attributes,actions,anns".into(),
            None,
        ),
        (Method::Get, "/concepts?name=DOOR&expand=attributes".into(), None),
        (
            Method::Get,
            format!("/concepts/{building}?expand=attributes.actions"),
            None,
        ),
        (
            Method::Get,
            format!("/concepts/{door}/suggest?evidence={wall},{roof}:0.5"),
            None,
        ),
        (
            Method::Post,
            "/infer".into(),
            Some(
                format!(r#"[{{"concept":{wall},"confidence":1}},{{"concept":{roof},"confidence":0.75}}]"#).into_bytes(),
            ),
        ),
        (
            Method::Post,
            format!("/concepts/{door}/relevance"),
            Some(br#"["door","knob"]"#.to_vec()),
        ),
        (
            Method::Get,
            "/machines?expand=motors.commands.arguments,sensors,adapters".into(),
            None,
        ),
        (Method::Get, format!("/machines/{scout}?expand=adapters"), None),
        (Method::Get, "/interop/anns".into(), None),
        (Method::Get, format!("/interop/anns/{ann}?format=packed"), None),
        (Method::Get, format!("/interop/anns/{ann}?format=decoded"), None),
        (Method::Get, "/swarm/positions".into(), None),
        (Method::Get, "/swarm/efficacy".into(), None),
        (Method::Get, "/swarm/tasks/1".into(), None),
        (Method::Get, "/concepts/424242".into(), None),
    ];
    let baseline: Vec<(u16, Vec<u8>)> = reads
        .iter()
        .map(|(m, p, b)| client.raw(*m, p, b.clone()).map(|r| (r.status, r.body)))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;

    let barrier = Arc::new(Barrier::new(100));
    let base = server.base_url();
    let handles: Vec<_> = (0..100)
        .map(|i| {
            let barrier = barrier.clone();
            let base = base.clone();
            let (m, p, b) = reads[i % reads.len()].clone();
            std::thread::spawn(move || {
                let client = ApiClient::http(&base).unwrap();
                barrier.wait();
                client.raw(m, &p, b).map(|r| (r.status, r.body))
            })
        })
        .collect();
    for (i, h) in handles.into_iter().enumerate() {
        let got = h
            .join()
            .map_err(|_| format!("request {i} panicked"))?
            .map_err(|e| e.to_string())?;
        check(got == baseline[i % reads.len()], || {
            format!("request {i} ({}) differs from baseline", reads[i % reads.len()].1)
        })?;
    }
    Ok(format!("100 concurrent reads over {} endpoints match", reads.len()))
}

// ---------------------------------------------------------------- main

fn main() -> ExitCode {
    if let (Ok(dir), Ok(seed)) = (std::env::var(WORKER_DIR), std::env::var(WORKER_SEED)) {
        durability_worker(&dir, seed.parse().unwrap());
        return ExitCode::SUCCESS;
    }
    // libtest flags such as --nocapture are accepted and ignored.
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let criteria: [(&str, Criterion); 9] = [
        ("codec_round_trip", codec_round_trip),
        ("default_threshold", default_threshold),
        ("trainer_xor_and_gradients", trainer),
        ("manifesting_equivalence", manifesting),
        ("inference_oracle", inference),
        ("selection_oracle", selection),
        ("end_to_end_building_escape", end_to_end),
        ("durability_kill_and_replay", durability),
        ("service_concurrency", concurrency),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    let mut ran = 0;
    for (name, run) in criteria {
        if filter.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        ran += 1;
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
