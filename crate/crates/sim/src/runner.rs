use std::collections::{BTreeMap, VecDeque};

use hivemind_core::geo::plan_goto;
use hivemind_core::graph::Evidence;
use hivemind_core::registry::{AdapterBinding, ArgType, BindingSpec, MotorTargetSpec, SensorChannel};
use hivemind_core::store::MachineView;
use hivemind_core::swarm::{AssignmentStatus, MachineFilter, Step, TaskRequest};
use hivemind_core::Id;
use hivemind_server::wire::{DetectionReport, PositionReport, Ranked};
use hivemind_server::ApiClient;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::scenario::{Scenario, UnitPlacement};
use crate::world::{
    create_world, normalize_angle, quantize, Brain, DetectionEvent, LocalFrame, SimUnit, World, WorldEvent,
};
use crate::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Done,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepState {
    Started,
    Done,
}

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub tick: u64,
    #[serde(flatten)]
    pub event: LogEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    Start {
        scenario: String,
        seed: u64,
        budget: u64,
    },
    Unit {
        unit: Id,
        name: String,
        binding: Id,
        x: f64,
        y: f64,
        heading: f64,
    },
    Assignment {
        id: Id,
        task: Id,
        unit: Id,
        status: AssignmentStatus,
        anns: Vec<Id>,
    },
    Step {
        unit: Id,
        index: usize,
        state: StepState,
    },
    Detection(DetectionEvent),
    Inference {
        unit: Id,
        ranking: Vec<Ranked>,
    },
    Suggestion {
        unit: Id,
        from: String,
        suggested: Vec<String>,
        chosen: Option<String>,
    },
    /// A motor value produced by the response network.
    Command {
        unit: Id,
        motor: String,
        command: String,
        argument: String,
        value: f64,
    },
    /// A motor value issued by the script follower (search, steering, goto, exec).
    Control {
        unit: Id,
        motor: String,
        value: f64,
    },
    Clamp {
        unit: Id,
        x: f64,
        y: f64,
    },
    Position {
        unit: Id,
        x: f64,
        y: f64,
        heading: f64,
    },
    GoalReached {
        unit: Id,
        entity: u64,
        distance: f64,
    },
    UnitFailed {
        unit: Id,
        reason: String,
    },
    End {
        status: RunStatus,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub reason: Option<String>,
    pub ticks: u64,
    pub world: World,
    pub log: Vec<LogLine>,
}

impl RunOutcome {
    pub fn detections(&self) -> usize {
        self.log
            .iter()
            .filter(|l| matches!(l.event, LogEvent::Detection(_)))
            .count()
    }
}

/// Newline-delimited JSON, one [`LogLine`] per line.
pub fn render_log(log: &[LogLine]) -> String {
    let mut out = String::new();
    for line in log {
        out.push_str(&serde_json::to_string(line).expect("log lines serialize"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
enum Phase {
    Script,
    Approach,
    Done,
    Failed(String),
}

#[derive(Debug, Clone)]
enum Active {
    None,
    Goto(VecDeque<(f64, f64)>),
    /// `follow` steers toward whatever the response network drives at.
    Search {
        target: String,
        started: u64,
        limit: u64,
        follow: bool,
    },
    Exec,
}

struct UnitRun {
    machine_id: Id,
    brain: Brain,
    /// Motor name to the wire type of its first command argument.
    controls: BTreeMap<String, ArgType>,
    placement: UnitPlacement,
    concept_ids: BTreeMap<String, Id>,
    assignment: Option<Id>,
    phase: Phase,
    step: usize,
    entered: Option<usize>,
    active: Active,
    evidence: BTreeMap<Id, f64>,
    tracking: bool,
}

struct Runner<'a> {
    client: &'a ApiClient,
    scenario: &'a Scenario,
    frame: LocalFrame,
    world: World,
    units: Vec<UnitRun>,
    log: Vec<LogLine>,
}

fn missing(what: &str, name: &str) -> SimError {
    SimError::Scenario(format!("unknown {what} {name:?}"))
}

fn first_arg_types(machine: &MachineView) -> BTreeMap<String, ArgType> {
    machine
        .motors
        .iter()
        .flatten()
        .filter_map(|m| {
            let arg = m.commands.as_ref()?.first()?.arguments.as_ref()?.first()?;
            Some((m.name.clone(), arg.ty))
        })
        .collect()
}

fn same_binding(b: &AdapterBinding, spec: &BindingSpec) -> bool {
    b.detection_ann == spec.detection_ann
        && b.response_ann == spec.response_ann
        && b.sensor_map == spec.sensor_map
        && b.motor_map.len() == spec.motor_map.len()
        && b.motor_map.iter().zip(&spec.motor_map).all(|(a, s)| {
            a.motor_id == s.motor_id
                && a.command == s.command
                && a.argument == s.argument
                && a.scale == s.scale
                && a.offset == s.offset
        })
}

/// Looks up everything a placement names and finds or creates its binding.
fn prepare_unit(client: &ApiClient, p: &UnitPlacement) -> Result<(MachineView, Brain, BTreeMap<String, Id>), SimError> {
    let machine = client
        .machines(Some(&p.machine), &["motors.commands.arguments", "sensors", "adapters"])?
        .into_iter()
        .find(|m| m.name == p.machine)
        .ok_or_else(|| missing("machine", &p.machine))?;
    let anns = client.anns()?;
    let ann = |name: &str| {
        anns.iter()
            .find(|a| a.name == name)
            .map(|a| a.id)
            .ok_or_else(|| missing("ann", name))
    };
    let (det_id, resp_id) = (ann(&p.binding.detection_ann)?, ann(&p.binding.response_ann)?);
    let motors = machine.motors.clone().unwrap_or_default();
    let sensors = machine.sensors.clone().unwrap_or_default();
    let spec = BindingSpec {
        detection_ann: det_id,
        response_ann: resp_id,
        sensor_map: p
            .binding
            .sensor_map
            .iter()
            .map(|r| {
                let s = sensors
                    .iter()
                    .find(|s| s.name == r.sensor)
                    .ok_or_else(|| missing("sensor", &r.sensor))?;
                Ok(SensorChannel {
                    sensor_id: s.id,
                    channel: r.channel,
                })
            })
            .collect::<Result<_, SimError>>()?,
        motor_map: p
            .binding
            .motor_map
            .iter()
            .map(|r| {
                let m = motors
                    .iter()
                    .find(|m| m.name == r.motor)
                    .ok_or_else(|| missing("motor", &r.motor))?;
                Ok(MotorTargetSpec {
                    motor_id: m.id,
                    command: r.command.clone(),
                    argument: r.argument.clone(),
                    scale: r.scale,
                    offset: r.offset,
                })
            })
            .collect::<Result<_, SimError>>()?,
    };
    let existing = machine
        .adapters
        .iter()
        .flatten()
        .find(|b| same_binding(b, &spec))
        .cloned();
    let binding = match existing {
        Some(b) => b,
        None => client.bind_adapter(machine.id, &spec)?,
    };
    let mut concept_ids = BTreeMap::new();
    for label in &p.labels {
        let c = client
            .concept_by_name(label)?
            .ok_or_else(|| missing("concept", label))?;
        concept_ids.insert(label.clone(), c.id);
    }
    let brain = Brain {
        detection: client.ann(det_id)?.network,
        response: client.ann(resp_id)?.network,
        labels: p.labels.clone(),
        motors: motors.iter().map(|m| (m.id, m.name.clone())).collect(),
        binding,
    };
    Ok((machine, brain, concept_ids))
}

/// Runs a scenario against the services reachable through `client`.
/// Reference errors are returned as `Err`; a run that times out or fails a
/// step is an `Ok` outcome with [`RunStatus::Failed`].
pub fn run_scenario(client: &ApiClient, scenario: &Scenario, seed: u64) -> Result<RunOutcome, SimError> {
    let mut world = create_world(&scenario.world, seed)?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut log = vec![LogLine {
        tick: 0,
        event: LogEvent::Start {
            scenario: scenario.name.clone(),
            seed,
            budget: scenario.tick_budget,
        },
    }];
    let mut units = Vec::new();
    for p in &scenario.units {
        let (machine, brain, concept_ids) = prepare_unit(client, p)?;
        let mut jitter = || {
            if p.jitter_m > 0.0 {
                rng.random_range(-p.jitter_m..=p.jitter_m)
            } else {
                0.0
            }
        };
        let (dx, dy) = (jitter(), jitter());
        let (x, y) = world.bounds.clamp(p.x + dx, p.y + dy);
        world.place_unit(SimUnit {
            machine_id: machine.id,
            x,
            y,
            heading: normalize_angle(p.heading),
            binding_id: brain.binding.id,
            sensor_range: p.sensor_range,
            fov: p.fov,
        })?;
        log.push(LogLine {
            tick: 0,
            event: LogEvent::Unit {
                unit: machine.id,
                name: machine.name.clone(),
                binding: brain.binding.id,
                x,
                y,
                heading: normalize_angle(p.heading),
            },
        });
        units.push(UnitRun {
            machine_id: machine.id,
            controls: first_arg_types(&machine),
            brain,
            placement: p.clone(),
            concept_ids,
            assignment: None,
            phase: Phase::Script,
            step: 0,
            entered: None,
            active: Active::None,
            evidence: BTreeMap::new(),
            tracking: false,
        });
    }
    let runner = Runner {
        client,
        scenario,
        frame: LocalFrame {
            origin: scenario.origin,
        },
        world,
        units,
        log,
    };
    runner.run()
}

impl Runner<'_> {
    fn push(&mut self, tick: u64, event: LogEvent) {
        self.log.push(LogLine { tick, event });
    }

    fn finish(mut self, status: RunStatus, reason: Option<String>) -> Result<RunOutcome, SimError> {
        let tick = self.world.tick;
        for i in 0..self.units.len() {
            let Some(id) = self.units[i].assignment else { continue };
            let to = if self.units[i].phase == Phase::Done {
                AssignmentStatus::Done
            } else {
                AssignmentStatus::Failed
            };
            let a = self.client.set_status(id, to)?;
            self.push(
                tick,
                LogEvent::Assignment {
                    id: a.id,
                    task: a.task_id,
                    unit: a.machine_id,
                    status: a.status,
                    anns: a.implementations.iter().map(|i| i.ann_id).collect(),
                },
            );
        }
        self.push(
            tick,
            LogEvent::End {
                status,
                reason: reason.clone(),
            },
        );
        Ok(RunOutcome {
            status,
            reason,
            ticks: tick,
            world: self.world,
            log: self.log,
        })
    }

    fn run(mut self) -> Result<RunOutcome, SimError> {
        if self.scenario.script.steps.is_empty() {
            for u in &mut self.units {
                u.phase = Phase::Done;
            }
            return self.finish(RunStatus::Done, None);
        }
        if self.scenario.tick_budget == 0 {
            return self.finish(RunStatus::Failed, Some("budget".into()));
        }
        self.assign()?;
        loop {
            if self
                .units
                .iter()
                .all(|u| matches!(u.phase, Phase::Done | Phase::Failed(_)))
            {
                let failed = self.units.iter().find_map(|u| match &u.phase {
                    Phase::Failed(r) => Some(r.clone()),
                    _ => None,
                });
                return match failed {
                    Some(r) => self.finish(RunStatus::Failed, Some(r)),
                    None => self.finish(RunStatus::Done, None),
                };
            }
            if self.world.tick >= self.scenario.tick_budget {
                for u in &mut self.units {
                    if !matches!(u.phase, Phase::Done | Phase::Failed(_)) {
                        u.phase = Phase::Failed("budget".into());
                    }
                }
                return self.finish(RunStatus::Failed, Some("budget".into()));
            }
            self.tick()?;
        }
    }

    /// One task per unit, delivered through the unit's outbox.
    fn assign(&mut self) -> Result<(), SimError> {
        let concepts: Vec<String> = self
            .scenario
            .script
            .steps
            .iter()
            .filter_map(|s| match s {
                Step::Detect { concept, .. } => Some(concept.clone()),
                _ => None,
            })
            .fold(Vec::new(), |mut acc, c| {
                if !acc.contains(&c) {
                    acc.push(c);
                }
                acc
            });
        for i in 0..self.units.len() {
            let machine = self.units[i].machine_id;
            let view = self.client.submit_task(&TaskRequest {
                script: self.scenario.script.clone(),
                concepts: concepts.clone(),
                machines: MachineFilter::only(machine),
            })?;
            for a in &view.assignments {
                self.push(
                    0,
                    LogEvent::Assignment {
                        id: a.id,
                        task: a.task_id,
                        unit: a.machine_id,
                        status: a.status,
                        anns: a.implementations.iter().map(|i| i.ann_id).collect(),
                    },
                );
            }
            for d in self.client.poll_outbox(machine)? {
                let mut a = d.assignment;
                if a.task_id != view.task.id {
                    continue;
                }
                for status in [AssignmentStatus::Delivered, AssignmentStatus::Running] {
                    if status == AssignmentStatus::Running {
                        a = self.client.set_status(a.id, status)?;
                    }
                    self.push(
                        0,
                        LogEvent::Assignment {
                            id: a.id,
                            task: a.task_id,
                            unit: a.machine_id,
                            status: a.status,
                            anns: a.implementations.iter().map(|i| i.ann_id).collect(),
                        },
                    );
                }
                self.units[i].assignment = Some(a.id);
            }
        }
        Ok(())
    }

    fn control(&mut self, i: usize, tick: u64, motor: &str, value: f64) -> Result<(), SimError> {
        let Some(ty) = self.units[i].controls.get(motor).copied() else {
            return Ok(());
        };
        let value = quantize(ty, value);
        let unit = self.units[i].machine_id;
        self.push(
            tick,
            LogEvent::Control {
                unit,
                motor: motor.to_string(),
                value,
            },
        );
        if let Some(WorldEvent::Clamp { unit, x, y }) = self.world.actuate(i, motor, value)? {
            self.push(tick, LogEvent::Clamp { unit, x, y });
        }
        Ok(())
    }

    fn fail(&mut self, i: usize, tick: u64, reason: String) {
        let unit = self.units[i].machine_id;
        self.units[i].phase = Phase::Failed(reason.clone());
        self.push(tick, LogEvent::UnitFailed { unit, reason });
    }

    fn enter_step(&mut self, i: usize, tick: u64) -> Result<(), SimError> {
        let idx = self.units[i].step;
        if self.units[i].entered == Some(idx) {
            return Ok(());
        }
        self.units[i].entered = Some(idx);
        let unit = self.units[i].machine_id;
        self.push(
            tick,
            LogEvent::Step {
                unit,
                index: idx,
                state: StepState::Started,
            },
        );
        let active = match self.scenario.script.steps[idx].clone() {
            Step::Goto(goal) => {
                let u = &self.world.units[i];
                let here = self.frame.to_geo(u.x, u.y);
                let step_m = self.units[i].placement.speed_mm / 1000.0;
                let waypoints = plan_goto(&here, &goal, step_m)?;
                Active::Goto(waypoints.iter().map(|p| self.frame.to_local(p)).collect())
            }
            Step::Detect { concept, max_ticks } => Active::Search {
                target: concept,
                started: tick,
                limit: max_ticks,
                follow: false,
            },
            Step::SuggestAndDetect { concept } => {
                let evidence = Evidence::new(self.units[i].evidence.iter().map(|(k, v)| (*k, *v)));
                if !evidence.is_empty() {
                    let ranking = self.client.infer(&evidence)?;
                    self.push(tick, LogEvent::Inference { unit, ranking });
                }
                let from = self
                    .client
                    .concept_by_name(&concept)?
                    .ok_or_else(|| missing("concept", &concept))?;
                let suggested: Vec<String> = self
                    .client
                    .suggest(from.id, &evidence)?
                    .into_iter()
                    .map(|r| r.name)
                    .collect();
                let chosen = suggested
                    .iter()
                    .find(|s| self.units[i].brain.labels.contains(s))
                    .cloned();
                self.push(
                    tick,
                    LogEvent::Suggestion {
                        unit,
                        from: concept.clone(),
                        suggested,
                        chosen: chosen.clone(),
                    },
                );
                match chosen {
                    Some(target) => Active::Search {
                        target,
                        started: tick,
                        limit: self.scenario.detect_ticks,
                        follow: true,
                    },
                    None => {
                        self.fail(i, tick, format!("nothing detectable suggested after {concept}"));
                        Active::None
                    }
                }
            }
            Step::Exec { .. } => Active::Exec,
        };
        self.units[i].active = active;
        Ok(())
    }

    fn complete_step(&mut self, i: usize, tick: u64) {
        let unit = self.units[i].machine_id;
        let index = self.units[i].step;
        self.push(
            tick,
            LogEvent::Step {
                unit,
                index,
                state: StepState::Done,
            },
        );
        self.units[i].step += 1;
        self.units[i].active = Active::None;
        if self.units[i].step == self.scenario.script.steps.len() {
            self.units[i].phase = if self.scenario.goal.is_some() {
                Phase::Approach
            } else {
                Phase::Done
            };
        }
    }

    /// Rotates in search of something, or with `follow` turns toward what
    /// the response network is driving at.
    fn search(&mut self, i: usize, tick: u64, follow: bool) -> Result<(), SimError> {
        let p = &self.units[i].placement;
        let (scan, turn_rate) = (p.scan_rate, p.turn_rate);
        if follow && self.units[i].tracking {
            if let Some(s) = self.world.sight(i)? {
                if s.bearing.abs() < 1e-6 {
                    return Ok(());
                }
                return self.control(i, tick, "turn", s.bearing.clamp(-turn_rate, turn_rate));
            }
        }
        self.control(i, tick, "turn", scan)
    }

    fn steer(&mut self, i: usize, tick: u64) -> Result<(), SimError> {
        let (turn_rate, speed) = (self.units[i].placement.turn_rate, self.units[i].placement.speed_mm);
        let Active::Goto(waypoints) = &mut self.units[i].active else {
            return Ok(());
        };
        let u = &self.world.units[i];
        while let Some(&(wx, wy)) = waypoints.front() {
            if (wx - u.x).hypot(wy - u.y) <= 0.01 {
                waypoints.pop_front();
            } else {
                break;
            }
        }
        let Some(&(wx, wy)) = waypoints.front() else {
            return Ok(());
        };
        let (dx, dy) = (wx - u.x, wy - u.y);
        let error = normalize_angle(dy.atan2(dx) - u.heading);
        let distance = dx.hypot(dy);
        let turn = error.clamp(-turn_rate, turn_rate);
        if turn != 0.0 {
            self.control(i, tick, "turn", turn)?;
        }
        if (error - turn).abs() <= 0.05 {
            self.control(i, tick, "drive", (distance * 1000.0).min(speed))?;
        }
        Ok(())
    }

    fn tick(&mut self) -> Result<(), SimError> {
        let tick = self.world.tick + 1;
        for i in 0..self.units.len() {
            match self.units[i].phase {
                Phase::Script => {
                    self.enter_step(i, tick)?;
                    if self.units[i].phase != Phase::Script {
                        continue;
                    }
                    match self.units[i].active.clone() {
                        Active::Goto(_) => self.steer(i, tick)?,
                        Active::Search { follow, .. } => self.search(i, tick, follow)?,
                        Active::Exec => {
                            if let Step::Exec { motor, values, .. } =
                                self.scenario.script.steps[self.units[i].step].clone()
                            {
                                self.control(i, tick, &motor, values.first().copied().unwrap_or(0.0))?;
                            }
                        }
                        Active::None => {}
                    }
                }
                Phase::Approach => self.search(i, tick, true)?,
                Phase::Done | Phase::Failed(_) => {}
            }
        }

        let brains: Vec<Brain> = self.units.iter().map(|u| u.brain.clone()).collect();
        let report = self.world.step(&brains)?;
        for u in &mut self.units {
            u.tracking = false;
        }
        for event in report.events {
            match event {
                WorldEvent::Detection(d) => {
                    let i = self.index_of(d.unit);
                    self.push(tick, LogEvent::Detection(d.clone()));
                    self.on_detection(i, tick, &d)?;
                }
                WorldEvent::Command {
                    unit,
                    motor,
                    command,
                    argument,
                    value,
                } => {
                    let i = self.index_of(unit);
                    if motor == "drive" && value > 0.0 {
                        self.units[i].tracking = true;
                    }
                    self.push(
                        tick,
                        LogEvent::Command {
                            unit,
                            motor,
                            command,
                            argument,
                            value,
                        },
                    );
                }
                WorldEvent::Clamp { unit, x, y } => self.push(tick, LogEvent::Clamp { unit, x, y }),
            }
        }

        for i in 0..self.units.len() {
            self.after_tick(i, tick)?;
        }
        Ok(())
    }

    fn index_of(&self, machine: Id) -> usize {
        self.units
            .iter()
            .position(|u| u.machine_id == machine)
            .expect("events name placed units")
    }

    fn on_detection(&mut self, i: usize, tick: u64, d: &DetectionEvent) -> Result<(), SimError> {
        let Some(&concept_id) = self.units[i].concept_ids.get(&d.concept) else {
            return Ok(());
        };
        self.client.report_detection(&DetectionReport {
            concept_id,
            ann_id: self.units[i].brain.binding.detection_ann,
            machine_id: d.unit,
            success: d.success,
        })?;
        let e = self.units[i].evidence.entry(concept_id).or_insert(0.0);
        *e = e.max(d.confidence);
        if self.units[i].phase == Phase::Script {
            if let Active::Search { target, .. } = &self.units[i].active {
                if *target == d.concept {
                    self.complete_step(i, tick);
                }
            }
        }
        Ok(())
    }

    fn after_tick(&mut self, i: usize, tick: u64) -> Result<(), SimError> {
        if self.units[i].phase == Phase::Script {
            match &self.units[i].active {
                Active::Search {
                    target, started, limit, ..
                } if tick - started + 1 >= *limit => {
                    let reason = format!("{target} not detected within {limit} ticks");
                    self.fail(i, tick, reason);
                }
                Active::Goto(w) if w.is_empty() || self.goto_arrived(i) => self.complete_step(i, tick),
                Active::Exec => self.complete_step(i, tick),
                _ => {}
            }
        }
        let (unit, x, y, heading) = {
            let u = &self.world.units[i];
            (u.machine_id, u.x, u.y, u.heading)
        };
        if self.units[i].phase == Phase::Approach {
            let goal = self.scenario.goal.clone().expect("approach implies a goal");
            let reached = self
                .world
                .entities
                .iter()
                .filter(|e| e.concept == goal.concept)
                .map(|e| (e.id, (e.x - x).hypot(e.y - y)))
                .find(|&(_, d)| d <= goal.within_m);
            if let Some((entity, distance)) = reached {
                self.units[i].phase = Phase::Done;
                self.push(tick, LogEvent::GoalReached { unit, entity, distance });
            }
        }
        self.client.report_position(&PositionReport {
            machine_id: unit,
            location: self.frame.to_geo(x, y),
            heading,
        })?;
        self.push(tick, LogEvent::Position { unit, x, y, heading });
        Ok(())
    }

    fn goto_arrived(&self, i: usize) -> bool {
        let Active::Goto(w) = &self.units[i].active else {
            return false;
        };
        let u = &self.world.units[i];
        w.len() == 1 && w.back().is_some_and(|&(x, y)| (x - u.x).hypot(y - u.y) <= 0.01)
    }
}
