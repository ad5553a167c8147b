//! Paced simulation loop, connection handling and telemetry fan-out.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use thiserror::Error;

use super::protocol::{
    decode_client, encode, ClientMessage, ErrorCode, ObstacleGeometry, Role, ServerMessage, SessionInfo,
    TelemetryFrame, WallGeometry, PROTOCOL_VERSION, SUPPORTED_VERSIONS,
};
use crate::config::{ExperimentConfig, ModelConfig};
use crate::mpc::DelayModel;
use crate::sim::{SimError, Simulation, SolverMode};

/// Simulated time available to a serve session (s).
const SESSION_HORIZON: f64 = 1.0e6;

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("network error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub bind: String,
    pub port: u16,
    /// Simulated seconds per wall-clock second.
    pub pace: f64,
    pub telemetry_hz: f64,
    pub solver: SolverMode,
    /// Delay model used until a client overrides it; `None` keeps the
    /// scenario's model.
    pub delay: Option<DelayModel>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 7878,
            pace: 1.0,
            telemetry_hz: 30.0,
            solver: SolverMode::Threaded,
            delay: Some(DelayModel::Measured { floor: 0.001 }),
        }
    }
}

struct Peer {
    role: Option<Role>,
}

/// Replies to a single inbound frame.
#[derive(Debug, Default, PartialEq)]
pub struct Reply {
    pub messages: Vec<ServerMessage>,
    /// Close the connection after sending.
    pub close: bool,
}

impl Reply {
    fn one(m: ServerMessage) -> Self {
        Self {
            messages: vec![m],
            close: false,
        }
    }
}

/// Session state machine, independent of sockets and wall time.
pub struct Session {
    config: ExperimentConfig,
    options: ServeOptions,
    sim: Simulation,
    peers: BTreeMap<u64, Peer>,
    operator: Option<u64>,
    paused: bool,
    time_offset: f64,
    scenario_hash: String,
}

impl Session {
    pub fn new(config: &ExperimentConfig, options: ServeOptions) -> Result<Self, SimError> {
        let scenario_hash = config.hash();
        let mut config = config.clone();
        config.duration = SESSION_HORIZON;
        config.clutch_events.clear();
        let sim = Self::fresh_sim(&config, &options, None)?;
        Ok(Self {
            config,
            options,
            sim,
            peers: BTreeMap::new(),
            operator: None,
            paused: false,
            time_offset: 0.0,
            scenario_hash,
        })
    }

    fn fresh_sim(config: &ExperimentConfig, options: &ServeOptions, from: Option<&Simulation>) -> Result<Simulation, SimError> {
        let variant = from.map(|s| s.variant()).unwrap_or(config.variants[0]);
        let mut sim = Simulation::with_options(config, variant, options.solver, true)?;
        sim.set_logging(false);
        match from {
            Some(old) => sim.set_delay_model(old.delay_model()),
            None => {
                if let Some(d) = options.delay {
                    sim.set_delay_model(d);
                }
            }
        }
        sim.set_clutch(false);
        Ok(sim)
    }

    pub fn simulation(&self) -> &Simulation {
        &self.sim
    }

    pub fn paused(&self) -> bool {
        self.paused
    }

    pub fn operator(&self) -> Option<u64> {
        self.operator
    }

    /// Session time (s), monotone across resets.
    pub fn time(&self) -> f64 {
        self.time_offset + self.sim.now()
    }

    pub fn connect(&mut self, id: u64) {
        self.peers.insert(id, Peer { role: None });
    }

    /// Dropping the operator disengages the clutch and stops the device.
    pub fn disconnect(&mut self, id: u64) {
        self.peers.remove(&id);
        if self.operator == Some(id) {
            self.operator = None;
            self.release();
        }
    }

    fn release(&mut self) {
        self.sim.set_clutch(false);
        let p = self.sim.state().device_position;
        let d = p.len();
        self.sim.set_device_state(p, DVector::zeros(d));
    }

    /// Connections that completed the handshake.
    pub fn subscribers(&self) -> Vec<u64> {
        self.peers
            .iter()
            .filter(|(_, p)| p.role.is_some())
            .map(|(id, _)| *id)
            .collect()
    }

    pub fn session_info(&self) -> SessionInfo {
        let env = self.sim.environment();
        let dev = self.config.device();
        SessionInfo {
            scenario: self.config.name.clone(),
            config_hash: self.scenario_hash.clone(),
            ee_dim: self.config.ee_dim(),
            variant: self.sim.variant(),
            telemetry_hz: self.options.telemetry_hz,
            pace: self.options.pace,
            workspace_min: dev.workspace_min.iter().copied().collect(),
            workspace_max: dev.workspace_max.iter().copied().collect(),
            link_lengths: match &self.config.model {
                ModelConfig::PlanarArm { link_lengths, .. } => Some(link_lengths.clone()),
                _ => None,
            },
            wall: env.wall.as_ref().map(|w| WallGeometry {
                point: w.point.iter().copied().collect(),
                normal: w.normal.iter().copied().collect(),
            }),
            obstacles: env
                .obstacles
                .iter()
                .map(|o| ObstacleGeometry {
                    center: o.center.iter().copied().collect(),
                    radius: o.radius,
                    buffer: o.buffer,
                })
                .collect(),
        }
    }

    pub fn handle_line(&mut self, id: u64, line: &str) -> Reply {
        match decode_client(line) {
            Ok(m) => self.handle(id, m),
            Err(e) => Reply::one(ServerMessage::error(e.code(), e.to_string())),
        }
    }

    pub fn handle(&mut self, id: u64, message: ClientMessage) -> Reply {
        let role = self.peers.get(&id).and_then(|p| p.role);
        if let ClientMessage::Hello { version, role: wanted, .. } = message {
            if role.is_some() {
                return Reply::one(ServerMessage::error(ErrorCode::InvalidValue, "hello already received"));
            }
            if !SUPPORTED_VERSIONS.contains(&version) {
                return Reply {
                    messages: vec![ServerMessage::Reject {
                        reason: format!("protocol version {version} is not supported"),
                        supported: SUPPORTED_VERSIONS.to_vec(),
                    }],
                    close: true,
                };
            }
            let mut granted = wanted;
            let mut messages = Vec::new();
            if wanted == Role::Operator {
                if self.operator.is_none() {
                    self.operator = Some(id);
                } else {
                    granted = Role::Observer;
                    messages.push(ServerMessage::Notice {
                        message: "another operator is connected; joined as observer".into(),
                        field: Some("role".into()),
                    });
                }
            }
            self.peers.entry(id).or_insert(Peer { role: None }).role = Some(granted);
            messages.insert(
                0,
                ServerMessage::Welcome {
                    version: PROTOCOL_VERSION,
                    role: granted,
                    session: self.session_info(),
                },
            );
            return Reply { messages, close: false };
        }
        match role {
            None => {
                return Reply::one(ServerMessage::error(ErrorCode::HandshakeRequired, "send hello first"));
            }
            Some(Role::Observer) => {
                return Reply::one(ServerMessage::error(
                    ErrorCode::NotOperator,
                    "observer connections cannot send commands",
                ));
            }
            Some(Role::Operator) => {}
        }
        match message {
            ClientMessage::Hello { .. } => unreachable!(),
            ClientMessage::DevicePose { x_h, v_h } => self.device_pose(x_h, v_h),
            ClientMessage::Clutch { engage } => {
                self.sim.set_clutch(engage);
                Reply::default()
            }
            ClientMessage::Variant { variant } => {
                self.sim.set_variant(variant);
                Reply::default()
            }
            ClientMessage::Delay { model } => match model.validate() {
                Ok(()) => {
                    self.sim.set_delay_model(model);
                    Reply::default()
                }
                Err(e) => Reply::one(ServerMessage::error(ErrorCode::InvalidValue, e)),
            },
            ClientMessage::Pause => {
                self.paused = true;
                Reply::default()
            }
            ClientMessage::Resume => {
                self.paused = false;
                Reply::default()
            }
            ClientMessage::Reset => match self.reset() {
                Ok(()) => Reply::default(),
                Err(e) => Reply::one(ServerMessage::error(ErrorCode::Internal, e.to_string())),
            },
        }
    }

    fn device_pose(&mut self, x_h: Vec<f64>, v_h: Vec<f64>) -> Reply {
        let d = self.config.ee_dim();
        if x_h.len() != d || v_h.len() != d {
            return Reply::one(ServerMessage::error(
                ErrorCode::InvalidValue,
                format!("device pose needs {d} coordinates for x_h and v_h"),
            ));
        }
        if x_h.iter().chain(v_h.iter()).any(|v| !v.is_finite()) {
            return Reply::one(ServerMessage::error(ErrorCode::InvalidValue, "device pose must be finite"));
        }
        let dev = self.config.device();
        let mut clamped = false;
        let x: Vec<f64> = x_h
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let c = v.clamp(dev.workspace_min[i], dev.workspace_max[i]);
                clamped |= c != *v;
                c
            })
            .collect();
        self.sim
            .set_device_state(DVector::from_vec(x), DVector::from_vec(v_h));
        if clamped {
            Reply::one(ServerMessage::Notice {
                message: "device position clamped to the workspace".into(),
                field: Some("x_h".into()),
            })
        } else {
            Reply::default()
        }
    }

    pub fn reset(&mut self) -> Result<(), SimError> {
        let t = self.time();
        self.sim = Self::fresh_sim(&self.config, &self.options, Some(&self.sim))?;
        self.time_offset = t;
        Ok(())
    }

    /// Advances the simulation to `sim_t` seconds since the last reset.
    pub fn advance_to(&mut self, sim_t: f64) -> Result<(), SimError> {
        if self.paused {
            return Ok(());
        }
        self.sim.advance_to(sim_t)
    }

    pub fn telemetry(&self) -> TelemetryFrame {
        let s = self.sim.state();
        let v = |x: &DVector<f64>| x.iter().copied().collect::<Vec<f64>>();
        TelemetryFrame {
            t: self.time(),
            sim_t: s.t,
            ee: v(&s.ee),
            x_d: v(&s.target.position),
            v_d: v(&s.target.velocity),
            joints: s.joints.iter().map(v).collect(),
            contact_force: v(&s.contact_force),
            f_hf: v(&s.f_hf),
            policy_age_ms: s.policy_age.map(|a| a * 1e3),
            variant: s.variant,
            clutched: s.clutched,
            paused: self.paused,
        }
    }
}

enum Inbound {
    Connected(u64, Sender<Outbound>),
    Line(u64, String),
    Disconnected(u64),
}

enum Outbound {
    Line(String),
    Close,
}

/// Running server; dropping it stops the loop.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
    result: Option<Receiver<Result<(), BridgeError>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) -> Result<(), BridgeError> {
        self.stop_threads()
    }

    fn stop_threads(&mut self) -> Result<(), BridgeError> {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the accept loop.
        let _ = TcpStream::connect(self.addr);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
        match self.result.take().and_then(|r| r.recv().ok()) {
            Some(r) => r,
            None => Ok(()),
        }
    }

    /// Blocks until the loop ends (it only ends on error or shutdown).
    pub fn wait(mut self) -> Result<(), BridgeError> {
        let r = match self.result.take() {
            Some(rx) => rx.recv().unwrap_or(Ok(())),
            None => Ok(()),
        };
        self.stop_threads()?;
        r
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.stop_threads();
    }
}

fn spawn_connection(id: u64, stream: TcpStream, inbound: Sender<Inbound>, stop: Arc<AtomicBool>) {
    let (out_tx, out_rx) = mpsc::channel::<Outbound>();
    if inbound.send(Inbound::Connected(id, out_tx)).is_err() {
        return;
    }
    let Ok(mut writer) = stream.try_clone() else { return };
    std::thread::spawn(move || {
        for m in out_rx {
            match m {
                Outbound::Line(l) => {
                    if writer.write_all(l.as_bytes()).and_then(|_| writer.write_all(b"\n")).is_err() {
                        break;
                    }
                }
                Outbound::Close => break,
            }
        }
        let _ = writer.shutdown(Shutdown::Both);
    });
    std::thread::spawn(move || {
        let _ = stream.set_read_timeout(Some(Duration::from_millis(200)));
        let mut reader = BufReader::new(stream);
        let mut buf = String::new();
        loop {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            match reader.read_line(&mut buf) {
                Ok(0) => break,
                Ok(_) => {
                    if buf.ends_with('\n') {
                        let line = std::mem::take(&mut buf);
                        if !line.trim().is_empty() && inbound.send(Inbound::Line(id, line)).is_err() {
                            break;
                        }
                    }
                }
                Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
                Err(_) => break,
            }
        }
        let _ = inbound.send(Inbound::Disconnected(id));
    });
}

/// Binds, spawns the accept and real-time threads and returns immediately.
pub fn start(config: &ExperimentConfig, options: ServeOptions) -> Result<ServerHandle, BridgeError> {
    let listener = TcpListener::bind((options.bind.as_str(), options.port))?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let (in_tx, in_rx) = mpsc::channel::<Inbound>();
    let mut session = Session::new(config, options.clone())?;

    let accept_stop = stop.clone();
    let accept = std::thread::spawn(move || {
        let mut next_id = 1u64;
        for stream in listener.incoming() {
            if accept_stop.load(Ordering::SeqCst) {
                break;
            }
            if let Ok(s) = stream {
                let _ = s.set_nodelay(true);
                spawn_connection(next_id, s, in_tx.clone(), accept_stop.clone());
                next_id += 1;
            }
        }
    });

    let (res_tx, res_rx) = mpsc::channel();
    let loop_stop = stop.clone();
    let pace = options.pace;
    let frame_period = Duration::from_secs_f64(1.0 / options.telemetry_hz);
    let tick = Duration::from_secs_f64(1.0 / config.rates.tracker_hz);
    let realtime = std::thread::spawn(move || {
        let mut writers: BTreeMap<u64, Sender<Outbound>> = BTreeMap::new();
        let mut wall_anchor = Instant::now();
        let mut sim_anchor = 0.0;
        let mut was_paused = false;
        let mut next_frame = Instant::now();
        let result = loop {
            if loop_stop.load(Ordering::SeqCst) {
                break Ok(());
            }
            while let Ok(ev) = in_rx.try_recv() {
                match ev {
                    Inbound::Connected(id, tx) => {
                        session.connect(id);
                        writers.insert(id, tx);
                    }
                    Inbound::Disconnected(id) => {
                        session.disconnect(id);
                        writers.remove(&id);
                    }
                    Inbound::Line(id, line) => {
                        let before = session.time_offset;
                        let reply = session.handle_line(id, &line);
                        if session.time_offset != before {
                            wall_anchor = Instant::now();
                            sim_anchor = 0.0;
                        }
                        if let Some(tx) = writers.get(&id) {
                            for m in &reply.messages {
                                let _ = tx.send(Outbound::Line(encode(m)));
                            }
                            if reply.close {
                                let _ = tx.send(Outbound::Close);
                            }
                        }
                    }
                }
            }
            let now = Instant::now();
            if session.paused() {
                was_paused = true;
            } else {
                if was_paused {
                    wall_anchor = now;
                    sim_anchor = session.simulation().now();
                    was_paused = false;
                }
                let target = sim_anchor + pace * now.duration_since(wall_anchor).as_secs_f64();
                if let Err(e) = session.advance_to(target) {
                    log::error!("simulation error, resetting: {e}");
                    let frame = encode(&ServerMessage::error(ErrorCode::Internal, e.to_string()));
                    for tx in writers.values() {
                        let _ = tx.send(Outbound::Line(frame.clone()));
                    }
                    if let Err(e) = session.reset() {
                        break Err(BridgeError::Sim(e));
                    }
                    wall_anchor = Instant::now();
                    sim_anchor = 0.0;
                }
            }
            if now >= next_frame {
                let frame = encode(&ServerMessage::Telemetry(session.telemetry()));
                for id in session.subscribers() {
                    if let Some(tx) = writers.get(&id) {
                        let _ = tx.send(Outbound::Line(frame.clone()));
                    }
                }
                next_frame += frame_period;
                if next_frame < now {
                    next_frame = now + frame_period;
                }
            }
            let elapsed = now.elapsed();
            if elapsed < tick {
                std::thread::sleep(tick - elapsed);
            }
        };
        for tx in writers.values() {
            let _ = tx.send(Outbound::Close);
        }
        let _ = res_tx.send(result);
    });

    Ok(ServerHandle {
        addr,
        stop,
        threads: vec![accept, realtime],
        result: Some(res_rx),
    })
}

/// Serves `config` on `port` until the process is stopped.
pub fn serve(config: &ExperimentConfig, port: u16, pace: f64) -> Result<(), BridgeError> {
    let options = ServeOptions {
        port,
        pace,
        ..ServeOptions::default()
    };
    let handle = start(config, options)?;
    eprintln!("serving {} on {}", config.name, handle.addr());
    handle.wait()
}
