//! Real-time simulation service over WebSocket.
//!
//! One task owns the simulation. Connection handlers talk to it through
//! channels: client frames go in over an mpsc queue, replies come back on a
//! bounded per-client queue and telemetry fans out over a broadcast channel
//! whose lagging receivers lose frames instead of queueing them.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use anyhow::Result;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use log::{debug, info, warn};
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc, watch};
use tokio::task::JoinHandle;
use tokio::time::Instant;

use stewart_core::control::{letter_path, teleop_map, waypoint_sequencer, RateLimiter};
use stewart_core::experiments::{derive_seed, letters_of, Impulse};
use stewart_core::geometry::pose_to_joints;
use stewart_core::rig::Rig;
use stewart_core::{BallMode, ExperimentConfig, Pose6};

use crate::protocol::{
    decode, encode, BallTelemetry, ClientFrame, ClientMessage, FlagTelemetry, MeasuredTelemetry, Mode, ServerMessage, Telemetry,
    SCHEMA, SCHEMA_VERSION,
};

pub const DEFAULT_BIND: &str = "127.0.0.1:8765";
const REPLY_BUFFER: usize = 64;
const SERVE_STREAM: u64 = 6;

enum SimInput {
    Register { id: u64, tx: mpsc::Sender<ServerMessage> },
    Unregister { id: u64 },
    Frame { id: u64, frame: ClientFrame, at: Instant },
}

struct Simulation {
    config: ExperimentConfig,
    seed: u64,
    rig: Rig,
    rigs_built: u64,
    mode: Mode,
    limiter: RateLimiter,
    target: Pose6,
    /// Teleop correction added to the rate-limited target, external units.
    trim: [f64; 6],
    waypoints: Vec<[f64; 2]>,
    trace_start: f64,
    waypoint: Option<[f64; 2]>,
    clients: HashMap<u64, mpsc::Sender<ServerMessage>>,
    lease: Option<(u64, Instant)>,
    last_command: Option<Instant>,
    applied: u64,
    dropped: u64,
}

impl Simulation {
    fn new(config: ExperimentConfig, seed: u64) -> Result<Self> {
        let rig = Rig::new(config.serve_rig(), [0.0, 0.0], derive_seed(seed, SERVE_STREAM, 0))?;
        let centre = config.limits.center_pose();
        Ok(Self {
            limiter: RateLimiter::new(rig.plant_state.pose, config.serve.teleop_rates),
            target: centre,
            trim: [0.0; 6],
            rig,
            rigs_built: 1,
            mode: Mode::Balance,
            waypoints: Vec::new(),
            trace_start: 0.0,
            waypoint: Some([0.0, 0.0]),
            clients: HashMap::new(),
            lease: None,
            last_command: None,
            applied: 0,
            dropped: 0,
            config,
            seed,
        })
    }

    fn new_rig(&mut self, config: stewart_core::rig::RigConfig, start: [f64; 2]) -> Result<Rig> {
        let seed = derive_seed(self.seed, SERVE_STREAM, self.rigs_built);
        self.rigs_built += 1;
        Ok(Rig::new(config, start, seed)?)
    }

    fn reply(&self, id: u64, message: ServerMessage) {
        if let Some(tx) = self.clients.get(&id) {
            if tx.try_send(message).is_err() {
                debug!("reply queue of client {id} full");
            }
        }
    }

    fn holder(&mut self, now: Instant) -> Option<u64> {
        let timeout = Duration::from_secs_f64(self.config.serve.lease_timeout);
        if let Some((id, last)) = self.lease {
            if now.duration_since(last) > timeout {
                info!("lease of client {id} expired");
                self.lease = None;
            }
        }
        self.lease.map(|(id, _)| id)
    }

    fn handle(&mut self, id: u64, frame: ClientFrame, at: Instant) {
        let seq = frame.seq;
        let holder = self.holder(at);
        match frame.message {
            ClientMessage::Ping {} => self.reply(id, ServerMessage::Pong { in_reply_to: seq }),
            ClientMessage::AcquireLease {} => match holder {
                Some(h) if h != id => self.reply(
                    id,
                    ServerMessage::Rejected {
                        in_reply_to: seq,
                        reason: format!("commander lease held by client {h}"),
                    },
                ),
                _ => {
                    self.lease = Some((id, at));
                    self.reply(id, ServerMessage::Lease { held: true, holder: Some(id), in_reply_to: Some(seq) });
                }
            },
            ClientMessage::ReleaseLease {} => {
                if holder == Some(id) {
                    self.lease = None;
                }
                let holder = self.lease.map(|l| l.0);
                self.reply(id, ServerMessage::Lease { held: false, holder, in_reply_to: Some(seq) });
            }
            message => {
                if holder != Some(id) {
                    self.reply(id, ServerMessage::Rejected { in_reply_to: seq, reason: "commander lease required".into() });
                    return;
                }
                self.lease = Some((id, at));
                let min_gap = Duration::from_secs_f64(1.0 / self.config.serve.command_rate);
                if self.last_command.is_some_and(|last| at.duration_since(last) < min_gap) {
                    self.dropped += 1;
                    return;
                }
                self.last_command = Some(at);
                match self.apply(message) {
                    Ok(()) => {
                        self.applied += 1;
                        self.reply(id, ServerMessage::Ack { in_reply_to: seq });
                    }
                    Err(reason) => self.reply(id, ServerMessage::Rejected { in_reply_to: seq, reason }),
                }
            }
        }
    }

    fn apply(&mut self, message: ClientMessage) -> std::result::Result<(), String> {
        match message {
            ClientMessage::Teleop { axes } => {
                self.require_teleop()?;
                self.target = teleop_map(&axes, &self.config.limits);
            }
            ClientMessage::Pose { target } => {
                self.require_teleop()?;
                let pose = Pose6::from_external(target);
                if !pose.is_finite() || !self.config.limits.contains(&pose) {
                    return Err("pose target outside the workspace limits".into());
                }
                self.target = pose;
            }
            ClientMessage::Disturb { direction_deg, magnitude } => {
                if !(direction_deg.is_finite() && magnitude.is_finite() && magnitude >= 0.0) {
                    return Err("impulse needs a finite direction and a non-negative magnitude".into());
                }
                self.rig.kick(Impulse { direction_deg, magnitude }.velocity());
            }
            ClientMessage::SetMode { mode, letters } => self.set_mode(mode, letters).map_err(|e| e.to_string())?,
            ClientMessage::AcquireLease {} | ClientMessage::ReleaseLease {} | ClientMessage::Ping {} => {}
        }
        Ok(())
    }

    fn require_teleop(&self) -> std::result::Result<(), String> {
        if self.mode == Mode::Teleop {
            Ok(())
        } else {
            Err("pose and stick commands need teleop mode".into())
        }
    }

    fn set_mode(&mut self, mode: Mode, letters: Option<String>) -> Result<()> {
        match mode {
            Mode::Teleop => {
                self.limiter = RateLimiter::new(self.rig.plant_state.pose, self.config.serve.teleop_rates);
                self.target = self.rig.plant_state.pose;
                self.trim = [0.0; 6];
                self.waypoint = None;
            }
            Mode::Balance => {
                if self.rig.config().ball.mode == BallMode::RollingBall {
                    self.rig.reset_control();
                } else {
                    self.rig = self.new_rig(self.config.serve_rig(), [0.0, 0.0])?;
                }
                self.waypoint = Some([0.0, 0.0]);
            }
            Mode::Trace => {
                let text = letters.unwrap_or_else(|| self.config.trace.letters.clone());
                let mut path = Vec::new();
                for c in letters_of(&text) {
                    path.extend(letter_path(c)?);
                }
                let first = *path.first().ok_or_else(|| anyhow::anyhow!("no letters to trace"))?;
                self.rig = self.new_rig(self.config.trace_rig(), first)?;
                self.trace_start = self.rig.time();
                self.waypoints = path;
                self.waypoint = Some(first);
            }
        }
        self.mode = mode;
        Ok(())
    }

    fn advance_to(&mut self, t_end: f64) {
        let dt = self.rig.plant().dt();
        let geometry = self.config.plant.geometry.clone();
        while self.rig.time() + 0.5 * dt < t_end {
            match self.mode {
                Mode::Teleop => {
                    let pose = self.limiter.step(&self.target, dt).to_external();
                    let actual = self.rig.plant_state.pose.to_external();
                    let serve = &self.config.serve;
                    let mut command = [0.0; 6];
                    for i in 0..6 {
                        let bound = serve.trim_limit[usize::from(i >= 3)];
                        self.trim[i] = (self.trim[i] + serve.trim_gain * dt * (pose[i] - actual[i])).clamp(-bound, bound);
                        command[i] = pose[i] + self.trim[i];
                    }
                    self.rig.step_open_loop(pose_to_joints(&Pose6::from_external(command), &geometry));
                }
                Mode::Balance => {
                    self.rig.step([0.0, 0.0]);
                }
                Mode::Trace => {
                    let elapsed = self.rig.time() - self.trace_start;
                    let dwell = self.rig.config().cascade.waypoint_dwell;
                    let wp = waypoint_sequencer(&self.waypoints, elapsed, dwell).unwrap_or([0.0, 0.0]);
                    self.waypoint = Some(wp);
                    self.rig.step(wp);
                }
            }
        }
    }

    fn telemetry(&self) -> Telemetry {
        let rig = &self.rig;
        let ps = &rig.plant_state;
        let flags = rig.flags();
        let cmd = rig.command();
        Telemetry {
            schema_version: SCHEMA_VERSION,
            t: rig.time(),
            mode: self.mode,
            pose: ps.pose.to_external(),
            joints_command: cmd.angles,
            joints_actual: ps.actual,
            ball: BallTelemetry {
                x: rig.ball.x,
                y: rig.ball.y,
                vx: rig.ball.vx,
                vy: rig.ball.vy,
                at_fence: rig.ball.at_fence,
            },
            measured: rig.measured().map(|s| MeasuredTelemetry { x: s.x, y: s.y, timestamp: s.timestamp }),
            waypoint: self.waypoint,
            flags: FlagTelemetry {
                stale: flags.stale && self.mode != Mode::Teleop,
                ik_saturated: cmd.any_saturated(),
                tilt_clamped: flags.tilt_clamped && self.mode != Mode::Teleop,
                joint_saturated: cmd.saturated,
                buckled: ps.any_buckled(),
            },
            commander: self.lease.map(|l| l.0),
            commands_applied: self.applied,
            commands_dropped: self.dropped,
        }
    }
}

async fn run_simulation(
    mut sim: Simulation,
    mut inputs: mpsc::Receiver<SimInput>,
    telemetry: broadcast::Sender<Arc<ServerMessage>>,
    mut stop: watch::Receiver<bool>,
) {
    let period = Duration::from_secs_f64(1.0 / sim.config.serve.telemetry_rate);
    let scale = sim.config.serve.time_scale;
    let mut ticker = tokio::time::interval(period);
    ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
    let wall0 = Instant::now();
    let mut sim0 = sim.rig.time();
    loop {
        tokio::select! {
            _ = stop.changed() => break,
            input = inputs.recv() => match input {
                None => break,
                Some(SimInput::Register { id, tx }) => {
                    sim.clients.insert(id, tx);
                }
                Some(SimInput::Unregister { id }) => {
                    sim.clients.remove(&id);
                    if sim.lease.is_some_and(|l| l.0 == id) {
                        sim.lease = None;
                    }
                }
                Some(SimInput::Frame { id, frame, at }) => {
                    let before = sim.rig.time();
                    sim.handle(id, frame, at);
                    // A new rig restarts its own clock.
                    if sim.rig.time() != before {
                        sim0 += sim.rig.time() - before;
                    }
                }
            },
            _ = ticker.tick() => {
                let wall = Instant::now().duration_since(wall0).as_secs_f64();
                let target = sim0 + wall * scale;
                // Never fall more than one second of simulated time behind.
                let floor = target - 1.0;
                if sim.rig.time() < floor {
                    sim0 += floor - sim.rig.time();
                }
                sim.advance_to(sim0 + wall * scale);
                let _ = sim.holder(Instant::now());
                let _ = telemetry.send(Arc::new(ServerMessage::Telemetry(Box::new(sim.telemetry()))));
            }
        }
    }
}

#[derive(Clone)]
struct Shared {
    inputs: mpsc::Sender<SimInput>,
    telemetry: broadcast::Sender<Arc<ServerMessage>>,
    next_id: Arc<AtomicU64>,
    welcome: (f64, f64, f64),
    stop: watch::Receiver<bool>,
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(shared): State<Shared>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| connection(socket, shared))
}

async fn schema() -> impl IntoResponse {
    ([(axum::http::header::CONTENT_TYPE, "application/schema+json")], SCHEMA)
}

async fn connection(socket: WebSocket, shared: Shared) {
    let id = shared.next_id.fetch_add(1, Ordering::Relaxed);
    let (reply_tx, mut replies) = mpsc::channel(REPLY_BUFFER);
    if shared.inputs.send(SimInput::Register { id, tx: reply_tx }).await.is_err() {
        return;
    }
    info!("client {id} connected");
    let mut telemetry = shared.telemetry.subscribe();
    let (mut sink, mut stream) = socket.split();
    let mut seq = 0u64;
    let (telemetry_rate, command_rate, lease_timeout) = shared.welcome;
    let welcome = ServerMessage::Welcome { schema_version: SCHEMA_VERSION, client_id: id, telemetry_rate, command_rate, lease_timeout };
    let mut outgoing = vec![welcome];
    let mut stop = shared.stop.clone();
    'session: loop {
        for m in outgoing.drain(..) {
            if sink.send(Message::Text(encode(&m, seq).into())).await.is_err() {
                break 'session;
            }
            seq += 1;
        }
        tokio::select! {
            _ = stop.changed() => {
                let _ = sink.send(Message::Close(None)).await;
                break;
            }
            incoming = stream.next() => match incoming {
                Some(Ok(Message::Text(text))) => match decode(&text) {
                    Ok(frame) => {
                        let input = SimInput::Frame { id, frame, at: Instant::now() };
                        if shared.inputs.send(input).await.is_err() {
                            break;
                        }
                    }
                    Err((in_reply_to, message)) => outgoing.push(ServerMessage::Error { in_reply_to, message }),
                },
                Some(Ok(Message::Binary(_))) => outgoing.push(ServerMessage::Error {
                    in_reply_to: None,
                    message: "frames must be JSON text".into(),
                }),
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
            reply = replies.recv() => match reply {
                Some(m) => outgoing.push(m),
                None => break,
            },
            frame = telemetry.recv() => match frame {
                Ok(m) => outgoing.push((*m).clone()),
                Err(broadcast::error::RecvError::Lagged(n)) => debug!("client {id} skipped {n} telemetry frames"),
                Err(broadcast::error::RecvError::Closed) => break,
            },
        }
    }
    let _ = shared.inputs.send(SimInput::Unregister { id }).await;
    info!("client {id} disconnected");
}

/// A running service.
pub struct ServiceHandle {
    pub addr: SocketAddr,
    stop: watch::Sender<bool>,
    server: JoinHandle<std::io::Result<()>>,
    sim: JoinHandle<()>,
}

impl ServiceHandle {
    pub async fn shutdown(self) -> Result<()> {
        let _ = self.stop.send(true);
        self.sim.await?;
        self.server.await??;
        Ok(())
    }
}

/// Start the simulation owner and the HTTP/WebSocket server on `listener`.
/// Routes: `/ws` (protocol), `/schema.json`, `/health`.
pub async fn start(config: ExperimentConfig, seed: u64, listener: TcpListener) -> Result<ServiceHandle> {
    config.validate()?;
    let sim = Simulation::new(config.clone(), seed)?;
    let (inputs, input_rx) = mpsc::channel(1024);
    let (telemetry, _) = broadcast::channel(config.serve.viewer_buffer);
    let (stop, stop_rx) = watch::channel(false);
    let sim = tokio::spawn(run_simulation(sim, input_rx, telemetry.clone(), stop_rx.clone()));
    let s = &config.serve;
    let shared = Shared {
        inputs,
        telemetry,
        next_id: Arc::new(AtomicU64::new(1)),
        welcome: (s.telemetry_rate, s.command_rate, s.lease_timeout),
        stop: stop_rx.clone(),
    };
    let app = Router::new()
        .route("/ws", get(ws_upgrade))
        .route("/schema.json", get(schema))
        .route("/health", get(|| async { "ok" }))
        .with_state(shared);
    let addr = listener.local_addr()?;
    info!("serving on ws://{addr}/ws");
    let server = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async move {
                let mut rx = stop_rx;
                let _ = rx.changed().await;
            })
            .await
    });
    if addr.ip().is_unspecified() {
        warn!("listening on all interfaces without authentication");
    }
    Ok(ServiceHandle {
        addr,
        stop,
        server,
        sim,
    })
}
