//! Live simulation of trained models for interactive waypoint design.
//!
//! [`SimSession`] steps one checkpoint under slider pressures. [`Connection`]
//! maps protocol messages onto a session, and [`serve`] runs one connection
//! per client thread, ticking at [`TICK_HZ`] on the wall clock. When the
//! server falls behind it skips the missed wall-clock slots instead of
//! stepping faster, so the model always advances by its own `dt` per tick.

mod protocol;
mod session;


pub use protocol::{
    parse_client_message, read_frame, read_message, write_message, ClientMessage, ErrorCode, ServerMessage,
    MAX_MESSAGE_BYTES, PROTOCOL_VERSION,
};
pub use session::{Frame, SimSession, SLIDER_MAX_KPA, TICK_HZ};

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crate::formats::{document_kind, read_checkpoint, CHECKPOINT_KIND};
use crate::sysid::{Checkpoint, KeypointMap};
use crate::{Error, Result};

/// Checkpoints available to clients, by id.
#[derive(Debug, Clone, Default)]
pub struct ModelRegistry {
    models: BTreeMap<String, Arc<Checkpoint>>,
}

impl ModelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, checkpoint: Checkpoint) {
        self.models.insert(id.into(), Arc::new(checkpoint));
    }

    /// Loads every checkpoint document (`*.json`) in `dir`, keyed by file stem.
    /// Other JSON documents in the directory are skipped.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut reg = Self::new();
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let text = fs::read_to_string(&path)?;
            if document_kind(&text).ok().as_deref() != Some(CHECKPOINT_KIND) {
                continue;
            }
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::InvalidArgument(format!("{} has no usable name", path.display())))?;
            reg.insert(id, read_checkpoint(&text)?);
        }
        Ok(reg)
    }

    /// Overlay placement maps of the models with keypoint decoders.
    pub fn keypoint_maps(&self) -> BTreeMap<String, KeypointMap> {
        self.models
            .iter()
            .filter_map(|(id, ck)| Some((id.clone(), ck.model.decoder.keypoint_map()?)))
            .collect()
    }

    pub fn ids(&self) -> Vec<String> {
        self.models.keys().cloned().collect()
    }

    pub fn get(&self, id: &str) -> Option<Arc<Checkpoint>> {
        self.models.get(id).cloned()
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

/// Protocol state of one client: the registry and the selected session.
#[derive(Debug)]
pub struct Connection {
    registry: Arc<ModelRegistry>,
    session: Option<SimSession>,
}

impl Connection {
    pub fn new(registry: Arc<ModelRegistry>) -> Self {
        Connection { registry, session: None }
    }

    pub fn session(&self) -> Option<&SimSession> {
        self.session.as_ref()
    }

    /// Replies to one raw payload. Errors never close the connection.
    pub fn handle_payload(&mut self, body: &[u8]) -> Vec<ServerMessage> {
        match parse_client_message(body) {
            Ok(msg) => self.handle(msg),
            Err(reply) => vec![reply],
        }
    }

    pub fn handle(&mut self, msg: ClientMessage) -> Vec<ServerMessage> {
        match msg {
            ClientMessage::Hello { .. } => vec![ServerMessage::Hello {
                protocol: PROTOCOL_VERSION,
                tick_hz: TICK_HZ,
                slider_max: SLIDER_MAX_KPA,
                keypoint_maps: self.registry.keypoint_maps(),
            }],
            ClientMessage::ListModels => vec![ServerMessage::Models {
                models: self.registry.ids(),
            }],
            ClientMessage::SelectModel { model } => {
                let Some(ck) = self.registry.get(&model) else {
                    return vec![ServerMessage::error(ErrorCode::UnknownModel, format!("no model named `{model}`"))];
                };
                let s = SimSession::new(model.clone(), ck);
                let reply = ServerMessage::ModelSelected {
                    model,
                    height: s.checkpoint().height,
                    width: s.checkpoint().width,
                    latent_dim: s.state().dim(),
                    u: s.pressures(),
                };
                self.session = Some(s);
                vec![reply]
            }
            other => {
                let Some(s) = self.session.as_mut() else {
                    return vec![ServerMessage::error(ErrorCode::NoModel, "select a model first")];
                };
                session_command(s, other)
            }
        }
    }

    /// Advances the session by one tick, if one is selected and running.
    pub fn tick(&mut self) -> Option<ServerMessage> {
        let s = self.session.as_mut().filter(|s| !s.is_paused())?;
        Some(match s.tick() {
            Ok(frame) => ServerMessage::Frame(frame),
            Err(Error::Divergence { step }) => ServerMessage::error(
                ErrorCode::Diverged,
                format!("model diverged at tick {step}; stepping paused until reset"),
            ),
            Err(e) => internal(e),
        })
    }
}

fn session_command(s: &mut SimSession, msg: ClientMessage) -> Vec<ServerMessage> {
    let reply = match msg {
        ClientMessage::SetPressures { u } => match s.set_pressures(u) {
            Ok(()) => return Vec::new(),
            Err(e) => ServerMessage::error(ErrorCode::InvalidArgument, e.to_string()),
        },
        ClientMessage::Frame => s.frame().map(ServerMessage::Frame).unwrap_or_else(internal),
        ClientMessage::SaveState { is_static } => match s.save_state(is_static).cloned() {
            Ok(state) => ServerMessage::Saved {
                index: s.saved().len() - 1,
                state,
            },
            Err(e) => internal(e),
        },
        ClientMessage::Export { horizon } => ServerMessage::Export {
            export: s.export(horizon),
        },
        ClientMessage::Reset => {
            s.reset();
            s.frame().map(ServerMessage::Frame).unwrap_or_else(internal)
        }
        ClientMessage::Hello { .. } | ClientMessage::ListModels | ClientMessage::SelectModel { .. } => {
            unreachable!("handled without a session")
        }
    };
    vec![reply]
}

fn internal(e: Error) -> ServerMessage {
    ServerMessage::error(ErrorCode::Internal, e.to_string())
}

/// Accepts clients forever, one thread each.
pub fn serve(listener: TcpListener, registry: Arc<ModelRegistry>) -> Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let registry = Arc::clone(&registry);
        thread::spawn(move || {
            let _ = serve_connection(stream, registry);
        });
    }
    Ok(())
}

/// Runs one client until it disconnects.
pub fn serve_connection(stream: TcpStream, registry: Arc<ModelRegistry>) -> Result<()> {
    stream.set_nodelay(true)?;
    let mut reader = stream.try_clone()?;
    let (tx, rx) = mpsc::channel::<Option<Vec<u8>>>();
    thread::spawn(move || loop {
        match read_frame(&mut reader) {
            Ok(Some(body)) => {
                if tx.send(Some(body)).is_err() {
                    break;
                }
            }
            _ => {
                let _ = tx.send(None);
                break;
            }
        }
    });

    let mut out = stream;
    let mut conn = Connection::new(registry);
    let period = Duration::from_secs_f64(1.0 / TICK_HZ);
    let mut next_tick = Instant::now() + period;
    loop {
        match rx.recv_timeout(next_tick.saturating_duration_since(Instant::now())) {
            Ok(Some(body)) => {
                for reply in conn.handle_payload(&body) {
                    write_message(&mut out, &reply)?;
                }
            }
            Ok(None) | Err(RecvTimeoutError::Disconnected) => break,
            Err(RecvTimeoutError::Timeout) => {
                if let Some(msg) = conn.tick() {
                    write_message(&mut out, &msg)?;
                }
                next_tick += period;
                let now = Instant::now();
                if next_tick < now {
                    next_tick = now + period;
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}
