//! WebSocket service: one thread accepts, one thread per client session.

use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use tungstenite::handshake::server::{ErrorResponse, Request, Response};
use tungstenite::http::StatusCode;
use tungstenite::{Message as WsMessage, WebSocket};

use crate::protocol::{decode, encode, Action, ErrorFrame, Hello, Message, PilotCommand, Snapshot};

pub const DEFAULT_PORT: u16 = 8008;
pub const WS_PATH: &str = "/ws";

const POLL: Duration = Duration::from_millis(5);

struct Shared {
    hello: String,
    manual_launch: bool,
    clients: Mutex<Vec<(u64, Sender<String>)>>,
    commands: Mutex<Vec<PilotCommand>>,
    /// Set when a client drops; cleared by the next drain.
    lost_client: AtomicBool,
    shutdown: AtomicBool,
    next_client: AtomicU64,
}

/// Commands gathered since the previous decision tick.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Drained {
    /// Last forward/backward/stop received, if any.
    pub motion: Option<Action>,
    pub launch: bool,
    /// A client disconnected since the previous drain.
    pub lost_client: bool,
    pub clients: usize,
}

pub struct TelemetryServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    acceptor: Option<JoinHandle<()>>,
}

impl TelemetryServer {
    pub fn bind(addr: impl ToSocketAddrs, hello: &Hello) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(Shared {
            hello: encode(&Message::Hello(hello.clone())),
            manual_launch: hello.manual_launch,
            clients: Mutex::new(Vec::new()),
            commands: Mutex::new(Vec::new()),
            lost_client: AtomicBool::new(false),
            shutdown: AtomicBool::new(false),
            next_client: AtomicU64::new(0),
        });
        let sh = shared.clone();
        let acceptor = thread::spawn(move || accept_loop(listener, sh));
        Ok(Self {
            addr,
            shared,
            acceptor: Some(acceptor),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn client_count(&self) -> usize {
        self.shared.clients.lock().unwrap().len()
    }

    pub fn pending_commands(&self) -> usize {
        self.shared.commands.lock().unwrap().len()
    }

    pub fn publish(&self, snap: &Snapshot) {
        let text = encode(&Message::Snapshot(snap.clone()));
        self.shared
            .clients
            .lock()
            .unwrap()
            .retain(|(_, tx)| tx.send(text.clone()).is_ok());
    }

    /// Empties the command queue. Called once per decision tick.
    pub fn drain(&self) -> Drained {
        let cmds = std::mem::take(&mut *self.shared.commands.lock().unwrap());
        Drained {
            motion: cmds
                .iter()
                .rev()
                .map(|c| c.action)
                .find(|a| *a != Action::LaunchOverride),
            launch: cmds.iter().any(|c| c.action == Action::LaunchOverride),
            lost_client: self.shared.lost_client.swap(false, Ordering::SeqCst),
            clients: self.client_count(),
        }
    }
}

impl Drop for TelemetryServer {
    fn drop(&mut self) {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    let mut sessions = Vec::new();
    while !shared.shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let sh = shared.clone();
                sessions.push(thread::spawn(move || {
                    if let Err(e) = session(stream, &sh) {
                        log::debug!("session {peer}: {e}");
                    }
                }));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(e) => log::warn!("accept: {e}"),
        }
        sessions.retain(|h: &JoinHandle<()>| !h.is_finished());
    }
    for h in sessions {
        let _ = h.join();
    }
}

fn check_path(req: &Request, resp: Response) -> Result<Response, ErrorResponse> {
    if req.uri().path() == WS_PATH {
        Ok(resp)
    } else {
        let mut err = ErrorResponse::new(Some(format!("no endpoint at {}", req.uri().path())));
        *err.status_mut() = StatusCode::NOT_FOUND;
        Err(err)
    }
}

fn session(stream: TcpStream, shared: &Shared) -> Result<(), Box<dyn std::error::Error>> {
    stream.set_nonblocking(false)?;
    let mut ws = tungstenite::accept_hdr(stream, check_path).map_err(|e| e.to_string())?;
    ws.get_ref().set_read_timeout(Some(POLL))?;
    ws.send(WsMessage::text(shared.hello.clone()))?;

    let id = shared.next_client.fetch_add(1, Ordering::SeqCst);
    let (tx, rx) = mpsc::channel();
    shared.clients.lock().unwrap().push((id, tx));
    let result = pump(&mut ws, &rx, shared);
    shared.clients.lock().unwrap().retain(|(c, _)| *c != id);
    if !shared.shutdown.load(Ordering::SeqCst) {
        shared.lost_client.store(true, Ordering::SeqCst);
    }
    result
}

fn pump(ws: &mut WebSocket<TcpStream>, rx: &Receiver<String>, shared: &Shared) -> Result<(), Box<dyn std::error::Error>> {
    loop {
        if shared.shutdown.load(Ordering::SeqCst) {
            let _ = ws.close(None);
            let _ = ws.flush();
            return Ok(());
        }
        loop {
            match rx.try_recv() {
                Ok(text) => ws.send(WsMessage::text(text))?,
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => return Ok(()),
            }
        }
        match ws.read() {
            Ok(WsMessage::Text(text)) => {
                if let Some(reply) = handle(text.as_str(), shared) {
                    ws.send(WsMessage::text(encode(&Message::Error(reply))))?;
                }
            }
            Ok(WsMessage::Binary(_)) => {
                let reply = ErrorFrame::new("malformed", "binary frames are not accepted");
                ws.send(WsMessage::text(encode(&Message::Error(reply))))?;
            }
            Ok(WsMessage::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(e) => return Err(e.into()),
        }
    }
}

/// Queues a valid command; otherwise returns the error frame for the sender.
fn handle(text: &str, shared: &Shared) -> Option<ErrorFrame> {
    match decode(text) {
        Ok(Message::Command(cmd)) => {
            if cmd.action == Action::LaunchOverride && !shared.manual_launch {
                return Some(ErrorFrame::new(
                    "launch_rejected",
                    "launch_override needs manual-launch mode",
                ));
            }
            shared.commands.lock().unwrap().push(cmd);
            None
        }
        Ok(other) => Some(ErrorFrame::new(
            "unexpected",
            format!("clients may only send commands, got {}", kind(&other)),
        )),
        Err(e) => Some(ErrorFrame::new(e.code(), e.to_string())),
    }
}

fn kind(m: &Message) -> &'static str {
    match m {
        Message::Hello(_) => "hello",
        Message::Snapshot(_) => "snapshot",
        Message::Command(_) => "command",
        Message::Error(_) => "error",
    }
}
