//! A registry served over TCP with the framed wire protocol, plus the
//! client helpers used by the CLI and by peer synchronization.
//!
//! Each connection is handled on its own thread; frames on one
//! connection are answered strictly in request order. A background
//! thread pulls peer catalogs every sync interval.

use std::io::{self, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::json;
use thiserror::Error;

use crate::gateway::{handle_request, System};
use crate::model::ServiceDescription;
use crate::registry::{deregister, find, register, sync_merge, FindQuery, RegistryState};
use crate::wire::{read_frame, write_frame, Message, Op, WireError};

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("wire: {0}")]
    Wire(#[from] WireError),
    #[error("unexpected reply: {0}")]
    UnexpectedReply(String),
    #[error("remote error {code}: {detail}")]
    Remote { code: String, detail: serde_json::Value },
}

/// A running registry server. Dropping it (or calling `shutdown`) stops
/// the accept loop and joins the worker threads.
pub struct Server {
    pub addr: SocketAddr,
    pub system: Arc<Mutex<System>>,
    max_frame: usize,
    stop: Arc<AtomicBool>,
    accept_handle: Option<JoinHandle<()>>,
    sync_handle: Option<JoinHandle<()>>,
}

pub fn spawn(system: System, listen: &str, peers: Vec<String>) -> Result<Server, ServerError> {
    let max_frame = system.config.max_frame_bytes;
    let sync_interval = Duration::from_secs(system.config.sync_interval_s);
    let listener = TcpListener::bind(listen)?;
    let addr = listener.local_addr()?;
    listener.set_nonblocking(true)?;
    let system = Arc::new(Mutex::new(system));
    let stop = Arc::new(AtomicBool::new(false));

    let accept_handle = {
        let system = Arc::clone(&system);
        let stop = Arc::clone(&stop);
        std::thread::spawn(move || accept_loop(listener, system, stop, max_frame))
    };
    let sync_handle = if peers.is_empty() {
        None
    } else {
        let system = Arc::clone(&system);
        let stop = Arc::clone(&stop);
        Some(std::thread::spawn(move || {
            while !stop.load(Ordering::Relaxed) {
                std::thread::sleep(sync_interval.min(Duration::from_millis(50)));
                // sleep in short slices so shutdown stays prompt, but
                // only sync once per full interval
                static_sync_tick(&system, &peers, max_frame, sync_interval);
            }
        }))
    };

    Ok(Server { addr, system, max_frame, stop, accept_handle: Some(accept_handle), sync_handle })
}

fn static_sync_tick(
    system: &Arc<Mutex<System>>,
    peers: &[String],
    max_frame: usize,
    interval: Duration,
) {
    use std::time::Instant;
    // track the last sync instant in thread-local state
    thread_local! {
        static LAST: std::cell::Cell<Option<Instant>> = const { std::cell::Cell::new(None) };
    }
    let due = LAST.with(|last| match last.get() {
        Some(at) if at.elapsed() < interval => false,
        _ => {
            last.set(Some(Instant::now()));
            true
        }
    });
    if due {
        let _ = sync_with_peers(system, peers, max_frame);
    }
}

fn accept_loop(
    listener: TcpListener,
    system: Arc<Mutex<System>>,
    stop: Arc<AtomicBool>,
    max_frame: usize,
) {
    let mut workers: Vec<JoinHandle<()>> = Vec::new();
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, _)) => {
                let system = Arc::clone(&system);
                workers.push(std::thread::spawn(move || {
                    let _ = serve_connection(stream, &system, max_frame);
                }));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                std::thread::sleep(Duration::from_millis(5));
            }
            Err(_) => break,
        }
    }
    for w in workers {
        let _ = w.join();
    }
}

fn serve_connection(
    mut stream: TcpStream,
    system: &Arc<Mutex<System>>,
    max_frame: usize,
) -> Result<(), ServerError> {
    loop {
        let msg = match read_frame(&mut stream, max_frame) {
            Ok(msg) => msg,
            Err(WireError::Io(e)) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(()),
            Err(WireError::Io(e)) => return Err(e.into()),
            Err(e) => {
                // protocol-level failure: report and drop the connection,
                // since framing can no longer be trusted
                let reply = Message {
                    op: Op::Error { code: "PARSE_ERROR".into(), detail: json!({ "message": e.to_string() }) },
                    req_id: 0,
                };
                let _ = write_frame(&mut stream, &reply, max_frame);
                return Ok(());
            }
        };
        let reply = handle_message(&msg, system);
        write_frame(&mut stream, &Message { op: reply, req_id: msg.req_id }, max_frame)?;
        stream.flush()?;
    }
}

fn handle_message(msg: &Message, system: &Arc<Mutex<System>>) -> Op {
    let mut sys = system.lock().expect("server state lock");
    match &msg.op {
        Op::Register(desc) => {
            let defaults = crate::execution::SimEnv::for_catalog(std::slice::from_ref(desc));
            sys.env.behaviors.extend(defaults.behaviors);
            match register(&mut sys.cluster.registries[0], desc.clone()) {
                Ok(()) => Op::FindResult(vec![desc.clone()]),
                Err(e) => Op::Error { code: error_code(&e), detail: json!({ "message": e.to_string() }) },
            }
        }
        Op::Deregister(id) => match deregister(&mut sys.cluster.registries[0], id) {
            Ok(()) => Op::FindResult(Vec::new()),
            Err(e) => Op::Error { code: error_code(&e), detail: json!({ "message": e.to_string() }) },
        },
        Op::Find(query) => match find(&sys.cluster.registries[0], query) {
            Ok(hits) => Op::FindResult(hits),
            Err(e) => Op::Error { code: error_code(&e), detail: json!({ "message": e.to_string() }) },
        },
        Op::SyncPull => Op::SyncState(sys.cluster.registries[0].catalog.values().cloned().collect()),
        Op::Compose(payload) => {
            let now = sys.clock;
            let (rendered, _) = handle_request(&payload.to_string(), &mut sys, now);
            Op::ComposeResult(serde_json::from_str(&rendered).expect("responses are JSON"))
        }
        other => Op::Error {
            code: "UNSUPPORTED_OP".into(),
            detail: json!({ "message": format!("{} is a reply op", other.name()) }),
        },
    }
}

fn error_code(e: &crate::registry::RegistryError) -> String {
    use crate::registry::RegistryError::*;
    match e {
        VersionConflict { .. } => "VERSION_CONFLICT",
        Validation(_) => "VALIDATION",
        NotFound(_) => "NOT_FOUND",
        EmptyQuery => "QUERY",
    }
    .to_string()
}

/// One anti-entropy pull from every reachable peer; unreachable peers
/// are skipped. Returns how many peers answered.
pub fn sync_with_peers(
    system: &Arc<Mutex<System>>,
    peers: &[String],
    max_frame: usize,
) -> Result<usize, ServerError> {
    let mut answered = 0;
    for peer in peers {
        let Ok(mut client) = Client::connect(peer, max_frame) else { continue };
        let Ok(remote) = client.sync_pull() else { continue };
        let mut sys = system.lock().expect("server state lock");
        let mut incoming = RegistryState::new("peer");
        for desc in remote {
            incoming.catalog.insert(desc.id.clone(), desc);
        }
        // merge borrows the local registry's id so the version/tie rule
        // matches in-process sync
        incoming.registry_id = format!("{}~peer", sys.cluster.registries[0].registry_id);
        sync_merge(&mut sys.cluster.registries[0], &mut incoming);
        let now = sys.clock;
        sys.cluster.registries[0].last_sync_at = now;
        answered += 1;
    }
    Ok(answered)
}

impl Server {
    pub fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        // wake the accept loop promptly
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept_handle.take() {
            let _ = h.join();
        }
        if let Some(h) = self.sync_handle.take() {
            let _ = h.join();
        }
        let _ = self.max_frame;
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// A blocking client for one registry connection.
pub struct Client {
    stream: TcpStream,
    max_frame: usize,
    next_req_id: u64,
}

impl Client {
    pub fn connect(addr: &str, max_frame: usize) -> Result<Self, ServerError> {
        let stream = TcpStream::connect(addr)?;
        Ok(Client { stream, max_frame, next_req_id: 1 })
    }

    fn call(&mut self, op: Op) -> Result<Message, ServerError> {
        let req_id = self.next_req_id;
        self.next_req_id += 1;
        write_frame(&mut self.stream, &Message { op, req_id }, self.max_frame)?;
        let reply = read_frame(&mut self.stream, self.max_frame)?;
        if let Op::Error { code, detail } = reply.op {
            return Err(ServerError::Remote { code, detail });
        }
        if reply.req_id != req_id {
            return Err(ServerError::UnexpectedReply(format!(
                "req_id {} answered with {}",
                req_id, reply.req_id
            )));
        }
        Ok(reply)
    }

    pub fn register(&mut self, desc: ServiceDescription) -> Result<(), ServerError> {
        self.call(Op::Register(desc)).map(|_| ())
    }

    pub fn deregister(&mut self, id: &str) -> Result<(), ServerError> {
        self.call(Op::Deregister(id.to_string())).map(|_| ())
    }

    pub fn find(&mut self, query: FindQuery) -> Result<Vec<ServiceDescription>, ServerError> {
        match self.call(Op::Find(query))?.op {
            Op::FindResult(hits) => Ok(hits),
            other => Err(ServerError::UnexpectedReply(other.name().into())),
        }
    }

    pub fn sync_pull(&mut self) -> Result<Vec<ServiceDescription>, ServerError> {
        match self.call(Op::SyncPull)?.op {
            Op::SyncState(catalog) => Ok(catalog),
            other => Err(ServerError::UnexpectedReply(other.name().into())),
        }
    }

    pub fn compose(&mut self, request: serde_json::Value) -> Result<serde_json::Value, ServerError> {
        match self.call(Op::Compose(request))?.op {
            Op::ComposeResult(doc) => Ok(doc),
            other => Err(ServerError::UnexpectedReply(other.name().into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{cat1, concept};
    use crate::gateway::Config;

    fn local_server() -> Server {
        let system = System::new(Config::default(), &["R1"]);
        spawn(system, "127.0.0.1:0", Vec::new()).unwrap()
    }

    #[test]
    fn register_find_deregister_over_tcp() {
        let server = local_server();
        let addr = server.addr.to_string();
        let mut client = Client::connect(&addr, crate::wire::DEFAULT_MAX_FRAME).unwrap();
        for desc in cat1() {
            client.register(desc).unwrap();
        }
        let hits = client.find(FindQuery::by_output(concept("C"))).unwrap();
        let ids: Vec<&str> = hits.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids, vec!["S2", "S3"]);

        client.deregister("S3").unwrap();
        let hits = client.find(FindQuery::by_output(concept("C"))).unwrap();
        assert_eq!(hits.len(), 1);

        let err = client.deregister("S3").unwrap_err();
        assert!(matches!(err, ServerError::Remote { code, .. } if code == "NOT_FOUND"));
    }

    #[test]
    fn compose_endpoint_answers_single_shot() {
        let server = local_server();
        let addr = server.addr.to_string();
        let mut client = Client::connect(&addr, crate::wire::DEFAULT_MAX_FRAME).unwrap();
        for desc in cat1() {
            client.register(desc).unwrap();
        }
        let doc = client
            .compose(json!({"provided": ["A"], "desired": ["C"], "weights": {"response_time_ms": 1.0}}))
            .unwrap();
        assert_eq!(doc["plan"]["nodes"], json!(["S1", "S2"]));
    }

    #[test]
    fn peer_pull_converges_catalogs() {
        let a = local_server();
        let b = {
            let system = System::new(Config::default(), &["R2"]);
            spawn(system, "127.0.0.1:0", Vec::new()).unwrap()
        };
        let mut client = Client::connect(&a.addr.to_string(), crate::wire::DEFAULT_MAX_FRAME).unwrap();
        client.register(cat1()[0].clone()).unwrap();

        let answered =
            sync_with_peers(&b.system, &[a.addr.to_string()], crate::wire::DEFAULT_MAX_FRAME).unwrap();
        assert_eq!(answered, 1);
        let sys = b.system.lock().unwrap();
        assert!(sys.cluster.registries[0].catalog.contains_key("S1"));
    }
}
