//! Out-of-process backends reached over `pairscore/1`.
//!
//! A reader thread turns the adapter's output into a channel of lines so that
//! every wait has a deadline. Request ids on the wire are unique for the
//! lifetime of the adapter, so a late answer to a timed-out batch can never
//! be mistaken for an answer to a later one.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{Shutdown, TcpStream};
use std::process::{Child, ChildStdin, Command, ExitStatus, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use super::protocol::{encode_line, Handshake, Op, ScoreRequest, ScoreResponse};
use super::{Backend, GatewayError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Transport {
    /// Program and arguments; the adapter speaks on stdin/stdout.
    Command(Vec<String>),
    /// `host:port` of a listening adapter.
    Tcp(String),
}

impl std::fmt::Display for Transport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Transport::Command(argv) => write!(f, "{}", argv.join(" ")),
            Transport::Tcp(addr) => write!(f, "tcp://{addr}"),
        }
    }
}

enum ReadEvent {
    Line(String),
    Eof,
    Failed(String),
}

/// What a bounded wait for one line produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Recv {
    Line(String),
    Eof,
    Timeout,
    Failed(String),
}

enum Sink {
    Pipe(ChildStdin),
    Socket(TcpStream),
}

impl Sink {
    fn writer(&mut self) -> &mut dyn Write {
        match self {
            Sink::Pipe(p) => p,
            Sink::Socket(s) => s,
        }
    }
}

/// A raw line-oriented link to an adapter.
pub struct Connection {
    sink: Option<Sink>,
    lines: Receiver<ReadEvent>,
    child: Option<Child>,
    finished: bool,
}

fn spawn_reader<R: Read + Send + 'static>(source: R) -> Receiver<ReadEvent> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut reader = BufReader::new(source);
        loop {
            let mut buf = Vec::new();
            let event = match reader.read_until(b'\n', &mut buf) {
                Ok(0) => ReadEvent::Eof,
                Ok(_) => {
                    if buf.last() == Some(&b'\n') {
                        buf.pop();
                    }
                    match String::from_utf8(buf) {
                        Ok(line) => ReadEvent::Line(line),
                        Err(e) => ReadEvent::Failed(format!("adapter wrote invalid UTF-8: {e}")),
                    }
                }
                Err(e) => ReadEvent::Failed(e.to_string()),
            };
            let stop = !matches!(event, ReadEvent::Line(_));
            if tx.send(event).is_err() || stop {
                break;
            }
        }
    });
    rx
}

impl Connection {
    pub fn open(transport: &Transport) -> Result<Self, GatewayError> {
        match transport {
            Transport::Command(argv) => {
                let (program, args) =
                    argv.split_first().ok_or_else(|| GatewayError::Attach("empty adapter command".into()))?;
                let mut child = Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| GatewayError::Attach(format!("cannot start `{transport}`: {e}")))?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                Ok(Connection {
                    sink: Some(Sink::Pipe(stdin)),
                    lines: spawn_reader(stdout),
                    child: Some(child),
                    finished: false,
                })
            }
            Transport::Tcp(addr) => {
                let stream = TcpStream::connect(addr)
                    .map_err(|e| GatewayError::Attach(format!("cannot connect to {addr}: {e}")))?;
                let read_half = stream.try_clone().map_err(|e| GatewayError::Attach(e.to_string()))?;
                Ok(Connection {
                    sink: Some(Sink::Socket(stream)),
                    lines: spawn_reader(read_half),
                    child: None,
                    finished: false,
                })
            }
        }
    }

    /// Writes one line (a trailing `\n` is added if missing) and flushes.
    pub fn send_line(&mut self, line: &str) -> std::io::Result<()> {
        let sink = self
            .sink
            .as_mut()
            .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::BrokenPipe, "input already closed"))?;
        let w = sink.writer();
        w.write_all(line.as_bytes())?;
        if !line.ends_with('\n') {
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn recv_until(&mut self, deadline: Instant) -> Recv {
        if self.finished {
            return Recv::Eof;
        }
        let wait = deadline.saturating_duration_since(Instant::now());
        match self.lines.recv_timeout(wait) {
            Ok(ReadEvent::Line(l)) => Recv::Line(l),
            Ok(ReadEvent::Eof) | Err(RecvTimeoutError::Disconnected) => {
                self.finished = true;
                Recv::Eof
            }
            Ok(ReadEvent::Failed(e)) => {
                self.finished = true;
                Recv::Failed(e)
            }
            Err(RecvTimeoutError::Timeout) => Recv::Timeout,
        }
    }

    /// Signals EOF on the adapter's input.
    pub fn close_input(&mut self) {
        match self.sink.take() {
            Some(Sink::Socket(s)) => {
                let _ = s.shutdown(Shutdown::Write);
            }
            Some(Sink::Pipe(p)) => drop(p),
            None => {}
        }
    }

    /// For process adapters, waits up to `timeout` for exit. Socket links
    /// return `None`.
    pub fn wait_exit(&mut self, timeout: Duration) -> Option<ExitStatus> {
        let child = self.child.as_mut()?;
        let deadline = Instant::now() + timeout;
        loop {
            match child.try_wait() {
                Ok(Some(status)) => return Some(status),
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(10)),
                _ => return None,
            }
        }
    }

    pub fn is_process(&self) -> bool {
        self.child.is_some()
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        self.close_input();
        if self.child.is_some() && self.wait_exit(Duration::from_secs(2)).is_none() {
            if let Some(child) = self.child.as_mut() {
                let _ = child.kill();
                let _ = child.wait();
            }
        }
    }
}

/// Reads and validates the handshake line.
pub fn read_handshake(conn: &mut Connection, timeout: Duration) -> Result<Handshake, GatewayError> {
    match conn.recv_until(Instant::now() + timeout) {
        Recv::Line(line) => Handshake::parse(&line).map_err(GatewayError::Attach),
        Recv::Eof => Err(GatewayError::Attach("adapter closed before its handshake".into())),
        Recv::Failed(e) => Err(GatewayError::Attach(e)),
        Recv::Timeout => Err(GatewayError::Attach(format!("no handshake within {:.1}s", timeout.as_secs_f64()))),
    }
}

struct Session {
    conn: Connection,
    next_id: u64,
    dead: Option<String>,
}

/// A backend running in another process or behind a socket.
pub struct Adapter {
    name: String,
    ops: BTreeSet<Op>,
    timeout: Duration,
    session: Mutex<Session>,
}

pub fn attach_adapter(name: &str, transport: &Transport, timeout: Duration) -> Result<Adapter, GatewayError> {
    let mut conn = Connection::open(transport)?;
    let handshake = read_handshake(&mut conn, timeout).map_err(|e| match e {
        GatewayError::Attach(m) => GatewayError::Attach(format!("{name} ({transport}): {m}")),
        other => other,
    })?;
    log::info!("attached backend {name} via {transport}, ops {:?}", handshake.ops);
    Ok(Adapter {
        name: name.to_string(),
        ops: handshake.ops,
        timeout,
        session: Mutex::new(Session { conn, next_id: 0, dead: None }),
    })
}

impl Adapter {
    fn crashed(&self, message: &str) -> GatewayError {
        GatewayError::Crashed { backend: self.name.clone(), message: message.to_string() }
    }
}

impl Backend for Adapter {
    fn name(&self) -> &str {
        &self.name
    }

    fn ops(&self) -> BTreeSet<Op> {
        self.ops.clone()
    }

    fn exchange(&self, requests: &[ScoreRequest]) -> Result<Vec<ScoreResponse>, GatewayError> {
        let mut session = self.session.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(reason) = &session.dead {
            return Err(self.crashed(reason));
        }
        // wire id -> caller id
        let mut pending: HashMap<u64, u64> = HashMap::with_capacity(requests.len());
        for request in requests {
            let wire = session.next_id;
            session.next_id += 1;
            pending.insert(wire, request.id);
            let mut outgoing = request.clone();
            outgoing.id = wire;
            if let Err(e) = session.conn.send_line(&encode_line(&outgoing)) {
                let reason = format!("write failed: {e}");
                session.dead = Some(reason.clone());
                return Err(self.crashed(&reason));
            }
        }
        let deadline = Instant::now() + self.timeout;
        let mut responses = Vec::with_capacity(requests.len());
        while !pending.is_empty() {
            match session.conn.recv_until(deadline) {
                Recv::Line(line) => {
                    let response: ScoreResponse = match serde_json::from_str(&line) {
                        Ok(r) => r,
                        Err(e) => {
                            return Err(GatewayError::Protocol {
                                backend: self.name.clone(),
                                message: format!("unparseable response {line:?}: {e}"),
                            })
                        }
                    };
                    let caller = u64::try_from(response.id).ok().and_then(|wire| pending.remove(&wire));
                    match caller {
                        Some(id) => responses.push(ScoreResponse { id: id as i64, ..response }),
                        None => log::warn!("backend {} sent a response for unknown id {}", self.name, response.id),
                    }
                }
                Recv::Timeout => {
                    return Err(GatewayError::Timeout { backend: self.name.clone(), secs: self.timeout.as_secs_f64() })
                }
                Recv::Eof => {
                    let reason = "adapter exited with requests in flight".to_string();
                    session.dead = Some(reason.clone());
                    return Err(self.crashed(&reason));
                }
                Recv::Failed(e) => {
                    session.dead = Some(e.clone());
                    return Err(self.crashed(&e));
                }
            }
        }
        Ok(responses)
    }
}
