//! Newline-delimited JSON over TCP.
//!
//! Each connection gets a reader thread; requests on one connection are
//! answered in arrival order, and scoring work runs on a shared rayon pool.

use std::io::{self, BufRead, BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{debug, info, warn};

use super::engine::Engine;
use super::protocol::{Health, Op, Reply, ScoringRequest};
use crate::error::{Error, Result};

const POLL: Duration = Duration::from_millis(100);

pub struct Server {
    listener: TcpListener,
    engine: Arc<Engine>,
    pool: Arc<rayon::ThreadPool>,
    stop: Arc<AtomicBool>,
    addr: SocketAddr,
}

/// Stops a running [`Server`] from any thread.
#[derive(Debug, Clone)]
pub struct ShutdownHandle {
    stop: Arc<AtomicBool>,
    addr: SocketAddr,
}

impl ShutdownHandle {
    pub fn shutdown(&self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the blocking accept
        let _ = TcpStream::connect_timeout(&self.addr, POLL);
    }
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, engine: Arc<Engine>, workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(Error::InvalidConfig("workers must be at least 1".into()));
        }
        let listener = TcpListener::bind(addr).map_err(|e| Error::io("<bind>", e))?;
        let addr = listener.local_addr().map_err(|e| Error::io("<bind>", e))?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .thread_name(|i| format!("score-{i}"))
            .build()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(Self {
            listener,
            engine,
            pool: Arc::new(pool),
            stop: Arc::new(AtomicBool::new(false)),
            addr,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown_handle(&self) -> ShutdownHandle {
        ShutdownHandle {
            stop: Arc::clone(&self.stop),
            addr: self.addr,
        }
    }

    /// Serve until shut down, then wait for open connections to close.
    pub fn run(self) -> Result<()> {
        info!("listening on {}", self.addr);
        let mut conns: Vec<JoinHandle<()>> = Vec::new();
        for stream in self.listener.incoming() {
            if self.stop.load(Ordering::SeqCst) {
                break;
            }
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    warn!("accept failed: {e}");
                    continue;
                }
            };
            let engine = Arc::clone(&self.engine);
            let pool = Arc::clone(&self.pool);
            let stop = Arc::clone(&self.stop);
            conns.retain(|h| !h.is_finished());
            conns.push(thread::spawn(move || {
                let peer = stream.peer_addr().ok();
                if let Err(e) = serve_connection(stream, &engine, &pool, &stop) {
                    debug!("connection {peer:?} ended: {e}");
                }
            }));
        }
        for h in conns {
            let _ = h.join();
        }
        info!("server stopped");
        Ok(())
    }

    /// Run on a background thread; returns the join handle and a shutdown handle.
    pub fn spawn(self) -> (JoinHandle<Result<()>>, ShutdownHandle) {
        let handle = self.shutdown_handle();
        (thread::spawn(move || self.run()), handle)
    }
}

fn serve_connection(stream: TcpStream, engine: &Engine, pool: &rayon::ThreadPool, stop: &AtomicBool) -> io::Result<()> {
    stream.set_read_timeout(Some(POLL))?;
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let mut buf = Vec::new();
    loop {
        match reader.read_until(b'\n', &mut buf) {
            Ok(0) => return Ok(()),
            Ok(_) => {
                if buf.last() != Some(&b'\n') {
                    // final line without a terminator
                    answer(&buf, engine, pool, &mut writer)?;
                    return Ok(());
                }
                answer(&buf, engine, pool, &mut writer)?;
                buf.clear();
            }
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                // partial bytes stay in `buf`
                if stop.load(Ordering::SeqCst) {
                    return Ok(());
                }
            }
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
}

fn answer(raw: &[u8], engine: &Engine, pool: &rayon::ThreadPool, writer: &mut TcpStream) -> io::Result<()> {
    let line = String::from_utf8_lossy(raw);
    let line = line.trim();
    if line.is_empty() {
        return Ok(());
    }
    let reply = pool.install(|| engine.handle_line(line));
    let mut out = reply.to_line();
    out.push('\n');
    writer.write_all(out.as_bytes())?;
    writer.flush()
}

/// Blocking line-oriented client.
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs, timeout: Duration) -> Result<Self> {
        let mut last = None;
        let addrs = addr.to_socket_addrs().map_err(|e| Error::io("<connect>", e))?;
        for a in addrs {
            match TcpStream::connect_timeout(&a, timeout) {
                Ok(stream) => {
                    stream
                        .set_read_timeout(Some(timeout))
                        .map_err(|e| Error::io("<connect>", e))?;
                    stream
                        .set_write_timeout(Some(timeout))
                        .map_err(|e| Error::io("<connect>", e))?;
                    let writer = stream.try_clone().map_err(|e| Error::io("<connect>", e))?;
                    return Ok(Self {
                        reader: BufReader::new(stream),
                        writer,
                    });
                }
                Err(e) => last = Some(e),
            }
        }
        Err(Error::io(
            "<connect>",
            last.unwrap_or_else(|| io::Error::new(ErrorKind::NotFound, "address resolved to nothing")),
        ))
    }

    /// Send one raw line and read one raw reply line.
    pub fn round_trip(&mut self, line: &str) -> Result<String> {
        let mut msg = line.trim_end().to_string();
        msg.push('\n');
        self.writer
            .write_all(msg.as_bytes())
            .and_then(|_| self.writer.flush())
            .map_err(|e| Error::io("<send>", e))?;
        let mut reply = String::new();
        let n = self.reader.read_line(&mut reply).map_err(|e| Error::io("<recv>", e))?;
        if n == 0 {
            return Err(Error::io(
                "<recv>",
                io::Error::new(ErrorKind::UnexpectedEof, "server closed the connection"),
            ));
        }
        Ok(reply.trim_end().to_string())
    }

    pub fn request(&mut self, req: &ScoringRequest) -> Result<Reply> {
        let reply = self.round_trip(&serde_json::to_string(req)?)?;
        Ok(serde_json::from_str(&reply)?)
    }

    pub fn health(&mut self) -> Result<Health> {
        let req = ScoringRequest {
            id: "health".into(),
            op: Op::Health,
            ..Default::default()
        };
        match self.request(&req)? {
            Reply::Health(h) => Ok(h.health),
            other => Err(Error::InvalidInput(format!(
                "unexpected health reply: {}",
                other.to_line()
            ))),
        }
    }
}

/// Connect, ask for health, and give up after `timeout`.
pub fn probe(addr: impl ToSocketAddrs, timeout: Duration) -> Result<Health> {
    Client::connect(addr, timeout)?.health()
}
