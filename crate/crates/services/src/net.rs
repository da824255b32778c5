//! Line-oriented TCP transport. One reader and one writer thread per
//! connection; all requests funnel into a single loop that owns the service.

use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crate::wire::{Body, Envelope};
use crate::{Clock, Service, ServiceError, Token};

type Control<S> = Box<dyn FnOnce(&mut S) + Send>;

enum Cmd<S> {
    Request(Envelope, Sender<Envelope>),
    Control(Control<S>),
    Stop,
}

pub struct ServerHandle<S> {
    addr: SocketAddr,
    tx: Sender<Cmd<S>>,
    stop: Arc<AtomicBool>,
    conns: Arc<Mutex<Vec<TcpStream>>>,
    acceptor: Option<JoinHandle<()>>,
    service: Option<JoinHandle<S>>,
}

/// Serves `service` on an already bound listener until [`ServerHandle::stop`].
pub fn spawn_server<S>(listener: TcpListener, service: S, clock: Arc<dyn Clock>) -> io::Result<ServerHandle<S>>
where
    S: Service + Send + 'static,
{
    let addr = listener.local_addr()?;
    listener.set_nonblocking(true)?;
    let (tx, rx) = mpsc::channel();
    let stop = Arc::new(AtomicBool::new(false));
    let conns = Arc::new(Mutex::new(Vec::new()));

    let service = thread::spawn(move || service_loop(service, rx, clock));
    let acceptor = {
        let (tx, stop, conns) = (tx.clone(), stop.clone(), conns.clone());
        thread::spawn(move || accept_loop(listener, tx, stop, conns))
    };
    Ok(ServerHandle {
        addr,
        tx,
        stop,
        conns,
        acceptor: Some(acceptor),
        service: Some(service),
    })
}

impl<S: Send + 'static> ServerHandle<S> {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Runs `f` on the service inside its loop, between requests.
    pub fn control(&self, f: impl FnOnce(&mut S) + Send + 'static) {
        let _ = self.tx.send(Cmd::Control(Box::new(f)));
    }

    /// Like [`ServerHandle::control`] but waits for the result.
    pub fn query<T: Send + 'static>(&self, f: impl FnOnce(&mut S) -> T + Send + 'static) -> Option<T> {
        let (tx, rx) = mpsc::channel();
        self.control(move |s| {
            let _ = tx.send(f(s));
        });
        rx.recv().ok()
    }

    /// Closes every connection and returns the final service state.
    pub fn stop(mut self) -> S {
        self.stop.store(true, Ordering::SeqCst);
        for c in self.conns.lock().expect("connection list").drain(..) {
            let _ = c.shutdown(Shutdown::Both);
        }
        let _ = self.tx.send(Cmd::Stop);
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        self.service
            .take()
            .expect("stop runs once")
            .join()
            .expect("service loop panicked")
    }
}

fn accept_loop<S: Send + 'static>(
    listener: TcpListener,
    tx: Sender<Cmd<S>>,
    stop: Arc<AtomicBool>,
    conns: Arc<Mutex<Vec<TcpStream>>>,
) {
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                log::debug!("connection from {peer}");
                let _ = stream.set_nonblocking(false);
                let _ = stream.set_nodelay(true);
                if let Ok(c) = stream.try_clone() {
                    conns.lock().expect("connection list").push(c);
                }
                let tx = tx.clone();
                thread::spawn(move || connection(stream, tx));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(e) => {
                log::warn!("accept failed: {e}");
                thread::sleep(Duration::from_millis(50));
            }
        }
    }
}

fn connection<S>(stream: TcpStream, tx: Sender<Cmd<S>>) {
    let Ok(mut writer) = stream.try_clone() else { return };
    let (reply_tx, reply_rx) = mpsc::channel::<Envelope>();
    let writer_thread = thread::spawn(move || {
        for env in reply_rx {
            if writer.write_all(env.encode().as_bytes()).is_err() {
                break;
            }
        }
    });
    for line in BufReader::new(stream).lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        match Envelope::decode(&line) {
            Ok(env) => {
                if tx.send(Cmd::Request(env, reply_tx.clone())).is_err() {
                    break;
                }
            }
            Err(e) => {
                let _ = reply_tx.send(Envelope::new(0, Body::error(&e)));
            }
        }
    }
    drop(reply_tx);
    let _ = writer_thread.join();
}

fn service_loop<S: Service>(mut service: S, rx: Receiver<Cmd<S>>, clock: Arc<dyn Clock>) -> S {
    let period = service.tick_period();
    let mut next_tick = period.map(|p| clock.now() + p);
    let mut pending: HashMap<Token, Sender<Envelope>> = HashMap::new();
    let mut next_token: Token = 0;
    loop {
        let wait = next_tick.map_or(Duration::from_millis(200), |t| {
            Duration::from_secs_f64((t - clock.now()).clamp(0.0, 1.0))
        });
        match rx.recv_timeout(wait) {
            Ok(Cmd::Request(env, reply)) => {
                let token = next_token;
                next_token += 1;
                match service.handle(&env, token, clock.now()) {
                    Some(r) => {
                        let _ = reply.send(r);
                    }
                    None => {
                        pending.insert(token, reply);
                    }
                }
            }
            Ok(Cmd::Control(f)) => f(&mut service),
            Ok(Cmd::Stop) | Err(RecvTimeoutError::Disconnected) => return service,
            Err(RecvTimeoutError::Timeout) => {}
        }
        if let (Some(p), Some(t)) = (period, next_tick) {
            let now = clock.now();
            if now >= t {
                for (token, env) in service.tick(now) {
                    if let Some(reply) = pending.remove(&token) {
                        let _ = reply.send(env);
                    }
                }
                next_tick = Some(t.max(now - p) + p);
            }
        }
    }
}

/// Blocking request/reply client.
pub struct Connection {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    next_id: u64,
}

impl Connection {
    pub fn connect(addr: impl ToSocketAddrs, timeout: Duration) -> Result<Connection, ServiceError> {
        let addr = addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| ServiceError::Io("address resolved to nothing".into()))?;
        let stream = TcpStream::connect_timeout(&addr, timeout)?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(timeout))?;
        Ok(Connection {
            writer: stream.try_clone()?,
            reader: BufReader::new(stream),
            next_id: 1,
        })
    }

    /// Sends one request and waits for its reply. `Error` replies become `Err`.
    pub fn call(&mut self, body: Body) -> Result<Body, ServiceError> {
        let req = Envelope::new(self.next_id, body);
        self.next_id += 1;
        self.writer.write_all(req.encode().as_bytes())?;
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            return Err(ServiceError::Io("connection closed".into()));
        }
        let reply = Envelope::decode(&line)?;
        if reply.req_id != req.req_id {
            return Err(ServiceError::Protocol(format!(
                "reply id {} for request {}",
                reply.req_id, req.req_id
            )));
        }
        match reply.body {
            Body::Error { code, message } => Err(ServiceError::from_wire(&code, &message)),
            b => Ok(b),
        }
    }
}
