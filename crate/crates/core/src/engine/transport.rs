//! Master/worker message passing.
//!
//! The master consumes one queue of [`Envelope`]s regardless of transport;
//! each peer registers a reply channel with `Hello` before anything else.
//! Workers talk to the master through a [`MasterLink`].

use std::io::{BufReader, BufWriter};
use std::net::{Shutdown as NetShutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crossbeam_channel::{unbounded, Receiver, Sender};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::delay::DelayModel;
use super::wire::{read_frame, write_frame, Frame, WireError};
use crate::error::{Error, Result};
use crate::params::{ParamVector, UpdateVector};

pub type PeerId = u64;

#[derive(Debug)]
pub enum Request {
    Hello(Sender<Reply>),
    Pull,
    Push(UpdateVector),
    Bye,
}

#[derive(Debug)]
pub struct Envelope {
    pub peer: PeerId,
    pub req: Request,
}

#[derive(Debug, Clone)]
pub enum Reply {
    Model { version: u64, v: Arc<ParamVector> },
    Shutdown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    #[default]
    Inproc,
    Tcp,
}

/// A worker's view of the master.
pub trait MasterLink: Send {
    /// The current global model, or `None` once the master has shut down.
    fn pull(&mut self) -> Result<Option<(u64, Arc<ParamVector>)>>;

    fn push(&mut self, update: UpdateVector) -> Result<()>;
}

pub struct InprocLink {
    peer: PeerId,
    tx: Sender<Envelope>,
    rx: Receiver<Reply>,
}

impl InprocLink {
    pub fn connect(peer: PeerId, tx: Sender<Envelope>) -> Result<Self> {
        let (reply_tx, rx) = unbounded();
        tx.send(Envelope {
            peer,
            req: Request::Hello(reply_tx),
        })
        .map_err(|_| Error::Transport("master queue closed".into()))?;
        Ok(Self { peer, tx, rx })
    }
}

impl MasterLink for InprocLink {
    fn pull(&mut self) -> Result<Option<(u64, Arc<ParamVector>)>> {
        if self
            .tx
            .send(Envelope { peer: self.peer, req: Request::Pull })
            .is_err()
        {
            return Ok(None);
        }
        match self.rx.recv() {
            Ok(Reply::Model { version, v }) => Ok(Some((version, v))),
            Ok(Reply::Shutdown) | Err(_) => Ok(None),
        }
    }

    fn push(&mut self, update: UpdateVector) -> Result<()> {
        // A closed queue means the master finished; the next pull reports it.
        let _ = self.tx.send(Envelope {
            peer: self.peer,
            req: Request::Push(update),
        });
        Ok(())
    }
}

impl Drop for InprocLink {
    fn drop(&mut self) {
        let _ = self.tx.send(Envelope { peer: self.peer, req: Request::Bye });
    }
}

pub struct TcpLink {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl TcpLink {
    /// Connects with up to `attempts` tries spaced by `backoff`.
    pub fn connect(addr: SocketAddr, attempts: u32, backoff: Duration) -> Result<Self> {
        let mut last = None;
        for _ in 0..attempts.max(1) {
            match TcpStream::connect(addr) {
                Ok(stream) => {
                    stream.set_nodelay(true)?;
                    return Ok(Self {
                        reader: BufReader::new(stream.try_clone()?),
                        writer: BufWriter::new(stream),
                    });
                }
                Err(e) => {
                    last = Some(e);
                    thread::sleep(backoff);
                }
            }
        }
        Err(Error::Transport(format!(
            "master at {addr} unreachable: {}",
            last.map(|e| e.to_string()).unwrap_or_default()
        )))
    }
}

impl MasterLink for TcpLink {
    fn pull(&mut self) -> Result<Option<(u64, Arc<ParamVector>)>> {
        if write_frame(&mut self.writer, &Frame::PullReq).is_err() {
            return Ok(None);
        }
        match read_frame(&mut self.reader) {
            Ok(Frame::Model { version, values }) => {
                Ok(Some((version, Arc::new(ParamVector::new(values)?))))
            }
            Ok(Frame::Shutdown) | Err(WireError::Closed) => Ok(None),
            Err(WireError::Io(e)) if is_disconnect(&e) => Ok(None),
            Ok(other) => Err(Error::Transport(format!("unexpected frame from master: {other:?}"))),
            Err(e) => Err(e.into()),
        }
    }

    fn push(&mut self, update: UpdateVector) -> Result<()> {
        let frame = Frame::Push {
            worker_id: update.worker_id,
            base_version: update.base_version,
            delta: update.delta,
        };
        match write_frame(&mut self.writer, &frame) {
            Ok(()) => Ok(()),
            Err(WireError::Io(e)) if is_disconnect(&e) => Ok(()),
            Err(e) => Err(e.into()),
        }
    }
}

fn is_disconnect(e: &std::io::Error) -> bool {
    use std::io::ErrorKind::*;
    matches!(e.kind(), BrokenPipe | ConnectionReset | ConnectionAborted | UnexpectedEof)
}

/// Listens for workers and turns their frames into envelopes.
pub struct TcpHub {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    malformed: Arc<AtomicU64>,
    acceptor: Option<JoinHandle<()>>,
}

impl TcpHub {
    pub fn bind(addr: SocketAddr, tx: Sender<Envelope>) -> Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let malformed = Arc::new(AtomicU64::new(0));
        let acceptor = {
            let stop = stop.clone();
            let malformed = malformed.clone();
            thread::spawn(move || accept_loop(listener, tx, stop, malformed))
        };
        Ok(Self {
            addr,
            stop,
            malformed,
            acceptor: Some(acceptor),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Frames that failed to decode; each one closed its connection.
    pub fn malformed_frames(&self) -> u64 {
        self.malformed.load(Ordering::Relaxed)
    }
}

impl Drop for TcpHub {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

fn accept_loop(
    listener: TcpListener,
    tx: Sender<Envelope>,
    stop: Arc<AtomicBool>,
    malformed: Arc<AtomicU64>,
) {
    let mut next_peer: PeerId = 0;
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, _)) => {
                let peer = next_peer;
                next_peer += 1;
                if let Err(e) = serve_peer(peer, stream, tx.clone(), malformed.clone()) {
                    log::warn!("dropping peer {peer}: {e}");
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                thread::sleep(Duration::from_millis(2));
            }
            Err(e) => {
                log::warn!("accept failed: {e}");
                thread::sleep(Duration::from_millis(10));
            }
        }
    }
}

fn serve_peer(
    peer: PeerId,
    stream: TcpStream,
    tx: Sender<Envelope>,
    malformed: Arc<AtomicU64>,
) -> std::io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let (reply_tx, reply_rx) = unbounded::<Reply>();
    if tx.send(Envelope { peer, req: Request::Hello(reply_tx) }).is_err() {
        return Ok(());
    }
    let write_half = stream.try_clone()?;
    thread::spawn(move || {
        let mut w = BufWriter::new(write_half);
        for reply in reply_rx {
            let (frame, last) = match reply {
                Reply::Model { version, v } => (
                    Frame::Model {
                        version,
                        values: v.as_slice().to_vec(),
                    },
                    false,
                ),
                Reply::Shutdown => (Frame::Shutdown, true),
            };
            if write_frame(&mut w, &frame).is_err() || last {
                break;
            }
        }
        let _ = w.get_ref().shutdown(NetShutdown::Write);
    });
    thread::spawn(move || {
        let mut r = BufReader::new(stream);
        loop {
            let req = match read_frame(&mut r) {
                Ok(Frame::PullReq) => Request::Pull,
                Ok(Frame::Push {
                    worker_id,
                    base_version,
                    delta,
                }) => Request::Push(UpdateVector::new(delta, base_version, worker_id)),
                Ok(Frame::Model { .. } | Frame::Shutdown) | Err(WireError::Closed) => break,
                Err(WireError::Io(_)) => break,
                Err(e) => {
                    log::warn!("peer {peer}: malformed frame: {e}");
                    malformed.fetch_add(1, Ordering::Relaxed);
                    break;
                }
            };
            if tx.send(Envelope { peer, req }).is_err() {
                break;
            }
        }
        let _ = tx.send(Envelope { peer, req: Request::Bye });
        let _ = r.get_ref().shutdown(NetShutdown::Both);
    });
    Ok(())
}

/// Adds sampled latency on the worker side: before each push leaves and
/// after each model arrives.
pub struct DelayedLink<L> {
    inner: L,
    model: DelayModel,
    offset: Duration,
    rng: ChaCha8Rng,
}

impl<L: MasterLink> DelayedLink<L> {
    pub fn new(inner: L, model: DelayModel, mut rng: ChaCha8Rng) -> Self {
        let offset = model.worker_offset(&mut rng);
        Self {
            inner,
            model,
            offset,
            rng,
        }
    }

    fn wait(&mut self) {
        let d = self.model.sample(self.offset, &mut self.rng);
        if !d.is_zero() {
            thread::sleep(d);
        }
    }
}

impl<L: MasterLink> MasterLink for DelayedLink<L> {
    fn pull(&mut self) -> Result<Option<(u64, Arc<ParamVector>)>> {
        let got = self.inner.pull()?;
        if got.is_some() {
            self.wait();
        }
        Ok(got)
    }

    fn push(&mut self, update: UpdateVector) -> Result<()> {
        self.wait();
        self.inner.push(update)
    }
}
