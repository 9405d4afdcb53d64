//! Request/reply transports. Every message is one packet framed by a `u32`
//! little-endian length.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use thiserror::Error;

use super::MiddleServer;

/// Frames above this size are refused before allocating.
pub const MAX_FRAME: usize = 64 << 20;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("connection closed by peer")]
    Closed,
    #[error("frame of {0} bytes exceeds the limit")]
    FrameTooLarge(usize),
}

/// One request, one reply.
pub trait Transport {
    fn exchange(&mut self, request: &[u8]) -> Result<Vec<u8>, TransportError>;
}

pub fn write_frame<W: Write>(w: &mut W, bytes: &[u8]) -> Result<(), TransportError> {
    if bytes.len() > MAX_FRAME {
        return Err(TransportError::FrameTooLarge(bytes.len()));
    }
    w.write_all(&(bytes.len() as u32).to_le_bytes())?;
    w.write_all(bytes)?;
    w.flush()?;
    Ok(())
}

/// Reads one frame; `Ok(None)` on a clean end of stream before the length.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Vec<u8>>, TransportError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_le_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(TransportError::FrameTooLarge(len));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => TransportError::Closed,
        _ => e.into(),
    })?;
    Ok(Some(buf))
}

/// Calls the server directly in-process.
pub struct InMemoryTransport {
    server: Arc<MiddleServer>,
}

impl InMemoryTransport {
    pub fn new(server: Arc<MiddleServer>) -> Self {
        Self { server }
    }
}

impl Transport for InMemoryTransport {
    fn exchange(&mut self, request: &[u8]) -> Result<Vec<u8>, TransportError> {
        Ok(self.server.handle(request))
    }
}

pub struct TcpTransport {
    stream: TcpStream,
}

impl TcpTransport {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> Result<Self, TransportError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self { stream })
    }
}

impl Transport for TcpTransport {
    fn exchange(&mut self, request: &[u8]) -> Result<Vec<u8>, TransportError> {
        write_frame(&mut self.stream, request)?;
        read_frame(&mut self.stream)?.ok_or(TransportError::Closed)
    }
}

/// Records every request and reply passing through, in order. This is the
/// eavesdropper's view of a session.
pub struct CapturingTransport<T> {
    inner: T,
    exchanges: Vec<(Vec<u8>, Vec<u8>)>,
}

impl<T: Transport> CapturingTransport<T> {
    pub fn new(inner: T) -> Self {
        Self {
            inner,
            exchanges: Vec::new(),
        }
    }

    pub fn exchanges(&self) -> &[(Vec<u8>, Vec<u8>)] {
        &self.exchanges
    }

    pub fn into_exchanges(self) -> Vec<(Vec<u8>, Vec<u8>)> {
        self.exchanges
    }
}

impl<T: Transport> Transport for CapturingTransport<T> {
    fn exchange(&mut self, request: &[u8]) -> Result<Vec<u8>, TransportError> {
        let reply = self.inner.exchange(request)?;
        self.exchanges.push((request.to_vec(), reply.clone()));
        Ok(reply)
    }
}

/// Serves one connection until the peer hangs up.
fn serve_connection(server: &MiddleServer, mut stream: TcpStream) -> Result<(), TransportError> {
    stream.set_nodelay(true)?;
    while let Some(request) = read_frame(&mut stream)? {
        write_frame(&mut stream, &server.handle(&request))?;
    }
    Ok(())
}

/// Accepts connections until `shutdown` is set, one thread per session.
pub fn serve_middle(
    server: Arc<MiddleServer>,
    listener: TcpListener,
    shutdown: Arc<AtomicBool>,
) -> io::Result<()> {
    listener.set_nonblocking(true)?;
    let mut sessions = Vec::new();
    while !shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                stream.set_nonblocking(false)?;
                let server = server.clone();
                sessions.push(thread::spawn(move || {
                    // A failing session only ends that connection.
                    let _ = serve_connection(&server, stream);
                }));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                thread::sleep(Duration::from_millis(5));
            }
            Err(e) => return Err(e),
        }
        sessions.retain(|h: &JoinHandle<()>| !h.is_finished());
    }
    Ok(())
}

/// A middle server running on a background thread.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    thread: Option<JoinHandle<io::Result<()>>>,
}

impl ServerHandle {
    /// Binds `addr` (use port 0 for an ephemeral port) and starts serving.
    pub fn spawn<A: ToSocketAddrs>(server: Arc<MiddleServer>, addr: A) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let shutdown = Arc::new(AtomicBool::new(false));
        let flag = shutdown.clone();
        let thread = thread::spawn(move || serve_middle(server, listener, flag));
        Ok(Self {
            addr,
            shutdown,
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) -> io::Result<()> {
        self.stop()
    }

    fn stop(&mut self) -> io::Result<()> {
        self.shutdown.store(true, Ordering::SeqCst);
        match self.thread.take() {
            Some(t) => t
                .join()
                .unwrap_or_else(|_| Err(io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.stop();
    }
}
