//! Byte-frame channels connecting federates to the server.
//!
//! A frame is a self-delimiting byte sequence: a big-endian `u32` length,
//! one tag byte, then `length` payload bytes. The codec in
//! [`crate::fedproto`] produces and consumes whole frames; channels move
//! them verbatim, so every transport carries identical bytes for the same
//! session. Two transports are provided: an in-process pair backed by
//! `mpsc` queues (deterministic FIFO, used by single-process runs and
//! tests) and a TCP stream.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::time::{Duration, Instant};

use crate::error::TransportError;

/// Hard upper bound on a single frame, header excluded.
pub const MAX_FRAME_BYTES: u64 = 256 * 1024 * 1024;

/// Frame header size: length word plus tag byte.
pub const FRAME_HEADER_BYTES: usize = 5;

/// A bidirectional, blocking channel moving one frame at a time.
///
/// Implementations preserve frame order and never deliver a partial
/// frame: `recv_frame` yields a complete frame, `Err(Timeout)` after the
/// configured deadline, or `Err(PeerClosed)` once the other side is gone.
pub trait FrameChannel: Send {
    /// Queues one complete frame. The bytes must already carry the
    /// length-tag header; see [`frame_len`].
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), TransportError>;

    /// Blocks for the next frame, up to the configured timeout.
    fn recv_frame(&mut self) -> Result<Vec<u8>, TransportError>;

    /// Sets the receive deadline. `None` blocks indefinitely.
    fn set_timeout(&mut self, timeout: Option<Duration>) -> Result<(), TransportError>;
}

/// Parses and validates a frame header, returning the payload length.
///
/// Rejects lengths over [`MAX_FRAME_BYTES`] before any allocation so a
/// corrupt or hostile header cannot trigger a huge buffer.
pub fn frame_len(header: &[u8; 4]) -> Result<usize, TransportError> {
    let len = u32::from_be_bytes(*header) as u64;
    if len > MAX_FRAME_BYTES {
        return Err(TransportError::FrameTooLarge(len, MAX_FRAME_BYTES));
    }
    Ok(len as usize)
}

fn check_outgoing(frame: &[u8]) -> Result<usize, TransportError> {
    if frame.len() < FRAME_HEADER_BYTES {
        return Err(TransportError::Io(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("frame shorter than its header: {} bytes", frame.len()),
        )));
    }
    let header: [u8; 4] = frame[..4].try_into().expect("four header bytes");
    let len = frame_len(&header)?;
    if frame.len() != FRAME_HEADER_BYTES + len {
        return Err(TransportError::Io(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!(
                "frame length field says {} payload bytes, frame holds {}",
                len,
                frame.len() - FRAME_HEADER_BYTES
            ),
        )));
    }
    Ok(len)
}

/// One endpoint of an in-process channel pair.
///
/// Frames cross two `mpsc` queues, one per direction, so delivery order
/// is exactly send order and nothing is shared beyond the queues.
pub struct InProcChannel {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    timeout: Option<Duration>,
}

/// Builds a connected pair of in-process endpoints.
pub fn in_process_pair() -> (InProcChannel, InProcChannel) {
    let (a_tx, b_rx) = mpsc::channel();
    let (b_tx, a_rx) = mpsc::channel();
    let a = InProcChannel { tx: a_tx, rx: a_rx, timeout: None };
    let b = InProcChannel { tx: b_tx, rx: b_rx, timeout: None };
    (a, b)
}

impl FrameChannel for InProcChannel {
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), TransportError> {
        check_outgoing(frame)?;
        self.tx
            .send(frame.to_vec())
            .map_err(|_| TransportError::PeerClosed)
    }

    fn recv_frame(&mut self) -> Result<Vec<u8>, TransportError> {
        let frame = match self.timeout {
            None => self.rx.recv().map_err(|_| TransportError::PeerClosed)?,
            Some(limit) => self.rx.recv_timeout(limit).map_err(|e| match e {
                RecvTimeoutError::Timeout => TransportError::Timeout,
                RecvTimeoutError::Disconnected => TransportError::PeerClosed,
            })?,
        };
        Ok(frame)
    }

    fn set_timeout(&mut self, timeout: Option<Duration>) -> Result<(), TransportError> {
        self.timeout = timeout;
        Ok(())
    }
}

/// A frame channel over a TCP stream.
pub struct TcpChannel {
    stream: TcpStream,
}

impl TcpChannel {
    /// Wraps an accepted or connected stream. Disables Nagle so small
    /// control frames are not delayed behind parameter payloads.
    pub fn from_stream(stream: TcpStream) -> Result<Self, TransportError> {
        stream.set_nodelay(true)?;
        Ok(TcpChannel { stream })
    }

    /// Connects to `addr`, retrying until `deadline` elapses.
    ///
    /// Federates usually start before the server socket is listening;
    /// refused connections are retried every 50 ms within the window.
    pub fn connect<A: ToSocketAddrs + Clone>(
        addr: A,
        deadline: Duration,
    ) -> Result<Self, TransportError> {
        let started = Instant::now();
        loop {
            match TcpStream::connect(addr.clone()) {
                Ok(stream) => return Self::from_stream(stream),
                Err(e) => {
                    if started.elapsed() >= deadline {
                        return Err(TransportError::Connect(format!(
                            "gave up after {:?}: {e}",
                            started.elapsed()
                        )));
                    }
                    std::thread::sleep(Duration::from_millis(50));
                }
            }
        }
    }

    fn read_exact_mapped(&mut self, buf: &mut [u8]) -> Result<(), TransportError> {
        self.stream.read_exact(buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => TransportError::PeerClosed,
            std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut => {
                TransportError::Timeout
            }
            _ => TransportError::Io(e),
        })
    }
}

impl FrameChannel for TcpChannel {
    fn send_frame(&mut self, frame: &[u8]) -> Result<(), TransportError> {
        check_outgoing(frame)?;
        self.stream.write_all(frame).map_err(|e| match e.kind() {
            std::io::ErrorKind::BrokenPipe | std::io::ErrorKind::ConnectionReset => {
                TransportError::PeerClosed
            }
            _ => TransportError::Io(e),
        })?;
        self.stream.flush()?;
        Ok(())
    }

    fn recv_frame(&mut self) -> Result<Vec<u8>, TransportError> {
        let mut header = [0u8; 4];
        self.read_exact_mapped(&mut header)?;
        let len = frame_len(&header)?;
        let mut frame = vec![0u8; FRAME_HEADER_BYTES + len];
        frame[..4].copy_from_slice(&header);
        self.read_exact_mapped(&mut frame[4..])?;
        Ok(frame)
    }

    fn set_timeout(&mut self, timeout: Option<Duration>) -> Result<(), TransportError> {
        self.stream.set_read_timeout(timeout)?;
        Ok(())
    }
}

/// Binds a listener and returns it with the bound address (useful with
/// port 0, where the OS picks a free port).
pub fn bind_listener<A: ToSocketAddrs>(
    addr: A,
) -> Result<(TcpListener, std::net::SocketAddr), TransportError> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    Ok((listener, local))
}

/// Accepts `n` connections in arrival order.
pub fn accept_channels(
    listener: &TcpListener,
    n: usize,
) -> Result<Vec<TcpChannel>, TransportError> {
    let mut channels = Vec::with_capacity(n);
    for _ in 0..n {
        let (stream, _) = listener.accept()?;
        channels.push(TcpChannel::from_stream(stream)?);
    }
    Ok(channels)
}
