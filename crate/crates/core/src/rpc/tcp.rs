//! Loopback TCP binding carrying the same frames as the simulated transport.

use std::collections::BTreeMap;
use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};

use super::call::{Transport, TransportError};
use super::codec::{read_frame, write_frame};
use super::server::Server;
use crate::sim::{Clock, SimDuration, SimTime, WallClock};

/// Client side: at most one live connection per target.
#[derive(Debug, Default)]
pub struct TcpTransport {
    clock: WallClock,
    conns: BTreeMap<String, TcpStream>,
}

impl TcpTransport {
    pub fn new() -> Self {
        Self::default()
    }

    fn connect(target: &str, timeout: SimDuration) -> io::Result<TcpStream> {
        let addr = target
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, "no address"))?;
        let stream = TcpStream::connect_timeout(&addr, timeout.to_std())?;
        stream.set_nodelay(true)?;
        Ok(stream)
    }

    fn exchange(&mut self, target: &str, frame: &[u8], timeout: SimDuration) -> io::Result<Vec<u8>> {
        let timeout = timeout.max(SimDuration::from_millis(1));
        if !self.conns.contains_key(target) {
            let stream = Self::connect(target, timeout)?;
            self.conns.insert(target.to_string(), stream);
        }
        let stream = self.conns.get_mut(target).expect("inserted above");
        stream.set_read_timeout(Some(timeout.to_std()))?;
        stream.set_write_timeout(Some(timeout.to_std()))?;
        write_frame(stream, frame)?;
        read_frame(stream)
    }
}

impl Transport for TcpTransport {
    fn now(&self) -> SimTime {
        self.clock.now()
    }

    fn round_trip(&mut self, target: &str, frame: Vec<u8>, timeout: SimDuration) -> Result<Vec<u8>, TransportError> {
        self.exchange(target, &frame, timeout).map_err(|_| {
            self.conns.remove(target);
            TransportError::TimedOut
        })
    }

    fn sleep(&mut self, duration: SimDuration) {
        thread::sleep(duration.to_std());
    }
}

/// A server running on background threads.
pub struct TcpServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
}

impl TcpServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Unblock accept().
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

impl Drop for TcpServerHandle {
    fn drop(&mut self) {
        if self.acceptor.is_some() {
            self.stop_now();
        }
    }
}

/// Serves `server` on `listener`, one thread per connection, one frame at a
/// time per connection.
pub fn serve_tcp<S>(listener: TcpListener, server: Arc<Mutex<Server<S>>>, clock: Arc<dyn Clock>) -> io::Result<TcpServerHandle>
where
    S: Send + 'static,
{
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let stop_flag = stop.clone();
    let acceptor = thread::spawn(move || {
        for conn in listener.incoming() {
            if stop_flag.load(Ordering::SeqCst) {
                break;
            }
            let Ok(mut stream) = conn else { continue };
            let server = server.clone();
            let clock = clock.clone();
            thread::spawn(move || {
                while let Ok(frame) = read_frame(&mut stream) {
                    let reply = {
                        let mut server = server.lock().expect("server mutex poisoned");
                        server.dispatch(clock.now(), &frame)
                    };
                    match reply {
                        Ok(reply) if write_frame(&mut stream, &reply).is_ok() => {}
                        _ => break,
                    }
                }
            });
        }
    });
    Ok(TcpServerHandle {
        addr,
        stop,
        acceptor: Some(acceptor),
    })
}
