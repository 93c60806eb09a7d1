//! RSU side of the live link.
//!
//! Each connection is served on its own thread, strictly in order: read a
//! request and its payload, sleep the split's RSU compute time, answer with
//! the DNN sample for the captured tick. Both processes derive the same
//! ground truth and DNN samples from the shared run config, which is how
//! the RSU "knows" where the vehicle is. That is a demo harness only.

use super::wire::{read_request, write_response, InferResponse, WireError};
use crate::config::RunConfig;
use crate::netsim::SplitPoint;
use crate::pose::Pose;
use crate::runner::{prepare_inputs, RunError};
use log::{info, warn};
use std::collections::HashMap;
use std::io::{self, BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

const POLL: Duration = Duration::from_millis(5);

#[derive(Debug, Clone)]
pub struct RsuConfig {
    pub splits: Vec<SplitPoint>,
    /// DNN sample per capture tick.
    pub dnn: Vec<Pose>,
    /// Added to every split's compute time.
    pub extra_delay_ms: f64,
}

impl RsuConfig {
    pub fn from_run_config(cfg: &RunConfig) -> Result<Self, RunError> {
        Ok(RsuConfig {
            splits: cfg.splits.clone(),
            dnn: prepare_inputs(cfg)?.dnn,
            extra_delay_ms: 0.0,
        })
    }
}

/// A running RSU. Dropping the handle stops it.
pub struct RsuHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    conns: Arc<Mutex<HashMap<u64, TcpStream>>>,
    accept: Option<JoinHandle<()>>,
}

impl RsuHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting and tears down every open connection, as if the
    /// process had been killed.
    pub fn kill(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for (_, c) in self.conns.lock().unwrap().drain() {
            let _ = c.shutdown(std::net::Shutdown::Both);
        }
        if let Some(t) = self.accept.take() {
            let _ = t.join();
        }
    }
}

impl Drop for RsuHandle {
    fn drop(&mut self) {
        self.kill();
    }
}

/// Serves on `listener` from a background thread.
pub fn spawn_rsu(listener: TcpListener, cfg: RsuConfig) -> io::Result<RsuHandle> {
    let addr = listener.local_addr()?;
    listener.set_nonblocking(true)?;
    let stop = Arc::new(AtomicBool::new(false));
    let conns = Arc::new(Mutex::new(HashMap::new()));
    let cfg = Arc::new(cfg);
    let accept = {
        let stop = stop.clone();
        let conns = conns.clone();
        thread::spawn(move || accept_loop(listener, cfg, stop, conns))
    };
    info!("rsu listening on {addr}");
    Ok(RsuHandle {
        addr,
        stop,
        conns,
        accept: Some(accept),
    })
}

/// Binds `addr` and serves until the process is terminated.
pub fn serve_rsu(addr: impl ToSocketAddrs, cfg: RsuConfig) -> io::Result<()> {
    let handle = spawn_rsu(TcpListener::bind(addr)?, cfg)?;
    loop {
        thread::park();
        if handle.stop.load(Ordering::SeqCst) {
            return Ok(());
        }
    }
}

fn accept_loop(
    listener: TcpListener,
    cfg: Arc<RsuConfig>,
    stop: Arc<AtomicBool>,
    conns: Arc<Mutex<HashMap<u64, TcpStream>>>,
) {
    let mut next_id = 0u64;
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let registered = stream
                    .set_nonblocking(false)
                    .and_then(|()| stream.set_nodelay(true))
                    .and_then(|()| stream.try_clone());
                let id = next_id;
                next_id += 1;
                match registered {
                    Ok(clone) => {
                        conns.lock().unwrap().insert(id, clone);
                    }
                    Err(e) => {
                        warn!("rsu: dropping {peer}: {e}");
                        continue;
                    }
                }
                info!("rsu: connection from {peer}");
                let cfg = cfg.clone();
                let stop = stop.clone();
                let conns = conns.clone();
                thread::spawn(move || {
                    if let Err(e) = handle_connection(&stream, &cfg, &stop) {
                        warn!("rsu: closing {peer}: {e}");
                    }
                    let _ = stream.shutdown(std::net::Shutdown::Both);
                    conns.lock().unwrap().remove(&id);
                });
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(e) => {
                warn!("rsu: accept failed: {e}");
                thread::sleep(POLL);
            }
        }
    }
}

fn handle_connection(
    stream: &TcpStream,
    cfg: &RsuConfig,
    stop: &AtomicBool,
) -> Result<(), WireError> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let limit = |id: usize| cfg.splits.get(id).map(|s| s.payload_bytes);
    while let Some(req) = read_request(&mut reader, limit)? {
        let tick = req.tick as usize;
        let Some(pose) = cfg.dnn.get(tick) else {
            return Err(WireError::Malformed(format!(
                "tick {tick} outside the trace ({} ticks)",
                cfg.dnn.len()
            )));
        };
        let compute_ms = cfg.splits[req.split_id].rsu_compute_ms + cfg.extra_delay_ms;
        if !sleep_unless(Duration::from_secs_f64(compute_ms / 1000.0), stop) {
            return Ok(());
        }
        write_response(
            &mut writer,
            &InferResponse {
                seq: req.seq,
                split_id: req.split_id,
                rsu_compute_ms: compute_ms,
                pose: pose.clone(),
            },
        )?;
    }
    Ok(())
}

/// Sleeps for `d`; returns false early if `stop` is raised.
fn sleep_unless(d: Duration, stop: &AtomicBool) -> bool {
    let end = Instant::now() + d;
    loop {
        if stop.load(Ordering::SeqCst) {
            return false;
        }
        let now = Instant::now();
        if now >= end {
            return true;
        }
        thread::sleep((end - now).min(POLL));
    }
}

#[cfg(test)]
mod tests {
    use super::super::wire::{read_response, write_request, InferRequest};
    use super::*;
    use crate::netsim::default_splits;
    use std::io::Write;

    fn rsu(extra_delay_ms: f64) -> RsuHandle {
        let mut splits = default_splits();
        splits.iter_mut().for_each(|s| s.rsu_compute_ms = 2.0);
        let cfg = RsuConfig {
            splits,
            dnn: (0..10)
                .map(|i| Pose::from([i as f64, -(i as f64)]))
                .collect(),
            extra_delay_ms,
        };
        spawn_rsu(TcpListener::bind("127.0.0.1:0").unwrap(), cfg).unwrap()
    }

    fn request(seq: u64, split_id: usize, tick: u64) -> InferRequest {
        InferRequest {
            seq,
            split_id,
            tick,
            capture_ts_ms: 0,
            payload_len: default_splits()[split_id].payload_bytes,
        }
    }

    #[test]
    fn answers_in_order_with_echoed_seq() {
        let h = rsu(0.0);
        let s = TcpStream::connect(h.local_addr()).unwrap();
        let mut r = BufReader::new(s.try_clone().unwrap());
        let mut w = BufWriter::new(s);
        write_request(&mut w, &request(1, 0, 3)).unwrap();
        write_request(&mut w, &request(2, 4, 4)).unwrap();
        let a = read_response(&mut r).unwrap().unwrap();
        let b = read_response(&mut r).unwrap().unwrap();
        assert_eq!((a.seq, a.split_id, a.pose), (1, 0, Pose::from([3.0, -3.0])));
        assert_eq!((b.seq, b.split_id), (2, 4));
        assert_eq!(a.rsu_compute_ms, 2.0);
    }

    #[test]
    fn round_trip_covers_compute_time() {
        let h = rsu(30.0);
        let s = TcpStream::connect(h.local_addr()).unwrap();
        let mut r = BufReader::new(s.try_clone().unwrap());
        let mut w = BufWriter::new(s);
        let t0 = Instant::now();
        write_request(&mut w, &request(0, 3, 0)).unwrap();
        let rsp = read_response(&mut r).unwrap().unwrap();
        assert!(t0.elapsed().as_secs_f64() * 1000.0 >= rsp.rsu_compute_ms);
        assert_eq!(rsp.rsu_compute_ms, 32.0);
    }

    #[test]
    fn oversized_payload_closes_connection() {
        let h = rsu(0.0);
        let s = TcpStream::connect(h.local_addr()).unwrap();
        let mut r = BufReader::new(s.try_clone().unwrap());
        let mut w = BufWriter::new(s);
        let mut req = request(0, 4, 0);
        req.payload_len += 1;
        write_request(&mut w, &req).unwrap();
        assert!(matches!(read_response(&mut r), Ok(None) | Err(_)));
    }

    #[test]
    fn malformed_header_closes_connection() {
        let h = rsu(0.0);
        let mut s = TcpStream::connect(h.local_addr()).unwrap();
        s.write_all(b"HELLO\n").unwrap();
        let mut r = BufReader::new(s);
        assert!(matches!(read_response(&mut r), Ok(None) | Err(_)));
    }

    #[test]
    fn kill_drops_open_connections() {
        let mut h = rsu(5000.0);
        let s = TcpStream::connect(h.local_addr()).unwrap();
        let mut r = BufReader::new(s.try_clone().unwrap());
        let mut w = BufWriter::new(s);
        write_request(&mut w, &request(0, 4, 0)).unwrap();
        thread::sleep(Duration::from_millis(50));
        let t0 = Instant::now();
        h.kill();
        assert!(matches!(read_response(&mut r), Ok(None) | Err(_)));
        assert!(t0.elapsed() < Duration::from_secs(1));
    }
}
