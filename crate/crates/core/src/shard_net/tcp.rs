//! Minimal TCP transport: one connection per worker, one broadcast and one reply.

use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use ndarray::Array1;

use super::frame::{Frame, FrameError, Tag};
use crate::error::{DvsError, Result};
use crate::glm::{local_gradient, CoefVector, DataShard, Family};

fn aggregation_error(machine_id: usize, reason: impl Into<String>) -> DvsError {
    DvsError::Aggregation {
        machine_id,
        reason: reason.into(),
    }
}

/// Worker side: read one broadcast, reply with the local gradient.
pub fn serve_connection(mut stream: TcpStream, shard: &DataShard, family: Family) -> Result<()> {
    let frame = Frame::read_from(&mut stream)
        .map_err(|e| aggregation_error(shard.machine_id, format!("reading broadcast: {e}")))?;
    if frame.tag != Tag::BroadcastBeta {
        return Err(aggregation_error(shard.machine_id, "expected a broadcast frame"));
    }
    let beta = CoefVector::from_vec(frame.values);
    let grad = local_gradient(shard, &beta, family)?;
    Frame {
        tag: Tag::GradientReply,
        machine_id: shard.machine_id as u32,
        values: grad.to_vec(),
    }
    .write_to(&mut stream)?;
    Ok(())
}

/// Binds a loopback listener and serves exactly one coordinator connection on a new thread.
pub fn spawn_local_worker(
    shard: Arc<DataShard>,
    family: Family,
) -> Result<(SocketAddr, JoinHandle<Result<()>>)> {
    let listener = TcpListener::bind(("127.0.0.1", 0))?;
    let addr = listener.local_addr()?;
    let handle = std::thread::spawn(move || {
        let (stream, _) = listener.accept()?;
        serve_connection(stream, &shard, family)
    });
    Ok((addr, handle))
}

/// Coordinator side: send `beta` to the worker at `addr` and wait for its gradient.
///
/// Every failure (connect, timeout, malformed or mismatched reply,
/// non-finite gradient) is reported as an aggregation error naming `machine_id`.
pub fn request_gradient(
    addr: SocketAddr,
    machine_id: usize,
    beta: &CoefVector,
    timeout: Duration,
) -> Result<Array1<f64>> {
    let err = |reason: String| aggregation_error(machine_id, reason);
    let mut stream =
        TcpStream::connect_timeout(&addr, timeout).map_err(|e| err(format!("connect: {e}")))?;
    stream.set_read_timeout(Some(timeout))?;
    stream.set_write_timeout(Some(timeout))?;
    stream.set_nodelay(true)?;
    Frame {
        tag: Tag::BroadcastBeta,
        machine_id: machine_id as u32,
        values: beta.values().to_vec(),
    }
    .write_to(&mut stream)
    .map_err(|e| err(format!("send: {e}")))?;

    let reply = Frame::read_from(&mut stream).map_err(|e| match e {
        FrameError::Io(io)
            if matches!(io.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) =>
        {
            err(format!("timed out after {} ms", timeout.as_millis()))
        }
        other => err(format!("reply: {other}")),
    })?;
    if reply.tag != Tag::GradientReply {
        return Err(err("reply carried a broadcast tag".into()));
    }
    if reply.machine_id as usize != machine_id {
        return Err(err(format!("reply claims machine {}", reply.machine_id)));
    }
    if reply.values.len() != beta.len() {
        return Err(err(format!(
            "reply has p={}, expected {}",
            reply.values.len(),
            beta.len()
        )));
    }
    Ok(Array1::from(reply.values))
}
