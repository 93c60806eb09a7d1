//! Line-oriented wire format.
//!
//! ```text
//! REQ <seq> <split_id> <tick> <capture_ts_ms> <payload_len>\n<payload_len bytes>
//! RSP <seq> <split_id> <rsu_compute_ms> <d> <x_1> ... <x_d>\n
//! ```
//!
//! Fields are separated by single spaces. Integers are unsigned decimal;
//! reals use Rust's shortest round-trip formatting and must be finite. The
//! request payload stands in for the split activation and is zero-filled
//! by senders; receivers read and discard it.

use crate::pose::Pose;
use std::io::{self, BufRead, Read, Write};
use thiserror::Error;

/// Longest accepted header line, bytes.
pub const MAX_LINE: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct InferRequest {
    pub seq: u64,
    pub split_id: usize,
    /// Vehicle tick at which the input was captured.
    pub tick: u64,
    pub capture_ts_ms: u64,
    pub payload_len: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferResponse {
    pub seq: u64,
    pub split_id: usize,
    pub rsu_compute_ms: f64,
    pub pose: Pose,
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("payload of {len} bytes exceeds limit {limit}")]
    PayloadTooLarge { len: u64, limit: u64 },
}

fn malformed<T>(msg: impl Into<String>) -> Result<T, WireError> {
    Err(WireError::Malformed(msg.into()))
}

pub fn request_header(req: &InferRequest) -> String {
    format!(
        "REQ {} {} {} {} {}\n",
        req.seq, req.split_id, req.tick, req.capture_ts_ms, req.payload_len
    )
}

pub fn response_line(rsp: &InferResponse) -> String {
    let mut s = format!(
        "RSP {} {} {} {}",
        rsp.seq,
        rsp.split_id,
        rsp.rsu_compute_ms,
        rsp.pose.dim()
    );
    for x in rsp.pose.coords() {
        s.push(' ');
        s.push_str(&x.to_string());
    }
    s.push('\n');
    s
}

fn int<T: std::str::FromStr>(field: &str, name: &str) -> Result<T, WireError> {
    if field.is_empty() || !field.bytes().all(|b| b.is_ascii_digit()) {
        return malformed(format!("{name}: expected unsigned integer, got {field:?}"));
    }
    field
        .parse()
        .map_err(|_| WireError::Malformed(format!("{name}: out of range: {field:?}")))
}

fn real(field: &str, name: &str) -> Result<f64, WireError> {
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => malformed(format!("{name}: expected finite real, got {field:?}")),
    }
}

fn fields(line: &str) -> Result<Vec<&str>, WireError> {
    let body = line
        .strip_suffix('\n')
        .ok_or_else(|| WireError::Malformed("missing line terminator".into()))?;
    Ok(body.split(' ').collect())
}

pub fn parse_request_header(line: &str) -> Result<InferRequest, WireError> {
    let f = fields(line)?;
    if f.len() != 6 || f[0] != "REQ" {
        return malformed(format!("bad request header {line:?}"));
    }
    Ok(InferRequest {
        seq: int(f[1], "seq")?,
        split_id: int(f[2], "split_id")?,
        tick: int(f[3], "tick")?,
        capture_ts_ms: int(f[4], "capture_ts_ms")?,
        payload_len: int(f[5], "payload_len")?,
    })
}

pub fn parse_response_line(line: &str) -> Result<InferResponse, WireError> {
    let f = fields(line)?;
    if f.len() < 5 || f[0] != "RSP" {
        return malformed(format!("bad response line {line:?}"));
    }
    let d: usize = int(f[4], "d")?;
    if d == 0 || f.len() != 5 + d {
        return malformed(format!(
            "response declares d = {d} but has {} coordinates",
            f.len() - 5
        ));
    }
    let coords = f[5..]
        .iter()
        .map(|x| real(x, "coordinate"))
        .collect::<Result<Vec<_>, _>>()?;
    let rsu_compute_ms = real(f[3], "rsu_compute_ms")?;
    if rsu_compute_ms < 0.0 {
        return malformed("rsu_compute_ms is negative");
    }
    Ok(InferResponse {
        seq: int(f[1], "seq")?,
        split_id: int(f[2], "split_id")?,
        rsu_compute_ms,
        pose: Pose::new(coords),
    })
}

/// Reads one `\n`-terminated line of at most [`MAX_LINE`] bytes. `None` on
/// clean end of stream before any byte.
fn read_line(r: &mut impl BufRead) -> Result<Option<String>, WireError> {
    let mut buf = Vec::new();
    let n = r.take(MAX_LINE as u64).read_until(b'\n', &mut buf)?;
    if n == 0 {
        return Ok(None);
    }
    if buf.last() != Some(&b'\n') {
        return if n >= MAX_LINE {
            malformed("header line too long")
        } else {
            Err(io::Error::from(io::ErrorKind::UnexpectedEof).into())
        };
    }
    String::from_utf8(buf)
        .map(Some)
        .map_err(|_| WireError::Malformed("header is not UTF-8".into()))
}

pub fn write_request(w: &mut impl Write, req: &InferRequest) -> io::Result<()> {
    w.write_all(request_header(req).as_bytes())?;
    const ZEROS: [u8; 8192] = [0; 8192];
    let mut left = req.payload_len;
    while left > 0 {
        let n = left.min(ZEROS.len() as u64) as usize;
        w.write_all(&ZEROS[..n])?;
        left -= n as u64;
    }
    w.flush()
}

/// Reads a request and consumes its payload. `limit(split_id)` gives the
/// largest payload allowed for that split, `None` for an unknown split.
pub fn read_request(
    r: &mut impl BufRead,
    limit: impl Fn(usize) -> Option<u64>,
) -> Result<Option<InferRequest>, WireError> {
    let Some(line) = read_line(r)? else {
        return Ok(None);
    };
    let req = parse_request_header(&line)?;
    let Some(max) = limit(req.split_id) else {
        return malformed(format!("unknown split {}", req.split_id));
    };
    if req.payload_len > max {
        return Err(WireError::PayloadTooLarge {
            len: req.payload_len,
            limit: max,
        });
    }
    let copied = io::copy(&mut r.take(req.payload_len), &mut io::sink())?;
    if copied != req.payload_len {
        return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into());
    }
    Ok(Some(req))
}

pub fn write_response(w: &mut impl Write, rsp: &InferResponse) -> io::Result<()> {
    w.write_all(response_line(rsp).as_bytes())?;
    w.flush()
}

pub fn read_response(r: &mut impl BufRead) -> Result<Option<InferResponse>, WireError> {
    match read_line(r)? {
        None => Ok(None),
        Some(line) => parse_response_line(&line).map(Some),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(payload_len: u64) -> InferRequest {
        InferRequest {
            seq: 7,
            split_id: 2,
            tick: 41,
            capture_ts_ms: 1_700_000_000_123,
            payload_len,
        }
    }

    #[test]
    fn request_round_trip() {
        let mut buf = Vec::new();
        write_request(&mut buf, &req(5)).unwrap();
        assert_eq!(buf.len(), "REQ 7 2 41 1700000000123 5\n".len() + 5);
        let got = read_request(&mut buf.as_slice(), |_| Some(10))
            .unwrap()
            .unwrap();
        assert_eq!(got, req(5));
    }

    #[test]
    fn response_round_trip() {
        let rsp = InferResponse {
            seq: 3,
            split_id: 0,
            rsu_compute_ms: 120.0,
            pose: Pose::from([0.1, -2.5e-9]),
        };
        let line = response_line(&rsp);
        assert_eq!(parse_response_line(&line).unwrap(), rsp);
    }

    #[test]
    fn two_requests_in_order() {
        let mut buf = Vec::new();
        write_request(&mut buf, &req(3)).unwrap();
        write_request(&mut buf, &InferRequest { seq: 8, ..req(0) }).unwrap();
        let mut r = buf.as_slice();
        assert_eq!(read_request(&mut r, |_| Some(3)).unwrap().unwrap().seq, 7);
        assert_eq!(read_request(&mut r, |_| Some(3)).unwrap().unwrap().seq, 8);
        assert!(read_request(&mut r, |_| Some(3)).unwrap().is_none());
    }

    #[test]
    fn oversized_payload_rejected() {
        let mut buf = Vec::new();
        write_request(&mut buf, &req(11)).unwrap();
        let err = read_request(&mut buf.as_slice(), |_| Some(10)).unwrap_err();
        assert!(matches!(
            err,
            WireError::PayloadTooLarge { len: 11, limit: 10 }
        ));
    }

    #[test]
    fn malformed_frames_rejected() {
        for line in [
            "REQ 1 2 3 4\n",
            "REQ 1 2 3 4 5",
            "REQ -1 2 3 4 5\n",
            "REQ 1 2 3 4 5 6\n",
            "REQ 1  2 3 4 5\n",
            "GET / HTTP/1.1\n",
        ] {
            assert!(parse_request_header(line).is_err(), "{line:?}");
        }
        for line in [
            "RSP 1 0 5 2 1.0\n",
            "RSP 1 0 5 1 NaN\n",
            "RSP 1 0 -5 1 1.0\n",
            "RSP 1 0 5 0\n",
            "RSP 1 0 5 1 inf\n",
        ] {
            assert!(parse_response_line(line).is_err(), "{line:?}");
        }
        let long = format!("REQ {}\n", "1".repeat(MAX_LINE));
        assert!(matches!(
            read_request(&mut long.as_bytes(), |_| Some(1)),
            Err(WireError::Malformed(_))
        ));
    }

    #[test]
    fn truncated_payload_is_io_error() {
        let mut buf = Vec::new();
        write_request(&mut buf, &req(10)).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(
            read_request(&mut buf.as_slice(), |_| Some(10)),
            Err(WireError::Io(_))
        ));
    }
}
