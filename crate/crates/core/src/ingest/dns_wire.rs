//! Minimal DNS-over-UDP client for AAAA lookups against a recursive resolver.

use std::io::ErrorKind;
use std::net::{SocketAddr, UdpSocket};
use std::time::Duration;

use super::resolve::{AaaaResolver, LookupFailure};
use crate::addr::Address128;

const TYPE_AAAA: u16 = 28;
const CLASS_IN: u16 = 1;
const RCODE_SERVFAIL: u8 = 2;
const RCODE_NXDOMAIN: u8 = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireAnswer {
    pub rcode: u8,
    pub truncated: bool,
    pub addrs: Vec<Address128>,
}

/// Encodes a recursion-desired AAAA query for `name`.
pub fn build_aaaa_query(id: u16, name: &str) -> Vec<u8> {
    let mut buf = Vec::with_capacity(18 + name.len());
    buf.extend_from_slice(&id.to_be_bytes());
    buf.extend_from_slice(&[0x01, 0x00]); // RD
    buf.extend_from_slice(&[0, 1, 0, 0, 0, 0, 0, 0]);
    encode_name(&mut buf, name);
    buf.extend_from_slice(&TYPE_AAAA.to_be_bytes());
    buf.extend_from_slice(&CLASS_IN.to_be_bytes());
    buf
}

fn encode_name(buf: &mut Vec<u8>, name: &str) {
    for label in name.trim_end_matches('.').split('.').filter(|l| !l.is_empty()) {
        buf.push(label.len() as u8);
        buf.extend_from_slice(label.as_bytes());
    }
    buf.push(0);
}

/// Advances past a possibly-compressed name, returning the offset after it.
fn skip_name(msg: &[u8], mut pos: usize) -> Option<usize> {
    loop {
        let len = *msg.get(pos)?;
        match len & 0xc0 {
            0x00 if len == 0 => return Some(pos + 1),
            0x00 => pos += 1 + len as usize,
            0xc0 => {
                msg.get(pos + 1)?;
                return Some(pos + 2);
            }
            _ => return None,
        }
    }
}

fn read_u16(msg: &[u8], pos: usize) -> Option<u16> {
    Some(u16::from_be_bytes([*msg.get(pos)?, *msg.get(pos + 1)?]))
}

/// Parses a response to the query with `id`. Returns `None` for anything
/// that is not a well-formed reply to that query.
pub fn parse_aaaa_response(id: u16, msg: &[u8]) -> Option<WireAnswer> {
    if msg.len() < 12 || read_u16(msg, 0)? != id || msg[2] & 0x80 == 0 {
        return None;
    }
    let truncated = msg[2] & 0x02 != 0;
    let rcode = msg[3] & 0x0f;
    let qdcount = read_u16(msg, 4)?;
    let ancount = read_u16(msg, 6)?;
    let mut pos = 12;
    for _ in 0..qdcount {
        pos = skip_name(msg, pos)? + 4;
    }
    let mut addrs = Vec::new();
    for _ in 0..ancount {
        pos = skip_name(msg, pos)?;
        let rtype = read_u16(msg, pos)?;
        let class = read_u16(msg, pos + 2)?;
        let rdlen = read_u16(msg, pos + 8)? as usize;
        pos += 10;
        let rdata = msg.get(pos..pos + rdlen)?;
        if rtype == TYPE_AAAA && class == CLASS_IN && rdlen == 16 {
            let bytes: [u8; 16] = rdata.try_into().ok()?;
            addrs.push(Address128(u128::from_be_bytes(bytes)));
        }
        pos += rdlen;
    }
    Some(WireAnswer {
        rcode,
        truncated,
        addrs,
    })
}

/// Sends AAAA queries over UDP to one recursive resolver.
#[derive(Debug, Clone)]
pub struct DnsClient {
    server: SocketAddr,
    attempts: u32,
}

impl DnsClient {
    pub fn new(server: SocketAddr) -> Self {
        DnsClient { server, attempts: 2 }
    }

    pub fn with_attempts(mut self, attempts: u32) -> Self {
        self.attempts = attempts.max(1);
        self
    }

    fn query_once(&self, name: &str, timeout: Duration) -> Result<Vec<Address128>, LookupFailure> {
        let bind: SocketAddr = if self.server.is_ipv6() {
            "[::]:0".parse().unwrap()
        } else {
            "0.0.0.0:0".parse().unwrap()
        };
        let sock = UdpSocket::bind(bind).map_err(|_| LookupFailure::Unreachable)?;
        sock.connect(self.server).map_err(|_| LookupFailure::Unreachable)?;
        sock.set_read_timeout(Some(timeout.max(Duration::from_millis(1))))
            .map_err(|_| LookupFailure::Unreachable)?;
        let id: u16 = rand::random();
        sock.send(&build_aaaa_query(id, name))
            .map_err(|_| LookupFailure::Unreachable)?;

        let mut buf = [0u8; 4096];
        loop {
            let n = match sock.recv(&mut buf) {
                Ok(n) => n,
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                    return Err(LookupFailure::Timeout)
                }
                Err(_) => return Err(LookupFailure::Unreachable),
            };
            // Stray datagrams with a foreign id are ignored.
            let Some(answer) = parse_aaaa_response(id, &buf[..n]) else { continue };
            return match answer.rcode {
                0 if answer.addrs.is_empty() => Err(LookupFailure::NoData),
                0 => Ok(answer.addrs),
                RCODE_NXDOMAIN => Err(LookupFailure::NxDomain),
                RCODE_SERVFAIL => Err(LookupFailure::ServFail),
                _ => Err(LookupFailure::ServFail),
            };
        }
    }
}

impl AaaaResolver for DnsClient {
    fn lookup_aaaa(&self, name: &str, timeout: Duration) -> Result<Vec<Address128>, LookupFailure> {
        let mut last = LookupFailure::Timeout;
        for _ in 0..self.attempts {
            match self.query_once(name, timeout) {
                Err(LookupFailure::Timeout) => last = LookupFailure::Timeout,
                other => return other,
            }
        }
        Err(last)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::thread;

    fn reply(query: &[u8], rcode: u8, answers: &[[u8; 16]]) -> Vec<u8> {
        let mut msg = query.to_vec();
        msg[2] |= 0x80;
        msg[3] = 0x80 | rcode;
        msg[6..8].copy_from_slice(&(answers.len() as u16).to_be_bytes());
        // A CNAME first, to exercise skipping of non-AAAA records.
        if !answers.is_empty() {
            msg[6..8].copy_from_slice(&((answers.len() + 1) as u16).to_be_bytes());
            msg.extend_from_slice(&[0xc0, 12, 0, 5, 0, 1, 0, 0, 0, 60, 0, 2, 0xc0, 12]);
        }
        for a in answers {
            msg.extend_from_slice(&[0xc0, 12, 0, 28, 0, 1, 0, 0, 1, 0, 0, 16]);
            msg.extend_from_slice(a);
        }
        msg
    }

    #[test]
    fn query_layout() {
        let q = build_aaaa_query(0xbeef, "a.example");
        assert_eq!(&q[..4], &[0xbe, 0xef, 0x01, 0x00]);
        assert_eq!(&q[12..], b"\x01a\x07example\x00\x00\x1c\x00\x01");
    }

    #[test]
    fn parses_compressed_answers() {
        let q = build_aaaa_query(7, "a.example");
        let addr = 0x2001_0db8_0000_0000_0000_0000_0000_0010u128.to_be_bytes();
        let parsed = parse_aaaa_response(7, &reply(&q, 0, &[addr])).unwrap();
        assert_eq!(parsed.addrs, vec![Address128(0x2001_0db8 << 96 | 0x10)]);
        assert!(parse_aaaa_response(8, &reply(&q, 0, &[addr])).is_none());
        assert!(parse_aaaa_response(7, &q).is_none());
        assert!(parse_aaaa_response(7, &reply(&q, 0, &[addr])[..40]).is_none());
    }

    fn serve(responses: Vec<(u8, Vec<[u8; 16]>)>) -> SocketAddr {
        let sock = UdpSocket::bind("127.0.0.1:0").unwrap();
        let addr = sock.local_addr().unwrap();
        thread::spawn(move || {
            let mut buf = [0u8; 512];
            for (rcode, answers) in responses {
                let (n, peer) = sock.recv_from(&mut buf).unwrap();
                sock.send_to(&reply(&buf[..n], rcode, &answers), peer).unwrap();
            }
        });
        addr
    }

    #[test]
    fn client_against_local_server() {
        let a1 = [0x20, 0x01, 0x0d, 0xb8, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1];
        let server = serve(vec![(0, vec![a1, a1]), (3, vec![]), (0, vec![]), (2, vec![])]);
        let client = DnsClient::new(server);
        let t = Duration::from_secs(2);
        assert_eq!(client.lookup_aaaa("x.example", t).unwrap().len(), 2);
        assert_eq!(client.lookup_aaaa("y.example", t), Err(LookupFailure::NxDomain));
        assert_eq!(client.lookup_aaaa("z.example", t), Err(LookupFailure::NoData));
        assert_eq!(client.lookup_aaaa("w.example", t), Err(LookupFailure::ServFail));
    }

    #[test]
    fn silent_server_times_out() {
        let sock = UdpSocket::bind("127.0.0.1:0").unwrap();
        let client = DnsClient::new(sock.local_addr().unwrap()).with_attempts(1);
        assert_eq!(
            client.lookup_aaaa("x.example", Duration::from_millis(50)),
            Err(LookupFailure::Timeout)
        );
        drop(sock);
    }
}
