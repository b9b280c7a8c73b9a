//! Privileged raw-socket prober for real networks.
//!
//! Opening requires an explicit authorization acknowledgment and a
//! blacklist; every probe re-checks the blacklist before sending.

use std::io;
use std::mem;
use std::net::{Ipv6Addr, SocketAddrV6, UdpSocket};
use std::os::fd::{AsRawFd, FromRawFd, OwnedFd};
use std::time::{Duration, Instant};

use super::sim::mix;
use super::{ProbeError, Prober, ReplyKind, ScanType};
use crate::addr::Address128;
use crate::filter::PrefixSet;

pub const ICMP6_ECHO_REQUEST: u8 = 128;
pub const ICMP6_ECHO_REPLY: u8 = 129;
const TCP_CHECKSUM_OFFSET: libc::c_int = 16;
const TCP_SYN: u8 = 0x02;
const TCP_RST: u8 = 0x04;
const TCP_ACK: u8 = 0x10;

#[derive(Debug, Clone)]
pub struct RawConfig {
    pub authorized: bool,
    pub blacklist: Option<PrefixSet>,
    pub timeout: Duration,
    pub source_port: u16,
}

impl Default for RawConfig {
    fn default() -> Self {
        RawConfig {
            authorized: false,
            blacklist: None,
            timeout: Duration::from_secs(2),
            source_port: 44_321,
        }
    }
}

/// 32-bit per-task cookie: ICMP identifier/sequence and TCP sequence number.
pub fn task_cookie(target: Address128, scan: ScanType, at_ms: i64) -> u32 {
    mix(target.0 as u64 ^ mix((target.0 >> 64) as u64 ^ mix(scan.code() ^ mix(at_ms as u64)))) as u32
}

pub fn echo_request(ident: u16, seq: u16, payload: &[u8]) -> Vec<u8> {
    // The kernel fills in the ICMPv6 checksum on raw sockets.
    let mut p = vec![ICMP6_ECHO_REQUEST, 0, 0, 0];
    p.extend_from_slice(&ident.to_be_bytes());
    p.extend_from_slice(&seq.to_be_bytes());
    p.extend_from_slice(payload);
    p
}

/// (identifier, sequence) of an echo reply.
pub fn parse_echo_reply(buf: &[u8]) -> Option<(u16, u16)> {
    if buf.len() < 8 || buf[0] != ICMP6_ECHO_REPLY || buf[1] != 0 {
        return None;
    }
    Some((u16::from_be_bytes([buf[4], buf[5]]), u16::from_be_bytes([buf[6], buf[7]])))
}

/// Bare 20-byte SYN; the checksum is left to the kernel via IPV6_CHECKSUM.
pub fn tcp_syn(src_port: u16, dst_port: u16, seq: u32) -> Vec<u8> {
    let mut h = vec![0u8; 20];
    h[0..2].copy_from_slice(&src_port.to_be_bytes());
    h[2..4].copy_from_slice(&dst_port.to_be_bytes());
    h[4..8].copy_from_slice(&seq.to_be_bytes());
    h[12] = 5 << 4;
    h[13] = TCP_SYN;
    h[14..16].copy_from_slice(&65_535u16.to_be_bytes());
    h
}

/// Classifies a TCP segment answering a SYN with sequence `seq`.
pub fn parse_tcp_reply(buf: &[u8], src_port: u16, dst_port: u16, seq: u32) -> Option<ReplyKind> {
    if buf.len() < 20 {
        return None;
    }
    let from = u16::from_be_bytes([buf[0], buf[1]]);
    let to = u16::from_be_bytes([buf[2], buf[3]]);
    let ack = u32::from_be_bytes([buf[8], buf[9], buf[10], buf[11]]);
    if from != dst_port || to != src_port || ack != seq.wrapping_add(1) {
        return None;
    }
    let flags = buf[13];
    if flags & TCP_RST != 0 {
        Some(ReplyKind::Rst)
    } else if flags & (TCP_SYN | TCP_ACK) == TCP_SYN | TCP_ACK {
        Some(ReplyKind::SynAck)
    } else {
        None
    }
}

fn raw_socket(proto: libc::c_int) -> Result<OwnedFd, ProbeError> {
    // SAFETY: plain socket(2) call; the fd is owned immediately.
    let fd = unsafe { libc::socket(libc::AF_INET6, libc::SOCK_RAW | libc::SOCK_CLOEXEC, proto) };
    if fd < 0 {
        let e = io::Error::last_os_error();
        return Err(match e.raw_os_error() {
            Some(libc::EPERM) | Some(libc::EACCES) => ProbeError::InsufficientPrivilege(e.to_string()),
            _ => ProbeError::Io(e),
        });
    }
    // SAFETY: fd was just returned by socket(2) and is not owned elsewhere.
    Ok(unsafe { OwnedFd::from_raw_fd(fd) })
}

fn sockaddr(addr: Address128) -> libc::sockaddr_in6 {
    // SAFETY: sockaddr_in6 is plain data; all-zero is a valid value.
    let mut sa: libc::sockaddr_in6 = unsafe { mem::zeroed() };
    sa.sin6_family = libc::AF_INET6 as libc::sa_family_t;
    sa.sin6_addr.s6_addr = addr.0.to_be_bytes();
    sa
}

fn send_to(fd: &OwnedFd, packet: &[u8], dst: Address128) -> io::Result<()> {
    let sa = sockaddr(dst);
    // SAFETY: buffer and sockaddr pointers are valid for the given lengths.
    let n = unsafe {
        libc::sendto(
            fd.as_raw_fd(),
            packet.as_ptr().cast(),
            packet.len(),
            0,
            (&sa as *const libc::sockaddr_in6).cast(),
            mem::size_of::<libc::sockaddr_in6>() as libc::socklen_t,
        )
    };
    if n < 0 {
        return Err(io::Error::last_os_error());
    }
    Ok(())
}

/// Reads datagrams from `fd` until `matcher` accepts one from `from` or
/// the deadline passes.
fn recv_match<T>(
    fd: &OwnedFd,
    from: Address128,
    deadline: Instant,
    mut matcher: impl FnMut(&[u8]) -> Option<T>,
) -> io::Result<Option<T>> {
    let mut buf = [0u8; 2048];
    loop {
        let now = Instant::now();
        if now >= deadline {
            return Ok(None);
        }
        let wait = (deadline - now).as_millis().min(i32::MAX as u128) as libc::c_int;
        let mut pfd = libc::pollfd {
            fd: fd.as_raw_fd(),
            events: libc::POLLIN,
            revents: 0,
        };
        // SAFETY: one valid pollfd.
        let r = unsafe { libc::poll(&mut pfd, 1, wait.max(1)) };
        if r < 0 {
            let e = io::Error::last_os_error();
            if e.kind() == io::ErrorKind::Interrupted {
                continue;
            }
            return Err(e);
        }
        if r == 0 {
            return Ok(None);
        }
        // SAFETY: zeroed sockaddr_in6 is valid; lengths match the buffers.
        let mut sa: libc::sockaddr_in6 = unsafe { mem::zeroed() };
        let mut sl = mem::size_of::<libc::sockaddr_in6>() as libc::socklen_t;
        let n = unsafe {
            libc::recvfrom(
                fd.as_raw_fd(),
                buf.as_mut_ptr().cast(),
                buf.len(),
                0,
                (&mut sa as *mut libc::sockaddr_in6).cast(),
                &mut sl,
            )
        };
        if n < 0 {
            let e = io::Error::last_os_error();
            if e.kind() == io::ErrorKind::Interrupted {
                continue;
            }
            return Err(e);
        }
        if u128::from_be_bytes(sa.sin6_addr.s6_addr) != from.0 {
            continue;
        }
        if let Some(t) = matcher(&buf[..n as usize]) {
            return Ok(Some(t));
        }
    }
}

/// Sends one probe per call and waits up to the configured timeout for
/// the matching reply.
#[derive(Debug)]
pub struct RawProber {
    icmp: OwnedFd,
    tcp: OwnedFd,
    blacklist: PrefixSet,
    timeout: Duration,
    source_port: u16,
}

impl RawProber {
    pub fn open(cfg: RawConfig) -> Result<Self, ProbeError> {
        if !cfg.authorized {
            return Err(ProbeError::Unauthorized);
        }
        let blacklist = cfg.blacklist.ok_or(ProbeError::MissingBlacklist)?;
        let icmp = raw_socket(libc::IPPROTO_ICMPV6)?;
        let tcp = raw_socket(libc::IPPROTO_TCP)?;
        let off = TCP_CHECKSUM_OFFSET;
        // SAFETY: valid fd and a c_int option value.
        let r = unsafe {
            libc::setsockopt(
                tcp.as_raw_fd(),
                libc::IPPROTO_IPV6,
                libc::IPV6_CHECKSUM,
                (&off as *const libc::c_int).cast(),
                mem::size_of::<libc::c_int>() as libc::socklen_t,
            )
        };
        if r < 0 {
            return Err(io::Error::last_os_error().into());
        }
        Ok(RawProber {
            icmp,
            tcp,
            blacklist,
            timeout: cfg.timeout,
            source_port: cfg.source_port,
        })
    }

    fn probe_udp(&self, target: Address128, port: u16, payload: &[u8]) -> Result<ReplyKind, ProbeError> {
        let sock = UdpSocket::bind(SocketAddrV6::new(Ipv6Addr::UNSPECIFIED, 0, 0, 0))?;
        sock.connect(SocketAddrV6::new(Ipv6Addr::from(target.0), port, 0, 0))?;
        sock.set_read_timeout(Some(self.timeout))?;
        sock.send(payload)?;
        let mut buf = [0u8; 2048];
        match sock.recv(&mut buf) {
            Ok(_) => Ok(ReplyKind::UdpPayload),
            Err(e) if e.kind() == io::ErrorKind::ConnectionRefused => Ok(ReplyKind::IcmpError),
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                Ok(ReplyKind::NoReply)
            }
            Err(e) if e.raw_os_error() == Some(libc::EHOSTUNREACH) || e.raw_os_error() == Some(libc::ENETUNREACH) => {
                Ok(ReplyKind::IcmpError)
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Prober for RawProber {
    fn probe(&mut self, target: Address128, scan: ScanType, payload: &[u8], at_ms: i64) -> Result<ReplyKind, ProbeError> {
        if self.blacklist.contains(target) {
            return Err(ProbeError::BlacklistedTarget(target));
        }
        let cookie = task_cookie(target, scan, at_ms);
        match scan {
            ScanType::Icmp6 => {
                let (ident, seq) = ((cookie >> 16) as u16, cookie as u16);
                send_to(&self.icmp, &echo_request(ident, seq, payload), target)?;
                let deadline = Instant::now() + self.timeout;
                let got = recv_match(&self.icmp, target, deadline, |b| {
                    (parse_echo_reply(b) == Some((ident, seq))).then_some(())
                })?;
                Ok(got.map_or(ReplyKind::NoReply, |_| ReplyKind::EchoReply))
            }
            ScanType::Tcp(port) => {
                send_to(&self.tcp, &tcp_syn(self.source_port, port, cookie), target)?;
                let deadline = Instant::now() + self.timeout;
                let sp = self.source_port;
                let got = recv_match(&self.tcp, target, deadline, |b| parse_tcp_reply(b, sp, port, cookie))?;
                Ok(got.unwrap_or(ReplyKind::NoReply))
            }
            ScanType::Udp(port) => self.probe_udp(target, port, payload),
        }
    }
}
