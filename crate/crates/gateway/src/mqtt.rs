//! MQTT 3.1.1 subset for device publishing: CONNECT, PUBLISH at QoS 0/1,
//! PINGREQ and DISCONNECT. The broker does not route messages to
//! subscribers; SUBSCRIBE is answered with a failure code.
//!
//! A QoS 1 PUBACK means the gateway has processed the message, accepted or
//! rejected; rejections are counted in the gateway's stats and logged.

use std::io;
use std::net::SocketAddr;
use std::sync::Arc;

use thiserror::Error;
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::watch;

use crate::ingest::Gateway;
use crate::message::{parse_message, parse_topic, DeviceMessage};
use predihealth::model::DeviceId;

pub const MAX_PACKET: usize = 256 * 1024;

const CONNECT: u8 = 1;
const CONNACK: u8 = 2;
const PUBLISH: u8 = 3;
const PUBACK: u8 = 4;
const SUBSCRIBE: u8 = 8;
const SUBACK: u8 = 9;
const PINGREQ: u8 = 12;
const PINGRESP: u8 = 13;
const DISCONNECT: u8 = 14;

pub const CONNACK_ACCEPTED: u8 = 0;
pub const CONNACK_BAD_PROTOCOL: u8 = 1;
pub const CONNACK_BAD_CREDENTIALS: u8 = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Packet {
    Connect { client_id: String, username: Option<String>, password: Option<Vec<u8>>, keep_alive: u16 },
    ConnAck { session_present: bool, code: u8 },
    Publish { topic: String, packet_id: Option<u16>, payload: Vec<u8> },
    PubAck { packet_id: u16 },
    Subscribe { packet_id: u16, filters: Vec<(String, u8)> },
    SubAck { packet_id: u16, codes: Vec<u8> },
    PingReq,
    PingResp,
    Disconnect,
}

#[derive(Debug, Error)]
pub enum MqttError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("malformed packet: {0}")]
    Malformed(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("connection refused with code {0}")]
    Refused(u8),
}

fn malformed(why: impl Into<String>) -> MqttError {
    MqttError::Malformed(why.into())
}

fn put_str(out: &mut Vec<u8>, s: &[u8]) {
    out.extend_from_slice(&(s.len() as u16).to_be_bytes());
    out.extend_from_slice(s);
}

fn put_remaining_length(out: &mut Vec<u8>, mut n: usize) {
    loop {
        let mut byte = (n % 128) as u8;
        n /= 128;
        if n > 0 {
            byte |= 0x80;
        }
        out.push(byte);
        if n == 0 {
            break;
        }
    }
}

pub fn encode(packet: &Packet) -> Vec<u8> {
    let (header, body) = match packet {
        Packet::Connect { client_id, username, password, keep_alive } => {
            let mut b = Vec::new();
            put_str(&mut b, b"MQTT");
            b.push(4);
            let flags = 0x02 | if username.is_some() { 0x80 } else { 0 } | if password.is_some() { 0x40 } else { 0 };
            b.push(flags);
            b.extend_from_slice(&keep_alive.to_be_bytes());
            put_str(&mut b, client_id.as_bytes());
            if let Some(u) = username {
                put_str(&mut b, u.as_bytes());
            }
            if let Some(p) = password {
                put_str(&mut b, p);
            }
            (CONNECT << 4, b)
        }
        Packet::ConnAck { session_present, code } => (CONNACK << 4, vec![u8::from(*session_present), *code]),
        Packet::Publish { topic, packet_id, payload } => {
            let mut b = Vec::new();
            put_str(&mut b, topic.as_bytes());
            if let Some(id) = packet_id {
                b.extend_from_slice(&id.to_be_bytes());
            }
            b.extend_from_slice(payload);
            let qos = if packet_id.is_some() { 1 } else { 0 };
            ((PUBLISH << 4) | (qos << 1), b)
        }
        Packet::PubAck { packet_id } => (PUBACK << 4, packet_id.to_be_bytes().to_vec()),
        Packet::Subscribe { packet_id, filters } => {
            let mut b = packet_id.to_be_bytes().to_vec();
            for (f, qos) in filters {
                put_str(&mut b, f.as_bytes());
                b.push(*qos);
            }
            ((SUBSCRIBE << 4) | 0x02, b)
        }
        Packet::SubAck { packet_id, codes } => {
            let mut b = packet_id.to_be_bytes().to_vec();
            b.extend_from_slice(codes);
            (SUBACK << 4, b)
        }
        Packet::PingReq => (PINGREQ << 4, Vec::new()),
        Packet::PingResp => (PINGRESP << 4, Vec::new()),
        Packet::Disconnect => (DISCONNECT << 4, Vec::new()),
    };
    let mut out = vec![header];
    put_remaining_length(&mut out, body.len());
    out.extend_from_slice(&body);
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], MqttError> {
        if self.buf.len() < n {
            return Err(malformed("packet shorter than its fields"));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, MqttError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, MqttError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn bytes(&mut self) -> Result<&'a [u8], MqttError> {
        let n = self.u16()? as usize;
        self.take(n)
    }

    fn string(&mut self) -> Result<String, MqttError> {
        String::from_utf8(self.bytes()?.to_vec()).map_err(|_| malformed("string is not UTF-8"))
    }
}

pub fn decode(header: u8, body: &[u8]) -> Result<Packet, MqttError> {
    let mut c = Cursor { buf: body };
    let kind = header >> 4;
    let flags = header & 0x0F;
    let packet = match kind {
        CONNECT => {
            let protocol = c.string()?;
            let level = c.u8()?;
            if protocol != "MQTT" || level != 4 {
                return Err(MqttError::Unsupported(format!("protocol {protocol} level {level}")));
            }
            let cflags = c.u8()?;
            let keep_alive = c.u16()?;
            let client_id = c.string()?;
            if cflags & 0x04 != 0 {
                return Err(MqttError::Unsupported("will messages".into()));
            }
            let username = if cflags & 0x80 != 0 { Some(c.string()?) } else { None };
            let password = if cflags & 0x40 != 0 { Some(c.bytes()?.to_vec()) } else { None };
            Packet::Connect { client_id, username, password, keep_alive }
        }
        CONNACK => Packet::ConnAck { session_present: c.u8()? & 1 == 1, code: c.u8()? },
        PUBLISH => {
            let qos = (flags >> 1) & 0x03;
            if qos > 1 {
                return Err(MqttError::Unsupported(format!("QoS {qos}")));
            }
            let topic = c.string()?;
            let packet_id = if qos == 1 { Some(c.u16()?) } else { None };
            Packet::Publish { topic, packet_id, payload: c.buf.to_vec() }
        }
        PUBACK => Packet::PubAck { packet_id: c.u16()? },
        SUBSCRIBE => {
            let packet_id = c.u16()?;
            let mut filters = Vec::new();
            while !c.buf.is_empty() {
                filters.push((c.string()?, c.u8()?));
            }
            Packet::Subscribe { packet_id, filters }
        }
        SUBACK => {
            let packet_id = c.u16()?;
            Packet::SubAck { packet_id, codes: c.buf.to_vec() }
        }
        PINGREQ => Packet::PingReq,
        PINGRESP => Packet::PingResp,
        DISCONNECT => Packet::Disconnect,
        other => return Err(MqttError::Unsupported(format!("packet type {other}"))),
    };
    Ok(packet)
}

/// Reads one packet; `Ok(None)` on a clean EOF between packets.
pub async fn read_packet<R: AsyncRead + Unpin>(r: &mut R) -> Result<Option<Packet>, MqttError> {
    let mut header = [0u8; 1];
    match r.read_exact(&mut header).await {
        Ok(_) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let mut len = 0usize;
    for i in 0..4 {
        let b = r.read_u8().await?;
        len |= usize::from(b & 0x7F) << (7 * i);
        if b & 0x80 == 0 {
            break;
        }
        if i == 3 {
            return Err(malformed("remaining length longer than four bytes"));
        }
    }
    if len > MAX_PACKET {
        return Err(malformed(format!("packet of {len} bytes exceeds limit")));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body).await?;
    decode(header[0], &body).map(Some)
}

async fn send<W: AsyncWrite + Unpin>(w: &mut W, p: &Packet) -> Result<(), MqttError> {
    w.write_all(&encode(p)).await?;
    Ok(())
}

/// Accepts connections until `shutdown` flips to true.
pub async fn serve(listener: TcpListener, gateway: Arc<Gateway>, mut shutdown: watch::Receiver<bool>) {
    loop {
        tokio::select! {
            accepted = listener.accept() => match accepted {
                Ok((stream, peer)) => {
                    let gw = gateway.clone();
                    tokio::spawn(async move {
                        if let Err(e) = handle(stream, gw).await {
                            tracing::debug!(%peer, error = %e, "mqtt connection ended");
                        }
                    });
                }
                Err(e) => tracing::warn!(error = %e, "mqtt accept failed"),
            },
            _ = shutdown.changed() => return,
        }
    }
}

fn process(gateway: &Gateway, topic: &str, payload: &[u8]) -> Result<(), String> {
    let (patient, metric) = parse_topic(topic).ok_or_else(|| format!("topic `{topic}` outside the scheme"))?;
    let msg: DeviceMessage = parse_message(payload).map_err(|e| e.to_string())?;
    if msg.patient_id.as_str() != patient || msg.metric != metric {
        return Err(format!("payload addressed to {}/{} arrived on {topic}", msg.patient_id, msg.metric));
    }
    gateway.ingest(&msg).map(|_| ()).map_err(|e| e.to_string())
}

async fn handle(stream: TcpStream, gateway: Arc<Gateway>) -> Result<(), MqttError> {
    stream.set_nodelay(true)?;
    let (rd, mut wr) = stream.into_split();
    let mut rd = BufReader::new(rd);
    let connect = match read_packet(&mut rd).await {
        Ok(Some(p)) => p,
        Ok(None) => return Ok(()),
        Err(MqttError::Unsupported(why)) => {
            send(&mut wr, &Packet::ConnAck { session_present: false, code: CONNACK_BAD_PROTOCOL }).await?;
            return Err(MqttError::Unsupported(why));
        }
        Err(e) => return Err(e),
    };
    let Packet::Connect { username, password, .. } = connect else {
        return Err(malformed("first packet was not CONNECT"));
    };
    // credentials at connect are optional; every payload carries its own token
    if let Some(user) = username {
        let token = String::from_utf8(password.unwrap_or_default()).unwrap_or_default();
        if gateway.registry().authenticate(&DeviceId::new(user), &token).is_err() {
            send(&mut wr, &Packet::ConnAck { session_present: false, code: CONNACK_BAD_CREDENTIALS }).await?;
            return Ok(());
        }
    }
    send(&mut wr, &Packet::ConnAck { session_present: false, code: CONNACK_ACCEPTED }).await?;

    while let Some(packet) = read_packet(&mut rd).await? {
        match packet {
            Packet::Publish { topic, packet_id, payload } => {
                if let Err(why) = process(&gateway, &topic, &payload) {
                    tracing::warn!(%topic, reason = %why, "mqtt message rejected");
                }
                if let Some(packet_id) = packet_id {
                    send(&mut wr, &Packet::PubAck { packet_id }).await?;
                }
            }
            Packet::Subscribe { packet_id, filters } => {
                let codes = vec![0x80; filters.len()];
                send(&mut wr, &Packet::SubAck { packet_id, codes }).await?;
            }
            Packet::PingReq => send(&mut wr, &Packet::PingResp).await?,
            Packet::Disconnect => return Ok(()),
            other => return Err(malformed(format!("unexpected {other:?} from client"))),
        }
    }
    Ok(())
}

/// Publishing client used by the simulator and tests.
pub struct MqttClient {
    rd: BufReader<tokio::net::tcp::OwnedReadHalf>,
    wr: tokio::net::tcp::OwnedWriteHalf,
    next_id: u16,
}

impl MqttClient {
    pub async fn connect(addr: SocketAddr, client_id: &str, login: Option<(&str, &str)>) -> Result<Self, MqttError> {
        let stream = TcpStream::connect(addr).await?;
        stream.set_nodelay(true)?;
        let (rd, wr) = stream.into_split();
        let mut client = MqttClient { rd: BufReader::new(rd), wr, next_id: 1 };
        let connect = Packet::Connect {
            client_id: client_id.to_owned(),
            username: login.map(|(u, _)| u.to_owned()),
            password: login.map(|(_, p)| p.as_bytes().to_vec()),
            keep_alive: 60,
        };
        send(&mut client.wr, &connect).await?;
        match read_packet(&mut client.rd).await? {
            Some(Packet::ConnAck { code: CONNACK_ACCEPTED, .. }) => Ok(client),
            Some(Packet::ConnAck { code, .. }) => Err(MqttError::Refused(code)),
            other => Err(malformed(format!("expected CONNACK, got {other:?}"))),
        }
    }

    /// QoS 1 publish; returns once the broker has acknowledged it.
    pub async fn publish(&mut self, topic: &str, payload: &[u8]) -> Result<(), MqttError> {
        let packet_id = self.next_id;
        self.next_id = self.next_id.checked_add(1).unwrap_or(1);
        let p = Packet::Publish { topic: topic.to_owned(), packet_id: Some(packet_id), payload: payload.to_vec() };
        send(&mut self.wr, &p).await?;
        loop {
            match read_packet(&mut self.rd).await? {
                Some(Packet::PubAck { packet_id: id }) if id == packet_id => return Ok(()),
                Some(Packet::PubAck { .. }) | Some(Packet::PingResp) => {}
                other => return Err(malformed(format!("expected PUBACK {packet_id}, got {other:?}"))),
            }
        }
    }

    pub async fn ping(&mut self) -> Result<(), MqttError> {
        send(&mut self.wr, &Packet::PingReq).await?;
        match read_packet(&mut self.rd).await? {
            Some(Packet::PingResp) => Ok(()),
            other => Err(malformed(format!("expected PINGRESP, got {other:?}"))),
        }
    }

    pub async fn disconnect(mut self) -> Result<(), MqttError> {
        send(&mut self.wr, &Packet::Disconnect).await?;
        self.wr.shutdown().await?;
        Ok(())
    }
}
