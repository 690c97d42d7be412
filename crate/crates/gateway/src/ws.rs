//! Minimal RFC 6455 WebSocket support: the opening handshake, frame codec,
//! the server side of the alert stream, and a small client.
//!
//! Only what the alert stream needs: unfragmented text frames out, control
//! frames in. Messages from the client other than ping and close are ignored.

use std::io;
use std::net::SocketAddr;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use rand::RngCore;
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};
use tokio::net::TcpStream;

const GUID: &str = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";
pub const MAX_FRAME: usize = 1 << 20;

pub const OP_TEXT: u8 = 0x1;
pub const OP_BINARY: u8 = 0x2;
pub const OP_CLOSE: u8 = 0x8;
pub const OP_PING: u8 = 0x9;
pub const OP_PONG: u8 = 0xA;

fn sha1(data: &[u8]) -> [u8; 20] {
    let mut h: [u32; 5] = [0x6745_2301, 0xEFCD_AB89, 0x98BA_DCFE, 0x1032_5476, 0xC3D2_E1F0];
    let mut msg = data.to_vec();
    let bit_len = (data.len() as u64).wrapping_mul(8);
    msg.push(0x80);
    while msg.len() % 64 != 56 {
        msg.push(0);
    }
    msg.extend_from_slice(&bit_len.to_be_bytes());
    for chunk in msg.chunks_exact(64) {
        let mut w = [0u32; 80];
        for (i, word) in chunk.chunks_exact(4).enumerate() {
            w[i] = u32::from_be_bytes([word[0], word[1], word[2], word[3]]);
        }
        for i in 16..80 {
            w[i] = (w[i - 3] ^ w[i - 8] ^ w[i - 14] ^ w[i - 16]).rotate_left(1);
        }
        let [mut a, mut b, mut c, mut d, mut e] = h;
        for (i, wi) in w.iter().enumerate() {
            let (f, k) = match i {
                0..=19 => ((b & c) | (!b & d), 0x5A82_7999),
                20..=39 => (b ^ c ^ d, 0x6ED9_EBA1),
                40..=59 => ((b & c) | (b & d) | (c & d), 0x8F1B_BCDC),
                _ => (b ^ c ^ d, 0xCA62_C1D6),
            };
            let t = a.rotate_left(5).wrapping_add(f).wrapping_add(e).wrapping_add(k).wrapping_add(*wi);
            e = d;
            d = c;
            c = b.rotate_left(30);
            b = a;
            a = t;
        }
        for (hi, v) in h.iter_mut().zip([a, b, c, d, e]) {
            *hi = hi.wrapping_add(v);
        }
    }
    let mut out = [0u8; 20];
    for (i, v) in h.iter().enumerate() {
        out[i * 4..i * 4 + 4].copy_from_slice(&v.to_be_bytes());
    }
    out
}

/// `Sec-WebSocket-Accept` for a client's `Sec-WebSocket-Key`.
pub fn accept_key(key: &str) -> String {
    BASE64.encode(sha1(format!("{}{GUID}", key.trim()).as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub fin: bool,
    pub opcode: u8,
    pub payload: Vec<u8>,
}

/// Encodes one frame; clients must pass a mask, servers must not.
pub fn encode_frame(opcode: u8, payload: &[u8], mask: Option<[u8; 4]>) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + 14);
    out.push(0x80 | (opcode & 0x0F));
    let mask_bit = if mask.is_some() { 0x80 } else { 0 };
    match payload.len() {
        n if n < 126 => out.push(mask_bit | n as u8),
        n if n <= u16::MAX as usize => {
            out.push(mask_bit | 126);
            out.extend_from_slice(&(n as u16).to_be_bytes());
        }
        n => {
            out.push(mask_bit | 127);
            out.extend_from_slice(&(n as u64).to_be_bytes());
        }
    }
    match mask {
        Some(m) => {
            out.extend_from_slice(&m);
            out.extend(payload.iter().enumerate().map(|(i, b)| b ^ m[i % 4]));
        }
        None => out.extend_from_slice(payload),
    }
    out
}

/// Reads one frame, unmasking if needed. `Ok(None)` on a clean EOF before
/// the first byte.
pub async fn read_frame<R: AsyncRead + Unpin>(r: &mut R) -> io::Result<Option<Frame>> {
    let mut head = [0u8; 2];
    match r.read_exact(&mut head[..1]).await {
        Ok(_) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    r.read_exact(&mut head[1..]).await?;
    let fin = head[0] & 0x80 != 0;
    let opcode = head[0] & 0x0F;
    let masked = head[1] & 0x80 != 0;
    let len = match head[1] & 0x7F {
        126 => u64::from(r.read_u16().await?),
        127 => r.read_u64().await?,
        n => u64::from(n),
    };
    if len > MAX_FRAME as u64 {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {len} bytes exceeds limit")));
    }
    let mut mask = [0u8; 4];
    if masked {
        r.read_exact(&mut mask).await?;
    }
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload).await?;
    if masked {
        for (i, b) in payload.iter_mut().enumerate() {
            *b ^= mask[i % 4];
        }
    }
    Ok(Some(Frame { fin, opcode, payload }))
}

/// Server loop: forwards every text message from `events` and answers
/// control frames until either side closes.
pub async fn serve_stream<S>(mut io: S, mut events: tokio::sync::mpsc::Receiver<String>) -> io::Result<()>
where
    S: AsyncRead + AsyncWrite + Unpin,
{
    let (mut rd, mut wr) = tokio::io::split(&mut io);
    loop {
        tokio::select! {
            ev = events.recv() => match ev {
                Some(text) => wr.write_all(&encode_frame(OP_TEXT, text.as_bytes(), None)).await?,
                None => {
                    wr.write_all(&encode_frame(OP_CLOSE, &1001u16.to_be_bytes(), None)).await?;
                    return Ok(());
                }
            },
            frame = read_frame(&mut rd) => match frame? {
                None => return Ok(()),
                Some(f) if f.opcode == OP_PING => wr.write_all(&encode_frame(OP_PONG, &f.payload, None)).await?,
                Some(f) if f.opcode == OP_CLOSE => {
                    let _ = wr.write_all(&encode_frame(OP_CLOSE, &f.payload, None)).await;
                    return Ok(());
                }
                Some(_) => {}
            },
        }
    }
}

/// Client side of a WebSocket connection over plain TCP.
pub struct WsClient {
    stream: TcpStream,
}

impl WsClient {
    pub async fn connect(addr: SocketAddr, path: &str) -> io::Result<WsClient> {
        let mut stream = TcpStream::connect(addr).await?;
        let mut nonce = [0u8; 16];
        rand::rng().fill_bytes(&mut nonce);
        let key = BASE64.encode(nonce);
        let request = format!(
            "GET {path} HTTP/1.1\r\nHost: {addr}\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n\
             Sec-WebSocket-Key: {key}\r\nSec-WebSocket-Version: 13\r\n\r\n"
        );
        stream.write_all(request.as_bytes()).await?;

        let mut head = Vec::new();
        let mut byte = [0u8; 1];
        while !head.ends_with(b"\r\n\r\n") {
            if stream.read(&mut byte).await? == 0 || head.len() > 8192 {
                return Err(io::Error::new(io::ErrorKind::InvalidData, "handshake response truncated"));
            }
            head.push(byte[0]);
        }
        let head = String::from_utf8_lossy(&head);
        let bad = |why: &str| io::Error::new(io::ErrorKind::InvalidData, format!("{why}: {head}"));
        if !head.starts_with("HTTP/1.1 101") {
            return Err(bad("upgrade refused"));
        }
        let expected = accept_key(&key);
        let accepted = head.lines().any(|l| {
            l.split_once(':')
                .is_some_and(|(k, v)| k.eq_ignore_ascii_case("sec-websocket-accept") && v.trim() == expected)
        });
        if !accepted {
            return Err(bad("bad Sec-WebSocket-Accept"));
        }
        Ok(WsClient { stream })
    }

    fn mask() -> [u8; 4] {
        let mut m = [0u8; 4];
        rand::rng().fill_bytes(&mut m);
        m
    }

    pub async fn send(&mut self, opcode: u8, payload: &[u8]) -> io::Result<()> {
        self.stream.write_all(&encode_frame(opcode, payload, Some(Self::mask()))).await
    }

    /// Next text message; `None` once the server closes.
    pub async fn next_text(&mut self) -> io::Result<Option<String>> {
        loop {
            match read_frame(&mut self.stream).await? {
                None => return Ok(None),
                Some(f) if f.opcode == OP_TEXT => {
                    return String::from_utf8(f.payload)
                        .map(Some)
                        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e));
                }
                Some(f) if f.opcode == OP_CLOSE => return Ok(None),
                Some(f) if f.opcode == OP_PING => self.send(OP_PONG, &f.payload).await?,
                Some(_) => {}
            }
        }
    }

    pub async fn close(mut self) -> io::Result<()> {
        self.send(OP_CLOSE, &1000u16.to_be_bytes()).await?;
        // drain until the server echoes the close
        while let Ok(Some(f)) = read_frame(&mut self.stream).await {
            if f.opcode == OP_CLOSE {
                break;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha1_reference_vectors() {
        assert_eq!(hex::encode(sha1(b"abc")), "a9993e364706816aba3e25717850c26c9cd0d89d");
        assert_eq!(hex::encode(sha1(b"")), "da39a3ee5e6b4b0d3255bfef95601890afd80709");
        let long = b"abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq";
        assert_eq!(hex::encode(sha1(long)), "84983e441c3bd26ebaae4aa1f95129e5e54670f1");
        let million = vec![b'a'; 1_000_000];
        assert_eq!(hex::encode(sha1(&million)), "34aa973cd4c4daa4f61eeb2bdbad27316534016f");
    }

    #[test]
    fn handshake_example_key() {
        assert_eq!(accept_key("dGhlIHNhbXBsZSBub25jZQ=="), "s3pPLMBiTxaQ9kYGzzhZRbK+xOo=");
    }

    #[test]
    fn frame_header_examples() {
        // unmasked "Hello"
        assert_eq!(encode_frame(OP_TEXT, b"Hello", None), [0x81, 0x05, 0x48, 0x65, 0x6c, 0x6c, 0x6f]);
        // masked "Hello" with the key 37 fa 21 3d
        assert_eq!(
            encode_frame(OP_TEXT, b"Hello", Some([0x37, 0xfa, 0x21, 0x3d])),
            [0x81, 0x85, 0x37, 0xfa, 0x21, 0x3d, 0x7f, 0x9f, 0x4d, 0x51, 0x58]
        );
        assert_eq!(&encode_frame(OP_BINARY, &[0; 256], None)[..4], [0x82, 0x7E, 0x01, 0x00]);
        assert_eq!(&encode_frame(OP_BINARY, &vec![0; 65536], None)[..10], [0x82, 0x7F, 0, 0, 0, 0, 0, 1, 0, 0]);
    }

    #[tokio::test]
    async fn frames_round_trip_at_every_length_class() {
        for len in [0usize, 1, 125, 126, 65535, 65536] {
            let payload: Vec<u8> = (0..len).map(|i| (i % 251) as u8).collect();
            for mask in [None, Some([1, 2, 3, 4])] {
                let bytes = encode_frame(OP_BINARY, &payload, mask);
                let mut r = bytes.as_slice();
                let f = read_frame(&mut r).await.unwrap().unwrap();
                assert_eq!(f, Frame { fin: true, opcode: OP_BINARY, payload: payload.clone() });
                assert!(r.is_empty());
            }
        }
        let mut empty: &[u8] = &[];
        assert_eq!(read_frame(&mut empty).await.unwrap(), None);
    }

    #[tokio::test]
    async fn oversized_frames_are_refused() {
        let mut head: &[u8] = &[0x82, 0x7F, 0, 0, 0, 0, 0x10, 0, 0, 0];
        assert_eq!(read_frame(&mut head).await.unwrap_err().kind(), io::ErrorKind::InvalidData);
    }
}
