//! Framing and cryptography for protected links: the fixed 72-byte frame
//! header, the synthetic application packet, and the encrypt-then-MAC
//! pipeline that consumes reserved single-use keys.

use aes::cipher::{KeyIvInit, StreamCipher};
use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;

use crate::capture::{Recorder, TraceEvent};
use crate::engine::SimTime;
use crate::keybuffer::{KeyBuffer, KeyId};

/// Leading bytes of every protected frame.
pub const QKD_MAGIC: [u8; 4] = *b"QKD1";

/// Size of the fixed frame header.
pub const HEADER_LEN: usize = 72;

/// Size of the authentication tag embedded in the header.
pub const TAG_LEN: usize = 32;

/// Size of the synthetic transport header inside the plaintext.
pub const TRANSPORT_HEADER_LEN: usize = 16;

type HmacSha256 = Hmac<Sha256>;
type Aes256Ctr = ctr::Ctr128BE<aes::Aes256>;

/// Payload encryption algorithm and its wire identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncryptionAlg {
    None,
    Otp,
    Aes256Ctr,
}

impl EncryptionAlg {
    pub fn wire_id(self) -> u16 {
        match self {
            EncryptionAlg::None => 0,
            EncryptionAlg::Otp => 1,
            EncryptionAlg::Aes256Ctr => 2,
        }
    }

    pub fn from_wire_id(id: u16) -> Option<Self> {
        match id {
            0 => Some(EncryptionAlg::None),
            1 => Some(EncryptionAlg::Otp),
            2 => Some(EncryptionAlg::Aes256Ctr),
            _ => None,
        }
    }

    /// Key bytes consumed for one plaintext of the given length.
    pub fn key_len(self, plaintext_len: usize) -> usize {
        match self {
            EncryptionAlg::None => 0,
            EncryptionAlg::Otp => plaintext_len,
            EncryptionAlg::Aes256Ctr => 32,
        }
    }
}

/// Frame authentication algorithm and its wire identifier. `Mac256` is
/// HMAC-SHA-256 over header and ciphertext.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuthenticationAlg {
    None,
    Mac256,
}

impl AuthenticationAlg {
    pub fn wire_id(self) -> u16 {
        match self {
            AuthenticationAlg::None => 0,
            AuthenticationAlg::Mac256 => 3,
        }
    }

    pub fn from_wire_id(id: u16) -> Option<Self> {
        match id {
            0 => Some(AuthenticationAlg::None),
            3 => Some(AuthenticationAlg::Mac256),
            _ => None,
        }
    }

    pub fn key_len(self) -> usize {
        match self {
            AuthenticationAlg::None => 0,
            AuthenticationAlg::Mac256 => 32,
        }
    }
}

/// The algorithm pair configured for one link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgSelection {
    pub encryption: EncryptionAlg,
    pub authentication: AuthenticationAlg,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FramingError {
    #[error("frame of {0} bytes is shorter than the {HEADER_LEN}-byte header")]
    Truncated(usize),
    #[error("bad frame magic {0:02X?}")]
    BadMagic([u8; 4]),
    #[error("unknown encryption algorithm id {0}")]
    UnknownEncryptionAlg(u16),
    #[error("unknown authentication algorithm id {0}")]
    UnknownAuthenticationAlg(u16),
    #[error("header declares total length {declared} but frame has {actual} bytes")]
    LengthMismatch { declared: u32, actual: usize },
    #[error("plaintext of {0} bytes is shorter than the {TRANSPORT_HEADER_LEN}-byte transport header")]
    ShortPlaintext(usize),
}

/// Fixed-size header carried in front of every protected payload. All
/// multi-byte fields are big-endian on the wire.
///
/// Layout: magic `QKD1` (0..4), total_len (4..8), message_id (8..12),
/// enc_alg (12..14), auth_alg (14..16), enc_key_id (16..24),
/// auth_key_id (24..32), reserved zeros (32..40), auth_tag (40..72).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QkdHeader {
    /// Header plus ciphertext length of the whole frame.
    pub total_len: u32,
    pub message_id: u32,
    pub enc_alg: EncryptionAlg,
    pub auth_alg: AuthenticationAlg,
    /// Key id consumed for encryption; 0 when `enc_alg` is `None`.
    pub enc_key_id: u64,
    /// Key id consumed for authentication; 0 when `auth_alg` is `None`.
    pub auth_key_id: u64,
    pub auth_tag: [u8; TAG_LEN],
}

impl QkdHeader {
    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&QKD_MAGIC);
        out[4..8].copy_from_slice(&self.total_len.to_be_bytes());
        out[8..12].copy_from_slice(&self.message_id.to_be_bytes());
        out[12..14].copy_from_slice(&self.enc_alg.wire_id().to_be_bytes());
        out[14..16].copy_from_slice(&self.auth_alg.wire_id().to_be_bytes());
        out[16..24].copy_from_slice(&self.enc_key_id.to_be_bytes());
        out[24..32].copy_from_slice(&self.auth_key_id.to_be_bytes());
        // 32..40 reserved, already zero
        out[40..72].copy_from_slice(&self.auth_tag);
        out
    }

    /// Header serialization with the tag zeroed: the exact bytes covered
    /// by the authentication tag.
    pub fn bytes_for_tag(&self) -> [u8; HEADER_LEN] {
        let mut out = self.to_bytes();
        out[40..72].fill(0);
        out
    }

    /// Parses and validates the header of `frame`, checking magic,
    /// algorithm ids, and the declared total length against the frame.
    pub fn parse(frame: &[u8]) -> Result<QkdHeader, FramingError> {
        if frame.len() < HEADER_LEN {
            return Err(FramingError::Truncated(frame.len()));
        }
        let magic: [u8; 4] = frame[0..4].try_into().expect("sized slice");
        if magic != QKD_MAGIC {
            return Err(FramingError::BadMagic(magic));
        }
        let total_len = u32::from_be_bytes(frame[4..8].try_into().expect("sized slice"));
        if total_len as usize != frame.len() {
            return Err(FramingError::LengthMismatch {
                declared: total_len,
                actual: frame.len(),
            });
        }
        let enc_id = u16::from_be_bytes(frame[12..14].try_into().expect("sized slice"));
        let auth_id = u16::from_be_bytes(frame[14..16].try_into().expect("sized slice"));
        let enc_alg = EncryptionAlg::from_wire_id(enc_id)
            .ok_or(FramingError::UnknownEncryptionAlg(enc_id))?;
        let auth_alg = AuthenticationAlg::from_wire_id(auth_id)
            .ok_or(FramingError::UnknownAuthenticationAlg(auth_id))?;
        Ok(QkdHeader {
            total_len,
            message_id: u32::from_be_bytes(frame[8..12].try_into().expect("sized slice")),
            enc_alg,
            auth_alg,
            enc_key_id: u64::from_be_bytes(frame[16..24].try_into().expect("sized slice")),
            auth_key_id: u64::from_be_bytes(frame[24..32].try_into().expect("sized slice")),
            auth_tag: frame[40..72].try_into().expect("sized slice"),
        })
    }
}

/// Synthetic application packet: a 16-byte transport header (addresses,
/// ports, packet id) followed by the payload. The whole serialization is
/// the unit of encryption.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AppPacket {
    pub src_addr: [u8; 4],
    pub dst_addr: [u8; 4],
    pub src_port: u16,
    pub dst_port: u16,
    pub packet_id: u32,
    pub payload: Vec<u8>,
}

impl AppPacket {
    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(TRANSPORT_HEADER_LEN + self.payload.len());
        out.extend_from_slice(&self.src_addr);
        out.extend_from_slice(&self.dst_addr);
        out.extend_from_slice(&self.src_port.to_be_bytes());
        out.extend_from_slice(&self.dst_port.to_be_bytes());
        out.extend_from_slice(&self.packet_id.to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn parse(plaintext: &[u8]) -> Result<AppPacket, FramingError> {
        if plaintext.len() < TRANSPORT_HEADER_LEN {
            return Err(FramingError::ShortPlaintext(plaintext.len()));
        }
        Ok(AppPacket {
            src_addr: plaintext[0..4].try_into().expect("sized slice"),
            dst_addr: plaintext[4..8].try_into().expect("sized slice"),
            src_port: u16::from_be_bytes(plaintext[8..10].try_into().expect("sized slice")),
            dst_port: u16::from_be_bytes(plaintext[10..12].try_into().expect("sized slice")),
            packet_id: u32::from_be_bytes(plaintext[12..16].try_into().expect("sized slice")),
            payload: plaintext[TRANSPORT_HEADER_LEN..].to_vec(),
        })
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error(transparent)]
    Framing(#[from] FramingError),
    #[error("key of {got} bytes does not match required length {expected}")]
    KeyLength { expected: usize, got: usize },
    #[error("authentication tag mismatch on message {message_id}")]
    AuthenticationFailure { message_id: u32 },
    #[error("key {id} missing from the key database")]
    MissingKey { id: KeyId },
}

/// One-time pad: byte-wise XOR of equally long key and data. Involutive.
pub fn otp(data: &[u8], key: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if key.len() != data.len() {
        return Err(CryptoError::KeyLength { expected: data.len(), got: key.len() });
    }
    Ok(data.iter().zip(key).map(|(d, k)| d ^ k).collect())
}

/// HMAC-SHA-256 tag over `data`.
pub fn mac256(key: &[u8], data: &[u8]) -> [u8; TAG_LEN] {
    let mut mac = HmacSha256::new_from_slice(key).expect("HMAC accepts any key length");
    mac.update(data);
    mac.finalize().into_bytes().into()
}

/// AES-256 in counter mode with an all-zero IV. The IV can be constant
/// because every key is single-use. Involutive like any CTR keystream.
pub fn aes256ctr(key: &[u8], data: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if key.len() != 32 {
        return Err(CryptoError::KeyLength { expected: 32, got: key.len() });
    }
    let mut cipher = Aes256Ctr::new(key.into(), &[0u8; 16].into());
    let mut out = data.to_vec();
    cipher.apply_keystream(&mut out);
    Ok(out)
}

/// Keys reserved ahead of a send, in reservation order: encryption first,
/// then authentication.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReservedKeys {
    pub enc: Option<KeyId>,
    pub auth: Option<KeyId>,
}

fn take_key(
    buffer: &mut KeyBuffer,
    id: KeyId,
    expected_len: usize,
    recorder: &mut Recorder,
    now: SimTime,
    node: i64,
) -> Result<Vec<u8>, CryptoError> {
    let bytes = buffer
        .fetch_key(id)
        .map_err(|_| CryptoError::MissingKey { id })?
        .to_vec();
    recorder.trace(now, node, TraceEvent::FetchKey { id });
    buffer.delete_key(id).expect("key fetched above");
    recorder.trace(now, node, TraceEvent::DeleteKey { id });
    if bytes.len() != expected_len {
        return Err(CryptoError::KeyLength { expected: expected_len, got: bytes.len() });
    }
    Ok(bytes)
}

/// Builds the protected frame for one application packet: serialize,
/// encrypt, then authenticate header and ciphertext. Consumes (fetches
/// and deletes) the reserved keys from `buffer`.
pub fn process_outgoing(
    packet: &AppPacket,
    algs: AlgSelection,
    message_id: u32,
    keys: ReservedKeys,
    buffer: &mut KeyBuffer,
    recorder: &mut Recorder,
    now: SimTime,
    node: i64,
) -> Result<Vec<u8>, CryptoError> {
    let plaintext = packet.serialize();

    let (ciphertext, enc_key_id) = match algs.encryption {
        EncryptionAlg::None => (plaintext, 0),
        EncryptionAlg::Otp => {
            let id = keys.enc.expect("encryption key reserved");
            let key = take_key(buffer, id, plaintext.len(), recorder, now, node)?;
            (otp(&plaintext, &key)?, id.0)
        }
        EncryptionAlg::Aes256Ctr => {
            let id = keys.enc.expect("encryption key reserved");
            let key = take_key(buffer, id, 32, recorder, now, node)?;
            (aes256ctr(&key, &plaintext)?, id.0)
        }
    };

    let mut header = QkdHeader {
        total_len: (HEADER_LEN + ciphertext.len()) as u32,
        message_id,
        enc_alg: algs.encryption,
        auth_alg: algs.authentication,
        enc_key_id,
        auth_key_id: 0,
        auth_tag: [0; TAG_LEN],
    };

    if algs.authentication == AuthenticationAlg::Mac256 {
        let id = keys.auth.expect("authentication key reserved");
        header.auth_key_id = id.0;
        let key = take_key(buffer, id, 32, recorder, now, node)?;
        let mut covered = header.bytes_for_tag().to_vec();
        covered.extend_from_slice(&ciphertext);
        header.auth_tag = mac256(&key, &covered);
    }

    recorder.trace(
        now,
        node,
        TraceEvent::OutgoingFrame {
            packet_id: packet.packet_id,
            message_id,
            size: header.total_len as u64,
        },
    );

    let mut frame = header.to_bytes().to_vec();
    frame.extend_from_slice(&ciphertext);
    Ok(frame)
}

/// Verifies and decrypts one received frame: parse the header, check the
/// tag, then decrypt. The keys named by the header are deleted even when
/// verification fails, because a key touched by a suspect frame must
/// never be reused.
pub fn process_incoming(
    frame: &[u8],
    buffer: &mut KeyBuffer,
    recorder: &mut Recorder,
    now: SimTime,
    node: i64,
) -> Result<(QkdHeader, AppPacket), CryptoError> {
    let header = QkdHeader::parse(frame)?;
    recorder.trace(
        now,
        node,
        TraceEvent::IncomingFrame { message_id: header.message_id, size: frame.len() as u64 },
    );
    let ciphertext = &frame[HEADER_LEN..];

    if header.auth_alg == AuthenticationAlg::Mac256 {
        let auth_id = KeyId(header.auth_key_id);
        let key = take_key(buffer, auth_id, 32, recorder, now, node)?;
        let mut covered = header.bytes_for_tag().to_vec();
        covered.extend_from_slice(ciphertext);
        if mac256(&key, &covered) != header.auth_tag {
            // Burn the paired encryption key as well before rejecting.
            if header.enc_alg != EncryptionAlg::None {
                let enc_id = KeyId(header.enc_key_id);
                if buffer.delete_key(enc_id).is_ok() {
                    recorder.trace(now, node, TraceEvent::DeleteKey { id: enc_id });
                }
            }
            return Err(CryptoError::AuthenticationFailure { message_id: header.message_id });
        }
    }

    let plaintext = match header.enc_alg {
        EncryptionAlg::None => ciphertext.to_vec(),
        EncryptionAlg::Otp => {
            let id = KeyId(header.enc_key_id);
            let key = take_key(buffer, id, ciphertext.len(), recorder, now, node)?;
            otp(ciphertext, &key)?
        }
        EncryptionAlg::Aes256Ctr => {
            let id = KeyId(header.enc_key_id);
            let key = take_key(buffer, id, 32, recorder, now, node)?;
            aes256ctr(&key, ciphertext)?
        }
    };

    let packet = AppPacket::parse(&plaintext)?;
    recorder.trace(now, node, TraceEvent::DecryptionComplete { packet_id: packet.packet_id });
    Ok((header, packet))
}
