//! Cryptographic primitives behind every watermark operation.
//!
//! The feature sub-watermark is only 8 bytes, so it is padded to a single
//! AES-128 block with PKCS#7 (eight `0x08` bytes) and encrypted without a
//! chaining mode. The padding doubles as a decryption check: a wrong key or a
//! corrupted ciphertext fails to unpad with overwhelming probability.
//!
//! All multi-byte integers are big-endian.

use aes::cipher::generic_array::GenericArray;
use aes::cipher::{BlockDecrypt, BlockEncrypt, KeyInit};
use aes::Aes128;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

/// Key length in bytes.
pub const KEY_LEN: usize = 16;
/// Cipher block length in bytes.
pub const BLOCK_LEN: usize = 16;
/// Length of the plaintext that fits one padded block.
pub const PLAIN_LEN: usize = 8;
/// Digest length in bytes.
pub const DIGEST_LEN: usize = 32;
/// Length of a truncated digest.
pub const TRUNCATED_LEN: usize = 8;

const PAD_BYTE: u8 = (BLOCK_LEN - PLAIN_LEN) as u8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("expected {expected} bytes, got {actual}")]
    Length { expected: usize, actual: usize },
    #[error("decryption failed: padding check rejected the block")]
    Decryption,
    #[error("label selection mode `prng` requires a seed")]
    MissingSeed,
}

/// A shared symmetric key tagged with its rotation epoch.
#[derive(Clone, PartialEq, Eq)]
pub struct SymmetricKey {
    bytes: [u8; KEY_LEN],
    epoch: u32,
}

impl SymmetricKey {
    pub fn new(bytes: [u8; KEY_LEN], epoch: u32) -> Self {
        Self { bytes, epoch }
    }

    pub fn from_slice(bytes: &[u8], epoch: u32) -> Result<Self, CryptoError> {
        let bytes: [u8; KEY_LEN] = bytes.try_into().map_err(|_| CryptoError::Length {
            expected: KEY_LEN,
            actual: bytes.len(),
        })?;
        Ok(Self { bytes, epoch })
    }

    pub fn bytes(&self) -> &[u8; KEY_LEN] {
        &self.bytes
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }
}

// Key material stays out of debug output.
impl std::fmt::Debug for SymmetricKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SymmetricKey")
            .field("epoch", &self.epoch)
            .finish_non_exhaustive()
    }
}

/// A full SHA-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Digest(pub [u8; DIGEST_LEN]);

impl Digest {
    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }
}

impl std::fmt::Debug for Digest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Digest({})", hex::encode(self.0))
    }
}

fn check_len(bytes: &[u8], expected: usize) -> Result<(), CryptoError> {
    if bytes.len() == expected {
        Ok(())
    } else {
        Err(CryptoError::Length {
            expected,
            actual: bytes.len(),
        })
    }
}

/// Encrypts an 8-byte plaintext into one 16-byte AES-128 block.
pub fn encrypt_block(key: &SymmetricKey, plain: &[u8]) -> Result<[u8; BLOCK_LEN], CryptoError> {
    check_len(plain, PLAIN_LEN)?;
    let mut block = [PAD_BYTE; BLOCK_LEN];
    block[..PLAIN_LEN].copy_from_slice(plain);
    let cipher = Aes128::new(GenericArray::from_slice(&key.bytes));
    let mut ga = GenericArray::from(block);
    cipher.encrypt_block(&mut ga);
    Ok(ga.into())
}

/// Inverts [`encrypt_block`], verifying and stripping the padding.
pub fn decrypt_block(key: &SymmetricKey, cipher: &[u8]) -> Result<[u8; PLAIN_LEN], CryptoError> {
    check_len(cipher, BLOCK_LEN)?;
    let aes = Aes128::new(GenericArray::from_slice(&key.bytes));
    let mut ga = GenericArray::clone_from_slice(cipher);
    aes.decrypt_block(&mut ga);
    if ga[PLAIN_LEN..].iter().any(|&b| b != PAD_BYTE) {
        return Err(CryptoError::Decryption);
    }
    let mut plain = [0u8; PLAIN_LEN];
    plain.copy_from_slice(&ga[..PLAIN_LEN]);
    Ok(plain)
}

pub fn digest(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// Keeps the first 8 bytes of a digest.
pub fn truncate_digest(d: &Digest) -> [u8; TRUNCATED_LEN] {
    let mut out = [0u8; TRUNCATED_LEN];
    out.copy_from_slice(&d.0[..TRUNCATED_LEN]);
    out
}

/// How 32 label bits are picked out of a 256-bit digest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    /// The 32 least-significant bits (the last four digest bytes).
    #[default]
    Lsb32,
    /// 32 distinct bit positions drawn from a seeded generator.
    Prng,
}

/// Value of digest bit `pos`, where position 0 is the most significant bit
/// of byte 0.
fn digest_bit(d: &Digest, pos: usize) -> u32 {
    u32::from((d.0[pos / 8] >> (7 - pos % 8)) & 1)
}

pub fn select_label_bits(d: &Digest, mode: LabelMode, seed: Option<u64>) -> Result<u32, CryptoError> {
    match mode {
        LabelMode::Lsb32 => {
            let tail: [u8; 4] = d.0[DIGEST_LEN - 4..].try_into().expect("4-byte tail");
            Ok(u32::from_be_bytes(tail))
        }
        LabelMode::Prng => {
            let seed = seed.ok_or(CryptoError::MissingSeed)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let positions = index::sample(&mut rng, DIGEST_LEN * 8, 32);
            // First draw lands in the most significant label bit.
            Ok(positions.iter().fold(0u32, |acc, pos| (acc << 1) | digest_bit(d, pos)))
        }
    }
}
