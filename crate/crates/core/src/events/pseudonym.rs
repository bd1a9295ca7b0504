//! Keyed-hash pseudonyms. The salt lives only in the ingestion service.

use hmac::{Hmac, KeyInit, Mac};
use sha2::Sha256;

use crate::domain::{Pseudonym, PSEUDONYM_HEX_LEN};

/// Minimum salt length in bytes (128 bits).
pub const MIN_SALT_BYTES: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum SaltError {
    #[error("no course salt configured (environment variable `{0}` is unset)")]
    MissingSalt(String),
    #[error("course salt must be at least {MIN_SALT_BYTES} bytes, got {0}")]
    TooShort(usize),
}

/// Secret course salt. Debug output never shows the value.
#[derive(Clone)]
pub struct CourseSalt(Vec<u8>);

impl std::fmt::Debug for CourseSalt {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("CourseSalt(<redacted>)")
    }
}

impl CourseSalt {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Result<Self, SaltError> {
        let bytes = bytes.into();
        if bytes.len() < MIN_SALT_BYTES {
            return Err(SaltError::TooShort(bytes.len()));
        }
        Ok(CourseSalt(bytes))
    }

    pub fn from_env(var: &str) -> Result<Self, SaltError> {
        let value = std::env::var(var).map_err(|_| SaltError::MissingSalt(var.to_string()))?;
        CourseSalt::new(value)
    }

    fn digest_hex(&self, message: &[u8]) -> String {
        let mut mac = <Hmac<Sha256> as KeyInit>::new_from_slice(&self.0).expect("hmac accepts any key length");
        mac.update(message);
        let bytes = mac.finalize().into_bytes();
        hex::encode(&bytes[..PSEUDONYM_HEX_LEN / 2])
    }
}

/// HMAC-SHA256 of `user_id` under `salt`, truncated to 16 hex chars.
pub fn pseudonymize(user_id: &str, salt: &CourseSalt) -> Pseudonym {
    Pseudonym::new(salt.digest_hex(user_id.as_bytes())).expect("hex digest has the pseudonym shape")
}

/// Session ids may embed the user id (composite keys do), so they are
/// hashed under the same salt in a separate domain.
pub fn pseudonymize_session(session_id: &str, salt: &CourseSalt) -> String {
    let mut message = b"session:".to_vec();
    message.extend_from_slice(session_id.as_bytes());
    format!("s-{}", salt.digest_hex(&message))
}
