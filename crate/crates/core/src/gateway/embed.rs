//! Seeded token-hash embedding used by the mock backend.

use crate::domain::{Embedding, ObjectRegistry};

pub const MOCK_DIMENSION: usize = 64;
const POSITIONS_PER_TOKEN: u64 = 2;

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Lowercased alphanumeric word tokens.
pub fn tokens(text: &str) -> Vec<String> {
    text.to_lowercase().split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_string).collect()
}

/// Each token adds ±1 at two seeded positions; the sum is L2-normalized.
/// Returns `None` when `text` has no tokens.
pub fn hash_embed(text: &str, seed: u64) -> Option<Embedding> {
    let toks = tokens(text);
    if toks.is_empty() {
        return None;
    }
    let salt = splitmix64(seed);
    let mut v = vec![0.0f64; MOCK_DIMENSION];
    for t in &toks {
        let h = fnv1a(t.as_bytes()) ^ salt;
        for k in 0..POSITIONS_PER_TOKEN {
            let x = splitmix64(h.wrapping_add(k));
            let pos = ((x >> 1) % MOCK_DIMENSION as u64) as usize;
            v[pos] += if x & 1 == 0 { 1.0 } else { -1.0 };
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    Embedding::new(v).ok()
}

/// Text a mock vision encoder "sees": scene label, object names, attributes.
pub fn registry_text(reg: &ObjectRegistry) -> String {
    let mut parts: Vec<&str> = Vec::new();
    if let Some(s) = &reg.scene {
        parts.push(s);
    }
    for o in &reg.objects {
        parts.push(&o.name);
        parts.extend(o.attributes.iter().map(String::as_str));
    }
    parts.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_unit_vectors() {
        let a = hash_embed("red rug", 7).unwrap();
        let b = hash_embed("Red, RUG!", 7).unwrap();
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-12);
        assert!((a.cosine(&b) - 1.0).abs() < 1e-12);
        assert!(hash_embed("", 7).is_none());
        assert!(hash_embed("  ?! ", 7).is_none());
        assert_ne!(hash_embed("red rug", 8).unwrap(), a);
    }
}
