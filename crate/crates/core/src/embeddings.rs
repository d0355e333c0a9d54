//! Trainable user/item tables, their initialization and on-disk checkpoints.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! b"AURLCKPT" | version u32 | M u32 | N u32 | D u32 | M·D f32 | N·D f32
//! ```
//!
//! Matrices are row-major. A JSON sidecar `<path>.meta.json` carries the
//! training metadata.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_json, write_atomic, write_json_atomic};
use crate::matrix::Matrix;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AURLCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 * 4;

/// User matrix (M×D) and item matrix (N×D).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingState {
    pub user: Matrix,
    pub item: Matrix,
}

impl EmbeddingState {
    pub fn new(user: Matrix, item: Matrix) -> Result<Self> {
        if user.cols() != item.cols() {
            return Err(Error::Shape(format!(
                "user dim {} != item dim {}",
                user.cols(),
                item.cols()
            )));
        }
        Ok(EmbeddingState { user, item })
    }

    /// Xavier-initialized tables; users and items draw from separate streams of `seed`.
    pub fn xavier(num_users: usize, num_items: usize, dim: usize, seed: u64) -> Self {
        EmbeddingState {
            user: init_xavier_stream(num_users, dim, seed, 0),
            item: init_xavier_stream(num_items, dim, seed, 1),
        }
    }

    pub fn num_users(&self) -> usize {
        self.user.rows()
    }

    pub fn num_items(&self) -> usize {
        self.item.rows()
    }

    pub fn dim(&self) -> usize {
        self.user.cols()
    }

    pub fn all_finite(&self) -> bool {
        self.user.all_finite() && self.item.all_finite()
    }

    /// Users on top of items, `(M+N)×D`.
    pub fn stacked(&self) -> Matrix {
        self.user.vstack(&self.item).expect("dims agree")
    }

    pub fn from_stacked(stacked: Matrix, num_users: usize) -> Self {
        let (user, item) = stacked.split_rows(num_users);
        EmbeddingState { user, item }
    }
}

/// Half-width of the Xavier uniform law for a `dim`-wide embedding table
/// (fan-in = fan-out = `dim`).
pub fn xavier_bound(dim: usize) -> f64 {
    (3.0 / dim as f64).sqrt()
}

/// `rows×dim` matrix with entries i.i.d. uniform on `[-sqrt(3/dim), sqrt(3/dim)]`.
pub fn init_xavier(rows: usize, dim: usize, seed: u64) -> Matrix {
    init_xavier_stream(rows, dim, seed, 0)
}

fn init_xavier_stream(rows: usize, dim: usize, seed: u64, stream: u64) -> Matrix {
    assert!(rows >= 1 && dim >= 1, "xavier init needs a non-empty shape");
    let bound = xavier_bound(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let data = (0..rows * dim)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Matrix::from_vec(rows, dim, data).expect("length matches")
}

/// Scales every nonzero row to unit Euclidean norm; zero rows stay zero.
pub fn l2_normalize_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|x| *x /= norm);
        }
    }
    out
}

/// Metadata stored next to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub val_ndcg20: f64,
    pub config: serde_json::Value,
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    path.with_file_name(name)
}

pub fn encode_checkpoint(state: &EmbeddingState) -> Vec<u8> {
    let dims = [state.num_users(), state.num_items(), state.dim()];
    let values = state.user.as_slice().len() + state.item.as_slice().len();
    let mut bytes = Vec::with_capacity(HEADER_LEN + 4 * values);
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for d in dims {
        bytes.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &x in state.user.as_slice().iter().chain(state.item.as_slice()) {
        bytes.extend_from_slice(&(x as f32).to_le_bytes());
    }
    bytes
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<EmbeddingState> {
    if bytes.len() >= CHECKPOINT_MAGIC.len() && &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Corrupt(format!(
            "{} bytes is shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    let word = |k: usize| {
        let at = 8 + 4 * k;
        u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
    };
    let version = word(0);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let (m, n, d) = (word(1) as usize, word(2) as usize, word(3) as usize);
    let expected = (m + n)
        .checked_mul(d)
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::Corrupt("header dimensions overflow".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::Corrupt(format!(
            "payload has {} bytes, header M={m} N={n} D={d} implies {expected}",
            payload.len()
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    let (user, item) = values.split_at(m * d);
    EmbeddingState::new(
        Matrix::from_vec(m, d, user.to_vec())?,
        Matrix::from_vec(n, d, item.to_vec())?,
    )
}

/// Writes the binary checkpoint and, if given, its metadata sidecar.
pub fn save_checkpoint(
    state: &EmbeddingState,
    path: &Path,
    meta: Option<&CheckpointMeta>,
) -> Result<()> {
    write_atomic(path, &encode_checkpoint(state))?;
    if let Some(meta) = meta {
        write_json_atomic(&meta_path(path), meta)?;
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<EmbeddingState> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

pub fn load_checkpoint_meta(path: &Path) -> Result<CheckpointMeta> {
    read_json(&meta_path(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn xavier_bound_for_64() {
        let a = xavier_bound(64);
        assert!((a - 0.216_506_350_946_109_66).abs() < 1e-15);
        let m = init_xavier(200, 64, 3);
        assert!(m.as_slice().iter().all(|x| x.abs() <= a));
    }

    #[test]
    fn xavier_variance_dim3() {
        let m = init_xavier(40_000, 3, 11);
        let xs = m.as_slice();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!((var - 1.0 / 3.0).abs() < 0.05 / 3.0, "variance {var}");
    }

    #[test]
    fn xavier_is_seeded() {
        assert_eq!(init_xavier(5, 4, 1), init_xavier(5, 4, 1));
        assert_ne!(init_xavier(5, 4, 1), init_xavier(5, 4, 2));
        let s = EmbeddingState::xavier(3, 3, 4, 9);
        assert_ne!(s.user, s.item);
    }

    #[test]
    fn normalize_rows_cases() {
        let m = Matrix::from_rows(&[vec![3.0, 4.0], vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let n = l2_normalize_rows(&m);
        assert!((n.get(0, 0) - 0.6).abs() < 1e-15 && (n.get(0, 1) - 0.8).abs() < 1e-15);
        assert_eq!(n.row(1), &[1.0, 0.0]);
        assert_eq!(n.row(2), &[0.0, 0.0]);
    }

    #[test]
    fn checkpoint_round_trip_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let state = EmbeddingState::xavier(7, 5, 3, 42);
        // f32 on disk: compare against the f32-rounded state
        let rounded = decode_checkpoint(&encode_checkpoint(&state)).unwrap();
        let meta = CheckpointMeta {
            epoch: 4,
            val_ndcg20: 0.25,
            config: serde_json::json!({"dim": 3}),
        };
        save_checkpoint(&rounded, &path, Some(&meta)).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, rounded);
        assert!(back.max_abs_diff_to(&state) < 1e-6);
        assert_eq!(load_checkpoint_meta(&path).unwrap(), meta);
    }

    #[test]
    fn truncated_checkpoint_is_corrupt() {
        let bytes = encode_checkpoint(&EmbeddingState::xavier(2, 2, 2, 1));
        assert!(matches!(
            decode_checkpoint(&bytes[..bytes.len() - 3]),
            Err(Error::Corrupt(_))
        ));
        assert!(matches!(decode_checkpoint(&bytes[..12]), Err(Error::Corrupt(_))));
    }

    #[test]
    fn wrong_magic_or_version_is_format_error() {
        let mut bytes = encode_checkpoint(&EmbeddingState::xavier(2, 2, 2, 1));
        bytes[0] = b'X';
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Format(_))));
        let mut bytes = encode_checkpoint(&EmbeddingState::xavier(2, 2, 2, 1));
        bytes[8] = 9;
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Format(_))));
    }

    impl EmbeddingState {
        fn max_abs_diff_to(&self, other: &EmbeddingState) -> f64 {
            self.user
                .max_abs_diff(&other.user)
                .max(self.item.max_abs_diff(&other.item))
        }
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 1..8)) {
            let m = Matrix::from_rows(&rows).unwrap();
            let once = l2_normalize_rows(&m);
            let twice = l2_normalize_rows(&once);
            prop_assert!(once.max_abs_diff(&twice) <= 1e-12);
        }

        #[test]
        fn f32_states_round_trip_bit_exactly(values in prop::collection::vec(-1e3f32..1e3, 12)) {
            let as64: Vec<f64> = values.iter().map(|&v| v as f64).collect();
            let state = EmbeddingState::new(
                Matrix::from_vec(2, 3, as64[..6].to_vec()).unwrap(),
                Matrix::from_vec(2, 3, as64[6..].to_vec()).unwrap(),
            ).unwrap();
            let back = decode_checkpoint(&encode_checkpoint(&state)).unwrap();
            prop_assert_eq!(back, state);
        }
    }
}
