//! Dense row-per-item vector store, a deterministic hashing embedder, and
//! the vector file formats shared with gradient features.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    data: Vec<f64>,
    dim: usize,
    normalized: bool,
}

impl EmbeddingMatrix {
    pub fn from_rows(ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::DimensionMismatch {
                expected: ids.len(),
                found: rows.len(),
            });
        }
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in &rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_flat(ids, data, dim)
    }

    pub fn from_flat(ids: Vec<String>, data: Vec<f64>, dim: usize) -> Result<Self> {
        if ids.len() * dim != data.len() {
            return Err(Error::DimensionMismatch {
                expected: ids.len() * dim,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(EmbeddingMatrix {
            ids,
            data,
            dim,
            normalized: false,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1)).take(self.ids.len())
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn index_of(&self) -> HashMap<&str, usize> {
        self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
    }

    /// Scales every row to unit L2 norm. Zero rows are an error.
    pub fn normalize(mut self) -> Result<Self> {
        let dim = self.dim;
        for row in self.data.chunks_exact_mut(dim.max(1)) {
            let norm = l2_norm(row);
            if norm == 0.0 {
                return Err(Error::ZeroVector);
            }
            row.iter_mut().for_each(|v| *v /= norm);
        }
        self.normalized = true;
        Ok(self)
    }

    /// Rows in the order of `ids`, each of which must be present.
    pub fn select(&self, ids: &[String]) -> Result<Self> {
        let index = self.index_of();
        let mut data = Vec::with_capacity(ids.len() * self.dim);
        for id in ids {
            let &i = index.get(id.as_str()).ok_or_else(|| Error::MissingId(id.clone()))?;
            data.extend_from_slice(self.row(i));
        }
        Ok(EmbeddingMatrix {
            ids: ids.to_vec(),
            data,
            dim: self.dim,
            normalized: self.normalized,
        })
    }

    pub fn check_normalized(&self) -> bool {
        self.rows().all(|r| (l2_norm(r) - 1.0).abs() <= NORM_TOL)
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seeded FNV-1a over the token bytes, finished with a splitmix round.
pub fn token_hash(token: &str, seed: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ splitmix64(seed);
    for b in token.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(h)
}

/// Bucket and sign a token contributes to in a `dim`-wide hashed vector.
pub fn token_slot(token: &str, dim: usize, seed: u64) -> (usize, f64) {
    let h = token_hash(token, seed);
    let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
    ((h % dim as u64) as usize, sign)
}

/// Anything that maps texts to an aligned embedding matrix.
pub trait TextEmbedder: Send + Sync {
    fn embed(&self, ids: &[String], texts: &[&str]) -> Result<EmbeddingMatrix>;
}

/// Signed feature hashing of lowercased whitespace tokens, term-frequency
/// weighted, optionally L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HashingEmbedder {
    pub dim: usize,
    pub seed: u64,
    pub normalize: bool,
}

/// Stand-in token for texts with no tokens, so every row has a direction.
const EMPTY_TEXT_TOKEN: &str = "\u{0}empty";

impl HashingEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        HashingEmbedder {
            dim,
            seed,
            normalize: true,
        }
    }

    pub fn embed_text(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let mut any = false;
        for tok in text.split_whitespace() {
            any = true;
            let (b, s) = token_slot(&tok.to_lowercase(), self.dim, self.seed);
            v[b] += s;
        }
        if !any {
            let (b, s) = token_slot(EMPTY_TEXT_TOKEN, self.dim, self.seed);
            v[b] += s;
        }
        if self.normalize {
            let n = l2_norm(&v);
            if n > 0.0 {
                v.iter_mut().for_each(|x| *x /= n);
            } else {
                // Every token cancelled out; fall back to the empty marker.
                let (b, s) = token_slot(EMPTY_TEXT_TOKEN, self.dim, self.seed);
                v[b] = s;
            }
        }
        v
    }
}

impl TextEmbedder for HashingEmbedder {
    fn embed(&self, ids: &[String], texts: &[&str]) -> Result<EmbeddingMatrix> {
        if texts.is_empty() {
            return Err(Error::EmptyInput);
        }
        if self.dim < 2 {
            return Err(Error::InvalidClusterParam(format!("embedding dim must be >= 2, got {}", self.dim)));
        }
        if ids.len() != texts.len() {
            return Err(Error::DimensionMismatch {
                expected: texts.len(),
                found: ids.len(),
            });
        }
        let rows: Vec<Vec<f64>> = texts.par_iter().map(|t| self.embed_text(t)).collect();
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        rows.iter().for_each(|r| data.extend_from_slice(r));
        Ok(EmbeddingMatrix {
            ids: ids.to_vec(),
            data,
            dim: self.dim,
            normalized: self.normalize,
        })
    }
}

/// Hashing embedding of `texts`, rows identified by their position.
pub fn embed_reference(texts: &[&str], dim: usize, seed: u64) -> Result<EmbeddingMatrix> {
    let ids: Vec<String> = (0..texts.len()).map(|i| i.to_string()).collect();
    HashingEmbedder::new(dim, seed).embed(&ids, texts)
}

#[derive(Serialize, Deserialize)]
struct VectorRecord {
    id: String,
    vector: Vec<f64>,
}

pub const EMB_MAGIC: &[u8; 4] = b"BEMB";

/// Writes `.emb` (binary) when the extension says so, JSONL otherwise.
pub fn save_embeddings(path: impl AsRef<Path>, m: &EmbeddingMatrix) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path)?);
    if is_binary(path) {
        write_binary(&mut w, m)?;
    } else {
        for (id, row) in m.ids.iter().zip(m.rows()) {
            serde_json::to_writer(
                &mut w,
                &VectorRecord {
                    id: id.clone(),
                    vector: row.to_vec(),
                },
            )?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Binary layout: 16-byte header (`BEMB`, dim: u32, count: u64, all
/// little-endian), `count * dim` little-endian f32 values row-major, then
/// `count` ids each as a u32 byte length followed by UTF-8 bytes.
pub fn write_binary<W: Write>(mut w: W, m: &EmbeddingMatrix) -> Result<()> {
    w.write_all(EMB_MAGIC)?;
    w.write_all(&(m.dim as u32).to_le_bytes())?;
    w.write_all(&(m.len() as u64).to_le_bytes())?;
    for v in &m.data {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    for id in &m.ids {
        w.write_all(&(id.len() as u32).to_le_bytes())?;
        w.write_all(id.as_bytes())?;
    }
    Ok(())
}

pub fn read_binary<R: Read>(mut r: R) -> Result<EmbeddingMatrix> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)
        .map_err(|_| Error::BadEmbeddingFile("truncated header".into()))?;
    if &header[..4] != EMB_MAGIC {
        return Err(Error::BadEmbeddingFile("bad magic".into()));
    }
    let dim = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
    let mut raw = vec![0u8; count * dim * 4];
    r.read_exact(&mut raw)
        .map_err(|_| Error::BadEmbeddingFile("truncated vector block".into()))?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    let mut ids = Vec::with_capacity(count);
    for _ in 0..count {
        let mut len = [0u8; 4];
        r.read_exact(&mut len)
            .map_err(|_| Error::BadEmbeddingFile("truncated id block".into()))?;
        let mut buf = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut buf)
            .map_err(|_| Error::BadEmbeddingFile("truncated id".into()))?;
        ids.push(String::from_utf8(buf).map_err(|_| Error::BadEmbeddingFile("id is not UTF-8".into()))?);
    }
    EmbeddingMatrix::from_flat(ids, data, dim)
}

fn is_binary(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "emb")
}

/// Reads every row of a vector file.
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let file = BufReader::new(File::open(path)?);
    if is_binary(path) {
        return read_binary(file);
    }
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: VectorRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        ids.push(rec.id);
        rows.push(rec.vector);
    }
    EmbeddingMatrix::from_rows(ids, rows)
}

/// Reads a vector file and aligns its rows to `ids`.
pub fn load_embeddings(path: impl AsRef<Path>, ids: &[String], renormalize: bool) -> Result<EmbeddingMatrix> {
    let all = read_embeddings(path)?;
    let aligned = all.select(ids)?;
    if renormalize {
        aligned.normalize()
    } else {
        Ok(aligned)
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn cosine_fixtures() {
        assert_abs_diff_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(cosine(&[1.0, 1.0], &[2.0, 2.0]).unwrap(), 1.0, epsilon = 1e-15);
        let expected = 2.0 / (14f64.sqrt() * 2f64.sqrt());
        assert_abs_diff_eq!(cosine(&[1.0, 2.0, 3.0], &[-1.0, 0.0, 1.0]).unwrap(), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(expected, 0.37796, epsilon = 1e-5);
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroVector)));
    }

    #[test]
    fn identical_texts_identical_rows() {
        let m = embed_reference(&["the cat sat", "the cat sat"], 64, 3).unwrap();
        assert_eq!(m.row(0), m.row(1));
        assert_abs_diff_eq!(cosine(m.row(0), m.row(1)).unwrap(), 1.0, epsilon = 1e-12);
        assert!(m.check_normalized());
    }

    #[test]
    fn empty_input() {
        assert!(matches!(embed_reference(&[], 16, 0), Err(Error::EmptyInput)));
    }

    #[test]
    fn empty_text_still_has_a_direction() {
        let m = embed_reference(&["", "   "], 16, 0).unwrap();
        assert!(m.check_normalized());
    }

    /// Disjoint token sets only interact through bucket collisions. The
    /// oracle enumerates every cross-text bucket collision from the raw hash
    /// and checks the embedder's cosine against it.
    #[test]
    fn disjoint_token_sets_collision_oracle() {
        const DIM: usize = 1 << 16;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let trials = 2000;
        let mut small = 0usize;
        let mut collided = 0usize;
        for t in 0..trials {
            let na = rng.random_range(1..=10);
            let nb = rng.random_range(1..=10);
            let a: Vec<String> = (0..na).map(|i| format!("a{t}x{i}")).collect();
            let b: Vec<String> = (0..nb).map(|i| format!("b{t}y{i}")).collect();
            let ta = a.join(" ");
            let tb = b.join(" ");
            let m = embed_reference(&[&ta, &tb], DIM, 5).unwrap();
            let cos = cosine(m.row(0), m.row(1)).unwrap();

            let buckets_a: HashSet<usize> = a.iter().map(|x| token_slot(x, DIM, 5).0).collect();
            let cross = b.iter().filter(|y| buckets_a.contains(&token_slot(y, DIM, 5).0)).count();
            if cross == 0 {
                assert_abs_diff_eq!(cos, 0.0, epsilon = 1e-12);
            } else {
                collided += 1;
            }
            if cos.abs() < 0.05 {
                small += 1;
            }
        }
        // At most 100 cross token pairs per trial: P(any collision) <= 100 / 2^16.
        let bound = 100.0 / DIM as f64;
        assert!((collided as f64 / trials as f64) <= bound * 4.0 + 0.002);
        assert!(small as f64 / trials as f64 >= 1.0 - bound * 4.0 - 0.002);
    }

    #[test]
    fn deterministic_in_seed() {
        let a = embed_reference(&["alpha beta", "gamma"], 32, 1).unwrap();
        let b = embed_reference(&["alpha beta", "gamma"], 32, 1).unwrap();
        let c = embed_reference(&["alpha beta", "gamma"], 32, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn jsonl_and_binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = EmbeddingMatrix::from_rows(
            vec!["x".into(), "y".into(), "z".into()],
            vec![vec![1.0, 0.5], vec![0.25, -2.0], vec![3.0, 4.0]],
        )
        .unwrap();
        for name in ["v.jsonl", "v.emb"] {
            let path = dir.path().join(name);
            save_embeddings(&path, &m).unwrap();
            let back = load_embeddings(&path, &["z".into(), "x".into()], false).unwrap();
            assert_eq!(back.ids(), &["z".to_string(), "x".to_string()]);
            assert_eq!(back.row(0), &[3.0, 4.0]);
            let norm = load_embeddings(&path, &["z".into()], true).unwrap();
            assert_abs_diff_eq!(norm.row(0)[0], 0.6, epsilon = 1e-7);
        }
    }

    #[test]
    fn missing_id_and_mixed_lengths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.jsonl");
        std::fs::write(&path, "{\"id\":\"a\",\"vector\":[1,2]}\n{\"id\":\"b\",\"vector\":[1,2]}\n").unwrap();
        assert!(matches!(
            load_embeddings(&path, &["a".into(), "c".into()], false),
            Err(Error::MissingId(id)) if id == "c"
        ));
        std::fs::write(&path, "{\"id\":\"a\",\"vector\":[1,2]}\n{\"id\":\"b\",\"vector\":[1,2,3]}\n").unwrap();
        assert!(matches!(
            load_embeddings(&path, &["a".into()], false),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn binary_header_is_sixteen_bytes() {
        let m = EmbeddingMatrix::from_rows(vec!["a".into()], vec![vec![1.0, 2.0, 3.0]]).unwrap();
        let mut buf = Vec::new();
        write_binary(&mut buf, &m).unwrap();
        assert_eq!(&buf[..4], b"BEMB");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 1);
        assert_eq!(f32::from_le_bytes(buf[16..20].try_into().unwrap()), 1.0);
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_scale_invariant(
            a in prop::collection::vec(-10.0f64..10.0, 5),
            b in prop::collection::vec(-10.0f64..10.0, 5),
            la in 0.01f64..100.0,
            mb in 0.01f64..100.0,
        ) {
            prop_assume!(l2_norm(&a) > 1e-3 && l2_norm(&b) > 1e-3);
            let c = cosine(&a, &b).unwrap();
            prop_assert!((c - cosine(&b, &a).unwrap()).abs() <= 1e-12);
            let sa: Vec<f64> = a.iter().map(|x| x * la).collect();
            let sb: Vec<f64> = b.iter().map(|x| x * mb).collect();
            prop_assert!((c - cosine(&sa, &sb).unwrap()).abs() <= 1e-12);
        }

        #[test]
        fn reference_rows_are_unit_norm(words in prop::collection::vec("[a-z]{1,6}", 1..20), dim in 2usize..512) {
            let text = words.join(" ");
            let m = embed_reference(&[&text], dim, 9).unwrap();
            prop_assert!((l2_norm(m.row(0)) - 1.0).abs() <= 1e-9);
        }
    }
}
