//! Binary vocabulary tree: hierarchical k-medoids clustering of 256-bit
//! local features under Hamming distance, with greedy tree-descent
//! quantization and a compact on-disk form.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{
    Channel, DescriptorError, DescriptorKind, DescriptorVector, Payload, SparseVec,
};
use crate::dataset::Modality;

pub type BinaryFeature = [u8; 32];

/// Hamming distance between two 256-bit features.
pub fn feature_hamming(a: &BinaryFeature, b: &BinaryFeature) -> u32 {
    let mut d = 0;
    for i in 0..4 {
        let wa = u64::from_le_bytes(a[i * 8..(i + 1) * 8].try_into().expect("8 bytes"));
        let wb = u64::from_le_bytes(b[i * 8..(i + 1) * 8].try_into().expect("8 bytes"));
        d += (wa ^ wb).count_ones();
    }
    d
}

const NONE: u32 = u32::MAX;
const MAGIC: &[u8; 8] = b"MPRVOC01";
const MAX_ITERS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
struct Node {
    feature: BinaryFeature,
    /// Index of the first child; children are contiguous. `NONE` for leaves.
    first_child: u32,
    num_children: u32,
    /// Word index for leaves, `NONE` for interior nodes.
    word_id: u32,
}

/// A trained vocabulary tree.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    k: u32,
    l: u32,
    nodes: Vec<Node>,
    word_count: u32,
}

impl Vocabulary {
    pub fn k(&self) -> usize {
        self.k as usize
    }

    pub fn l(&self) -> usize {
        self.l as usize
    }

    pub fn word_count(&self) -> usize {
        self.word_count as usize
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Greedy descent: at each interior node move to the child with the
    /// smallest Hamming distance, ties resolving to the lowest-indexed
    /// child, until a leaf's word is reached.
    pub fn quantize(&self, f: &BinaryFeature) -> u32 {
        let mut node = &self.nodes[0];
        while node.first_child != NONE {
            let first = node.first_child as usize;
            let children = &self.nodes[first..first + node.num_children as usize];
            let best = children
                .iter()
                .enumerate()
                .min_by_key(|(i, c)| (feature_hamming(f, &c.feature), *i))
                .expect("interior nodes have at least one child")
                .0;
            node = &children[best];
        }
        node.word_id
    }

    pub fn save(&self, path: &Path) -> Result<(), DescriptorError> {
        std::fs::write(path, self.to_bytes()).map_err(|e| DescriptorError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Vocabulary, DescriptorError> {
        let bytes = std::fs::read(path).map_err(|e| DescriptorError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Vocabulary::from_bytes(&bytes).map_err(|reason| DescriptorError::MalformedVocabulary {
            path: path.to_path_buf(),
            reason,
        })
    }

    /// Little-endian layout: magic, k, l, node count, word count, then per
    /// node the 32-byte feature, first child, child count, and word id.
    pub(crate) fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 16 + self.nodes.len() * 44);
        out.extend_from_slice(MAGIC);
        for v in [self.k, self.l, self.nodes.len() as u32, self.word_count] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for n in &self.nodes {
            out.extend_from_slice(&n.feature);
            out.extend_from_slice(&n.first_child.to_le_bytes());
            out.extend_from_slice(&n.num_children.to_le_bytes());
            out.extend_from_slice(&n.word_id.to_le_bytes());
        }
        out
    }

    pub(crate) fn from_bytes(bytes: &[u8]) -> Result<Vocabulary, String> {
        if bytes.len() < 24 {
            return Err("file too short for header".into());
        }
        if &bytes[..8] != MAGIC {
            return Err("bad magic".into());
        }
        let u32_at = |off: usize| {
            u32::from_le_bytes(bytes[off..off + 4].try_into().expect("bounds checked"))
        };
        let k = u32_at(8);
        let l = u32_at(12);
        let node_count = u32_at(16) as usize;
        let word_count = u32_at(20);
        let expected = 24 + node_count * 44;
        if bytes.len() != expected {
            return Err(format!("expected {expected} bytes, got {}", bytes.len()));
        }
        if node_count == 0 {
            return Err("vocabulary has no nodes".into());
        }
        let mut nodes = Vec::with_capacity(node_count);
        for i in 0..node_count {
            let off = 24 + i * 44;
            let mut feature = [0u8; 32];
            feature.copy_from_slice(&bytes[off..off + 32]);
            nodes.push(Node {
                feature,
                first_child: u32_at(off + 32),
                num_children: u32_at(off + 36),
                word_id: u32_at(off + 40),
            });
        }
        let mut seen_words = vec![false; word_count as usize];
        for (i, n) in nodes.iter().enumerate() {
            if n.first_child == NONE {
                if n.num_children != 0 {
                    return Err(format!("leaf node {i} declares children"));
                }
                let w = n.word_id;
                if w == NONE || w >= word_count {
                    return Err(format!("leaf node {i} has bad word id {w}"));
                }
                if std::mem::replace(&mut seen_words[w as usize], true) {
                    return Err(format!("word id {w} assigned twice"));
                }
            } else {
                if n.word_id != NONE {
                    return Err(format!("interior node {i} carries a word id"));
                }
                if n.num_children == 0 {
                    return Err(format!("interior node {i} has no children"));
                }
                let first = n.first_child as usize;
                let end = first
                    .checked_add(n.num_children as usize)
                    .ok_or_else(|| format!("child range of node {i} overflows"))?;
                if first <= i || end > node_count {
                    return Err(format!("child range of node {i} is out of bounds"));
                }
            }
        }
        if seen_words.iter().any(|s| !s) {
            return Err("word ids are not contiguous".into());
        }
        Ok(Vocabulary {
            k,
            l,
            nodes,
            word_count,
        })
    }
}

/// Trains a vocabulary tree of branching factor `k` and maximum depth `l`.
///
/// Nodes split while they hold more than one distinct feature and are above
/// the depth limit; a node with fewer distinct features than `k` uses a
/// smaller branching factor. The same seed always yields the same tree.
pub fn build_vocabulary(
    features: &[BinaryFeature],
    k: usize,
    l: usize,
    seed: u64,
) -> Result<Vocabulary, DescriptorError> {
    assert!(k >= 2, "branching factor must be at least 2");
    assert!(l >= 1, "depth must be at least 1");
    if features.len() < k {
        return Err(DescriptorError::InsufficientFeatures {
            k,
            got: features.len(),
        });
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut nodes = vec![Node {
        feature: [0; 32],
        first_child: NONE,
        num_children: 0,
        word_id: NONE,
    }];
    // Breadth-first expansion keeps each node's children contiguous.
    let all: Vec<usize> = (0..features.len()).collect();
    let mut queue: std::collections::VecDeque<(usize, Vec<usize>, usize)> =
        std::collections::VecDeque::new();
    queue.push_back((0, all, 0));
    while let Some((node_idx, members, depth)) = queue.pop_front() {
        let distinct = distinct_features(features, &members);
        if depth >= l || distinct.len() <= 1 {
            continue; // stays a leaf
        }
        let kk = k.min(distinct.len());
        let clusters = k_medoids(features, &members, &distinct, kk, &mut rng);
        let first = nodes.len() as u32;
        nodes[node_idx].first_child = first;
        nodes[node_idx].num_children = clusters.len() as u32;
        for (medoid, cluster_members) in clusters {
            let child = nodes.len();
            nodes.push(Node {
                feature: medoid,
                first_child: NONE,
                num_children: 0,
                word_id: NONE,
            });
            queue.push_back((child, cluster_members, depth + 1));
        }
    }
    // Leaves become words in node order.
    let mut word_count = 0u32;
    for n in &mut nodes {
        if n.first_child == NONE {
            n.word_id = word_count;
            word_count += 1;
        }
    }
    Ok(Vocabulary {
        k: k as u32,
        l: l as u32,
        nodes,
        word_count,
    })
}

/// Indices of the first occurrence of each distinct feature value, in
/// member order.
fn distinct_features(features: &[BinaryFeature], members: &[usize]) -> Vec<usize> {
    let mut seen = std::collections::HashSet::new();
    members
        .iter()
        .copied()
        .filter(|&i| seen.insert(features[i]))
        .collect()
}

/// K-medoids under Hamming distance.
///
/// Seeds are a random draw of `kk` distinct feature values; assignment ties
/// go to the lowest cluster index and medoid ties to the earliest member.
/// Clusters that end up empty are dropped.
fn k_medoids(
    features: &[BinaryFeature],
    members: &[usize],
    distinct: &[usize],
    kk: usize,
    rng: &mut ChaCha20Rng,
) -> Vec<(BinaryFeature, Vec<usize>)> {
    debug_assert!(kk >= 2 && kk <= distinct.len());
    // Partial Fisher-Yates over the distinct values.
    let mut pool: Vec<usize> = distinct.to_vec();
    for i in 0..kk {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
    }
    let mut medoids: Vec<BinaryFeature> = pool[..kk].iter().map(|&i| features[i]).collect();

    let mut assignment: Vec<usize> = vec![usize::MAX; members.len()];
    for _ in 0..MAX_ITERS {
        let mut changed = false;
        for (slot, &m) in assignment.iter_mut().zip(members) {
            let best = medoids
                .iter()
                .enumerate()
                .min_by_key(|(ci, med)| (feature_hamming(&features[m], med), *ci))
                .expect("kk >= 2")
                .0;
            if *slot != best {
                *slot = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        // Recompute each medoid as the member minimizing the summed Hamming
        // distance, found in O(n * 256) through per-bit counts.
        let mut moved = false;
        for ci in 0..medoids.len() {
            let cluster: Vec<usize> = members
                .iter()
                .zip(&assignment)
                .filter(|&(_, &a)| a == ci)
                .map(|(&m, _)| m)
                .collect();
            if cluster.is_empty() {
                continue; // keeps its medoid; may reacquire members later
            }
            let mut bit_counts = [0u32; 256];
            for &m in &cluster {
                let f = &features[m];
                for (b, count) in bit_counts.iter_mut().enumerate() {
                    *count += u32::from(f[b / 8] >> (b % 8) & 1);
                }
            }
            let n = cluster.len() as u64;
            let cost = |f: &BinaryFeature| -> u64 {
                let mut c = 0u64;
                for (b, &ones) in bit_counts.iter().enumerate() {
                    let set = f[b / 8] >> (b % 8) & 1 == 1;
                    c += if set { n - u64::from(ones) } else { u64::from(ones) };
                }
                c
            };
            let best = cluster
                .iter()
                .map(|&m| (cost(&features[m]), m))
                .min_by_key(|&(c, m)| (c, m))
                .expect("cluster is non-empty");
            if features[best.1] != medoids[ci] {
                medoids[ci] = features[best.1];
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }

    let mut out: Vec<(BinaryFeature, Vec<usize>)> =
        medoids.iter().map(|&m| (m, Vec::new())).collect();
    for (&m, &a) in members.iter().zip(&assignment) {
        out[a].1.push(m);
    }
    out.retain(|(_, c)| !c.is_empty());
    out
}

/// Quantizes a frame's local features into an L1-normalized word histogram.
///
/// A frame with no features produces an empty histogram flagged degenerate.
pub fn extract_bow(
    features: &[BinaryFeature],
    vocab: &Vocabulary,
    modality: Modality,
) -> Result<DescriptorVector, DescriptorError> {
    let channel = Channel::new(DescriptorKind::Bow, modality)?;
    let dim = vocab.word_count();
    if features.is_empty() {
        let payload = Payload::Sparse(SparseVec::from_sorted(dim, Vec::new()));
        return Ok(DescriptorVector::new_degenerate(channel, payload));
    }
    let mut words: Vec<u32> = features.iter().map(|f| vocab.quantize(f)).collect();
    words.sort_unstable();
    let total = words.len() as f64;
    let mut entries: Vec<(u32, f64)> = Vec::new();
    let mut i = 0;
    while i < words.len() {
        let w = words[i];
        let mut j = i;
        while j < words.len() && words[j] == w {
            j += 1;
        }
        entries.push((w, (j - i) as f64 / total));
        i = j;
    }
    Ok(DescriptorVector::new(
        channel,
        Payload::Sparse(SparseVec::from_sorted(dim, entries)),
    ))
}
