use std::collections::BTreeMap;
use std::ops::Range;

/// K/V of one chunk for every layer, at document-absolute positions.
#[derive(Debug, Clone, PartialEq)]
pub struct KvBlock {
    pub chunk_index: usize,
    pub positions: Range<usize>,
    /// Per layer, `[len × d_kv]` row-major.
    pub keys: Vec<Vec<f32>>,
    pub values: Vec<Vec<f32>>,
}

impl KvBlock {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// K/V of tokens produced during decoding. Never evicted.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GenerationBlock {
    pub positions: Vec<usize>,
    pub keys: Vec<Vec<f32>>,
    pub values: Vec<Vec<f32>>,
}

impl GenerationBlock {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Chunk-keyed KV cache owned by one generation session.
#[derive(Debug, Clone, PartialEq)]
pub struct KvCache {
    pub(crate) n_layers: usize,
    pub(crate) blocks: BTreeMap<usize, KvBlock>,
    pub(crate) generated: GenerationBlock,
}

impl KvCache {
    pub fn new(n_layers: usize) -> Self {
        Self {
            n_layers,
            blocks: BTreeMap::new(),
            generated: GenerationBlock {
                positions: Vec::new(),
                keys: vec![Vec::new(); n_layers],
                values: vec![Vec::new(); n_layers],
            },
        }
    }

    pub fn is_resident(&self, chunk_index: usize) -> bool {
        self.blocks.contains_key(&chunk_index)
    }

    pub fn block(&self, chunk_index: usize) -> Option<&KvBlock> {
        self.blocks.get(&chunk_index)
    }

    /// Resident chunks in document order.
    pub fn blocks(&self) -> impl Iterator<Item = &KvBlock> {
        self.blocks.values()
    }

    pub fn resident_chunks(&self) -> Vec<usize> {
        self.blocks.keys().copied().collect()
    }

    pub fn resident_tokens(&self) -> usize {
        self.blocks.values().map(KvBlock::len).sum()
    }

    pub fn generated(&self) -> &GenerationBlock {
        &self.generated
    }

    pub fn generated_tokens(&self) -> usize {
        self.generated.len()
    }

    /// Drops a chunk's K/V. Returns whether it was resident.
    pub fn evict(&mut self, chunk_index: usize) -> bool {
        self.blocks.remove(&chunk_index).is_some()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty() && self.generated.is_empty()
    }

    /// True if every chunk block is bitwise equal to `other`'s.
    pub fn chunk_blocks_equal(&self, other: &KvCache) -> bool {
        self.blocks.len() == other.blocks.len()
            && self
                .blocks
                .iter()
                .zip(&other.blocks)
                .all(|((i, a), (j, b))| {
                    i == j
                        && a.positions == b.positions
                        && bit_eq(&a.keys, &b.keys)
                        && bit_eq(&a.values, &b.values)
                })
    }
}

fn bit_eq(a: &[Vec<f32>], b: &[Vec<f32>]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits())
        })
}
