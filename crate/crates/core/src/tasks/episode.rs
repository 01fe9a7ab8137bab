use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::pool::ClassPool;
use super::split::{MetaSplit, SplitPart};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Mixes a base seed with an index (splitmix64 finaliser over both).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One N-way K-shot task with a disjoint query set.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub n: usize,
    pub k: usize,
    pub q: usize,
    pub support_x: Tensor,
    pub support_y: Vec<usize>,
    pub query_x: Tensor,
    pub query_y: Vec<usize>,
    /// Pool class index for each episode label.
    pub class_ids: Vec<usize>,
    /// `(pool class, instance)` of every support row.
    pub support_ids: Vec<(usize, usize)>,
    pub query_ids: Vec<(usize, usize)>,
    /// Seed the episode was drawn from; orders per-task reductions.
    pub task_id: u64,
}

/// Draws an episode from the classes of `part`.
///
/// The episode-label to class assignment is a random permutation, and the
/// `K + Q` instances per class are drawn without replacement.
pub fn sample_episode(
    pool: &ClassPool,
    split: &MetaSplit,
    part: SplitPart,
    n: usize,
    k: usize,
    q: usize,
    seed: u64,
) -> Result<Episode> {
    let classes = split.part(part);
    if n < 2 || k == 0 || q == 0 {
        return Err(Error::Invalid(format!("episode needs N >= 2, K >= 1, Q >= 1 (got {n}, {k}, {q})")));
    }
    if classes.len() < n {
        return Err(Error::NotEnoughClasses { needed: n, available: classes.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let class_ids: Vec<usize> = sample(&mut rng, classes.len(), n).into_iter().map(|i| classes[i]).collect();

    let dim = pool.dim();
    let mut support = Vec::with_capacity(n * k * dim);
    let mut query = Vec::with_capacity(n * q * dim);
    let (mut support_y, mut query_y) = (Vec::with_capacity(n * k), Vec::with_capacity(n * q));
    let (mut support_ids, mut query_ids) = (Vec::with_capacity(n * k), Vec::with_capacity(n * q));
    for (label, &cid) in class_ids.iter().enumerate() {
        let class = pool.class(cid);
        let available = class.num_instances(dim);
        if available < k + q {
            return Err(Error::NotEnoughInstances { class: class.name.clone(), available, needed: k + q });
        }
        let picks = sample(&mut rng, available, k + q).into_vec();
        for (j, &inst) in picks.iter().enumerate() {
            let row = class.instance(dim, inst);
            if j < k {
                support.extend_from_slice(row);
                support_y.push(label);
                support_ids.push((cid, inst));
            } else {
                query.extend_from_slice(row);
                query_y.push(label);
                query_ids.push((cid, inst));
            }
        }
    }
    Ok(Episode {
        n,
        k,
        q,
        support_x: Tensor::matrix(n * k, dim, support)?,
        support_y,
        query_x: Tensor::matrix(n * q, dim, query)?,
        query_y,
        class_ids,
        support_ids,
        query_ids,
        task_id: seed,
    })
}

#[derive(Serialize, Deserialize)]
struct DumpSet {
    shape: Vec<usize>,
    x: String,
    y: Vec<usize>,
    ids: Vec<(usize, usize)>,
}

fn encode(t: &Tensor) -> String {
    let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    B64.encode(bytes)
}

fn decode(shape: Vec<usize>, s: &str) -> Result<Tensor> {
    let bytes = B64.decode(s).map_err(|e| Error::Invalid(format!("episode dump: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Invalid("episode dump: truncated tensor".into()));
    }
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Tensor::new(shape, data)
}

impl Episode {
    /// Debug dump: one JSON object, tensors as base64 little-endian `f64`.
    pub fn to_dump_json(&self) -> Value {
        let set = |x: &Tensor, y: &[usize], ids: &[(usize, usize)]| DumpSet {
            shape: x.shape().to_vec(),
            x: encode(x),
            y: y.to_vec(),
            ids: ids.to_vec(),
        };
        json!({
            "n": self.n,
            "k": self.k,
            "q": self.q,
            "task_id": self.task_id,
            "class_ids": self.class_ids,
            "support": set(&self.support_x, &self.support_y, &self.support_ids),
            "query": set(&self.query_x, &self.query_y, &self.query_ids),
        })
    }

    pub fn from_dump_json(v: &Value) -> Result<Episode> {
        #[derive(Deserialize)]
        struct Dump {
            n: usize,
            k: usize,
            q: usize,
            task_id: u64,
            class_ids: Vec<usize>,
            support: DumpSet,
            query: DumpSet,
        }
        let d: Dump = serde_json::from_value(v.clone())?;
        Ok(Episode {
            n: d.n,
            k: d.k,
            q: d.q,
            support_x: decode(d.support.shape, &d.support.x)?,
            support_y: d.support.y,
            query_x: decode(d.query.shape, &d.query.x)?,
            query_y: d.query.y,
            class_ids: d.class_ids,
            support_ids: d.support.ids,
            query_ids: d.query.ids,
            task_id: d.task_id,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::pool::{make_synthetic_pool, SyntheticPoolSpec};
    use crate::tasks::split::{split_classes, SplitSpec};

    fn fixture() -> (ClassPool, MetaSplit) {
        let pool = make_synthetic_pool(&SyntheticPoolSpec { num_classes: 60, ..Default::default() }, 1).unwrap();
        let split = split_classes(pool.len(), &SplitSpec::Counts { train: 30, val: 10, test: 20 }, 2).unwrap();
        (pool, split)
    }

    #[test]
    fn twenty_way_one_shot_sizes() {
        let (pool, split) = fixture();
        let ep = sample_episode(&pool, &split, SplitPart::Test, 20, 1, 15, 9).unwrap();
        assert_eq!(ep.support_x.shape(), &[20, 16]);
        assert_eq!(ep.query_x.shape(), &[300, 16]);
    }

    #[test]
    fn minimal_episode() {
        let (pool, split) = fixture();
        let ep = sample_episode(&pool, &split, SplitPart::Train, 2, 1, 1, 3).unwrap();
        assert_eq!(ep.support_y, vec![0, 1]);
        assert_eq!(ep.query_y, vec![0, 1]);
    }

    #[test]
    fn different_seeds_give_different_classes() {
        let (pool, split) = fixture();
        let mut draws = std::collections::HashSet::new();
        for s in 0..100 {
            draws.insert(sample_episode(&pool, &split, SplitPart::Train, 5, 1, 1, derive_seed(7, s)).unwrap().class_ids);
        }
        assert!(draws.len() >= 95, "{} distinct", draws.len());
    }

    #[test]
    fn too_few_instances_names_class() {
        let (pool, split) = fixture();
        let err = sample_episode(&pool, &split, SplitPart::Train, 5, 10, 15, 0).unwrap_err();
        assert!(matches!(err, Error::NotEnoughInstances { ref class, .. } if class.starts_with("synthetic_")));
    }

    #[test]
    fn too_many_ways() {
        let (pool, split) = fixture();
        assert!(sample_episode(&pool, &split, SplitPart::Val, 11, 1, 1, 0).is_err());
    }

    #[test]
    fn dump_roundtrip() {
        let (pool, split) = fixture();
        let ep = sample_episode(&pool, &split, SplitPart::Val, 3, 2, 2, 11).unwrap();
        let text = serde_json::to_string(&ep.to_dump_json()).unwrap();
        let back = Episode::from_dump_json(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, ep);
    }
}
