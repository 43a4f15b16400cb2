//! Seeded toy datasets whose retrieval geometry is known in advance.
//!
//! Every query's gold images sit close to the hash embedding of the question,
//! its hard negatives sit at moderate similarity, and everything else is a
//! random direction. With the default sizes all gold images and hard
//! negatives land inside the top 20 for their own question.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::backend::mock::HashEmbedder;
use crate::corpus::{Corpus, ImageRecord, QaExample, Split};
use crate::error::Result;
use crate::index::EmbeddingMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub queries: usize,
    /// Share of queries with two gold images.
    pub multi_fraction: f64,
    pub hard_negatives: usize,
    /// Unattached records added to the corpus.
    pub distractors: usize,
    pub dim: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            queries: 100,
            multi_fraction: 0.3,
            hard_negatives: 3,
            distractors: 200,
            dim: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub corpus: Corpus,
    pub qa: Vec<QaExample>,
    pub embeddings: EmbeddingMatrix,
}

const GOLD_SIMILARITY: f64 = 0.95;
const HARD_NEGATIVE_SIMILARITY: f64 = 0.6;

/// Unit vector with inner product `cos` against unit `anchor`.
fn near(anchor: &[f32], cos: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut noise: Vec<f64> = (0..anchor.len())
        .map(|_| StandardNormal.sample(rng))
        .collect();
    let along: f64 = noise
        .iter()
        .zip(anchor)
        .map(|(n, &a)| n * f64::from(a))
        .sum();
    for (n, &a) in noise.iter_mut().zip(anchor) {
        *n -= along * f64::from(a);
    }
    let norm = noise
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(f64::MIN_POSITIVE);
    let sin = (1.0 - cos * cos).sqrt();
    anchor
        .iter()
        .zip(&noise)
        .map(|(&a, n)| (cos * f64::from(a) + sin * n / norm) as f32)
        .collect()
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let embedder = HashEmbedder::new(spec.dim);
    let mut records = Vec::new();
    let mut rows = Vec::new();
    let mut qa = Vec::with_capacity(spec.queries);

    let mut add = |records: &mut Vec<ImageRecord>, id: String, caption: String, v: Vec<f32>| {
        records.push(ImageRecord::new(
            id.clone(),
            caption,
            format!("images/{id}.png"),
            Split::Val,
        ));
        rows.push((id, v));
    };

    for i in 0..spec.queries {
        let qid = format!("q{i:04}");
        let question = format!("What is shown in scene {i}?");
        let anchor = embedder.vector(&question);
        let golds = if rng.random::<f64>() < spec.multi_fraction {
            2
        } else {
            1
        };
        let mut positive_ids = Vec::new();
        for g in 0..golds {
            let id = format!("img{i:04}a{g}");
            let v = near(&anchor, GOLD_SIMILARITY, &mut rng);
            add(&mut records, id.clone(), format!("Scene {i}, view {g}"), v);
            positive_ids.push(id);
        }
        let mut hard_negative_ids = Vec::new();
        for h in 0..spec.hard_negatives {
            let id = format!("img{i:04}h{h}");
            let v = near(&anchor, HARD_NEGATIVE_SIMILARITY, &mut rng);
            add(
                &mut records,
                id.clone(),
                format!("Scene {i}, look-alike {h}"),
                v,
            );
            hard_negative_ids.push(id);
        }
        qa.push(QaExample {
            qid,
            question,
            answers: vec![format!("object {i}")],
            positive_ids,
            hard_negative_ids,
            split: Split::Val,
            extra: Default::default(),
        });
    }
    for d in 0..spec.distractors {
        let id = format!("noise{d:05}");
        let v = embedder.vector(&format!("{}:{id}", spec.seed));
        add(&mut records, id, format!("Unrelated picture {d}"), v);
    }

    let corpus = Corpus::from_records("synthetic", records)?;
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    let embeddings = EmbeddingMatrix::from_rows(spec.dim, rows)?;
    Ok(SyntheticData {
        corpus,
        qa,
        embeddings,
    })
}
