//! Training-data builders: ranking instructions and noise-injected QA.
//!
//! Ranking data pairs each question with its gold images (label `Yes`) and a
//! sample of its hard negatives (label `No`). Noise-injected QA pads every
//! question with hard-negative distractors so all examples carry the same
//! number of images. Both builders are deterministic for a given seed.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_lines, Corpus, QaExample};
use crate::error::{Error, Result};
use crate::rerank::{render_prompt, TemplateKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Yes,
    No,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingExample {
    pub qid: String,
    pub record_id: String,
    pub image_ref: String,
    #[serde(skip)]
    pub template_kind: TemplateKind,
    pub prompt: String,
    pub label: Label,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RankingDataset {
    pub examples: Vec<RankingExample>,
    /// Queries left out because they had no hard negatives to sample.
    pub skipped: Vec<String>,
}

impl RankingDataset {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_lines(path.as_ref(), &self.examples)
    }
}

fn example(
    qa: &QaExample,
    corpus: &Corpus,
    id: &str,
    template: TemplateKind,
    label: Label,
) -> Result<RankingExample> {
    let record = corpus.get(id).ok_or_else(|| Error::DanglingReference {
        qid: qa.qid.clone(),
        id: id.to_string(),
    })?;
    let prompt = render_prompt(template, &record.caption, &qa.question, &record.image_ref)?;
    Ok(RankingExample {
        qid: qa.qid.clone(),
        record_id: id.to_string(),
        image_ref: record.image_ref.clone(),
        template_kind: template,
        prompt: prompt.text,
        label,
    })
}

/// One `Yes` per gold image and up to `negs_per_query` sampled `No`s per
/// query, shuffled by `seed`.
pub fn build_ranking_dataset(
    qa: &[QaExample],
    corpus: &Corpus,
    negs_per_query: usize,
    template: TemplateKind,
    seed: u64,
) -> Result<RankingDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = RankingDataset::default();
    for q in qa {
        if negs_per_query > 0 && q.hard_negative_ids.is_empty() {
            log::warn!("query `{}` has no hard negatives; skipped", q.qid);
            out.skipped.push(q.qid.clone());
            continue;
        }
        for id in &q.positive_ids {
            out.examples
                .push(example(q, corpus, id, template, Label::Yes)?);
        }
        for id in q
            .hard_negative_ids
            .choose_multiple(&mut rng, negs_per_query)
        {
            out.examples
                .push(example(q, corpus, id, template, Label::No)?);
        }
    }
    out.examples.shuffle(&mut rng);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseInjectedQa {
    pub qid: String,
    pub question: String,
    pub answers: Vec<String>,
    pub image_ids: Vec<String>,
    /// `true` for injected distractors, aligned with `image_ids`.
    pub distractor_flags: Vec<bool>,
    /// Set when hard negatives ran out and same-split corpus records filled the gap.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fallback_padding: bool,
}

/// Pads each question with distractors up to exactly `max_images` images.
///
/// Distractors come from the question's hard negatives first, then from
/// same-split corpus records that are not gold. Image order is shuffled.
pub fn build_noise_injected_qa(
    qa: &[QaExample],
    corpus: &Corpus,
    max_images: usize,
    seed: u64,
) -> Result<Vec<NoiseInjectedQa>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(qa.len());
    for q in qa {
        if q.positive_ids.len() > max_images {
            return Err(Error::invalid(format!(
                "query `{}` has {} gold images, more than max_images = {max_images}",
                q.qid,
                q.positive_ids.len()
            )));
        }
        let need = max_images - q.positive_ids.len();
        let mut images: Vec<(String, bool)> = q
            .positive_ids
            .iter()
            .map(|id| (id.clone(), false))
            .collect();
        images.extend(
            q.hard_negative_ids
                .choose_multiple(&mut rng, need)
                .map(|id| (id.clone(), true)),
        );

        let mut fallback_padding = false;
        if images.len() < max_images {
            fallback_padding = true;
            let taken: HashSet<&str> = images.iter().map(|(id, _)| id.as_str()).collect();
            let pool: Vec<&str> = corpus
                .iter()
                .filter(|r| r.split == q.split && !taken.contains(r.id.as_str()))
                .map(|r| r.id.as_str())
                .collect();
            let short = max_images - images.len();
            if pool.len() < short {
                return Err(Error::invalid(format!(
                    "query `{}`: not enough negatives to pad to {max_images} images",
                    q.qid
                )));
            }
            let extra: Vec<(String, bool)> = pool
                .choose_multiple(&mut rng, short)
                .map(|id| (id.to_string(), true))
                .collect();
            images.extend(extra);
        }
        images.shuffle(&mut rng);
        let (image_ids, distractor_flags) = images.into_iter().unzip();
        out.push(NoiseInjectedQa {
            qid: q.qid.clone(),
            question: q.question.clone(),
            answers: q.answers.clone(),
            image_ids,
            distractor_flags,
            fallback_padding,
        });
    }
    Ok(out)
}

/// Serialises items as JSON lines into memory, for byte-level comparison.
pub fn to_jsonl<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).expect("dataset rows serialise");
        buf.write_all(b"\n").expect("writing to a Vec cannot fail");
    }
    buf
}

pub fn save_noise_injected(items: &[NoiseInjectedQa], path: impl AsRef<Path>) -> Result<()> {
    write_lines(path.as_ref(), items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ImageRecord, Split};

    fn corpus() -> Corpus {
        Corpus::from_records(
            "t",
            (0..10).map(|i| {
                ImageRecord::new(
                    format!("r{i}"),
                    format!("caption {i}"),
                    format!("img{i}"),
                    Split::Val,
                )
            }),
        )
        .unwrap()
    }

    fn qa(qid: &str, pos: &[usize], neg: &[usize]) -> QaExample {
        QaExample {
            qid: qid.into(),
            question: format!("question {qid}?"),
            answers: vec!["a".into()],
            positive_ids: pos.iter().map(|i| format!("r{i}")).collect(),
            hard_negative_ids: neg.iter().map(|i| format!("r{i}")).collect(),
            split: Split::Val,
            extra: Default::default(),
        }
    }

    #[test]
    fn one_positive_two_negatives() {
        let data = [qa("q1", &[0], &[1, 2, 3])];
        let ds = build_ranking_dataset(&data, &corpus(), 2, TemplateKind::CaptionAware, 5).unwrap();
        assert_eq!(ds.examples.len(), 3);
        let yes: Vec<_> = ds
            .examples
            .iter()
            .filter(|e| e.label == Label::Yes)
            .collect();
        assert_eq!(yes.len(), 1);
        assert_eq!(yes[0].record_id, "r0");
        for e in ds.examples.iter().filter(|e| e.label == Label::No) {
            assert!(["r1", "r2", "r3"].contains(&e.record_id.as_str()));
        }
        let no: HashSet<_> = ds
            .examples
            .iter()
            .filter(|e| e.label == Label::No)
            .map(|e| e.record_id.clone())
            .collect();
        assert_eq!(no.len(), 2, "negatives sampled without replacement");
    }

    #[test]
    fn zero_negatives_keeps_positives_only() {
        let data = [qa("q1", &[0, 4], &[1, 2, 3]), qa("q2", &[5], &[])];
        let ds = build_ranking_dataset(&data, &corpus(), 0, TemplateKind::CaptionAware, 5).unwrap();
        assert_eq!(ds.examples.len(), 3);
        assert!(ds.examples.iter().all(|e| e.label == Label::Yes));
        assert!(ds.skipped.is_empty());
    }

    #[test]
    fn queries_without_negatives_are_skipped() {
        let data = [qa("q1", &[0], &[1]), qa("q2", &[5], &[])];
        let ds = build_ranking_dataset(&data, &corpus(), 2, TemplateKind::CaptionAware, 5).unwrap();
        assert_eq!(ds.skipped, ["q2"]);
        assert!(ds.examples.iter().all(|e| e.qid == "q1"));
        assert_eq!(ds.examples.len(), 2);
    }

    #[test]
    fn prompts_use_the_template() {
        let data = [qa("q1", &[0], &[1])];
        let ds =
            build_ranking_dataset(&data, &corpus(), 1, TemplateKind::CaptionAgnostic, 0).unwrap();
        for e in &ds.examples {
            assert!(e.prompt.starts_with("<image> Question:question q1?"));
        }
        let line = String::from_utf8(to_jsonl(&ds.examples[..1])).unwrap();
        let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["image_ref", "label", "prompt", "qid", "record_id"]);
    }

    #[test]
    fn ranking_is_deterministic() {
        let data: Vec<_> = (0..20)
            .map(|i| {
                qa(
                    &format!("q{i}"),
                    &[i % 10],
                    &[(i + 1) % 10, (i + 2) % 10, (i + 3) % 10],
                )
            })
            .collect();
        let a = build_ranking_dataset(&data, &corpus(), 2, TemplateKind::CaptionAware, 9).unwrap();
        let b = build_ranking_dataset(&data, &corpus(), 2, TemplateKind::CaptionAware, 9).unwrap();
        assert_eq!(to_jsonl(&a.examples), to_jsonl(&b.examples));
        let c = build_ranking_dataset(&data, &corpus(), 2, TemplateKind::CaptionAware, 10).unwrap();
        assert_eq!(a.examples.len(), c.examples.len());
    }

    #[test]
    fn single_positive_gets_one_distractor() {
        let data = [qa("q1", &[0], &[1, 2, 3])];
        let out = build_noise_injected_qa(&data, &corpus(), 2, 3).unwrap();
        let q = &out[0];
        assert_eq!(q.image_ids.len(), 2);
        assert_eq!(q.distractor_flags.iter().filter(|f| **f).count(), 1);
        assert!(q.image_ids.contains(&"r0".to_string()));
        let distractor = &q.image_ids[q.distractor_flags.iter().position(|f| *f).unwrap()];
        assert!(["r1", "r2", "r3"].contains(&distractor.as_str()));
        assert!(!q.fallback_padding);
    }

    #[test]
    fn full_queries_are_unchanged() {
        let data = [qa("q1", &[0, 1], &[2, 3])];
        let out = build_noise_injected_qa(&data, &corpus(), 2, 3).unwrap();
        let mut ids = out[0].image_ids.clone();
        ids.sort();
        assert_eq!(ids, ["r0", "r1"]);
        assert!(out[0].distractor_flags.iter().all(|f| !f));
    }

    #[test]
    fn too_many_positives_is_error() {
        let data = [qa("q7", &[0, 1, 2], &[3])];
        let err = build_noise_injected_qa(&data, &corpus(), 2, 3).unwrap_err();
        assert!(err.to_string().contains("q7"));
    }

    #[test]
    fn padding_falls_back_to_corpus() {
        let data = [qa("q1", &[0], &[1])];
        let out = build_noise_injected_qa(&data, &corpus(), 4, 3).unwrap();
        assert_eq!(out[0].image_ids.len(), 4);
        assert!(out[0].fallback_padding);
        assert_eq!(out[0].distractor_flags.iter().filter(|f| **f).count(), 3);
        assert!(out[0].image_ids.contains(&"r1".to_string()));
        let unique: HashSet<_> = out[0].image_ids.iter().collect();
        assert_eq!(unique.len(), 4);
    }

    #[test]
    fn padding_fails_when_corpus_exhausted() {
        let data = [qa("q1", &[0], &[1])];
        assert!(build_noise_injected_qa(&data, &corpus(), 11, 3).is_err());
    }
}
