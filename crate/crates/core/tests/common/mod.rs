//! Shared test and bench support: fixture directories and a seeded
//! synthetic corpus.

#![allow(dead_code)]

use std::path::PathBuf;
use std::time::Duration;

use ovfact_core::backend::fixture::{FixtureDetector, FixtureEmbedder, FixtureParser, FixtureSegmenter, FixtureSet};
use ovfact_core::{CaptionSample, ImageRef};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixtures_dir(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn load_fixtures(name: &str) -> FixtureSet {
    FixtureSet::load_dir(&fixtures_dir(name)).expect("fixture directory loads")
}

pub struct Corpus {
    pub fixtures: FixtureSet,
    pub samples: Vec<CaptionSample>,
    pub concepts: Vec<String>,
}

pub const IMAGES: usize = 50;
pub const CONCEPTS: usize = 40;
const DIM: usize = 16;

/// `n` samples over 50 images and 40 concepts. About 3% of captions parse
/// to nothing, and the last tenth repeats earlier (image, caption) pairs so
/// exact score ties occur.
pub fn synthetic_corpus(n: usize, seed: u64) -> Corpus {
    synthetic_corpus_with_latency(n, seed, None)
}

/// As [`synthetic_corpus`], with every fixture call sleeping for `latency`.
pub fn synthetic_corpus_with_latency(n: usize, seed: u64, latency: Option<Duration>) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let concepts: Vec<String> = (0..CONCEPTS).map(|k| format!("object {k:02}")).collect();
    let vectors: Vec<(String, Vec<f64>)> = concepts
        .iter()
        .map(|c| (c.clone(), (0..DIM).map(|_| rng.gen_range(-1.0..1.0)).collect()))
        .collect();

    let mut detections = Vec::new();
    let mut segmentations = Vec::new();
    let mut parser: Vec<(String, Vec<String>)> = Vec::new();
    for k in 0..IMAGES {
        let image = format!("img{k:02}");
        let present: Vec<&String> = concepts.choose_multiple(&mut rng, 24).collect();
        detections.push((
            image.clone(),
            present
                .iter()
                .map(|c| ((*c).clone(), rng.gen_range(0.0..1.0)))
                .collect::<Vec<_>>(),
        ));
        segmentations.push((
            image.clone(),
            present
                .iter()
                .map(|c| ((*c).clone(), (rng.gen_range(0.0..1.0), rng.gen_range(0.0..0.5))))
                .collect::<Vec<_>>(),
        ));
        let refs = rng.gen_range(3..=6);
        parser.push((
            reference_caption(k),
            concepts.choose_multiple(&mut rng, refs).cloned().collect(),
        ));
    }

    let distinct = n - n / 10;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let (k, j) = if i < distinct {
            (rng.gen_range(0..IMAGES), i)
        } else {
            let s: &CaptionSample = &samples[i - distinct];
            (s.image.id[3..].parse().expect("image index"), i - distinct)
        };
        let caption = format!("Synthetic caption number {j}.");
        if i < distinct {
            let count = if rng.gen_bool(0.03) { 0 } else { rng.gen_range(1..=5) };
            parser.push((caption.clone(), concepts.choose_multiple(&mut rng, count).cloned().collect()));
        }
        let image = ImageRef::new(format!("img{k:02}"), format!("synthetic://img{k:02}.jpg"));
        samples.push(CaptionSample::new(format!("sample-{i:05}"), image, caption).with_reference(reference_caption(k)));
    }

    Corpus {
        fixtures: match latency {
            None => FixtureSet::new(
                FixtureParser::from_pairs(parser),
                FixtureDetector::from_images(detections),
                FixtureSegmenter::from_images(segmentations),
                FixtureEmbedder::from_pairs(vectors),
            ),
            Some(d) => FixtureSet::new(
                FixtureParser::from_pairs(parser).with_latency(d),
                FixtureDetector::from_images(detections).with_latency(d),
                FixtureSegmenter::from_images(segmentations).with_latency(d),
                FixtureEmbedder::from_pairs(vectors).with_latency(d),
            ),
        },
        samples,
        concepts,
    }
}

fn reference_caption(k: usize) -> String {
    format!("Reference description of image {k:02}.")
}
