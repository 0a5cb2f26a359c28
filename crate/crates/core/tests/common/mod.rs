//! Planted-noise corpora with known ground truth.
//!
//! Clean pairs are random English-looking sentences whose "translation"
//! re-accents one vowel per word: every stub scorer rates them perfect and
//! every heuristic passes them. Each noise category is built to slip past
//! every stage before the one meant to catch it.

#![allow(dead_code)]

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bitextkit::dedup::{KeyFn, ReferenceSet};
use bitextkit::model::SentencePair;
use bitextkit::pipeline::{PipelineConfig, StageKind};

/// Noise categories, their removing stage and their count per 10,000 pairs.
pub const CATEGORIES: &[(&str, &str, usize)] = &[
    ("short", "length", 100),
    ("long", "length", 100),
    ("copy", "overlap", 150),
    ("junk", "charset", 150),
    ("misaligned", "similarity", 150),
    ("reversed", "langid", 100),
    ("exact_dup", "dedup_exact", 100),
    ("near_dup", "dedup_near", 100),
    ("mt_quotes", "mt_prob", 100),
    ("cross_dataset", "reference_dedup", 50),
    ("repeated_source", "cross_likelihood", 100),
];

pub const CLEAN_PER_10K: usize = 8_800;

pub fn config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default_pipeline.toml")
}

/// The shipped ten-stage config with `overrides` applied and `references`
/// as the reference sets of the cross-dataset stage.
pub fn default_config(references: &[PathBuf], overrides: &[(&str, &str)]) -> PipelineConfig {
    let overrides: Vec<(String, String)> = overrides.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    let mut config = PipelineConfig::load(&config_path(), &overrides).expect("shipped config loads");
    for stage in &mut config.stages {
        if stage.name == "reference_dedup" {
            if let StageKind::Dedup(d) = &mut stage.kind {
                d.references = references.to_vec();
            }
        }
    }
    config
}

fn accent(c: char) -> char {
    match c {
        'a' => 'á',
        'e' => 'é',
        'i' => 'í',
        'o' => 'ó',
        'u' => 'ú',
        'A' => 'Á',
        'E' => 'É',
        'I' => 'Í',
        'O' => 'Ó',
        'U' => 'Ú',
        other => other,
    }
}

/// Accents the first plain vowel of every token that has one.
pub fn icelandicize(text: &str) -> String {
    text.split(' ')
        .map(|tok| {
            let mut done = false;
            tok.chars()
                .map(|c| {
                    let a = accent(c);
                    if !done && a != c {
                        done = true;
                        a
                    } else {
                        c
                    }
                })
                .collect::<String>()
        })
        .collect::<Vec<_>>()
        .join(" ")
}

const CONSONANTS: &[u8] = b"bcdfghjklmnprstvw";
const VOWELS: &[u8] = b"aeiou";
const NAMES: &[&str] = &["Anna", "Bjorn", "Gunnar", "Helga", "Kari", "Sigrun", "Jon", "Olafur", "Freya", "Egill"];

#[derive(Debug, Clone)]
struct Sentence {
    words: Vec<usize>,
    number: Option<(usize, u32)>,
    name: Option<(usize, &'static str)>,
    emoji: bool,
}

pub struct Generator {
    rng: ChaCha8Rng,
    vocab: Vec<String>,
    used: HashSet<Vec<usize>>,
}

impl Generator {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen = HashSet::new();
        let mut vocab = Vec::new();
        while vocab.len() < 3000 {
            let syllables = rng.gen_range(1..=3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push(CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char);
                w.push(VOWELS[rng.gen_range(0..VOWELS.len())] as char);
            }
            if rng.gen_bool(0.5) {
                w.push(CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char);
            }
            if w.len() >= 3 && seen.insert(w.clone()) {
                vocab.push(w);
            }
        }
        Generator { rng, vocab, used: HashSet::new() }
    }

    /// Distinct words, never the same word sequence twice.
    fn words(&mut self, lo: usize, hi: usize, max_len: usize) -> Vec<usize> {
        loop {
            let n = self.rng.gen_range(lo..=hi);
            let words: Vec<usize> = index::sample(&mut self.rng, self.vocab.len(), n)
                .into_iter()
                .filter(|&i| self.vocab[i].len() <= max_len)
                .collect();
            if words.len() >= lo && self.used.insert(words.clone()) {
                return words;
            }
        }
    }

    fn sentence(&mut self, lo: usize, hi: usize) -> Sentence {
        let words = self.words(lo, hi, 9);
        let number =
            self.rng.gen_bool(0.12).then(|| (self.rng.gen_range(1..words.len()), self.rng.gen_range(1..10_000)));
        let name = self
            .rng
            .gen_bool(0.1)
            .then(|| (self.rng.gen_range(1..words.len()), NAMES[self.rng.gen_range(0..NAMES.len())]));
        Sentence { words, number, name, emoji: self.rng.gen_bool(0.03) }
    }

    fn render(&self, s: &Sentence, translate: bool) -> String {
        let mut tokens: Vec<String> = s
            .words
            .iter()
            .map(|&i| if translate { icelandicize(&self.vocab[i]) } else { self.vocab[i].clone() })
            .collect();
        if let Some((at, n)) = s.number {
            tokens.insert(at, n.to_string());
        }
        if let Some((at, name)) = s.name {
            tokens.insert(at.min(tokens.len() - 1).max(1), name.to_string());
        }
        let mut first: Vec<char> = tokens[0].chars().collect();
        first[0] = first[0].to_uppercase().next().unwrap();
        tokens[0] = first.into_iter().collect();
        let last = tokens.len() - 1;
        tokens[last].push('.');
        if s.emoji {
            tokens.push("😀".into());
        }
        tokens.join(" ")
    }

    fn pair(&self, s: &Sentence) -> (String, String) {
        (self.render(s, false), self.render(s, true))
    }
}

#[derive(Debug, Clone)]
pub struct PlantedCorpus {
    pub pairs: Vec<SentencePair>,
    /// The stage expected to remove each pair, by id; `None` for clean.
    pub expected: Vec<Option<&'static str>>,
    /// Exact keys of the datasets "already on file".
    pub reference: ReferenceSet,
}

impl PlantedCorpus {
    /// `scale` multiplies every count: scale 1 is 10,000 pairs.
    pub fn generate(seed: u64, scale: usize) -> Self {
        let mut g = Generator::new(seed);
        let mut items: Vec<(String, String, Option<&'static str>)> = Vec::new();
        let mut clean: Vec<Sentence> = Vec::new();
        for _ in 0..CLEAN_PER_10K * scale {
            let s = g.sentence(5, 9);
            let (src, tgt) = g.pair(&s);
            items.push((src, tgt, None));
            clean.push(s);
        }
        let count = |name: &str| CATEGORIES.iter().find(|c| c.0 == name).unwrap().2 * scale;
        let stage = |name: &str| CATEGORIES.iter().find(|c| c.0 == name).unwrap().1;

        for i in 0..count("short") {
            let s = g.sentence(5, 9);
            let (src, tgt) = g.pair(&s);
            let short = ["", "a", "Hi.", "Ok", "Já."][i % 5].to_string();
            let (src, tgt) = if i % 2 == 0 { (short, tgt) } else { (src, short) };
            items.push((src, tgt, Some(stage("short"))));
        }
        for _ in 0..count("long") {
            let s = Sentence { words: g.words(30, 34, 9), number: None, name: None, emoji: false };
            let (src, tgt) = g.pair(&s);
            assert!(src.chars().count() > 150);
            items.push((src, tgt, Some(stage("long"))));
        }
        for _ in 0..count("copy") {
            let s = g.sentence(5, 9);
            let src = g.render(&s, false);
            items.push((src.clone(), src, Some(stage("copy"))));
        }
        for _ in 0..count("junk") {
            let s = g.sentence(5, 9);
            let src = g.render(&s, false);
            let n = g.rng.gen_range(10..40);
            let junk: String = (0..n).map(|_| char::from_u32(g.rng.gen_range(0x4E00..0x9FA5)).unwrap()).collect();
            items.push((src, format!("{junk} {}", icelandicize(&g.vocab[s.words[0]])), Some(stage("junk"))));
        }
        for _ in 0..count("misaligned") {
            let a = g.sentence(5, 9);
            let b = g.sentence(5, 9);
            items.push((g.render(&a, false), g.render(&b, true), Some(stage("misaligned"))));
        }
        for _ in 0..count("reversed") {
            let s = g.sentence(5, 9);
            let (src, tgt) = g.pair(&s);
            items.push((tgt, src, Some(stage("reversed"))));
        }
        for _ in 0..count("mt_quotes") {
            let s = Sentence { emoji: false, ..g.sentence(5, 9) };
            let quote = |text: String| {
                let mut tokens: Vec<String> = text.split(' ').map(str::to_string).collect();
                tokens[1] = format!("\"{}", tokens[1]);
                tokens[2] = format!("{}\"", tokens[2]);
                tokens.join(" ")
            };
            let (src, tgt) = g.pair(&s);
            items.push((quote(src), quote(tgt), Some(stage("mt_quotes"))));
        }
        let mut on_file = Vec::new();
        for _ in 0..count("cross_dataset") {
            let s = Sentence { emoji: false, ..g.sentence(5, 9) };
            let (src, tgt) = g.pair(&s);
            on_file.push(SentencePair::new(src.clone(), tgt.clone(), "elsewhere", 0));
            items.push((src, tgt, Some(stage("cross_dataset"))));
        }
        for _ in 0..count("repeated_source") {
            let s = Sentence { words: g.words(5, 5, 5), number: None, name: None, emoji: false };
            let (src, tgt) = g.pair(&s);
            items.push((format!("{src} {src} {src}"), tgt, Some(stage("repeated_source"))));
        }
        items.shuffle(&mut g.rng);

        // Duplicates go after their originals; originals are distinct.
        let mut order: Vec<usize> = (0..clean.len()).collect();
        order.shuffle(&mut g.rng);
        let mut originals = order.into_iter();
        let position_of = |items: &[(String, String, Option<&'static str>)], src: &str, tgt: &str| {
            items.iter().position(|it| it.0 == src && it.1 == tgt).expect("original present")
        };
        let mut dups = 0;
        while dups < count("exact_dup") {
            let s = &clean[originals.next().unwrap()];
            if s.emoji {
                continue;
            }
            let (src, tgt) = g.pair(s);
            let at = position_of(&items, &src, &tgt);
            let insert = g.rng.gen_range(at + 1..=items.len());
            items.insert(insert, (src, tgt, Some(stage("exact_dup"))));
            dups += 1;
        }
        let mut dups = 0;
        while dups < count("near_dup") {
            let s = &clean[originals.next().unwrap()];
            let Some((at_word, n)) = s.number else { continue };
            if s.emoji {
                continue;
            }
            let (src, tgt) = g.pair(s);
            let at = position_of(&items, &src, &tgt);
            let variant = Sentence { number: Some((at_word, n % 9_999 + 1)), ..s.clone() };
            let (vs, vt) = g.pair(&variant);
            let insert = g.rng.gen_range(at + 1..=items.len());
            items.insert(insert, (vs, vt, Some(stage("near_dup"))));
            dups += 1;
        }

        let mut pairs = Vec::with_capacity(items.len());
        let mut expected = Vec::with_capacity(items.len());
        for (id, (src, tgt, exp)) in items.into_iter().enumerate() {
            pairs.push(SentencePair::new(src, tgt, "planted", id as u64));
            expected.push(exp);
        }
        PlantedCorpus { pairs, expected, reference: ReferenceSet::build(&on_file, KeyFn::Exact) }
    }

    pub fn bad_count(&self) -> usize {
        self.expected.iter().filter(|e| e.is_some()).count()
    }

    /// Writes the reference set and returns the shipped config reading it.
    pub fn config(&self, dir: &Path) -> PipelineConfig {
        self.config_with(dir, &[])
    }

    pub fn config_with(&self, dir: &Path, overrides: &[(&str, &str)]) -> PipelineConfig {
        let path = dir.join("on_file.refs");
        self.reference.save(&path).expect("reference set writes");
        default_config(&[path], overrides)
    }
}
