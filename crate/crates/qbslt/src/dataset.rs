//! Synthetic gesture corpus.
//!
//! Each sample couples three views of one sentence drawn from a small
//! template grammar: a gesture clip (one noisy prototype per content token,
//! repeated for a few frames), a question (per slot, either the content
//! token's matching template token or an uninformative distractor), and the
//! translation (the content tokens plus EOS). Sentence slots cycle through
//! four role groups that partition the content vocabulary, so adjacent
//! gestures always use different prototypes and a run-collapse decode of
//! the clip is unambiguous.
//!
//! The id space is: specials, then content tokens, then one template token
//! per content token, then distractors.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::derive_rng;
use crate::seq::{TokenSequence, VideoFeatureSequence, EOS, NUM_SPECIAL_TOKENS};

const FORMAT_VERSION: u32 = 1;
const ROLE_GROUPS: usize = 4;
const MIN_SENTENCE_LEN: usize = 3;
const MAX_SENTENCE_LEN: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub content_vocab: usize,
    pub distractor_vocab: usize,
    pub frame_dim: usize,
    pub min_frames_per_gesture: usize,
    pub max_frames_per_gesture: usize,
    /// Standard deviation of the per-element frame noise.
    pub frame_noise: f64,
    /// Probability that a question slot carries the informative template
    /// token instead of a distractor.
    pub informative_rate: f64,
    pub train_count: usize,
    pub dev_count: usize,
    pub test_count: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            content_vocab: 50,
            distractor_vocab: 50,
            frame_dim: 16,
            min_frames_per_gesture: 2,
            max_frames_per_gesture: 5,
            frame_noise: 0.4,
            informative_rate: 0.8,
            train_count: 500,
            dev_count: 50,
            test_count: 100,
            seed: 7,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.content_vocab < ROLE_GROUPS {
            return Err(Error::Config(format!(
                "content_vocab must be at least {ROLE_GROUPS} to fill every sentence role"
            )));
        }
        if self.distractor_vocab == 0 {
            return Err(Error::Config("distractor_vocab must be positive".into()));
        }
        if self.frame_dim == 0 {
            return Err(Error::Config("frame_dim must be positive".into()));
        }
        if self.min_frames_per_gesture < 2 || self.max_frames_per_gesture < self.min_frames_per_gesture
        {
            return Err(Error::Config(
                "frames per gesture must satisfy 2 <= min <= max".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.informative_rate) {
            return Err(Error::Config(format!(
                "informative_rate {} outside [0, 1]",
                self.informative_rate
            )));
        }
        if self.frame_noise < 0.0 {
            return Err(Error::Config("frame_noise must be non-negative".into()));
        }
        if self.train_count == 0 {
            return Err(Error::Config("train_count must be positive".into()));
        }
        Ok(())
    }

    pub fn content_id(&self, i: usize) -> usize {
        NUM_SPECIAL_TOKENS + i
    }

    pub fn template_id(&self, i: usize) -> usize {
        NUM_SPECIAL_TOKENS + self.content_vocab + i
    }

    pub fn distractor_id(&self, j: usize) -> usize {
        NUM_SPECIAL_TOKENS + 2 * self.content_vocab + j
    }

    pub fn vocab_size(&self) -> usize {
        NUM_SPECIAL_TOKENS + 2 * self.content_vocab + self.distractor_vocab
    }

    pub fn is_template_id(&self, id: usize) -> bool {
        (self.template_id(0)..self.template_id(self.content_vocab)).contains(&id)
    }

    pub fn is_distractor_id(&self, id: usize) -> bool {
        (self.distractor_id(0)..self.vocab_size()).contains(&id)
    }

    /// Gesture prototype for content token index `i`, quantized to f32 the
    /// same way frames are stored on disk.
    pub fn content_prototype(&self, i: usize) -> Vec<f32> {
        let mut rng = derive_rng(self.seed, &format!("proto/{i}"));
        (0..self.frame_dim)
            .map(|_| {
                let v: f64 = StandardNormal.sample(&mut rng);
                v as f32
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub video: VideoFeatureSequence,
    pub question: TokenSequence,
    pub translation: TokenSequence,
    /// Per question slot: true when the slot holds the template token.
    pub informative: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub samples: Vec<Sample>,
    pub vocab_size: usize,
    pub frame_dim: usize,
}

impl Corpus {
    pub fn find(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }
}

pub struct GeneratedSplits {
    pub train: Corpus,
    pub dev: Corpus,
    pub test: Corpus,
}

fn generate_sample(cfg: &GeneratorConfig, split: &str, index: usize) -> Sample {
    let mut rng = derive_rng(cfg.seed, &format!("sample/{split}/{index:05}"));
    let len = rng.random_range(MIN_SENTENCE_LEN..=MAX_SENTENCE_LEN);

    // Slot k draws its content token from role group k mod 4; the groups
    // partition the content ids, so adjacent slots can never repeat.
    let mut contents = Vec::with_capacity(len);
    for slot in 0..len {
        let role = slot % ROLE_GROUPS;
        let group_size = (cfg.content_vocab - role).div_ceil(ROLE_GROUPS);
        let pick = rng.random_range(0..group_size);
        contents.push(role + ROLE_GROUPS * pick);
    }

    let mut frames = Vec::new();
    for &c in &contents {
        let proto = cfg.content_prototype(c);
        let reps = rng.random_range(cfg.min_frames_per_gesture..=cfg.max_frames_per_gesture);
        for _ in 0..reps {
            for &p in &proto {
                let noise: f64 = StandardNormal.sample(&mut rng);
                // Quantize to f32 so in-memory data matches the disk format.
                let v = (p as f64 + cfg.frame_noise * noise) as f32;
                frames.push(v as f64);
            }
        }
    }

    let mut question = Vec::with_capacity(len);
    let mut informative = Vec::with_capacity(len);
    for &c in &contents {
        let is_informative = rng.random::<f64>() < cfg.informative_rate;
        if is_informative {
            question.push(cfg.template_id(c));
        } else {
            question.push(cfg.distractor_id(rng.random_range(0..cfg.distractor_vocab)));
        }
        informative.push(is_informative);
    }

    let mut translation: Vec<usize> = contents.iter().map(|&c| cfg.content_id(c)).collect();
    translation.push(EOS);

    Sample {
        id: format!("{split}-{index:05}"),
        video: VideoFeatureSequence::new(cfg.frame_dim, frames).expect("nonempty by construction"),
        question: TokenSequence::from_ids(question),
        translation: TokenSequence::from_ids(translation),
        informative,
    }
}

pub fn generate_split(cfg: &GeneratorConfig, split: &str, count: usize) -> Result<Corpus> {
    cfg.validate()?;
    let samples = (0..count)
        .map(|i| generate_sample(cfg, split, i))
        .collect();
    Ok(Corpus {
        samples,
        vocab_size: cfg.vocab_size(),
        frame_dim: cfg.frame_dim,
    })
}

pub fn generate_corpus(cfg: &GeneratorConfig) -> Result<GeneratedSplits> {
    Ok(GeneratedSplits {
        train: generate_split(cfg, "train", cfg.train_count)?,
        dev: generate_split(cfg, "dev", cfg.dev_count)?,
        test: generate_split(cfg, "test", cfg.test_count)?,
    })
}

// ── disk format ─────────────────────────────────────────────────────
// Header line:  #qbslt-corpus v1 vocab=<V> frame_dim=<D>
// Record line:  id TAB n_frames TAB frames-hex TAB question-ids
//               TAB translation-ids TAB informative-bits
// Frames are f32 little-endian, 8 hex chars per value, all frames
// concatenated row-major. Id lists are space-separated decimal.

fn encode_frames(data: &[f64]) -> String {
    let mut s = String::with_capacity(data.len() * 8);
    for &v in data {
        for b in (v as f32).to_le_bytes() {
            s.push_str(&format!("{b:02x}"));
        }
    }
    s
}

fn decode_frames(hex: &str) -> std::result::Result<Vec<f64>, String> {
    if hex.len() % 8 != 0 {
        return Err(format!("hex length {} is not a multiple of 8", hex.len()));
    }
    if !hex.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err("non-hex character in frame data".into());
    }
    let mut out = Vec::with_capacity(hex.len() / 8);
    let bytes = hex.as_bytes();
    for chunk in bytes.chunks(8) {
        let mut raw = [0u8; 4];
        for (i, pair) in chunk.chunks(2).enumerate() {
            let hi = (pair[0] as char).to_digit(16).unwrap() as u8;
            let lo = (pair[1] as char).to_digit(16).unwrap() as u8;
            raw[i] = (hi << 4) | lo;
        }
        out.push(f32::from_le_bytes(raw) as f64);
    }
    Ok(out)
}

pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "#qbslt-corpus v{FORMAT_VERSION} vocab={} frame_dim={}",
        corpus.vocab_size, corpus.frame_dim
    )?;
    for s in &corpus.samples {
        let question: Vec<String> = s.question.ids().iter().map(|i| i.to_string()).collect();
        let translation: Vec<String> = s.translation.ids().iter().map(|i| i.to_string()).collect();
        let bits: String = s
            .informative
            .iter()
            .map(|&b| if b { '1' } else { '0' })
            .collect();
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}",
            s.id,
            s.video.count(),
            encode_frames(s.video.frames()),
            question.join(" "),
            translation.join(" "),
            bits
        )?;
    }
    w.flush()?;
    Ok(())
}

fn corpus_err(path: &Path, record: usize, field: &'static str, msg: impl Into<String>) -> Error {
    Error::Corpus {
        path: path.display().to_string(),
        record,
        field,
        msg: msg.into(),
    }
}

fn parse_ids(
    text: &str,
    vocab: usize,
    path: &Path,
    record: usize,
    field: &'static str,
) -> Result<Vec<usize>> {
    let mut ids = Vec::new();
    for part in text.split(' ') {
        let id: usize = part
            .parse()
            .map_err(|_| corpus_err(path, record, field, format!("bad token id {part:?}")))?;
        if id >= vocab {
            return Err(corpus_err(
                path,
                record,
                field,
                format!("token id {id} outside vocabulary of size {vocab}"),
            ));
        }
        ids.push(id);
    }
    Ok(ids)
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let file = File::open(path)
        .map_err(|e| Error::NotFound(format!("corpus {}: {e}", path.display())))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| corpus_err(path, 0, "header", "empty file"))??;
    let rest = header
        .strip_prefix("#qbslt-corpus v")
        .ok_or_else(|| corpus_err(path, 0, "header", "missing #qbslt-corpus header"))?;
    let mut parts = rest.split(' ');
    let version: u32 = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| corpus_err(path, 0, "header", "unreadable format version"))?;
    if version != FORMAT_VERSION {
        return Err(corpus_err(
            path,
            0,
            "header",
            format!("unsupported format version {version} (supported: {FORMAT_VERSION})"),
        ));
    }
    let mut vocab_size = None;
    let mut frame_dim = None;
    for kv in parts {
        match kv.split_once('=') {
            Some(("vocab", v)) => vocab_size = v.parse().ok(),
            Some(("frame_dim", v)) => frame_dim = v.parse().ok(),
            _ => return Err(corpus_err(path, 0, "header", format!("unknown field {kv:?}"))),
        }
    }
    let vocab_size: usize =
        vocab_size.ok_or_else(|| corpus_err(path, 0, "header", "missing vocab="))?;
    let frame_dim: usize =
        frame_dim.ok_or_else(|| corpus_err(path, 0, "header", "missing frame_dim="))?;
    if frame_dim == 0 {
        return Err(corpus_err(path, 0, "header", "frame_dim must be positive"));
    }

    let mut samples = Vec::new();
    let mut seen_ids = HashSet::new();
    for (i, line) in lines.enumerate() {
        let record = i + 1;
        let line = line?;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(corpus_err(
                path,
                record,
                "record",
                format!("expected 6 tab-separated fields, got {}", fields.len()),
            ));
        }
        let id = fields[0];
        if id.is_empty() {
            return Err(corpus_err(path, record, "id", "empty sample id"));
        }
        if !seen_ids.insert(id.to_string()) {
            return Err(corpus_err(path, record, "id", format!("duplicate sample id {id:?}")));
        }
        let n_frames: usize = fields[1]
            .parse()
            .map_err(|_| corpus_err(path, record, "n_frames", "not a number"))?;
        if n_frames == 0 {
            return Err(corpus_err(path, record, "n_frames", "clip has no frames"));
        }
        let frames = decode_frames(fields[2])
            .map_err(|msg| corpus_err(path, record, "frames", msg))?;
        if frames.len() != n_frames * frame_dim {
            return Err(corpus_err(
                path,
                record,
                "frames",
                format!(
                    "{} values for declared {n_frames}x{frame_dim}",
                    frames.len()
                ),
            ));
        }
        let question = parse_ids(fields[3], vocab_size, path, record, "question")?;
        if question.is_empty() {
            return Err(corpus_err(path, record, "question", "empty question"));
        }
        let translation = parse_ids(fields[4], vocab_size, path, record, "translation")?;
        let translation = TokenSequence::from_ids(translation);
        translation
            .check_translation()
            .map_err(|e| corpus_err(path, record, "translation", e.to_string()))?;
        let bits = fields[5];
        if bits.len() != question.len() || !bits.bytes().all(|b| b == b'0' || b == b'1') {
            return Err(corpus_err(
                path,
                record,
                "informative",
                format!("expected {} bits of 0/1, got {bits:?}", question.len()),
            ));
        }
        samples.push(Sample {
            id: id.to_string(),
            video: VideoFeatureSequence::new(frame_dim, frames)
                .map_err(|e| corpus_err(path, record, "frames", e.to_string()))?,
            question: TokenSequence::from_ids(question),
            translation,
            informative: bits.bytes().map(|b| b == b'1').collect(),
        });
    }
    Ok(Corpus {
        samples,
        vocab_size,
        frame_dim,
    })
}

/// Human-readable surface for every token id, one per line: "id TAB text".
pub fn write_vocab(cfg: &GeneratorConfig, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (id, name) in vocab_surfaces(cfg) {
        writeln!(w, "{id}\t{name}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn vocab_surfaces(cfg: &GeneratorConfig) -> Vec<(usize, String)> {
    let mut out = Vec::with_capacity(cfg.vocab_size());
    for (id, name) in ["<bos>", "<eos>", "<pad>", "<mask>", "<cls>"].iter().enumerate() {
        out.push((id, name.to_string()));
    }
    for i in 0..cfg.content_vocab {
        out.push((cfg.content_id(i), format!("c{i:03}")));
    }
    for i in 0..cfg.content_vocab {
        out.push((cfg.template_id(i), format!("q{i:03}")));
    }
    for j in 0..cfg.distractor_vocab {
        out.push((cfg.distractor_id(j), format!("x{j:03}")));
    }
    out
}

pub fn load_vocab(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path)
        .map_err(|e| Error::NotFound(format!("vocab {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let (id, name) = line
            .split_once('\t')
            .ok_or_else(|| corpus_err(path, i + 1, "vocab", "expected id TAB text"))?;
        let id: usize = id
            .parse()
            .map_err(|_| corpus_err(path, i + 1, "vocab", "bad id"))?;
        if id != out.len() {
            return Err(corpus_err(path, i + 1, "vocab", "ids must be dense and ordered"));
        }
        out.push(name.to_string());
    }
    Ok(out)
}

/// Writes train/dev/test corpora plus the vocabulary sidecar into `dir`.
pub fn generate_files(cfg: &GeneratorConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let splits = generate_corpus(cfg)?;
    write_corpus(&splits.train, &dir.join("train.corpus"))?;
    write_corpus(&splits.dev, &dir.join("dev.corpus"))?;
    write_corpus(&splits.test, &dir.join("test.corpus"))?;
    write_vocab(cfg, &dir.join("vocab.tsv"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_cfg() -> GeneratorConfig {
        GeneratorConfig {
            content_vocab: 10,
            distractor_vocab: 6,
            frame_dim: 5,
            train_count: 12,
            dev_count: 4,
            test_count: 4,
            seed: 11,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_cfg();
        let a = generate_split(&cfg, "train", 6).unwrap();
        let b = generate_split(&cfg, "train", 6).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn id_space_partition_holds() {
        let cfg = small_cfg();
        let corpus = generate_split(&cfg, "train", cfg.train_count).unwrap();
        for s in &corpus.samples {
            for &q in s.question.ids() {
                assert!(cfg.is_template_id(q) || cfg.is_distractor_id(q), "id {q}");
            }
            let t = s.translation.ids();
            assert_eq!(*t.last().unwrap(), EOS);
            for &c in &t[..t.len() - 1] {
                assert!(
                    (cfg.content_id(0)..cfg.content_id(cfg.content_vocab)).contains(&c),
                    "id {c}"
                );
            }
            s.question.check_vocab(cfg.vocab_size()).unwrap();
            s.translation.check_vocab(cfg.vocab_size()).unwrap();
        }
    }

    #[test]
    fn questions_couple_to_translations() {
        let cfg = small_cfg();
        let corpus = generate_split(&cfg, "train", cfg.train_count).unwrap();
        for s in &corpus.samples {
            let content = &s.translation.ids()[..s.translation.len() - 1];
            assert_eq!(s.question.len(), content.len());
            assert_eq!(s.informative.len(), content.len());
            for ((&q, &c), &inf) in s.question.ids().iter().zip(content).zip(&s.informative) {
                if inf {
                    // Template token index mirrors the content token index.
                    assert_eq!(q, c + cfg.content_vocab);
                } else {
                    assert!(cfg.is_distractor_id(q));
                }
            }
        }
    }

    #[test]
    fn adjacent_content_tokens_always_differ() {
        let cfg = small_cfg();
        for split in ["train", "dev", "test"] {
            let corpus = generate_split(&cfg, split, 20).unwrap();
            for s in &corpus.samples {
                let t = s.translation.ids();
                for w in t[..t.len() - 1].windows(2) {
                    assert_ne!(w[0], w[1], "sample {}", s.id);
                }
            }
        }
    }

    #[test]
    fn informative_rate_extremes() {
        let all = GeneratorConfig {
            informative_rate: 1.0,
            ..small_cfg()
        };
        let corpus = generate_split(&all, "train", 10).unwrap();
        assert!(corpus.samples.iter().all(|s| s.informative.iter().all(|&b| b)));

        let none = GeneratorConfig {
            informative_rate: 0.0,
            ..small_cfg()
        };
        let corpus = generate_split(&none, "train", 10).unwrap();
        assert!(corpus.samples.iter().all(|s| s.informative.iter().all(|&b| !b)));
    }

    #[test]
    fn frame_counts_track_gesture_bounds() {
        let cfg = small_cfg();
        let corpus = generate_split(&cfg, "train", 20).unwrap();
        for s in &corpus.samples {
            let gestures = s.translation.len() - 1;
            let n = s.video.count();
            assert!(n >= gestures * cfg.min_frames_per_gesture);
            assert!(n <= gestures * cfg.max_frames_per_gesture);
        }
    }

    #[test]
    fn nearest_prototype_run_collapse_recovers_translation_at_low_noise() {
        let cfg = GeneratorConfig {
            frame_noise: 0.01,
            ..small_cfg()
        };
        let protos: Vec<Vec<f32>> = (0..cfg.content_vocab)
            .map(|i| cfg.content_prototype(i))
            .collect();
        let corpus = generate_split(&cfg, "test", 10).unwrap();
        for s in &corpus.samples {
            let frames = s.video.frames();
            let mut decoded = Vec::new();
            for frame in frames.chunks(cfg.frame_dim) {
                let nearest = protos
                    .iter()
                    .enumerate()
                    .min_by(|(_, a), (_, b)| {
                        let da: f64 = frame
                            .iter()
                            .zip(a.iter())
                            .map(|(x, p)| (x - *p as f64).powi(2))
                            .sum();
                        let db: f64 = frame
                            .iter()
                            .zip(b.iter())
                            .map(|(x, p)| (x - *p as f64).powi(2))
                            .sum();
                        da.partial_cmp(&db).unwrap()
                    })
                    .map(|(i, _)| i)
                    .unwrap();
                if decoded.last() != Some(&nearest) {
                    decoded.push(nearest);
                }
            }
            let decoded_ids: Vec<usize> = decoded.iter().map(|&i| cfg.content_id(i)).collect();
            let want = &s.translation.ids()[..s.translation.len() - 1];
            assert_eq!(decoded_ids, want, "sample {}", s.id);
        }
    }

    #[test]
    fn file_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg();
        let corpus = generate_split(&cfg, "train", cfg.train_count).unwrap();
        let path = dir.path().join("train.corpus");
        write_corpus(&corpus, &path).unwrap();
        let loaded = load_corpus(&path).unwrap();
        assert_eq!(loaded, corpus);
        // Re-writing loaded data reproduces the bytes.
        let path2 = dir.path().join("again.corpus");
        write_corpus(&loaded, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn splits_have_disjoint_ids_and_independent_content() {
        let cfg = small_cfg();
        let splits = generate_corpus(&cfg).unwrap();
        let mut ids = HashSet::new();
        for c in [&splits.train, &splits.dev, &splits.test] {
            for s in &c.samples {
                assert!(ids.insert(s.id.clone()), "duplicate id {}", s.id);
            }
        }
        assert_ne!(splits.train.samples[0].video, splits.dev.samples[0].video);
    }

    #[test]
    fn malformed_lines_name_record_and_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.corpus");

        std::fs::write(&path, "#qbslt-corpus v2 vocab=10 frame_dim=2\n").unwrap();
        let err = load_corpus(&path).unwrap_err().to_string();
        assert!(err.contains("version 2") && err.contains("supported: 1"), "{err}");

        std::fs::write(
            &path,
            "#qbslt-corpus v1 vocab=10 frame_dim=1\nx-0\t1\t00000000\t7 9\t6 1\t10\nbad\tline\n",
        )
        .unwrap();
        let err = load_corpus(&path).unwrap_err().to_string();
        assert!(err.contains("record 2"), "{err}");

        std::fs::write(
            &path,
            "#qbslt-corpus v1 vocab=10 frame_dim=1\nx-0\t1\t00000000\t7 99\t6 1\t10\n",
        )
        .unwrap();
        let err = load_corpus(&path).unwrap_err().to_string();
        assert!(err.contains("question") && err.contains("99"), "{err}");

        std::fs::write(
            &path,
            "#qbslt-corpus v1 vocab=10 frame_dim=1\nx-0\t2\t00000000\t7\t6 1\t1\n",
        )
        .unwrap();
        let err = load_corpus(&path).unwrap_err().to_string();
        assert!(err.contains("frames"), "{err}");
    }

    #[test]
    fn vocab_sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg();
        let path = dir.path().join("vocab.tsv");
        write_vocab(&cfg, &path).unwrap();
        let vocab = load_vocab(&path).unwrap();
        assert_eq!(vocab.len(), cfg.vocab_size());
        assert_eq!(vocab[0], "<bos>");
        assert_eq!(vocab[cfg.content_id(3)], "c003");
        assert_eq!(vocab[cfg.template_id(3)], "q003");
        assert_eq!(vocab[cfg.distractor_id(0)], "x000");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn generated_corpora_satisfy_invariants(seed in 0u64..500, rate in 0.0f64..=1.0) {
            let cfg = GeneratorConfig {
                seed,
                informative_rate: rate,
                train_count: 5,
                ..small_cfg()
            };
            let corpus = generate_split(&cfg, "train", 5).unwrap();
            for s in &corpus.samples {
                prop_assert!(s.translation.check_translation().is_ok());
                prop_assert!(s.question.check_vocab(cfg.vocab_size()).is_ok());
                prop_assert_eq!(s.question.len(), s.informative.len());
                prop_assert!(s.video.count() >= 4);
                let t = s.translation.ids();
                for w in t[..t.len() - 1].windows(2) {
                    prop_assert_ne!(w[0], w[1]);
                }
            }
        }
    }
}
