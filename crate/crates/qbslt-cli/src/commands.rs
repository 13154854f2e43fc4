//! Command implementations. Every command resolves one run configuration,
//! writes its outputs into a dedicated directory together with
//! `resolved.cfg` (the full canonical config) and `manifest.txt` (command,
//! config digest, seed, input files), and prints one summary line. Nothing
//! here records timestamps or absolute paths, so a rerun with the same
//! config and inputs reproduces every output byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use qbslt::dataset::{generate_files, load_corpus, load_vocab, Corpus};
use qbslt::metrics::{score_corpus, ScoreReport};
use qbslt::params::ParameterStore;
use qbslt::rng::derive_rng;
use qbslt::ssaw::GateMode;
use qbslt::stage1::{train_stage1, Stage1LogLine};
use qbslt::stage2::{
    corpus_gate_means, reference_tokens, train_stage2, AblationArm, DevPoint, Stage2LogLine,
    Stage2Model,
};

use crate::error::{CliError, Result};
use crate::heatmap;
use crate::runcfg::RunConfig;

/// Environment override for the run-directory root, between the config
/// file and `--set` in precedence.
pub const RUN_DIR_ENV: &str = "QBSLT_RUN_DIR";

/// Resolves the effective config: file if given, defaults otherwise, then
/// the run-dir env var, then `--set key=value` overrides in order (later
/// wins).
pub fn load_run_config(path: Option<&Path>, sets: &[String]) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => {
            if !p.is_file() {
                return Err(CliError::Data(format!("config file {}", p.display())));
            }
            let text = fs::read_to_string(p)?;
            RunConfig::parse(&text, &p.display().to_string())?
        }
        None => RunConfig::default(),
    };
    if let Ok(root) = std::env::var(RUN_DIR_ENV) {
        if !root.is_empty() {
            cfg.run_dir = PathBuf::from(root);
        }
    }
    for item in sets {
        let (key, value) = item.split_once('=').ok_or_else(|| {
            CliError::Config(format!("--set expects key=value, got {item:?}"))
        })?;
        cfg.set(key.trim(), value.trim(), "--set")?;
    }
    Ok(cfg)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn median(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty());
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("non-finite median input"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn emit_run_files(
    dir: &Path,
    command: &str,
    cfg: &RunConfig,
    lineage: &[(&str, String)],
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let resolved = cfg.to_text();
    fs::write(dir.join("resolved.cfg"), &resolved)?;
    let mut manifest = format!(
        "command = {command}\nconfig_sha256 = {}\nseed = {}\n",
        sha256_hex(resolved.as_bytes()),
        cfg.seed
    );
    for (key, value) in lineage {
        manifest.push_str(&format!("{key} = {value}\n"));
    }
    fs::write(dir.join("manifest.txt"), manifest)?;
    Ok(())
}

fn require_file(path: &Path, hint: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Data(format!("{}{hint}", path.display())))
    }
}

fn corpus_path(cfg: &RunConfig, split: &str) -> PathBuf {
    cfg.data_dir.join(format!("{split}.corpus"))
}

fn load_split(cfg: &RunConfig, split: &str) -> Result<Corpus> {
    let path = corpus_path(cfg, split);
    require_file(&path, " (run gen-data first)")?;
    Ok(load_corpus(&path)?)
}

fn load_surfaces(cfg: &RunConfig, vocab_size: usize) -> Result<Vec<String>> {
    let path = cfg.data_dir.join("vocab.tsv");
    require_file(&path, " (run gen-data first)")?;
    let surfaces = load_vocab(&path)?;
    if surfaces.len() != vocab_size {
        return Err(CliError::Config(format!(
            "{} lists {} tokens but the corpus declares {vocab_size}",
            path.display(),
            surfaces.len()
        )));
    }
    Ok(surfaces)
}

fn stage1_ckpt_path(cfg: &RunConfig) -> PathBuf {
    if cfg.stage1_checkpoint.is_empty() {
        cfg.run_dir.join("pretrain").join("stage1.ckpt")
    } else {
        PathBuf::from(&cfg.stage1_checkpoint)
    }
}

fn stage2_ckpt_path(cfg: &RunConfig) -> PathBuf {
    if cfg.checkpoint.is_empty() {
        cfg.run_dir
            .join(format!("train-{}", cfg.fusion.name()))
            .join("stage2.ckpt")
    } else {
        PathBuf::from(&cfg.checkpoint)
    }
}

fn stage1_log_text(log: &[Stage1LogLine]) -> String {
    let mut out = String::from("step\tl_sim\tl_r\n");
    for line in log {
        out.push_str(&format!("{}\t{}\t{}\n", line.step, line.l_sim, line.l_r));
    }
    out
}

fn stage2_log_text(log: &[Stage2LogLine]) -> String {
    let mut out = String::from("step\tl_d\tl_s\tl_total\n");
    for line in log {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            line.step, line.l_d, line.l_s, line.l_total
        ));
    }
    out
}

fn dev_history_text(points: &[DevPoint]) -> String {
    let mut out = String::from("step\tbleu4\n");
    for p in points {
        out.push_str(&format!("{}\t{}\n", p.step, p.bleu4));
    }
    out
}

fn scores_text(report: &ScoreReport) -> String {
    format!(
        "sentences = {}\nbleu1 = {}\nbleu2 = {}\nbleu3 = {}\nbleu4 = {}\nrouge_l = {}\n",
        report.sentences,
        report.bleu[0],
        report.bleu[1],
        report.bleu[2],
        report.bleu[3],
        report.rouge_l
    )
}

/// Rebuilds a stage 2 model with the configured architecture and loads the
/// checkpoint values into it. The checkpoint must describe exactly the
/// parameters the configured model has.
fn rebuild_stage2(cfg: &RunConfig, corpus: &Corpus, path: &Path) -> Result<Stage2Model> {
    let loaded = ParameterStore::load(path)?;
    let mut store = ParameterStore::new();
    let mut rng = derive_rng(cfg.seed, "cli/rebuild");
    let model = Stage2Model::new(
        &mut store,
        &cfg.stage2_config(cfg.seed),
        corpus.vocab_size,
        corpus.frame_dim,
        cfg.fusion,
        &mut rng,
    )?;
    store.restore(&loaded.snapshot()).map_err(|e| {
        CliError::Data(format!(
            "checkpoint {} does not match the configured model: {e}",
            path.display()
        ))
    })?;
    Ok(model)
}

pub fn gen_data(cfg: &RunConfig) -> Result<PathBuf> {
    let gen = cfg.generator_config(cfg.seed);
    generate_files(&gen, &cfg.data_dir)?;
    emit_run_files(&cfg.data_dir, "gen-data", cfg, &[])?;
    println!(
        "gen-data: {} train / {} dev / {} test samples -> {}",
        cfg.train_count,
        cfg.dev_count,
        cfg.test_count,
        cfg.data_dir.display()
    );
    Ok(cfg.data_dir.clone())
}

pub fn pretrain(cfg: &RunConfig) -> Result<PathBuf> {
    let train_path = corpus_path(cfg, "train");
    let train = load_split(cfg, "train")?;
    let outcome = train_stage1(&train, &cfg.stage1_config(cfg.seed))?;
    let dir = cfg.run_dir.join("pretrain");
    emit_run_files(
        &dir,
        "pretrain",
        cfg,
        &[("train_corpus", train_path.display().to_string())],
    )?;
    outcome.store.save(&dir.join("stage1.ckpt"))?;
    fs::write(dir.join("stage1_log.tsv"), stage1_log_text(&outcome.log))?;
    let last = outcome.log.last().expect("stage 1 logs every step");
    println!(
        "pretrain: {} steps, final l_sim {:.4} l_r {:.4} -> {}",
        cfg.stage1_steps,
        last.l_sim,
        last.l_r,
        dir.display()
    );
    Ok(dir)
}

pub fn train(cfg: &RunConfig) -> Result<PathBuf> {
    let train_path = corpus_path(cfg, "train");
    let dev_path = corpus_path(cfg, "dev");
    let train = load_split(cfg, "train")?;
    let dev = load_split(cfg, "dev")?;
    let (stage1, stage1_note) = if cfg.cold_start {
        (None, "cold start".to_string())
    } else {
        let path = stage1_ckpt_path(cfg);
        require_file(&path, " (run pretrain first or set cold_start = true)")?;
        (Some(ParameterStore::load(&path)?), path.display().to_string())
    };
    let outcome = train_stage2(
        &train,
        &dev,
        stage1.as_ref(),
        cfg.fusion,
        &cfg.stage2_config(cfg.seed),
    )?;
    let dir = cfg.run_dir.join(format!("train-{}", cfg.fusion.name()));
    emit_run_files(
        &dir,
        "train",
        cfg,
        &[
            ("train_corpus", train_path.display().to_string()),
            ("dev_corpus", dev_path.display().to_string()),
            ("stage1", stage1_note),
        ],
    )?;
    outcome.store.save(&dir.join("stage2.ckpt"))?;
    fs::write(dir.join("stage2_log.tsv"), stage2_log_text(&outcome.log))?;
    fs::write(
        dir.join("dev_history.tsv"),
        dev_history_text(&outcome.dev_history),
    )?;
    println!(
        "train: {} {} steps, best dev bleu4 {:.4} at step {} -> {}",
        cfg.fusion,
        cfg.stage2_steps,
        outcome.best_bleu4,
        outcome.best_step,
        dir.display()
    );
    Ok(dir)
}

/// Scores hypotheses against references. With `hyps_file` and `refs_file`
/// set, scores those files directly; otherwise generates translations for
/// the configured split with the trained checkpoint and writes them out.
pub fn evaluate(cfg: &RunConfig) -> Result<PathBuf> {
    let file_mode = !cfg.hyps_file.is_empty() || !cfg.refs_file.is_empty();
    if file_mode && (cfg.hyps_file.is_empty() || cfg.refs_file.is_empty()) {
        return Err(CliError::Config(
            "hyps_file and refs_file must be set together".into(),
        ));
    }
    if file_mode {
        return evaluate_files(cfg);
    }

    let split = cfg.eval_split.clone();
    let corpus_file = corpus_path(cfg, &split);
    let corpus = load_split(cfg, &split)?;
    let surfaces = load_surfaces(cfg, corpus.vocab_size)?;
    let ckpt = stage2_ckpt_path(cfg);
    require_file(&ckpt, " (run train first or set checkpoint)")?;
    let model = rebuild_stage2(cfg, &corpus, &ckpt)?;

    let mut hyps = Vec::with_capacity(corpus.samples.len());
    let mut refs = Vec::with_capacity(corpus.samples.len());
    for sample in &corpus.samples {
        hyps.push(model.generate(&sample.question, &sample.video, cfg.max_len, GateMode::Learned)?);
        refs.push(reference_tokens(&sample.translation));
    }
    let report = score_corpus(&hyps, &refs)?;

    let render = |ids: &[usize]| -> Vec<&str> { ids.iter().map(|&i| surfaces[i].as_str()).collect() };
    let mut hyps_text = String::new();
    let mut refs_text = String::new();
    for (sample, (hyp, rf)) in corpus.samples.iter().zip(hyps.iter().zip(refs.iter())) {
        hyps_text.push_str(&format!("{}\t{}\n", sample.id, render(hyp).join(" ")));
        refs_text.push_str(&format!("{}\t{}\n", sample.id, render(rf).join(" ")));
    }

    let dir = cfg.run_dir.join(format!("evaluate-{split}"));
    emit_run_files(
        &dir,
        "evaluate",
        cfg,
        &[
            ("corpus", corpus_file.display().to_string()),
            ("vocab", cfg.data_dir.join("vocab.tsv").display().to_string()),
            ("checkpoint", ckpt.display().to_string()),
        ],
    )?;
    fs::write(dir.join("scores.txt"), scores_text(&report))?;
    fs::write(dir.join("hyps.tsv"), hyps_text)?;
    fs::write(dir.join("refs.tsv"), refs_text)?;
    println!(
        "evaluate: {split} {} sentences, bleu4 {:.4} rouge_l {:.4} -> {}",
        report.sentences,
        report.bleu[3],
        report.rouge_l,
        dir.display()
    );
    Ok(dir)
}

fn read_token_file(path: &Path) -> Result<Vec<(String, Vec<String>)>> {
    require_file(path, "")?;
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (id, tokens) = line.split_once('\t').ok_or_else(|| {
            CliError::Config(format!(
                "{} line {}: expected <id>\\t<tokens>",
                path.display(),
                i + 1
            ))
        })?;
        let tokens = tokens.split_whitespace().map(str::to_string).collect();
        rows.push((id.to_string(), tokens));
    }
    Ok(rows)
}

fn evaluate_files(cfg: &RunConfig) -> Result<PathBuf> {
    let hyps_path = PathBuf::from(&cfg.hyps_file);
    let refs_path = PathBuf::from(&cfg.refs_file);
    let hyp_rows = read_token_file(&hyps_path)?;
    let ref_rows = read_token_file(&refs_path)?;
    if hyp_rows.len() != ref_rows.len() {
        return Err(CliError::Config(format!(
            "{} has {} rows, {} has {}",
            hyps_path.display(),
            hyp_rows.len(),
            refs_path.display(),
            ref_rows.len()
        )));
    }
    for ((hid, _), (rid, _)) in hyp_rows.iter().zip(ref_rows.iter()) {
        if hid != rid {
            return Err(CliError::Config(format!(
                "row id mismatch: {hid} in hyps vs {rid} in refs"
            )));
        }
    }
    let hyps: Vec<Vec<String>> = hyp_rows.into_iter().map(|(_, t)| t).collect();
    let refs: Vec<Vec<String>> = ref_rows.into_iter().map(|(_, t)| t).collect();
    let report = score_corpus(&hyps, &refs)?;

    let dir = cfg.run_dir.join("evaluate-files");
    emit_run_files(
        &dir,
        "evaluate",
        cfg,
        &[
            ("hyps_file", hyps_path.display().to_string()),
            ("refs_file", refs_path.display().to_string()),
        ],
    )?;
    fs::write(dir.join("scores.txt"), scores_text(&report))?;
    println!(
        "evaluate: files {} sentences, bleu4 {:.4} rouge_l {:.4} -> {}",
        report.sentences,
        report.bleu[3],
        report.rouge_l,
        dir.display()
    );
    Ok(dir)
}

pub fn ablate(cfg: &RunConfig) -> Result<PathBuf> {
    let train = load_split(cfg, "train")?;
    let dev = load_split(cfg, "dev")?;
    let test = load_split(cfg, "test")?;
    let dir = cfg.run_dir.join("ablate");
    emit_run_files(
        &dir,
        "ablate",
        cfg,
        &[
            ("train_corpus", corpus_path(cfg, "train").display().to_string()),
            ("dev_corpus", corpus_path(cfg, "dev").display().to_string()),
            ("test_corpus", corpus_path(cfg, "test").display().to_string()),
        ],
    )?;

    let mut rows: Vec<(AblationArm, u64, ScoreReport)> = Vec::new();
    let mut gate_rows: Vec<(u64, f64, f64)> = Vec::new();
    for &seed in &cfg.ablate_seeds {
        let stage1 = if cfg.cold_start {
            None
        } else {
            let outcome = train_stage1(&train, &cfg.stage1_config(seed))?;
            outcome.store.save(&dir.join(format!("stage1-s{seed}.ckpt")))?;
            Some(outcome.store)
        };
        for &arm in &cfg.ablate_arms {
            let outcome = train_stage2(&train, &dev, stage1.as_ref(), arm, &cfg.stage2_config(seed))?;
            let run_dir = dir.join(format!("{}-s{seed}", arm.name()));
            fs::create_dir_all(&run_dir)?;
            fs::write(run_dir.join("stage2_log.tsv"), stage2_log_text(&outcome.log))?;
            fs::write(
                run_dir.join("dev_history.tsv"),
                dev_history_text(&outcome.dev_history),
            )?;
            let mut hyps = Vec::with_capacity(test.samples.len());
            let mut refs = Vec::with_capacity(test.samples.len());
            for sample in &test.samples {
                hyps.push(outcome.model.generate(
                    &sample.question,
                    &sample.video,
                    cfg.max_len,
                    GateMode::Learned,
                )?);
                refs.push(reference_tokens(&sample.translation));
            }
            let report = score_corpus(&hyps, &refs)?;
            if arm == AblationArm::Ssaw {
                let (informative, distractor) = corpus_gate_means(&outcome.model, &test)?;
                gate_rows.push((seed, informative, distractor));
            }
            println!(
                "ablate: {} seed {} test bleu4 {:.4} rouge_l {:.4}",
                arm, seed, report.bleu[3], report.rouge_l
            );
            rows.push((arm, seed, report));
        }
    }

    let mut results = String::from("arm\tseed\tbleu1\tbleu2\tbleu3\tbleu4\trouge_l\n");
    for (arm, seed, r) in &rows {
        results.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            arm.name(),
            seed,
            r.bleu[0],
            r.bleu[1],
            r.bleu[2],
            r.bleu[3],
            r.rouge_l
        ));
    }
    fs::write(dir.join("results.tsv"), results)?;

    if !gate_rows.is_empty() {
        let mut gates = String::from("seed\tinformative\tdistractor\n");
        for (seed, informative, distractor) in &gate_rows {
            gates.push_str(&format!("{seed}\t{informative}\t{distractor}\n"));
        }
        fs::write(dir.join("gates.tsv"), gates)?;
    }

    let seeds_label = cfg
        .ablate_seeds
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()
        .join(",");
    let mut summary = format!("test BLEU-4 median over seeds {seeds_label} (0-100 scale)\n\n");
    let mut medians: Vec<(AblationArm, f64)> = Vec::new();
    for &arm in &cfg.ablate_arms {
        let scores: Vec<f64> = rows
            .iter()
            .filter(|(a, _, _)| *a == arm)
            .map(|(_, _, r)| r.bleu[3] * 100.0)
            .collect();
        let m = median(&scores);
        medians.push((arm, m));
        summary.push_str(&format!("  {:<13} {m:.2}\n", arm.name()));
    }
    if medians.len() > 1 {
        summary.push_str("\npairwise median deltas (BLEU-4 points)\n\n");
        for i in 0..medians.len() {
            for j in i + 1..medians.len() {
                summary.push_str(&format!(
                    "  {} - {} = {:+.2}\n",
                    medians[i].0.name(),
                    medians[j].0.name(),
                    medians[i].1 - medians[j].1
                ));
            }
        }
    }
    if !gate_rows.is_empty() {
        summary.push_str("\nssaw gate channel means on test (informative vs distractor)\n\n");
        let gaps: Vec<f64> = gate_rows.iter().map(|(_, i, d)| i - d).collect();
        for (seed, informative, distractor) in &gate_rows {
            summary.push_str(&format!(
                "  seed {seed}: {informative:.4} vs {distractor:.4} (gap {:+.4})\n",
                informative - distractor
            ));
        }
        summary.push_str(&format!("  median gap = {:+.4}\n", median(&gaps)));
    }
    fs::write(dir.join("summary.txt"), summary)?;
    println!("ablate: results -> {}", dir.display());
    Ok(dir)
}

pub fn export_heatmap(cfg: &RunConfig, gate_ones: bool) -> Result<PathBuf> {
    let split = cfg.eval_split.clone();
    let corpus_file = corpus_path(cfg, &split);
    let corpus = load_split(cfg, &split)?;
    let surfaces = load_surfaces(cfg, corpus.vocab_size)?;
    let sample = if cfg.heatmap_sample.is_empty() {
        corpus
            .samples
            .first()
            .ok_or_else(|| CliError::Data(format!("{split} split is empty")))?
    } else {
        corpus.find(&cfg.heatmap_sample).ok_or_else(|| {
            CliError::Data(format!("sample {} in {split} split", cfg.heatmap_sample))
        })?
    };
    let ckpt = stage2_ckpt_path(cfg);
    require_file(&ckpt, " (run train first or set checkpoint)")?;
    let model = rebuild_stage2(cfg, &corpus, &ckpt)?;

    let tape = qbslt::Tape::no_grad();
    let gate_mode = if gate_ones { GateMode::AllOnes } else { GateMode::Learned };
    let fusion = model.fuse_sample(&tape, &sample.question, &sample.video, qbslt::Mode::Eval, gate_mode)?;
    let shape = fusion.gate.shape();
    let (rows, cols) = (shape[0], shape[1]);
    let labels: Vec<String> = sample.question.ids()[..fusion.boundary]
        .iter()
        .map(|&id| surfaces[id].clone())
        .collect();
    let csv = heatmap::gate_csv(&fusion.gate.data_vec(), rows, cols, fusion.boundary, &labels)?;
    let pgm = heatmap::gate_pgm(&fusion.gate.data_vec(), rows, cols, fusion.boundary)?;

    let suffix = if gate_ones { "-ones" } else { "" };
    let dir = cfg.run_dir.join(format!("heatmap-{}{suffix}", sample.id));
    emit_run_files(
        &dir,
        "export-heatmap",
        cfg,
        &[
            ("corpus", corpus_file.display().to_string()),
            ("vocab", cfg.data_dir.join("vocab.tsv").display().to_string()),
            ("checkpoint", ckpt.display().to_string()),
            ("sample", sample.id.clone()),
            ("gate", if gate_ones { "all-ones".into() } else { "learned".into() }),
        ],
    )?;
    fs::write(dir.join("gate.csv"), csv)?;
    fs::write(dir.join("gate.pgm"), pgm)?;
    println!(
        "export-heatmap: {} ({} question rows, {} video rows) -> {}",
        sample.id,
        fusion.boundary,
        rows - fusion.boundary,
        dir.display()
    );
    Ok(dir)
}
