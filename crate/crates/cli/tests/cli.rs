use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use transtok::tensors::{self, Dtype, EmbeddingTable};

const SRC: [&str; 8] = ["the", "cat", "dog", "sees", "a", "big", "house", "quickly"];
const TGT: [&str; 8] = ["de", "kat", "hond", "ziet", "een", "groot", "huis", "snel"];

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_transtok"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "{:?} failed: {}",
        cmd,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    /// A small word-for-word parallel corpus, tokenizers trained on it and
    /// a random source embedding table.
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let mut state = 12345u64;
        let mut next = |n: usize| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as usize) % n
        };
        let mut text = String::new();
        for _ in 0..400 {
            let len = 2 + next(6);
            let idx: Vec<usize> = (0..len).map(|_| next(SRC.len())).collect();
            let s: Vec<&str> = idx.iter().map(|&i| SRC[i]).collect();
            let t: Vec<&str> = idx.iter().map(|&i| TGT[i]).collect();
            text.push_str(&format!("{} ||| {}\n", s.join(" "), t.join(" ")));
        }
        fs::write(root.join("corpus.txt"), text).unwrap();
        for (side, name) in [("source", "src"), ("target", "tgt")] {
            run_ok(bin().args(["train-bpe", "--corpus"]).arg(root.join("corpus.txt")).args([
                "--side",
                side,
                "--vocab-size",
                "200",
                "--out-vocab",
                &format!("{}/{name}.vocab.json", root.display()),
                "--out-merges",
                &format!("{}/{name}.merges.txt", root.display()),
            ]));
        }
        let vocab = transtok::wordizer::Vocab::load(root.join("src.vocab.json")).unwrap();
        let values: Vec<f32> = (0..vocab.len() * 6).map(|k| ((k * 37 % 101) as f32 - 50.0) / 25.0).collect();
        let table = EmbeddingTable::from_f32("embed", Dtype::F32, vocab.len(), 6, &values).unwrap();
        tensors::write_tensors(&root.join("emb.safetensors"), &[table], false).unwrap();
        Fixture { _dir: dir, root }
    }

    fn p(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn tokenizer_args(&self) -> Vec<String> {
        let s = |n: &str| self.p(n).display().to_string();
        vec![
            "--source-vocab".into(),
            s("src.vocab.json"),
            "--source-merges".into(),
            s("src.merges.txt"),
            "--target-vocab".into(),
            s("tgt.vocab.json"),
            "--target-merges".into(),
            s("tgt.merges.txt"),
        ]
    }

    fn write_config(&self, extra: &str) -> PathBuf {
        let cfg = format!(
            r#"{{
  "corpus": "corpus.txt",
  "source_tokenizer": {{"vocab": "src.vocab.json", "merges": "src.merges.txt"}},
  "target_tokenizer": {{"vocab": "tgt.vocab.json", "merges": "tgt.merges.txt"}},
  "source_embeddings": {{"path": "emb.safetensors"}},
  "output_dir": "out"{extra}
}}"#
        );
        let path = self.p("config.json");
        fs::write(&path, cfg).unwrap();
        path
    }
}

fn read(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn steps_reproduce_the_pipeline_bytes() {
    let fx = Fixture::new();
    let cfg = fx.write_config("");
    let out = run_ok(bin().arg("run").arg("--config").arg(&cfg));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["corpus"]["pairs"], 400);

    let corpus = fx.p("corpus.txt");
    run_ok(bin().arg("align").arg("--corpus").arg(&corpus).args(fx.tokenizer_args()).arg("--export-pharaoh").arg(fx.p("a.txt")));
    assert_eq!(read(&fx.p("a.txt")), read(&fx.p("out/alignments.txt")));

    run_ok(
        bin().arg("count").arg("--corpus").arg(&corpus).args(fx.tokenizer_args())
            .arg("--alignments").arg(fx.p("a.txt")).arg("--out").arg(fx.p("counts.tsv")),
    );
    assert_eq!(read(&fx.p("counts.tsv")), read(&fx.p("out/counts.tsv")));

    run_ok(
        bin().arg("map").arg("--counts").arg(fx.p("counts.tsv"))
            .arg("--source-vocab").arg(fx.p("src.vocab.json"))
            .arg("--target-vocab").arg(fx.p("tgt.vocab.json"))
            .arg("--out").arg(fx.p("mapping.json"))
            .arg("--readable").arg(fx.p("mapping.txt")),
    );
    assert_eq!(read(&fx.p("mapping.json")), read(&fx.p("out/mapping.json")));
    assert_eq!(read(&fx.p("mapping.txt")), read(&fx.p("out/mapping.txt")));

    let out = run_ok(
        bin().arg("remap").arg("--source-embeddings").arg(fx.p("emb.safetensors"))
            .arg("--mapping").arg(fx.p("mapping.json"))
            .arg("--out").arg(fx.p("remapped.safetensors")),
    );
    assert_eq!(read(&fx.p("remapped.safetensors")), read(&fx.p("out/embeddings.safetensors")));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let stored: serde_json::Value = serde_json::from_slice(&read(&fx.p("out/remap_report.json"))).unwrap();
    assert_eq!(report, stored);

    // the words are one-to-one, so each content word maps to its translation
    let listing = String::from_utf8(read(&fx.p("mapping.txt"))).unwrap();
    assert!(listing.lines().any(|l| l.starts_with("\u{2581}kat := 1.00*\u{2581}cat")), "{listing}");
}

#[test]
fn tokenize_writes_both_sides() {
    let fx = Fixture::new();
    let out = run_ok(bin().arg("tokenize").arg("--corpus").arg(fx.p("corpus.txt")).args(fx.tokenizer_args()).arg("--out-dir").arg(fx.p("tok")).args(["--max-pairs", "10"]));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["pairs"], 10);
    let src = fs::read_to_string(fx.p("tok/tokenized.src.txt")).unwrap();
    assert_eq!(src.lines().count(), 10);
    assert!(src.contains('\u{2581}'));
}

#[test]
fn second_run_is_served_from_cache() {
    let fx = Fixture::new();
    let cfg = fx.write_config("");
    run_ok(bin().arg("run").arg("--config").arg(&cfg));
    let first = read(&fx.p("out/mapping.json"));
    fs::remove_file(fx.p("out/mapping.json")).unwrap();
    let out = run_ok(bin().arg("run").arg("--config").arg(&cfg));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(summary["stages"].as_array().unwrap().iter().all(|s| s["cached"] == true));
    assert_eq!(read(&fx.p("out/mapping.json")), first);

    let out = run_ok(bin().arg("run").arg("--config").arg(&cfg).arg("--no-cache"));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(summary["stages"].as_array().unwrap().iter().all(|s| s["cached"] == false));
    assert_eq!(read(&fx.p("out/mapping.json")), first);
}

#[test]
fn flags_override_config() {
    let fx = Fixture::new();
    let cfg = fx.write_config(r#", "max_pairs": 50"#);
    let out = run_ok(bin().arg("run").arg("--config").arg(&cfg).args(["--max-pairs", "20", "--threads", "1"]).arg("--output-dir").arg(fx.p("other")));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["corpus"]["pairs"], 20);
    let effective: serde_json::Value = serde_json::from_slice(&read(&fx.p("other/config.effective.json"))).unwrap();
    assert_eq!(effective["max_pairs"], 20);
    assert_eq!(effective["threads"], 1);
}

#[test]
fn missing_corpus_is_a_validation_error() {
    let fx = Fixture::new();
    let cfg = fx.write_config("");
    fs::remove_file(fx.p("corpus.txt")).unwrap();
    let out = bin().arg("run").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("corpus"));
    assert!(!fx.p("out").exists());
}

#[test]
fn unknown_flag_is_a_validation_error() {
    let out = bin().args(["align", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn untokenizable_text_is_a_stage_failure() {
    let fx = Fixture::new();
    fs::write(fx.p("corpus.txt"), "the cat \u{4e2d} ||| de kat\n").unwrap();
    let cfg = fx.write_config("");
    let out = bin().arg("run").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stage tokenize failed"), "{err}");
    assert!(!fx.p("out/mapping.json").exists());
}

#[test]
fn error_fallback_lists_unmapped_tokens() {
    let fx = Fixture::new();
    let cfg = fx.write_config("");
    run_ok(bin().arg("run").arg("--config").arg(&cfg));
    let mapping: serde_json::Value = serde_json::from_slice(&read(&fx.p("out/mapping.json"))).unwrap();
    let unmapped = mapping["unmapped"].as_array().unwrap().len();
    let out = bin()
        .arg("remap").arg("--source-embeddings").arg(fx.p("emb.safetensors"))
        .arg("--mapping").arg(fx.p("out/mapping.json"))
        .arg("--out").arg(fx.p("x.safetensors"))
        .args(["--fallback", "error"])
        .arg("--target-vocab").arg(fx.p("tgt.vocab.json"))
        .output().unwrap();
    if unmapped == 0 {
        assert!(out.status.success());
    } else {
        assert_eq!(out.status.code(), Some(3));
        assert!(!fx.p("x.safetensors").exists());
    }
}

#[test]
fn ppl_normalize_reproduces_reported_values() {
    for (loss, want) in [("3.1321", "60.3815"), ("1.4681", "11.4351"), ("1.6881", "14.2489")] {
        let out = run_ok(bin().args(["ppl-normalize", "--loss", loss, "--model-tokens", "8116", "--native-tokens", "3081"]));
        assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), want);
    }
    let out = bin().args(["ppl-normalize", "--loss", "1", "--model-tokens", "0", "--native-tokens", "3"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stats_and_hydra() {
    let fx = Fixture::new();
    let cfg = fx.write_config(r#", "hydra": true"#);
    run_ok(bin().arg("run").arg("--config").arg(&cfg));
    let out = run_ok(
        bin().arg("stats").arg("--mapping").arg(fx.p("out/mapping.json"))
            .arg("--source-vocab").arg(fx.p("src.vocab.json"))
            .arg("--target-vocab").arg(fx.p("tgt.vocab.json"))
            .arg("--json"),
    );
    let stats: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(stats["mapped"].as_u64().unwrap() > 0);

    let manifest: serde_json::Value = serde_json::from_slice(&read(&fx.p("out/hydra.json"))).unwrap();
    assert_eq!(manifest["mask_label"], -100);
    assert_eq!(manifest["segments"][1]["offset"], manifest["output_vocab_size"]);

    let out = run_ok(
        bin().arg("hydra").arg("--target-vocab").arg(fx.p("tgt.vocab.json"))
            .arg("--target-embeddings").arg(fx.p("out/embeddings.safetensors"))
            .arg("--extra").arg(format!("{}={}", fx.p("src.vocab.json").display(), fx.p("emb.safetensors").display()))
            .arg("--out").arg(fx.p("h/model.json")),
    );
    let printed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(printed["tensor_file"], "model.safetensors");
    assert_eq!(read(&fx.p("h/model.safetensors")), read(&fx.p("out/hydra.safetensors")));
}
