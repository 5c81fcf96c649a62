use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use charweave_core::{compose_scene_caption, CharacterGraph, LexicalSimilarity};
use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn charweave(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_charweave"))
        .args(args)
        .env_remove("CHARWEAVE_LEXICON")
        .output()
        .expect("spawn charweave")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn pororo_graph() -> String {
    fixture("pororo_graph.json").to_str().unwrap().to_string()
}

fn guidance(scene: &str, dir: &Path, extra: &[&str]) -> Output {
    let graph = pororo_graph();
    let mut args = vec!["guidance", "--graph", &graph, "--scene", scene, "--out", path(dir)];
    args.extend_from_slice(extra);
    charweave(&args)
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

/// x coordinate of the peak pixel centre on the default 16x16 grid over
/// `[-1.5, 1.5]`.
fn peak_x(character: &Value) -> f64 {
    let col = character["mask_peak"][1].as_u64().unwrap() as f64;
    -1.5 + (col + 0.5) * 3.0 / 16.0
}

#[test]
fn help_exits_zero() {
    let out = charweave(&["--help"]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("build-graph"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = charweave(&["caption", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn build_graph_reports_fixture_counts_and_reproduces_the_fixture() {
    let dir = tempfile::tempdir().unwrap();
    for (name, profile, count) in [("pororo", "pororo", 9), ("frozen", "frozen", 5)] {
        let entries = fixture(&format!("{name}_entries.json"));
        let dest = dir.path().join(format!("{name}.json"));
        let out = charweave(&["build-graph", "--entries", path(&entries), "--profile", profile, "--out", path(&dest)]);
        assert!(out.status.success(), "{}", stderr(&out));
        assert!(stdout(&out).ends_with(&format!("characters\t{count}\n")), "{}", stdout(&out));
        let built = std::fs::read_to_string(&dest).unwrap();
        let frozen = std::fs::read_to_string(fixture(&format!("{name}_graph.json"))).unwrap();
        assert_eq!(built, frozen);
    }
}

#[test]
fn empty_entries_file_warns_and_writes_an_empty_graph() {
    let dir = tempfile::tempdir().unwrap();
    let entries = dir.path().join("entries.json");
    std::fs::write(&entries, "\n").unwrap();
    let dest = dir.path().join("graph.json");
    let out = charweave(&["build-graph", "--entries", path(&entries), "--out", path(&dest)]);
    assert!(out.status.success());
    assert!(stderr(&out).contains("warning"), "{}", stderr(&out));
    assert!(CharacterGraph::load(&dest).unwrap().is_empty());
}

#[test]
fn malformed_entry_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let entries = dir.path().join("entries.json");
    std::fs::write(
        &entries,
        "[\n  {\n    \"id\": \"a\",\n    \"display_name\": 7,\n    \"aliases\": [],\n    \"frontal_caption\": \"a cat\"\n  }\n]\n",
    )
    .unwrap();
    let out = charweave(&["build-graph", "--entries", path(&entries)]);
    assert_eq!(out.status.code(), Some(1));
    let msg = stderr(&out);
    assert!(msg.contains(":4:"), "{msg}");
    assert!(msg.contains("display_name"), "{msg}");
}

#[test]
fn caption_matches_the_library() {
    let graph_path = pororo_graph();
    let graph = CharacterGraph::load(&graph_path).unwrap();
    for scene in ["Poby and Loopy are skiing on a snowy mountain.", "Pororo and Petty are baking cookies."] {
        let out = charweave(&["caption", "--graph", &graph_path, "--scene", scene]);
        assert!(out.status.success(), "{}", stderr(&out));
        let (caption, _) = compose_scene_caption(scene, &graph, &LexicalSimilarity).unwrap();
        let expected = serde_json::to_string_pretty(&caption.to_document()).unwrap() + "\n";
        assert_eq!(stdout(&out), expected);
    }
}

#[test]
fn caption_batch_reads_one_scene_per_line() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = dir.path().join("scenes.txt");
    std::fs::write(&scenes, "Anna is hugging Elsa on the ice.\nOlaf is dancing.\n").unwrap();
    let graph = fixture("frozen_graph.json");
    let out = charweave(&["caption", "--graph", path(&graph), "--scenes", path(&scenes)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let docs: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(docs.as_array().unwrap().len(), 2);
}

#[test]
fn two_characters_are_placed_at_the_horizontal_extremes() {
    let dir = tempfile::tempdir().unwrap();
    let out = guidance("Poby and Loopy are skiing on a snowy mountain.", dir.path(), &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    let doc = report(dir.path());
    let chars = doc["characters"].as_array().unwrap();
    assert_eq!(chars.len(), 2);
    assert!((peak_x(&chars[0]) + 1.0).abs() <= 3.0 / 16.0, "{}", peak_x(&chars[0]));
    assert!((peak_x(&chars[1]) - 1.0).abs() <= 3.0 / 16.0, "{}", peak_x(&chars[1]));
    for c in chars {
        for key in ["mask_file", "image_file"] {
            assert!(dir.path().join(c[key].as_str().unwrap()).is_file());
        }
    }
}

#[test]
fn single_character_is_centred() {
    let dir = tempfile::tempdir().unwrap();
    let out = guidance("Poby is skiing.", dir.path(), &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    let doc = report(dir.path());
    assert!(peak_x(&doc["characters"][0]).abs() <= 3.0 / 16.0);
}

#[test]
fn unmatched_scene_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = guidance("A teapot on a table.", dir.path(), &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("no character"));
}

#[test]
fn in_region_mass_grows_with_the_timestep() {
    let dir = tempfile::tempdir().unwrap();
    let out = guidance("Pororo and Petty are baking cookies.", dir.path(), &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = report(dir.path())["mass"].as_array().unwrap().clone();
    let mut by_token: std::collections::BTreeMap<u64, Vec<(i64, f64, f64)>> = Default::default();
    for r in &rows {
        by_token.entry(r["token_index"].as_u64().unwrap()).or_default().push((
            r["timestep"].as_i64().unwrap(),
            r["mass_before"].as_f64().unwrap(),
            r["mass_after"].as_f64().unwrap(),
        ));
    }
    assert!(!by_token.is_empty());
    for (token, series) in by_token {
        assert_eq!(series.iter().map(|s| s.0).collect::<Vec<_>>(), [0, 499, 999]);
        assert!(series[0].2 > series[0].1, "token {token}: {series:?}");
        assert!(series[1].2 > series[0].2, "token {token}: {series:?}");
        assert!(series[2].2 >= series[1].2, "token {token}: {series:?}");
    }
}

#[test]
fn guidance_reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let scene = "Poby and Loopy are skiing on a snowy mountain.";
    let out_a = guidance(scene, a.path(), &["--mode", "post_softmax_renorm", "--seed", "7"]);
    let out_b = guidance(scene, b.path(), &["--mode", "post_softmax_renorm", "--seed", "7"]);
    assert!(out_a.status.success(), "{}", stderr(&out_a));
    assert_eq!(out_a.stdout, out_b.stdout);
    for entry in std::fs::read_dir(a.path()).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(std::fs::read(a.path().join(&name)).unwrap(), std::fs::read(b.path().join(&name)).unwrap(), "{name:?}");
    }
    assert_eq!(report(a.path())["mode"], "post_softmax_renorm");
}

#[test]
fn frozen_profile_sets_alpha() {
    let dir = tempfile::tempdir().unwrap();
    let graph = fixture("frozen_graph.json");
    let out = charweave(&[
        "guidance", "--graph", path(&graph), "--scene", "Anna is hugging Elsa.", "--out", path(dir.path()), "--profile", "frozen",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(report(dir.path())["alpha"], 1.0);
}

fn eval_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let mut graph = CharacterGraph::load(fixture("frozen_graph.json")).unwrap();
    let mut nodes: Vec<_> = graph.characters().cloned().collect();
    for (i, n) in nodes.iter_mut().enumerate() {
        let mut e = vec![0.0; 5];
        e[i] = 1.0;
        n.embedding = Some(e);
    }
    let style = graph.style().to_string();
    graph = CharacterGraph::new().with_style(style);
    for n in nodes {
        graph.insert_character(n).unwrap();
    }
    let graph_path = dir.join("graph.json");
    graph.save(&graph_path).unwrap();
    let manifest = serde_json::json!([
        {
            "scene_id": "s1",
            "required_ids": ["anna"],
            "samples": [{"embedding": [0.9, 0.1, 0.0, 0.0, 0.0]}],
            "clip_t": 30.0
        },
        {
            "scene_id": "s2",
            "required_ids": ["anna", "elsa"],
            "samples": [{"embedding": [1.0, 0.0, 0.0, 0.0, 0.0]}, {"embedding": [0.3, 0.3, 0.3, 0.3, 0.3]}],
            "clip_t": 40.0
        }
    ]);
    let manifest_path = dir.join("manifest.json");
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();
    (graph_path, manifest_path)
}

#[test]
fn eval_aggregates_frame_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let (graph, manifest) = eval_fixture(dir.path());
    let dest = dir.path().join("eval.json");
    let out = charweave(&["eval", "--manifest", path(&manifest), "--graph", path(&graph), "--out", path(&dest)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let doc: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(doc["frame_accuracy"], 0.5);
    assert_eq!(doc["mean_character_f1"], 0.75);
    assert_eq!(doc["clip_t"], 35.0);
    assert_eq!(doc["clip_i"], Value::Null);
    assert_eq!(std::fs::read_to_string(&dest).unwrap(), stdout(&out));
}

#[test]
fn malformed_manifest_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let (graph, manifest) = eval_fixture(dir.path());
    std::fs::write(&manifest, r#"[{"scene_id": "s1", "required_ids": ["anna"], "samples": [{"embedding": ["x"]}]}]"#).unwrap();
    let out = charweave(&["eval", "--manifest", path(&manifest), "--graph", path(&graph)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("[0].samples[0].embedding[0]"), "{}", stderr(&out));
}

#[test]
fn lexicon_environment_variable_extends_the_parser() {
    let dir = tempfile::tempdir().unwrap();
    let lexicon = dir.path().join("lexicon.tsv");
    std::fs::write(&lexicon, "glim\tadjective\n").unwrap();
    let entries = dir.path().join("entries.json");
    std::fs::write(
        &entries,
        r#"[{"id": "z", "display_name": "Zed", "aliases": ["cat"], "frontal_caption": "A glim cat is sitting."}]"#,
    )
    .unwrap();
    let build = |env: Option<&Path>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_charweave"));
        cmd.args(["build-graph", "--entries", path(&entries)]).env_remove("CHARWEAVE_LEXICON");
        if let Some(p) = env {
            cmd.env("CHARWEAVE_LEXICON", p);
        }
        let out = cmd.output().unwrap();
        assert!(out.status.success(), "{}", stderr(&out));
        let text = stdout(&out);
        let json_start = text.find('{').unwrap();
        let graph = CharacterGraph::from_json(&text[json_start..]).unwrap();
        graph.character("z").unwrap().attributes.clone()
    };
    assert!(build(None).is_empty());
    assert_eq!(build(Some(&lexicon)), ["glim"]);
}
