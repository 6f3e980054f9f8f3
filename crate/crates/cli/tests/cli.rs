use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_coffee");

fn coffee(out: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .args(["--out", out.to_str().unwrap()])
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = coffee(dir.path(), &["effects", "--no-such-flag"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("Usage"));
    let o = coffee(dir.path(), &["align", "--topics", "t.csv", "--embeddings", "e.csv", "--tau", "1.5"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("tau"));
    let o = coffee(dir.path(), &["synth", "--effect", "A:zero:0.1", "--tag", "x"]);
    assert_eq!(code(&o), 2);
    let o = coffee(dir.path(), &["--help"]);
    assert_eq!(code(&o), 0);
}

#[test]
fn validate_reports_mismatched_doc_ids() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("topics.csv"), "model_id,topic_index,rank,token,weight\nm,0,1,a,\nm,1,1,b,\n").unwrap();
    fs::write(d.join("theta.csv"), "doc_id,t0,t1\nd1,0.5,0.5\nd2,0.2,0.8\n").unwrap();
    fs::write(d.join("covariates.csv"), "doc_id,gender\nd1,F\nd3,M\n").unwrap();
    let args = |tag: &'static str| {
        vec![
            "validate".to_owned(),
            "--topics".into(),
            d.join("topics.csv").display().to_string(),
            "--theta".into(),
            d.join("theta.csv").display().to_string(),
            "--covariates".into(),
            d.join("covariates.csv").display().to_string(),
            "--tag".into(),
            tag.into(),
        ]
    };
    let a = args("v");
    let o = coffee(d, &a.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("doc_id_mismatch"));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("validate/v/validation.json")).unwrap()).unwrap();
    assert_eq!(report["errors"][0]["code"], "doc_id_mismatch");
    assert!(d.join("validate/v/run_manifest.json").exists());

    // effects refuses the same bundle
    let mut e = args("e");
    e[0] = "effects".into();
    e.extend(["--covariate".into(), "gender".into()]);
    let o = coffee(d, &e.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(code(&o), 1);
}

fn synth(out: &Path, tag: &str, extra: &[&str]) -> std::path::PathBuf {
    let mut args = vec!["synth", "--tag", tag];
    args.extend_from_slice(extra);
    let o = coffee(out, &args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out.join("synth").join(tag).join("manifest.json")
}

#[test]
fn merge_threshold_relabels_small_categories() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(
        dir.path(),
        "s",
        &["--n-docs", "2000", "--categories", "ON:0.6,QC:0.3,PE:0.05,NU:0.05", "--covariate", "province"],
    );
    let m = m.to_str().unwrap();
    let o = coffee(dir.path(), &["effects", "--manifest", m, "--covariate", "province", "--merge-threshold", "--tag", "e"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("effects/e/effects.csv")).unwrap();
    // 1000 is the bare-flag threshold, so only ON (1200 docs) survives
    let terms: Vec<&str> = csv.lines().skip(1).filter(|l| l.contains(",0,,")).map(|l| l.split(',').nth(3).unwrap()).collect();
    assert_eq!(terms, ["Intercept", "ON", "Other"]);

    let o = coffee(dir.path(), &["effects", "--manifest", m, "--covariate", "province", "--merge-threshold", "150", "--tag", "e2"]);
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(dir.path().join("effects/e2/effects.csv")).unwrap();
    assert!(csv.contains(",Other,") && csv.contains(",QC,") && !csv.contains(",PE,"));
}

#[test]
fn json_effects_and_manifest_digests() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(dir.path(), "s", &["--n-docs", "300"]);
    let o = coffee(
        dir.path(),
        &["effects", "--manifest", m.to_str().unwrap(), "--covariate", "group", "--format", "json", "--tag", "j"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let run = dir.path().join("effects/j");
    let table: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("effects.json")).unwrap()).unwrap();
    assert_eq!(table["covariate"], "group");
    assert_eq!(table["rows"].as_array().unwrap().len(), 16);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "effects");
    assert_eq!(manifest["config"]["bootstrap"], 25);
    assert_eq!(manifest["inputs"].as_object().unwrap().len(), 4);
    assert_eq!(manifest["outputs"]["effects.json"].as_str().unwrap().len(), 64);
}

#[test]
fn preprocess_align_quality_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut raw = String::from("doc_id,text\n");
    let themes = [
        "river water fish habitat",
        "grant funding research council",
        "student training program mentor",
    ];
    for i in 0..90 {
        raw.push_str(&format!("d{i},\"{} NSERC {}\"\n", themes[i % 3], themes[(i / 3) % 3].split(' ').next().unwrap()));
    }
    fs::write(d.join("raw.csv"), raw).unwrap();
    fs::write(d.join("domain.txt"), "nserc\n").unwrap();
    let o = coffee(
        d,
        &["preprocess", "--input", d.join("raw.csv").to_str().unwrap(), "--domain-stopwords", d.join("domain.txt").to_str().unwrap(), "--tag", "p"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let corpus = d.join("preprocess/p/corpus.csv");
    assert!(!fs::read_to_string(&corpus).unwrap().contains("nserc"));

    // three models that found the same three themes
    let mut topics = String::from("model_id,topic_index,rank,token,weight\n");
    let mut emb = String::from("token,e0,e1,e2\n");
    for (k, theme) in themes.iter().enumerate() {
        for (r, w) in theme.split(' ').enumerate() {
            for m in ["lda", "nmf", "bert"] {
                topics.push_str(&format!("{m},{k},{},{w},\n", r + 1));
            }
            let mut v = [0.05; 3];
            v[k] = 1.0 + r as f64 * 0.01;
            emb.push_str(&format!("{w},{},{},{}\n", v[0], v[1], v[2]));
        }
    }
    fs::write(d.join("topics.csv"), topics).unwrap();
    fs::write(d.join("emb.csv"), emb).unwrap();
    let (t, e) = (d.join("topics.csv"), d.join("emb.csv"));
    let o = coffee(d, &["align", "--topics", t.to_str().unwrap(), "--embeddings", e.to_str().unwrap(), "--tag", "a"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("triplet matches (n=3)"));
    assert!(d.join("align/a/similarity.csv").exists());

    let o = coffee(
        d,
        &[
            "quality",
            "--topics",
            t.to_str().unwrap(),
            "--corpus",
            corpus.to_str().unwrap(),
            "--alignment",
            d.join("align/a/alignment.csv").to_str().unwrap(),
            "--tag",
            "q",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let q = fs::read_to_string(d.join("quality/q/quality.csv")).unwrap();
    assert_eq!(q.lines().count(), 4);
    // identical topics in every model: every row equal, full diversity
    let rows: Vec<Vec<&str>> = q.lines().skip(1).map(|l| l.split(',').collect()).collect();
    for r in &rows {
        assert_eq!(r[1..], rows[0][1..]);
        assert_eq!(r[3], "1");
    }
}
