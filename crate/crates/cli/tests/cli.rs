mod common;

use common::*;
use sha2::{Digest, Sha256};

const PROCESS: &str = r#"
seed = 0

[data.synthetic]
kind = "shapes"
count = 1
size = 16
seed = 3

[process]
configs = ["all"]
"#;

#[test]
fn process_writes_twelve_abbreviated_pngs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "process.toml", PROCESS);
    let out = dir.path().join("run");
    let r = run(&cfg, &out, &["process"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let files = snapshot(&out);
    let pngs: Vec<&String> = files.keys().filter(|n| n.ends_with(".png")).collect();
    assert_eq!(pngs.len(), 12);
    for name in ["scene0000__bi-s-me.png", "scene0000__ma-u-ga.png", "scene0000__me-s-ga.png"] {
        assert!(files.contains_key(name), "{name} missing from {pngs:?}");
    }
    assert!(files.contains_key("resolved_config.toml"));
    let log = String::from_utf8(files["run.log"].clone()).unwrap();
    assert_eq!(log.lines().last(), Some("complete"));
}

#[test]
fn process_rerun_without_force_leaves_outputs_alone() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "process.toml", PROCESS);
    let out = dir.path().join("run");
    assert_eq!(code(&run(&cfg, &out, &["process"])), 0);
    let original = snapshot(&out);
    let victim = out.join("scene0000__bi-s-me.png");
    std::fs::write(&victim, b"edited").unwrap();

    let r = run(&cfg, &out, &["process"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    assert_eq!(std::fs::read(&victim).unwrap(), b"edited");

    let r = run(&cfg, &out, &["--force", "process"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    assert_eq!(std::fs::read(&victim).unwrap(), original["scene0000__bi-s-me.png"]);
}

#[test]
fn process_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "process.toml", PROCESS);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&run(&cfg, &a, &["process"])), 0);
    assert_eq!(code(&run(&cfg, &b, &["--threads", "1", "process"])), 0);
    assert_eq!(differing(&snapshot(&a), &snapshot(&b)), Vec::<String>::new());
}

#[test]
fn process_can_dump_stages_and_use_a_parameter_document() {
    let dir = tempfile::tempdir().unwrap();
    let doc = dir.path().join("params.toml");
    let params = rawdrift::isp_param::default_params::<f64>();
    std::fs::write(&doc, rawdrift::isp_param::serialize_params(&params).unwrap()).unwrap();
    let text = format!(
        "{}\n[process]\nconfigs = [\"bi,s,ga\"]\nparams = \"params.toml\"\ndump_stages = true\n",
        PROCESS.split("[process]").next().unwrap()
    );
    let cfg = write_config(dir.path(), "process.toml", &text);
    let out = dir.path().join("run");
    let r = run(&cfg, &out, &["process"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let files = snapshot(&out);
    assert!(files.contains_key("scene0000__bi-s-ga.png"));
    assert!(files.contains_key("scene0000__param.png"));
    let stages = files.keys().filter(|n| n.starts_with("scene0000__bi-s-ga__")).count();
    assert_eq!(stages, 6);
}

#[test]
fn raw_directory_input_is_processed() {
    let dir = tempfile::tempdir().unwrap();
    let raws = dir.path().join("raws");
    std::fs::create_dir(&raws).unwrap();
    let spec = rawdrift::raw_io::DatasetSpec {
        kind: rawdrift::raw_io::DatasetKind::Shapes,
        count: 2,
        size: 16,
        seed: 4,
        cfa: Default::default(),
    };
    for (i, r) in rawdrift::raw_io::synth_dataset::<f64>(&spec).unwrap().iter().enumerate() {
        rawdrift::raw_io::write_raw(r, &raws.join(format!("frame{i}.pgm"))).unwrap();
    }
    let cfg = write_config(dir.path(), "c.toml", "[data]\nraw_dir = \"raws\"\n[process]\nconfigs = [\"me,u,me\"]\n");
    let out = dir.path().join("run");
    let r = run(&cfg, &out, &["process"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let files = snapshot(&out);
    assert!(files.contains_key("frame0__me-u-me.png") && files.contains_key("frame1__me-u-me.png"));
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let typo = write_config(dir.path(), "typo.toml", "seed = 1\n[gradcheck]\ncuont = 3\n");
    let r = run(&typo, &out, &["gradcheck"]);
    assert_eq!(code(&r), 2);
    assert!(stderr(&r).contains("cuont"), "{}", stderr(&r));

    let top = write_config(dir.path(), "top.toml", "sede = 1\n");
    assert_eq!(code(&run(&top, &out, &["gradcheck"])), 2);

    let bad_config = write_config(dir.path(), "bad.toml", "[data.synthetic]\nkind = \"shapes\"\ncount = 1\nsize = 16\nseed = 0\n[process]\nconfigs = [\"xx,s,me\"]\n");
    assert_eq!(code(&run(&bad_config, &out, &["process"])), 2);

    let no_data = write_config(dir.path(), "nodata.toml", "[process]\n");
    assert_eq!(code(&run(&no_data, &out, &["process"])), 2);
}

#[test]
fn missing_inputs_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "[data]\nraw_dir = \"nowhere\"\n");
    assert_eq!(code(&run(&cfg, &dir.path().join("run"), &["process"])), 3);
    let missing = dir.path().join("missing.toml");
    assert_eq!(code(&run(&missing, &dir.path().join("run2"), &["process"])), 3);
}

#[test]
fn changed_config_in_a_finished_run_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let a = write_config(dir.path(), "a.toml", "[gradcheck]\ncount = 1\nsize = 8\ncheck_raw = false\n");
    let b = write_config(dir.path(), "b.toml", "[gradcheck]\ncount = 2\nsize = 8\ncheck_raw = false\n");
    assert_eq!(code(&run(&a, &out, &["gradcheck"])), 0);
    assert_eq!(code(&run(&b, &out, &["gradcheck"])), 2);
    assert_eq!(code(&run(&b, &out, &["--force", "gradcheck"])), 0);
}

#[test]
fn gradcheck_reports_seven_groups_and_the_raw_input() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "g.toml", "seed = 3\n[gradcheck]\ncount = 2\nsize = 16\n");
    let out = dir.path().join("run");
    let r = run(&cfg, &out, &["gradcheck"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let rows = csv_rows(&out.join("gradcheck.csv"));
    assert_eq!(rows.len(), 8);
    let thetas = rows.iter().filter(|r| r["target"].starts_with("theta")).count();
    assert_eq!(thetas, 7);
    assert!(rows.iter().all(|r| r["status"] == "PASS" && num(r, "max_relative_error") <= 1e-4));
}

#[test]
fn corrupted_adjoint_fails_gradcheck_with_5() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "g.toml",
        "[gradcheck]\ncount = 1\nsize = 8\ncheck_raw = false\ncorrupt_adjoint = true\n",
    );
    let out = dir.path().join("run");
    let r = run(&cfg, &out, &["gradcheck"]);
    assert_eq!(code(&r), 5, "{}", stderr(&r));
    let rows = csv_rows(&out.join("gradcheck.csv"));
    assert!(rows.iter().any(|r| r["status"] == "FAIL"));
    // An unfinished run is repeated rather than skipped.
    assert_eq!(code(&run(&cfg, &out, &["gradcheck"])), 5);
}

const FORENSICS: &str = r#"
seed = 4

[data.synthetic]
kind = "shapes"
count = 24
size = 16
seed = 2

[forensics]
lambdas = [0.0, 1e6]
steps = 0
opt_items = 4
test_items = 4

[forensics.model]
steps = 10
batch_size = 4
"#;

#[test]
fn forensics_with_zero_steps_reports_the_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "f.toml", FORENSICS);
    let out = dir.path().join("run");
    let r = run(&cfg, &out, &["forensics"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let rows = csv_rows(&out.join("forensics.csv"));
    assert_eq!(rows.len(), 2);
    for row in &rows {
        assert_eq!(row["score"], row["score_baseline"]);
        assert_eq!(row["batch_score"], row["batch_score_baseline"]);
        assert_eq!(num(row, "l2"), 0.0);
        assert_eq!(row["objective_initial"], row["objective_final"]);
    }
    let files = snapshot(&out);
    assert!(files.contains_key("model.toml"));
    assert!(files.contains_key("theta_lam0_all.toml"));
    // Parameters after zero steps are the defaults, written identically.
    assert_eq!(files["theta_lam0_all.toml"], files["theta_lam1e6_all.toml"]);
}

#[test]
fn forensics_reuses_a_saved_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "f.toml", FORENSICS);
    let out = dir.path().join("run");
    assert_eq!(code(&run(&cfg, &out, &["forensics"])), 0);
    let model = out.join("model.toml");
    let with_ckpt = format!("{FORENSICS}checkpoint = \"{}\"\n", model.display());
    let cfg2 = write_config(dir.path(), "f2.toml", &with_ckpt);
    let out2 = dir.path().join("run2");
    let r = run(&cfg2, &out2, &["forensics"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    assert_eq!(
        std::fs::read(out.join("forensics.csv")).unwrap(),
        std::fs::read(out2.join("forensics.csv")).unwrap()
    );
}

const OPTIMIZE: &str = r#"
seed = 6

[data.synthetic]
kind = "shapes"
count = 12
size = 16
seed = 1

[optimize]
intensities = [0.5]
steps = 6
folds = 2
batch_size = 4
eval_every = 2
"#;

#[test]
fn learned_mode_without_pipeline_learning_rate_matches_frozen() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "{OPTIMIZE}modes = [\"learned\", \"frozen\"]\npipeline_optimizer = {{ kind = \"adam\", lr = 0.0 }}\n"
    );
    let cfg = write_config(dir.path(), "o.toml", &text);
    let out = dir.path().join("run");
    let r = run(&cfg, &out, &["optimize"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let files = snapshot(&out);
    assert!(files["trajectory_learned_int0.5.csv"] == files["trajectory_frozen_int0.5.csv"]);
    // Training runs in single precision; both modes end at the starting parameters.
    let defaults = {
        let mut p = rawdrift::isp_param::default_params::<f32>();
        p.output_standardize = true;
        rawdrift::isp_param::serialize_params(&p).unwrap()
    };
    let text = |name: String| String::from_utf8(files[&name].clone()).unwrap();
    for fold in 0..2 {
        assert_eq!(text(format!("params_frozen_int0.5_fold{fold}.toml")), defaults);
        assert_eq!(text(format!("params_learned_int0.5_fold{fold}.toml")), defaults);
    }
}

#[test]
fn optimize_writes_a_summary_for_every_mode() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "o.toml", OPTIMIZE);
    let out = dir.path().join("run");
    let r = run(&cfg, &out, &["optimize"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let rows = csv_rows(&out.join("optimize_summary.csv"));
    let modes: Vec<&str> = rows.iter().map(|r| r["mode"].as_str()).collect();
    assert_eq!(modes, ["learned", "frozen", "direct_raw"]);
    let table = std::fs::read_to_string(out.join("optimize_summary.txt")).unwrap();
    assert!(table.contains("direct_raw") && table.contains('±'));
}

#[test]
fn seed_flag_overrides_the_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "g.toml", "seed = 1\n[gradcheck]\ncount = 1\nsize = 8\ncheck_raw = false\n");
    let out = dir.path().join("run");
    assert_eq!(code(&run(&cfg, &out, &["--seed", "9", "gradcheck"])), 0);
    let resolved = std::fs::read_to_string(out.join("resolved_config.toml")).unwrap();
    assert!(resolved.contains("seed = 9"), "{resolved}");
}

fn manifest_for(server: &StubServer, files: &[(&str, &[u8])], tamper: bool) -> String {
    let mut text = String::from("url,path,sha256,size,split\n");
    for (name, body) in files {
        let mut sum = hex::encode(Sha256::digest(body));
        if tamper {
            sum = sum.chars().rev().collect();
        }
        text.push_str(&format!("{}/{name},raw/{name},{sum},{},train\n", server.base, body.len()));
    }
    text
}

#[test]
fn fetch_downloads_verifies_and_skips_present_files() {
    let bodies: Vec<(&'static str, Vec<u8>)> = vec![("a.pgm", b"P5 first".to_vec()), ("b.pgm", b"P5 second".to_vec())];
    let server = serve(bodies.clone());
    let refs: Vec<(&str, &[u8])> = bodies.iter().map(|(n, b)| (*n, b.as_slice())).collect();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_config(dir.path(), "manifest.csv", &manifest_for(&server, &refs, false));
    let cfg = write_config(dir.path(), "fetch.toml", "[fetch]\nmanifest = \"manifest.csv\"\ndestination = \"data\"\n");
    let out = dir.path().join("run");

    let r = run(&cfg, &out, &["fetch"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    assert_eq!(server.hits(), 2);
    assert_eq!(std::fs::read(dir.path().join("data/raw/b.pgm")).unwrap(), b"P5 second");

    let r = run(&cfg, &out, &["--force", "fetch"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    assert_eq!(server.hits(), 2, "repeat run must not download");
    let report = csv_rows(&out.join("fetch_report.csv"));
    assert!(report.iter().all(|r| r["status"] == "present"));

    // The flag form works without a fetch section.
    let empty = write_config(dir.path(), "empty.toml", "");
    let dest = dir.path().join("data");
    let r = run(
        &empty,
        &dir.path().join("run2"),
        &["fetch", "--manifest", manifest.to_str().unwrap(), "--destination", dest.to_str().unwrap()],
    );
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    assert_eq!(server.hits(), 2);
}

#[test]
fn fetch_checksum_mismatch_exits_with_6() {
    let body = b"P5 payload".to_vec();
    let server = serve(vec![("c.pgm", body.clone())]);
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path(), "manifest.csv", &manifest_for(&server, &[("c.pgm", &body)], true));
    let cfg = write_config(dir.path(), "fetch.toml", "[fetch]\nmanifest = \"manifest.csv\"\ndestination = \"data\"\n");
    let r = run(&cfg, &dir.path().join("run"), &["fetch"]);
    assert_eq!(code(&r), 6, "{}", stderr(&r));
    assert!(!dir.path().join("data/raw/c.pgm").exists());
}

#[test]
fn fetch_without_manifest_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "empty.toml", "");
    assert_eq!(code(&run(&cfg, &dir.path().join("run"), &["fetch"])), 2);
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let r = std::process::Command::new(BIN).arg("explode").output().unwrap();
    assert_eq!(code(&r), 2);
}

#[test]
fn diverging_training_exits_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{OPTIMIZE}modes = [\"learned\"]\nmodel_optimizer = {{ kind = \"sgd\", lr = 1e30 }}\n");
    let cfg = write_config(dir.path(), "o.toml", &text);
    let out = dir.path().join("run");
    let r = run(&cfg, &out, &["optimize"]);
    assert_eq!(code(&r), 4, "{}", stderr(&r));
    let log = std::fs::read_to_string(out.join("run.log")).unwrap();
    assert_ne!(log.lines().last(), Some("complete"));
}
