use std::path::Path;
use std::process::{Command, Output};

use derevrb::io::{read_records, read_wav, write_wav, Audio, Record, SampleFormat};
use derevrb::room_sim::make_test_corpus;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_derevrb"));
    c.env_remove("DEREVRB_CONFIG");
    c
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_scene(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("scene.toml");
    std::fs::write(
        &p,
        "[scene]\nkind = \"simulated\"\nroom_dims = [3.0, 3.0, 2.5]\nsource = [1.0, 1.0, 1.2]\n\
         mics = [[2.0, 2.0, 1.2], [2.05, 2.0, 1.2]]\nabsorption = 0.5\nmax_order = 8\n",
    )
    .unwrap();
    p
}

fn simulate(dir: &Path, count: usize) -> std::path::PathBuf {
    let scene = write_scene(dir);
    let out = dir.join("sim");
    run(bin()
        .args(["simulate", "--synthetic", &count.to_string(), "--duration", "0.5", "--scene"])
        .arg(&scene)
        .arg("--out")
        .arg(&out));
    out
}

fn summary(records: &[Record]) -> &Record {
    records
        .iter()
        .find(|r| r.get("record") == Some("summary"))
        .expect("summary record")
}

#[test]
fn simulate_dereverb_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), 2);
    let manifest = read_records(&sim.join("manifest.txt")).unwrap();
    assert_eq!(manifest.len(), 3);
    assert_eq!(manifest[0].get("mics"), Some("2"));
    let rev = read_wav(&sim.join("reverb/utt0000.wav")).unwrap();
    assert_eq!((rev.num_channels(), rev.len()), (2, 8000));

    let out = dir.path().join("out");
    run(bin()
        .args(["dereverb", "--channels", "2", "--order", "auto", "--iterations", "3", "--manifest"])
        .arg(&sim)
        .arg("--out-dir")
        .arg(&out));
    let y = read_wav(&out.join("utt0001.wav")).unwrap();
    assert_eq!((y.num_channels(), y.len()), (1, 8000));
    let diag = read_records(&out.join("utt0001.diag")).unwrap();
    assert_eq!(diag[0].get("order"), Some("32"));
    assert_eq!(diag.iter().filter(|r| r.get("record") == Some("iteration")).count(), 3);
    assert!(diag[1].parse_field::<f64>("fwsnr_db").is_some());

    let report = dir.path().join("report.txt");
    run(bin()
        .args(["evaluate", "--manifest"])
        .arg(&sim)
        .arg("--processed-dir")
        .arg(&out)
        .arg("--output")
        .arg(&report));
    let records = read_records(&report).unwrap();
    assert_eq!(summary(&records).get("utterances"), Some("2"));
    let table: Vec<_> = records
        .iter()
        .filter(|r| r.get("record") == Some("iteration_fwsnr"))
        .collect();
    assert_eq!(table.len(), 3);
    assert_eq!(table[0].get("files"), Some("2"));

    let stdout = run(bin().args(["evaluate", "--unprocessed", "--manifest"]).arg(&sim)).stdout;
    let text = String::from_utf8(stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("record=summary")));
}

#[test]
fn single_file_with_per_microphone_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let x = make_test_corpus(3, 2, 0.4, 16000);
    let a = dir.path().join("a.wav");
    let b = dir.path().join("b.wav");
    write_wav(&a, &Audio::mono(16000, x[0].clone()), SampleFormat::Pcm16).unwrap();
    write_wav(&b, &Audio::mono(16000, x[1].clone()), SampleFormat::Pcm16).unwrap();
    let out = dir.path().join("y.wav");
    let diag = dir.path().join("y.diag");
    run(bin()
        .args(["dereverb", "--channels", "2", "--order", "4", "--prior", "ar", "--input"])
        .arg(&a)
        .arg(&b)
        .arg("--early-reference")
        .arg(&a)
        .arg("--output")
        .arg(&out)
        .arg("--diagnostics")
        .arg(&diag));
    assert_eq!(read_wav(&out).unwrap().len(), x[0].len());
    let d = read_records(&diag).unwrap();
    assert_eq!(d[0].get("prior"), Some("ar"));
    assert_eq!(d.len(), 1 + 5);

    let stdout = run(bin().arg("evaluate").arg("--diagnostics").arg(&diag)).stdout;
    assert_eq!(String::from_utf8(stdout).unwrap().lines().count(), 5);
}

#[test]
fn neural_prior_without_model_fails_before_processing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("y.wav");
    let o = bin()
        .args(["dereverb", "--prior", "neural-lstm", "--input", "/nonexistent/in.wav", "--output"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("requires a model"), "{err}");
    assert!(!out.exists());
}

#[test]
fn config_from_environment_and_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), 1);
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, "[mclp]\nnum_channels = 2\norder = 5\nmax_iterations = 2\n").unwrap();
    let out = dir.path().join("out");
    run(bin()
        .env("DEREVRB_CONFIG", &cfg)
        .args(["dereverb", "--manifest"])
        .arg(&sim)
        .arg("--out-dir")
        .arg(&out));
    let d = read_records(&out.join("utt0000.diag")).unwrap();
    assert_eq!(d[0].get("order"), Some("5"));
    assert_eq!(d[0].get("iterations"), Some("2"));

    run(bin()
        .env("DEREVRB_CONFIG", &cfg)
        .args(["dereverb", "--mics", "1", "--order", "auto", "--manifest"])
        .arg(&sim)
        .arg("--out-dir")
        .arg(&out));
    let d = read_records(&out.join("utt0000.diag")).unwrap();
    assert_eq!(d[0].get("order"), Some("48"));
    assert_eq!(d[0].get("mics"), Some("1"));

    std::fs::write(&cfg, "[mclp]\nbogus = 1\n").unwrap();
    let o = bin().arg("--config").arg(&cfg).args(["evaluate", "--diagnostics", "x"]).output().unwrap();
    assert!(!o.status.success());
}

#[test]
fn bad_arguments_are_rejected() {
    let o = bin().args(["dereverb", "--order", "many", "--input", "x.wav", "--output", "y.wav"]).output().unwrap();
    assert!(!o.status.success());
    let o = bin().args(["train-ae", "--corpus", "/nonexistent/corpus", "--out", "m.bin"]).output().unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/corpus"));
}

#[test]
fn train_then_dereverb_with_neural_prior() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate(dir.path(), 3);
    let model = dir.path().join("fc.bin");
    run(bin()
        .args(["train-ae", "--kind", "fc", "--hidden", "16,4,16", "--epochs", "2", "--seed", "3", "--corpus"])
        .arg(sim.join("clean"))
        .arg("--out")
        .arg(&model));
    let history = read_records(&dir.path().join("fc.bin.history")).unwrap();
    assert_eq!(history[0].get("layers"), Some("[1285,16,4,16,257]"));
    assert_eq!(history.len(), 3);

    let loaded = derevrb::neural::load_model(&model).unwrap();
    assert_eq!(loaded.spec.layer_widths, vec![1285, 16, 4, 16, 257]);

    let out = dir.path().join("out");
    run(bin()
        .args(["dereverb", "--channels", "2", "--prior", "neural-fc", "--iterations", "2", "--model"])
        .arg(&model)
        .arg("--manifest")
        .arg(&sim)
        .arg("--out-dir")
        .arg(&out));
    assert_eq!(read_records(&out.join("utt0002.diag")).unwrap()[0].get("prior"), Some("neural-fc"));

    // a FC model cannot serve the LSTM prior
    let o = bin()
        .args(["dereverb", "--channels", "2", "--prior", "neural-lstm", "--model"])
        .arg(&model)
        .arg("--manifest")
        .arg(&sim)
        .arg("--out-dir")
        .arg(&out)
        .output()
        .unwrap();
    assert!(!o.status.success());
}
