//! Compiles C code against the generated header and the static library.

use std::path::PathBuf;
use std::process::Command;

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

/// target/<profile>, where cargo puts libvoicecloak_ffi.a.
fn profile_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

fn run(cmd: &mut Command) -> String {
    let out = cmd.output().unwrap_or_else(|e| panic!("spawning {cmd:?}: {e}"));
    assert!(
        out.status.success(),
        "{cmd:?} failed\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn header() -> PathBuf {
    crate_dir().join("include/voicecloak.h")
}

#[test]
fn header_declares_every_export() {
    let h = std::fs::read_to_string(header()).unwrap();
    let src = std::fs::read_to_string(crate_dir().join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 20, "{exports:?}");
    for name in exports {
        assert!(h.contains(&format!("{name}(")), "{name} missing from header");
    }
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let include = crate_dir().join("include");
    let probe = std::env::temp_dir().join(format!("vc_probe_{}.c", std::process::id()));
    std::fs::write(&probe, "#include \"voicecloak.h\"\n").unwrap();
    run(Command::new("cc")
        .args([
            "-std=c99",
            "-Wall",
            "-Wextra",
            "-Werror",
            "-pedantic",
            "-fsyntax-only",
            "-I",
        ])
        .arg(&include)
        .arg(&probe));
    run(Command::new("c++")
        .args(["-x", "c++", "-std=c++11", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&include)
        .arg(&probe));
    let _ = std::fs::remove_file(probe);
}

/// `cargo test` builds only the rlib, so build the static library on demand.
fn static_lib() -> Option<PathBuf> {
    let p = profile_dir().join("libvoicecloak_ffi.a");
    if !p.exists() {
        let mut cmd = Command::new(env!("CARGO"));
        cmd.args(["build", "-p", "voicecloak-ffi", "--lib"])
            .current_dir(crate_dir());
        if profile_dir().file_name().is_some_and(|n| n == "release") {
            cmd.arg("--release");
        }
        run(&mut cmd);
    }
    p.exists().then_some(p)
}

#[test]
fn c_program_links_and_runs() {
    let Some(lib) = static_lib() else {
        panic!("static library not found under {}", profile_dir().display());
    };
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    run(Command::new("cc")
        .args(["-std=c99", "-D_DEFAULT_SOURCE", "-Wall", "-Werror", "-O1", "-I"])
        .arg(crate_dir().join("include"))
        .arg(crate_dir().join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe));
    let stdout = run(&mut Command::new(&exe));
    let field = |key: &str| -> f64 {
        stdout
            .split_whitespace()
            .find_map(|kv| kv.strip_prefix(&format!("{key}=")))
            .unwrap_or_else(|| panic!("{key} missing in {stdout}"))
            .parse()
            .unwrap()
    };
    assert!(
        stdout.starts_with(&format!("version={} ", env!("CARGO_PKG_VERSION"))),
        "{stdout}"
    );
    // the C side reproduces the library's numbers exactly
    assert_eq!(field("dcosd"), field("report_dcosd"));
    assert!(field("snr") > 10.0, "{stdout}");
    check_against_library(&stdout);
}

fn check_against_library(stdout: &str) {
    let samples: Vec<f64> = (0..16000)
        .map(|i| {
            let t = i as f64 / 16000.0;
            0.1 * (2.0 * std::f64::consts::PI * 200.0 * t).sin()
                + 0.04 * (2.0 * std::f64::consts::PI * 1700.0 * t).sin()
        })
        .collect();
    let ws = voicecloak::encoder::init_random(&Default::default(), 7).unwrap();
    let opts = voicecloak::attack::ProtectOptions {
        attack: voicecloak::attack::AttackConfig {
            iterations: 4,
            ..Default::default()
        },
        ..Default::default()
    };
    let w = voicecloak::audio_io::Waveform::new(samples, 16000).unwrap();
    let lib = voicecloak::attack::protect_utterance(&w, &ws, &opts).unwrap();
    let snr: f64 = stdout
        .split("snr=")
        .nth(1)
        .unwrap()
        .split_whitespace()
        .next()
        .unwrap()
        .parse()
        .unwrap();
    // C's sin() may differ from Rust's in the last ulp, so compare loosely
    assert!(
        (snr - lib.report.snr_db.unwrap()).abs() < 1e-6,
        "{snr} vs {:?}",
        lib.report.snr_db
    );
}
