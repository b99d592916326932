//! Compiles a C program against the generated header and the static library.

use std::path::{Path, PathBuf};
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include "baryvae.h"

int main(void) {
    double m1[] = {0.0}, s1[] = {1.0}, m2[] = {2.0}, s2[] = {3.0};
    BaryGaussian *a = NULL, *b = NULL, *wb = NULL;
    BaryMixture *mix = NULL;
    if (bary_gaussian_new(m1, s1, 1, &a) != BARY_STATUS_OK) return 10;
    if (bary_gaussian_new(m2, s2, 1, &b) != BARY_STATUS_OK) return 11;
    const BaryGaussian *members[] = {a, b};
    if (bary_wb_diag(members, NULL, 2, &wb) != BARY_STATUS_OK) return 12;
    double mean = 0.0, sigma = 0.0;
    bary_gaussian_mean(wb, &mean, 1);
    bary_gaussian_sigma(wb, &sigma, 1);
    if (bary_mwb(members, 2, NULL, &mix) != BARY_STATUS_OK) return 13;
    printf("%g %g %zu\n", mean, sigma, bary_mixture_len(mix));

    double bad[] = {-1.0};
    BaryGaussian *c = NULL;
    if (bary_gaussian_new(m1, bad, 1, &c) != BARY_STATUS_INVALID_ARGUMENT) return 14;
    if (bary_last_error_message() == NULL) return 15;

    bary_mixture_free(mix);
    bary_gaussian_free(wb);
    bary_gaussian_free(a);
    bary_gaussian_free(b);
    return 0;
}
"#;

fn target_profile_dir() -> PathBuf {
    // <target>/<profile>/deps/<test-binary>
    let exe = std::env::current_exe().expect("test binary path");
    exe.parent().and_then(Path::parent).expect("profile dir").to_path_buf()
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/baryvae.h")).unwrap();
    let source = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = source
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() > 20);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
}

#[test]
fn c_program_links_and_runs() {
    let lib = target_profile_dir().join("libbaryvae_ffi.a");
    assert!(lib.exists(), "static library not built at {}", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    let exe = dir.path().join("smoke");
    std::fs::write(&src, PROGRAM).unwrap();
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("running the C compiler");
    assert!(status.success(), "C compile failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout), "1 2 4\n");
}
