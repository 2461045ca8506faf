//! Helpers for driving the `arpoison` binary from integration tests.
// Each test target uses a subset of these.
#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_arpoison"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 stdout")
}

pub fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

pub fn stderr_line(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).lines().last().unwrap_or_default().to_string()
}

/// Deterministic toy CIFAR-format bytes: n records, labels cycling 0..10.
pub fn toy_cifar_bytes(n: usize, seed: u64) -> Vec<u8> {
    let mut state = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut next = move || {
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    let mut bytes = Vec::with_capacity(n * 3073);
    for i in 0..n {
        bytes.push((i % 10) as u8);
        for _ in 0..3072 {
            bytes.push((next() % 256) as u8);
        }
    }
    bytes
}

pub fn write_toy_cifar(path: &Path, n: usize, seed: u64) {
    std::fs::write(path, toy_cifar_bytes(n, seed)).expect("write toy dataset");
}

/// Toy CIFAR file with every pixel byte fixed to `value`.
pub fn write_flat_cifar(path: &Path, n: usize, value: u8) {
    let mut bytes = Vec::with_capacity(n * 3073);
    for i in 0..n {
        bytes.push((i % 10) as u8);
        bytes.extend(std::iter::repeat_n(value, 3072));
    }
    std::fs::write(path, bytes).expect("write flat dataset");
}
