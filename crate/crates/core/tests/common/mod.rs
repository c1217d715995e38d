//! Helpers shared by the integration tests: synthetic pairs written
//! through the public writer and a brute-force ranking oracle.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;

use ftscope::tensor_store::{Checkpoint, CheckpointWriter, Dtype, TensorSpec};
use half::{bf16, f16};

pub struct Pair {
    pub pre: PathBuf,
    pub ft: PathBuf,
    /// (name, stored pre values, stored ft values), sorted by name.
    pub tensors: Vec<(String, Vec<f64>, Vec<f64>)>,
}

fn round_trip(dtype: Dtype, v: f64) -> f64 {
    match dtype {
        Dtype::F32 => v as f32 as f64,
        Dtype::F16 => f16::from_f64(v).to_f64(),
        Dtype::BF16 => bf16::from_f64(v).to_f64(),
    }
}

fn encode(dtype: Dtype, vals: &[f64]) -> Vec<u8> {
    match dtype {
        Dtype::F32 => vals.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect(),
        Dtype::F16 => vals.iter().flat_map(|v| f16::from_f64(*v).to_le_bytes()).collect(),
        Dtype::BF16 => vals.iter().flat_map(|v| bf16::from_f64(*v).to_le_bytes()).collect(),
    }
}

/// Write `pre.safetensors` / `ft.safetensors` (with `tag` prefix) in `dir`.
pub fn write_pair(dir: &Path, tag: &str, tensors: Vec<(String, Dtype, Vec<f64>, Vec<f64>)>) -> Pair {
    let pre = dir.join(format!("{tag}pre.safetensors"));
    let ft = dir.join(format!("{tag}ft.safetensors"));
    let specs: Vec<TensorSpec> = tensors
        .iter()
        .map(|(n, d, p, _)| TensorSpec::new(n.clone(), *d, vec![p.len() as u64]))
        .collect();
    let mut pw = CheckpointWriter::create(&pre, specs.clone(), None).unwrap();
    let mut fw = CheckpointWriter::create(&ft, specs, None).unwrap();
    let mut stored = Vec::new();
    for (name, dtype, p, f) in tensors {
        pw.write_bytes(&encode(dtype, &p)).unwrap();
        fw.write_bytes(&encode(dtype, &f)).unwrap();
        stored.push((
            name,
            p.iter().map(|v| round_trip(dtype, *v)).collect(),
            f.iter().map(|v| round_trip(dtype, *v)).collect(),
        ));
    }
    pw.finish().unwrap();
    fw.finish().unwrap();
    stored.sort_by(|a, b| a.0.cmp(&b.0));
    Pair { pre, ft, tensors: stored }
}

pub fn rel(p: f64, s: f64) -> f64 {
    match (p == 0.0, s == 0.0) {
        (true, true) => 0.0,
        (true, false) => f64::INFINITY,
        _ => ((s - p) / p).abs(),
    }
}

/// All parameters in ranking order: r descending, then name, then index.
pub fn ranked(pair: &Pair) -> Vec<(f64, String, u64)> {
    let mut all: Vec<(f64, String, u64)> = Vec::new();
    for (name, p, f) in &pair.tensors {
        for (i, (a, b)) in p.iter().zip(f).enumerate() {
            all.push((rel(*a, *b), name.clone(), i as u64));
        }
    }
    all.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    all
}

/// floor(num/den * n) in integers.
pub fn top_count(num: u64, den: u64, n: u64) -> usize {
    (num as u128 * n as u128 / den as u128) as usize
}

pub fn top_set(ranked: &[(f64, String, u64)], k: usize) -> BTreeSet<(String, u64)> {
    ranked[..k].iter().map(|(_, n, i)| (n.clone(), *i)).collect()
}

pub fn payload(ckpt: &Checkpoint, name: &str) -> Vec<u8> {
    let rec = ckpt.get(name).unwrap();
    let mut buf = vec![0u8; rec.len as usize];
    ckpt.read_data_at(&mut buf, rec.offset).unwrap();
    buf
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_ftscope")
}

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
    /// Peak resident set of the child, bytes.
    pub max_rss: u64,
}

/// Run the binary and collect its own peak RSS with `wait4`.
pub fn run(args: &[&str]) -> Run {
    use std::io::Read;
    let mut child = Command::new(bin())
        .args(args)
        .stdout(std::process::Stdio::piped())
        .stderr(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    let mut out = child.stdout.take().unwrap();
    let mut err = child.stderr.take().unwrap();
    let t_out = std::thread::spawn(move || {
        let mut s = String::new();
        out.read_to_string(&mut s).unwrap();
        s
    });
    let t_err = std::thread::spawn(move || {
        let mut s = String::new();
        err.read_to_string(&mut s).unwrap();
        s
    });
    let mut status = 0i32;
    let mut usage: libc::rusage = unsafe { std::mem::zeroed() };
    let pid = child.id() as libc::pid_t;
    let rc = unsafe { libc::wait4(pid, &mut status, 0, &mut usage) };
    assert_eq!(rc, pid, "wait4 failed");
    let code = if libc::WIFEXITED(status) { libc::WEXITSTATUS(status) } else { -1 };
    Run {
        code,
        stdout: t_out.join().unwrap(),
        stderr: t_err.join().unwrap(),
        max_rss: usage.ru_maxrss as u64 * 1024,
    }
}
