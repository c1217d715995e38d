mod common;

use std::io::Read;

use ftscope::tensor_store::{parse_header_from, Checkpoint, CheckpointWriter, Dtype, TensorSpec};

struct Counting<R> {
    inner: R,
    read: u64,
}

impl<R: Read> Read for Counting<R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.read += n as u64;
        Ok(n)
    }
}

fn rchar() -> Option<u64> {
    let text = std::fs::read_to_string("/proc/self/io").ok()?;
    text.lines().find_map(|l| l.strip_prefix("rchar: ")?.trim().parse().ok())
}

fn thousand_tensor_file(dir: &std::path::Path) -> std::path::PathBuf {
    let path = dir.join("many.safetensors");
    let specs: Vec<TensorSpec> = (0..1000)
        .map(|i| TensorSpec::new(format!("t.{i:04}"), Dtype::F32, vec![64, 64]))
        .collect();
    let mut w = CheckpointWriter::create(&path, specs, None).unwrap();
    let block = vec![7u8; 64 * 64 * 4];
    for _ in 0..1000 {
        w.write_bytes(&block).unwrap();
    }
    w.finish().unwrap();
    path
}

#[test]
fn header_parse_reads_only_the_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = thousand_tensor_file(dir.path());
    let file_len = std::fs::metadata(&path).unwrap().len();
    let mut f = std::fs::File::open(&path).unwrap();
    let mut n = [0u8; 8];
    f.read_exact(&mut n).unwrap();
    let header_len = u64::from_le_bytes(n);

    let mut counting = Counting {
        inner: std::fs::File::open(&path).unwrap(),
        read: 0,
    };
    let records = parse_header_from(&mut counting, file_len).unwrap();
    assert_eq!(records.len(), 1000);
    assert_eq!(counting.read, 8 + header_len);
    assert!(counting.read < file_len / 100);
}

#[test]
fn open_does_not_touch_payloads() {
    let dir = tempfile::tempdir().unwrap();
    let path = thousand_tensor_file(dir.path());
    let file_len = std::fs::metadata(&path).unwrap().len();
    let Some(before) = rchar() else {
        eprintln!("no /proc/self/io; skipping");
        return;
    };
    let ckpt = Checkpoint::open(&path).unwrap();
    let after = rchar().unwrap();
    assert_eq!(ckpt.records().len(), 1000);
    // other test threads may read concurrently, so bound instead of equate
    assert!(after - before < file_len / 10, "read {} of {file_len} bytes", after - before);
}

#[test]
fn diff_rank_memory_does_not_grow_with_tensor_size() {
    let dir = tempfile::tempdir().unwrap();
    let mk = |tag: &str, n: usize| {
        let pre: Vec<f64> = (0..n).map(|i| 1.0 + (i % 1000) as f64 * 1e-3).collect();
        let ft: Vec<f64> = pre.iter().enumerate().map(|(i, p)| p * (1.0 + (i % 7) as f64 * 1e-2)).collect();
        common::write_pair(dir.path(), tag, vec![("w".into(), Dtype::F32, pre, ft)])
    };
    let small = mk("s", 100_000);
    let large = mk("l", 10_000_000);
    let rss = |p: &common::Pair| {
        let r = common::run(&[
            "diff-rank",
            "--threads",
            "1",
            "--chunk-elems",
            "65536",
            "--pre",
            p.pre.to_str().unwrap(),
            "--ft",
            p.ft.to_str().unwrap(),
        ]);
        assert_eq!(r.code, 0, "{}", r.stderr);
        r.max_rss
    };
    let (a, b) = (rss(&small), rss(&large));
    // one large tensor pair widened in memory would be 160 MB
    assert!(b < a + (24 << 20), "small {a} large {b}");
}
