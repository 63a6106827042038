//! Regenerates fixtures/eval_delhi_*.txt.
fn main() {
    let (d, t) = kilnwatch_core::fixtures::label_files_with_counts(317, 421, 632).unwrap();
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    std::fs::write(dir.join("eval_delhi_dets.txt"), d).unwrap();
    std::fs::write(dir.join("eval_delhi_truth.txt"), t).unwrap();
}
