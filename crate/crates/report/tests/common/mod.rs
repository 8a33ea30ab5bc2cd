//! Running the `basinscope` binary from tests.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn basinscope(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_basinscope"))
        .args(args)
        .output()
        .expect("the binary runs")
}

/// Every file under `root` by relative path.
pub fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// A small invocation of every subcommand. `run` is the output directory of
/// the `train` invocation, which the later ones read from.
pub fn small_invocations(run: &Path) -> Vec<(&'static str, Vec<String>)> {
    let manifest = run.join("manifest.txt").display().to_string();
    let ckpt = run.join("final.bscp").display().to_string();
    let data = ["--n-train", "60", "--n-test", "60", "--n-poison", "20"];
    let own = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let with_data = |xs: &[&str]| {
        let mut v = own(xs);
        v.extend(own(&data));
        v
    };
    let lenient = ["--max-epochs", "200", "--min-train-acc", "0", "--max-test-acc", "1"];
    let mut poison = own(&["poison", "--start", &ckpt, "--run", &manifest]);
    poison.extend(own(&lenient));
    let mut embed = own(&[
        "embed",
        "--run",
        &manifest,
        "--iterates",
        "2",
        "--bad-per-iterate",
        "1",
        "--pca",
        "3",
        "--perplexity",
        "2",
        "--tsne-iterations",
        "100",
    ]);
    embed.extend(own(&lenient));
    vec![
        (
            "train",
            with_data(&[
                "train",
                "--epochs",
                "40",
                "--checkpoint-every",
                "10",
                "--batch-size",
                "20",
            ]),
        ),
        ("poison", poison),
        (
            "slice ray",
            own(&["slice", "--ckpt", &ckpt, "--run", &manifest, "--resolution", "11"]),
        ),
        (
            "slice plane",
            own(&[
                "slice",
                "--ckpt",
                &ckpt,
                "--run",
                &manifest,
                "--mode",
                "plane",
                "--resolution",
                "5",
                "--range",
                "-0.5,0.5",
            ]),
        ),
        (
            "volume",
            own(&[
                "volume",
                "--ckpt",
                &ckpt,
                "--run",
                &manifest,
                "--directions",
                "40",
                "--cutoff",
                "5",
            ]),
        ),
        (
            "sweep",
            with_data(&[
                "sweep",
                "--betas",
                "0,0.5",
                "--max-epochs",
                "200",
                "--min-train-acc",
                "0",
                "--max-train-loss",
                "10",
                "--directions",
                "20",
                "--cutoff",
                "5",
            ]),
        ),
        ("embed", embed),
        (
            "boundary",
            own(&["boundary", "--ckpt", &ckpt, "--run", &manifest, "--resolution", "40"]),
        ),
        ("rings", own(&["rings", "--resolution", "40"])),
    ]
}
