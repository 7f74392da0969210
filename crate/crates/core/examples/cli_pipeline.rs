//! The whole command-line workflow, run in-process on the bundled fixtures:
//! instrument, tune against a cost model, report, train and predict.

use std::path::Path;

use pdttagger::cli::run_cli;

fn pdttagger(args: &[&str]) {
    println!("$ pdttagger {}", args.join(" "));
    let mut out = std::io::stdout();
    let mut err = std::io::stderr();
    let code = run_cli(
        std::iter::once("pdttagger").chain(args.iter().copied()),
        &mut out,
        &mut err,
    );
    assert_eq!(code, 0, "command failed");
}

fn main() {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let f = |rel: &str| fixtures.join(rel).to_string_lossy().into_owned();
    let work = tempfile::tempdir().unwrap();
    let w = |rel: &str| work.path().join(rel).to_string_lossy().into_owned();

    pdttagger(&["regions", &f("src/sparselu.c")]);
    pdttagger(&[
        "instrument",
        &f("src/sparselu.c"),
        &f("src/health.c"),
        "--out-dir",
        &w("inst"),
    ]);
    pdttagger(&[
        "tune",
        "--model",
        &f("strassen.model"),
        "--cores",
        "32",
        "--plan-out",
        &w("plan"),
        "--trials-out",
        &w("trials"),
    ]);
    pdttagger(&[
        "run",
        "--model",
        &f("strassen.model"),
        "--plan",
        &w("plan"),
        "--out-dir",
        &w("run"),
    ]);
    pdttagger(&["report", "--result", &w("run/pdttagger.txt")]);
    pdttagger(&[
        "train",
        "--data",
        &f("bots.dataset"),
        "--max-depth",
        "none",
        "--out",
        &w("bots.tree"),
    ]);
    pdttagger(&[
        "predict",
        "--tree",
        &w("bots.tree"),
        "--result-file",
        &f("sample.pdtresult"),
        "--cores",
        "32",
    ]);
}
