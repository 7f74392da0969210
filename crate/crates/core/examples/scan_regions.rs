//! Lists the OpenMP regions in a C file and narrows them with a selection
//! config. Pass a path to scan your own file.

use pdttagger::scan::{parse_config, scan_source, select_regions};

const DEMO: &str = r#"#include <stdio.h>

void fill(double *a, int n)
{
    #pragma omp parallel for schedule(static)
    for (int i = 0; i < n; i++)
        a[i] = i;
}

int main(void)
{
    double a[64];
    /* #pragma omp parallel inside a comment is ignored */
    fill(a, 64);
    #pragma omp parallel
    {
        #pragma omp single
        printf("%f\n", a[63]);
    }
    return 0;
}
"#;

fn main() {
    let (file, text) = match std::env::args().nth(1) {
        Some(path) => {
            let text = std::fs::read_to_string(&path).expect("readable source");
            (path, text)
        }
        None => ("demo.c".to_string(), DEMO.to_string()),
    };
    let regions = scan_source(&text, &file).expect("scannable source");
    for r in &regions {
        println!(
            "{:>2} {:<13} {}:{}-{} in {}{}",
            r.id,
            r.kind.as_str(),
            r.file,
            r.block_begin,
            r.block_end,
            if r.function.is_empty() { "?" } else { &r.function },
            if r.sole_statement { " (sole statement)" } else { "" }
        );
    }

    // Keep only regions inside `main`.
    let config = parse_config("main").unwrap();
    let sel = select_regions(&regions, &config);
    let ids: Vec<u32> = sel.regions.iter().map(|r| r.id).collect();
    println!("selected by `main`: {ids:?}");
}
