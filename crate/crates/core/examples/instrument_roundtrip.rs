//! Instruments a small program, prints the result and its manifest, then
//! shows that stripping restores the original and that instrumenting twice
//! is refused.

use pdttagger::rewrite::{emit_manifest, instrument, strip, InstrumentationOptions};
use pdttagger::scan::scan_source;

const SOURCE: &str = r#"#include <stdio.h>

int main(void)
{
    int sum = 0;
    #pragma omp parallel for reduction(+:sum)
    for (int i = 0; i < 100; i++)
        sum += i;
    if (sum > 0)
        #pragma omp parallel
        printf("hello\n");
    return sum == 4950 ? 0 : 1;
}
"#;

fn main() {
    let opts = InstrumentationOptions::default();
    let regions = scan_source(SOURCE, "demo.c").unwrap();
    let (text, manifest) = instrument(SOURCE, &regions, &opts).unwrap();
    println!("{text}");
    println!("--- manifest\n{}", emit_manifest(&manifest));
    println!("--- pdt_hooks.h\n{}", opts.hook_header());

    assert_eq!(strip(&text, &opts), SOURCE);
    println!("strip restores the original: ok");

    let again = scan_source(&text, "demo.c").unwrap();
    match instrument(&text, &again, &opts) {
        Err(e) => println!("second pass refused: {e}"),
        Ok(_) => unreachable!("instrumented text is recognized"),
    }
}
