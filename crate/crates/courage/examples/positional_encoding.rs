//! Prints the sinusoidal position encoding used to stamp day order onto the
//! one-week input window.
//!
//!     cargo run -p courage --example positional_encoding

use courage::model::positional_encoding;

fn main() -> courage::Result<()> {
    let window_len = 7;
    let model_dim = 32;
    let pe = positional_encoding(window_len, model_dim)?;

    println!("encoding for a {window_len}-day window at model dimension {model_dim}");
    println!("(rows are days; showing the first 8 of {model_dim} channels)\n");
    for day in 0..window_len {
        let row: Vec<String> = pe.row(day)[..8].iter().map(|v| format!("{v:+.3}")).collect();
        println!("day {day}: [{} ...]", row.join(", "));
    }

    println!("\nday 0 alternates sin(0)=0 and cos(0)=1: {:?}", &pe.row(0)[..6]);
    println!(
        "day 1, channel pair 0: (sin 1, cos 1) = ({:.6}, {:.6})",
        pe.get(1, 0),
        pe.get(1, 1)
    );
    let (min, max) = pe
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    println!("all entries stay in [-1, 1]: min {min:.6}, max {max:.6}");

    println!("\nan odd model dimension is rejected:");
    println!("  {}", positional_encoding(7, 5).unwrap_err());
    Ok(())
}
