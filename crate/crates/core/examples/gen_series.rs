//! Write the synthetic benchmark series used by the bundled profiles.
//!
//! Run with: cargo run -p ptbnn --example gen_series -- data

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use ptbnn::series;

fn main() -> std::io::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data".into()));
    fs::create_dir_all(&dir)?;
    let n = 1000;
    let sets: [(&str, Vec<f64>); 4] = [
        ("henon", series::henon(n, 1000)),
        ("lorenz", series::lorenz(n, 1000)),
        ("rossler", series::rossler(n, 1000)),
        ("mackey", series::mackey_glass(n, 1000)),
    ];
    for (name, values) in sets {
        let path = dir.join(format!("{name}.txt"));
        let mut f = fs::File::create(&path)?;
        for v in values {
            writeln!(f, "{v}")?;
        }
        println!("wrote {}", path.display());
    }
    Ok(())
}
