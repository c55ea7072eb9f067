// The `mpsts` command pipeline driven in-process:
// `simulate` → `fit` → `report`, all in a temporary directory.

use mpsts::cli::{run_with_args, write_config};
use mpsts::simulator::CwExperimentConfig;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let root = dir.path();
    let config = CwExperimentConfig {
        duration: 1.0,
        apd_gain: 40.0,
        ..CwExperimentConfig::bench()
    };
    let config_path = root.join("config.json");
    write_config(&config_path, &config)?;
    let p = |name: &str| root.join(name).display().to_string();
    let argv = |words: &[&str]| -> Vec<String> {
        words
            .iter()
            .map(|w| match w.strip_prefix('@') {
                Some(rel) => p(rel),
                None => w.to_string(),
            })
            .collect()
    };

    // `@path` marks a path inside the temporary directory.
    let steps = [
        argv(&[
            "mpsts",
            "simulate",
            "--config",
            "@config.json",
            "--seed",
            "5",
            "--out",
            "@sim",
        ]),
        argv(&[
            "mpsts",
            "fit",
            "--data",
            "@sim/dataset.csv",
            "--out",
            "@fit",
        ]),
        argv(&[
            "mpsts",
            "report",
            "--fits",
            "@fit/fits.json",
            "--data",
            "@sim/dataset.csv",
            "--out",
            "@report",
        ]),
    ];
    for args in &steps {
        let code = run_with_args(args.iter());
        println!("{} -> exit {code}", args[1]);
        if code != 0 {
            return Err(format!("{} failed with exit code {code}", args[1]).into());
        }
    }
    print!("{}", std::fs::read_to_string(root.join("fit/report.csv"))?);
    let mut produced: Vec<_> = std::fs::read_dir(root.join("report"))?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect::<Result<_, _>>()?;
    produced.sort();
    println!("report files: {}", produced.join(", "));
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
