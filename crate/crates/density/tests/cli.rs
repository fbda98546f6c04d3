use std::fs;
use std::path::Path;
use std::process::Command;

use besov_core::rng::{open_unit, stream};
use besov_core::DensityOnGrid;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_besov-density"))
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

const CONFIG: &str = r#"
seed = 17
[basis]
family = "haar"
grid_level = 8
[prior]
regime = "truncated"
s = 2.0
l_max = 6
[mcmc]
iterations = 600
thinning = 5
[sample]
draws = 3
"#;

/// Reads a grid CSV written by the CLI back into a density.
fn read_density(path: &Path, grid_level: u32) -> DensityOnGrid {
    let text = fs::read_to_string(path).unwrap();
    let values: Vec<f64> = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with('x'))
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    let grid = besov_core::GridFunction::new(values, grid_level, 1).unwrap();
    DensityOnGrid::from_unnormalized(grid).unwrap()
}

#[test]
fn fit_on_uniform_data_recovers_uniform_density() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "fit.toml", CONFIG);
    let mut rng = stream(99);
    let data: String = (0..1000).map(|_| format!("{}\n", open_unit(&mut rng))).collect();
    let data = write(dir.path(), "data.txt", &data);
    let out = dir.path().join("fit");
    let status = bin()
        .args(["fit", "--config"])
        .arg(&config)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    for name in ["posterior_mean.csv", "posterior_mean_coefficients.txt", "chain.csv", "acceptance.csv"] {
        let text = fs::read_to_string(out.join(name)).unwrap();
        assert!(text.starts_with("# config_hash="), "{name}");
        assert!(text.lines().next().unwrap().ends_with("seed=17"), "{name}");
    }
    let mean = read_density(&out.join("posterior_mean.csv"), 8);
    let tv = besov_core::tv_distance(&mean, &DensityOnGrid::uniform(8, 1)).unwrap();
    assert!(tv < 0.1, "TV {tv}");
}

#[test]
fn sample_prior_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "prior.toml", CONFIG);
    let run = |out: &str, seed: &str| {
        let status = bin()
            .args(["sample-prior", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(dir.path().join(out))
            .args(["--seed", seed])
            .status()
            .unwrap();
        assert!(status.success());
    };
    run("a", "3");
    run("b", "3");
    run("c", "4");
    for k in 0..3 {
        let name = format!("draw_{k}.txt");
        let a = fs::read(dir.path().join("a").join(&name)).unwrap();
        assert_eq!(a, fs::read(dir.path().join("b").join(&name)).unwrap());
        assert_ne!(a, fs::read(dir.path().join("c").join(&name)).unwrap());
        assert!(dir.path().join("a").join(format!("draw_{k}_density.csv")).exists());
    }
}

#[test]
fn exit_codes_are_categorized() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", "[prior]\nregime = \"truncated\"\ns = 0.5\n");
    let out = bin()
        .args(["sample-prior", "--config"])
        .arg(&bad)
        .arg("--out")
        .arg(dir.path().join("x"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 3") && stderr.contains("s > d"), "{stderr}");

    // a healthy study passes even a zero exclusion cap
    let study = format!(
        "{CONFIG}[truth]\nkind = \"uniform\"\ns = 2.0\n[study]\nn_grid = [100, 200, 400]\nreplicates = 1\nmax_exclusion = 0.0\n"
    );
    let study = write(dir.path(), "study.toml", &study);
    let out_dir = dir.path().join("study");
    let status = bin()
        .args(["rate-study", "--config"])
        .arg(&study)
        .arg("--out")
        .arg(&out_dir)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    for name in ["records.csv", "medians.csv", "ratefit.csv", "timing.csv", "metadata.toml"] {
        assert!(out_dir.join(name).exists(), "{name}");
    }

    let data = write(dir.path(), "data.txt", "0.5\n2.0\n");
    let out = bin()
        .args(["fit", "--config"])
        .arg(&study)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(dir.path().join("y"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("1 of 2 points"));
}

#[test]
fn example_config_parses() {
    let text = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/example.toml")).unwrap();
    let config = besov_density::Config::parse(&text).unwrap();
    assert!(config.study_config(None).is_ok());
}
