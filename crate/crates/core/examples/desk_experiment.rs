//! Trains the supervised baseline and the adversarial model on a synthetic
//! corpus for several seeds and prints test F1.
//!
//! `cargo run --release --example desk_experiment -- [seeds] [epochs] [--aug] [--config FILE]`
//!
//! `--config` reads TOML overrides merged key by key onto the default
//! experiment; seeds and epochs given on the command line still win.

use pasadv::experiment::DeskExperiment;
use pasadv::training::TrainMode;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().collect();
    let mut e = match args.iter().position(|a| a == "--config") {
        Some(i) => {
            let text = std::fs::read_to_string(&args[i + 1]).expect("config readable");
            let mut base = toml::Value::try_from(DeskExperiment::default()).expect("default serializes");
            merge(&mut base, toml::Value::Table(toml::from_str(&text).expect("valid TOML")));
            base.try_into().expect("valid experiment config")
        }
        None => DeskExperiment::default(),
    };
    if let Some(n) = args.get(1).and_then(|s| s.parse::<u64>().ok()) {
        e.seeds = (1..=n).collect();
    }
    if let Some(n) = args.get(2).and_then(|s| s.parse().ok()) {
        e.schedule.adversarial_epochs = n;
    }
    if args.iter().any(|a| a == "--aug") {
        e.modes.push(TrainMode::GenAug);
    }
    let report = e.run().expect("experiment failed");
    for r in &report.runs {
        println!(
            "{}\tseed {}\tzero {:.4}\tcase {:.4}\tbest epoch {}\t{:.0}s",
            r.mode, r.seed, r.test.zero.overall.f1, r.test.case.overall.f1, r.best_epoch, r.seconds
        );
    }
    for &mode in &e.modes {
        println!("{mode}\tmedian zero {:.4}", report.median_zero_f1(mode).unwrap_or(f64::NAN));
    }
    println!("total {:.0}s", report.seconds);
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}
