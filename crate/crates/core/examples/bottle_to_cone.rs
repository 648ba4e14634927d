//! Bottle-like input dreamed towards "cone" with ADD.
//!
//!     cargo run --release --example bottle_to_cone -- [model.ckpt] [out_dir]
//!
//! Without a checkpoint a small classifier is trained in-process first
//! (about half a minute). Writes the input, snapshots at iterations 0, 5 and
//! 10, the final cloud and the trace into `out_dir` (default
//! `bottle_to_cone/`), then prints the confidence trajectory and sparsity
//! numbers against a naive run with the same settings.

use std::error::Error;
use std::fs;
use std::path::PathBuf;

use pointdream::classifier::{load_checkpoint, train, Checkpoint, ModelConfig, TrainConfig};
use pointdream::dreamer::{add_run, deepdream_naive, DreamConfig};
use pointdream::io::{write_ply, write_xyz};
use pointdream::metrics::{compare_runs, confidence_trajectory, trajectory_csv, DEFAULT_EPS};
use pointdream::synthgen::{bottle_standin, build_dataset, DatasetSpec, ShapeKind};

fn quick_model() -> Result<Checkpoint, Box<dyn Error>> {
    let spec = DatasetSpec {
        per_class: 60,
        points: 512,
        ..DatasetSpec::default()
    };
    let data = build_dataset::<f32>(&spec)?;
    let cfg = TrainConfig {
        epochs: 12,
        ..TrainConfig::default()
    };
    eprintln!("training a quick model on {} clouds", data.train.len());
    let (model, _) = train(&data.train, &ModelConfig::default(), &cfg)?;
    Ok(Checkpoint {
        model,
        labels: ShapeKind::label_names(),
    })
}

fn main() -> Result<(), Box<dyn Error>> {
    let mut args = std::env::args().skip(1);
    let ck = match args.next() {
        Some(path) => load_checkpoint(&fs::read(path)?)?,
        None => quick_model()?,
    };
    let out_dir = PathBuf::from(args.next().unwrap_or_else(|| "bottle_to_cone".into()));
    fs::create_dir_all(&out_dir)?;

    let target = ck
        .class_index("cone")
        .ok_or("checkpoint has no cone class")?;
    let bottle = bottle_standin::<f32>(1024, 0);
    fs::write(out_dir.join("bottle.xyz"), write_xyz(&bottle))?;

    let cfg = DreamConfig {
        iters: 10,
        snapshot_every: 5,
        ..DreamConfig::new(target)
    };
    let (add, trace) = add_run(&ck.model, &bottle, &cfg)?;
    let (naive, _) = deepdream_naive(&ck.model, &bottle, &cfg)?;
    for s in &trace.snapshots {
        fs::write(
            out_dir.join(format!("bottle_cone_iter{:04}.ply", s.iter)),
            write_ply(&s.cloud),
        )?;
    }
    fs::write(out_dir.join("bottle_cone.ply"), write_ply(&add))?;
    fs::write(out_dir.join("bottle_naive.ply"), write_ply(&naive))?;
    fs::write(out_dir.join("bottle_cone.csv"), trace.to_csv())?;

    print!(
        "{}",
        trajectory_csv(&confidence_trajectory(&ck.model, &trace.snapshots, target)?)
    );
    let (rn, ra, verdict) = compare_runs(&bottle, &naive, &add, &ck.model, target, DEFAULT_EPS)?;
    println!(
        "mean nn distance naive {:.4} add {:.4}; coverage naive {:.3} add {:.3}; verdict {}",
        rn.mean_nn_distance,
        ra.mean_nn_distance,
        rn.coverage,
        ra.coverage,
        verdict.as_str()
    );
    println!("wrote {}", out_dir.display());
    Ok(())
}
