#![allow(dead_code)]

use std::path::Path;

use adashare_core::synth::{SynthBenchConfig, SynthKind};
use adashare_core::trainer::{BaselineKind, TrainConfig};
use adashare_workbench::{Variant, WorkbenchConfig};

/// A plan small enough to run end to end in a second or two.
pub fn tiny(seeds: &[u64]) -> WorkbenchConfig {
    let mut bench = SynthBenchConfig {
        input_dim: 6,
        trunk_width: 8,
        generator_width: 6,
        n_train: 160,
        n_val: 40,
        n_test: 40,
        ..SynthBenchConfig::preset_default()
    };
    bench.tasks[1].kind = SynthKind::Classification;
    let mut train = TrainConfig::with_defaults(bench.tasks.len(), 60, 20).unwrap();
    train.batch_size = 16;
    train.eval_every = 10;
    train.sample_count = 3;
    WorkbenchConfig {
        bench,
        blocks: 4,
        train,
        seeds: seeds.to_vec(),
        variants: vec![],
    }
}

pub fn with_variants(mut c: WorkbenchConfig) -> WorkbenchConfig {
    let mut no_cur = Variant::named("no_curriculum");
    no_cur.curriculum = Some(false);
    let mut r1 = Variant::named("random1");
    r1.baseline = Some(BaselineKind::Random1);
    let mut r2 = Variant::named("random2");
    r2.baseline = Some(BaselineKind::Random2);
    c.variants = vec![no_cur, r1, r2];
    c
}

/// Every file under `root` with its bytes, sorted by relative path.
pub fn snapshot(root: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}
