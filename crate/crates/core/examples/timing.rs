use std::time::Instant;

use boundseg_core::data::{make_splits, DatasetBundle};
use boundseg_core::derive_seed;
use boundseg_core::evaluation::{trimap_curve, TrimapMode};
use boundseg_core::graph::{Architecture, TopologyKind};
use boundseg_core::phantom::{generate_phantom, Arrangement, PhantomConfig};
use boundseg_core::training::{predict_labels, train_full, TrainConfig};
use boundseg_core::volume::VolumeShape;

fn bundle(count: usize, side: usize, organs: usize, counts: (usize, usize, usize), seed: u64, blur: f64, noise: f64, radii: (f64, f64)) -> DatasetBundle {
    let mut samples = Vec::new();
    for i in 0..count {
        let mut cfg = PhantomConfig::for_shape(VolumeShape::cube(side), organs, 0);
        cfg.seed = derive_seed(seed, i as u64);
        cfg.edge_blur_sigma = blur;
        cfg.noise_sigma = noise;
        cfg.arrangement = Arrangement::AdjacentPairs;
        for (oi, o) in cfg.organs.iter_mut().enumerate() {
            o.radius_range = radii;
            // similar intensities within a pair, distinct across pairs
            o.intensity_mean = 0.45 + 0.3 * (oi / 2) as f64 + 0.1 * (oi % 2) as f64;
        }
        let mut s = generate_phantom(&cfg).unwrap();
        s.id = format!("p{i:02}");
        samples.push(s);
    }
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let split = make_splits(&ids, counts, seed).unwrap();
    DatasetBundle::new(samples, split).unwrap()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(40);
    let batch: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let base: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(4);
    let lambda: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(1.0);

    let organs: usize = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(4);
    let blur: f64 = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(1.2);
    let r_lo: f64 = args.get(8).and_then(|s| s.parse().ok()).unwrap_or(6.0);
    let r_hi: f64 = args.get(9).and_then(|s| s.parse().ok()).unwrap_or(10.0);
    let data = bundle(20, 48, organs, (14, 3, 3), 42, blur, 0.05, (r_lo, r_hi));
    let mut base_cfg = TrainConfig {
        arch: Architecture::Unet,
        topology: TopologyKind::Baseline,
        base_features: base,
        depth: 3,
        epochs,
        batch_size: batch,
        seed: 1,
        ..TrainConfig::default()
    };
    base_cfg.optimizer.learning_rate = lr;

    for (name, topo, lam) in [
        ("baseline", TopologyKind::Baseline, 0.0),
        ("tsol", TopologyKind::Tsol, lambda),
    ] {
        let cfg = TrainConfig { topology: topo, lambda: lam, ..base_cfg.clone() };
        let t0 = Instant::now();
        let (record, mut net) = train_full(&cfg, &data).unwrap();
        let dt = t0.elapsed().as_secs_f64();
        let val = data.val_samples();
        let preds: Vec<_> = val
            .iter()
            .map(|s| predict_labels(&mut net, &s.image, &s.labels.class_table).unwrap())
            .collect();
        let pairs: Vec<_> = preds.iter().zip(val.iter()).map(|(p, s)| (p, &s.labels)).collect();
        let curve = trimap_curve(&pairs, &[5], TrimapMode::LabelAgreement).unwrap();
        let traj: Vec<String> = record.epochs.iter().step_by(5).map(|e| format!("{:.3}", e.val_dice)).collect();
        println!(
            "{name}: {:.0}s best {:.4} (ep {}) trimap@5 {:.4} | traj {}",
            dt, record.best_val_dice, record.best_epoch, curve[0].mean_dice, traj.join(" ")
        );
    }
}
