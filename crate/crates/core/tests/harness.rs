use std::fs;

use chaosrl::harness::{run_experiment, Manifest, RunConfig};

/// Independent recomputation: parse the per-seed logs by hand, interpolate
/// linearly onto the grid, and take the mean and order-statistic quantiles.
fn recompute(run: &std::path::Path, seeds: &[u64], grid: &[usize]) -> Vec<[f64; 3]> {
    let logs: Vec<Vec<(f64, f64)>> = seeds
        .iter()
        .map(|s| {
            fs::read_to_string(run.join(format!("seed_{s}/train_log.csv")))
                .unwrap()
                .lines()
                .skip(1)
                .map(|l| {
                    let f: Vec<&str> = l.split(',').collect();
                    (f[0].parse().unwrap(), f[2].parse().unwrap())
                })
                .collect()
        })
        .collect();
    grid.iter()
        .map(|&g| {
            let x = g as f64;
            let mut vals: Vec<f64> = logs
                .iter()
                .map(|log| {
                    if x <= log[0].0 {
                        return log[0].1;
                    }
                    if x >= log[log.len() - 1].0 {
                        return log[log.len() - 1].1;
                    }
                    let k = log.iter().position(|p| p.0 > x).unwrap();
                    let ((x0, y0), (x1, y1)) = (log[k - 1], log[k]);
                    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
                })
                .collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let q = |p: f64| {
                let h = (vals.len() - 1) as f64 * p;
                let lo = h.floor() as usize;
                let hi = (lo + 1).min(vals.len() - 1);
                vals[lo] + (h - lo as f64) * (vals[hi] - vals[lo])
            };
            [vals.iter().sum::<f64>() / vals.len() as f64, q(0.1), q(0.9)]
        })
        .collect()
}

#[test]
fn six_seed_aggregate_matches_recomputation_from_logs() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!(
        "agent = \"dqn\"\nbase_seed = 20\ntotal_steps = 2000\neval_every = 250\noutput_dir = \"{}\"\n\
         [env]\nname = \"logistic\"\n[agent_config]\nwarmup_steps = 200\nhidden = [8]\n",
        tmp.path().display()
    );
    let cfg = RunConfig::parse(&text, &[]).unwrap();
    assert_eq!(cfg.seeds.len(), 6);
    let rep = run_experiment(&cfg).unwrap();
    assert!(rep.manifest.seeds.iter().all(|s| s.ok));
    let grid: Vec<usize> = (1..=8).map(|k| k * 250).collect();
    assert_eq!(rep.curve.env_steps, grid);
    let oracle = recompute(tmp.path(), &cfg.seeds, &grid);
    for (i, o) in oracle.iter().enumerate() {
        for (got, want) in [rep.curve.mean_return[i], rep.curve.q10[i], rep.curve.q90[i]].iter().zip(o) {
            assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "row {i}: {got} vs {want}");
        }
        assert!(rep.curve.q10[i] <= rep.curve.q90[i]);
    }
    // the file holds the same numbers
    let csv = fs::read_to_string(tmp.path().join("aggregate.csv")).unwrap();
    let row: Vec<f64> = csv.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(row[1], rep.curve.mean_return[0]);
}

#[test]
fn manifest_reparses_to_the_resolved_config() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!(
        "name = \"m\"\nagent = \"qrdqn\"\nseeds = [3]\ntotal_steps = 0\noutput_dir = \"{}\"\n[env]\nname = \"ikeda\"\n\
         obs_noise_sigma = 0.01\n[[probes]]\nkind = \"surface\"\nbins = 9\n",
        tmp.path().display()
    );
    let cfg = RunConfig::parse(&text, &[]).unwrap();
    run_experiment(&cfg).unwrap();
    let m = Manifest::load(&tmp.path().join("manifest.toml")).unwrap();
    assert_eq!(m.config, cfg);
    assert_eq!(RunConfig::parse(&m.config.to_toml(), &[]).unwrap(), cfg);
    assert_eq!(m.code_version, env!("CARGO_PKG_VERSION"));
}

#[test]
fn one_bad_seed_does_not_stop_the_others() {
    // a surface probe on a DQN checkpoint errors inside each seed after
    // training has finished; every seed is still attempted and recorded
    let tmp = tempfile::tempdir().unwrap();
    let text = format!(
        "agent = \"dqn\"\nseeds = [1, 2, 3]\ntotal_steps = 300\noutput_dir = \"{}\"\n[env]\nname = \"logistic\"\n\
         [agent_config]\nwarmup_steps = 100\nhidden = [4]\n[[probes]]\nkind = \"surface\"\n",
        tmp.path().display()
    );
    let rep = run_experiment(&RunConfig::parse(&text, &[]).unwrap()).unwrap();
    assert_eq!(rep.manifest.seeds.len(), 3);
    for s in &rep.manifest.seeds {
        assert!(!s.ok);
        assert!(s.error.as_deref().unwrap().starts_with("invalid_argument"));
        assert!(tmp.path().join(format!("seed_{}/checkpoint_final.json", s.seed)).is_file());
    }
    let m = fs::read_to_string(tmp.path().join("manifest.toml")).unwrap();
    assert_eq!(m.matches("ok = false").count(), 3);
}
