use std::path::PathBuf;

use qread_core::sweep::{run_sweep, SweepConfig};

fn recipe_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../recipes")
}

#[test]
fn every_recipe_completes() {
    for name in ["fig2a", "fig2b", "fig2c", "fig2d", "fig4a", "fig4b", "fig4c"] {
        let cfg = SweepConfig::from_path(&recipe_dir().join(format!("{name}.toml"))).unwrap();
        let rows = run_sweep(&cfg).unwrap();
        let ok = rows.iter().filter(|r| r.is_ok()).count();
        assert!(ok as f64 >= 0.95 * rows.len() as f64, "{name}: {ok}/{} rows ok", rows.len());
        for r in rows.iter().filter(|r| r.is_ok()) {
            assert!(r.gain_opt <= r.gain_phc + 1e-12, "{name}: gain_opt > gain_phc at τ0={} N={}", r.tau0, r.n);
        }
    }
}

#[test]
fn experimental_recipes_span_the_high_transmissivity_window() {
    for (name, n) in [("fig4a", 1.15e5), ("fig4b", 3.1e5), ("fig4c", 5.2e5)] {
        let cfg = SweepConfig::from_path(&recipe_dir().join(format!("{name}.toml"))).unwrap();
        let pts = cfg.points().unwrap();
        assert!(pts.len() >= 20, "{name}");
        assert!(pts.iter().all(|&(t, e)| (0.990..1.0).contains(&t) && e == n), "{name}");
        assert_eq!(pts.first().unwrap().0, 0.990);
    }
}

#[test]
fn full_flag_refines_the_grid() {
    let mut cfg = SweepConfig::from_path(&recipe_dir().join("fig2a.toml")).unwrap();
    assert_eq!(cfg.points().unwrap().len(), 40 * 40);
    cfg.full = true;
    assert_eq!(cfg.points().unwrap().len(), 200 * 200);
}
