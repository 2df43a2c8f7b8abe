use sparse_uq::config::ExperimentConfig;
use sparse_uq::diagnostics::relative_error;
use sparse_uq::inference::PosteriorVariant;
use sparse_uq::io::{read_chain, read_ensemble, write_chain, write_ensemble};
use sparse_uq::pipeline::{chain_seed, data_seed, prepare, run_variant, Problem};

fn small() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.signal.n = 40;
    cfg.noise.j = 8;
    cfg.noise.sigmas = vec![2.0];
    cfg.cv.k = 4;
    cfg.cv.m_train = 4;
    cfg.sampler.n_iter = 1000;
    cfg
}

#[test]
fn saved_ensemble_and_chain_reload_exactly() {
    let cfg = small();
    let problem = Problem::from_config(&cfg).unwrap();
    let ds = data_seed(3, 0, 0);
    let prep = prepare(&problem, &cfg, 2.0, ds, true).unwrap();
    let r = run_variant(&problem, &prep, &cfg, PosteriorVariant::MaskedL2, chain_seed(ds)).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let files = write_ensemble(dir.path(), "ens", &prep.ens).unwrap();
    assert_eq!(read_ensemble(&files[0], &files[1]).unwrap(), prep.ens);
    let files = write_chain(dir.path(), "c", &r.chain).unwrap();
    assert_eq!(read_chain(&files[0], &files[1]).unwrap(), r.chain);
}

#[test]
fn map_start_beats_naive_inversion() {
    let cfg = small();
    let problem = Problem::from_config(&cfg).unwrap();
    for seed in 0..3 {
        let ds = data_seed(seed, 0, 0);
        let prep = prepare(&problem, &cfg, 2.0, ds, false).unwrap();
        let naive: Vec<f64> = problem
            .op
            .inverse(&prep.ens.column(0))
            .unwrap()
            .iter()
            .map(|c| c.re)
            .collect();
        let r = run_variant(&problem, &prep, &cfg, PosteriorVariant::LaplaceL1, chain_seed(ds)).unwrap();
        let e_naive = relative_error(&naive, &problem.x_true).unwrap();
        let e_x0 = relative_error(&r.x0, &problem.x_true).unwrap();
        let e_mean = relative_error(&r.mean, &problem.x_true).unwrap();
        assert!(e_x0 < e_naive, "seed {seed}: start {e_x0} vs naive {e_naive}");
        assert!(e_mean < e_naive, "seed {seed}: mean {e_mean} vs naive {e_naive}");
    }
}
