use crowdmap::geomodel::{fit_geomodel, GeoModelConfig};
use crowdmap::similarity::SimilarityConfig;
use crowdmap::simulator::{generate_environment, generate_trajectories, Extent, RadioParams, WalkParams};
use crowdmap::Trajectory;

#[test]
fn disjoint_halves_give_similar_distance_curves() {
    let env = generate_environment(11, Extent { width: 100.0, height: 50.0 }, 1, 30, RadioParams::default()).unwrap();
    let sims = generate_trajectories(&env, &WalkParams::default(), 11).unwrap();
    let (even, odd): (Vec<_>, Vec<_>) = sims.iter().enumerate().partition(|(i, _)| i % 2 == 0);
    let half = |v: Vec<(usize, &crowdmap::simulator::SimTrajectory)>| -> Vec<Trajectory> {
        v.into_iter().map(|(_, s)| s.trajectory.clone()).collect()
    };
    let cfg = GeoModelConfig::default();
    let simcfg = SimilarityConfig::default();
    let (a, _) = fit_geomodel(&half(even), &simcfg, &cfg).unwrap();
    let (b, _) = fit_geomodel(&half(odd), &simcfg, &cfg).unwrap();
    for k in 0..8 {
        let s = 0.61 + 0.05 * k as f64;
        let (ma, mb) = (a.predict(s).mu, b.predict(s).mu);
        let rel = (ma - mb).abs() / ma.min(mb);
        assert!(rel < 0.3, "s = {s}: {ma:.2} vs {mb:.2}");
    }
}
