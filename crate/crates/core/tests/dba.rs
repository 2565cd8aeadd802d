mod oracles;

use celladapt::dba::{dba_average, dba_inertia, medoid, DbaParams};
use celladapt::dtw::DtwParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bumpy_members(seed: u64, count: usize, n: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = rng.random_range(4.0..20.0);
    (0..count)
        .map(|_| {
            let shift: f64 = rng.random_range(-3.0..3.0);
            let height: f64 = rng.random_range(0.6..1.2);
            (0..n)
                .map(|t| {
                    let d = t as f64 - center - shift;
                    height * (-d * d / 8.0).exp() + rng.random_range(-0.05..0.05)
                })
                .collect()
        })
        .collect()
}

#[test]
fn inertia_never_increases_over_random_sets() {
    let params = DbaParams::default();
    for seed in 0..50u64 {
        let count = 5 + (seed as usize * 7) % 16;
        let members = bumpy_members(seed, count, 24);
        let bary = dba_average(&members, None, &params).unwrap();
        for pair in bary.inertia_history.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "seed {seed}: {:?}", bary.inertia_history);
        }
        let med = medoid(&members, &params.dtw).unwrap();
        let medoid_inertia = dba_inertia(&members, &members[med], &params.dtw).unwrap();
        assert!(bary.inertia <= medoid_inertia + 1e-12, "seed {seed}");
        let recomputed: f64 = members
            .iter()
            .map(|m| oracles::full_matrix_dtw(m, &bary.values).powi(2))
            .sum();
        assert!((recomputed - bary.inertia).abs() < 1e-9);
    }
}

#[test]
fn identical_members_are_their_own_average() {
    let m = vec![0.0, 0.2, 0.9, 0.4, 0.1];
    let bary = dba_average(&[m.clone(), m.clone(), m.clone()], None, &DbaParams::default()).unwrap();
    assert_eq!(bary.values, m);
    assert_eq!(bary.inertia, 0.0);
}

#[test]
fn member_order_does_not_matter() {
    let members = bumpy_members(3, 9, 24);
    let params = DbaParams::default();
    let forward = dba_average(&members, None, &params).unwrap();
    let mut reversed = members.clone();
    reversed.reverse();
    let backward = dba_average(&reversed, None, &params).unwrap();
    for (a, b) in forward.values.iter().zip(&backward.values) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn explicit_init_is_used() {
    let members = bumpy_members(5, 6, 24);
    let params = DbaParams { max_iter: 1, ..DbaParams::default() };
    let init = vec![0.5; 24];
    let bary = dba_average(&members, Some(&init), &params).unwrap();
    let start = dba_inertia(&members, &init, &DtwParams::default()).unwrap();
    assert_eq!(bary.inertia_history[0], start);
}

#[test]
fn rejects_bad_input() {
    let params = DbaParams::default();
    let empty: Vec<Vec<f64>> = Vec::new();
    assert!(dba_average(&empty, None, &params).is_err());
    assert!(dba_average(&[vec![1.0, 2.0], vec![1.0]], None, &params).is_err());
    assert!(dba_average(&[vec![1.0]], None, &DbaParams { max_iter: 0, ..params }).is_err());
}
