use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use warpfilt::scale::partition_log_spectrum;

/// Smallest spread over every way of cutting `l` into `q` contiguous bands.
fn brute_force_spread(l: &[f64], q: usize) -> f64 {
    fn go(l: &[f64], q: usize, start: usize, areas: &mut Vec<f64>, best: &mut f64) {
        if q == 1 {
            areas.push(l[start..].iter().sum());
            let max = areas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = areas.iter().copied().fold(f64::INFINITY, f64::min);
            *best = best.min(max - min);
            areas.pop();
            return;
        }
        for end in start..=l.len() - q {
            areas.push(l[start..=end].iter().sum());
            go(l, q - 1, end + 1, areas, best);
            areas.pop();
        }
    }
    let mut best = f64::INFINITY;
    go(l, q, 0, &mut Vec::new(), &mut best);
    best
}

#[test]
fn partition_stays_within_one_bin_of_the_exhaustive_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..400 {
        let k = rng.random_range(4..=13);
        let q = rng.random_range(2..=k.min(5));
        let l: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..3.0)).collect();
        let part = partition_log_spectrum(&l, q).unwrap();

        assert_eq!(part.bands.len(), q);
        assert_eq!(part.bands[0].0, 0);
        assert_eq!(part.bands[q - 1].1, k - 1);
        for w in part.bands.windows(2) {
            assert_eq!(w[0].1 + 1, w[1].0);
        }

        let opt = brute_force_spread(&l, q);
        let bin_max = l.iter().copied().fold(0.0, f64::max);
        let spread = part.spread();
        assert!(spread + 1e-12 >= opt, "{l:?} q={q}: {spread} below optimum {opt}");
        assert!(spread <= opt.max(bin_max) + 1e-9, "{l:?} q={q}: spread {spread}, optimum {opt}, bin max {bin_max}");
    }
}

#[test]
fn flat_spectrum_splits_evenly() {
    for (k, q) in [(12, 3), (20, 4), (257, 20)] {
        let part = partition_log_spectrum(&vec![1.0; k], q).unwrap();
        for &(a, b) in &part.bands {
            let len = b - a + 1;
            assert!(len == k / q || len == k / q + 1, "{k} bins into {q}: band of {len}");
        }
    }
}
