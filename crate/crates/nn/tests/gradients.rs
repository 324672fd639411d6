use proptest::prelude::*;
use stochdyn_nn::gradcheck::{check_target, CheckTarget};
use stochdyn_nn::Graph;

#[test]
fn every_component_matches_finite_differences() {
    for target in CheckTarget::ALL {
        for seed in 0..3 {
            let report = check_target(target, seed).unwrap();
            assert!(report.n_checked > 0);
            assert!(
                report.max_rel_error <= 1e-4,
                "{} seed {seed}: relative error {:.3e}",
                target.name(),
                report.max_rel_error
            );
        }
    }
}

/// Dense matrix of the linear map `x -> conv(x)` (bias zero), built one
/// basis vector at a time from the explicit sum over kernel taps.
fn dense_conv(l: usize, c: usize, co: usize, p: usize, r: usize, pad: usize, w: &[f64]) -> (usize, Vec<f64>) {
    let lo = (l + 2 * pad - p) / r + 1;
    let mut m = vec![0.0; lo * co * l * c];
    for j in 0..lo {
        for o in 0..co {
            for k in 0..p {
                let pos = (j * r + k) as isize - pad as isize;
                if pos < 0 || pos >= l as isize {
                    continue;
                }
                for ci in 0..c {
                    let row = j * co + o;
                    let col = pos as usize * c + ci;
                    m[row * l * c + col] += w[(k * c + ci) * co + o];
                }
            }
        }
    }
    (lo, m)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn conv_equals_dense_matrix(
        l in 1usize..=32,
        c in 1usize..=3,
        co in 1usize..=3,
        p in 1usize..=5,
        r in 1usize..=4,
        pad in 0usize..=2,
        seed in any::<u64>(),
    ) {
        prop_assume!(p <= l + 2 * pad);
        let mut state = seed | 1;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state % 2000) as f64 / 1000.0 - 1.0
        };
        let x: Vec<f64> = (0..l * c).map(|_| next()).collect();
        let w: Vec<f64> = (0..p * c * co).map(|_| next()).collect();
        let mut g = Graph::new(false);
        let xv = g.constant(&[1, l, c], x.clone()).unwrap();
        let wv = g.constant(&[p, c, co], w.clone()).unwrap();
        let bv = g.constant(&[co], vec![0.0; co]).unwrap();
        let y = g.conv1d(xv, wv, bv, r, pad).unwrap();
        let (lo, m) = dense_conv(l, c, co, p, r, pad, &w);
        prop_assert_eq!(g.shape(y), &[1, lo, co][..]);
        for (row, got) in g.value(y).iter().enumerate() {
            let want: f64 = (0..l * c).map(|k| m[row * l * c + k] * x[k]).sum();
            prop_assert!((got - want).abs() < 1e-12);
        }
    }
}
