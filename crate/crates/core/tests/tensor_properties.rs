use lsrtr::lsr::{LsrParams, LsrRank};
use lsrtr::oracle::{kron_reconstruct, relative_error, tucker_direct};
use lsrtr::rng::{standard_normal_matrix, standard_normal_tensor, Substream};
use lsrtr::tensor::{inner, DenseTensor, Matrix, Shape};
use proptest::prelude::*;

fn dims(max_order: usize, max_dim: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1..=max_dim, 1..=max_order)
}

fn tensor(d: &[usize], seed: u64) -> DenseTensor {
    standard_normal_tensor(&mut Substream::new(seed).rng(0), &Shape::new(d.to_vec()).unwrap())
}

/// Column of the mode-`n` unfolding holding the multi-index `idx`, written
/// out from the textbook definition.
fn unfold_column(d: &[usize], idx: &[usize], n: usize) -> usize {
    let mut col = 0;
    let mut stride = 1;
    for k in 0..d.len() {
        if k == n {
            continue;
        }
        col += idx[k] * stride;
        stride *= d[k];
    }
    col
}

fn multi_index(d: &[usize], mut lin: usize) -> Vec<usize> {
    d.iter()
        .map(|&m| {
            let i = lin % m;
            lin /= m;
            i
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unfold_matches_index_formula_and_folds_back(d in dims(4, 5), seed in any::<u64>()) {
        let t = tensor(&d, seed);
        for n in 0..d.len() {
            let m = t.unfold(n).unwrap();
            prop_assert_eq!(m.rows(), d[n]);
            for lin in 0..t.vec().len() {
                let idx = multi_index(&d, lin);
                prop_assert_eq!(m.get(idx[n], unfold_column(&d, &idx, n)), t.get(&idx));
            }
            prop_assert_eq!(DenseTensor::fold(&m, n, t.shape()).unwrap(), t.clone());
        }
    }

    #[test]
    fn mode_product_is_matrix_product_of_unfolding(
        d in dims(4, 4),
        rows in 1usize..5,
        seed in any::<u64>(),
    ) {
        let t = tensor(&d, seed);
        let mut rng = Substream::new(seed).rng(1);
        for n in 0..d.len() {
            let a = standard_normal_matrix(&mut rng, rows, d[n]);
            let y = t.mode_product(&a, n).unwrap();
            let expected = a.matmul(&t.unfold(n).unwrap()).unwrap();
            let got = y.unfold(n).unwrap();
            prop_assert!(relative_error(got.data(), expected.data(), 1e-12) <= 1e-12);
        }
    }

    #[test]
    fn mode_product_adjoint(d in dims(4, 4), rows in 1usize..5, seed in any::<u64>()) {
        let x = tensor(&d, seed);
        let mut rng = Substream::new(seed).rng(2);
        for n in 0..d.len() {
            let a = standard_normal_matrix(&mut rng, rows, d[n]);
            let ax = x.mode_product(&a, n).unwrap();
            let y = standard_normal_tensor(&mut rng, ax.shape());
            let lhs = inner(&ax, &y).unwrap();
            let rhs = inner(&x, &y.mode_product_t(&a, n).unwrap()).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn products_on_distinct_modes_commute(seed in any::<u64>()) {
        let t = tensor(&[3, 4, 2], seed);
        let mut rng = Substream::new(seed).rng(3);
        let a = standard_normal_matrix(&mut rng, 2, 3);
        let b = standard_normal_matrix(&mut rng, 5, 2);
        let ab = t.mode_product(&a, 0).unwrap().mode_product(&b, 2).unwrap();
        let ba = t.mode_product(&b, 2).unwrap().mode_product(&a, 0).unwrap();
        prop_assert!(relative_error(ab.vec(), ba.vec(), 1e-12) <= 1e-13);
    }
}

fn random_params(order: usize, sep: usize, seed: u64) -> LsrParams {
    let mut rng = Substream::new(seed).rng(0);
    let shape: Vec<usize> = (0..order).map(|k| 3 + (seed as usize + k) % 3).collect();
    let rank: Vec<usize> = shape.iter().map(|&m| 1 + (m + seed as usize) % 2).collect();
    LsrParams::random_ground_truth(
        &Shape::new(shape).unwrap(),
        &LsrRank::new(rank, sep).unwrap(),
        &mut rng,
    )
    .unwrap()
}

#[test]
fn vectorized_kronecker_form_matches_reconstruction() {
    for order in 2..=4 {
        for seed in 0..20 {
            let p = random_params(order, 1 + seed as usize % 3, seed);
            let err = relative_error(p.reconstruct().vec(), &kron_reconstruct(&p), 0.0);
            assert!(err <= 1e-10, "order {order} seed {seed}: {err:e}");
        }
    }
}

#[test]
fn single_term_equals_tucker_product() {
    for order in 2..=4 {
        for seed in 0..20 {
            let p = random_params(order, 1, 100 + seed);
            let t = tucker_direct(p.core(), &p.factors()[0]);
            let err = relative_error(p.reconstruct().vec(), t.vec(), 0.0);
            assert!(err <= 1e-12, "order {order} seed {seed}: {err:e}");
        }
    }
}

#[test]
fn reconstruction_is_linear_in_the_core() {
    let p = random_params(3, 2, 5);
    let mut q = p.clone();
    q.set_core(p.core().scale(-2.5)).unwrap();
    let lhs = q.reconstruct();
    let rhs = p.reconstruct().scale(-2.5);
    assert!(relative_error(lhs.vec(), rhs.vec(), 0.0) <= 1e-14);
}

#[test]
fn identity_factors_reproduce_the_core() {
    let shape = Shape::new([3, 4, 2]).unwrap();
    let core = standard_normal_tensor(&mut Substream::new(9).rng(0), &shape);
    let factors: Vec<Matrix> = shape.dims().iter().map(|&m| Matrix::identity(m)).collect();
    let p = LsrParams::new(core.clone(), vec![factors]).unwrap();
    assert_eq!(p.reconstruct(), core);
}
