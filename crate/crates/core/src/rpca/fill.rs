//! Completion of rows that only one of (current column, background basis) knows.
//!
//! Rows are canvas pixels. The overlap `Ω` is the set of rows observed in the
//! current column *and* known to the model; everything is regressed through it.

use nalgebra::{DMatrix, DVector};

use super::svd::{pseudo_inverse, SubspaceModel};
use crate::error::{Error, Result};

fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

/// Fills rows the model knows but `y` does not observe:
/// `y[fill] = U[fill] Σ (U[Ω] Σ)⁺ y[Ω]`, using the leading `rank` components.
pub fn fill_frame(y: &DVector<f64>, observed: &[bool], model: &SubspaceModel) -> Result<DVector<f64>> {
    if y.len() != model.rows() || observed.len() != model.rows() {
        return Err(Error::Subspace("fill_frame: length mismatch".into()));
    }
    let known = model.known();
    let fill: Vec<usize> = (0..y.len()).filter(|&i| known[i] && !observed[i]).collect();
    if fill.is_empty() {
        return Ok(y.clone());
    }
    let overlap: Vec<usize> = (0..y.len()).filter(|&i| known[i] && observed[i]).collect();
    if overlap.is_empty() {
        return Err(Error::LostTrack);
    }
    let scaled = model.basis() * DMatrix::from_diagonal(&model.singular_values());
    let coeffs = pseudo_inverse(&select_rows(&scaled, &overlap)) * DVector::from_fn(overlap.len(), |i, _| y[overlap[i]]);
    let predicted = select_rows(&scaled, &fill) * coeffs;
    let mut out = y.clone();
    for (k, &row) in fill.iter().enumerate() {
        out[row] = predicted[k];
    }
    Ok(out)
}

/// Fills basis rows that `y` observes but the model does not know:
/// `U[new] = y[new] y[Ω]⁺ (U[Ω] Σ) Σ⁺`, then re-orthonormalizes the basis
/// (preserving `U Σ Vᵀ` on the previously known rows) and marks the rows known.
pub fn fill_subspace(model: &mut SubspaceModel, y: &DVector<f64>, observed: &[bool]) -> Result<()> {
    if y.len() != model.rows() || observed.len() != model.rows() {
        return Err(Error::Subspace("fill_subspace: length mismatch".into()));
    }
    let known = model.known().to_vec();
    let fresh: Vec<usize> = (0..y.len()).filter(|&i| observed[i] && !known[i]).collect();
    if fresh.is_empty() {
        return Ok(());
    }
    let overlap: Vec<usize> = (0..y.len()).filter(|&i| observed[i] && known[i]).collect();
    if overlap.is_empty() {
        return Err(Error::LostTrack);
    }
    let y_overlap = DMatrix::from_fn(overlap.len(), 1, |i, _| y[overlap[i]]);
    let sigma = model.full_sigma().clone();
    let scaled = select_rows(model.full_u(), &overlap) * DMatrix::from_diagonal(&sigma);
    let sigma_pinv = DMatrix::from_diagonal(&sigma.map(|s| if s > 0.0 { 1.0 / s } else { 0.0 }));
    // 1 x q row of coefficients shared by every fresh row
    let coeffs = pseudo_inverse(&y_overlap) * scaled * sigma_pinv;
    let u = model.u_mut();
    for &row in &fresh {
        for j in 0..coeffs.ncols() {
            u[(row, j)] = y[row] * coeffs[(0, j)];
        }
    }
    model.reorthonormalize();
    model.mark_known(observed);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let v = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        &v / v.norm()
    }

    fn hidden_rows(n: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
        let mut observed = vec![true; n];
        let mut hidden = 0;
        while hidden < n / 4 {
            let i = rng.gen_range(0..n);
            if observed[i] {
                observed[i] = false;
                hidden += 1;
            }
        }
        observed
    }

    #[test]
    fn full_overlap_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = unit(16, &mut rng);
        let model = SubspaceModel::partial_svd(&DMatrix::from_column_slice(16, 1, u.as_slice()), 1).unwrap();
        let y = &u * 0.7;
        assert_eq!(fill_frame(&y, &[true; 16], &model).unwrap(), y);
    }

    #[test]
    fn recovers_hidden_entries_of_rank_one_column() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = unit(64, &mut rng);
            let model = SubspaceModel::partial_svd(&(DMatrix::from_column_slice(64, 1, u.as_slice()) * 2.0), 1).unwrap();
            let truth = &u * (1.7 * 0.9);
            let observed = hidden_rows(64, &mut rng);
            let y = DVector::from_fn(64, |i, _| if observed[i] { truth[i] } else { 0.0 });
            let filled = fill_frame(&y, &observed, &model).unwrap();
            assert!((filled - &truth).abs().max() <= 1e-8);
        }
    }

    #[test]
    fn no_overlap_is_lost_track() {
        let model = SubspaceModel::partial_svd(&DMatrix::from_element(4, 1, 1.0), 1)
            .unwrap()
            .with_known(vec![true, true, false, false]);
        let y = DVector::from_element(4, 1.0);
        let observed = [false, false, true, true];
        assert!(matches!(fill_frame(&y, &observed, &model), Err(Error::LostTrack)));
        let mut m2 = model.clone();
        assert!(matches!(fill_subspace(&mut m2, &y, &observed), Err(Error::LostTrack)));
    }

    #[test]
    fn subspace_rows_recovered_up_to_sign() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let u = unit(64, &mut rng);
            let known = hidden_rows(64, &mut rng);
            let u_known = DMatrix::from_fn(64, 1, |i, _| if known[i] { u[i] } else { 0.0 });
            let norm = u_known.norm();
            let mut model = SubspaceModel::from_parts(
                u_known / norm,
                DVector::from_element(1, 3.0),
                DMatrix::from_element(1, 1, 1.0),
                1,
            )
            .unwrap()
            .with_known(known);
            let y = &u * (3.0 * 0.8);
            fill_subspace(&mut model, &y, &[true; 64]).unwrap();
            let got = model.full_u().column(0).into_owned();
            let sign = got.dot(&u).signum();
            assert!((got * sign - &u).abs().max() <= 1e-8);
            assert!(model.known().iter().all(|&k| k));
            assert!(model.orthonormality_error() < 1e-12);
        }
    }

    #[test]
    fn nothing_unknown_is_noop() {
        let m = DMatrix::from_fn(10, 2, |i, j| (i + 3 * j) as f64);
        let mut model = SubspaceModel::partial_svd(&m, 1).unwrap();
        let before = model.clone();
        fill_subspace(&mut model, &DVector::from_element(10, 1.0), &[true; 10]).unwrap();
        assert_eq!(model, before);
    }

    #[test]
    fn zero_sigma_fills_zero_rows() {
        let u = DMatrix::from_column_slice(4, 1, &[0.6, 0.8, 0.0, 0.0]);
        let mut model = SubspaceModel::from_parts(u, DVector::zeros(1), DMatrix::from_element(1, 1, 1.0), 1)
            .unwrap()
            .with_known(vec![true, true, false, false]);
        let y = DVector::from_column_slice(&[0.3, 0.4, 0.5, 0.9]);
        fill_subspace(&mut model, &y, &[true; 4]).unwrap();
        assert_eq!(model.full_u()[(2, 0)], 0.0);
        assert_eq!(model.full_u()[(3, 0)], 0.0);
    }
}
