//! Meta-path encoding: the embedding of hop `m` contributes with weight
//! `1/m`, so paths that repeat the same relations at different depths stay
//! distinguishable. Plain poolings are kept for comparison.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::autodiff::{lit, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PathPooling {
    #[default]
    Harmonic,
    Mean,
    Max,
    Sum,
}

fn check(relation_ids: &[usize], rel_table: &ArrayView2<'_, impl Copy>) -> Result<()> {
    if relation_ids.is_empty() {
        return Err(Error::Validation("cannot encode an empty meta-path".into()));
    }
    if let Some(&bad) = relation_ids.iter().find(|&&r| r >= rel_table.nrows()) {
        return Err(Error::Validation(format!(
            "relation id {bad} outside a table of {} rows",
            rel_table.nrows()
        )));
    }
    Ok(())
}

/// `h_p = Σ_{m=1..L} r_{e_m} / m`
pub fn encode_path<T: Real>(relation_ids: &[usize], rel_table: ArrayView2<'_, T>) -> Result<Array1<T>> {
    check(relation_ids, &rel_table)?;
    let mut out = Array1::zeros(rel_table.ncols());
    for (m, &r) in relation_ids.iter().enumerate() {
        let w = T::one() / lit::<T>((m + 1) as f64);
        out.scaled_add(w, &rel_table.row(r));
    }
    Ok(out)
}

pub fn encode_path_pooled<T: Real>(
    relation_ids: &[usize],
    rel_table: ArrayView2<'_, T>,
    mode: PathPooling,
) -> Result<Array1<T>> {
    if mode == PathPooling::Harmonic {
        return encode_path(relation_ids, rel_table);
    }
    check(relation_ids, &rel_table)?;
    let rows = relation_ids.iter().map(|&r| rel_table.row(r));
    let d = rel_table.ncols();
    Ok(match mode {
        PathPooling::Sum | PathPooling::Mean => {
            let mut acc = Array1::zeros(d);
            for r in rows {
                acc += &r;
            }
            if mode == PathPooling::Mean {
                acc.mapv_inplace(|x| x / lit::<T>(relation_ids.len() as f64));
            }
            acc
        }
        PathPooling::Max => {
            let mut acc = Array1::from_elem(d, T::neg_infinity());
            for r in rows {
                acc.zip_mut_with(&r, |a, &b| *a = a.max(b));
            }
            acc
        }
        PathPooling::Harmonic => unreachable!(),
    })
}

/// Encodes many paths into the rows of one matrix.
pub fn encode_paths<'p, T: Real>(
    paths: impl ExactSizeIterator<Item = &'p [usize]>,
    rel_table: ArrayView2<'_, T>,
    mode: PathPooling,
) -> Result<Array2<T>> {
    let mut out = Array2::zeros((paths.len(), rel_table.ncols()));
    for (i, p) in paths.enumerate() {
        out.row_mut(i).assign(&encode_path_pooled(p, rel_table, mode)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn single_hop_is_the_relation() {
        let t = array![[1.5, -2.0], [0.0, 3.0]];
        assert_eq!(encode_path(&[1], t.view()).unwrap(), array![0.0, 3.0]);
        assert_eq!(
            encode_path_pooled(&[1], t.view(), PathPooling::Sum).unwrap(),
            array![0.0, 3.0]
        );
    }

    #[test]
    fn three_hop_hand_value() {
        let t = array![[1.0, 0.0], [0.0, 2.0], [3.0, 0.0]];
        let h = encode_path(&[0, 1, 2], t.view()).unwrap();
        assert_eq!(h, array![2.0, 1.0]);
    }

    #[test]
    fn repeated_relation_gives_harmonic_number() {
        let t = array![[0.6, -1.2, 2.4]];
        let h = encode_path(&[0, 0, 0, 0], t.view()).unwrap();
        let h4: f64 = 25.0 / 12.0;
        for (a, b) in h.iter().zip(t.row(0).iter()) {
            assert!((a - h4 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_and_out_of_range_paths() {
        let t = array![[1.0]];
        assert!(encode_path::<f64>(&[], t.view()).is_err());
        assert!(encode_path(&[1], t.view()).is_err());
    }

    #[test]
    fn mean_collapses_pap_and_papap_but_harmonic_does_not() {
        // r_PA = r_AP = r
        let t = array![[0.5, -0.25, 1.0], [0.5, -0.25, 1.0]];
        let pap = [0, 1];
        let papap = [0, 1, 0, 1];
        let mean = |p: &[usize]| encode_path_pooled(p, t.view(), PathPooling::Mean).unwrap();
        let max = |p: &[usize]| encode_path_pooled(p, t.view(), PathPooling::Max).unwrap();
        assert_eq!(mean(&pap), mean(&papap));
        assert_eq!(max(&pap), max(&papap));
        assert_eq!(mean(&pap), t.row(0).to_owned());
        let a = encode_path(&pap, t.view()).unwrap();
        let b = encode_path(&papap, t.view()).unwrap();
        assert_ne!(a, b);
        assert_eq!(a, t.row(0).to_owned() * 1.5);
    }

    proptest! {
        #[test]
        fn hop_order_matters(a in prop::collection::vec(-1.0f64..1.0, 3), b in prop::collection::vec(-1.0f64..1.0, 3)) {
            prop_assume!(a != b);
            let t = Array2::from_shape_vec((2, 3), a.iter().chain(&b).copied().collect()).unwrap();
            let ab = encode_path(&[0, 1], t.view()).unwrap();
            let ba = encode_path(&[1, 0], t.view()).unwrap();
            prop_assert_ne!(ab, ba);
        }

        #[test]
        fn linear_in_the_table(c in -3.0f64..3.0, ids in prop::collection::vec(0usize..4, 1..5)) {
            let t = Array2::from_shape_fn((4, 3), |(i, j)| (i as f64 + 1.0) * 0.25 - j as f64 * 0.5);
            let h = encode_path(&ids, t.view()).unwrap();
            let scaled = encode_path(&ids, (&t * c).view()).unwrap();
            for (x, y) in h.iter().zip(scaled.iter()) {
                prop_assert!((x * c - y).abs() < 1e-12);
            }
        }
    }
}
