//! Scale-specific message passing, micro→macro aggregation, cross-scale
//! attention and fusion.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::dataset::LocationIndex;
use crate::error::{Error, Result};
use crate::params::{fan_uniform, ModelDims, ModelParams};
use crate::tensor::Matrix;
use crate::temporal_encoder::Scale;

/// County→state averaging matrix: `tran[i][l] = 1/count(l)` when county `i`
/// belongs to state `l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub tran: Matrix,
    pub counts: Vec<usize>,
}

impl TransferMatrix {
    pub fn from_affiliation(affiliation: &[usize], n_states: usize) -> Result<Self> {
        let mut counts = vec![0usize; n_states];
        for &s in affiliation {
            if s >= n_states {
                return Err(Error::Index(format!("state position {s} of {n_states}")));
            }
            counts[s] += 1;
        }
        if let Some(s) = counts.iter().position(|&c| c == 0) {
            return Err(Error::DegenerateState(format!("#{s}")));
        }
        let mut tran = Matrix::zeros(affiliation.len(), n_states);
        for (i, &s) in affiliation.iter().enumerate() {
            tran[(i, s)] = 1.0 / counts[s] as f64;
        }
        Ok(Self { tran, counts })
    }

    /// State position of each county (the row support of `tran`).
    pub fn affiliation(&self) -> Vec<usize> {
        (0..self.tran.rows())
            .map(|i| {
                self.tran
                    .row(i)
                    .iter()
                    .position(|&v| v != 0.0)
                    .expect("every county has a state")
            })
            .collect()
    }
}

pub fn build_transfer_matrix(index: &LocationIndex) -> Result<TransferMatrix> {
    let members = index.members();
    if let Some(s) = members.iter().position(Vec::is_empty) {
        return Err(Error::DegenerateState(index.state_ids[s].clone()));
    }
    TransferMatrix::from_affiliation(&index.affiliation, index.n_states())
}

pub fn gcn_param_names(scale: Scale) -> (&'static str, &'static str) {
    match scale {
        Scale::Micro => ("gcn.micro.u1", "gcn.micro.u2"),
        Scale::Macro => ("gcn.macro.u3", "gcn.macro.u4"),
    }
}

pub fn init_gcn<R: Rng + ?Sized>(params: &mut ModelParams, scale: Scale, dims: &ModelDims, rng: &mut R) {
    let (a, b) = gcn_param_names(scale);
    params.insert(a, fan_uniform(dims.repr, dims.gcn, dims.repr, rng));
    params.insert(b, fan_uniform(dims.gcn, dims.gcn, dims.gcn, rng));
}

pub fn init_attention<R: Rng + ?Sized>(params: &mut ModelParams, dims: &ModelDims, rng: &mut R) {
    params.insert("attn.u_a", fan_uniform(dims.repr, dims.attn, dims.repr, rng));
    params.insert("attn.u_b", fan_uniform(dims.repr, dims.attn, dims.repr, rng));
    params.insert("attn.beta", fan_uniform(1, dims.attn, dims.repr, rng));
}

/// Two-layer graph convolution `Ã · ReLU(Ã · H · U_a) · U_b`.
pub fn message_passing_on(tape: &mut Tape, a_norm: Var, h: Var, u_a: Var, u_b: Var) -> Result<Var> {
    let ah = tape.matmul(a_norm, h)?;
    let z = tape.matmul(ah, u_a)?;
    let z = tape.relu(z);
    let az = tape.matmul(a_norm, z)?;
    let out = tape.matmul(az, u_b)?;
    tape.check_finite(out, "message passing")?;
    Ok(out)
}

/// Per-state mean of county representations, `tranᵀ · H_c`.
pub fn aggregate_micro_on(tape: &mut Tape, tran: &TransferMatrix, h_c: Var) -> Result<Var> {
    let t = tape.constant(tran.tran.transpose());
    tape.matmul(t, h_c)
}

/// Bilinear cross-scale score `(H_s U_a)(H_c^tran U_b + β)ᵀ`, `N × N`.
pub fn cross_scale_attention_on(
    tape: &mut Tape,
    h_s: Var,
    h_c_tran: Var,
    u_a: Var,
    u_b: Var,
    beta: Var,
) -> Result<Var> {
    let left = tape.matmul(h_s, u_a)?;
    let right = tape.matmul(h_c_tran, u_b)?;
    let right = tape.add_row(right, beta)?;
    let right_t = tape.transpose(right);
    let corr = tape.matmul(left, right_t)?;
    tape.check_finite(corr, "cross-scale attention")?;
    Ok(corr)
}

/// Handles produced by [`fuse_scales_on`].
#[derive(Debug, Clone, Copy)]
pub struct FusionTrace {
    pub e_prime: Var,
    pub attended: Var,
    pub h_out: Var,
}

/// Row-softmax the correlation, attend over state features, hand each county
/// its state's attended row and concatenate with the county's own features.
pub fn fuse_scales_on(
    tape: &mut Tape,
    corr: Var,
    h_s_prime: Var,
    h_c_prime: Var,
    affiliation: &[usize],
) -> Result<FusionTrace> {
    let e_prime = tape.softmax_rows(corr, None)?;
    let attended = tape.matmul(e_prime, h_s_prime)?;
    let per_county = tape.gather_rows(attended, affiliation.to_vec())?;
    let h_out = tape.concat_cols(per_county, h_c_prime)?;
    tape.check_finite(h_out, "multi-scale fusion")?;
    Ok(FusionTrace {
        e_prime,
        attended,
        h_out,
    })
}

pub fn message_passing(a_norm: &Matrix, h: &Matrix, u_a: &Matrix, u_b: &Matrix) -> Result<Matrix> {
    let mut tape = Tape::new();
    let vars = [a_norm, h, u_a, u_b].map(|m| tape.constant(m.clone()));
    let out = message_passing_on(&mut tape, vars[0], vars[1], vars[2], vars[3])?;
    Ok(tape.value(out).clone())
}

pub fn aggregate_micro(tran: &TransferMatrix, h_c: &Matrix) -> Result<Matrix> {
    if tran.tran.rows() != h_c.rows() {
        return Err(Error::shape(
            "aggregate_micro",
            format!("{} counties in tran, {} rows in H_c", tran.tran.rows(), h_c.rows()),
        ));
    }
    tran.tran.transpose().matmul(h_c)
}

/// Parameters of the cross-scale attention.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub u_a: Matrix,
    pub u_b: Matrix,
    pub beta: Matrix,
}

impl AttentionParams {
    pub fn from_params(p: &ModelParams) -> Result<Self> {
        Ok(Self {
            u_a: p.get("attn.u_a")?.clone(),
            u_b: p.get("attn.u_b")?.clone(),
            beta: p.get("attn.beta")?.clone(),
        })
    }
}

pub fn cross_scale_attention(h_s: &Matrix, h_c_tran: &Matrix, attn: &AttentionParams) -> Result<Matrix> {
    let mut tape = Tape::new();
    let v = [h_s, h_c_tran, &attn.u_a, &attn.u_b, &attn.beta].map(|m| tape.constant(m.clone()));
    let corr = cross_scale_attention_on(&mut tape, v[0], v[1], v[2], v[3], v[4])?;
    Ok(tape.value(corr).clone())
}

/// Plain-matrix fusion output.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedRepr {
    pub e_prime: Matrix,
    pub attended: Matrix,
    pub h_out: Matrix,
}

pub fn fuse_scales(
    corr: &Matrix,
    h_s_prime: &Matrix,
    h_c_prime: &Matrix,
    tran: &TransferMatrix,
) -> Result<FusedRepr> {
    let mut tape = Tape::new();
    let v = [corr, h_s_prime, h_c_prime].map(|m| tape.constant(m.clone()));
    let tr = fuse_scales_on(&mut tape, v[0], v[1], v[2], &tran.affiliation())?;
    Ok(FusedRepr {
        e_prime: tape.value(tr.e_prime).clone(),
        attended: tape.value(tr.attended).clone(),
        h_out: tape.value(tr.h_out).clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn transfer_matrix_examples() {
        let t = TransferMatrix::from_affiliation(&[0, 0, 1], 2).unwrap();
        assert_eq!(t.tran, Matrix::from_rows(&[[0.5, 0.0], [0.5, 0.0], [0.0, 1.0]]));
        let t = TransferMatrix::from_affiliation(&[0; 4], 1).unwrap();
        assert!(t.tran.as_slice().iter().all(|&v| v == 0.25));
        assert!(matches!(
            TransferMatrix::from_affiliation(&[0, 0], 2),
            Err(Error::DegenerateState(_))
        ));
    }

    #[test]
    fn aggregate_examples() {
        let t = TransferMatrix::from_affiliation(&[0, 0, 1], 2).unwrap();
        let h = Matrix::column(&[2.0, 4.0, 6.0]);
        assert_eq!(aggregate_micro(&t, &h).unwrap(), Matrix::column(&[3.0, 6.0]));
        let same = Matrix::from_rows(&[[1.5, -2.0], [1.5, -2.0], [1.5, -2.0]]);
        let agg = aggregate_micro(&t, &same).unwrap();
        assert_eq!(agg.row(0), &[1.5, -2.0]);
        assert_eq!(agg.row(1), &[1.5, -2.0]);
    }

    #[test]
    fn message_passing_examples() {
        let h = Matrix::identity(2);
        let swap = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]);
        let out = message_passing(&swap, &h, &Matrix::identity(2), &Matrix::identity(2)).unwrap();
        assert_eq!(out, Matrix::identity(2));
        let out = message_passing(&Matrix::zeros(2, 2), &h, &Matrix::identity(2), &Matrix::identity(2)).unwrap();
        assert_eq!(out, Matrix::zeros(2, 2));
    }

    #[test]
    fn message_passing_is_permutation_equivariant() {
        let a = Matrix::from_rows(&[[0.0, 0.5, 0.2], [0.5, 0.0, 0.7], [0.2, 0.7, 0.0]]);
        let h = Matrix::from_rows(&[[1.0, -1.0], [0.3, 2.0], [-0.5, 0.1]]);
        let ua = Matrix::from_rows(&[[0.4, -0.2, 1.0], [0.3, 0.9, -0.6]]);
        let ub = Matrix::from_rows(&[[1.0, 0.5], [-0.3, 0.2], [0.7, -1.1]]);
        let perm = [2, 0, 1];
        let out = message_passing(&a, &h, &ua, &ub).unwrap();
        let out_p = message_passing(&a.select_square(&perm), &h.select_rows(&perm), &ua, &ub).unwrap();
        for (x, y) in out_p.as_slice().iter().zip(out.select_rows(&perm).as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_examples() {
        let h = Matrix::from_rows(&[[1.0, 2.0], [0.5, -1.0], [2.0, 0.0]]);
        let attn = AttentionParams {
            u_a: Matrix::zeros(2, 3),
            u_b: Matrix::filled(2, 3, 0.5),
            beta: Matrix::filled(1, 3, 0.1),
        };
        let corr = cross_scale_attention(&h, &h, &attn).unwrap();
        assert_eq!(corr, Matrix::zeros(3, 3));
        let attn = AttentionParams {
            u_a: Matrix::filled(2, 3, 1.0),
            ..attn
        };
        let corr = cross_scale_attention(&h.select_rows(&[0]), &h.select_rows(&[1]), &attn).unwrap();
        assert_eq!(corr.shape(), (1, 1));
    }

    #[test]
    fn fusion_examples() {
        let tran = TransferMatrix::from_affiliation(&[0, 0, 1], 2).unwrap();
        let hs = Matrix::from_rows(&[[1.0, 3.0], [5.0, 7.0]]);
        let hc = Matrix::from_rows(&[[0.1], [0.2], [0.3]]);
        let f = fuse_scales(&Matrix::zeros(2, 2), &hs, &hc, &tran).unwrap();
        assert!(f.e_prime.as_slice().iter().all(|&v| v == 0.5));
        assert_eq!(f.attended, Matrix::from_rows(&[[3.0, 5.0], [3.0, 5.0]]));
        assert_eq!(f.h_out.row(2), &[3.0, 5.0, 0.3]);

        let one = TransferMatrix::from_affiliation(&[0, 0], 1).unwrap();
        let f = fuse_scales(&Matrix::filled(1, 1, 4.2), &hs.select_rows(&[1]), &hc.select_rows(&[0, 1]), &one).unwrap();
        assert_eq!(f.e_prime, Matrix::filled(1, 1, 1.0));
        assert_eq!(f.h_out, Matrix::from_rows(&[[5.0, 7.0, 0.1], [5.0, 7.0, 0.2]]));
    }

    #[test]
    fn fused_width_is_twice_gcn_width() {
        let tran = TransferMatrix::from_affiliation(&[0, 0, 0, 1, 1, 1], 2).unwrap();
        let f = fuse_scales(
            &Matrix::from_rows(&[[0.1, 0.2], [0.3, 0.4]]),
            &Matrix::filled(2, 64, 1.0),
            &Matrix::filled(6, 64, 2.0),
            &tran,
        )
        .unwrap();
        assert_eq!(f.h_out.shape(), (6, 128));
    }

    proptest! {
        #[test]
        fn softmax_rows_normalised_and_shift_invariant(
            v in prop::collection::vec(-5.0f64..5.0, 9),
            shift in -50.0f64..50.0,
        ) {
            let tran = TransferMatrix::from_affiliation(&[0, 1, 2], 3).unwrap();
            let corr = Matrix::from_vec(3, 3, v).unwrap();
            let hs = Matrix::identity(3);
            let hc = Matrix::zeros(3, 1);
            let a = fuse_scales(&corr, &hs, &hc, &tran).unwrap();
            let b = fuse_scales(&corr.map(|x| x + shift), &hs, &hc, &tran).unwrap();
            for i in 0..3 {
                prop_assert!((a.e_prime.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(a.e_prime.row(i).iter().all(|&p| p > 0.0 && p < 1.0));
            }
            for (x, y) in a.e_prime.as_slice().iter().zip(b.e_prime.as_slice()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
