use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::Tensor;
use crate::error::Result;
use crate::scalar::Scalar;

/// Outcome of finite-difference checking one parameter group.
#[derive(Debug, Clone)]
pub struct GroupReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_coord: usize,
}

/// Denominator floor for the relative error. Central differences on an O(1)
/// loss carry ~eps*|f|/2h of roundoff (about 1e-11 at h=1e-5), so comparing
/// a coordinate whose true gradient sits below that noise must degrade to an
/// absolute test; the floor puts that switchover at |grad| ~ 1e-5, turning
/// the threshold into atol = tol*1e-5 there.
const FLOOR: f64 = 1e-5;

/// Compares analytic gradients against central differences.
///
/// `build` must deterministically construct the scalar loss from the leaves it
/// is handed (one per entry of `params`, in order); it is re-invoked for every
/// probe, so anything stochastic inside it invalidates the comparison. For
/// each group up to `coords_per_group` coordinates are sampled without
/// replacement and perturbed by `±h`; the relative error is
/// |analytic - numeric| / max(|analytic|, |numeric|, FLOOR).
pub fn grad_check<F, B>(
    params: &[(String, Tensor<F>)],
    mut build: B,
    coords_per_group: usize,
    h: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<GroupReport>>
where
    F: Scalar,
    B: FnMut(&mut Tape<F>, &[Var]) -> Result<Var>,
{
    let analytic: Vec<Tensor<F>> = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params
            .iter()
            .map(|(_, t)| tape.leaf(t.clone(), true))
            .collect();
        let loss = build(&mut tape, &vars)?;
        tape.backward(loss)?;
        vars.iter()
            .map(|&v| {
                tape.grad(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
            })
            .collect()
    };

    let eval = |params: &[(String, Tensor<F>)], build: &mut B| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params
            .iter()
            .map(|(_, t)| tape.leaf(t.clone(), false))
            .collect();
        let loss = build(&mut tape, &vars)?;
        Ok(tape.value(loss).data()[0].as_f64())
    };

    let mut probe = params.to_vec();
    let mut reports = Vec::with_capacity(params.len());
    for (gi, (name, tensor)) in params.iter().enumerate() {
        let numel = tensor.numel();
        let mut coords: Vec<usize> = (0..numel).collect();
        if numel > coords_per_group {
            coords.shuffle(rng);
            coords.truncate(coords_per_group);
        }
        let mut max_rel = 0.0f64;
        let mut worst = 0usize;
        for &c in &coords {
            let orig = tensor.data()[c];
            probe[gi].1.data_mut()[c] = orig + F::c(h);
            let plus = eval(&probe, &mut build)?;
            probe[gi].1.data_mut()[c] = orig - F::c(h);
            let minus = eval(&probe, &mut build)?;
            probe[gi].1.data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[gi].data()[c].as_f64();
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            if rel > max_rel {
                max_rel = rel;
                worst = c;
            }
        }
        reports.push(GroupReport {
            name: name.clone(),
            checked: coords.len(),
            max_rel_err: max_rel,
            worst_coord: worst,
        });
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::tape::EltwiseMode;
    use rand::{RngExt, SeedableRng};

    fn randt(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| lo + (hi - lo) * rng.random::<f64>())
            .collect();
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn dense_square_loss_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let params = vec![
            ("x".to_string(), randt(&[2, 3], -1.0, 1.0, &mut rng)),
            ("w".to_string(), randt(&[3, 4], -1.0, 1.0, &mut rng)),
            ("b".to_string(), randt(&[4], -0.5, 0.5, &mut rng)),
        ];
        let reports = grad_check(
            &params,
            |tape, vars| {
                let y = tape.dense(vars[0], vars[1], vars[2])?;
                let sq = tape.eltwise(y, y, EltwiseMode::Mul)?;
                Ok(tape.sum_all(sq))
            },
            64,
            1e-5,
            &mut rng,
        )
        .unwrap();
        for r in &reports {
            assert!(r.max_rel_err < 1e-6, "{}: {}", r.name, r.max_rel_err);
        }
        // groups smaller than the budget are checked exhaustively
        assert_eq!(reports[2].checked, 4);
    }

    #[test]
    fn clamp_interior_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        // margin from both clamp kinks far exceeds the probe step
        let params = vec![("x".to_string(), randt(&[30], 0.05, 0.95, &mut rng))];
        let reports = grad_check(
            &params,
            |tape, vars| {
                let c = tape.clamp01(vars[0]);
                let sq = tape.eltwise(c, c, EltwiseMode::Mul)?;
                Ok(tape.sum_all(sq))
            },
            50,
            1e-5,
            &mut rng,
        )
        .unwrap();
        assert!(reports[0].max_rel_err < 1e-6, "{}", reports[0].max_rel_err);
    }

    #[test]
    fn conv_stride2_padded_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(102);
        let params = vec![
            ("x".to_string(), randt(&[2, 2, 5, 5], -1.0, 1.0, &mut rng)),
            ("f".to_string(), randt(&[3, 2, 2, 2], -1.0, 1.0, &mut rng)),
            ("b".to_string(), randt(&[3], -0.5, 0.5, &mut rng)),
        ];
        let reports = grad_check(
            &params,
            |tape, vars| {
                let y = tape.conv2d(vars[0], vars[1], Some(vars[2]), 2, 1)?;
                let sq = tape.eltwise(y, y, EltwiseMode::Mul)?;
                Ok(tape.sum_all(sq))
            },
            60,
            1e-5,
            &mut rng,
        )
        .unwrap();
        for r in &reports {
            assert!(r.max_rel_err < 1e-6, "{}: {}", r.name, r.max_rel_err);
        }
    }

    #[test]
    fn normalize_rules_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        let params = vec![("m".to_string(), randt(&[1, 4, 3, 3], 0.1, 1.0, &mut rng))];
        let reports = grad_check(
            &params,
            |tape, vars| {
                let n = tape.normalize_rules(vars[0], 1e-8)?;
                let sq = tape.eltwise(n, n, EltwiseMode::Mul)?;
                Ok(tape.sum_all(sq))
            },
            50,
            1e-5,
            &mut rng,
        )
        .unwrap();
        assert!(reports[0].max_rel_err < 1e-6, "{}", reports[0].max_rel_err);
    }

    #[test]
    fn pool_pad_chain_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(104);
        let params = vec![("x".to_string(), randt(&[1, 2, 4, 4], -1.0, 1.0, &mut rng))];
        let reports = grad_check(
            &params,
            |tape, vars| {
                let p = tape.pad2d(vars[0], 1)?;
                let a = tape.avg_pool2d(p, 2, 1)?;
                let sq = tape.eltwise(a, a, EltwiseMode::Mul)?;
                Ok(tape.sum_all(sq))
            },
            50,
            1e-5,
            &mut rng,
        )
        .unwrap();
        assert!(reports[0].max_rel_err < 1e-6, "{}", reports[0].max_rel_err);
    }
}
