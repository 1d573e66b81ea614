//! The boosting loop written with perturbation, powering and Bayes inner
//! products on densities, without clr coordinates. The density basis is
//! `b_m = clr⁻¹(column m)`, so coefficient paths are comparable with
//! [`Booster`](super::Booster).

use nalgebra::{DMatrix, DVector};

use crate::basis::EffectDesign;
use crate::bayes::DensityElement;
use crate::error::{Error, Result};

use super::negative_gradient;

/// Selected effect and all coefficient matrices after every iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub offset: DensityElement,
    pub selection: Vec<usize>,
    pub coefficients: Vec<Vec<DMatrix<f64>>>,
    pub fitted: Vec<DensityElement>,
}

/// `⊕_m c_m ⊙ b_m`
fn combine(basis: &[DensityElement], coef: &[f64]) -> Result<DensityElement> {
    let mut out = DensityElement::uniform(basis[0].measure().clone());
    for (b, &c) in basis.iter().zip(coef) {
        out = out.perturb(&b.power(c)?)?;
    }
    Ok(out)
}

pub fn boost_b2(
    responses: &[DensityElement],
    designs: &[EffectDesign],
    step: f64,
    iterations: usize,
) -> Result<PathRecord> {
    let first = responses
        .first()
        .ok_or_else(|| Error::Data("no responses".into()))?;
    let measure = first.measure().clone();
    let n_obs = responses.len();
    let density = &designs
        .first()
        .ok_or_else(|| Error::InvalidArgument("no effects".into()))?
        .density;
    let ky = density.ncols();
    let basis: Vec<DensityElement> = (0..ky)
        .map(|m| {
            let col: Vec<f64> = density.column(m).iter().copied().collect();
            DensityElement::from_log_values(measure.clone(), &col)
        })
        .collect::<Result<_>>()?;
    let gram = DMatrix::from_fn(ky, ky, |a, b| basis[a].inner(&basis[b]).expect("same measure"));

    let mut offset = DensityElement::uniform(measure.clone());
    for y in responses {
        offset = offset.perturb(&y.power(1.0 / n_obs as f64)?)?;
    }
    let mut fitted = vec![offset.clone(); n_obs];
    let mut theta: Vec<DMatrix<f64>> = designs
        .iter()
        .map(|d| DMatrix::zeros(d.n_covariate(), ky))
        .collect();
    let mut selection = Vec::with_capacity(iterations);
    let mut coefficients = Vec::with_capacity(iterations);

    for _ in 0..iterations {
        let gradients: Vec<DensityElement> = responses
            .iter()
            .zip(&fitted)
            .map(|(y, h)| negative_gradient(y, h))
            .collect::<Result<_>>()?;
        let proj = DMatrix::from_fn(n_obs, ky, |i, m| {
            gradients[i].inner(&basis[m]).expect("same measure")
        });

        let mut best: Option<(usize, f64, DMatrix<f64>, Vec<DensityElement>)> = None;
        for (j, d) in designs.iter().enumerate() {
            let x = &d.covariate;
            let rhs = x.transpose() * &proj;
            let system = (x.transpose() * x).kronecker(&gram) + d.penalty();
            let b = DVector::from_column_slice(rhs.transpose().as_slice());
            let sol = system
                .lu()
                .solve(&b)
                .ok_or_else(|| Error::Singular(format!("base learner `{}`", d.name)))?;
            let gamma = DMatrix::from_row_slice(d.n_covariate(), ky, sol.as_slice());
            let coef = x * &gamma;
            let fits: Vec<DensityElement> = (0..n_obs)
                .map(|i| {
                    let c: Vec<f64> = coef.row(i).iter().copied().collect();
                    combine(&basis, &c)
                })
                .collect::<Result<_>>()?;
            let mut loss = 0.0;
            for (u, f) in gradients.iter().zip(&fits) {
                loss += u.difference(f)?.norm_sq();
            }
            if best.as_ref().is_none_or(|(_, l, _, _)| loss < *l) {
                best = Some((j, loss, gamma, fits));
            }
        }
        let (j, _, gamma, fits) = best.expect("at least one effect");
        theta[j] += gamma * step;
        for (h, f) in fitted.iter_mut().zip(&fits) {
            *h = h.perturb(&f.power(step)?)?;
        }
        selection.push(j);
        coefficients.push(theta.clone());
    }
    Ok(PathRecord {
        offset,
        selection,
        coefficients,
        fitted,
    })
}
