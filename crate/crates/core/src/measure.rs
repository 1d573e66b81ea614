//! Finite reference measures and the quadrature that realizes every integral.
//!
//! A [`ReferenceMeasure`] is a weighted sum of Dirac atoms plus, optionally,
//! Lebesgue measure on a bounded interval. The Lebesgue part is discretized
//! by the midpoint rule on `G` equal cells, so every function on the support
//! is stored as a value sequence laid out as *atoms first (in location order),
//! then grid nodes*. Integrals are weighted sums against [`ReferenceMeasure::weights`].

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible number of midpoint cells for a continuous part.
pub const MIN_GRID_SIZE: usize = 4;

/// Default number of midpoint cells.
pub const DEFAULT_GRID_SIZE: usize = 100;

/// A Dirac mass `weight * δ_location`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub location: f64,
    pub weight: f64,
}

impl Atom {
    pub fn new(location: f64, weight: f64) -> Self {
        Self { location, weight }
    }
}

/// Which of the three supported measure families a measure belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasureKind {
    Discrete,
    Continuous,
    Mixed,
}

/// Serializable description of a measure; the grid is implied by `grid_size`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSpec {
    #[serde(default)]
    pub interval: Option<[f64; 2]>,
    #[serde(default)]
    pub atoms: Vec<Atom>,
    #[serde(default)]
    pub grid_size: usize,
    /// Location label of the extra point representing the continuous part in
    /// the mixed decomposition. Defaults to the interval midpoint.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuous_label: Option<f64>,
}

/// A finite measure `Σ w_d δ_{t_d} (+ λ on [a, b])` with its quadrature rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureSpec", into = "MeasureSpec")]
pub struct ReferenceMeasure {
    interval: Option<(f64, f64)>,
    atoms: Vec<Atom>,
    grid: Vec<f64>,
    continuous_label: Option<f64>,
    /// Atom weights followed by quadrature weights.
    weights: Vec<f64>,
}

fn check_atoms(points: &[Atom]) -> Result<Vec<Atom>> {
    let mut atoms = points.to_vec();
    for a in &atoms {
        if !a.location.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "atom location {} is not finite",
                a.location
            )));
        }
        if !(a.weight.is_finite() && a.weight > 0.0) {
            return Err(Error::NonPositiveWeight(a.weight));
        }
    }
    atoms.sort_by(|x, y| x.location.total_cmp(&y.location));
    for pair in atoms.windows(2) {
        if pair[0].location == pair[1].location {
            return Err(Error::DuplicateAtom(pair[0].location));
        }
    }
    Ok(atoms)
}

impl ReferenceMeasure {
    /// Purely discrete measure `Σ w_d δ_{t_d}`.
    pub fn discrete(points: &[(f64, f64)]) -> Result<Self> {
        let atoms: Vec<Atom> = points.iter().map(|&(t, w)| Atom::new(t, w)).collect();
        Self::from_atoms(&atoms)
    }

    pub fn from_atoms(atoms: &[Atom]) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        let atoms = check_atoms(atoms)?;
        let weights = atoms.iter().map(|a| a.weight).collect();
        Ok(Self {
            interval: None,
            atoms,
            grid: Vec::new(),
            continuous_label: None,
            weights,
        })
    }

    /// Lebesgue measure on `[a, b]` with `grid_size` midpoint cells.
    pub fn continuous(a: f64, b: f64, grid_size: usize) -> Result<Self> {
        Self::mixed(a, b, &[], grid_size)
    }

    /// Dirac atoms plus Lebesgue measure on `[a, b]`.
    pub fn mixed(a: f64, b: f64, atoms: &[Atom], grid_size: usize) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::InvalidInterval(a, b));
        }
        if grid_size < MIN_GRID_SIZE {
            return Err(Error::GridTooSmall {
                min: MIN_GRID_SIZE,
                got: grid_size,
            });
        }
        let atoms = check_atoms(atoms)?;
        for atom in &atoms {
            if atom.location < a || atom.location > b {
                return Err(Error::AtomOutsideInterval {
                    location: atom.location,
                    a,
                    b,
                });
            }
        }
        let h = (b - a) / grid_size as f64;
        let grid: Vec<f64> = (0..grid_size).map(|g| a + (g as f64 + 0.5) * h).collect();
        if let Some(atom) = atoms.iter().find(|at| grid.contains(&at.location)) {
            return Err(Error::AtomOnGridNode(atom.location));
        }
        let mut weights: Vec<f64> = atoms.iter().map(|at| at.weight).collect();
        weights.extend(std::iter::repeat_n(h, grid_size));
        Ok(Self {
            interval: Some((a, b)),
            atoms,
            grid,
            continuous_label: None,
            weights,
        })
    }

    pub fn from_spec(spec: &MeasureSpec) -> Result<Self> {
        let measure = match spec.interval {
            Some([a, b]) => {
                let g = if spec.grid_size == 0 {
                    DEFAULT_GRID_SIZE
                } else {
                    spec.grid_size
                };
                Self::mixed(a, b, &spec.atoms, g)?
            }
            None => {
                if spec.grid_size != 0 {
                    return Err(Error::InvalidConfig(
                        "grid_size given without an interval".into(),
                    ));
                }
                Self::from_atoms(&spec.atoms)?
            }
        };
        match spec.continuous_label {
            Some(t) => measure.with_continuous_label(t),
            None => Ok(measure),
        }
    }

    pub fn spec(&self) -> MeasureSpec {
        MeasureSpec {
            interval: self.interval.map(|(a, b)| [a, b]),
            atoms: self.atoms.clone(),
            grid_size: self.grid.len(),
            continuous_label: self.continuous_label,
        }
    }

    /// Overrides the label `t_{D+1}` used for the continuous part in the
    /// mixed decomposition. It must differ from every atom location.
    pub fn with_continuous_label(mut self, label: f64) -> Result<Self> {
        if self.interval.is_none() {
            return Err(Error::WrongMeasureKind("continuous or mixed"));
        }
        if !label.is_finite() || self.atoms.iter().any(|a| a.location == label) {
            return Err(Error::InvalidArgument(format!(
                "continuous label {label} must be finite and distinct from atoms"
            )));
        }
        self.continuous_label = Some(label);
        Ok(self)
    }

    pub fn kind(&self) -> MeasureKind {
        match (self.atoms.is_empty(), self.interval.is_some()) {
            (false, false) => MeasureKind::Discrete,
            (true, true) => MeasureKind::Continuous,
            _ => MeasureKind::Mixed,
        }
    }

    pub fn interval(&self) -> Option<(f64, f64)> {
        self.interval
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn grid_nodes(&self) -> &[f64] {
        &self.grid
    }

    pub fn grid_size(&self) -> usize {
        self.grid.len()
    }

    /// Length of every value sequence on this measure.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Positions of the grid nodes within a value sequence.
    pub fn grid_range(&self) -> Range<usize> {
        self.atoms.len()..self.weights.len()
    }

    /// Atom weights followed by quadrature weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn grid_weights(&self) -> &[f64] {
        &self.weights[self.atoms.len()..]
    }

    /// Support points in storage order: atom locations, then grid nodes.
    pub fn locations(&self) -> Vec<f64> {
        self.atoms
            .iter()
            .map(|a| a.location)
            .chain(self.grid.iter().copied())
            .collect()
    }

    pub fn atom_index(&self, location: f64) -> Option<usize> {
        self.atoms.iter().position(|a| a.location == location)
    }

    /// `μ(T)`.
    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Lebesgue length of the interval, zero for discrete measures.
    pub fn continuous_mass(&self) -> f64 {
        self.interval.map_or(0.0, |(a, b)| b - a)
    }

    pub fn continuous_label(&self) -> Option<f64> {
        self.continuous_label
            .or_else(|| self.interval.map(|(a, b)| 0.5 * (a + b)))
    }

    pub fn check_len(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                got: len,
            });
        }
        Ok(())
    }

    /// `∫ v dμ = Σ w_d v_d + Σ q_g v_g`.
    pub fn integrate(&self, values: &[f64]) -> Result<f64> {
        self.check_len(values.len())?;
        Ok(self.dot(values))
    }

    /// Quadrature sum without a length check; callers guarantee alignment.
    pub(crate) fn dot(&self, values: &[f64]) -> f64 {
        let d = self.atoms.len();
        let discrete: f64 = self.weights[..d].iter().zip(values).map(|(w, v)| w * v).sum();
        let continuous: f64 = self.weights[d..]
            .iter()
            .zip(&values[d..])
            .map(|(w, v)| w * v)
            .sum();
        discrete + continuous
    }

    /// `∫ u v dμ`.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        self.check_len(u.len())?;
        self.check_len(v.len())?;
        Ok(self
            .weights
            .iter()
            .zip(u.iter().zip(v))
            .map(|(w, (a, b))| w * a * b)
            .sum())
    }

    /// The Lebesgue part alone, on the same grid.
    pub fn continuous_component(&self) -> Result<Self> {
        if self.kind() != MeasureKind::Mixed {
            return Err(Error::WrongMeasureKind("mixed"));
        }
        let (a, b) = self.interval.expect("mixed measure has an interval");
        Self::continuous(a, b, self.grid.len())
    }

    /// The discrete complement `Σ_{d≤D} w_d δ_{t_d} + λ(I) δ_{t_{D+1}}`.
    pub fn discrete_component(&self) -> Result<Self> {
        if self.kind() != MeasureKind::Mixed {
            return Err(Error::WrongMeasureKind("mixed"));
        }
        let label = self.continuous_label().expect("mixed measure has a label");
        let mut atoms = self.atoms.clone();
        atoms.push(Atom::new(label, self.continuous_mass()));
        Self::from_atoms(&atoms)
    }
}

impl TryFrom<MeasureSpec> for ReferenceMeasure {
    type Error = Error;

    fn try_from(spec: MeasureSpec) -> Result<Self> {
        Self::from_spec(&spec)
    }
}

impl From<ReferenceMeasure> for MeasureSpec {
    fn from(m: ReferenceMeasure) -> Self {
        m.spec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_mixed(g: usize) -> ReferenceMeasure {
        ReferenceMeasure::mixed(0.0, 1.0, &[Atom::new(0.0, 1.0), Atom::new(1.0, 1.0)], g).unwrap()
    }

    #[test]
    fn discrete_total_mass() {
        let m = ReferenceMeasure::discrete(&[(0.0, 1.0), (1.0, 1.0)]).unwrap();
        assert_eq!(m.total_mass(), 2.0);
        let m = ReferenceMeasure::discrete(&[(0.0, 1.0), (1.0, 1.0), (0.5, 1.0)]).unwrap();
        assert_eq!(m.total_mass(), 3.0);
        assert_eq!(m.kind(), MeasureKind::Discrete);
        assert_eq!(m.locations(), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn discrete_rejects_duplicates_and_bad_weights() {
        assert_eq!(
            ReferenceMeasure::discrete(&[(0.0, 1.0), (0.0, 2.0)]),
            Err(Error::DuplicateAtom(0.0))
        );
        assert_eq!(
            ReferenceMeasure::discrete(&[(0.0, 0.0)]),
            Err(Error::NonPositiveWeight(0.0))
        );
        assert_eq!(ReferenceMeasure::discrete(&[]), Err(Error::EmptyMeasure));
    }

    #[test]
    fn mixed_total_mass_and_kinds() {
        let m = unit_mixed(100);
        assert_abs_diff_eq!(m.total_mass(), 3.0, epsilon = 1e-12);
        assert_eq!(m.kind(), MeasureKind::Mixed);
        let c = ReferenceMeasure::continuous(0.0, 1.0, 50).unwrap();
        assert_abs_diff_eq!(c.total_mass(), 1.0, epsilon = 1e-12);
        assert_eq!(c.kind(), MeasureKind::Continuous);
        let sum_q: f64 = m.grid_weights().iter().sum();
        assert_abs_diff_eq!(sum_q, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn mixed_rejects_bad_input() {
        assert!(matches!(
            ReferenceMeasure::mixed(0.0, 1.0, &[], 2),
            Err(Error::GridTooSmall { .. })
        ));
        assert!(matches!(
            ReferenceMeasure::mixed(0.0, 1.0, &[Atom::new(1.5, 1.0)], 10),
            Err(Error::AtomOutsideInterval { .. })
        ));
        assert!(matches!(
            ReferenceMeasure::mixed(1.0, 0.0, &[], 10),
            Err(Error::InvalidInterval(..))
        ));
        // an atom at 0.5 collides with the midpoint node of an odd grid
        assert_eq!(
            ReferenceMeasure::mixed(0.0, 1.0, &[Atom::new(0.5, 1.0)], 5),
            Err(Error::AtomOnGridNode(0.5))
        );
    }

    #[test]
    fn integrate_examples() {
        let m = unit_mixed(100);
        let ones = vec![1.0; m.len()];
        assert_abs_diff_eq!(m.integrate(&ones).unwrap(), 3.0, epsilon = 1e-12);
        let mut ind = vec![0.0; m.len()];
        ind[0] = 1.0;
        ind[1] = 1.0;
        assert_abs_diff_eq!(m.integrate(&ind).unwrap(), 2.0, epsilon = 1e-12);

        let c = ReferenceMeasure::continuous(0.0, 1.0, 100).unwrap();
        let v: Vec<f64> = c.grid_nodes().iter().map(|t| 2.0 * t).collect();
        assert_abs_diff_eq!(c.integrate(&v).unwrap(), 1.0, epsilon = 1e-4);

        assert!(matches!(
            m.integrate(&[1.0]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn midpoint_rule_is_second_order() {
        let cases: [(fn(f64) -> f64, f64); 2] =
            [(|t| t * t, 1.0 / 3.0), (f64::exp, 1f64.exp() - 1.0)];
        for (f, truth) in cases {
            let quad = |g: usize| {
                let c = ReferenceMeasure::continuous(0.0, 1.0, g).unwrap();
                let v: Vec<f64> = c.grid_nodes().iter().map(|&t| f(t)).collect();
                c.integrate(&v).unwrap()
            };
            let e1 = (quad(20) - truth).abs();
            let e2 = (quad(40) - truth).abs();
            let order = (e1 / e2).log2();
            assert!(order >= 1.95, "observed order {order}");
        }
    }

    #[test]
    fn mixed_integral_splits_into_parts() {
        let m = unit_mixed(64);
        let v: Vec<f64> = m.locations().iter().map(|t| (3.0 * t).sin() + 2.0).collect();
        let disc: f64 = m.atoms().iter().zip(&v).map(|(a, x)| a.weight * x).sum();
        let cont: f64 = m
            .grid_weights()
            .iter()
            .zip(&v[m.grid_range()])
            .map(|(q, x)| q * x)
            .sum();
        assert_eq!(m.integrate(&v).unwrap(), disc + cont);
    }

    #[test]
    fn components_of_mixed_measure() {
        let m = unit_mixed(10);
        let c = m.continuous_component().unwrap();
        assert_eq!(c.grid_nodes(), m.grid_nodes());
        let d = m.discrete_component().unwrap();
        assert_eq!(d.locations(), vec![0.0, 0.5, 1.0]);
        assert_eq!(d.weights(), &[1.0, 1.0, 1.0]);
        assert!(c.continuous_component().is_err());
    }

    #[test]
    fn spec_round_trip() {
        let m = unit_mixed(12).with_continuous_label(0.25).unwrap();
        let back = ReferenceMeasure::from_spec(&m.spec()).unwrap();
        assert_eq!(back, m);
    }

    proptest::proptest! {
        #[test]
        fn integrate_is_linear(
            u in proptest::collection::vec(-10.0f64..10.0, 22),
            v in proptest::collection::vec(-10.0f64..10.0, 22),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let m = unit_mixed(20);
            let w: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
            let lhs = m.integrate(&w).unwrap();
            let rhs = a * m.integrate(&u).unwrap() + b * m.integrate(&v).unwrap();
            proptest::prop_assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs().max(rhs.abs())) * 10.0);
        }
    }
}
