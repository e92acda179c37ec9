//! Increasing periodic profiles W (càdlàg) and V (càglàd): a piecewise-linear
//! continuous part plus finitely many atoms in (0,1).

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    /// càdlàg, the W-role
    RightContinuous,
    /// càglàd, the V-role
    LeftContinuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Value,
    LeftLimit,
    RightLimit,
}

/// On-disk measure document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureSpec {
    #[serde(default)]
    pub name: String,
    pub side: String,
    pub knots: Vec<[f64; 2]>,
    #[serde(default)]
    pub atoms: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasureFunction {
    name: String,
    side: Side,
    knots: Vec<(f64, f64)>,
    atoms: Vec<(f64, f64)>,
    total_mass: f64,
}

impl MeasureFunction {
    pub fn from_spec(doc: &MeasureSpec) -> Result<Self> {
        let side = match doc.side.as_str() {
            "cadlag" => Side::RightContinuous,
            "caglad" => Side::LeftContinuous,
            other => return Err(Error::Schema(format!("unknown side '{other}'"))),
        };
        let knots: Vec<(f64, f64)> = doc.knots.iter().map(|k| (k[0], k[1])).collect();
        let atoms: Vec<(f64, f64)> = doc.atoms.iter().map(|a| (a[0], a[1])).collect();
        Self::new(&doc.name, side, knots, atoms)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MeasureSpec =
            serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        Self::from_spec(&doc)
    }

    pub fn new(
        name: &str,
        side: Side,
        mut knots: Vec<(f64, f64)>,
        mut atoms: Vec<(f64, f64)>,
    ) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::Schema("at least two knots are required".into()));
        }
        if knots.iter().chain(atoms.iter()).any(|(a, b)| !a.is_finite() || !b.is_finite()) {
            return Err(Error::Schema("non-finite number".into()));
        }
        if knots[0].0 != 0.0 {
            return Err(Error::Invariant("first knot must sit at 0".into()));
        }
        if knots.last().unwrap().0 != 1.0 {
            return Err(Error::Invariant("last knot must sit at 1".into()));
        }
        let base = knots[0].1;
        for k in knots.iter_mut() {
            k.1 -= base;
        }
        for w in knots.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::Invariant("knot positions must increase strictly".into()));
            }
            if w[1].1 < w[0].1 {
                return Err(Error::Invariant("cumulative knot masses must not decrease".into()));
            }
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        for &(x, m) in &atoms {
            if x <= 0.0 || x >= 1.0 {
                return Err(Error::Invariant(format!(
                    "atom at {x} must lie strictly inside (0,1); the origin carries no atom"
                )));
            }
            if m <= 0.0 {
                return Err(Error::Invariant(format!("atom at {x} has nonpositive mass {m}")));
            }
        }
        if atoms.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Invariant("atom locations must be distinct".into()));
        }
        let total_mass = knots.last().unwrap().1 + atoms.iter().map(|a| a.1).sum::<f64>();
        if total_mass <= 0.0 {
            return Err(Error::Invariant("total mass must be positive".into()));
        }
        Ok(Self { name: name.to_string(), side, knots, atoms, total_mass })
    }

    /// Lebesgue profile x.
    pub fn identity(side: Side) -> Self {
        Self::new("identity", side, vec![(0.0, 0.0), (1.0, 1.0)], vec![]).unwrap()
    }

    /// Uniform continuous density `cont` plus the given atoms.
    pub fn linear_with_atoms(name: &str, side: Side, cont: f64, atoms: &[(f64, f64)]) -> Result<Self> {
        Self::new(name, side, vec![(0.0, 0.0), (1.0, cont)], atoms.to_vec())
    }

    pub fn to_spec(&self) -> MeasureSpec {
        MeasureSpec {
            name: self.name.clone(),
            side: match self.side {
                Side::RightContinuous => "cadlag".into(),
                Side::LeftContinuous => "caglad".into(),
            },
            knots: self.knots.iter().map(|&(a, b)| [a, b]).collect(),
            atoms: self.atoms.iter().map(|&(a, b)| [a, b]).collect(),
        }
    }

    /// Same profile under the other side convention.
    pub fn with_side(&self, side: Side) -> Self {
        Self { side, ..self.clone() }
    }

    /// SHA-256 of the canonical content (name excluded).
    pub fn content_hash(&self) -> String {
        let mut spec = self.to_spec();
        spec.name.clear();
        let bytes = serde_json::to_vec(&spec).expect("measure spec serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn side(&self) -> Side {
        self.side
    }
    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }
    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }
    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    /// Continuous part on [0,1], linear between knots.
    pub fn continuous_part(&self, x: f64) -> f64 {
        let k = &self.knots;
        let j = k.partition_point(|p| p.0 <= x);
        if j == 0 {
            return 0.0;
        }
        if j == k.len() {
            return k[j - 1].1;
        }
        let (x0, c0) = k[j - 1];
        let (x1, c1) = k[j];
        c0 + (c1 - c0) * (x - x0) / (x1 - x0)
    }

    /// Mass of the atom at `x` (0 if none).
    pub fn atom_at(&self, x: f64) -> f64 {
        self.atoms
            .binary_search_by(|a| a.0.total_cmp(&x))
            .map(|i| self.atoms[i].1)
            .unwrap_or(0.0)
    }

    /// One-sided evaluation with periodic extension eval(x+1) = eval(x) + total_mass.
    pub fn eval(&self, x: f64, mode: EvalMode) -> f64 {
        let n = x.floor();
        let r = x - n;
        n * self.total_mass + self.eval_unit(r, mode)
    }

    fn eval_unit(&self, r: f64, mode: EvalMode) -> f64 {
        let include_here = match mode {
            EvalMode::LeftLimit => false,
            EvalMode::RightLimit => true,
            EvalMode::Value => self.side == Side::RightContinuous,
        };
        let jumps: f64 = self
            .atoms
            .iter()
            .take_while(|a| a.0 < r || (include_here && a.0 == r))
            .map(|a| a.1)
            .sum();
        self.continuous_part(r) + jumps
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn atomic_w() -> MeasureFunction {
        MeasureFunction::from_json(
            r#"{"name":"a","side":"cadlag","knots":[[0,0],[1,0.5]],"atoms":[[0.5,0.5]]}"#,
        )
        .unwrap()
    }

    #[test]
    fn identity_profile() {
        let w = MeasureFunction::from_json(r#"{"side":"cadlag","knots":[[0,0],[1,1]],"atoms":[]}"#).unwrap();
        assert_eq!(w.total_mass(), 1.0);
        assert_eq!(w.eval(0.3, EvalMode::Value), 0.3);
    }

    #[test]
    fn atomic_profile_limits() {
        let w = atomic_w();
        assert_eq!(w.total_mass(), 1.0);
        assert_eq!(w.eval(0.5, EvalMode::Value), 0.75);
        assert_eq!(w.eval(0.5, EvalMode::LeftLimit), 0.25);
        assert!((w.eval(1.3, EvalMode::Value) - 1.15).abs() < 1e-15);
    }

    #[test]
    fn caglad_value_excludes_atom() {
        let v = atomic_w().with_side(Side::LeftContinuous);
        assert_eq!(v.eval(0.5, EvalMode::Value), 0.25);
        assert_eq!(v.eval(0.5, EvalMode::RightLimit), 0.75);
    }

    #[test]
    fn atom_at_origin_rejected() {
        let r = MeasureFunction::from_json(
            r#"{"side":"cadlag","knots":[[0,0],[1,1]],"atoms":[[0,0.3]]}"#,
        );
        assert!(matches!(r, Err(Error::Invariant(_))));
    }

    #[test]
    fn malformed_documents_rejected() {
        assert!(matches!(MeasureFunction::from_json("{"), Err(Error::Schema(_))));
        let dec = MeasureFunction::from_json(r#"{"side":"cadlag","knots":[[0,0],[0.5,0.6],[1,0.4]]}"#);
        assert!(matches!(dec, Err(Error::Invariant(_))));
        let neg = MeasureFunction::from_json(r#"{"side":"cadlag","knots":[[0,0],[1,1]],"atoms":[[0.2,-1]]}"#);
        assert!(matches!(neg, Err(Error::Invariant(_))));
    }

    #[test]
    fn loader_normalizes_origin() {
        let w = MeasureFunction::from_json(r#"{"side":"cadlag","knots":[[0,2],[1,3]]}"#).unwrap();
        assert_eq!(w.eval(0.0, EvalMode::Value), 0.0);
        assert_eq!(w.total_mass(), 1.0);
    }

    #[test]
    fn periodic_increment_is_total_mass() {
        let w = atomic_w();
        for &x in &[-0.7, 0.1, 0.5, 0.99, 2.5] {
            let d = w.eval(x + 1.0, EvalMode::Value) - w.eval(x, EvalMode::Value);
            assert!((d - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn hash_ignores_name_and_tracks_content() {
        let a = atomic_w();
        let mut s = a.to_spec();
        s.name = "other".into();
        let b = MeasureFunction::from_spec(&s).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        assert_ne!(a.content_hash(), MeasureFunction::identity(Side::RightContinuous).content_hash());
    }
}
