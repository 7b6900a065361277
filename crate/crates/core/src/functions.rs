//! Benchmark target functions with analytic gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Input domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    /// `[0, 1]^d`
    #[serde(rename = "A")]
    OmegaA,
    /// `[-1, 1]^d`
    #[serde(rename = "B")]
    OmegaB,
}

impl Domain {
    pub fn bounds(self) -> (f64, f64) {
        match self {
            Domain::OmegaA => (0.0, 1.0),
            Domain::OmegaB => (-1.0, 1.0),
        }
    }

    pub fn lo(self, d: usize) -> Vec<f64> {
        vec![self.bounds().0; d]
    }

    pub fn hi(self, d: usize) -> Vec<f64> {
        vec![self.bounds().1; d]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::OmegaA => "A",
            Domain::OmegaB => "B",
        }
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" | "omega_a" => Ok(Domain::OmegaA),
            "B" | "b" | "omega_b" => Ok(Domain::OmegaB),
            other => Err(Error::InvalidArgument(format!("unknown domain `{other}` (expected A or B)"))),
        }
    }
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FunctionKind {
    /// `x1^2 + x2^2`
    F1,
    /// `5/8 x1^2 + 5/8 x2^2 - 3/4 x1 x2`
    F2,
    /// `x1^2 - x2^2`
    F3,
    /// `sum x_i^2`
    F4,
    /// `sin(sum x_i^2)`
    F5,
    /// `prod 1 / (1 + x_i^2)`
    F6,
    /// `-x_d^2 + sum_{i<d} x_i^2`
    F7,
    Const(f64),
    /// `(a^T x)^2`
    Ridge(Vec<f64>),
}

/// A registered target function on a fixed dimension and domain.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    kind: FunctionKind,
    d: usize,
    domain: Domain,
}

/// Names accepted by [`TestFunction::from_name`].
pub const FUNCTION_NAMES: [&str; 9] = ["f1", "f2", "f3", "f4", "f5", "f6", "f7", "const", "ridge"];

impl TestFunction {
    pub fn new(kind: FunctionKind, d: usize, domain: Domain) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("dimension must be at least 1".into()));
        }
        match &kind {
            FunctionKind::F1 | FunctionKind::F2 | FunctionKind::F3 if d != 2 => {
                return Err(Error::InvalidArgument(format!("{} is defined for d = 2 only", kind_name(&kind))));
            }
            FunctionKind::F7 if d < 2 => {
                return Err(Error::InvalidArgument("f7 needs d >= 2".into()));
            }
            FunctionKind::Ridge(a) if a.len() != d => {
                return Err(Error::DimensionMismatch {
                    context: "ridge direction",
                    expected: d,
                    got: a.len(),
                });
            }
            _ => {}
        }
        Ok(Self { kind, d, domain })
    }

    /// Looks up a registered name. `const` is the constant 1 and `ridge` uses
    /// the direction `a_i = i + 1`.
    pub fn from_name(name: &str, d: usize, domain: Domain) -> Result<Self> {
        let kind = match name {
            "f1" => FunctionKind::F1,
            "f2" => FunctionKind::F2,
            "f3" => FunctionKind::F3,
            "f4" => FunctionKind::F4,
            "f5" => FunctionKind::F5,
            "f6" => FunctionKind::F6,
            "f7" => FunctionKind::F7,
            "const" => FunctionKind::Const(1.0),
            "ridge" => FunctionKind::Ridge((1..=d).map(|i| i as f64).collect()),
            other => return Err(Error::UnknownFunction(other.to_string())),
        };
        Self::new(kind, d, domain)
    }

    pub fn constant(c: f64, d: usize, domain: Domain) -> Result<Self> {
        Self::new(FunctionKind::Const(c), d, domain)
    }

    pub fn ridge(a: Vec<f64>, domain: Domain) -> Result<Self> {
        let d = a.len();
        Self::new(FunctionKind::Ridge(a), d, domain)
    }

    pub fn name(&self) -> &'static str {
        kind_name(&self.kind)
    }

    pub fn kind(&self) -> &FunctionKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.eval(x)?.0)
    }

    /// Analytic value and gradient.
    pub fn eval(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch {
                context: "test function input",
                expected: self.d,
                got: x.len(),
            });
        }
        let sq: f64 = x.iter().map(|v| v * v).sum();
        Ok(match &self.kind {
            FunctionKind::F1 | FunctionKind::F4 => (sq, x.iter().map(|v| 2.0 * v).collect()),
            FunctionKind::F2 => {
                let (a, b) = (x[0], x[1]);
                (
                    0.625 * a * a + 0.625 * b * b - 0.75 * a * b,
                    vec![1.25 * a - 0.75 * b, 1.25 * b - 0.75 * a],
                )
            }
            FunctionKind::F3 | FunctionKind::F7 => {
                let last = self.d - 1;
                let v = sq - 2.0 * x[last] * x[last];
                let mut g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
                g[last] = -g[last];
                (v, g)
            }
            FunctionKind::F5 => {
                let c = 2.0 * sq.cos();
                (sq.sin(), x.iter().map(|v| c * v).collect())
            }
            FunctionKind::F6 => {
                let v: f64 = x.iter().map(|v| 1.0 / (1.0 + v * v)).product();
                (v, x.iter().map(|xi| -2.0 * xi / (1.0 + xi * xi) * v).collect())
            }
            FunctionKind::Const(c) => (*c, vec![0.0; self.d]),
            FunctionKind::Ridge(a) => {
                let s: f64 = a.iter().zip(x).map(|(a, x)| a * x).sum();
                (s * s, a.iter().map(|a| 2.0 * s * a).collect())
            }
        })
    }
}

fn kind_name(kind: &FunctionKind) -> &'static str {
    match kind {
        FunctionKind::F1 => "f1",
        FunctionKind::F2 => "f2",
        FunctionKind::F3 => "f3",
        FunctionKind::F4 => "f4",
        FunctionKind::F5 => "f5",
        FunctionKind::F6 => "f6",
        FunctionKind::F7 => "f7",
        FunctionKind::Const(_) => "const",
        FunctionKind::Ridge(_) => "ridge",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn all(d: usize) -> Vec<TestFunction> {
        FUNCTION_NAMES
            .iter()
            .filter(|n| d == 2 || !matches!(**n, "f1" | "f2" | "f3"))
            .map(|n| TestFunction::from_name(n, d, Domain::OmegaB).unwrap())
            .collect()
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d in [2, 5] {
            for f in all(d) {
                for _ in 0..20 {
                    let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let (_, g) = f.eval(&x).unwrap();
                    for i in 0..d {
                        let h = 1e-6;
                        let mut xp = x.clone();
                        let mut xm = x.clone();
                        xp[i] += h;
                        xm[i] -= h;
                        let fd = (f.value(&xp).unwrap() - f.value(&xm).unwrap()) / (2.0 * h);
                        assert!((fd - g[i]).abs() < 1e-6, "{} d={d} i={i}: {fd} vs {}", f.name(), g[i]);
                    }
                }
            }
        }
    }

    #[test]
    fn critical_points() {
        let f4 = TestFunction::from_name("f4", 6, Domain::OmegaA).unwrap();
        assert_eq!(f4.eval(&[0.0; 6]).unwrap(), (0.0, vec![0.0; 6]));
        let f6 = TestFunction::from_name("f6", 6, Domain::OmegaA).unwrap();
        assert_eq!(f6.eval(&[0.0; 6]).unwrap(), (1.0, vec![0.0; 6]));
    }

    #[test]
    fn f7_in_two_dimensions_is_f3() {
        let f3 = TestFunction::from_name("f3", 2, Domain::OmegaB).unwrap();
        let f7 = TestFunction::from_name("f7", 2, Domain::OmegaB).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            assert_eq!(f3.eval(&x).unwrap(), f7.eval(&x).unwrap());
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            TestFunction::from_name("f9", 2, Domain::OmegaA),
            Err(Error::UnknownFunction(_))
        ));
        assert!(TestFunction::from_name("f1", 3, Domain::OmegaA).is_err());
        let f4 = TestFunction::from_name("f4", 3, Domain::OmegaA).unwrap();
        assert!(f4.eval(&[0.0; 2]).is_err());
    }
}
