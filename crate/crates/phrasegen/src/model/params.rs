//! Named parameter storage shared by the tape, the optimizer, and
//! checkpoints.

use rand::Rng;

/// One named weight tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// All parameters of a model, in creation order. Creation order is the
/// canonical order for optimizer state and checkpoints.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    pub entries: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> ParamSet {
        ParamSet { entries: Vec::new() }
    }

    pub fn add(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> usize {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "param {name}: shape/data mismatch");
        assert!(
            self.entries.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        self.entries.push(Param { name: name.to_string(), shape: shape.to_vec(), data });
        self.entries.len() - 1
    }

    /// Glorot-uniform initialized matrix/tensor; fan counts use the
    /// first dim as fan-in and the rest as fan-out.
    pub fn add_glorot(&mut self, name: &str, shape: &[usize], rng: &mut impl Rng) -> usize {
        let fan_in = shape[0] as f64;
        let fan_out = shape[1..].iter().product::<usize>() as f64;
        let bound = (6.0 / (fan_in + fan_out)).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        self.add(name, shape, data)
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> usize {
        let n: usize = shape.iter().product();
        self.add(name, shape, vec![0.0; n])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|p| p.name == name)
    }

    pub fn total_elements(&self) -> usize {
        self.entries.iter().map(|p| p.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|p| p.data.iter().all(|x| x.is_finite()))
    }
}

/// Gradient buffers aligned with a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub grads: Vec<Vec<f64>>,
}

impl ParamGrads {
    pub fn zeros_like(params: &ParamSet) -> ParamGrads {
        ParamGrads { grads: params.entries.iter().map(|p| vec![0.0; p.data.len()]).collect() }
    }

    pub fn zero(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in &mut self.grads {
            for x in g.iter_mut() {
                *x *= c;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().all(|g| g.iter().all(|x| x.is_finite()))
    }
}
