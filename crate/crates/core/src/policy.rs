//! Stochastic Markov policies.

use crate::scalar::Scalar;
use crate::tables::SaTable;

/// Explicit action probabilities `π_h(a | s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable<T> {
    probs: SaTable<T>,
}

impl<T: Scalar> PolicyTable<T> {
    pub fn uniform(horizon: usize, states: usize, actions: usize) -> Self {
        let p = T::one() / T::count(actions);
        Self {
            probs: SaTable::filled(horizon, states, actions, p),
        }
    }

    /// Point-mass policy from `choice[h][s]`.
    pub fn deterministic(choice: &[Vec<usize>], actions: usize) -> Self {
        let horizon = choice.len();
        let states = choice.first().map_or(0, Vec::len);
        Self {
            probs: SaTable::from_fn(horizon, states, actions, |h, s, a| {
                if choice[h][s] == a {
                    T::one()
                } else {
                    T::zero()
                }
            }),
        }
    }

    /// Wraps a probability table; rows must already be normalized.
    pub fn from_table(probs: SaTable<T>) -> Self {
        Self { probs }
    }

    #[inline]
    pub fn probs(&self, h: usize, s: usize) -> &[T] {
        self.probs.row(h, s)
    }

    #[inline]
    pub fn prob(&self, h: usize, s: usize, a: usize) -> T {
        self.probs.get(h, s, a)
    }

    pub fn table(&self) -> &SaTable<T> {
        &self.probs
    }

    pub fn horizon(&self) -> usize {
        self.probs.horizon()
    }

    pub fn states(&self) -> usize {
        self.probs.states()
    }

    pub fn actions(&self) -> usize {
        self.probs.actions()
    }

    /// `⟨π_h(·|s), f(s, ·)⟩` for a table `f` on the same grid.
    #[inline]
    pub fn average(&self, f: &SaTable<T>, h: usize, s: usize) -> T {
        self.probs(h, s)
            .iter()
            .zip(f.row(h, s))
            .map(|(&p, &x)| p * x)
            .sum()
    }

    /// Largest `|Σ_a π_h(a|s) − 1|` over all `(h, s)`.
    pub fn normalization_error(&self) -> T {
        let mut worst = T::zero();
        for h in 0..self.horizon() {
            for s in 0..self.states() {
                let total: T = self.probs(h, s).iter().copied().sum();
                worst = worst.max((total - T::one()).abs());
            }
        }
        worst
    }
}

/// Exponential-weights policy `π_h(a|s) ∝ exp(−η · L_h(s, a))` over
/// accumulated loss estimates `L`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxPolicy<T> {
    logits: SaTable<T>,
    eta: T,
}

impl<T: Scalar> SoftmaxPolicy<T> {
    /// All-zero accumulated losses, i.e. the uniform policy.
    pub fn uniform(horizon: usize, states: usize, actions: usize, eta: T) -> Self {
        Self {
            logits: SaTable::zeros(horizon, states, actions),
            eta,
        }
    }

    pub fn from_logits(logits: SaTable<T>, eta: T) -> Self {
        Self { logits, eta }
    }

    pub fn eta(&self) -> T {
        self.eta
    }

    pub fn logits(&self) -> &SaTable<T> {
        &self.logits
    }

    /// `L += scale · losses`
    pub fn accumulate(&mut self, losses: &SaTable<T>, scale: T) {
        self.logits.add_scaled(scale, losses);
    }

    /// Action probabilities, computed after subtracting the per-row minimum
    /// accumulated loss.
    pub fn probabilities(&self) -> PolicyTable<T> {
        let (horizon, states, actions) = self.logits.shape();
        let mut probs = SaTable::zeros(horizon, states, actions);
        for h in 0..horizon {
            for s in 0..states {
                let row = self.logits.row(h, s);
                let min = row.iter().fold(T::infinity(), |m, &x| m.min(x));
                let out = probs.row_mut(h, s);
                let mut total = T::zero();
                for (o, &l) in out.iter_mut().zip(row) {
                    *o = (-self.eta * (l - min)).exp();
                    total += *o;
                }
                out.iter_mut().for_each(|o| *o /= total);
            }
        }
        PolicyTable { probs }
    }
}
