//! Step-indexed tables over states and state-action pairs.
//!
//! Steps are zero-based internally: step `h` in `0..horizon` corresponds to
//! the one-based time step `h + 1`.

use crate::scalar::Scalar;

/// A real value per `(h, s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaTable<T> {
    horizon: usize,
    states: usize,
    actions: usize,
    data: Vec<T>,
}

impl<T: Scalar> SaTable<T> {
    pub fn filled(horizon: usize, states: usize, actions: usize, value: T) -> Self {
        Self {
            horizon,
            states,
            actions,
            data: vec![value; horizon * states * actions],
        }
    }

    pub fn zeros(horizon: usize, states: usize, actions: usize) -> Self {
        Self::filled(horizon, states, actions, T::zero())
    }

    pub fn from_fn(
        horizon: usize,
        states: usize,
        actions: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(horizon * states * actions);
        for h in 0..horizon {
            for s in 0..states {
                for a in 0..actions {
                    data.push(f(h, s, a));
                }
            }
        }
        Self {
            horizon,
            states,
            actions,
            data,
        }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.horizon, self.states, self.actions)
    }

    #[inline]
    fn offset(&self, h: usize, s: usize, a: usize) -> usize {
        debug_assert!(h < self.horizon && s < self.states && a < self.actions);
        (h * self.states + s) * self.actions + a
    }

    #[inline]
    pub fn get(&self, h: usize, s: usize, a: usize) -> T {
        self.data[self.offset(h, s, a)]
    }

    #[inline]
    pub fn set(&mut self, h: usize, s: usize, a: usize, value: T) {
        let i = self.offset(h, s, a);
        self.data[i] = value;
    }

    /// All actions' entries at `(h, s)`.
    #[inline]
    pub fn row(&self, h: usize, s: usize) -> &[T] {
        let i = self.offset(h, s, 0);
        &self.data[i..i + self.actions]
    }

    #[inline]
    pub fn row_mut(&mut self, h: usize, s: usize) -> &mut [T] {
        let i = self.offset(h, s, 0);
        &mut self.data[i..i + self.actions]
    }

    /// All `(s, a)` entries at step `h`, state-major.
    pub fn step(&self, h: usize) -> &[T] {
        let n = self.states * self.actions;
        &self.data[h * n..(h + 1) * n]
    }

    pub fn step_mut(&mut self, h: usize) -> &mut [T] {
        let n = self.states * self.actions;
        &mut self.data[h * n..(h + 1) * n]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            data: self.data.iter().map(|&x| f(x)).collect(),
            ..*self
        }
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: T, other: &Self) {
        assert_eq!(self.shape(), other.shape());
        for (x, &y) in self.data.iter_mut().zip(&other.data) {
            *x += alpha * y;
        }
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// A real value per `(h, s)` for `h` in `0..=horizon`; the last step is the
/// terminal row and is identically zero for value functions.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTable<T> {
    steps: usize,
    states: usize,
    data: Vec<T>,
}

impl<T: Scalar> StateTable<T> {
    /// Table with `horizon + 1` rows of zeros.
    pub fn zeros(horizon: usize, states: usize) -> Self {
        Self {
            steps: horizon + 1,
            states,
            data: vec![T::zero(); (horizon + 1) * states],
        }
    }

    pub fn horizon(&self) -> usize {
        self.steps - 1
    }

    pub fn states(&self) -> usize {
        self.states
    }

    #[inline]
    pub fn get(&self, h: usize, s: usize) -> T {
        self.data[h * self.states + s]
    }

    #[inline]
    pub fn set(&mut self, h: usize, s: usize, value: T) {
        self.data[h * self.states + s] = value;
    }

    pub fn step(&self, h: usize) -> &[T] {
        &self.data[h * self.states..(h + 1) * self.states]
    }

    pub fn step_mut(&mut self, h: usize) -> &mut [T] {
        &mut self.data[h * self.states..(h + 1) * self.states]
    }
}
