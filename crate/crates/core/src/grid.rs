use serde::{Deserialize, Serialize};

/// Dense day-by-state matrix with 1-based day indexing.
///
/// Row `first_day` is stored at offset 0. Counts use `first_day = 1`; the
/// inflow projection uses `first_day = 0` for its initial condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayMatrix<T> {
    first_day: usize,
    days: usize,
    states: usize,
    data: Vec<T>,
}

impl<T: Copy + Default> DayMatrix<T> {
    pub fn new(first_day: usize, days: usize, states: usize) -> Self {
        DayMatrix {
            first_day,
            days,
            states,
            data: vec![T::default(); days * states],
        }
    }

    pub fn first_day(&self) -> usize {
        self.first_day
    }

    pub fn last_day(&self) -> usize {
        self.first_day + self.days - 1
    }

    pub fn days(&self) -> usize {
        self.days
    }

    pub fn states(&self) -> usize {
        self.states
    }

    #[inline]
    fn offset(&self, day: usize, state: usize) -> usize {
        assert!(
            day >= self.first_day && day < self.first_day + self.days,
            "day {day} outside {}..={}",
            self.first_day,
            self.last_day()
        );
        assert!(state < self.states, "state {state} out of range");
        (day - self.first_day) * self.states + state
    }

    #[inline]
    pub fn get(&self, day: usize, state: usize) -> T {
        self.data[self.offset(day, state)]
    }

    #[inline]
    pub fn set(&mut self, day: usize, state: usize, value: T) {
        let i = self.offset(day, state);
        self.data[i] = value;
    }

    #[inline]
    pub fn get_mut(&mut self, day: usize, state: usize) -> &mut T {
        let i = self.offset(day, state);
        &mut self.data[i]
    }

    /// Values of one state across all stored days.
    pub fn column(&self, state: usize) -> Vec<T> {
        (self.first_day..=self.last_day()).map(|d| self.get(d, state)).collect()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.first_day == other.first_day && self.days == other.days && self.states == other.states
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }
}

impl<T: Copy + Default + std::ops::AddAssign> DayMatrix<T> {
    /// Elementwise accumulation; shapes must agree.
    pub fn add_assign(&mut self, other: &Self) {
        assert!(self.same_shape(other), "shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }
}
