use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar used by the regression and metric code.
///
/// `Display` must print the shortest representation that parses back to the
/// same value, which holds for the primitive float types.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Display + Debug + FromStr + Default + Sum + Send + Sync + 'static
{
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }

    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("count representable")
    }

    /// Total order for sorting; NaN sorts last.
    fn total_cmp_real(&self, other: &Self) -> std::cmp::Ordering {
        match (self.is_nan(), other.is_nan()) {
            (true, true) => std::cmp::Ordering::Equal,
            (true, false) => std::cmp::Ordering::Greater,
            (false, true) => std::cmp::Ordering::Less,
            _ => self.partial_cmp(other).unwrap(),
        }
    }
}

impl Real for f32 {}
impl Real for f64 {}
