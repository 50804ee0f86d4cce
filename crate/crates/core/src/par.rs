//! Order-preserving map over independent jobs.
//!
//! With the `parallel` feature the work is spread over the rayon pool unless
//! the caller asks for a sequential run; without it everything is sequential.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub fn map<T, R, F>(items: &[T], parallel: bool, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel {
        return items.par_iter().map(f).collect();
    }
    let _ = parallel;
    items.iter().map(f).collect()
}

pub fn parallel_available() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    #[test]
    fn keeps_input_order() {
        let xs: Vec<u64> = (0..500).collect();
        let a = super::map(&xs, true, |x| x * x);
        let b = super::map(&xs, false, |x| x * x);
        assert_eq!(a, b);
        assert_eq!(a[499], 499 * 499);
    }
}
