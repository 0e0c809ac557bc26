//! Element-wise and reduction arithmetic shared by the stream units and the
//! bit-level tests. Updates multiply first and add second; nothing is fused.

use thiserror::Error;

/// Default delay-buffer length for streamed dot products.
pub const DEFAULT_L_ACC: usize = 8;
/// Default pipeline depth of the left-divide unit.
pub const DEFAULT_DIVIDE_LATENCY: usize = 33;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("stream underrun: expected {expected} elements, got {got}")]
    Underrun { expected: usize, got: usize },
    #[error("division by zero at index {index}")]
    DivisionByZero { index: usize },
}

/// Cyclic array of partial sums: term `i` lands in slot `i mod L`.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayBuffer {
    partials: Vec<f64>,
    next: usize,
}

impl DelayBuffer {
    pub fn new(l_acc: usize) -> Self {
        assert!(l_acc >= 1, "delay buffer needs at least one slot");
        Self {
            partials: vec![0.0; l_acc],
            next: 0,
        }
    }

    pub fn add(&mut self, term: f64) {
        self.partials[self.next] += term;
        self.next += 1;
        if self.next == self.partials.len() {
            self.next = 0;
        }
    }

    /// Phase II: left-to-right sum of the partials starting from +0.0.
    pub fn finish(&self) -> f64 {
        self.partials.iter().fold(0.0, |s, &p| s + p)
    }

    pub fn partials(&self) -> &[f64] {
        &self.partials
    }
}

fn check_len(expected: usize, got: usize) -> Result<(), KernelError> {
    if got < expected {
        Err(KernelError::Underrun { expected, got })
    } else {
        Ok(())
    }
}

pub fn dot_product(xs: &[f64], ys: &[f64], len: usize, l_acc: usize) -> Result<f64, KernelError> {
    check_len(len, xs.len().min(ys.len()))?;
    let mut buf = DelayBuffer::new(l_acc);
    for i in 0..len {
        buf.add(xs[i] * ys[i]);
    }
    Ok(buf.finish())
}

/// `x + alpha * p`
pub fn update_x(x: &[f64], p: &[f64], alpha: f64, len: usize) -> Result<Vec<f64>, KernelError> {
    check_len(len, x.len().min(p.len()))?;
    Ok((0..len).map(|i| x[i] + alpha * p[i]).collect())
}

/// `r - alpha * ap`
pub fn update_r(r: &[f64], ap: &[f64], alpha: f64, len: usize) -> Result<Vec<f64>, KernelError> {
    check_len(len, r.len().min(ap.len()))?;
    Ok((0..len).map(|i| r[i] - alpha * ap[i]).collect())
}

/// `(r / m, r)`
pub fn left_divide(m: &[f64], r: &[f64], len: usize) -> Result<(Vec<f64>, Vec<f64>), KernelError> {
    check_len(len, m.len().min(r.len()))?;
    let mut z = Vec::with_capacity(len);
    for i in 0..len {
        if m[i] == 0.0 {
            return Err(KernelError::DivisionByZero { index: i });
        }
        z.push(r[i] / m[i]);
    }
    Ok((z, r[..len].to_vec()))
}

/// `(z + beta * p, p)`
pub fn update_p(z: &[f64], p: &[f64], beta: f64, len: usize) -> Result<(Vec<f64>, Vec<f64>), KernelError> {
    check_len(len, z.len().min(p.len()))?;
    Ok(((0..len).map(|i| z[i] + beta * p[i]).collect(), p[..len].to_vec()))
}
