//! Dense kernels over row-major slices. Loops are shaped so LLVM can vectorize them.

use crate::scalar::Scalar;

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    s
}

#[inline]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

/// `out[r] += W[r, :] · x`
#[inline]
pub fn matvec_acc<T: Scalar>(w: &[T], x: &[T], out: &mut [T]) {
    let cols = x.len();
    debug_assert_eq!(w.len(), cols * out.len());
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += dot(row, x);
    }
}

/// `dx += Wᵀ dy`
#[inline]
pub fn matvec_t_acc<T: Scalar>(w: &[T], dy: &[T], dx: &mut [T]) {
    let cols = dx.len();
    debug_assert_eq!(w.len(), cols * dy.len());
    for (&g, row) in dy.iter().zip(w.chunks_exact(cols)) {
        if g != T::zero() {
            axpy(g, row, dx);
        }
    }
}

/// `dW += dy xᵀ`
#[inline]
pub fn outer_acc<T: Scalar>(dw: &mut [T], dy: &[T], x: &[T]) {
    let cols = x.len();
    debug_assert_eq!(dw.len(), cols * dy.len());
    for (&g, row) in dy.iter().zip(dw.chunks_exact_mut(cols)) {
        if g != T::zero() {
            axpy(g, x, row);
        }
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}
