use num_traits::Float;

/// Floating-point element type of the network. `f32` is used for training,
/// `f64` for gradient checks.
pub trait Scalar: Float + Default + Send + Sync + std::fmt::Debug + std::iter::Sum + std::ops::AddAssign + 'static {
    /// `C <- alpha A B + beta C` with arbitrary row/column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(m: usize, k: usize, n: usize, alpha: Self, a: &[Self], rsa: isize, csa: isize, b: &[Self], rsb: isize, csb: isize, beta: Self, c: &mut [Self], rsc: isize, csc: isize);

    fn of(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).unwrap()
    }

    fn f64(self) -> f64 {
        self.to_f64().unwrap()
    }
}

fn check_extents(m: usize, k: usize, n: usize, a: usize, b: usize, c: usize, rsa: isize, csa: isize, rsb: isize, csb: isize, rsc: isize, csc: isize) {
    let span = |r: usize, cdim: usize, rs: isize, cs: isize| {
        if r == 0 || cdim == 0 { 0 } else { (r - 1) as isize * rs + (cdim - 1) as isize * cs + 1 }
    };
    assert!(span(m, k, rsa, csa) as usize <= a && span(k, n, rsb, csb) as usize <= b && span(m, n, rsc, csc) as usize <= c);
    assert!(rsa >= 0 && csa >= 0 && rsb >= 0 && csb >= 0 && rsc >= 0 && csc >= 0);
}

impl Scalar for f32 {
    fn gemm(m: usize, k: usize, n: usize, alpha: f32, a: &[f32], rsa: isize, csa: isize, b: &[f32], rsb: isize, csb: isize, beta: f32, c: &mut [f32], rsc: isize, csc: isize) {
        check_extents(m, k, n, a.len(), b.len(), c.len(), rsa, csa, rsb, csb, rsc, csc);
        // SAFETY: every index reached through the strides lies inside the slices (checked above)
        unsafe { matrixmultiply::sgemm(m, k, n, alpha, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), rsc, csc) }
    }
}

impl Scalar for f64 {
    fn gemm(m: usize, k: usize, n: usize, alpha: f64, a: &[f64], rsa: isize, csa: isize, b: &[f64], rsb: isize, csb: isize, beta: f64, c: &mut [f64], rsc: isize, csc: isize) {
        check_extents(m, k, n, a.len(), b.len(), c.len(), rsa, csa, rsb, csb, rsc, csc);
        // SAFETY: as above
        unsafe { matrixmultiply::dgemm(m, k, n, alpha, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), rsc, csc) }
    }
}
