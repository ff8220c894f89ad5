// C ABI wrapper around the Clarabel interior-point solver.
// Exposes a single solve entry point over CSC matrices and tagged cones.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use std::panic;
use std::sync::Once;

static INIT: Once = Once::new();

// Cone tags accepted from the C side.
const TAG_ZERO: i32 = 0;
const TAG_NONNEG: i32 = 1;
const TAG_SOC: i32 = 2;
const TAG_PSD_TRIANGLE: i32 = 3;

// Status codes returned to the C side.
const STATUS_OPTIMAL: i32 = 0;
const STATUS_PRIMAL_INFEASIBLE: i32 = 1;
const STATUS_DUAL_INFEASIBLE: i32 = 2;
const STATUS_ALMOST_OPTIMAL: i32 = 3;
const STATUS_NUMERICAL_LIMIT: i32 = 4;
const STATUS_ERROR: i32 = 5;

unsafe fn slice<'a, T>(ptr: *const T, len: i64) -> &'a [T] {
    if len == 0 {
        &[]
    } else {
        std::slice::from_raw_parts(ptr, len as usize)
    }
}

fn csc_from_raw(
    m: usize,
    n: usize,
    nzval: &[f64],
    rowval: &[i64],
    colptr: &[i64],
) -> Option<CscMatrix<f64>> {
    if colptr.len() != n + 1 {
        return None;
    }
    let colptr_us: Vec<usize> = colptr.iter().map(|&v| v as usize).collect();
    let rowval_us: Vec<usize> = rowval.iter().map(|&v| v as usize).collect();
    Some(CscMatrix::new(m, n, colptr_us, rowval_us, nzval.to_vec()))
}

/// Solves min (1/2) x'Px + q'x  s.t.  Ax + s = b,  s in K.
///
/// P is upper-triangular CSC (pass zero nnz for a linear objective). Cones are
/// given as parallel tag/dim arrays; for PSD cones the dim entry is the matrix
/// side and the block occupies side*(side+1)/2 consecutive rows in svec order.
/// Returns a status code; primal/dual/slack vectors are written to the output
/// buffers whenever the solver produced them.
#[no_mangle]
pub unsafe extern "C" fn conic_backend_solve(
    n: i64,
    m: i64,
    p_nzval: *const f64,
    p_rowval: *const i64,
    p_colptr: *const i64,
    p_nnz: i64,
    q: *const f64,
    a_nzval: *const f64,
    a_rowval: *const i64,
    a_colptr: *const i64,
    a_nnz: i64,
    b: *const f64,
    cone_tags: *const i32,
    cone_dims: *const i64,
    n_cones: i64,
    tol_feas: f64,
    tol_gap: f64,
    max_iter: i64,
    verbose: i32,
    x_out: *mut f64,
    z_out: *mut f64,
    s_out: *mut f64,
    obj_out: *mut f64,
    res_out: *mut f64,
    iters_out: *mut i64,
    time_out: *mut f64,
) -> i32 {
    INIT.call_once(|| {
        // Single-threaded BLAS keeps repeated solves bit-identical.
        std::env::set_var("OPENBLAS_NUM_THREADS", "1");
    });

    let result = panic::catch_unwind(|| {
        let nu = n as usize;
        let mu = m as usize;

        let q_s = slice(q, n).to_vec();
        let b_s = slice(b, m).to_vec();

        let p_mat = match csc_from_raw(
            nu,
            nu,
            slice(p_nzval, p_nnz),
            slice(p_rowval, p_nnz),
            slice(p_colptr, if p_nnz >= 0 { n + 1 } else { 0 }),
        ) {
            Some(mat) => mat,
            None => return STATUS_ERROR,
        };
        let a_mat = match csc_from_raw(
            mu,
            nu,
            slice(a_nzval, a_nnz),
            slice(a_rowval, a_nnz),
            slice(a_colptr, n + 1),
        ) {
            Some(mat) => mat,
            None => return STATUS_ERROR,
        };

        let tags = slice(cone_tags, n_cones);
        let dims = slice(cone_dims, n_cones);
        let mut cones: Vec<SupportedConeT<f64>> = Vec::with_capacity(n_cones as usize);
        for (tag, dim) in tags.iter().zip(dims.iter()) {
            let d = *dim as usize;
            match *tag {
                TAG_ZERO => cones.push(SupportedConeT::ZeroConeT(d)),
                TAG_NONNEG => cones.push(SupportedConeT::NonnegativeConeT(d)),
                TAG_SOC => cones.push(SupportedConeT::SecondOrderConeT(d)),
                TAG_PSD_TRIANGLE => cones.push(SupportedConeT::PSDTriangleConeT(d)),
                _ => return STATUS_ERROR,
            }
        }

        let settings = match DefaultSettingsBuilder::default()
            .verbose(verbose != 0)
            .max_iter(max_iter as u32)
            .tol_gap_abs(tol_gap)
            .tol_gap_rel(tol_gap)
            .tol_feas(tol_feas)
            .build()
        {
            Ok(s) => s,
            Err(_) => return STATUS_ERROR,
        };

        let mut solver = match DefaultSolver::new(&p_mat, &q_s, &a_mat, &b_s, &cones, settings) {
            Ok(s) => s,
            Err(_) => return STATUS_ERROR,
        };
        solver.solve();

        let sol = &solver.solution;
        if sol.x.len() == nu && !x_out.is_null() {
            std::ptr::copy_nonoverlapping(sol.x.as_ptr(), x_out, nu);
        }
        if sol.z.len() == mu && !z_out.is_null() {
            std::ptr::copy_nonoverlapping(sol.z.as_ptr(), z_out, mu);
        }
        if sol.s.len() == mu && !s_out.is_null() {
            std::ptr::copy_nonoverlapping(sol.s.as_ptr(), s_out, mu);
        }
        if !obj_out.is_null() {
            *obj_out = sol.obj_val;
        }
        if !res_out.is_null() {
            let info = &solver.info;
            *res_out.offset(0) = info.res_primal;
            *res_out.offset(1) = info.res_dual;
            *res_out.offset(2) = info.gap_rel;
        }
        if !iters_out.is_null() {
            *iters_out = solver.info.iterations as i64;
        }
        if !time_out.is_null() {
            *time_out = solver.info.solve_time;
        }

        match sol.status {
            SolverStatus::Solved => STATUS_OPTIMAL,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                STATUS_PRIMAL_INFEASIBLE
            }
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
                STATUS_DUAL_INFEASIBLE
            }
            SolverStatus::AlmostSolved => STATUS_ALMOST_OPTIMAL,
            _ => STATUS_NUMERICAL_LIMIT,
        }
    });

    result.unwrap_or(STATUS_ERROR)
}

/// Returns the backing solver version as a static string.
#[no_mangle]
pub extern "C" fn conic_backend_version() -> *const std::os::raw::c_char {
    concat!("clarabel-", env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const _
}
