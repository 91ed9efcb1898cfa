use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{Branch, GridError, PowerSystem};

/// Dense bus admittance matrix `Y = G + jB`, indexed like the case's bus list.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    y: DMatrix<Complex64>,
}

impl AdmittanceMatrix {
    pub fn dim(&self) -> usize {
        self.y.nrows()
    }

    pub fn get(&self, i: usize, k: usize) -> Complex64 {
        self.y[(i, k)]
    }

    pub fn g(&self, i: usize, k: usize) -> f64 {
        self.y[(i, k)].re
    }

    pub fn b(&self, i: usize, k: usize) -> f64 {
        self.y[(i, k)].im
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.y
    }

    /// Complex current injections `I = Y V`.
    pub fn currents(&self, v: &[Complex64]) -> Vec<Complex64> {
        (0..self.dim())
            .map(|i| (0..self.dim()).map(|k| self.y[(i, k)] * v[k]).sum())
            .collect()
    }
}

/// The four π-model entries `(Yff, Yft, Ytf, Ytt)` of one branch.
pub(crate) fn branch_admittances(br: &Branch) -> Result<[Complex64; 4], GridError> {
    let z = Complex64::new(br.r, br.x);
    if z.norm() == 0.0 {
        return Err(GridError::SingularBranch {
            from: br.from,
            to: br.to,
        });
    }
    let ys = z.inv();
    let tap = Complex64::from_polar(br.ratio(), br.shift_deg.to_radians());
    let ytt = ys + Complex64::new(0.0, br.b / 2.0);
    let yff = ytt / (tap * tap.conj());
    let yft = -ys / tap.conj();
    let ytf = -ys / tap;
    Ok([yff, yft, ytf, ytt])
}

/// Off-diagonals `−y_ik`, diagonals the sum of incident branch admittances
/// (with half line charging and tap scaling) plus bus shunts.
pub fn build_admittance(sys: &PowerSystem) -> Result<AdmittanceMatrix, GridError> {
    let n = sys.buses().len();
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for br in sys.branches() {
        let [yff, yft, ytf, ytt] = branch_admittances(br)?;
        let f = sys.bus_index(br.from)?;
        let t = sys.bus_index(br.to)?;
        y[(f, f)] += yff;
        y[(f, t)] += yft;
        y[(t, f)] += ytf;
        y[(t, t)] += ytt;
    }
    for (i, bus) in sys.buses().iter().enumerate() {
        y[(i, i)] += Complex64::new(bus.gs_mw, bus.bs_mvar) / sys.base_mva();
    }
    Ok(AdmittanceMatrix { y })
}
