use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::cell::{project, sigmoid, slice_of, slice_of_mut, RecurrentCell};
use crate::error::{Error, Result};

/// One direction of a GRU layer. Input weights are hidden×input, recurrent
/// weights hidden×hidden.
#[derive(Debug, Clone, PartialEq)]
pub struct GruDirectionParams {
    pub w_z: Array2<f64>,
    pub w_r: Array2<f64>,
    pub w_h: Array2<f64>,
    pub u_z: Array2<f64>,
    pub u_r: Array2<f64>,
    pub u_h: Array2<f64>,
    pub b_z: Array1<f64>,
    pub b_r: Array1<f64>,
    pub b_h: Array1<f64>,
}

/// Per-step intermediates of a GRU scan, one row per timestep.
#[derive(Debug, Clone)]
pub struct GruTrace {
    z: Array2<f64>,
    r: Array2<f64>,
    candidate: Array2<f64>,
    h_prev: Array2<f64>,
    reset_hidden: Array2<f64>,
    hidden: Array2<f64>,
}

impl GruDirectionParams {
    fn check(&self, x: usize, h: usize) -> Result<()> {
        if x != self.input_dim() || h != self.hidden_dim() {
            return Err(Error::ShapeMismatch(format!(
                "gru cell expects input {} / hidden {}, got {x} / {h}",
                self.input_dim(),
                self.hidden_dim()
            )));
        }
        Ok(())
    }
}

/// Single GRU step:
///
/// ```text
/// z = σ(W_z x + U_z h + b_z)
/// r = σ(W_r x + U_r h + b_r)
/// h̃ = tanh(W_h x + U_h (r ⊙ h) + b_h)
/// h' = (1 − z) ⊙ h + z ⊙ h̃
/// ```
pub fn gru_cell(
    x: ArrayView1<f64>,
    h_prev: ArrayView1<f64>,
    p: &GruDirectionParams,
) -> Result<Array1<f64>> {
    p.check(x.len(), h_prev.len())?;
    let z = (p.w_z.dot(&x) + p.u_z.dot(&h_prev) + &p.b_z).mapv(sigmoid);
    let r = (p.w_r.dot(&x) + p.u_r.dot(&h_prev) + &p.b_r).mapv(sigmoid);
    let rh = &r * &h_prev;
    let cand = (p.w_h.dot(&x) + p.u_h.dot(&rh) + &p.b_h).mapv(f64::tanh);
    Ok((1.0 - &z) * &h_prev + &z * &cand)
}

impl RecurrentCell for GruDirectionParams {
    const KIND: &'static str = "gru";
    type Trace = GruTrace;

    fn zeros(input: usize, hidden: usize) -> Self {
        let w = || Array2::zeros((hidden, input));
        let u = || Array2::zeros((hidden, hidden));
        let b = || Array1::zeros(hidden);
        GruDirectionParams {
            w_z: w(),
            w_r: w(),
            w_h: w(),
            u_z: u(),
            u_r: u(),
            u_h: u(),
            b_z: b(),
            b_r: b(),
            b_h: b(),
        }
    }

    fn input_dim(&self) -> usize {
        self.w_z.ncols()
    }

    fn hidden_dim(&self) -> usize {
        self.w_z.nrows()
    }

    fn scan(&self, xs: ArrayView2<f64>) -> GruTrace {
        let (d, hid) = (xs.nrows(), self.hidden_dim());
        let xz = project(xs, &self.w_z, &self.b_z);
        let xr = project(xs, &self.w_r, &self.b_r);
        let xh = project(xs, &self.w_h, &self.b_h);
        let mut t = GruTrace {
            z: Array2::zeros((d, hid)),
            r: Array2::zeros((d, hid)),
            candidate: Array2::zeros((d, hid)),
            h_prev: Array2::zeros((d, hid)),
            reset_hidden: Array2::zeros((d, hid)),
            hidden: Array2::zeros((d, hid)),
        };
        let mut h = Array1::<f64>::zeros(hid);
        for i in 0..d {
            let z = (&xz.row(i) + &self.u_z.dot(&h)).mapv(sigmoid);
            let r = (&xr.row(i) + &self.u_r.dot(&h)).mapv(sigmoid);
            let rh = &r * &h;
            let cand = (&xh.row(i) + &self.u_h.dot(&rh)).mapv(f64::tanh);
            let next = (1.0 - &z) * &h + &z * &cand;
            t.z.row_mut(i).assign(&z);
            t.r.row_mut(i).assign(&r);
            t.candidate.row_mut(i).assign(&cand);
            t.h_prev.row_mut(i).assign(&h);
            t.reset_hidden.row_mut(i).assign(&rh);
            t.hidden.row_mut(i).assign(&next);
            h = next;
        }
        t
    }

    fn hidden_states(trace: &GruTrace) -> &Array2<f64> {
        &trace.hidden
    }

    fn scan_backward(
        &self,
        xs: ArrayView2<f64>,
        t: &GruTrace,
        d_hidden: ArrayView2<f64>,
        g: &mut Self,
    ) -> Array2<f64> {
        let (d, hid) = (xs.nrows(), self.hidden_dim());
        let uz_t = self.u_z.t().to_owned();
        let ur_t = self.u_r.t().to_owned();
        let uh_t = self.u_h.t().to_owned();
        let mut da_z = Array2::zeros((d, hid));
        let mut da_r = Array2::zeros((d, hid));
        let mut da_h = Array2::zeros((d, hid));
        let mut carry = Array1::<f64>::zeros(hid);
        for i in (0..d).rev() {
            let dh = &d_hidden.row(i) + &carry;
            let (z, r, cand, hp) = (t.z.row(i), t.r.row(i), t.candidate.row(i), t.h_prev.row(i));
            let dz = &dh * &(&cand - &hp);
            let dcand = &dh * &z;
            let mut dhp = &dh * &(1.0 - &z);
            let dah = &dcand * &(1.0 - &cand * &cand);
            let drh = uh_t.dot(&dah);
            let dr = &drh * &hp;
            dhp += &(&drh * &r);
            let dar = &dr * &r * &(1.0 - &r);
            let daz = &dz * &z * &(1.0 - &z);
            dhp += &uz_t.dot(&daz);
            dhp += &ur_t.dot(&dar);
            da_z.row_mut(i).assign(&daz);
            da_r.row_mut(i).assign(&dar);
            da_h.row_mut(i).assign(&dah);
            carry = dhp;
        }
        g.w_z += &da_z.t().dot(&xs);
        g.w_r += &da_r.t().dot(&xs);
        g.w_h += &da_h.t().dot(&xs);
        g.u_z += &da_z.t().dot(&t.h_prev);
        g.u_r += &da_r.t().dot(&t.h_prev);
        g.u_h += &da_h.t().dot(&t.reset_hidden);
        g.b_z += &da_z.sum_axis(Axis(0));
        g.b_r += &da_r.sum_axis(Axis(0));
        g.b_h += &da_h.sum_axis(Axis(0));
        da_z.dot(&self.w_z) + da_r.dot(&self.w_r) + da_h.dot(&self.w_h)
    }

    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (name, m) in [
            ("w_z", &self.w_z),
            ("w_r", &self.w_r),
            ("w_h", &self.w_h),
            ("u_z", &self.u_z),
            ("u_r", &self.u_r),
            ("u_h", &self.u_h),
        ] {
            f(name, m.shape(), slice_of(m));
        }
        for (name, b) in [("b_z", &self.b_z), ("b_r", &self.b_r), ("b_h", &self.b_h)] {
            f(name, b.shape(), slice_of(b));
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("w_z", slice_of_mut(&mut self.w_z));
        f("w_r", slice_of_mut(&mut self.w_r));
        f("w_h", slice_of_mut(&mut self.w_h));
        f("u_z", slice_of_mut(&mut self.u_z));
        f("u_r", slice_of_mut(&mut self.u_r));
        f("u_h", slice_of_mut(&mut self.u_h));
        f("b_z", slice_of_mut(&mut self.b_z));
        f("b_r", slice_of_mut(&mut self.b_r));
        f("b_h", slice_of_mut(&mut self.b_h));
    }
}
