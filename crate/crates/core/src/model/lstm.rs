use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::cell::{project, sigmoid, slice_of, slice_of_mut, RecurrentCell};
use crate::error::{Error, Result};

/// One direction of an LSTM layer; gates are input (i), forget (f),
/// candidate (g) and output (o).
#[derive(Debug, Clone, PartialEq)]
pub struct LstmDirectionParams {
    pub w_i: Array2<f64>,
    pub w_f: Array2<f64>,
    pub w_g: Array2<f64>,
    pub w_o: Array2<f64>,
    pub u_i: Array2<f64>,
    pub u_f: Array2<f64>,
    pub u_g: Array2<f64>,
    pub u_o: Array2<f64>,
    pub b_i: Array1<f64>,
    pub b_f: Array1<f64>,
    pub b_g: Array1<f64>,
    pub b_o: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct LstmTrace {
    i: Array2<f64>,
    f: Array2<f64>,
    g: Array2<f64>,
    o: Array2<f64>,
    c_prev: Array2<f64>,
    tanh_c: Array2<f64>,
    h_prev: Array2<f64>,
    hidden: Array2<f64>,
}

/// Single LSTM step returning `(h, c)`:
///
/// ```text
/// c' = σ(f) ⊙ c + σ(i) ⊙ tanh(g)
/// h' = σ(o) ⊙ tanh(c')
/// ```
pub fn lstm_cell(
    x: ArrayView1<f64>,
    h_prev: ArrayView1<f64>,
    c_prev: ArrayView1<f64>,
    p: &LstmDirectionParams,
) -> Result<(Array1<f64>, Array1<f64>)> {
    if x.len() != p.input_dim() || h_prev.len() != p.hidden_dim() || c_prev.len() != p.hidden_dim() {
        return Err(Error::ShapeMismatch(format!(
            "lstm cell expects input {} / hidden {}, got {} / {} / {}",
            p.input_dim(),
            p.hidden_dim(),
            x.len(),
            h_prev.len(),
            c_prev.len()
        )));
    }
    let gate = |w: &Array2<f64>, u: &Array2<f64>, b: &Array1<f64>| w.dot(&x) + u.dot(&h_prev) + b;
    let i = gate(&p.w_i, &p.u_i, &p.b_i).mapv(sigmoid);
    let f = gate(&p.w_f, &p.u_f, &p.b_f).mapv(sigmoid);
    let g = gate(&p.w_g, &p.u_g, &p.b_g).mapv(f64::tanh);
    let o = gate(&p.w_o, &p.u_o, &p.b_o).mapv(sigmoid);
    let c = &f * &c_prev + &i * &g;
    let h = &o * &c.mapv(f64::tanh);
    Ok((h, c))
}

impl RecurrentCell for LstmDirectionParams {
    const KIND: &'static str = "lstm";
    type Trace = LstmTrace;

    fn zeros(input: usize, hidden: usize) -> Self {
        let w = || Array2::zeros((hidden, input));
        let u = || Array2::zeros((hidden, hidden));
        let b = || Array1::zeros(hidden);
        LstmDirectionParams {
            w_i: w(),
            w_f: w(),
            w_g: w(),
            w_o: w(),
            u_i: u(),
            u_f: u(),
            u_g: u(),
            u_o: u(),
            b_i: b(),
            b_f: b(),
            b_g: b(),
            b_o: b(),
        }
    }

    fn input_dim(&self) -> usize {
        self.w_i.ncols()
    }

    fn hidden_dim(&self) -> usize {
        self.w_i.nrows()
    }

    fn scan(&self, xs: ArrayView2<f64>) -> LstmTrace {
        let (d, hid) = (xs.nrows(), self.hidden_dim());
        let xi = project(xs, &self.w_i, &self.b_i);
        let xf = project(xs, &self.w_f, &self.b_f);
        let xg = project(xs, &self.w_g, &self.b_g);
        let xo = project(xs, &self.w_o, &self.b_o);
        let z = || Array2::zeros((d, hid));
        let mut t = LstmTrace {
            i: z(),
            f: z(),
            g: z(),
            o: z(),
            c_prev: z(),
            tanh_c: z(),
            h_prev: z(),
            hidden: z(),
        };
        let mut h = Array1::<f64>::zeros(hid);
        let mut c = Array1::<f64>::zeros(hid);
        for s in 0..d {
            let i = (&xi.row(s) + &self.u_i.dot(&h)).mapv(sigmoid);
            let f = (&xf.row(s) + &self.u_f.dot(&h)).mapv(sigmoid);
            let g = (&xg.row(s) + &self.u_g.dot(&h)).mapv(f64::tanh);
            let o = (&xo.row(s) + &self.u_o.dot(&h)).mapv(sigmoid);
            let c_next = &f * &c + &i * &g;
            let tc = c_next.mapv(f64::tanh);
            let h_next = &o * &tc;
            t.i.row_mut(s).assign(&i);
            t.f.row_mut(s).assign(&f);
            t.g.row_mut(s).assign(&g);
            t.o.row_mut(s).assign(&o);
            t.c_prev.row_mut(s).assign(&c);
            t.tanh_c.row_mut(s).assign(&tc);
            t.h_prev.row_mut(s).assign(&h);
            t.hidden.row_mut(s).assign(&h_next);
            h = h_next;
            c = c_next;
        }
        t
    }

    fn hidden_states(trace: &LstmTrace) -> &Array2<f64> {
        &trace.hidden
    }

    fn scan_backward(
        &self,
        xs: ArrayView2<f64>,
        t: &LstmTrace,
        d_hidden: ArrayView2<f64>,
        gr: &mut Self,
    ) -> Array2<f64> {
        let (d, hid) = (xs.nrows(), self.hidden_dim());
        let ui_t = self.u_i.t().to_owned();
        let uf_t = self.u_f.t().to_owned();
        let ug_t = self.u_g.t().to_owned();
        let uo_t = self.u_o.t().to_owned();
        let z = || Array2::<f64>::zeros((d, hid));
        let (mut da_i, mut da_f, mut da_g, mut da_o) = (z(), z(), z(), z());
        let mut dh_carry = Array1::<f64>::zeros(hid);
        let mut dc_carry = Array1::<f64>::zeros(hid);
        for s in (0..d).rev() {
            let dh = &d_hidden.row(s) + &dh_carry;
            let (i, f, g, o) = (t.i.row(s), t.f.row(s), t.g.row(s), t.o.row(s));
            let tc = t.tanh_c.row(s);
            let d_o = &dh * &tc;
            let dc = &dc_carry + &(&dh * &o * &(1.0 - &tc * &tc));
            let d_i = &dc * &g;
            let d_g = &dc * &i;
            let d_f = &dc * &t.c_prev.row(s);
            dc_carry = &dc * &f;
            let ai = &d_i * &i * &(1.0 - &i);
            let af = &d_f * &f * &(1.0 - &f);
            let ag = &d_g * &(1.0 - &g * &g);
            let ao = &d_o * &o * &(1.0 - &o);
            dh_carry = ui_t.dot(&ai) + uf_t.dot(&af) + ug_t.dot(&ag) + uo_t.dot(&ao);
            da_i.row_mut(s).assign(&ai);
            da_f.row_mut(s).assign(&af);
            da_g.row_mut(s).assign(&ag);
            da_o.row_mut(s).assign(&ao);
        }
        for (w, u, b, da) in [
            (&mut gr.w_i, &mut gr.u_i, &mut gr.b_i, &da_i),
            (&mut gr.w_f, &mut gr.u_f, &mut gr.b_f, &da_f),
            (&mut gr.w_g, &mut gr.u_g, &mut gr.b_g, &da_g),
            (&mut gr.w_o, &mut gr.u_o, &mut gr.b_o, &da_o),
        ] {
            *w += &da.t().dot(&xs);
            *u += &da.t().dot(&t.h_prev);
            *b += &da.sum_axis(Axis(0));
        }
        da_i.dot(&self.w_i) + da_f.dot(&self.w_f) + da_g.dot(&self.w_g) + da_o.dot(&self.w_o)
    }

    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        for (name, m) in [
            ("w_i", &self.w_i),
            ("w_f", &self.w_f),
            ("w_g", &self.w_g),
            ("w_o", &self.w_o),
            ("u_i", &self.u_i),
            ("u_f", &self.u_f),
            ("u_g", &self.u_g),
            ("u_o", &self.u_o),
        ] {
            f(name, m.shape(), slice_of(m));
        }
        for (name, b) in [
            ("b_i", &self.b_i),
            ("b_f", &self.b_f),
            ("b_g", &self.b_g),
            ("b_o", &self.b_o),
        ] {
            f(name, b.shape(), slice_of(b));
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("w_i", slice_of_mut(&mut self.w_i));
        f("w_f", slice_of_mut(&mut self.w_f));
        f("w_g", slice_of_mut(&mut self.w_g));
        f("w_o", slice_of_mut(&mut self.w_o));
        f("u_i", slice_of_mut(&mut self.u_i));
        f("u_f", slice_of_mut(&mut self.u_f));
        f("u_g", slice_of_mut(&mut self.u_g));
        f("u_o", slice_of_mut(&mut self.u_o));
        f("b_i", slice_of_mut(&mut self.b_i));
        f("b_f", slice_of_mut(&mut self.b_f));
        f("b_g", slice_of_mut(&mut self.b_g));
        f("b_o", slice_of_mut(&mut self.b_o));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use ndarray::Array;
    use rand::Rng as _;

    fn random(input: usize, hidden: usize, seed: u64) -> LstmDirectionParams {
        LstmDirectionParams::init(input, hidden, &mut rng_from(seed, 0))
    }

    #[test]
    fn zero_everything() {
        let p = LstmDirectionParams::zeros(3, 2);
        let (h, c) = lstm_cell(
            Array1::ones(3).view(),
            Array1::zeros(2).view(),
            Array1::zeros(2).view(),
            &p,
        )
        .unwrap();
        assert!(h.iter().chain(c.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn saturated_gates_preserve_memory() {
        let mut p = random(3, 4, 5);
        p.b_f.fill(50.0);
        p.b_i.fill(-50.0);
        let c0 = Array1::from(vec![0.4, -1.2, 2.0, 0.0]);
        let (_, c) = lstm_cell(
            Array1::from(vec![0.1, 0.2, -0.3]).view(),
            Array1::from(vec![0.3, 0.1, -0.2, 0.5]).view(),
            c0.view(),
            &p,
        )
        .unwrap();
        for (a, b) in c.iter().zip(c0.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn scratch_step(x: &[f64], h: &[f64], c: &[f64], p: &LstmDirectionParams) -> (Vec<f64>, Vec<f64>) {
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let lin = |w: &Array2<f64>, u: &Array2<f64>, b: &Array1<f64>, j: usize| {
            b[j] + (0..x.len()).map(|k| w[[j, k]] * x[k]).sum::<f64>()
                + (0..h.len()).map(|k| u[[j, k]] * h[k]).sum::<f64>()
        };
        let mut hn = vec![0.0; h.len()];
        let mut cn = vec![0.0; h.len()];
        for j in 0..h.len() {
            let i = sig(lin(&p.w_i, &p.u_i, &p.b_i, j));
            let f = sig(lin(&p.w_f, &p.u_f, &p.b_f, j));
            let g = lin(&p.w_g, &p.u_g, &p.b_g, j).tanh();
            let o = sig(lin(&p.w_o, &p.u_o, &p.b_o, j));
            cn[j] = f * c[j] + i * g;
            hn[j] = o * cn[j].tanh();
        }
        (hn, cn)
    }

    #[test]
    fn cell_and_scan_match_scratch() {
        let p = random(4, 3, 8);
        let mut rng = rng_from(9, 0);
        let xs = Array::from_shape_simple_fn((5, 4), || rng.random_range(-1.0..1.0));
        let trace = p.scan(xs.view());
        let (mut h, mut c) = (vec![0.0; 3], vec![0.0; 3]);
        for s in 0..5 {
            let (hc, cc) = lstm_cell(
                xs.row(s),
                Array1::from(h.clone()).view(),
                Array1::from(c.clone()).view(),
                &p,
            )
            .unwrap();
            (h, c) = scratch_step(&xs.row(s).to_vec(), &h, &c, &p);
            for j in 0..3 {
                assert!((hc[j] - h[j]).abs() < 1e-12 && (cc[j] - c[j]).abs() < 1e-12);
                assert!((trace.hidden[[s, j]] - h[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let p = LstmDirectionParams::zeros(3, 2);
        assert!(lstm_cell(
            Array1::zeros(3).view(),
            Array1::zeros(2).view(),
            Array1::zeros(3).view(),
            &p
        )
        .is_err());
    }
}
