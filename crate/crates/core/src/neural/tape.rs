//! Reverse-mode tape. Nodes are appended in topological order; `backward`
//! walks the tape in reverse and accumulates gradients additively across
//! calls.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{Element, Tensor};
use crate::error::{Error, Result};

type BackFn<E> = Box<dyn Fn(&[Tensor<E>], &Tensor<E>) -> Vec<Tensor<E>>>;

pub struct Tape<E: Element> {
    vals: Vec<Tensor<E>>,
    parents: Vec<Vec<usize>>,
    backs: Vec<Option<BackFn<E>>>,
    grads: Vec<Option<Tensor<E>>>,
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(expected: &[usize], actual: &[usize]) -> Error {
    Error::ShapeMismatch { expected: expected.to_vec(), actual: actual.to_vec() }
}

/// (C*k*k, OH*OW) patch matrix of one sample.
fn im2col<E: Element>(
    x: &[E],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    p: usize,
) -> Array2<E> {
    let oh = (h + 2 * p - k) / s + 1;
    let ow = (w + 2 * p - k) / s + 1;
    let mut cols = Array2::zeros((c * k * k, oh * ow));
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                for oy in 0..oh {
                    let iy = (oy * s + ki) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * s + kj) as isize - p as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        cols[[row, oy * ow + ox]] = x[(ci * h + iy as usize) * w + ix as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add inverse of `im2col`.
fn col2im<E: Element>(
    cols: &Array2<E>,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    p: usize,
) -> Vec<E> {
    let oh = (h + 2 * p - k) / s + 1;
    let ow = (w + 2 * p - k) / s + 1;
    let mut out = vec![E::zero(); c * h * w];
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                for oy in 0..oh {
                    let iy = (oy * s + ki) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * s + kj) as isize - p as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let idx = (ci * h + iy as usize) * w + ix as usize;
                        out[idx] = out[idx] + cols[[row, oy * ow + ox]];
                    }
                }
            }
        }
    }
    out
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Tape { vals: Vec::new(), parents: Vec::new(), backs: Vec::new(), grads: Vec::new() }
    }

    pub fn leaf(&mut self, t: Tensor<E>) -> usize {
        self.push(t, vec![], None)
    }

    fn push(&mut self, t: Tensor<E>, parents: Vec<usize>, back: Option<BackFn<E>>) -> usize {
        self.vals.push(t);
        self.parents.push(parents);
        self.backs.push(back);
        self.grads.push(None);
        self.vals.len() - 1
    }

    pub fn val(&self, id: usize) -> &Tensor<E> {
        &self.vals[id]
    }

    pub fn grad(&self, id: usize) -> Option<&Tensor<E>> {
        self.grads[id].as_ref()
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    fn shape(&self, id: usize) -> &[usize] {
        &self.vals[id].shape
    }

    /// Reverse-mode accumulation from a scalar loss. Repeated calls without
    /// `zero_grads` add gradients together.
    pub fn backward(&mut self, loss: usize) -> Result<()> {
        if !self.vals[loss].is_scalar() {
            return Err(shape_err(&[1], &self.vals[loss].shape));
        }
        let n = self.vals.len();
        let mut local: Vec<Option<Tensor<E>>> = vec![None; n];
        local[loss] = Some(Tensor::filled(&self.vals[loss].shape, E::one()));
        for idx in (0..=loss).rev() {
            let Some(g) = local[idx].take() else { continue };
            if let Some(back) = &self.backs[idx] {
                let contribs = back(&self.vals, &g);
                debug_assert_eq!(contribs.len(), self.parents[idx].len());
                for (pi, contrib) in self.parents[idx].iter().zip(contribs) {
                    match &mut local[*pi] {
                        Some(acc) => acc.add_in_place(&contrib),
                        slot => *slot = Some(contrib),
                    }
                }
            }
            match &mut self.grads[idx] {
                Some(acc) => acc.add_in_place(&g),
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }

    // ---- elementwise and reduction ops ----

    pub fn add(&mut self, a: usize, b: usize) -> Result<usize> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(self.shape(a), self.shape(b)));
        }
        let mut t = self.vals[a].clone();
        t.add_in_place(&self.vals[b]);
        Ok(self.push(t, vec![a, b], Some(Box::new(|_, g| vec![g.clone(), g.clone()]))))
    }

    pub fn sub(&mut self, a: usize, b: usize) -> Result<usize> {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    pub fn mul(&mut self, a: usize, b: usize) -> Result<usize> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(self.shape(a), self.shape(b)));
        }
        let data =
            self.vals[a].data.iter().zip(&self.vals[b].data).map(|(&x, &y)| x * y).collect();
        let t = Tensor { shape: self.vals[a].shape.clone(), data };
        Ok(self.push(
            t,
            vec![a, b],
            Some(Box::new(move |vals, g| {
                let da = Tensor {
                    shape: g.shape.clone(),
                    data: g.data.iter().zip(&vals[b].data).map(|(&gv, &y)| gv * y).collect(),
                };
                let db = Tensor {
                    shape: g.shape.clone(),
                    data: g.data.iter().zip(&vals[a].data).map(|(&gv, &x)| gv * x).collect(),
                };
                vec![da, db]
            })),
        ))
    }

    pub fn scale(&mut self, a: usize, c: f64) -> usize {
        let cv = E::from_f64(c);
        let t = self.vals[a].map(|v| v * cv);
        self.push(
            t,
            vec![a],
            Some(Box::new(move |_, g| vec![g.map(|v| v * cv)])),
        )
    }

    pub fn sum(&mut self, a: usize) -> usize {
        let total: E = self.vals[a].data.iter().copied().sum();
        let shape = self.vals[a].shape.clone();
        self.push(
            Tensor::scalar(total),
            vec![a],
            Some(Box::new(move |_, g| vec![Tensor::filled(&shape, g.data[0])])),
        )
    }

    pub fn mean(&mut self, a: usize) -> usize {
        let n = self.vals[a].len();
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    // ---- activations ----

    pub fn relu(&mut self, a: usize) -> usize {
        let t = self.vals[a].map(|v| if v > E::zero() { v } else { E::zero() });
        self.push(
            t,
            vec![a],
            Some(Box::new(move |vals, g| {
                let data = g
                    .data
                    .iter()
                    .zip(&vals[a].data)
                    .map(|(&gv, &x)| if x > E::zero() { gv } else { E::zero() })
                    .collect();
                vec![Tensor { shape: g.shape.clone(), data }]
            })),
        )
    }

    pub fn leaky_relu(&mut self, a: usize, slope: f64) -> usize {
        let s = E::from_f64(slope);
        let t = self.vals[a].map(|v| if v > E::zero() { v } else { v * s });
        self.push(
            t,
            vec![a],
            Some(Box::new(move |vals, g| {
                let data = g
                    .data
                    .iter()
                    .zip(&vals[a].data)
                    .map(|(&gv, &x)| if x > E::zero() { gv } else { gv * s })
                    .collect();
                vec![Tensor { shape: g.shape.clone(), data }]
            })),
        )
    }

    pub fn tanh_act(&mut self, a: usize) -> usize {
        let t = self.vals[a].map(|v| v.tanh());
        let me = self.vals.len();
        self.push(
            t,
            vec![a],
            Some(Box::new(move |vals, g| {
                let data = g
                    .data
                    .iter()
                    .zip(&vals[me].data)
                    .map(|(&gv, &y)| gv * (E::one() - y * y))
                    .collect();
                vec![Tensor { shape: g.shape.clone(), data }]
            })),
        )
    }

    pub fn sigmoid_act(&mut self, a: usize) -> usize {
        let one = E::one();
        let t = self.vals[a].map(|v| one / (one + (-v).exp()));
        let me = self.vals.len();
        self.push(
            t,
            vec![a],
            Some(Box::new(move |vals, g| {
                let data = g
                    .data
                    .iter()
                    .zip(&vals[me].data)
                    .map(|(&gv, &y)| gv * y * (E::one() - y))
                    .collect();
                vec![Tensor { shape: g.shape.clone(), data }]
            })),
        )
    }

    // ---- structural ops ----

    pub fn flatten(&mut self, a: usize) -> usize {
        let sh = self.vals[a].shape.clone();
        let n = sh[0];
        let rest: usize = sh[1..].iter().product();
        let t = self.vals[a].reshaped(&[n, rest]);
        self.push(
            t,
            vec![a],
            Some(Box::new(move |_, g| vec![g.reshaped(&sh)])),
        )
    }

    /// Concatenate along axis 1 (features or channels).
    pub fn concat(&mut self, a: usize, b: usize) -> Result<usize> {
        let sa = self.vals[a].shape.clone();
        let sb = self.vals[b].shape.clone();
        if sa.len() != sb.len() || sa[0] != sb[0] || sa[2..] != sb[2..] {
            return Err(shape_err(&sa, &sb));
        }
        let n = sa[0];
        let inner: usize = sa[2..].iter().product();
        let (ca, cb) = (sa[1], sb[1]);
        let mut shape = sa.clone();
        shape[1] = ca + cb;
        let mut data = Vec::with_capacity(n * (ca + cb) * inner);
        for i in 0..n {
            data.extend_from_slice(&self.vals[a].data[i * ca * inner..(i + 1) * ca * inner]);
            data.extend_from_slice(&self.vals[b].data[i * cb * inner..(i + 1) * cb * inner]);
        }
        let t = Tensor { shape, data };
        Ok(self.push(
            t,
            vec![a, b],
            Some(Box::new(move |_, g| {
                let mut da = Tensor::zeros(&sa);
                let mut db = Tensor::zeros(&sb);
                for i in 0..n {
                    let base = i * (ca + cb) * inner;
                    da.data[i * ca * inner..(i + 1) * ca * inner]
                        .copy_from_slice(&g.data[base..base + ca * inner]);
                    db.data[i * cb * inner..(i + 1) * cb * inner]
                        .copy_from_slice(&g.data[base + ca * inner..base + (ca + cb) * inner]);
                }
                vec![da, db]
            })),
        ))
    }

    pub fn dropout(&mut self, a: usize, p: f64, seed: u64, train: bool) -> usize {
        if !train || p <= 0.0 {
            let t = self.vals[a].clone();
            return self.push(t, vec![a], Some(Box::new(|_, g| vec![g.clone()])));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let keep = E::from_f64(1.0 / (1.0 - p));
        let mask: Vec<E> = (0..self.vals[a].len())
            .map(|_| if rng.gen_range(0.0..1.0) < p { E::zero() } else { keep })
            .collect();
        let data =
            self.vals[a].data.iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let t = Tensor { shape: self.vals[a].shape.clone(), data };
        self.push(
            t,
            vec![a],
            Some(Box::new(move |_, g| {
                let data = g.data.iter().zip(&mask).map(|(&gv, &m)| gv * m).collect();
                vec![Tensor { shape: g.shape.clone(), data }]
            })),
        )
    }

    // ---- linear algebra layers ----

    /// x: (N,F), w: (O,F), b: (O) -> (N,O)
    pub fn linear(&mut self, x: usize, w: usize, b: usize) -> Result<usize> {
        let (sx, sw, sb) =
            (self.vals[x].shape.clone(), self.vals[w].shape.clone(), self.vals[b].shape.clone());
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[1] || sb != [sw[0]] {
            return Err(shape_err(&[sx[0], sw[1]], &sx));
        }
        let (n, f, o) = (sx[0], sx[1], sw[0]);
        let xv = ArrayView2::from_shape((n, f), &self.vals[x].data).unwrap();
        let wv = ArrayView2::from_shape((o, f), &self.vals[w].data).unwrap();
        let mut y = xv.dot(&wv.t());
        for mut row in y.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = *v + self.vals[b].data[j];
            }
        }
        let t = Tensor::from_vec(&[n, o], y.into_raw_vec_and_offset().0);
        Ok(self.push(
            t,
            vec![x, w, b],
            Some(Box::new(move |vals, g| {
                let gv = ArrayView2::from_shape((n, o), &g.data).unwrap();
                let xv = ArrayView2::from_shape((n, f), &vals[x].data).unwrap();
                let wv = ArrayView2::from_shape((o, f), &vals[w].data).unwrap();
                let dx = gv.dot(&wv);
                let dw = gv.t().dot(&xv);
                let mut db = vec![E::zero(); o];
                for row in gv.rows() {
                    for (j, &v) in row.iter().enumerate() {
                        db[j] = db[j] + v;
                    }
                }
                vec![
                    Tensor::from_vec(&[n, f], dx.into_raw_vec_and_offset().0),
                    Tensor::from_vec(&[o, f], dw.into_raw_vec_and_offset().0),
                    Tensor::from_vec(&[o], db),
                ]
            })),
        ))
    }

    /// x: (N,C,H,W), w: (O,C,k,k), b: (O); stride s, zero padding p.
    pub fn conv2d(&mut self, x: usize, w: usize, b: usize, s: usize, p: usize) -> Result<usize> {
        let sx = self.vals[x].shape.clone();
        let sw = self.vals[w].shape.clone();
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] {
            return Err(shape_err(&sw, &sx));
        }
        let (n, c, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (o, k) = (sw[0], sw[2]);
        if h + 2 * p < k || wd + 2 * p < k {
            return Err(shape_err(&[k, k], &[h, wd]));
        }
        let oh = (h + 2 * p - k) / s + 1;
        let ow = (wd + 2 * p - k) / s + 1;
        let wv = ArrayView2::from_shape((o, c * k * k), &self.vals[w].data).unwrap();
        let mut out = vec![E::zero(); n * o * oh * ow];
        for i in 0..n {
            let xs = &self.vals[x].data[i * c * h * wd..(i + 1) * c * h * wd];
            let cols = im2col(xs, c, h, wd, k, s, p);
            let y = wv.dot(&cols);
            let dst = &mut out[i * o * oh * ow..(i + 1) * o * oh * ow];
            dst.copy_from_slice(y.as_slice().unwrap());
            for oc in 0..o {
                let bv = self.vals[b].data[oc];
                for v in &mut dst[oc * oh * ow..(oc + 1) * oh * ow] {
                    *v = *v + bv;
                }
            }
        }
        let t = Tensor::from_vec(&[n, o, oh, ow], out);
        Ok(self.push(
            t,
            vec![x, w, b],
            Some(Box::new(move |vals, g| {
                let wv = ArrayView2::from_shape((o, c * k * k), &vals[w].data).unwrap();
                let mut dx = Tensor::zeros(&[n, c, h, wd]);
                let mut dw = Array2::<E>::zeros((o, c * k * k));
                let mut db = vec![E::zero(); o];
                for i in 0..n {
                    let gs = &g.data[i * o * oh * ow..(i + 1) * o * oh * ow];
                    let gv = ArrayView2::from_shape((o, oh * ow), gs).unwrap();
                    let xs = &vals[x].data[i * c * h * wd..(i + 1) * c * h * wd];
                    let cols = im2col(xs, c, h, wd, k, s, p);
                    dw = dw + gv.dot(&cols.t());
                    let dcols = wv.t().dot(&gv);
                    let dxi = col2im(&dcols, c, h, wd, k, s, p);
                    dx.data[i * c * h * wd..(i + 1) * c * h * wd].copy_from_slice(&dxi);
                    for oc in 0..o {
                        db[oc] = db[oc] + gs[oc * oh * ow..(oc + 1) * oh * ow].iter().copied().sum();
                    }
                }
                vec![
                    dx,
                    Tensor::from_vec(&[o, c, k, k], dw.into_raw_vec_and_offset().0),
                    Tensor::from_vec(&[o], db),
                ]
            })),
        ))
    }

    /// Transposed convolution; x: (N,C,H,W), w: (C,O,k,k), b: (O).
    /// Output spatial size s*(H-1)+k-2p.
    pub fn tconv2d(&mut self, x: usize, w: usize, b: usize, s: usize, p: usize) -> Result<usize> {
        let sx = self.vals[x].shape.clone();
        let sw = self.vals[w].shape.clone();
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[0] {
            return Err(shape_err(&sw, &sx));
        }
        let (n, c, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (o, k) = (sw[1], sw[2]);
        let oh = s * (h - 1) + k - 2 * p;
        let ow = s * (wd - 1) + k - 2 * p;
        let mv = ArrayView2::from_shape((c, o * k * k), &self.vals[w].data).unwrap();
        let mut out = vec![E::zero(); n * o * oh * ow];
        for i in 0..n {
            let xs = &self.vals[x].data[i * c * h * wd..(i + 1) * c * h * wd];
            let xv = ArrayView2::from_shape((c, h * wd), xs).unwrap();
            let cols = mv.t().dot(&xv);
            let y = col2im(&cols, o, oh, ow, k, s, p);
            let dst = &mut out[i * o * oh * ow..(i + 1) * o * oh * ow];
            dst.copy_from_slice(&y);
            for oc in 0..o {
                let bv = self.vals[b].data[oc];
                for v in &mut dst[oc * oh * ow..(oc + 1) * oh * ow] {
                    *v = *v + bv;
                }
            }
        }
        let t = Tensor::from_vec(&[n, o, oh, ow], out);
        Ok(self.push(
            t,
            vec![x, w, b],
            Some(Box::new(move |vals, g| {
                let mv = ArrayView2::from_shape((c, o * k * k), &vals[w].data).unwrap();
                let mut dx = Tensor::zeros(&[n, c, h, wd]);
                let mut dm = Array2::<E>::zeros((c, o * k * k));
                let mut db = vec![E::zero(); o];
                for i in 0..n {
                    let gs = &g.data[i * o * oh * ow..(i + 1) * o * oh * ow];
                    let dcols = im2col(gs, o, oh, ow, k, s, p);
                    let xs = &vals[x].data[i * c * h * wd..(i + 1) * c * h * wd];
                    let xv = ArrayView2::from_shape((c, h * wd), xs).unwrap();
                    // dcols: (o*k*k, h*wd); dx = M . dcols
                    let dxi = mv.dot(&dcols);
                    dx.data[i * c * h * wd..(i + 1) * c * h * wd]
                        .copy_from_slice(dxi.as_slice().unwrap());
                    dm = dm + xv.dot(&dcols.t());
                    for oc in 0..o {
                        db[oc] = db[oc] + gs[oc * oh * ow..(oc + 1) * oh * ow].iter().copied().sum();
                    }
                }
                vec![
                    dx,
                    Tensor::from_vec(&[c, o, k, k], dm.into_raw_vec_and_offset().0),
                    Tensor::from_vec(&[o], db),
                ]
            })),
        ))
    }

    // ---- pooling ----

    pub fn max_pool2(&mut self, a: usize) -> Result<usize> {
        let sa = self.vals[a].shape.clone();
        if sa.len() != 4 || sa[2] % 2 != 0 || sa[3] % 2 != 0 {
            return Err(shape_err(&[sa[0], sa[1], sa[2] / 2 * 2, sa[3] / 2 * 2], &sa));
        }
        let (n, c, h, w) = (sa[0], sa[1], sa[2], sa[3]);
        let (oh, ow) = (h / 2, w / 2);
        let mut out = vec![E::zero(); n * c * oh * ow];
        let mut arg = vec![0usize; n * c * oh * ow];
        for nc in 0..n * c {
            let src = &self.vals[a].data[nc * h * w..(nc + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = src[(2 * oy) * w + 2 * ox];
                    let mut bi = (2 * oy) * w + 2 * ox;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let idx = (2 * oy + dy) * w + 2 * ox + dx;
                            if src[idx] > best {
                                best = src[idx];
                                bi = idx;
                            }
                        }
                    }
                    out[nc * oh * ow + oy * ow + ox] = best;
                    arg[nc * oh * ow + oy * ow + ox] = nc * h * w + bi;
                }
            }
        }
        let t = Tensor::from_vec(&[n, c, oh, ow], out);
        Ok(self.push(
            t,
            vec![a],
            Some(Box::new(move |_, g| {
                let mut dx = Tensor::zeros(&sa);
                for (i, &src_idx) in arg.iter().enumerate() {
                    dx.data[src_idx] = dx.data[src_idx] + g.data[i];
                }
                vec![dx]
            })),
        ))
    }

    pub fn avg_pool2(&mut self, a: usize) -> Result<usize> {
        let sa = self.vals[a].shape.clone();
        if sa.len() != 4 || sa[2] % 2 != 0 || sa[3] % 2 != 0 {
            return Err(shape_err(&[sa[0], sa[1], sa[2] / 2 * 2, sa[3] / 2 * 2], &sa));
        }
        let (n, c, h, w) = (sa[0], sa[1], sa[2], sa[3]);
        let (oh, ow) = (h / 2, w / 2);
        let q = E::from_f64(0.25);
        let mut out = vec![E::zero(); n * c * oh * ow];
        for nc in 0..n * c {
            let src = &self.vals[a].data[nc * h * w..(nc + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let acc = src[(2 * oy) * w + 2 * ox]
                        + src[(2 * oy) * w + 2 * ox + 1]
                        + src[(2 * oy + 1) * w + 2 * ox]
                        + src[(2 * oy + 1) * w + 2 * ox + 1];
                    out[nc * oh * ow + oy * ow + ox] = acc * q;
                }
            }
        }
        let t = Tensor::from_vec(&[n, c, oh, ow], out);
        Ok(self.push(
            t,
            vec![a],
            Some(Box::new(move |_, g| {
                let mut dx = Tensor::zeros(&sa);
                for nc in 0..n * c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let gv = g.data[nc * oh * ow + oy * ow + ox] * q;
                            for dy in 0..2 {
                                for dx2 in 0..2 {
                                    let idx = nc * h * w + (2 * oy + dy) * w + 2 * ox + dx2;
                                    dx.data[idx] = dx.data[idx] + gv;
                                }
                            }
                        }
                    }
                }
                vec![dx]
            })),
        ))
    }

    /// (N,C,H,W) -> (N,C)
    pub fn global_avg_pool(&mut self, a: usize) -> Result<usize> {
        let sa = self.vals[a].shape.clone();
        if sa.len() != 4 {
            return Err(shape_err(&[0, 0, 0, 0], &sa));
        }
        let (n, c, h, w) = (sa[0], sa[1], sa[2], sa[3]);
        let inv = E::from_f64(1.0 / (h * w) as f64);
        let mut out = vec![E::zero(); n * c];
        for nc in 0..n * c {
            out[nc] = self.vals[a].data[nc * h * w..(nc + 1) * h * w]
                .iter()
                .copied()
                .sum::<E>()
                * inv;
        }
        let t = Tensor::from_vec(&[n, c], out);
        Ok(self.push(
            t,
            vec![a],
            Some(Box::new(move |_, g| {
                let mut dx = Tensor::zeros(&sa);
                for nc in 0..n * c {
                    let gv = g.data[nc] * inv;
                    for v in &mut dx.data[nc * h * w..(nc + 1) * h * w] {
                        *v = gv;
                    }
                }
                vec![dx]
            })),
        ))
    }

    // ---- normalization ----

    fn norm_groups(
        &mut self,
        x: usize,
        gamma: usize,
        beta: usize,
        eps: f64,
        per_instance: bool,
    ) -> Result<usize> {
        let sx = self.vals[x].shape.clone();
        if sx.len() != 4 {
            return Err(shape_err(&[0, 0, 0, 0], &sx));
        }
        let (n, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        if self.vals[gamma].shape != [c] || self.vals[beta].shape != [c] {
            return Err(shape_err(&[c], &self.vals[gamma].shape));
        }
        let hw = h * w;
        let epse = E::from_f64(eps);
        // group index list: per (n,c) for instance norm, per c across batch for batch norm
        let mut xhat = vec![E::zero(); n * c * hw];
        let mut inv_std = vec![E::zero(); if per_instance { n * c } else { c }];
        let collect_group = |ci: usize, ni: Option<usize>| -> Vec<usize> {
            match ni {
                Some(ni) => ((ni * c + ci) * hw..(ni * c + ci + 1) * hw).collect(),
                None => (0..n)
                    .flat_map(|nn| (nn * c + ci) * hw..(nn * c + ci + 1) * hw)
                    .collect(),
            }
        };
        let groups: Vec<(usize, Vec<usize>)> = if per_instance {
            (0..n * c).map(|g| (g, collect_group(g % c, Some(g / c)))).collect()
        } else {
            (0..c).map(|ci| (ci, collect_group(ci, None))).collect()
        };
        for (g, idxs) in &groups {
            let m = E::from_f64(idxs.len() as f64);
            let mu = idxs.iter().map(|&i| self.vals[x].data[i]).sum::<E>() / m;
            let var = idxs
                .iter()
                .map(|&i| {
                    let d = self.vals[x].data[i] - mu;
                    d * d
                })
                .sum::<E>()
                / m;
            let istd = E::one() / (var + epse).sqrt();
            inv_std[*g] = istd;
            for &i in idxs {
                xhat[i] = (self.vals[x].data[i] - mu) * istd;
            }
        }
        let mut out = vec![E::zero(); n * c * hw];
        for ni in 0..n {
            for ci in 0..c {
                let ga = self.vals[gamma].data[ci];
                let be = self.vals[beta].data[ci];
                for i in (ni * c + ci) * hw..(ni * c + ci + 1) * hw {
                    out[i] = ga * xhat[i] + be;
                }
            }
        }
        let t = Tensor::from_vec(&sx, out);
        let xhat2 = xhat;
        Ok(self.push(
            t,
            vec![x, gamma, beta],
            Some(Box::new(move |vals, g| {
                let mut dx = Tensor::zeros(&sx);
                let mut dgamma = vec![E::zero(); c];
                let mut dbeta = vec![E::zero(); c];
                for i in 0..n * c * hw {
                    let ci = (i / hw) % c;
                    dgamma[ci] = dgamma[ci] + g.data[i] * xhat2[i];
                    dbeta[ci] = dbeta[ci] + g.data[i];
                }
                let groups: Vec<(usize, Vec<usize>)> = if per_instance {
                    (0..n * c)
                        .map(|gi| {
                            let (ni, ci) = (gi / c, gi % c);
                            (gi, ((ni * c + ci) * hw..(ni * c + ci + 1) * hw).collect())
                        })
                        .collect()
                } else {
                    (0..c)
                        .map(|ci| {
                            (
                                ci,
                                (0..n)
                                    .flat_map(|nn| (nn * c + ci) * hw..(nn * c + ci + 1) * hw)
                                    .collect(),
                            )
                        })
                        .collect()
                };
                for (gi, idxs) in &groups {
                    let m = E::from_f64(idxs.len() as f64);
                    let ci = if per_instance { gi % c } else { *gi };
                    let ga = vals[gamma].data[ci];
                    let istd = inv_std[*gi];
                    let mut sum_dy = E::zero();
                    let mut sum_dy_xhat = E::zero();
                    for &i in idxs {
                        sum_dy = sum_dy + g.data[i];
                        sum_dy_xhat = sum_dy_xhat + g.data[i] * xhat2[i];
                    }
                    let mean_dy = sum_dy / m;
                    let mean_dy_xhat = sum_dy_xhat / m;
                    for &i in idxs {
                        dx.data[i] =
                            ga * istd * (g.data[i] - mean_dy - xhat2[i] * mean_dy_xhat);
                    }
                }
                vec![
                    dx,
                    Tensor::from_vec(&[c], dgamma),
                    Tensor::from_vec(&[c], dbeta),
                ]
            })),
        ))
    }

    /// Per-sample, per-channel normalization with affine parameters.
    pub fn instance_norm(&mut self, x: usize, gamma: usize, beta: usize, eps: f64) -> Result<usize> {
        self.norm_groups(x, gamma, beta, eps, true)
    }

    /// Per-channel normalization over the whole batch (training statistics).
    pub fn batch_norm(&mut self, x: usize, gamma: usize, beta: usize, eps: f64) -> Result<usize> {
        self.norm_groups(x, gamma, beta, eps, false)
    }

    /// Per-channel mean and (biased) variance of a rank-4 value across the
    /// batch and spatial dims; used to maintain batch-norm running stats.
    pub fn channel_stats(&self, x: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let sx = &self.vals[x].shape;
        if sx.len() != 4 {
            return Err(shape_err(&[0, 0, 0, 0], sx));
        }
        let (n, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let hw = h * w;
        let m = (n * hw) as f64;
        let mut mean = vec![0.0f64; c];
        let mut var = vec![0.0f64; c];
        for ci in 0..c {
            let mut s = 0.0;
            for ni in 0..n {
                for i in (ni * c + ci) * hw..(ni * c + ci + 1) * hw {
                    s += Element::to_f64(self.vals[x].data[i]);
                }
            }
            mean[ci] = s / m;
            let mut v = 0.0;
            for ni in 0..n {
                for i in (ni * c + ci) * hw..(ni * c + ci + 1) * hw {
                    let d = Element::to_f64(self.vals[x].data[i]) - mean[ci];
                    v += d * d;
                }
            }
            var[ci] = v / m;
        }
        Ok((mean, var))
    }

    /// Batch norm with fixed (running) statistics: a plain per-channel
    /// affine map, used at evaluation time.
    pub fn batch_norm_eval(
        &mut self,
        x: usize,
        gamma: usize,
        beta: usize,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<usize> {
        let sx = self.vals[x].shape.clone();
        if sx.len() != 4 {
            return Err(shape_err(&[0, 0, 0, 0], &sx));
        }
        let (n, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        if self.vals[gamma].shape != [c] || mean.len() != c || var.len() != c {
            return Err(shape_err(&[c], &self.vals[gamma].shape));
        }
        let hw = h * w;
        let istd: Vec<E> =
            var.iter().map(|&v| E::from_f64(1.0 / (v + eps).sqrt())).collect();
        let mu: Vec<E> = mean.iter().map(|&m| E::from_f64(m)).collect();
        let mut xhat = vec![E::zero(); n * c * hw];
        let mut out = vec![E::zero(); n * c * hw];
        for ni in 0..n {
            for ci in 0..c {
                let ga = self.vals[gamma].data[ci];
                let be = self.vals[beta].data[ci];
                for i in (ni * c + ci) * hw..(ni * c + ci + 1) * hw {
                    xhat[i] = (self.vals[x].data[i] - mu[ci]) * istd[ci];
                    out[i] = ga * xhat[i] + be;
                }
            }
        }
        let t = Tensor::from_vec(&sx, out);
        let xhat2 = xhat;
        Ok(self.push(
            t,
            vec![x, gamma, beta],
            Some(Box::new(move |vals, g| {
                let mut dx = Tensor::zeros(&sx);
                let mut dgamma = vec![E::zero(); c];
                let mut dbeta = vec![E::zero(); c];
                for i in 0..n * c * hw {
                    let ci = (i / hw) % c;
                    dgamma[ci] = dgamma[ci] + g.data[i] * xhat2[i];
                    dbeta[ci] = dbeta[ci] + g.data[i];
                    dx.data[i] = vals[gamma].data[ci] * istd[ci] * g.data[i];
                }
                vec![
                    dx,
                    Tensor::from_vec(&[c], dgamma),
                    Tensor::from_vec(&[c], dbeta),
                ]
            })),
        ))
    }

    // ---- losses ----

    pub fn l1_loss(&mut self, a: usize, b: usize) -> Result<usize> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(self.shape(a), self.shape(b)));
        }
        let n = self.vals[a].len();
        let inv = E::from_f64(1.0 / n as f64);
        let total: E = self.vals[a]
            .data
            .iter()
            .zip(&self.vals[b].data)
            .map(|(&x, &y)| (x - y).abs())
            .sum();
        let t = Tensor::scalar(total * inv);
        Ok(self.push(
            t,
            vec![a, b],
            Some(Box::new(move |vals, g| {
                let gv = g.data[0] * inv;
                let mut da = Tensor::zeros(&vals[a].shape);
                let mut db = Tensor::zeros(&vals[b].shape);
                for i in 0..vals[a].data.len() {
                    let s = if vals[a].data[i] > vals[b].data[i] {
                        gv
                    } else if vals[a].data[i] < vals[b].data[i] {
                        -gv
                    } else {
                        E::zero()
                    };
                    da.data[i] = s;
                    db.data[i] = -s;
                }
                vec![da, db]
            })),
        ))
    }

    pub fn mse_loss(&mut self, a: usize, b: usize) -> Result<usize> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(self.shape(a), self.shape(b)));
        }
        let n = self.vals[a].len();
        let inv = E::from_f64(1.0 / n as f64);
        let two = E::from_f64(2.0);
        let total: E = self.vals[a]
            .data
            .iter()
            .zip(&self.vals[b].data)
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum();
        let t = Tensor::scalar(total * inv);
        Ok(self.push(
            t,
            vec![a, b],
            Some(Box::new(move |vals, g| {
                let gv = g.data[0] * inv * two;
                let mut da = Tensor::zeros(&vals[a].shape);
                let mut db = Tensor::zeros(&vals[b].shape);
                for i in 0..vals[a].data.len() {
                    let d = (vals[a].data[i] - vals[b].data[i]) * gv;
                    da.data[i] = d;
                    db.data[i] = -d;
                }
                vec![da, db]
            })),
        ))
    }

    /// Numerically stable sigmoid cross-entropy against a target tensor of
    /// the same shape; mean over all elements.
    pub fn bce_with_logits(&mut self, logits: usize, targets: usize) -> Result<usize> {
        if self.shape(logits) != self.shape(targets) {
            return Err(shape_err(self.shape(logits), self.shape(targets)));
        }
        let n = self.vals[logits].len();
        let inv = E::from_f64(1.0 / n as f64);
        let one = E::one();
        let total: E = self.vals[logits]
            .data
            .iter()
            .zip(&self.vals[targets].data)
            .map(|(&z, &t)| {
                let m = if z > E::zero() { z } else { E::zero() };
                m - z * t + (one + (-z.abs()).exp()).ln()
            })
            .sum();
        let t = Tensor::scalar(total * inv);
        Ok(self.push(
            t,
            vec![logits, targets],
            Some(Box::new(move |vals, g| {
                let gv = g.data[0] * inv;
                let mut dz = Tensor::zeros(&vals[logits].shape);
                let mut dt = Tensor::zeros(&vals[targets].shape);
                for i in 0..vals[logits].data.len() {
                    let z = vals[logits].data[i];
                    let tv = vals[targets].data[i];
                    let sig = one / (one + (-z).exp());
                    dz.data[i] = (sig - tv) * gv;
                    dt.data[i] = -z * gv;
                }
                vec![dz, dt]
            })),
        ))
    }

    /// Mean softmax cross-entropy of logits (N,K) against class labels.
    pub fn softmax_cross_entropy(&mut self, logits: usize, labels: &[usize]) -> Result<usize> {
        let sl = self.vals[logits].shape.clone();
        if sl.len() != 2 || sl[0] != labels.len() {
            return Err(shape_err(&[labels.len(), sl.get(1).copied().unwrap_or(0)], &sl));
        }
        let (n, k) = (sl[0], sl[1]);
        let labels = labels.to_vec();
        let inv = E::from_f64(1.0 / n as f64);
        let mut probs = vec![E::zero(); n * k];
        let mut total = E::zero();
        for i in 0..n {
            let row = &self.vals[logits].data[i * k..(i + 1) * k];
            let mx = row.iter().copied().fold(row[0], |a, b| if b > a { b } else { a });
            let mut denom = E::zero();
            for j in 0..k {
                let e = (row[j] - mx).exp();
                probs[i * k + j] = e;
                denom = denom + e;
            }
            for j in 0..k {
                probs[i * k + j] = probs[i * k + j] / denom;
            }
            total = total - probs[i * k + labels[i]].ln();
        }
        let t = Tensor::scalar(total * inv);
        Ok(self.push(
            t,
            vec![logits],
            Some(Box::new(move |_, g| {
                let gv = g.data[0] * inv;
                let mut dz = Tensor::zeros(&[n, k]);
                for i in 0..n {
                    for j in 0..k {
                        let ind = if labels[i] == j { E::one() } else { E::zero() };
                        dz.data[i * k + j] = (probs[i * k + j] - ind) * gv;
                    }
                }
                vec![dz]
            })),
        ))
    }

    /// Class probabilities for inference (not differentiated).
    pub fn softmax_rows(&self, logits: usize) -> Tensor<E> {
        let sl = &self.vals[logits].shape;
        let (n, k) = (sl[0], sl[1]);
        let mut out = Tensor::zeros(&[n, k]);
        for i in 0..n {
            let row = &self.vals[logits].data[i * k..(i + 1) * k];
            let mx = row.iter().copied().fold(row[0], |a, b| if b > a { b } else { a });
            let mut denom = E::zero();
            for j in 0..k {
                let e = (row[j] - mx).exp();
                out.data[i * k + j] = e;
                denom = denom + e;
            }
            for j in 0..k {
                out.data[i * k + j] = out.data[i * k + j] / denom;
            }
        }
        out
    }
}
