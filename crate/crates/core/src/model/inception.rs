//! Naive and dimension-reduction inception modules.

use rand::Rng;

use super::layers::{Conv2d, ConvCache, MaxPool, PoolCache, SamePool3};
use super::params::{Gradients, ParamStore};
use super::tensor::{Map, Scalar};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InceptionKind {
    /// Parallel 1x1, 3x3, 5x5 convolutions and a 3x3 max-pool branch.
    Naive,
    /// 1x1 bottlenecks before the 3x3/5x5 convolutions and after the pool.
    Reduction,
}

#[derive(Debug, Clone)]
pub struct Inception {
    pub kind: InceptionKind,
    pub cin: usize,
    pub cout: usize,
    b1: Conv2d,
    b3: Conv2d,
    b5: Conv2d,
    r3: Option<Conv2d>,
    r5: Option<Conv2d>,
    pool_proj: Option<Conv2d>,
    pub pool: MaxPool,
}

#[derive(Debug, Clone)]
pub struct InceptionCache<T> {
    c1: ConvCache<T>,
    c3: ConvCache<T>,
    c5: ConvCache<T>,
    r3: Option<ConvCache<T>>,
    r5: Option<ConvCache<T>>,
    same_pool: PoolCache,
    proj: Option<ConvCache<T>>,
    split: [usize; 4],
    pool: PoolCache,
}

impl Inception {
    /// `width` is the nominal block width; every branch gets `width / 4` channels.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        kind: InceptionKind,
        cin: usize,
        width: usize,
        pool: MaxPool,
        rng: &mut impl Rng,
    ) -> Self {
        let q = (width / 4).max(1);
        let b1 = Conv2d::new(store, &format!("{name}.b1"), cin, q, 1, true, rng);
        match kind {
            InceptionKind::Naive => {
                let b3 = Conv2d::new(store, &format!("{name}.b3"), cin, q, 3, true, rng);
                let b5 = Conv2d::new(store, &format!("{name}.b5"), cin, q, 5, true, rng);
                Self {
                    kind,
                    cin,
                    cout: 3 * q + cin,
                    b1,
                    b3,
                    b5,
                    r3: None,
                    r5: None,
                    pool_proj: None,
                    pool,
                }
            }
            InceptionKind::Reduction => {
                let n3 = q;
                let n5 = (width / 8).max(1);
                let r3 = Conv2d::new(store, &format!("{name}.r3"), cin, n3, 1, true, rng);
                let b3 = Conv2d::new(store, &format!("{name}.b3"), n3, q, 3, true, rng);
                let r5 = Conv2d::new(store, &format!("{name}.r5"), cin, n5, 1, true, rng);
                let b5 = Conv2d::new(store, &format!("{name}.b5"), n5, q, 5, true, rng);
                let proj = Conv2d::new(store, &format!("{name}.pool_proj"), cin, q, 1, true, rng);
                Self {
                    kind,
                    cin,
                    cout: 4 * q,
                    b1,
                    b3,
                    b5,
                    r3: Some(r3),
                    r5: Some(r5),
                    pool_proj: Some(proj),
                    pool,
                }
            }
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        x: Map<T>,
    ) -> Result<(Map<T>, InceptionCache<T>)> {
        let (y1, c1) = self.b1.forward(p, x.clone())?;
        let (in3, r3) = match &self.r3 {
            Some(r) => {
                let (y, c) = r.forward(p, x.clone())?;
                (y, Some(c))
            }
            None => (x.clone(), None),
        };
        let (y3, c3) = self.b3.forward(p, in3)?;
        let (in5, r5) = match &self.r5 {
            Some(r) => {
                let (y, c) = r.forward(p, x.clone())?;
                (y, Some(c))
            }
            None => (x.clone(), None),
        };
        let (y5, c5) = self.b5.forward(p, in5)?;
        let (pooled, same_pool) = SamePool3::forward(&x);
        let (y4, proj) = match &self.pool_proj {
            Some(conv) => {
                let (y, c) = conv.forward(p, pooled)?;
                (y, Some(c))
            }
            None => (pooled, None),
        };
        let split = [y1.c, y3.c, y5.c, y4.c];
        let cat = Map::concat(&[y1, y3, y5, y4]);
        let (out, pool) = self.pool.forward(cat)?;
        Ok((
            out,
            InceptionCache {
                c1,
                c3,
                c5,
                r3,
                r5,
                same_pool,
                proj,
                split,
                pool,
            },
        ))
    }

    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        cache: &InceptionCache<T>,
        dy: Map<T>,
        grads: &mut Gradients<T>,
    ) -> Map<T> {
        let dcat = self.pool.backward(&cache.pool, dy);
        let mut parts = dcat.split(&cache.split).into_iter();
        let (d1, d3, d5, d4) = (
            parts.next().unwrap(),
            parts.next().unwrap(),
            parts.next().unwrap(),
            parts.next().unwrap(),
        );
        let mut dx = self.b1.backward(p, &cache.c1, d1, grads);
        let mut d_in3 = self.b3.backward(p, &cache.c3, d3, grads);
        if let (Some(r), Some(c)) = (&self.r3, &cache.r3) {
            d_in3 = r.backward(p, c, d_in3, grads);
        }
        dx.add_assign(&d_in3);
        let mut d_in5 = self.b5.backward(p, &cache.c5, d5, grads);
        if let (Some(r), Some(c)) = (&self.r5, &cache.r5) {
            d_in5 = r.backward(p, c, d_in5, grads);
        }
        dx.add_assign(&d_in5);
        let d_pooled = match (&self.pool_proj, &cache.proj) {
            (Some(conv), Some(c)) => conv.backward(p, c, d4, grads),
            _ => d4,
        };
        dx.add_assign(&SamePool3::backward(&cache.same_pool, &d_pooled));
        dx
    }
}
