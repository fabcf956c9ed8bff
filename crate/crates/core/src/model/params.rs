//! Named parameter collection, generic over what is stored per parameter
//! (tensors, tape variables, optimizer moments).

use rand::Rng;

use crate::config::{HyperConfig, Interaction};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct GruLayer<S> {
    pub w_z: S,
    pub u_z: S,
    pub b_z: S,
    pub w_r: S,
    pub u_r: S,
    pub b_r: S,
    pub w_h: S,
    pub u_h: S,
    pub b_h: S,
}

/// Interaction-layer weights. Which blocks exist depends on the variant.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionParams<S> {
    pub w_f: Option<S>,
    pub b_f: Option<S>,
    pub w_g: Option<S>,
    pub b_g: Option<S>,
    pub w_a: Option<S>,
    pub b_a: Option<S>,
    pub w_h: Option<S>,
    pub b_h: Option<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Params<S> {
    pub embedding: S,
    pub gru: Vec<GruLayer<S>>,
    pub interaction: InteractionParams<S>,
    pub w_o: S,
    pub b_o: S,
}

macro_rules! gru_fields {
    ($m:ident) => {
        $m!(w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h)
    };
}

macro_rules! interaction_fields {
    ($m:ident) => {
        $m!(w_f, b_f, w_g, b_g, w_a, b_a, w_h, b_h)
    };
}

impl<S> GruLayer<S> {
    pub fn map<U>(&self, mut f: impl FnMut(&str, &S) -> U) -> GruLayer<U> {
        macro_rules! build {
            ($($n:ident),*) => { GruLayer { $($n: f(stringify!($n), &self.$n)),* } };
        }
        gru_fields!(build)
    }

    pub fn as_ref_mut(&mut self) -> [&mut S; 9] {
        macro_rules! build {
            ($($n:ident),*) => { [$(&mut self.$n),*] };
        }
        gru_fields!(build)
    }
}

impl<S> Params<S> {
    pub fn as_ref(&self) -> Params<&S> {
        let gru = self
            .gru
            .iter()
            .map(|l| {
                macro_rules! build {
                    ($($n:ident),*) => {
                        GruLayer { $($n: &l.$n),* }
                    };
                }
                gru_fields!(build)
            })
            .collect();
        let it = &self.interaction;
        macro_rules! build_i {
            ($($n:ident),*) => {
                InteractionParams { $($n: it.$n.as_ref()),* }
            };
        }
        Params {
            embedding: &self.embedding,
            gru,
            interaction: interaction_fields!(build_i),
            w_o: &self.w_o,
            b_o: &self.b_o,
        }
    }

    /// Consumes the collection, applying `f` to every parameter in canonical
    /// order while keeping the layout.
    pub fn into_map<U>(self, mut f: impl FnMut(&str, S) -> U) -> Params<U> {
        let embedding = f("embedding", self.embedding);
        let gru = self
            .gru
            .into_iter()
            .enumerate()
            .map(|(k, l)| {
                macro_rules! build {
                    ($($n:ident),*) => {
                        GruLayer { $($n: f(&format!("gru.{}.{}", k, stringify!($n)), l.$n)),* }
                    };
                }
                gru_fields!(build)
            })
            .collect();
        let it = self.interaction;
        macro_rules! build_i {
            ($($n:ident),*) => {
                InteractionParams {
                    $($n: it.$n.map(|s| f(concat!("interaction.", stringify!($n)), s))),*
                }
            };
        }
        let interaction = interaction_fields!(build_i);
        let w_o = f("output.w", self.w_o);
        let b_o = f("output.b", self.b_o);
        Params {
            embedding,
            gru,
            interaction,
            w_o,
            b_o,
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(&str, &S) -> U) -> Params<U> {
        self.as_ref().into_map(|name, s| f(name, s))
    }

    /// Fallible form of [`Params::map`]; stops at the first error.
    pub fn try_map<U, E>(&self, mut f: impl FnMut(&str, &S) -> Result<U, E>) -> Result<Params<U>, E> {
        let mut err = None;
        let mapped = self.map(|name, s| {
            if err.is_some() {
                return None;
            }
            f(name, s).map_err(|e| err = Some(e)).ok()
        });
        match err {
            Some(e) => Err(e),
            None => Ok(mapped.into_map(|_, u| u.expect("every entry mapped"))),
        }
    }

    /// Parameters with their names, in canonical order.
    pub fn named(&self) -> Vec<(String, &S)> {
        let mut out = vec![("embedding".to_string(), &self.embedding)];
        for (k, l) in self.gru.iter().enumerate() {
            macro_rules! push {
                ($($n:ident),*) => {
                    $(out.push((format!("gru.{}.{}", k, stringify!($n)), &l.$n));)*
                };
            }
            gru_fields!(push);
        }
        let it = &self.interaction;
        macro_rules! push_i {
            ($($n:ident),*) => {
                $(if let Some(s) = it.$n.as_ref() {
                    out.push((concat!("interaction.", stringify!($n)).to_string(), s));
                })*
            };
        }
        interaction_fields!(push_i);
        out.push(("output.w".to_string(), &self.w_o));
        out.push(("output.b".to_string(), &self.b_o));
        out
    }

    pub fn values_mut(&mut self) -> Vec<&mut S> {
        let mut out = vec![&mut self.embedding];
        for l in self.gru.iter_mut() {
            macro_rules! push {
                ($($n:ident),*) => {
                    $(out.push(&mut l.$n);)*
                };
            }
            gru_fields!(push);
        }
        let it = &mut self.interaction;
        macro_rules! push_i {
            ($($n:ident),*) => {
                $(if let Some(s) = it.$n.as_mut() {
                    out.push(s);
                })*
            };
        }
        interaction_fields!(push_i);
        out.push(&mut self.w_o);
        out.push(&mut self.b_o);
        out
    }
}

/// Parameter shapes implied by a configuration and vocabulary size.
pub fn shapes(h: &HyperConfig, vocab_size: usize) -> Params<Vec<usize>> {
    let (d_r, d_f) = (h.d_r, h.d_f);
    let grid = h.interaction == Interaction::Grid;
    let gru = (0..h.layers)
        .map(|k| {
            let mut d_in = if k == 0 { h.input_width() } else { d_r };
            if grid {
                d_in += d_r;
            }
            GruLayer {
                w_z: vec![d_r, d_in],
                u_z: vec![d_r, d_r],
                b_z: vec![d_r],
                w_r: vec![d_r, d_in],
                u_r: vec![d_r, d_r],
                b_r: vec![d_r],
                w_h: vec![d_r, d_in],
                u_h: vec![d_r, d_r],
                b_h: vec![d_r],
            }
        })
        .collect();
    let none = InteractionParams {
        w_f: None,
        b_f: None,
        w_g: None,
        b_g: None,
        w_a: None,
        b_a: None,
        w_h: None,
        b_h: None,
    };
    let pair = |d_in: usize| (Some(vec![d_f, 2 * d_in]), Some(vec![d_f]));
    let score = (Some(vec![1, d_f]), Some(vec![1]));
    let interaction = match h.interaction {
        Interaction::Base | Interaction::Grid => none,
        Interaction::Pool => {
            let (w_f, b_f) = pair(d_r);
            InteractionParams { w_f, b_f, ..none }
        }
        Interaction::AttPool => {
            let (w_f, b_f) = pair(d_r);
            let (w_g, b_g) = pair(d_r);
            let (w_a, b_a) = score;
            InteractionParams {
                w_f,
                b_f,
                w_g,
                b_g,
                w_a,
                b_a,
                ..none
            }
        }
        Interaction::PoolSelfAtt => {
            let (w_f, b_f) = pair(d_r);
            let (w_g, b_g) = pair(d_f);
            let (w_a, b_a) = score;
            let (w_h, b_h) = pair(d_f);
            InteractionParams {
                w_f,
                b_f,
                w_g,
                b_g,
                w_a,
                b_a,
                w_h,
                b_h,
            }
        }
        Interaction::SelfAtt => {
            let (w_g, b_g) = pair(d_r);
            let (w_a, b_a) = score;
            let (w_h, b_h) = pair(d_r);
            InteractionParams {
                w_g,
                b_g,
                w_a,
                b_a,
                w_h,
                b_h,
                ..none
            }
        }
    };
    Params {
        embedding: vec![vocab_size, h.d_w],
        gru,
        interaction,
        w_o: vec![4, h.output_width()],
        b_o: vec![4],
    }
}

impl<T: Real> Params<Tensor<T>> {
    /// Glorot-uniform matrices, zero biases, embeddings uniform in ±0.1.
    pub fn init(h: &HyperConfig, vocab_size: usize, rng: &mut impl Rng) -> Self {
        shapes(h, vocab_size).into_map(|name, shape| {
            let n: usize = shape.iter().product();
            let bound = if name == "embedding" {
                0.1
            } else if shape.len() == 2 {
                (6.0 / (shape[0] + shape[1]) as f64).sqrt()
            } else {
                0.0
            };
            let data = (0..n)
                .map(|_| {
                    if bound == 0.0 {
                        T::zero()
                    } else {
                        T::from_f64(rng.gen_range(-bound..bound))
                    }
                })
                .collect();
            Tensor::new(shape, data).expect("shape product matches")
        })
    }

    pub fn zeros_like(&self) -> Self {
        self.map(|_, t| Tensor::zeros(t.shape()))
    }

    pub fn cast<U: Real>(&self) -> Params<Tensor<U>> {
        self.map(|_, t| t.cast())
    }

    pub fn num_scalars(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Interaction;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn names_are_unique_and_variant_specific() {
        for i in Interaction::ALL {
            let h = HyperConfig {
                d_w: 4,
                d_r: 5,
                layers: 3,
                d_f: 6,
                interaction: i,
                ..HyperConfig::default()
            };
            let p: Params<Tensor<f32>> = Params::init(&h, 10, &mut ChaCha8Rng::seed_from_u64(0));
            let names: Vec<String> = p.named().into_iter().map(|(n, _)| n).collect();
            let mut dedup = names.clone();
            dedup.sort();
            dedup.dedup();
            assert_eq!(dedup.len(), names.len());
            assert_eq!(p.gru.len(), 3);
            let has = |n: &str| names.iter().any(|x| x == n);
            assert_eq!(has("interaction.w_f"), matches!(i, Interaction::Pool | Interaction::AttPool | Interaction::PoolSelfAtt));
            assert_eq!(has("interaction.w_h"), matches!(i, Interaction::PoolSelfAtt | Interaction::SelfAtt));
            assert_eq!(p.w_o.shape(), &[4, h.output_width()]);
        }
    }

    #[test]
    fn init_respects_bounds() {
        let h = HyperConfig {
            d_w: 8,
            d_r: 8,
            layers: 2,
            d_f: 8,
            interaction: Interaction::PoolSelfAtt,
            mp_enabled: true,
            ..HyperConfig::default()
        };
        let p: Params<Tensor<f64>> = Params::init(&h, 20, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(p.gru[0].w_z.shape(), &[8, 10]);
        assert!(p.embedding.data().iter().all(|x| x.abs() <= 0.1));
        assert!(p.gru[1].b_h.data().iter().all(|&x| x == 0.0));
        let bound = (6.0f64 / 16.0).sqrt();
        assert!(p.gru[1].u_r.data().iter().all(|x| x.abs() <= bound));
        let q = p.try_map(|_, t| Ok::<_, ()>(t.len())).unwrap();
        assert_eq!(q.embedding, 160);
    }
}
