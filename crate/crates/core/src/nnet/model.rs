use std::collections::BTreeSet;

use super::config::{EncoderKind, ModelConfig};
use super::layers::{ConformerBlock, DecoderLayer, EncoderLayer, Init, Linear};
use super::types::{
    posteriors, AttractorSet, EnrollmentSet, FrameEmbeddings, PosteriorMatrix, ACTIVITY_ROWS,
};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Debug, Clone)]
enum Encoder {
    Transformer(Vec<EncoderLayer>),
    Conformer(Vec<ConformerBlock>),
}

/// Per-component parameter counts. Shared tensors are attributed to the
/// component that registered them (the decoder).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamBreakdown {
    pub input: usize,
    pub encoder: usize,
    pub activity_enrollments: usize,
    pub decoder: usize,
    /// Enhancer parameters not shared with the decoder.
    pub enhancer_unique: usize,
    /// Parameters of the first Enhancer layer.
    pub enhancer_first_layer: usize,
    pub total: usize,
}

/// Attention-based encoder-decoder diarization network.
#[derive(Debug, Clone)]
pub struct AedEend {
    cfg: ModelConfig,
    store: ParamStore,
    input: Linear,
    encoder: Encoder,
    activity: ParamId,
    decoder: Vec<DecoderLayer>,
    enhancer: Vec<DecoderLayer>,
}

impl AedEend {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init::new(&mut store, cfg.init_seed);
        let d = cfg.attn_dim;
        let input = Linear::new(&mut init, "encoder.input", cfg.input_dim, d);
        let encoder = match cfg.encoder_kind {
            EncoderKind::Transformer => Encoder::Transformer(
                (0..cfg.enc_layers)
                    .map(|i| EncoderLayer::new(&mut init, &format!("encoder.layers.{i}"), d, cfg.heads, cfg.enc_ff_dim))
                    .collect(),
            ),
            EncoderKind::Conformer => Encoder::Conformer(
                (0..cfg.enc_layers)
                    .map(|i| {
                        ConformerBlock::new(
                            &mut init,
                            &format!("encoder.layers.{i}"),
                            d,
                            cfg.heads,
                            cfg.enc_ff_dim,
                            cfg.conformer_kernel,
                        )
                    })
                    .collect(),
            ),
        };
        let activity = init.gaussian("enroll.activity", vec![ACTIVITY_ROWS, d], (d as f64).powf(-0.5));
        let decoder: Vec<DecoderLayer> = (0..cfg.dec_layers)
            .map(|i| DecoderLayer::new(&mut init, &format!("decoder.layers.{i}"), d, cfg.heads, cfg.dec_ff_dim))
            .collect();
        // Enhancer layer 1 always owns its parameters; later layers reuse the
        // decoder layer at the same depth when sharing is on.
        let enhancer = (0..cfg.enh_layers)
            .map(|i| {
                if cfg.share_dec_enh_layers && i > 0 && i < decoder.len() {
                    decoder[i].clone()
                } else {
                    DecoderLayer::new(&mut init, &format!("enhancer.layers.{i}"), d, cfg.heads, cfg.dec_ff_dim)
                }
            })
            .collect();
        Ok(Self {
            cfg,
            store,
            input,
            encoder,
            activity,
            decoder,
            enhancer,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn has_enhancer(&self) -> bool {
        !self.enhancer.is_empty()
    }

    pub fn parameter_count(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn parameter_breakdown(&self) -> ParamBreakdown {
        let count = |ids: &mut dyn Iterator<Item = ParamId>| -> usize {
            ids.collect::<BTreeSet<_>>()
                .into_iter()
                .map(|id| self.store.tensor(id).numel())
                .sum()
        };
        let encoder_ids: Vec<ParamId> = match &self.encoder {
            Encoder::Transformer(l) => l.iter().flat_map(|l| l.ids()).collect(),
            Encoder::Conformer(l) => l.iter().flat_map(|l| l.ids()).collect(),
        };
        let decoder_ids: BTreeSet<ParamId> = self.decoder.iter().flat_map(|l| l.ids()).collect();
        ParamBreakdown {
            input: count(&mut self.input.ids().into_iter()),
            encoder: count(&mut encoder_ids.into_iter()),
            activity_enrollments: self.store.tensor(self.activity).numel(),
            decoder: count(&mut decoder_ids.iter().copied()),
            enhancer_unique: count(
                &mut self
                    .enhancer
                    .iter()
                    .flat_map(|l| l.ids())
                    .filter(|id| !decoder_ids.contains(id)),
            ),
            enhancer_first_layer: self
                .enhancer
                .first()
                .map_or(0, |l| count(&mut l.ids().into_iter())),
            total: self.parameter_count(),
        }
    }

    /// Parameter ids of decoder layer `i`, for sharing checks.
    pub fn decoder_layer_params(&self, i: usize) -> Vec<ParamId> {
        self.decoder[i].ids()
    }

    pub fn enhancer_layer_params(&self, i: usize) -> Vec<ParamId> {
        self.enhancer[i].ids()
    }

    pub fn activity_enrollments(&self) -> &Tensor {
        self.store.tensor(self.activity)
    }

    /// Enrollment set with the learned activity rows followed by `speakers`.
    pub fn enrollment_set(&self, speakers: Vec<Vec<f64>>) -> Result<EnrollmentSet> {
        EnrollmentSet::new(self.activity_enrollments().clone(), speakers)
    }

    fn eps(&self) -> f64 {
        self.cfg.layer_norm_eps
    }

    fn dropout_p(&self, g: &Graph) -> f64 {
        if g.is_training() {
            self.cfg.dropout
        } else {
            0.0
        }
    }

    /// T×F features to T×D embeddings on a graph.
    pub fn encode_var<'g>(&self, g: &'g Graph, x: Var<'g>) -> Result<Var<'g>> {
        if x.cols() != self.cfg.input_dim {
            return Err(Error::Config(format!(
                "feature dim {} but model expects {}",
                x.cols(),
                self.cfg.input_dim
            )));
        }
        let p = self.dropout_p(g);
        let mut h = self.input.forward(g, &self.store, x)?;
        match &self.encoder {
            Encoder::Transformer(layers) => {
                for l in layers {
                    h = l.forward(g, &self.store, h, p, self.eps())?;
                }
            }
            Encoder::Conformer(layers) => {
                for l in layers {
                    h = l.forward(g, &self.store, h, p, self.eps())?;
                }
            }
        }
        Ok(h)
    }

    /// The learned 3×D activity enrollments as a graph node.
    pub fn activity_var<'g>(&self, g: &'g Graph) -> Var<'g> {
        g.param(&self.store, self.activity)
    }

    /// (S+3)×D enrollments to attractors, cross-attending to `emb`.
    pub fn decode_var<'g>(&self, g: &'g Graph, enroll: Var<'g>, emb: Var<'g>) -> Result<Var<'g>> {
        if enroll.cols() != emb.cols() || enroll.cols() != self.cfg.attn_dim {
            return Err(Error::Config(format!(
                "enrollment dim {} / embedding dim {} / model dim {}",
                enroll.cols(),
                emb.cols(),
                self.cfg.attn_dim
            )));
        }
        let p = self.dropout_p(g);
        let mut q = enroll;
        for l in &self.decoder {
            q = l.forward(g, &self.store, q, emb, p, self.eps())?;
        }
        Ok(q)
    }

    /// Enhanced embeddings: frames query the attractors.
    pub fn enhance_var<'g>(&self, g: &'g Graph, emb: Var<'g>, attr: Var<'g>) -> Result<Var<'g>> {
        if self.enhancer.is_empty() {
            return Err(Error::Config("model has no Enhancer".into()));
        }
        if emb.cols() != attr.cols() {
            return Err(Error::Config(format!(
                "embedding dim {} vs attractor dim {}",
                emb.cols(),
                attr.cols()
            )));
        }
        let p = self.dropout_p(g);
        let mut h = emb;
        for l in &self.enhancer {
            h = l.forward(g, &self.store, h, attr, p, self.eps())?;
        }
        Ok(h)
    }

    pub fn encode(&self, features: &FeatureMatrix) -> Result<FrameEmbeddings> {
        let g = Graph::new();
        let x = g.constant(features.tensor().clone());
        FrameEmbeddings::new(self.encode_var(&g, x)?.value())
    }

    pub fn decode_attractors(&self, enroll: &EnrollmentSet, emb: &FrameEmbeddings) -> Result<AttractorSet> {
        let g = Graph::new();
        let e = g.constant(enroll.stacked());
        let m = g.constant(emb.values.clone());
        Ok(AttractorSet {
            values: self.decode_var(&g, e, m)?.value(),
        })
    }

    pub fn enhance(&self, emb: &FrameEmbeddings, attr: &AttractorSet) -> Result<FrameEmbeddings> {
        let g = Graph::new();
        let e = g.constant(emb.values.clone());
        let a = g.constant(attr.values.clone());
        FrameEmbeddings::new(self.enhance_var(&g, e, a)?.value())
    }

    /// Posteriors `Ŷ` from the encoder embeddings and, when requested, `Ȳ`
    /// from the enhanced embeddings with the same attractors.
    pub fn forward_full(
        &self,
        features: &FeatureMatrix,
        enroll: &EnrollmentSet,
        use_enhancer: bool,
    ) -> Result<(PosteriorMatrix, Option<PosteriorMatrix>)> {
        let emb = self.encode(features)?;
        self.forward_from_embeddings(&emb, enroll, use_enhancer)
    }

    pub fn forward_from_embeddings(
        &self,
        emb: &FrameEmbeddings,
        enroll: &EnrollmentSet,
        use_enhancer: bool,
    ) -> Result<(PosteriorMatrix, Option<PosteriorMatrix>)> {
        let attr = self.decode_attractors(enroll, emb)?;
        let post = posteriors(&attr, emb)?;
        let enhanced = if use_enhancer {
            let e = self.enhance(emb, &attr)?;
            Some(posteriors(&attr, &e)?)
        } else {
            None
        };
        Ok((post, enhanced))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(enh: usize) -> ModelConfig {
        ModelConfig {
            input_dim: 6,
            attn_dim: 8,
            heads: 2,
            enc_layers: 2,
            dec_layers: 3,
            enh_layers: enh,
            enc_ff_dim: 16,
            dec_ff_dim: 16,
            dropout: 0.0,
            ..ModelConfig::default()
        }
    }

    fn feats(t: usize, f: usize, seed: u64) -> FeatureMatrix {
        let data = (0..t * f)
            .map(|i| ((i as f64 + seed as f64 * 0.37) * 1.731).sin())
            .collect();
        FeatureMatrix::new(t, f, data, 0.1).unwrap()
    }

    #[test]
    fn single_frame_encodes() {
        let m = AedEend::new(tiny(0)).unwrap();
        let e = m.encode(&feats(1, 6, 0)).unwrap();
        assert_eq!(e.values.shape(), &[1, 8]);
    }

    #[test]
    fn feature_dim_mismatch_is_config_error() {
        let m = AedEend::new(tiny(0)).unwrap();
        assert!(matches!(m.encode(&feats(4, 5, 0)), Err(Error::Config(_))));
    }

    #[test]
    fn activity_only_decoding_yields_three_rows() {
        let m = AedEend::new(tiny(0)).unwrap();
        let e = m.encode(&feats(7, 6, 1)).unwrap();
        let a = m.decode_attractors(&m.enrollment_set(vec![]).unwrap(), &e).unwrap();
        assert_eq!(a.values.shape(), &[3, 8]);
        let bad = EnrollmentSet::new(Tensor::zeros(vec![3, 5]), vec![]).unwrap();
        assert!(matches!(m.decode_attractors(&bad, &e), Err(Error::Config(_))));
    }

    #[test]
    fn enhancer_shapes_and_flag() {
        let m = AedEend::new(tiny(3)).unwrap();
        let f = feats(9, 6, 2);
        let emb = m.encode(&f).unwrap();
        let enroll = m.enrollment_set(vec![emb.average(&[0, 1]).unwrap()]).unwrap();
        let (y, ybar) = m.forward_full(&f, &enroll, true).unwrap();
        assert_eq!(y.values().shape(), &[4, 9]);
        assert_eq!(ybar.unwrap().values().shape(), &[4, 9]);
        let (_, none) = m.forward_full(&f, &enroll, false).unwrap();
        assert!(none.is_none());
        let attr = m.decode_attractors(&enroll, &emb).unwrap();
        assert_eq!(m.enhance(&emb, &attr).unwrap().values.shape(), emb.values.shape());
    }

    #[test]
    fn sharing_reuses_decoder_layers() {
        let shared = AedEend::new(tiny(3)).unwrap();
        assert_ne!(shared.enhancer_layer_params(0), shared.decoder_layer_params(0));
        for i in 1..3 {
            assert_eq!(shared.enhancer_layer_params(i), shared.decoder_layer_params(i));
        }
        let base = AedEend::new(tiny(0)).unwrap();
        let b = shared.parameter_breakdown();
        assert_eq!(b.enhancer_unique, b.enhancer_first_layer);
        assert_eq!(shared.parameter_count() - b.enhancer_first_layer, base.parameter_count());

        let unshared = AedEend::new(ModelConfig {
            share_dec_enh_layers: false,
            ..tiny(3)
        })
        .unwrap();
        assert!(unshared.parameter_count() > shared.parameter_count());
    }

    #[test]
    fn conformer_runs() {
        let cfg = ModelConfig {
            encoder_kind: EncoderKind::Conformer,
            conformer_kernel: 3,
            ..tiny(0)
        };
        let m = AedEend::new(cfg).unwrap();
        let e = m.encode(&feats(5, 6, 3)).unwrap();
        assert_eq!(e.values.shape(), &[5, 8]);
        assert!(e.values.is_finite());
    }
}
