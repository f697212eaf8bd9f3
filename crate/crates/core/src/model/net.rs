//! The mesh-recovery network: toy image backbone, feature embedding with
//! positional encodings, camera/joint/vertex tokens, per-stage transformer
//! encoder and decoder with progressive dimensionality reduction,
//! coordinate and camera heads, and sparse mesh upsampling — one
//! differentiable forward pass.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blockfile::{read_blockfile, write_blockfile};
use crate::error::{Error, Result};
use crate::mesh::mask::AttentionMask;
use crate::mesh::Topology;
use crate::model::config::{MaskMode, ModelConfig, ParamCounts, PositionalEncoding};
use crate::model::params::{xavier_uniform, ParamStore};
use crate::model::posenc::fixed_sine_grid;
use crate::sparse::SparseMatrix;
use crate::tensor::tape::{MaskPlan, Tape, Var};
use crate::tensor::Tensor;

/// Per-pass mapping from parameter names to tape variables.
pub struct PassVars {
    map: BTreeMap<String, Var>,
}

impl PassVars {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.map
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("parameter '{name}' not bound on this tape")))
    }
}

/// Tape handles for everything the model predicts.
pub struct OutputVars {
    pub camera_scale: Var,
    pub camera_translation: Var,
    pub joints3d: Var,
    pub coarse_vertices3d: Var,
    pub fine_vertices3d: Var,
    pub regressed_joints3d: Var,
    pub joints2d: Var,
    pub regressed_joints2d: Var,
}

/// Concrete prediction values extracted from a finished pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub camera_scale: f64,
    pub camera_translation: [f64; 2],
    pub joints3d: Tensor,
    pub coarse_vertices3d: Tensor,
    pub fine_vertices3d: Tensor,
    pub regressed_joints3d: Tensor,
    pub joints2d: Tensor,
    pub regressed_joints2d: Tensor,
}

/// Attention probabilities collected from every decoder layer.
#[derive(Debug, Default)]
pub struct AttentionCapture {
    /// Per layer: [heads, K+N, K+N].
    pub decoder_self: Vec<Tensor>,
    /// Per layer: [heads, K+N, HW].
    pub decoder_cross: Vec<Tensor>,
}

/// Which stream a between-stage reduction projects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceStream {
    /// Camera feature and aggregated image features.
    Encoder,
    /// Joint and vertex token features.
    Decoder,
}

pub struct Model {
    config: ModelConfig,
    pub params: ParamStore,
    upsample: Arc<SparseMatrix>,
    regressor: Arc<SparseMatrix>,
    mask: Option<AttentionMask>,
    mask_plan: Option<Arc<MaskPlan>>,
    fixed_pos: Option<Tensor>,
}

impl Model {
    /// Build a model over a mesh topology, Xavier-initializing every weight
    /// from the given seed.
    pub fn new(config: ModelConfig, topology: &Topology, seed: u64) -> Result<Self> {
        config.validate()?;
        if topology.coarse_vertices() != config.num_coarse_vertices
            || topology.fine_vertices() != config.num_fine_vertices
            || topology.joints() != config.num_joints
        {
            return Err(Error::Config(format!(
                "config (K={}, N={}, M={}) does not match topology (K={}, N={}, M={})",
                config.num_joints,
                config.num_coarse_vertices,
                config.num_fine_vertices,
                topology.joints(),
                topology.coarse_vertices(),
                topology.fine_vertices()
            )));
        }
        let mask = match config.mask_mode {
            MaskMode::Off => None,
            MaskMode::Full => Some(AttentionMask::from_adjacency(
                &topology.adjacency,
                config.num_joints,
                false,
                config.num_heads,
            )?),
            MaskMode::HalfHeads => Some(AttentionMask::from_adjacency(
                &topology.adjacency,
                config.num_joints,
                true,
                config.num_heads,
            )?),
        };
        if let Some(m) = &mask {
            m.validate()?;
        }
        let mask_plan = mask
            .as_ref()
            .map(|m| m.to_plan(config.num_heads))
            .transpose()?;
        let fixed_pos = match config.positional_encoding {
            PositionalEncoding::FixedSine => {
                Some(fixed_sine_grid(config.feature_grid, config.stage_dims[0])?)
            }
            _ => None,
        };
        let params = init_params(&config, seed)?;
        Ok(Model {
            config,
            params,
            upsample: Arc::new(topology.upsample.clone()),
            regressor: Arc::new(topology.regressor.clone()),
            mask,
            mask_plan,
            fixed_pos,
        })
    }

    /// Build with an explicit, externally constructed mask (e.g. all-true),
    /// bypassing adjacency derivation. Parameters are initialized exactly
    /// as in [`Model::new`] for the same seed.
    pub fn with_explicit_mask(
        config: ModelConfig,
        topology: &Topology,
        seed: u64,
        mask: AttentionMask,
    ) -> Result<Self> {
        let mut model = Model::new(config, topology, seed)?;
        mask.validate()?;
        if mask.size() != model.config.tokens_per_decoder() {
            return Err(Error::Config(format!(
                "mask size {} does not match K+N = {}",
                mask.size(),
                model.config.tokens_per_decoder()
            )));
        }
        model.mask_plan = Some(mask.to_plan(model.config.num_heads)?);
        model.mask = Some(mask);
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn upsample(&self) -> &Arc<SparseMatrix> {
        &self.upsample
    }

    pub fn regressor(&self) -> &Arc<SparseMatrix> {
        &self.regressor
    }

    pub fn mask(&self) -> Option<&AttentionMask> {
        self.mask.as_ref()
    }

    /// Insert every parameter on a fresh tape, in registration order.
    pub fn bind(&self, tape: &mut Tape) -> Result<PassVars> {
        let mut map = BTreeMap::new();
        for (name, tensor) in self.params.iter() {
            let var = tape.leaf(tensor.clone(), true)?;
            map.insert(name.to_string(), var);
        }
        Ok(PassVars { map })
    }

    /// Per-patch linear embedding of the input image to C channels via two
    /// linear+ReLU stages; output viewed as [H, W, C].
    pub fn toy_backbone(&self, tape: &mut Tape, vars: &PassVars, image: Var) -> Result<Var> {
        let shape = tape.value(image).shape().to_vec();
        let expect = [
            self.config.image_size[0],
            self.config.image_size[1],
            self.config.image_channels,
        ];
        if shape != expect {
            return Err(Error::Shape(format!(
                "image shape {shape:?} does not match configured {expect:?}"
            )));
        }
        let patch = self.config.patch_size()?;
        let patches = tape.extract_patches(image, patch)?;
        let h1 = tape.linear(patches, vars.get("backbone.l1.w")?, vars.get("backbone.l1.b")?)?;
        let h1 = tape.relu(h1)?;
        let h2 = tape.linear(h1, vars.get("backbone.l2.w")?, vars.get("backbone.l2.b")?)?;
        let h2 = tape.relu(h2)?;
        let [gh, gw] = self.config.feature_grid;
        tape.reshape(h2, &[gh, gw, self.config.backbone_channels])
    }

    /// Per-position linear projection C -> D1, flattened row-major to
    /// [HW, D1], plus positional encodings (added once, here only).
    pub fn embed_features(&self, tape: &mut Tape, vars: &PassVars, features: Var) -> Result<Var> {
        let hw = self.config.feature_positions();
        let c = self.config.backbone_channels;
        if tape.value(features).numel() != hw * c {
            return Err(Error::Shape(format!(
                "feature map {:?} does not match grid {:?} x {} channels",
                tape.value(features).shape(),
                self.config.feature_grid,
                c
            )));
        }
        let flat = tape.reshape(features, &[hw, c])?;
        let projected = tape.linear(flat, vars.get("embed.w")?, vars.get("embed.b")?)?;
        match self.config.positional_encoding {
            PositionalEncoding::FixedSine => {
                let table = self.fixed_pos.as_ref().expect("built at construction").clone();
                let pos = tape.leaf(table, false)?;
                tape.add(projected, pos)
            }
            PositionalEncoding::Learned => {
                let pos = vars.get("embed.pos")?;
                tape.add(projected, pos)
            }
            PositionalEncoding::None => Ok(projected),
        }
    }

    /// One encoder stage: self-attention over the camera token plus HW
    /// feature tokens. Returns (camera feature [1, D], aggregated features
    /// [HW, D]).
    pub fn encode_stage(
        &self,
        tape: &mut Tape,
        vars: &PassVars,
        stage: usize,
        cam: Var,
        feats: Var,
    ) -> Result<(Var, Var)> {
        let hw = tape.value(feats).shape()[0];
        let mut x = tape.concat_rows(&[cam, feats])?;
        for layer in 0..self.config.enc_layers[stage] {
            let prefix = format!("stage{stage}.enc{layer}");
            x = self.encoder_layer(tape, vars, &prefix, x)?;
        }
        let cam_out = tape.slice_rows(x, 0, 1)?;
        let feats_out = tape.slice_rows(x, 1, 1 + hw)?;
        Ok((cam_out, feats_out))
    }

    /// One decoder stage over the K+N joint/vertex tokens: masked
    /// self-attention, cross-attention into the aggregated image features,
    /// then the MLP; the camera feature is not an input.
    pub fn decode_stage(
        &self,
        tape: &mut Tape,
        vars: &PassVars,
        stage: usize,
        tokens: Var,
        memory: Var,
        mut capture: Option<&mut AttentionCapture>,
    ) -> Result<Var> {
        let t = tape.value(tokens).shape()[0];
        if t != self.config.tokens_per_decoder() {
            return Err(Error::Config(format!(
                "decoder token count {t} does not match K+N = {}",
                self.config.tokens_per_decoder()
            )));
        }
        if let Some(plan) = &self.mask_plan {
            if plan.q != t {
                return Err(Error::Config(format!(
                    "mask size {} does not match decoder token count {t}",
                    plan.q
                )));
            }
        }
        let mut x = tokens;
        for layer in 0..self.config.dec_layers[stage] {
            let prefix = format!("stage{stage}.dec{layer}");
            let (sa, sa_probs) = self.attention(
                tape,
                vars,
                &format!("{prefix}.self"),
                x,
                x,
                self.mask_plan.as_ref(),
            )?;
            let sum = tape.add(x, sa)?;
            x = self.norm(tape, vars, &format!("{prefix}.norm1"), sum)?;

            let (ca, ca_probs) =
                self.attention(tape, vars, &format!("{prefix}.cross"), x, memory, None)?;
            let sum = tape.add(x, ca)?;
            x = self.norm(tape, vars, &format!("{prefix}.norm2"), sum)?;

            let mlp = self.mlp(tape, vars, &format!("{prefix}.mlp"), x)?;
            let sum = tape.add(x, mlp)?;
            x = self.norm(tape, vars, &format!("{prefix}.norm3"), sum)?;

            if let Some(cap) = capture.as_deref_mut() {
                cap.decoder_self.push(tape.value(sa_probs).clone());
                cap.decoder_cross.push(tape.value(ca_probs).clone());
            }
        }
        Ok(x)
    }

    /// Learnable linear projection D_i -> D_{i+1} between stages, applied
    /// separately to the encoder streams and the decoder tokens.
    pub fn reduce_stage(
        &self,
        tape: &mut Tape,
        vars: &PassVars,
        transition: usize,
        stream: ReduceStream,
        x: Var,
    ) -> Result<Var> {
        if transition + 1 >= self.config.num_stages() {
            return Err(Error::Config(format!(
                "no stage transition {transition} in a {}-stage model",
                self.config.num_stages()
            )));
        }
        let tag = match stream {
            ReduceStream::Encoder => "enc",
            ReduceStream::Decoder => "dec",
        };
        tape.linear(
            x,
            vars.get(&format!("reduce{transition}.{tag}.w"))?,
            vars.get(&format!("reduce{transition}.{tag}.b"))?,
        )
    }

    /// Coordinate and camera heads plus the fixed linear pipeline:
    /// fine = U coarse, regressed joints = R fine, and weak-perspective
    /// projection of both joint sets.
    pub fn regress_outputs(
        &self,
        tape: &mut Tape,
        vars: &PassVars,
        cam_feature: Var,
        joint_features: Var,
        vertex_features: Var,
    ) -> Result<OutputVars> {
        let cam3 = tape.linear(cam_feature, vars.get("head.camera.w")?, vars.get("head.camera.b")?)?;
        let scale_raw = tape.slice_cols(cam3, 0, 1)?;
        let camera_scale = tape.softplus(scale_raw)?;
        let camera_translation = tape.slice_cols(cam3, 1, 3)?;

        let joints3d = tape.linear(joint_features, vars.get("head.xyz.w")?, vars.get("head.xyz.b")?)?;
        let coarse = tape.linear(vertex_features, vars.get("head.xyz.w")?, vars.get("head.xyz.b")?)?;
        let fine = tape.sparse_matmul(&self.upsample, coarse)?;
        let regressed = tape.sparse_matmul(&self.regressor, fine)?;

        let joints2d = self.project(tape, joints3d, camera_scale, camera_translation)?;
        let regressed2d = self.project(tape, regressed, camera_scale, camera_translation)?;

        Ok(OutputVars {
            camera_scale,
            camera_translation,
            joints3d,
            coarse_vertices3d: coarse,
            fine_vertices3d: fine,
            regressed_joints3d: regressed,
            joints2d,
            regressed_joints2d: regressed2d,
        })
    }

    /// Weak-perspective projection: s * drop_z(points) + t.
    fn project(&self, tape: &mut Tape, points: Var, scale: Var, translation: Var) -> Result<Var> {
        let xy = tape.slice_cols(points, 0, 2)?;
        let scaled = tape.mul_scalar(xy, scale)?;
        tape.add_row(scaled, translation)
    }

    /// Full forward pass on an existing tape; bind parameters first.
    pub fn forward_vars(
        &self,
        tape: &mut Tape,
        vars: &PassVars,
        image: &Tensor,
        mut capture: Option<&mut AttentionCapture>,
    ) -> Result<OutputVars> {
        let image = tape.leaf(image.clone(), false)?;
        let features = self.toy_backbone(tape, vars, image)?;
        let mut feats = self.embed_features(tape, vars, features)?;
        let mut cam = vars.get("tokens.camera")?;
        let joints = vars.get("tokens.joints")?;
        let vertices = vars.get("tokens.vertices")?;
        let mut tokens = tape.concat_rows(&[joints, vertices])?;

        for stage in 0..self.config.num_stages() {
            let (cam_out, feats_out) = self.encode_stage(tape, vars, stage, cam, feats)?;
            cam = cam_out;
            feats = feats_out;
            tokens = self.decode_stage(tape, vars, stage, tokens, feats, capture.as_deref_mut())?;
            if stage + 1 < self.config.num_stages() {
                cam = self.reduce_stage(tape, vars, stage, ReduceStream::Encoder, cam)?;
                feats = self.reduce_stage(tape, vars, stage, ReduceStream::Encoder, feats)?;
                tokens = self.reduce_stage(tape, vars, stage, ReduceStream::Decoder, tokens)?;
            }
        }

        let k = self.config.num_joints;
        let joint_features = tape.slice_rows(tokens, 0, k)?;
        let vertex_features = tape.slice_rows(tokens, k, self.config.tokens_per_decoder())?;
        self.regress_outputs(tape, vars, cam, joint_features, vertex_features)
    }

    pub fn forward(&self, image: &Tensor) -> Result<ModelOutput> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape)?;
        let out = self.forward_vars(&mut tape, &vars, image, None)?;
        extract_output(&tape, &out)
    }

    pub fn forward_with_attention(&self, image: &Tensor) -> Result<(ModelOutput, AttentionCapture)> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape)?;
        let mut capture = AttentionCapture::default();
        let out = self.forward_vars(&mut tape, &vars, image, Some(&mut capture))?;
        Ok((extract_output(&tape, &out)?, capture))
    }

    fn attention(
        &self,
        tape: &mut Tape,
        vars: &PassVars,
        prefix: &str,
        queries: Var,
        keys_values: Var,
        mask: Option<&Arc<MaskPlan>>,
    ) -> Result<(Var, Var)> {
        let heads = self.config.num_heads;
        let q = tape.linear(queries, vars.get(&format!("{prefix}.wq"))?, vars.get(&format!("{prefix}.bq"))?)?;
        let k = tape.linear(keys_values, vars.get(&format!("{prefix}.wk"))?, vars.get(&format!("{prefix}.bk"))?)?;
        let v = tape.linear(keys_values, vars.get(&format!("{prefix}.wv"))?, vars.get(&format!("{prefix}.bv"))?)?;
        let qh = tape.split_heads(q, heads)?;
        let kh = tape.split_heads(k, heads)?;
        let vh = tape.split_heads(v, heads)?;
        let kt = tape.transpose_last(kh)?;
        let raw = tape.matmul(qh, kt)?;
        let dh = tape.value(qh).shape()[2];
        let scores = tape.scale(raw, 1.0 / (dh as f64).sqrt())?;
        let probs = tape.masked_softmax(scores, mask)?;
        let context = tape.matmul(probs, vh)?;
        let merged = tape.merge_heads(context)?;
        let out = tape.linear(merged, vars.get(&format!("{prefix}.wo"))?, vars.get(&format!("{prefix}.bo"))?)?;
        Ok((out, probs))
    }

    fn encoder_layer(&self, tape: &mut Tape, vars: &PassVars, prefix: &str, x: Var) -> Result<Var> {
        let (attn, _) = self.attention(tape, vars, &format!("{prefix}.attn"), x, x, None)?;
        let sum = tape.add(x, attn)?;
        let x = self.norm(tape, vars, &format!("{prefix}.norm1"), sum)?;
        let mlp = self.mlp(tape, vars, &format!("{prefix}.mlp"), x)?;
        let sum = tape.add(x, mlp)?;
        self.norm(tape, vars, &format!("{prefix}.norm2"), sum)
    }

    fn mlp(&self, tape: &mut Tape, vars: &PassVars, prefix: &str, x: Var) -> Result<Var> {
        let h = tape.linear(x, vars.get(&format!("{prefix}.w1"))?, vars.get(&format!("{prefix}.b1"))?)?;
        let h = tape.relu(h)?;
        tape.linear(h, vars.get(&format!("{prefix}.w2"))?, vars.get(&format!("{prefix}.b2"))?)
    }

    fn norm(&self, tape: &mut Tape, vars: &PassVars, prefix: &str, x: Var) -> Result<Var> {
        tape.layer_norm(
            x,
            vars.get(&format!("{prefix}.gain"))?,
            vars.get(&format!("{prefix}.shift"))?,
            self.config.layer_norm_eps,
        )
    }

    /// Sum of actual parameter scalars per audit component; must agree with
    /// the closed-form [`count_parameters`](crate::model::config::count_parameters).
    pub fn actual_param_counts(&self) -> ParamCounts {
        let mut counts = ParamCounts {
            tokens: 0,
            encoder: 0,
            decoder: 0,
            projections: 0,
            heads: 0,
            backbone: 0,
        };
        for (name, t) in self.params.iter() {
            let n = t.numel();
            if name.starts_with("backbone.") {
                counts.backbone += n;
            } else if name.starts_with("embed.") || name.starts_with("reduce") {
                counts.projections += n;
            } else if name.starts_with("tokens.") {
                counts.tokens += n;
            } else if name.starts_with("head.") {
                counts.heads += n;
            } else if name.contains(".enc") {
                counts.encoder += n;
            } else if name.contains(".dec") {
                counts.decoder += n;
            }
        }
        counts
    }

    /// Write parameters and the config echo as a checkpoint file.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let blocks: Vec<(String, Tensor)> = self
            .params
            .iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        let meta = serde_json::json!({ "config": self.config });
        write_blockfile(path, "checkpoint", &meta, &blocks)
    }

    /// Overwrite parameters from named blocks; every model parameter must
    /// be present with a matching shape, and no unknown names are allowed.
    pub fn load_params(&mut self, blocks: &[(String, Tensor)]) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for (name, tensor) in blocks {
            if !self.params.contains(name) {
                return Err(Error::Data(format!("checkpoint block '{name}' is not a model parameter")));
            }
            self.params.set(name, tensor.clone())?;
            seen.insert(name.clone());
        }
        for name in self.params.names() {
            if !seen.contains(name) {
                return Err(Error::Data(format!("checkpoint is missing parameter '{name}'")));
            }
        }
        Ok(())
    }

    /// Rebuild a model from a checkpoint; the embedded config echo is the
    /// source of truth and must be consistent with the topology.
    pub fn from_checkpoint(path: &Path, topology: &Topology) -> Result<Model> {
        let (config, blocks, _) = read_checkpoint(path)?;
        let mut model = Model::new(config, topology, 0)?;
        model.load_params(&blocks)?;
        Ok(model)
    }
}

/// Read a checkpoint file into (config echo, parameter blocks, full meta).
/// Optimizer-state blocks (prefix `opt.`) are separated out by the caller.
pub fn read_checkpoint(path: &Path) -> Result<(ModelConfig, Vec<(String, Tensor)>, serde_json::Value)> {
    let file = read_blockfile(path)?;
    if file.kind != "checkpoint" {
        return Err(Error::Data(format!(
            "{}: expected a checkpoint file, found kind '{}'",
            path.display(),
            file.kind
        )));
    }
    let config: ModelConfig = serde_json::from_value(
        file.meta
            .get("config")
            .cloned()
            .ok_or_else(|| Error::Data(format!("{}: checkpoint has no config echo", path.display())))?,
    )
    .map_err(|e| Error::Data(format!("{}: bad config echo: {e}", path.display())))?;
    let params = file
        .blocks
        .iter()
        .filter(|(n, _)| !n.starts_with("opt."))
        .cloned()
        .collect();
    Ok((config, params, file.meta))
}

fn extract_output(tape: &Tape, vars: &OutputVars) -> Result<ModelOutput> {
    let scale = tape.value(vars.camera_scale).values()[0];
    let t = tape.value(vars.camera_translation).values();
    Ok(ModelOutput {
        camera_scale: scale,
        camera_translation: [t[0], t[1]],
        joints3d: tape.value(vars.joints3d).clone(),
        coarse_vertices3d: tape.value(vars.coarse_vertices3d).clone(),
        fine_vertices3d: tape.value(vars.fine_vertices3d).clone(),
        regressed_joints3d: tape.value(vars.regressed_joints3d).clone(),
        joints2d: tape.value(vars.joints2d).clone(),
        regressed_joints2d: tape.value(vars.regressed_joints2d).clone(),
    })
}

fn init_params(config: &ModelConfig, seed: u64) -> Result<ParamStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let d1 = config.stage_dims[0];
    let patch = config.patch_size()?;
    let patch_in = patch * patch * config.image_channels;

    let lin = |store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, rows: usize, cols: usize| -> Result<()> {
        store.register(&format!("{prefix}.w"), xavier_uniform(rng, rows, cols))?;
        store.register(&format!("{prefix}.b"), Tensor::zeros(vec![cols]))
    };
    let attn = |store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, d: usize| -> Result<()> {
        for part in ["q", "k", "v", "o"] {
            store.register(&format!("{prefix}.w{part}"), xavier_uniform(rng, d, d))?;
            store.register(&format!("{prefix}.b{part}"), Tensor::zeros(vec![d]))?;
        }
        Ok(())
    };
    let norm = |store: &mut ParamStore, prefix: &str, d: usize| -> Result<()> {
        store.register(&format!("{prefix}.gain"), Tensor::filled(vec![d], 1.0))?;
        store.register(&format!("{prefix}.shift"), Tensor::zeros(vec![d]))
    };

    lin(&mut store, &mut rng, "backbone.l1", patch_in, config.backbone_hidden)?;
    lin(&mut store, &mut rng, "backbone.l2", config.backbone_hidden, config.backbone_channels)?;
    lin(&mut store, &mut rng, "embed", config.backbone_channels, d1)?;
    if config.positional_encoding == PositionalEncoding::Learned {
        store.register("embed.pos", xavier_uniform(&mut rng, config.feature_positions(), d1))?;
    }
    store.register("tokens.camera", xavier_uniform(&mut rng, 1, d1))?;
    store.register("tokens.joints", xavier_uniform(&mut rng, config.num_joints, d1))?;
    store.register("tokens.vertices", xavier_uniform(&mut rng, config.num_coarse_vertices, d1))?;

    for (stage, &d) in config.stage_dims.iter().enumerate() {
        let e = config.mlp_expansion * d;
        for layer in 0..config.enc_layers[stage] {
            let p = format!("stage{stage}.enc{layer}");
            attn(&mut store, &mut rng, &format!("{p}.attn"), d)?;
            norm(&mut store, &format!("{p}.norm1"), d)?;
            store.register(&format!("{p}.mlp.w1"), xavier_uniform(&mut rng, d, e))?;
            store.register(&format!("{p}.mlp.b1"), Tensor::zeros(vec![e]))?;
            store.register(&format!("{p}.mlp.w2"), xavier_uniform(&mut rng, e, d))?;
            store.register(&format!("{p}.mlp.b2"), Tensor::zeros(vec![d]))?;
            norm(&mut store, &format!("{p}.norm2"), d)?;
        }
        for layer in 0..config.dec_layers[stage] {
            let p = format!("stage{stage}.dec{layer}");
            attn(&mut store, &mut rng, &format!("{p}.self"), d)?;
            norm(&mut store, &format!("{p}.norm1"), d)?;
            attn(&mut store, &mut rng, &format!("{p}.cross"), d)?;
            norm(&mut store, &format!("{p}.norm2"), d)?;
            store.register(&format!("{p}.mlp.w1"), xavier_uniform(&mut rng, d, e))?;
            store.register(&format!("{p}.mlp.b1"), Tensor::zeros(vec![e]))?;
            store.register(&format!("{p}.mlp.w2"), xavier_uniform(&mut rng, e, d))?;
            store.register(&format!("{p}.mlp.b2"), Tensor::zeros(vec![d]))?;
            norm(&mut store, &format!("{p}.norm3"), d)?;
        }
    }
    for t in 0..config.num_stages().saturating_sub(1) {
        let (from, to) = (config.stage_dims[t], config.stage_dims[t + 1]);
        lin(&mut store, &mut rng, &format!("reduce{t}.enc"), from, to)?;
        lin(&mut store, &mut rng, &format!("reduce{t}.dec"), from, to)?;
    }
    let d_last = config.last_dim();
    lin(&mut store, &mut rng, "head.xyz", d_last, 3)?;
    lin(&mut store, &mut rng, "head.camera", d_last, 3)?;
    Ok(store)
}
