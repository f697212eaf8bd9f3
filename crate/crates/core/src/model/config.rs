//! Architecture hyperparameters, model-size variants, and the closed-form
//! parameter audit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Topology mask in every decoder self-attention head.
    Full,
    /// Mask in the lower half of the heads, the rest unmasked.
    HalfHeads,
    /// No masking.
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionalEncoding {
    /// Fixed 2-D sine/cosine table added once after feature embedding.
    FixedSine,
    /// Learnable per-position embedding.
    Learned,
    /// No positional information.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    S,
    M,
    L,
}

impl Variant {
    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_uppercase().as_str() {
            "S" => Ok(Variant::S),
            "M" => Ok(Variant::M),
            "L" => Ok(Variant::L),
            other => Err(Error::Config(format!("unknown variant '{other}', expected S, M or L"))),
        }
    }

    fn layers_per_stage(self) -> usize {
        match self {
            Variant::S => 1,
            Variant::M => 2,
            Variant::L => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden size per transformer stage, strictly decreasing.
    pub stage_dims: Vec<usize>,
    pub enc_layers: Vec<usize>,
    pub dec_layers: Vec<usize>,
    pub num_heads: usize,
    /// MLP hidden width as a multiple of the stage dim.
    pub mlp_expansion: usize,
    /// K joint tokens.
    pub num_joints: usize,
    /// N coarse-mesh vertex tokens.
    pub num_coarse_vertices: usize,
    /// M fine-mesh vertices after upsampling.
    pub num_fine_vertices: usize,
    /// (H, W) of the backbone feature map.
    pub feature_grid: [usize; 2],
    /// C channels produced by the backbone.
    pub backbone_channels: usize,
    pub backbone_hidden: usize,
    pub image_size: [usize; 2],
    pub image_channels: usize,
    pub mask_mode: MaskMode,
    pub positional_encoding: PositionalEncoding,
    pub layer_norm_eps: f64,
}

impl ModelConfig {
    /// Published configuration for a model-size variant: two stages at dims
    /// 512/128, 8 heads, K=14, N=431, M=6890 on a 7x7x2048 feature map.
    pub fn variant(v: Variant) -> Self {
        let layers = v.layers_per_stage();
        ModelConfig {
            stage_dims: vec![512, 128],
            enc_layers: vec![layers; 2],
            dec_layers: vec![layers; 2],
            num_heads: 8,
            mlp_expansion: 4,
            num_joints: 14,
            num_coarse_vertices: 431,
            num_fine_vertices: 6890,
            feature_grid: [7, 7],
            backbone_channels: 2048,
            backbone_hidden: 64,
            image_size: [224, 224],
            image_channels: 3,
            mask_mode: MaskMode::Full,
            positional_encoding: PositionalEncoding::FixedSine,
            layer_norm_eps: 1e-5,
        }
    }

    /// Small synthetic configuration sized for a once-subdivided
    /// tetrahedron (K=4, N=10, M=34) and 32x32 grayscale images.
    pub fn tetra_scale() -> Self {
        ModelConfig {
            stage_dims: vec![32, 16],
            enc_layers: vec![1, 1],
            dec_layers: vec![1, 1],
            num_heads: 4,
            mlp_expansion: 4,
            num_joints: 4,
            num_coarse_vertices: 10,
            num_fine_vertices: 34,
            feature_grid: [4, 4],
            backbone_channels: 24,
            backbone_hidden: 32,
            image_size: [32, 32],
            image_channels: 1,
            mask_mode: MaskMode::Full,
            positional_encoding: PositionalEncoding::FixedSine,
            layer_norm_eps: 1e-5,
        }
    }

    pub fn num_stages(&self) -> usize {
        self.stage_dims.len()
    }

    pub fn tokens_per_decoder(&self) -> usize {
        self.num_joints + self.num_coarse_vertices
    }

    pub fn feature_positions(&self) -> usize {
        self.feature_grid[0] * self.feature_grid[1]
    }

    pub fn last_dim(&self) -> usize {
        *self.stage_dims.last().expect("validated non-empty")
    }

    /// Square patch edge implied by image size and feature grid.
    pub fn patch_size(&self) -> Result<usize> {
        let [ih, iw] = self.image_size;
        let [gh, gw] = self.feature_grid;
        if gh == 0 || gw == 0 || ih % gh != 0 || iw % gw != 0 {
            return Err(Error::Config(format!(
                "image {ih}x{iw} is not divisible by feature grid {gh}x{gw}"
            )));
        }
        let (ph, pw) = (ih / gh, iw / gw);
        if ph != pw {
            return Err(Error::Config(format!(
                "patches must be square, got {ph}x{pw}"
            )));
        }
        Ok(ph)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_dims.is_empty() {
            return Err(Error::Config("stage_dims must not be empty".into()));
        }
        if self.enc_layers.len() != self.num_stages() || self.dec_layers.len() != self.num_stages() {
            return Err(Error::Config(format!(
                "layer counts ({}, {}) must match {} stages",
                self.enc_layers.len(),
                self.dec_layers.len(),
                self.num_stages()
            )));
        }
        for w in self.stage_dims.windows(2) {
            if w[1] >= w[0] {
                return Err(Error::Config(format!(
                    "stage_dims must be strictly decreasing, got {:?}",
                    self.stage_dims
                )));
            }
        }
        if self.num_heads == 0 {
            return Err(Error::Config("num_heads must be positive".into()));
        }
        for &d in &self.stage_dims {
            if d % self.num_heads != 0 {
                return Err(Error::Config(format!(
                    "stage dim {d} is not divisible by {} heads",
                    self.num_heads
                )));
            }
        }
        if self.mlp_expansion == 0 {
            return Err(Error::Config("mlp_expansion must be positive".into()));
        }
        if self.num_joints == 0 || self.num_coarse_vertices == 0 {
            return Err(Error::Config("token counts must be positive".into()));
        }
        if self.num_fine_vertices < self.num_coarse_vertices {
            return Err(Error::Config(format!(
                "fine vertex count {} below coarse count {}",
                self.num_fine_vertices, self.num_coarse_vertices
            )));
        }
        if self.backbone_channels == 0 || self.backbone_hidden == 0 || self.image_channels == 0 {
            return Err(Error::Config("backbone extents must be positive".into()));
        }
        self.patch_size()?;
        if self.positional_encoding == PositionalEncoding::FixedSine && self.stage_dims[0] % 4 != 0 {
            return Err(Error::Config(format!(
                "fixed sine encoding needs the first stage dim divisible by 4, got {}",
                self.stage_dims[0]
            )));
        }
        if self.layer_norm_eps <= 0.0 {
            return Err(Error::Config("layer_norm_eps must be positive".into()));
        }
        Ok(())
    }
}

/// Learnable-scalar counts per component. The transformer total excludes
/// the image backbone, which is reported separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCounts {
    pub tokens: usize,
    pub encoder: usize,
    pub decoder: usize,
    pub projections: usize,
    pub heads: usize,
    pub backbone: usize,
}

impl ParamCounts {
    pub fn transformer_total(&self) -> usize {
        self.tokens + self.encoder + self.decoder + self.projections + self.heads
    }
}

/// Closed-form parameter audit for a configuration.
///
/// Per layer at dim D with 4x MLP expansion e: one attention block costs
/// 4(D^2+D), a layer norm 2D, and the MLP D*eD+eD + eD*D+D. Encoder layers
/// have one attention block and two norms; decoder layers have two
/// attention blocks and three norms.
pub fn count_parameters(config: &ModelConfig) -> Result<ParamCounts> {
    config.validate()?;
    let e = config.mlp_expansion;
    let attn = |d: usize| 4 * (d * d + d);
    let norm = |d: usize| 2 * d;
    let mlp = |d: usize| d * (e * d) + e * d + (e * d) * d + d;
    let enc_layer = |d: usize| attn(d) + mlp(d) + 2 * norm(d);
    let dec_layer = |d: usize| 2 * attn(d) + mlp(d) + 3 * norm(d);

    let mut encoder = 0;
    let mut decoder = 0;
    for (i, &d) in config.stage_dims.iter().enumerate() {
        encoder += config.enc_layers[i] * enc_layer(d);
        decoder += config.dec_layers[i] * dec_layer(d);
    }

    let d1 = config.stage_dims[0];
    let tokens = (1 + config.num_joints + config.num_coarse_vertices) * d1;

    let mut projections = config.backbone_channels * d1 + d1;
    for w in config.stage_dims.windows(2) {
        // one reducer for the encoder streams, one for the decoder tokens
        projections += 2 * (w[0] * w[1] + w[1]);
    }
    if config.positional_encoding == PositionalEncoding::Learned {
        projections += config.feature_positions() * d1;
    }

    let d_last = config.last_dim();
    let heads = 2 * (d_last * 3 + 3);

    let patch = config.patch_size()?;
    let patch_in = patch * patch * config.image_channels;
    let backbone = patch_in * config.backbone_hidden
        + config.backbone_hidden
        + config.backbone_hidden * config.backbone_channels
        + config.backbone_channels;

    Ok(ParamCounts { tokens, encoder, decoder, projections, heads, backbone })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn within_pct(actual: usize, published_millions: f64, pct: f64) -> bool {
        let actual_m = actual as f64 / 1e6;
        (actual_m - published_millions).abs() <= published_millions * pct / 100.0
    }

    #[test]
    fn variant_transformer_budgets_match_published_counts() {
        let s = count_parameters(&ModelConfig::variant(Variant::S)).unwrap();
        let m = count_parameters(&ModelConfig::variant(Variant::M)).unwrap();
        let l = count_parameters(&ModelConfig::variant(Variant::L)).unwrap();
        assert!(within_pct(s.transformer_total(), 9.2, 5.0), "S: {}", s.transformer_total());
        assert!(within_pct(m.transformer_total(), 17.1, 5.0), "M: {}", m.transformer_total());
        assert!(within_pct(l.transformer_total(), 24.9, 5.0), "L: {}", l.transformer_total());
    }

    #[test]
    fn zero_layer_config_counts_only_static_parts() {
        let mut cfg = ModelConfig::tetra_scale();
        cfg.enc_layers = vec![0, 0];
        cfg.dec_layers = vec![0, 0];
        let c = count_parameters(&cfg).unwrap();
        assert_eq!(c.encoder, 0);
        assert_eq!(c.decoder, 0);
        assert_eq!(c.transformer_total(), c.tokens + c.projections + c.heads);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = ModelConfig::tetra_scale();
        cfg.stage_dims = vec![16, 32];
        assert!(cfg.validate().is_err(), "non-decreasing dims");

        let mut cfg = ModelConfig::tetra_scale();
        cfg.num_heads = 3;
        assert!(cfg.validate().is_err(), "dims not divisible by heads");

        let mut cfg = ModelConfig::tetra_scale();
        cfg.image_size = [30, 32];
        assert!(cfg.validate().is_err(), "grid does not divide image");
    }

    #[test]
    fn variant_parse() {
        assert_eq!(Variant::parse("s").unwrap(), Variant::S);
        assert!(Variant::parse("xl").is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = ModelConfig::variant(Variant::M);
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ModelConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }
}
