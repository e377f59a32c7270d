//! Network profiles (layer recipes at two scales) and the architecture
//! catalogue built on top of them: single-stream variants, early-fusion
//! variants and the two-stream (pi) variants with a frozen colour trunk.

use super::{chain_output_shape, LayerShape, LayerSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileName {
    Vgg16,
    Tiny,
}

impl ProfileName {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProfileName::Vgg16 => "vgg16",
            ProfileName::Tiny => "tiny",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "vgg16" => Ok(ProfileName::Vgg16),
            "tiny" => Ok(ProfileName::Tiny),
            other => Err(Error::invalid(format!("unknown profile '{}'", other))),
        }
    }
}

/// A layer recipe: square input side, conv channel widths grouped into
/// blocks (each block ends in a 2x2 max pool), hidden fully connected
/// widths, and the number of output classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Profile {
    pub name: ProfileName,
    pub input_side: usize,
    pub conv_blocks: Vec<Vec<usize>>,
    pub hidden_fcs: Vec<usize>,
    pub k_outputs: usize,
}

impl Profile {
    /// Full-scale profile: 224x224 input, the classic 13-conv stack and
    /// 4096-wide hidden layers.
    pub fn vgg16(k_outputs: usize) -> Self {
        Profile {
            name: ProfileName::Vgg16,
            input_side: 224,
            conv_blocks: vec![
                vec![64, 64],
                vec![128, 128],
                vec![256, 256, 256],
                vec![512, 512, 512],
                vec![512, 512, 512],
            ],
            hidden_fcs: vec![4096, 4096],
            k_outputs,
        }
    }

    /// Desk-scale profile used for training in tests: 64x64 input, three
    /// single-conv blocks and one 64-wide hidden layer.
    pub fn tiny(k_outputs: usize) -> Self {
        Profile {
            name: ProfileName::Tiny,
            input_side: 64,
            conv_blocks: vec![vec![8], vec![16], vec![32]],
            hidden_fcs: vec![64],
            k_outputs,
        }
    }

    pub fn by_name(name: ProfileName, k_outputs: usize) -> Self {
        match name {
            ProfileName::Vgg16 => Profile::vgg16(k_outputs),
            ProfileName::Tiny => Profile::tiny(k_outputs),
        }
    }

    /// Side of the feature map after all conv blocks (one pool per block).
    pub fn conv_out_side(&self) -> usize {
        self.input_side >> self.conv_blocks.len()
    }

    pub fn conv_out_channels(&self) -> usize {
        *self
            .conv_blocks
            .last()
            .and_then(|b| b.last())
            .expect("profile has at least one conv block")
    }

    /// Conv section for an input with `in_channels` channels: convs with
    /// relu, one max pool per block.
    fn conv_section(&self, in_channels: usize) -> Vec<LayerSpec> {
        let mut layers = Vec::new();
        let mut prev = in_channels;
        for block in &self.conv_blocks {
            for &width in block {
                layers.push(LayerSpec::conv(prev, width));
                layers.push(LayerSpec::Relu);
                prev = width;
            }
            layers.push(LayerSpec::MaxPool2x2);
        }
        layers
    }

    /// Classifier section from a flat input of `flat_in` features through
    /// the hidden layers to a k-way softmax.
    fn fc_section(&self, flat_in: usize) -> Vec<LayerSpec> {
        let mut layers = Vec::new();
        let mut prev = flat_in;
        for &width in &self.hidden_fcs {
            layers.push(LayerSpec::fc(prev, width));
            layers.push(LayerSpec::Relu);
            prev = width;
        }
        layers.push(LayerSpec::fc(prev, self.k_outputs));
        layers.push(LayerSpec::Softmax);
        layers
    }
}

/// How (or whether) colour and flow inputs are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FusionMode {
    /// Colour frames only.
    RgbOnly,
    /// Flow images only.
    OfOnly,
    /// Colour and flow stacked into a 6-channel input.
    Channels,
    /// Colour and flow side by side in one double-width image.
    Horizontal,
    /// Two conv trunks joined before the first fully connected layer.
    PiConv,
    /// Two trunks joined after the first hidden fully connected layer.
    PiFc6,
    /// Two trunks joined after the last hidden fully connected layer.
    PiFc7,
}

impl FusionMode {
    pub const ALL: [FusionMode; 7] = [
        FusionMode::RgbOnly,
        FusionMode::OfOnly,
        FusionMode::Channels,
        FusionMode::Horizontal,
        FusionMode::PiConv,
        FusionMode::PiFc6,
        FusionMode::PiFc7,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FusionMode::RgbOnly => "rgb_only",
            FusionMode::OfOnly => "of_only",
            FusionMode::Channels => "channels",
            FusionMode::Horizontal => "horizontal",
            FusionMode::PiConv => "pi_conv",
            FusionMode::PiFc6 => "pi_fc6",
            FusionMode::PiFc7 => "pi_fc7",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        FusionMode::ALL
            .iter()
            .copied()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown fusion mode '{}'", s)))
    }

    /// Whether this mode consumes a flow image at all.
    pub fn uses_flow(&self) -> bool {
        !matches!(self, FusionMode::RgbOnly)
    }

    /// Whether this mode consumes a colour image.
    pub fn uses_rgb(&self) -> bool {
        !matches!(self, FusionMode::OfOnly)
    }

    pub fn is_two_stream(&self) -> bool {
        self.fusion_point().is_some()
    }

    pub fn fusion_point(&self) -> Option<FusionPoint> {
        match self {
            FusionMode::PiConv => Some(FusionPoint::AfterConv),
            FusionMode::PiFc6 => Some(FusionPoint::AfterFc6),
            FusionMode::PiFc7 => Some(FusionPoint::AfterFc7),
            _ => None,
        }
    }
}

/// Where the two trunks of a two-stream network are concatenated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionPoint {
    /// After the last conv block, before flattening.
    AfterConv,
    /// After the first hidden fully connected layer.
    AfterFc6,
    /// After the last hidden fully connected layer. On profiles with a
    /// single hidden layer this coincides with `AfterFc6`.
    AfterFc7,
}

impl FusionPoint {
    pub fn code(&self) -> u8 {
        match self {
            FusionPoint::AfterConv => 1,
            FusionPoint::AfterFc6 => 2,
            FusionPoint::AfterFc7 => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(FusionPoint::AfterConv),
            2 => Ok(FusionPoint::AfterFc6),
            3 => Ok(FusionPoint::AfterFc7),
            other => Err(Error::invalid(format!("bad fusion point code {}", other))),
        }
    }

    /// Number of hidden fully connected layers included in each trunk.
    fn hidden_in_trunk(&self, profile: &Profile) -> usize {
        match self {
            FusionPoint::AfterConv => 0,
            FusionPoint::AfterFc6 => 1.min(profile.hidden_fcs.len()),
            FusionPoint::AfterFc7 => profile.hidden_fcs.len(),
        }
    }
}

/// Architecture catalogue entries, decoupled from input modality: the
/// shared-trunk baseline, the per-unit single-stream network, and the five
/// fusion variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchDescriptor {
    /// Frozen conv trunk shared across all units; only the classifier
    /// stack is learnable.
    HydraNet,
    /// Fully learnable single-stream network, one per unit.
    AuNets,
    Channels,
    Horizontal,
    PiConv,
    PiFc6,
    PiFc7,
}

impl ArchDescriptor {
    pub const ALL: [ArchDescriptor; 7] = [
        ArchDescriptor::HydraNet,
        ArchDescriptor::AuNets,
        ArchDescriptor::Channels,
        ArchDescriptor::Horizontal,
        ArchDescriptor::PiConv,
        ArchDescriptor::PiFc6,
        ArchDescriptor::PiFc7,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ArchDescriptor::HydraNet => "hydranet",
            ArchDescriptor::AuNets => "aunets",
            ArchDescriptor::Channels => "channels",
            ArchDescriptor::Horizontal => "horizontal",
            ArchDescriptor::PiConv => "pi_conv",
            ArchDescriptor::PiFc6 => "pi_fc6",
            ArchDescriptor::PiFc7 => "pi_fc7",
        }
    }
}

impl FusionMode {
    pub fn arch(&self) -> ArchDescriptor {
        match self {
            FusionMode::RgbOnly | FusionMode::OfOnly => ArchDescriptor::AuNets,
            FusionMode::Channels => ArchDescriptor::Channels,
            FusionMode::Horizontal => ArchDescriptor::Horizontal,
            FusionMode::PiConv => ArchDescriptor::PiConv,
            FusionMode::PiFc6 => ArchDescriptor::PiFc6,
            FusionMode::PiFc7 => ArchDescriptor::PiFc7,
        }
    }
}

/// A fully resolved construction plan: input shapes and layer chains with
/// trainable flags, ready to be instantiated with weights.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NetPlan {
    Single {
        input: LayerShape,
        layers: Vec<LayerSpec>,
    },
    TwoStream {
        trunk_input: LayerShape,
        /// Trunk applied to colour frames; frozen below the join.
        color: Vec<LayerSpec>,
        /// Trunk applied to flow images; fully learnable.
        motion: Vec<LayerSpec>,
        fusion: FusionPoint,
        head_input: LayerShape,
        head: Vec<LayerSpec>,
    },
}

impl NetPlan {
    pub fn for_arch(profile: &Profile, arch: ArchDescriptor) -> NetPlan {
        let side = profile.input_side;
        match arch {
            ArchDescriptor::HydraNet => {
                let mut plan = NetPlan::single(profile, 3, side, side);
                plan.freeze_convs();
                plan
            }
            ArchDescriptor::AuNets => NetPlan::single(profile, 3, side, side),
            ArchDescriptor::Channels => NetPlan::single(profile, 6, side, side),
            ArchDescriptor::Horizontal => NetPlan::single(profile, 3, side, 2 * side),
            ArchDescriptor::PiConv => NetPlan::two_stream(profile, FusionPoint::AfterConv),
            ArchDescriptor::PiFc6 => NetPlan::two_stream(profile, FusionPoint::AfterFc6),
            ArchDescriptor::PiFc7 => NetPlan::two_stream(profile, FusionPoint::AfterFc7),
        }
    }

    pub fn for_fusion(profile: &Profile, mode: FusionMode) -> NetPlan {
        NetPlan::for_arch(profile, mode.arch())
    }

    fn single(profile: &Profile, in_channels: usize, h: usize, w: usize) -> NetPlan {
        let input = LayerShape::map(in_channels, h, w);
        let mut layers = profile.conv_section(in_channels);
        layers.push(LayerSpec::Flatten);
        let flat = chain_output_shape(&input, &layers)
            .expect("profile conv chain is well formed")
            .num_elements();
        layers.extend(profile.fc_section(flat));
        NetPlan::Single { input, layers }
    }

    fn two_stream(profile: &Profile, fusion: FusionPoint) -> NetPlan {
        let trunk_input = LayerShape::map(3, profile.input_side, profile.input_side);
        let mut trunk = profile.conv_section(3);
        let hidden_in_trunk = fusion.hidden_in_trunk(profile);
        if hidden_in_trunk > 0 {
            trunk.push(LayerSpec::Flatten);
            let mut prev = chain_output_shape(&trunk_input, &trunk)
                .expect("profile conv chain is well formed")
                .num_elements();
            for &width in &profile.hidden_fcs[..hidden_in_trunk] {
                trunk.push(LayerSpec::fc(prev, width));
                trunk.push(LayerSpec::Relu);
                prev = width;
            }
        }
        let trunk_out = chain_output_shape(&trunk_input, &trunk).expect("trunk is well formed");

        // Concatenating the two trunk outputs doubles the leading dimension.
        let head_input = match trunk_out {
            LayerShape::Map { c, h, w } => LayerShape::map(2 * c, h, w),
            LayerShape::Flat(d) => LayerShape::Flat(2 * d),
        };
        let mut head = Vec::new();
        let mut prev = match head_input {
            LayerShape::Map { .. } => {
                head.push(LayerSpec::Flatten);
                head_input.num_elements()
            }
            LayerShape::Flat(d) => d,
        };
        for &width in &profile.hidden_fcs[hidden_in_trunk..] {
            head.push(LayerSpec::fc(prev, width));
            head.push(LayerSpec::Relu);
            prev = width;
        }
        head.push(LayerSpec::fc(prev, profile.k_outputs));
        head.push(LayerSpec::Softmax);

        // The colour trunk keeps pretrained weights and is frozen; the
        // motion trunk and everything past the join are learnable.
        let mut color = trunk.clone();
        for layer in &mut color {
            layer.set_trainable(false);
        }
        NetPlan::TwoStream {
            trunk_input,
            color,
            motion: trunk,
            fusion,
            head_input,
            head,
        }
    }

    fn freeze_convs(&mut self) {
        if let NetPlan::Single { layers, .. } = self {
            for layer in layers {
                if matches!(layer, LayerSpec::Conv3x3 { .. }) {
                    layer.set_trainable(false);
                }
            }
        }
    }

    /// Total or learnable-only parameter count across all sections.
    pub fn param_count(&self, learnable_only: bool) -> u64 {
        let count = |layers: &[LayerSpec]| -> u64 {
            layers
                .iter()
                .filter(|l| !learnable_only || l.is_trainable())
                .map(|l| l.param_count())
                .sum()
        };
        match self {
            NetPlan::Single { layers, .. } => count(layers),
            NetPlan::TwoStream { color, motion, head, .. } => {
                count(color) + count(motion) + count(head)
            }
        }
    }
}

/// Parameter accounting for one architecture at one profile.
pub fn param_count(profile: &Profile, arch: ArchDescriptor, learnable_only: bool) -> u64 {
    NetPlan::for_arch(profile, arch).param_count(learnable_only)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Closed-form oracle for the single-stream count, written without the
    /// plan machinery so the two can cross-check each other.
    fn single_stream_oracle(profile: &Profile, in_channels: usize, width_factor: usize) -> u64 {
        let mut total = 0u64;
        let mut prev = in_channels;
        for block in &profile.conv_blocks {
            for &c in block {
                total += (c * prev * 9 + c) as u64;
                prev = c;
            }
        }
        let side = profile.conv_out_side();
        let mut flat = prev * side * side * width_factor;
        for &h in &profile.hidden_fcs {
            total += (h * flat + h) as u64;
            flat = h;
        }
        total += (profile.k_outputs * flat + profile.k_outputs) as u64;
        total
    }

    #[test]
    fn vgg16_two_class_totals() {
        let p = Profile::vgg16(2);
        assert_eq!(param_count(&p, ArchDescriptor::AuNets, false), 134_268_738);
        assert_eq!(param_count(&p, ArchDescriptor::AuNets, true), 134_268_738);
        assert_eq!(
            param_count(&p, ArchDescriptor::AuNets, false),
            single_stream_oracle(&p, 3, 1)
        );
    }

    #[test]
    fn vgg16_hydranet_learnable_excludes_trunk() {
        let p = Profile::vgg16(2);
        assert_eq!(param_count(&p, ArchDescriptor::HydraNet, false), 134_268_738);
        assert_eq!(param_count(&p, ArchDescriptor::HydraNet, true), 119_554_050);
        // Frozen part is exactly the 13-conv trunk.
        assert_eq!(134_268_738 - 119_554_050, 14_714_688);
    }

    #[test]
    fn vgg16_early_fusion_totals() {
        let p = Profile::vgg16(2);
        assert_eq!(param_count(&p, ArchDescriptor::Channels, false), 134_270_466);
        assert_eq!(
            param_count(&p, ArchDescriptor::Channels, false),
            single_stream_oracle(&p, 6, 1)
        );
        assert_eq!(param_count(&p, ArchDescriptor::Horizontal, false), 237_029_186);
        assert_eq!(
            param_count(&p, ArchDescriptor::Horizontal, false),
            single_stream_oracle(&p, 3, 2)
        );
    }

    #[test]
    fn vgg16_two_stream_totals() {
        let p = Profile::vgg16(2);
        assert_eq!(param_count(&p, ArchDescriptor::PiConv, false), 251_743_874);
        assert_eq!(param_count(&p, ArchDescriptor::PiFc6, false), 268_525_186);
        assert_eq!(param_count(&p, ArchDescriptor::PiFc7, false), 268_537_474);
        // Learnable side: colour trunk frozen, motion trunk + head free.
        assert_eq!(param_count(&p, ArchDescriptor::PiFc6, true), 151_045_954);
        assert_eq!(param_count(&p, ArchDescriptor::PiFc7, true), 134_276_930);
        assert_eq!(
            param_count(&p, ArchDescriptor::PiConv, true),
            251_743_874 - 14_714_688
        );
    }

    #[test]
    fn tiny_plans_are_consistent() {
        let p = Profile::tiny(2);
        for arch in ArchDescriptor::ALL {
            let plan = NetPlan::for_arch(&p, arch);
            assert_eq!(plan.param_count(false), {
                // Recount by hand from the plan's own layers.
                match &plan {
                    NetPlan::Single { layers, .. } => {
                        layers.iter().map(|l| l.param_count()).sum::<u64>()
                    }
                    NetPlan::TwoStream { color, motion, head, .. } => color
                        .iter()
                        .chain(motion)
                        .chain(head)
                        .map(|l| l.param_count())
                        .sum::<u64>(),
                }
            });
            assert!(plan.param_count(true) <= plan.param_count(false));
        }
        assert_eq!(
            param_count(&p, ArchDescriptor::AuNets, false),
            single_stream_oracle(&p, 3, 1)
        );
    }

    #[test]
    fn tiny_fc7_join_coincides_with_fc6() {
        // With a single hidden layer the last-hidden join is the same site
        // as the first-hidden join, so the plans must be identical.
        let p = Profile::tiny(2);
        let a = NetPlan::for_arch(&p, ArchDescriptor::PiFc6);
        let b = NetPlan::for_arch(&p, ArchDescriptor::PiFc7);
        match (&a, &b) {
            (
                NetPlan::TwoStream { color: ca, head: ha, .. },
                NetPlan::TwoStream { color: cb, head: hb, .. },
            ) => {
                assert_eq!(ca, cb);
                assert_eq!(ha, hb);
            }
            _ => panic!("expected two-stream plans"),
        }
    }

    #[test]
    fn plan_shapes_close() {
        for profile in [Profile::vgg16(2), Profile::tiny(4)] {
            for arch in ArchDescriptor::ALL {
                match NetPlan::for_arch(&profile, arch) {
                    NetPlan::Single { input, layers } => {
                        let out = chain_output_shape(&input, &layers).unwrap();
                        assert_eq!(out, LayerShape::Flat(profile.k_outputs));
                    }
                    NetPlan::TwoStream {
                        trunk_input,
                        color,
                        motion,
                        head_input,
                        head,
                        ..
                    } => {
                        let c = chain_output_shape(&trunk_input, &color).unwrap();
                        let m = chain_output_shape(&trunk_input, &motion).unwrap();
                        assert_eq!(c, m);
                        let doubled = match c {
                            LayerShape::Map { c, h, w } => LayerShape::map(2 * c, h, w),
                            LayerShape::Flat(d) => LayerShape::Flat(2 * d),
                        };
                        assert_eq!(doubled, head_input);
                        let out = chain_output_shape(&head_input, &head).unwrap();
                        assert_eq!(out, LayerShape::Flat(profile.k_outputs));
                    }
                }
            }
        }
    }

    #[test]
    fn fusion_mode_round_trips() {
        for mode in FusionMode::ALL {
            assert_eq!(FusionMode::parse(mode.as_str()).unwrap(), mode);
        }
        assert!(FusionMode::parse("sideways").is_err());
    }
}
