//! Weight transplantation between structurally related graphs: cloning a
//! trunk, widening the first conv layer for stacked-channel input, and
//! tiling a fully connected layer for doubled input.

use super::graph::LayerGraph;
use super::network::Network;
use super::LayerSpec;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransplantOp {
    /// Destination's first conv layer takes twice the input channels; the
    /// extra channel block receives a bit-identical copy of the original
    /// filters. All other layers are copied unchanged.
    CopyFirstLayerToExtraChannels,
    /// Fully connected layers whose input dimension doubled receive the
    /// source weights tiled over both input halves, unscaled. All other
    /// layers are copied unchanged.
    TileFcForDoubledInput,
    /// Destination is structurally identical; every parameter is copied.
    CloneTrunk,
}

/// Copies weights from `src` into `dst` according to `op`. Layer counts
/// and kinds must line up; the op defines which dimension changes are
/// permitted.
pub fn transplant<T: Scalar>(
    op: TransplantOp,
    src: &LayerGraph<T>,
    dst: &mut LayerGraph<T>,
) -> Result<()> {
    if src.layers().len() != dst.layers().len() {
        return Err(Error::shape(format!(
            "transplant requires equal layer counts ({} vs {})",
            src.layers().len(),
            dst.layers().len()
        )));
    }
    let src_specs: Vec<LayerSpec> = src.layers().to_vec();
    let dst_specs: Vec<LayerSpec> = dst.layers().to_vec();

    let mut first_param_seen = false;
    let mut tiled_any = false;
    for i in 0..src_specs.len() {
        let (s, d) = (src_specs[i], dst_specs[i]);
        match (s, d) {
            (
                LayerSpec::Conv3x3 {
                    in_channels: si,
                    out_channels: so,
                    ..
                },
                LayerSpec::Conv3x3 {
                    in_channels: di,
                    out_channels: do_,
                    ..
                },
            ) => {
                let widened = op == TransplantOp::CopyFirstLayerToExtraChannels
                    && !first_param_seen
                    && di == 2 * si
                    && do_ == so;
                if widened {
                    copy_conv_widened(src, dst, i, si, so);
                } else if si == di && so == do_ {
                    copy_params(src, dst, i);
                } else {
                    return Err(Error::shape(format!(
                        "conv layer {} dims incompatible for {:?}",
                        i, op
                    )));
                }
                first_param_seen = true;
            }
            (
                LayerSpec::Fc { in_dim: si, out_dim: so, .. },
                LayerSpec::Fc { in_dim: di, out_dim: do_, .. },
            ) => {
                if si == di && so == do_ {
                    copy_params(src, dst, i);
                } else if op == TransplantOp::TileFcForDoubledInput && di == 2 * si && so == do_ {
                    tile_fc(src, dst, i, si, so);
                    tiled_any = true;
                } else {
                    return Err(Error::shape(format!(
                        "fc layer {} dims incompatible for {:?}",
                        i, op
                    )));
                }
                first_param_seen = true;
            }
            _ if s.same_shape(&d) => {}
            _ => {
                return Err(Error::shape(format!(
                    "layer {} kinds differ ({:?} vs {:?})",
                    i, s, d
                )))
            }
        }
    }
    if op == TransplantOp::TileFcForDoubledInput && !tiled_any {
        return Err(Error::shape("no fully connected layer with doubled input"));
    }
    Ok(())
}

fn copy_params<T: Scalar>(src: &LayerGraph<T>, dst: &mut LayerGraph<T>, i: usize) {
    let p = src.params_at(i).expect("param layer").clone();
    *dst.params_at_mut(i).expect("param layer") = p;
}

fn copy_conv_widened<T: Scalar>(
    src: &LayerGraph<T>,
    dst: &mut LayerGraph<T>,
    i: usize,
    in_c: usize,
    out_c: usize,
) {
    let sp = src.params_at(i).expect("conv params");
    let dp = dst.params_at_mut(i).expect("conv params");
    for o in 0..out_c {
        let srow = &sp.w[o * in_c * 9..(o + 1) * in_c * 9];
        let drow = &mut dp.w[o * 2 * in_c * 9..(o + 1) * 2 * in_c * 9];
        drow[..in_c * 9].copy_from_slice(srow);
        drow[in_c * 9..].copy_from_slice(srow);
    }
    dp.b.copy_from_slice(&sp.b);
}

fn tile_fc<T: Scalar>(
    src: &LayerGraph<T>,
    dst: &mut LayerGraph<T>,
    i: usize,
    in_dim: usize,
    out_dim: usize,
) {
    let sp = src.params_at(i).expect("fc params");
    let dp = dst.params_at_mut(i).expect("fc params");
    for j in 0..out_dim {
        let srow = &sp.w[j * in_dim..(j + 1) * in_dim];
        let drow = &mut dp.w[j * 2 * in_dim..(j + 1) * 2 * in_dim];
        drow[..in_dim].copy_from_slice(srow);
        drow[in_dim..].copy_from_slice(srow);
    }
    dp.b.copy_from_slice(&sp.b);
}

/// Copies parameters for the longest shared leading run of layers, the
/// progressive-depth trick the original VGG training used: a shallow
/// trained net seeds the first layers of a deeper one, whose remaining
/// layers keep their fresh initialization. Returns how many parameter
/// layers were copied; copying none is an error.
pub fn seed_prefix<T: Scalar>(dst: &mut LayerGraph<T>, src: &LayerGraph<T>) -> Result<usize> {
    if src.input_shape() != dst.input_shape() {
        return Err(Error::shape(format!(
            "prefix seeding needs matching input shapes ({:?} vs {:?})",
            src.input_shape(),
            dst.input_shape()
        )));
    }
    let mut copied = 0;
    for i in 0..src.layers().len().min(dst.layers().len()) {
        if !src.layers()[i].same_shape(&dst.layers()[i]) {
            break;
        }
        if src.params_at(i).is_some() {
            copy_params(src, dst, i);
            copied += 1;
        }
    }
    if copied == 0 {
        return Err(Error::shape("networks share no parameterized prefix"));
    }
    Ok(copied)
}

/// Initialises a fusion network from a pretrained single-stream colour
/// network with the same profile and class count: trunks become copies of
/// the source prefix, widened layers are tiled, everything else is copied.
pub fn warm_start<T: Scalar>(dst: &mut Network<T>, src: &LayerGraph<T>) -> Result<()> {
    match dst {
        Network::Single(g) => {
            let op = pick_single_op(src, g)?;
            transplant(op, src, g)
        }
        Network::TwoStream(ts) => {
            let src_params = src.param_layer_indices();
            let trunk_params = ts.color().param_layer_indices();
            let head_params = ts.head().param_layer_indices();
            if trunk_params.len() + head_params.len() != src_params.len() {
                return Err(Error::shape(
                    "source network does not cover trunk plus head",
                ));
            }
            // Trunk prefix: straight copies into both streams.
            for (k, &ti) in trunk_params.iter().enumerate() {
                let sp = src.params_at(src_params[k]).expect("param layer");
                let expect = ts.color().layers()[ti];
                let got = src.layers()[src_params[k]];
                if !expect.same_shape(&got) {
                    return Err(Error::shape(format!(
                        "trunk layer {} differs from source ({:?} vs {:?})",
                        ti, expect, got
                    )));
                }
                *ts.color_mut().params_at_mut(ti).unwrap() = sp.clone();
                *ts.motion_mut().params_at_mut(ti).unwrap() = sp.clone();
            }
            // Head: the first layer sees doubled input and is tiled; the
            // rest are copied.
            for (k, &hi) in head_params.iter().enumerate() {
                let si = src_params[trunk_params.len() + k];
                let s = src.layers()[si];
                let d = ts.head().layers()[hi];
                match (s, d) {
                    (
                        LayerSpec::Fc { in_dim: a, out_dim: b, .. },
                        LayerSpec::Fc { in_dim: c, out_dim: e, .. },
                    ) if c == 2 * a && e == b => {
                        let sp = src.params_at(si).unwrap().clone();
                        let dp = ts.head_mut().params_at_mut(hi).unwrap();
                        for j in 0..b {
                            let srow = &sp.w[j * a..(j + 1) * a];
                            let drow = &mut dp.w[j * 2 * a..(j + 1) * 2 * a];
                            drow[..a].copy_from_slice(srow);
                            drow[a..].copy_from_slice(srow);
                        }
                        dp.b.copy_from_slice(&sp.b);
                    }
                    _ if s.same_shape(&d) => {
                        let sp = src.params_at(si).unwrap().clone();
                        *ts.head_mut().params_at_mut(hi).unwrap() = sp;
                    }
                    _ => {
                        return Err(Error::shape(format!(
                            "head layer {} incompatible with source ({:?} vs {:?})",
                            hi, d, s
                        )))
                    }
                }
            }
            Ok(())
        }
    }
}

fn pick_single_op<T: Scalar>(src: &LayerGraph<T>, dst: &LayerGraph<T>) -> Result<TransplantOp> {
    if src.layers().len() != dst.layers().len() {
        return Err(Error::shape("layer counts differ"));
    }
    let mut op = TransplantOp::CloneTrunk;
    for (s, d) in src.layers().iter().zip(dst.layers()) {
        if s.same_shape(d) {
            continue;
        }
        match (s, d) {
            (
                LayerSpec::Conv3x3 { in_channels: a, .. },
                LayerSpec::Conv3x3 { in_channels: b, .. },
            ) if *b == 2 * a => op = TransplantOp::CopyFirstLayerToExtraChannels,
            (LayerSpec::Fc { in_dim: a, .. }, LayerSpec::Fc { in_dim: b, .. })
                if *b == 2 * a =>
            {
                op = TransplantOp::TileFcForDoubledInput
            }
            _ => return Err(Error::shape("graphs are not related by a known op")),
        }
    }
    Ok(op)
}
