//! Structural edits on trained networks: widening a conv layer and physically
//! removing filters. Both return a new network; the input is untouched.
//!
//! Removing output channel `c` of a conv layer also removes input channel `c`
//! of the next weight-bearing layer. For a conv consumer that is the
//! `[.., c, .., ..]` kernel slice. For a dense layer behind `flatten` it is the
//! contiguous block of `H*W` input columns that channel `c` occupies in the
//! flattened `[C, H, W]` activation.

use super::network::{fan_in, he_tensor};
use super::{LayerParams, LayerSpec, NetError, Network};
use crate::seeding;
use crate::tensorcore::Tensor;

/// Conv position, consumer position, and consumer columns per channel.
fn locate(net: &Network, conv_index: usize) -> Result<(usize, usize, usize), NetError> {
    let positions = net.spec().conv_positions();
    let pos = *positions.get(conv_index).ok_or(NetError::NotAConvLayer {
        index: conv_index,
        convs: positions.len(),
    })?;
    let consumer = net.consumer_of(pos).ok_or(NetError::NoConsumer(conv_index))?;
    let channels = net.census()[conv_index];
    let cw = &net.layer_params()[consumer].as_ref().expect("consumer has params").weight;
    let block = if net.is_conv(consumer) {
        cw.shape()[2] * cw.shape()[3]
    } else {
        cw.shape()[1] / channels
    };
    Ok((pos, consumer, block))
}

fn set_out_channels(net: &Network, pos: usize, count: usize) -> super::NetworkSpec {
    let mut spec = net.spec().clone();
    if let LayerSpec::Conv { out_channels, .. } = &mut spec.layers[pos] {
        *out_channels = count;
    }
    spec
}

/// Rebuilds a consumer weight `[rows, channels * block]` channel by channel:
/// `source(c)` gives the old channel to copy, or `None` to draw fresh values.
fn remap_consumer(
    weight: &Tensor,
    block: usize,
    new_channels: usize,
    source: impl Fn(usize) -> Option<usize>,
    fresh: &Tensor,
) -> Tensor {
    let rows = weight.shape()[0];
    let old_row = weight.len() / rows;
    let new_row = new_channels * block;
    let mut data = Vec::with_capacity(rows * new_row);
    for r in 0..rows {
        let row = &weight.data()[r * old_row..(r + 1) * old_row];
        for c in 0..new_channels {
            match source(c) {
                Some(old) => data.extend_from_slice(&row[old * block..(old + 1) * block]),
                None => {
                    let start = r * new_row + c * block;
                    data.extend_from_slice(&fresh.data()[start..start + block]);
                }
            }
        }
    }
    let mut shape = weight.shape().to_vec();
    if shape.len() == 4 {
        shape[1] = new_channels;
    } else {
        shape[1] = new_row;
    }
    Tensor::from_vec(&shape, data).expect("consumer shape")
}

/// Multiplies the filter count of one conv layer by `factor`. New filters
/// and the matching new input slices of the consumer are freshly initialized;
/// all existing weights are kept.
pub fn widen_layer(net: &Network, conv_index: usize, factor: usize, init_seed: u64) -> Result<Network, NetError> {
    if factor < 2 {
        return Err(NetError::InvalidFactor(factor));
    }
    let (pos, consumer, block) = locate(net, conv_index)?;
    let old = net.census()[conv_index];
    let new = old * factor;
    let spec = set_out_channels(net, pos, new);
    let mut params = net.layer_params().to_vec();

    let conv = params[pos].as_ref().expect("conv params");
    let mut w_shape = conv.weight.shape().to_vec();
    w_shape[0] = new;
    let fresh_w = he_tensor(&w_shape, fan_in(&w_shape), seeding::derive(init_seed, 2 * pos as u64));
    let per_filter = conv.weight.len() / old;
    let mut w = conv.weight.data().to_vec();
    w.extend_from_slice(&fresh_w.data()[old * per_filter..]);
    let mut bias = conv.bias.data().to_vec();
    bias.resize(new, 0.0);
    params[pos] = Some(LayerParams {
        weight: Tensor::from_vec(&w_shape, w)?,
        bias: Tensor::from_vec(&[new], bias)?,
    });

    let cons = params[consumer].as_ref().expect("consumer params");
    let rows = cons.weight.shape()[0];
    let mut fresh_shape = vec![rows, new * block];
    if cons.weight.shape().len() == 4 {
        fresh_shape = vec![rows, new, cons.weight.shape()[2], cons.weight.shape()[3]];
    }
    let fresh_c = he_tensor(
        &fresh_shape,
        fan_in(&fresh_shape),
        seeding::derive(init_seed, 2 * consumer as u64 + 1),
    );
    let weight = remap_consumer(&cons.weight, block, new, |c| (c < old).then_some(c), &fresh_c);
    params[consumer] = Some(LayerParams {
        weight,
        bias: cons.bias.clone(),
    });
    Network::from_parts(spec, params)
}

/// Physically removes the given filters (sorted, unique) from one conv layer
/// along with the consumer's matching input slices. Surviving weights are
/// copied bit-for-bit and keep their relative order.
pub fn remove_filters(net: &Network, conv_index: usize, filter_ids: &[usize]) -> Result<Network, NetError> {
    let (pos, consumer, block) = locate(net, conv_index)?;
    let count = net.census()[conv_index];
    if filter_ids.windows(2).any(|w| w[0] >= w[1]) {
        return Err(NetError::InvalidFilterIds("ids must be sorted and unique".into()));
    }
    if let Some(&bad) = filter_ids.iter().find(|&&f| f >= count) {
        return Err(NetError::InvalidFilterIds(format!(
            "filter {bad} out of range for a layer of {count}"
        )));
    }
    if filter_ids.len() >= count {
        return Err(NetError::WouldEmptyLayer {
            conv_index,
            filters: count,
        });
    }
    let keep: Vec<usize> = (0..count).filter(|f| filter_ids.binary_search(f).is_err()).collect();
    let spec = set_out_channels(net, pos, keep.len());
    let mut params = net.layer_params().to_vec();

    let conv = params[pos].as_ref().expect("conv params");
    let per_filter = conv.weight.len() / count;
    let mut w = Vec::with_capacity(keep.len() * per_filter);
    for &f in &keep {
        w.extend_from_slice(&conv.weight.data()[f * per_filter..(f + 1) * per_filter]);
    }
    let mut w_shape = conv.weight.shape().to_vec();
    w_shape[0] = keep.len();
    let bias: Vec<f64> = keep.iter().map(|&f| conv.bias.data()[f]).collect();
    params[pos] = Some(LayerParams {
        weight: Tensor::from_vec(&w_shape, w)?,
        bias: Tensor::from_vec(&[keep.len()], bias)?,
    });

    let cons = params[consumer].as_ref().expect("consumer params");
    let unused = Tensor::zeros(&[0]);
    let weight = remap_consumer(&cons.weight, block, keep.len(), |c| Some(keep[c]), &unused);
    params[consumer] = Some(LayerParams {
        weight,
        bias: cons.bias.clone(),
    });
    Network::from_parts(spec, params)
}

/// Zeroes every consumer weight that reads from `filter` of a conv layer.
pub fn zero_outgoing(net: &mut Network, conv_index: usize, filter: usize) -> Result<(), NetError> {
    let (_, consumer, block) = locate(net, conv_index)?;
    let w = &mut net.layer_params_mut()[consumer].as_mut().expect("consumer params").weight;
    let rows = w.shape()[0];
    let row_len = w.len() / rows;
    for r in 0..rows {
        let start = r * row_len + filter * block;
        w.data_mut()[start..start + block].fill(0.0);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netzoo::NetworkSpec;

    fn net() -> Network {
        Network::build(NetworkSpec::mini_cnn_a(), 21).unwrap()
    }

    #[test]
    fn widen_quadruples_and_enlarges_consumer() {
        let wide = widen_layer(&net(), 2, 4, 5).unwrap();
        assert_eq!(wide.census(), vec![16, 32, 256, 32]);
        assert_eq!(wide.conv_params(3).unwrap().weight.shape(), &[32, 256, 1, 1]);
        // Existing filters survive untouched.
        let old = net();
        let n = old.conv_params(2).unwrap().weight.len();
        assert_eq!(
            &wide.conv_params(2).unwrap().weight.data()[..n],
            old.conv_params(2).unwrap().weight.data()
        );
    }

    #[test]
    fn widen_rejects_bad_requests() {
        assert!(matches!(widen_layer(&net(), 2, 1, 0), Err(NetError::InvalidFactor(1))));
        assert!(matches!(widen_layer(&net(), 9, 2, 0), Err(NetError::NotAConvLayer { .. })));
    }

    #[test]
    fn widen_last_conv_grows_dense_blocks() {
        let wide = widen_layer(&net(), 3, 2, 5).unwrap();
        // 64 channels after global pooling -> 64 dense inputs.
        let dense_pos = wide.consumer_of(wide.spec().conv_positions()[3]).unwrap();
        assert_eq!(wide.layer_params()[dense_pos].as_ref().unwrap().weight.shape(), &[16, 64]);
    }

    #[test]
    fn remove_updates_shapes_and_count() {
        let before = net();
        let after = remove_filters(&before, 1, &[0, 5, 31]).unwrap();
        assert_eq!(after.census(), vec![16, 29, 64, 32]);
        // conv1 loses 3 * (16*9 + 1); conv2 loses 3 input channels of 64 rows.
        let dropped = 3 * (16 * 9 + 1) + 3 * 64;
        assert_eq!(before.param_count() - after.param_count(), dropped);
    }

    #[test]
    fn remove_keeps_surviving_order() {
        let before = net();
        let after = remove_filters(&before, 0, &[0, 15]).unwrap();
        let per = 3 * 9;
        let old = before.conv_params(0).unwrap().weight.data();
        let new = after.conv_params(0).unwrap().weight.data();
        assert_eq!(new, &old[per..15 * per]);
    }

    #[test]
    fn remove_rejects_bad_ids() {
        let n = net();
        assert!(remove_filters(&n, 0, &[16]).is_err());
        assert!(remove_filters(&n, 0, &[3, 1]).is_err());
        assert!(remove_filters(&n, 0, &[1, 1]).is_err());
        let all: Vec<usize> = (0..16).collect();
        assert!(matches!(remove_filters(&n, 0, &all), Err(NetError::WouldEmptyLayer { .. })));
    }
}
