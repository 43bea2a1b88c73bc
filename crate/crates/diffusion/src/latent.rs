//! The multi-view latent container and the space-to-depth codec that stands
//! in for a learned perceptual compressor.

use mvd_tensor::{Elem, Tensor};

use crate::error::{DiffusionError, Result};

/// A latent video clip factored as (frame, view, channel, height, width).
///
/// The panoramic form concatenates the views of each frame along width,
/// giving (frame, channel, height, width * views); the two forms are
/// mutually reconstructible without loss.
#[derive(Debug, Clone)]
pub struct PanoramicLatent<T: Elem> {
    data: Tensor<T>,
}

impl<T: Elem> PanoramicLatent<T> {
    pub fn new(data: Tensor<T>) -> Result<Self> {
        if data.shape().len() != 5 {
            return Err(DiffusionError::Dim {
                op: "PanoramicLatent::new",
                reason: format!("expected (T, V, C, h, w), got shape {:?}", data.shape()),
            });
        }
        Ok(PanoramicLatent { data })
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn views(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[3]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[4]
    }

    pub fn data(&self) -> &Tensor<T> {
        &self.data
    }

    pub fn into_data(self) -> Tensor<T> {
        self.data
    }

    /// Width-concatenates the views: (T, V, C, h, w) -> (T, C, h, w * V),
    /// with view v occupying columns `v*w .. (v+1)*w`.
    pub fn to_panorama(&self) -> Result<Tensor<T>> {
        let (t, v, c, h, w) = (
            self.frames(),
            self.views(),
            self.channels(),
            self.height(),
            self.width(),
        );
        let out = self
            .data
            .transpose(1, 2)? // (T, C, V, h, w)
            .transpose(2, 3)? // (T, C, h, V, w)
            .reshape(&[t, c, h, v * w])?;
        Ok(out)
    }

    /// Inverse of [`to_panorama`](Self::to_panorama).
    pub fn from_panorama(panorama: &Tensor<T>, views: usize) -> Result<Self> {
        let shape = panorama.shape();
        if shape.len() != 4 {
            return Err(DiffusionError::Dim {
                op: "PanoramicLatent::from_panorama",
                reason: format!("expected (T, C, h, w*V), got shape {shape:?}"),
            });
        }
        if views == 0 || shape[3] % views != 0 {
            return Err(DiffusionError::Dim {
                op: "PanoramicLatent::from_panorama",
                reason: format!("width {} is not divisible into {views} views", shape[3]),
            });
        }
        let (t, c, h, w) = (shape[0], shape[1], shape[2], shape[3] / views);
        let data = panorama
            .reshape(&[t, c, h, views, w])?
            .transpose(2, 3)? // (T, C, V, h, w)
            .transpose(1, 2)?; // (T, V, C, h, w)
        PanoramicLatent::new(data)
    }
}

/// Space-to-depth codec: rearranges `f x f` pixel blocks into channels, with
/// an optional 1x1 channel projection on each side.
///
/// Without projections the codec is a pure index permutation, so
/// decode(encode(x)) is bit-exact. Encode and decode move data outside the
/// training graph; nothing differentiates through them.
#[derive(Debug, Clone)]
pub struct LatentCodec<T: Elem> {
    factor: usize,
    projection: Option<CodecProjection<T>>,
}

/// Channel projections applied after space-to-depth (encode) and before
/// depth-to-space (decode). Weights are (in_channels, out_channels).
#[derive(Debug, Clone)]
pub struct CodecProjection<T: Elem> {
    pub encode_weight: Tensor<T>,
    pub decode_weight: Tensor<T>,
}

impl<T: Elem> LatentCodec<T> {
    pub fn identity(factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(DiffusionError::Config("codec factor must be positive".into()));
        }
        Ok(LatentCodec {
            factor,
            projection: None,
        })
    }

    pub fn with_projection(factor: usize, projection: CodecProjection<T>) -> Result<Self> {
        if factor == 0 {
            return Err(DiffusionError::Config("codec factor must be positive".into()));
        }
        let enc = projection.encode_weight.shape();
        let dec = projection.decode_weight.shape();
        if enc.len() != 2 || dec.len() != 2 || dec[0] != enc[1] || dec[1] != enc[0] {
            return Err(DiffusionError::Config(format!(
                "projection weights must be (c_in, c_out) and (c_out, c_in), got {enc:?} and {dec:?}"
            )));
        }
        Ok(LatentCodec {
            factor,
            projection: Some(projection),
        })
    }

    pub fn factor(&self) -> usize {
        self.factor
    }

    /// Latent channel count produced for an image with `image_channels`.
    pub fn latent_channels(&self, image_channels: usize) -> usize {
        match &self.projection {
            Some(p) => p.encode_weight.shape()[1],
            None => image_channels * self.factor * self.factor,
        }
    }

    /// (C, H, W) -> (C*f*f, H/f, W/f), then the encode projection if present.
    pub fn encode(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = image.shape();
        if shape.len() != 3 {
            return Err(DiffusionError::Dim {
                op: "encode_latent",
                reason: format!("expected (C, H, W), got shape {shape:?}"),
            });
        }
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let f = self.factor;
        if h % f != 0 || w % f != 0 {
            return Err(DiffusionError::Dim {
                op: "encode_latent",
                reason: format!("spatial dims {h}x{w} not divisible by factor {f}"),
            });
        }
        let (lh, lw) = (h / f, w / f);
        let src = image.data();
        let mut out = vec![T::from_f64(0.0); c * f * f * lh * lw];
        for c0 in 0..c {
            for fy in 0..f {
                for fx in 0..f {
                    let oc = c0 * f * f + fy * f + fx;
                    for y in 0..lh {
                        for x in 0..lw {
                            out[(oc * lh + y) * lw + x] =
                                src[(c0 * h + y * f + fy) * w + x * f + fx];
                        }
                    }
                }
            }
        }
        let stacked = Tensor::from_vec(out, &[c * f * f, lh, lw])?;
        match &self.projection {
            None => Ok(stacked),
            Some(p) => project_channels(&stacked, &p.encode_weight),
        }
    }

    /// Inverse of [`encode`](Self::encode): the decode projection if
    /// present, then depth-to-space back to (C, H, W).
    pub fn decode(&self, latent: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = latent.shape();
        if shape.len() != 3 {
            return Err(DiffusionError::Dim {
                op: "decode_latent",
                reason: format!("expected (C, h, w), got shape {shape:?}"),
            });
        }
        let unprojected = match &self.projection {
            None => latent.clone(),
            Some(p) => project_channels(latent, &p.decode_weight)?,
        };
        let shape = unprojected.shape();
        let f = self.factor;
        if shape[0] % (f * f) != 0 {
            return Err(DiffusionError::Dim {
                op: "decode_latent",
                reason: format!("{} channels not divisible by factor^2 = {}", shape[0], f * f),
            });
        }
        let (c, lh, lw) = (shape[0] / (f * f), shape[1], shape[2]);
        let (h, w) = (lh * f, lw * f);
        let src = unprojected.data();
        let mut out = vec![T::from_f64(0.0); c * h * w];
        for c0 in 0..c {
            for fy in 0..f {
                for fx in 0..f {
                    let ic = c0 * f * f + fy * f + fx;
                    for y in 0..lh {
                        for x in 0..lw {
                            out[(c0 * h + y * f + fy) * w + x * f + fx] =
                                src[(ic * lh + y) * lw + x];
                        }
                    }
                }
            }
        }
        Ok(Tensor::from_vec(out, &[c, h, w])?)
    }
}

fn project_channels<T: Elem>(stack: &Tensor<T>, weight: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = (stack.shape()[0], stack.shape()[1], stack.shape()[2]);
    if weight.shape()[0] != c {
        return Err(DiffusionError::Dim {
            op: "codec projection",
            reason: format!(
                "projection expects {} input channels, latent has {c}",
                weight.shape()[0]
            ),
        });
    }
    let c_out = weight.shape()[1];
    let rows = stack.reshape(&[c, h * w])?.transpose(0, 1)?;
    let projected = rows.matmul(weight)?;
    Ok(projected.transpose(0, 1)?.reshape(&[c_out, h, w])?)
}
