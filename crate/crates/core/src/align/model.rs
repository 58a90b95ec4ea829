use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::{contrastive_pair_loss, Reduction, MAX_LOGIT_SCALE};
use crate::error::{Error, Result};
use crate::geodesy::GeoPoint;
use crate::gps::{GpsEncoder, GpsEncoderConfig, RffMatrix};
use crate::nn::{
    layer_slices, layer_slices_mut, DenseLayer, Matrix, Mlp, MlpGrads, MlpSpec, Real, Tensor,
    TensorArchive,
};

/// Widths of the three projection heads and the GPS encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelDims {
    pub image_dim: usize,
    pub text_dim: usize,
    pub head_hidden_dim: usize,
    /// Output width of the image→text and text heads.
    pub text_space_dim: usize,
    pub gps: GpsEncoderConfig,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            image_dim: 768,
            text_dim: 768,
            head_hidden_dim: 768,
            text_space_dim: 768,
            gps: GpsEncoderConfig::default(),
        }
    }
}

impl ModelDims {
    pub fn gps_space_dim(&self) -> usize {
        self.gps.output_dim
    }

    /// Width of a database vector: raw image + text-aligned + gps-aligned.
    pub fn database_dim(&self) -> usize {
        self.image_dim + self.text_space_dim + self.gps_space_dim()
    }

    fn image_to_text_spec(&self) -> Result<MlpSpec> {
        MlpSpec::new(&[self.image_dim, self.head_hidden_dim, self.text_space_dim])
    }

    fn image_to_gps_spec(&self) -> Result<MlpSpec> {
        MlpSpec::new(&[self.image_dim, self.head_hidden_dim, self.gps_space_dim()])
    }

    fn text_spec(&self) -> Result<MlpSpec> {
        MlpSpec::new(&[self.text_dim, self.head_hidden_dim, self.text_space_dim])
    }
}

/// Frozen image and text encoder outputs with their coordinates.
#[derive(Debug, Clone)]
pub struct TriModalBatch<T> {
    pub image: Matrix<T>,
    pub text: Matrix<T>,
    pub points: Vec<GeoPoint>,
}

impl<T: Real> TriModalBatch<T> {
    pub fn new(image: Matrix<T>, text: Matrix<T>, points: Vec<GeoPoint>) -> Result<Self> {
        if image.rows() != text.rows() || image.rows() != points.len() {
            return Err(Error::usage(format!(
                "batch rows disagree: {} images, {} texts, {} points",
                image.rows(),
                text.rows(),
                points.len()
            )));
        }
        if !image.is_finite() || !text.is_finite() {
            return Err(Error::usage("batch contains non-finite embeddings"));
        }
        Ok(Self { image, text, points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            image: self.image.select_rows(idx),
            text: self.text.select_rows(idx),
            points: idx.iter().map(|&i| self.points[i]).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> TriModalBatch<U> {
        TriModalBatch { image: self.image.cast(), text: self.text.cast(), points: self.points.clone() }
    }
}

/// All trainable state of the alignment stage.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentModel<T> {
    dims: ModelDims,
    seed: u64,
    /// Image embedding → text space.
    pub image_to_text: Mlp<T>,
    /// Image embedding → GPS space.
    pub image_to_gps: Mlp<T>,
    /// Text embedding → text space.
    pub text_head: Mlp<T>,
    pub gps_encoder: GpsEncoder<T>,
    pub t_image_text: T,
    pub t_image_gps: T,
}

/// Gradients shaped like the trainable part of [`AlignmentModel`].
#[derive(Debug, Clone)]
pub struct AlignmentGrads<T> {
    pub image_to_text: MlpGrads<T>,
    pub image_to_gps: MlpGrads<T>,
    pub text_head: MlpGrads<T>,
    pub gps_branches: Vec<MlpGrads<T>>,
    pub t_image_text: T,
    pub t_image_gps: T,
}

impl<T: Real> AlignmentGrads<T> {
    /// Weight tensors in the same order as [`AlignmentModel::weights_mut`].
    pub fn weights(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        out.extend(layer_slices(&self.image_to_text));
        out.extend(layer_slices(&self.image_to_gps));
        out.extend(layer_slices(&self.text_head));
        for b in &self.gps_branches {
            out.extend(layer_slices(b));
        }
        out
    }

    pub fn temperatures(&self) -> [T; 2] {
        [self.t_image_text, self.t_image_gps]
    }
}

/// The four directional losses and their combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown<T> {
    pub image_text: T,
    pub image_gps: T,
    pub text_image: T,
    pub gps_image: T,
    pub total: T,
}

impl<T: Real> AlignmentModel<T> {
    pub fn init(dims: ModelDims, t_init: f64, seed: u64, rng: &mut impl Rng) -> Result<Self> {
        if !t_init.is_finite() {
            return Err(Error::usage("initial temperature must be finite"));
        }
        let image_to_text = Mlp::init(dims.image_to_text_spec()?, rng);
        let image_to_gps = Mlp::init(dims.image_to_gps_spec()?, rng);
        let text_head = Mlp::init(dims.text_spec()?, rng);
        let gps_encoder = GpsEncoder::new(dims.gps.clone(), seed, rng)?;
        Ok(Self {
            dims,
            seed,
            image_to_text,
            image_to_gps,
            text_head,
            gps_encoder,
            t_image_text: T::lit(t_init),
            t_image_gps: T::lit(t_init),
        })
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn cast<U: Real>(&self) -> AlignmentModel<U> {
        AlignmentModel {
            dims: self.dims.clone(),
            seed: self.seed,
            image_to_text: self.image_to_text.cast(),
            image_to_gps: self.image_to_gps.cast(),
            text_head: self.text_head.cast(),
            gps_encoder: self.gps_encoder.cast(),
            t_image_text: U::from(self.t_image_text).unwrap(),
            t_image_gps: U::from(self.t_image_gps).unwrap(),
        }
    }

    /// Trainable weight tensors in a fixed order. RFF matrices are excluded.
    pub fn weights_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        out.extend(layer_slices_mut(self.image_to_text.layers_mut()));
        out.extend(layer_slices_mut(self.image_to_gps.layers_mut()));
        out.extend(layer_slices_mut(self.text_head.layers_mut()));
        for b in self.gps_encoder.branches_mut() {
            out.extend(layer_slices_mut(b.layers_mut()));
        }
        out
    }

    pub fn temperatures_mut(&mut self) -> [&mut T; 2] {
        [&mut self.t_image_text, &mut self.t_image_gps]
    }

    /// Every trainable scalar, weights first, then the two temperatures.
    pub fn trainable_mut(&mut self) -> Vec<&mut [T]> {
        let Self { image_to_text, image_to_gps, text_head, gps_encoder, t_image_text, t_image_gps, .. } =
            self;
        let mut out: Vec<&mut [T]> = Vec::new();
        out.extend(layer_slices_mut(image_to_text.layers_mut()));
        out.extend(layer_slices_mut(image_to_gps.layers_mut()));
        out.extend(layer_slices_mut(text_head.layers_mut()));
        for b in gps_encoder.branches_mut() {
            out.extend(layer_slices_mut(b.layers_mut()));
        }
        out.push(std::slice::from_mut(t_image_text));
        out.push(std::slice::from_mut(t_image_gps));
        out
    }

    /// Caps both temperatures so `exp(t)` never exceeds the logit scale limit.
    pub fn clamp_temperatures(&mut self) {
        let cap = T::lit(MAX_LOGIT_SCALE.ln());
        for t in self.temperatures_mut() {
            if *t > cap {
                *t = cap;
            }
        }
    }

    fn check_batch(&self, batch: &TriModalBatch<T>) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::usage("empty batch"));
        }
        if batch.image.cols() != self.dims.image_dim || batch.text.cols() != self.dims.text_dim {
            return Err(Error::usage(format!(
                "batch widths ({}, {}) do not match model ({}, {})",
                batch.image.cols(),
                batch.text.cols(),
                self.dims.image_dim,
                self.dims.text_dim
            )));
        }
        Ok(())
    }

    /// `(L_img,text + L_img,gps + L_text,img + L_gps,img) / 2` and its exact gradients.
    pub fn loss_and_grads(
        &self,
        batch: &TriModalBatch<T>,
        reduction: Reduction,
    ) -> Result<(LossBreakdown<T>, AlignmentGrads<T>)> {
        self.check_batch(batch)?;
        let (img_text, c_it) = self.image_to_text.forward(&batch.image)?;
        let (img_gps, c_ig) = self.image_to_gps.forward(&batch.image)?;
        let (text, c_t) = self.text_head.forward(&batch.text)?;
        let (gps, c_g) = self.gps_encoder.forward(&batch.points)?;

        let it = contrastive_pair_loss(&img_text, &text, self.t_image_text, reduction)?;
        let ti = contrastive_pair_loss(&text, &img_text, self.t_image_text, reduction)?;
        let ig = contrastive_pair_loss(&img_gps, &gps, self.t_image_gps, reduction)?;
        let gi = contrastive_pair_loss(&gps, &img_gps, self.t_image_gps, reduction)?;

        let half = T::lit(0.5);
        let combine = |mut x: Matrix<T>, y: &Matrix<T>| -> Result<Matrix<T>> {
            x.add_assign(y)?;
            x.scale(half);
            Ok(x)
        };
        let d_img_text = combine(it.grad_a, &ti.grad_b)?;
        let d_text = combine(ti.grad_a, &it.grad_b)?;
        let d_img_gps = combine(ig.grad_a, &gi.grad_b)?;
        let d_gps = combine(gi.grad_a, &ig.grad_b)?;

        let grads = AlignmentGrads {
            image_to_text: self.image_to_text.backward(&c_it, &d_img_text)?.0,
            image_to_gps: self.image_to_gps.backward(&c_ig, &d_img_gps)?.0,
            text_head: self.text_head.backward(&c_t, &d_text)?.0,
            gps_branches: self.gps_encoder.backward(&c_g, &d_gps)?,
            t_image_text: (it.grad_t + ti.grad_t) * half,
            t_image_gps: (ig.grad_t + gi.grad_t) * half,
        };
        let breakdown = LossBreakdown {
            image_text: it.loss,
            image_gps: ig.loss,
            text_image: ti.loss,
            gps_image: gi.loss,
            total: (it.loss + ig.loss + ti.loss + gi.loss) * half,
        };
        Ok((breakdown, grads))
    }

    pub fn loss(&self, batch: &TriModalBatch<T>, reduction: Reduction) -> Result<LossBreakdown<T>> {
        self.check_batch(batch)?;
        let img_text = self.image_to_text.infer(&batch.image)?;
        let img_gps = self.image_to_gps.infer(&batch.image)?;
        let text = self.text_head.infer(&batch.text)?;
        let gps = self.gps_encoder.infer(&batch.points)?;
        let it = contrastive_pair_loss(&img_text, &text, self.t_image_text, reduction)?.loss;
        let ti = contrastive_pair_loss(&text, &img_text, self.t_image_text, reduction)?.loss;
        let ig = contrastive_pair_loss(&img_gps, &gps, self.t_image_gps, reduction)?.loss;
        let gi = contrastive_pair_loss(&gps, &img_gps, self.t_image_gps, reduction)?.loss;
        Ok(LossBreakdown {
            image_text: it,
            image_gps: ig,
            text_image: ti,
            gps_image: gi,
            total: (it + ig + ti + gi) * T::lit(0.5),
        })
    }
}

/// Sum-reduced total objective.
pub fn total_loss<T: Real>(batch: &TriModalBatch<T>, model: &AlignmentModel<T>) -> Result<T> {
    Ok(model.loss(batch, Reduction::Sum)?.total)
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    kind: String,
    dims: ModelDims,
    seed: u64,
    sigmas: Vec<f64>,
    rff_seeds: Vec<u64>,
}

const CHECKPOINT_KIND: &str = "g3-alignment-model";

fn push_mlp(archive: &mut TensorArchive, prefix: &str, mlp: &Mlp<f32>) {
    for (i, layer) in mlp.layers().iter().enumerate() {
        let (o, n) = layer.weight.shape();
        archive.push(
            Tensor::new(format!("{prefix}.{i}.weight"), vec![o, n], layer.weight.as_slice().to_vec())
                .unwrap(),
        );
        archive.push(Tensor::new(format!("{prefix}.{i}.bias"), vec![o], layer.bias.clone()).unwrap());
    }
}

fn read_mlp(archive: &TensorArchive, prefix: &str, spec: MlpSpec) -> Result<Mlp<f32>> {
    let mut layers = Vec::new();
    for (i, w) in spec.layer_dims.windows(2).enumerate() {
        let weight = archive.get(&format!("{prefix}.{i}.weight"))?;
        let bias = archive.get(&format!("{prefix}.{i}.bias"))?;
        if weight.dims != [w[1], w[0]] || bias.dims != [w[1]] {
            return Err(Error::format(format!("{prefix}.{i}: tensor shape mismatch")));
        }
        layers.push(DenseLayer {
            weight: Matrix::from_vec(w[1], w[0], weight.data.clone())?,
            bias: bias.data.clone(),
        });
    }
    Mlp::from_layers(spec, layers).map_err(|e| Error::format(e.to_string()))
}

fn read_scalar(archive: &TensorArchive, name: &str) -> Result<f32> {
    let t = archive.get(name)?;
    match t.data.as_slice() {
        [v] if v.is_finite() => Ok(*v),
        _ => Err(Error::format(format!("{name} must be one finite value"))),
    }
}

impl AlignmentModel<f32> {
    pub fn to_archive(&self) -> Result<TensorArchive> {
        let header = CheckpointHeader {
            kind: CHECKPOINT_KIND.into(),
            dims: self.dims.clone(),
            seed: self.seed,
            sigmas: self.gps_encoder.rff().iter().map(|m| m.sigma).collect(),
            rff_seeds: self.gps_encoder.rff().iter().map(|m| m.seed).collect(),
        };
        let mut archive = TensorArchive {
            header: serde_json::to_string(&header).map_err(|e| Error::format(e.to_string()))?,
            tensors: Vec::new(),
        };
        push_mlp(&mut archive, "image_to_text", &self.image_to_text);
        push_mlp(&mut archive, "image_to_gps", &self.image_to_gps);
        push_mlp(&mut archive, "text_head", &self.text_head);
        for (k, (branch, rff)) in
            self.gps_encoder.branches().iter().zip(self.gps_encoder.rff()).enumerate()
        {
            push_mlp(&mut archive, &format!("gps.branch{k}"), branch);
            let e = rff.entries();
            archive.push(Tensor::new(
                format!("gps.rff{k}.frozen"),
                vec![e.rows(), e.cols()],
                e.as_slice().to_vec(),
            )?);
        }
        archive.push(Tensor::new("t_image_text", vec![], vec![self.t_image_text])?);
        archive.push(Tensor::new("t_image_gps", vec![], vec![self.t_image_gps])?);
        Ok(archive)
    }

    pub fn from_archive(archive: &TensorArchive) -> Result<Self> {
        let header: CheckpointHeader = serde_json::from_str(&archive.header)
            .map_err(|e| Error::format(format!("checkpoint header: {e}")))?;
        if header.kind != CHECKPOINT_KIND {
            return Err(Error::format(format!("not an alignment checkpoint: {}", header.kind)));
        }
        let dims = header.dims;
        let n = dims.gps.hierarchy.n_hierarchies;
        if header.sigmas.len() != n || header.rff_seeds.len() != n || n == 0 {
            return Err(Error::format("hierarchy metadata is inconsistent"));
        }
        let spec = |r: Result<MlpSpec>| r.map_err(|e| Error::format(e.to_string()));
        let image_to_text = read_mlp(archive, "image_to_text", spec(dims.image_to_text_spec())?)?;
        let image_to_gps = read_mlp(archive, "image_to_gps", spec(dims.image_to_gps_spec())?)?;
        let text_head = read_mlp(archive, "text_head", spec(dims.text_spec())?)?;
        let branch_spec = spec(dims.gps.branch_spec())?;
        let mut branches = Vec::with_capacity(n);
        let mut rff = Vec::with_capacity(n);
        for k in 0..n {
            branches.push(read_mlp(archive, &format!("gps.branch{k}"), branch_spec.clone())?);
            let t = archive.get(&format!("gps.rff{k}.frozen"))?;
            if t.dims != [dims.gps.rff_rows, 2] {
                return Err(Error::format(format!("gps.rff{k}: tensor shape mismatch")));
            }
            rff.push(RffMatrix::from_entries(
                header.sigmas[k],
                header.rff_seeds[k],
                Matrix::from_vec(t.dims[0], 2, t.data.clone())?,
            )?);
        }
        let gps_encoder = GpsEncoder::from_parts(dims.gps.clone(), rff, branches)
            .map_err(|e| Error::format(e.to_string()))?;
        Ok(Self {
            dims,
            seed: header.seed,
            image_to_text,
            image_to_gps,
            text_head,
            gps_encoder,
            t_image_text: read_scalar(archive, "t_image_text")?,
            t_image_gps: read_scalar(archive, "t_image_gps")?,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.to_archive()?.save(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_archive(&TensorArchive::load(path)?)
    }
}
