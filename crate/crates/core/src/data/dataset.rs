//! Dataset directory layout: a JSON manifest naming the mesh and matrix
//! files, plus one tensor-block blob per sample.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::blockfile::{read_blockfile, write_blockfile};
use crate::data::synth::{GenParams, SyntheticSample};
use crate::error::{Error, Result};
use crate::losses::GroundTruth;
use crate::mesh::{build_adjacency, Topology, TriangleMesh};
use crate::sparse::{load_matrix, MatrixKind};
use crate::tensor::Tensor;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub kind: String,
    pub mesh: String,
    pub upsample: String,
    pub regressor: String,
    pub count: usize,
    pub seed: u64,
    pub joints: usize,
    pub coarse_vertices: usize,
    pub fine_vertices: usize,
    pub levels: usize,
    pub gen: GenParams,
}

#[derive(Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub mesh: TriangleMesh,
    pub topology: Topology,
    pub samples: Vec<SyntheticSample>,
}

fn sample_path(dir: &Path, index: usize) -> PathBuf {
    dir.join("samples").join(format!("sample_{index:06}.bin"))
}

/// Write the full dataset directory: manifest, mesh OBJ, U and R in the
/// coordinate text format, and one blob per sample.
pub fn write_dataset(
    dir: &Path,
    mesh: &TriangleMesh,
    topology: &Topology,
    samples: &[SyntheticSample],
    seed: u64,
    levels: usize,
    gen: &GenParams,
) -> Result<()> {
    std::fs::create_dir_all(dir.join("samples"))
        .map_err(|e| Error::io(dir.display().to_string(), e))?;
    mesh.save_obj(&dir.join("mesh.obj"))?;
    topology.upsample.save(&dir.join("upsample.txt"))?;
    topology.regressor.save(&dir.join("regressor.txt"))?;

    let manifest = DatasetManifest {
        kind: "dataset".into(),
        mesh: "mesh.obj".into(),
        upsample: "upsample.txt".into(),
        regressor: "regressor.txt".into(),
        count: samples.len(),
        seed,
        joints: topology.joints(),
        coarse_vertices: topology.coarse_vertices(),
        fine_vertices: topology.fine_vertices(),
        levels,
        gen: gen.clone(),
    };
    let manifest_text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Data(format!("manifest serialization failed: {e}")))?;
    std::fs::write(dir.join(MANIFEST_NAME), manifest_text)
        .map_err(|e| Error::io(dir.display().to_string(), e))?;

    for sample in samples {
        let meta = serde_json::json!({
            "index": sample.index,
            "camera_scale": sample.camera_scale,
            "camera_translation": sample.camera_translation,
            "deformation_seed": sample.deformation_seed,
        });
        let blocks = vec![
            ("image".to_string(), sample.image.clone()),
            ("vertices3d".to_string(), sample.gt.vertices3d.clone()),
            ("joints3d".to_string(), sample.gt.joints3d.clone()),
            ("joints2d".to_string(), sample.gt.joints2d.clone()),
        ];
        write_blockfile(&sample_path(dir, sample.index), "sample", &meta, &blocks)?;
    }
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST_NAME);
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("{}: {e}", manifest_path.display())))?;
    if manifest.kind != "dataset" {
        return Err(Error::Data(format!(
            "{}: kind '{}' is not 'dataset'",
            manifest_path.display(),
            manifest.kind
        )));
    }

    let mesh = TriangleMesh::load_obj(&dir.join(&manifest.mesh))?;
    let upsample = load_matrix(
        &dir.join(&manifest.upsample),
        Some((manifest.fine_vertices, manifest.coarse_vertices)),
        MatrixKind::Upsampling,
    )?;
    let regressor = load_matrix(
        &dir.join(&manifest.regressor),
        Some((manifest.joints, manifest.fine_vertices)),
        MatrixKind::General,
    )?;
    if mesh.vertex_count() != manifest.coarse_vertices {
        return Err(Error::Data(format!(
            "mesh has {} vertices, manifest says {}",
            mesh.vertex_count(),
            manifest.coarse_vertices
        )));
    }
    let topology = Topology::new(build_adjacency(&mesh), upsample, regressor)?;

    let mut samples = Vec::with_capacity(manifest.count);
    for index in 0..manifest.count {
        samples.push(load_sample(dir, index, &manifest)?);
    }
    Ok(Dataset { manifest, mesh, topology, samples })
}

fn load_sample(dir: &Path, index: usize, manifest: &DatasetManifest) -> Result<SyntheticSample> {
    let path = sample_path(dir, index);
    let file = read_blockfile(&path)?;
    if file.kind != "sample" {
        return Err(Error::Data(format!("{}: kind '{}' is not 'sample'", path.display(), file.kind)));
    }
    let take = |name: &str| -> Result<Tensor> {
        file.blocks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.clone())
            .ok_or_else(|| Error::Data(format!("{}: missing block '{name}'", path.display())))
    };
    let gt = GroundTruth {
        vertices3d: take("vertices3d")?,
        joints3d: take("joints3d")?,
        joints2d: take("joints2d")?,
    };
    gt.validate(manifest.joints, manifest.fine_vertices)?;
    let image = take("image")?;
    let [h, w] = manifest.gen.image_size;
    if image.shape() != [h, w, 1] {
        return Err(Error::Data(format!(
            "{}: image shape {:?} does not match manifest {:?}",
            path.display(),
            image.shape(),
            [h, w, 1]
        )));
    }
    let scale = file.meta["camera_scale"]
        .as_f64()
        .ok_or_else(|| Error::Data(format!("{}: missing camera_scale", path.display())))?;
    let t = &file.meta["camera_translation"];
    let translation = [
        t[0].as_f64().unwrap_or(f64::NAN),
        t[1].as_f64().unwrap_or(f64::NAN),
    ];
    if !translation.iter().all(|v| v.is_finite()) {
        return Err(Error::Data(format!("{}: bad camera_translation", path.display())));
    }
    Ok(SyntheticSample {
        index,
        image,
        gt,
        camera_scale: scale,
        camera_translation: translation,
        deformation_seed: file.meta["deformation_seed"].as_u64().unwrap_or(0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::generate_dataset;
    use crate::mesh::subdivide;

    #[test]
    fn dataset_round_trip() {
        let base = TriangleMesh::tetrahedron(30.0);
        let (coarse, _) = subdivide(&base).unwrap();
        let (topology, _) = Topology::by_subdivision(&coarse, 4, 1).unwrap();
        let gen = GenParams::default();
        let samples = generate_dataset(3, &coarse, &topology, &gen, 5).unwrap();

        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &coarse, &topology, &samples, 5, 1, &gen).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.manifest.count, 3);
        assert_eq!(back.topology, topology);
        assert_eq!(back.samples, samples);
    }

    #[test]
    fn missing_manifest_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Io { .. })));
    }
}
