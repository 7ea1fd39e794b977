//! Point clouds, transforms and the two evaluation metrics.
//!
//! Every distance here is accumulated in `f64`. The brute-force k-NN in this
//! module is the reference search used by the descriptor graph and the
//! candidate builder alike.

use std::collections::{BTreeMap, HashSet};

use nalgebra::{Matrix3, Vector3};
use ndarray::ArrayView2;

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Tolerance on `RᵀR = I` and `det R = 1`.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

/// Ordered set of 3D points with optional named per-point scalar channels.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
    attributes: BTreeMap<String, Vec<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("point cloud has no points".into()));
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::Input(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self {
            points,
            attributes: BTreeMap::new(),
        })
    }

    pub fn from_arrays(points: &[[f64; 3]]) -> Result<Self> {
        Self::new(points.iter().map(|p| Vec3::new(p[0], p[1], p[2])).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false for a constructed cloud; provided for API symmetry.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn point(&self, i: usize) -> Vec3 {
        self.points[i]
    }

    pub fn attributes(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.attributes
    }

    pub fn attribute(&self, name: &str) -> Option<&[f64]> {
        self.attributes.get(name).map(Vec::as_slice)
    }

    pub fn set_attribute(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let name = name.into();
        if values.len() != self.len() {
            return Err(Error::Dimension(format!(
                "attribute '{name}' has {} values for {} points",
                values.len(),
                self.len()
            )));
        }
        self.attributes.insert(name, values);
        Ok(())
    }

    /// New cloud holding the points at `indices` (attributes carried along).
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut out = PointCloud::new(indices.iter().map(|&i| self.points[i]).collect())?;
        for (name, values) in &self.attributes {
            out.attributes
                .insert(name.clone(), indices.iter().map(|&i| values[i]).collect());
        }
        Ok(out)
    }

    /// Cloud with new point positions but the same attributes.
    pub(crate) fn with_points(&self, points: Vec<Vec3>) -> Result<Self> {
        let mut out = PointCloud::new(points)?;
        if out.len() == self.len() {
            out.attributes = self.attributes.clone();
        }
        Ok(out)
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = self.points[0];
        let mut hi = self.points[0];
        for p in &self.points[1..] {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    /// Length of the axis-aligned bounding-box diagonal.
    pub fn diagonal(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        (hi - lo).norm()
    }

    pub fn centroid(&self) -> Vec3 {
        self.points.iter().sum::<Vec3>() / self.len() as f64
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        self.with_points(self.points.iter().map(|p| p * factor).collect())
    }

    /// Row-major `n × 3` copy of the coordinates.
    pub fn to_array(&self) -> ndarray::Array2<f64> {
        ndarray::Array2::from_shape_fn((self.len(), 3), |(i, c)| self.points[i][c])
    }
}

/// Rotation followed by translation: `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vec3,
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        Self::with_tolerance(rotation, translation, ROTATION_TOLERANCE)
    }

    /// Like [`RigidTransform::new`] with a caller-chosen orthogonality
    /// tolerance, for rotations that went through single precision.
    pub fn with_tolerance(rotation: Matrix3<f64>, translation: Vec3, tol: f64) -> Result<Self> {
        check_rotation(&rotation, tol)?;
        if !translation.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidTransform("non-finite translation".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Rotation by `angle` radians about the z axis, no translation.
    pub fn rotation_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            rotation: Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
            translation: Vec3::zeros(),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }
}

pub(crate) fn check_rotation(rotation: &Matrix3<f64>, tol: f64) -> Result<()> {
    if !rotation.iter().all(|c| c.is_finite()) {
        return Err(Error::InvalidTransform("non-finite rotation entry".into()));
    }
    let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
    if ortho > tol {
        return Err(Error::InvalidTransform(format!(
            "rotation is not orthogonal (max |RᵀR − I| = {ortho:e})"
        )));
    }
    let det = rotation.determinant();
    if (det - 1.0).abs() > tol {
        return Err(Error::InvalidTransform(format!(
            "rotation determinant is {det}, expected +1"
        )));
    }
    Ok(())
}

/// Per-point displacement vectors, index-aligned with a source cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField {
    displacements: Vec<Vec3>,
}

impl DeformationField {
    pub fn new(displacements: Vec<Vec3>) -> Result<Self> {
        if let Some(i) = displacements
            .iter()
            .position(|d| !d.iter().all(|c| c.is_finite()))
        {
            return Err(Error::Input(format!("displacement {i} is not finite")));
        }
        Ok(Self { displacements })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            displacements: vec![Vec3::zeros(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.displacements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.displacements.is_empty()
    }

    pub fn displacements(&self) -> &[Vec3] {
        &self.displacements
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.displacements.iter().map(|d| d.norm()).collect()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            displacements: self.displacements.iter().map(|d| d * factor).collect(),
        }
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            displacements: indices.iter().map(|&i| self.displacements[i]).collect(),
        }
    }
}

/// `(source index, target index)` pairs with unique source indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CorrespondenceSet {
    pairs: Vec<(usize, usize)>,
}

impl CorrespondenceSet {
    pub fn new(pairs: Vec<(usize, usize)>, n_source: usize, n_target: usize) -> Result<Self> {
        let mut seen = HashSet::with_capacity(pairs.len());
        for &(s, t) in &pairs {
            if s >= n_source || t >= n_target {
                return Err(Error::Dimension(format!(
                    "correspondence ({s}, {t}) out of range for clouds of size {n_source} and {n_target}"
                )));
            }
            if !seen.insert(s) {
                return Err(Error::Input(format!("duplicate source index {s} in correspondences")));
            }
        }
        Ok(Self { pairs })
    }

    /// `(i, i)` for every `i < n`.
    pub fn identity(n: usize) -> Self {
        Self {
            pairs: (0..n).map(|i| (i, i)).collect(),
        }
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn source_indices(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.0).collect()
    }

    pub fn target_indices(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.1).collect()
    }
}

pub fn apply_rigid(cloud: &PointCloud, xf: &RigidTransform) -> Result<PointCloud> {
    check_rotation(&xf.rotation, ROTATION_TOLERANCE)?;
    cloud.with_points(cloud.points.iter().map(|p| xf.apply_point(p)).collect())
}

pub fn apply_deformation(cloud: &PointCloud, field: &DeformationField) -> Result<PointCloud> {
    if field.len() != cloud.len() {
        return Err(Error::Dimension(format!(
            "deformation field has {} vectors for {} points",
            field.len(),
            cloud.len()
        )));
    }
    cloud.with_points(
        cloud
            .points
            .iter()
            .zip(&field.displacements)
            .map(|(p, u)| p + u)
            .collect(),
    )
}

/// Mean Euclidean distance between index-corresponding points.
pub fn mean_distance(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "mean distance needs equal cardinality, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let total: f64 = a
        .points
        .iter()
        .zip(&b.points)
        .map(|(p, q)| (p - q).norm())
        .sum();
    Ok(total / a.len() as f64)
}

/// Mean distance restricted to `(a index, b index)` pairs.
pub fn mean_distance_over(
    a: &PointCloud,
    b: &PointCloud,
    corr: &CorrespondenceSet,
) -> Result<f64> {
    if corr.is_empty() {
        return Err(Error::EmptyInput("no correspondences".into()));
    }
    let mut total = 0.0;
    for &(i, j) in corr.pairs() {
        if i >= a.len() || j >= b.len() {
            return Err(Error::Dimension(format!("correspondence ({i}, {j}) out of range")));
        }
        total += (a.points[i] - b.points[j]).norm();
    }
    Ok(total / corr.len() as f64)
}

/// Two-sided mean squared nearest-neighbour distance.
pub fn chamfer_distance(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("chamfer distance of an empty cloud".into()));
    }
    Ok(one_sided_chamfer(&a.points, &b.points) + one_sided_chamfer(&b.points, &a.points))
}

fn one_sided_chamfer(from: &[Vec3], to: &[Vec3]) -> f64 {
    let total: f64 = from
        .iter()
        .map(|p| {
            to.iter()
                .map(|q| (p - q).norm_squared())
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    total / from.len() as f64
}

/// Distance from each point of `from` to its nearest point in `to`.
pub fn nearest_distances(from: &PointCloud, to: &PointCloud) -> Vec<f64> {
    from.points
        .iter()
        .map(|p| {
            to.points
                .iter()
                .map(|q| (p - q).norm_squared())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

/// Row-major `rows × k` neighbour index table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnnTable {
    k: usize,
    indices: Vec<usize>,
}

impl KnnTable {
    pub fn from_rows(rows: Vec<Vec<usize>>) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Dimension("ragged neighbour table".into()));
        }
        Ok(Self {
            k,
            indices: rows.into_iter().flatten().collect(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn rows(&self) -> usize {
        if self.k == 0 {
            0
        } else {
            self.indices.len() / self.k
        }
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.indices[i * self.k..(i + 1) * self.k]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[usize]> {
        self.indices.chunks(self.k.max(1))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.indices
    }
}

/// Brute-force k nearest neighbours by squared Euclidean distance.
///
/// Rows are sorted by ascending distance; equal distances go to the lower
/// reference index.
pub fn knn_indices(query: &PointCloud, reference: &PointCloud, k: usize) -> Result<KnnTable> {
    knn_by(query.len(), reference.len(), k, |i, j| {
        (query.points[i] - reference.points[j]).norm_squared()
    })
}

/// Same contract as [`knn_indices`] over the rows of two feature matrices.
pub fn knn_rows(query: ArrayView2<'_, f64>, reference: ArrayView2<'_, f64>, k: usize) -> Result<KnnTable> {
    if query.ncols() != reference.ncols() {
        return Err(Error::Dimension(format!(
            "query width {} differs from reference width {}",
            query.ncols(),
            reference.ncols()
        )));
    }
    knn_by(query.nrows(), reference.nrows(), k, |i, j| {
        query
            .row(i)
            .iter()
            .zip(reference.row(j).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    })
}

/// k-NN over one cloud, excluding each point itself.
pub fn knn_graph_excluding_self(cloud: &PointCloud, k: usize) -> Result<KnnTable> {
    let n = cloud.len();
    if k >= n {
        return Err(Error::Parameter(format!(
            "graph degree {k} must be smaller than the cloud size {n}"
        )));
    }
    let full = knn_by(n, n, k + 1, |i, j| {
        if i == j {
            f64::NEG_INFINITY
        } else {
            (cloud.points[i] - cloud.points[j]).norm_squared()
        }
    })?;
    KnnTable::from_rows(full.iter_rows().map(|r| r[1..].to_vec()).collect())
}

fn knn_by(
    n_query: usize,
    n_reference: usize,
    k: usize,
    dist: impl Fn(usize, usize) -> f64,
) -> Result<KnnTable> {
    if k == 0 {
        return Err(Error::Parameter("k must be positive".into()));
    }
    if k > n_reference {
        return Err(Error::Parameter(format!(
            "k = {k} exceeds reference size {n_reference}"
        )));
    }
    let mut indices = Vec::with_capacity(n_query * k);
    let mut scratch: Vec<(f64, usize)> = Vec::with_capacity(n_reference);
    let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    for i in 0..n_query {
        scratch.clear();
        scratch.extend((0..n_reference).map(|j| (dist(i, j), j)));
        if k < n_reference {
            scratch.select_nth_unstable_by(k - 1, order);
            scratch.truncate(k);
        }
        scratch.sort_unstable_by(order);
        indices.extend(scratch.iter().map(|e| e.1));
    }
    Ok(KnnTable { k, indices })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(points: &[[f64; 3]]) -> PointCloud {
        PointCloud::from_arrays(points).unwrap()
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
                .collect(),
        )
        .unwrap()
    }

    fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        let m = Matrix3::from_fn(|_, _| rng.random::<f64>() - 0.5);
        let mut q = m.qr().q();
        if q.determinant() < 0.0 {
            q.column_mut(0).neg_mut();
        }
        q
    }

    #[test]
    fn empty_and_non_finite_clouds_rejected() {
        assert!(matches!(PointCloud::new(vec![]), Err(Error::EmptyInput(_))));
        assert!(PointCloud::from_arrays(&[[0.0, f64::NAN, 0.0]]).is_err());
    }

    #[test]
    fn attribute_length_is_checked() {
        let mut c = cloud(&[[0.0; 3], [1.0; 3]]);
        assert!(c.set_attribute("error", vec![1.0]).is_err());
        c.set_attribute("error", vec![1.0, 2.0]).unwrap();
        assert_eq!(c.attribute("error"), Some(&[1.0, 2.0][..]));
    }

    #[test]
    fn rigid_identity_and_translation() {
        let c = cloud(&[[0.3, -1.0, 2.0], [4.0, 5.0, 6.0]]);
        assert_eq!(apply_rigid(&c, &RigidTransform::identity()).unwrap(), c);

        let xf = RigidTransform::new(Matrix3::identity(), Vec3::new(1.0, 0.0, 0.0)).unwrap();
        let moved = apply_rigid(&cloud(&[[0.0; 3]]), &xf).unwrap();
        assert_eq!(moved.point(0), Vec3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn rigid_matches_per_point_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let c = random_cloud(&mut rng, 50);
        let r = random_rotation(&mut rng);
        let t = Vec3::new(0.5, -2.0, 3.0);
        let out = apply_rigid(&c, &RigidTransform::new(r, t).unwrap()).unwrap();
        for (p, q) in c.points().iter().zip(out.points()) {
            for row in 0..3 {
                let expected = r[(row, 0)] * p[0] + r[(row, 1)] * p[1] + r[(row, 2)] * p[2] + t[row];
                assert!((q[row] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn non_orthogonal_rotation_rejected() {
        let m = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(
            RigidTransform::new(m, Vec3::zeros()),
            Err(Error::InvalidTransform(_))
        ));
        let reflection = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(RigidTransform::new(reflection, Vec3::zeros()).is_err());
    }

    #[test]
    fn rigid_keeps_attributes() {
        let mut c = cloud(&[[0.0; 3], [1.0; 3]]);
        c.set_attribute("w", vec![3.0, 4.0]).unwrap();
        let out = apply_rigid(&c, &RigidTransform::rotation_z(0.3)).unwrap();
        assert_eq!(out.attribute("w"), Some(&[3.0, 4.0][..]));
    }

    #[test]
    fn deformation_cases() {
        let c = cloud(&[[0.0; 3], [1.0, 2.0, 3.0]]);
        assert_eq!(apply_deformation(&c, &DeformationField::zeros(2)).unwrap(), c);

        let up = DeformationField::new(vec![Vec3::new(0.0, 0.0, 1.0); 2]).unwrap();
        let out = apply_deformation(&c, &up).unwrap();
        assert_eq!(out.point(0), Vec3::new(0.0, 0.0, 1.0));
        assert_eq!(out.point(1), Vec3::new(1.0, 2.0, 4.0));

        assert!(matches!(
            apply_deformation(&c, &DeformationField::zeros(3)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn deformation_matches_elementwise_add() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = random_cloud(&mut rng, 40);
        let field = DeformationField::new(
            (0..40)
                .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
                .collect(),
        )
        .unwrap();
        let out = apply_deformation(&c, &field).unwrap();
        for i in 0..40 {
            for a in 0..3 {
                assert_eq!(out.point(i)[a], c.point(i)[a] + field.displacements()[i][a]);
            }
        }
    }

    #[test]
    fn mean_distance_examples() {
        let a = cloud(&[[0.0; 3]]);
        assert_eq!(mean_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(mean_distance(&a, &cloud(&[[3.0, 4.0, 0.0]])).unwrap(), 5.0);
        let a = cloud(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let b = cloud(&[[0.0, 0.0, 1.0], [1.0, 1.0, 0.0]]);
        assert_eq!(mean_distance(&a, &b).unwrap(), 1.0);
        assert!(matches!(
            mean_distance(&a, &cloud(&[[0.0; 3]])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn chamfer_examples() {
        let a = cloud(&[[0.0; 3]]);
        assert_eq!(chamfer_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(chamfer_distance(&a, &cloud(&[[1.0, 0.0, 0.0]])).unwrap(), 2.0);
        let a = cloud(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]);
        let b = cloud(&[[1.0, 0.0, 0.0]]);
        assert_eq!(chamfer_distance(&a, &b).unwrap(), 2.0);
    }

    #[test]
    fn knn_examples() {
        let q = cloud(&[[0.0; 3]]);
        let r = cloud(&[[5.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        assert_eq!(knn_indices(&q, &r, 2).unwrap().row(0), &[1, 2]);
        assert!(matches!(knn_indices(&q, &r, 4), Err(Error::Parameter(_))));

        let self_nn = knn_indices(&r, &r, 1).unwrap();
        assert_eq!(self_nn.as_slice(), &[0, 1, 2]);
    }

    #[test]
    fn knn_ties_prefer_lower_index() {
        let q = cloud(&[[0.0; 3]]);
        let r = cloud(&[[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.5, 0.0, 0.0]]);
        assert_eq!(knn_indices(&q, &r, 3).unwrap().row(0), &[3, 0, 1]);
    }

    #[test]
    fn knn_matches_full_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let c = random_cloud(&mut rng, 100);
        let table = knn_indices(&c, &c, 8).unwrap();
        for i in 0..100 {
            let mut all: Vec<(f64, usize)> = (0..100)
                .map(|j| {
                    let d = c.point(i) - c.point(j);
                    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2], j)
                })
                .collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let expected: Vec<usize> = all[..8].iter().map(|e| e.1).collect();
            assert_eq!(table.row(i), &expected[..]);
        }
    }

    #[test]
    fn graph_excludes_self() {
        let c = cloud(&[[0.0; 3], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        let g = knn_graph_excluding_self(&c, 1).unwrap();
        assert_eq!(g.as_slice(), &[1, 0, 1]);
        assert!(knn_graph_excluding_self(&c, 3).is_err());
    }

    #[test]
    fn knn_rows_agrees_with_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_cloud(&mut rng, 30);
        let b = random_cloud(&mut rng, 20);
        let by_points = knn_indices(&a, &b, 5).unwrap();
        let by_rows = knn_rows(a.to_array().view(), b.to_array().view(), 5).unwrap();
        assert_eq!(by_points, by_rows);
    }
}
