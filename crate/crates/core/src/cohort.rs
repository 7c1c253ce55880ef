//! Twin cohort representation, canonicalization, loading, and validation.
//!
//! A cohort couples a phenotype matrix (individuals x vertices), a design
//! matrix of fixed-effect covariates, a family structure (monozygotic pairs,
//! dizygotic pairs, singletons), and the spatial domain the phenotype is
//! measured on. Loading canonicalizes row order: monozygotic pairs first,
//! then dizygotic pairs, then singletons, with families sorted by identifier
//! within each block, so downstream code can rely on a fixed block layout
//! regardless of input file order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Axis};

use crate::domain::{load_vertices, save_vertices, VertexSet};
use crate::error::{Diagnostic, Error, Result, Severity};
use crate::mat1;

/// Family kind after canonicalization. Sibling rows in input files are
/// remapped to singletons at load time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum FamilyKind {
    Mz,
    Dz,
    Singleton,
}

impl FamilyKind {
    pub fn label(self) -> &'static str {
        match self {
            FamilyKind::Mz => "MZ",
            FamilyKind::Dz => "DZ",
            FamilyKind::Singleton => "SINGLETON",
        }
    }
}

/// One family: an identifier, a kind, and the canonical (0-based) row
/// positions of its members in the phenotype/design matrices.
#[derive(Debug, Clone)]
pub struct Family {
    pub id: String,
    pub kind: FamilyKind,
    pub rows: Vec<usize>,
}

/// Canonical family structure over the rows of a cohort.
#[derive(Debug, Clone)]
pub struct FamilyIndex {
    families: Vec<Family>,
    n_mz: usize,
    n_dz: usize,
    n_singleton: usize,
    n_individuals: usize,
}

impl FamilyIndex {
    /// Builds the index from canonically ordered families (monozygotic pairs,
    /// then dizygotic pairs, then singletons, rows `0..N` in order).
    pub fn new(families: Vec<Family>) -> Result<Self> {
        let mut n_mz = 0;
        let mut n_dz = 0;
        let mut n_singleton = 0;
        let mut expected_row = 0usize;
        let mut block = 0u8;
        for fam in &families {
            let fam_block = match fam.kind {
                FamilyKind::Mz => 0,
                FamilyKind::Dz => 1,
                FamilyKind::Singleton => 2,
            };
            if fam_block < block {
                return Err(Error::Invalid(
                    "families are not in canonical kind order".into(),
                ));
            }
            block = fam_block;
            let expected_len = match fam.kind {
                FamilyKind::Mz | FamilyKind::Dz => 2,
                FamilyKind::Singleton => 1,
            };
            if fam.rows.len() != expected_len {
                return Err(Error::Invalid(format!(
                    "family {} has {} members, expected {expected_len}",
                    fam.id,
                    fam.rows.len()
                )));
            }
            for &r in &fam.rows {
                if r != expected_row {
                    return Err(Error::Invalid(
                        "family rows are not contiguous in canonical order".into(),
                    ));
                }
                expected_row += 1;
            }
            match fam.kind {
                FamilyKind::Mz => n_mz += 1,
                FamilyKind::Dz => n_dz += 1,
                FamilyKind::Singleton => n_singleton += 1,
            }
        }
        Ok(FamilyIndex {
            families,
            n_mz,
            n_dz,
            n_singleton,
            n_individuals: expected_row,
        })
    }

    pub fn families(&self) -> &[Family] {
        &self.families
    }

    pub fn n_mz(&self) -> usize {
        self.n_mz
    }

    pub fn n_dz(&self) -> usize {
        self.n_dz
    }

    pub fn n_singletons(&self) -> usize {
        self.n_singleton
    }

    pub fn n_individuals(&self) -> usize {
        self.n_individuals
    }

    /// Canonical row pairs `(first member, second member)` of monozygotic
    /// families.
    pub fn mz_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.families
            .iter()
            .filter(|f| f.kind == FamilyKind::Mz)
            .map(|f| (f.rows[0], f.rows[1]))
    }

    /// Canonical row pairs of dizygotic families.
    pub fn dz_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.families
            .iter()
            .filter(|f| f.kind == FamilyKind::Dz)
            .map(|f| (f.rows[0], f.rows[1]))
    }

    /// Canonical rows of singleton individuals.
    pub fn singleton_rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.families
            .iter()
            .filter(|f| f.kind == FamilyKind::Singleton)
            .map(|f| f.rows[0])
    }
}

/// A loaded, canonicalized twin cohort.
#[derive(Debug, Clone)]
pub struct TwinCohort {
    pub phenotype: Array2<f64>,
    pub design: Array2<f64>,
    pub covariate_names: Vec<String>,
    pub families: FamilyIndex,
    pub vertices: VertexSet,
}

impl TwinCohort {
    pub fn n(&self) -> usize {
        self.phenotype.nrows()
    }

    pub fn v(&self) -> usize {
        self.phenotype.ncols()
    }

    pub fn p(&self) -> usize {
        self.design.ncols()
    }
}

/// File locations composing one cohort on disk.
#[derive(Debug, Clone)]
pub struct CohortPaths {
    pub phenotype: PathBuf,
    pub design: PathBuf,
    pub family: PathBuf,
    pub vertices: PathBuf,
}

impl CohortPaths {
    /// Conventional layout inside one directory.
    pub fn in_dir(dir: &Path) -> Self {
        CohortPaths {
            phenotype: dir.join("phenotype.mat1"),
            design: dir.join("design.csv"),
            family: dir.join("family.csv"),
            vertices: dir.join("vertices.csv"),
        }
    }
}

#[derive(Debug)]
struct FamilyFileRow {
    row_index: usize,
    family_id: String,
    kind_token: String,
}

fn read_family_file(path: &Path) -> Result<Vec<FamilyFileRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::format(path, e.to_string()))?;
        if record.len() != 3 {
            return Err(Error::format(
                path,
                format!("expected 3 columns, found {}", record.len()),
            ));
        }
        let row_index: usize = record[0]
            .parse()
            .map_err(|_| Error::format(path, format!("bad row index {:?}", &record[0])))?;
        rows.push(FamilyFileRow {
            row_index,
            family_id: record[1].to_string(),
            kind_token: record[2].to_string(),
        });
    }
    Ok(rows)
}

/// Orders family identifiers numerically when both parse as integers,
/// lexicographically otherwise, so canonicalization does not depend on input
/// row order.
fn id_order(a: &str, b: &str) -> std::cmp::Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        _ => a.cmp(b),
    }
}

/// Reads a design matrix from either the binary container (`.mat1`) or a CSV
/// with a header row of covariate names.
pub fn load_design(path: &Path) -> Result<(Array2<f64>, Vec<String>)> {
    if path.extension().is_some_and(|e| e == "mat1") {
        let m = mat1::read_matrix(path)?;
        let names = (0..m.ncols()).map(|j| format!("x{j}")).collect();
        return Ok((m, names));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut data = Vec::new();
    let mut n = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| Error::format(path, e.to_string()))?;
        if record.len() != names.len() {
            return Err(Error::format(path, "ragged design row".to_string()));
        }
        for field in record.iter() {
            let x: f64 = field
                .parse()
                .map_err(|_| Error::format(path, format!("bad design value {field:?}")))?;
            data.push(x);
        }
        n += 1;
    }
    let m = Array2::from_shape_vec((n, names.len()), data)
        .map_err(|e| Error::format(path, e.to_string()))?;
    Ok((m, names))
}

/// Loads and canonicalizes a cohort. Returns the cohort along with load-time
/// diagnostics (for example sibling rows remapped to singletons).
pub fn load_cohort(paths: &CohortPaths) -> Result<(TwinCohort, Vec<Diagnostic>)> {
    let vertices = load_vertices(&paths.vertices)?;
    let phenotype = mat1::read_matrix(&paths.phenotype)?;
    let (design, covariate_names) = load_design(&paths.design)?;
    let family_rows = read_family_file(&paths.family)?;

    let n = phenotype.nrows();
    if design.nrows() != n {
        return Err(Error::Invalid(format!(
            "design has {} rows but phenotype has {n}",
            design.nrows()
        )));
    }
    if phenotype.ncols() != vertices.len() {
        return Err(Error::Invalid(format!(
            "phenotype has {} columns but vertex set has {}",
            phenotype.ncols(),
            vertices.len()
        )));
    }
    if family_rows.len() != n {
        return Err(Error::Invalid(format!(
            "family file assigns {} rows but phenotype has {n}",
            family_rows.len()
        )));
    }

    let mut diagnostics = Vec::new();
    let mut sib_count = 0usize;

    // Group members by family id, preserving family-file appearance order
    // within each family (that order defines twin order).
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<(usize, String)>> = BTreeMap::new();
    let mut seen_row = vec![false; n];
    for row in &family_rows {
        if row.row_index == 0 || row.row_index > n {
            return Err(Error::Invalid(format!(
                "family file row index {} outside 1..={n}",
                row.row_index
            )));
        }
        if seen_row[row.row_index - 1] {
            return Err(Error::Invalid(format!(
                "row index {} assigned to more than one family entry",
                row.row_index
            )));
        }
        seen_row[row.row_index - 1] = true;
        let kind_token = row.kind_token.to_uppercase();
        let entry = groups.entry(row.family_id.clone()).or_insert_with(|| {
            order.push(row.family_id.clone());
            Vec::new()
        });
        entry.push((row.row_index - 1, kind_token));
    }

    // Resolve each family's kind; explode sibling groups into singletons.
    let mut resolved: Vec<(String, FamilyKind, Vec<usize>)> = Vec::new();
    for id in &order {
        let members = &groups[id];
        let kinds: Vec<&str> = members.iter().map(|(_, k)| k.as_str()).collect();
        if !kinds.iter().all(|k| *k == kinds[0]) {
            return Err(Error::Invalid(format!(
                "family {id} mixes member kinds {kinds:?}"
            )));
        }
        match kinds[0] {
            "MZ" | "DZ" => {
                let kind = if kinds[0] == "MZ" {
                    FamilyKind::Mz
                } else {
                    FamilyKind::Dz
                };
                if members.len() != 2 {
                    return Err(Error::Invalid(format!(
                        "{} family {id} has {} member(s); twin families need exactly 2",
                        kinds[0],
                        members.len()
                    )));
                }
                resolved.push((id.clone(), kind, members.iter().map(|(r, _)| *r).collect()));
            }
            "SINGLETON" | "SIB" => {
                if kinds[0] == "SIB" {
                    sib_count += members.len();
                }
                if members.len() == 1 {
                    resolved.push((id.clone(), FamilyKind::Singleton, vec![members[0].0]));
                } else {
                    // Multi-member non-twin families enter the model as
                    // independent singletons.
                    for (k, (r, _)) in members.iter().enumerate() {
                        resolved.push((format!("{id}.{}", k + 1), FamilyKind::Singleton, vec![*r]));
                    }
                }
            }
            other => {
                return Err(Error::Invalid(format!(
                    "family {id} has unknown kind {other:?}"
                )));
            }
        }
    }
    if sib_count > 0 {
        diagnostics.push(Diagnostic::warning(format!(
            "{sib_count} sibling row(s) remapped to singletons"
        )));
    }

    // Canonical order: MZ block, DZ block, singleton block; families ordered
    // by identifier within each block.
    resolved.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| id_order(&a.0, &b.0)));

    let mut permutation = Vec::with_capacity(n); // canonical position -> source row
    let mut families = Vec::with_capacity(resolved.len());
    for (id, kind, rows) in resolved {
        let start = permutation.len();
        permutation.extend(rows.iter().copied());
        families.push(Family {
            id,
            kind,
            rows: (start..permutation.len()).collect(),
        });
    }

    let phenotype = phenotype.select(Axis(0), &permutation);
    let design = design.select(Axis(0), &permutation);
    let families = FamilyIndex::new(families)?;

    let cohort = TwinCohort {
        phenotype,
        design,
        covariate_names,
        families,
        vertices,
    };
    Ok((cohort, diagnostics))
}

/// Structural and numerical validation of a loaded cohort.
///
/// Warnings flag identifiability problems (no MZ or no DZ pairs); errors flag
/// conditions under which no estimator can run (rank-deficient design,
/// non-finite data).
pub fn validate_cohort(cohort: &TwinCohort) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if cohort.families.n_mz() == 0 {
        out.push(Diagnostic::warning(
            "cohort has no monozygotic pairs: additive and shared variance components are unidentifiable",
        ));
    }
    if cohort.families.n_dz() == 0 {
        out.push(Diagnostic::warning(
            "cohort has no dizygotic pairs: additive and shared variance components are unidentifiable",
        ));
    }
    if cohort.phenotype.iter().any(|x| !x.is_finite()) {
        out.push(Diagnostic::error("phenotype contains non-finite values"));
    }
    if cohort.design.iter().any(|x| !x.is_finite()) {
        out.push(Diagnostic::error("design contains non-finite values"));
    }
    if cohort.n() <= cohort.p() {
        out.push(Diagnostic::error(format!(
            "design has {} covariates but only {} individuals",
            cohort.p(),
            cohort.n()
        )));
    } else if design_rank_deficient(&cohort.design) {
        out.push(Diagnostic::error("design matrix is rank deficient"));
    }
    out
}

fn design_rank_deficient(x: &Array2<f64>) -> bool {
    use ndarray_linalg::Eigh;
    let xtx = x.t().dot(x);
    match xtx.eigh(ndarray_linalg::UPLO::Lower) {
        Ok((vals, _)) => {
            let max = vals.iter().cloned().fold(0.0f64, f64::max);
            max <= 0.0 || vals.iter().any(|&l| l < 1e-10 * max)
        }
        Err(_) => true,
    }
}

/// Returns true if any diagnostic is a hard error.
pub fn has_errors(diagnostics: &[Diagnostic]) -> bool {
    diagnostics.iter().any(|d| d.severity == Severity::Error)
}

/// Writes a cohort to a directory in the conventional file layout.
pub fn save_cohort(dir: &Path, cohort: &TwinCohort) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = CohortPaths::in_dir(dir);
    save_vertices(&paths.vertices, &cohort.vertices)?;
    mat1::write_matrix(&paths.phenotype, &cohort.phenotype.view())?;
    mat1::atomic_write_text(&paths.design, |out| {
        writeln!(out, "{}", cohort.covariate_names.join(","))?;
        for row in cohort.design.rows() {
            let fields: Vec<String> = row.iter().map(|x| format!("{x:.17e}")).collect();
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    })?;
    mat1::atomic_write_text(&paths.family, |out| {
        writeln!(out, "row_index,family_id,kind")?;
        for fam in cohort.families.families() {
            for &row in &fam.rows {
                writeln!(out, "{},{},{}", row + 1, fam.id, fam.kind.label())?;
            }
        }
        Ok(())
    })?;
    Ok(())
}

/// Convenience constructor used by the simulation harness and tests: rows
/// must already be in canonical order.
pub fn cohort_from_parts(
    phenotype: Array2<f64>,
    design: Array2<f64>,
    covariate_names: Vec<String>,
    families: FamilyIndex,
    vertices: VertexSet,
) -> Result<TwinCohort> {
    if phenotype.nrows() != families.n_individuals() {
        return Err(Error::Invalid("phenotype rows do not match family index".into()));
    }
    if design.nrows() != phenotype.nrows() {
        return Err(Error::Invalid("design rows do not match phenotype".into()));
    }
    if phenotype.ncols() != vertices.len() {
        return Err(Error::Invalid("phenotype columns do not match vertex set".into()));
    }
    Ok(TwinCohort {
        phenotype,
        design,
        covariate_names,
        families,
        vertices,
    })
}

/// Builds a canonical family index from block sizes (used by the simulator):
/// `n_mz` pairs, then `n_dz` pairs, then `n_singleton` singles.
pub fn block_family_index(n_mz: usize, n_dz: usize, n_singleton: usize) -> FamilyIndex {
    let mut families = Vec::new();
    let mut row = 0usize;
    for i in 0..n_mz {
        families.push(Family {
            id: format!("{}", i + 1),
            kind: FamilyKind::Mz,
            rows: vec![row, row + 1],
        });
        row += 2;
    }
    for i in 0..n_dz {
        families.push(Family {
            id: format!("{}", n_mz + i + 1),
            kind: FamilyKind::Dz,
            rows: vec![row, row + 1],
        });
        row += 2;
    }
    for i in 0..n_singleton {
        families.push(Family {
            id: format!("{}", n_mz + n_dz + i + 1),
            kind: FamilyKind::Singleton,
            rows: vec![row],
        });
        row += 1;
    }
    FamilyIndex::new(families).expect("block layout is canonical")
}

/// Per-vertex sample variance of the phenotype (denominator `N`), used for
/// optimizer floors and degeneracy checks.
pub fn phenotype_sample_variance(phenotype: &Array2<f64>) -> Array1<f64> {
    let n = phenotype.nrows() as f64;
    let mean = phenotype.mean_axis(Axis(0)).expect("nonempty");
    let mut var = Array1::<f64>::zeros(phenotype.ncols());
    for row in phenotype.rows() {
        for (j, &x) in row.iter().enumerate() {
            let d = x - mean[j];
            var[j] += d * d;
        }
    }
    var / n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Hemisphere;
    use ndarray::array;

    fn write_vertex_file(path: &Path, v: usize) {
        let vs = VertexSet::fibonacci_lattice(v, Hemisphere::Left).unwrap();
        save_vertices(path, &vs).unwrap();
    }

    fn write_cohort_files(
        dir: &Path,
        phenotype: &Array2<f64>,
        family_lines: &[&str],
    ) -> CohortPaths {
        let paths = CohortPaths::in_dir(dir);
        write_vertex_file(&paths.vertices, phenotype.ncols());
        mat1::write_matrix(&paths.phenotype, &phenotype.view()).unwrap();
        let n = phenotype.nrows();
        let mut design = String::from("intercept\n");
        for _ in 0..n {
            design.push_str("1.0\n");
        }
        std::fs::write(&paths.design, design).unwrap();
        let mut fam = String::from("row_index,family_id,kind\n");
        for line in family_lines {
            fam.push_str(line);
            fam.push('\n');
        }
        std::fs::write(&paths.family, fam).unwrap();
        paths
    }

    #[test]
    fn canonicalization_is_input_order_invariant() {
        let dir = tempfile::tempdir().unwrap();
        // Rows: singleton, DZ pair, MZ pair, interleaved in file order.
        let phenotype = array![
            [10.0, 11.0],
            [20.0, 21.0],
            [30.0, 31.0],
            [40.0, 41.0],
            [50.0, 51.0],
        ];
        let paths = write_cohort_files(
            dir.path(),
            &phenotype,
            &[
                "1,9,SINGLETON",
                "2,5,DZ",
                "4,5,DZ",
                "3,2,MZ",
                "5,2,MZ",
            ],
        );
        let (cohort, _) = load_cohort(&paths).unwrap();

        // Same data with rows of the matrices shuffled and indices updated.
        let dir2 = tempfile::tempdir().unwrap();
        let perm = [4usize, 2, 0, 3, 1]; // new position of old rows
        let mut shuffled = Array2::zeros((5, 2));
        for (old, &new) in perm.iter().enumerate() {
            shuffled.row_mut(new).assign(&phenotype.row(old));
        }
        let paths2 = write_cohort_files(
            dir2.path(),
            &shuffled,
            &[
                &format!("{},9,SINGLETON", perm[0] + 1),
                &format!("{},5,DZ", perm[1] + 1),
                &format!("{},5,DZ", perm[3] + 1),
                &format!("{},2,MZ", perm[2] + 1),
                &format!("{},2,MZ", perm[4] + 1),
            ],
        );
        let (cohort2, _) = load_cohort(&paths2).unwrap();

        assert_eq!(cohort.phenotype, cohort2.phenotype);
        assert_eq!(cohort.families.n_mz(), 1);
        assert_eq!(cohort.families.n_dz(), 1);
        assert_eq!(cohort.families.n_singletons(), 1);
        // Canonical layout: MZ family (id 2) rows first.
        assert_eq!(cohort.phenotype[[0, 0]], 30.0);
        assert_eq!(cohort.phenotype[[1, 0]], 50.0);
        assert_eq!(cohort.phenotype[[2, 0]], 20.0);
        assert_eq!(cohort.phenotype[[4, 0]], 10.0);
    }

    #[test]
    fn family_ids_sort_numerically() {
        let dir = tempfile::tempdir().unwrap();
        let phenotype = array![[1.0], [2.0], [3.0], [4.0]];
        let paths = write_cohort_files(
            dir.path(),
            &phenotype,
            &["1,10,MZ", "2,10,MZ", "3,2,MZ", "4,2,MZ"],
        );
        let (cohort, _) = load_cohort(&paths).unwrap();
        // Family 2 sorts before family 10.
        assert_eq!(cohort.families.families()[0].id, "2");
        assert_eq!(cohort.phenotype[[0, 0]], 3.0);
    }

    #[test]
    fn sib_rows_become_singletons_with_warning() {
        let dir = tempfile::tempdir().unwrap();
        let phenotype = array![[1.0], [2.0], [3.0], [4.0]];
        let paths = write_cohort_files(
            dir.path(),
            &phenotype,
            &["1,1,MZ", "2,1,MZ", "3,7,SIB", "4,7,SIB"],
        );
        let (cohort, diags) = load_cohort(&paths).unwrap();
        assert_eq!(cohort.families.n_singletons(), 2);
        assert!(diags
            .iter()
            .any(|d| d.severity == Severity::Warning && d.message.contains("sibling")));
    }

    #[test]
    fn twin_family_with_missing_cotwin_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let phenotype = array![[1.0], [2.0], [3.0]];
        let paths = write_cohort_files(
            dir.path(),
            &phenotype,
            &["1,1,MZ", "2,1,MZ", "3,2,DZ"],
        );
        let err = load_cohort(&paths).unwrap_err();
        assert!(err.to_string().contains("twin families need exactly 2"));
    }

    #[test]
    fn duplicate_row_assignment_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let phenotype = array![[1.0], [2.0]];
        let paths = write_cohort_files(dir.path(), &phenotype, &["1,1,MZ", "1,1,MZ"]);
        assert!(load_cohort(&paths).is_err());
    }

    #[test]
    fn validation_flags_missing_twin_kinds_and_rank_deficiency() {
        let vs = VertexSet::fibonacci_lattice(3, Hemisphere::Left).unwrap();
        let families = block_family_index(1, 0, 1);
        let phenotype = Array2::from_shape_fn((3, 3), |(i, j)| (i + j) as f64);
        let design = array![[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]];
        let cohort = cohort_from_parts(
            phenotype,
            design,
            vec!["a".into(), "b".into()],
            families,
            vs,
        )
        .unwrap();
        let diags = validate_cohort(&cohort);
        assert!(diags
            .iter()
            .any(|d| d.severity == Severity::Warning && d.message.contains("dizygotic")));
        assert!(diags
            .iter()
            .any(|d| d.severity == Severity::Error && d.message.contains("rank deficient")));
    }

    #[test]
    fn cohort_round_trips_through_directory() {
        let vs = VertexSet::fibonacci_lattice(4, Hemisphere::Left).unwrap();
        let families = block_family_index(1, 1, 1);
        let phenotype = Array2::from_shape_fn((5, 4), |(i, j)| i as f64 + 0.25 * j as f64);
        let design = Array2::from_shape_fn((5, 2), |(i, j)| if j == 0 { 1.0 } else { i as f64 });
        let cohort = cohort_from_parts(
            phenotype,
            design,
            vec!["intercept".into(), "age".into()],
            families,
            vs,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_cohort(dir.path(), &cohort).unwrap();
        let (loaded, _) = load_cohort(&CohortPaths::in_dir(dir.path())).unwrap();
        assert_eq!(loaded.phenotype, cohort.phenotype);
        assert_eq!(loaded.design, cohort.design);
        assert_eq!(loaded.covariate_names, cohort.covariate_names);
        assert_eq!(loaded.families.n_mz(), 1);
        assert_eq!(loaded.families.n_dz(), 1);
        assert_eq!(loaded.families.n_singletons(), 1);
    }
}
