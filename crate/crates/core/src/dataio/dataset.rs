use std::fs;
use std::path::{Path, PathBuf};

use super::image::{decode_image, ImageFormat, RgbImage};
use crate::error::{Error, Result};
use crate::tensor::Rng;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageRecord {
    pub image: RgbImage,
    pub label: usize,
    pub source: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Path relative to the dataset root, `/`-separated.
    pub path: String,
    pub label: usize,
    pub split: Split,
}

/// Class inventory and split assignment of a loaded dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    /// Class names; position defines the integer label.
    pub classes: Vec<String>,
    pub counts: Vec<usize>,
    pub entries: Vec<ManifestEntry>,
    pub seed: u64,
}

impl DatasetManifest {
    /// Assigns stratified validation and test splits; everything else trains.
    pub fn assign_splits(&mut self, val_fraction: f64, test_fraction: f64, seed: u64) {
        let labels: Vec<usize> = self.entries.iter().map(|e| e.label).collect();
        let splits = stratified_split(&labels, self.classes.len(), val_fraction, test_fraction, seed);
        for (e, s) in self.entries.iter_mut().zip(splits) {
            e.split = s;
        }
        self.seed = seed;
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.entries.iter().enumerate().filter(|(_, e)| e.split == split).map(|(i, _)| i).collect()
    }

    pub fn to_csv(&self) -> String {
        let rows: Vec<Vec<String>> = self
            .entries
            .iter()
            .map(|e| vec![e.path.clone(), self.classes[e.label].clone(), e.label.to_string(), e.split.as_str().to_string()])
            .collect();
        super::csv::csv_text(&["path", "class", "label", "split"], &rows)
    }
}

/// Per-class shuffled assignment: `round(n·val)` validation and
/// `round(n·test)` test samples per class, the rest training.
pub fn stratified_split(labels: &[usize], num_classes: usize, val_fraction: f64, test_fraction: f64, seed: u64) -> Vec<Split> {
    let root = Rng::new(seed);
    let mut out = vec![Split::Train; labels.len()];
    for class in 0..num_classes {
        let mut members: Vec<usize> = labels.iter().enumerate().filter(|(_, &l)| l == class).map(|(i, _)| i).collect();
        root.fork(class as u64).shuffle(&mut members);
        let n = members.len() as f64;
        let n_val = ((n * val_fraction).round() as usize).min(members.len());
        let n_test = ((n * test_fraction).round() as usize).min(members.len() - n_val);
        for &i in &members[..n_val] {
            out[i] = Split::Val;
        }
        for &i in &members[n_val..n_val + n_test] {
            out[i] = Split::Test;
        }
    }
    out
}

/// Loaded images plus their manifest.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub records: Vec<ImageRecord>,
    pub manifest: DatasetManifest,
    /// Files with an image extension that failed to decode.
    pub skipped: usize,
}

impl Dataset {
    pub fn images_of(&self, label: usize) -> Vec<RgbImage> {
        self.records.iter().filter(|r| r.label == label).map(|r| r.image.clone()).collect()
    }
}

/// Sorted names of the subdirectories of `root`.
pub fn class_dirs(root: &Path) -> Result<Vec<String>> {
    if !root.is_dir() {
        return Err(Error::MissingClassDir(root.to_path_buf()));
    }
    let mut names = Vec::new();
    for entry in fs::read_dir(root)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

/// Image files (`.ppm`, `.png`) of a directory in lexicographic order.
pub fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_file() && ImageFormat::from_path(&path).is_some() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Loads `<root>/<class>/*.{ppm,png}` for each class; labels follow the
/// order of `classes`. All records start in the training split.
pub fn load_dataset(root: &Path, classes: &[String]) -> Result<Dataset> {
    let mut records = Vec::new();
    let mut entries = Vec::new();
    let mut counts = Vec::with_capacity(classes.len());
    let mut skipped = 0;
    for (label, class) in classes.iter().enumerate() {
        let dir = root.join(class);
        if !dir.is_dir() {
            return Err(Error::MissingClassDir(dir));
        }
        let files = image_files(&dir)?;
        if files.is_empty() {
            return Err(Error::NoImages(dir));
        }
        let mut loaded = 0;
        for path in files {
            match decode_image(&path) {
                Ok(image) => {
                    let name = path.file_name().expect("file").to_string_lossy();
                    entries.push(ManifestEntry { path: format!("{class}/{name}"), label, split: Split::Train });
                    records.push(ImageRecord { image, label, source: path });
                    loaded += 1;
                }
                Err(Error::Io(e)) => return Err(Error::Io(e)),
                Err(e) => {
                    log::warn!("skipping {}: {e}", path.display());
                    skipped += 1;
                }
            }
        }
        if loaded == 0 {
            return Err(Error::UndecodableImage(dir));
        }
        counts.push(loaded);
    }
    Ok(Dataset { records, manifest: DatasetManifest { classes: classes.to_vec(), counts, entries, seed: 0 }, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::image::encode_image;

    fn write_tree(root: &Path, layout: &[(&str, usize)]) {
        for (class, n) in layout {
            let dir = root.join(class);
            fs::create_dir_all(&dir).unwrap();
            for i in 0..*n {
                let img = RgbImage::filled(2, 2, [i as u8, 0, 0]).unwrap();
                encode_image(&img, &dir.join(format!("img_{i:03}.ppm"))).unwrap();
            }
        }
    }

    #[test]
    fn loads_in_lexicographic_order_and_is_repeatable() {
        let dir = tempfile::tempdir().unwrap();
        write_tree(dir.path(), &[("M", 3), ("G", 2)]);
        let classes = vec!["M".to_string(), "G".to_string()];
        let a = load_dataset(dir.path(), &classes).unwrap();
        assert_eq!(a.manifest.counts, vec![3, 2]);
        assert_eq!(a.records[1].image.pixels()[0], 1);
        assert_eq!(a.records[3].label, 1);
        let b = load_dataset(dir.path(), &classes).unwrap();
        assert_eq!(a.manifest.to_csv(), b.manifest.to_csv());
        assert_eq!(class_dirs(dir.path()).unwrap(), vec!["G", "M"]);
    }

    #[test]
    fn single_image_dataset() {
        let dir = tempfile::tempdir().unwrap();
        write_tree(dir.path(), &[("C", 1)]);
        let d = load_dataset(dir.path(), &["C".to_string()]).unwrap();
        assert_eq!(d.manifest.entries.len(), 1);
        assert_eq!(d.manifest.entries[0].path, "C/img_000.ppm");
    }

    #[test]
    fn missing_and_empty_classes() {
        let dir = tempfile::tempdir().unwrap();
        write_tree(dir.path(), &[("A", 1)]);
        fs::create_dir_all(dir.path().join("B")).unwrap();
        assert!(matches!(load_dataset(dir.path(), &["Z".into()]), Err(Error::MissingClassDir(_))));
        assert!(matches!(load_dataset(dir.path(), &["B".into()]), Err(Error::NoImages(_))));
        fs::write(dir.path().join("B/bad.ppm"), b"garbage").unwrap();
        assert!(matches!(load_dataset(dir.path(), &["B".into()]), Err(Error::UndecodableImage(_))));
        fs::write(dir.path().join("A/zzz.ppm"), b"garbage").unwrap();
        let d = load_dataset(dir.path(), &["A".into()]).unwrap();
        assert_eq!(d.skipped, 1);
        assert_eq!(d.records.len(), 1);
    }

    #[test]
    fn stratified_split_fractions() {
        let labels: Vec<usize> = (0..3).flat_map(|c| std::iter::repeat_n(c, 10 + 7 * c)).collect();
        let splits = stratified_split(&labels, 3, 0.1, 0.2, 5);
        for c in 0..3 {
            let n = labels.iter().filter(|&&l| l == c).count() as f64;
            let val = labels.iter().zip(&splits).filter(|(&l, &s)| l == c && s == Split::Val).count() as f64;
            let test = labels.iter().zip(&splits).filter(|(&l, &s)| l == c && s == Split::Test).count() as f64;
            assert!((val - 0.1 * n).abs() <= 1.0);
            assert!((test - 0.2 * n).abs() <= 1.0);
        }
        assert_eq!(splits, stratified_split(&labels, 3, 0.1, 0.2, 5));
    }
}
