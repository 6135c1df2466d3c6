use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};

const IR_DIR: &str = "ir";
const VIS_DIR: &str = "vi";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairRecord {
    pub id: String,
    pub ir_path: PathBuf,
    pub vis_path: PathBuf,
    /// `(height, width)` read from the file headers.
    pub size: (usize, usize),
}

/// Pairing outcome before the non-empty requirement is applied.
#[derive(Debug, Clone, Default)]
pub struct PairListing {
    pub records: Vec<PairRecord>,
    /// One line per skipped file or pair.
    pub warnings: Vec<String>,
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

fn list_images(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_file() && is_image(&path) {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                out.insert(name.to_string(), path);
            }
        }
    }
    Ok(out)
}

fn dimensions(path: &Path) -> Result<(usize, usize)> {
    let (w, h) = image::image_dimensions(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok((h as usize, w as usize))
}

fn id_of(name: &str) -> String {
    Path::new(name)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or(name)
        .to_string()
}

fn push_checked(listing: &mut PairListing, id: String, ir_path: PathBuf, vis_path: PathBuf) {
    let sizes = dimensions(&ir_path).and_then(|a| dimensions(&vis_path).map(|b| (a, b)));
    match sizes {
        Ok((a, b)) if a == b => listing.records.push(PairRecord {
            id,
            ir_path,
            vis_path,
            size: a,
        }),
        Ok((a, b)) => listing.warnings.push(format!(
            "skipping {id}: infrared is {}x{}, visible is {}x{}",
            a.0, a.1, b.0, b.1
        )),
        Err(e) => listing.warnings.push(format!("skipping {id}: {e}")),
    }
}

/// Pairs same-named images under `root/ir` and `root/vi` in lexicographic
/// order. Orphans and size mismatches become warnings.
pub fn scan_pairs(root: &Path) -> Result<PairListing> {
    let ir = list_images(&root.join(IR_DIR))?;
    let vis = list_images(&root.join(VIS_DIR))?;
    let mut listing = PairListing::default();
    for (name, ir_path) in &ir {
        match vis.get(name) {
            Some(vis_path) => push_checked(&mut listing, id_of(name), ir_path.clone(), vis_path.clone()),
            None => listing
                .warnings
                .push(format!("no visible counterpart for {IR_DIR}/{name}")),
        }
    }
    for name in vis.keys().filter(|n| !ir.contains_key(*n)) {
        listing
            .warnings
            .push(format!("no infrared counterpart for {VIS_DIR}/{name}"));
    }
    Ok(listing)
}

fn require_records(listing: PairListing, what: &str) -> Result<Vec<PairRecord>> {
    for w in &listing.warnings {
        log::warn!("{w}");
    }
    if listing.records.is_empty() {
        let mut msg = format!("no usable image pairs in {what}");
        for w in &listing.warnings {
            msg.push_str("\n  ");
            msg.push_str(w);
        }
        return Err(Error::Dataset(msg));
    }
    Ok(listing.records)
}

/// Dataset root in `ir/` + `vi/` layout, or a manifest CSV file.
pub fn discover_dataset(root: &Path) -> Result<Vec<PairRecord>> {
    if root.is_file() {
        return read_manifest(root);
    }
    require_records(scan_pairs(root)?, &root.display().to_string())
}

#[derive(Deserialize)]
struct ManifestRow {
    id: String,
    ir_path: PathBuf,
    vis_path: PathBuf,
}

/// `id,ir_path,vis_path` CSV with header. Relative paths resolve against the
/// manifest's directory. Rows keep file order.
pub fn read_manifest(path: &Path) -> Result<Vec<PairRecord>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::Reader::from_path(path)?;
    let mut listing = PairListing::default();
    for row in reader.deserialize::<ManifestRow>() {
        let row = row?;
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        push_checked(&mut listing, row.id, resolve(row.ir_path), resolve(row.vis_path));
    }
    require_records(listing, &path.display().to_string())
}
