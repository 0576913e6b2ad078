use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, OnceLock};
use std::time::{SystemTime, UNIX_EPOCH};

use labeldist::elo::{read_choice_log, ChoiceMatrix, ChoiceRecord, EloRatings};
use labeldist::io::{load_array_auto, Format};
use labeldist::raster::Raster;
use labeldist::study::{distance_table_named, Direction, DistanceTable};
use labeldist::{LabeledArray, MetricName};
use serde::Serialize;

use crate::ServerError;

pub const LOG_FILE: &str = "choices.log.csv";

/// One comparison pool: an original image and the segmentations judged against each other.
#[derive(Clone, Debug, Serialize)]
pub struct Scene {
    pub id: String,
    pub original: String,
    /// Segmentation ids (file stems) in file-name order.
    pub segmentation_ids: Vec<String>,
    #[serde(skip)]
    pub segmentation_files: Vec<String>,
    #[serde(skip)]
    pub dir: PathBuf,
}

impl Scene {
    pub fn pair_count(&self) -> usize {
        let n = self.segmentation_ids.len();
        n * (n - 1) / 2
    }

    pub fn original_url(&self) -> String {
        format!("/static/scenes/{}/original/{}", self.id, self.original)
    }

    pub fn segmentation_url(&self, idx: usize) -> String {
        format!(
            "/static/scenes/{}/segmentations/{}",
            self.id, self.segmentation_files[idx]
        )
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.segmentation_ids.iter().position(|x| x == id)
    }
}

fn sorted_files(dir: &Path) -> Result<Vec<String>, ServerError> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_file() {
            if let Some(name) = entry.file_name().to_str() {
                if !name.starts_with('.') {
                    names.push(name.to_string());
                }
            }
        }
    }
    names.sort();
    Ok(names)
}

/// Reads `<root>/<id>/original/<file>` and `<root>/<id>/segmentations/*` for every
/// subdirectory of `root`.
pub fn load_scenes(root: &Path) -> Result<Vec<Scene>, ServerError> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_ok_and(|t| t.is_dir()))
        .map(|e| e.path())
        .collect();
    dirs.sort();
    let mut scenes = Vec::new();
    for dir in dirs {
        let Some(id) = dir.file_name().and_then(|n| n.to_str()).map(str::to_string) else {
            continue;
        };
        if id.starts_with('.') {
            continue;
        }
        let bad = |msg: String| ServerError::Scene(format!("scene `{id}`: {msg}"));
        let originals = sorted_files(&dir.join("original"))
            .map_err(|e| bad(format!("original/: {e}")))?;
        let original = match originals.as_slice() {
            [one] => one.clone(),
            other => return Err(bad(format!("expected one original image, found {}", other.len()))),
        };
        let files = sorted_files(&dir.join("segmentations"))
            .map_err(|e| bad(format!("segmentations/: {e}")))?;
        if files.len() < 2 {
            return Err(bad(format!("needs at least 2 segmentations, found {}", files.len())));
        }
        let mut seen = BTreeSet::new();
        let mut ids = Vec::with_capacity(files.len());
        for f in &files {
            let stem = Path::new(f)
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or(f)
                .to_string();
            if !seen.insert(stem.clone()) {
                return Err(bad(format!("duplicate segmentation id `{stem}`")));
            }
            ids.push(stem);
        }
        scenes.push(Scene {
            id,
            original,
            segmentation_ids: ids,
            segmentation_files: files,
            dir,
        });
    }
    Ok(scenes)
}

/// Reads a segmentation as labels: PGM/CSV directly, PPM by packed color.
pub fn load_segmentation(path: &Path) -> labeldist::Result<LabeledArray> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("ppm") => Ok(Raster::load(path)?.color_labels()),
        _ if Format::from_path(path).is_some() => load_array_auto(path),
        _ => Err(labeldist::Error::InvalidConfig(format!(
            "{} is not a PGM, PPM or CSV file",
            path.display()
        ))),
    }
}

/// Matrix and ratings derived from the log, kept in step with every appended line.
pub struct Tally {
    pub records: Vec<ChoiceRecord>,
    pub matrix: ChoiceMatrix,
    pub ratings: EloRatings,
    log: File,
}

impl Tally {
    /// Opens (or creates) the scene log and replays it.
    pub fn open(scene: &Scene) -> Result<Self, ServerError> {
        let path = scene.dir.join(LOG_FILE);
        let records = if path.exists() {
            read_choice_log(&fs::read_to_string(&path)?)?
        } else {
            fs::write(&path, format!("{}\n", ChoiceRecord::CSV_HEADER))?;
            Vec::new()
        };
        let mut matrix = ChoiceMatrix::new(scene.segmentation_ids.clone());
        let mut ratings = EloRatings::new(scene.segmentation_ids.clone());
        for r in &records {
            if r.scene != scene.id {
                return Err(ServerError::Scene(format!(
                    "{} holds a record for scene `{}`",
                    path.display(),
                    r.scene
                )));
            }
            matrix.record(&r.winner, &r.loser)?;
            ratings.apply_result(&r.winner, &r.loser)?;
        }
        let log = OpenOptions::new().append(true).open(&path)?;
        Ok(Self {
            records,
            matrix,
            ratings,
            log,
        })
    }

    /// Appends one line to the log, then updates the derived state.
    pub fn append(&mut self, scene: &str, winner: &str, loser: &str) -> Result<(), ServerError> {
        let now = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
        let record = ChoiceRecord {
            timestamp: format!("{}.{:03}", now.as_secs(), now.subsec_millis()),
            scene: scene.to_string(),
            winner: winner.to_string(),
            loser: loser.to_string(),
        };
        self.log.write_all(record.to_csv_line().as_bytes())?;
        self.matrix.record(winner, loser)?;
        self.ratings.apply_result(winner, loser)?;
        self.records.push(record);
        Ok(())
    }
}

pub struct SceneState {
    pub scene: Scene,
    pub tally: Mutex<Tally>,
    tables: OnceLock<Result<Vec<DistanceTable>, String>>,
}

impl SceneState {
    pub fn new(scene: Scene) -> Result<Self, ServerError> {
        let tally = Tally::open(&scene)?;
        Ok(Self {
            scene,
            tally: Mutex::new(tally),
            tables: OnceLock::new(),
        })
    }

    /// Pairwise metric tables between segmentations, computed once on first use.
    /// Inapplicable metrics are left out.
    pub fn metric_tables(&self) -> Result<&[DistanceTable], &str> {
        self.tables
            .get_or_init(|| {
                let scene = &self.scene;
                let arrays = scene
                    .segmentation_files
                    .iter()
                    .map(|f| load_segmentation(&scene.dir.join("segmentations").join(f)))
                    .collect::<labeldist::Result<Vec<_>>>()
                    .map_err(|e| e.to_string())?;
                let mut tables = Vec::new();
                for metric in MetricName::ALL {
                    match distance_table_named(
                        &scene.segmentation_ids,
                        &arrays,
                        metric,
                        Direction::RowAsGt,
                    ) {
                        Ok(t) => tables.push(t),
                        Err(labeldist::Error::Inapplicable { .. }) => {}
                        Err(e) => return Err(e.to_string()),
                    }
                }
                Ok(tables)
            })
            .as_deref()
            .map_err(String::as_str)
    }
}
