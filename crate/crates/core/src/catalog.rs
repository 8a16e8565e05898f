//! The immutable prompt × model × image catalog.
//!
//! On disk a catalog is a directory holding three JSONL metadata files and two
//! binary embedding matrices:
//!
//! ```text
//! models.jsonl            one ModelRecord per line
//! prompts.jsonl           one PromptRecord per line
//! images.jsonl            one ImageRecord per line
//! image_embeddings.bin    EmbeddingMatrix, one row per image
//! prompt_embeddings.bin   EmbeddingMatrix, row i belongs to line i of prompts.jsonl
//! ```
//!
//! The binary layout is little-endian: the 8 magic bytes `GEMREC00`, a `u32`
//! format version (1), `u32` rows, `u32` dim, then `rows * dim` IEEE-754 `f32`
//! values in row-major order with no padding.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ModelId = u32;
pub type PromptId = u32;

pub const MODELS_FILE: &str = "models.jsonl";
pub const PROMPTS_FILE: &str = "prompts.jsonl";
pub const IMAGES_FILE: &str = "images.jsonl";
pub const IMAGE_EMBEDDINGS_FILE: &str = "image_embeddings.bin";
pub const PROMPT_EMBEDDINGS_FILE: &str = "prompt_embeddings.bin";

pub const EMBEDDING_MAGIC: &[u8; 8] = b"GEMREC00";
pub const EMBEDDING_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub model_id: ModelId,
    pub name: String,
    pub version_id: u64,
    pub download_count: u64,
    pub tags: Vec<String>,
    pub trained_words: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptSource {
    Parti,
    Civitai,
    Original,
    OriginalExtended,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub prompt_id: PromptId,
    pub text: String,
    pub negative_text: String,
    pub tag: String,
    pub source: PromptSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: u64,
    pub model_id: ModelId,
    pub prompt_id: PromptId,
    pub embedding_row: usize,
    pub nsfw_score: f64,
    pub clip_score_raw: f64,
    pub uri: String,
}

/// Dense row-major `f32` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if rows.checked_mul(dim) != Some(data.len()) {
            return Err(Error::EmbeddingShapeMismatch(format!(
                "{rows} x {dim} does not match {} values",
                data.len()
            )));
        }
        if dim == 0 && rows > 0 {
            return Err(Error::EmbeddingShapeMismatch("dim must be positive".into()));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::EmbeddingShapeMismatch(format!(
                "non-finite value at row {} column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::EmbeddingShapeMismatch(format!(
                    "row {i} has {} values, expected {dim}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), dim, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, index: usize) -> Result<&[f32]> {
        if index >= self.rows {
            return Err(Error::OutOfRange {
                index,
                rows: self.rows,
            });
        }
        Ok(&self.data[index * self.dim..(index + 1) * self.dim])
    }

    /// Iterate rows in order.
    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim.max(1)).take(self.rows)
    }

    /// Gather the given rows into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i)?);
        }
        Ok(Self {
            rows: indices.len(),
            dim: self.dim,
            data,
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(EMBEDDING_MAGIC)?;
        w.write_all(&EMBEDDING_FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&to_u32(self.rows, "rows")?.to_le_bytes())?;
        w.write_all(&to_u32(self.dim, "dim")?.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 20];
        r.read_exact(&mut header).map_err(|_| {
            Error::EmbeddingShapeMismatch("file shorter than the 20-byte header".into())
        })?;
        if &header[..8] != EMBEDDING_MAGIC {
            return Err(Error::EmbeddingShapeMismatch("bad magic bytes".into()));
        }
        let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
        let version = word(8);
        if version != EMBEDDING_FORMAT_VERSION {
            return Err(Error::EmbeddingShapeMismatch(format!(
                "unsupported format version {version}"
            )));
        }
        let rows = word(12) as usize;
        let dim = word(16) as usize;
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        let expected = rows
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::EmbeddingShapeMismatch("header overflows".into()))?;
        if body.len() != expected {
            return Err(Error::EmbeddingShapeMismatch(format!(
                "header declares {rows} x {dim} but body holds {} bytes",
                body.len()
            )));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(rows, dim, data)
    }
}

fn to_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::EmbeddingShapeMismatch(format!("{what} exceeds u32")))
}

/// Row `index` of `matrix`.
pub fn embedding_row(matrix: &EmbeddingMatrix, index: usize) -> Result<&[f32]> {
    matrix.row(index)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Allow (model, prompt) cells without an image.
    pub sparse: bool,
}

/// Validated, immutable catalog. Construct with [`Catalog::new`] or [`load_catalog`].
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    models: Vec<ModelRecord>,
    prompts: Vec<PromptRecord>,
    images: Vec<ImageRecord>,
    image_embeddings: EmbeddingMatrix,
    prompt_embeddings: EmbeddingMatrix,
    sparse: bool,
    model_index: HashMap<ModelId, usize>,
    prompt_index: HashMap<PromptId, usize>,
    cell_index: HashMap<(ModelId, PromptId), usize>,
}

impl Catalog {
    pub fn new(
        models: Vec<ModelRecord>,
        prompts: Vec<PromptRecord>,
        images: Vec<ImageRecord>,
        image_embeddings: EmbeddingMatrix,
        prompt_embeddings: EmbeddingMatrix,
        options: LoadOptions,
    ) -> Result<Self> {
        let mut model_index = HashMap::with_capacity(models.len());
        for (i, m) in models.iter().enumerate() {
            if model_index.insert(m.model_id, i).is_some() {
                return Err(schema(MODELS_FILE, i, format!("duplicate model_id {}", m.model_id)));
            }
        }

        let mut prompt_index = HashMap::with_capacity(prompts.len());
        for (i, p) in prompts.iter().enumerate() {
            if p.text.trim().is_empty() {
                return Err(schema(PROMPTS_FILE, i, format!("prompt {} has empty text", p.prompt_id)));
            }
            if prompt_index.insert(p.prompt_id, i).is_some() {
                return Err(schema(PROMPTS_FILE, i, format!("duplicate prompt_id {}", p.prompt_id)));
            }
        }

        if prompt_embeddings.rows() != prompts.len() {
            return Err(Error::EmbeddingShapeMismatch(format!(
                "{} prompt embedding rows for {} prompts",
                prompt_embeddings.rows(),
                prompts.len()
            )));
        }
        if !images.is_empty() && prompt_embeddings.dim() != image_embeddings.dim() {
            return Err(Error::EmbeddingShapeMismatch(format!(
                "prompt dim {} differs from image dim {}",
                prompt_embeddings.dim(),
                image_embeddings.dim()
            )));
        }

        let mut image_ids = HashSet::with_capacity(images.len());
        let mut cell_index = HashMap::with_capacity(images.len());
        for (i, img) in images.iter().enumerate() {
            if !image_ids.insert(img.image_id) {
                return Err(schema(IMAGES_FILE, i, format!("duplicate image_id {}", img.image_id)));
            }
            if !(0.0..=1.0).contains(&img.nsfw_score) {
                return Err(schema(
                    IMAGES_FILE,
                    i,
                    format!("image {} nsfw_score {} outside [0, 1]", img.image_id, img.nsfw_score),
                ));
            }
            if !(-1.0..=1.0).contains(&img.clip_score_raw) {
                return Err(schema(
                    IMAGES_FILE,
                    i,
                    format!(
                        "image {} clip_score_raw {} outside [-1, 1]",
                        img.image_id, img.clip_score_raw
                    ),
                ));
            }
            if !model_index.contains_key(&img.model_id) {
                return Err(Error::ReferentialIntegrity(format!(
                    "image {} references model_id {} absent from {MODELS_FILE}",
                    img.image_id, img.model_id
                )));
            }
            if !prompt_index.contains_key(&img.prompt_id) {
                return Err(Error::ReferentialIntegrity(format!(
                    "image {} references prompt_id {} absent from {PROMPTS_FILE}",
                    img.image_id, img.prompt_id
                )));
            }
            if img.embedding_row >= image_embeddings.rows() {
                return Err(Error::EmbeddingShapeMismatch(format!(
                    "image {} embedding_row {} but matrix has {} rows",
                    img.image_id,
                    img.embedding_row,
                    image_embeddings.rows()
                )));
            }
            if cell_index.insert((img.model_id, img.prompt_id), i).is_some() {
                return Err(schema(
                    IMAGES_FILE,
                    i,
                    format!(
                        "second image for model {} prompt {}",
                        img.model_id, img.prompt_id
                    ),
                ));
            }
        }

        if !options.sparse && images.len() != models.len() * prompts.len() {
            return Err(Error::ReferentialIntegrity(format!(
                "dense catalog needs {} x {} = {} images, found {}",
                models.len(),
                prompts.len(),
                models.len() * prompts.len(),
                images.len()
            )));
        }

        Ok(Self {
            models,
            prompts,
            images,
            image_embeddings,
            prompt_embeddings,
            sparse: options.sparse,
            model_index,
            prompt_index,
            cell_index,
        })
    }

    pub fn models(&self) -> &[ModelRecord] {
        &self.models
    }

    pub fn prompts(&self) -> &[PromptRecord] {
        &self.prompts
    }

    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }

    pub fn image_embeddings(&self) -> &EmbeddingMatrix {
        &self.image_embeddings
    }

    pub fn prompt_embeddings(&self) -> &EmbeddingMatrix {
        &self.prompt_embeddings
    }

    pub fn is_sparse(&self) -> bool {
        self.sparse
    }

    pub fn dim(&self) -> usize {
        self.image_embeddings.dim()
    }

    pub fn model(&self, id: ModelId) -> Result<&ModelRecord> {
        self.model_index
            .get(&id)
            .map(|&i| &self.models[i])
            .ok_or_else(|| Error::not_found("model", id))
    }

    pub fn prompt(&self, id: PromptId) -> Result<&PromptRecord> {
        self.prompt_index
            .get(&id)
            .map(|&i| &self.prompts[i])
            .ok_or_else(|| Error::not_found("prompt", id))
    }

    /// The unique image generated by `model_id` for `prompt_id`.
    pub fn image_for(&self, model_id: ModelId, prompt_id: PromptId) -> Result<&ImageRecord> {
        self.model(model_id)?;
        self.prompt(prompt_id)?;
        self.cell_index
            .get(&(model_id, prompt_id))
            .map(|&i| &self.images[i])
            .ok_or_else(|| Error::not_found("image", format!("({model_id}, {prompt_id})")))
    }

    /// Images for one prompt, in catalog model order. Missing cells are skipped.
    pub fn images_for_prompt(&self, prompt_id: PromptId) -> Result<Vec<&ImageRecord>> {
        self.prompt(prompt_id)?;
        Ok(self
            .models
            .iter()
            .filter_map(|m| self.cell_index.get(&(m.model_id, prompt_id)))
            .map(|&i| &self.images[i])
            .collect())
    }

    pub fn image_embedding(&self, image: &ImageRecord) -> &[f32] {
        // embedding_row was validated at construction
        self.image_embeddings
            .row(image.embedding_row)
            .expect("validated embedding row")
    }

    pub fn prompt_embedding(&self, prompt_id: PromptId) -> Result<&[f32]> {
        let idx = *self
            .prompt_index
            .get(&prompt_id)
            .ok_or_else(|| Error::not_found("prompt", prompt_id))?;
        self.prompt_embeddings.row(idx)
    }

    /// Write the catalog in the on-disk layout described in the module docs.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_jsonl(&dir.join(MODELS_FILE), &self.models)?;
        write_jsonl(&dir.join(PROMPTS_FILE), &self.prompts)?;
        write_jsonl(&dir.join(IMAGES_FILE), &self.images)?;
        self.image_embeddings
            .write_to(BufWriter::new(File::create(dir.join(IMAGE_EMBEDDINGS_FILE))?))?;
        self.prompt_embeddings
            .write_to(BufWriter::new(File::create(dir.join(PROMPT_EMBEDDINGS_FILE))?))?;
        Ok(())
    }
}

fn schema(file: &str, index: usize, message: String) -> Error {
    Error::SchemaViolation {
        file: file.to_string(),
        line: index + 1,
        message,
    }
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

pub(crate) fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let reader = BufReader::new(open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::SchemaViolation {
            file: name.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Load and validate a catalog directory.
pub fn load_catalog(root: &Path, options: LoadOptions) -> Result<Catalog> {
    let models = read_jsonl(&root.join(MODELS_FILE))?;
    let prompts = read_jsonl(&root.join(PROMPTS_FILE))?;
    let images = read_jsonl(&root.join(IMAGES_FILE))?;
    let image_embeddings =
        EmbeddingMatrix::read_from(BufReader::new(open(&root.join(IMAGE_EMBEDDINGS_FILE))?))?;
    let prompt_embeddings =
        EmbeddingMatrix::read_from(BufReader::new(open(&root.join(PROMPT_EMBEDDINGS_FILE))?))?;
    Catalog::new(
        models,
        prompts,
        images,
        image_embeddings,
        prompt_embeddings,
        options,
    )
}

/// Summary line printed by `gemrec ingest`.
pub fn summary_line(catalog: &Catalog) -> String {
    format!(
        "models={} prompts={} images={} dim={}",
        catalog.models().len(),
        catalog.prompts().len(),
        catalog.images().len(),
        catalog.dim()
    )
}
