//! Task catalog: built-in task specifications plus user-defined tasks.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::sel::{self, check_label, Tier};

const BUILTIN_CATALOG: &str = include_str!("../data/catalog.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    SyntaxParsing,
    InformationExtraction,
    SemanticAnalysis,
    SentimentOpinionMining,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::SyntaxParsing,
        Category::InformationExtraction,
        Category::SemanticAnalysis,
        Category::SentimentOpinionMining,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::SyntaxParsing => "syntax-parsing",
            Category::InformationExtraction => "information-extraction",
            Category::SemanticAnalysis => "semantic-analysis",
            Category::SentimentOpinionMining => "sentiment-opinion-mining",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    BuiltIn,
    #[default]
    UserDefined,
}

/// One worked example shown to the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub input: String,
    /// Expected output, in the structure language.
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub name: String,
    pub category: Category,
    pub description: String,
    pub demonstration: Demonstration,
    #[serde(default)]
    pub label_set: Vec<String>,
    pub executing_format: String,
    pub tier: Tier,
    #[serde(default)]
    pub origin: Origin,
    /// Catalog padding beyond the showcase tasks.
    #[serde(default)]
    pub reconstructed: bool,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && !id.starts_with('-')
        && !id.ends_with('-')
        && !id.contains("--")
        && id
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-')
}

/// Returns every invariant violation of `spec`. Id uniqueness is checked
/// at registration.
pub fn validate_task_spec(spec: &TaskSpec) -> Result<(), Vec<String>> {
    let mut violations = Vec::new();
    if spec.id.trim().is_empty() {
        violations.push("id empty".to_string());
    } else if !valid_id(&spec.id) {
        violations.push(format!(
            "id `{}` must be lowercase and hyphen-separated",
            spec.id
        ));
    }
    if spec.name.trim().is_empty() {
        violations.push("name empty".into());
    }
    if spec.description.trim().is_empty() {
        violations.push("description empty".into());
    }
    if spec.demonstration.input.trim().is_empty() {
        violations.push("demonstration input empty".into());
    }
    let demo = sel::parse(&spec.demonstration.output, spec.tier);
    for issue in &demo.issues {
        violations.push(format!("demonstration output: {issue}"));
    }
    if demo.issues.is_empty() && demo.entries.is_empty() {
        violations.push("demonstration output has no entries".into());
    }
    if let Err(errs) = sel::skeleton_check(&spec.executing_format, spec.tier) {
        violations.extend(errs.into_iter().map(|e| format!("executing format: {e}")));
    }
    for (i, label) in spec.label_set.iter().enumerate() {
        if let Err(e) = check_label(label) {
            violations.push(format!("label {i}: {e}"));
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("task `{0}` not found")]
    NotFound(String),
    #[error("task id `{0}` is already registered")]
    Duplicate(String),
    #[error("task id `{0}` belongs to a built-in task")]
    BuiltinCollision(String),
    #[error("invalid task spec: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("catalog task `{task}` is invalid: {}", .violations.join("; "))]
    InvalidCatalogTask { task: String, violations: Vec<String> },
    #[error("catalog file {path}: {message}")]
    CatalogFile { path: PathBuf, message: String },
}

#[derive(Debug, Deserialize, Serialize)]
struct CatalogFile {
    #[serde(default, rename = "task")]
    tasks: Vec<TaskSpec>,
}

/// Tasks by id, with a per-category index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaskCatalog {
    tasks: BTreeMap<String, TaskSpec>,
    by_category: BTreeMap<Category, Vec<String>>,
}

impl TaskCatalog {
    /// Parses catalog text, stamping every record with `origin` and
    /// validating it.
    pub fn from_toml(text: &str, origin: Origin) -> Result<Self, RegistryError> {
        let file: CatalogFile = toml::from_str(text).map_err(|e| RegistryError::CatalogFile {
            path: PathBuf::from("<inline>"),
            message: e.to_string(),
        })?;
        let mut catalog = TaskCatalog::default();
        for mut spec in file.tasks {
            spec.origin = origin;
            validate_task_spec(&spec).map_err(|violations| RegistryError::InvalidCatalogTask {
                task: spec.id.clone(),
                violations,
            })?;
            if catalog.tasks.contains_key(&spec.id) {
                return Err(RegistryError::Duplicate(spec.id));
            }
            catalog.insert(spec);
        }
        Ok(catalog)
    }

    pub fn from_file(path: &Path, origin: Origin) -> Result<Self, RegistryError> {
        let text = std::fs::read_to_string(path).map_err(|e| RegistryError::CatalogFile {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text, origin).map_err(|e| match e {
            RegistryError::CatalogFile { message, .. } => RegistryError::CatalogFile {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        let file = CatalogFile {
            tasks: self.list().into_iter().cloned().collect(),
        };
        toml::to_string_pretty(&file).expect("task specs serialize to TOML")
    }

    fn insert(&mut self, spec: TaskSpec) {
        let ids = self.by_category.entry(spec.category).or_default();
        if let Err(pos) = ids.binary_search(&spec.id) {
            ids.insert(pos, spec.id.clone());
        }
        self.tasks.insert(spec.id.clone(), spec);
    }

    pub fn get(&self, id: &str) -> Option<&TaskSpec> {
        self.tasks.get(id)
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// All tasks ordered by category, then id.
    pub fn list(&self) -> Vec<&TaskSpec> {
        self.by_category
            .values()
            .flatten()
            .filter_map(|id| self.tasks.get(id))
            .collect()
    }

    pub fn ids_in(&self, category: Category) -> &[String] {
        self.by_category
            .get(&category)
            .map(Vec::as_slice)
            .unwrap_or_default()
    }

    pub fn user_defined(&self) -> impl Iterator<Item = &TaskSpec> {
        self.tasks
            .values()
            .filter(|t| t.origin == Origin::UserDefined)
    }

    /// Adds a user-defined task.
    pub fn register_task(&mut self, mut spec: TaskSpec) -> Result<(), RegistryError> {
        validate_task_spec(&spec).map_err(RegistryError::Invalid)?;
        if let Some(existing) = self.tasks.get(&spec.id) {
            return Err(match existing.origin {
                Origin::BuiltIn => RegistryError::BuiltinCollision(spec.id),
                Origin::UserDefined => RegistryError::Duplicate(spec.id),
            });
        }
        spec.origin = Origin::UserDefined;
        self.insert(spec);
        Ok(())
    }

    /// Merges another catalog's tasks into this one as user-defined tasks.
    pub fn merge_user(&mut self, other: TaskCatalog) -> Result<(), RegistryError> {
        for spec in other.tasks.into_values() {
            self.register_task(spec)?;
        }
        Ok(())
    }

    /// Executing format and tier of an existing task, for pre-filling a new
    /// task definition.
    pub fn derive_format_from_similar(&self, id: &str) -> Result<(String, Tier), RegistryError> {
        self.get(id)
            .map(|t| (t.executing_format.clone(), t.tier))
            .ok_or_else(|| RegistryError::NotFound(id.to_string()))
    }
}

/// The catalog shipped with the crate.
pub fn load_builtin_catalog() -> Result<TaskCatalog, RegistryError> {
    TaskCatalog::from_toml(BUILTIN_CATALOG, Origin::BuiltIn)
}

/// Shared catalog with single-writer registration and optional persistence
/// of user-defined tasks.
#[derive(Debug, Clone)]
pub struct TaskRegistry {
    catalog: Arc<RwLock<TaskCatalog>>,
    writer: Arc<Mutex<()>>,
    user_file: Option<PathBuf>,
}

impl TaskRegistry {
    pub fn new(catalog: TaskCatalog) -> Self {
        TaskRegistry {
            catalog: Arc::new(RwLock::new(catalog)),
            writer: Arc::new(Mutex::new(())),
            user_file: None,
        }
    }

    /// Opens a registry whose user-defined tasks live in `user_file`. A
    /// missing file is treated as empty.
    pub fn with_user_file(mut catalog: TaskCatalog, user_file: PathBuf) -> Result<Self, RegistryError> {
        if user_file.exists() {
            let user = TaskCatalog::from_file(&user_file, Origin::UserDefined)?;
            catalog.merge_user(user)?;
        }
        let mut reg = Self::new(catalog);
        reg.user_file = Some(user_file);
        Ok(reg)
    }

    pub fn get(&self, id: &str) -> Option<TaskSpec> {
        self.read().get(id).cloned()
    }

    pub fn list(&self) -> Vec<TaskSpec> {
        self.read().list().into_iter().cloned().collect()
    }

    pub fn snapshot(&self) -> TaskCatalog {
        self.read().clone()
    }

    pub fn derive_format_from_similar(&self, id: &str) -> Result<(String, Tier), RegistryError> {
        self.read().derive_format_from_similar(id)
    }

    pub fn register(&self, spec: TaskSpec) -> Result<TaskSpec, RegistryError> {
        let _guard = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        // register on a copy so a failed write leaves the shared catalog untouched
        let mut next = self.read().clone();
        let id = spec.id.clone();
        next.register_task(spec)?;
        if let Some(path) = &self.user_file {
            let mut user = TaskCatalog::default();
            for t in next.user_defined() {
                user.insert(t.clone());
            }
            write_atomically(path, &user.to_toml()).map_err(|e| RegistryError::CatalogFile {
                path: path.clone(),
                message: e.to_string(),
            })?;
        }
        let stored = next.get(&id).cloned().expect("just registered");
        *self.catalog.write().unwrap_or_else(|e| e.into_inner()) = next;
        Ok(stored)
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, TaskCatalog> {
        self.catalog.read().unwrap_or_else(|e| e.into_inner())
    }
}

pub(crate) fn write_atomically(path: &Path, contents: &str) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents)?;
    std::fs::rename(tmp, path)
}
