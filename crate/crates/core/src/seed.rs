//! Line-oriented seed files and the idempotent importer that loads them.
//!
//! ```text
//! # comment
//! C|name|description
//! M|source concept|attribute|target concept|mean|std
//! M|source concept|ann|ann name|mean|std
//! A|ann name|description|{"v":1,...}
//! MA|machine|platform|lat|lon|alt
//! MO|motor|command:arg=type,arg=type|command2:...
//! SE|sensor|modality|channels
//! ```
//!
//! `MO` and `SE` lines belong to the closest `MA` line above them. Entities
//! are written before mappings, so a mapping may name a concept defined
//! further down the file.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geo::GeoPoint;
use crate::graph::{self, MappingKind, StrengthGrade};
use crate::interop;
use crate::registry::{self, ArgType, Argument, Command, MachineDef, MotorDef, SensorDef};
use crate::store::Store;
use crate::{Error, Id};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SeedRecord {
    Concept {
        name: String,
        description: String,
    },
    Mapping {
        source: String,
        kind: MappingKind,
        target: String,
        strength: StrengthGrade,
    },
    Ann {
        name: String,
        description: String,
        notation: String,
    },
    Machine(MachineDef),
}

/// A parsed record and the line it started on.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedLine {
    pub line: usize,
    pub record: SeedRecord,
}

fn num(line: usize, what: &str, raw: &str) -> Result<f64, ParseError> {
    raw.trim().parse::<f64>().map_err(|_| ParseError {
        line,
        message: format!("{what} {raw:?} is not a number"),
    })
}

fn parse_motor(line: usize, fields: &[&str]) -> Result<MotorDef, ParseError> {
    let err = |message: String| ParseError { line, message };
    let mut commands = Vec::new();
    for spec in &fields[1..] {
        let (name, args) = spec.split_once(':').unwrap_or((spec, ""));
        let mut arguments = Vec::new();
        for arg in args.split(',').map(str::trim).filter(|a| !a.is_empty()) {
            let (an, ty) = arg
                .split_once('=')
                .ok_or_else(|| err(format!("argument {arg:?} must be name=type")))?;
            let ty: ArgType = ty.trim().parse().map_err(|e: Error| err(e.to_string()))?;
            arguments.push(Argument {
                name: an.trim().to_string(),
                ty,
            });
        }
        commands.push(Command {
            name: name.trim().to_string(),
            arguments,
        });
    }
    Ok(MotorDef {
        name: fields[0].trim().to_string(),
        commands,
    })
}

pub fn parse_seed(text: &str) -> Result<Vec<SeedLine>, ParseError> {
    let mut out: Vec<SeedLine> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let err = |message: String| ParseError { line, message };
        let fields: Vec<&str> = trimmed.split('|').collect();
        let want = |n: usize| {
            if fields.len() == n {
                Ok(())
            } else {
                Err(err(format!(
                    "{} record needs {n} fields, found {}",
                    fields[0],
                    fields.len()
                )))
            }
        };
        let record = match fields[0] {
            "C" => {
                want(3)?;
                SeedRecord::Concept {
                    name: fields[1].trim().to_string(),
                    description: fields[2].trim().to_string(),
                }
            }
            "M" => {
                want(6)?;
                let kind: MappingKind = fields[2].trim().parse().map_err(|e: Error| err(e.to_string()))?;
                let strength = StrengthGrade::new(num(line, "mean", fields[4])?, num(line, "std", fields[5])?)
                    .map_err(|e| err(e.to_string()))?;
                SeedRecord::Mapping {
                    source: fields[1].trim().to_string(),
                    kind,
                    target: fields[3].trim().to_string(),
                    strength,
                }
            }
            "A" => {
                want(4)?;
                SeedRecord::Ann {
                    name: fields[1].trim().to_string(),
                    description: fields[2].trim().to_string(),
                    notation: fields[3].trim().to_string(),
                }
            }
            "MA" => {
                want(6)?;
                SeedRecord::Machine(MachineDef {
                    name: fields[1].trim().to_string(),
                    platform: fields[2].trim().to_string(),
                    location: GeoPoint::new(
                        num(line, "lat", fields[3])?,
                        num(line, "lon", fields[4])?,
                        num(line, "alt", fields[5])?,
                    ),
                    motors: vec![],
                    sensors: vec![],
                })
            }
            "MO" | "SE" => {
                let Some(SeedLine {
                    record: SeedRecord::Machine(def),
                    ..
                }) = out
                    .iter_mut()
                    .rev()
                    .find(|l| matches!(l.record, SeedRecord::Machine(_)))
                else {
                    return Err(err(format!("{} line before any MA line", fields[0])));
                };
                if fields[0] == "MO" {
                    if fields.len() < 2 {
                        return Err(err("MO record needs a motor name".into()));
                    }
                    def.motors.push(parse_motor(line, &fields[1..])?);
                } else {
                    want(4)?;
                    def.sensors.push(SensorDef {
                        name: fields[1].trim().to_string(),
                        modality: fields[2].trim().parse().map_err(|e: Error| err(e.to_string()))?,
                        channel_count: fields[3]
                            .trim()
                            .parse()
                            .map_err(|_| err(format!("channel count {:?} is not an integer", fields[3])))?,
                    });
                }
                continue;
            }
            other => return Err(err(format!("unknown record type {other:?}"))),
        };
        if let SeedRecord::Concept { name, .. } | SeedRecord::Ann { name, .. } = &record {
            if name.is_empty() {
                return Err(err("name must not be empty".into()));
            }
        }
        out.push(SeedLine { line, record });
    }
    Ok(out)
}

/// The service operations the importer needs. Implemented for [`Store`]
/// (offline import) and by the HTTP client.
pub trait SeedSink {
    type Error: fmt::Display;

    fn find_concept(&mut self, name: &str) -> Result<Option<Id>, Self::Error>;
    fn create_concept(&mut self, name: &str, description: &str) -> Result<Id, Self::Error>;
    fn find_ann(&mut self, name: &str) -> Result<Option<Id>, Self::Error>;
    fn upload_ann(&mut self, name: &str, description: &str, notation: &str) -> Result<Id, Self::Error>;
    fn find_machine(&mut self, name: &str) -> Result<Option<Id>, Self::Error>;
    fn register_machine(&mut self, def: &MachineDef) -> Result<Id, Self::Error>;
    fn has_mapping(&mut self, source: Id, kind: MappingKind, target: Id) -> Result<bool, Self::Error>;
    fn map(&mut self, source: Id, kind: MappingKind, target: Id, strength: StrengthGrade) -> Result<(), Self::Error>;
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub concepts: usize,
    pub mappings: usize,
    pub anns: usize,
    pub machines: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportReport {
    pub created: Counts,
    /// Records that already existed.
    pub skipped: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum ImportError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("line {line}: {message}")]
    Apply { line: usize, message: String },
}

impl ImportError {
    pub fn line(&self) -> usize {
        match self {
            ImportError::Parse(p) => p.line,
            ImportError::Apply { line, .. } => *line,
        }
    }
}

/// Parses `text` completely, then writes whatever is missing. Running it a
/// second time creates nothing.
pub fn import_seed<S: SeedSink>(sink: &mut S, text: &str) -> Result<ImportReport, ImportError> {
    let lines = parse_seed(text)?;
    let mut report = ImportReport::default();
    let fail = |line: usize| {
        move |e: S::Error| ImportError::Apply {
            line,
            message: e.to_string(),
        }
    };

    for SeedLine { line, record } in &lines {
        let line = *line;
        match record {
            SeedRecord::Concept { name, description } => {
                if sink.find_concept(name).map_err(fail(line))?.is_some() {
                    report.skipped += 1;
                } else {
                    sink.create_concept(name, description).map_err(fail(line))?;
                    report.created.concepts += 1;
                }
            }
            SeedRecord::Ann {
                name,
                description,
                notation,
            } => {
                if sink.find_ann(name).map_err(fail(line))?.is_some() {
                    report.skipped += 1;
                } else {
                    sink.upload_ann(name, description, notation).map_err(fail(line))?;
                    report.created.anns += 1;
                }
            }
            SeedRecord::Machine(def) => {
                if sink.find_machine(&def.name).map_err(fail(line))?.is_some() {
                    report.skipped += 1;
                } else {
                    sink.register_machine(def).map_err(fail(line))?;
                    report.created.machines += 1;
                }
            }
            SeedRecord::Mapping { .. } => {}
        }
    }

    for SeedLine { line, record } in &lines {
        let SeedRecord::Mapping {
            source,
            kind,
            target,
            strength,
        } = record
        else {
            continue;
        };
        let line = *line;
        let missing = |what: &str, name: &str| ImportError::Apply {
            line,
            message: format!("unknown {what} {name:?}"),
        };
        let src = sink
            .find_concept(source)
            .map_err(fail(line))?
            .ok_or_else(|| missing("concept", source))?;
        let tgt = if kind.targets_concept() {
            sink.find_concept(target)
                .map_err(fail(line))?
                .ok_or_else(|| missing("concept", target))?
        } else {
            sink.find_ann(target)
                .map_err(fail(line))?
                .ok_or_else(|| missing("ann", target))?
        };
        if sink.has_mapping(src, *kind, tgt).map_err(fail(line))? {
            report.skipped += 1;
        } else {
            sink.map(src, *kind, tgt, *strength).map_err(fail(line))?;
            report.created.mappings += 1;
        }
    }
    Ok(report)
}

impl SeedSink for &Store {
    type Error = Error;

    fn find_concept(&mut self, name: &str) -> Result<Option<Id>, Error> {
        Ok(self.snapshot().concept_by_name(name).map(|c| c.id))
    }

    fn create_concept(&mut self, name: &str, description: &str) -> Result<Id, Error> {
        Ok(graph::create_concept(self, name, description)?.id)
    }

    fn find_ann(&mut self, name: &str) -> Result<Option<Id>, Error> {
        Ok(self.snapshot().ann_by_name(name).map(|a| a.id))
    }

    fn upload_ann(&mut self, name: &str, description: &str, notation: &str) -> Result<Id, Error> {
        Ok(interop::upload_ann(self, name, description, notation.as_bytes())?
            .package
            .id)
    }

    fn find_machine(&mut self, name: &str) -> Result<Option<Id>, Error> {
        Ok(self.snapshot().machine_by_name(name).map(|m| m.id))
    }

    fn register_machine(&mut self, def: &MachineDef) -> Result<Id, Error> {
        Ok(registry::register_machine(self, def)?.id)
    }

    fn has_mapping(&mut self, source: Id, kind: MappingKind, target: Id) -> Result<bool, Error> {
        Ok(self.snapshot().mapping(source, kind, target).is_some())
    }

    fn map(&mut self, source: Id, kind: MappingKind, target: Id, strength: StrengthGrade) -> Result<(), Error> {
        graph::map_relation(self, source, kind, target, strength).map(|_| ())
    }
}
