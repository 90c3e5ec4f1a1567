//! Per-API orchestration: raw rule generation, validation, refinement and
//! classification. This module owns the validation verdict logic.

pub mod classify;
pub mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consistency::{self, LocationRelation};
use crate::corpus::{self, ApiRecord, LibraryConfig};
use crate::harness::{ArtifactKind, CodeArtifact, Harness, HarnessError, Phase};
use crate::llm::{Gateway, ScopeUsage, TaskKind};
use crate::prompt::{self, RawApsr};
use crate::rem::{self, ClusterMember, Relatedness};

pub use classify::{classify_text, Category};
pub use store::{
    load_rules, ApiSummaryRecord, ConcreteApsr, ConcreteRecord, Provenance, RawRuleRecord, RuleStore, RuleStoreRecord,
    StoreError, StoreFilter, SCHEMA_VERSION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VerdictKind {
    Validated,
    Rejected,
    Unverifiable,
}

impl VerdictKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VerdictKind::Validated => "Validated",
            VerdictKind::Rejected => "Rejected",
            VerdictKind::Unverifiable => "Unverifiable",
        }
    }
}

impl std::str::FromStr for VerdictKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [VerdictKind::Validated, VerdictKind::Rejected, VerdictKind::Unverifiable]
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown verdict `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Evidence {
    ApiRelatedRem {
        error_kind: String,
        signature: String,
        rem_artifact: String,
    },
    CleanRun {
        exit_code: Option<i32>,
    },
    UnrelatedRem {
        error_kind: String,
        reason: String,
        rem_artifact: String,
    },
    RightCodeUnavailable {
        repairs: usize,
        last_phase: String,
    },
    RepairExhausted {
        repairs: usize,
    },
    Inconsistent {
        rule_param: usize,
        rule_loc: LocationRelation,
        code_param: Option<usize>,
        code_loc: LocationRelation,
    },
    Timeout,
    LlmFailure {
        message: String,
    },
    HarnessFailure {
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationVerdict {
    pub kind: VerdictKind,
    pub evidence: Evidence,
}

impl ValidationVerdict {
    fn new(kind: VerdictKind, evidence: Evidence) -> Self {
        ValidationVerdict { kind, evidence }
    }

    fn unverifiable(evidence: Evidence) -> Self {
        Self::new(VerdictKind::Unverifiable, evidence)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRuleResult {
    pub rule_id: String,
    pub rule: RawApsr,
    pub verdict: ValidationVerdict,
    pub artifacts: Vec<String>,
    /// Evidence bundle used for clustering; present for Validated rules.
    pub member: Option<ClusterMember>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    Generated,
    Validated,
    Refined,
}

/// Durable per-API progress, written after each stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiCheckpoint {
    pub api_name: String,
    pub param_count: usize,
    pub stage: Stage,
    pub raw: Vec<(String, RawApsr)>,
    pub results: Vec<RawRuleResult>,
    pub concrete: Vec<ConcreteApsr>,
    pub status: String,
    pub notes: Vec<String>,
    pub usage: ScopeUsage,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("run interrupted after {0} checkpoints")]
    Interrupted(usize),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0}")]
    Other(String),
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let err = |source| PipelineError::Io { path: path.to_path_buf(), source };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(err)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(err)?;
    fs::rename(&tmp, path).map_err(err)
}

/// Shared, read-only state for running the stages.
pub struct PipelineContext<'a> {
    pub config: &'a LibraryConfig,
    pub symbols: BTreeSet<String>,
    pub gateway: &'a Gateway,
    pub harness: &'a Harness,
    /// Root of the run directory; artifact ids are relative to it.
    pub run_dir: PathBuf,
    pub token_ceiling: usize,
}

fn artifact_tag(rule_id: &str) -> String {
    rule_id.replace('#', "_")
}

fn normalize_text(t: &str) -> String {
    t.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase().trim_end_matches('.').to_string()
}

impl PipelineContext<'_> {
    fn save_artifact(&self, api: &str, name: &str, text: &str) -> Result<String, PipelineError> {
        let rel = format!("artifacts/{}/{name}", artifact_tag(api));
        write_file(&self.run_dir.join(&rel), text.as_bytes())?;
        Ok(rel)
    }

    /// One raw-generation session per parameter; identical sentences are
    /// kept once.
    pub fn generate_raw_apsrs(&self, api: &ApiRecord, notes: &mut Vec<String>) -> Vec<(String, RawApsr)> {
        let mut out: Vec<(String, RawApsr)> = Vec::new();
        let mut seen = BTreeSet::new();
        for idx in 1..=api.param_count {
            let p = match prompt::build_raw_apsr_prompt_with_ceiling(api, idx, self.token_ceiling) {
                Ok(p) => p,
                Err(e) => {
                    notes.push(format!("p{idx}: {e}"));
                    continue;
                }
            };
            let mut session = self.gateway.open_session(TaskKind::RawGeneration, &api.api_name);
            session.set_system(&p.system_text);
            let reply = match self.gateway.send(&mut session, &p.user_text) {
                Ok(r) => r,
                Err(e) => {
                    notes.push(format!("p{idx}: {e}"));
                    continue;
                }
            };
            match prompt::parse_raw_apsr_response(&reply, api, idx) {
                Ok(parsed) => {
                    if parsed.warnings > 0 {
                        notes.push(format!("p{idx}: dropped {} malformed rule line(s)", parsed.warnings));
                    }
                    let mut k = 0;
                    for rule in parsed.rules {
                        if !seen.insert(normalize_text(&rule.rule_text)) {
                            continue;
                        }
                        k += 1;
                        out.push((format!("{}#p{idx}.{k}", api.api_name), rule));
                    }
                }
                Err(e) => notes.push(format!("p{idx}: {e}")),
            }
        }
        out
    }

    /// A right code whose monitored run is clean, or the evidence of why
    /// none could be produced.
    pub fn obtain_right_code(&self, api: &ApiRecord) -> Result<CodeArtifact, Evidence> {
        let p = prompt::build_right_code_prompt(api, self.config);
        let mut session = self.gateway.open_session(TaskKind::RightCode, &api.api_name);
        session.set_system(&p.system_text);
        let reply = self
            .gateway
            .send(&mut session, &p.user_text)
            .map_err(|e| Evidence::LlmFailure { message: e.to_string() })?;
        let code = prompt::extract_program(&reply);
        match self.harness.repair_loop(self.gateway, ArtifactKind::RightCode, session, code, &api.api_name, "right") {
            Ok((artifact, _, _)) => Ok(artifact),
            Err(HarnessError::RepairExhausted(ex)) => Err(Evidence::RightCodeUnavailable {
                repairs: ex.artifact.repair_count,
                last_phase: format!("{:?}", ex.outcome.phase),
            }),
            Err(HarnessError::Llm(e)) => Err(Evidence::LlmFailure { message: e.to_string() }),
            Err(e) => Err(Evidence::HarnessFailure { message: e.to_string() }),
        }
    }

    /// Violation prompt, compile repair, consistency check (one corrective
    /// retry), monitored run and API-relatedness, folded into a verdict.
    pub fn validate_rule(&self, api: &ApiRecord, rule_id: &str, rule: &RawApsr, right: &CodeArtifact) -> RawRuleResult {
        let mut artifacts = Vec::new();
        let verdict = self.validate_inner(api, rule_id, rule, right, &mut artifacts);
        let (verdict, member) = match verdict {
            Ok((v, m)) => (v, m),
            Err(v) => (v, None),
        };
        RawRuleResult { rule_id: rule_id.to_string(), rule: rule.clone(), verdict, artifacts, member }
    }

    fn validate_inner(
        &self,
        api: &ApiRecord,
        rule_id: &str,
        rule: &RawApsr,
        right: &CodeArtifact,
        artifacts: &mut Vec<String>,
    ) -> Result<(ValidationVerdict, Option<ClusterMember>), ValidationVerdict> {
        let llm_fail =
            |e: crate::llm::LlmError| ValidationVerdict::unverifiable(Evidence::LlmFailure { message: e.to_string() });
        let tag = artifact_tag(rule_id);
        let p = prompt::build_violation_prompt(&right.source_text, &api.declaration, rule);
        let mut session = self.gateway.open_session(TaskKind::ViolationCode, &api.api_name);
        session.set_system(&p.system_text);
        let reply = self.gateway.send(&mut session, &p.user_text).map_err(llm_fail)?;
        let mut code = prompt::extract_program(&reply);
        let mut retried = false;
        loop {
            let scratch_tag = if retried { format!("{tag}-retry") } else { tag.clone() };
            let (artifact, outcome, returned) = match self.harness.repair_loop(
                self.gateway,
                ArtifactKind::ViolationCode,
                session,
                code,
                &api.api_name,
                &scratch_tag,
            ) {
                Ok(r) => r,
                Err(HarnessError::RepairExhausted(ex)) => {
                    if !ex.artifact.source_text.is_empty() {
                        artifacts.push(
                            self.save_artifact(&api.api_name, &format!("{tag}.violation.c"), &ex.artifact.source_text)
                                .map_err(|e| {
                                    ValidationVerdict::unverifiable(Evidence::HarnessFailure { message: e.to_string() })
                                })?,
                        );
                    }
                    return Err(ValidationVerdict::unverifiable(Evidence::RepairExhausted {
                        repairs: ex.artifact.repair_count,
                    }));
                }
                Err(HarnessError::Llm(e)) => return Err(llm_fail(e)),
                Err(e) => {
                    return Err(ValidationVerdict::unverifiable(Evidence::HarnessFailure { message: e.to_string() }))
                }
            };
            session = returned;
            let check = consistency::check_violation(&right.source_text, &artifact.source_text, api, rule);
            if !check.consistent {
                let code_target = check
                    .code
                    .unwrap_or(consistency::ModificationTarget { c_para: None, c_loc: LocationRelation::Unknown });
                if retried {
                    let rel = self
                        .save_artifact(&api.api_name, &format!("{tag}.violation.c"), &artifact.source_text)
                        .map_err(|e| {
                        ValidationVerdict::unverifiable(Evidence::HarnessFailure { message: e.to_string() })
                    })?;
                    artifacts.push(rel);
                    return Err(ValidationVerdict::unverifiable(Evidence::Inconsistent {
                        rule_param: check.rule.r_para,
                        rule_loc: check.rule.r_loc,
                        code_param: code_target.c_para,
                        code_loc: code_target.c_loc,
                    }));
                }
                let text = prompt::build_consistency_retry_prompt(
                    check.rule.r_para,
                    check.rule.r_loc.as_str(),
                    code_target.c_para,
                    code_target.c_loc.as_str(),
                );
                let reply = self.gateway.send(&mut session, &text).map_err(llm_fail)?;
                code = prompt::extract_program(&reply);
                retried = true;
                continue;
            }
            let save = |name: String, text: &str| {
                self.save_artifact(&api.api_name, &name, text)
                    .map_err(|e| ValidationVerdict::unverifiable(Evidence::HarnessFailure { message: e.to_string() }))
            };
            artifacts.push(save(format!("{tag}.violation.c"), &artifact.source_text)?);
            return match outcome.phase {
                Phase::Timeout => Err(ValidationVerdict::unverifiable(Evidence::Timeout)),
                Phase::Success => Ok((
                    ValidationVerdict::new(VerdictKind::Rejected, Evidence::CleanRun { exit_code: outcome.exit_code }),
                    None,
                )),
                Phase::CompileError => {
                    Err(ValidationVerdict::unverifiable(Evidence::RepairExhausted { repairs: artifact.repair_count }))
                }
                Phase::RuntimeError => {
                    let rem_report = outcome.rem.expect("runtime error carries a report");
                    let rem_rel = save(format!("{tag}.rem.txt"), &rem_report.raw_text)?;
                    artifacts.push(rem_rel.clone());
                    let unit = corpus::parse_c_unit(crate::harness::PROGRAM_FILE, artifact.source_text.as_bytes())
                        .map_err(|e| {
                            ValidationVerdict::unverifiable(Evidence::HarnessFailure { message: e.to_string() })
                        })?;
                    let related = rem::api_relatedness(&rem_report, &api.api_name, &unit, &self.symbols);
                    if related == Relatedness::Related {
                        let signature = rem::normalize_signature(&rem_report, &self.symbols).to_string();
                        let member = ClusterMember {
                            rule_id: rule_id.to_string(),
                            param_index: rule.param_index,
                            rule_text: rule.rule_text.clone(),
                            right_code: right.source_text.clone(),
                            violation_code: artifact.source_text.clone(),
                            rem: rem_report.clone(),
                        };
                        Ok((
                            ValidationVerdict::new(
                                VerdictKind::Validated,
                                Evidence::ApiRelatedRem {
                                    error_kind: rem_report.error_kind.clone(),
                                    signature,
                                    rem_artifact: rem_rel,
                                },
                            ),
                            Some(member),
                        ))
                    } else {
                        Ok((
                            ValidationVerdict::new(
                                VerdictKind::Rejected,
                                Evidence::UnrelatedRem {
                                    error_kind: rem_report.error_kind.clone(),
                                    reason: format!("{related:?}"),
                                    rem_artifact: rem_rel,
                                },
                            ),
                            None,
                        ))
                    }
                }
            };
        }
    }

    /// One refinement session for a cluster; the first rule line is kept.
    pub fn refine_cluster(
        &self,
        api: &ApiRecord,
        cluster: &rem::ViolationCluster,
        artifact_ids: Vec<String>,
    ) -> Result<ConcreteApsr, String> {
        let p = prompt::build_refinement_prompt(cluster, api).map_err(|e| e.to_string())?;
        let mut session = self.gateway.open_session(TaskKind::Refinement, &api.api_name);
        session.set_system(&p.system_text);
        let reply = self.gateway.send(&mut session, &p.user_text).map_err(|e| e.to_string())?;
        let refined = prompt::parse_refinement_response(&reply, api.param_count).map_err(|e| e.to_string())?;
        Ok(ConcreteApsr {
            rule_id: String::new(),
            api_name: api.api_name.clone(),
            param_index: refined.param_index,
            category: classify_text(&refined.rule_text),
            rule_text: refined.rule_text,
            provenance: Provenance {
                raw_rule_ids: cluster.members.iter().map(|m| m.rule_id.clone()).collect(),
                cluster_signature: cluster.signature.to_string(),
                artifact_ids,
            },
        })
    }

    /// Run (or resume) the stages for one API up to and including `until`,
    /// calling `sink` after each completed stage.
    pub fn run_api(
        &self,
        api: &ApiRecord,
        resume: Option<ApiCheckpoint>,
        until: Stage,
        sink: &(dyn Fn(&ApiCheckpoint) -> Result<(), PipelineError> + Sync),
    ) -> Result<ApiCheckpoint, PipelineError> {
        let base_usage = resume.as_ref().map(|c| c.usage).unwrap_or_default();
        let usage_now = |gw: &Gateway| {
            let cur = gw.scope_usage(&api.api_name);
            let mut u = base_usage;
            u.requests += cur.requests;
            u.usage += cur.usage;
            u
        };
        let mut ck = match resume {
            Some(c) => c,
            None => {
                let mut notes = Vec::new();
                let raw = self.generate_raw_apsrs(api, &mut notes);
                let ck = ApiCheckpoint {
                    api_name: api.api_name.clone(),
                    param_count: api.param_count,
                    stage: Stage::Generated,
                    raw,
                    results: Vec::new(),
                    concrete: Vec::new(),
                    status: String::new(),
                    notes,
                    usage: usage_now(self.gateway),
                };
                sink(&ck)?;
                ck
            }
        };
        if ck.stage == Stage::Generated && until > Stage::Generated {
            if ck.raw.is_empty() {
                ck.status = "no_raw_rules".into();
            } else {
                match self.obtain_right_code(api) {
                    Ok(right) => {
                        self.save_artifact(&api.api_name, "right.c", &right.source_text)?;
                        for (id, rule) in &ck.raw {
                            let mut result = self.validate_rule(api, id, rule, &right);
                            result.artifacts.insert(0, format!("artifacts/{}/right.c", artifact_tag(&api.api_name)));
                            ck.results.push(result);
                        }
                    }
                    Err(evidence) => {
                        ck.status = "right_code_unverifiable".into();
                        for (id, rule) in &ck.raw {
                            ck.results.push(RawRuleResult {
                                rule_id: id.clone(),
                                rule: rule.clone(),
                                verdict: ValidationVerdict::unverifiable(evidence.clone()),
                                artifacts: Vec::new(),
                                member: None,
                            });
                        }
                    }
                }
            }
            ck.stage = Stage::Validated;
            ck.usage = usage_now(self.gateway);
            sink(&ck)?;
        }
        if ck.stage == Stage::Validated && until > Stage::Validated {
            let members: Vec<ClusterMember> = ck.results.iter().filter_map(|r| r.member.clone()).collect();
            let artifacts_of: BTreeMap<&str, &Vec<String>> =
                ck.results.iter().map(|r| (r.rule_id.as_str(), &r.artifacts)).collect();
            let clusters = rem::cluster_by_signature(members, &self.symbols);
            let mut concrete: Vec<ConcreteApsr> = Vec::new();
            for cluster in &clusters {
                let ids: Vec<String> = cluster
                    .members
                    .iter()
                    .flat_map(|m| artifacts_of.get(m.rule_id.as_str()).into_iter().flat_map(|v| v.iter().cloned()))
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect();
                match self.refine_cluster(api, cluster, ids) {
                    Ok(c) => merge_concrete(&mut concrete, c),
                    Err(e) => {
                        ck.notes.push(format!("cluster `{}` needs review: {e}", cluster.signature));
                        ck.status = "needs_review".into();
                    }
                }
            }
            for (k, c) in concrete.iter_mut().enumerate() {
                c.rule_id = format!("{}#c{}", api.api_name, k + 1);
            }
            ck.concrete = concrete;
            if ck.status.is_empty() {
                ck.status = "complete".into();
            }
            ck.stage = Stage::Refined;
            ck.usage = usage_now(self.gateway);
            sink(&ck)?;
        }
        Ok(ck)
    }
}

/// Merge rules with equal (api, param, category, normalized text), keeping
/// the union of their provenance.
fn merge_concrete(into: &mut Vec<ConcreteApsr>, new: ConcreteApsr) {
    let key = |c: &ConcreteApsr| (c.api_name.clone(), c.param_index, c.category, normalize_text(&c.rule_text));
    if let Some(existing) = into.iter_mut().find(|c| key(c) == key(&new)) {
        for id in new.provenance.raw_rule_ids {
            if !existing.provenance.raw_rule_ids.contains(&id) {
                existing.provenance.raw_rule_ids.push(id);
            }
        }
        for id in new.provenance.artifact_ids {
            if !existing.provenance.artifact_ids.contains(&id) {
                existing.provenance.artifact_ids.push(id);
            }
        }
        existing.provenance.cluster_signature =
            format!("{}; {}", existing.provenance.cluster_signature, new.provenance.cluster_signature);
    } else {
        into.push(new);
    }
}

/// Run every API with at most `jobs` workers. Results are returned in input
/// order regardless of completion order.
pub fn run_apis(
    ctx: &PipelineContext<'_>,
    apis: &[ApiRecord],
    mut resume: BTreeMap<String, ApiCheckpoint>,
    until: Stage,
    jobs: usize,
    sink: &(dyn Fn(&ApiCheckpoint) -> Result<(), PipelineError> + Sync),
) -> Result<Vec<ApiCheckpoint>, PipelineError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| PipelineError::Other(e.to_string()))?;
    let work: Vec<(&ApiRecord, Option<ApiCheckpoint>)> = apis.iter().map(|a| (a, resume.remove(&a.api_name))).collect();
    pool.install(|| {
        work.into_par_iter()
            .map(|(api, ck)| match ck {
                Some(c) if c.stage >= until => Ok(c),
                other => ctx.run_api(api, other, until, sink),
            })
            .collect()
    })
}

/// Store records for one finished API: raw rules, concrete rules, summary.
pub fn records_for(ck: &ApiCheckpoint, library_id: &str, backend: &str, created_at: &str) -> Vec<RuleStoreRecord> {
    let mut out = Vec::new();
    for r in &ck.results {
        out.push(RuleStoreRecord::Raw(RawRuleRecord {
            schema_version: SCHEMA_VERSION,
            rule_id: r.rule_id.clone(),
            library_id: library_id.to_string(),
            api_name: ck.api_name.clone(),
            param_index: r.rule.param_index,
            rule_text: r.rule.rule_text.clone(),
            violation_example: r.rule.violation_example.clone(),
            verdict: r.verdict.kind,
            evidence: r.verdict.evidence.clone(),
            artifacts: r.artifacts.clone(),
            created_at: created_at.to_string(),
        }));
    }
    let verdict_of: BTreeMap<&str, VerdictKind> =
        ck.results.iter().map(|r| (r.rule_id.as_str(), r.verdict.kind)).collect();
    for c in &ck.concrete {
        let verdict_trail = c
            .provenance
            .raw_rule_ids
            .iter()
            .map(|id| {
                let v = verdict_of.get(id.as_str()).map_or("Unknown", |v| v.as_str());
                format!("{id}: {v}")
            })
            .collect();
        out.push(RuleStoreRecord::Concrete(ConcreteRecord {
            schema_version: SCHEMA_VERSION,
            library_id: library_id.to_string(),
            rule: c.clone(),
            verdict_trail,
            created_at: created_at.to_string(),
        }));
    }
    out.push(RuleStoreRecord::ApiSummary(ApiSummaryRecord {
        schema_version: SCHEMA_VERSION,
        rule_id: format!("{}#summary", ck.api_name),
        library_id: library_id.to_string(),
        api_name: ck.api_name.clone(),
        status: ck.status.clone(),
        param_count: ck.param_count,
        raw_rules: ck.results.len(),
        concrete_rules: ck.concrete.len(),
        backend: backend.to_string(),
        requests: ck.usage.requests,
        prompt_tokens: ck.usage.usage.prompt_tokens,
        completion_tokens: ck.usage.usage.completion_tokens,
        notes: ck.notes.clone(),
        created_at: created_at.to_string(),
    }));
    out
}

/// Counts checkpoint writes and interrupts the run after `limit` of them.
pub struct CheckpointBudget {
    limit: Option<usize>,
    written: AtomicUsize,
}

impl CheckpointBudget {
    pub fn new(limit: Option<usize>) -> Self {
        CheckpointBudget { limit, written: AtomicUsize::new(0) }
    }

    pub fn tick(&self) -> Result<(), PipelineError> {
        let n = self.written.fetch_add(1, Ordering::SeqCst) + 1;
        match self.limit {
            Some(limit) if n >= limit => Err(PipelineError::Interrupted(n)),
            _ => Ok(()),
        }
    }
}
