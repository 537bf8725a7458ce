use std::path::PathBuf;

use serde::Serialize;

use super::{
    build_dispatcher, dispatch, load_manifests, run_meta, sorted_records, write_file, AspectOutcome, RequestBuilder,
    RowStatus, RunConfig, RunError, ScoreRow, ScoreTable, META_DIR, SCORES_DIR,
};
use crate::backend::RawReply;
use crate::dataset::InstanceRecord;
use crate::parser::ParseStatus;
use crate::scoring::score_instance;
use crate::task::AspectKind;

#[derive(Debug, Clone)]
pub struct RateOutcome {
    pub table: ScoreTable,
    pub scores_path: PathBuf,
    pub details_path: PathBuf,
    pub meta_path: PathBuf,
    pub penalty_filled: usize,
}

#[derive(Serialize)]
struct AspectDetail<'a> {
    fingerprint: &'a str,
    reply_status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    parse_status: Option<&'static str>,
    sub_scores: &'a [f64],
    rationale: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    failure: Option<&'a str>,
}

#[derive(Serialize)]
struct DetailLine<'a> {
    instance_id: &'a str,
    task: &'static str,
    model_name: &'a str,
    sc: AspectDetail<'a>,
    pq: AspectDetail<'a>,
}

fn aspect_detail<'a>(reply: &'a RawReply, outcome: &'a AspectOutcome) -> AspectDetail<'a> {
    let (parse_status, sub_scores, rationale, failure) = match outcome {
        AspectOutcome::Rated(p) => (
            Some(p.status.as_str()),
            p.sub_scores.as_slice(),
            p.rationale.as_str(),
            p.failure.as_deref(),
        ),
        AspectOutcome::Failed(_) => (None, &[][..], "", None),
    };
    AspectDetail {
        fingerprint: &reply.request_fingerprint,
        reply_status: reply.status.as_str(),
        parse_status,
        sub_scores,
        rationale,
        failure,
    }
}

pub(crate) fn score_row(record: &InstanceRecord, sc: &AspectOutcome, pq: &AspectOutcome) -> ScoreRow {
    let mut row = ScoreRow {
        instance_id: record.instance_id.clone(),
        task: record.task,
        model_name: record.model_name.clone(),
        status: RowStatus::Error,
        scores: None,
        sc_detail: sc.detail().to_string(),
        pq_detail: pq.detail().to_string(),
    };
    let (AspectOutcome::Rated(s), AspectOutcome::Rated(p)) = (sc, pq) else {
        return row;
    };
    match score_instance(s, p) {
        Ok(score) => {
            row.status = RowStatus::Scored;
            row.scores = Some([score.sc, score.pq, score.overall]);
        }
        Err(_) => row.status = RowStatus::Dropped,
    }
    row
}

/// Rates every instance of every manifest and writes `scores/scores.tsv`,
/// `scores/details.jsonl` and `meta/run.json`. Per-instance failures become
/// `dropped` or `error` rows; only configuration problems, credentials and
/// replay misses abort the run.
pub async fn cmd_rate(cfg: &RunConfig) -> Result<RateOutcome, RunError> {
    let manifests = load_manifests(&cfg.manifests)?;
    let builder = RequestBuilder::from_config(cfg)?;
    let dispatcher = build_dispatcher(cfg)?;
    let meta = run_meta(cfg, &builder.templates)?;

    let records = sorted_records(&manifests);
    let mut requests = Vec::with_capacity(records.len() * 2);
    for rec in &records {
        requests.push(builder.build(rec, AspectKind::Sc, false)?);
        requests.push(builder.build(rec, AspectKind::Pq, cfg.pq_with_inputs)?);
    }
    let replies = dispatch(&dispatcher, &requests).await?;

    let mut table = ScoreTable {
        meta: meta.clone(),
        rows: Vec::with_capacity(records.len()),
    };
    let mut details = String::new();
    let mut penalty_filled = 0;
    for (i, rec) in records.iter().enumerate() {
        let (sc_req, pq_req) = (&requests[2 * i], &requests[2 * i + 1]);
        let (sc_rep, pq_rep) = (&replies[2 * i], &replies[2 * i + 1]);
        let sc = AspectOutcome::from_reply(sc_rep, sc_req.expected_arity, cfg.seed);
        let pq = AspectOutcome::from_reply(pq_rep, pq_req.expected_arity, cfg.seed);
        for o in [&sc, &pq] {
            if let AspectOutcome::Rated(p) = o {
                if p.status == ParseStatus::PenaltyFilled {
                    penalty_filled += 1;
                    tracing::warn!(instance = %rec.instance_id, aspect = %p.aspect, failure = ?p.failure, "penalty fill");
                }
            }
        }
        let row = score_row(rec, &sc, &pq);
        if row.status != RowStatus::Scored {
            tracing::warn!(instance = %rec.instance_id, sc = row.sc_detail, pq = row.pq_detail, "instance not scored");
        }
        let line = DetailLine {
            instance_id: &rec.instance_id,
            task: rec.task.as_str(),
            model_name: &rec.model_name,
            sc: aspect_detail(sc_rep, &sc),
            pq: aspect_detail(pq_rep, &pq),
        };
        details.push_str(&serde_json::to_string(&line).expect("detail lines serialize"));
        details.push('\n');
        table.rows.push(row);
    }
    table.sort();

    let scores_path = cfg.output_dir.join(SCORES_DIR).join("scores.tsv");
    let details_path = cfg.output_dir.join(SCORES_DIR).join("details.jsonl");
    let meta_path = cfg.output_dir.join(META_DIR).join("run.json");
    write_file(&scores_path, &table.to_tsv())?;
    write_file(&details_path, &details)?;

    let run = serde_json::json!({
        "meta": meta,
        "backend": {
            "kind": cfg.backend.kind.as_str(),
            "model_name": cfg.backend.model_name,
            "endpoint_url": cfg.backend.endpoint_url,
            "api_key_env": cfg.backend.api_key_env,
            "max_in_flight": cfg.backend.max_in_flight,
            "retry_limit": cfg.backend.retry_limit,
            "timeout_secs": cfg.backend.timeout_secs,
            "refusal_keywords": cfg.backend.refusal_keywords,
        },
        "counts": {
            "instances": table.rows.len(),
            "scored": table.count(RowStatus::Scored),
            "dropped": table.count(RowStatus::Dropped),
            "error": table.count(RowStatus::Error),
            "penalty_filled_aspects": penalty_filled,
        },
    });
    write_file(&meta_path, &(serde_json::to_string_pretty(&run).expect("run metadata serializes") + "\n"))?;

    Ok(RateOutcome {
        table,
        scores_path,
        details_path,
        meta_path,
        penalty_filled,
    })
}
