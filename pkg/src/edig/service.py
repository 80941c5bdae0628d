"""HTTP service hosting live human-labeling sessions.

Each session owns a labeled/unlabeled pool over the service's dataset,
issues query batches, accepts label + confidence submissions, refits the
model between rounds, and appends every state change to a JSON-lines
event log (one file per session). Replaying that log reconstructs the
session exactly, which is both the crash-recovery path and a tested
invariant.

The wire API lives under /v1 and never exposes ground truth; batch items
carry display fields and the current model's prediction only. Label
submissions are idempotent via a client-supplied request token: retrying
a delivered round returns the stored response without retraining.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
import uuid
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from pydantic import BaseModel, Field

from . import __version__, engine, learners, sampling
from .data import (DataError, Dataset, LabeledExample, SplitSpec,
                   confidence_to_unit, split, standardize)
from .engine import StoppingRule
from .oracles import GroundTruthOracle, OracleError, OracleResponse
from .sampling import PoolState, SamplerConfig, SamplingError, ScoreBreakdown

EVENT_KINDS = ("created", "batch_issued", "label_submitted", "round_completed",
               "stopped")


class ServiceError(ValueError):
    """Session-protocol violation or invalid request."""


class UnknownSessionError(ServiceError):
    pass


@dataclass(frozen=True)
class SessionConfig:
    """Per-session knobs; the oracle is implicitly the human at the UI."""

    sampler: SamplerConfig
    learner: learners.LearnerConfig
    train_fraction: float = 0.5
    n_seed: int = 10
    budget: int = 100
    seed: int = 0
    stop: tuple = ()

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ServiceError("train_fraction must lie in (0, 1)")
        if self.budget < self.sampler.batch_size:
            raise ServiceError("budget must cover at least one batch")
        if self.n_seed < 0:
            raise ServiceError("n_seed must be >= 0")
        object.__setattr__(self, "stop", tuple(self.stop))

    def to_dict(self) -> dict:
        return {
            "sampler": {"strategy": self.sampler.strategy,
                        "beta": self.sampler.beta,
                        "uncertainty_measure": self.sampler.uncertainty_measure,
                        "batch_size": self.sampler.batch_size,
                        "mix": list(self.sampler.mix),
                        "positive_class": self.sampler.positive_class},
            "learner": self.learner.to_dict(),
            "train_fraction": self.train_fraction,
            "n_seed": self.n_seed,
            "budget": self.budget,
            "seed": self.seed,
            "stop": [{"kind": r.kind, "threshold": r.threshold} for r in self.stop],
        }

    @staticmethod
    def from_dict(d: dict) -> "SessionConfig":
        sampler = d.get("sampler", {})
        if isinstance(sampler, dict):
            sampler = dict(sampler)
            if "mix" in sampler:
                sampler["mix"] = tuple(sampler["mix"])
            sampler = SamplerConfig(**sampler)
        learner = d.get("learner", {})
        if isinstance(learner, dict):
            learner = learners.LearnerConfig.from_dict(learner)
        stop = tuple(StoppingRule(**r) for r in d.get("stop", ()))
        return SessionConfig(sampler=sampler, learner=learner,
                             train_fraction=float(d.get("train_fraction", 0.5)),
                             n_seed=int(d.get("n_seed", 10)),
                             budget=int(d.get("budget", 100)),
                             seed=int(d.get("seed", 0)), stop=stop)


def _breakdown_dict(b: ScoreBreakdown) -> dict:
    return {"instance_id": b.instance_id, "alpha": b.alpha,
            "diversity": b.diversity_term, "uncertainty": b.uncertainty_term,
            "confidence": b.confidence_term, "total": b.total}


def _breakdown_from_dict(d: dict) -> ScoreBreakdown:
    return ScoreBreakdown(d["instance_id"], d["alpha"], d["diversity"],
                          d["uncertainty"], d["confidence"], d["total"])


def _record_dict(rec: engine.RoundRecord) -> dict:
    return {
        "round": rec.round,
        "queried_ids": list(rec.queried_ids),
        "responses": [{"instance_id": r.instance_id, "label": r.label,
                       "confidence": r.confidence} for r in rec.responses],
        "metrics": dict(rec.metrics),
        "alpha": rec.alpha,
        "mean_weighted_uncertainty": rec.mean_weighted_uncertainty,
    }


def _record_from_dict(d: dict) -> engine.RoundRecord:
    responses = tuple(OracleResponse(r["instance_id"], r["label"], r["confidence"])
                      for r in d["responses"])
    return engine.RoundRecord(d["round"], tuple(d["queried_ids"]), responses,
                              dict(d["metrics"]), d["alpha"],
                              d["mean_weighted_uncertainty"])


class Session:
    """One live labeling session; mutating calls run under the session lock."""

    def __init__(self, session_id: str, config: SessionConfig, dataset: Dataset,
                 log_path: Path):
        self.id = session_id
        self.config = config
        self.log_path = Path(log_path)
        self.lock = threading.Lock()
        self.status = "awaiting_labels"
        self.stop_reason: str | None = None
        self.history: list = []
        self.pending: list | None = None  # ScoreBreakdowns of the open batch
        self.seq = 0
        self._token_responses: dict = {}
        self._issued_scores: list = []
        self._n_seed_actual = 0

        spec = SplitSpec(train_fraction=config.train_fraction, n_splits=1,
                         seed=config.seed)
        train_raw, test_raw = split(dataset, spec, 0)
        self.train_ds, self.scaler = standardize(train_raw)
        test_y = np.asarray(test_raw.truths)
        if test_y.size and (test_y >= 0).all():
            self.test_X = self.scaler.apply_matrix(test_raw.X)
            self.test_y = test_y
        else:  # no held-out truth: sessions still run, just without curves
            self.test_X = None
            self.test_y = None
        self.pool = PoolState(self.train_ds, (), tuple(sorted(self.train_ds.ids)), 0)
        self.model = None

    # -- construction ------------------------------------------------------

    @classmethod
    def create(cls, config: SessionConfig, dataset: Dataset, data_dir) -> "Session":
        sid = uuid.uuid4().hex[:12]
        log_path = Path(data_dir) / f"session-{sid}.jsonl"
        log_path.parent.mkdir(parents=True, exist_ok=True)
        s = cls(sid, config, dataset, log_path)
        s._append_event("created", {"session_id": sid, "dataset": dataset.name,
                                    "config": config.to_dict()})
        s._seed_labels()
        s._compute_batch()
        s._append_event("batch_issued", {
            "round": s.pool.round,
            "scores": [_breakdown_dict(b) for b in s.pending]})
        return s

    def _seed_labels(self):
        """Label n_seed training instances from ground truth; deterministic,
        so recovery re-derives them instead of reading them from the log."""
        cfg = self.config
        n_seed = min(cfg.n_seed, len(self.train_ds))
        if n_seed == 0:
            return
        truths = np.asarray(self.train_ds.truths)
        if (truths < 0).any():
            raise ServiceError(
                "seed labels need ground truth on the dataset; use n_seed=0")
        rng = engine.derive_rng(cfg.seed, 0, 0, engine._PURPOSE_SEED_LABELS)
        self.pool = engine.seed_initial_labels(self.train_ds, n_seed,
                                               GroundTruthOracle(), rng)
        self._n_seed_actual = n_seed
        self.model = learners.fit(cfg.learner, self.pool.labeled_features(),
                                  self.pool.labeled_labels(),
                                  self.train_ds.n_classes)

    def _compute_batch(self):
        rng = engine.derive_rng(self.config.seed, 0, self.pool.round,
                                engine._PURPOSE_SAMPLER)
        self.pending = sampling.select_batch_detailed(self.pool, self.model,
                                                      self.config.sampler, rng)

    # -- event log ---------------------------------------------------------

    def _append_event(self, kind: str, payload: dict):
        event = {"seq": self.seq, "ts": time.time(), "kind": kind,
                 "payload": payload}
        with open(self.log_path, "a", encoding="utf-8") as f:
            f.write(json.dumps(event) + "\n")
            f.flush()
            os.fsync(f.fileno())
        self.seq += 1

    # -- views -------------------------------------------------------------

    def batch_view(self) -> dict:
        items = []
        for b in self.pending or ():
            idx = self.train_ds.index_of(b.instance_id)
            display = {}
            if self.train_ds.displays and self.train_ds.displays[idx]:
                display = dict(self.train_ds.displays[idx])
            pred_class = None
            pred_prob = None
            if self.model is not None:
                probs = learners.predict_proba(
                    self.model, self.train_ds.X[idx][None, :])[0]
                pred_class = int(np.argmax(probs))
                pred_prob = float(probs[pred_class])
            items.append({"instance_id": b.instance_id, "display": display,
                          "predicted_class": pred_class,
                          "predicted_prob": pred_prob})
        return {"session_id": self.id, "round": self.pool.round, "items": items}

    def summary(self) -> dict:
        return {"session_id": self.id, "status": self.status,
                "stop_reason": self.stop_reason, "round": self.pool.round,
                "n_labeled": len(self.pool.labeled),
                "n_unlabeled": len(self.pool.unlabeled_ids),
                "n_seed": self._n_seed_actual,
                "batch_size": self.config.sampler.batch_size}

    def history_view(self) -> dict:
        rounds = []
        for rec, scores in zip(self.history, self._issued_scores):
            d = _record_dict(rec)
            d["scores"] = scores
            rounds.append(d)
        return {"session_id": self.id, "status": self.status,
                "stop_reason": self.stop_reason, "rounds": rounds}

    # -- the round ---------------------------------------------------------

    def submit_labels(self, request_token: str, items) -> dict:
        if not request_token:
            raise ServiceError("request_token required")
        if request_token in self._token_responses:
            return self._token_responses[request_token]
        if self.status == "stopped":
            raise ServiceError(f"session stopped ({self.stop_reason})")
        if not self.pending:
            raise ServiceError("no pending batch")

        pending_ids = [b.instance_id for b in self.pending]
        got = {}
        for it in items:
            iid = str(it["instance_id"])
            if iid in got:
                raise ServiceError(f"duplicate item for instance {iid}")
            if iid not in pending_ids:
                raise ServiceError(f"instance {iid} is not in the pending batch")
            label = int(it["label"])
            if not 0 <= label < self.train_ds.n_classes:
                raise ServiceError(
                    f"label {label} out of range for "
                    f"{self.train_ds.n_classes} classes")
            conf = confidence_to_unit(int(it["confidence_0_10"]))
            got[iid] = (label, conf)
        missing = [i for i in pending_ids if i not in got]
        if missing:
            raise ServiceError(f"missing labels for: {missing}")

        # inputs valid; from here the round commits as one unit
        pool = self.pool
        examples = [LabeledExample(i, got[i][0], got[i][1], "human", pool.round)
                    for i in pending_ids]
        pool2 = pool.with_new_labels(examples)
        model2 = learners.fit(self.config.learner, pool2.labeled_features(),
                              pool2.labeled_labels(), self.train_ds.n_classes)
        metrics: dict = {}
        if self.test_X is not None:
            metrics = engine.test_metrics(model2, self.test_X, self.test_y,
                                          self.config.sampler.positive_class)
        metrics["mean_confidence"] = float(
            np.mean([got[i][1] for i in pending_ids]))
        truths = np.asarray(self.train_ds.truths)
        if truths.size and (truths >= 0).all():
            metrics["correct_label_count"] = int(sum(
                got[i][0] == int(truths[self.train_ds.index_of(i)])
                for i in pending_ids))
        responses = tuple(OracleResponse(i, got[i][0], got[i][1])
                          for i in pending_ids)
        alpha = self.pending[0].alpha
        mwu = float(np.mean([(1.0 - b.alpha) * b.uncertainty_term
                             for b in self.pending]))
        record = engine.RoundRecord(pool.round, tuple(pending_ids), responses,
                                    metrics, alpha, mwu)

        self._append_event("label_submitted", {
            "round": pool.round, "request_token": request_token,
            "items": [{"instance_id": i, "label": got[i][0],
                       "confidence": got[i][1]} for i in pending_ids]})

        self.pool = pool2
        self.model = model2
        self.history.append(record)
        self._issued_scores.append([_breakdown_dict(b) for b in self.pending])
        self.pending = None

        reason = self._check_stop()
        if reason is None:
            self._compute_batch()
            response = {"record": _record_dict(record),
                        "status": "awaiting_labels",
                        "next_batch": self.batch_view()}
        else:
            self.status = "stopped"
            self.stop_reason = reason
            response = {"record": _record_dict(record), "status": "stopped",
                        "stop_reason": reason}
        self._append_event("round_completed", {
            "round": record.round, "request_token": request_token,
            "record": _record_dict(record), "response": response})
        if reason is None:
            self._append_event("batch_issued", {
                "round": self.pool.round,
                "scores": [_breakdown_dict(b) for b in self.pending]})
        else:
            self._append_event("stopped", {"reason": reason})
        self._token_responses[request_token] = response
        return response

    def _check_stop(self) -> str | None:
        budget = min(self.config.budget,
                     len(self.train_ds) - self._n_seed_actual)
        rules = list(self.config.stop)
        if not any(r.kind == "max_labels" for r in rules):
            rules.append(StoppingRule("max_labels", budget))
        reason = engine.evaluate_stopping(self.pool, self.history, rules,
                                          self._n_seed_actual)
        if reason is not None:
            return reason
        if len(self.pool.unlabeled_ids) < self.config.sampler.batch_size:
            return "max_labels"
        return None

    def stop(self) -> dict:
        if self.status != "stopped":
            self.status = "stopped"
            self.stop_reason = "manual"
            self.pending = None
            self._append_event("stopped", {"reason": "manual"})
        return {"session_id": self.id, "status": "stopped",
                "stop_reason": self.stop_reason}

    # -- recovery ----------------------------------------------------------

    def state_hash(self) -> str:
        doc = {
            "labeled": [[ex.instance_id, ex.label, ex.confidence, ex.source,
                         ex.round] for ex in self.pool.labeled],
            "unlabeled": list(self.pool.unlabeled_ids),
            "round": self.pool.round,
            "pending": [b.instance_id for b in self.pending] if self.pending else [],
            "status": self.status,
            "stop_reason": self.stop_reason,
            "n_rounds": len(self.history),
        }
        return hashlib.sha256(
            json.dumps(doc, sort_keys=True).encode()).hexdigest()

    @classmethod
    def recover(cls, log_path, dataset: Dataset) -> tuple:
        """Rebuild a session from its event log.

        Returns (session, warnings). A truncated trailing line (crash
        mid-write) is dropped with a warning; everything before it is
        replayed. Anything a dropped event carried is either re-derived
        (pending batches are a pure function of session state) or will
        be re-submitted by the client, whose retry token was also lost.
        """
        log_path = Path(log_path)
        events = []
        warnings = []
        with open(log_path, encoding="utf-8") as f:
            for lineno, line in enumerate(f):
                line = line.strip()
                if not line:
                    continue
                try:
                    events.append(json.loads(line))
                except json.JSONDecodeError:
                    warnings.append(
                        f"dropped malformed event at line {lineno + 1}")
                    break
        if not events:
            raise ServiceError(f"event log {log_path} holds no complete events")
        if events[0]["kind"] != "created":
            raise ServiceError("event log does not start with a created event")
        payload = events[0]["payload"]
        if payload["dataset"] != dataset.name:
            raise ServiceError(
                f"log was recorded against dataset {payload['dataset']!r}, "
                f"service has {dataset.name!r}")
        config = SessionConfig.from_dict(payload["config"])
        s = cls(payload["session_id"], config, dataset, log_path)
        s._seed_labels()
        for ev in events[1:]:
            s._apply_event(ev)
        s.seq = events[-1]["seq"] + 1
        if s.status == "awaiting_labels" and s.pending is None:
            # batch_issued lost to truncation; reselect deterministically
            s._compute_batch()
            warnings.append("recomputed pending batch lost in truncation")
        return s, warnings

    def _apply_event(self, ev: dict):
        kind = ev["kind"]
        payload = ev["payload"]
        if kind == "batch_issued":
            self.pending = [_breakdown_from_dict(d) for d in payload["scores"]]
        elif kind == "label_submitted":
            pass  # state lands with the round_completed that follows
        elif kind == "round_completed":
            record = _record_from_dict(payload["record"])
            examples = [LabeledExample(r.instance_id, r.label, r.confidence,
                                       "human", record.round)
                        for r in record.responses]
            self.pool = self.pool.with_new_labels(examples)
            self.model = learners.fit(self.config.learner,
                                      self.pool.labeled_features(),
                                      self.pool.labeled_labels(),
                                      self.train_ds.n_classes)
            self.history.append(record)
            self._issued_scores.append(
                [_breakdown_dict(b) for b in self.pending] if self.pending else [])
            self.pending = None
            self._token_responses[payload["request_token"]] = payload.get("response")
        elif kind == "stopped":
            self.status = "stopped"
            self.stop_reason = payload["reason"]
            self.pending = None
        elif kind != "created":
            raise ServiceError(f"unknown event kind {kind!r}")


class SessionStore:
    """In-memory registry plus the on-disk event logs under data_dir."""

    def __init__(self, dataset: Dataset, data_dir):
        self.dataset = dataset
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.sessions: dict = {}
        self.lock = threading.Lock()

    def recover_all(self) -> list:
        """Replay every session-*.jsonl in data_dir; returns warnings."""
        notes = []
        for path in sorted(self.data_dir.glob("session-*.jsonl")):
            try:
                session, warnings = Session.recover(path, self.dataset)
            except (ServiceError, DataError) as exc:
                notes.append(f"{path.name}: not recovered ({exc})")
                continue
            self.sessions[session.id] = session
            notes.extend(f"{path.name}: {w}" for w in warnings)
        return notes

    def create(self, config: SessionConfig) -> Session:
        session = Session.create(config, self.dataset, self.data_dir)
        with self.lock:
            self.sessions[session.id] = session
        return session

    def get(self, session_id: str) -> Session:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise UnknownSessionError(f"no session {session_id!r}") from None


class LabelItem(BaseModel):
    instance_id: str
    label: int
    confidence_0_10: int = Field(ge=0, le=10)


class LabelRequest(BaseModel):
    request_token: str
    items: list[LabelItem]


class CreateRequest(BaseModel):
    dataset: str | None = None
    config: dict = Field(default_factory=dict)


def create_app(dataset: Dataset, data_dir):
    """Build the FastAPI app backing the labeling UI."""
    from fastapi import FastAPI, Request
    from fastapi.middleware.cors import CORSMiddleware
    from fastapi.responses import JSONResponse

    store = SessionStore(dataset, data_dir)
    notes = store.recover_all()

    app = FastAPI(title="edig labeling service", version=__version__)
    app.state.store = store
    app.state.recovery_notes = notes
    # the browser UI is served as static files from wherever; the API is
    # origin-agnostic (single-analyst tool, no cookies or credentials)
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["GET", "POST"], allow_headers=["*"])

    @app.exception_handler(UnknownSessionError)
    async def _unknown(request: Request, exc: UnknownSessionError):
        return JSONResponse(status_code=404, content={"error": str(exc)})

    @app.exception_handler(ServiceError)
    async def _service(request: Request, exc: ServiceError):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.exception_handler(DataError)
    async def _data(request: Request, exc: DataError):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.exception_handler(SamplingError)
    async def _sampling(request: Request, exc: SamplingError):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.exception_handler(OracleError)
    async def _oracle(request: Request, exc: OracleError):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.get("/v1/health")
    def health():
        return {"status": "ok", "dataset": dataset.name,
                "sessions": len(store.sessions), "version": __version__}

    @app.post("/v1/sessions", status_code=201)
    def create_session(req: CreateRequest):
        if req.dataset is not None and req.dataset != dataset.name:
            raise ServiceError(
                f"service hosts dataset {dataset.name!r}, not {req.dataset!r}")
        config = SessionConfig.from_dict(req.config)
        session = store.create(config)
        return {"session_id": session.id, "status": session.status,
                "round": session.pool.round, "batch": session.batch_view()}

    @app.get("/v1/sessions/{session_id}")
    def session_summary(session_id: str):
        return store.get(session_id).summary()

    @app.get("/v1/sessions/{session_id}/batch")
    def session_batch(session_id: str):
        session = store.get(session_id)
        with session.lock:
            if session.status == "stopped":
                return JSONResponse(status_code=409, content={
                    "error": f"session stopped ({session.stop_reason})",
                    "status": "stopped", "stop_reason": session.stop_reason})
            return session.batch_view()

    @app.post("/v1/sessions/{session_id}/labels")
    def session_labels(session_id: str, req: LabelRequest):
        session = store.get(session_id)
        with session.lock:
            return session.submit_labels(
                req.request_token,
                [it.model_dump() for it in req.items])

    @app.get("/v1/sessions/{session_id}/history")
    def session_history(session_id: str):
        return store.get(session_id).history_view()

    @app.post("/v1/sessions/{session_id}/stop")
    def session_stop(session_id: str):
        session = store.get(session_id)
        with session.lock:
            return session.stop()

    return app
