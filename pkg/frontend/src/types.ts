/**
 * Wire types for the /v1 labeling service plus the local draft model.
 *
 * The server side is the single source of truth for everything in here
 * except LabelDraft: batches, rounds, metrics, and stop state all come
 * off the wire verbatim. The client never computes scores or labels.
 */

/** One queryable instance as the service presents it. Ground truth never
 * appears here; `display` is whatever context fields the dataset carries. */
export interface BatchItem {
  instance_id: string;
  display: Record<string, string>;
  predicted_class: number | null;
  predicted_prob: number | null;
}

/** The open query batch, exactly as issued by the service. */
export interface BatchView {
  session_id: string;
  round: number;
  items: BatchItem[];
}

export interface SessionSummary {
  session_id: string;
  status: "awaiting_labels" | "stopped";
  stop_reason: string | null;
  round: number;
  n_labeled: number;
  n_unlabeled: number;
  n_seed: number;
  batch_size: number;
}

/** Per-round metrics; f1/precision/recall/auprc are absent when the
 * dataset has no held-out ground truth. */
export type RoundMetrics = Record<string, number>;

export interface RoundResponseItem {
  instance_id: string;
  label: number;
  confidence: number;
}

export interface RoundRecord {
  round: number;
  queried_ids: string[];
  responses: RoundResponseItem[];
  metrics: RoundMetrics;
  alpha: number;
  mean_weighted_uncertainty: number;
}

export interface ScoreRow {
  instance_id: string;
  alpha: number;
  diversity: number;
  uncertainty: number;
  confidence: number;
  total: number;
}

export interface HistoryRound extends RoundRecord {
  scores: ScoreRow[];
}

export interface HistoryView {
  session_id: string;
  status: "awaiting_labels" | "stopped";
  stop_reason: string | null;
  rounds: HistoryRound[];
}

/** POST /labels response: either the next batch or the stop record. */
export interface SubmitResponse {
  record: RoundRecord;
  status: "awaiting_labels" | "stopped";
  next_batch?: BatchView;
  stop_reason?: string;
}

export interface CreateSessionResponse {
  session_id: string;
  status: string;
  round: number;
  batch: BatchView;
}

export interface StopResponse {
  session_id: string;
  status: "stopped";
  stop_reason: string;
}

export interface HealthResponse {
  status: string;
  dataset: string;
  sessions: number;
  version: string;
}

export interface LabelItemPayload {
  instance_id: string;
  label: number;
  confidence_0_10: number;
}

// ---------------------------------------------------------------------------
// Local draft model (the only client-owned state besides service responses)

/** The analyst's in-progress answer for one batch item. `label` stays null
 * until a class is picked; confidence defaults to the slider midpoint. */
export interface DraftEntry {
  label: number | null;
  confidence: number; // integer 0..10
}

/** Drafts for the open batch, keyed by instance id, plus the completion
 * flag that gates submission. */
export interface LabelDraft {
  entries: Record<string, DraftEntry>;
  complete: boolean;
}

export const CONFIDENCE_MIN = 0;
export const CONFIDENCE_MAX = 10;
export const CONFIDENCE_DEFAULT = 5;

/** Display names for binary anomaly labels; index = class id. */
export const CLASS_NAMES = ["expected", "anomaly"];
