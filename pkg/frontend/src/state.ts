/**
 * Session state for the labeling UI.
 *
 * The state object is a pure function of (service responses, local drafts):
 * reducers below take the previous state plus one input and return a new
 * state, nothing reads the DOM or the network. The controller in app.ts is
 * the only place that talks to the service; it feeds responses through
 * these reducers and re-renders.
 */

import { newRequestToken } from "./api.js";
import type {
  BatchView,
  DraftEntry,
  HistoryView,
  LabelDraft,
  RoundRecord,
  SessionSummary,
  SubmitResponse,
} from "./types.js";
import { CONFIDENCE_DEFAULT, CONFIDENCE_MAX, CONFIDENCE_MIN } from "./types.js";

export type Phase =
  | "booting" // nothing fetched yet
  | "labeling" // open batch on screen, draft editable
  | "submitting" // POST /labels in flight, inputs frozen
  | "retry" // submission failed in transit; same token, user retries
  | "stopped" // terminal: history is read-only
  | "error"; // unrecoverable (unknown session, wire mismatch)

export interface SessionState {
  phase: Phase;
  sessionId: string | null;
  summary: SessionSummary | null;
  batch: BatchView | null;
  draft: LabelDraft;
  history: HistoryView | null;
  /** Record of the most recently committed round, for the delta banner. */
  lastRecord: RoundRecord | null;
  /** The round before that, so the banner can show metric deltas. */
  prevRecord: RoundRecord | null;
  /** Idempotency token for the open round. Survives failed submissions;
   * replaced only after the service confirms the round. */
  requestToken: string;
  stopReason: string | null;
  /** Transient banner text (validation problem, network retry hint). */
  notice: string | null;
  /** Instance ids flagged by the last validation failure. */
  invalidIds: string[];
}

export function initialState(): SessionState {
  return {
    phase: "booting",
    sessionId: null,
    summary: null,
    batch: null,
    draft: { entries: {}, complete: false },
    history: null,
    lastRecord: null,
    prevRecord: null,
    requestToken: newRequestToken(),
    stopReason: null,
    notice: null,
    invalidIds: [],
  };
}

/** Fresh draft for a batch: no labels picked, sliders at the midpoint. */
export function emptyDraft(batch: BatchView): LabelDraft {
  const entries: Record<string, DraftEntry> = {};
  for (const item of batch.items) {
    entries[item.instance_id] = { label: null, confidence: CONFIDENCE_DEFAULT };
  }
  return { entries, complete: batch.items.length === 0 };
}

function withCompletion(entries: Record<string, DraftEntry>, batch: BatchView): LabelDraft {
  const complete =
    batch.items.length > 0 &&
    batch.items.every((item) => {
      const e = entries[item.instance_id];
      return (
        e !== undefined &&
        e.label !== null &&
        Number.isInteger(e.confidence) &&
        e.confidence >= CONFIDENCE_MIN &&
        e.confidence <= CONFIDENCE_MAX
      );
    });
  return { entries, complete };
}

export function setDraftLabel(state: SessionState, instanceId: string, label: number): SessionState {
  if (state.phase !== "labeling" || !state.batch) return state;
  const current = state.draft.entries[instanceId];
  if (!current) return state;
  const entries = {
    ...state.draft.entries,
    [instanceId]: { ...current, label },
  };
  return {
    ...state,
    draft: withCompletion(entries, state.batch),
    invalidIds: state.invalidIds.filter((id) => id !== instanceId),
  };
}

export function setDraftConfidence(
  state: SessionState,
  instanceId: string,
  confidence: number,
): SessionState {
  if (state.phase !== "labeling" || !state.batch) return state;
  const current = state.draft.entries[instanceId];
  if (!current) return state;
  const clamped = Math.min(CONFIDENCE_MAX, Math.max(CONFIDENCE_MIN, Math.round(confidence)));
  const entries = {
    ...state.draft.entries,
    [instanceId]: { ...current, confidence: clamped },
  };
  return { ...state, draft: withCompletion(entries, state.batch) };
}

/** Ids still missing a label; drives the incomplete-item highlight. */
export function incompleteIds(state: SessionState): string[] {
  if (!state.batch) return [];
  return state.batch.items
    .filter((item) => {
      const e = state.draft.entries[item.instance_id];
      return e === undefined || e.label === null;
    })
    .map((item) => item.instance_id);
}

// ---------------------------------------------------------------------------
// Reducers over service responses

export function sessionOpened(
  state: SessionState,
  summary: SessionSummary,
  batch: BatchView | null,
  history: HistoryView,
): SessionState {
  const rounds = history.rounds;
  const last = rounds.length > 0 ? rounds[rounds.length - 1]! : null;
  const prev = rounds.length > 1 ? rounds[rounds.length - 2]! : null;
  if (summary.status === "stopped" || batch === null) {
    return {
      ...state,
      phase: "stopped",
      sessionId: summary.session_id,
      summary,
      batch: null,
      draft: { entries: {}, complete: false },
      history,
      lastRecord: last,
      prevRecord: prev,
      stopReason: summary.stop_reason,
      notice: null,
      invalidIds: [],
    };
  }
  return {
    ...state,
    phase: "labeling",
    sessionId: summary.session_id,
    summary,
    batch,
    draft: emptyDraft(batch),
    history,
    lastRecord: last,
    prevRecord: prev,
    requestToken: newRequestToken(),
    stopReason: null,
    notice: null,
    invalidIds: [],
  };
}

export function submissionStarted(state: SessionState): SessionState {
  return { ...state, phase: "submitting", notice: null, invalidIds: [] };
}

/** The service confirmed the round: bank the record, swap in the next
 * batch (or stop), and, crucially, mint a new request token. */
export function roundCommitted(state: SessionState, resp: SubmitResponse): SessionState {
  const history: HistoryView | null = state.history
    ? {
        ...state.history,
        status: resp.status,
        stop_reason: resp.stop_reason ?? null,
        rounds: [...state.history.rounds, { ...resp.record, scores: [] }],
      }
    : null;
  const base = {
    ...state,
    history,
    prevRecord: state.lastRecord,
    lastRecord: resp.record,
    requestToken: newRequestToken(),
    notice: null,
    invalidIds: [],
  };
  if (resp.status === "stopped" || !resp.next_batch) {
    return {
      ...base,
      phase: "stopped" as Phase,
      batch: null,
      draft: { entries: {}, complete: false },
      stopReason: resp.stop_reason ?? "max_labels",
    };
  }
  return {
    ...base,
    phase: "labeling" as Phase,
    batch: resp.next_batch,
    draft: emptyDraft(resp.next_batch),
  };
}

/** Server-side rejection (e.g. 400/422): the round did not commit. Keep
 * every draft value and the token; highlight what the server flagged. */
export function submissionRejected(
  state: SessionState,
  message: string,
  invalid: string[],
): SessionState {
  return { ...state, phase: "labeling", notice: message, invalidIds: invalid };
}

/** Transport failure: the outcome is unknown, so keep the token and offer
 * a retry. Retrying with the same token is safe by construction. */
export function submissionLost(state: SessionState, message: string): SessionState {
  return { ...state, phase: "retry", notice: message };
}

export function sessionStopped(state: SessionState, reason: string): SessionState {
  return {
    ...state,
    phase: "stopped",
    batch: null,
    draft: { entries: {}, complete: false },
    stopReason: reason,
    notice: null,
    invalidIds: [],
  };
}

export function fatalError(state: SessionState, message: string): SessionState {
  return { ...state, phase: "error", notice: message };
}
