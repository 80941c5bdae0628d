import { describe, expect, it } from "vitest";

import {
  emptyDraft,
  incompleteIds,
  initialState,
  roundCommitted,
  sessionOpened,
  sessionStopped,
  setDraftConfidence,
  setDraftLabel,
  submissionLost,
  submissionRejected,
  submissionStarted,
  type SessionState,
} from "../src/state.js";
import type { BatchView, HistoryView, SessionSummary, SubmitResponse } from "../src/types.js";

function batchOf(round: number, n: number): BatchView {
  return {
    session_id: "s1",
    round,
    items: Array.from({ length: n }, (_, i) => ({
      instance_id: `q${round}-${i}`,
      display: { subject: `msg ${i}` },
      predicted_class: 0,
      predicted_prob: 0.6,
    })),
  };
}

function summaryOf(over: Partial<SessionSummary> = {}): SessionSummary {
  return {
    session_id: "s1",
    status: "awaiting_labels",
    stop_reason: null,
    round: 0,
    n_labeled: 10,
    n_unlabeled: 90,
    n_seed: 10,
    batch_size: 5,
    ...over,
  };
}

function emptyHistory(): HistoryView {
  return { session_id: "s1", status: "awaiting_labels", stop_reason: null, rounds: [] };
}

function openState(n = 5): SessionState {
  return sessionOpened(initialState(), summaryOf(), batchOf(0, n), emptyHistory());
}

function labelEverything(state: SessionState): SessionState {
  let s = state;
  for (const item of state.batch!.items) {
    s = setDraftLabel(s, item.instance_id, 1);
  }
  return s;
}

describe("draft lifecycle", () => {
  it("starts with null labels, midpoint confidence, and incomplete", () => {
    const draft = emptyDraft(batchOf(0, 5));
    expect(Object.keys(draft.entries)).toHaveLength(5);
    for (const entry of Object.values(draft.entries)) {
      expect(entry.label).toBeNull();
      expect(entry.confidence).toBe(5);
    }
    expect(draft.complete).toBe(false);
  });

  it("completion flips only when every item has a label", () => {
    let s = openState(3);
    s = setDraftLabel(s, "q0-0", 1);
    s = setDraftLabel(s, "q0-1", 0);
    expect(s.draft.complete).toBe(false);
    expect(incompleteIds(s)).toEqual(["q0-2"]);
    s = setDraftLabel(s, "q0-2", 1);
    expect(s.draft.complete).toBe(true);
    expect(incompleteIds(s)).toEqual([]);
  });

  it("confidence changes clamp to the 0..10 slider range", () => {
    let s = openState(2);
    s = setDraftConfidence(s, "q0-0", 12);
    expect(s.draft.entries["q0-0"]!.confidence).toBe(10);
    s = setDraftConfidence(s, "q0-0", -3);
    expect(s.draft.entries["q0-0"]!.confidence).toBe(0);
    s = setDraftConfidence(s, "q0-1", 6.6);
    expect(s.draft.entries["q0-1"]!.confidence).toBe(7);
  });

  it("edits are ignored outside the labeling phase", () => {
    const s = submissionStarted(labelEverything(openState(2)));
    const after = setDraftLabel(s, "q0-0", 0);
    expect(after).toBe(s);
    const after2 = setDraftConfidence(s, "q0-0", 3);
    expect(after2).toBe(s);
  });

  it("edits to unknown instance ids are ignored", () => {
    const s = openState(2);
    expect(setDraftLabel(s, "nope", 1)).toBe(s);
  });
});

describe("service response reducers", () => {
  it("opening a live session yields an editable batch and fresh token", () => {
    const s = openState(5);
    expect(s.phase).toBe("labeling");
    expect(s.batch!.items).toHaveLength(5);
    expect(s.requestToken).toBeTruthy();
    expect(s.draft.complete).toBe(false);
  });

  it("opening a stopped session is terminal and batch-free", () => {
    const history: HistoryView = { ...emptyHistory(), status: "stopped", stop_reason: "manual" };
    const s = sessionOpened(
      initialState(),
      summaryOf({ status: "stopped", stop_reason: "manual" }),
      null,
      history,
    );
    expect(s.phase).toBe("stopped");
    expect(s.batch).toBeNull();
    expect(s.stopReason).toBe("manual");
  });

  it("a committed round swaps the batch, empties the draft, and rotates the token", () => {
    const before = submissionStarted(labelEverything(openState(5)));
    const resp: SubmitResponse = {
      record: {
        round: 0,
        queried_ids: before.batch!.items.map((i) => i.instance_id),
        responses: [],
        metrics: { f1: 0.7, mean_confidence: 0.5 },
        alpha: 0.8,
        mean_weighted_uncertainty: 0.1,
      },
      status: "awaiting_labels",
      next_batch: batchOf(1, 5),
    };
    const after = roundCommitted(before, resp);
    expect(after.phase).toBe("labeling");
    expect(after.batch!.round).toBe(1);
    expect(after.draft.complete).toBe(false);
    expect(Object.values(after.draft.entries).every((e) => e.label === null)).toBe(true);
    expect(after.requestToken).not.toBe(before.requestToken);
    expect(after.lastRecord!.metrics.f1).toBe(0.7);
    expect(after.history!.rounds).toHaveLength(1);
  });

  it("a stopping response lands in the stopped phase with the reason", () => {
    const before = submissionStarted(labelEverything(openState(5)));
    const resp: SubmitResponse = {
      record: {
        round: 0,
        queried_ids: [],
        responses: [],
        metrics: { mean_confidence: 0.4 },
        alpha: 0.8,
        mean_weighted_uncertainty: 0.1,
      },
      status: "stopped",
      stop_reason: "max_labels",
    };
    const after = roundCommitted(before, resp);
    expect(after.phase).toBe("stopped");
    expect(after.stopReason).toBe("max_labels");
    expect(after.batch).toBeNull();
  });

  it("a rejected submission keeps drafts, token, and highlights", () => {
    let s = openState(3);
    s = setDraftLabel(s, "q0-0", 1);
    const before = s;
    s = submissionRejected(submissionStarted(s), "missing labels", incompleteIds(s));
    expect(s.phase).toBe("labeling");
    expect(s.draft.entries["q0-0"]!.label).toBe(1);
    expect(s.requestToken).toBe(before.requestToken);
    expect(s.invalidIds).toEqual(["q0-1", "q0-2"]);
    expect(s.notice).toBe("missing labels");
  });

  it("a lost submission keeps the token so the retry is idempotent", () => {
    const before = submissionStarted(labelEverything(openState(2)));
    const s = submissionLost(before, "network down");
    expect(s.phase).toBe("retry");
    expect(s.requestToken).toBe(before.requestToken);
    expect(s.draft.complete).toBe(true);
  });

  it("manual stop clears the batch and keeps history", () => {
    const s = sessionStopped(openState(2), "manual");
    expect(s.phase).toBe("stopped");
    expect(s.batch).toBeNull();
    expect(s.stopReason).toBe("manual");
  });
});
