/**
 * Controller gluing the /v1 client, the state reducers, and the renderer.
 *
 * Optimistic updates are deliberately absent: every state transition waits
 * for the service response that justifies it, then re-renders. The only
 * client-side state is the label draft and the per-round request token.
 */

import { ApiClient, ApiError } from "./api.js";
import { render, bindEvents } from "./render.js";
import type { SessionState } from "./state.js";
import {
  fatalError,
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
} from "./state.js";
import type { HistoryView, LabelItemPayload } from "./types.js";

const RETRY_NOTICE =
  "network failure during submission; the service may already hold this round. " +
  "Retry reuses the same request token, so the round cannot be duplicated.";

export class LabelingApp {
  state: SessionState;
  private readonly root: HTMLElement;
  private readonly client: ApiClient;
  private queue: Promise<void> = Promise.resolve();

  constructor(root: HTMLElement, client: ApiClient) {
    this.root = root;
    this.client = client;
    this.state = initialState();
    bindEvents(root, {
      onLabel: (id, label) => this.setState(setDraftLabel(this.state, id, label)),
      onConfidence: (id, conf) => this.setState(setDraftConfidence(this.state, id, conf)),
      onSubmit: () => this.enqueue(() => this.submit()),
      onRetry: () => this.enqueue(() => this.submit()),
      onStop: () => this.enqueue(() => this.stop()),
    });
    render(this.root, this.state);
  }

  /** Resolves once every queued service round trip has settled. */
  whenIdle(): Promise<void> {
    return this.queue;
  }

  private enqueue(op: () => Promise<void>): void {
    this.queue = this.queue.then(op).catch((err) => {
      this.setState(fatalError(this.state, String(err)));
    });
  }

  private setState(next: SessionState): void {
    this.state = next;
    render(this.root, this.state);
  }

  async create(config: Record<string, unknown>, dataset?: string): Promise<void> {
    try {
      const created = await this.client.createSession(config, dataset);
      const summary = await this.client.summary(created.session_id);
      const history = await this.client.history(created.session_id);
      this.setState(sessionOpened(this.state, summary, created.batch, history));
    } catch (err) {
      this.setState(fatalError(this.state, describe(err)));
    }
  }

  /** Reattach to an existing session, e.g. after a page refresh. The
   * pending batch comes back from the service; local drafts start fresh. */
  async resume(sessionId: string): Promise<void> {
    try {
      const summary = await this.client.summary(sessionId);
      const history = await this.client.history(sessionId);
      if (summary.status === "stopped") {
        this.setState(sessionOpened(this.state, summary, null, history));
        return;
      }
      const batch = await this.client.batch(sessionId);
      this.setState(sessionOpened(this.state, summary, batch, history));
    } catch (err) {
      if (err instanceof ApiError && err.isStopped()) {
        // stopped between the summary and batch reads; fall back to history
        const summary = await this.client.summary(sessionId);
        const history = await this.client.history(sessionId);
        this.setState(sessionOpened(this.state, summary, null, history));
        return;
      }
      this.setState(fatalError(this.state, describe(err)));
    }
  }

  private async submit(): Promise<void> {
    const { batch, sessionId } = this.state;
    if (!batch || !sessionId) return;
    if (this.state.phase !== "labeling" && this.state.phase !== "retry") return;
    if (!this.state.draft.complete) {
      this.setState(
        submissionRejected(
          this.state,
          "every item needs a label before the batch can be submitted",
          incompleteIds(this.state),
        ),
      );
      return;
    }
    const items: LabelItemPayload[] = batch.items.map((item) => {
      const entry = this.state.draft.entries[item.instance_id]!;
      return {
        instance_id: item.instance_id,
        label: entry.label!,
        confidence_0_10: entry.confidence,
      };
    });
    const token = this.state.requestToken; // unchanged across retries
    this.setState(submissionStarted(this.state));
    try {
      const resp = await this.client.submitLabels(sessionId, token, items);
      this.setState(roundCommitted(this.state, resp));
      await this.refreshSummary(sessionId);
    } catch (err) {
      if (err instanceof ApiError) {
        // the round did not commit server-side; drafts stay editable
        this.setState(submissionRejected(this.state, describe(err), incompleteIds(this.state)));
      } else {
        this.setState(submissionLost(this.state, RETRY_NOTICE));
      }
    }
  }

  private async stop(): Promise<void> {
    const sessionId = this.state.sessionId;
    if (!sessionId || this.state.phase === "stopped") return;
    try {
      const resp = await this.client.stop(sessionId);
      let history: HistoryView | null = this.state.history;
      try {
        history = await this.client.history(sessionId);
      } catch {
        // keep the local copy if the refresh fails; stop already committed
      }
      this.setState({ ...sessionStopped(this.state, resp.stop_reason), history });
    } catch (err) {
      this.setState(fatalError(this.state, describe(err)));
    }
  }

  private async refreshSummary(sessionId: string): Promise<void> {
    try {
      const summary = await this.client.summary(sessionId);
      this.setState({ ...this.state, summary });
    } catch {
      // non-fatal: the committed round already rendered
    }
  }
}

function describe(err: unknown): string {
  if (err instanceof ApiError) return err.message;
  if (err instanceof Error) return err.message;
  return String(err);
}
