/**
 * Typed fetch client for the /v1 labeling service.
 *
 * Every mutating call that completes a round carries a client-generated
 * request token. The service treats the token as an idempotency key, so a
 * retry after a lost response replays the stored result instead of
 * committing a second round. The caller owns token lifetime: keep the same
 * token across retries of one submission, mint a fresh one per round.
 */

import type {
  BatchView,
  CreateSessionResponse,
  HealthResponse,
  HistoryView,
  LabelItemPayload,
  SessionSummary,
  StopResponse,
  SubmitResponse,
} from "./types.js";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** Non-2xx reply from the service; carries the parsed error body. */
export class ApiError extends Error {
  readonly status: number;
  readonly body: Record<string, unknown>;

  constructor(status: number, body: Record<string, unknown>) {
    super(typeof body.error === "string" ? body.error : `HTTP ${status}`);
    this.name = "ApiError";
    this.status = status;
    this.body = body;
  }

  /** 409 on the batch endpoint means the session already stopped. */
  isStopped(): boolean {
    return this.status === 409;
  }
}

export function newRequestToken(): string {
  const c = globalThis.crypto;
  if (c && typeof c.randomUUID === "function") {
    return c.randomUUID();
  }
  // crypto.randomUUID needs a secure context; fall back for plain-http dev
  return `t-${Date.now().toString(36)}-${Math.random().toString(36).slice(2, 10)}`;
}

export class ApiClient {
  private readonly base: string;
  private readonly fetchFn: FetchLike;

  constructor(baseUrl: string, fetchFn?: FetchLike) {
    this.base = baseUrl.replace(/\/+$/, "");
    if (fetchFn) {
      this.fetchFn = fetchFn;
    } else if (globalThis.fetch) {
      this.fetchFn = (input, init) => globalThis.fetch(input, init);
    } else {
      throw new Error("no fetch implementation available");
    }
  }

  private async request<T>(method: string, path: string, payload?: unknown): Promise<T> {
    const init: RequestInit = { method, headers: { Accept: "application/json" } };
    if (payload !== undefined) {
      init.headers = { ...init.headers, "Content-Type": "application/json" };
      init.body = JSON.stringify(payload);
    }
    const resp = await this.fetchFn(`${this.base}${path}`, init);
    let body: unknown = null;
    const text = await resp.text();
    if (text) {
      try {
        body = JSON.parse(text);
      } catch {
        body = { error: text };
      }
    }
    if (!resp.ok) {
      throw new ApiError(resp.status, (body ?? {}) as Record<string, unknown>);
    }
    return body as T;
  }

  health(): Promise<HealthResponse> {
    return this.request("GET", "/v1/health");
  }

  createSession(config: Record<string, unknown>, dataset?: string): Promise<CreateSessionResponse> {
    const payload: Record<string, unknown> = { config };
    if (dataset !== undefined) {
      payload.dataset = dataset;
    }
    return this.request("POST", "/v1/sessions", payload);
  }

  summary(sessionId: string): Promise<SessionSummary> {
    return this.request("GET", `/v1/sessions/${encodeURIComponent(sessionId)}`);
  }

  batch(sessionId: string): Promise<BatchView> {
    return this.request("GET", `/v1/sessions/${encodeURIComponent(sessionId)}/batch`);
  }

  submitLabels(
    sessionId: string,
    requestToken: string,
    items: LabelItemPayload[],
  ): Promise<SubmitResponse> {
    return this.request("POST", `/v1/sessions/${encodeURIComponent(sessionId)}/labels`, {
      request_token: requestToken,
      items,
    });
  }

  history(sessionId: string): Promise<HistoryView> {
    return this.request("GET", `/v1/sessions/${encodeURIComponent(sessionId)}/history`);
  }

  stop(sessionId: string): Promise<StopResponse> {
    return this.request("POST", `/v1/sessions/${encodeURIComponent(sessionId)}/stop`);
  }
}
