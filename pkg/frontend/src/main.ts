/**
 * Browser entry point. Reads `?api=` (service base URL, default same
 * origin) and `?session=` (resume an existing session) from the query
 * string, otherwise shows a minimal start form.
 */

import { ApiClient } from "./api.js";
import { LabelingApp } from "./app.js";

function defaultConfig(batchSize: number): Record<string, unknown> {
  return {
    sampler: { strategy: "edig", batch_size: batchSize },
    learner: { kind: "random_forest" },
    n_seed: 10,
    budget: 100,
    seed: Math.floor(Math.random() * 1_000_000),
  };
}

function boot(): void {
  const mount = document.getElementById("app");
  if (!mount) throw new Error("missing #app mount point");
  const params = new URLSearchParams(window.location.search);
  const base = params.get("api") ?? "";
  const sessionId = params.get("session");
  const client = new ApiClient(base);
  const app = new LabelingApp(mount, client);

  if (sessionId) {
    void app.resume(sessionId);
    return;
  }

  const form = document.getElementById("start-form") as HTMLFormElement | null;
  const panel = document.getElementById("start-panel");
  if (!form || !panel) {
    void app.create(defaultConfig(5));
    return;
  }
  panel.hidden = false;
  form.addEventListener("submit", (ev) => {
    ev.preventDefault();
    const data = new FormData(form);
    const resumeId = String(data.get("session-id") ?? "").trim();
    panel.hidden = true;
    if (resumeId) {
      void app.resume(resumeId);
    } else {
      const batch = Number(data.get("batch-size") ?? 5) || 5;
      void app.create(defaultConfig(batch));
    }
  });
}

if (document.readyState === "loading") {
  document.addEventListener("DOMContentLoaded", boot);
} else {
  boot();
}
