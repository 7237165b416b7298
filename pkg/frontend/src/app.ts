/** Hash-routed single-page app over the session API.
 *
 * Routes: #/ (start), #/s/<sid>/overview, #/s/<sid>/doc/<docId>.
 * The session id lives in the URL, so a refresh re-fetches everything
 * from the server (the event log is the single source of truth). At most
 * one mutating request is in flight at a time.
 */

import * as api from "./api";
import {
  renderDocument,
  renderError,
  renderOverview,
  renderStart,
} from "./render";
import type { LabelResponse, SkipResponse } from "./types";

export type Route =
  | { kind: "start" }
  | { kind: "overview"; sessionId: string }
  | { kind: "document"; sessionId: string; docId: string };

export function parseRoute(hash: string): Route {
  const m = hash.match(/^#\/s\/([^/]+)\/(overview|doc\/(.+))$/);
  if (!m) return { kind: "start" };
  if (m[2] === "overview") return { kind: "overview", sessionId: m[1] };
  return { kind: "document", sessionId: m[1], docId: decodeURIComponent(m[3]) };
}

export function overviewRoute(sessionId: string): string {
  return `#/s/${sessionId}/overview`;
}

export function documentRoute(sessionId: string, docId: string): string {
  return `#/s/${sessionId}/doc/${encodeURIComponent(docId)}`;
}

/** Where submit-&-next / skip lands: the server's recommendation, or the
 * overview when nothing is left. */
export function nextRouteAfterMutation(
  sessionId: string,
  response: LabelResponse | SkipResponse,
): string {
  return response.recommended_doc === null
    ? overviewRoute(sessionId)
    : documentRoute(sessionId, response.recommended_doc);
}

let busy = false; // one in-flight mutation, serialized client-side

async function mutate<T>(action: () => Promise<T>): Promise<T | null> {
  if (busy) return null;
  busy = true;
  try {
    return await action();
  } finally {
    busy = false;
  }
}

function root(): HTMLElement {
  return document.getElementById("app")!;
}

function showError(message: string, retry: () => void): void {
  root().insertAdjacentHTML("afterbegin", renderError(message));
  const button = document.getElementById("retry");
  if (button) button.addEventListener("click", retry, { once: true });
}

async function showStart(): Promise<void> {
  root().innerHTML = renderStart();
  const form = document.getElementById("start-form") as HTMLFormElement;
  form.addEventListener("submit", async (event) => {
    event.preventDefault();
    const condition = (document.getElementById("condition") as HTMLSelectElement).value;
    const corpusId = (document.getElementById("corpus-id") as HTMLSelectElement).value;
    const seed = Number((document.getElementById("seed") as HTMLInputElement).value);
    const created = await mutate(() =>
      api.createSession(condition, corpusId, { seed }),
    ).catch((err) => {
      showError(String(err.message ?? err), () => void showStart());
      return null;
    });
    if (created) window.location.hash = overviewRoute(created.session_id);
  });
}

async function showOverview(sessionId: string): Promise<void> {
  try {
    const view = await api.getOverview(sessionId);
    root().innerHTML = renderOverview(view, sessionId);
  } catch (err: any) {
    root().innerHTML = "";
    showError(String(err.message ?? err), () => void showOverview(sessionId));
  }
}

async function showDocument(sessionId: string, docId: string): Promise<void> {
  try {
    const detail = await api.getDocument(sessionId, docId);
    root().innerHTML = renderDocument(detail, sessionId);
  } catch (err: any) {
    root().innerHTML = "";
    showError(String(err.message ?? err), () =>
      void showDocument(sessionId, docId),
    );
    return;
  }
  const form = root().querySelector(".label-form") as HTMLFormElement;
  const select = document.getElementById("label-select") as HTMLSelectElement;
  const input = document.getElementById("label-input") as HTMLInputElement;
  const skip = document.getElementById("skip") as HTMLButtonElement;

  form.addEventListener("submit", async (event) => {
    event.preventDefault();
    const label = input.value.trim() || select.value;
    if (!label) {
      input.setCustomValidity("type a new label or pick one from the list");
      input.reportValidity();
      return;
    }
    input.setCustomValidity("");
    const response = await mutate(() =>
      api.submitLabel(sessionId, docId, label),
    ).catch((err) => {
      showError(String(err.message ?? err), () => void 0);
      return null;
    });
    if (response) window.location.hash = nextRouteAfterMutation(sessionId, response);
  });

  skip.addEventListener("click", async () => {
    const response = await mutate(() => api.skipDocument(sessionId, docId)).catch(
      (err) => {
        showError(String(err.message ?? err), () => void 0);
        return null;
      },
    );
    if (response) window.location.hash = nextRouteAfterMutation(sessionId, response);
  });
}

export async function navigate(): Promise<void> {
  const route = parseRoute(window.location.hash);
  if (route.kind === "start") return showStart();
  if (route.kind === "overview") return showOverview(route.sessionId);
  return showDocument(route.sessionId, route.docId);
}

export function start(): void {
  window.addEventListener("hashchange", () => void navigate());
  void navigate();
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  start();
}
