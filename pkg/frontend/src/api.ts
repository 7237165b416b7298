/** Thin fetch client for the annotation session API. */

import type {
  DocumentDetail,
  LabelResponse,
  OverviewView,
  SkipResponse,
} from "./types";

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function request<T>(path: string, init?: RequestInit): Promise<T> {
  const resp = await fetch(path, {
    headers: { "Content-Type": "application/json" },
    ...init,
  });
  if (!resp.ok) {
    let detail = resp.statusText;
    try {
      const body = await resp.json();
      if (body && typeof body.detail === "string") detail = body.detail;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(resp.status, detail);
  }
  return (await resp.json()) as T;
}

export function createSession(
  condition: string,
  corpusId: string,
  config: Record<string, unknown> = {},
): Promise<{ session_id: string }> {
  return request("/sessions", {
    method: "POST",
    body: JSON.stringify({ condition, corpus_id: corpusId, config }),
  });
}

export function getOverview(sessionId: string): Promise<OverviewView> {
  return request(`/sessions/${sessionId}/overview`);
}

export function getDocument(
  sessionId: string,
  docId: string,
): Promise<DocumentDetail> {
  return request(`/sessions/${sessionId}/documents/${encodeURIComponent(docId)}`);
}

export function submitLabel(
  sessionId: string,
  docId: string,
  label: string,
): Promise<LabelResponse> {
  return request(`/sessions/${sessionId}/labels`, {
    method: "POST",
    body: JSON.stringify({ doc_id: docId, label }),
  });
}

export function skipDocument(
  sessionId: string,
  docId: string,
): Promise<SkipResponse> {
  return request(`/sessions/${sessionId}/skip`, {
    method: "POST",
    body: JSON.stringify({ doc_id: docId }),
  });
}
