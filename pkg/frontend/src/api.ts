// Thin client over the service HTTP API. The fetch implementation is
// injected so tests can run against a mock service.

import type { AttemptInfo, RunSnapshot, RunSummary, ServiceEvent } from "./types.js";
import type { RunRequestBody } from "./validate.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    public status: number,
    public body: Record<string, unknown>,
  ) {
    super(`${status}: ${JSON.stringify(body)}`);
  }

  get errorType(): string {
    return String(this.body.error ?? "");
  }
}

export class ApiClient {
  constructor(
    private baseUrl: string = "",
    private fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const reply = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    const body = await reply.json().catch(() => ({}));
    if (!reply.ok) throw new ApiError(reply.status, body);
    return body as T;
  }

  createRun(body: RunRequestBody): Promise<{ run_id: string }> {
    return this.request("/runs", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  listRuns(): Promise<RunSummary[]> {
    return this.request("/runs");
  }

  getRun(runId: string): Promise<RunSnapshot> {
    return this.request(`/runs/${runId}`);
  }

  getEvents(runId: string, after: number): Promise<ServiceEvent[]> {
    return this.request(`/runs/${runId}/events.json?after=${after}`);
  }

  repair(runId: string, pages?: number[]): Promise<{ run_id: string; status: string }> {
    return this.request(`/runs/${runId}/repair`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(pages && pages.length > 0 ? { pages } : {}),
    });
  }

  attempts(runId: string, page: number): Promise<AttemptInfo[]> {
    return this.request(`/runs/${runId}/pages/${page}/attempts`);
  }

  feedback(runId: string): Promise<{ lines: string[] }> {
    return this.request(`/runs/${runId}/feedback`);
  }

  artifactUrl(runId: string, artifactId: string): string {
    return `${this.baseUrl}/runs/${runId}/artifacts/${artifactId}`;
  }

  bookArchiveUrl(runId: string): string {
    return `${this.baseUrl}/runs/${runId}/book?format=archive`;
  }
}
