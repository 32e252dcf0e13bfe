import {
  ApiError,
  CreateSessionRequest,
  CreateSessionResponse,
  LabelResponse,
  SessionApi,
  TrajectoryResponse,
} from "./types.js";

type FetchLike = typeof fetch;

/** fetch-backed client for the session service. */
export class HttpSessionApi implements SessionApi {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = fetch
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchImpl(this.baseUrl + path, init);
    const body = await resp.json();
    if (!resp.ok) {
      throw new ApiError(
        resp.status,
        body.error_code ?? "unknown",
        body.message ?? resp.statusText
      );
    }
    return body as T;
  }

  createSession(req: CreateSessionRequest): Promise<CreateSessionResponse> {
    return this.request("/sessions", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(req),
    });
  }

  postLabel(
    sessionId: string,
    q: [number, number],
    label: 0 | 1
  ): Promise<LabelResponse> {
    return this.request(`/sessions/${sessionId}/label`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ q, label }),
    });
  }

  getTrajectory(sessionId: string): Promise<TrajectoryResponse> {
    return this.request(`/sessions/${sessionId}/trajectory`);
  }

  stopSession(sessionId: string): Promise<{ stop_reason: string }> {
    return this.request(`/sessions/${sessionId}/stop`, { method: "POST" });
  }
}
