import type { UiConfig } from "./types.js";

/** One turn as GET /v1/sessions/{id} returns it. */
export interface HistoryTurn {
  role: "user" | "assistant";
  text: string;
  citations: [string, string][];
}

export interface QueryReply {
  answer: string;
  citations: { doc_id: string; chunk_id: string; title: string }[];
  agents_used: string[];
  tools_used: string[];
  latency_ms: number;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    public detail: string,
  ) {
    super(detail || code);
    this.name = "ApiError";
  }
}

type FetchLike = (url: string, init: RequestInit) => Promise<Response>;

/**
 * Thin typed client over the service's JSON routes. Every request
 * carries the X-API-Key header; a missing key fails before any
 * request is emitted.
 */
export class ApiClient {
  constructor(
    private cfg: UiConfig,
    private fetchImpl: FetchLike = (u, i) => fetch(u, i),
  ) {}

  private headers(): Record<string, string> {
    if (!this.cfg.apiKey) {
      throw new ApiError(0, "config", "API key is not set");
    }
    return {
      "X-API-Key": this.cfg.apiKey,
      "Content-Type": "application/json",
    };
  }

  private async request(method: string, path: string, body?: unknown): Promise<unknown> {
    const headers = this.headers();
    let res: Response;
    try {
      res = await this.fetchImpl(this.cfg.baseUrl + path, {
        method,
        headers,
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (e: any) {
      throw new ApiError(0, "network", String(e?.message || e));
    }
    if (res.status === 204) return null;
    let payload: any = null;
    try {
      payload = await res.json();
    } catch {
      // non-JSON body; fall through with the status alone
    }
    if (!res.ok) {
      throw new ApiError(
        res.status,
        payload?.error || "http_" + res.status,
        payload?.detail || "",
      );
    }
    return payload;
  }

  async createSession(): Promise<string> {
    const out = (await this.request("POST", "/v1/sessions", {})) as { session_id: string };
    return out.session_id;
  }

  async getHistory(sessionId: string): Promise<HistoryTurn[]> {
    const out = (await this.request("GET", "/v1/sessions/" + sessionId)) as {
      turns: HistoryTurn[];
    };
    return out.turns;
  }

  async query(sessionId: string, text: string): Promise<QueryReply> {
    return (await this.request(
      "POST",
      "/v1/sessions/" + sessionId + "/query",
      { text },
    )) as QueryReply;
  }
}
