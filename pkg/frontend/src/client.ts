/** Thin HTTP client over the monitoring service plus a server-sent-event
 * subscription with reconnect and backoff. Fetch is injectable so tests can
 * run without a network. */

import type {
  CriticalGeneratorsPayload, ReportRecord, VerdictRecord,
} from "./types.js";

export type FetchLike = typeof fetch;

export class ApiError extends Error {
  constructor(readonly status: number, detail: string) {
    super(detail);
  }
}

async function asJson<T>(resp: Response): Promise<T> {
  if (!resp.ok) {
    let detail = resp.statusText;
    try {
      const body = (await resp.json()) as { detail?: string };
      if (body.detail) detail = body.detail;
    } catch {
      /* keep the status text */
    }
    throw new ApiError(resp.status, detail);
  }
  return (await resp.json()) as T;
}

export class ApiClient {
  constructor(
    readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = fetch,
  ) {}

  latestReport(): Promise<ReportRecord> {
    return this.get<ReportRecord>("/api/report/latest");
  }

  history(from = 0): Promise<ReportRecord[]> {
    return this.get<ReportRecord[]>(`/api/report/history?from=${from}`);
  }

  criticalGenerators(): Promise<CriticalGeneratorsPayload> {
    return this.get<CriticalGeneratorsPayload>("/api/generators/critical");
  }

  ranking(): Promise<VerdictRecord[]> {
    return this.get<VerdictRecord[]>("/api/contingencies/ranking");
  }

  async whatif(branch: string): Promise<VerdictRecord> {
    const resp = await this.fetchImpl(`${this.baseUrl}/api/whatif`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ branch }),
    });
    return asJson<VerdictRecord>(resp);
  }

  async setThreshold(threshold: number): Promise<{ threshold: number }> {
    const resp = await this.fetchImpl(`${this.baseUrl}/api/config/threshold`, {
      method: "PUT",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ threshold }),
    });
    return asJson<{ threshold: number }>(resp);
  }

  private async get<T>(path: string): Promise<T> {
    return asJson<T>(await this.fetchImpl(this.baseUrl + path));
  }
}

/** Incremental parser for a text/event-stream body: feed arbitrary chunks,
 * get the JSON payload of each complete `data:` event. */
export class SseParser {
  private buffer = "";

  feed(chunk: string): string[] {
    this.buffer += chunk;
    const events: string[] = [];
    let idx: number;
    while ((idx = this.buffer.indexOf("\n\n")) >= 0) {
      const block = this.buffer.slice(0, idx);
      this.buffer = this.buffer.slice(idx + 2);
      for (const line of block.split("\n")) {
        if (line.startsWith("data: ")) events.push(line.slice(6));
      }
    }
    return events;
  }
}

/** Exponential backoff schedule in milliseconds, capped. */
export function backoffDelay(attempt: number, baseMs = 500, capMs = 5000): number {
  return Math.min(capMs, baseMs * 2 ** Math.max(0, attempt));
}

export interface StreamHandlers {
  onReport(report: ReportRecord): void;
  onState(state: "connecting" | "live" | "stale"): void;
}

export interface StreamSubscription {
  close(): void;
}

/** Subscribe to the event stream; reconnects with backoff and reports a
 * stale connection immediately on any drop. */
export function subscribeStream(
  client: ApiClient,
  handlers: StreamHandlers,
  fetchImpl: FetchLike = fetch,
  sleep: (ms: number) => Promise<void> = (ms) =>
    new Promise((r) => setTimeout(r, ms)),
): StreamSubscription {
  let closed = false;
  const controller = { current: new AbortController() };

  (async () => {
    let attempt = 0;
    while (!closed) {
      handlers.onState(attempt === 0 ? "connecting" : "stale");
      try {
        controller.current = new AbortController();
        const resp = await fetchImpl(`${client.baseUrl}/api/stream`, {
          signal: controller.current.signal,
        });
        if (!resp.ok || !resp.body) throw new ApiError(resp.status, "no stream");
        handlers.onState("live");
        attempt = 0;
        const reader = resp.body.getReader();
        const decoder = new TextDecoder();
        const parser = new SseParser();
        for (;;) {
          const { done, value } = await reader.read();
          if (done) break;
          for (const payload of parser.feed(decoder.decode(value))) {
            handlers.onReport(JSON.parse(payload) as ReportRecord);
          }
        }
        throw new Error("stream ended");
      } catch {
        if (closed) return;
        handlers.onState("stale");
        await sleep(backoffDelay(attempt));
        attempt += 1;
      }
    }
  })();

  return {
    close() {
      closed = true;
      controller.current.abort();
    },
  };
}
