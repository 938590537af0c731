// Live progress subscription with resume: events arrive over SSE (or any
// injected source), are de-duplicated by sequence number, and a dropped
// connection resumes from the last seq seen, so reconnects never repaint
// cards twice.

import type { ServiceEvent } from "./types.js";

export interface EventSourceLike {
  close(): void;
  onmessage: ((event: { lastEventId: string; type: string; data: string }) => void) | null;
  onerror: ((error: unknown) => void) | null;
}

export type SourceFactory = (runId: string, afterSeq: number) => EventSourceLike;

export interface Subscription {
  close(): void;
}

export function makeBrowserSource(baseUrl = ""): SourceFactory {
  return (runId, afterSeq) => {
    const source = new EventSource(`${baseUrl}/runs/${runId}/events?after=${afterSeq}`);
    const wrapper: EventSourceLike = {
      close: () => source.close(),
      onmessage: null,
      onerror: null,
    };
    // the service names its SSE events; funnel every type through onmessage
    const types = [
      "status", "planned", "page", "attempt", "page_done",
      "audit", "warning", "done", "failed", "end",
    ];
    for (const type of types) {
      source.addEventListener(type, (raw) => {
        const message = raw as MessageEvent;
        wrapper.onmessage?.({ lastEventId: message.lastEventId, type, data: message.data });
      });
    }
    source.onerror = (error) => wrapper.onerror?.(error);
    return wrapper;
  };
}

export function subscribe(
  runId: string,
  onEvent: (event: ServiceEvent) => void,
  makeSource: SourceFactory,
  options: { reconnectDelayMs?: number; startAfter?: number } = {},
): Subscription {
  let lastSeq = options.startAfter ?? -1;
  let closed = false;
  let source: EventSourceLike | null = null;
  let timer: ReturnType<typeof setTimeout> | null = null;

  const open = () => {
    if (closed) return;
    source = makeSource(runId, lastSeq);
    source.onmessage = (message) => {
      if (message.type === "end") {
        close();
        return;
      }
      const seq = Number(message.lastEventId);
      if (Number.isFinite(seq) && seq <= lastSeq) return; // duplicate after reconnect
      if (Number.isFinite(seq)) lastSeq = seq;
      onEvent({ seq, event: message.type, data: JSON.parse(message.data) });
    };
    source.onerror = () => {
      source?.close();
      if (!closed) {
        timer = setTimeout(open, options.reconnectDelayMs ?? 500);
      }
    };
  };

  const close = () => {
    closed = true;
    if (timer !== null) clearTimeout(timer);
    source?.close();
  };

  open();
  return { close };
}
