import type { ProgressEventWire } from "./types.js";
import { TERMINAL_KINDS } from "./types.js";

/**
 * Incremental parser for `data: <json>\n\n` frames. Comment lines
 * (starting with ":") and any other fields are ignored.
 */
export class SseParser {
  private buffer = "";

  feed(chunk: string): string[] {
    this.buffer += chunk.replace(/\r\n/g, "\n");
    const frames: string[] = [];
    let cut: number;
    while ((cut = this.buffer.indexOf("\n\n")) !== -1) {
      const raw = this.buffer.slice(0, cut);
      this.buffer = this.buffer.slice(cut + 2);
      const dataLines = raw
        .split("\n")
        .filter((line) => line.startsWith("data:"))
        .map((line) => line.slice(5).trimStart());
      if (dataLines.length > 0) {
        frames.push(dataLines.join("\n"));
      }
    }
    return frames;
  }
}

export interface SubscribeOptions {
  fetchImpl?: typeof fetch;
  /** Delay before reconnecting after a dropped stream. */
  retryDelayMs?: number;
  /** Stop retrying after this many consecutive failed connects. */
  maxRetries?: number;
}

export interface Subscription {
  close(): void;
  /** Resolves once a terminal event arrived or the subscription closed. */
  done: Promise<void>;
}

const sleep = (ms: number) => new Promise((resolve) => setTimeout(resolve, ms));

/**
 * Follow a job's event stream with replay deduplication.
 *
 * The server always replays from seq=0; on reconnect (stream drop, network
 * error) events already seen are filtered out by seq, so `onEvent` sees
 * every event exactly once and in order. The subscription ends itself when
 * a terminal event (finished/failed/cancelled) arrives.
 */
export function subscribeJobEvents(
  eventsUrl: string,
  onEvent: (event: ProgressEventWire) => void,
  options: SubscribeOptions = {},
): Subscription {
  const fetchImpl = options.fetchImpl ?? fetch;
  const retryDelayMs = options.retryDelayMs ?? 250;
  const maxRetries = options.maxRetries ?? 20;
  let closed = false;
  let lastSeq = -1;

  const done = (async () => {
    let failures = 0;
    while (!closed && failures <= maxRetries) {
      let sawTerminal = false;
      try {
        const res = await fetchImpl(eventsUrl);
        if (!res.ok || res.body === null) {
          throw new Error(`events endpoint returned ${res.status}`);
        }
        failures = 0;
        const parser = new SseParser();
        const reader = res.body.getReader();
        const decoder = new TextDecoder();
        while (!closed) {
          const { done: eof, value } = await reader.read();
          if (eof) {
            break;
          }
          for (const frame of parser.feed(decoder.decode(value, { stream: true }))) {
            let event: ProgressEventWire;
            try {
              event = JSON.parse(frame) as ProgressEventWire;
            } catch {
              continue;
            }
            if (event.seq <= lastSeq) {
              continue; // replayed duplicate after reconnect
            }
            lastSeq = event.seq;
            onEvent(event);
            if (TERMINAL_KINDS.includes(event.kind)) {
              sawTerminal = true;
            }
          }
          if (sawTerminal) {
            await reader.cancel().catch(() => undefined);
            return;
          }
        }
        if (closed) {
          await reader.cancel().catch(() => undefined);
          return;
        }
        // stream ended without a terminal event: treat as a drop
      } catch {
        failures += 1;
      }
      if (!closed) {
        await sleep(retryDelayMs);
      }
    }
  })();

  return {
    close() {
      closed = true;
    },
    done,
  };
}
