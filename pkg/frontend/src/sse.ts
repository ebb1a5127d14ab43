/** Minimal text/event-stream reader over fetch bodies.
 *
 * Works in both browsers and Node 20 (no EventSource dependency).
 * Comment lines (leading colon) are keepalive pings and are dropped;
 * an unterminated trailing event is discarded, matching EventSource.
 */

export interface SseEvent {
  id?: string;
  event?: string;
  data: string;
}

export async function* readEventStream(
  body: ReadableStream<Uint8Array>,
): AsyncGenerator<SseEvent> {
  const reader = body.getReader();
  const decoder = new TextDecoder();
  let buffer = "";
  let dataLines: string[] = [];
  let id: string | undefined;
  let eventName: string | undefined;

  const dispatch = (): SseEvent | null => {
    if (dataLines.length === 0) {
      id = undefined;
      eventName = undefined;
      return null;
    }
    const out: SseEvent = { data: dataLines.join("\n") };
    if (id !== undefined) out.id = id;
    if (eventName !== undefined) out.event = eventName;
    dataLines = [];
    id = undefined;
    eventName = undefined;
    return out;
  };

  try {
    for (;;) {
      const { done, value } = await reader.read();
      if (done) break;
      buffer += decoder.decode(value, { stream: true });
      let newline;
      while ((newline = buffer.indexOf("\n")) >= 0) {
        let line = buffer.slice(0, newline);
        buffer = buffer.slice(newline + 1);
        if (line.endsWith("\r")) line = line.slice(0, -1);
        if (line === "") {
          const event = dispatch();
          if (event) yield event;
          continue;
        }
        if (line.startsWith(":")) continue;
        const colon = line.indexOf(":");
        const field = colon < 0 ? line : line.slice(0, colon);
        let value2 = colon < 0 ? "" : line.slice(colon + 1);
        if (value2.startsWith(" ")) value2 = value2.slice(1);
        if (field === "data") dataLines.push(value2);
        else if (field === "id") id = value2;
        else if (field === "event") eventName = value2;
      }
    }
  } finally {
    reader.releaseLock();
  }
}
