// Incremental server-sent-events parsing. The gateway emits named events
// (`token`, `done`) with one JSON object per `data:` line.

export interface SseEvent {
  event: string;
  data: unknown;
}

/** Split a buffer into complete SSE blocks, returning the unfinished tail. */
export function drainSseBuffer(buffer: string): { events: SseEvent[]; rest: string } {
  const events: SseEvent[] = [];
  const blocks = buffer.split("\n\n");
  const rest = blocks.pop() ?? "";
  for (const block of blocks) {
    let name = "message";
    let data = "";
    for (const line of block.split("\n")) {
      if (line.startsWith("event: ")) name = line.slice("event: ".length);
      else if (line.startsWith("data: ")) data += line.slice("data: ".length);
    }
    if (data) events.push({ event: name, data: JSON.parse(data) });
  }
  return { events, rest };
}
