/**
 * Behavior log: the same NDJSON observation grammar the simulator emits,
 * {tick, seq, kind, ...fields}, append-only, seq strictly increasing.
 * Records can be mirrored to a sink (the coordinator socket) as produced.
 */

export interface LogRecord {
  tick: number;
  seq: number;
  kind: string;
  [field: string]: unknown;
}

export type LogSink = (record: LogRecord) => void;

export class BehaviorLog {
  readonly records: LogRecord[] = [];
  private seq = 0;
  private sink: LogSink | null = null;
  private backlog: LogRecord[] = [];

  add(tick: number, kind: string, fields: Record<string, unknown> = {}): LogRecord {
    const record: LogRecord = { tick, seq: this.seq++, kind, ...fields };
    this.records.push(record);
    if (this.sink) {
      this.sink(record);
    } else {
      this.backlog.push(record);
    }
    return record;
  }

  /** Attach the streaming sink; anything logged before attachment is
   * replayed first so the remote copy stays complete and ordered. */
  attachSink(sink: LogSink): void {
    this.sink = sink;
    for (const record of this.backlog) sink(record);
    this.backlog = [];
  }

  kinds(): string[] {
    return this.records.map((r) => r.kind);
  }

  ndjson(): string {
    return this.records
      .map((r) => {
        const sorted = Object.fromEntries(Object.entries(r).sort(([a], [b]) => (a < b ? -1 : 1)));
        return JSON.stringify(sorted);
      })
      .join("\n");
  }
}
