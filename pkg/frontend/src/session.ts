import { ControlClient } from "./api.js";
import { ConnectionFailed, StaleQuestion, ValidationError } from "./errors.js";
import type { Artifact, LogRecord, PendingQuestion } from "./types.js";
import { isResult } from "./types.js";

export type ConnectionState =
  | "connecting"
  | "live"
  | "retrying"
  | "ended"
  | "failed";

export interface SessionOptions {
  /** Reconnect attempts after a dropped stream before giving up. */
  maxRetries?: number;
  /** Base backoff delay in ms, doubled on each consecutive failure. */
  retryDelayMs?: number;
  /** Called after every state change (new event, question, status). */
  onChange?: (session: ConsoleSession) => void;
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

/** One console's view of one live episode.
 *
 * Attaching subscribes to the event stream (history is backfilled by
 * the endpoint, so mid-run attachment sees every prior event). The
 * cursor counts consumed events and never moves backwards; after a
 * reconnect, replayed backfill below the cursor is skipped. The only
 * write this session ever performs is posting HITL answers.
 */
export class ConsoleSession {
  readonly client: ControlClient;
  readonly episodeId: string;

  cursor = 0;
  records: LogRecord[] = [];
  status = "running";
  pending: PendingQuestion[] = [];
  artifacts: Artifact[] = [];
  connection: ConnectionState = "connecting";
  lastError = "";

  private readonly maxRetries: number;
  private readonly retryDelayMs: number;
  private readonly onChange?: (session: ConsoleSession) => void;
  private readonly controller = new AbortController();
  private consumeLoop: Promise<void> = Promise.resolve();

  private constructor(
    client: ControlClient,
    episodeId: string,
    options: SessionOptions,
  ) {
    this.client = client;
    this.episodeId = episodeId;
    this.maxRetries = options.maxRetries ?? 5;
    this.retryDelayMs = options.retryDelayMs ?? 250;
    this.onChange = options.onChange;
  }

  /** Verify the endpoint and episode, then subscribe to the stream. */
  static async attach(
    endpointUrl: string,
    episodeId: string,
    options: SessionOptions = {},
  ): Promise<ConsoleSession> {
    const session = new ConsoleSession(
      new ControlClient(endpointUrl),
      episodeId,
      options,
    );
    // raises ConnectionFailed (endpoint down) or ApiError 404 (no such
    // episode) before any stream is opened
    session.pending = await session.client.pendingQuestions(episodeId);
    session.consumeLoop = session.consume();
    return session;
  }

  private notify(): void {
    this.onChange?.(this);
  }

  private ingest(record: LogRecord): void {
    this.records.push(record);
    this.cursor += 1;
    if (isResult(record)) this.status = record.status;
  }

  private async consume(): Promise<void> {
    let failures = 0;
    for (;;) {
      try {
        for await (const { id, record } of this.client.events(
          this.episodeId,
          this.controller.signal,
        )) {
          const ordinal = id ?? this.cursor;
          if (ordinal < this.cursor) continue; // replayed backfill
          this.ingest(record);
          failures = 0;
          if (this.connection !== "live") this.connection = "live";
          this.notify();
        }
        // clean close: the engine streamed the final result (or we
        // aborted locally)
        this.connection = "ended";
        this.notify();
        return;
      } catch (err) {
        if (this.controller.signal.aborted) {
          this.connection = "ended";
          this.notify();
          return;
        }
        failures += 1;
        this.lastError = String(err);
        if (failures > this.maxRetries) {
          this.connection = "failed";
          this.notify();
          return;
        }
        this.connection = "retrying";
        this.notify();
        await sleep(this.retryDelayMs * 2 ** (failures - 1));
      }
    }
  }

  async refreshQuestions(): Promise<PendingQuestion[]> {
    this.pending = await this.client.pendingQuestions(this.episodeId);
    this.notify();
    return this.pending;
  }

  async refreshArtifacts(): Promise<Artifact[]> {
    this.artifacts = await this.client.artifacts(this.episodeId);
    this.notify();
    return this.artifacts;
  }

  /** Poll until the engine parks a question, or give up after
   * timeoutMs and resolve with an empty list. */
  async waitForQuestion(
    timeoutMs: number,
    pollMs = 50,
  ): Promise<PendingQuestion[]> {
    const deadline = Date.now() + timeoutMs;
    for (;;) {
      const pending = await this.refreshQuestions();
      if (pending.length > 0 || Date.now() >= deadline) return pending;
      await sleep(pollMs);
    }
  }

  /** Resolve once the stream has ended (or retries are exhausted). */
  async waitForEnd(timeoutMs: number): Promise<void> {
    let timer: ReturnType<typeof setTimeout> | undefined;
    const timeout = new Promise<never>((_, reject) => {
      timer = setTimeout(
        () => reject(new Error(`episode still open after ${timeoutMs}ms`)),
        timeoutMs,
      );
    });
    try {
      await Promise.race([this.consumeLoop, timeout]);
    } finally {
      clearTimeout(timer);
    }
  }

  /** Validate and POST an answer; on 2xx the question leaves pending.
   * Empty text is rejected locally and nothing is sent. */
  async answerQuestion(questionId: string, text: string): Promise<string> {
    const answer = text.trim();
    if (answer === "") {
      throw new ValidationError("answer text must not be empty");
    }
    try {
      const acknowledged = await this.client.postAnswer(
        this.episodeId,
        questionId,
        answer,
      );
      this.pending = this.pending.filter(
        (q) => q.question_id !== questionId,
      );
      this.notify();
      return acknowledged;
    } catch (err) {
      if (err instanceof StaleQuestion) {
        // it left the pending set on the engine side; mirror that
        await this.refreshQuestions().catch(() => undefined);
      }
      throw err;
    }
  }

  /** Detach. The episode is unaffected beyond unanswered questions
   * eventually falling back to their default answers. */
  async close(): Promise<void> {
    this.controller.abort();
    await this.consumeLoop.catch((err) => {
      if (!(err instanceof ConnectionFailed)) throw err;
    });
  }
}
