import { ApiError, ConnectionFailed, StaleQuestion } from "./errors.js";
import { readEventStream } from "./sse.js";
import type {
  Artifact,
  EpisodeSummary,
  LogRecord,
  PendingQuestion,
} from "./types.js";

async function errorDetail(resp: Response): Promise<string> {
  try {
    const body = (await resp.json()) as { error?: string };
    if (typeof body.error === "string") return body.error;
  } catch {
    // non-JSON error body; fall through to the status line
  }
  return `HTTP ${resp.status}`;
}

/** Typed client for the engine's control routes; no other backend. */
export class ControlClient {
  readonly baseUrl: string;

  constructor(baseUrl: string) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private async getJson<T>(path: string): Promise<T> {
    let resp: Response;
    try {
      resp = await fetch(this.baseUrl + path);
    } catch (err) {
      throw new ConnectionFailed(
        `cannot reach ${this.baseUrl}${path}: ${String(err)}`,
      );
    }
    if (!resp.ok) throw new ApiError(resp.status, await errorDetail(resp));
    return (await resp.json()) as T;
  }

  async listEpisodes(): Promise<EpisodeSummary[]> {
    const body = await this.getJson<{ episodes: EpisodeSummary[] }>(
      "/episodes",
    );
    return body.episodes;
  }

  async pendingQuestions(episodeId: string): Promise<PendingQuestion[]> {
    const body = await this.getJson<{ pending: PendingQuestion[] }>(
      `/episodes/${episodeId}/questions`,
    );
    return body.pending;
  }

  async artifacts(episodeId: string): Promise<Artifact[]> {
    const body = await this.getJson<{ artifacts: Artifact[] }>(
      `/episodes/${episodeId}/artifacts`,
    );
    return body.artifacts;
  }

  /** POST an answer; resolves to the acknowledged question id. */
  async postAnswer(
    episodeId: string,
    questionId: string,
    answer: string,
  ): Promise<string> {
    let resp: Response;
    try {
      resp = await fetch(`${this.baseUrl}/answers`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({
          episode_id: episodeId,
          question_id: questionId,
          answer,
        }),
      });
    } catch (err) {
      throw new ConnectionFailed(
        `cannot reach ${this.baseUrl}/answers: ${String(err)}`,
      );
    }
    if (resp.status === 409) throw new StaleQuestion(await errorDetail(resp));
    if (!resp.ok) throw new ApiError(resp.status, await errorDetail(resp));
    const body = (await resp.json()) as { question_id: string };
    return body.question_id;
  }

  /** Stream the episode's event log: backfill first, then live events.
   * Ends when the engine closes the stream after the final result. */
  async *events(
    episodeId: string,
    signal?: AbortSignal,
  ): AsyncGenerator<{ id: number | null; record: LogRecord }> {
    let resp: Response;
    try {
      resp = await fetch(`${this.baseUrl}/episodes/${episodeId}/events`, {
        signal,
      });
    } catch (err) {
      if (signal?.aborted) return;
      throw new ConnectionFailed(
        `cannot open event stream: ${String(err)}`,
      );
    }
    if (!resp.ok) throw new ApiError(resp.status, await errorDetail(resp));
    if (!resp.body) throw new ConnectionFailed("event stream has no body");
    try {
      for await (const event of readEventStream(resp.body)) {
        const id = event.id === undefined ? null : Number(event.id);
        yield {
          id: Number.isNaN(id as number) ? null : id,
          record: JSON.parse(event.data) as LogRecord,
        };
      }
    } catch (err) {
      if (signal?.aborted) return;
      throw new ConnectionFailed(`event stream dropped: ${String(err)}`);
    }
  }
}
