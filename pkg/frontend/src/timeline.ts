import type { LogRecord, ResultRecord, StepRecord } from "./types.js";
import { isResult, isStep } from "./types.js";

/** One rendered row of the run timeline. */
export interface TimelineRow {
  index: number;
  kind: "actor" | "hitl";
  target: string;
  decidedBy: string;
  attempts: number;
  success: boolean;
  terminated: boolean;
  mode?: "default" | "console";
  label: string;
  detail: string;
}

function truncate(text: string, limit = 160): string {
  return text.length <= limit ? text : text.slice(0, limit - 3) + "...";
}

export function stepRow(step: StepRecord): TimelineRow {
  if (step.outcome.kind === "hitl") {
    const o = step.outcome;
    return {
      index: step.index,
      kind: "hitl",
      target: step.target,
      decidedBy: step.decided_by,
      attempts: 1,
      success: true,
      terminated: false,
      mode: o.mode,
      label: `answered (${o.mode})`,
      detail: truncate(`Q: ${o.question} A: ${o.answer}`),
    };
  }
  const o = step.outcome;
  let label: string;
  if (o.terminated) label = "TERMINATE";
  else if (o.success) label = `ok in ${o.attempts}`;
  else label = `failed after ${o.attempts}`;
  const lastError = o.error_log[o.error_log.length - 1];
  return {
    index: step.index,
    kind: "actor",
    target: step.target,
    decidedBy: step.decided_by,
    attempts: o.attempts,
    success: o.success,
    terminated: o.terminated,
    label,
    detail: truncate(o.reason_tag ?? lastError ?? ""),
  };
}

/** Rows in arrival order; exactly one per step record in the log. */
export function timelineRows(records: LogRecord[]): TimelineRow[] {
  return records.filter(isStep).map(stepRow);
}

export function chatCount(records: LogRecord[]): number {
  return records.filter((r) => r.type === "chat").length;
}

export function finalResult(records: LogRecord[]): ResultRecord | null {
  for (let i = records.length - 1; i >= 0; i -= 1) {
    const record = records[i];
    if (record !== undefined && isResult(record)) return record;
  }
  return null;
}

/** Compact per-actor tally like "code_generator 2 ok / 1 failed". */
export function perActorLines(result: ResultRecord): string[] {
  return Object.entries(result.per_actor).map(
    ([actor, tally]) =>
      `${actor}: ${tally.successes} ok / ${tally.failures} failed`,
  );
}
