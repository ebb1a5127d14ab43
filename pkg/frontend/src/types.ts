// Payload shapes of the engine's control endpoint, mirrored exactly.

export interface EpisodeSummary {
  episode_id: string;
  run_label: string;
  status: string;
  events: number;
}

export interface PendingQuestion {
  question_id: string;
  question: string;
  context: string;
}

export interface Artifact {
  kind: string;
  content: string;
}

/** Outcome of an actor step after its retry loop. */
export interface ActorOutcome {
  kind: "actor";
  success: boolean;
  attempts: number;
  artifacts: [string, string][];
  reason_tag: string | null;
  fix_tag: string | null;
  terminated: boolean;
  error_log: string[];
}

/** Outcome of a human-in-the-loop exchange. */
export interface HitlOutcome {
  kind: "hitl";
  question: string;
  context: string;
  answer: string;
  mode: "default" | "console";
}

export interface ChatRecord {
  type: "chat";
  tag: string;
  prompt: string;
  response: string;
  timestamp: number;
}

export interface StepRecord {
  type: "step";
  index: number;
  decided_by: string;
  call_type: "actor" | "tool";
  target: string;
  planner_input: string;
  timestamp: number;
  outcome: ActorOutcome | HitlOutcome;
}

export interface ResultRecord {
  type: "result";
  status: string;
  total_steps: number;
  per_actor: Record<string, { successes: number; failures: number }>;
  hitl_exchanges: number;
  seed: number | null;
  run_label: string;
}

export type LogRecord = ChatRecord | StepRecord | ResultRecord;

export function isStep(record: LogRecord): record is StepRecord {
  return record.type === "step";
}

export function isResult(record: LogRecord): record is ResultRecord {
  return record.type === "result";
}
