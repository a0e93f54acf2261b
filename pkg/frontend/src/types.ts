/** Wire types mirrored from the job service HTTP API. */

export type JobPhase = "pending" | "running" | "completed" | "failed" | "cancelled";

export type StepStatus = "waiting" | "active" | "done" | "failed";

export interface StepState {
  name: string;
  status: StepStatus;
}

export interface JobStateWire {
  job_id: string;
  phase: JobPhase;
  steps: StepState[];
  produced: number;
  requested: number;
  tokens_prompt: number;
  tokens_completion: number;
  elapsed_s: number;
  error: string | null;
}

export interface JobRecordWire {
  job_id: string;
  type: "generate" | "train" | "eval";
  state: JobStateWire;
  config: Record<string, unknown>;
  output_dir: string;
  created_at: number;
  updated_at: number;
}

export type EventKind =
  | "step_started"
  | "step_done"
  | "item_done"
  | "tokens"
  | "log_line"
  | "finished"
  | "failed"
  | "cancelled";

export const TERMINAL_KINDS: EventKind[] = ["finished", "failed", "cancelled"];

export interface ProgressEventWire {
  job_id: string;
  kind: EventKind;
  payload: Record<string, unknown>;
  seq: number;
}

export interface SampleWire {
  input: string;
  output: string;
  image?: string;
  audio?: string;
  metadata: Record<string, unknown>;
}

export interface SamplesPage {
  total: number;
  offset: number;
  limit: number;
  samples: SampleWire[];
}

export interface ConfigIssueWire {
  loc: string;
  code: string;
  message: string;
}
