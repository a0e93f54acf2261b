import type {
  JobPhase,
  JobRecordWire,
  ProgressEventWire,
  StepState,
} from "./types.js";

/**
 * Event-stream projection of one job. UI state is a pure function of
 * (initial record, applied events); replaying the same events after a
 * reload reconstructs an identical view.
 */
export interface JobProgress {
  jobId: string;
  phase: JobPhase;
  steps: StepState[];
  produced: number;
  requested: number;
  tokensPrompt: number;
  tokensCompletion: number;
  logs: string[];
  error: string | null;
  lastSeq: number;
}

export interface UiJobView {
  jobId: string;
  phase: JobPhase;
  percentComplete: number;
  tokensTotal: number;
  canCancel: boolean;
  steps: StepState[];
  produced: number;
  requested: number;
  error: string | null;
  badge: string;
}

export function initProgress(record: JobRecordWire): JobProgress {
  return {
    jobId: record.job_id,
    phase: record.state.phase,
    steps: record.state.steps.map((s) => ({ ...s })),
    produced: 0,
    requested: record.state.requested,
    tokensPrompt: 0,
    tokensCompletion: 0,
    logs: [],
    error: record.state.error,
    lastSeq: -1,
  };
}

const asNumber = (value: unknown): number =>
  typeof value === "number" && Number.isFinite(value) ? value : 0;

/** Apply one progress event; duplicates (seq already seen) are no-ops. */
export function applyEvent(progress: JobProgress, event: ProgressEventWire): JobProgress {
  if (event.seq <= progress.lastSeq) {
    return progress;
  }
  const next: JobProgress = {
    ...progress,
    steps: progress.steps.map((s) => ({ ...s })),
    logs: progress.logs.slice(),
    lastSeq: event.seq,
  };
  switch (event.kind) {
    case "step_started":
      setStep(next.steps, String(event.payload.step ?? ""), "active");
      next.phase = "running";
      break;
    case "step_done":
      setStep(next.steps, String(event.payload.step ?? ""), "done");
      break;
    case "item_done":
      next.produced = asNumber(event.payload.produced);
      break;
    case "tokens":
      next.tokensPrompt += asNumber(event.payload.prompt);
      next.tokensCompletion += asNumber(event.payload.completion);
      break;
    case "log_line":
      next.logs.push(String(event.payload.line ?? ""));
      break;
    case "finished":
      next.phase = "completed";
      next.produced = asNumber(event.payload.produced);
      break;
    case "failed":
      next.phase = "failed";
      next.error = String(event.payload.error ?? "unknown error");
      break;
    case "cancelled":
      next.phase = "cancelled";
      break;
  }
  return next;
}

function setStep(steps: StepState[], name: string, status: StepState["status"]): void {
  for (const step of steps) {
    if (step.name === name) {
      step.status = status;
      return;
    }
  }
  steps.push({ name, status });
}

const clamp01 = (value: number): number => Math.min(1, Math.max(0, value));

export function deriveView(progress: JobProgress): UiJobView {
  return {
    jobId: progress.jobId,
    phase: progress.phase,
    percentComplete:
      progress.requested > 0 ? clamp01(progress.produced / progress.requested) : 0,
    tokensTotal: progress.tokensPrompt + progress.tokensCompletion,
    canCancel: progress.phase === "running",
    steps: progress.steps,
    produced: progress.produced,
    requested: progress.requested,
    error: progress.error,
    badge: progress.phase,
  };
}

/** View straight from a job record, for list rows without an event stream. */
export function viewFromRecord(record: JobRecordWire): UiJobView {
  const state = record.state;
  return {
    jobId: record.job_id,
    phase: state.phase,
    percentComplete:
      state.requested > 0 ? clamp01(state.produced / state.requested) : 0,
    tokensTotal: state.tokens_prompt + state.tokens_completion,
    canCancel: state.phase === "running",
    steps: state.steps,
    produced: state.produced,
    requested: state.requested,
    error: state.error,
    badge: state.phase,
  };
}
