/**
 * Operator console: configure synthesis jobs, watch live progress,
 * inspect and download produced samples, stop runs, and tail logs.
 * All state flows from the job service API plus its event stream; the
 * rendering below is a thin projection of the tested view modules.
 */
import { ApiClient, ApiValidationError } from "./api.js";
import {
  canSubmit,
  emptyForm,
  mapServerErrors,
  toJobPayload,
  validateForm,
  type ConfigFormState,
  type PathKind,
} from "./configForm.js";
import {
  applyEvent,
  deriveView,
  initProgress,
  viewFromRecord,
  type JobProgress,
} from "./jobView.js";
import { emptyInspector, loadPage, pageCount, type InspectorState } from "./inspector.js";
import { classifyLogLine } from "./logs.js";
import { initStopButton, pressStop, stopButtonEnabled, type StopButtonState } from "./stopButton.js";
import { subscribeJobEvents, type Subscription } from "./sse.js";
import type { JobRecordWire, SampleWire } from "./types.js";

const api = new ApiClient("");

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (el === null) {
    throw new Error(`missing element #${id}`);
  }
  return el as T;
};

// ---- config form ------------------------------------------------------------

let form: ConfigFormState = emptyForm();

function readForm(): ConfigFormState {
  return {
    ...form,
    path: ($("path") as HTMLSelectElement).value as PathKind,
    instruction: ($("instruction") as HTMLTextAreaElement).value,
    numSamples: Number(($("numSamples") as HTMLInputElement).value),
    language: ($("language") as HTMLInputElement).value.trim(),
    promptTemplate: ($("promptTemplate") as HTMLInputElement).value,
    corpusDir: ($("corpusDir") as HTMLInputElement).value,
    hubTokenEnv: ($("hubTokenEnv") as HTMLInputElement).value,
    teacherBaseUrl: ($("teacherBaseUrl") as HTMLInputElement).value,
    teacherModel: ($("teacherModel") as HTMLInputElement).value,
    generatorBaseUrl: ($("generatorBaseUrl") as HTMLInputElement).value,
    generatorModel: ($("generatorModel") as HTMLInputElement).value,
    qualityEnabled: ($("qualityEnabled") as HTMLInputElement).checked,
    thresholdSolved: Number(($("thresholdSolved") as HTMLInputElement).value),
    thresholdUnsolved: Number(($("thresholdUnsolved") as HTMLInputElement).value),
  };
}

function renderFormErrors(byField: Map<string, string[]>): void {
  document.querySelectorAll(".field-error").forEach((el) => (el.textContent = ""));
  document.querySelectorAll(".invalid").forEach((el) => el.classList.remove("invalid"));
  for (const [field, messages] of byField) {
    const slot = document.getElementById(`err-${field}`);
    if (slot !== null) {
      slot.textContent = messages.join("; ");
    }
    const input = document.getElementById(field);
    input?.classList.add("invalid");
  }
  $("form-notice").textContent = byField.has("_form")
    ? (byField.get("_form") ?? []).join("; ")
    : "";
}

function refreshFormState(): void {
  form = readForm();
  for (const kind of ["local", "web", "distill"] as const) {
    $(`panel-${kind}`).hidden = form.path !== kind;
  }
  $("panel-quality").hidden = !form.qualityEnabled;
  const errors = validateForm(form);
  const byField = new Map<string, string[]>();
  for (const err of errors) {
    byField.set(err.field, [...(byField.get(err.field) ?? []), err.message]);
  }
  renderFormErrors(byField);
  ($("submit") as HTMLButtonElement).disabled = !canSubmit(form);
}

async function submitForm(): Promise<void> {
  refreshFormState();
  if (!canSubmit(form)) {
    return;
  }
  try {
    const jobId = await api.submitJob("generate", toJobPayload(form));
    $("form-notice").textContent = `submitted job ${jobId}`;
    await refreshJobs();
    openJob(jobId);
  } catch (err) {
    if (err instanceof ApiValidationError) {
      renderFormErrors(mapServerErrors(err.issues));
    } else {
      $("form-notice").textContent = String(err);
    }
  }
}

// ---- job list ----------------------------------------------------------------

let jobs: JobRecordWire[] = [];

async function refreshJobs(): Promise<void> {
  try {
    jobs = await api.listJobs();
  } catch {
    return;
  }
  const list = $("job-list");
  list.innerHTML = "";
  for (const record of jobs) {
    const view = viewFromRecord(record);
    const row = document.createElement("li");
    row.innerHTML =
      `<span class="badge badge-${view.badge}">${view.badge}</span> ` +
      `<code>${record.job_id}</code> ${record.type} ` +
      `${view.produced}/${view.requested}`;
    row.addEventListener("click", () => openJob(record.job_id));
    list.appendChild(row);
  }
}

// ---- job detail --------------------------------------------------------------

let activeJob: string | null = null;
let progress: JobProgress | null = null;
let subscription: Subscription | null = null;
let stopState: StopButtonState = initStopButton();
let inspector: InspectorState = emptyInspector(50);

function renderProgress(): void {
  if (progress === null) {
    return;
  }
  const view = deriveView(progress);
  $("job-title").textContent = `job ${view.jobId}`;
  $("job-badge").textContent = view.badge;
  $("job-badge").className = `badge badge-${view.badge}`;
  $("counters").textContent =
    `${view.produced}/${view.requested} samples ` +
    `(${Math.round(view.percentComplete * 100)}%) - ` +
    `${view.tokensTotal} tokens`;
  if (view.error !== null) {
    $("job-error").textContent = view.error;
  }
  const stepsEl = $("steps");
  stepsEl.innerHTML = "";
  for (const step of view.steps) {
    const li = document.createElement("li");
    li.className = `step step-${step.status}`;
    li.textContent = `${step.name}: ${step.status}`;
    stepsEl.appendChild(li);
  }
  const stopButton = $("stop") as HTMLButtonElement;
  stopButton.disabled = !stopButtonEnabled(stopState, view);
  if (stopState.notice !== null) {
    $("job-error").textContent = stopState.notice;
  }
}

function appendLog(line: string): void {
  const pane = $("logs");
  const div = document.createElement("div");
  div.className = `log log-${classifyLogLine(line)}`;
  div.textContent = line;
  pane.appendChild(div);
  pane.scrollTop = pane.scrollHeight;
}

async function openJob(jobId: string): Promise<void> {
  subscription?.close();
  activeJob = jobId;
  stopState = initStopButton();
  $("logs").innerHTML = "";
  $("job-error").textContent = "";
  const record = await api.getJob(jobId);
  progress = initProgress(record);
  renderProgress();
  subscription = subscribeJobEvents(api.eventsUrl(jobId), (event) => {
    if (progress === null || activeJob !== jobId) {
      return;
    }
    progress = applyEvent(progress, event);
    if (event.kind === "log_line") {
      appendLog(String(event.payload.line ?? ""));
    }
    renderProgress();
    if (["finished", "failed", "cancelled"].includes(event.kind)) {
      void refreshJobs();
      void refreshInspector();
    }
  });
  await refreshInspector();
}

// ---- sample inspector -----------------------------------------------------------

async function refreshInspector(pageIndex = 0): Promise<void> {
  if (activeJob === null) {
    return;
  }
  try {
    inspector = await loadPage(api, activeJob, inspector, pageIndex);
  } catch {
    return;
  }
  const table = $("samples");
  table.innerHTML = "";
  inspector.rows.forEach((sample, i) => {
    const row = document.createElement("tr");
    const preview = sample.input.length > 80 ? `${sample.input.slice(0, 80)}...` : sample.input;
    row.innerHTML = `<td>${inspector.pageIndex * inspector.pageSize + i}</td><td></td>`;
    (row.children[1] as HTMLElement).textContent = preview;
    row.addEventListener("click", () => showDetail(sample));
    table.appendChild(row);
  });
  const pages = pageCount(inspector.total, inspector.pageSize);
  $("pager").textContent = pages > 0 ? `page ${inspector.pageIndex + 1} of ${pages}` : "no samples yet";
  ($("prev-page") as HTMLButtonElement).disabled = inspector.pageIndex <= 0;
  ($("next-page") as HTMLButtonElement).disabled = inspector.pageIndex >= pages - 1;
  const download = $("download") as HTMLAnchorElement;
  download.href = api.downloadUrl(activeJob);
  download.hidden = inspector.total === 0;
}

function showDetail(sample: SampleWire): void {
  const drawer = $("detail");
  drawer.hidden = false;
  $("detail-input").textContent = sample.input;
  $("detail-output").textContent = sample.output;
  $("detail-metadata").textContent = JSON.stringify(sample.metadata, null, 2);
  const img = $("detail-image") as HTMLImageElement;
  if (sample.image !== undefined) {
    img.src = sample.image;
    img.hidden = false;
  } else {
    img.hidden = true;
  }
}

// ---- wiring -----------------------------------------------------------------

export function start(): void {
  for (const id of [
    "path",
    "instruction",
    "numSamples",
    "language",
    "promptTemplate",
    "corpusDir",
    "hubTokenEnv",
    "teacherBaseUrl",
    "teacherModel",
    "generatorBaseUrl",
    "generatorModel",
    "qualityEnabled",
    "thresholdSolved",
    "thresholdUnsolved",
  ]) {
    $(id).addEventListener("input", refreshFormState);
    $(id).addEventListener("change", refreshFormState);
  }
  $("submit").addEventListener("click", () => void submitForm());
  $("stop").addEventListener("click", () => {
    if (activeJob !== null) {
      void pressStop(stopState, api, activeJob).then((next) => {
        stopState = next;
        renderProgress();
      });
    }
  });
  $("prev-page").addEventListener("click", () => void refreshInspector(inspector.pageIndex - 1));
  $("next-page").addEventListener("click", () => void refreshInspector(inspector.pageIndex + 1));
  refreshFormState();
  void refreshJobs();
  setInterval(() => void refreshJobs(), 2000);
}

if (typeof document !== "undefined" && document.readyState !== "loading") {
  start();
} else if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", start);
}
