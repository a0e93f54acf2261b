import type { ConfigIssueWire } from "./types.js";

export type PathKind = "local" | "web" | "distill";

/**
 * Form state for the synthesis task panel. Client-side validation mirrors
 * only the cheap structural rules; the server validator stays the source
 * of truth and its 422 error list maps back onto these fields.
 */
export interface ConfigFormState {
  path: PathKind;
  instruction: string;
  numSamples: number;
  language: string;
  promptTemplate: string;
  // local panel
  corpusDir: string;
  // web panel
  hubTokenEnv: string;
  // distill panel
  teacherBaseUrl: string;
  teacherModel: string;
  // generator endpoint
  generatorBaseUrl: string;
  generatorModel: string;
  // quality panel
  qualityEnabled: boolean;
  thresholdSolved: number;
  thresholdUnsolved: number;
  judgeBaseUrl: string;
  judgeModel: string;
  baseModelBaseUrl: string;
  baseModelModel: string;
  outputDir: string;
}

export function emptyForm(): ConfigFormState {
  return {
    path: "local",
    instruction: "",
    numSamples: 100,
    language: "en",
    promptTemplate: "",
    corpusDir: "",
    hubTokenEnv: "HF_TOKEN",
    teacherBaseUrl: "",
    teacherModel: "",
    generatorBaseUrl: "mock://generator",
    generatorModel: "mock",
    qualityEnabled: false,
    thresholdSolved: 0.8,
    thresholdUnsolved: 0.2,
    judgeBaseUrl: "mock://judge",
    judgeModel: "mock",
    baseModelBaseUrl: "mock://base",
    baseModelModel: "mock",
    outputDir: "",
  };
}

export interface FieldError {
  field: string;
  message: string;
}

const ISO_639_1 = /^[a-z]{2}$/;
const ABSOLUTE_URL = /^[a-z][a-z0-9+.-]*:\/\/.+/i;

export function validateForm(state: ConfigFormState): FieldError[] {
  const errors: FieldError[] = [];
  if (!state.instruction.trim()) {
    errors.push({ field: "instruction", message: "instruction is required" });
  }
  if (!Number.isInteger(state.numSamples) || state.numSamples <= 0) {
    errors.push({ field: "numSamples", message: "quantity must be a positive integer" });
  }
  if (!ISO_639_1.test(state.language)) {
    errors.push({ field: "language", message: "language must be a two-letter code" });
  }
  if (state.path === "local" && !state.corpusDir.trim()) {
    errors.push({ field: "corpusDir", message: "corpus directory is required for the local path" });
  }
  if (state.path === "distill") {
    if (!ABSOLUTE_URL.test(state.teacherBaseUrl)) {
      errors.push({ field: "teacherBaseUrl", message: "teacher base URL must be absolute" });
    }
    if (!state.teacherModel.trim()) {
      errors.push({ field: "teacherModel", message: "teacher model is required" });
    }
  }
  if (!ABSOLUTE_URL.test(state.generatorBaseUrl)) {
    errors.push({ field: "generatorBaseUrl", message: "generator base URL must be absolute" });
  }
  if (state.qualityEnabled && !(state.thresholdUnsolved < state.thresholdSolved)) {
    errors.push({ field: "thresholdSolved", message: "solved threshold must exceed unsolved" });
    errors.push({ field: "thresholdUnsolved", message: "unsolved threshold must be below solved" });
  }
  return errors;
}

export const canSubmit = (state: ConfigFormState): boolean =>
  validateForm(state).length === 0;

/** Render the form into the POST /api/jobs payload the server validates. */
export function toJobPayload(state: ConfigFormState): Record<string, unknown> {
  const task: Record<string, unknown> = {
    path: state.path,
    instruction: state.instruction,
    num_samples: state.numSamples,
    language: state.language,
  };
  if (state.promptTemplate.trim()) {
    task.prompt_template = state.promptTemplate.trim();
  }
  const source: Record<string, unknown> = {};
  if (state.path === "local") {
    source.local = { corpus_dir: state.corpusDir };
  } else if (state.path === "web") {
    source.web = { hub_token_env: state.hubTokenEnv || "HF_TOKEN" };
  } else {
    source.distill = {
      teacher: { base_url: state.teacherBaseUrl, model: state.teacherModel },
    };
  }
  const config: Record<string, unknown> = {
    task,
    source,
    generator: { base_url: state.generatorBaseUrl, model: state.generatorModel },
  };
  if (state.qualityEnabled) {
    config.quality = {
      enabled: true,
      threshold_solved: state.thresholdSolved,
      threshold_unsolved: state.thresholdUnsolved,
      judge: { base_url: state.judgeBaseUrl, model: state.judgeModel },
      base_model: { base_url: state.baseModelBaseUrl, model: state.baseModelModel },
    };
  }
  if (state.outputDir.trim()) {
    config.output = { dir: state.outputDir.trim() };
  }
  return config;
}

/** Server issue locations mapped onto the form fields they belong to. */
const LOC_TO_FIELDS: Array<[RegExp, string[]]> = [
  [/^task\.instruction/, ["instruction"]],
  [/^task\.num_samples/, ["numSamples"]],
  [/^task\.language/, ["language"]],
  [/^task\.prompt_template/, ["promptTemplate"]],
  [/^task\.path/, ["path"]],
  [/^source\.local/, ["corpusDir"]],
  [/^source\.web/, ["hubTokenEnv"]],
  [/^source\.distill/, ["teacherBaseUrl", "teacherModel"]],
  [/^generator/, ["generatorBaseUrl", "generatorModel"]],
  [/^quality\.judge/, ["judgeBaseUrl", "judgeModel"]],
  [/^quality\.base_model/, ["baseModelBaseUrl", "baseModelModel"]],
  [/^quality/, ["thresholdSolved", "thresholdUnsolved"]],
  [/^output/, ["outputDir"]],
];

/**
 * Map a 422 error list back onto form fields. Issues that do not match
 * any known field land under the pseudo-field "_form" so nothing is
 * silently swallowed.
 */
export function mapServerErrors(issues: ConfigIssueWire[]): Map<string, string[]> {
  const byField = new Map<string, string[]>();
  const push = (field: string, message: string) => {
    const list = byField.get(field) ?? [];
    list.push(message);
    byField.set(field, list);
  };
  for (const issue of issues) {
    const mapping = LOC_TO_FIELDS.find(([pattern]) => pattern.test(issue.loc));
    if (mapping === undefined) {
      push("_form", `${issue.loc}: ${issue.message}`);
      continue;
    }
    for (const field of mapping[1]) {
      push(field, issue.message);
    }
  }
  return byField;
}
