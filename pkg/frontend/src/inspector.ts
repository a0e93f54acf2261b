import type { ApiClient } from "./api.js";
import type { SampleWire, SamplesPage } from "./types.js";

export const pageCount = (total: number, pageSize: number): number =>
  total <= 0 ? 0 : Math.ceil(total / pageSize);

export interface InspectorState {
  pageIndex: number;
  pageSize: number;
  total: number;
  rows: SampleWire[];
  selected: SampleWire | null;
}

export function emptyInspector(pageSize = 50): InspectorState {
  return { pageIndex: 0, pageSize, total: 0, rows: [], selected: null };
}

export async function loadPage(
  api: ApiClient,
  jobId: string,
  state: InspectorState,
  pageIndex: number,
): Promise<InspectorState> {
  const bounded = Math.max(0, pageIndex);
  const page: SamplesPage = await api.samplesPage(
    jobId,
    bounded * state.pageSize,
    state.pageSize,
  );
  return {
    ...state,
    pageIndex: bounded,
    total: page.total,
    rows: page.samples,
    selected: null,
  };
}

/** Concatenate every page, in order; must equal the download file. */
export async function fetchAllSamples(
  api: ApiClient,
  jobId: string,
  pageSize = 50,
): Promise<SampleWire[]> {
  const all: SampleWire[] = [];
  let offset = 0;
  for (;;) {
    const page = await api.samplesPage(jobId, offset, pageSize);
    all.push(...page.samples);
    offset += pageSize;
    if (offset >= page.total || page.samples.length === 0) {
      return all;
    }
  }
}

export function parseDownload(text: string): SampleWire[] {
  return text
    .split("\n")
    .filter((line) => line.trim().length > 0)
    .map((line) => JSON.parse(line) as SampleWire);
}
