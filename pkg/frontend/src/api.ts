import type {
  ConfigIssueWire,
  JobRecordWire,
  SamplesPage,
} from "./types.js";

export class ApiValidationError extends Error {
  constructor(readonly issues: ConfigIssueWire[]) {
    super(`config rejected: ${issues.map((i) => i.loc).join(", ")}`);
  }
}

export class AlreadyFinishedError extends Error {}

export class ApiError extends Error {
  constructor(readonly status: number, detail: string) {
    super(`api error ${status}: ${detail}`);
  }
}

export type FetchLike = typeof fetch;

/** Thin typed client over the job service; all paths hang off `/api`. */
export class ApiClient {
  constructor(
    readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = fetch,
  ) {}

  private async request(path: string, init?: RequestInit): Promise<Response> {
    return this.fetchImpl(`${this.baseUrl}${path}`, init);
  }

  private async json<T>(res: Response): Promise<T> {
    if (!res.ok) {
      throw new ApiError(res.status, await res.text());
    }
    return (await res.json()) as T;
  }

  async health(): Promise<boolean> {
    try {
      const res = await this.request("/api/health");
      return res.ok;
    } catch {
      return false;
    }
  }

  async submitJob(
    type: "generate" | "train" | "eval",
    config: Record<string, unknown>,
  ): Promise<string> {
    const res = await this.request("/api/jobs", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ type, config }),
    });
    if (res.status === 422) {
      const body = (await res.json()) as { errors: ConfigIssueWire[] };
      throw new ApiValidationError(body.errors ?? []);
    }
    const body = await this.json<{ job_id: string }>(res);
    return body.job_id;
  }

  async listJobs(): Promise<JobRecordWire[]> {
    return this.json(await this.request("/api/jobs"));
  }

  async getJob(jobId: string): Promise<JobRecordWire> {
    return this.json(await this.request(`/api/jobs/${jobId}`));
  }

  async cancelJob(jobId: string): Promise<void> {
    const res = await this.request(`/api/jobs/${jobId}/cancel`, { method: "POST" });
    if (res.status === 409) {
      throw new AlreadyFinishedError(await res.text());
    }
    if (!res.ok) {
      throw new ApiError(res.status, await res.text());
    }
  }

  async samplesPage(jobId: string, offset: number, limit: number): Promise<SamplesPage> {
    return this.json(
      await this.request(`/api/jobs/${jobId}/samples?offset=${offset}&limit=${limit}`),
    );
  }

  downloadUrl(jobId: string): string {
    return `${this.baseUrl}/api/jobs/${jobId}/download`;
  }

  async fetchDownload(jobId: string): Promise<string> {
    const res = await this.request(`/api/jobs/${jobId}/download`);
    if (!res.ok) {
      throw new ApiError(res.status, await res.text());
    }
    return res.text();
  }

  eventsUrl(jobId: string): string {
    return `${this.baseUrl}/api/jobs/${jobId}/events`;
  }
}
