// Thin typed client over the studio service HTTP API.

import type { GenerationParams } from "./state.js";
import { requestBody } from "./state.js";

export interface JobRecord {
  job_id: string;
  status: "queued" | "running" | "done" | "failed";
  latent_id?: string;
  error?: string;
}

export interface StyleEntry {
  id: string;
  metadata: string;
}

export interface ServiceMeta {
  resolution: number;
  n_scales: number;
  blocks: number;
  directions: string[];
}

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(`${status}: ${detail}`);
  }
}

async function check(resp: Response): Promise<Response> {
  if (!resp.ok) {
    let detail = resp.statusText;
    try {
      const body = await resp.json();
      if (body && typeof body.detail === "string") detail = body.detail;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(resp.status, detail);
  }
  return resp;
}

export class StudioApi {
  constructor(private base: string = "", private fetcher: typeof fetch = fetch) {}

  private url(path: string): string {
    return this.base + path;
  }

  async meta(): Promise<ServiceMeta> {
    return (await check(await this.fetcher(this.url("/meta")))).json();
  }

  async uploadPhoto(file: Blob, filename = "photo.png"): Promise<string> {
    const form = new FormData();
    form.append("file", file, filename);
    const resp = await check(await this.fetcher(this.url("/invert"), { method: "POST", body: form }));
    return (await resp.json()).job_id;
  }

  async job(jobId: string): Promise<JobRecord> {
    return (await check(await this.fetcher(this.url(`/jobs/${jobId}`)))).json();
  }

  /** Poll an inversion job until it settles; reports status ticks to onTick. */
  async waitForLatent(jobId: string, onTick?: (r: JobRecord) => void,
                      intervalMs = 500, timeoutMs = 600_000): Promise<string> {
    const start = Date.now();
    for (;;) {
      const record = await this.job(jobId);
      onTick?.(record);
      if (record.status === "done" && record.latent_id) return record.latent_id;
      if (record.status === "failed") throw new ApiError(500, record.error ?? "inversion failed");
      if (Date.now() - start > timeoutMs) throw new ApiError(504, "inversion timed out");
      await new Promise((r) => setTimeout(r, intervalMs));
    }
  }

  async caricature(params: GenerationParams): Promise<Blob> {
    const resp = await check(await this.fetcher(this.url("/caricature"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(requestBody(params)),
    }));
    return resp.blob();
  }

  async styles(): Promise<StyleEntry[]> {
    const body = await (await check(await this.fetcher(this.url("/styles")))).json();
    return body.styles;
  }

  thumbnailUrl(styleId: string): string {
    return this.url(`/styles/${styleId}/thumbnail`);
  }

  async curate(n = 8): Promise<string[]> {
    const resp = await check(await this.fetcher(this.url("/styles/curate"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ n }),
    }));
    return (await resp.json()).ids;
  }
}
