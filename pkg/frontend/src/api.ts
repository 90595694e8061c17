/** Thin typed client over the annotation endpoints. */

import type {
  AnnotationRecord,
  AnnotationsResponse,
  Scene,
  Task,
  VerifyRequest,
  VerifyStatus,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

async function parseError(res: Response): Promise<never> {
  let detail = res.statusText;
  try {
    const body = await res.json();
    if (body && typeof body.detail === "string") detail = body.detail;
    else if (body) detail = JSON.stringify(body.detail ?? body);
  } catch {
    // keep statusText
  }
  throw new ApiError(res.status, detail);
}

export class ApiClient {
  constructor(
    private base = "",
    private fetchFn: typeof fetch = fetch,
  ) {}

  private async get<T>(path: string): Promise<T> {
    const res = await this.fetchFn(this.base + path);
    if (!res.ok) await parseError(res);
    return res.json() as Promise<T>;
  }

  private async post<T>(path: string, body: unknown): Promise<T> {
    const res = await this.fetchFn(this.base + path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!res.ok) await parseError(res);
    return res.json() as Promise<T>;
  }

  listScenes(): Promise<{ scene_ids: string[] }> {
    return this.get("/api/scenes");
  }

  getScene(sceneId: string): Promise<Scene> {
    return this.get(`/api/scenes/${encodeURIComponent(sceneId)}`);
  }

  nextTask(annotator: string): Promise<Task> {
    return this.get(`/api/tasks?annotator=${encodeURIComponent(annotator)}`);
  }

  submitAnnotation(
    record: AnnotationRecord,
  ): Promise<{ record: AnnotationRecord; status: VerifyStatus }> {
    return this.post("/api/annotations", record);
  }

  getAnnotations(sampleId: string): Promise<AnnotationsResponse> {
    return this.get(`/api/annotations/${encodeURIComponent(sampleId)}`);
  }

  verify(body: VerifyRequest): Promise<VerifyStatus> {
    return this.post("/api/verify", body);
  }

  async exportVerified(): Promise<string> {
    const res = await this.fetchFn(this.base + "/api/export");
    if (!res.ok) await parseError(res);
    return res.text();
  }
}
